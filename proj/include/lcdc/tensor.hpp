#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcdc {

// Dense N-dimensional array of doubles, row-major. The carrier for inputs,
// kernels, offset fields, feature maps and checkpoints.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
      if (d == 0) throw std::invalid_argument("Tensor: zero extent");
    }
    data_.assign(numel_of(shape_), fill);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_)) {
      throw std::invalid_argument("Tensor: data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape (expects " +
                                  std::to_string(numel_of(shape_)) + ")");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  template <typename... Ix>
  double& at(Ix... ix) {
    return data_[offset({static_cast<std::size_t>(ix)...})];
  }
  template <typename... Ix>
  double at(Ix... ix) const {
    return data_[offset({static_cast<std::size_t>(ix)...})];
  }

  std::size_t offset(std::initializer_list<std::size_t> ix) const {
    if (ix.size() != shape_.size()) throw std::invalid_argument("Tensor: index rank mismatch");
    std::size_t off = 0, i = 0;
    for (std::size_t v : ix) {
      if (v >= shape_[i]) throw std::out_of_range("Tensor: index out of range");
      off = off * shape_[i] + v;
      ++i;
    }
    return off;
  }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (numel_of(shape) != data_.size()) throw std::invalid_argument("Tensor: reshape changes element count");
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void check_finite(const std::string& what) const {
    if (!all_finite()) throw std::runtime_error(what + ": non-finite values");
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ')';
    return os.str();
  }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(what + ": shape mismatch, " + a.shape_str() + " vs " + b.shape_str());
  }
}

// FNV-1a over raw little-endian bytes; used for checkpoint manifests.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t content_hash(const Tensor& t) {
  static_assert(std::endian::native == std::endian::little, "TSR/1 I/O assumes a little-endian host");
  return fnv1a64(t.data(), t.numel() * sizeof(double));
}

// --- TSR/1 tensor file format ---
// One ASCII header line "TSR1 <rank> <d0> ... <dk>\n" followed by raw
// little-endian IEEE-754 doubles in row-major order.

inline void write_tsr(std::ostream& os, const Tensor& t) {
  os << "TSR1 " << t.rank();
  for (std::size_t d : t.shape()) os << ' ' << d;
  os << '\n';
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!os) throw std::runtime_error("TSR/1: write failed");
}

inline void save_tsr(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("TSR/1: cannot open " + path + " for writing");
  write_tsr(f, t);
}

inline Tensor read_tsr(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error("TSR/1: missing header");
  std::istringstream hs(header);
  std::string magic;
  std::size_t rank = 0;
  if (!(hs >> magic >> rank) || magic != "TSR1") throw std::runtime_error("TSR/1: bad magic");
  std::vector<std::size_t> shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    long long d = -1;
    if (!(hs >> d) || d <= 0) throw std::runtime_error("TSR/1: bad extent in header");
    shape[i] = static_cast<std::size_t>(d);
  }
  std::string trailing;
  if (hs >> trailing) throw std::runtime_error("TSR/1: trailing tokens in header");
  std::vector<double> data(Tensor::numel_of(shape));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (static_cast<std::size_t>(is.gcount()) != data.size() * sizeof(double)) {
    throw std::runtime_error("TSR/1: truncated payload");
  }
  Tensor t(std::move(shape), std::move(data));
  t.check_finite("TSR/1 payload");
  return t;
}

inline Tensor load_tsr(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("TSR/1: cannot open " + path);
  return read_tsr(f);
}

}  // namespace lcdc
