#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcdc/conv.hpp"
#include "lcdc/tensor.hpp"

namespace lcdc {

// One fractional (row,col) displacement per spatial location, shared by every
// kernel tap and channel. Lives on the grid of the feature map it deforms.
class LocalOffsets {
 public:
  explicit LocalOffsets(Tensor field) : field_(std::move(field)) {
    if (field_.rank() != 3 || field_.dim(2) != 2)
      throw std::invalid_argument("LocalOffsets: field must be HxWx2, got " + field_.shape_str());
    field_.check_finite("LocalOffsets");
  }
  static LocalOffsets zeros(std::size_t h, std::size_t w) { return LocalOffsets(Tensor({h, w, 2})); }

  std::size_t h() const { return field_.dim(0); }
  std::size_t w() const { return field_.dim(1); }
  double row(std::size_t r, std::size_t c) const { return field_.at(r, c, 0); }
  double col(std::size_t r, std::size_t c) const { return field_.at(r, c, 1); }
  const Tensor& tensor() const { return field_; }
  Tensor& tensor() { return field_; }

 private:
  Tensor field_;
};

// One fractional displacement per (location, deformable group, kernel tap).
// Indexed by the *output* location of the convolution it deforms.
class DenseOffsets {
 public:
  explicit DenseOffsets(Tensor field) : field_(std::move(field)) {
    if (field_.rank() != 5 || field_.dim(4) != 2)
      throw std::invalid_argument("DenseOffsets: field must be HxWxGxKx2, got " + field_.shape_str());
    field_.check_finite("DenseOffsets");
  }
  static DenseOffsets zeros(std::size_t h, std::size_t w, std::size_t g, std::size_t k) {
    return DenseOffsets(Tensor({h, w, g, k, 2}));
  }

  std::size_t h() const { return field_.dim(0); }
  std::size_t w() const { return field_.dim(1); }
  std::size_t groups() const { return field_.dim(2); }
  std::size_t taps() const { return field_.dim(3); }
  const Tensor& tensor() const { return field_; }
  Tensor& tensor() { return field_; }

  void check_against(const KernelSpec& spec, std::size_t out_h, std::size_t out_w,
                     const std::string& what) const {
    if (h() != out_h || w() != out_w)
      throw std::invalid_argument(what + ": offsets cover " + std::to_string(h()) + "x" +
                                  std::to_string(w()) + " but output is " + std::to_string(out_h) +
                                  "x" + std::to_string(out_w));
    if (groups() != spec.groups)
      throw std::invalid_argument(what + ": offsets carry " + std::to_string(groups()) +
                                  " deformable groups, spec expects " + std::to_string(spec.groups));
    if (taps() != spec.taps())
      throw std::invalid_argument(what + ": offsets carry " + std::to_string(taps()) +
                                  " taps, spec expects " + std::to_string(spec.taps()));
  }

 private:
  Tensor field_;
};

enum class ExpandMode { shifted, replicated };

namespace detail {

// Local offset at integer input-grid position p, zero-extended outside.
inline void local_offset_at(const LocalOffsets& d, long long r, long long c, double& dr, double& dc) {
  if (r < 0 || c < 0 || r >= static_cast<long long>(d.h()) || c >= static_cast<long long>(d.w())) {
    dr = 0.0;
    dc = 0.0;
    return;
  }
  dr = d.row(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  dc = d.col(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
}

}  // namespace detail

// x deformed by a shared per-location displacement: x~[n,i] = x_i(n + d[n]).
inline Tensor deform_input(const Tensor& x, const LocalOffsets& d) {
  if (x.rank() != 3) throw std::invalid_argument("deform_input: input must be HxWxC, got " + x.shape_str());
  if (x.dim(0) != d.h() || x.dim(1) != d.w())
    throw std::invalid_argument("deform_input: offsets " + d.tensor().shape_str() +
                                " do not match input " + x.shape_str());
  const std::size_t h = x.dim(0), w = x.dim(1), ic = x.dim(2);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double pr = static_cast<double>(r) + d.row(r, c);
      const double pc = static_cast<double>(c) + d.col(r, c);
      for (std::size_t i = 0; i < ic; ++i)
        out.at(r, c, i) = bilinear_value_grad_raw(x.data(), h, w, ic, i, pr, pc).value;
    }
  }
  return out;
}

inline void deform_input_backward(const Tensor& x, const LocalOffsets& d, const Tensor& gout,
                                  Tensor* grad_x, Tensor* grad_off) {
  const std::size_t h = x.dim(0), w = x.dim(1), ic = x.dim(2);
  if (grad_x && !grad_x->numel()) *grad_x = Tensor(x.shape());
  if (grad_off && !grad_off->numel()) *grad_off = Tensor({h, w, 2});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double pr = static_cast<double>(r) + d.row(r, c);
      const double pc = static_cast<double>(c) + d.col(r, c);
      double acc_r = 0.0, acc_c = 0.0;
      for (std::size_t i = 0; i < ic; ++i) {
        const double g = gout.at(r, c, i);
        if (grad_off) {
          const BilinearValueGrad bg = bilinear_value_grad_raw(x.data(), h, w, ic, i, pr, pc);
          acc_r += g * bg.d_row;
          acc_c += g * bg.d_col;
        }
        if (grad_x) bilinear_scatter_raw(grad_x->data(), h, w, ic, i, pr, pc, g);
      }
      if (grad_off) {
        grad_off->at(r, c, 0) += acc_r;
        grad_off->at(r, c, 1) += acc_c;
      }
    }
  }
}

namespace detail {

// Sampled-value matrix for the deformed convolutions, laid out exactly like
// the im2col matrix so all variants share one GEMM.
template <typename PointFn>
inline std::vector<double> deform_col(const Tensor& x, const KernelSpec& s, std::size_t oh,
                                      std::size_t ow, PointFn&& point) {
  const std::size_t h = x.dim(0), w = x.dim(1), ic = x.dim(2);
  const std::size_t z = ic * s.kh * s.kw;
  std::vector<double> col(oh * ow * z);
  for (std::size_t orow = 0; orow < oh; ++orow) {
    for (std::size_t ocol = 0; ocol < ow; ++ocol) {
      double* crow = col.data() + (orow * ow + ocol) * z;
      for (std::size_t i = 0; i < ic; ++i) {
        for (std::size_t kr = 0; kr < s.kh; ++kr) {
          for (std::size_t kc = 0; kc < s.kw; ++kc) {
            double pr, pc;
            point(orow, ocol, i, kr, kc, pr, pc);
            crow[(i * s.kh + kr) * s.kw + kc] =
                bilinear_value_grad_raw(x.data(), h, w, ic, i, pr, pc).value;
          }
        }
      }
    }
  }
  return col;
}

}  // namespace detail

// Deformable convolution: y[n,j] = sum_i sum_k w[j,i,k] x_i(a(n) + tap(k) + dd[n,g_i,k])
// with a(n) the stride/padding-mapped input anchor and contiguous channel blocks
// of size I/G assigned to the deformable groups.
inline Tensor deformable_conv2d(const Tensor& x, const Tensor& w, const DenseOffsets& dd,
                                const KernelSpec& spec) {
  check_input_channels(x, spec, "deformable_conv2d");
  check_weight_shape(w, spec, "deformable_conv2d");
  spec.validate(x.dim(0), x.dim(1));
  const std::size_t oh = spec.out_h(x.dim(0)), ow = spec.out_w(x.dim(1));
  dd.check_against(spec, oh, ow, "deformable_conv2d");
  const std::size_t ch_per_group = spec.in_ch / spec.groups;
  const Tensor& f = dd.tensor();
  auto point = [&](std::size_t orow, std::size_t ocol, std::size_t i, std::size_t kr, std::size_t kc,
                   double& pr, double& pc) {
    const std::size_t g = i / ch_per_group;
    const std::size_t k = kr * spec.kw + kc;
    pr = static_cast<double>(static_cast<long long>(orow * spec.stride) -
                             static_cast<long long>(spec.padding) +
                             static_cast<long long>(spec.dilation * kr)) +
         f.at(orow, ocol, g, k, std::size_t{0});
    pc = static_cast<double>(static_cast<long long>(ocol * spec.stride) -
                             static_cast<long long>(spec.padding) +
                             static_cast<long long>(spec.dilation * kc)) +
         f.at(orow, ocol, g, k, std::size_t{1});
  };
  const std::vector<double> col = detail::deform_col(x, spec, oh, ow, point);
  Tensor y({oh, ow, spec.out_ch});
  gemm_col_w(col, oh * ow, spec.in_ch * spec.kh * spec.kw, w.data(), spec.out_ch, y.data());
  return y;
}

// Locally-consistent deformable convolution: the displacement is a function of
// the sampled location alone, y[n,j] = sum_i sum_k w[j,i,k] x_i(p + d[p]) with
// p = a(n) + tap(k) and d zero-extended outside the input grid. Identical
// sample values and summation order as conv2d(deform_input(x,d), w, spec).
inline Tensor lcdc_conv2d(const Tensor& x, const Tensor& w, const LocalOffsets& d,
                          const KernelSpec& spec) {
  check_input_channels(x, spec, "lcdc_conv2d");
  check_weight_shape(w, spec, "lcdc_conv2d");
  spec.validate(x.dim(0), x.dim(1));
  if (x.dim(0) != d.h() || x.dim(1) != d.w())
    throw std::invalid_argument("lcdc_conv2d: offsets " + d.tensor().shape_str() +
                                " do not match input " + x.shape_str());
  const std::size_t oh = spec.out_h(x.dim(0)), ow = spec.out_w(x.dim(1));
  auto point = [&](std::size_t orow, std::size_t ocol, std::size_t /*i*/, std::size_t kr,
                   std::size_t kc, double& pr, double& pc) {
    const long long r = static_cast<long long>(orow * spec.stride) -
                        static_cast<long long>(spec.padding) +
                        static_cast<long long>(spec.dilation * kr);
    const long long c = static_cast<long long>(ocol * spec.stride) -
                        static_cast<long long>(spec.padding) +
                        static_cast<long long>(spec.dilation * kc);
    double dr, dc;
    detail::local_offset_at(d, r, c, dr, dc);
    pr = static_cast<double>(r) + dr;
    pc = static_cast<double>(c) + dc;
  };
  const std::vector<double> col = detail::deform_col(x, spec, oh, ow, point);
  Tensor y({oh, ow, spec.out_ch});
  gemm_col_w(col, oh * ow, spec.in_ch * spec.kh * spec.kw, w.data(), spec.out_ch, y.data());
  return y;
}

// The local coherency constraint as an offset-field transform. `shifted`
// realizes dd[n,g,k] = d[a(n)+tap(k)] (d zero-extended); `replicated` copies
// one displacement across all taps and groups of the output location.
inline DenseOffsets expand_local_to_dense(const LocalOffsets& d, const KernelSpec& spec,
                                          ExpandMode mode) {
  const std::size_t k_total = spec.taps();
  if (mode == ExpandMode::replicated) {
    Tensor f({d.h(), d.w(), spec.groups, k_total, 2});
    for (std::size_t r = 0; r < d.h(); ++r)
      for (std::size_t c = 0; c < d.w(); ++c)
        for (std::size_t g = 0; g < spec.groups; ++g)
          for (std::size_t k = 0; k < k_total; ++k) {
            f.at(r, c, g, k, std::size_t{0}) = d.row(r, c);
            f.at(r, c, g, k, std::size_t{1}) = d.col(r, c);
          }
    return DenseOffsets(std::move(f));
  }
  spec.validate(d.h(), d.w());
  const std::size_t oh = spec.out_h(d.h()), ow = spec.out_w(d.w());
  Tensor f({oh, ow, spec.groups, k_total, 2});
  for (std::size_t orow = 0; orow < oh; ++orow)
    for (std::size_t ocol = 0; ocol < ow; ++ocol)
      for (std::size_t kr = 0; kr < spec.kh; ++kr)
        for (std::size_t kc = 0; kc < spec.kw; ++kc) {
          const long long r = static_cast<long long>(orow * spec.stride) -
                              static_cast<long long>(spec.padding) +
                              static_cast<long long>(spec.dilation * kr);
          const long long c = static_cast<long long>(ocol * spec.stride) -
                              static_cast<long long>(spec.padding) +
                              static_cast<long long>(spec.dilation * kc);
          double dr, dc;
          detail::local_offset_at(d, r, c, dr, dc);
          const std::size_t k = kr * spec.kw + kc;
          for (std::size_t g = 0; g < spec.groups; ++g) {
            f.at(orow, ocol, g, k, std::size_t{0}) = dr;
            f.at(orow, ocol, g, k, std::size_t{1}) = dc;
          }
        }
  return DenseOffsets(std::move(f));
}

// d = Phi * x, the LCDC offset learner. Requires same-padding so the field
// covers the grid it deforms.
inline LocalOffsets offset_learner(const Tensor& x, const Tensor& phi, const KernelSpec& spec) {
  if (spec.out_ch != 2) throw std::invalid_argument("offset learner must emit 2 channels");
  Tensor field = conv2d(x, phi, spec);
  if (field.dim(0) != x.dim(0) || field.dim(1) != x.dim(1))
    throw std::invalid_argument("offset_learner: spec is not same-padding, field " +
                                field.shape_str() + " vs input " + x.shape_str());
  return LocalOffsets(std::move(field));
}

// Dense offset learner of the original deformable convolution: emits
// G*K*2 channels, reshaped to an HxWxGxKx2 field.
inline DenseOffsets dense_offset_learner(const Tensor& x, const Tensor& h, const KernelSpec& spec,
                                         std::size_t target_groups, std::size_t target_taps) {
  const std::size_t want = target_groups * target_taps * 2;
  if (spec.out_ch != want)
    throw std::invalid_argument("dense offset learner must emit G*K*2 = " + std::to_string(want) +
                                " channels, spec has " + std::to_string(spec.out_ch));
  Tensor field = conv2d(x, h, spec);
  if (field.dim(0) != x.dim(0) || field.dim(1) != x.dim(1))
    throw std::invalid_argument("dense_offset_learner: spec is not same-padding");
  return DenseOffsets(field.reshaped({field.dim(0), field.dim(1), target_groups, target_taps, 2}));
}

// --- reverse-mode products for the deformed convolutions --------------------

inline void deformable_conv2d_backward(const Tensor& x, const Tensor& w, const DenseOffsets& dd,
                                       const KernelSpec& spec, const Tensor& gout, Tensor* grad_x,
                                       Tensor* grad_w, Tensor* grad_off) {
  const std::size_t oh = spec.out_h(x.dim(0)), ow = spec.out_w(x.dim(1));
  const std::size_t h = x.dim(0), wd = x.dim(1), ic = spec.in_ch;
  const std::size_t z = ic * spec.kh * spec.kw;
  const std::size_t ch_per_group = ic / spec.groups;
  const Tensor& f = dd.tensor();

  auto point = [&](std::size_t orow, std::size_t ocol, std::size_t i, std::size_t kr, std::size_t kc,
                   double& pr, double& pc) {
    const std::size_t g = i / ch_per_group;
    const std::size_t k = kr * spec.kw + kc;
    pr = static_cast<double>(static_cast<long long>(orow * spec.stride) -
                             static_cast<long long>(spec.padding) +
                             static_cast<long long>(spec.dilation * kr)) +
         f.at(orow, ocol, g, k, std::size_t{0});
    pc = static_cast<double>(static_cast<long long>(ocol * spec.stride) -
                             static_cast<long long>(spec.padding) +
                             static_cast<long long>(spec.dilation * kc)) +
         f.at(orow, ocol, g, k, std::size_t{1});
  };

  const std::vector<double> col = detail::deform_col(x, spec, oh, ow, point);
  std::vector<double> grad_col;
  if (grad_w && !grad_w->numel()) *grad_w = Tensor(spec.weight_shape());
  gemm_backward(col, oh * ow, z, w.data(), spec.out_ch, gout.data(),
                grad_w ? grad_w->data() : nullptr,
                (grad_x || grad_off) ? &grad_col : nullptr);
  if (!grad_x && !grad_off) return;
  if (grad_x && !grad_x->numel()) *grad_x = Tensor(x.shape());
  if (grad_off && !grad_off->numel()) *grad_off = Tensor(f.shape());
  for (std::size_t orow = 0; orow < oh; ++orow) {
    for (std::size_t ocol = 0; ocol < ow; ++ocol) {
      const double* crow = grad_col.data() + (orow * ow + ocol) * z;
      for (std::size_t i = 0; i < ic; ++i) {
        const std::size_t g = i / ch_per_group;
        for (std::size_t kr = 0; kr < spec.kh; ++kr) {
          for (std::size_t kc = 0; kc < spec.kw; ++kc) {
            const double gc = crow[(i * spec.kh + kr) * spec.kw + kc];
            if (gc == 0.0) continue;
            double pr, pc;
            point(orow, ocol, i, kr, kc, pr, pc);
            if (grad_x) bilinear_scatter_raw(grad_x->data(), h, wd, ic, i, pr, pc, gc);
            if (grad_off) {
              const BilinearValueGrad bg = bilinear_value_grad_raw(x.data(), h, wd, ic, i, pr, pc);
              const std::size_t k = kr * spec.kw + kc;
              grad_off->at(orow, ocol, g, k, std::size_t{0}) += gc * bg.d_row;
              grad_off->at(orow, ocol, g, k, std::size_t{1}) += gc * bg.d_col;
            }
          }
        }
      }
    }
  }
}

inline void lcdc_conv2d_backward(const Tensor& x, const Tensor& w, const LocalOffsets& d,
                                 const KernelSpec& spec, const Tensor& gout, Tensor* grad_x,
                                 Tensor* grad_w, Tensor* grad_off) {
  const std::size_t oh = spec.out_h(x.dim(0)), ow = spec.out_w(x.dim(1));
  const std::size_t h = x.dim(0), wd = x.dim(1), ic = spec.in_ch;
  const std::size_t z = ic * spec.kh * spec.kw;

  auto point = [&](std::size_t orow, std::size_t ocol, std::size_t /*i*/, std::size_t kr,
                   std::size_t kc, double& pr, double& pc) {
    const long long r = static_cast<long long>(orow * spec.stride) -
                        static_cast<long long>(spec.padding) +
                        static_cast<long long>(spec.dilation * kr);
    const long long c = static_cast<long long>(ocol * spec.stride) -
                        static_cast<long long>(spec.padding) +
                        static_cast<long long>(spec.dilation * kc);
    double dr, dc;
    detail::local_offset_at(d, r, c, dr, dc);
    pr = static_cast<double>(r) + dr;
    pc = static_cast<double>(c) + dc;
  };

  const std::vector<double> col = detail::deform_col(x, spec, oh, ow, point);
  std::vector<double> grad_col;
  if (grad_w && !grad_w->numel()) *grad_w = Tensor(spec.weight_shape());
  gemm_backward(col, oh * ow, z, w.data(), spec.out_ch, gout.data(),
                grad_w ? grad_w->data() : nullptr,
                (grad_x || grad_off) ? &grad_col : nullptr);
  if (!grad_x && !grad_off) return;
  if (grad_x && !grad_x->numel()) *grad_x = Tensor(x.shape());
  if (grad_off && !grad_off->numel()) *grad_off = Tensor({h, wd, 2});
  for (std::size_t orow = 0; orow < oh; ++orow) {
    for (std::size_t ocol = 0; ocol < ow; ++ocol) {
      const double* crow = grad_col.data() + (orow * ow + ocol) * z;
      for (std::size_t i = 0; i < ic; ++i) {
        for (std::size_t kr = 0; kr < spec.kh; ++kr) {
          for (std::size_t kc = 0; kc < spec.kw; ++kc) {
            const double gc = crow[(i * spec.kh + kr) * spec.kw + kc];
            if (gc == 0.0) continue;
            const long long r = static_cast<long long>(orow * spec.stride) -
                                static_cast<long long>(spec.padding) +
                                static_cast<long long>(spec.dilation * kr);
            const long long c = static_cast<long long>(ocol * spec.stride) -
                                static_cast<long long>(spec.padding) +
                                static_cast<long long>(spec.dilation * kc);
            double pr, pc;
            point(orow, ocol, i, kr, kc, pr, pc);
            if (grad_x) bilinear_scatter_raw(grad_x->data(), h, wd, ic, i, pr, pc, gc);
            // The offset only exists (and only moves the sample) when the tap
            // lands inside the grid; outside, the zero extension is constant.
            if (grad_off && r >= 0 && c >= 0 && r < static_cast<long long>(h) &&
                c < static_cast<long long>(wd)) {
              const BilinearValueGrad bg = bilinear_value_grad_raw(x.data(), h, wd, ic, i, pr, pc);
              grad_off->at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), std::size_t{0}) +=
                  gc * bg.d_row;
              grad_off->at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), std::size_t{1}) +=
                  gc * bg.d_col;
            }
          }
        }
      }
    }
  }
}

}  // namespace lcdc
