#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "lcdc/conv.hpp"
#include "lcdc/deform.hpp"
#include "lcdc/tensor.hpp"

namespace lcdc {

// Per-location displacement between two consecutive time steps, in
// feature-grid units.
class MotionField {
 public:
  explicit MotionField(Tensor field) : field_(std::move(field)) {
    if (field_.rank() != 3 || field_.dim(2) != 2)
      throw std::invalid_argument("MotionField: field must be HxWx2, got " + field_.shape_str());
    field_.check_finite("MotionField");
  }
  static MotionField constant(std::size_t h, std::size_t w, double vr, double vc) {
    Tensor f({h, w, 2});
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        f.at(r, c, 0) = vr;
        f.at(r, c, 1) = vc;
      }
    return MotionField(std::move(f));
  }

  std::size_t h() const { return field_.dim(0); }
  std::size_t w() const { return field_.dim(1); }
  double row(std::size_t r, std::size_t c) const { return field_.at(r, c, 0); }
  double col(std::size_t r, std::size_t c) const { return field_.at(r, c, 1); }
  const Tensor& tensor() const { return field_; }

 private:
  Tensor field_;
};

// Difference of adaptive receptive fields between consecutive frames; the
// shared lattice positions cancel, leaving the offset difference.
inline Tensor receptive_field_diff(const DenseOffsets& now, const DenseOffsets& prev) {
  check_same_shape(now.tensor(), prev.tensor(), "receptive_field_diff");
  Tensor out(now.tensor().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = now.tensor()[i] - prev.tensor()[i];
  return out;
}

inline MotionField local_motion(const LocalOffsets& now, const LocalOffsets& prev) {
  check_same_shape(now.tensor(), prev.tensor(), "local_motion");
  Tensor out(now.tensor().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = now.tensor()[i] - prev.tensor()[i];
  return MotionField(std::move(out));
}

// Zeroes motion vectors whose norm falls below the threshold; used when
// visualizing only the salient part of a field.
inline MotionField suppress_small(const MotionField& m, double threshold) {
  Tensor out(m.tensor().shape());
  for (std::size_t r = 0; r < m.h(); ++r)
    for (std::size_t c = 0; c < m.w(); ++c) {
      const double vr = m.row(r, c), vc = m.col(r, c);
      if (std::sqrt(vr * vr + vc * vc) >= threshold) {
        out.at(r, c, 0) = vr;
        out.at(r, c, 1) = vc;
      }
    }
  return MotionField(std::move(out));
}

// Per-location sum over layers of the motion vector's Euclidean norm. Fields
// on coarser grids are resampled to the finest extent by nearest neighbour
// (src = floor(dst * src_extent / dst_extent)).
inline Tensor energy_map(const std::vector<MotionField>& motions) {
  if (motions.empty()) throw std::invalid_argument("energy_map: empty motion list");
  std::size_t h = 0, w = 0;
  for (const MotionField& m : motions) {
    h = std::max(h, m.h());
    w = std::max(w, m.w());
  }
  Tensor out({h, w});
  for (const MotionField& m : motions) {
    for (std::size_t r = 0; r < h; ++r) {
      const std::size_t sr = r * m.h() / h;
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t sc = c * m.w() / w;
        const double vr = m.row(sr, sc), vc = m.col(sr, sc);
        out.at(r, c) += std::sqrt(vr * vr + vc * vc);
      }
    }
  }
  return out;
}

// Grid samples of f(u,v) = a + b*u + c*v + d*u*v per channel; bilinear
// interpolation reproduces such a function exactly inside the grid, which is
// what the proposition check leans on.
struct MultilinearCoeffs {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
  double eval(double u, double v) const { return a + b * u + c * v + d * u * v; }
};

inline Tensor multilinear_image(std::size_t h, std::size_t w,
                                const std::vector<MultilinearCoeffs>& channels) {
  if (channels.empty()) throw std::invalid_argument("multilinear_image: no channels");
  Tensor x({h, w, channels.size()});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t i = 0; i < channels.size(); ++i)
        x.at(r, c, i) = channels[i].eval(static_cast<double>(r), static_cast<double>(c));
  return x;
}

struct Prop1Report {
  double max_output_gap = 0.0;
  double max_motion_gap = 0.0;
  std::size_t compared = 0;  // interior output values entering the comparison
  bool pass = false;
};

// Machine check of the optical-flow-equivalence proposition. x_prev must hold
// grid samples of a multilinear function and o a constant translation; then
// x_t(s) = x_prev(s - o) is exact under bilinear sampling and the offset
// update d_t = d_prev + o keeps the LCDC outputs equal at every interior
// location whose whole sampling footprint stays in exact territory.
// `delta_t_override` substitutes a different d_t (used to demonstrate that a
// violated constraint breaks output consistency).
inline Prop1Report check_proposition1(const Tensor& x_prev, const MotionField& o,
                                      const LocalOffsets& d_prev, const Tensor& w,
                                      const KernelSpec& spec, double tol,
                                      const LocalOffsets* delta_t_override = nullptr) {
  bool w_nonzero = false;
  for (std::size_t i = 0; i < w.numel(); ++i)
    if (w[i] != 0.0) {
      w_nonzero = true;
      break;
    }
  if (!w_nonzero) throw std::invalid_argument("proposition hypothesis violated");
  if (x_prev.rank() != 3) throw std::invalid_argument("check_proposition1: x_prev must be HxWxC");
  const std::size_t h = x_prev.dim(0), wd = x_prev.dim(1), ic = x_prev.dim(2);
  if (o.h() != h || o.w() != wd || d_prev.h() != h || d_prev.w() != wd)
    throw std::invalid_argument("check_proposition1: field extents do not match x_prev");
  spec.validate(h, wd);

  // x_t[m] = x_prev(m - o(m)) via bilinear sampling of the stored grid.
  Tensor x_t({h, wd, ic});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < wd; ++c) {
      const double pr = static_cast<double>(r) - o.row(r, c);
      const double pc = static_cast<double>(c) - o.col(r, c);
      for (std::size_t i = 0; i < ic; ++i)
        x_t.at(r, c, i) = bilinear_value_grad_raw(x_prev.data(), h, wd, ic, i, pr, pc).value;
    }

  // d_t[n] = d_prev[n] + o, the closed form of the encoded-motion relation
  // for a constant translation.
  Tensor dt_field(d_prev.tensor().shape());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < wd; ++c) {
      dt_field.at(r, c, 0) = d_prev.row(r, c) + o.row(r, c);
      dt_field.at(r, c, 1) = d_prev.col(r, c) + o.col(r, c);
    }
  const LocalOffsets d_t_constructed(std::move(dt_field));
  const LocalOffsets& d_t = delta_t_override ? *delta_t_override : d_t_constructed;

  const Tensor y_prev = lcdc_conv2d(x_prev, w, d_prev, spec);
  const Tensor y_t = lcdc_conv2d(x_t, w, d_t, spec);

  const std::size_t oh = spec.out_h(h), ow = spec.out_w(wd);
  Prop1Report rep;

  auto in_plane = [&](double pr, double pc) {
    return pr >= 0.0 && pc >= 0.0 && pr <= static_cast<double>(h - 1) &&
           pc <= static_cast<double>(wd - 1);
  };

  for (std::size_t orow = 0; orow < oh; ++orow) {
    for (std::size_t ocol = 0; ocol < ow; ++ocol) {
      bool valid = true;
      for (std::size_t kr = 0; kr < spec.kh && valid; ++kr) {
        for (std::size_t kc = 0; kc < spec.kw && valid; ++kc) {
          const long long r = static_cast<long long>(orow * spec.stride) -
                              static_cast<long long>(spec.padding) +
                              static_cast<long long>(spec.dilation * kr);
          const long long c = static_cast<long long>(ocol * spec.stride) -
                              static_cast<long long>(spec.padding) +
                              static_cast<long long>(spec.dilation * kc);
          if (r < 0 || c < 0 || r >= static_cast<long long>(h) || c >= static_cast<long long>(wd)) {
            valid = false;
            break;
          }
          const std::size_t ur = static_cast<std::size_t>(r), uc = static_cast<std::size_t>(c);
          const double qpr = static_cast<double>(r) + d_prev.row(ur, uc);
          const double qpc = static_cast<double>(c) + d_prev.col(ur, uc);
          const double qtr = static_cast<double>(r) + d_t.row(ur, uc);
          const double qtc = static_cast<double>(c) + d_t.col(ur, uc);
          if (!in_plane(qpr, qpc) || !in_plane(qtr, qtc)) {
            valid = false;
            break;
          }
          // The x_t cells this read touches must themselves be exact, i.e.
          // their source point m - o must not have left the plane.
          const double mr0 = std::floor(qtr), mc0 = std::floor(qtc);
          if (!in_plane(mr0 - o.row(ur, uc), mc0 - o.col(ur, uc)) ||
              !in_plane(mr0 + 1.0 - o.row(ur, uc), mc0 + 1.0 - o.col(ur, uc))) {
            valid = false;
            break;
          }
        }
      }
      if (!valid) continue;
      for (std::size_t j = 0; j < spec.out_ch; ++j) {
        const double gap = std::fabs(y_t.at(orow, ocol, j) - y_prev.at(orow, ocol, j));
        if (gap > rep.max_output_gap) rep.max_output_gap = gap;
        ++rep.compared;
      }
    }
  }
  if (rep.compared == 0)
    throw std::invalid_argument("check_proposition1: no interior locations to compare; grid too small for the translation");

  const MotionField recovered = local_motion(d_t, d_prev);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < wd; ++c) {
      // o is evaluated at n + d_t[n]; constant fields make the lookup trivial
      // but keep the bilinear read so non-constant o stays representable.
      const double sr = static_cast<double>(r) + d_t.row(r, c);
      const double sc = static_cast<double>(c) + d_t.col(r, c);
      if (!in_plane(sr, sc)) continue;
      const double or_ = bilinear_value_grad_raw(o.tensor().data(), h, wd, 2, 0, sr, sc).value;
      const double oc_ = bilinear_value_grad_raw(o.tensor().data(), h, wd, 2, 1, sr, sc).value;
      rep.max_motion_gap = std::max(rep.max_motion_gap, std::fabs(recovered.row(r, c) - or_));
      rep.max_motion_gap = std::max(rep.max_motion_gap, std::fabs(recovered.col(r, c) - oc_));
    }

  rep.pass = rep.max_output_gap <= tol && rep.max_motion_gap <= tol;
  return rep;
}

}  // namespace lcdc
