#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcdc/tensor.hpp"

namespace lcdc {

// Geometry of a 2D convolution. `groups` is the number of deformable groups;
// it partitions input channels for dense offset fields and does not group the
// convolution weights themselves.
struct KernelSpec {
  std::size_t kh = 3, kw = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;  // symmetric zero padding
  std::size_t groups = 1;
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;

  std::size_t taps() const { return kh * kw; }

  static std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                std::size_t dilation, std::size_t padding) {
    const long long span = static_cast<long long>(in) + 2 * static_cast<long long>(padding) -
                           static_cast<long long>(dilation) * (static_cast<long long>(k) - 1) - 1;
    if (span < 0) return 0;
    return static_cast<std::size_t>(span / static_cast<long long>(stride)) + 1;
  }

  std::size_t out_h(std::size_t in_h) const { return out_extent(in_h, kh, stride, dilation, padding); }
  std::size_t out_w(std::size_t in_w) const { return out_extent(in_w, kw, stride, dilation, padding); }

  void validate(std::size_t in_h, std::size_t in_w) const {
    if (kh == 0 || kw == 0 || stride == 0 || dilation == 0 || groups == 0 || in_ch == 0 || out_ch == 0)
      throw std::invalid_argument("KernelSpec: extents and strides must be positive");
    if (in_ch % groups != 0)
      throw std::invalid_argument("KernelSpec: in_channels " + std::to_string(in_ch) +
                                  " not divisible by groups " + std::to_string(groups));
    if (out_h(in_h) == 0 || out_w(in_w) == 0)
      throw std::invalid_argument("KernelSpec: empty output for input " + std::to_string(in_h) + "x" +
                                  std::to_string(in_w));
  }

  // Expected weight shape: O x I x kh x kw, kernels stored in tap order.
  std::vector<std::size_t> weight_shape() const { return {out_ch, in_ch, kh, kw}; }
};

inline void check_weight_shape(const Tensor& w, const KernelSpec& spec, const std::string& what) {
  const auto expect = spec.weight_shape();
  if (w.shape() != expect) {
    throw std::invalid_argument(what + ": weight shape " + w.shape_str() + ", expected (" +
                                std::to_string(expect[0]) + "," + std::to_string(expect[1]) + "," +
                                std::to_string(expect[2]) + "," + std::to_string(expect[3]) + ")");
  }
}

inline void check_input_channels(const Tensor& x, const KernelSpec& spec, const std::string& what) {
  if (x.rank() != 3)
    throw std::invalid_argument(what + ": input must be HxWxC, got " + x.shape_str());
  if (x.dim(2) != spec.in_ch)
    throw std::invalid_argument(what + ": input has " + std::to_string(x.dim(2)) +
                                " channels, spec expects " + std::to_string(spec.in_ch));
}

// --- Bilinear sampling -----------------------------------------------------
//
// Zero padding outside the plane: lattice neighbours that fall out of bounds
// contribute 0. A sample exactly on an integer lattice point returns the
// stored value; the point-gradient there is the right-limit patch slope.

namespace detail {
inline double plane_at(const double* plane, std::size_t h, std::size_t w, long long r, long long c,
                       std::size_t ch_stride, std::size_t ch) {
  if (r < 0 || c < 0 || r >= static_cast<long long>(h) || c >= static_cast<long long>(w)) return 0.0;
  return plane[(static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)) * ch_stride + ch];
}
}  // namespace detail

struct BilinearValueGrad {
  double value = 0.0;
  double d_row = 0.0;  // d value / d p_row
  double d_col = 0.0;  // d value / d p_col
};

// Raw-pointer core shared by the single-plane and multi-channel paths.
// `ch_stride` is the distance between consecutive channels of one pixel
// (1 for a plain 2D plane, C for an HxWxC map).
inline BilinearValueGrad bilinear_value_grad_raw(const double* base, std::size_t h, std::size_t w,
                                                 std::size_t ch_stride, std::size_t ch, double pr,
                                                 double pc) {
  if (!std::isfinite(pr) || !std::isfinite(pc)) throw std::invalid_argument("invalid sample point");
  const double fr0 = std::floor(pr);
  const double fc0 = std::floor(pc);
  const long long r0 = static_cast<long long>(fr0);
  const long long c0 = static_cast<long long>(fc0);
  const double ar = pr - fr0;
  const double ac = pc - fc0;
  const double v00 = detail::plane_at(base, h, w, r0, c0, ch_stride, ch);
  const double v01 = detail::plane_at(base, h, w, r0, c0 + 1, ch_stride, ch);
  const double v10 = detail::plane_at(base, h, w, r0 + 1, c0, ch_stride, ch);
  const double v11 = detail::plane_at(base, h, w, r0 + 1, c0 + 1, ch_stride, ch);
  BilinearValueGrad out;
  out.value = (1.0 - ar) * ((1.0 - ac) * v00 + ac * v01) + ar * ((1.0 - ac) * v10 + ac * v11);
  out.d_row = (1.0 - ac) * (v10 - v00) + ac * (v11 - v01);
  out.d_col = (1.0 - ar) * (v01 - v00) + ar * (v11 - v10);
  return out;
}

// Scatter `g` onto the four lattice neighbours of (pr,pc); out-of-bounds
// corners are dropped, matching the zero-padding forward.
inline void bilinear_scatter_raw(double* base, std::size_t h, std::size_t w, std::size_t ch_stride,
                                 std::size_t ch, double pr, double pc, double g) {
  const double fr0 = std::floor(pr);
  const double fc0 = std::floor(pc);
  const long long r0 = static_cast<long long>(fr0);
  const long long c0 = static_cast<long long>(fc0);
  const double ar = pr - fr0;
  const double ac = pc - fc0;
  const double w00 = (1.0 - ar) * (1.0 - ac), w01 = (1.0 - ar) * ac;
  const double w10 = ar * (1.0 - ac), w11 = ar * ac;
  auto add = [&](long long r, long long c, double wgt) {
    if (r < 0 || c < 0 || r >= static_cast<long long>(h) || c >= static_cast<long long>(w)) return;
    base[(static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)) * ch_stride + ch] += wgt * g;
  };
  add(r0, c0, w00);
  add(r0, c0 + 1, w01);
  add(r0 + 1, c0, w10);
  add(r0 + 1, c0 + 1, w11);
}

// Bilinear interpolation of a single-channel 2D plane at fractional point p.
inline double bilinear_sample(const Tensor& plane, double pr, double pc) {
  if (plane.rank() != 2) throw std::invalid_argument("bilinear_sample: plane must be 2D, got " + plane.shape_str());
  return bilinear_value_grad_raw(plane.data(), plane.dim(0), plane.dim(1), 1, 0, pr, pc).value;
}

inline BilinearValueGrad bilinear_sample_grad(const Tensor& plane, double pr, double pc) {
  if (plane.rank() != 2) throw std::invalid_argument("bilinear_sample: plane must be 2D, got " + plane.shape_str());
  return bilinear_value_grad_raw(plane.data(), plane.dim(0), plane.dim(1), 1, 0, pr, pc);
}

// --- conv2d via im2col + GEMM ----------------------------------------------

// y[m,j] = sum_z col[m,z] * w[j,z], fixed inner summation order over z.
inline void gemm_col_w(const std::vector<double>& col, std::size_t m, std::size_t z,
                       const double* wflat, std::size_t o, double* y) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* crow = col.data() + i * z;
    double* yrow = y + i * o;
    for (std::size_t j = 0; j < o; ++j) {
      const double* wrow = wflat + j * z;
      double acc = 0.0;
      for (std::size_t q = 0; q < z; ++q) acc += crow[q] * wrow[q];
      yrow[j] = acc;
    }
  }
}

// col[m, (i,kr,kc)] layout matching the O x I x kh x kw weight flattening.
inline std::vector<double> im2col_2d(const Tensor& x, const KernelSpec& s) {
  const std::size_t h = x.dim(0), w = x.dim(1), ic = x.dim(2);
  const std::size_t oh = s.out_h(h), ow = s.out_w(w);
  const std::size_t z = ic * s.kh * s.kw;
  std::vector<double> col(oh * ow * z, 0.0);
  const double* xd = x.data();
  for (std::size_t orow = 0; orow < oh; ++orow) {
    for (std::size_t ocol = 0; ocol < ow; ++ocol) {
      double* crow = col.data() + (orow * ow + ocol) * z;
      const long long r0 = static_cast<long long>(orow * s.stride) - static_cast<long long>(s.padding);
      const long long c0 = static_cast<long long>(ocol * s.stride) - static_cast<long long>(s.padding);
      for (std::size_t i = 0; i < ic; ++i) {
        for (std::size_t kr = 0; kr < s.kh; ++kr) {
          const long long r = r0 + static_cast<long long>(s.dilation * kr);
          for (std::size_t kc = 0; kc < s.kw; ++kc) {
            const long long c = c0 + static_cast<long long>(s.dilation * kc);
            double v = 0.0;
            if (r >= 0 && c >= 0 && r < static_cast<long long>(h) && c < static_cast<long long>(w))
              v = xd[(static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)) * ic + i];
            crow[(i * s.kh + kr) * s.kw + kc] = v;
          }
        }
      }
    }
  }
  return col;
}

// Standard cross-correlation with zero padding, x: HxWxI, w: OxIxkhxkw.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const KernelSpec& spec) {
  check_input_channels(x, spec, "conv2d");
  check_weight_shape(w, spec, "conv2d");
  spec.validate(x.dim(0), x.dim(1));
  const std::size_t oh = spec.out_h(x.dim(0)), ow = spec.out_w(x.dim(1));
  const std::size_t z = spec.in_ch * spec.kh * spec.kw;
  const std::vector<double> col = im2col_2d(x, spec);
  Tensor y({oh, ow, spec.out_ch});
  gemm_col_w(col, oh * ow, z, w.data(), spec.out_ch, y.data());
  return y;
}

// grad_w[j,z] += sum_m gout[m,j] * col[m,z]; grad_col[m,z] = sum_j gout[m,j]*w[j,z]
inline void gemm_backward(const std::vector<double>& col, std::size_t m, std::size_t z,
                          const double* wflat, std::size_t o, const double* gout, double* grad_w,
                          std::vector<double>* grad_col) {
  if (grad_col) grad_col->assign(m * z, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* crow = col.data() + i * z;
    const double* grow = gout + i * o;
    for (std::size_t j = 0; j < o; ++j) {
      const double g = grow[j];
      if (g == 0.0) continue;
      if (grad_w) {
        double* wg = grad_w + j * z;
        for (std::size_t q = 0; q < z; ++q) wg[q] += g * crow[q];
      }
      if (grad_col) {
        const double* wrow = wflat + j * z;
        double* cg = grad_col->data() + i * z;
        for (std::size_t q = 0; q < z; ++q) cg[q] += g * wrow[q];
      }
    }
  }
}

inline void col2im_2d(const std::vector<double>& grad_col, const KernelSpec& s, Tensor& grad_x) {
  const std::size_t h = grad_x.dim(0), w = grad_x.dim(1), ic = grad_x.dim(2);
  const std::size_t oh = s.out_h(h), ow = s.out_w(w);
  const std::size_t z = ic * s.kh * s.kw;
  double* xd = grad_x.data();
  for (std::size_t orow = 0; orow < oh; ++orow) {
    for (std::size_t ocol = 0; ocol < ow; ++ocol) {
      const double* crow = grad_col.data() + (orow * ow + ocol) * z;
      const long long r0 = static_cast<long long>(orow * s.stride) - static_cast<long long>(s.padding);
      const long long c0 = static_cast<long long>(ocol * s.stride) - static_cast<long long>(s.padding);
      for (std::size_t i = 0; i < ic; ++i) {
        for (std::size_t kr = 0; kr < s.kh; ++kr) {
          const long long r = r0 + static_cast<long long>(s.dilation * kr);
          if (r < 0 || r >= static_cast<long long>(h)) continue;
          for (std::size_t kc = 0; kc < s.kw; ++kc) {
            const long long c = c0 + static_cast<long long>(s.dilation * kc);
            if (c < 0 || c >= static_cast<long long>(w)) continue;
            xd[(static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)) * ic + i] +=
                crow[(i * s.kh + kr) * s.kw + kc];
          }
        }
      }
    }
  }
}

// Reverse-mode products for conv2d. Pass nullptr to skip a gradient.
inline void conv2d_backward(const Tensor& x, const Tensor& w, const KernelSpec& spec,
                            const Tensor& gout, Tensor* grad_x, Tensor* grad_w) {
  const std::size_t oh = spec.out_h(x.dim(0)), ow = spec.out_w(x.dim(1));
  const std::size_t z = spec.in_ch * spec.kh * spec.kw;
  const std::vector<double> col = im2col_2d(x, spec);
  std::vector<double> grad_col;
  Tensor gw_local;
  if (grad_w && !grad_w->numel()) *grad_w = Tensor(spec.weight_shape());
  gemm_backward(col, oh * ow, z, w.data(), spec.out_ch, gout.data(),
                grad_w ? grad_w->data() : nullptr, grad_x ? &grad_col : nullptr);
  if (grad_x) {
    if (!grad_x->numel()) *grad_x = Tensor(x.shape());
    col2im_2d(grad_col, spec, *grad_x);
  }
}

// --- conv3d -----------------------------------------------------------------
//
// Valid (unpadded) in time, zero-padded in space. x: TxHxWxI, w: OxIxktxkhxkw.

struct Conv3dSpec {
  KernelSpec spatial;      // kh,kw,stride,dilation,padding,in_ch,out_ch
  std::size_t kt = 1;      // temporal extent
  std::size_t tstride = 1; // temporal stride

  std::size_t out_t(std::size_t t) const {
    if (t < kt) return 0;
    return (t - kt) / tstride + 1;
  }
  std::vector<std::size_t> weight_shape() const {
    return {spatial.out_ch, spatial.in_ch, kt, spatial.kh, spatial.kw};
  }
};

inline std::vector<double> im2col_3d(const Tensor& x, const Conv3dSpec& s3, std::size_t t_out) {
  const KernelSpec& s = s3.spatial;
  const std::size_t t = x.dim(0), h = x.dim(1), w = x.dim(2), ic = x.dim(3);
  const std::size_t oh = s.out_h(h), ow = s.out_w(w);
  const std::size_t z = ic * s3.kt * s.kh * s.kw;
  std::vector<double> col(t_out * oh * ow * z, 0.0);
  const double* xd = x.data();
  for (std::size_t ot = 0; ot < t_out; ++ot) {
    for (std::size_t orow = 0; orow < oh; ++orow) {
      for (std::size_t ocol = 0; ocol < ow; ++ocol) {
        double* crow = col.data() + ((ot * oh + orow) * ow + ocol) * z;
        const std::size_t t0 = ot * s3.tstride;
        const long long r0 = static_cast<long long>(orow * s.stride) - static_cast<long long>(s.padding);
        const long long c0 = static_cast<long long>(ocol * s.stride) - static_cast<long long>(s.padding);
        for (std::size_t i = 0; i < ic; ++i) {
          for (std::size_t tt = 0; tt < s3.kt; ++tt) {
            const std::size_t tr = t0 + tt;
            for (std::size_t kr = 0; kr < s.kh; ++kr) {
              const long long r = r0 + static_cast<long long>(s.dilation * kr);
              for (std::size_t kc = 0; kc < s.kw; ++kc) {
                const long long c = c0 + static_cast<long long>(s.dilation * kc);
                double v = 0.0;
                if (r >= 0 && c >= 0 && r < static_cast<long long>(h) && c < static_cast<long long>(w))
                  v = xd[((tr * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(c)) * ic + i];
                crow[((i * s3.kt + tt) * s.kh + kr) * s.kw + kc] = v;
              }
            }
          }
        }
      }
    }
  }
  return col;
}

inline Tensor conv3d(const Tensor& x, const Tensor& w, const Conv3dSpec& s3) {
  if (x.rank() != 4) throw std::invalid_argument("conv3d: input must be TxHxWxC, got " + x.shape_str());
  if (x.dim(3) != s3.spatial.in_ch)
    throw std::invalid_argument("conv3d: input has " + std::to_string(x.dim(3)) +
                                " channels, spec expects " + std::to_string(s3.spatial.in_ch));
  if (w.shape() != s3.weight_shape())
    throw std::invalid_argument("conv3d: weight shape " + w.shape_str() + " inconsistent with spec");
  if (x.dim(0) < s3.kt) throw std::invalid_argument("snippet too short");
  s3.spatial.validate(x.dim(1), x.dim(2));
  const std::size_t to = s3.out_t(x.dim(0));
  const std::size_t oh = s3.spatial.out_h(x.dim(1)), ow = s3.spatial.out_w(x.dim(2));
  const std::size_t z = s3.spatial.in_ch * s3.kt * s3.spatial.kh * s3.spatial.kw;
  const std::vector<double> col = im2col_3d(x, s3, to);
  Tensor y({to, oh, ow, s3.spatial.out_ch});
  gemm_col_w(col, to * oh * ow, z, w.data(), s3.spatial.out_ch, y.data());
  return y;
}

inline void col2im_3d(const std::vector<double>& grad_col, const Conv3dSpec& s3, Tensor& grad_x) {
  const KernelSpec& s = s3.spatial;
  const std::size_t t = grad_x.dim(0), h = grad_x.dim(1), w = grad_x.dim(2), ic = grad_x.dim(3);
  const std::size_t to = s3.out_t(t);
  const std::size_t oh = s.out_h(h), ow = s.out_w(w);
  const std::size_t z = ic * s3.kt * s.kh * s.kw;
  double* xd = grad_x.data();
  for (std::size_t ot = 0; ot < to; ++ot) {
    for (std::size_t orow = 0; orow < oh; ++orow) {
      for (std::size_t ocol = 0; ocol < ow; ++ocol) {
        const double* crow = grad_col.data() + ((ot * oh + orow) * ow + ocol) * z;
        const std::size_t t0 = ot * s3.tstride;
        const long long r0 = static_cast<long long>(orow * s.stride) - static_cast<long long>(s.padding);
        const long long c0 = static_cast<long long>(ocol * s.stride) - static_cast<long long>(s.padding);
        for (std::size_t i = 0; i < ic; ++i) {
          for (std::size_t tt = 0; tt < s3.kt; ++tt) {
            const std::size_t tr = t0 + tt;
            for (std::size_t kr = 0; kr < s.kh; ++kr) {
              const long long r = r0 + static_cast<long long>(s.dilation * kr);
              if (r < 0 || r >= static_cast<long long>(h)) continue;
              for (std::size_t kc = 0; kc < s.kw; ++kc) {
                const long long c = c0 + static_cast<long long>(s.dilation * kc);
                if (c < 0 || c >= static_cast<long long>(w)) continue;
                xd[((tr * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(c)) * ic + i] +=
                    crow[((i * s3.kt + tt) * s.kh + kr) * s.kw + kc];
              }
            }
          }
        }
      }
    }
  }
}

inline void conv3d_backward(const Tensor& x, const Tensor& w, const Conv3dSpec& s3,
                            const Tensor& gout, Tensor* grad_x, Tensor* grad_w) {
  const std::size_t to = s3.out_t(x.dim(0));
  const std::size_t m = to * s3.spatial.out_h(x.dim(1)) * s3.spatial.out_w(x.dim(2));
  const std::size_t z = s3.spatial.in_ch * s3.kt * s3.spatial.kh * s3.spatial.kw;
  const std::vector<double> col = im2col_3d(x, s3, to);
  std::vector<double> grad_col;
  if (grad_w && !grad_w->numel()) *grad_w = Tensor(s3.weight_shape());
  gemm_backward(col, m, z, w.data(), s3.spatial.out_ch, gout.data(),
                grad_w ? grad_w->data() : nullptr, grad_x ? &grad_col : nullptr);
  if (grad_x) {
    if (!grad_x->numel()) *grad_x = Tensor(x.shape());
    col2im_3d(grad_col, s3, *grad_x);
  }
}

}  // namespace lcdc
