#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lcdc/conv.hpp"
#include "lcdc/deform.hpp"
#include "lcdc/tensor.hpp"

namespace lcdc::ad {

class Graph;

// Everything a node must replay its reverse-mode product: the op object keeps
// whatever forward context it needs (pool argmaxes, normalized activations).
struct OpBase {
  virtual ~OpBase() = default;
  virtual void backward(Graph& g, const std::vector<std::size_t>& parents, const Tensor& gout) = 0;
};

// Reverse-mode tape. Nodes are appended in topological order (operands always
// precede their consumers); gradients accumulate additively at fan-out. One
// backward pass per graph instance; a Graph is confined to a single thread.
class Graph {
 public:
  using Id = std::size_t;

  Id leaf(Tensor value) { return push(std::move(value), {}, nullptr); }

  const Tensor& value(Id id) const { return nodes_.at(id).value; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator for a node, allocated to zeros on first touch.
  Tensor& grad_buffer(Id id) {
    Node& n = nodes_.at(id);
    if (!n.grad.numel()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }
  bool has_grad(Id id) const { return nodes_.at(id).grad.numel() != 0; }
  const Tensor& grad(Id id) const {
    const Node& n = nodes_.at(id);
    if (!n.grad.numel()) throw std::logic_error("Graph: no gradient recorded for node");
    return n.grad;
  }

  void backward(Id out, const Tensor& seed) {
    if (ran_backward_) throw std::logic_error("Graph: backward already ran for this forward pass");
    check_same_shape(seed, nodes_.at(out).value, "Graph::backward seed");
    ran_backward_ = true;
    grad_buffer(out);
    Tensor& g = nodes_[out].grad;
    for (std::size_t i = 0; i < seed.numel(); ++i) g[i] += seed[i];
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.op || !n.grad.numel()) continue;
      n.op->backward(*this, n.parents, n.grad);
    }
  }

  // --- graph construction (implemented after the op definitions) ---
  Id conv2d(Id x, Id w, const KernelSpec& spec);
  Id conv3d(Id x, Id w, const Conv3dSpec& spec);
  Id add_channel_bias(Id x, Id b);
  Id bilinear_sample(Id plane, Id point);
  Id deform_input(Id x, Id offsets);
  Id lcdc_conv2d(Id x, Id w, Id offsets, const KernelSpec& spec);
  Id deformable_conv2d(Id x, Id w, Id offsets, const KernelSpec& spec);
  Id batchnorm(Id x, Id gamma, Id beta, bool training, const Tensor* run_mean = nullptr,
               const Tensor* run_var = nullptr, Tensor* batch_mean = nullptr,
               Tensor* batch_var = nullptr);
  Id relu(Id x);
  Id add(Id a, Id b);
  Id concat_channels(const std::vector<Id>& xs);
  Id slice_time_tail(Id x);  // drops the first time step
  Id diff_time(Id x);        // x[t] - x[t-1]
  Id temporal_max_pool(Id x, std::size_t size, std::size_t stride);
  Id spatial_max_pool(Id x, std::size_t size, std::size_t stride);
  Id temporal_mean(Id x);
  Id flatten(Id x);
  Id linear(Id x, Id w, Id b);
  Id conv1d_time(Id x, Id w);  // same-padded over the leading axis
  Id softmax_cross_entropy(Id logits, std::size_t label);
  Id sum_squares(Id x);

  Id push(Tensor value, std::vector<Id> parents, std::unique_ptr<OpBase> op) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(parents), std::move(op)});
    return nodes_.size() - 1;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched
    std::vector<Id> parents;
    std::unique_ptr<OpBase> op;
  };
  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

namespace detail {

inline bool batched(const Tensor& x) { return x.rank() == 4; }

inline std::size_t frames(const Tensor& x) { return batched(x) ? x.dim(0) : 1; }

inline Tensor frame_slice(const Tensor& x, std::size_t t) {
  if (!batched(x)) return x;
  const std::size_t n = x.dim(1) * x.dim(2) * x.dim(3);
  std::vector<double> d(x.data() + t * n, x.data() + (t + 1) * n);
  return Tensor({x.dim(1), x.dim(2), x.dim(3)}, std::move(d));
}

inline void frame_store(Tensor& dst, std::size_t t, const Tensor& frame) {
  const std::size_t n = frame.numel();
  std::copy(frame.data(), frame.data() + n, dst.data() + t * n);
}

inline void frame_add(Tensor& dst, std::size_t t, const Tensor& frame) {
  const std::size_t n = frame.numel();
  for (std::size_t i = 0; i < n; ++i) dst[t * n + i] += frame[i];
}

}  // namespace detail

// --- op implementations ------------------------------------------------------

namespace ops {

// conv2d applied per frame with shared weights when x carries a leading
// time axis; this is how the trunk shares parameters across time.
struct Conv2dOp final : OpBase {
  KernelSpec spec;
  explicit Conv2dOp(const KernelSpec& s) : spec(s) {}
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    const Tensor& x = g.value(p[0]);
    const Tensor& w = g.value(p[1]);
    Tensor& gx = g.grad_buffer(p[0]);
    Tensor& gw = g.grad_buffer(p[1]);
    const std::size_t t = detail::frames(x);
    for (std::size_t f = 0; f < t; ++f) {
      const Tensor xf = detail::frame_slice(x, f);
      const Tensor gf = detail::frame_slice(gout, f);
      Tensor gxf(xf.shape());
      conv2d_backward(xf, w, spec, gf, &gxf, &gw);
      if (detail::batched(x))
        detail::frame_add(gx, f, gxf);
      else
        for (std::size_t i = 0; i < gxf.numel(); ++i) gx[i] += gxf[i];
    }
  }
};

struct Conv3dOp final : OpBase {
  Conv3dSpec spec;
  explicit Conv3dOp(const Conv3dSpec& s) : spec(s) {}
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    conv3d_backward(g.value(p[0]), g.value(p[1]), spec, gout, &g.grad_buffer(p[0]),
                    &g.grad_buffer(p[1]));
  }
};

struct AddChannelBiasOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    Tensor& gx = g.grad_buffer(p[0]);
    Tensor& gb = g.grad_buffer(p[1]);
    const std::size_t c = gb.numel();
    for (std::size_t i = 0; i < gout.numel(); ++i) {
      gx[i] += gout[i];
      gb[i % c] += gout[i];
    }
  }
};

struct BilinearSampleOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    const Tensor& plane = g.value(p[0]);
    const Tensor& point = g.value(p[1]);
    const double gs = gout[0];
    const BilinearValueGrad bg =
        bilinear_value_grad_raw(plane.data(), plane.dim(0), plane.dim(1), 1, 0, point[0], point[1]);
    bilinear_scatter_raw(g.grad_buffer(p[0]).data(), plane.dim(0), plane.dim(1), 1, 0, point[0],
                         point[1], gs);
    Tensor& gp = g.grad_buffer(p[1]);
    gp[0] += gs * bg.d_row;
    gp[1] += gs * bg.d_col;
  }
};

struct DeformInputOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    const Tensor& x = g.value(p[0]);
    const Tensor& off = g.value(p[1]);
    Tensor& gx = g.grad_buffer(p[0]);
    Tensor& go = g.grad_buffer(p[1]);
    const std::size_t t = detail::frames(x);
    for (std::size_t f = 0; f < t; ++f) {
      const Tensor xf = detail::frame_slice(x, f);
      const LocalOffsets of(detail::batched(off) ? detail::frame_slice(off, f) : off);
      const Tensor gf = detail::frame_slice(gout, f);
      Tensor gxf(xf.shape()), gof(of.tensor().shape());
      deform_input_backward(xf, of, gf, &gxf, &gof);
      if (detail::batched(x)) {
        detail::frame_add(gx, f, gxf);
        detail::frame_add(go, f, gof);
      } else {
        for (std::size_t i = 0; i < gxf.numel(); ++i) gx[i] += gxf[i];
        for (std::size_t i = 0; i < gof.numel(); ++i) go[i] += gof[i];
      }
    }
  }
};

struct LcdcConvOp final : OpBase {
  KernelSpec spec;
  explicit LcdcConvOp(const KernelSpec& s) : spec(s) {}
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    const Tensor& x = g.value(p[0]);
    const Tensor& w = g.value(p[1]);
    const Tensor& off = g.value(p[2]);
    Tensor& gx = g.grad_buffer(p[0]);
    Tensor& gw = g.grad_buffer(p[1]);
    Tensor& go = g.grad_buffer(p[2]);
    const std::size_t t = detail::frames(x);
    for (std::size_t f = 0; f < t; ++f) {
      const Tensor xf = detail::frame_slice(x, f);
      const LocalOffsets of(detail::batched(off) ? detail::frame_slice(off, f) : off);
      const Tensor gf = detail::frame_slice(gout, f);
      Tensor gxf(xf.shape()), gof(of.tensor().shape());
      lcdc_conv2d_backward(xf, w, of, spec, gf, &gxf, &gw, &gof);
      if (detail::batched(x)) {
        detail::frame_add(gx, f, gxf);
        detail::frame_add(go, f, gof);
      } else {
        for (std::size_t i = 0; i < gxf.numel(); ++i) gx[i] += gxf[i];
        for (std::size_t i = 0; i < gof.numel(); ++i) go[i] += gof[i];
      }
    }
  }
};

struct DeformableConvOp final : OpBase {
  KernelSpec spec;
  explicit DeformableConvOp(const KernelSpec& s) : spec(s) {}
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    const Tensor& x = g.value(p[0]);
    const Tensor& w = g.value(p[1]);
    const Tensor& off = g.value(p[2]);
    Tensor& gx = g.grad_buffer(p[0]);
    Tensor& gw = g.grad_buffer(p[1]);
    Tensor& go = g.grad_buffer(p[2]);
    const bool bat = x.rank() == 4;
    const std::size_t t = bat ? x.dim(0) : 1;
    for (std::size_t f = 0; f < t; ++f) {
      const Tensor xf = detail::frame_slice(x, f);
      Tensor off_f;
      if (bat) {
        const std::size_t n = off.numel() / off.dim(0);
        std::vector<double> d(off.data() + f * n, off.data() + (f + 1) * n);
        off_f = Tensor({off.dim(1), off.dim(2), off.dim(3), off.dim(4), off.dim(5)}, std::move(d));
      } else {
        off_f = off;
      }
      const DenseOffsets of(off_f);
      const Tensor gf = detail::frame_slice(gout, f);
      Tensor gxf(xf.shape()), gof(off_f.shape());
      deformable_conv2d_backward(xf, w, of, spec, gf, &gxf, &gw, &gof);
      if (bat) {
        detail::frame_add(gx, f, gxf);
        const std::size_t n = gof.numel();
        for (std::size_t i = 0; i < n; ++i) go[f * n + i] += gof[i];
      } else {
        for (std::size_t i = 0; i < gxf.numel(); ++i) gx[i] += gxf[i];
        for (std::size_t i = 0; i < gof.numel(); ++i) go[i] += gof[i];
      }
    }
  }
};

struct BatchNormOp final : OpBase {
  bool training;
  Tensor xhat;     // training mode
  Tensor invstd;   // per channel
  Tensor eval_scale;  // gamma * invstd(running), eval mode
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    const Tensor& x = g.value(p[0]);
    const Tensor& gamma = g.value(p[1]);
    Tensor& gx = g.grad_buffer(p[0]);
    Tensor& ggamma = g.grad_buffer(p[1]);
    Tensor& gbeta = g.grad_buffer(p[2]);
    const std::size_t c = gamma.numel();
    const std::size_t m = x.numel() / c;
    if (!training) {
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const std::size_t ch = i % c;
        gx[i] += gout[i] * eval_scale[ch];
        ggamma[ch] += gout[i] * xhat[i];
        gbeta[ch] += gout[i];
      }
      return;
    }
    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const std::size_t ch = i % c;
      sum_g[ch] += gout[i];
      sum_gx[ch] += gout[i] * xhat[i];
      ggamma[ch] += gout[i] * xhat[i];
      gbeta[ch] += gout[i];
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const std::size_t ch = i % c;
      gx[i] += gamma[ch] * invstd[ch] * (gout[i] - inv_m * sum_g[ch] - xhat[i] * inv_m * sum_gx[ch]);
    }
  }
};

struct ReluOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    const Tensor& x = g.value(p[0]);
    Tensor& gx = g.grad_buffer(p[0]);
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (x[i] > 0.0) gx[i] += gout[i];
  }
};

struct AddOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    Tensor& ga = g.grad_buffer(p[0]);
    Tensor& gb = g.grad_buffer(p[1]);
    for (std::size_t i = 0; i < gout.numel(); ++i) {
      ga[i] += gout[i];
      gb[i] += gout[i];
    }
  }
};

struct ConcatChannelsOp final : OpBase {
  std::vector<std::size_t> widths;
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    std::size_t total = 0;
    for (std::size_t wdt : widths) total += wdt;
    const std::size_t rows = gout.numel() / total;
    std::size_t base = 0;
    for (std::size_t s = 0; s < p.size(); ++s) {
      Tensor& gp = g.grad_buffer(p[s]);
      const std::size_t wdt = widths[s];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < wdt; ++i) gp[r * wdt + i] += gout[r * total + base + i];
      base += wdt;
    }
  }
};

struct SliceTimeTailOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    Tensor& gx = g.grad_buffer(p[0]);
    const std::size_t n = gx.numel() / gx.shape()[0];
    for (std::size_t i = 0; i < gout.numel(); ++i) gx[n + i] += gout[i];
  }
};

struct DiffTimeOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    Tensor& gx = g.grad_buffer(p[0]);
    const std::size_t n = gx.numel() / gx.shape()[0];
    const std::size_t tm1 = gout.shape()[0];
    for (std::size_t t = 0; t < tm1; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        const double gv = gout[t * n + i];
        gx[(t + 1) * n + i] += gv;
        gx[t * n + i] -= gv;
      }
  }
};

struct TemporalMaxPoolOp final : OpBase {
  std::vector<std::size_t> argmax;  // source t per output element
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    Tensor& gx = g.grad_buffer(p[0]);
    const std::size_t n = gx.numel() / gx.shape()[0];
    const std::size_t to = gout.shape()[0];
    for (std::size_t t = 0; t < to; ++t)
      for (std::size_t i = 0; i < n; ++i) gx[argmax[t * n + i] * n + i] += gout[t * n + i];
  }
};

struct SpatialMaxPoolOp final : OpBase {
  std::vector<std::size_t> argmax;  // flat (r*W+c) source per output element
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    Tensor& gx = g.grad_buffer(p[0]);
    const std::size_t c = gx.shape()[2];
    const std::size_t ow = gout.shape()[1], oc = gout.shape()[2];
    for (std::size_t r = 0; r < gout.shape()[0]; ++r)
      for (std::size_t col = 0; col < ow; ++col)
        for (std::size_t ch = 0; ch < oc; ++ch) {
          const std::size_t src = argmax[(r * ow + col) * oc + ch];
          gx[src * c + ch] += gout.at(r, col, ch);
        }
  }
};

struct TemporalMeanOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    Tensor& gx = g.grad_buffer(p[0]);
    const std::size_t t = gx.shape()[0];
    const std::size_t n = gx.numel() / t;
    const double inv = 1.0 / static_cast<double>(t);
    for (std::size_t f = 0; f < t; ++f)
      for (std::size_t i = 0; i < n; ++i) gx[f * n + i] += gout[i] * inv;
  }
};

struct FlattenOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    Tensor& gx = g.grad_buffer(p[0]);
    for (std::size_t i = 0; i < gout.numel(); ++i) gx[i] += gout[i];
  }
};

struct LinearOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    const Tensor& x = g.value(p[0]);
    const Tensor& w = g.value(p[1]);
    Tensor& gx = g.grad_buffer(p[0]);
    Tensor& gw = g.grad_buffer(p[1]);
    Tensor& gb = g.grad_buffer(p[2]);
    const std::size_t o = w.dim(0), d = w.dim(1);
    const std::size_t rows = x.numel() / d;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * d;
      const double* gr = gout.data() + r * o;
      double* gxr = gx.data() + r * d;
      for (std::size_t j = 0; j < o; ++j) {
        const double gv = gr[j];
        if (gv == 0.0) continue;
        gb[j] += gv;
        const double* wr = w.data() + j * d;
        double* gwr = gw.data() + j * d;
        for (std::size_t i = 0; i < d; ++i) {
          gxr[i] += gv * wr[i];
          gwr[i] += gv * xr[i];
        }
      }
    }
  }
};

struct Conv1dTimeOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    const Tensor& x = g.value(p[0]);
    const Tensor& w = g.value(p[1]);
    Tensor& gx = g.grad_buffer(p[0]);
    Tensor& gw = g.grad_buffer(p[1]);
    const std::size_t t = x.dim(0), d = x.dim(1);
    const std::size_t o = w.dim(0), kl = w.dim(2);
    const std::size_t pad = (kl - 1) / 2;
    for (std::size_t tt = 0; tt < t; ++tt)
      for (std::size_t j = 0; j < o; ++j) {
        const double gv = gout.at(tt, j);
        if (gv == 0.0) continue;
        for (std::size_t q = 0; q < kl; ++q) {
          const long long src = static_cast<long long>(tt + q) - static_cast<long long>(pad);
          if (src < 0 || src >= static_cast<long long>(t)) continue;
          for (std::size_t i = 0; i < d; ++i) {
            gx.at(static_cast<std::size_t>(src), i) += gv * w.at(j, i, q);
            gw.at(j, i, q) += gv * x.at(static_cast<std::size_t>(src), i);
          }
        }
      }
  }
};

struct SoftmaxCrossEntropyOp final : OpBase {
  std::size_t label = 0;
  std::vector<double> prob;
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    Tensor& gl = g.grad_buffer(p[0]);
    const double gs = gout[0];
    for (std::size_t i = 0; i < prob.size(); ++i)
      gl[i] += gs * (prob[i] - (i == label ? 1.0 : 0.0));
  }
};

struct SumSquaresOp final : OpBase {
  void backward(Graph& g, const std::vector<std::size_t>& p, const Tensor& gout) override {
    const Tensor& x = g.value(p[0]);
    Tensor& gx = g.grad_buffer(p[0]);
    const double gs = gout[0];
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += gs * 2.0 * x[i];
  }
};

}  // namespace ops

// --- forward builders --------------------------------------------------------

inline Graph::Id Graph::conv2d(Id x, Id w, const KernelSpec& spec) {
  const Tensor& xv = value(x);
  Tensor out;
  if (detail::batched(xv)) {
    const std::size_t t = xv.dim(0);
    const Tensor y0 = lcdc::conv2d(detail::frame_slice(xv, 0), value(w), spec);
    out = Tensor({t, y0.dim(0), y0.dim(1), y0.dim(2)});
    detail::frame_store(out, 0, y0);
    for (std::size_t f = 1; f < t; ++f)
      detail::frame_store(out, f, lcdc::conv2d(detail::frame_slice(xv, f), value(w), spec));
  } else {
    out = lcdc::conv2d(xv, value(w), spec);
  }
  return push(std::move(out), {x, w}, std::make_unique<ops::Conv2dOp>(spec));
}

inline Graph::Id Graph::conv3d(Id x, Id w, const Conv3dSpec& spec) {
  return push(lcdc::conv3d(value(x), value(w), spec), {x, w}, std::make_unique<ops::Conv3dOp>(spec));
}

inline Graph::Id Graph::add_channel_bias(Id x, Id b) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(b);
  const std::size_t c = bv.numel();
  if (xv.shape().back() != c)
    throw std::invalid_argument("add_channel_bias: bias width " + std::to_string(c) +
                                " vs channels " + std::to_string(xv.shape().back()));
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] + bv[i % c];
  return push(std::move(out), {x, b}, std::make_unique<ops::AddChannelBiasOp>());
}

inline Graph::Id Graph::bilinear_sample(Id plane, Id point) {
  const Tensor& pv = value(point);
  if (pv.numel() != 2) throw std::invalid_argument("bilinear_sample: point must have 2 entries");
  const double v = lcdc::bilinear_sample(value(plane), pv[0], pv[1]);
  return push(Tensor::scalar(v), {plane, point}, std::make_unique<ops::BilinearSampleOp>());
}

inline Graph::Id Graph::deform_input(Id x, Id offsets) {
  const Tensor& xv = value(x);
  const Tensor& ov = value(offsets);
  Tensor out;
  if (detail::batched(xv)) {
    out = Tensor(xv.shape());
    for (std::size_t f = 0; f < xv.dim(0); ++f)
      detail::frame_store(
          out, f,
          lcdc::deform_input(detail::frame_slice(xv, f), LocalOffsets(detail::frame_slice(ov, f))));
  } else {
    out = lcdc::deform_input(xv, LocalOffsets(ov));
  }
  return push(std::move(out), {x, offsets}, std::make_unique<ops::DeformInputOp>());
}

inline Graph::Id Graph::lcdc_conv2d(Id x, Id w, Id offsets, const KernelSpec& spec) {
  const Tensor& xv = value(x);
  const Tensor& ov = value(offsets);
  Tensor out;
  if (detail::batched(xv)) {
    const std::size_t t = xv.dim(0);
    const Tensor y0 = lcdc::lcdc_conv2d(detail::frame_slice(xv, 0), value(w),
                                        LocalOffsets(detail::frame_slice(ov, 0)), spec);
    out = Tensor({t, y0.dim(0), y0.dim(1), y0.dim(2)});
    detail::frame_store(out, 0, y0);
    for (std::size_t f = 1; f < t; ++f)
      detail::frame_store(out, f,
                          lcdc::lcdc_conv2d(detail::frame_slice(xv, f), value(w),
                                            LocalOffsets(detail::frame_slice(ov, f)), spec));
  } else {
    out = lcdc::lcdc_conv2d(xv, value(w), LocalOffsets(ov), spec);
  }
  return push(std::move(out), {x, w, offsets}, std::make_unique<ops::LcdcConvOp>(spec));
}

inline Graph::Id Graph::deformable_conv2d(Id x, Id w, Id offsets, const KernelSpec& spec) {
  const Tensor& xv = value(x);
  const Tensor& ov = value(offsets);
  Tensor out;
  if (detail::batched(xv)) {
    const std::size_t t = xv.dim(0);
    const std::size_t n = ov.numel() / ov.dim(0);
    for (std::size_t f = 0; f < t; ++f) {
      std::vector<double> d(ov.data() + f * n, ov.data() + (f + 1) * n);
      const DenseOffsets of(Tensor({ov.dim(1), ov.dim(2), ov.dim(3), ov.dim(4), ov.dim(5)}, std::move(d)));
      const Tensor yf = lcdc::deformable_conv2d(detail::frame_slice(xv, f), value(w), of, spec);
      if (f == 0) out = Tensor({t, yf.dim(0), yf.dim(1), yf.dim(2)});
      detail::frame_store(out, f, yf);
    }
  } else {
    out = lcdc::deformable_conv2d(xv, value(w), DenseOffsets(ov), spec);
  }
  return push(std::move(out), {x, w, offsets}, std::make_unique<ops::DeformableConvOp>(spec));
}

inline Graph::Id Graph::batchnorm(Id x, Id gamma, Id beta, bool training, const Tensor* run_mean,
                                  const Tensor* run_var, Tensor* batch_mean, Tensor* batch_var) {
  const Tensor& xv = value(x);
  const Tensor& gv = value(gamma);
  const Tensor& bv = value(beta);
  const std::size_t c = gv.numel();
  if (bv.numel() != c || xv.shape().back() != c)
    throw std::invalid_argument("batchnorm: channel mismatch");
  const std::size_t m = xv.numel() / c;
  constexpr double kEps = 1e-5;
  auto op = std::make_unique<ops::BatchNormOp>();
  op->training = training;
  Tensor out(xv.shape());
  if (training) {
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    for (std::size_t i = 0; i < xv.numel(); ++i) mean[i % c] += xv[i];
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(m);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const double d = xv[i] - mean[i % c];
      var[i % c] += d * d;
    }
    for (std::size_t ch = 0; ch < c; ++ch) var[ch] /= static_cast<double>(m);
    op->invstd = Tensor({c});
    for (std::size_t ch = 0; ch < c; ++ch) op->invstd[ch] = 1.0 / std::sqrt(var[ch] + kEps);
    op->xhat = Tensor(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const std::size_t ch = i % c;
      op->xhat[i] = (xv[i] - mean[ch]) * op->invstd[ch];
      out[i] = gv[ch] * op->xhat[i] + bv[ch];
    }
    if (batch_mean) *batch_mean = Tensor({c}, std::vector<double>(mean.begin(), mean.end()));
    if (batch_var) *batch_var = Tensor({c}, std::vector<double>(var.begin(), var.end()));
  } else {
    if (!run_mean || !run_var) throw std::invalid_argument("batchnorm: eval mode needs running stats");
    op->eval_scale = Tensor({c});
    op->xhat = Tensor(xv.shape());
    Tensor invstd({c});
    for (std::size_t ch = 0; ch < c; ++ch) invstd[ch] = 1.0 / std::sqrt((*run_var)[ch] + kEps);
    for (std::size_t ch = 0; ch < c; ++ch) op->eval_scale[ch] = gv[ch] * invstd[ch];
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const std::size_t ch = i % c;
      op->xhat[i] = (xv[i] - (*run_mean)[ch]) * invstd[ch];
      out[i] = gv[ch] * op->xhat[i] + bv[ch];
    }
  }
  return push(std::move(out), {x, gamma, beta}, std::move(op));
}

inline Graph::Id Graph::relu(Id x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return push(std::move(out), {x}, std::make_unique<ops::ReluOp>());
}

inline Graph::Id Graph::add(Id a, Id b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "Graph::add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
  return push(std::move(out), {a, b}, std::make_unique<ops::AddOp>());
}

inline Graph::Id Graph::concat_channels(const std::vector<Id>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  auto op = std::make_unique<ops::ConcatChannelsOp>();
  std::size_t total = 0;
  const Tensor& first = value(xs[0]);
  for (Id id : xs) {
    const Tensor& v = value(id);
    if (v.rank() != first.rank()) throw std::invalid_argument("concat_channels: rank mismatch");
    for (std::size_t a = 0; a + 1 < v.rank(); ++a)
      if (v.dim(a) != first.dim(a)) throw std::invalid_argument("concat_channels: leading extent mismatch");
    op->widths.push_back(v.shape().back());
    total += v.shape().back();
  }
  std::vector<std::size_t> shape = first.shape();
  shape.back() = total;
  Tensor out(shape);
  const std::size_t rows = out.numel() / total;
  std::size_t base = 0;
  for (std::size_t s = 0; s < xs.size(); ++s) {
    const Tensor& v = value(xs[s]);
    const std::size_t wdt = op->widths[s];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < wdt; ++i) out[r * total + base + i] = v[r * wdt + i];
    base += wdt;
  }
  return push(std::move(out), xs, std::move(op));
}

inline Graph::Id Graph::slice_time_tail(Id x) {
  const Tensor& xv = value(x);
  if (xv.dim(0) < 2) throw std::invalid_argument("slice_time_tail: need at least 2 time steps");
  std::vector<std::size_t> shape = xv.shape();
  shape[0] -= 1;
  const std::size_t n = xv.numel() / xv.dim(0);
  Tensor out(shape, std::vector<double>(xv.data() + n, xv.data() + xv.numel()));
  return push(std::move(out), {x}, std::make_unique<ops::SliceTimeTailOp>());
}

inline Graph::Id Graph::diff_time(Id x) {
  const Tensor& xv = value(x);
  if (xv.dim(0) < 2) throw std::invalid_argument("diff_time: need at least 2 time steps");
  std::vector<std::size_t> shape = xv.shape();
  shape[0] -= 1;
  Tensor out(shape);
  const std::size_t n = xv.numel() / xv.dim(0);
  for (std::size_t t = 0; t + 1 < xv.dim(0); ++t)
    for (std::size_t i = 0; i < n; ++i) out[t * n + i] = xv[(t + 1) * n + i] - xv[t * n + i];
  return push(std::move(out), {x}, std::make_unique<ops::DiffTimeOp>());
}

inline Graph::Id Graph::temporal_max_pool(Id x, std::size_t size, std::size_t stride) {
  const Tensor& xv = value(x);
  if (size == 0 || stride == 0) throw std::invalid_argument("temporal_max_pool: zero size/stride");
  const std::size_t t = xv.dim(0);
  if (t < size) throw std::invalid_argument("temporal_max_pool: input shorter than window");
  const std::size_t to = (t - size) / stride + 1;
  std::vector<std::size_t> shape = xv.shape();
  shape[0] = to;
  const std::size_t n = xv.numel() / t;
  auto op = std::make_unique<ops::TemporalMaxPoolOp>();
  op->argmax.resize(to * n);
  Tensor out(shape);
  for (std::size_t ot = 0; ot < to; ++ot)
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best_t = ot * stride;
      double best = xv[best_t * n + i];
      for (std::size_t q = 1; q < size; ++q) {
        const std::size_t tt = ot * stride + q;
        if (xv[tt * n + i] > best) {
          best = xv[tt * n + i];
          best_t = tt;
        }
      }
      out[ot * n + i] = best;
      op->argmax[ot * n + i] = best_t;
    }
  return push(std::move(out), {x}, std::move(op));
}

inline Graph::Id Graph::spatial_max_pool(Id x, std::size_t size, std::size_t stride) {
  const Tensor& xv = value(x);
  if (xv.rank() != 3) throw std::invalid_argument("spatial_max_pool: input must be HxWxC");
  const std::size_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  if (h < size || w < size) throw std::invalid_argument("spatial_max_pool: window larger than input");
  const std::size_t oh = (h - size) / stride + 1, ow = (w - size) / stride + 1;
  auto op = std::make_unique<ops::SpatialMaxPoolOp>();
  op->argmax.resize(oh * ow * c);
  Tensor out({oh, ow, c});
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t col = 0; col < ow; ++col)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best_src = (r * stride) * w + (col * stride);
        double best = xv[best_src * c + ch];
        for (std::size_t dr = 0; dr < size; ++dr)
          for (std::size_t dc = 0; dc < size; ++dc) {
            const std::size_t src = (r * stride + dr) * w + (col * stride + dc);
            if (xv[src * c + ch] > best) {
              best = xv[src * c + ch];
              best_src = src;
            }
          }
        out.at(r, col, ch) = best;
        op->argmax[(r * ow + col) * c + ch] = best_src;
      }
  return push(std::move(out), {x}, std::move(op));
}

inline Graph::Id Graph::temporal_mean(Id x) {
  const Tensor& xv = value(x);
  const std::size_t t = xv.dim(0);
  const std::size_t n = xv.numel() / t;
  std::vector<std::size_t> shape(xv.shape().begin() + 1, xv.shape().end());
  Tensor out(shape);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t i = 0; i < n; ++i) out[i] += xv[f * n + i];
  const double inv = 1.0 / static_cast<double>(t);
  for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
  return push(std::move(out), {x}, std::make_unique<ops::TemporalMeanOp>());
}

inline Graph::Id Graph::flatten(Id x) {
  const Tensor& xv = value(x);
  return push(xv.reshaped({xv.numel()}), {x}, std::make_unique<ops::FlattenOp>());
}

inline Graph::Id Graph::linear(Id x, Id w, Id b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  const std::size_t o = wv.dim(0), d = wv.dim(1);
  if (xv.shape().back() != d || bv.numel() != o)
    throw std::invalid_argument("linear: shape mismatch, x " + xv.shape_str() + " w " + wv.shape_str());
  std::vector<std::size_t> shape = xv.shape();
  shape.back() = o;
  Tensor out(shape);
  const std::size_t rows = xv.numel() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double* yr = out.data() + r * o;
    for (std::size_t j = 0; j < o; ++j) {
      const double* wr = wv.data() + j * d;
      double acc = bv[j];
      for (std::size_t i = 0; i < d; ++i) acc += wr[i] * xr[i];
      yr[j] = acc;
    }
  }
  return push(std::move(out), {x, w, b}, std::make_unique<ops::LinearOp>());
}

inline Graph::Id Graph::conv1d_time(Id x, Id w) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  if (xv.rank() != 2 || wv.rank() != 3 || wv.dim(1) != xv.dim(1))
    throw std::invalid_argument("conv1d_time: x must be TxD and w OxDxK with matching D");
  const std::size_t t = xv.dim(0), d = xv.dim(1), o = wv.dim(0), kl = wv.dim(2);
  if (t < kl) throw std::invalid_argument("conv1d_time: sequence shorter than kernel");
  const std::size_t pad = (kl - 1) / 2;
  Tensor out({t, o});
  for (std::size_t tt = 0; tt < t; ++tt)
    for (std::size_t j = 0; j < o; ++j) {
      double acc = 0.0;
      for (std::size_t q = 0; q < kl; ++q) {
        const long long src = static_cast<long long>(tt + q) - static_cast<long long>(pad);
        if (src < 0 || src >= static_cast<long long>(t)) continue;
        for (std::size_t i = 0; i < d; ++i)
          acc += wv.at(j, i, q) * xv.at(static_cast<std::size_t>(src), i);
      }
      out.at(tt, j) = acc;
    }
  return push(std::move(out), {x, w}, std::make_unique<ops::Conv1dTimeOp>());
}

inline Graph::Id Graph::softmax_cross_entropy(Id logits, std::size_t label) {
  const Tensor& lv = value(logits);
  if (lv.rank() != 1) throw std::invalid_argument("softmax_cross_entropy: logits must be rank 1");
  if (label >= lv.numel()) throw std::invalid_argument("softmax_cross_entropy: invalid label");
  auto op = std::make_unique<ops::SoftmaxCrossEntropyOp>();
  op->label = label;
  double mx = lv[0];
  for (std::size_t i = 1; i < lv.numel(); ++i) mx = std::max(mx, lv[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < lv.numel(); ++i) denom += std::exp(lv[i] - mx);
  op->prob.resize(lv.numel());
  for (std::size_t i = 0; i < lv.numel(); ++i) op->prob[i] = std::exp(lv[i] - mx) / denom;
  const double loss = -(lv[label] - mx - std::log(denom));
  return push(Tensor::scalar(loss), {logits}, std::move(op));
}

inline Graph::Id Graph::sum_squares(Id x) {
  const Tensor& xv = value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i] * xv[i];
  return push(Tensor::scalar(acc), {x}, std::make_unique<ops::SumSquaresOp>());
}

// --- finite-difference oracle -------------------------------------------------

// Builds the scalar loss from leaf values; when `grads` is non-null it must
// also be filled with the analytic gradient of every leaf, in leaf order.
using ScalarFn = std::function<double(const std::vector<Tensor>&, std::vector<Tensor>*)>;

// Central-difference check of reverse-mode gradients. Returns the max over
// all checked coordinates of |analytic - numeric| / max(1,|analytic|,|numeric|).
// `leaf_selection` empty means every leaf.
inline double finite_diff_check(const ScalarFn& f, std::vector<Tensor> leaves, double eps,
                                std::vector<std::size_t> leaf_selection = {}) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be positive");
  std::vector<Tensor> analytic;
  f(leaves, &analytic);
  if (analytic.size() != leaves.size())
    throw std::logic_error("finite_diff_check: builder returned wrong gradient count");
  if (leaf_selection.empty())
    for (std::size_t i = 0; i < leaves.size(); ++i) leaf_selection.push_back(i);
  double max_rel = 0.0;
  for (std::size_t li : leaf_selection) {
    Tensor& leaf = leaves.at(li);
    for (std::size_t i = 0; i < leaf.numel(); ++i) {
      const double saved = leaf[i];
      leaf[i] = saved + eps;
      const double fp = f(leaves, nullptr);
      leaf[i] = saved - eps;
      const double fm = f(leaves, nullptr);
      leaf[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[li][i];
      const double rel = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace lcdc::ad
