#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lcdc/autodiff.hpp"
#include "lcdc/conv.hpp"
#include "lcdc/rng.hpp"
#include "lcdc/tensor.hpp"

namespace lcdc {

enum class Variant { lcdc, dc };

inline std::string variant_name(Variant v) { return v == Variant::lcdc ? "lcdc" : "dc"; }
inline Variant parse_variant(const std::string& s) {
  if (s == "lcdc") return Variant::lcdc;
  if (s == "dc") return Variant::dc;
  throw std::invalid_argument("unknown variant: " + s);
}

struct TrunkStage {
  std::size_t out_ch = 8;
  std::size_t kernel = 3;
  std::size_t stride = 2;
};

struct FusionStage {
  std::size_t out_ch = 8;
  std::size_t spatial_kernel = 3;
  std::size_t spatial_stride = 1;
  std::size_t kt = 4;
  std::size_t tstride = 2;
  std::size_t pool = 2;
  std::size_t pool_stride = 2;
};

// Snippet-level network configuration. The defaults are the desk-scale
// counterpart of the paper's architecture: a 3-stage trunk ending in three
// consecutive LCDC residual blocks whose offsets feed the fusion module.
struct NetConfig {
  std::size_t t = 16, h = 32, w = 32, c = 1;
  std::vector<TrunkStage> trunk = {{6, 3, 2}, {8, 3, 2}, {8, 3, 1}};
  std::size_t lcdc_blocks = 3;
  std::size_t block_kh = 3, block_kw = 3;
  Variant variant = Variant::lcdc;
  std::size_t dc_groups = 1;
  // Toy fusion shrinks the temporal kernel to fit 16-frame snippets; the
  // paper's own settings (kt=4, pool 2) need T-1 >= 26 under the same
  // arithmetic and stay available through the config file.
  std::vector<FusionStage> fusion = {{8, 3, 1, 2, 2, 2, 2}, {8, 3, 1, 2, 2, 1, 1}};
  std::size_t fc1 = 32, fc2 = 32;
  std::size_t classes = 4;
  bool appearance_only = false;

  std::size_t trunk_out_ch() const { return trunk.empty() ? c : trunk.back().out_ch; }
  std::size_t block_taps() const { return block_kh * block_kw; }
  std::size_t offset_channels() const {
    return variant == Variant::lcdc ? 2 : dc_groups * block_taps() * 2;
  }
  std::size_t fusion_in_ch() const { return trunk_out_ch() + lcdc_blocks * offset_channels(); }

  std::pair<std::size_t, std::size_t> trunk_out_hw() const {
    std::size_t ph = h, pw = w;
    for (const TrunkStage& s : trunk) {
      ph = KernelSpec::out_extent(ph, s.kernel, s.stride, 1, s.kernel / 2);
      pw = KernelSpec::out_extent(pw, s.kernel, s.stride, 1, s.kernel / 2);
    }
    return {ph, pw};
  }
};

// --- fusion temporal arithmetic ----------------------------------------------

struct TemporalArith {
  struct Row {
    std::string stage;
    std::size_t len;
  };
  std::vector<Row> rows;
  bool valid = true;

  std::string table() const {
    std::string out;
    for (const Row& r : rows) out += r.stage + " -> " + std::to_string(r.len) + "\n";
    return out;
  }
};

// Temporal lengths through the fusion pipeline, starting from the T-1 motion
// steps: conv (valid, floor((n-kt)/stride)+1) then pool (floor((n-size)/stride)+1).
inline TemporalArith fusion_temporal_arithmetic(const NetConfig& cfg) {
  TemporalArith ta;
  std::size_t n = cfg.t >= 1 ? cfg.t - 1 : 0;
  ta.rows.push_back({"input (T-1)", n});
  for (std::size_t i = 0; i < cfg.fusion.size(); ++i) {
    const FusionStage& f = cfg.fusion[i];
    if (n < f.kt) {
      ta.rows.push_back({"conv" + std::to_string(i + 1) + " (kt=" + std::to_string(f.kt) + ",s=" +
                             std::to_string(f.tstride) + ")",
                         0});
      ta.valid = false;
      return ta;
    }
    n = (n - f.kt) / f.tstride + 1;
    ta.rows.push_back({"conv" + std::to_string(i + 1) + " (kt=" + std::to_string(f.kt) + ",s=" +
                           std::to_string(f.tstride) + ")",
                       n});
    if (f.pool > 1 || f.pool_stride > 1) {
      if (n < f.pool) {
        ta.rows.push_back({"pool" + std::to_string(i + 1) + " (k=" + std::to_string(f.pool) + ",s=" +
                               std::to_string(f.pool_stride) + ")",
                           0});
        ta.valid = false;
        return ta;
      }
      n = (n - f.pool) / f.pool_stride + 1;
      ta.rows.push_back({"pool" + std::to_string(i + 1) + " (k=" + std::to_string(f.pool) + ",s=" +
                             std::to_string(f.pool_stride) + ")",
                         n});
    }
  }
  ta.rows.push_back({"averaging input", n});
  if (n < 1) ta.valid = false;
  return ta;
}

inline void validate_config(const NetConfig& cfg) {
  if (cfg.trunk.empty()) throw std::invalid_argument("NetConfig: empty trunk");
  if (cfg.lcdc_blocks < 1) throw std::invalid_argument("NetConfig: need at least one LCDC block");
  if (cfg.classes < 2) throw std::invalid_argument("NetConfig: need at least two classes");
  if (cfg.block_kh % 2 == 0 || cfg.block_kw % 2 == 0)
    throw std::invalid_argument("NetConfig: block kernels must be odd for same-padding");
  for (const TrunkStage& s : cfg.trunk)
    if (s.kernel % 2 == 0) throw std::invalid_argument("NetConfig: trunk kernels must be odd");
  const auto [ph, pw] = cfg.trunk_out_hw();
  if (ph == 0 || pw == 0) throw std::invalid_argument("NetConfig: trunk collapses spatial extent to zero");
  if (cfg.variant == Variant::dc && cfg.trunk_out_ch() % cfg.dc_groups != 0)
    throw std::invalid_argument("NetConfig: trunk channels not divisible by deformable groups");
  if (cfg.appearance_only) return;
  if (cfg.t < 2) throw std::invalid_argument("NetConfig: snippets need at least 2 frames");
  const TemporalArith ta = fusion_temporal_arithmetic(cfg);
  if (!ta.valid)
    throw std::invalid_argument("NetConfig: fusion temporal pipeline leaves no time step\n" +
                                ta.table());
}

// --- parameters ----------------------------------------------------------------

struct ParamEntry {
  std::string name;
  Tensor value;
  bool trainable = true;
  bool decay = false;  // subject to weight regularization (weights, not biases/BN)
};

struct NetParams {
  std::vector<ParamEntry> entries;

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return i;
    throw std::invalid_argument("NetParams: unknown tensor " + name);
  }
  Tensor& value(const std::string& name) { return entries[index(name)].value; }
  const Tensor& value(const std::string& name) const { return entries[index(name)].value; }

  std::size_t add(const std::string& name, Tensor v, bool trainable, bool decay) {
    entries.push_back({name, std::move(v), trainable, decay});
    return entries.size() - 1;
  }
};

namespace detail {

inline Tensor he_uniform(Xorshift64Star& rng, const std::vector<std::size_t>& shape,
                         std::size_t fan_in) {
  Tensor t(shape);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

inline void add_bn(NetParams& p, const std::string& prefix, std::size_t c) {
  p.add(prefix + ".gamma", Tensor({c}, std::vector<double>(c, 1.0)), true, false);
  p.add(prefix + ".beta", Tensor({c}), true, false);
  p.add(prefix + ".running_mean", Tensor({c}), false, false);
  p.add(prefix + ".running_var", Tensor({c}, std::vector<double>(c, 1.0)), false, false);
}

}  // namespace detail

// Offset learners start at zero so training begins as plain convolution;
// everything else uses fan-in scaled uniform init.
inline NetParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  Xorshift64Star rng(hash_combine(seed, 0x9a7a));
  NetParams p;
  std::size_t in_c = cfg.c;
  for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
    const TrunkStage& s = cfg.trunk[i];
    const std::string prefix = "trunk" + std::to_string(i);
    p.add(prefix + ".w",
          detail::he_uniform(rng, {s.out_ch, in_c, s.kernel, s.kernel}, in_c * s.kernel * s.kernel),
          true, true);
    detail::add_bn(p, prefix + ".bn", s.out_ch);
    in_c = s.out_ch;
  }
  const std::size_t cb = cfg.trunk_out_ch();
  for (std::size_t b = 0; b < cfg.lcdc_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    const std::size_t oc_off = cfg.offset_channels();
    p.add(prefix + ".phi.w", Tensor({oc_off, cb, cfg.block_kh, cfg.block_kw}), true, true);
    p.add(prefix + ".phi.b", Tensor({oc_off}), true, false);
    p.add(prefix + ".w",
          detail::he_uniform(rng, {cb, cb, cfg.block_kh, cfg.block_kw}, cb * cfg.block_taps()), true,
          true);
    detail::add_bn(p, prefix + ".bn", cb);
  }
  if (!cfg.appearance_only) {
    std::size_t fin = cfg.fusion_in_ch();
    for (std::size_t i = 0; i < cfg.fusion.size(); ++i) {
      const FusionStage& f = cfg.fusion[i];
      const std::string prefix = "fusion" + std::to_string(i);
      p.add(prefix + ".w",
            detail::he_uniform(rng, {f.out_ch, fin, f.kt, f.spatial_kernel, f.spatial_kernel},
                               fin * f.kt * f.spatial_kernel * f.spatial_kernel),
            true, true);
      detail::add_bn(p, prefix + ".bn", f.out_ch);
      fin = f.out_ch;
    }
  }
  const auto [ph, pw] = cfg.trunk_out_hw();
  const std::size_t pooled_h = ph >= 2 ? (ph - 2) / 2 + 1 : ph;
  const std::size_t pooled_w = pw >= 2 ? (pw - 2) / 2 + 1 : pw;
  const std::size_t head_c = cfg.appearance_only ? cb : cfg.fusion.back().out_ch;
  const std::size_t flat = pooled_h * pooled_w * head_c;
  p.add("fc1.w", detail::he_uniform(rng, {cfg.fc1, flat}, flat), true, true);
  p.add("fc1.b", Tensor({cfg.fc1}), true, false);
  p.add("fc2.w", detail::he_uniform(rng, {cfg.fc2, cfg.fc1}, cfg.fc1), true, true);
  p.add("fc2.b", Tensor({cfg.fc2}), true, false);
  p.add("cls.w", detail::he_uniform(rng, {cfg.classes, cfg.fc2}, cfg.fc2), true, true);
  p.add("cls.b", Tensor({cfg.classes}), true, false);
  return p;
}

// --- forward -------------------------------------------------------------------

struct SnippetForward {
  ad::Graph::Id logits = 0;
  ad::Graph::Id features = 0;                 // output of the last fc layer
  std::vector<ad::Graph::Id> block_offsets;   // per block, T x h x w x offset_ch
  ad::Graph::Id appearance = 0;               // T x h x w x C_a
  std::vector<ad::Graph::Id> param_leaf;      // per params entry; npos when not in graph
  std::vector<std::pair<std::size_t, Tensor>> batch_stats;  // (running-stat entry, batch value)
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

namespace detail {

struct NetBuilder {
  ad::Graph& g;
  const NetParams& params;
  const NetConfig& cfg;
  bool training;
  SnippetForward& out;

  ad::Graph::Id leaf_of(const std::string& name) {
    const std::size_t idx = params.index(name);
    if (out.param_leaf[idx] == SnippetForward::npos)
      out.param_leaf[idx] = g.leaf(params.entries[idx].value);
    return out.param_leaf[idx];
  }

  ad::Graph::Id bn_relu(ad::Graph::Id x, const std::string& prefix, bool relu_after = true) {
    const std::size_t rm = params.index(prefix + ".running_mean");
    const std::size_t rv = params.index(prefix + ".running_var");
    ad::Graph::Id y;
    if (training) {
      Tensor bm, bv;
      y = g.batchnorm(x, leaf_of(prefix + ".gamma"), leaf_of(prefix + ".beta"), true, nullptr,
                      nullptr, &bm, &bv);
      out.batch_stats.emplace_back(rm, std::move(bm));
      out.batch_stats.emplace_back(rv, std::move(bv));
    } else {
      y = g.batchnorm(x, leaf_of(prefix + ".gamma"), leaf_of(prefix + ".beta"), false,
                      &params.entries[rm].value, &params.entries[rv].value);
    }
    return relu_after ? g.relu(y) : y;
  }

  ad::Graph::Id trunk(ad::Graph::Id x) {
    std::size_t in_c = cfg.c;
    for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
      const TrunkStage& s = cfg.trunk[i];
      KernelSpec spec;
      spec.kh = spec.kw = s.kernel;
      spec.stride = s.stride;
      spec.padding = s.kernel / 2;
      spec.in_ch = in_c;
      spec.out_ch = s.out_ch;
      x = g.conv2d(x, leaf_of("trunk" + std::to_string(i) + ".w"), spec);
      x = bn_relu(x, "trunk" + std::to_string(i) + ".bn");
      in_c = s.out_ch;
    }
    return x;
  }

  ad::Graph::Id block(ad::Graph::Id x, std::size_t b) {
    const std::size_t cb = cfg.trunk_out_ch();
    const std::string prefix = "block" + std::to_string(b);
    KernelSpec off_spec;
    off_spec.kh = cfg.block_kh;
    off_spec.kw = cfg.block_kw;
    off_spec.padding = cfg.block_kh / 2;
    off_spec.in_ch = cb;
    off_spec.out_ch = cfg.offset_channels();
    ad::Graph::Id off = g.conv2d(x, leaf_of(prefix + ".phi.w"), off_spec);
    off = g.add_channel_bias(off, leaf_of(prefix + ".phi.b"));
    out.block_offsets.push_back(off);

    KernelSpec spec;
    spec.kh = cfg.block_kh;
    spec.kw = cfg.block_kw;
    spec.padding = cfg.block_kh / 2;
    spec.in_ch = cb;
    spec.out_ch = cb;
    ad::Graph::Id y;
    if (cfg.variant == Variant::lcdc) {
      y = g.lcdc_conv2d(x, leaf_of(prefix + ".w"), off, spec);
    } else {
      spec.groups = cfg.dc_groups;
      const Tensor& ov = g.value(off);
      // T x h x w x (G*K*2) -> T x h x w x G x K x 2
      const ad::Graph::Id dense = g.push(
          ov.reshaped({ov.dim(0), ov.dim(1), ov.dim(2), cfg.dc_groups, cfg.block_taps(), 2}), {off},
          std::make_unique<ad::ops::FlattenOp>());
      y = g.deformable_conv2d(x, leaf_of(prefix + ".w"), dense, spec);
    }
    y = bn_relu(y, prefix + ".bn", false);
    return g.relu(g.add(x, y));
  }

  ad::Graph::Id classifier_head(ad::Graph::Id pooled) {
    ad::Graph::Id v = g.flatten(pooled);
    v = g.relu(g.linear(v, leaf_of("fc1.w"), leaf_of("fc1.b")));
    v = g.relu(g.linear(v, leaf_of("fc2.w"), leaf_of("fc2.b")));
    out.features = v;
    return g.linear(v, leaf_of("cls.w"), leaf_of("cls.b"));
  }
};

}  // namespace detail

// The fusion module: appearance frames 1..T-1 concatenated with each block's
// motion channels, reduced by 3D conv stages with temporal pooling, averaged
// over the remaining steps, spatially pooled, then two fc layers.
inline ad::Graph::Id fuse(detail::NetBuilder& nb, ad::Graph::Id appearance,
                          const std::vector<ad::Graph::Id>& motions) {
  ad::Graph& g = nb.g;
  std::vector<ad::Graph::Id> parts;
  parts.push_back(g.slice_time_tail(appearance));
  for (ad::Graph::Id m : motions) parts.push_back(m);
  ad::Graph::Id z = g.concat_channels(parts);
  std::size_t fin = nb.cfg.fusion_in_ch();
  for (std::size_t i = 0; i < nb.cfg.fusion.size(); ++i) {
    const FusionStage& f = nb.cfg.fusion[i];
    Conv3dSpec s3;
    s3.spatial.kh = s3.spatial.kw = f.spatial_kernel;
    s3.spatial.stride = f.spatial_stride;
    s3.spatial.padding = f.spatial_kernel / 2;
    s3.spatial.in_ch = fin;
    s3.spatial.out_ch = f.out_ch;
    s3.kt = f.kt;
    s3.tstride = f.tstride;
    z = g.conv3d(z, nb.leaf_of("fusion" + std::to_string(i) + ".w"), s3);
    z = nb.bn_relu(z, "fusion" + std::to_string(i) + ".bn");
    if (f.pool > 1 || f.pool_stride > 1) z = g.temporal_max_pool(z, f.pool, f.pool_stride);
    fin = f.out_ch;
  }
  z = g.temporal_mean(z);
  if (g.value(z).dim(0) >= 2 && g.value(z).dim(1) >= 2) z = g.spatial_max_pool(z, 2, 2);
  return z;
}

// One shared trunk applied to every frame (weight sharing across time), LCDC
// block offsets recorded per frame, fusion over appearance + motion, logits
// from the classifier. frames: T x H x W x C.
inline SnippetForward forward_snippet(ad::Graph& g, const Tensor& frames, const NetParams& params,
                                      const NetConfig& cfg, bool training) {
  validate_config(cfg);
  const std::size_t want_t = cfg.appearance_only ? 1 : cfg.t;
  if (frames.rank() != 4 || frames.dim(0) != want_t || frames.dim(1) != cfg.h ||
      frames.dim(2) != cfg.w || frames.dim(3) != cfg.c)
    throw std::invalid_argument("forward_snippet: frames " + frames.shape_str() +
                                " do not match config (T=" + std::to_string(want_t) + ")");
  SnippetForward out;
  out.param_leaf.assign(params.entries.size(), SnippetForward::npos);
  detail::NetBuilder nb{g, params, cfg, training, out};

  ad::Graph::Id x = g.leaf(frames);
  x = nb.trunk(x);
  for (std::size_t b = 0; b < cfg.lcdc_blocks; ++b) x = nb.block(x, b);
  out.appearance = x;

  ad::Graph::Id pooled;
  if (cfg.appearance_only) {
    pooled = g.temporal_mean(x);
    if (g.value(pooled).dim(0) >= 2 && g.value(pooled).dim(1) >= 2)
      pooled = g.spatial_max_pool(pooled, 2, 2);
  } else {
    std::vector<ad::Graph::Id> motions;
    for (ad::Graph::Id off : out.block_offsets) motions.push_back(g.diff_time(off));
    pooled = fuse(nb, x, motions);
  }
  out.logits = nb.classifier_head(pooled);
  return out;
}

// --- parameter accounting --------------------------------------------------------

struct ParamCount {
  std::size_t total = 0;
  std::size_t deform_related = 0;  // offset-learner kernels and biases only
  double ratio_dense_over_local = 0.0;
};

inline ParamCount param_count(const NetConfig& cfg, Variant variant) {
  NetConfig local = cfg;
  local.variant = variant;
  NetConfig lcdc_cfg = cfg;
  lcdc_cfg.variant = Variant::lcdc;
  NetConfig dc_cfg = cfg;
  dc_cfg.variant = Variant::dc;

  auto count = [](const NetConfig& c) {
    ParamCount pc;
    const NetParams p = init_params(c, 0);
    for (const ParamEntry& e : p.entries) {
      if (!e.trainable) continue;
      pc.total += e.value.numel();
      if (e.name.find(".phi.") != std::string::npos) pc.deform_related += e.value.numel();
    }
    return pc;
  };

  ParamCount pc = count(local);
  const ParamCount pl = count(lcdc_cfg);
  const ParamCount pd = count(dc_cfg);
  pc.ratio_dense_over_local =
      static_cast<double>(pd.deform_related) / static_cast<double>(pl.deform_related);
  return pc;
}

// --- temporal head ---------------------------------------------------------------

// ST-CNN style sequence model: same-padded 1D convolution over time followed
// by a per-step linear classifier.
struct TemporalHeadParams {
  Tensor conv_w;  // hidden x feat_dim x kernel_len
  Tensor cls_w;   // classes x hidden
  Tensor cls_b;   // classes
};

inline TemporalHeadParams init_temporal_head(std::size_t feat_dim, std::size_t hidden,
                                             std::size_t classes, std::size_t kernel_len,
                                             std::uint64_t seed) {
  Xorshift64Star rng(hash_combine(seed, 0x7e4d));
  TemporalHeadParams p;
  p.conv_w = detail::he_uniform(rng, {hidden, feat_dim, kernel_len}, feat_dim * kernel_len);
  p.cls_w = detail::he_uniform(rng, {classes, hidden}, hidden);
  p.cls_b = Tensor({classes});
  return p;
}

// features: T x D; returns per-step logits T x classes.
inline Tensor temporal_head_1d(const Tensor& features, const TemporalHeadParams& p) {
  ad::Graph g;
  const ad::Graph::Id x = g.leaf(features);
  const ad::Graph::Id h = g.conv1d_time(x, g.leaf(p.conv_w));
  const ad::Graph::Id y = g.linear(h, g.leaf(p.cls_w), g.leaf(p.cls_b));
  return g.value(y);
}

// --- checkpoints -------------------------------------------------------------------

inline void save_checkpoint(const std::string& dir, const NetParams& params) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "lcdc-checkpoint/1";
  manifest["tensors"] = nlohmann::json::array();
  for (const ParamEntry& e : params.entries) {
    const std::string file = e.name + ".tsr";
    save_tsr((fs::path(dir) / file).string(), e.value);
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(content_hash(e.value)));
    manifest["tensors"].push_back({{"name", e.name},
                                   {"file", file},
                                   {"shape", e.value.shape()},
                                   {"hash", std::string(hash)},
                                   {"trainable", e.trainable},
                                   {"decay", e.decay}});
  }
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw std::runtime_error("save_checkpoint: cannot write manifest");
  f << manifest.dump(2) << "\n";
}

inline NetParams load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f) throw std::runtime_error("load_checkpoint: missing manifest in " + dir);
  nlohmann::json manifest;
  f >> manifest;
  if (manifest.value("format", "") != "lcdc-checkpoint/1")
    throw std::runtime_error("load_checkpoint: unknown manifest format");
  NetParams p;
  for (const auto& item : manifest.at("tensors")) {
    Tensor t = load_tsr((fs::path(dir) / item.at("file").get<std::string>()).string());
    const std::vector<std::size_t> shape = item.at("shape").get<std::vector<std::size_t>>();
    if (t.shape() != shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for " +
                               item.at("name").get<std::string>());
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(content_hash(t)));
    if (item.at("hash").get<std::string>() != hash)
      throw std::runtime_error("load_checkpoint: content hash mismatch for " +
                               item.at("name").get<std::string>());
    p.add(item.at("name").get<std::string>(), std::move(t), item.value("trainable", true),
          item.value("decay", false));
  }
  return p;
}

// --- JSON config ---------------------------------------------------------------------

inline NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig cfg;
  cfg.t = j.value("t", cfg.t);
  cfg.h = j.value("h", cfg.h);
  cfg.w = j.value("w", cfg.w);
  cfg.c = j.value("c", cfg.c);
  if (j.contains("trunk")) {
    cfg.trunk.clear();
    for (const auto& s : j.at("trunk")) {
      TrunkStage ts;
      ts.out_ch = s.value("out_ch", ts.out_ch);
      ts.kernel = s.value("kernel", ts.kernel);
      ts.stride = s.value("stride", ts.stride);
      cfg.trunk.push_back(ts);
    }
  }
  cfg.lcdc_blocks = j.value("lcdc_blocks", cfg.lcdc_blocks);
  cfg.block_kh = j.value("block_kh", cfg.block_kh);
  cfg.block_kw = j.value("block_kw", cfg.block_kw);
  cfg.variant = parse_variant(j.value("variant", variant_name(cfg.variant)));
  cfg.dc_groups = j.value("dc_groups", cfg.dc_groups);
  if (j.contains("fusion")) {
    cfg.fusion.clear();
    for (const auto& s : j.at("fusion")) {
      FusionStage fs;
      fs.out_ch = s.value("out_ch", fs.out_ch);
      fs.spatial_kernel = s.value("spatial_kernel", fs.spatial_kernel);
      fs.spatial_stride = s.value("spatial_stride", fs.spatial_stride);
      fs.kt = s.value("kt", fs.kt);
      fs.tstride = s.value("tstride", fs.tstride);
      fs.pool = s.value("pool", fs.pool);
      fs.pool_stride = s.value("pool_stride", fs.pool_stride);
      cfg.fusion.push_back(fs);
    }
  }
  cfg.fc1 = j.value("fc1", cfg.fc1);
  cfg.fc2 = j.value("fc2", cfg.fc2);
  cfg.classes = j.value("classes", cfg.classes);
  cfg.appearance_only = j.value("appearance_only", cfg.appearance_only);
  return cfg;
}

inline nlohmann::json net_config_to_json(const NetConfig& cfg) {
  nlohmann::json j;
  j["t"] = cfg.t;
  j["h"] = cfg.h;
  j["w"] = cfg.w;
  j["c"] = cfg.c;
  j["trunk"] = nlohmann::json::array();
  for (const TrunkStage& s : cfg.trunk)
    j["trunk"].push_back({{"out_ch", s.out_ch}, {"kernel", s.kernel}, {"stride", s.stride}});
  j["lcdc_blocks"] = cfg.lcdc_blocks;
  j["block_kh"] = cfg.block_kh;
  j["block_kw"] = cfg.block_kw;
  j["variant"] = variant_name(cfg.variant);
  j["dc_groups"] = cfg.dc_groups;
  j["fusion"] = nlohmann::json::array();
  for (const FusionStage& s : cfg.fusion)
    j["fusion"].push_back({{"out_ch", s.out_ch},
                           {"spatial_kernel", s.spatial_kernel},
                           {"spatial_stride", s.spatial_stride},
                           {"kt", s.kt},
                           {"tstride", s.tstride},
                           {"pool", s.pool},
                           {"pool_stride", s.pool_stride}});
  j["fc1"] = cfg.fc1;
  j["fc2"] = cfg.fc2;
  j["classes"] = cfg.classes;
  j["appearance_only"] = cfg.appearance_only;
  return j;
}

}  // namespace lcdc
