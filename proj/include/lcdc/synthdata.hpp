#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcdc/rng.hpp"
#include "lcdc/tensor.hpp"

namespace lcdc {

// Motion classes share appearance by construction: the class only selects the
// per-frame displacement (or rotation) applied from frame 1 onward.
enum class MotionClass { up, down, left, right, cw, ccw };

inline MotionClass parse_motion_class(const std::string& s) {
  if (s == "up") return MotionClass::up;
  if (s == "down") return MotionClass::down;
  if (s == "left") return MotionClass::left;
  if (s == "right") return MotionClass::right;
  if (s == "cw") return MotionClass::cw;
  if (s == "ccw") return MotionClass::ccw;
  throw std::invalid_argument("invalid class: " + s);
}

inline const char* motion_class_name(MotionClass c) {
  switch (c) {
    case MotionClass::up: return "up";
    case MotionClass::down: return "down";
    case MotionClass::left: return "left";
    case MotionClass::right: return "right";
    case MotionClass::cw: return "cw";
    case MotionClass::ccw: return "ccw";
  }
  return "?";
}

struct SnippetCfg {
  std::size_t t = 16;
  std::size_t h = 32;
  std::size_t w = 32;
  double texture_scale = 8.0;  // noise lattice cell size in pixels
  double speed = 1.0;          // displacement per frame, pixels
};

struct SnippetSample {
  Tensor frames;  // T x H x W x 1, values in [0,1]
  int label = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Smooth value noise: random lattice values, bilinearly interpolated. Only
// +,-,*,/ on IEEE doubles, so frames are bit-identical across platforms.
class ValueNoise {
 public:
  ValueNoise(Xorshift64Star& rng, std::size_t gh, std::size_t gw, double lo, double hi)
      : gh_(gh), gw_(gw), vals_((gh + 1) * (gw + 1)) {
    for (double& v : vals_) v = rng.uniform(lo, hi);
  }

  // u,v in lattice units, clamped to the lattice border.
  double eval(double u, double v) const {
    u = std::min(std::max(u, 0.0), static_cast<double>(gh_));
    v = std::min(std::max(v, 0.0), static_cast<double>(gw_));
    const double fu = std::floor(std::min(u, static_cast<double>(gh_) - 1e-9));
    const double fv = std::floor(std::min(v, static_cast<double>(gw_) - 1e-9));
    const std::size_t r = static_cast<std::size_t>(fu), c = static_cast<std::size_t>(fv);
    const double au = u - fu, av = v - fv;
    const double v00 = vals_[r * (gw_ + 1) + c];
    const double v01 = vals_[r * (gw_ + 1) + c + 1];
    const double v10 = vals_[(r + 1) * (gw_ + 1) + c];
    const double v11 = vals_[(r + 1) * (gw_ + 1) + c + 1];
    return (1.0 - au) * ((1.0 - av) * v00 + av * v01) + au * ((1.0 - av) * v10 + av * v11);
  }

 private:
  std::size_t gh_, gw_;
  std::vector<double> vals_;
};

// Signed wrap of a coordinate delta onto (-extent/2, extent/2].
inline double torus_delta(double d, double extent) {
  while (d > extent / 2.0) d -= extent;
  while (d <= -extent / 2.0) d += extent;
  return d;
}

}  // namespace detail

// A textured blob translating (or rotating) over a static textured background
// on a torus. Frame 0 is independent of the class; speeds below the texture
// scale keep the motion unambiguous.
inline SnippetSample generate_snippet(MotionClass cls, std::uint64_t seed, const SnippetCfg& cfg) {
  if (!(cfg.speed < cfg.texture_scale))
    throw std::invalid_argument("generate_snippet: speed must be below texture scale");
  if (cfg.t == 0 || cfg.h == 0 || cfg.w == 0)
    throw std::invalid_argument("generate_snippet: empty extents");

  Xorshift64Star rng(seed);
  const double ts = cfg.texture_scale;
  const std::size_t bg_gh = static_cast<std::size_t>(std::ceil(cfg.h / ts)) + 1;
  const std::size_t bg_gw = static_cast<std::size_t>(std::ceil(cfg.w / ts)) + 1;
  // Background dim, blob bright: a >0.5 threshold isolates the blob, which the
  // centroid tests use as an independent oracle.
  detail::ValueNoise bg(rng, bg_gh, bg_gw, 0.05, 0.40);

  const double radius = static_cast<double>(std::min(cfg.h, cfg.w)) / 4.0;
  const std::size_t blob_cells = static_cast<std::size_t>(std::ceil(3.0 * radius / ts)) + 2;
  detail::ValueNoise blob(rng, blob_cells, blob_cells, 0.60, 0.95);

  const double start_r = rng.uniform(0.0, static_cast<double>(cfg.h));
  const double start_c = rng.uniform(0.0, static_cast<double>(cfg.w));

  double vel_r = 0.0, vel_c = 0.0;
  // Per-frame rotation with an exact-double rotation pair (7-24-25 triangle).
  double rot_c = 1.0, rot_s = 0.0;
  const double step_c = 0.96;
  double step_s = 0.0;
  switch (cls) {
    case MotionClass::up: vel_r = -cfg.speed; break;
    case MotionClass::down: vel_r = cfg.speed; break;
    case MotionClass::left: vel_c = -cfg.speed; break;
    case MotionClass::right: vel_c = cfg.speed; break;
    case MotionClass::cw: step_s = 0.28; break;
    case MotionClass::ccw: step_s = -0.28; break;
  }

  const double edge = 1.5;  // soft rim width in pixels
  Tensor frames({cfg.t, cfg.h, cfg.w, 1});
  for (std::size_t t = 0; t < cfg.t; ++t) {
    const double pos_r = start_r + static_cast<double>(t) * vel_r;
    const double pos_c = start_c + static_cast<double>(t) * vel_c;
    for (std::size_t r = 0; r < cfg.h; ++r) {
      for (std::size_t c = 0; c < cfg.w; ++c) {
        const double dr = detail::torus_delta(static_cast<double>(r) - pos_r, static_cast<double>(cfg.h));
        const double dc = detail::torus_delta(static_cast<double>(c) - pos_c, static_cast<double>(cfg.w));
        const double dist = std::sqrt(dr * dr + dc * dc);
        double v = bg.eval(r / ts, c / ts);
        if (dist < radius + edge) {
          // Blob-local texture coordinates rotate with the blob.
          const double lr = rot_c * dr + rot_s * dc;
          const double lc = -rot_s * dr + rot_c * dc;
          const double tex = blob.eval((lr + 1.5 * radius) / ts, (lc + 1.5 * radius) / ts);
          const double alpha = std::min(1.0, std::max(0.0, (radius + edge - dist) / edge));
          v = (1.0 - alpha) * v + alpha * tex;
        }
        frames.at(t, r, c, std::size_t{0}) = v;
      }
    }
    const double nc = rot_c * step_c - rot_s * step_s;
    const double ns = rot_s * step_c + rot_c * step_s;
    rot_c = nc;
    rot_s = ns;
  }
  return SnippetSample{std::move(frames), static_cast<int>(cls), seed};
}

struct SequenceCfg {
  std::size_t num_segments = 8;
  std::size_t len_lo = 8;
  std::size_t len_hi = 24;
  std::vector<MotionClass> classes = {MotionClass::up, MotionClass::down, MotionClass::left,
                                      MotionClass::right};
  SnippetCfg snippet;  // t is overridden per segment
};

struct SequenceSegment {
  int cls = 0;
  std::size_t start = 0;
  std::size_t end = 0;
};

struct SequenceSample {
  Tensor frames;  // total_T x H x W x 1
  std::vector<int> frame_labels;
  std::vector<SequenceSegment> segments;
};

// Concatenated snippets with consecutive segments of distinct classes.
inline SequenceSample generate_sequence(std::uint64_t seed, const SequenceCfg& cfg) {
  if (cfg.classes.size() < 2)
    throw std::invalid_argument("generate_sequence: need at least 2 classes for distinct runs");
  if (cfg.num_segments == 0 || cfg.len_lo == 0 || cfg.len_hi < cfg.len_lo)
    throw std::invalid_argument("generate_sequence: bad segment configuration");
  Xorshift64Star rng(hash_combine(seed, 0x5e9u));

  std::vector<MotionClass> picks;
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  std::size_t prev_idx = cfg.classes.size();  // sentinel: nothing to avoid yet
  for (std::size_t s = 0; s < cfg.num_segments; ++s) {
    std::size_t idx;
    if (prev_idx >= cfg.classes.size()) {
      idx = rng.below(cfg.classes.size());
    } else {
      idx = rng.below(cfg.classes.size() - 1);
      if (idx >= prev_idx) ++idx;  // skip the previous class
    }
    prev_idx = idx;
    picks.push_back(cfg.classes[idx]);
    const std::size_t len = cfg.len_lo + rng.below(cfg.len_hi - cfg.len_lo + 1);
    lens.push_back(len);
    total += len;
  }

  SequenceSample out;
  out.frames = Tensor({total, cfg.snippet.h, cfg.snippet.w, 1});
  out.frame_labels.reserve(total);
  std::size_t cursor = 0;
  const std::size_t frame_elems = cfg.snippet.h * cfg.snippet.w;
  for (std::size_t s = 0; s < cfg.num_segments; ++s) {
    SnippetCfg sc = cfg.snippet;
    sc.t = lens[s];
    const SnippetSample snip = generate_snippet(picks[s], hash_combine(seed, s + 1), sc);
    std::copy(snip.frames.data(), snip.frames.data() + snip.frames.numel(),
              out.frames.data() + cursor * frame_elems);
    out.segments.push_back({snip.label, cursor, cursor + lens[s]});
    for (std::size_t i = 0; i < lens[s]; ++i) out.frame_labels.push_back(snip.label);
    cursor += lens[s];
  }
  return out;
}

}  // namespace lcdc
