#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcdc {

struct Segment {
  int cls = 0;
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  std::size_t len() const { return end - start; }
};

// Per-frame labels plus the derived maximal runs.
class SegmentLabeling {
 public:
  explicit SegmentLabeling(std::vector<int> frame_labels) : frames_(std::move(frame_labels)) {
    std::size_t start = 0;
    for (std::size_t i = 1; i <= frames_.size(); ++i) {
      if (i == frames_.size() || frames_[i] != frames_[start]) {
        segments_.push_back({frames_[start], start, i});
        start = i;
      }
    }
  }

  const std::vector<int>& frames() const { return frames_; }
  const std::vector<Segment>& segments() const { return segments_; }

  std::vector<Segment> segments_without(std::optional<int> background) const {
    if (!background) return segments_;
    std::vector<Segment> out;
    for (const Segment& s : segments_)
      if (s.cls != *background) out.push_back(s);
    return out;
  }

 private:
  std::vector<int> frames_;
  std::vector<Segment> segments_;
};

// Percentage of frames whose labels agree. Background frames count like any
// other frame.
inline double frame_accuracy(const SegmentLabeling& pred, const SegmentLabeling& gt) {
  if (pred.frames().size() != gt.frames().size())
    throw std::invalid_argument("frame_accuracy: length mismatch, " +
                                std::to_string(pred.frames().size()) + " vs " +
                                std::to_string(gt.frames().size()));
  if (pred.frames().empty()) throw std::invalid_argument("frame_accuracy: empty labelings");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.frames().size(); ++i)
    if (pred.frames()[i] == gt.frames()[i]) ++hit;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.frames().size());
}

namespace detail {

inline std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline std::vector<int> class_string(const std::vector<Segment>& segs) {
  std::vector<int> out;
  out.reserve(segs.size());
  for (const Segment& s : segs) out.push_back(s.cls);
  return out;
}

inline double interval_iou(const Segment& a, const Segment& b) {
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  const double inter = hi > lo ? static_cast<double>(hi - lo) : 0.0;
  const double uni = static_cast<double>(a.len() + b.len()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace detail

// Segmental edit score: 100*(1 - dist/max(|pred|,|gt|)) over segment class
// sequences, clamped at 0. Two empty labelings score 100.
inline double edit_score(const SegmentLabeling& pred, const SegmentLabeling& gt,
                         std::optional<int> background = std::nullopt) {
  const std::vector<int> a = detail::class_string(pred.segments_without(background));
  const std::vector<int> b = detail::class_string(gt.segments_without(background));
  const std::size_t denom = std::max(a.size(), b.size());
  if (denom == 0) return 100.0;
  const double score =
      100.0 * (1.0 - static_cast<double>(detail::levenshtein(a, b)) / static_cast<double>(denom));
  return std::max(0.0, score);
}

// Segmental F1 with IoU threshold k percent. Predicted segments are matched
// greedily in temporal order against the best same-class, not-yet-consumed
// ground-truth segment.
inline double f1_at_k(const SegmentLabeling& pred, const SegmentLabeling& gt, double k,
                      std::optional<int> background = std::nullopt) {
  if (!(k > 0.0 && k <= 100.0)) throw std::invalid_argument("f1_at_k: k must be in (0,100]");
  const std::vector<Segment> ps = pred.segments_without(background);
  const std::vector<Segment> gs = gt.segments_without(background);
  std::vector<bool> used(gs.size(), false);
  std::size_t tp = 0, fp = 0;
  for (const Segment& p : ps) {
    double best = -1.0;
    std::size_t best_j = gs.size();
    for (std::size_t j = 0; j < gs.size(); ++j) {
      if (used[j] || gs[j].cls != p.cls) continue;
      const double iou = detail::interval_iou(p, gs[j]);
      if (iou > best) {
        best = iou;
        best_j = j;
      }
    }
    if (best_j < gs.size() && best >= k / 100.0) {
      used[best_j] = true;
      ++tp;
    } else {
      ++fp;
    }
  }
  std::size_t fn = 0;
  for (bool u : used)
    if (!u) ++fn;
  const double precision_den = static_cast<double>(tp + fp);
  const double recall_den = static_cast<double>(tp + fn);
  if (precision_den == 0.0 && recall_den == 0.0) return 100.0;  // nothing to detect, nothing claimed
  const double p = precision_den > 0.0 ? static_cast<double>(tp) / precision_den : 0.0;
  const double r = recall_den > 0.0 ? static_cast<double>(tp) / recall_den : 0.0;
  if (p + r == 0.0) return 0.0;
  return 100.0 * 2.0 * p * r / (p + r);
}

}  // namespace lcdc
