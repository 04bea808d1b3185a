#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "andi/error.hpp"
#include "andi/grid.hpp"

namespace andi {

struct ScoreRange {
  float min = 0.0f;
  float max = 0.0f;
};

inline ScoreRange score_range(std::span<const ScalarVolume> volumes) {
  ScoreRange r{std::numeric_limits<float>::infinity(), -std::numeric_limits<float>::infinity()};
  for (const auto& v : volumes)
    for (float x : v.data) {
      r.min = std::min(r.min, x);
      r.max = std::max(r.max, x);
    }
  return r;
}

// Min-max scaling of every volume by the range of the whole set.
inline std::vector<ScalarVolume> normalize_scores(std::span<const ScalarVolume> volumes, ScoreRange* record = nullptr) {
  if (volumes.empty()) throw InvalidArgument("normalize_scores: empty input");
  const ScoreRange r = score_range(volumes);
  if (!(r.max > r.min)) throw DegenerateInput("normalize_scores: scores are constant");
  if (record) *record = r;
  const double span = static_cast<double>(r.max) - r.min;
  std::vector<ScalarVolume> out(volumes.begin(), volumes.end());
  for (auto& v : out)
    for (auto& x : v.data) x = static_cast<float>((static_cast<double>(x) - r.min) / span);
  return out;
}

inline std::vector<float> normalize_scores(std::span<const float> values, ScoreRange* record = nullptr) {
  if (values.empty()) throw InvalidArgument("normalize_scores: empty input");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  if (!(*mx > *mn)) throw DegenerateInput("normalize_scores: scores are constant");
  if (record) *record = {*mn, *mx};
  const double span = static_cast<double>(*mx) - *mn;
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>((static_cast<double>(values[i]) - *mn) / span);
  return out;
}

struct PrPoint {
  float threshold;  // predicted positive: score >= threshold
  double precision;
  double recall;
};

namespace detail {

// Descending score order with equal scores adjacent.
inline std::vector<std::uint32_t> descending_order(std::span<const float> scores) {
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  return order;
}

}  // namespace detail

// One point per distinct score, ties entering together.
inline std::vector<PrPoint> pr_curve(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("pr_curve: scores and labels differ in length");
  std::uint64_t positives = 0;
  for (auto l : labels) positives += l ? 1 : 0;
  if (positives == 0) throw InvalidArgument("pr_curve: no positive labels");
  const auto order = detail::descending_order(scores);
  std::vector<PrPoint> curve;
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const float s = scores[order[i]];
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == s; ++j) (labels[order[j]] ? tp : fp) += 1;
    curve.push_back({s, static_cast<double>(tp) / static_cast<double>(tp + fp),
                     static_cast<double>(tp) / static_cast<double>(positives)});
    i = j;
  }
  return curve;
}

// Average precision: sum over descending distinct-score cuts of precision
// times the recall increment.
inline float auprc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  const auto curve = pr_curve(scores, labels);
  if (curve.back().precision == 1.0 && curve.back().recall == 1.0) return 1.0f;  // no negatives at all
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& p : curve) {
    ap += p.precision * (p.recall - prev_recall);
    prev_recall = p.recall;
  }
  return static_cast<float>(ap);
}

// Mean of per-subject AUPRC; subjects without positive voxels are skipped.
inline float auprc_per_subject(std::span<const ScalarVolume> scores, std::span<const SegMask> gts) {
  if (scores.empty() || scores.size() != gts.size()) throw InvalidArgument("auprc_per_subject: need one ground truth per subject");
  double sum = 0.0;
  int used = 0;
  for (std::size_t s = 0; s < scores.size(); ++s) {
    if (!scores[s].same_shape(gts[s])) throw InvalidArgument("auprc_per_subject: shape mismatch");
    if (std::none_of(gts[s].data.begin(), gts[s].data.end(), [](std::uint8_t v) { return v != 0; })) continue;
    sum += auprc(scores[s].data, gts[s].data);
    ++used;
  }
  if (used == 0) throw InvalidArgument("auprc_per_subject: no subject has positive voxels");
  return static_cast<float>(sum / used);
}

inline float dice(const SegMask& pred, const SegMask& gt) {
  if (!pred.same_shape(gt)) throw InvalidArgument("dice: shape mismatch");
  std::uint64_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    inter += (p && g) ? 1 : 0;
    np += p ? 1 : 0;
    ng += g ? 1 : 0;
  }
  if (np + ng == 0) return 1.0f;
  return static_cast<float>(2.0 * static_cast<double>(inter) / static_cast<double>(np + ng));
}

struct CeilDice {
  float dice = 0.0f;
  float threshold = 0.0f;
};

// Mean-over-subjects Dice of (score > threshold), from one sorted score list
// per subject.
class ThresholdSweep {
 public:
  ThresholdSweep(std::span<const ScalarVolume> scores, std::span<const SegMask> gts) {
    if (scores.empty() || scores.size() != gts.size()) throw InvalidArgument("ceil_dice: need one ground truth per subject");
    for (std::size_t s = 0; s < scores.size(); ++s) {
      if (!scores[s].same_shape(gts[s])) throw InvalidArgument("ceil_dice: score/ground-truth shape mismatch");
      Subject sub;
      sub.all = scores[s].data;
      for (std::size_t i = 0; i < gts[s].size(); ++i)
        if (gts[s].data[i]) sub.positive.push_back(scores[s].data[i]);
      std::sort(sub.all.begin(), sub.all.end());
      std::sort(sub.positive.begin(), sub.positive.end());
      subjects_.push_back(std::move(sub));
    }
  }

  double mean_dice(float threshold) const {
    double sum = 0.0;
    for (const auto& s : subjects_) {
      const auto above = [threshold](const std::vector<float>& v) {
        return static_cast<double>(v.end() - std::upper_bound(v.begin(), v.end(), threshold));
      };
      const double np = above(s.all), inter = above(s.positive), ng = static_cast<double>(s.positive.size());
      sum += (np + ng) == 0.0 ? 1.0 : 2.0 * inter / (np + ng);
    }
    return sum / static_cast<double>(subjects_.size());
  }

 private:
  struct Subject {
    std::vector<float> all;
    std::vector<float> positive;
  };
  std::vector<Subject> subjects_;
};

// Best single dataset-wide threshold among n uniform candidates k / (n + 1)
// plus `extra` (e.g. the per-subject Yen thresholds in the same score space).
// Ties keep the lowest threshold.
inline CeilDice ceil_dice(std::span<const ScalarVolume> scores, std::span<const SegMask> gts, int n_candidates = 200,
                          std::span<const float> extra = {}) {
  detail::require(n_candidates >= 0, "ceil_dice: negative candidate count");
  ThresholdSweep sweep(scores, gts);
  std::vector<float> candidates;
  for (int k = 1; k <= n_candidates; ++k) candidates.push_back(static_cast<float>(static_cast<double>(k) / (n_candidates + 1)));
  candidates.insert(candidates.end(), extra.begin(), extra.end());
  if (candidates.empty()) throw InvalidArgument("ceil_dice: no candidate thresholds");
  std::sort(candidates.begin(), candidates.end());
  CeilDice best{-1.0f, 0.0f};
  double best_val = -1.0;
  for (float c : candidates) {
    const double d = sweep.mean_dice(c);
    if (d > best_val) {
      best_val = d;
      best = {static_cast<float>(d), c};
    }
  }
  return best;
}

// Mean over subjects of the Dice of the given (already thresholded and
// dilated) masks.
inline float dice_yen(std::span<const SegMask> masks, std::span<const SegMask> gts) {
  if (masks.empty() || masks.size() != gts.size()) throw InvalidArgument("dice_yen: need one ground truth per mask");
  double sum = 0.0;
  for (std::size_t i = 0; i < masks.size(); ++i) sum += dice(masks[i], gts[i]);
  return static_cast<float>(sum / static_cast<double>(masks.size()));
}

}  // namespace andi
