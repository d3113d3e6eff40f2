#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "refalign/errors.hpp"
#include "refalign/mask.hpp"

namespace refalign::metrics {

inline constexpr std::array<double, 5> kPrecisionThresholds{0.3, 0.4, 0.5, 0.6, 0.7};

// Intersection-over-union of two masks on the same canvas. Two empty
// masks score 0 by convention.
inline double mask_iou(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("mask_iou: masks cover different canvases");
  }
  validate_mask(a, "first mask");
  validate_mask(b, "second mask");
  // Walk both run-length streams in lockstep; no pixel buffers needed.
  std::int64_t inter = 0;
  std::int64_t uni = 0;
  std::size_t ia = 0, ib = 0;
  std::int64_t ra = ia < a.counts.size() ? a.counts[ia] : 0;
  std::int64_t rb = ib < b.counts.size() ? b.counts[ib] : 0;
  const std::int64_t total = static_cast<std::int64_t>(a.height) * a.width;
  std::int64_t consumed = 0;
  while (consumed < total) {
    while (ra == 0 && ia + 1 < a.counts.size()) ra = a.counts[++ia];
    while (rb == 0 && ib + 1 < b.counts.size()) rb = b.counts[++ib];
    const bool fa = (ia % 2) == 1;  // odd runs are foreground
    const bool fb = (ib % 2) == 1;
    const std::int64_t step = std::min(ra, rb);
    if (fa && fb) inter += step;
    if (fa || fb) uni += step;
    ra -= step;
    rb -= step;
    consumed += step;
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct PredictionRecord {
  std::string query_id;
  Mask mask;
  int predicted_id = -1;  // optional candidate index, -1 when unknown
};

struct GroundTruthRecord {
  std::string query_id;
  Mask mask;
};

struct EvalResult {
  std::string query_id;
  int predicted_id = -1;
  double iou = 0.0;
};

// Joins predictions to ground truth by query id (every prediction must
// have a reference), ordered by query id.
inline std::vector<EvalResult> evaluate(const std::vector<PredictionRecord>& preds,
                                        const std::vector<GroundTruthRecord>& gts) {
  std::map<std::string, const GroundTruthRecord*> by_id;
  for (const auto& gt : gts) {
    if (!by_id.emplace(gt.query_id, &gt).second) {
      throw DataError("ground truth: duplicate query_id " + gt.query_id);
    }
  }
  std::map<std::string, EvalResult> joined;
  for (const auto& p : preds) {
    const auto it = by_id.find(p.query_id);
    if (it == by_id.end()) {
      throw DataError("predictions: no ground truth for query_id " + p.query_id);
    }
    EvalResult r;
    r.query_id = p.query_id;
    r.predicted_id = p.predicted_id;
    r.iou = mask_iou(p.mask, it->second->mask);
    if (!joined.emplace(p.query_id, std::move(r)).second) {
      throw DataError("predictions: duplicate query_id " + p.query_id);
    }
  }
  std::vector<EvalResult> out;
  out.reserve(joined.size());
  for (auto& [_, r] : joined) out.push_back(std::move(r));
  return out;
}

struct Report {
  double miou = 0.0;                      // mean of per-query IoU
  std::array<double, 5> precision{};      // P@{0.3,...,0.7}, strict >
  std::size_t count = 0;
};

inline Report report(const std::vector<EvalResult>& results) {
  if (results.empty()) throw std::invalid_argument("report: empty result list");
  Report rep;
  rep.count = results.size();
  double sum = 0.0;
  std::array<std::size_t, 5> hits{};
  for (const auto& r : results) {
    sum += r.iou;
    for (std::size_t t = 0; t < kPrecisionThresholds.size(); ++t) {
      if (r.iou > kPrecisionThresholds[t]) ++hits[t];
    }
  }
  rep.miou = sum / static_cast<double>(results.size());
  for (std::size_t t = 0; t < hits.size(); ++t) {
    rep.precision[t] = static_cast<double>(hits[t]) / static_cast<double>(results.size());
  }
  return rep;
}

// Corpus-level variant: sum of intersections over sum of unions.
inline double global_iou(const std::vector<PredictionRecord>& preds,
                         const std::vector<GroundTruthRecord>& gts) {
  std::map<std::string, const GroundTruthRecord*> by_id;
  for (const auto& gt : gts) {
    if (!by_id.emplace(gt.query_id, &gt).second) {
      throw DataError("ground truth: duplicate query_id " + gt.query_id);
    }
  }
  std::int64_t inter_sum = 0;
  std::int64_t union_sum = 0;
  std::map<std::string, bool> seen;
  for (const auto& p : preds) {
    const auto it = by_id.find(p.query_id);
    if (it == by_id.end()) {
      throw DataError("predictions: no ground truth for query_id " + p.query_id);
    }
    if (!seen.emplace(p.query_id, true).second) {
      throw DataError("predictions: duplicate query_id " + p.query_id);
    }
    const Bitmap a = mask_decode(p.mask);
    const Bitmap b = mask_decode(it->second->mask);
    if (a.height != b.height || a.width != b.width) {
      throw DataError("predictions: mask dimensions disagree with ground truth for " + p.query_id);
    }
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      inter_sum += (a.data[i] && b.data[i]) ? 1 : 0;
      union_sum += (a.data[i] || b.data[i]) ? 1 : 0;
    }
  }
  if (union_sum == 0) return 0.0;
  return static_cast<double>(inter_sum) / static_cast<double>(union_sum);
}

// Fixed-width human-readable table, one metric per row.
inline std::string format_report(const Report& rep) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(10) << "queries" << rep.count << '\n';
  os << std::left << std::setw(10) << "mIoU" << rep.miou << '\n';
  for (std::size_t t = 0; t < kPrecisionThresholds.size(); ++t) {
    std::ostringstream label;
    label << "P@" << std::setprecision(1) << std::fixed << kPrecisionThresholds[t];
    os << std::left << std::setw(10) << label.str() << std::setprecision(4) << rep.precision[t]
       << '\n';
  }
  return os.str();
}

}  // namespace refalign::metrics
