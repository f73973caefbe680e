#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtd/core/error.hpp"
#include "rtd/core/rng.hpp"
#include "rtd/data/labels.hpp"
#include "rtd/data/patch.hpp"
#include "rtd/inference.hpp"
#include "rtd/models/detector.hpp"

namespace rtd {

struct CurvePoint {
  double threshold = 0.0;
  double detection_rate = 0.0;
  double ndpi = 0.0;
  double fpr = 0.0;
};

// Points are ordered by decreasing threshold, so detection rate, NDPI and
// false-positive rate are non-decreasing along the list.
struct EvalCurve {
  std::vector<CurvePoint> points;
  double auc = std::numeric_limits<double>::quiet_NaN();
  std::map<double, double> ndpi_at;
};

inline constexpr double kDetectionRateTargets[] = {0.25, 0.5, 0.75};

// Classic ROC over labeled examples. Thresholds are the distinct scores; a
// point at threshold t counts scores >= t as detections. NDPI is the raw
// detection count. AUC is the trapezoid under (fpr, tpr) from (0, 0).
inline EvalCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  std::size_t npos = 0, nneg = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw LabelError("binary label must be 0 or 1");
    (l ? npos : nneg)++;
  }
  if (npos == 0 || nneg == 0) throw UndefinedMetricError("ROC needs both positive and negative examples");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  EvalCurve curve;
  std::size_t tp = 0, fp = 0;
  double auc = 0.0, prev_tpr = 0.0, prev_fpr = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == t; ++i) (labels[order[i]] ? tp : fp)++;
    CurvePoint p{t, static_cast<double>(tp) / npos, static_cast<double>(tp + fp), static_cast<double>(fp) / nneg};
    auc += (p.fpr - prev_fpr) * (p.detection_rate + prev_tpr) / 2.0;
    prev_tpr = p.detection_rate;
    prev_fpr = p.fpr;
    curve.points.push_back(p);
  }
  curve.auc = auc;
  return curve;
}

// NDPI at which the curve first reaches detection rate r, interpolating
// linearly from the preceding point (the curve starts at (0, 0)).
inline double ndpi_at_detection_rate(const EvalCurve& curve, double r) {
  double prev_dr = 0.0, prev_ndpi = 0.0;
  for (const auto& p : curve.points) {
    if (p.detection_rate >= r) {
      if (p.detection_rate == prev_dr) return p.ndpi;
      return prev_ndpi + (r - prev_dr) / (p.detection_rate - prev_dr) * (p.ndpi - prev_ndpi);
    }
    prev_dr = p.detection_rate;
    prev_ndpi = p.ndpi;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

// Detection rate over the labeled positive pixels against NDPI over every
// scored pixel of every test map. Thresholds: each distinct positive score
// plus the global minimum score, so the last point detects everything. FPR
// is measured on the maps of the label set's negative rasters (NaN if none).
// AUC is the classic ROC AUC of labeled positives against every scored pixel
// of the negative rasters.
inline EvalCurve roc_variation_curve(const std::vector<ScoreMap>& maps, const LabelSet& labels) {
  if (maps.empty()) throw UndefinedMetricError("no test score maps");
  std::vector<double> pos, all, neg;
  for (const auto& m : maps) {
    for (int r = 0; r < m.height(); ++r)
      for (int c = 0; c < m.width(); ++c)
        if (m.scored(r, c)) {
          all.push_back(m.at(r, c));
          if (labels.is_negative_raster(m.raster_id)) neg.push_back(m.at(r, c));
        }
    if (auto it = labels.positives.find(m.raster_id); it != labels.positives.end())
      for (const auto& p : it->second)
        if (m.scores.rank() == 3 && p.row < m.height() && p.col < m.width() && m.scored(p.row, p.col))
          pos.push_back(m.at(p.row, p.col));
  }
  if (pos.empty()) throw UndefinedMetricError("no scored positive labels among the test maps");
  if (all.empty()) throw UndefinedMetricError("no scored pixels");
  std::sort(all.begin(), all.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> thresholds = pos;
  thresholds.push_back(all.front());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::vector<double> spos = pos;
  std::sort(spos.begin(), spos.end());
  auto count_ge = [](const std::vector<double>& sorted, double t) {
    return static_cast<double>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
  };
  EvalCurve curve;
  for (double t : thresholds) {
    CurvePoint p;
    p.threshold = t;
    p.detection_rate = count_ge(spos, t) / static_cast<double>(spos.size());
    p.ndpi = count_ge(all, t) / static_cast<double>(maps.size());
    p.fpr = neg.empty() ? std::numeric_limits<double>::quiet_NaN() : count_ge(neg, t) / static_cast<double>(neg.size());
    curve.points.push_back(p);
  }
  for (double r : kDetectionRateTargets) curve.ndpi_at[r] = ndpi_at_detection_rate(curve, r);
  if (!neg.empty()) {
    std::vector<double> s = pos;
    s.insert(s.end(), neg.begin(), neg.end());
    std::vector<int> l(pos.size(), 1);
    l.resize(s.size(), 0);
    curve.auc = roc_curve(s, l).auc;
  }
  return curve;
}

struct AccuracySummary {
  double mean = 0.0;    // percent
  double stddev = 0.0;  // sample std over splits, percent
  std::vector<double> per_split;
};

inline double overall_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) throw ShapeError("predictions and labels differ in length");
  if (labels.empty()) throw UndefinedMetricError("empty test set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline AccuracySummary hsi_accuracy(const std::vector<std::pair<std::vector<int>, std::vector<int>>>& splits) {
  if (splits.empty()) throw UndefinedMetricError("no evaluation splits");
  AccuracySummary s;
  for (const auto& [pred, lab] : splits) s.per_split.push_back(overall_accuracy(pred, lab));
  const double n = static_cast<double>(s.per_split.size());
  s.mean = std::accumulate(s.per_split.begin(), s.per_split.end(), 0.0) / n;
  if (s.per_split.size() > 1) {
    double ss = 0.0;
    for (double a : s.per_split) ss += (a - s.mean) * (a - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

// ---------------------------------------------------------------- features

enum class FeatureGroup { positive, real_negative, generated_negative };

inline const char* group_name(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::positive: return "positive";
    case FeatureGroup::real_negative: return "real_negative";
    case FeatureGroup::generated_negative: return "generated_negative";
  }
  return "?";
}

struct FeatureRow {
  FeatureGroup group;
  std::vector<float> values;
};

// Layer-8 activations (post-ReLU, no dropout) of each patch (N x C x 25 x 25).
inline std::vector<FeatureRow> export_features(const ModelParams<float>& params, const DetectorSpec& spec,
                                               const Tensor<float>& patches, FeatureGroup group, int chunk = 128) {
  std::vector<FeatureRow> rows;
  const int n = patches.empty() ? 0 : patches.dim(0);
  const std::size_t len = n ? patches.size() / n : 0;
  for (int s0 = 0; s0 < n; s0 += chunk) {
    const int m = std::min(chunk, n - s0);
    Tensor<float> sub({m, patches.dim(1), kPatchSize, kPatchSize},
                      std::vector<float>(patches.data() + s0 * len, patches.data() + (s0 + m) * len));
    const auto f = detector_features(params, spec, sub);
    for (int i = 0; i < m; ++i) rows.push_back({group, std::vector<float>(f.col(i).data(), f.col(i).data() + f.rows())});
  }
  return rows;
}

// ---------------------------------------------------------------- writers

inline void write_curve(const EvalCurve& curve, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "threshold\tdetection_rate\tndpi\tfpr\n" << std::setprecision(10);
  for (const auto& p : curve.points)
    out << p.threshold << '\t' << p.detection_rate << '\t' << p.ndpi << '\t' << p.fpr << '\n';
}

inline nlohmann::json curve_summary(const EvalCurve& curve) {
  nlohmann::json j;
  j["auc"] = std::isnan(curve.auc) ? nlohmann::json(nullptr) : nlohmann::json(curve.auc);
  for (const auto& [r, v] : curve.ndpi_at) {
    std::ostringstream key;
    key << "ndpi@dr=" << r;
    j[key.str()] = std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
  }
  j["points"] = curve.points.size();
  return j;
}

inline void write_features(const std::vector<FeatureRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(8);
  out << "group";
  if (!rows.empty())
    for (std::size_t i = 0; i < rows.front().values.size(); ++i) out << "\tf" << i;
  out << '\n';
  for (const auto& r : rows) {
    out << group_name(r.group);
    for (float v : r.values) out << '\t' << v;
    out << '\n';
  }
}

}  // namespace rtd
