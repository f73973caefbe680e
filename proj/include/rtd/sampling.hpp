#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtd/core/error.hpp"
#include "rtd/core/rng.hpp"
#include "rtd/data/patch.hpp"
#include "rtd/data/raster.hpp"
#include "rtd/losses.hpp"
#include "rtd/models/detector.hpp"

// Cascaded online hard example mining: a random window sampler narrows the
// negative raster to a candidate pool, the current detector scores the pool,
// and the hard example sampler draws the batch from the highest-loss part.
namespace rtd::sampling {

struct SamplerConfig {
  int window_height = 37;
  int window_width = 37;
  int window_count = 100;
  int batch_size = 256;
  int ratio_positive = 1;
  int ratio_negative = 3;
  int hard_pool_multiplier = 2;
  bool hard_mining = true;        // false: uniform negatives, no loss ranking
  bool augment_positives = true;  // random mirror symmetry per positive
  bool augment_negatives = false;

  int positives_per_batch() const { return batch_size / (ratio_positive + ratio_negative) * ratio_positive; }
  int negatives_per_batch() const { return batch_size - positives_per_batch(); }

  void validate() const {
    if (window_height < kPatchSize || window_width < kPatchSize)
      throw ConfigError("sampling windows must be at least 25 x 25");
    if (window_count <= 0 || batch_size <= 0) throw ConfigError("window count and batch size must be positive");
    if (ratio_positive <= 0 || ratio_negative <= 0) throw ConfigError("ratio terms must be positive");
    if (batch_size % (ratio_positive + ratio_negative) != 0)
      throw ConfigError("batch size " + std::to_string(batch_size) + " does not split " +
                        std::to_string(ratio_positive) + ":" + std::to_string(ratio_negative));
    if (hard_pool_multiplier < 1) throw ConfigError("hard pool multiplier must be >= 1");
  }

  // The no-mining regime: one 25 x 25 window per needed negative.
  static SamplerConfig plain(const SamplerConfig& base) {
    SamplerConfig c = base;
    c.window_height = c.window_width = kPatchSize;
    c.window_count = c.negatives_per_batch();
    c.hard_mining = false;
    return c;
  }
};

// Windows whose every pixel is evaluable, origins uniform over all such
// placements, drawn independently (overlap allowed).
inline std::vector<Window> sample_negative_windows(const Raster& raster, const SamplerConfig& config, Rng& rng) {
  config.validate();
  const int h = config.window_height, w = config.window_width;
  const int max_r = raster.height() - h, max_c = raster.width() - w;
  if (max_r < 0 || max_c < 0)
    throw ConfigError("raster " + raster.id() + " cannot host a " + std::to_string(h) + "x" + std::to_string(w) +
                      " window");
  // Integral image of non-evaluable pixels.
  const int H = raster.height(), W = raster.width();
  std::vector<std::uint32_t> integral;
  if (raster.has_mask()) {
    integral.assign(static_cast<std::size_t>(H + 1) * (W + 1), 0);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c)
        integral[static_cast<std::size_t>(r + 1) * (W + 1) + c + 1] =
            (raster.evaluable(r, c) ? 0u : 1u) + integral[static_cast<std::size_t>(r) * (W + 1) + c + 1] +
            integral[static_cast<std::size_t>(r + 1) * (W + 1) + c] - integral[static_cast<std::size_t>(r) * (W + 1) + c];
  }
  auto valid = [&](int r, int c) {
    if (integral.empty()) return true;
    auto at = [&](int y, int x) { return integral[static_cast<std::size_t>(y) * (W + 1) + x]; };
    return at(r + h, c + w) + at(r, c) - at(r, c + w) - at(r + h, c) == 0;
  };
  std::vector<Window> out;
  out.reserve(config.window_count);
  // Rejection sampling is exact for a uniform law over valid origins; fall
  // back to enumeration when valid origins are rare.
  const long long attempts_cap = 200LL * config.window_count;
  long long attempts = 0;
  while (static_cast<int>(out.size()) < config.window_count && attempts < attempts_cap) {
    ++attempts;
    const int r = uniform_int(rng, 0, max_r), c = uniform_int(rng, 0, max_c);
    if (valid(r, c)) out.push_back({r, c, h, w});
  }
  if (static_cast<int>(out.size()) < config.window_count) {
    std::vector<std::pair<int, int>> origins;
    for (int r = 0; r <= max_r; ++r)
      for (int c = 0; c <= max_c; ++c)
        if (valid(r, c)) origins.emplace_back(r, c);
    if (origins.empty())
      throw ConfigError("no fully evaluable " + std::to_string(h) + "x" + std::to_string(w) + " window in " +
                        raster.id());
    while (static_cast<int>(out.size()) < config.window_count) {
      const auto& o = origins[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(origins.size()) - 1))];
      out.push_back({o.first, o.second, h, w});
    }
  }
  return out;
}

struct Candidate {
  int row = -1;           // center, for real candidates
  int col = -1;
  int window = -1;        // window that first produced this center (real negatives)
  int generated = -1;     // index into CandidatePool::generated (generated negatives)
  Provenance provenance = Provenance::real;
  double score = std::numeric_limits<double>::quiet_NaN();
  double loss = std::numeric_limits<double>::quiet_NaN();
};

struct CandidatePool {
  const Raster* positive_raster = nullptr;
  const Raster* negative_raster = nullptr;
  std::vector<Candidate> positives;
  std::vector<Candidate> negatives;
  std::vector<Window> windows;
  std::size_t raw_negative_count = 0;  // window centers before deduplication
  Tensor<float> generated;             // G x C x 25 x 25
  bool scored = false;

  std::size_t generated_count() const { return generated.empty() ? 0 : static_cast<std::size_t>(generated.dim(0)); }
};

// Positives: every labeled center whose patch fits. Negatives: every center
// of every window, deduplicated across overlapping windows.
inline CandidatePool build_pool(const Raster& positive_raster, const std::vector<PixelCoord>& positives,
                                const Raster& negative_raster, std::vector<Window> windows) {
  CandidatePool pool;
  pool.positive_raster = &positive_raster;
  pool.negative_raster = &negative_raster;
  for (const auto& p : positives)
    if (patch_fits(positive_raster, p.row, p.col)) pool.positives.push_back({p.row, p.col});
  std::unordered_set<long long> seen;
  for (std::size_t wi = 0; wi < windows.size(); ++wi) {
    for (const auto& c : enumerate_window_examples(negative_raster, windows[wi])) {
      ++pool.raw_negative_count;
      if (seen.insert(static_cast<long long>(c.row) * negative_raster.width() + c.col).second)
        pool.negatives.push_back({c.row, c.col, static_cast<int>(wi)});
    }
  }
  pool.windows = std::move(windows);
  return pool;
}

// Adds generated patches (G x C x 25 x 25) as negative candidates.
inline void merge_generated_negatives(CandidatePool& pool, const Tensor<float>& generated) {
  if (generated.empty() || generated.dim(0) == 0) return;
  if (pool.generated.empty()) {
    pool.generated = generated;
  } else {
    if (generated.dim(1) != pool.generated.dim(1)) throw ShapeError("generated patches differ in channel count");
    std::vector<float> data = pool.generated.storage();
    data.insert(data.end(), generated.values().begin(), generated.values().end());
    Shape s = pool.generated.shape();
    s[0] += generated.dim(0);
    pool.generated = Tensor<float>(s, std::move(data));
  }
  const int first = static_cast<int>(pool.generated_count()) - generated.dim(0);
  for (int g = 0; g < generated.dim(0); ++g) {
    Candidate c;
    c.generated = first + g;
    c.provenance = Provenance::generated;
    pool.negatives.push_back(c);
  }
  pool.scored = false;
}

// Detector probabilities for a batch of patches (dropout off).
inline std::vector<double> score_patches(const ModelParams<float>& params, const DetectorSpec& spec,
                                         const Tensor<float>& patches, int chunk = 128) {
  const int n = patches.dim(0);
  const std::size_t len = patches.size() / std::max(1, n);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int s0 = 0; s0 < n; s0 += chunk) {
    const int m = std::min(chunk, n - s0);
    Tensor<float> sub({m, patches.dim(1), kPatchSize, kPatchSize},
                      std::vector<float>(patches.data() + s0 * len, patches.data() + (s0 + m) * len));
    const auto logits = detector_train_forward(params, spec, sub);
    for (int i = 0; i < m; ++i) out[static_cast<std::size_t>(s0 + i)] = nn::sigmoid<double>(logits(0, i));
  }
  return out;
}

inline Tensor<float> gather_patches(const Raster& raster, const std::vector<PixelCoord>& centers) {
  const int n = static_cast<int>(centers.size());
  Tensor<float> out({n, raster.channels(), kPatchSize, kPatchSize});
  const std::size_t len = static_cast<std::size_t>(raster.channels()) * kPatchSize * kPatchSize;
  for (int i = 0; i < n; ++i) copy_patch(raster, centers[i].row, centers[i].col, out.data() + i * len);
  return out;
}

// Attaches the current detector's score and loss to every candidate. Window
// candidates are scored with one dense test-mode pass per window.
inline void score_candidates(CandidatePool& pool, const ModelParams<float>& params, const DetectorSpec& spec) {
  if (!pool.positive_raster || !pool.negative_raster) throw ConfigError("candidate pool has no rasters");
  std::vector<PixelCoord> pcenters;
  for (const auto& c : pool.positives) pcenters.push_back({c.row, c.col});
  if (!pcenters.empty()) {
    const auto scores = score_patches(params, spec, gather_patches(*pool.positive_raster, pcenters));
    for (std::size_t i = 0; i < scores.size(); ++i) {
      pool.positives[i].score = scores[i];
      pool.positives[i].loss = losses::bce(scores[i], 1.0);
    }
  }

  const Raster& neg = *pool.negative_raster;
  std::vector<std::vector<std::size_t>> by_window(pool.windows.size());
  for (std::size_t i = 0; i < pool.negatives.size(); ++i)
    if (pool.negatives[i].provenance == Provenance::real) by_window[pool.negatives[i].window].push_back(i);
  std::vector<float> sub;
  for (std::size_t wi = 0; wi < pool.windows.size(); ++wi) {
    if (by_window[wi].empty()) continue;
    const Window& w = pool.windows[wi];
    sub.resize(static_cast<std::size_t>(neg.channels()) * w.height * w.width);
    for (int c = 0; c < neg.channels(); ++c)
      for (int y = 0; y < w.height; ++y)
        std::copy_n(neg.band(c) + static_cast<std::size_t>(w.row + y) * neg.width() + w.col, w.width,
                    sub.data() + (static_cast<std::size_t>(c) * w.height + y) * w.width);
    const auto map = detector_test_forward(params, spec, sub.data(), neg.channels(), w.height, w.width,
                                           MapRegion::valid);
    for (std::size_t i : by_window[wi]) {
      Candidate& c = pool.negatives[i];
      const int y = c.row - w.row - kPatchRadius, x = c.col - w.col - kPatchRadius;
      c.score = nn::sigmoid<double>(map.logits(0, y, x));
      c.loss = losses::bce(c.score, 0.0);
    }
  }

  if (pool.generated_count() > 0) {
    const auto scores = score_patches(params, spec, pool.generated);
    for (auto& c : pool.negatives)
      if (c.provenance == Provenance::generated) {
        c.score = scores[static_cast<std::size_t>(c.generated)];
        c.loss = losses::bce(c.score, 0.0);
      }
  }
  pool.scored = true;
}

struct PatchBatch {
  Tensor<float> values;  // B x C x 25 x 25
  std::vector<int> labels;
  std::vector<Provenance> provenance;
};

struct SelectionStats {
  std::size_t candidates_raw = 0;
  std::size_t candidates_unique = 0;
  std::size_t generated_in_pool = 0;
  int positives = 0;
  int negatives = 0;
  int generated_selected = 0;
  int positives_resampled = 0;
  double min_selected_negative_loss = std::numeric_limits<double>::quiet_NaN();
  double max_unselectable_negative_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> negative_loss_quantiles;  // 0, .25, .5, .75, 1 over the scored pool

  double generated_fraction() const { return negatives ? static_cast<double>(generated_selected) / negatives : 0.0; }
};

namespace detail {

// Indices sorted by loss descending; ties keep pool order.
inline std::vector<std::size_t> rank_by_loss(const std::vector<Candidate>& cands) {
  std::vector<std::size_t> idx(cands.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return cands[a].loss > cands[b].loss; });
  return idx;
}

// `needed` distinct draws from idx[0, pool) (partial Fisher-Yates).
inline std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> idx, std::size_t pool,
                                                         std::size_t needed, Rng& rng) {
  pool = std::min(pool, idx.size());
  needed = std::min(needed, pool);
  for (std::size_t i = 0; i < needed; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool - i) - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(needed);
  return idx;
}

inline std::vector<double> quantiles(std::vector<double> v) {
  if (v.empty()) return {};
  std::sort(v.begin(), v.end());
  std::vector<double> q;
  for (double f : {0.0, 0.25, 0.5, 0.75, 1.0}) q.push_back(v[static_cast<std::size_t>(std::round(f * (v.size() - 1)))]);
  return q;
}

}  // namespace detail

struct Selection {
  std::vector<std::size_t> positives;  // indices into pool.positives (may repeat when resampled)
  std::vector<std::size_t> negatives;  // indices into pool.negatives
  std::vector<SquareSymmetry> positive_symmetry;
  std::vector<SquareSymmetry> negative_symmetry;
  SelectionStats stats;
};

// Chooses batch members. With hard mining, each class ranks its candidates
// by loss, keeps the top hard_pool_multiplier x needed, and draws the needed
// count uniformly from that top pool. Without it, draws are uniform. When
// fewer positives exist than needed, all are used and the rest are
// resampled with replacement (and mirrored); without mining the same holds
// for negatives, whose independent windows may coincide.
inline Selection select_hard_batch(const CandidatePool& pool, const SamplerConfig& config, Rng& rng) {
  config.validate();
  if (pool.positives.empty()) throw ConfigError("cannot compose a batch without positive examples");
  if (pool.negatives.empty()) throw ConfigError("cannot compose a batch without negative examples");
  if (config.hard_mining && !pool.scored) throw ConfigError("hard mining needs a scored pool");
  const std::size_t need_pos = static_cast<std::size_t>(config.positives_per_batch());
  const std::size_t need_neg = static_cast<std::size_t>(config.negatives_per_batch());

  Selection sel;
  auto pick = [&](const std::vector<Candidate>& cands, std::size_t needed, bool allow_resample,
                  std::vector<std::size_t>& out, double* min_sel, double* max_unsel) {
    std::vector<std::size_t> order;
    if (config.hard_mining) {
      order = detail::rank_by_loss(cands);
    } else {
      order.resize(cands.size());
      std::iota(order.begin(), order.end(), 0);
    }
    if (cands.size() <= needed) {
      out = order;
      if (!allow_resample && cands.size() < needed)
        throw ConfigError("pool has " + std::to_string(cands.size()) + " negatives, batch needs " +
                          std::to_string(needed));
      while (out.size() < needed)
        out.push_back(order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(order.size()) - 1))]);
      return;
    }
    const std::size_t top =
        config.hard_mining ? std::min(cands.size(), needed * static_cast<std::size_t>(config.hard_pool_multiplier))
                           : cands.size();
    out = detail::draw_without_replacement(order, top, needed, rng);
    if (config.hard_mining && min_sel && max_unsel) {
      *min_sel = std::numeric_limits<double>::infinity();
      for (std::size_t i : out) *min_sel = std::min(*min_sel, cands[i].loss);
      if (top < order.size()) *max_unsel = cands[order[top]].loss;
    }
  };

  pick(pool.positives, need_pos, true, sel.positives, nullptr, nullptr);
  pick(pool.negatives, need_neg, !config.hard_mining, sel.negatives, &sel.stats.min_selected_negative_loss,
       &sel.stats.max_unselectable_negative_loss);

  const auto group = mirror_group(kHorizontal | kVertical | kDiagonal);
  auto random_symmetry = [&] { return group[static_cast<std::size_t>(uniform_int(rng, 0, 7))]; };
  for (std::size_t i = 0; i < sel.positives.size(); ++i) {
    const bool resampled = i >= pool.positives.size();
    sel.positive_symmetry.push_back(config.augment_positives || resampled ? random_symmetry() : SquareSymmetry{});
  }
  for (std::size_t i = 0; i < sel.negatives.size(); ++i)
    sel.negative_symmetry.push_back(config.augment_negatives ? random_symmetry() : SquareSymmetry{});

  auto& st = sel.stats;
  st.candidates_raw = pool.raw_negative_count + pool.generated_count();
  st.candidates_unique = pool.negatives.size();
  st.generated_in_pool = pool.generated_count();
  st.positives = static_cast<int>(sel.positives.size());
  st.negatives = static_cast<int>(sel.negatives.size());
  st.positives_resampled = static_cast<int>(need_pos > pool.positives.size() ? need_pos - pool.positives.size() : 0);
  for (std::size_t i : sel.negatives)
    if (pool.negatives[i].provenance == Provenance::generated) ++st.generated_selected;
  if (pool.scored) {
    std::vector<double> l;
    l.reserve(pool.negatives.size());
    for (const auto& c : pool.negatives) l.push_back(c.loss);
    st.negative_loss_quantiles = detail::quantiles(std::move(l));
  }
  return sel;
}

// Copies the selected examples (with their symmetries) into a batch tensor:
// positives first, then negatives.
inline PatchBatch materialize(const CandidatePool& pool, const Selection& sel) {
  const int channels = pool.positive_raster->channels();
  const std::size_t len = static_cast<std::size_t>(channels) * kPatchSize * kPatchSize;
  const int n = static_cast<int>(sel.positives.size() + sel.negatives.size());
  PatchBatch batch;
  batch.values = Tensor<float>({n, channels, kPatchSize, kPatchSize});
  std::vector<float> tmp(len);
  int slot = 0;
  for (std::size_t i = 0; i < sel.positives.size(); ++i, ++slot) {
    const auto& c = pool.positives[sel.positives[i]];
    copy_patch(*pool.positive_raster, c.row, c.col, tmp.data());
    sel.positive_symmetry[i].apply(tmp.data(), batch.values.data() + slot * len, channels, kPatchSize);
    batch.labels.push_back(1);
    batch.provenance.push_back(Provenance::real);
  }
  for (std::size_t i = 0; i < sel.negatives.size(); ++i, ++slot) {
    const auto& c = pool.negatives[sel.negatives[i]];
    if (c.provenance == Provenance::generated)
      std::copy_n(pool.generated.data() + static_cast<std::size_t>(c.generated) * len, len, tmp.data());
    else
      copy_patch(*pool.negative_raster, c.row, c.col, tmp.data());
    sel.negative_symmetry[i].apply(tmp.data(), batch.values.data() + slot * len, channels, kPatchSize);
    batch.labels.push_back(0);
    batch.provenance.push_back(c.provenance);
  }
  return batch;
}

inline nlohmann::json telemetry_record(const SelectionStats& st) {
  nlohmann::json j;
  j["candidates_raw"] = st.candidates_raw;
  j["candidates_unique"] = st.candidates_unique;
  j["duplicates_removed"] = st.candidates_raw - st.generated_in_pool - (st.candidates_unique - st.generated_in_pool);
  j["generated_in_pool"] = st.generated_in_pool;
  j["positives"] = st.positives;
  j["negatives"] = st.negatives;
  j["generated_selected"] = st.generated_selected;
  j["generated_fraction"] = st.generated_fraction();
  j["positives_resampled"] = st.positives_resampled;
  j["loss_quantiles"] = st.negative_loss_quantiles;
  return j;
}

}  // namespace rtd::sampling
