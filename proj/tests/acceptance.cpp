// Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//
//   acceptance            run every criterion
//   acceptance 1 2 11     run a subset
//
// The synthetic benchmark profile is read from configs/bench.cfg and the
// hyperspectral profile from configs/hsi.cfg. Hyperspectral data is looked up
// in $RTD_HSI_DIR.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "rtd/cli.hpp"
#include "rtd/losses.hpp"
#include "test_support.hpp"

using namespace rtd;
using rtd::testing::random_tensor;
using rtd::testing::relative_error;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum class Status { pass, fail, skip } status = Status::fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::Status::pass : Outcome::Status::fail, detail}; }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double slope(const std::vector<double>& y) {
  const double n = static_cast<double>(y.size());
  double mx = (n - 1) / 2, my = 0;
  for (double v : y) my += v;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sxy += (static_cast<double>(i) - mx) * (y[i] - my);
    sxx += (static_cast<double>(i) - mx) * (static_cast<double>(i) - mx);
  }
  return sxy / sxx;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

Raster noise_raster(int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  return Raster("r", random_tensor<float>({c, h, w}, rng));
}

// ---------------------------------------------------------------- 1

Outcome sampler_arithmetic() {
  const Raster big("n", 1, 1000, 1000);
  std::ostringstream detail;
  bool ok = true;
  const std::vector<std::tuple<int, int, std::size_t>> configs = {{153, 1, 16641}, {65, 10, 16810}, {37, 100, 16900}};
  for (const auto& [size, count, expected] : configs) {
    sampling::SamplerConfig cfg;
    cfg.window_height = cfg.window_width = size;
    cfg.window_count = count;
    Rng rng(static_cast<std::uint64_t>(size));
    const auto pool = sampling::build_pool(big, {}, big, sampling::sample_negative_windows(big, cfg, rng));
    ok = ok && pool.raw_negative_count == expected;
    detail << size << "x" << size << "x" << count << "=" << pool.raw_negative_count << " ";
  }
  return verdict(ok, detail.str());
}

// ---------------------------------------------------------------- 2, 3, 4

Outcome train_test_duality() {
  const DetectorSpec spec;
  const auto params = init_detector<float>(spec, 21);
  const Raster r = noise_raster(spec.in_channels, 90, 90, 22);
  const auto map = sliding_window_infer(r, params, spec, 600, 600);
  Rng rng(23);
  std::vector<PixelCoord> centers;
  for (int i = 0; i < 100; ++i) centers.push_back({uniform_int(rng, 12, 77), uniform_int(rng, 12, 77)});
  const auto logits = detector_train_forward(params, spec, sampling::gather_patches(r, centers));
  double worst = 0;
  for (int i = 0; i < 100; ++i)
    worst = std::max(worst, std::abs(map.at(centers[i].row, centers[i].col) - nn::sigmoid<double>(logits(0, i))));
  return verdict(worst <= 1e-5, "max |train - test| over 100 patches = " + fmt(worst));
}

Outcome receptive_field_locality() {
  DetectorSpec spec;
  spec.dropout_rate = 0.0;
  auto params = init_detector<float>(spec, 31);
  for (auto& e : params.entries())
    for (auto& v : e.tensor.values()) v *= 10;
  const Raster base = noise_raster(spec.in_channels, 70, 70, 32);
  const auto ref = detector_test_forward(params, spec, base.values(), MapRegion::full);
  Rng rng(33);
  int changed = 0, trials = 0;
  for (; trials < 20; ++trials) {
    const int r = uniform_int(rng, 0, 69), c = uniform_int(rng, 0, 69);
    Raster pert = base;
    for (int pr = 0; pr < 70; ++pr)
      for (int pc = 0; pc < 70; ++pc)
        if (std::abs(pr - r) > 12 || std::abs(pc - c) > 12)
          for (int ch = 0; ch < spec.in_channels; ++ch) pert.values()(ch, pr, pc) += 5.0f;
    const auto m = detector_test_forward(params, spec, pert.values(), MapRegion::full);
    changed += m.logits(0, r, c) != ref.logits(0, r, c);
  }
  return verdict(changed == 0, std::to_string(changed) + " of " + std::to_string(trials) +
                                   " scores moved when everything outside their 25x25 window was perturbed");
}

Outcome stitching_invariance() {
  DetectorSpec spec;
  spec.bank_width = 16;
  spec.trunk_widths = std::vector<int>(7, 32);
  spec.init = DetectorSpec::Init::fan_in;
  const auto params = init_detector<float>(spec, 41);
  const Raster r = noise_raster(spec.in_channels, 1200, 1200, 42);
  const auto a = sliding_window_infer(r, params, spec, 300, 300);
  const auto b = sliding_window_infer(r, params, spec, 600, 600);
  std::size_t shared = 0, differ = 0;
  for (std::size_t i = 0; i < a.scores.size(); ++i) {
    if (std::isnan(a.scores[i]) || std::isnan(b.scores[i])) {
      differ += std::isnan(a.scores[i]) != std::isnan(b.scores[i]);
      continue;
    }
    ++shared;
    differ += a.scores[i] != b.scores[i];
  }
  return verdict(differ == 0 && shared == 1176u * 1176u,
                 std::to_string(differ) + " differing pixels over " + std::to_string(shared) + " shared valid pixels");
}

// ---------------------------------------------------------------- 5

double fd_error(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& loss) {
  const double h = 1e-6;
  std::vector<double> numeric(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = loss();
    x[i] = orig - h;
    const double down = loss();
    x[i] = orig;
    numeric[i] = (up - down) / (2 * h);
  }
  return relative_error(std::vector<double>(analytic.values().begin(), analytic.values().end()), numeric);
}

std::vector<double> numeric_grad(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f) {
  const double h = 1e-6;
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double o = x[i];
    x[i] = o + h;
    const double up = f(x);
    x[i] = o - h;
    const double down = f(x);
    x[i] = o;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

Outcome gradient_checks() {
  std::map<std::string, double> errors;
  Rng rng(51);
  auto probs = [&](std::size_t n) {
    std::vector<double> p(n);
    for (auto& v : p) v = 0.02 + 0.96 * uniform01(rng);
    return p;
  };

  {
    auto s = probs(24);
    std::vector<int> y(24);
    for (auto& l : y) l = uniform_int(rng, 0, 1);
    errors["loss.detector"] = relative_error(
        losses::detector_loss_grad<double>(s, y),
        numeric_grad(s, [&](const std::vector<double>& x) { return losses::detector_loss<double>(x, y).scalar; }));
  }
  for (const std::string which : {"discriminator", "hng"}) {
    auto joined = probs(20);
    auto f = [&](const std::vector<double>& x) {
      std::span<const double> a(x.data(), 10), b(x.data() + 10, 10);
      return which == "hng" ? losses::hng_loss<double>(a, b).scalar : losses::discriminator_loss<double>(a, b).scalar;
    };
    std::vector<int> labels(20, 1);
    if (which == "discriminator") std::fill(labels.begin() + 10, labels.end(), 0);
    auto analytic = losses::detector_loss_grad<double>(std::span<const double>(joined.data(), 10),
                                                       std::span<const int>(labels.data(), 10));
    auto tail = losses::detector_loss_grad<double>(std::span<const double>(joined.data() + 10, 10),
                                                   std::span<const int>(labels.data() + 10, 10));
    analytic.insert(analytic.end(), tail.begin(), tail.end());
    errors["loss." + which] = relative_error(analytic, numeric_grad(joined, f));
  }
  {
    const int k = 5;
    auto s = probs(6 * k);
    std::vector<int> y(6);
    for (auto& l : y) l = uniform_int(rng, 0, k - 1);
    errors["loss.hsi"] = relative_error(
        losses::hsi_detector_loss_grad<double>(s, y, k),
        numeric_grad(s, [&](const std::vector<double>& x) { return losses::hsi_detector_loss<double>(x, y, k).scalar; }));
  }

  {
    DetectorSpec spec;
    spec.in_channels = 3;
    spec.bank_width = 3;
    spec.trunk_widths = std::vector<int>(7, 5);
    spec.output_units = 2;
    spec.dropout_rate = 0.3;
    auto p = init_detector<double>(spec, 52);
    for (auto& e : p.entries())
      for (auto& v : e.tensor.values()) v = v * 40 + 0.01;
    auto x = random_tensor<double>({3, 3, 25, 25}, rng);
    const nn::Mat<double> up = nn::Mat<double>::Random(2, 3);
    auto loss = [&] {
      Rng drop(9);
      return (detector_train_forward(p, spec, x, &drop).array() * up.array()).sum();
    };
    Rng drop(9);
    DetectorTrace<double> trace;
    detector_train_forward(p, spec, x, &drop, &trace);
    auto g = detector_train_backward(p, spec, trace, up, true);
    for (auto& e : p.entries()) errors["detector." + e.name] = fd_error(e.tensor, g.params[e.name], loss);
    errors["detector.input"] = fd_error(x, g.input, loss);
  }
  {
    GeneratorSpec spec;
    spec.in_channels = 2;
    spec.base_width = 2;
    spec.output_bound = 0.3;
    spec.last_init_std = 0.5;
    spec.init_std = 0.4;
    auto p = init_generator<double>(spec, 53);
    for (auto& e : p.entries())
      if (e.name.ends_with(".bias"))
        for (auto& v : e.tensor.values()) v = 0.05;
    auto x = random_tensor<double>({2, 2, 25, 25}, rng);
    auto up = random_tensor<double>({2, 2, 25, 25}, rng);
    auto loss = [&] {
      auto y = generator_forward(p, spec, x);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
      return s;
    };
    GeneratorTrace<double> trace;
    generator_forward(p, spec, x, &trace);
    auto g = generator_backward(p, spec, trace, up);
    for (auto& e : p.entries()) errors["generator." + e.name] = fd_error(e.tensor, g[e.name], loss);
  }
  {
    DiscriminatorSpec spec;
    spec.in_channels = 2;
    spec.widths = {3, 3, 4, 4};
    auto p = init_discriminator<double>(spec, 54);
    for (auto& e : p.entries())
      if (e.name.ends_with(".bias"))
        for (auto& v : e.tensor.values()) v = 0.05;
    auto x = random_tensor<double>({3, 2, 25, 25}, rng);
    const std::vector<double> up{0.3, -1.2, 0.7};
    auto loss = [&] {
      auto z = discriminator_forward(p, spec, x);
      return z[0] * up[0] + z[1] * up[1] + z[2] * up[2];
    };
    DiscriminatorTrace<double> trace;
    discriminator_forward(p, spec, x, &trace);
    auto g = discriminator_backward(p, spec, trace, up, true);
    for (auto& e : p.entries()) errors["discriminator." + e.name] = fd_error(e.tensor, g.params[e.name], loss);
    errors["discriminator.input"] = fd_error(x, g.input, loss);
  }

  auto worst = std::max_element(errors.begin(), errors.end(),
                                [](const auto& a, const auto& b) { return a.second < b.second; });
  return verdict(worst->second < 1e-4, std::to_string(errors.size()) + " checks, worst relative error " +
                                           fmt(worst->second) + " (" + worst->first + ")");
}

// ---------------------------------------------------------------- 6

Outcome auc_oracle() {
  Rng rng(61);
  double worst = 0;
  for (int f = 0; f < 50; ++f) {
    const int n = uniform_int(rng, 2, 200);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = f % 3 == 0 ? uniform_int(rng, 0, 9) / 10.0 : uniform01(rng);
      y[i] = uniform_int(rng, 0, 1);
    }
    y[0] = 1;
    y[1] = 0;
    double wins = 0, pairs = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    worst = std::max(worst, std::abs(roc_curve(s, y).auc - wins / pairs));
  }
  return verdict(worst <= 1e-9, "max |trapezoid - pair count| over 50 fixtures = " + fmt(worst));
}

// ---------------------------------------------------------------- 7, 8, 9

constexpr std::uint64_t kBenchDataSeedOffset = 1000;

struct BenchRun {
  double auc = 0;
  std::vector<double> hng_loss;            // per stage-2 iteration
  std::vector<double> generated_fraction;  // per stage-3 iteration
};

RunConfig load_profile(const std::string& name) {
  RunConfig c;
  load_config_file(c, fs::path(RTD_CONFIG_DIR) / name);
  return c;
}

BenchRun bench_run(RunConfig c, const std::string& variant, std::uint64_t seed) {
  c.seed = seed;
  c.mode = variant == "3stage" ? "rtd-3stage" : "rtd-single";
  if (variant != "3stage") c.train.cohem = variant == "cohem";
  auto ds = generate_synthetic_dataset(c.synth, kBenchDataSeedOffset + seed);
  const auto stats = compute_channel_stats(ds.train);
  for (auto& r : ds.train) r = normalize(r, stats);
  for (auto& r : ds.test) r = normalize(r, stats);
  const auto cfg = cli::train_config(c, ds.train.front().channels());
  const auto data = make_training_data(ds.train, ds.train_labels);
  BenchRun out;
  TrainHooks hooks;
  hooks.telemetry = [&](const nlohmann::json& j) {
    if (j.contains("hng_loss")) out.hng_loss.push_back(j["hng_loss"].get<double>());
    if (j["stage"] == 3) out.generated_fraction.push_back(j["generated_fraction"].get<double>());
  };
  auto state = init_train_state(cfg, stats);
  Trainer(cfg, data, hooks).run(state);
  std::vector<ScoreMap> maps;
  for (const auto& r : ds.test)
    maps.push_back(sliding_window_infer(r, state.detector, cfg.detector, c.infer_window_height, c.infer_window_width));
  out.auc = roc_variation_curve(maps, ds.test_labels).auc;
  return out;
}

struct Bench {
  std::map<std::string, std::vector<BenchRun>> runs;
  bool done = false;
};

Bench& bench() {
  static Bench b;
  if (b.done) return b;
  const auto profile = load_profile("bench.cfg");
  for (const std::string variant : {"plain", "cohem", "3stage"})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto t0 = std::chrono::steady_clock::now();
      b.runs[variant].push_back(bench_run(profile, variant, seed));
      std::cerr << "  bench " << variant << " seed " << seed << ": auc " << fmt(b.runs[variant].back().auc) << " ("
                << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 3) << " s)\n";
    }
  b.done = true;
  return b;
}

Outcome ordering() {
  auto& b = bench();
  std::map<std::string, double> med;
  std::ostringstream detail;
  for (const std::string v : {"plain", "cohem", "3stage"}) {
    std::vector<double> aucs;
    for (const auto& r : b.runs[v]) aucs.push_back(r.auc);
    med[v] = median(aucs);
    detail << v << " median AUC " << fmt(100 * med[v]) << "  ";
  }
  const bool ok = med["cohem"] - med["plain"] >= 0.01 && med["3stage"] - med["cohem"] >= 0.01;
  return verdict(ok, detail.str());
}

Outcome hng_dynamics() {
  auto& b = bench();
  int negative = 0;
  std::ostringstream detail;
  for (int s = 0; s < 3; ++s) {
    const double k = slope(b.runs["3stage"][s].hng_loss);
    negative += k < 0;
    detail << "seed " << s << " slope " << fmt(k, 3) << "  ";
  }
  return verdict(negative == 3, detail.str());
}

Outcome provenance_decay() {
  auto& b = bench();
  int negative = 0;
  std::ostringstream detail;
  for (int s = 0; s < 3; ++s) {
    const double k = slope(b.runs["3stage"][s].generated_fraction);
    negative += k < 0;
    detail << "seed " << s << " slope " << fmt(k, 3) << "  ";
  }
  return verdict(negative >= 2, detail.str());
}

// ---------------------------------------------------------------- 10

Outcome hsi_reproduction() {
  const char* dir = std::getenv("RTD_HSI_DIR");
  const std::vector<std::pair<HsiDataset, double>> targets = {
      {HsiDataset::indian_pines, 96.43}, {HsiDataset::salinas, 96.53}, {HsiDataset::paviau, 97.33}};
  if (!dir) return {Outcome::Status::skip, "RTD_HSI_DIR not set; hyperspectral datasets absent"};
  for (const auto& [d, t] : targets)
    if (!hsi_dataset_present(d, dir))
      return {Outcome::Status::skip, std::string("dataset files for ") + hsi_dataset_info(d).name + " not found in " + dir};
  const auto profile = load_profile("hsi.cfg");
  bool ok = true;
  std::ostringstream detail;
  for (const auto& [d, target] : targets) {
    const auto result = run_hsi_experiment(load_hsi_benchmark(d, dir), cli::hsi_train_config(profile),
                                           profile.hsi_per_class, profile.hsi_repeats);
    ok = ok && std::abs(result.accuracy.mean - target) <= 2.0;
    detail << hsi_dataset_info(d).name << " " << fmt(result.accuracy.mean) << " (target " << target << ")  ";
  }
  return verdict(ok, detail.str());
}

// ---------------------------------------------------------------- 11

Outcome determinism_and_resume() {
  SynthDatasetConfig dc;
  dc.scene.height = dc.scene.width = 96;
  dc.scene.label_count = 40;
  dc.train_positive = dc.train_negative = 2;
  dc.test_positive = dc.test_negative = 0;
  auto ds = generate_synthetic_dataset(dc, 111);
  const auto stats = compute_channel_stats(ds.train);
  for (auto& r : ds.train) r = normalize(r, stats);
  const auto data = make_training_data(ds.train, ds.train_labels);
  TrainConfig cfg;
  cfg.seed = 112;
  cfg.detector.bank_width = 4;
  cfg.detector.trunk_widths = std::vector<int>(7, 8);
  cfg.generator.base_width = 4;
  cfg.discriminator.widths = {4, 8, 8, 8};
  cfg.sampler.batch_size = 32;
  cfg.sampler.window_count = 4;
  for (auto* s : {&cfg.stage1, &cfg.stage2, &cfg.stage3, &cfg.single}) {
    s->iterations = 10;
    s->lr_drop_every = 4;
  }
  cfg.stage2_batch = 16;
  cfg.stage3_generated = 12;

  auto run = [&](TrainState& state, long long stop_after, std::vector<nlohmann::json>& tel) {
    TrainHooks hooks;
    hooks.telemetry = [&](const nlohmann::json& j) { tel.push_back(j); };
    if (stop_after > 0) hooks.stop_after = stop_after;
    return Trainer(cfg, data, hooks).run(state);
  };
  auto digest = [&](const TrainState& s) { return digest_hex(encode_checkpoint(state_to_checkpoint(s, cfg))); };

  std::vector<nlohmann::json> ta, tb, tc;
  auto a = init_train_state(cfg, stats), b = init_train_state(cfg, stats);
  run(a, 0, ta);
  run(b, 0, tb);
  const bool same = ta.size() == 30 && ta == tb && digest(a) == digest(b);

  bool resumed_ok = true;
  for (long long cut : {7LL, 10LL, 17LL, 24LL}) {
    tc.clear();
    auto c = init_train_state(cfg, stats);
    run(c, cut, tc);
    auto restored = state_from_checkpoint(decode_checkpoint(encode_checkpoint(state_to_checkpoint(c, cfg))));
    run(restored, 0, tc);
    resumed_ok = resumed_ok && digest(restored) == digest(a) && tc == ta;
  }
  return verdict(same && resumed_ok, std::string("repeat ") + (same ? "identical" : "differs") + ", resume " +
                                         (resumed_ok ? "matches" : "differs") + " (digest " + digest(a) + ")");
}

// ---------------------------------------------------------------- 12

Outcome heg_label_rule() {
  const double grid[] = {0.0, 0.5, 1.0, 2.0};
  int checked = 0, wrong = 0;
  for (int code = 0; code < 256; ++code) {
    std::vector<double> l(4);
    for (int i = 0, c = code; i < 4; ++i, c /= 4) l[i] = grid[c % 4];
    for (int truth = 0; truth < 4; ++truth) {
      int best = -1;
      for (int k = 0; k < 4; ++k)
        if (k != truth && (best < 0 || l[k] > l[best])) best = k;
      wrong += losses::heg_adversarial_label(l, truth) != best;
      ++checked;
    }
  }
  return verdict(wrong == 0, std::to_string(checked - wrong) + " of " + std::to_string(checked) + " cases agree");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"sampler arithmetic", sampler_arithmetic},
      {"train/test duality", train_test_duality},
      {"receptive-field locality", receptive_field_locality},
      {"stitching invariance", stitching_invariance},
      {"gradient correctness", gradient_checks},
      {"AUC oracle", auc_oracle},
      {"ordering experiment", ordering},
      {"stage-2 dynamics", hng_dynamics},
      {"provenance decay", provenance_decay},
      {"HSI reproduction", hsi_reproduction},
      {"determinism and resume", determinism_and_resume},
      {"HEG label rule", heg_label_rule},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Outcome::Status::fail, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Outcome::Status::pass ? "PASS" : o.status == Outcome::Status::skip ? "SKIP" : "FAIL";
    failed += o.status == Outcome::Status::fail;
    std::cout << "[" << tag << "] " << std::setw(2) << id << " " << criteria[i].first << ": " << o.detail << " ["
              << std::fixed << std::setprecision(1) << secs << " s]" << std::defaultfloat << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
