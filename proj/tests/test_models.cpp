#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "rtd/models/detector.hpp"
#include "rtd/models/discriminator.hpp"
#include "rtd/models/generator.hpp"
#include "test_support.hpp"

using namespace rtd;
using rtd::testing::random_tensor;
using rtd::testing::relative_error;

namespace {

DetectorSpec small_detector(int channels = 3) {
  DetectorSpec s;
  s.in_channels = channels;
  s.bank_width = 3;
  s.trunk_widths = std::vector<int>(7, 5);
  return s;
}

// Central differences of `loss` with respect to every entry of `x`, compared
// against `analytic` as one vector.
double fd_error(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& loss,
                double h = 1e-6) {
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

}  // namespace

TEST(Detector, ParameterLayoutAndInit) {
  DetectorSpec spec;
  auto p = init_detector<float>(spec, 7);
  EXPECT_EQ(p["bank.k13.weight"].shape(), (Shape{100, 8, 13, 13}));
  EXPECT_EQ(p["conv2.weight"].shape(), (Shape{200, 400}));
  EXPECT_EQ(p["conv9.weight"].shape(), (Shape{1, 200}));
  auto sample_std = [](const Tensor<float>& t) {
    double m = 0, s = 0;
    for (float v : t.values()) m += v;
    m /= t.size();
    for (float v : t.values()) s += (v - m) * (v - m);
    return std::sqrt(s / (t.size() - 1));
  };
  EXPECT_GE(p["conv2.weight"].size(), 10000u);
  EXPECT_NEAR(sample_std(p["conv2.weight"]), 0.01, 0.002);
  EXPECT_NEAR(sample_std(p["conv4.weight"]), 0.005, 0.001);
  for (float v : p["conv3.bias"].values()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(p, init_detector<float>(spec, 7));
  EXPECT_FALSE(p == init_detector<float>(spec, 8));
}

TEST(Detector, RejectsBadSpecsAndShapes) {
  DetectorSpec s;
  s.bank_filter_sizes = {1, 3, 9, 13};
  EXPECT_THROW(s.validate(), ConfigError);
  s = DetectorSpec{};
  s.trunk_widths[2] = 50;
  EXPECT_THROW(s.validate(), ConfigError);
  const auto spec = small_detector();
  auto p = init_detector<float>(spec, 1);
  EXPECT_THROW(detector_train_forward(p, spec, Tensor<float>({1, 3, 24, 25})), ShapeError);
  EXPECT_THROW(detector_test_forward(p, spec, Tensor<float>({3, 24, 30}), MapRegion::full), ShapeError);
}

TEST(Detector, BankBranchMatchesDirectDefinition) {
  // One branch evaluated by hand: valid conv of the k x k filter over the
  // centered (2k-1) x (2k-1) crop, then max, then ReLU.
  const auto spec = small_detector(2);
  auto p = init_detector<double>(spec, 3);
  for (auto& e : p.entries())
    for (auto& v : e.tensor.values()) v *= 30;
  Rng rng(4);
  auto x = random_tensor<double>({1, 2, 25, 25}, rng);
  DetectorTrace<double> trace;
  detector_train_forward(p, spec, x, nullptr, &trace);
  for (int j = 0; j < 4; ++j) {
    const int k = spec.bank_filter_sizes[j], off = 12 - (k - 1);
    const auto& w = p[bank_weight_name(k)];
    for (int o = 0; o < spec.bank_width; ++o) {
      double best = -1e300;
      for (int y = 0; y < k; ++y)
        for (int xx = 0; xx < k; ++xx) {
          double acc = p[bank_bias_name(k)][o];
          for (int c = 0; c < 2; ++c)
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) acc += w(o, c, dy, dx) * x(0, c, off + y + dy, off + xx + dx);
          best = std::max(best, acc);
        }
      EXPECT_NEAR(trace.act[0](j * spec.bank_width + o, 0), std::max(0.0, best), 1e-9) << "k=" << k;
    }
  }
}

TEST(Detector, TrainTestDuality) {
  const auto spec = small_detector();
  auto p = init_detector<float>(spec, 1);
  for (auto& e : p.entries())
    for (auto& v : e.tensor.values()) v *= 20;
  Rng rng(3);
  auto img = random_tensor<float>({3, 70, 64}, rng);
  auto map = detector_test_forward(p, spec, img, MapRegion::full);
  auto valid = detector_test_forward(p, spec, img, MapRegion::valid);
  EXPECT_EQ(valid.height, 70 - 24);
  EXPECT_EQ(valid.width, 64 - 24);
  for (int t = 0; t < 30; ++t) {
    const int r = uniform_int(rng, 12, 57), c = uniform_int(rng, 12, 51);
    auto patch = extract_patch(Raster("x", img), {r, c}).values.reshaped({1, 3, 25, 25});
    const auto logits = detector_train_forward(p, spec, patch);
    EXPECT_NEAR(logits(0, 0), map.logits(0, r, c), 1e-4);
    EXPECT_EQ(valid.logits(0, r - 12, c - 12), map.logits(0, r, c));
  }
}

TEST(Detector, StripSizeDoesNotChangeTheMap) {
  const auto spec = small_detector();
  auto p = init_detector<float>(spec, 1);
  Rng rng(8);
  auto img = random_tensor<float>({3, 50, 41}, rng);
  auto a = detector_test_forward(p, spec, img.data(), 3, 50, 41, MapRegion::full, true, 64);
  auto b = detector_test_forward(p, spec, img.data(), 3, 50, 41, MapRegion::full, true, 7);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.features, b.features);
}

TEST(Detector, DropoutIsSeededAndScaled) {
  auto spec = small_detector();
  spec.dropout_rate = 0.5;
  auto p = init_detector<float>(spec, 1);
  Rng data(2);
  auto x = random_tensor<float>({4, 3, 25, 25}, data);
  Rng a(5), b(5);
  DetectorTrace<float> ta, tb;
  EXPECT_EQ(detector_train_forward(p, spec, x, &a, &ta), detector_train_forward(p, spec, x, &b, &tb));
  for (const auto& m : ta.keep[5].reshaped(1, ta.keep[5].size()).row(0)) EXPECT_TRUE(m == 0.0f || m == 2.0f);
}

TEST(Detector, GradientsMatchFiniteDifferences) {
  auto spec = small_detector();
  spec.dropout_rate = 0.3;
  auto p = init_detector<double>(spec, 2);
  for (auto& e : p.entries())
    for (auto& v : e.tensor.values()) v = v * 40 + 0.01;
  Rng rng(6);
  auto x = random_tensor<double>({3, 3, 25, 25}, rng);
  const nn::Mat<double> upstream = nn::Mat<double>::Random(1, 3);
  auto loss = [&] {
    Rng drop(9);
    return (detector_train_forward(p, spec, x, &drop).array() * upstream.array()).sum();
  };
  Rng drop(9);
  DetectorTrace<double> trace;
  detector_train_forward(p, spec, x, &drop, &trace);
  auto g = detector_train_backward(p, spec, trace, upstream, true);
  for (auto& e : p.entries()) EXPECT_LT(fd_error(e.tensor, g.params[e.name], loss), 1e-4) << e.name;
  EXPECT_LT(fd_error(x, g.input, loss), 1e-4);
}

TEST(Detector, FeaturesAreLayerEightActivations) {
  const auto spec = small_detector();
  auto p = init_detector<float>(spec, 4);
  Rng rng(1);
  auto x = random_tensor<float>({2, 3, 25, 25}, rng);
  auto f = detector_features(p, spec, x);
  EXPECT_EQ(f.rows(), spec.feature_width());
  EXPECT_EQ(f.cols(), 2);
  EXPECT_TRUE((f.array() >= 0).all());
}

TEST(Detector, ReceptiveFieldLocality) {
  const auto spec = small_detector();
  auto p = init_detector<float>(spec, 5);
  for (auto& e : p.entries())
    for (auto& v : e.tensor.values()) v *= 20;
  Rng rng(2);
  auto img = random_tensor<float>({3, 60, 60}, rng);
  const auto base = detector_test_forward(p, spec, img, MapRegion::full);
  for (int t = 0; t < 10; ++t) {
    const int r = uniform_int(rng, 0, 59), c = uniform_int(rng, 0, 59);
    auto pert = img;
    int pr, pc;
    do {
      pr = uniform_int(rng, 0, 59);
      pc = uniform_int(rng, 0, 59);
    } while (std::abs(pr - r) <= 12 && std::abs(pc - c) <= 12);
    for (int ch = 0; ch < 3; ++ch) pert(ch, pr, pc) += 50.0f;
    const auto m = detector_test_forward(p, spec, pert, MapRegion::full);
    EXPECT_EQ(m.logits(0, r, c), base.logits(0, r, c));
  }
}

TEST(Generator, ShapesAndDeterminism) {
  GeneratorSpec spec;
  spec.in_channels = 3;
  spec.base_width = 4;
  auto p = init_generator<float>(spec, 1);
  Rng rng(1);
  auto x = random_tensor<float>({2, 3, 25, 25}, rng);
  auto y = generator_forward(p, spec, x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y, generator_forward(p, spec, x));
  EXPECT_THROW(generator_forward(p, spec, Tensor<float>({1, 3, 24, 24})), ShapeError);
}

TEST(Generator, LastLayerInitAndPerturbation) {
  GeneratorSpec spec;
  auto p = init_generator<float>(spec, 3);
  const auto& w = p["conv8.weight"];
  double s = 0;
  for (float v : w.values()) s += double(v) * v;
  EXPECT_NEAR(std::sqrt(s / w.size()), 50.0, 5.0);
  double diff = 0;
  for (int seed = 0; seed < 100; ++seed) {
    GeneratorSpec small = spec;
    small.base_width = 2;
    auto q = init_generator<float>(small, seed);
    Rng rng(seed);
    auto x = random_tensor<float>({1, 8, 25, 25}, rng);
    auto y = generator_forward(q, small, x);
    double d = 0;
    for (std::size_t i = 0; i < x.size(); ++i) d += std::abs(y[i] - x[i]);
    diff += d / x.size();
    EXPECT_GT(d, 0.0);
  }
  EXPECT_GT(diff / 100, 1e-3);
}

TEST(Generator, PerturbationRespectsBound) {
  GeneratorSpec spec;
  spec.in_channels = 3;
  spec.base_width = 4;
  spec.output_bound = 0.25;
  auto p = init_generator<float>(spec, 5);
  Rng rng(5);
  auto x = random_tensor<float>({4, 3, 25, 25}, rng);
  auto y = generator_forward(p, spec, x);
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, double(std::abs(y[i] - x[i])));
  EXPECT_LE(worst, 0.25 + 1e-6);
  EXPECT_GT(worst, 0.0);
  spec.output_bound = -1;
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Generator, ZeroLastLayerLeavesBiasPath) {
  GeneratorSpec spec;
  spec.in_channels = 2;
  spec.base_width = 3;
  spec.residual_output = false;
  auto p = init_generator<float>(spec, 2);
  p["conv8.weight"].fill(0.0f);
  p["conv8.bias"][0] = 1.5f;
  p["conv8.bias"][1] = -2.0f;
  Rng rng(3);
  auto y = generator_forward(p, spec, random_tensor<float>({1, 2, 25, 25}, rng));
  for (int i = 0; i < 625; ++i) {
    EXPECT_EQ(y[i], 1.5f);
    EXPECT_EQ(y[625 + i], -2.0f);
  }
}

TEST(Generator, GradientsMatchFiniteDifferences) {
  for (auto [residual, bound] : {std::pair{true, 0.0}, std::pair{true, 0.3}, std::pair{false, 0.0}}) {
    GeneratorSpec spec;
    spec.in_channels = 2;
    spec.base_width = 2;
    spec.residual_output = residual;
    spec.output_bound = bound;
    spec.last_init_std = 0.5;
    spec.init_std = 0.4;
    auto p = init_generator<double>(spec, 4);
    for (auto& e : p.entries())
      if (e.name.ends_with(".bias"))
        for (auto& v : e.tensor.values()) v = 0.05;
    Rng rng(2);
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
    for (auto& e : p.entries()) EXPECT_LT(fd_error(e.tensor, g[e.name], loss), 1e-4) << e.name;
  }
}

TEST(Discriminator, OutputsAndShapes) {
  DiscriminatorSpec spec;
  spec.in_channels = 3;
  spec.widths = {2, 3, 4, 5};
  auto p = init_discriminator<float>(spec, 1);
  Rng rng(1);
  auto x = random_tensor<float>({3, 3, 25, 25}, rng);
  auto logits = discriminator_forward(p, spec, x);
  ASSERT_EQ(logits.size(), 3u);
  for (float z : logits) {
    const double s = nn::sigmoid<double>(z);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
  EXPECT_EQ(logits, discriminator_forward(p, spec, x));
  EXPECT_EQ(p["fc.weight"].shape(), (Shape{1, 20}));
  EXPECT_THROW(discriminator_forward(p, spec, Tensor<float>({1, 2, 25, 25})), ShapeError);
}

TEST(Discriminator, GradientsMatchFiniteDifferences) {
  DiscriminatorSpec spec;
  spec.in_channels = 2;
  spec.widths = {3, 3, 4, 4};
  auto p = init_discriminator<double>(spec, 3);
  for (auto& e : p.entries())
    if (e.name.ends_with(".bias"))
      for (auto& v : e.tensor.values()) v = 0.05;
  Rng rng(5);
  auto x = random_tensor<double>({3, 2, 25, 25}, rng);
  std::vector<double> up{0.3, -1.2, 0.7};
  auto loss = [&] {
    auto z = discriminator_forward(p, spec, x);
    return z[0] * up[0] + z[1] * up[1] + z[2] * up[2];
  };
  DiscriminatorTrace<double> trace;
  discriminator_forward(p, spec, x, &trace);
  auto g = discriminator_backward(p, spec, trace, up, true);
  for (auto& e : p.entries()) EXPECT_LT(fd_error(e.tensor, g.params[e.name], loss), 1e-4) << e.name;
  EXPECT_LT(fd_error(x, g.input, loss), 1e-4);
}
