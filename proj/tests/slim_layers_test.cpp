#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "test_support.hpp"

using namespace slimgan;
using slimgan::testing::copy_values;
using slimgan::testing::probe;
using slimgan::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

double top_singular_value(const Tensor& w) {
  Eigen::MatrixXd m(w.dim(0), w.dim(1));
  for (std::size_t r = 0; r < w.dim(0); ++r)
    for (std::size_t c = 0; c < w.dim(1); ++c) m(r, c) = w.at(r * w.dim(1) + c);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

// Reference batch norm of one [B×C] tensor with explicit per-row affine rows.
std::vector<double> reference_norm(const Tensor& x, const std::vector<std::vector<double>>& gamma,
                                   const std::vector<std::vector<double>>& beta, double eps = 1e-5) {
  const std::size_t b = x.dim(0), c = x.dim(1);
  std::vector<double> out(b * c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu = 0, var = 0;
    for (std::size_t r = 0; r < b; ++r) mu += x.at(r * c + ch) / b;
    for (std::size_t r = 0; r < b; ++r) var += (x.at(r * c + ch) - mu) * (x.at(r * c + ch) - mu) / b;
    for (std::size_t r = 0; r < b; ++r) {
      out[r * c + ch] = gamma[r][ch] * (x.at(r * c + ch) - mu) / std::sqrt(var + eps) + beta[r][ch];
    }
  }
  return out;
}

void randomize(Tensor t, std::uint64_t seed) {
  const Tensor r = random_tensor(t.shape(), seed, 0.5, 1.5);
  std::copy(r.data().begin(), r.data().end(), t.mutable_data().begin());
}

}  // namespace

TEST(ActiveChannels, RoundsHalfUpWithFloorOfOne) {
  EXPECT_EQ(active_channels(0.25, 64), 16u);
  EXPECT_EQ(active_channels(0.5, 64), 32u);
  EXPECT_EQ(active_channels(0.75, 64), 48u);
  EXPECT_EQ(active_channels(1.0, 64), 64u);
  EXPECT_EQ(active_channels(0.25, 10), 3u);
  EXPECT_EQ(active_channels(0.75, 10), 8u);
  EXPECT_EQ(active_channels(0.5, 3), 2u);
  EXPECT_EQ(active_channels(0.1, 4), 1u);
  EXPECT_EQ(active_channels(0.01, 1), 1u);
}

TEST(ActiveChannels, MonotoneInWidth) {
  const std::vector<double> ws{0.1, 0.2, 0.25, 0.3, 0.5, 0.6, 0.75, 0.9, 1.0};
  for (std::size_t full = 1; full <= 130; ++full)
    for (std::size_t i = 1; i < ws.size(); ++i) EXPECT_LE(active_channels(ws[i - 1], full), active_channels(ws[i], full));
}

TEST(WidthConfig, RejectsMalformedLists) {
  EXPECT_NO_THROW(WidthConfig({0.5, 1.0}));
  EXPECT_THROW(WidthConfig({1.0}), PreconditionError);
  EXPECT_THROW(WidthConfig({0.5, 0.5, 1.0}), PreconditionError);
  EXPECT_THROW(WidthConfig({0.75, 0.5, 1.0}), PreconditionError);
  EXPECT_THROW(WidthConfig({0.25, 0.5}), PreconditionError);
  EXPECT_THROW(WidthConfig({0.0, 1.0}), PreconditionError);
  EXPECT_THROW(WidthConfig({0.5, 1.5}), PreconditionError);
  EXPECT_EQ(WidthConfig::individual().size(), 1u);
  EXPECT_EQ(WidthConfig().index_of(0.75), std::optional<std::size_t>(2));
  EXPECT_FALSE(WidthConfig().index_of(0.3).has_value());
}

TEST(SlimLinear, NarrowForwardUsesLeadingBlock) {
  Rng rng(3);
  SlimLinear layer(6, 8, {true, true}, WidthConfig(), rng);
  const Tensor x = random_tensor({5, 2}, 11);
  const Tensor y = layer.forward(x, 0);
  ASSERT_EQ(y.shape(), (Shape{5, 2}));
  const auto w = layer.weight().data();
  const auto b = layer.bias().data();
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t o = 0; o < 2; ++o) {
      double expect = b[o];
      for (std::size_t i = 0; i < 2; ++i) expect += w[o * 6 + i] * x.at(r * 2 + i);
      EXPECT_NEAR(y.at(r * 2 + o), expect, 1e-14);
    }
  EXPECT_EQ(layer.parameter_count(0), 2u * 3u);
  EXPECT_EQ(layer.parameter_count(3), 8u * 7u);
  EXPECT_THROW(layer.forward(random_tensor({5, 3}, 1), 0), DimensionError);
  EXPECT_THROW(layer.forward(x, 4), PreconditionError);
}

TEST(SlimLinear, EntriesOutsideTheSliceAreNeverRead) {
  Rng rng(5);
  SlimLinear layer(8, 8, {true, true}, WidthConfig(), rng);
  const WidthConfig widths;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::size_t in = layer.in_features(i), out = layer.out_features(i);
    const Tensor x = random_tensor({3, in}, 9);
    const auto before = copy_values(layer.forward(x, i));
    Tensor w = layer.weight();
    auto wv = w.mutable_data();
    const auto saved = copy_values(w);
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 8; ++c)
        if (r >= out || c >= in) wv[r * 8 + c] = 1e6;
    auto bv = layer.bias().mutable_data();
    const auto saved_b = copy_values(layer.bias());
    for (std::size_t r = out; r < 8; ++r) bv[r] = -1e6;
    EXPECT_EQ(copy_values(layer.forward(x, i)), before) << "width index " << i;
    std::copy(saved.begin(), saved.end(), wv.begin());
    std::copy(saved_b.begin(), saved_b.end(), bv.begin());
  }
}

TEST(SlimLinear, GradientCheckAtEveryWidth) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    SlimLinear layer(6, 5, {true, true}, WidthConfig(), rng);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto f = [&](const std::vector<Tensor>& in) {
        layer.weight() = in[0];
        layer.bias() = in[1];
        return probe(layer.forward(in[2], i), seed);
      };
      const double err =
          grad_check(f, {layer.weight().clone(), layer.bias().clone(), random_tensor({4, layer.in_features(i)}, seed)});
      EXPECT_LT(err, kGradTol) << "seed " << seed << " width " << i;
    }
  }
}

TEST(SlimLinear, SpectralNormGradientCheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    SlimLinear layer(6, 5, {true, true}, WidthConfig(), rng);
    layer.enable_spectral_norm(rng);
    for (std::size_t i = 0; i < 4; ++i) {
      layer.forward(random_tensor({2, layer.in_features(i)}, 1), i, true);  // one power step
      const auto f = [&](const std::vector<Tensor>& in) {
        layer.weight() = in[0];
        return probe(layer.forward(in[1], i, false), seed);
      };
      EXPECT_LT(grad_check(f, {layer.weight().clone(), random_tensor({3, layer.in_features(i)}, seed)}), kGradTol)
          << "seed " << seed << " width " << i;
    }
  }
}

TEST(SpectralNorm, PowerIterationConvergesToTopSingularValue) {
  Rng rng(1);
  const Tensor w = random_tensor({6, 4}, 2);
  Tensor u = detail::random_unit_vector(6, rng);
  Tensor normalized;
  for (int it = 0; it < 200; ++it) normalized = spectral_normalize(w, u, true);
  EXPECT_NEAR(top_singular_value(normalized), 1.0, 1e-8);
  for (std::size_t k = 0; k < w.numel(); ++k) {
    EXPECT_NEAR(normalized.at(k) * top_singular_value(w), w.at(k), 1e-8);
  }
}

TEST(SpectralNorm, InferenceLeavesStateAndTrainingAdvancesIt) {
  Rng rng(2);
  SlimLinear layer(4, 4, {true, true}, WidthConfig({0.5, 1.0}), rng);
  layer.enable_spectral_norm(rng);
  NamedTensors params, buffers;
  layer.collect("l", params, buffers);
  ASSERT_EQ(buffers.size(), 2u);
  const auto u0 = copy_values(buffers[1].tensor);
  layer.forward(random_tensor({2, 4}, 1), 1, false);
  EXPECT_EQ(copy_values(buffers[1].tensor), u0);
  layer.forward(random_tensor({2, 4}, 1), 1, true);
  EXPECT_NE(copy_values(buffers[1].tensor), u0);
}

TEST(SlimConv, NarrowForwardMatchesExplicitSlice) {
  Rng rng(4);
  SlimConv conv(4, 6, 3, 1, 1, {true, true}, WidthConfig({0.5, 1.0}), rng);
  const Tensor x = random_tensor({2, 2, 5, 5}, 3);
  const Tensor expect = add(conv2d(x, slice_prefix(conv.kernel(), {3, 2, 3, 3}), 1, 1), slice_prefix(conv.bias(), {3}));
  EXPECT_EQ(copy_values(conv.forward(x, 0)), copy_values(expect));
  EXPECT_EQ(conv.parameter_count(0), 3u * (2u * 9u + 1u));
}

TEST(SlimConv, GradientCheckWithAndWithoutSpectralNorm) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (bool sn : {false, true}) {
      Rng rng(seed);
      SlimConv conv(3, 4, 3, 2, 1, {true, true}, WidthConfig({0.5, 1.0}), rng);
      if (sn) conv.enable_spectral_norm(rng);
      for (std::size_t i = 0; i < 2; ++i) {
        const auto f = [&](const std::vector<Tensor>& in) {
          conv.kernel() = in[0];
          conv.bias() = in[1];
          return probe(conv.forward(in[2], i, false), seed);
        };
        const double err = grad_check(
            f, {conv.kernel().clone(), conv.bias().clone(), random_tensor({2, conv.in_channels(i), 4, 4}, seed)});
        EXPECT_LT(err, kGradTol) << "seed " << seed << " sn " << sn << " width " << i;
      }
    }
  }
}

TEST(NormBank, BankAndScalarCountsForFourWidthsTenClasses) {
  const WidthConfig widths;
  const NormBank sbn(NormMode::sbn, 64, widths);
  const NormBank naive(NormMode::cbn_naive, 64, widths, 10);
  const NormBank scbn(NormMode::scbn, 64, widths, 10);
  EXPECT_EQ(sbn.bank_count(), 4u);
  EXPECT_EQ(naive.bank_count(), 40u);
  EXPECT_EQ(scbn.bank_count(), 14u);
  // channels per width 16, 32, 48, 64
  EXPECT_EQ(sbn.learnable_scalar_count(), 320u);
  EXPECT_EQ(naive.learnable_scalar_count(), 3200u);
  EXPECT_EQ(scbn.learnable_scalar_count(), 1600u);
}

TEST(NormBank, ScbnIsSmallerThanNaiveWheneverThereAreSeveralWidthsAndClasses) {
  for (std::size_t classes = 2; classes <= 12; ++classes)
    for (std::size_t channels : {4u, 16u, 64u}) {
      const WidthConfig widths;
      EXPECT_LT(NormBank(NormMode::scbn, channels, widths, classes).learnable_scalar_count(),
                NormBank(NormMode::cbn_naive, channels, widths, classes).learnable_scalar_count());
    }
}

TEST(NormBank, ConstructionErrors) {
  EXPECT_THROW(NormBank(NormMode::none, 4, WidthConfig()), PreconditionError);
  EXPECT_THROW(NormBank(NormMode::scbn, 4, WidthConfig(), 0), PreconditionError);
  EXPECT_THROW(NormBank(NormMode::cbn_naive, 4, WidthConfig(), 0), PreconditionError);
}

TEST(NormBank, SwitchableForwardMatchesReference) {
  NormBank bank(NormMode::sbn, 8, WidthConfig());
  for (std::size_t i = 0; i < 4; ++i) {
    randomize(bank.gamma(i), 10 + i);
    randomize(bank.beta(i), 20 + i);
    const std::size_t s = active_channels(WidthConfig()[i], 8);
    const Tensor x = random_tensor({6, s}, i, -2, 3);
    std::vector<std::vector<double>> g(6, copy_values(bank.gamma(i))), b(6, copy_values(bank.beta(i)));
    const auto expect = reference_norm(x, g, b);
    const auto got = copy_values(bank.forward(x, i, true));
    for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(got[k], expect[k], 1e-12);
  }
}

TEST(NormBank, NaiveConditionalPicksTheClassRow) {
  NormBank bank(NormMode::cbn_naive, 4, WidthConfig({0.5, 1.0}), 3);
  randomize(bank.gamma(0), 1);
  randomize(bank.beta(0), 2);
  const Tensor x = random_tensor({4, 2}, 3);
  const Labels labels{2, 0, 1, 2};
  std::vector<std::vector<double>> g, b;
  for (std::size_t c : labels) {
    g.push_back({bank.gamma(0).at(c * 2), bank.gamma(0).at(c * 2 + 1)});
    b.push_back({bank.beta(0).at(c * 2), bank.beta(0).at(c * 2 + 1)});
  }
  const auto expect = reference_norm(x, g, b);
  const auto got = copy_values(bank.forward(x, 0, labels, true));
  for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(got[k], expect[k], 1e-12);
}

TEST(NormBank, SliceableConditionalCombinesWidthAndSlicedClassTerms) {
  NormBank bank(NormMode::scbn, 8, WidthConfig(), 3);
  randomize(bank.class_gamma(), 5);
  randomize(bank.class_beta(), 6);
  for (std::size_t i = 0; i < 4; ++i) {
    randomize(bank.gamma(i), 7 + i);
    randomize(bank.beta(i), 11 + i);
    const std::size_t s = active_channels(WidthConfig()[i], 8);
    const Tensor x = random_tensor({5, s}, 30 + i);
    const Labels labels{1, 2, 0, 1, 1};
    std::vector<std::vector<double>> g, b;
    for (std::size_t c : labels) {
      std::vector<double> gr(s), br(s);
      for (std::size_t ch = 0; ch < s; ++ch) {
        gr[ch] = bank.gamma(i).at(ch) * bank.class_gamma().at(c * 8 + ch);
        br[ch] = bank.beta(i).at(ch) + bank.class_beta().at(c * 8 + ch);
      }
      g.push_back(gr);
      b.push_back(br);
    }
    const auto expect = reference_norm(x, g, b);
    const auto got = copy_values(bank.forward(x, i, labels, true));
    for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(got[k], expect[k], 1e-12) << "width " << i;
  }
}

TEST(NormBank, SingleLabelAppliesToTheWholeBatch) {
  NormBank bank(NormMode::scbn, 4, WidthConfig({0.5, 1.0}), 3);
  randomize(bank.class_gamma(), 1);
  const Tensor x = random_tensor({3, 4}, 2);
  EXPECT_EQ(copy_values(bank.forward(x, 1, {2}, true)), copy_values(bank.forward(x, 1, {2, 2, 2}, true)));
}

TEST(NormBank, RunningStatisticsFollowMomentum) {
  NormBank bank(NormMode::sbn, 2, WidthConfig({0.5, 1.0}));
  const Tensor x({4, 2}, {1, 0, 2, 0, 3, 4, 6, 4});
  bank.forward(x, 1, true);
  // mean (3, 2), population variance (3.5, 4)
  EXPECT_NEAR(bank.running_mean(1).at(0), 0.3, 1e-15);
  EXPECT_NEAR(bank.running_mean(1).at(1), 0.2, 1e-15);
  EXPECT_NEAR(bank.running_var(1).at(0), 0.9 + 0.35, 1e-15);
  EXPECT_NEAR(bank.running_var(1).at(1), 0.9 + 0.4, 1e-15);
  EXPECT_EQ(copy_values(bank.running_mean(0)), (std::vector<double>{0.0}));

  const Tensor probe_x({1, 2}, {1.0, 1.0});
  const Tensor y = bank.forward(probe_x, 1, false);
  EXPECT_NEAR(y.at(0), (1.0 - 0.3) / std::sqrt(1.25 + 1e-5), 1e-12);
  EXPECT_NEAR(y.at(1), (1.0 - 0.2) / std::sqrt(1.3 + 1e-5), 1e-12);
  EXPECT_NEAR(bank.running_mean(1).at(0), 0.3, 1e-15);
}

TEST(NormBank, PerClassStatisticsNormalizeEachGroup) {
  NormOptions options;
  options.per_class_stats = true;
  NormBank bank(NormMode::cbn_naive, 2, WidthConfig({0.5, 1.0}), 2, options);
  const Tensor x = random_tensor({6, 2}, 4, -3, 3);
  const Labels labels{0, 1, 1, 0, 1, 0};
  const Tensor y = bank.forward(x, 1, labels, true);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t ch = 0; ch < 2; ++ch) {
      double mu = 0, sq = 0;
      for (std::size_t r = 0; r < 6; ++r)
        if (labels[r] == c) {
          mu += y.at(r * 2 + ch) / 3;
          sq += y.at(r * 2 + ch) * y.at(r * 2 + ch) / 3;
        }
      EXPECT_NEAR(mu, 0.0, 1e-12);
      EXPECT_NEAR(sq, 1.0, 1e-4);
    }
}

TEST(NormBank, InputAndLabelErrors) {
  NormBank bank(NormMode::scbn, 4, WidthConfig({0.5, 1.0}), 3);
  EXPECT_THROW(bank.forward(random_tensor({2, 3}, 1), 0, {0}, true), DimensionError);
  EXPECT_THROW(bank.forward(random_tensor({2, 2}, 1), 0, {}, true), PreconditionError);
  EXPECT_THROW(bank.forward(random_tensor({2, 2}, 1), 0, {3}, true), PreconditionError);
  EXPECT_THROW(bank.forward(random_tensor({3, 2}, 1), 0, {0, 1}, true), PreconditionError);
  NormBank plain(NormMode::sbn, 4, WidthConfig({0.5, 1.0}));
  EXPECT_THROW(plain.forward(random_tensor({2, 2}, 1), 0, {0}, true), PreconditionError);
}

class NormGradient : public ::testing::TestWithParam<std::pair<NormMode, bool>> {};

TEST_P(NormGradient, GradientCheckAtEveryWidthOverTenSeeds) {
  const auto [mode, feature_map] = GetParam();
  const std::size_t classes = mode == NormMode::sbn ? 0 : 3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    NormBank bank(mode, 6, WidthConfig(), classes);
    for (std::size_t i = 0; i < 4; ++i) {
      randomize(bank.gamma(i), seed + 1);
      randomize(bank.beta(i), seed + 2);
      std::vector<Tensor> inputs{bank.gamma(i).clone(), bank.beta(i).clone()};
      if (mode == NormMode::scbn) {
        randomize(bank.class_gamma(), seed + 3);
        inputs.push_back(bank.class_gamma().clone());
        inputs.push_back(bank.class_beta().clone());
      }
      const std::size_t s = active_channels(WidthConfig()[i], 6);
      inputs.push_back(feature_map ? random_tensor({5, s, 2, 2}, seed, -2, 2) : random_tensor({5, s}, seed, -2, 2));
      const Labels labels = classes ? Labels{0, 2, 1, 2, 0} : Labels{};
      const auto f = [&](const std::vector<Tensor>& in) {
        bank.gamma(i) = in[0];
        bank.beta(i) = in[1];
        if (mode == NormMode::scbn) {
          bank.class_gamma() = in[2];
          bank.class_beta() = in[3];
        }
        return probe(bank.forward(in.back(), i, labels, true), seed);
      };
      EXPECT_LT(grad_check(f, inputs), kGradTol) << to_string(mode) << " seed " << seed << " width " << i;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, NormGradient,
                         ::testing::Values(std::pair{NormMode::sbn, false}, std::pair{NormMode::sbn, true},
                                           std::pair{NormMode::cbn_naive, false},
                                           std::pair{NormMode::cbn_naive, true}, std::pair{NormMode::scbn, false},
                                           std::pair{NormMode::scbn, true}),
                         [](const auto& info) {
                           return std::string(to_string(info.param.first)) + (info.param.second ? "_map" : "_vec");
                         });
