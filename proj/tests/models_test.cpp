#include <gtest/gtest.h>

#include <set>
#include <string>
#include <vector>

#include "prefix_support.hpp"

using namespace slimgan;
using slimgan::testing::copy_grad;
using slimgan::testing::copy_values;
using slimgan::testing::probe;
using slimgan::testing::random_tensor;

using slimgan::testing::Coord;
using slimgan::testing::gradient_support;
using slimgan::testing::sliced_region;

TEST(Generator, Mlp2dPresetShapes) {
  Rng rng(1);
  Generator g(GeneratorSpec::mlp2d(), WidthConfig(), rng);
  const Tensor z = random_tensor({7, 8}, 2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.forward(z, i).shape(), (Shape{7, 2}));
  EXPECT_THROW(g.forward(random_tensor({7, 3}, 2), 0), DimensionError);
  EXPECT_THROW(g.forward(z, 4), PreconditionError);
  EXPECT_THROW(g.forward(z, 0, {1}), PreconditionError);
}

TEST(Generator, TinyconvShapesAndRange) {
  Rng rng(1);
  Generator g(GeneratorSpec::tinyconv(), WidthConfig(), rng);
  const Tensor z = random_tensor({3, 32}, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    const Tensor x = g.forward(z, i);
    ASSERT_EQ(x.shape(), (Shape{3, 1, 16, 16}));
    for (double v : x.data()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(GeneratorSpec::tinyconv().sample_shape(), (Shape{1, 16, 16}));
}

TEST(Generator, ConditionalGeneratorNeedsLabels) {
  Rng rng(1);
  GeneratorSpec spec = GeneratorSpec::mlp2d();
  spec.norm = NormMode::scbn;
  spec.num_classes = 5;
  Generator g(spec, WidthConfig(), rng);
  Tensor cb = g.norm_banks()[0].class_beta();
  const Tensor r = random_tensor(cb.shape(), 4);
  std::copy(r.data().begin(), r.data().end(), cb.mutable_data().begin());
  const Tensor z = random_tensor({4, 8}, 2);
  EXPECT_THROW(g.forward(z, 0), PreconditionError);
  EXPECT_EQ(g.forward(z, 0, {1, 2, 3, 4}).shape(), (Shape{4, 2}));
  EXPECT_NE(copy_values(g.forward(z, 3, {0}, false)), copy_values(g.forward(z, 3, {1}, false)))
      << "class banks must change the output";

  GeneratorSpec bad = GeneratorSpec::mlp2d();
  bad.num_classes = 5;
  EXPECT_THROW(Generator(bad, WidthConfig(), rng), PreconditionError);
  bad.num_classes = 0;
  bad.norm = NormMode::cbn_naive;
  EXPECT_THROW(Generator(bad, WidthConfig(), rng), PreconditionError);
}

TEST(PrefixSharing, ParametersOutsideTheSliceNeverChangeTheOutput) {
  Rng rng(11);
  Generator g(GeneratorSpec::mlp2d(), WidthConfig(), rng);
  const Tensor z = random_tensor({6, 8}, 3, -2, 2);
  NamedTensors params = g.parameters();
  for (std::size_t i = 0; i < 4; ++i) {
    const auto reference = copy_values(g.forward(z, i));
    const auto region = sliced_region(g, i);
    std::size_t probed = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto v = params[t].tensor.mutable_data();
      for (std::size_t e = 0; e < v.size(); ++e) {
        if (region.count({t, e})) continue;
        const double saved = v[e];
        v[e] = saved + 123.0;
        ASSERT_EQ(copy_values(g.forward(z, i)), reference) << params[t].name << "[" << e << "] width " << i;
        v[e] = saved;
        ++probed;
      }
    }
    EXPECT_EQ(probed + region.size(), g.parameter_count());
  }
}

TEST(PrefixSharing, GradientSupportGrowsWithWidth) {
  Rng rng(12);
  Generator g(GeneratorSpec::mlp2d(), WidthConfig(), rng);
  const Tensor z = random_tensor({16, 8}, 4, -2, 2);
  std::vector<std::set<Coord>> support;
  for (std::size_t i = 0; i < 4; ++i) {
    support.push_back(gradient_support(g, i, z));
    for (const auto& c : support.back()) EXPECT_TRUE(sliced_region(g, i).count(c));
  }
  for (std::size_t i = 0; i + 1 < 4; ++i) {
    for (const auto& c : support[i]) EXPECT_TRUE(support[i + 1].count(c)) << "width " << i;
    EXPECT_LT(support[i].size(), support[i + 1].size());
  }
}

TEST(PrefixSharing, UniqueParameterCountEqualsWidestCount) {
  Rng rng(13);
  Generator g(GeneratorSpec::mlp2d(), WidthConfig(), rng);
  const auto counts = count_parameters(g);
  // 8→64→64→2 with biases
  EXPECT_EQ(counts.total, 8u * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
  EXPECT_EQ(counts.total, counts.by_width.back());
  EXPECT_EQ(counts.by_width, (std::vector<std::size_t>{8 * 16 + 16 + 16 * 16 + 16 + 16 * 2 + 2,
                                                       8 * 32 + 32 + 32 * 32 + 32 + 32 * 2 + 2,
                                                       8 * 48 + 48 + 48 * 48 + 48 + 48 * 2 + 2, counts.total}));
}

TEST(PrefixSharing, SwitchableBanksAreTheOnlyPrivateScalars) {
  Rng rng(13);
  GeneratorSpec spec = GeneratorSpec::mlp2d();
  spec.norm = NormMode::sbn;
  Generator g(spec, WidthConfig(), rng);
  const auto counts = count_parameters(g);
  // Each of the two hidden layers keeps γ, β for widths 16, 32, 48 beside the widest bank.
  EXPECT_EQ(counts.total - counts.by_width.back(), 2u * 2u * (16 + 32 + 48));
}

TEST(Generator, WholeModelGradientCheck) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (NormMode norm : {NormMode::none, NormMode::sbn}) {
      Rng rng(seed);
      GeneratorSpec spec = GeneratorSpec::mlp2d();
      spec.hidden = {6, 5};
      spec.norm = norm;
      Generator g(spec, WidthConfig({0.5, 1.0}), rng);
      for (std::size_t i = 0; i < 2; ++i) {
        NamedTensors params = g.parameters();
        std::vector<Tensor> inputs;
        for (auto& p : params) inputs.push_back(p.tensor);
        const Tensor z = random_tensor({5, 8}, seed + 9, -2, 2);
        const auto f = [&](const std::vector<Tensor>&) { return probe(g.forward(z, i), seed); };
        EXPECT_LT(grad_check(f, inputs), 1e-4) << "seed " << seed << " width " << i;
      }
    }
  }
}

TEST(Discriminator, PerWidthHeadsShareTheTrunk) {
  Rng rng(2);
  Discriminator d(DiscriminatorSpec::mlp2d(), WidthConfig(), rng);
  EXPECT_EQ(d.head_count(), 4u);
  const Tensor x = random_tensor({5, 2}, 3);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(d.forward(x, i).shape(), (Shape{5, 1}));
  EXPECT_NE(copy_values(d.forward(x, 0, {}, false)), copy_values(d.forward(x, 1, {}, false)));

  std::set<std::string> names;
  for (const auto& p : d.parameters()) names.insert(p.name);
  EXPECT_TRUE(names.count("trunk.0.weight"));
  EXPECT_TRUE(names.count("trunk.1.weight"));
  EXPECT_TRUE(names.count("head.3.out.weight"));
  EXPECT_FALSE(names.count("head.0.layer.0.weight"));
}

TEST(Discriminator, HeadGradientsStayPrivate) {
  Rng rng(2);
  Discriminator d(DiscriminatorSpec::mlp2d(), WidthConfig(), rng);
  NamedTensors params = d.parameters();
  probe(d.forward(random_tensor({5, 2}, 3), 2), 1).backward();
  for (auto& p : params) {
    const bool expected = p.name.rfind("trunk.", 0) == 0 || p.name.rfind("head.2.", 0) == 0;
    EXPECT_EQ(p.tensor.has_grad(), expected) << p.name;
  }
}

TEST(Discriminator, PrivateLayersWithFewerSharedLayers) {
  Rng rng(2);
  DiscriminatorSpec spec = DiscriminatorSpec::mlp2d();
  spec.shared_layers = 0;
  Discriminator d(spec, WidthConfig(), rng);
  for (const auto& p : d.parameters()) EXPECT_NE(p.name.rfind("trunk.", 0), 0u) << p.name;
  EXPECT_EQ(d.parameter_count(), 4u * (2 * 64 + 64 + 64 * 64 + 64 + 64 + 1));
}

TEST(Discriminator, SingleHeadServesEveryWidth) {
  Rng rng(2);
  DiscriminatorSpec spec = DiscriminatorSpec::mlp2d();
  spec.heads = HeadMode::single;
  Discriminator d(spec, WidthConfig(), rng);
  EXPECT_EQ(d.head_count(), 1u);
  const Tensor x = random_tensor({5, 2}, 3);
  EXPECT_EQ(copy_values(d.forward(x, 0, {}, false)), copy_values(d.forward(x, 3, {}, false)));
}

TEST(Discriminator, SlimmableDiscriminatorNarrowsWithWidth) {
  Rng rng(2);
  DiscriminatorSpec spec = DiscriminatorSpec::mlp2d();
  spec.slimmable = true;
  spec.spectral_norm = false;
  Discriminator d(spec, WidthConfig(), rng);
  EXPECT_EQ(d.head_count(), 1u);
  NamedTensors params = d.parameters();
  probe(d.forward(random_tensor({4, 2}, 3), 0), 1).backward();
  std::size_t touched = 0;
  for (auto& p : params)
    for (double v : copy_grad(p.tensor)) touched += v != 0.0;
  // 2→16→16→1 at width 0.25
  EXPECT_EQ(touched, 2u * 16 + 16 + 16 * 16 + 16 + 16 + 1);
}

TEST(Discriminator, ProjectionAddsTheClassInnerProduct) {
  Rng rng(2);
  DiscriminatorSpec spec = DiscriminatorSpec::mlp2d();
  spec.projection = true;
  spec.num_classes = 3;
  Discriminator d(spec, WidthConfig(), rng);
  const Tensor x = random_tensor({4, 2}, 3);
  const Labels labels{0, 1, 2, 1};
  EXPECT_THROW(d.forward(x, 1), PreconditionError);
  const auto before = copy_values(d.forward(x, 1, labels, false));
  auto e = d.embedding(1).mutable_data();
  for (std::size_t k = 0; k < 64; ++k) e[64 + k] += 0.5;  // class 1 row
  const auto after = copy_values(d.forward(x, 1, labels, false));
  EXPECT_EQ(after[0], before[0]);
  EXPECT_EQ(after[2], before[2]);
  EXPECT_NE(after[1], before[1]);
  EXPECT_NE(after[3], before[3]);
  EXPECT_THROW(d.forward(x, 1, {0, 1, 3, 1}, false), PreconditionError);
}

TEST(Discriminator, TinyconvForward) {
  Rng rng(2);
  Discriminator d(DiscriminatorSpec::tinyconv(), WidthConfig(), rng);
  EXPECT_EQ(d.forward(random_tensor({3, 1, 16, 16}, 1), 2).shape(), (Shape{3, 1}));
}

TEST(LatentSampler, SeededStreamsRepeatAndRestore) {
  LatentSampler a(4, 9), b(4, 9);
  EXPECT_EQ(copy_values(a.sample(3)), copy_values(b.sample(3)));
  const std::string state = a.state();
  const auto next = copy_values(a.sample(5));
  const Labels labels = a.sample_labels(6, 3);
  b.restore(state);
  EXPECT_EQ(copy_values(b.sample(5)), next);
  EXPECT_EQ(b.sample_labels(6, 3), labels);
  EXPECT_TRUE(a.sample_labels(4, 0).empty());
  EXPECT_THROW(b.restore("garbage"), FormatError);
}

TEST(CountParameters, TinyconvBreakdownIsMonotone) {
  Rng rng(1);
  Generator g(GeneratorSpec::tinyconv(), WidthConfig(), rng);
  const auto counts = count_parameters(g);
  ASSERT_EQ(counts.by_width.size(), 4u);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_LT(counts.by_width[i - 1], counts.by_width[i]);
  EXPECT_GE(counts.total, counts.by_width.back());
}
