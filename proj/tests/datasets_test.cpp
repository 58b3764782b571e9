#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "pda/datasets.hpp"
#include "pda/errors.hpp"
#include "pda/evaluation.hpp"
#include "pda/experiment.hpp"

namespace {

pda::SyntheticSpec small_spec() {
  pda::SyntheticSpec s;
  s.source_classes = 5;
  s.target_classes = 3;
  s.dim = 4;
  s.source_per_class = 20;
  s.target_per_class = 10;
  s.seed = 42;
  return s;
}

TEST(Synthetic, ShapesAndLabelSets) {
  pda::SyntheticSpec spec;
  spec.seed = 1;
  const auto pair = pda::generate_synthetic(spec);
  EXPECT_EQ(pair.source.size(), 8u * 200u);
  EXPECT_EQ(pair.target.size(), 4u * 100u);
  EXPECT_EQ(pair.source.role(), pda::DomainRole::source);
  EXPECT_EQ(pair.target.role(), pda::DomainRole::target);
  EXPECT_TRUE(pair.target.has_hidden_labels());
  for (const auto& s : pair.target.samples()) EXPECT_FALSE(s.label.has_value());

  // Hidden labels are only observable through the file format.
  const auto text = pda::format_feature_text(pair.target);
  std::set<int> hidden;
  std::size_t pos = 0;
  while ((pos = text.find('#', pos + 1)) != std::string::npos) {
    if (text.compare(pos, 5, "#pda-") == 0) continue;
    hidden.insert(std::stoi(text.substr(pos + 1)));
  }
  EXPECT_EQ(hidden, (std::set<int>{0, 1, 2, 3}));
}

TEST(Synthetic, ZeroNoiseIdentityShiftCoincidesWithMeans) {
  auto spec = small_spec();
  spec.cluster_std = 1e-9;
  const auto pair = pda::generate_synthetic(spec);
  const auto means = pda::synthetic_class_means(spec);
  for (const auto& s : pair.source.samples()) {
    for (std::size_t d = 0; d < spec.dim; ++d) {
      EXPECT_NEAR(s.features[d], means(static_cast<std::size_t>(*s.label), d), 1e-5);
    }
  }
  // Target samples are emitted class by class, target_per_class each.
  for (std::size_t i = 0; i < pair.target.size(); ++i) {
    const std::size_t c = i / spec.target_per_class;
    for (std::size_t d = 0; d < spec.dim; ++d) {
      EXPECT_NEAR(pair.target[i].features[d], means(c, d), 1e-5);
    }
  }
}

TEST(Synthetic, UnshiftedTargetMeansMatchSourceMeans) {
  auto spec = small_spec();
  spec.source_per_class = 400;
  spec.target_per_class = 400;
  const auto pair = pda::generate_synthetic(spec);
  const double bound = 3.0 * spec.cluster_std / std::sqrt(400.0);
  for (std::size_t c = 0; c < spec.target_classes; ++c) {
    std::vector<double> src(spec.dim, 0.0), tgt(spec.dim, 0.0);
    for (const auto& s : pair.source.samples()) {
      if (*s.label != static_cast<int>(c)) continue;
      for (std::size_t d = 0; d < spec.dim; ++d) src[d] += s.features[d] / 400.0;
    }
    for (std::size_t i = c * 400; i < (c + 1) * 400; ++i) {
      for (std::size_t d = 0; d < spec.dim; ++d) tgt[d] += pair.target[i].features[d] / 400.0;
    }
    // Difference of two sample means: each within the bound of the true mean.
    for (std::size_t d = 0; d < spec.dim; ++d) EXPECT_LT(std::abs(src[d] - tgt[d]), 2.0 * bound);
  }
}

TEST(Synthetic, RotationAndTranslationMoveTargetMeans) {
  auto spec = small_spec();
  spec.cluster_std = 1e-9;
  spec.shift.rotation_angle = M_PI / 2.0;
  spec.shift.translation = {1.0, 0.0, 0.0, 0.0};
  const auto pair = pda::generate_synthetic(spec);
  const auto means = pda::synthetic_class_means(spec);
  const auto& x = pair.target[0].features;
  // 90 degree rotation in (0, 1): (a, b) -> (-b, a), then shift along e0.
  EXPECT_NEAR(x[0], -means(0, 1) + 1.0, 1e-5);
  EXPECT_NEAR(x[1], means(0, 0), 1e-5);
  EXPECT_NEAR(x[2], means(0, 2), 1e-5);
}

TEST(Synthetic, Deterministic) {
  const auto a = pda::generate_synthetic(small_spec());
  const auto b = pda::generate_synthetic(small_spec());
  EXPECT_EQ(pda::format_feature_text(a.source), pda::format_feature_text(b.source));
  EXPECT_EQ(pda::format_feature_text(a.target), pda::format_feature_text(b.target));
  auto other = small_spec();
  other.seed = 43;
  EXPECT_NE(pda::format_feature_text(pda::generate_synthetic(other).source),
            pda::format_feature_text(a.source));
}

TEST(Synthetic, InvalidSpecRejected) {
  auto spec = small_spec();
  spec.target_classes = 6;
  EXPECT_THROW(spec.validate(), pda::ConfigError);
  spec = small_spec();
  spec.shift.translation = {1.0};
  EXPECT_THROW(spec.validate(), pda::ConfigError);
  spec = small_spec();
  spec.dim = 1;
  spec.shift.rotation_angle = 0.3;
  EXPECT_THROW(spec.validate(), pda::ConfigError);
}

TEST(FeatureFile, EmptyRoundTrip) {
  const pda::Dataset empty(pda::DomainRole::source, 3, 4, {});
  const auto text = pda::format_feature_text(empty);
  EXPECT_EQ(text, "#pda-features v1 d=3 k=4 role=source\n");
  EXPECT_EQ(pda::parse_feature_text(text), empty);
}

TEST(FeatureFile, LabeledRoundTrip) {
  const pda::Dataset ds(pda::DomainRole::source, 2, 3,
                        {{{0.1f, -2.5f}, 2}, {{1e-7f, 3.25e6f}, 0}});
  EXPECT_EQ(pda::parse_feature_text(pda::format_feature_text(ds)), ds);
}

TEST(FeatureFile, SyntheticRoundTripIsExact) {
  const auto pair = pda::generate_synthetic(small_spec());
  const auto dir = std::filesystem::temp_directory_path() / "pda_dataset_test";
  std::filesystem::create_directories(dir);
  pda::write_feature_file(pair.source, dir / "s.txt");
  pda::write_feature_file(pair.target, dir / "t.txt");
  EXPECT_EQ(pda::read_feature_file(dir / "s.txt"), pair.source);
  EXPECT_EQ(pda::read_feature_file(dir / "t.txt"), pair.target);
  std::filesystem::remove_all(dir);
}

TEST(FeatureFile, ShortLineReportsLineNumber) {
  const std::string text =
      "#pda-features v1 d=3 k=2 role=source\n"
      "0,1,2,3\n"
      "1,1,2\n";
  try {
    pda::parse_feature_text(text);
    FAIL() << "expected ParseError";
  } catch (const pda::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(FeatureFile, MalformedInputsRejected) {
  const std::string header = "#pda-features v1 d=2 k=2 role=source\n";
  EXPECT_THROW(pda::parse_feature_text("0,1,2\n"), pda::ParseError);
  EXPECT_THROW(pda::parse_feature_text(header + "5,1,2\n"), pda::ParseError);
  EXPECT_THROW(pda::parse_feature_text(header + "0,1,x\n"), pda::ParseError);
  EXPECT_THROW(pda::parse_feature_text(header + "?,1,2\n"), pda::ParseError);
  const std::string target = "#pda-features v1 d=2 k=2 role=target\n";
  EXPECT_THROW(pda::parse_feature_text(target + "0,1,2\n"), pda::ParseError);
  EXPECT_THROW(pda::parse_feature_text(target + "?,1,2#0\n?,1,2\n"), pda::ParseError);
  EXPECT_THROW(pda::read_feature_file("/nonexistent/pda/file"), pda::IoError);
}

TEST(FeatureFile, TargetWithoutHiddenLabelsCannotBeEvaluated) {
  const pda::Dataset t = pda::parse_feature_text("#pda-features v1 d=1 k=2 role=target\n?,0.5\n");
  EXPECT_FALSE(t.has_hidden_labels());
}

TEST(Batches, RemainderHandling) {
  pda::Rng rng(1);
  const auto b = pda::epoch_batches(5, 2, rng);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 2u);
  EXPECT_EQ(b[1].size(), 2u);
  EXPECT_EQ(b[2].size(), 1u);
}

TEST(Batches, SingleBatchIsPermutation) {
  pda::Rng rng(2);
  const auto b = pda::epoch_batches(7, 100, rng);
  ASSERT_EQ(b.size(), 1u);
  auto sorted = b[0];
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expect(7);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(sorted, expect);
}

TEST(Batches, SameSeedSameSequence) {
  pda::Rng a(99), b(99);
  EXPECT_EQ(pda::epoch_batches(50, 8, a), pda::epoch_batches(50, 8, b));
}

TEST(Batches, UnionCoversEveryIndexOnce) {
  std::mt19937_64 gen(17);
  std::uniform_int_distribution<std::size_t> n_dist(1, 300), b_dist(1, 64);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = n_dist(gen), bs = b_dist(gen);
    pda::Rng rng(t);
    const auto batches = pda::epoch_batches(n, bs, rng);
    std::vector<std::size_t> all;
    for (const auto& batch : batches) {
      EXPECT_LE(batch.size(), bs);
      all.insert(all.end(), batch.begin(), batch.end());
    }
    std::sort(all.begin(), all.end());
    ASSERT_EQ(all.size(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i], i);
  }
}

TEST(Batches, RejectsDegenerateArguments) {
  pda::Rng rng(0);
  EXPECT_THROW(pda::epoch_batches(0, 4, rng), pda::InvalidInput);
  EXPECT_THROW(pda::epoch_batches(4, 0, rng), pda::InvalidInput);
}

TEST(DatasetInvariants, RoleLabelContract) {
  EXPECT_THROW(pda::Dataset(pda::DomainRole::source, 1, 2, {{{0.f}, std::nullopt}}), pda::InvalidInput);
  EXPECT_THROW(pda::Dataset(pda::DomainRole::target, 1, 2, {{{0.f}, 1}}), pda::InvalidInput);
  EXPECT_THROW(pda::Dataset(pda::DomainRole::source, 1, 2, {{{0.f}, 2}}), pda::InvalidInput);
  EXPECT_THROW(pda::Dataset(pda::DomainRole::source, 2, 2, {{{0.f}, 0}}), pda::InvalidInput);
  EXPECT_THROW(pda::Dataset(pda::DomainRole::target, 1, 2, {{{0.f}, std::nullopt}}, std::vector<int>{0, 1}),
               pda::InvalidInput);
  const pda::Dataset t(pda::DomainRole::target, 1, 2, {{{0.f}, std::nullopt}});
  const std::vector<std::size_t> idx{0};
  EXPECT_THROW(t.labels(idx), pda::InvalidInput);
}

}  // namespace
