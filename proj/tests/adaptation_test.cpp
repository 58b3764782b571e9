#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "pda/adaptation.hpp"
#include "pda/errors.hpp"
#include "pda/numerics.hpp"

namespace {

pda::Matrix rows(std::initializer_list<std::vector<double>> r) {
  pda::Matrix m(r.size(), r.begin()->size());
  std::size_t i = 0;
  for (const auto& row : r) {
    for (std::size_t j = 0; j < row.size(); ++j) m(i, j) = row[j];
    ++i;
  }
  return m;
}

pda::Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  pda::Matrix m(r, c);
  for (auto& v : m.values()) v = n(rng);
  return m;
}

pda::Matrix random_unit_rows(std::size_t r, std::size_t c, std::uint64_t seed) {
  auto m = random_matrix(r, c, seed);
  for (std::size_t i = 0; i < r; ++i) {
    const auto u = pda::l2_normalize(m.row(i));
    std::copy(u.values().begin(), u.values().end(), m.row(i).begin());
  }
  return m;
}

pda::PrototypeMatrix frozen(pda::Matrix w) {
  return pda::PrototypeMatrix(std::move(w), true);
}

TEST(LossAlign, OneHotIsZeroUniformIsLogK) {
  pda::Matrix w(2, 3);
  w(0, 0) = 1e4;
  const auto codes = rows({{1.0, 0.0}, {1.0, 0.0}});
  EXPECT_EQ(pda::loss_align(frozen(w), codes).value, 0.0);
  const auto uniform = pda::loss_align(frozen(pda::Matrix(2, 4)), random_unit_rows(5, 2, 1));
  EXPECT_NEAR(uniform.value, std::log(4.0), 1e-12);
}

TEST(LossAlign, PrototypeGradientIsExactlyZero) {
  const auto a = pda::loss_align(frozen(random_matrix(3, 5, 2)), random_unit_rows(4, 3, 3));
  ASSERT_EQ(a.d_prototypes.rows(), 3u);
  ASSERT_EQ(a.d_prototypes.cols(), 5u);
  for (double v : a.d_prototypes.values()) EXPECT_EQ(v, 0.0);
}

TEST(LossAlign, RequiresFrozenPrototypes) {
  EXPECT_THROW(pda::loss_align(pda::PrototypeMatrix(random_matrix(3, 5, 2)), random_unit_rows(2, 3, 3)),
               pda::InvalidInput);
}

TEST(PseudoLabels, SingleMemberSingleEpochIsDirectSoftmax) {
  const auto mu = frozen(random_matrix(4, 6, 4));
  auto ens = pda::EnsembleState::from_prototypes(mu, 1, 1);
  const auto z = random_unit_rows(9, 4, 5);
  const auto table = pda::update_pseudo_labels(ens, z);
  const auto direct = pda::classify(mu.weights(), z).probs;
  for (std::size_t i = 0; i < 9; ++i) {
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(table.probs[i][c], direct(i, c));
  }
}

TEST(PseudoLabels, ConstantHistoryAveragesToItself) {
  pda::LogitHistory h(4);
  const auto logits = rows({{0.5, -1.0, 2.0}});
  for (int i = 0; i < 4; ++i) h.push(logits);
  const auto table = pda::pseudo_labels_from_history(h);
  const auto direct = pda::softmax(logits.row(0));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(table.probs[0][c], direct[c], 1e-15);
}

TEST(PseudoLabels, TwoEpochMeanThenSoftmax) {
  pda::LogitHistory h(3);
  const auto l1 = random_matrix(5, 4, 6), l2 = random_matrix(5, 4, 7);
  h.push(l1);
  h.push(l2);
  const auto table = pda::pseudo_labels_from_history(h);
  for (std::size_t i = 0; i < 5; ++i) {
    double z = 0.0;
    std::vector<double> e(4);
    for (std::size_t c = 0; c < 4; ++c) z += (e[c] = std::exp((l1(i, c) + l2(i, c)) / 2.0));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(table.probs[i][c], e[c] / z, 1e-12);
  }
}

TEST(PseudoLabels, HistoryDropsOldestEntry) {
  pda::LogitHistory h(2);
  h.push(rows({{100.0, 0.0}}));
  h.push(rows({{0.0, 1.0}}));
  h.push(rows({{0.0, 1.0}}));
  EXPECT_EQ(h.size(), 2u);
  EXPECT_EQ(pda::pseudo_labels_from_history(h).labels[0], 1);
  EXPECT_THROW(pda::pseudo_labels_from_history(pda::LogitHistory(2)), pda::InvalidInput);
}

TEST(PseudoLabels, ArgmaxInvariantToConstantShift) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    pda::LogitHistory a(3), b(3);
    for (int e = 0; e < 3; ++e) {
      auto l = random_matrix(6, 5, seed * 10 + e);
      a.push(l);
      for (auto& v : l.values()) v += 7.25;
      b.push(l);
    }
    EXPECT_EQ(pda::pseudo_labels_from_history(a).labels, pda::pseudo_labels_from_history(b).labels);
  }
}

TEST(ComplementSets, FiveClassExample) {
  pda::Rng rng(1);
  const auto cs = pda::gen_complement_sets(0, 5, 2, 2, rng);
  ASSERT_EQ(cs.sets.size(), 2u);
  std::set<std::size_t> all;
  for (const auto& s : cs.sets) {
    EXPECT_EQ(s.size(), 2u);
    all.insert(s.begin(), s.end());
  }
  EXPECT_EQ(all.size(), 4u);
  EXPECT_FALSE(all.count(0));
}

TEST(ComplementSets, ExhaustiveCoverage) {
  pda::Rng rng(2);
  const auto cs = pda::gen_complement_sets(3, 10, 3, 3, rng);
  std::set<std::size_t> all;
  for (const auto& s : cs.sets) all.insert(s.begin(), s.end());
  EXPECT_EQ(all, (std::set<std::size_t>{0, 1, 2, 4, 5, 6, 7, 8, 9}));
}

TEST(ComplementSets, RejectsOversizedRequest) {
  pda::Rng rng(3);
  EXPECT_THROW(pda::gen_complement_sets(0, 5, 2, 3, rng), pda::ConfigError);
  EXPECT_THROW(pda::gen_complement_sets(5, 5, 1, 1, rng), pda::InvalidInput);
}

TEST(ComplementSets, SeededAndVaried) {
  pda::Rng a(4), b(4);
  EXPECT_EQ(pda::gen_complement_sets(1, 8, 3, 2, a), pda::gen_complement_sets(1, 8, 3, 2, b));
  std::set<std::vector<std::size_t>> seen;
  for (int t = 0; t < 50; ++t) seen.insert(pda::gen_complement_sets(1, 8, 1, 2, a).sets[0]);
  EXPECT_GT(seen.size(), 5u);
}

pda::NlLoss nl_single(const pda::Matrix& weights, const pda::Matrix& code,
                      std::vector<std::size_t> set) {
  const std::vector<pda::Matrix> w{weights};
  const pda::Matrix h(1, weights.cols());
  const std::vector<pda::ComplementSets> sets{pda::ComplementSets{{std::move(set)}}};
  return pda::loss_nl({&w, &code, &h, 1, sets});
}

TEST(LossNl, SuppressedComplementsGiveZero) {
  pda::Matrix w(2, 3);
  w(0, 0) = 1e4;
  const auto nl = nl_single(w, rows({{1.0, 0.0}}), {1, 2});
  EXPECT_EQ(nl.value, 0.0);
}

TEST(LossNl, HalfProbabilityTerm) {
  const auto nl = nl_single(pda::Matrix(2, 2), rows({{0.6, 0.8}}), {1});
  EXPECT_NEAR(nl.value, -(0.5 * std::log(0.5)), 1e-12);
  EXPECT_NEAR(nl.value, 0.346574, 1e-6);
}

TEST(LossNl, HistoryEntersAsConstant) {
  // With a heavy history the current logits barely move p̃.
  std::vector<pda::Matrix> w{random_matrix(3, 4, 8)};
  const auto z = random_unit_rows(1, 3, 9);
  pda::Matrix hist(1, 4);
  hist(0, 2) = 50.0;
  const std::vector<pda::ComplementSets> sets{pda::ComplementSets{{{0, 1}}}};
  const auto with_hist = pda::loss_nl({&w, &z, &hist, 6, sets});
  EXPECT_LT(with_hist.value, 1e-3);
  for (double v : with_hist.d_weights[0].values()) EXPECT_LT(std::abs(v), 1e-3);
}

TEST(Cac, Examples) {
  EXPECT_EQ(pda::cac(pda::ProbVector({0, 0, 1, 0}), 4), 1.0);
  EXPECT_NEAR(pda::cac(pda::ProbVector({0.5, 0.5, 0, 0}), 4), 0.75, 1e-15);
  for (std::size_t k = 2; k <= 64; ++k) {
    const pda::ProbVector u(std::vector<double>(k, 1.0 / static_cast<double>(k)));
    EXPECT_NEAR(pda::cac(u, k), 1.0 / static_cast<double>(k), 1e-9);
  }
}

TEST(Cac, BoundedOnRandomVectors) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 5000; ++t) {
    const std::size_t k = 2 + t % 30;
    std::normal_distribution<double> n(0.0, 0.1 + (t % 7));
    std::vector<double> l(k);
    for (auto& v : l) v = n(rng);
    const double c = pda::cac(pda::softmax(l), k);
    ASSERT_GE(c, 0.0);
    ASSERT_LE(c, 1.0);
  }
}

TEST(ConfidentSubset, Examples) {
  auto s = pda::build_confident_subset(std::vector<double>{1.0, 0.0});
  EXPECT_DOUBLE_EQ(s.tau, 0.5);
  EXPECT_EQ(s.members, (std::vector<std::size_t>{0}));
  s = pda::build_confident_subset(std::vector<double>{0.4, 0.4, 0.4});
  EXPECT_TRUE(s.members.empty());
  s = pda::build_confident_subset(std::vector<double>{0.9, 0.8, 0.1});
  EXPECT_NEAR(s.tau, 0.6, 1e-15);
  EXPECT_EQ(s.members, (std::vector<std::size_t>{0, 1}));
}

TEST(LossInter, OrthogonalExampleIsMinusTwo) {
  const auto codes = rows({{1.0, 0.0}, {0.0, 1.0}});
  const auto mu = frozen(rows({{1.0, 0.0}, {0.0, 1.0}}));
  const std::vector<int> y{0, 1};
  EXPECT_NEAR(pda::loss_inter(codes, y, mu).value, -2.0, 1e-15);
}

TEST(LossInter, SharedLabelLeavesOnlyPrototypeTerm) {
  const auto codes = random_unit_rows(4, 3, 11);
  const auto mu = frozen(random_matrix(3, 4, 12));
  const std::vector<int> y{2, 2, 2, 2};
  double proto = 0.0, count = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      if (c == 2) continue;
      std::vector<double> col{mu.weights()(0, c), mu.weights()(1, c), mu.weights()(2, c)};
      proto += pda::cosine_distance(codes.row(i), col);
      count += 1.0;
    }
  }
  EXPECT_NEAR(pda::loss_inter(codes, y, mu).value, -(proto / count), 1e-12);
}

TEST(LossIntra, CompactClassesAtPrototypeAreZero) {
  const auto mu = frozen(rows({{1.0, 0.0}, {0.0, 1.0}}));
  const auto codes = rows({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}});
  const std::vector<int> y{0, 0, 1};
  EXPECT_NEAR(pda::loss_intra(codes, y, mu).value, 0.0, 1e-15);
}

TEST(LossIntra, AntipodalPairTermIsTwo) {
  const auto mu = frozen(rows({{1.0, 0.0}, {0.0, 1.0}}));
  const auto codes = rows({{1.0, 0.0}, {-1.0, 0.0}});
  const std::vector<int> y{0, 0};
  // pair term 2, prototype term (0 + 2) / 2
  EXPECT_NEAR(pda::loss_intra(codes, y, mu).value, 3.0, 1e-15);
}

TEST(Phases, Boundaries) {
  pda::AdaptConfig cfg;
  EXPECT_EQ(pda::phase_for_epoch(cfg, 0), pda::AdaptPhase::warmup);
  EXPECT_EQ(pda::phase_for_epoch(cfg, 4), pda::AdaptPhase::warmup);
  EXPECT_EQ(pda::phase_for_epoch(cfg, 5), pda::AdaptPhase::negative_learning);
  EXPECT_EQ(pda::phase_for_epoch(cfg, 15), pda::AdaptPhase::negative_learning);
  EXPECT_EQ(pda::phase_for_epoch(cfg, 16), pda::AdaptPhase::self_training);
}

TEST(AdaptConfigValidation, Limits) {
  pda::AdaptConfig cfg;
  EXPECT_NO_THROW(cfg.validate(10));
  EXPECT_THROW(cfg.validate(9), pda::ConfigError);
  cfg.share_complement_set = true;
  EXPECT_NO_THROW(cfg.validate(4));
  cfg = {};
  cfg.warmup_epochs = 20;
  EXPECT_THROW(cfg.validate(10), pda::ConfigError);
  cfg = {};
  cfg.ensemble_size = 0;
  EXPECT_THROW(cfg.validate(10), pda::ConfigError);
}

// ---- full loop -------------------------------------------------------------

struct Fixture {
  pda::Encoder encoder;
  pda::PrototypeMatrix prototypes;
  pda::Dataset target;
};

Fixture make_fixture() {
  pda::SyntheticSpec spec;
  spec.source_classes = 6;
  spec.target_classes = 3;
  spec.dim = 5;
  spec.source_per_class = 30;
  spec.target_per_class = 20;
  spec.cluster_std = 1.5;
  spec.shift.rotation_angle = 0.5;
  spec.seed = 77;
  auto pair = pda::generate_synthetic(spec);
  pda::EncoderArchitecture arch;
  arch.input_dim = 5;
  arch.hidden = {12};
  arch.code_dim = 6;
  Fixture f{pda::Encoder(arch, 1), pda::PrototypeMatrix(6, 6, 1), std::move(pair.target)};
  pda::SourcePhaseConfig scfg;
  scfg.epochs = 5;
  scfg.seed = 1;
  pda::train_source(f.encoder, f.prototypes, pair.source, scfg);
  return f;
}

pda::AdaptConfig small_adapt() {
  pda::AdaptConfig cfg;
  cfg.ensemble_size = 2;
  cfg.complement_size = 2;
  cfg.history = 3;
  cfg.warmup_epochs = 2;
  cfg.switch_epoch = 5;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  cfg.seed = 9;
  return cfg;
}

TEST(Adapt, WarmupOnlyEqualsStandaloneAlignment) {
  auto f = make_fixture();
  pda::AdaptConfig cfg = small_adapt();
  cfg.alpha = cfg.beta = 0.0;
  cfg.ensemble_size = 1;
  cfg.complement_size = 1;
  cfg.warmup_epochs = 4;
  cfg.epochs = 4;

  pda::Encoder ref = f.encoder;
  pda::Rng rng = pda::make_rng(cfg.seed, pda::RngStream::target_batches);
  auto velocity = ref.zero_gradients();
  const auto all_x = f.target.all_features();
  std::vector<double> ref_losses;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = pda::lr_schedule(e, cfg.lr0);
    double sum = 0.0;
    for (const auto& batch : pda::epoch_batches(f.target.size(), cfg.batch_size, rng)) {
      const auto fwd = pda::encode(ref, pda::select_rows(all_x, batch));
      const auto a = pda::loss_align(f.prototypes, fwd.unit_codes);
      sum += a.value * static_cast<double>(batch.size());
      pda::apply_sgd_momentum(ref, pda::encoder_backward(ref, fwd, a.d_codes), velocity, lr);
    }
    ref_losses.push_back(sum / static_cast<double>(f.target.size()));
  }

  const auto result = pda::adapt(f.encoder, f.prototypes, f.target, cfg);
  EXPECT_EQ(f.encoder, ref);
  ASSERT_EQ(result.log.size(), ref_losses.size());
  for (std::size_t e = 0; e < ref_losses.size(); ++e) {
    EXPECT_EQ(result.log[e].loss_align, ref_losses[e]);
    EXPECT_EQ(result.log[e].loss_nl, 0.0);
    EXPECT_EQ(result.log[e].loss_inter, 0.0);
    EXPECT_EQ(result.log[e].loss_intra, 0.0);
  }
  // Classifiers untouched during warm-up.
  EXPECT_EQ(result.ensemble.weights[0], f.prototypes.weights());
}

TEST(Adapt, ZeroEpochsLeavesEncoder) {
  auto f = make_fixture();
  const auto before = f.encoder;
  auto cfg = small_adapt();
  cfg.epochs = 0;
  const auto result = pda::adapt(f.encoder, f.prototypes, f.target, cfg);
  EXPECT_EQ(f.encoder, before);
  EXPECT_TRUE(result.log.empty());
  for (const auto& w : result.ensemble.weights) EXPECT_EQ(w, f.prototypes.weights());
}

TEST(Adapt, InstrumentedRunKeepsInvariants) {
  auto f = make_fixture();
  const auto checksum = pda::checksum(f.prototypes);
  auto cfg = small_adapt();
  std::size_t refreshes = 0, checked_sets = 0;
  pda::AdaptHooks hooks;
  hooks.on_refresh = [&](std::size_t epoch, const pda::PseudoLabelTable& table,
                         const pda::ConfidentSubset& subset,
                         const std::vector<pda::ComplementSets>& sets) {
    ++refreshes;
    double mean = 0.0;
    for (double c : table.cac) {
      EXPECT_GE(c, 0.0);
      EXPECT_LE(c, 1.0);
      mean += c;
    }
    mean /= static_cast<double>(table.cac.size());
    EXPECT_NEAR(subset.tau, mean, 1e-12);
    for (std::size_t j : subset.members) EXPECT_GT(table.cac[j], subset.tau);
    const bool nl = pda::phase_for_epoch(cfg, epoch) == pda::AdaptPhase::negative_learning;
    EXPECT_EQ(sets.empty(), !nl);
    for (std::size_t j = 0; j < sets.size(); ++j) {
      std::set<std::size_t> seen;
      ASSERT_EQ(sets[j].sets.size(), cfg.ensemble_size);
      for (const auto& s : sets[j].sets) {
        EXPECT_EQ(s.size(), cfg.complement_size);
        for (std::size_t c : s) {
          EXPECT_NE(static_cast<int>(c), table.labels[j]);
          EXPECT_TRUE(seen.insert(c).second);
        }
      }
      ++checked_sets;
    }
  };
  const auto result = pda::adapt(f.encoder, f.prototypes, f.target, cfg, hooks);
  EXPECT_EQ(refreshes, cfg.epochs);
  EXPECT_EQ(checked_sets, f.target.size() * 4);  // epochs 2..5
  EXPECT_EQ(pda::checksum(f.prototypes), checksum);
  ASSERT_EQ(result.log.size(), cfg.epochs);
  for (const auto& m : result.log) EXPECT_FALSE(m.target_acc.has_value());
  EXPECT_EQ(result.ensemble.history.size(), 3u);
}

TEST(Adapt, SharedComplementSetIsIdenticalAcrossMembers) {
  auto f = make_fixture();
  auto cfg = small_adapt();
  cfg.complement_size = 1;
  cfg.share_complement_set = true;
  pda::AdaptHooks hooks;
  hooks.on_refresh = [&](std::size_t, const pda::PseudoLabelTable&, const pda::ConfidentSubset&,
                         const std::vector<pda::ComplementSets>& sets) {
    for (const auto& s : sets) EXPECT_EQ(s.sets[0], s.sets[1]);
  };
  pda::adapt(f.encoder, f.prototypes, f.target, cfg, hooks);
}

TEST(Adapt, GeometryWeightsZeroLogZeroGeometry) {
  auto f = make_fixture();
  auto cfg = small_adapt();
  cfg.alpha = cfg.beta = 0.0;
  const auto result = pda::adapt(f.encoder, f.prototypes, f.target, cfg);
  for (const auto& m : result.log) {
    EXPECT_EQ(m.loss_inter, 0.0);
    EXPECT_EQ(m.loss_intra, 0.0);
  }
  auto g = make_fixture();
  const auto full = pda::adapt(g.encoder, g.prototypes, g.target, small_adapt());
  EXPECT_NE(full.log.back().loss_intra, 0.0);
}

TEST(Adapt, UnconfidentSubsetModeUsesAllSamples) {
  auto f = make_fixture();
  auto cfg = small_adapt();
  cfg.use_confident_subset = false;
  const auto result = pda::adapt(f.encoder, f.prototypes, f.target, cfg);
  for (const auto& m : result.log) EXPECT_EQ(m.confident_count, f.target.size());
}

TEST(Adapt, EvaluatorHookFillsTargetAccuracy) {
  auto f = make_fixture();
  pda::AdaptHooks hooks;
  hooks.evaluator = [](const pda::Encoder&, const pda::Matrix&) { return 0.25; };
  const auto result = pda::adapt(f.encoder, f.prototypes, f.target, small_adapt(), hooks);
  for (const auto& m : result.log) EXPECT_EQ(m.target_acc, 0.25);
}

TEST(Adapt, RejectsUnfrozenPrototypes) {
  auto f = make_fixture();
  const pda::PrototypeMatrix live(f.prototypes.weights());
  EXPECT_THROW(pda::adapt(f.encoder, live, f.target, small_adapt()), pda::InvalidInput);
}

TEST(AdaptLog, RowFormat) {
  pda::AdaptEpochMetrics m;
  m.epoch = 2;
  m.loss_nl = 0.5;
  m.loss_inter = -1.0;
  m.loss_intra = 0.25;
  m.loss_align = 1.5;
  m.tau = 0.75;
  m.confident_count = 12;
  EXPECT_EQ(pda::format_adapt_log_row(m), "2,0.5,-1,0.25,1.5,0.75,12,");
  m.target_acc = 0.5;
  EXPECT_EQ(pda::format_adapt_log_row(m), "2,0.5,-1,0.25,1.5,0.75,12,0.5");
}

}  // namespace
