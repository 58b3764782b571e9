#include "pda/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pda/errors.hpp"

namespace pda {

void AdaptConfig::validate(std::size_t num_classes) const {
  if (history == 0) throw ConfigError("n_a must be >= 1");
  if (ensemble_size == 0) throw ConfigError("n_e must be >= 1");
  if (complement_size == 0) throw ConfigError("n_cl must be >= 1");
  if (num_classes < 2) throw ConfigError("adaptation needs K_s >= 2");
  const std::size_t needed = share_complement_set ? complement_size : ensemble_size * complement_size;
  if (needed > num_classes - 1) {
    throw ConfigError("n_e * n_cl = " + std::to_string(needed) + " exceeds K_s - 1 = " +
                      std::to_string(num_classes - 1));
  }
  if (warmup_epochs >= switch_epoch) throw ConfigError("warmup_epochs must be < switch_epoch");
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !std::isfinite(alpha) || !std::isfinite(beta)) {
    throw ConfigError("alpha and beta must be >= 0");
  }
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("adapt lr0 must be >= 0");
  if (batch_size == 0) throw ConfigError("adapt batch_size must be >= 1");
}

// ---- logit history / ensemble --------------------------------------------

LogitHistory::LogitHistory(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw InvalidInput("history capacity must be >= 1");
}

void LogitHistory::push(Matrix logits) {
  if (!entries_.empty() && (logits.rows() != entries_.front().rows() ||
                            logits.cols() != entries_.front().cols())) {
    throw InvalidInput("logit history entry shape changed");
  }
  entries_.push_back(std::move(logits));
  while (entries_.size() > capacity_) entries_.pop_front();
}

Matrix LogitHistory::mean() const {
  if (entries_.empty()) throw InvalidInput("logit history is empty");
  Matrix sum = entries_.front();
  for (std::size_t i = 1; i < entries_.size(); ++i) axpy(1.0, entries_[i], sum);
  const double count = static_cast<double>(entries_.size());
  for (double& v : sum.values()) v /= count;
  return sum;
}

Matrix LogitHistory::sum_except_latest() const {
  if (entries_.empty()) throw InvalidInput("logit history is empty");
  Matrix sum(entries_.back().rows(), entries_.back().cols());
  for (std::size_t i = 0; i + 1 < entries_.size(); ++i) axpy(1.0, entries_[i], sum);
  return sum;
}

EnsembleState EnsembleState::from_prototypes(const PrototypeMatrix& prototypes,
                                             std::size_t ensemble_size, std::size_t history) {
  EnsembleState s;
  s.weights.assign(ensemble_size, prototypes.weights());
  s.history = LogitHistory(history);
  return s;
}

Matrix EnsembleState::mean_logits(const Matrix& unit_codes) const {
  if (weights.empty()) throw InvalidInput("ensemble has no members");
  Matrix sum = linear_logits(weights.front(), unit_codes);
  for (std::size_t m = 1; m < weights.size(); ++m) {
    axpy(1.0, linear_logits(weights[m], unit_codes), sum);
  }
  const double n = static_cast<double>(weights.size());
  for (double& v : sum.values()) v /= n;
  return sum;
}

// ---- pseudo-labels, CAC, D_tau -----------------------------------------------

double cac(const ProbVector& p, std::size_t num_classes) {
  if (num_classes < 2) throw InvalidInput("CAC needs K_s >= 2");
  if (p.size() != num_classes) throw InvalidInput("CAC: probability vector length != K_s");
  const double h = entropy(p, LogBase::two);
  const double value = 1.0 - h * (1.0 - p.max()) / std::log2(static_cast<double>(num_classes));
  return std::clamp(value, 0.0, 1.0);
}

PseudoLabelTable pseudo_labels_from_history(const LogitHistory& history) {
  const Matrix avg = history.mean();
  PseudoLabelTable table;
  table.probs.reserve(avg.rows());
  for (std::size_t j = 0; j < avg.rows(); ++j) {
    ProbVector p = softmax(avg.row(j));
    table.labels.push_back(static_cast<int>(p.argmax()));
    table.cac.push_back(cac(p, avg.cols()));
    table.probs.push_back(std::move(p));
  }
  return table;
}

PseudoLabelTable update_pseudo_labels(EnsembleState& ensemble, const Matrix& unit_codes) {
  ensemble.history.push(ensemble.mean_logits(unit_codes));
  return pseudo_labels_from_history(ensemble.history);
}

ComplementSets gen_complement_sets(std::size_t pseudo_label, std::size_t num_classes,
                                   std::size_t ensemble_size, std::size_t complement_size,
                                   Rng& rng) {
  if (pseudo_label >= num_classes) throw InvalidInput("pseudo-label >= K_s");
  if (ensemble_size * complement_size > num_classes - 1) {
    throw ConfigError("n_e * n_cl exceeds K_s - 1");
  }
  std::vector<std::size_t> pool;
  pool.reserve(num_classes - 1);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (c != pseudo_label) pool.push_back(c);
  }
  ComplementSets out;
  out.sets.reserve(ensemble_size);
  for (std::size_t m = 0; m < ensemble_size; ++m) {
    // Partial Fisher-Yates: the first n_cl slots become the sample.
    for (std::size_t i = 0; i < complement_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    out.sets.emplace_back(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(complement_size));
    pool.erase(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(complement_size));
  }
  return out;
}

ConfidentSubset build_confident_subset(std::span<const double> cac_scores) {
  if (cac_scores.empty()) throw InvalidInput("confident subset of an empty target set");
  ConfidentSubset out;
  out.tau = std::accumulate(cac_scores.begin(), cac_scores.end(), 0.0) /
            static_cast<double>(cac_scores.size());
  for (std::size_t j = 0; j < cac_scores.size(); ++j) {
    if (cac_scores[j] > out.tau) out.members.push_back(j);
  }
  return out;
}

// ---- losses ------------------------------------------------------------------

namespace {

void softmax_backward_row(std::span<const double> p, std::span<const double> u,
                          std::span<double> out) {
  double pu = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) pu += p[c] * u[c];
  for (std::size_t c = 0; c < p.size(); ++c) out[c] = p[c] * (u[c] - pu);
}

// Rows are the l2-normalized prototype columns μ_c / ‖μ_c‖.
Matrix unit_prototypes(const PrototypeMatrix& prototypes) {
  const Matrix& mu = prototypes.weights();
  Matrix out(mu.cols(), mu.rows());
  std::vector<double> col(mu.rows());
  for (std::size_t c = 0; c < mu.cols(); ++c) {
    for (std::size_t r = 0; r < mu.rows(); ++r) col[r] = mu(r, c);
    const UnitVector u = l2_normalize(col);
    if (u.degenerate()) throw DegenerateVector("prototype " + std::to_string(c) + " has zero norm");
    std::copy(u.values().begin(), u.values().end(), out.row(c).begin());
  }
  return out;
}

// Mean cosine distance over code pairs / (code, prototype) pairs whose label
// relation matches `same_class`. Terms without qualifying pairs contribute 0.
CodeLoss geometry_terms(const Matrix& codes, std::span<const int> labels,
                        const PrototypeMatrix& prototypes, bool same_class) {
  if (labels.size() != codes.rows()) throw InvalidInput("pseudo-label count != batch size");
  if (codes.cols() != prototypes.code_dim()) throw InvalidInput("code dimension != prototype dim");
  const std::size_t n = codes.rows();
  const Matrix protos = unit_prototypes(prototypes);
  CodeLoss out{0.0, Matrix(n, codes.cols())};

  std::size_t pair_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && (labels[i] == labels[j]) == same_class) ++pair_count;
    }
  }
  if (pair_count > 0) {
    const double w = 1.0 / static_cast<double>(pair_count);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j || (labels[i] == labels[j]) != same_class) continue;
        auto ui = codes.row(i);
        auto uj = codes.row(j);
        sum += 1.0 - dot(ui, uj);
        auto gi = out.d_codes.row(i);
        auto gj = out.d_codes.row(j);
        for (std::size_t k = 0; k < ui.size(); ++k) {
          gi[k] -= w * uj[k];
          gj[k] -= w * ui[k];
        }
      }
    }
    out.value += sum * w;
  }

  std::size_t proto_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < protos.rows(); ++c) {
      if ((static_cast<std::size_t>(labels[i]) == c) == same_class) ++proto_count;
    }
  }
  if (proto_count > 0) {
    const double w = 1.0 / static_cast<double>(proto_count);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto ui = codes.row(i);
      auto gi = out.d_codes.row(i);
      for (std::size_t c = 0; c < protos.rows(); ++c) {
        if ((static_cast<std::size_t>(labels[i]) == c) != same_class) continue;
        auto mc = protos.row(c);
        sum += 1.0 - dot(ui, mc);
        for (std::size_t k = 0; k < ui.size(); ++k) gi[k] -= w * mc[k];
      }
    }
    out.value += sum * w;
  }
  return out;
}

}  // namespace

AlignLoss loss_align(const PrototypeMatrix& prototypes, const Matrix& unit_codes) {
  if (!prototypes.frozen()) throw InvalidInput("loss_align requires frozen prototypes");
  const auto out = classify(prototypes.weights(), unit_codes);
  const std::size_t n = unit_codes.rows();
  const std::size_t k = prototypes.num_classes();
  AlignLoss res{0.0, Matrix(n, unit_codes.cols()), Matrix(prototypes.code_dim(), k)};
  if (n == 0) return res;
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix d_logits(n, k);
  std::vector<double> u(k);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = out.probs.row(i);
    res.value += entropy(p);
    for (std::size_t c = 0; c < k; ++c) {
      u[c] = p[c] > 0.0 ? -(clamped_log(p[c]) + (p[c] >= kLogClamp ? 1.0 : 0.0)) * inv_n : 0.0;
    }
    softmax_backward_row(p, u, d_logits.row(i));
  }
  res.value *= inv_n;
  res.d_codes = matmul_nt(d_logits, prototypes.weights());
  return res;
}

NlLoss loss_nl(const NlBatch& batch) {
  if (!batch.weights || !batch.unit_codes || !batch.history_sum) {
    throw InvalidInput("loss_nl: incomplete batch");
  }
  const auto& weights = *batch.weights;
  const Matrix& codes = *batch.unit_codes;
  const std::size_t n = codes.rows();
  const std::size_t n_e = weights.size();
  if (n_e == 0) throw InvalidInput("loss_nl: empty ensemble");
  const std::size_t k = weights.front().cols();
  if (batch.sets.size() != n) throw InvalidInput("loss_nl: one complement-set group per row");
  if (batch.history_sum->rows() != n || batch.history_sum->cols() != k) {
    throw InvalidInput("loss_nl: history shape mismatch");
  }
  if (batch.history_count == 0) throw InvalidInput("loss_nl: history_count must be >= 1");

  NlLoss res{0.0, Matrix(n, codes.cols()), std::vector<Matrix>(n_e, Matrix(codes.cols(), k))};
  if (n == 0) return res;

  // Averaged logits with the current epoch's term live.
  Matrix current = linear_logits(weights.front(), codes);
  for (std::size_t m = 1; m < n_e; ++m) axpy(1.0, linear_logits(weights[m], codes), current);
  const double inv_ne = 1.0 / static_cast<double>(n_e);
  const double inv_count = 1.0 / static_cast<double>(batch.history_count);
  Matrix probs(n, k);
  for (std::size_t j = 0; j < n; ++j) {
    auto dst = probs.row(j);
    auto h = batch.history_sum->row(j);
    auto cur = current.row(j);
    for (std::size_t c = 0; c < k; ++c) dst[c] = (h[c] + cur[c] / static_cast<double>(n_e)) * inv_count;
    softmax_inplace(dst);
  }

  Matrix d_current_total(n, k);  // d L_nl / d(mean current logits)
  std::vector<double> u(k);
  for (std::size_t m = 0; m < n_e; ++m) {
    std::size_t n_cl = 0;
    for (const auto& s : batch.sets) {
      if (s.sets.size() != n_e) throw InvalidInput("loss_nl: complement sets per member != n_e");
      n_cl = std::max(n_cl, s.sets[m].size());
    }
    if (n_cl == 0) continue;
    const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(n_cl));
    Matrix d_current_m(n, k);
    double term = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      auto p = probs.row(j);
      std::fill(u.begin(), u.end(), 0.0);
      for (std::size_t c : batch.sets[j].sets[m]) {
        if (c >= k) throw InvalidInput("loss_nl: complement index >= K_s");
        const double q = 1.0 - p[c];
        term -= q * clamped_log(q);
        u[c] += scale * (clamped_log(q) + (q >= kLogClamp ? 1.0 : 0.0));
      }
      auto d = d_current_m.row(j);
      softmax_backward_row(p, u, d);
      for (double& v : d) v *= inv_count;
    }
    res.value += term * scale * inv_ne;
    // Member m only sees its own term; each w^m enters the mean with weight 1/n_e.
    res.d_weights[m] = matmul_tn(codes, d_current_m);
    for (double& v : res.d_weights[m].values()) v *= inv_ne * inv_ne;
    axpy(inv_ne, d_current_m, d_current_total);
  }
  for (std::size_t m = 0; m < n_e; ++m) {
    axpy(inv_ne, matmul_nt(d_current_total, weights[m]), res.d_codes);
  }
  return res;
}

CodeLoss loss_inter(const Matrix& unit_codes, std::span<const int> pseudo_labels,
                    const PrototypeMatrix& prototypes) {
  CodeLoss out = geometry_terms(unit_codes, pseudo_labels, prototypes, false);
  out.value = -out.value;
  for (double& v : out.d_codes.values()) v = -v;
  return out;
}

CodeLoss loss_intra(const Matrix& unit_codes, std::span<const int> pseudo_labels,
                    const PrototypeMatrix& prototypes) {
  return geometry_terms(unit_codes, pseudo_labels, prototypes, true);
}

// ---- adaptation loop -----------------------------------------------------------

AdaptPhase phase_for_epoch(const AdaptConfig& cfg, std::size_t epoch) {
  if (epoch < cfg.warmup_epochs) return AdaptPhase::warmup;
  if (epoch <= cfg.switch_epoch) return AdaptPhase::negative_learning;
  return AdaptPhase::self_training;
}

std::string format_adapt_log_row(const AdaptEpochMetrics& m) {
  std::string row = std::to_string(m.epoch) + "," + format_metric(m.loss_nl) + "," +
                    format_metric(m.loss_inter) + "," + format_metric(m.loss_intra) + "," +
                    format_metric(m.loss_align) + "," + format_metric(m.tau) + "," +
                    std::to_string(m.confident_count) + ",";
  if (m.target_acc) row += format_metric(*m.target_acc);
  return row;
}

namespace {

void add_rows(const Matrix& src, std::span<const std::size_t> rows, double scale, Matrix& dst) {
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto s = src.row(r);
    auto d = dst.row(rows[r]);
    for (std::size_t c = 0; c < s.size(); ++c) d[c] += scale * s[c];
  }
}

}  // namespace

AdaptResult adapt(Encoder& encoder, const PrototypeMatrix& prototypes, const Dataset& target,
                  const AdaptConfig& cfg, const AdaptHooks& hooks) {
  const std::size_t k = prototypes.num_classes();
  cfg.validate(k);
  if (!prototypes.frozen()) throw InvalidInput("adaptation requires frozen prototypes");
  if (target.role() != DomainRole::target) throw InvalidInput("adapt needs a target dataset");
  if (target.empty()) throw InvalidInput("target dataset is empty");
  if (target.dim() != encoder.architecture().input_dim) {
    throw InvalidInput("target feature dimension does not match the encoder");
  }
  if (target.num_classes() != k || prototypes.code_dim() != encoder.architecture().code_dim) {
    throw InvalidInput("prototype matrix shape does not match encoder / dataset");
  }

  AdaptResult result;
  result.ensemble = EnsembleState::from_prototypes(prototypes, cfg.ensemble_size, cfg.history);
  EnsembleState& ens = result.ensemble;
  EncoderGradients enc_velocity = encoder.zero_gradients();
  std::vector<Matrix> cls_velocity(cfg.ensemble_size, Matrix(prototypes.code_dim(), k));
  Rng batch_rng = make_rng(cfg.seed, RngStream::target_batches);

  const Matrix all_x = target.all_features();
  const std::size_t n_t = target.size();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const AdaptPhase phase = phase_for_epoch(cfg, epoch);
    const double lr = lr_schedule(epoch, cfg.lr0);
    const double lr_cls = lr * kClassifierLrScale;
    AdaptEpochMetrics m;
    m.epoch = epoch;
    m.phase = phase;
    m.lr = lr;

    try {
      // Per-epoch refresh over the full target set.
      const auto snapshot = encode(encoder, all_x);
      m.degenerate_codes += snapshot.degenerate_rows;
      const PseudoLabelTable table = update_pseudo_labels(ens, snapshot.unit_codes);
      ConfidentSubset subset = build_confident_subset(table.cac);
      if (!cfg.use_confident_subset) {
        subset.members.resize(n_t);
        std::iota(subset.members.begin(), subset.members.end(), std::size_t{0});
      }
      m.tau = subset.tau;
      m.confident_count = subset.members.size();
      std::vector<bool> confident(n_t, false);
      for (std::size_t j : subset.members) confident[j] = true;

      std::vector<ComplementSets> sets;
      if (phase == AdaptPhase::negative_learning) {
        Rng set_rng = make_rng(cfg.seed, RngStream::complement_sets, epoch);
        sets.reserve(n_t);
        for (std::size_t j = 0; j < n_t; ++j) {
          const auto y = static_cast<std::size_t>(table.labels[j]);
          if (cfg.share_complement_set) {
            ComplementSets one = gen_complement_sets(y, k, 1, cfg.complement_size, set_rng);
            one.sets.assign(cfg.ensemble_size, one.sets.front());
            sets.push_back(std::move(one));
          } else {
            sets.push_back(gen_complement_sets(y, k, cfg.ensemble_size, cfg.complement_size, set_rng));
          }
        }
      }
      if (hooks.on_refresh) hooks.on_refresh(epoch, table, subset, sets);

      const Matrix history_sum = ens.history.sum_except_latest();
      const std::size_t history_count = ens.history.size();

      double nl_weight = 0.0;
      double geo_weight = 0.0;
      for (const auto& batch : epoch_batches(n_t, cfg.batch_size, batch_rng)) {
        const Matrix x = select_rows(all_x, batch);
        const auto fwd = encode(encoder, x);
        m.degenerate_codes += fwd.degenerate_rows;
        const double bsize = static_cast<double>(batch.size());

        AlignLoss align = loss_align(prototypes, fwd.unit_codes);
        m.loss_align += align.value * bsize;
        Matrix d_codes = std::move(align.d_codes);
        std::vector<Matrix> d_cls;

        if (phase != AdaptPhase::warmup) {
          std::vector<std::size_t> conf_rows;
          std::vector<int> conf_labels;
          for (std::size_t r = 0; r < batch.size(); ++r) {
            if (confident[batch[r]]) {
              conf_rows.push_back(r);
              conf_labels.push_back(table.labels[batch[r]]);
            }
          }

          if (phase == AdaptPhase::negative_learning) {
            const Matrix h = select_rows(history_sum, batch);
            std::vector<ComplementSets> batch_sets;
            batch_sets.reserve(batch.size());
            for (std::size_t j : batch) batch_sets.push_back(sets[j]);
            NlLoss nl = loss_nl({&ens.weights, &fwd.unit_codes, &h, history_count, batch_sets});
            axpy(1.0, nl.d_codes, d_codes);
            d_cls = std::move(nl.d_weights);
            m.loss_nl += nl.value * bsize;
            nl_weight += bsize;
          } else if (!conf_rows.empty()) {
            const Matrix& w = ens.weights[kDesignatedClassifier];
            const Matrix codes = select_rows(fwd.unit_codes, conf_rows);
            const auto out = classify(w, codes);
            const LogitLoss ce = loss_ce(out.probs, conf_labels);
            const auto lin = linear_backward(w, codes, ce.d_logits);
            add_rows(lin.d_codes, conf_rows, 1.0, d_codes);
            d_cls.assign(cfg.ensemble_size, Matrix());
            d_cls[kDesignatedClassifier] = lin.d_weights;
            const double cw = static_cast<double>(conf_rows.size());
            m.loss_nl += ce.value * cw;
            nl_weight += cw;
          }

          if (!conf_rows.empty() && (cfg.alpha > 0.0 || cfg.beta > 0.0)) {
            const Matrix codes = select_rows(fwd.unit_codes, conf_rows);
            const double cw = static_cast<double>(conf_rows.size());
            if (cfg.alpha > 0.0) {
              const CodeLoss inter = loss_inter(codes, conf_labels, prototypes);
              add_rows(inter.d_codes, conf_rows, cfg.alpha, d_codes);
              m.loss_inter += inter.value * cw;
            }
            if (cfg.beta > 0.0) {
              const CodeLoss intra = loss_intra(codes, conf_labels, prototypes);
              add_rows(intra.d_codes, conf_rows, cfg.beta, d_codes);
              m.loss_intra += intra.value * cw;
            }
            geo_weight += cw;
          }
        }

        const auto enc_grads = encoder_backward(encoder, fwd, d_codes);
        apply_sgd_momentum(encoder, enc_grads, enc_velocity, lr);
        for (std::size_t mi = 0; mi < d_cls.size(); ++mi) {
          if (d_cls[mi].empty()) continue;
          apply_sgd_momentum(ens.weights[mi], d_cls[mi], cls_velocity[mi], lr_cls);
        }
      }

      m.loss_align /= static_cast<double>(n_t);
      if (nl_weight > 0.0) m.loss_nl /= nl_weight;
      if (geo_weight > 0.0) {
        m.loss_inter /= geo_weight;
        m.loss_intra /= geo_weight;
      }
      if (!std::isfinite(m.loss_align) || !std::isfinite(m.loss_nl) ||
          !std::isfinite(m.loss_inter) || !std::isfinite(m.loss_intra)) {
        throw NumericFailure("non-finite adaptation loss");
      }
    } catch (const NumericFailure& e) {
      throw NumericFailure("adaptation diverged at epoch " + std::to_string(epoch) + ": " +
                           e.what());
    }

    if (hooks.evaluator) m.target_acc = hooks.evaluator(encoder, ens.weights[kDesignatedClassifier]);
    ++ens.epoch_counter;
    result.log.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  return result;
}

}  // namespace pda
