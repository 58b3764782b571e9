#include "pda/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pda/adaptation.hpp"
#include "pda/model.hpp"
#include "pda/numerics.hpp"
#include "pda/rng.hpp"
#include "pda/source_trainer.hpp"

namespace pda {

double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

// ---- reference forward pass, one sample at a time --------------------------

struct RefNet {
  EncoderArchitecture arch;
  Vec params;  // flat, same layout as Encoder::flat_parameters
};

Vec ref_code(const RefNet& net, const Vec& x) {
  std::vector<std::size_t> dims{net.arch.input_dim};
  dims.insert(dims.end(), net.arch.hidden.begin(), net.arch.hidden.end());
  dims.push_back(net.arch.code_dim);
  Vec a = x;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    Vec next(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = net.params[off + in * out + o];
      for (std::size_t i = 0; i < in; ++i) s += net.params[off + o * in + i] * a[i];
      const bool hidden = l + 2 < dims.size();
      next[o] = hidden && net.arch.activation == Activation::tanh ? std::tanh(s) : s;
    }
    off += in * out + out;
    a = std::move(next);
  }
  return a;
}

Vec unit(const Vec& z) {
  double n = 0.0;
  for (double v : z) n += v * v;
  n = std::sqrt(n);
  Vec u(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) u[i] = z[i] / n;
  return u;
}

Rows ref_codes(const RefNet& net, const Rows& xs) {
  Rows out;
  for (const auto& x : xs) out.push_back(ref_code(net, x));
  return out;
}

// weights are d_z × K, row-major.
Vec ref_probs(const Vec& u, const Vec& w, std::size_t k) {
  Vec logits(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < u.size(); ++d) logits[c] += w[d * k + c] * u[d];
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& v : logits) sum += (v = std::exp(v - mx));
  for (double& v : logits) v /= sum;
  return logits;
}

double ref_ce(const Rows& z, const Vec& w, std::size_t k, const std::vector<int>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s -= std::log(ref_probs(unit(z[i]), w, k)[y[i]]);
  return s / static_cast<double>(z.size());
}

double ref_comp(const Rows& z, const Vec& w, std::size_t k, const std::vector<int>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const Vec p = ref_probs(unit(z[i]), w, k);
    const double rest = 1.0 - p[y[i]];
    double inner = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (static_cast<int>(c) == y[i]) continue;
      const double q = p[c] / rest;
      inner += q * std::log(q);
    }
    s += rest * inner;
  }
  return s / (static_cast<double>(z.size()) * static_cast<double>(k - 1));
}

double ref_align(const Rows& z, const Vec& w, std::size_t k) {
  double s = 0.0;
  for (const auto& zi : z) {
    for (double p : ref_probs(unit(zi), w, k)) s -= p * std::log(p);
  }
  return s / static_cast<double>(z.size());
}

struct NlInstance {
  std::vector<Vec> weights;  // n_e members
  Rows history_sum;
  std::size_t history_count = 1;
  std::vector<ComplementSets> sets;
};

// Value of member `only`'s term scaled by 1/n_e, or of the full loss if only < 0.
double ref_nl(const Rows& z, const NlInstance& inst, std::size_t k, int only = -1) {
  const std::size_t n_e = inst.weights.size();
  double total = 0.0;
  for (std::size_t m = 0; m < n_e; ++m) {
    if (only >= 0 && static_cast<std::size_t>(only) != m) continue;
    double term = 0.0;
    std::size_t n_cl = 0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const Vec u = unit(z[j]);
      Vec s(k, 0.0);
      for (std::size_t mm = 0; mm < n_e; ++mm) {
        for (std::size_t c = 0; c < k; ++c) {
          for (std::size_t d = 0; d < u.size(); ++d) s[c] += inst.weights[mm][d * k + c] * u[d] / n_e;
        }
      }
      for (std::size_t c = 0; c < k; ++c) {
        s[c] = (inst.history_sum[j][c] + s[c]) / static_cast<double>(inst.history_count);
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double sum = 0.0;
      for (double& v : s) sum += (v = std::exp(v - mx));
      for (double& v : s) v /= sum;
      n_cl = inst.sets[j].sets[m].size();
      for (std::size_t c : inst.sets[j].sets[m]) term += (1.0 - s[c]) * std::log(1.0 - s[c]);
    }
    total += -term / (static_cast<double>(z.size()) * static_cast<double>(n_cl)) / n_e;
  }
  return total;
}

Vec column(const Vec& w, std::size_t k, std::size_t c) {
  Vec out(w.size() / k);
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = w[d * k + c];
  return out;
}

double ref_geometry(const Rows& z, const std::vector<int>& y, const Vec& mu, std::size_t k,
                    bool same) {
  double pair_sum = 0.0, proto_sum = 0.0;
  std::size_t pairs = 0, protos = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (i == j || (y[i] == y[j]) != same) continue;
      pair_sum += cosine_distance(z[i], z[j]);
      ++pairs;
    }
    for (std::size_t c = 0; c < k; ++c) {
      if ((y[i] == static_cast<int>(c)) != same) continue;
      proto_sum += cosine_distance(z[i], column(mu, k, c));
      ++protos;
    }
  }
  const double v = (pairs ? pair_sum / pairs : 0.0) + (protos ? proto_sum / protos : 0.0);
  return same ? v : -v;
}

// ---- helpers -------------------------------------------------------------------

Matrix to_matrix(const Rows& rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  return m;
}

Vec to_vec(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

void compare(const Vec& analytic, const Vec& numeric, GradCheckResult& res) {
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    res.max_relative_error =
        std::max(res.max_relative_error, gradient_relative_error(analytic[i], numeric[i]));
    ++res.entries_checked;
  }
}

Vec random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vec v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

struct Instance {
  Encoder encoder;
  RefNet net;
  Matrix x;
  Rows xs;
  Vec mu;
  std::vector<int> labels;
};

Instance make_instance(std::uint64_t seed, const GradCheckInstance& shape) {
  EncoderArchitecture arch{shape.input_dim, {shape.hidden}, shape.code_dim, Activation::tanh};
  Encoder enc(arch, seed);
  Rng rng(derive_seed(seed, RngStream::dataset, 99));
  // Non-zero biases so their gradients are exercised at a generic point.
  auto flat = enc.flat_parameters();
  for (double& v : flat) v += 0.1 * random_vec(1, rng)[0];
  enc.set_flat_parameters(flat);

  Instance inst{enc, {arch, flat}, Matrix(), {}, random_vec(shape.code_dim * shape.num_classes, rng, 1.5), {}};
  for (std::size_t i = 0; i < shape.batch; ++i) inst.xs.push_back(random_vec(shape.input_dim, rng));
  inst.x = to_matrix(inst.xs);
  std::uniform_int_distribution<int> label(0, static_cast<int>(shape.num_classes) - 1);
  for (std::size_t i = 0; i < shape.batch; ++i) inst.labels.push_back(label(rng));
  // Guarantee both same-label and different-label pairs.
  inst.labels[1] = inst.labels[0];
  inst.labels[2] = (inst.labels[0] + 1) % static_cast<int>(shape.num_classes);
  return inst;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t first_seed, std::size_t seeds,
                                                const GradCheckInstance& shape) {
  GradCheckResult ce{"ce"}, comp{"comp"}, align{"align"}, nl{"nl"}, inter{"inter"}, intra{"intra"};
  const std::size_t k = shape.num_classes;

  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = first_seed + s;
    Instance in = make_instance(seed, shape);
    const auto fwd = encode(in.encoder, in.x);
    const Matrix mu(shape.code_dim, k, in.mu);
    const Vec theta = in.net.params;

    auto encoder_fd = [&](auto loss_of_codes) {
      return finite_diff_grad(
          [&](std::span<const double> p) {
            RefNet net{in.net.arch, Vec(p.begin(), p.end())};
            return loss_of_codes(ref_codes(net, in.xs));
          },
          theta);
    };
    const Rows z0 = ref_codes(in.net, in.xs);

    // cross-entropy and complement objective: encoder + prototypes
    {
      const auto out = classify(mu, fwd.unit_codes);
      const LogitLoss l = loss_ce(out.probs, in.labels);
      const auto lin = linear_backward(mu, fwd.unit_codes, l.d_logits);
      compare(flatten(encoder_backward(in.encoder, fwd, lin.d_codes)),
              encoder_fd([&](const Rows& z) { return ref_ce(z, in.mu, k, in.labels); }), ce);
      compare(to_vec(lin.d_weights),
              finite_diff_grad([&](std::span<const double> w) { return ref_ce(z0, Vec(w.begin(), w.end()), k, in.labels); }, in.mu),
              ce);
    }
    {
      const auto out = classify(mu, fwd.unit_codes);
      const LogitLoss l = loss_comp(out.probs, in.labels);
      const auto lin = linear_backward(mu, fwd.unit_codes, l.d_logits);
      compare(flatten(encoder_backward(in.encoder, fwd, lin.d_codes)),
              encoder_fd([&](const Rows& z) { return ref_comp(z, in.mu, k, in.labels); }), comp);
      compare(to_vec(lin.d_weights),
              finite_diff_grad([&](std::span<const double> w) { return ref_comp(z0, Vec(w.begin(), w.end()), k, in.labels); }, in.mu),
              comp);
    }
    // entropy alignment: encoder only, prototype gradient must vanish
    {
      const AlignLoss l = loss_align(PrototypeMatrix(mu, true), fwd.unit_codes);
      compare(flatten(encoder_backward(in.encoder, fwd, l.d_codes)),
              encoder_fd([&](const Rows& z) { return ref_align(z, in.mu, k); }), align);
      for (double v : l.d_prototypes.values()) {
        if (v != 0.0) align.max_relative_error = std::max(align.max_relative_error, 1.0);
      }
    }
    // negative learning: encoder on the full loss, each member on its own term
    {
      Rng rng(derive_seed(seed, RngStream::complement_sets, 7));
      const std::size_t n_e = 2, n_cl = 2;
      NlInstance nli;
      std::vector<Matrix> ws;
      for (std::size_t m = 0; m < n_e; ++m) {
        nli.weights.push_back(random_vec(shape.code_dim * k, rng, 1.5));
        ws.emplace_back(shape.code_dim, k, nli.weights.back());
      }
      nli.history_count = 3;
      for (std::size_t j = 0; j < shape.batch; ++j) {
        nli.history_sum.push_back(random_vec(k, rng, 2.0));
        nli.sets.push_back(gen_complement_sets(static_cast<std::size_t>(in.labels[j]), k, n_e, n_cl, rng));
      }
      const Matrix h = to_matrix(nli.history_sum);
      const NlLoss l = loss_nl({&ws, &fwd.unit_codes, &h, nli.history_count, nli.sets});
      compare(flatten(encoder_backward(in.encoder, fwd, l.d_codes)),
              encoder_fd([&](const Rows& z) { return ref_nl(z, nli, k); }), nl);
      for (std::size_t m = 0; m < n_e; ++m) {
        const auto numeric = finite_diff_grad(
            [&](std::span<const double> w) {
              NlInstance moved = nli;
              moved.weights[m] = Vec(w.begin(), w.end());
              return ref_nl(z0, moved, k, static_cast<int>(m));
            },
            nli.weights[m]);
        compare(to_vec(l.d_weights[m]), numeric, nl);
      }
    }
    // class geometry: encoder only
    {
      const PrototypeMatrix frozen(mu, true);
      const CodeLoss li = loss_inter(fwd.unit_codes, in.labels, frozen);
      compare(flatten(encoder_backward(in.encoder, fwd, li.d_codes)),
              encoder_fd([&](const Rows& z) { return ref_geometry(z, in.labels, in.mu, k, false); }),
              inter);
      const CodeLoss la = loss_intra(fwd.unit_codes, in.labels, frozen);
      compare(flatten(encoder_backward(in.encoder, fwd, la.d_codes)),
              encoder_fd([&](const Rows& z) { return ref_geometry(z, in.labels, in.mu, k, true); }),
              intra);
    }
  }
  return {ce, comp, align, nl, inter, intra};
}

}  // namespace pda
