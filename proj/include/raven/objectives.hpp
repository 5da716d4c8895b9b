#pragma once

#include <cmath>
#include <optional>

#include "raven/bound.hpp"
#include "raven/model.hpp"

namespace raven {

// Graph-side builders for the training objectives. Scalar counterparts in
// bound.hpp are the closed-form references; these compose the same algebra
// from differentiable primitives so the optimizer and the attacks get exact
// gradients.

inline Var recon_rows(Graph& g, Var logits, Var x, ReconLikelihood recon) {
  return recon == ReconLikelihood::kBernoulliCrossEntropy
             ? bernoulli_recon_rows(g, logits, x, /*soft_targets=*/true)
             : gaussian_mse_recon_rows(g, logits, x);
}

// KL(q || N(0, I)) per sample: 1/2 sum_d (mu^2 + exp(lv) - lv - 1).
inline Var kl_unit_rows(Graph& g, const PosteriorVars& q) {
  Var inner = g.sub(g.add(g.square(q.mean), g.exp(q.logvar)), g.scalar_add(q.logvar, 1.0));
  return g.scalar_mul(g.row_sum(inner), 0.5);
}

// Pair KL term per sample (the -KL piece of the pair bound), [N].
inline Var raven_kl_rows(Graph& g, const PosteriorVars& qx, const PosteriorVars& qxp,
                         const RavenBoundConfig& cfg) {
  cfg.validate();
  const std::size_t d = static_cast<std::size_t>(cfg.latent_dim);
  Vec inv_s(d), inv_2s(d);
  double log_consts = 2.0 * static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) {
    inv_s[i] = 1.0 / cfg.sigma_aug[i];
    inv_2s[i] = 1.0 / (2.0 + cfg.sigma_aug[i]);
    log_consts -= std::log(cfg.sigma_aug[i]) + std::log(2.0 + cfg.sigma_aug[i]);
  }
  Var c_trace = g.constant(Tensor({d}, [&] {
    Vec v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = inv_s[i] + inv_2s[i];
    return v;
  }()));
  Var c_inv_s = g.constant(Tensor({d}, Vec(inv_s)));
  Var c_inv_2s = g.constant(Tensor({d}, Vec(inv_2s)));

  Var var_sum = g.add(g.exp(qx.logvar), g.exp(qxp.logvar));
  Var trace = g.row_sum(g.mul(var_sum, c_trace));
  Var mean_diff = g.sub(qx.mean, qxp.mean);
  Var mean_sum = g.add(qx.mean, qxp.mean);
  Var t3 = g.add(g.row_sum(g.mul(g.square(mean_diff), c_inv_s)),
                 g.row_sum(g.mul(g.square(mean_sum), c_inv_2s)));
  Var logdets = g.add(g.row_sum(qx.logvar), g.row_sum(qxp.logvar));
  return g.add(g.scalar_mul(g.add(trace, t3), -0.25),
               g.scalar_mul(g.scalar_add(logdets, log_consts), 0.5));
}

// ---------------------------------------------------------------------------
// Trainable mixture prior parameterization: weights through a normalized
// exponential of free logits, variances through exp of free log-variances.
// ---------------------------------------------------------------------------

struct GmmParams {
  Tensor logits;                // [C]
  std::vector<Tensor> means;    // C tensors [d]
  std::vector<Tensor> logvars;  // C tensors [d]

  static GmmParams init(int components, int d, Rng& rng, double mean_spread = 1.0) {
    if (components < 1 || d < 1) throw Error("gmm params: need components >= 1, d >= 1");
    GmmParams p;
    p.logits = Tensor::zeros({static_cast<std::size_t>(components)});
    for (int c = 0; c < components; ++c) {
      Tensor m = Tensor::zeros({static_cast<std::size_t>(d)});
      for (auto& v : m.data) v = rng.uniform(-mean_spread, mean_spread);
      p.means.push_back(std::move(m));
      p.logvars.push_back(Tensor::zeros({static_cast<std::size_t>(d)}));
    }
    return p;
  }

  static GmmParams from_prior(const GmmPrior& prior) {
    prior.validate();
    GmmParams p;
    p.logits = Tensor::zeros({prior.components()});
    for (std::size_t c = 0; c < prior.components(); ++c) {
      p.logits.data[c] = std::log(std::fmax(prior.weights[c], 1e-300));
      p.means.push_back(Tensor({prior.dim()}, Vec(prior.means[c])));
      Tensor lv = Tensor::zeros({prior.dim()});
      for (std::size_t i = 0; i < prior.dim(); ++i) lv.data[i] = std::log(prior.vars[c][i]);
      p.logvars.push_back(std::move(lv));
    }
    return p;
  }

  GmmPrior to_prior() const {
    const std::size_t C = logits.numel();
    double m = logits.data[0];
    for (double v : logits.data) m = std::fmax(m, v);
    Vec w(C);
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      w[c] = std::exp(logits.data[c] - m);
      total += w[c];
    }
    std::vector<Vec> mu(C), var(C);
    for (std::size_t c = 0; c < C; ++c) {
      w[c] /= total;
      mu[c] = means[c].data;
      var[c].resize(logvars[c].numel());
      for (std::size_t i = 0; i < var[c].size(); ++i) var[c][i] = std::exp(logvars[c].data[i]);
    }
    return GmmPrior(std::move(w), std::move(mu), std::move(var));
  }

  std::vector<VaeModel::NamedParam> parameters() {
    std::vector<VaeModel::NamedParam> out;
    out.push_back({"gmm.logits", &logits});
    for (std::size_t c = 0; c < means.size(); ++c) {
      out.push_back({"gmm.mean" + std::to_string(c), &means[c]});
      out.push_back({"gmm.logvar" + std::to_string(c), &logvars[c]});
    }
    return out;
  }
};

struct GmmBinding {
  Var logits;
  std::vector<Var> means;
  std::vector<Var> logvars;
};

inline GmmBinding bind(Graph& g, GmmParams& p, bool trainable) {
  GmmBinding b;
  b.logits = g.leaf(p.logits, trainable);
  for (auto& m : p.means) b.means.push_back(g.leaf(m, trainable));
  for (auto& lv : p.logvars) b.logvars.push_back(g.leaf(lv, trainable));
  return b;
}

// log sum_c pi_c N(mid; mu_c, exp(logvar_c) + S_aug/2) per sample, [N],
// accumulated with pairwise log-add-exp for stability.
inline Var gmm_midpoint_rows(Graph& g, Var mid, const GmmBinding& gb, const RavenBoundConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.latent_dim);
  const std::size_t C = gb.means.size();
  Var half_saug = g.constant(Tensor({d}, [&] {
    Vec v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = 0.5 * cfg.sigma_aug[i];
    return v;
  }()));

  // log pi_c = logit_c - logsumexp(logits), folded pairwise over slices
  std::vector<Var> logit_c;
  for (std::size_t c = 0; c < C; ++c) {
    // slice component c of the logits leaf through a selector product
    Tensor sel = Tensor::zeros({C});
    sel.data[c] = 1.0;
    logit_c.push_back(g.sum(g.mul(gb.logits, g.constant(sel))));
  }
  Var lse = logit_c[0];
  for (std::size_t c = 1; c < C; ++c) lse = g.logaddexp(lse, logit_c[c]);

  Var acc{nullptr, -1};
  for (std::size_t c = 0; c < C; ++c) {
    Var v_total = g.add(g.exp(gb.logvars[c]), half_saug);           // [d]
    Var diff = g.sub(mid, gb.means[c]);                             // [N,d] broadcast
    Var quad = g.row_sum(g.div(g.square(diff), v_total));           // [N]
    Var logdet = g.sum(g.log(v_total));                             // [1]
    Var log_pi = g.sub(logit_c[c], lse);                            // [1]
    Var row = g.add(g.scalar_mul(g.add(quad, g.scalar_add(logdet, static_cast<double>(d) * kLog2Pi)),
                                 -0.5),
                    log_pi);                                        // [N] + [1] broadcast
    acc = (c == 0) ? row : g.logaddexp(acc, row);
  }
  return acc;
}

// Closed (non-sampled) rows of the mixture bound's KL portion, [N].
inline Var gmm_kl_closed_rows(Graph& g, const PosteriorVars& qx, const PosteriorVars& qxp,
                              const RavenBoundConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.latent_dim);
  Vec inv_s(d);
  double log_saug = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    inv_s[i] = 1.0 / cfg.sigma_aug[i];
    log_saug += std::log(cfg.sigma_aug[i]);
  }
  Var c_inv_s = g.constant(Tensor({d}, Vec(inv_s)));
  Var trace = g.row_sum(g.mul(g.add(g.exp(qx.logvar), g.exp(qxp.logvar)), c_inv_s));
  Var quad = g.row_sum(g.mul(g.square(g.sub(qx.mean, qxp.mean)), c_inv_s));
  Var logdets = g.add(g.row_sum(qx.logvar), g.row_sum(qxp.logvar));
  constexpr double kLogPi = 1.1447298858494001741434273513531;
  const double constant = static_cast<double>(d) * (1.0 + 0.5 * kLogPi) - 0.5 * log_saug;
  return g.add(g.scalar_mul(g.add(trace, quad), -0.25),
               g.scalar_add(g.scalar_mul(logdets, 0.5), constant));
}

// Checkpoint with an optional mixture-prior sidecar (gmm.json + tensors).
inline void save_checkpoint(const std::string& dir, VaeModel& model, const std::string& config_hash,
                            GmmParams* gmm) {
  save_checkpoint(dir, model, config_hash);
  if (!gmm) return;
  namespace fs = std::filesystem;
  nlohmann::json j;
  std::vector<std::string> names;
  for (auto& p : gmm->parameters()) {
    names.push_back(p.name);
    save_tensor((fs::path(dir) / (p.name + ".tsr")).string(), *p.tensor);
  }
  j["params"] = names;
  j["components"] = gmm->means.size();
  std::ofstream f(fs::path(dir) / "gmm.json");
  if (!f) throw Error("checkpoint: cannot write gmm sidecar in " + dir);
  f << j.dump(2) << "\n";
}

inline std::optional<GmmParams> load_gmm_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream f(fs::path(dir) / "gmm.json");
  if (!f) return std::nullopt;
  nlohmann::json j = nlohmann::json::parse(f);
  const std::size_t components = j["components"].get<std::size_t>();
  GmmParams p;
  p.logits = load_tensor((fs::path(dir) / "gmm.logits.tsr").string());
  for (std::size_t c = 0; c < components; ++c) {
    p.means.push_back(load_tensor((fs::path(dir) / ("gmm.mean" + std::to_string(c) + ".tsr")).string()));
    p.logvars.push_back(
        load_tensor((fs::path(dir) / ("gmm.logvar" + std::to_string(c) + ".tsr")).string()));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Batched objectives (means over the batch; loss = -total).
// ---------------------------------------------------------------------------

struct ObjectiveResult {
  Var total;  // scalar on the tape
  BoundBreakdown breakdown;
};

// Standard bound on a single batch.
inline ObjectiveResult vanilla_elbo_objective(Graph& g, ModelBinding& mb, const Tensor& x,
                                              const Tensor& eps, ReconLikelihood recon) {
  Var xv = g.constant(x);
  PosteriorVars q = encode(mb, xv);
  Var z = reparameterize(g, q, eps);
  Var logits = decode(mb, z);
  Var rec = recon_rows(g, logits, xv, recon);
  Var kl = g.scalar_mul(kl_unit_rows(g, q), -1.0);
  Var total = g.mean(g.add(rec, kl));
  ObjectiveResult out{total, {}};
  out.breakdown.recon_x = g.mean(rec).scalar();
  out.breakdown.kl_term = g.mean(kl).scalar();
  out.breakdown.total = total.scalar();
  return out;
}

// Pair bound: one-sample reconstruction terms for both halves plus the
// closed-form pair KL term.
inline ObjectiveResult raven_objective(Graph& g, ModelBinding& mb, const Tensor& x, const Tensor& xp,
                                       const Tensor& eps, const Tensor& eps_p,
                                       const RavenBoundConfig& cfg) {
  if (x.shape != xp.shape) throw Error("raven objective: pair members must share a shape");
  Var xv = g.constant(x);
  Var xpv = g.constant(xp);
  PosteriorVars qx = encode(mb, xv);
  PosteriorVars qxp = encode(mb, xpv);
  Var zx = reparameterize(g, qx, eps);
  Var zxp = reparameterize(g, qxp, eps_p);
  Var rec_x = recon_rows(g, decode(mb, zx), xv, cfg.recon);
  Var rec_xp = recon_rows(g, decode(mb, zxp), xpv, cfg.recon);
  Var kl = raven_kl_rows(g, qx, qxp, cfg);
  Var total = g.mean(g.add(g.add(rec_x, rec_xp), kl));

  ObjectiveResult out{total, {}};
  out.breakdown.recon_x = g.mean(rec_x).scalar();
  out.breakdown.recon_xp = g.mean(rec_xp).scalar();
  out.breakdown.kl_term = g.mean(kl).scalar();
  out.breakdown.total = total.scalar();
  // value-only diagnostic
  {
    const Tensor& mx = qx.mean.value();
    const Tensor& mxp = qxp.mean.value();
    double t3 = 0.0;
    for (std::size_t i = 0; i < mx.rows(); ++i)
      for (std::size_t j = 0; j < mx.cols(); ++j) {
        const double dm = mx.at(i, j) - mxp.at(i, j);
        const double sm = mx.at(i, j) + mxp.at(i, j);
        t3 += dm * dm / cfg.sigma_aug[j] + sm * sm / (2.0 + cfg.sigma_aug[j]);
      }
    out.breakdown.term3 = t3 / static_cast<double>(mx.rows());
  }
  return out;
}

// Mixture-prior pair bound: closed rows plus the one-sample reparameterized
// estimate of the midpoint mixture term; the mixture parameters receive
// gradients through the same tape.
inline ObjectiveResult gmm_raven_objective(Graph& g, ModelBinding& mb, GmmBinding& gb, const Tensor& x,
                                           const Tensor& xp, const Tensor& eps, const Tensor& eps_p,
                                           const RavenBoundConfig& cfg) {
  if (x.shape != xp.shape) throw Error("gmm objective: pair members must share a shape");
  Var xv = g.constant(x);
  Var xpv = g.constant(xp);
  PosteriorVars qx = encode(mb, xv);
  PosteriorVars qxp = encode(mb, xpv);
  Var zx = reparameterize(g, qx, eps);
  Var zxp = reparameterize(g, qxp, eps_p);
  Var rec_x = recon_rows(g, decode(mb, zx), xv, cfg.recon);
  Var rec_xp = recon_rows(g, decode(mb, zxp), xpv, cfg.recon);
  Var mid = g.scalar_mul(g.add(zx, zxp), 0.5);
  Var kl = g.add(gmm_kl_closed_rows(g, qx, qxp, cfg), gmm_midpoint_rows(g, mid, gb, cfg));
  Var total = g.mean(g.add(g.add(rec_x, rec_xp), kl));

  ObjectiveResult out{total, {}};
  out.breakdown.recon_x = g.mean(rec_x).scalar();
  out.breakdown.recon_xp = g.mean(rec_xp).scalar();
  out.breakdown.kl_term = g.mean(kl).scalar();
  out.breakdown.total = total.scalar();
  {
    const Tensor& mx = qx.mean.value();
    const Tensor& mxp = qxp.mean.value();
    double t3 = 0.0;
    for (std::size_t i = 0; i < mx.rows(); ++i)
      for (std::size_t j = 0; j < mx.cols(); ++j) {
        const double dm = mx.at(i, j) - mxp.at(i, j);
        t3 += dm * dm / cfg.sigma_aug[j];
      }
    out.breakdown.term3 = t3 / static_cast<double>(mx.rows());
  }
  return out;
}

}  // namespace raven
