#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "raven/dataset.hpp"
#include "raven/objectives.hpp"

namespace raven {

enum class Regime { kVanilla, kNoiseVae, kRaven, kRavenGmm };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kVanilla: return "vanilla";
    case Regime::kNoiseVae: return "noise_vae";
    case Regime::kRaven: return "raven";
    case Regime::kRavenGmm: return "raven_gmm";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "vanilla") return Regime::kVanilla;
  if (s == "noise_vae") return Regime::kNoiseVae;
  if (s == "raven") return Regime::kRaven;
  if (s == "raven_gmm") return Regime::kRavenGmm;
  throw Error("unknown regime: " + s);
}

// (x, x') = (original, original + gaussian pixel noise).
struct AugmentationSpec {
  double noise_std = 0.05;

  void validate() const {
    if (noise_std < 0.0) throw Error("augmentation: noise_std must be >= 0");
  }
};

struct TrainConfig {
  Regime regime = Regime::kVanilla;
  int epochs = 50;
  int batch_size = 128;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {500, 250};
  RavenBoundConfig bound;
  AugmentationSpec aug;
  int gmm_components = 0;       // raven_gmm only
  double clip_norm = 100.0;     // divergence guard on the global gradient norm
  std::string checkpoint_dir;   // per-epoch checkpoints when non-empty
  std::string config_hash;

  void validate() const {
    if (epochs < 1) throw Error("train config: epochs must be >= 1");
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw Error("train config: learning_rate must be > 0");
    bound.validate();
    aug.validate();
    if (regime == Regime::kRavenGmm && gmm_components < 1 && !bound.gmm)
      throw Error("train config: raven_gmm requires a mixture spec (gmm_components >= 1)");
  }
};

// Noisy twin batch; fresh noise per call.
inline std::pair<Tensor, Tensor> make_pair(const Tensor& originals, const AugmentationSpec& spec,
                                           Rng& rng) {
  spec.validate();
  Tensor noisy = originals;
  for (auto& v : noisy.data) v += spec.noise_std * rng.normal();
  return {originals, std::move(noisy)};
}

// ---------------------------------------------------------------------------
// Rectified adaptive-moment optimizer. Below the rectification threshold
// (rho_t <= 4) the step is momentum-only; above it the adaptive step applies
// with the variance-rectification multiplier.
// ---------------------------------------------------------------------------

struct RAdamState {
  std::vector<Vec> m;
  std::vector<Vec> v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static RAdamState init(const std::vector<Tensor*>& params) {
    RAdamState s;
    for (const Tensor* p : params) {
      s.m.emplace_back(p->numel(), 0.0);
      s.v.emplace_back(p->numel(), 0.0);
    }
    return s;
  }
};

inline void radam_step(RAdamState& s, const std::vector<Tensor*>& params,
                       const std::vector<const Vec*>& grads, double lr) {
  if (params.size() != grads.size() || params.size() != s.m.size())
    throw Error("radam: parameter/gradient count mismatch");
  if (!(lr > 0.0) && lr != 0.0) throw Error("radam: learning rate must be >= 0");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k]->size() != params[k]->numel()) throw Error("radam: gradient shape mismatch");
    for (double gv : *grads[k])
      if (!std::isfinite(gv)) throw Error("radam: non-finite gradient");
  }

  s.t += 1;
  const double b1t = std::pow(s.beta1, static_cast<double>(s.t));
  const double b2t = std::pow(s.beta2, static_cast<double>(s.t));
  const double rho_inf = 2.0 / (1.0 - s.beta2) - 1.0;
  const double rho_t = rho_inf - 2.0 * static_cast<double>(s.t) * b2t / (1.0 - b2t);
  double rect = 0.0;
  const bool adaptive = rho_t > 4.0;
  if (adaptive)
    rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

  for (std::size_t k = 0; k < params.size(); ++k) {
    Vec& m = s.m[k];
    Vec& v = s.v[k];
    const Vec& grad = *grads[k];
    Tensor& p = *params[k];
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * grad[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / (1.0 - b1t);
      if (adaptive) {
        const double v_hat = std::sqrt(v[i] / (1.0 - b2t));
        p.data[i] -= lr * rect * m_hat / (v_hat + s.eps);
      } else {
        p.data[i] -= lr * m_hat;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct MetricsRow {
  long step = 0;
  int epoch = 0;
  std::string regime;
  double loss = 0.0;
  BoundBreakdown breakdown;
  double wall_seconds = 0.0;  // sidecar only; excluded from the metrics csv
};

struct TrainResult {
  VaeModel model;
  std::optional<GmmParams> gmm;
  std::vector<MetricsRow> metrics;
  bool diverged = false;
  long steps = 0;
  long clip_events = 0;
};

namespace detail_train {

inline Tensor gather_rows(const Tensor& images, const std::vector<std::size_t>& idx, std::size_t lo,
                          std::size_t hi) {
  const std::size_t d = images.cols();
  Tensor out = Tensor::zeros({hi - lo, d});
  for (std::size_t r = lo; r < hi; ++r)
    for (std::size_t j = 0; j < d; ++j) out.at(r - lo, j) = images.at(idx[r], j);
  return out;
}

inline Tensor normal_like(const Shape& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  rng.fill_normal(t.data);
  return t;
}

// Global-norm clip across all gradients; mutates in place, reports activity.
inline bool clip_global_norm(std::vector<Vec>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return false;
  const double scale = max_norm / norm;
  for (auto& g : grads)
    for (double& v : g) v *= scale;
  return true;
}

}  // namespace detail_train

// Runs the configured regime over the dataset. Divergence (non-finite loss)
// aborts with the most recent finite parameters retained in the result.
inline TrainResult train(const TrainConfig& config, const Dataset& dataset) {
  using namespace detail_train;
  config.validate();
  dataset.validate();
  if (dataset.dim() == 0) throw Error("train: empty dataset");

  Rng root(config.seed);
  Rng init_rng = root.fork(1);
  Rng noise_rng = root.fork(2);
  Rng shuffle_rng = root.fork(3);
  Rng reparam_rng = root.fork(4);

  TrainResult result;
  result.model = VaeModel::init(static_cast<int>(dataset.dim()), config.bound.latent_dim,
                                config.hidden, init_rng);
  const bool paired = config.regime == Regime::kRaven || config.regime == Regime::kRavenGmm;
  if (config.regime == Regime::kRavenGmm) {
    result.gmm = config.bound.gmm ? GmmParams::from_prior(*config.bound.gmm)
                                  : GmmParams::init(config.gmm_components, config.bound.latent_dim,
                                                    init_rng);
  }

  std::vector<Tensor*> params;
  for (auto& p : result.model.parameters()) params.push_back(p.tensor);
  if (result.gmm)
    for (auto& p : result.gmm->parameters()) params.push_back(p.tensor);
  RAdamState opt = RAdamState::init(params);

  std::vector<Tensor> last_finite;
  auto snapshot = [&] {
    last_finite.clear();
    for (Tensor* p : params) last_finite.push_back(*p);
  };
  auto restore = [&] {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = last_finite[i];
  };
  snapshot();

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t d = static_cast<std::size_t>(config.bound.latent_dim);
  long step = 0;

  for (int epoch = 0; epoch < config.epochs && !result.diverged; ++epoch) {
    // regime-specific epoch view of the data, with fresh augmentation noise
    const Tensor& originals = dataset.images;
    Tensor noisy;
    std::size_t n_rows = dataset.size();
    if (paired || config.regime == Regime::kNoiseVae) {
      auto pair = make_pair(dataset.images, config.aug, noise_rng);
      noisy = std::move(pair.second);
    }
    if (config.regime == Regime::kNoiseVae) n_rows = 2 * dataset.size();

    std::vector<std::size_t> order(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i) order[i] = i;
    for (std::size_t i = n_rows; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    for (std::size_t lo = 0; lo < n_rows; lo += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t hi = std::min(n_rows, lo + static_cast<std::size_t>(config.batch_size));
      const std::size_t bsz = hi - lo;

      ObjectiveResult obj;
      double loss = 0.0;
      try {
        Graph g;
        ModelBinding mb = bind(g, result.model, true);
        std::optional<GmmBinding> gb;
        if (config.regime == Regime::kRavenGmm) gb = bind(g, *result.gmm, true);

        if (config.regime == Regime::kVanilla || config.regime == Regime::kNoiseVae) {
          Tensor batch = Tensor::zeros({bsz, dataset.dim()});
          for (std::size_t r = lo; r < hi; ++r) {
            const std::size_t src = order[r];
            const Tensor& from = src < dataset.size() ? originals : noisy;
            const std::size_t row = src < dataset.size() ? src : src - dataset.size();
            for (std::size_t j = 0; j < dataset.dim(); ++j) batch.at(r - lo, j) = from.at(row, j);
          }
          const Tensor eps = normal_like({bsz, d}, reparam_rng);
          obj = vanilla_elbo_objective(g, mb, batch, eps, config.bound.recon);
        } else {
          Tensor bx = gather_rows(originals, order, lo, hi);
          Tensor bxp = gather_rows(noisy, order, lo, hi);
          const Tensor eps = normal_like({bsz, d}, reparam_rng);
          const Tensor eps_p = normal_like({bsz, d}, reparam_rng);
          if (config.regime == Regime::kRaven) {
            obj = raven_objective(g, mb, bx, bxp, eps, eps_p, config.bound);
          } else {
            obj = gmm_raven_objective(g, mb, *gb, bx, bxp, eps, eps_p, config.bound);
          }
        }

        loss = -obj.breakdown.total;
        if (!std::isfinite(loss)) throw Error("train: non-finite loss");

        g.backward(obj.total);
        std::vector<Var> leaves = mb.params;
        if (gb) {
          leaves.push_back(gb->logits);
          for (std::size_t c = 0; c < gb->means.size(); ++c) {
            leaves.push_back(gb->means[c]);
            leaves.push_back(gb->logvars[c]);
          }
        }
        std::vector<Vec> grads;
        grads.reserve(leaves.size());
        for (Var leaf : leaves) {
          Vec gv = g.grad(leaf);
          for (double& v : gv) v = -v;  // maximize the bound
          grads.push_back(std::move(gv));
        }

        if (clip_global_norm(grads, config.clip_norm)) ++result.clip_events;
        snapshot();
        std::vector<const Vec*> grad_ptrs;
        for (auto& gv : grads) grad_ptrs.push_back(&gv);
        radam_step(opt, params, grad_ptrs, config.learning_rate);
      } catch (const Error&) {
        // divergence surfaces either as a non-finite loss or as an overflow
        // inside the forward/backward pass; keep the last finite parameters
        result.diverged = true;
        restore();
        break;
      }

      MetricsRow row;
      row.step = step++;
      row.epoch = epoch;
      row.regime = regime_name(config.regime);
      row.loss = loss;
      row.breakdown = obj.breakdown;
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.metrics.push_back(std::move(row));
    }

    if (!config.checkpoint_dir.empty() && !result.diverged) {
      save_checkpoint(config.checkpoint_dir + "/epoch_" + std::to_string(epoch), result.model,
                      config.config_hash, result.gmm ? &*result.gmm : nullptr);
    }
  }

  result.steps = step;
  return result;
}

}  // namespace raven
