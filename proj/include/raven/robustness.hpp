#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "raven/dataset.hpp"
#include "raven/objectives.hpp"

namespace raven {

enum class AttackObjective { kKl, kW2 };

inline const char* objective_name(AttackObjective o) { return o == AttackObjective::kKl ? "kl" : "w2"; }

inline AttackObjective parse_objective(const std::string& s) {
  if (s == "kl") return AttackObjective::kKl;
  if (s == "w2") return AttackObjective::kW2;
  throw Error("unknown attack objective: " + s);
}

struct AttackConfig {
  double delta = 0.1;          // l-infinity budget
  int iterations = 50;
  double step = -1.0;          // <= 0 resolves to delta / 25
  AttackObjective objective = AttackObjective::kKl;
  std::uint64_t seed = 0;
  bool random_start = false;   // ablation switch; default starts at eps = 0

  double resolved_step() const { return step > 0.0 ? step : delta / 25.0; }

  void validate() const {
    if (iterations < 1) throw Error("attack config: iterations must be >= 1");
    if (delta < 0.0) throw Error("attack config: delta must be >= 0");
    if (delta > 0.0 && !(resolved_step() > 0.0))
      throw Error("attack config: step must be > 0 when delta > 0");
  }
};

struct AttackResult {
  Tensor eps;                       // [N, D], max-norm within budget
  Vec objective_start;              // [N]
  Vec objective_best;               // [N]
  std::vector<char> failed;         // per-sample non-finite abort
  std::vector<Vec> objective_trace; // per iteration, [N] each (start first)

  std::size_t failures() const {
    std::size_t n = 0;
    for (char f : failed) n += f != 0;
    return n;
  }
};

namespace detail_attack {

// Posterior dissimilarity rows Delta[q(.|x), q(.|x+eps)], differentiable in
// the perturbed posterior. The clean posterior enters as constants.
inline Var objective_rows(Graph& g, const Tensor& mu0, const Tensor& lv0, const PosteriorVars& q,
                          AttackObjective objective) {
  Var mu0c = g.constant(mu0);
  Var lv0c = g.constant(lv0);
  if (objective == AttackObjective::kKl) {
    // KL(q0 || q_pert) = 1/2 sum_d [ e^(lv0-lv) + (mu-mu0)^2 e^(-lv) - 1 + lv - lv0 ]
    Var ratio = g.exp(g.sub(lv0c, q.logvar));
    Var quad = g.div(g.square(g.sub(q.mean, mu0c)), g.exp(q.logvar));
    Var inner = g.add(g.add(ratio, quad), g.scalar_add(g.sub(q.logvar, lv0c), -1.0));
    return g.scalar_mul(g.row_sum(inner), 0.5);
  }
  // squared 2-Wasserstein: ||mu - mu0||^2 + sum_d (sigma - sigma0)^2
  Var sigma = g.exp(g.scalar_mul(q.logvar, 0.5));
  Var sigma0 = g.exp(g.scalar_mul(lv0c, 0.5));
  return g.add(g.row_sum(g.square(g.sub(q.mean, mu0c))),
               g.row_sum(g.square(g.sub(sigma, sigma0))));
}

inline void attack_chunk(VaeModel& model, const Tensor& x, const AttackConfig& cfg,
                         AttackResult& out, std::size_t row_lo, std::size_t row_hi) {
  const std::size_t n = row_hi - row_lo;
  const std::size_t dim = x.cols();
  Tensor xc = Tensor::zeros({n, dim});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) xc.at(i, j) = x.at(row_lo + i, j);

  Tensor mu0, lv0;
  {
    Graph g;
    ModelBinding mb = bind(g, model, false);
    PosteriorVars q0 = encode(mb, g.constant(xc));
    mu0 = q0.mean.value();
    lv0 = q0.logvar.value();
  }

  Tensor eps = Tensor::zeros({n, dim});
  if (cfg.random_start && cfg.delta > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      // per-sample stream so chunking does not affect the draw
      Rng rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (row_lo + i + 1)));
      for (std::size_t j = 0; j < dim; ++j) eps.at(i, j) = rng.uniform(-cfg.delta, cfg.delta);
    }
  }

  Tensor best_eps = eps;
  Vec best(n, -std::numeric_limits<double>::infinity());
  std::vector<char> failed(n, 0);
  std::vector<Vec> trace;

  const double step = cfg.delta > 0.0 ? cfg.resolved_step() : 0.0;
  const int rounds = cfg.delta > 0.0 ? cfg.iterations : 0;

  auto record = [&](const Vec& rows) {
    for (std::size_t i = 0; i < n; ++i) {
      if (failed[i]) continue;
      if (!std::isfinite(rows[i])) {
        failed[i] = 1;
        continue;
      }
      if (rows[i] > best[i]) {
        best[i] = rows[i];
        for (std::size_t j = 0; j < dim; ++j) best_eps.at(i, j) = eps.at(i, j);
      }
    }
    trace.push_back(rows);
  };

  auto forward_rows = [&](bool with_grad, Tensor* grad_out) {
    Tensor xp = xc;
    for (std::size_t k = 0; k < xp.numel(); ++k) xp.data[k] += eps.data[k];
    Graph g;
    ModelBinding mb = bind(g, model, false);
    Var xv = g.leaf(xp, with_grad);
    PosteriorVars q = encode(mb, xv);
    Var rows = objective_rows(g, mu0, lv0, q, cfg.objective);
    Vec values = rows.value().data;
    if (with_grad) {
      g.backward(g.sum(rows));
      *grad_out = g.grad_tensor(xv);
    }
    return values;
  };

  // evaluate the start point, then take sign-gradient steps with projection
  {
    Tensor unused;
    record(forward_rows(false, &unused));
  }
  for (int t = 0; t < rounds; ++t) {
    Tensor grad;
    Vec rows = forward_rows(true, &grad);
    if (t > 0) record(rows);  // start already recorded
    for (std::size_t i = 0; i < n; ++i) {
      if (failed[i]) continue;
      bool all_zero = true;
      for (std::size_t j = 0; j < dim && all_zero; ++j) all_zero = grad.at(i, j) == 0.0;
      if (all_zero) {
        // the dissimilarity is minimized at eps = 0 with an exactly-zero
        // gradient; a uniform kick breaks the stationary start
        for (std::size_t j = 0; j < dim; ++j)
          eps.at(i, j) = std::clamp(eps.at(i, j) + step, -cfg.delta, cfg.delta);
        continue;
      }
      for (std::size_t j = 0; j < dim; ++j) {
        const double gij = grad.at(i, j);
        const double sgn = gij > 0.0 ? 1.0 : (gij < 0.0 ? -1.0 : 0.0);
        eps.at(i, j) = std::clamp(eps.at(i, j) + step * sgn, -cfg.delta, cfg.delta);
      }
    }
  }
  if (rounds > 0) {
    Tensor unused;
    record(forward_rows(false, &unused));
  }

  for (std::size_t i = 0; i < n; ++i) {
    out.objective_start[row_lo + i] = trace.front()[i];
    out.objective_best[row_lo + i] = best[i];
    out.failed[row_lo + i] = failed[i];
    for (std::size_t j = 0; j < dim; ++j) out.eps.at(row_lo + i, j) = best_eps.at(i, j);
  }
  for (std::size_t t = 0; t < trace.size(); ++t)
    for (std::size_t i = 0; i < n; ++i) out.objective_trace[t][row_lo + i] = trace[t][i];
}

}  // namespace detail_attack

// Sign-gradient ascent on the posterior dissimilarity with projection onto
// the max-norm ball; returns the best iterate per sample. Samples are
// independent; chunks run on a small worker pool.
inline AttackResult pgd_attack(VaeModel& model, const Tensor& x, const AttackConfig& cfg) {
  cfg.validate();
  if (x.rank() != 2) throw Error("pgd_attack: expects [N, D] inputs");
  if (!x.all_finite()) throw Error("pgd_attack: non-finite input");

  const std::size_t n = x.rows();
  AttackResult out;
  out.eps = Tensor::zeros(x.shape);
  out.objective_start.assign(n, 0.0);
  out.objective_best.assign(n, 0.0);
  out.failed.assign(n, 0);
  const std::size_t evals = cfg.delta > 0.0 ? static_cast<std::size_t>(cfg.iterations) + 1 : 1;
  out.objective_trace.assign(evals, Vec(n, 0.0));

  const std::size_t chunk = 256;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t lo = 0; lo < n; lo += chunk) ranges.push_back({lo, std::min(n, lo + chunk)});

  const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                                           static_cast<unsigned>(ranges.size())));
  if (workers <= 1 || ranges.size() == 1) {
    for (auto [lo, hi] : ranges) detail_attack::attack_chunk(model, x, cfg, out, lo, hi);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t k = next.fetch_add(1);
          if (k >= ranges.size()) return;
          detail_attack::attack_chunk(model, x, cfg, out, ranges[k].first, ranges[k].second);
        }
      });
    for (auto& t : pool) t.join();
  }

  for (double v : out.eps.data)
    if (std::fabs(v) > cfg.delta + 1e-12) throw Error("pgd_attack: budget violated");
  return out;
}

// Representation of a dataset: the posterior mean per input, no sampling.
inline Tensor extract_representations(VaeModel& model, const Tensor& images) {
  const std::size_t n = images.rows();
  const std::size_t d = static_cast<std::size_t>(model.latent_dim);
  Tensor z = Tensor::zeros({n, d});
  const std::size_t chunk = 1024;
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t hi = std::min(n, lo + chunk);
    Tensor part = Tensor::zeros({hi - lo, images.cols()});
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < images.cols(); ++j) part.at(i - lo, j) = images.at(i, j);
    EncodedBatch enc = encode_batch(model, part);
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < d; ++j) z.at(i, j) = enc.mean.at(i - lo, j);
  }
  return z;
}

// ---------------------------------------------------------------------------
// Linear probe: multinomial logistic regression on frozen representations,
// full-batch gradient descent to gradient-norm < 1e-5 or the iteration cap.
// ---------------------------------------------------------------------------

struct LinearProbe {
  Tensor w;  // [d, K]
  Tensor b;  // [K]
  bool degenerate = false;
  long iterations = 0;
  double grad_norm = 0.0;
  double train_accuracy = 0.0;
};

inline std::vector<int> probe_predict(const LinearProbe& probe, const Tensor& z) {
  const std::size_t n = z.rows(), d = z.cols(), k = probe.b.numel();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    int arg = 0;
    double bestv = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double s = probe.b.data[c];
      for (std::size_t j = 0; j < d; ++j) s += z.at(i, j) * probe.w.at(j, c);
      if (s > bestv) {
        bestv = s;
        arg = static_cast<int>(c);
      }
    }
    out[i] = arg;
  }
  return out;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
  if (pred.size() != labels.size() || pred.empty()) throw Error("accuracy: size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

inline LinearProbe fit_linear_probe(const Tensor& z, const std::vector<int>& labels,
                                    long max_iterations = 10000, double grad_tol = 1e-5) {
  if (z.rank() != 2 || z.rows() != labels.size()) throw Error("probe: representation/label mismatch");
  const std::size_t n = z.rows(), d = z.cols();
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw Error("probe: negative label");
    k = std::max(k, l + 1);
  }
  LinearProbe probe;
  probe.w = Tensor::zeros({d, static_cast<std::size_t>(k)});
  probe.b = Tensor::zeros({static_cast<std::size_t>(k)});

  std::vector<char> seen(static_cast<std::size_t>(k), 0);
  for (int l : labels) seen[static_cast<std::size_t>(l)] = 1;
  std::size_t distinct = 0;
  for (char s : seen) distinct += s;
  if (distinct <= 1) {
    // trivially constant probe
    probe.degenerate = true;
    probe.b.data[static_cast<std::size_t>(labels[0])] = 1.0;
    probe.train_accuracy = accuracy(probe_predict(probe, z), labels);
    return probe;
  }

  const std::size_t kk = static_cast<std::size_t>(k);
  Vec probs(n * kk);
  Vec gw(d * kk), gb(kk);
  auto loss_and_grad = [&](const Tensor& w, const Tensor& b, Vec* gw_out, Vec* gb_out) {
    double loss = 0.0;
    if (gw_out) {
      std::fill(gw_out->begin(), gw_out->end(), 0.0);
      std::fill(gb_out->begin(), gb_out->end(), 0.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < kk; ++c) {
        double s = b.data[c];
        for (std::size_t j = 0; j < d; ++j) s += z.at(i, j) * w.at(j, c);
        probs[i * kk + c] = s;
        m = std::fmax(m, s);
      }
      double total = 0.0;
      for (std::size_t c = 0; c < kk; ++c) {
        probs[i * kk + c] = std::exp(probs[i * kk + c] - m);
        total += probs[i * kk + c];
      }
      const std::size_t y = static_cast<std::size_t>(labels[i]);
      loss += -(std::log(probs[i * kk + y]) - std::log(total));
      if (gw_out) {
        for (std::size_t c = 0; c < kk; ++c) {
          const double p = probs[i * kk + c] / total - (c == y ? 1.0 : 0.0);
          (*gb_out)[c] += p;
          for (std::size_t j = 0; j < d; ++j) (*gw_out)[j * kk + c] += z.at(i, j) * p;
        }
      }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    if (gw_out) {
      for (double& v : *gw_out) v *= inv_n;
      for (double& v : *gb_out) v *= inv_n;
    }
    return loss * inv_n;
  };

  double lr = 0.5;
  double loss = loss_and_grad(probe.w, probe.b, &gw, &gb);
  for (long it = 0; it < max_iterations; ++it) {
    double norm_sq = 0.0;
    for (double v : gw) norm_sq += v * v;
    for (double v : gb) norm_sq += v * v;
    probe.grad_norm = std::sqrt(norm_sq);
    probe.iterations = it;
    if (probe.grad_norm < grad_tol) break;

    Tensor w_try = probe.w, b_try = probe.b;
    for (;;) {
      for (std::size_t idx = 0; idx < gw.size(); ++idx) w_try.data[idx] = probe.w.data[idx] - lr * gw[idx];
      for (std::size_t idx = 0; idx < gb.size(); ++idx) b_try.data[idx] = probe.b.data[idx] - lr * gb[idx];
      const double trial = loss_and_grad(w_try, b_try, nullptr, nullptr);
      if (trial <= loss || lr < 1e-12) {
        probe.w = w_try;
        probe.b = b_try;
        loss = trial;
        lr = std::min(lr * 1.1, 64.0);
        break;
      }
      lr *= 0.5;
    }
    loss = loss_and_grad(probe.w, probe.b, &gw, &gb);
  }
  probe.train_accuracy = accuracy(probe_predict(probe, z), labels);
  return probe;
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct AttackRow {
  std::string objective;
  double delta = 0.0;
  double accuracy = 0.0;
  std::size_t failures = 0;
  double mean_best_objective = 0.0;
};

struct EvalReport {
  double clean_accuracy = 0.0;
  std::vector<AttackRow> rows;
  double recon_mse = 0.0;
  double latent_dist_mean = 0.0;
  double latent_dist_std = 0.0;
  Vec per_class_accuracy;
  bool degenerate_probe = false;
  std::size_t test_size = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["clean_accuracy"] = clean_accuracy;
    j["recon_mse"] = recon_mse;
    j["latent_pair_distance"] = {{"mean", latent_dist_mean}, {"std", latent_dist_std}};
    j["per_class_accuracy"] = per_class_accuracy;
    j["degenerate_probe"] = degenerate_probe;
    j["test_size"] = test_size;
    j["attacks"] = nlohmann::json::array();
    for (const auto& r : rows)
      j["attacks"].push_back({{"objective", r.objective},
                              {"delta", r.delta},
                              {"accuracy", r.accuracy},
                              {"failures", r.failures},
                              {"mean_best_objective", r.mean_best_objective}});
    return j;
  }
};

// Mean over images of the pixel-sum squared error; x_hat from the sigmoid
// decoder output at the clean posterior mean.
inline double reconstruction_mse(const Tensor& images, const Tensor& reconstructions) {
  if (images.shape != reconstructions.shape) throw Error("recon mse: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < images.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < images.cols(); ++j) {
      const double dd = images.at(i, j) - reconstructions.at(i, j);
      s += dd * dd;
    }
    total += s;
  }
  return total / static_cast<double>(images.rows());
}

inline Tensor reconstruct(VaeModel& model, const Tensor& images) {
  const std::size_t n = images.rows();
  Tensor out = Tensor::zeros(images.shape);
  const std::size_t chunk = 1024;
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t hi = std::min(n, lo + chunk);
    Tensor part = Tensor::zeros({hi - lo, images.cols()});
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < images.cols(); ++j) part.at(i - lo, j) = images.at(i, j);
    EncodedBatch enc = encode_batch(model, part);
    Tensor rec = decode_batch(model, enc.mean, true);
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < images.cols(); ++j) out.at(i, j) = rec.at(i - lo, j);
  }
  return out;
}

struct LatentPairDistance {
  double mean = 0.0;
  double stddev = 0.0;
};

// Mean +- std of ||z(x) - z(x + eps)||^2 with one seeded gaussian pixel-noise
// realization; the same seed is reused across models under comparison.
inline LatentPairDistance latent_pair_distance(VaeModel& model, const Tensor& images,
                                               double noise_std, std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  Tensor noisy = images;
  for (auto& v : noisy.data) v += noise_std * rng.normal();
  Tensor z_clean = extract_representations(model, images);
  Tensor z_noisy = extract_representations(model, noisy);
  const std::size_t n = images.rows();
  Vec dist(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < z_clean.cols(); ++j) {
      const double dd = z_clean.at(i, j) - z_noisy.at(i, j);
      s += dd * dd;
    }
    dist[i] = s;
  }
  double mean = 0.0;
  for (double v : dist) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : dist) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n > 1 ? n - 1 : 1);
  return {mean, std::sqrt(var)};
}

struct EvalOptions {
  std::vector<double> delta_grid = {0.0, 0.05, 0.1, 0.15, 0.2};
  std::vector<AttackObjective> objectives = {AttackObjective::kKl, AttackObjective::kW2};
  int attack_iterations = 50;
  std::uint64_t attack_seed = 0;
  double pair_noise_std = 0.05;
  std::uint64_t pair_noise_seed = 12345;  // shared across models under comparison
};

inline EvalReport evaluate(VaeModel& model, const LinearProbe& probe, const Dataset& testset,
                           const EvalOptions& opts) {
  testset.validate();
  EvalReport report;
  report.test_size = testset.size();
  report.degenerate_probe = probe.degenerate;

  Tensor z_clean = extract_representations(model, testset.images);
  const std::vector<int> pred = probe_predict(probe, z_clean);
  report.clean_accuracy = accuracy(pred, testset.labels);

  const int k = testset.num_classes();
  report.per_class_accuracy.assign(static_cast<std::size_t>(k), 0.0);
  Vec class_count(static_cast<std::size_t>(k), 0.0);
  for (std::size_t i = 0; i < testset.size(); ++i) {
    const auto c = static_cast<std::size_t>(testset.labels[i]);
    class_count[c] += 1.0;
    if (pred[i] == testset.labels[i]) report.per_class_accuracy[c] += 1.0;
  }
  for (std::size_t c = 0; c < report.per_class_accuracy.size(); ++c)
    if (class_count[c] > 0) report.per_class_accuracy[c] /= class_count[c];

  report.recon_mse = reconstruction_mse(testset.images, reconstruct(model, testset.images));

  const LatentPairDistance lpd =
      latent_pair_distance(model, testset.images, opts.pair_noise_std, opts.pair_noise_seed);
  report.latent_dist_mean = lpd.mean;
  report.latent_dist_std = lpd.stddev;

  for (AttackObjective objective : opts.objectives) {
    for (double delta : opts.delta_grid) {
      AttackRow row;
      row.objective = objective_name(objective);
      row.delta = delta;
      if (delta == 0.0) {
        row.accuracy = report.clean_accuracy;
        report.rows.push_back(row);
        continue;
      }
      AttackConfig cfg;
      cfg.delta = delta;
      cfg.iterations = opts.attack_iterations;
      cfg.objective = objective;
      cfg.seed = opts.attack_seed;
      AttackResult atk = pgd_attack(model, testset.images, cfg);
      Tensor adv = testset.images;
      for (std::size_t idx = 0; idx < adv.numel(); ++idx) adv.data[idx] += atk.eps.data[idx];
      Tensor z_adv = extract_representations(model, adv);
      row.accuracy = accuracy(probe_predict(probe, z_adv), testset.labels);
      row.failures = atk.failures();
      double mean_obj = 0.0;
      for (double v : atk.objective_best) mean_obj += v;
      row.mean_best_objective = mean_obj / static_cast<double>(testset.size());
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace raven
