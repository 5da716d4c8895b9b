// Acceptance suite, machine-independent part. Each criterion prints exactly
// one [PASS]/[FAIL] line; the process exits nonzero if any criterion fails.
// The desk-scale dataset criteria live in acceptance_desk.cpp.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "raven/cli.hpp"
#include "raven/oracle.hpp"
#include "raven/robustness.hpp"
#include "raven/trainer.hpp"

using namespace raven;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double now_seconds() {
  static const auto t0 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "<missing:" + path + ">";
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

// criterion 1: the full identity battery at its pinned tolerances, < 2 min.
void criterion_1() {
  const double t0 = now_seconds();
  const auto rows = run_verification(7);
  const double elapsed = now_seconds() - t0;
  std::size_t failed = 0;
  std::string worst_name;
  double worst_margin = 0.0;
  for (const auto& r : rows) {
    if (!r.pass) {
      ++failed;
      worst_name = r.name;
    }
    worst_margin = std::fmax(worst_margin, r.threshold > 0 ? r.error / r.threshold : 0.0);
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "math-oracle suite: %zu identities, %zu failed, worst error at %.2f%% of its "
                "threshold, %.1f s (< 120 s required)",
                rows.size(), failed, 100.0 * worst_margin, elapsed);
  report(1, failed == 0 && elapsed < 120.0, buf);
}

// criterion 2: pair kl term == -MC divergence on 20 random instances, and the
// frozen d=1 instance. The frozen value is the oracle-derived divergence (see
// the project notes on the closed-form constant).
void criterion_2() {
  Rng root(2024);
  bool mc_ok = true;
  double worst_z = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t d = 1 + root.below(5);
    RavenBoundConfig cfg;
    cfg.latent_dim = static_cast<int>(d);
    cfg.sigma_aug = detail_oracle::random_sigma_aug(d, root);
    DiagGaussian qx = detail_oracle::random_diag(d, root, 1.0);
    DiagGaussian qxp = detail_oracle::random_diag(d, root, 1.0);
    for (std::size_t i = 0; i < d; ++i)
      qxp.mean[i] = qx.mean[i] + std::sqrt(cfg.sigma_aug[i]) * root.uniform(-2.0, 2.0);
    const double closed = raven_kl_term(qx, qxp, cfg);
    McEstimate mc = mc_kl_paired(qx, qxp, cfg.sigma_aug, 1000000, root);
    const double z = std::fabs(closed + mc.mean) / mc.se;
    worst_z = std::fmax(worst_z, z);
    mc_ok = mc_ok && z <= 3.0;
  }

  RavenBoundConfig fixed = RavenBoundConfig::isotropic(1, 1.0);
  DiagGaussian std1({0.0}, {1.0});
  const double fixed_value = raven_kl_term(std1, std1, fixed);
  const double frozen = -0.21597281100072152;
  const bool fixed_ok = std::fabs(fixed_value - frozen) < 1e-6;

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "pair kl term vs MC divergence: worst |z| = %.2f (<= 3), fixed instance = %.10f "
                "(frozen oracle value %.10f)",
                worst_z, fixed_value, frozen);
  report(2, mc_ok && fixed_ok, buf);
}

// criterion 3: with a unit-posterior partner and the golden-ratio kernel
// width, pair kl term + standard kl term is constant across posteriors.
void criterion_3() {
  const std::size_t d = 6;
  RavenBoundConfig cfg;
  cfg.latent_dim = static_cast<int>(d);
  cfg.sigma_aug.assign(d, 0.5 * (std::sqrt(5.0) - 1.0));
  DiagGaussian unit(Vec(d, 0.0), Vec(d, 1.0));
  Rng rng(3);
  double mean = 0.0, m2 = 0.0;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    DiagGaussian qx = detail_oracle::random_diag(d, rng);
    const double v = raven_kl_term(qx, unit, cfg) + kl_diag(qx, unit);
    mean += v;
    m2 += v * v;
  }
  mean /= n;
  const double variance = std::fmax(0.0, m2 / n - mean * mean);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "bound-consistency shift is constant: variance %.3e over 100 posteriors (< 1e-10)",
                variance);
  report(3, variance < 1e-10, buf);
}

// criterion 4: end-to-end bound gradients vs central differences on a toy
// model (D=8, d=2), every parameter coordinate, < 30 s.
void criterion_4() {
  const double t0 = now_seconds();
  Rng rng(4);
  VaeModel model = VaeModel::init(8, 2, {16, 8}, rng);
  Tensor x = Tensor::zeros({4, 8}), xp = Tensor::zeros({4, 8});
  for (auto& v : x.data) v = rng.uniform(0.05, 0.95);
  for (std::size_t i = 0; i < xp.numel(); ++i)
    xp.data[i] = std::clamp(x.data[i] + 0.05 * rng.normal(), 0.0, 1.0);
  Tensor eps = Tensor::zeros({4, 2}), eps_p = Tensor::zeros({4, 2});
  rng.fill_normal(eps.data);
  rng.fill_normal(eps_p.data);
  RavenBoundConfig cfg = RavenBoundConfig::isotropic(2, 0.25);

  auto params = model.parameters();
  Graph g;
  ModelBinding mb = bind(g, model, true);
  ObjectiveResult obj = raven_objective(g, mb, x, xp, eps, eps_p, cfg);
  g.backward(obj.total);

  const double h = 1e-5;
  double worst = 0.0;
  std::size_t coords = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Vec& g_ad = g.grad(mb.params[pi]);
    Tensor& t = *params[pi].tensor;
    for (std::size_t idx = 0; idx < t.numel(); ++idx, ++coords) {
      const double keep = t.data[idx];
      auto eval = [&] {
        Graph gg;
        ModelBinding mbb = bind(gg, model, false);
        return raven_objective(gg, mbb, x, xp, eps, eps_p, cfg).breakdown.total;
      };
      t.data[idx] = keep + h;
      const double fp = eval();
      t.data[idx] = keep - h;
      const double fm = eval();
      t.data[idx] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::fmax(worst, std::fabs(g_ad[idx] - fd) / std::fmax(1.0, std::fabs(g_ad[idx])));
    }
  }
  const double elapsed = now_seconds() - t0;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "end-to-end bound gradient vs finite differences: worst rel err %.3e over %zu "
                "coordinates (< 1e-4), %.1f s (< 30 s)",
                worst, coords, elapsed);
  report(4, worst < 1e-4 && elapsed < 30.0, buf);
}

// criterion 8: attack budget invariant on every sample plus the monotone
// accuracy-vs-budget property, exercised end to end on the synthetic dataset.
void criterion_8() {
  Dataset all = synth_blobs(4, 400, 32, 1.2, 88);
  auto [train_ds, test_ds] = split_train_test(all, 320, 5);

  TrainConfig cfg;
  cfg.regime = Regime::kVanilla;
  cfg.epochs = 15;
  cfg.batch_size = 128;
  cfg.seed = 8;
  cfg.hidden = {64, 32};
  cfg.bound = RavenBoundConfig::isotropic(8, 0.1);
  TrainResult trained = train(cfg, train_ds);
  if (trained.diverged) {
    report(8, false, "attack contract: training diverged, cannot evaluate");
    return;
  }

  Tensor z_train = extract_representations(trained.model, train_ds.images);
  LinearProbe probe = fit_linear_probe(z_train, train_ds.labels);

  const std::vector<double> grid = {0.0, 0.05, 0.1, 0.15, 0.2};
  bool budget_ok = true;
  std::size_t attacked = 0;
  bool increases_ok = true;
  std::vector<std::vector<double>> acc_by_obj;
  for (AttackObjective obj : {AttackObjective::kKl, AttackObjective::kW2}) {
    std::vector<double> accs;
    for (double delta : grid) {
      if (delta == 0.0) {
        accs.push_back(accuracy(probe_predict(probe, extract_representations(trained.model,
                                                                             test_ds.images)),
                                test_ds.labels));
        continue;
      }
      AttackConfig acfg;
      acfg.delta = delta;
      acfg.objective = obj;
      AttackResult atk = pgd_attack(trained.model, test_ds.images, acfg);
      for (std::size_t i = 0; i < test_ds.size(); ++i) {
        ++attacked;
        double linf = 0.0;
        for (std::size_t j = 0; j < test_ds.dim(); ++j)
          linf = std::fmax(linf, std::fabs(atk.eps.at(i, j)));
        budget_ok = budget_ok && linf <= delta + 1e-12;
      }
      // ascent sanity along the way
      std::size_t improved = 0;
      for (std::size_t i = 0; i < test_ds.size(); ++i)
        improved += atk.objective_trace.back()[i] > atk.objective_trace.front()[i];
      increases_ok = increases_ok && improved >= (test_ds.size() * 9) / 10;

      Tensor adv = test_ds.images;
      for (std::size_t k = 0; k < adv.numel(); ++k) adv.data[k] += atk.eps.data[k];
      accs.push_back(accuracy(probe_predict(probe, extract_representations(trained.model, adv)),
                              test_ds.labels));
    }
    acc_by_obj.push_back(accs);
  }

  // monotone non-increasing, at most one inversion of <= 0.5 points
  bool monotone_ok = true;
  for (const auto& accs : acc_by_obj) {
    int inversions = 0;
    double worst_inv = 0.0;
    for (std::size_t i = 1; i < accs.size(); ++i)
      if (accs[i] > accs[i - 1]) {
        ++inversions;
        worst_inv = std::fmax(worst_inv, accs[i] - accs[i - 1]);
      }
    monotone_ok = monotone_ok && (inversions == 0 || (inversions == 1 && worst_inv <= 0.005));
  }

  std::ostringstream detail;
  detail << "attack contract: budget holds on " << attacked
         << "/" << attacked << " attacked samples, ascent on >= 90% per sweep, accuracy-vs-budget"
         << " kl=[";
  for (double a : acc_by_obj[0]) detail << " " << a;
  detail << " ] w2=[";
  for (double a : acc_by_obj[1]) detail << " " << a;
  detail << " ]";
  report(8, budget_ok && increases_ok && monotone_ok, detail.str());
}

// criterion 9: identical manifests give byte-identical metrics csvs, via the
// real command dispatcher.
void criterion_9() {
  const fs::path tmp = fs::temp_directory_path() / "raven_acceptance_determinism";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  auto train_args = [&](const std::string& out) {
    return std::vector<std::string>{
        "train",       "--dataset", "synth",      "--synth-classes", "3",
        "--synth-per-class", "120", "--synth-dim", "16",             "--synth-sep", "1.2",
        "--regime",    "raven",     "--epochs",   "2",               "--batch-size", "64",
        "--latent-dim", "3",        "--hidden",   "24,12",           "--seed", "99",
        "--sigma-aug", "0.1",       "--out-dir",  (tmp / out).string(), "--no-epoch-checkpoints"};
  };
  bool ok = dispatch(train_args("a")) == 0 && dispatch(train_args("b")) == 0;
  const std::string ma = slurp((tmp / "a/metrics.csv").string());
  const std::string mb = slurp((tmp / "b/metrics.csv").string());
  ok = ok && !ma.empty() && ma == mb;

  // evaluate twice against the same checkpoint
  auto eval_args = [&](const std::string& out) {
    return std::vector<std::string>{
        "evaluate",    "--dataset", "synth",      "--synth-classes", "3",
        "--synth-per-class", "120", "--synth-dim", "16",             "--synth-sep", "1.2",
        "--checkpoint", (tmp / "a/checkpoint").string(),
        "--delta-grid", "0,0.05",   "--objective", "kl",             "--iterations", "10",
        "--out-dir",   (tmp / out).string()};
  };
  ok = ok && dispatch(eval_args("ea")) == 0 && dispatch(eval_args("eb")) == 0;
  const std::string ea = slurp((tmp / "ea/eval.csv").string());
  const std::string eb = slurp((tmp / "eb/eval.csv").string());
  ok = ok && !ea.empty() && ea == eb;

  report(9, ok,
         "determinism: repeated train and evaluate runs with identical manifests produce "
         "byte-identical metrics csvs");
  fs::remove_all(tmp);
}

}  // namespace

int main() {
  std::printf("acceptance (core criteria)\n");
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_8();
  criterion_9();
  std::printf("criteria 5-7 are desk-scale dataset criteria; see raven_acceptance_desk\n");
  if (g_failures > 0) {
    std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("acceptance: all core criteria passed\n");
  return 0;
}
