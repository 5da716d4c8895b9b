#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "raven/bound.hpp"
#include "raven/gaussian.hpp"
#include "raven/rng.hpp"

namespace raven {

// Independent numerical oracles for the closed-form Gaussian identities.
// Integrands are written out directly (no shared closed-form code) so a bug
// in the identities cannot hide in its own check.

namespace quad {

// 16-point Gauss-Legendre rule on [-1, 1].
inline constexpr double kNodes[8] = {
    0.0950125098376374401853193, 0.2816035507792589132304605, 0.4580167776572273863424194,
    0.6178762444026437484466718, 0.7554044083550030338951012, 0.8656312023878317438804679,
    0.9445750230732325760779884, 0.9894009349916499325961542};
inline constexpr double kWeights[8] = {
    0.1894506104550684962853967, 0.1826034150449235888667637, 0.1691565193950025381893121,
    0.1495959888165767320815017, 0.1246289712555338720524763, 0.0951585116824927848099251,
    0.0622535239386478928628438, 0.0271524594117540948517806};

inline double panel(const std::function<double(double)>& f, double a, double b) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < 8; ++i)
    s += kWeights[i] * (f(c + h * kNodes[i]) + f(c - h * kNodes[i]));
  return s * h;
}

inline double composite(const std::function<double(double)>& f, double a, double b, int panels) {
  const double w = (b - a) / panels;
  double s = 0.0;
  for (int i = 0; i < panels; ++i) s += panel(f, a + i * w, a + (i + 1) * w);
  return s;
}

// Panel-doubling composite Gauss-Legendre until successive estimates agree.
inline double adaptive(const std::function<double(double)>& f, double a, double b,
                       double rel_tol = 1e-11, int max_panels = 1 << 15) {
  double prev = composite(f, a, b, 8);
  for (int panels = 16; panels <= max_panels; panels *= 2) {
    const double cur = composite(f, a, b, panels);
    if (std::fabs(cur - prev) <= rel_tol * std::fmax(1e-300, std::fabs(cur))) return cur;
    prev = cur;
  }
  return prev;
}

}  // namespace quad

inline double gauss_pdf_1d(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
}

// Numeric evaluation of the pair-prior integral, one latent axis at a time:
//   integral over t of N(z; t, s) N(z'; t, s) base(t) dt.
// With diagonal kernels and a diagonal-component base distribution the full
// integral is the product over axes (unit-Gaussian base), or the weighted sum
// of per-component axis products (mixture base).
inline double quad_pair_axis(double z, double zp, double s_var, double base_mean, double base_var) {
  const double s_std = std::sqrt(s_var);
  const double spread = 12.0 * std::fmax(s_std, std::sqrt(base_var));
  const double lo = std::min({z, zp, base_mean}) - spread;
  const double hi = std::max({z, zp, base_mean}) + spread;
  auto f = [&](double t) {
    return gauss_pdf_1d(z, t, s_var) * gauss_pdf_1d(zp, t, s_var) * gauss_pdf_1d(t, base_mean, base_var);
  };
  return quad::adaptive(f, lo, hi);
}

inline double quad_paired_prior_log_density(const Vec& z, const Vec& zp, const Vec& sigma_aug_var) {
  double lp = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    lp += std::log(quad_pair_axis(z[i], zp[i], sigma_aug_var[i], 0.0, 1.0));
  return lp;
}

inline double quad_gmm_paired_prior_log_density(const Vec& z, const Vec& zp, const Vec& sigma_aug_var,
                                                const GmmPrior& prior) {
  Vec logs(prior.components());
  for (std::size_t c = 0; c < prior.components(); ++c) {
    double lp = std::log(prior.weights[c]);
    for (std::size_t i = 0; i < z.size(); ++i)
      lp += std::log(quad_pair_axis(z[i], zp[i], sigma_aug_var[i], prior.means[c][i], prior.vars[c][i]));
    logs[c] = lp;
  }
  const double m = *std::max_element(logs.begin(), logs.end());
  double acc = 0.0;
  for (double lv : logs) acc += std::exp(lv - m);
  return m + std::log(acc);
}

// Full 2-d tensor-grid quadrature of the same integral, as a cross-check of
// the per-axis factorization. Only sensible for moderate kernel widths.
inline double quad_paired_prior_log_density_2d_grid(const Vec& z, const Vec& zp,
                                                    const Vec& sigma_aug_var) {
  const double s0 = std::sqrt(sigma_aug_var[0]), s1 = std::sqrt(sigma_aug_var[1]);
  auto axis_bounds = [&](double a, double b, double s) {
    const double spread = 12.0 * std::fmax(s, 1.0);
    return std::pair<double, double>{std::min({a, b, 0.0}) - spread, std::max({a, b, 0.0}) + spread};
  };
  auto [lo0, hi0] = axis_bounds(z[0], zp[0], s0);
  auto [lo1, hi1] = axis_bounds(z[1], zp[1], s1);
  auto inner = [&](double t0) {
    auto f1 = [&](double t1) {
      return gauss_pdf_1d(z[0], t0, sigma_aug_var[0]) * gauss_pdf_1d(zp[0], t0, sigma_aug_var[0]) *
             gauss_pdf_1d(z[1], t1, sigma_aug_var[1]) * gauss_pdf_1d(zp[1], t1, sigma_aug_var[1]) *
             gauss_pdf_1d(t0, 0.0, 1.0) * gauss_pdf_1d(t1, 0.0, 1.0);
    };
    return quad::adaptive(f1, lo1, hi1, 1e-10, 1 << 10);
  };
  return std::log(quad::adaptive(inner, lo0, hi0, 1e-10, 1 << 10));
}

// ---------------------------------------------------------------------------
// Monte-Carlo estimators
// ---------------------------------------------------------------------------

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;

  bool within(double reference, double n_se = 3.0) const {
    return std::fabs(mean - reference) <= n_se * se;
  }
};

namespace detail_mc {

template <typename F>
McEstimate run(std::size_t n, F&& sample_value) {
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = sample_value();
    s += v;
    s2 += v * v;
  }
  const double mean = s / static_cast<double>(n);
  const double var = std::fmax(0.0, s2 / static_cast<double>(n) - mean * mean);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

}  // namespace detail_mc

inline Vec sample_full(const FullGaussian& g, const Mat& chol_l, Rng& rng) {
  Vec x(g.dim());
  Vec xi(g.dim());
  for (auto& v : xi) v = rng.normal();
  for (std::size_t i = 0; i < g.dim(); ++i) {
    double acc = g.mean[i];
    for (std::size_t j = 0; j <= i; ++j) acc += chol_l(i, j) * xi[j];
    x[i] = acc;
  }
  return x;
}

inline Vec sample_diag(const DiagGaussian& g, Rng& rng) {
  Vec x(g.dim());
  for (std::size_t i = 0; i < g.dim(); ++i) x[i] = g.mean[i] + std::sqrt(g.var[i]) * rng.normal();
  return x;
}

inline McEstimate mc_expected_quadratic_form(const Mat& a_mat, const FullGaussian& g, const Vec& shift,
                                             std::size_t n, Rng& rng) {
  const Mat l = cholesky(g.cov);
  return detail_mc::run(n, [&]() {
    const Vec x = sample_full(g, l, rng);
    Vec d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - shift[i];
    const Vec ad = mat_vec(a_mat, d);
    double q = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) q += d[i] * ad[i];
    return q;
  });
}

inline McEstimate mc_cross_entropy(const FullGaussian& a, const FullGaussian& b, std::size_t n,
                                   Rng& rng) {
  const Mat l = cholesky(a.cov);
  return detail_mc::run(n, [&]() { return -log_density(b, sample_full(a, l, rng)); });
}

inline McEstimate mc_entropy(const FullGaussian& a, std::size_t n, Rng& rng) {
  return mc_cross_entropy(a, a, n, rng);
}

// E_{x~a}[ b(x) ]; equals the normalizing scale of the density product.
inline McEstimate mc_product_scale(const FullGaussian& a, const FullGaussian& b, std::size_t n,
                                   Rng& rng) {
  const Mat l = cholesky(a.cov);
  return detail_mc::run(n, [&]() { return std::exp(log_density(b, sample_full(a, l, rng))); });
}

inline McEstimate mc_kl_diag(const DiagGaussian& q, const DiagGaussian& p, std::size_t n, Rng& rng) {
  return detail_mc::run(n, [&]() {
    const Vec x = sample_diag(q, rng);
    return log_density(q, x) - log_density(p, x);
  });
}

// KL(q(z|x) q(z'|x') || paired prior), sampled; the density on the prior side
// is the closed form that the quadrature rows have already certified.
inline McEstimate mc_kl_paired(const DiagGaussian& qx, const DiagGaussian& qxp, const Vec& sigma_aug,
                               std::size_t n, Rng& rng) {
  return detail_mc::run(n, [&]() {
    const Vec z = sample_diag(qx, rng);
    const Vec zp = sample_diag(qxp, rng);
    return log_density(qx, z) + log_density(qxp, zp) - paired_prior_log_density(z, zp, sigma_aug);
  });
}

// ---------------------------------------------------------------------------
// Identity battery (drives the `verify` subcommand and the acceptance suite)
// ---------------------------------------------------------------------------

struct OracleRow {
  std::string name;
  std::uint64_t seed = 0;
  double error = 0.0;      // |closed - oracle|, or the property residual
  double threshold = 0.0;  // pass when error <= threshold
  bool pass = false;
};

namespace detail_oracle {

inline DiagGaussian random_diag(std::size_t d, Rng& rng, double mean_span = 2.0) {
  Vec m(d), v(d);
  for (auto& x : m) x = rng.uniform(-mean_span, mean_span);
  for (auto& x : v) x = rng.uniform(0.1, 4.0);
  return DiagGaussian(std::move(m), std::move(v));
}

inline FullGaussian random_full(std::size_t d, Rng& rng) {
  Vec m(d);
  for (auto& x : m) x = rng.uniform(-2.0, 2.0);
  // A A^T + diag dominance keeps the covariance comfortably PD.
  Mat a(d);
  for (auto& x : a.a) x = rng.uniform(-1.0, 1.0);
  Mat cov(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += a(i, k) * a(j, k);
      cov(i, j) = acc;
    }
  for (std::size_t i = 0; i < d; ++i) cov(i, i) += 0.5 + rng.uniform(0.0, 1.0);
  return FullGaussian(std::move(m), std::move(cov));
}

inline GmmPrior random_gmm(std::size_t components, std::size_t d, Rng& rng) {
  Vec w(components);
  double total = 0.0;
  for (auto& x : w) {
    x = rng.uniform(0.2, 1.0);
    total += x;
  }
  for (auto& x : w) x /= total;
  std::vector<Vec> means(components), vars(components);
  for (std::size_t c = 0; c < components; ++c) {
    means[c].resize(d);
    vars[c].resize(d);
    for (auto& x : means[c]) x = rng.uniform(-1.5, 1.5);
    for (auto& x : vars[c]) x = rng.uniform(0.3, 2.0);
  }
  return GmmPrior(std::move(w), std::move(means), std::move(vars));
}

// Draw a latent pair close enough together that the pair density stays
// representable even for narrow augmentation kernels.
inline std::pair<Vec, Vec> random_pair(std::size_t d, const Vec& sigma_aug, Rng& rng) {
  Vec z(d), zp(d);
  for (std::size_t i = 0; i < d; ++i) {
    z[i] = rng.uniform(-2.0, 2.0);
    zp[i] = z[i] + std::sqrt(2.0 * sigma_aug[i]) * rng.uniform(-3.0, 3.0);
  }
  return {z, zp};
}

inline Vec random_sigma_aug(std::size_t d, Rng& rng) {
  Vec s(d);
  for (auto& x : s) {
    const double stddev = std::exp(rng.uniform(std::log(0.04), std::log(1.5)));
    x = stddev * stddev;
  }
  return s;
}

}  // namespace detail_oracle

// Runs every identity check at its pinned tolerance; one row per instance
// family, error = worst instance.
inline std::vector<OracleRow> run_verification(std::uint64_t seed) {
  using namespace detail_oracle;
  std::vector<OracleRow> rows;
  Rng root(seed);

  auto add = [&](const std::string& name, std::uint64_t inst_seed, double err, double thr) {
    rows.push_back({name, inst_seed, err, thr, err <= thr});
  };

  // Pair-prior closed form vs per-axis quadrature, d = 1 and d = 2.
  for (int d : {1, 2}) {
    Rng rng = root.fork(100 + d);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
      const Vec sa = random_sigma_aug(d, rng);
      auto [z, zp] = random_pair(d, sa, rng);
      const double closed = paired_prior_log_density(z, zp, sa);
      const double numeric = quad_paired_prior_log_density(z, zp, sa);
      worst = std::fmax(worst, std::fabs(closed - numeric));
    }
    add("paired_prior_closed_vs_quadrature_d" + std::to_string(d), seed, worst, 1e-6);
  }

  // Narrow-kernel spot checks mirroring the training-scale settings.
  {
    Rng rng = root.fork(103);
    double worst = 0.0;
    for (double stddev : {0.04, 0.01}) {
      const Vec sa(2, stddev * stddev);
      auto [z, zp] = random_pair(2, sa, rng);
      const double closed = paired_prior_log_density(z, zp, sa);
      worst = std::fmax(worst, std::fabs(closed - quad_paired_prior_log_density(z, zp, sa)));
    }
    add("paired_prior_closed_vs_quadrature_narrow_kernel", seed, worst, 1e-6);
  }

  // Factorized quadrature vs a literal 2-d tensor-grid quadrature.
  {
    Rng rng = root.fork(104);
    double worst = 0.0;
    for (int inst = 0; inst < 3; ++inst) {
      const Vec sa = {rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)};
      auto [z, zp] = random_pair(2, sa, rng);
      const double fac = quad_paired_prior_log_density(z, zp, sa);
      const double grid = quad_paired_prior_log_density_2d_grid(z, zp, sa);
      worst = std::fmax(worst, std::fabs(fac - grid));
    }
    add("paired_prior_quadrature_factorization_crosscheck", seed, worst, 1e-7);
  }

  // Mixture-prior closed form vs quadrature for 1..3 components.
  for (std::size_t components : {1u, 2u, 3u}) {
    Rng rng = root.fork(110 + components);
    double worst = 0.0;
    for (int inst = 0; inst < 34; ++inst) {
      const std::size_t d = 1 + (inst % 2);
      const Vec sa = random_sigma_aug(d, rng);
      const GmmPrior prior = random_gmm(components, d, rng);
      auto [z, zp] = random_pair(d, sa, rng);
      const double closed = gmm_paired_prior_log_density(z, zp, sa, prior);
      const double numeric = quad_gmm_paired_prior_log_density(z, zp, sa, prior);
      worst = std::fmax(worst, std::fabs(closed - numeric));
    }
    add("gmm_paired_prior_closed_vs_quadrature_c" + std::to_string(components), seed, worst, 1e-6);
  }

  // Mean-term decomposition identity on 1000 instances.
  {
    Rng rng = root.fork(120);
    double worst = 0.0;
    for (int inst = 0; inst < 1000; ++inst) {
      const std::size_t d = 1 + rng.below(5);
      RavenBoundConfig cfg;
      cfg.latent_dim = static_cast<int>(d);
      cfg.sigma_aug = random_sigma_aug(d, rng);
      const DiagGaussian qx = random_diag(d, rng);
      const DiagGaussian qxp = random_diag(d, rng);
      worst = std::fmax(worst,
                        std::fabs(mean_quad_term(qx, qxp, cfg) - mean_quad_term_decomposed(qx, qxp, cfg)));
    }
    add("mean_term_decomposition", seed, worst, 1e-10);
  }

  // Inverse-sum identity (X^-1 + Y^-1)^-1 == X (X + Y)^-1 Y on SPD pairs.
  {
    Rng rng = root.fork(121);
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
      const std::size_t d = 2 + rng.below(4);
      const Mat x = random_full(d, rng).cov;
      const Mat y = random_full(d, rng).cov;
      const Mat lhs = mat_inverse_spd(mat_add(mat_inverse_spd(x), mat_inverse_spd(y)));
      const Mat rhs = mat_mul(mat_mul(x, mat_inverse_spd(mat_add(x, y))), y);
      for (std::size_t i = 0; i < lhs.a.size(); ++i)
        worst = std::fmax(worst, std::fabs(lhs.a[i] - rhs.a[i]));
    }
    add("inverse_sum_identity", seed, worst, 1e-10);
  }

  // Density-product identity, pointwise at 50 random evaluation points.
  {
    Rng rng = root.fork(122);
    double worst = 0.0;
    for (int inst = 0; inst < 10; ++inst) {
      const std::size_t d = 3;
      const FullGaussian a = random_full(d, rng);
      const FullGaussian b = random_full(d, rng);
      const GaussianProduct prod = gaussian_product(a, b);
      for (int k = 0; k < 50; ++k) {
        Vec x(d);
        for (auto& v : x) v = rng.uniform(-3.0, 3.0);
        const double lhs = log_density(a, x) + log_density(b, x);
        const double rhs = log_density(prod.dist, x) + prod.log_scale;
        worst = std::fmax(worst, std::fabs(lhs - rhs));
      }
    }
    add("gaussian_product_pointwise", seed, worst, 1e-10);
  }

  // Monte-Carlo agreement rows: error reported as |closed - mc| / (3 se).
  const std::size_t mc_n = 1000000;
  {
    Rng rng = root.fork(123);
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
      const std::size_t d = 1 + rng.below(4);
      FullGaussian g = random_full(d, rng);
      Mat a(d);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) a(i, j) = a(j, i) = rng.uniform(-1.0, 1.0);
      Vec shift(d);
      for (auto& v : shift) v = rng.uniform(-1.0, 1.0);
      const double closed = expected_quadratic_form(a, g, shift);
      const McEstimate mc = mc_expected_quadratic_form(a, g, shift, mc_n, rng);
      worst = std::fmax(worst, std::fabs(closed - mc.mean) / (3.0 * mc.se));
    }
    add("quadratic_form_expectation_vs_mc", seed, worst, 1.0);
  }
  {
    Rng rng = root.fork(124);
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
      const std::size_t d = 1 + rng.below(4);
      const FullGaussian a = random_full(d, rng);
      const FullGaussian b = random_full(d, rng);
      const McEstimate ce = mc_cross_entropy(a, b, mc_n, rng);
      worst = std::fmax(worst, std::fabs(cross_entropy(a, b) - ce.mean) / (3.0 * ce.se));
    }
    add("gaussian_cross_entropy_vs_mc", seed, worst, 1.0);
  }
  {
    Rng rng = root.fork(125);
    double worst = 0.0;
    for (int inst = 0; inst < 10; ++inst) {
      const std::size_t d = 1 + rng.below(4);
      const FullGaussian a = random_full(d, rng);
      const McEstimate h = mc_entropy(a, mc_n, rng);
      worst = std::fmax(worst, std::fabs(entropy(a) - h.mean) / (3.0 * h.se));
    }
    add("gaussian_entropy_vs_mc", seed, worst, 1.0);
  }
  {
    Rng rng = root.fork(126);
    double worst = 0.0;
    for (int inst = 0; inst < 10; ++inst) {
      const std::size_t d = 1 + rng.below(3);
      const FullGaussian a = random_full(d, rng);
      FullGaussian b = random_full(d, rng);
      // Keep the overlap non-negligible so the scale estimate has signal.
      for (std::size_t i = 0; i < d; ++i) b.mean[i] = a.mean[i] + rng.uniform(-1.0, 1.0);
      const GaussianProduct prod = gaussian_product(a, b);
      const McEstimate mc = mc_product_scale(a, b, mc_n, rng);
      worst = std::fmax(worst, std::fabs(std::exp(prod.log_scale) - mc.mean) / (3.0 * mc.se));
    }
    add("gaussian_product_scale_vs_mc", seed, worst, 1.0);
  }
  {
    Rng rng = root.fork(127);
    double worst = 0.0;
    for (int inst = 0; inst < 5; ++inst) {
      const std::size_t d = 1 + rng.below(5);
      const DiagGaussian q = random_diag(d, rng);
      const DiagGaussian p = random_diag(d, rng);
      const McEstimate mc = mc_kl_diag(q, p, mc_n, rng);
      worst = std::fmax(worst, std::fabs(kl_diag(q, p) - mc.mean) / (3.0 * mc.se));
    }
    add("kl_diag_vs_mc", seed, worst, 1.0);
  }

  // KL non-negativity and separation on 1000 random pairs.
  {
    Rng rng = root.fork(128);
    double worst = 0.0;
    bool ok = true;
    for (int inst = 0; inst < 1000; ++inst) {
      const std::size_t d = 1 + rng.below(5);
      const DiagGaussian q = random_diag(d, rng);
      const DiagGaussian p = (inst % 4 == 0) ? q : random_diag(d, rng);
      const double v = kl_diag(q, p);
      if (inst % 4 == 0) {
        worst = std::fmax(worst, std::fabs(v));
      } else {
        ok = ok && v > 0.0;
        worst = std::fmax(worst, v > 0.0 ? 0.0 : 1.0);
      }
    }
    add("kl_diag_nonnegativity", seed, ok ? worst : 1.0, 1e-12);
  }

  // Pair KL term: closed form == -KL against the certified prior, by MC.
  {
    Rng rng = root.fork(129);
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
      const std::size_t d = 1 + rng.below(5);
      RavenBoundConfig cfg;
      cfg.latent_dim = static_cast<int>(d);
      cfg.sigma_aug = random_sigma_aug(d, rng);
      const DiagGaussian qx = random_diag(d, rng, 1.0);
      DiagGaussian qxp = random_diag(d, rng, 1.0);
      for (std::size_t i = 0; i < d; ++i)
        qxp.mean[i] = qx.mean[i] + std::sqrt(cfg.sigma_aug[i]) * rng.uniform(-2.0, 2.0);
      const double closed = raven_kl_term(qx, qxp, cfg);
      const McEstimate mc = mc_kl_paired(qx, qxp, cfg.sigma_aug, mc_n, rng);
      worst = std::fmax(worst, std::fabs(closed + mc.mean) / (3.0 * mc.se));
    }
    add("paired_kl_term_vs_mc", seed, worst, 1.0);
  }

  // Pair KL term against a direct 2-d quadrature of the divergence (d = 1).
  {
    Rng rng = root.fork(130);
    double worst = 0.0;
    for (int inst = 0; inst < 5; ++inst) {
      RavenBoundConfig cfg;
      cfg.latent_dim = 1;
      cfg.sigma_aug = {rng.uniform(0.3, 2.0)};
      const DiagGaussian qx = random_diag(1, rng, 1.0);
      const DiagGaussian qxp = random_diag(1, rng, 1.0);
      auto integrand = [&](double z) {
        auto inner = [&](double zp) {
          const double lq = log_density(qx, {z}) + log_density(qxp, {zp});
          return std::exp(lq) * (lq - paired_prior_log_density({z}, {zp}, cfg.sigma_aug));
        };
        const double m = qxp.mean[0], s = std::sqrt(qxp.var[0]);
        return quad::adaptive(inner, m - 12.0 * s, m + 12.0 * s, 1e-11, 1 << 9);
      };
      const double m = qx.mean[0], s = std::sqrt(qx.var[0]);
      const double kl_quad = quad::adaptive(integrand, m - 12.0 * s, m + 12.0 * s, 1e-11, 1 << 9);
      worst = std::fmax(worst, std::fabs(raven_kl_term(qx, qxp, cfg) + kl_quad));
    }
    add("paired_kl_term_vs_quadrature", seed, worst, 1e-6);
  }

  // With the golden-ratio kernel width and a unit-posterior partner, the pair
  // KL term differs from the standard KL term only by a constant.
  {
    Rng rng = root.fork(131);
    const std::size_t d = 4;
    RavenBoundConfig cfg;
    cfg.latent_dim = static_cast<int>(d);
    cfg.sigma_aug.assign(d, 0.5 * (std::sqrt(5.0) - 1.0));
    const DiagGaussian unit(Vec(d, 0.0), Vec(d, 1.0));
    double mean = 0.0, m2 = 0.0;
    const int n = 100;
    for (int inst = 0; inst < n; ++inst) {
      const DiagGaussian qx = random_diag(d, rng);
      const double v = raven_kl_term(qx, unit, cfg) + kl_diag(qx, unit);
      mean += v;
      m2 += v * v;
    }
    mean /= n;
    add("paired_kl_standard_kl_consistency", seed, std::fmax(0.0, m2 / n - mean * mean), 1e-10);
  }

  return rows;
}

inline bool all_pass(const std::vector<OracleRow>& rows) {
  for (const auto& r : rows)
    if (!r.pass) return false;
  return true;
}

}  // namespace raven
