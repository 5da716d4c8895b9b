#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "raven/tensor.hpp"

namespace raven {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Small dense symmetric/square matrices for the full-covariance oracle side.
// Latent dimensions here stay tiny (d <= 10), plain loops are plenty.
struct Mat {
  std::size_t n = 0;
  Vec a;  // row-major n*n

  Mat() = default;
  explicit Mat(std::size_t n_) : n(n_), a(n_ * n_, 0.0) {}
  static Mat identity(std::size_t n) {
    Mat m(n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Mat diag(const Vec& d) {
    Mat m(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }
  double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }

  bool symmetric(double tol = 1e-12) const {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (std::fabs((*this)(i, j) - (*this)(j, i)) > tol) return false;
    return true;
  }
};

inline Mat mat_add(const Mat& x, const Mat& y) {
  Mat r(x.n);
  for (std::size_t i = 0; i < x.a.size(); ++i) r.a[i] = x.a[i] + y.a[i];
  return r;
}

inline Mat mat_mul(const Mat& x, const Mat& y) {
  Mat r(x.n);
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t k = 0; k < x.n; ++k) {
      const double v = x(i, k);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < x.n; ++j) r(i, j) += v * y(k, j);
    }
  return r;
}

inline Vec mat_vec(const Mat& x, const Vec& v) {
  Vec r(x.n, 0.0);
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t j = 0; j < x.n; ++j) r[i] += x(i, j) * v[j];
  return r;
}

// Lower-triangular Cholesky factor; throws on non-positive-definite input.
inline Mat cholesky(const Mat& s) {
  if (!s.symmetric()) throw Error("cholesky: matrix not symmetric");
  Mat l(s.n);
  for (std::size_t i = 0; i < s.n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = s(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      if (i == j) {
        if (acc <= 0.0) throw Error("cholesky: matrix not positive definite");
        l(i, i) = std::sqrt(acc);
      } else {
        l(i, j) = acc / l(j, j);
      }
    }
  }
  return l;
}

// Solve S x = b given L = cholesky(S).
inline Vec chol_solve(const Mat& l, const Vec& b) {
  const std::size_t n = l.n;
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = b[i];
    for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * y[k];
    y[i] = acc / l(i, i);
  }
  Vec x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double acc = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) acc -= l(k, ii) * x[k];
    x[ii] = acc / l(ii, ii);
  }
  return x;
}

inline Mat mat_inverse_spd(const Mat& s) {
  const Mat l = cholesky(s);
  Mat inv(s.n);
  Vec e(s.n, 0.0);
  for (std::size_t j = 0; j < s.n; ++j) {
    e[j] = 1.0;
    Vec col = chol_solve(l, e);
    e[j] = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

inline double logdet_from_chol(const Mat& l) {
  double s = 0.0;
  for (std::size_t i = 0; i < l.n; ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

// ---------------------------------------------------------------------------
// Distribution types
// ---------------------------------------------------------------------------

// Mean + per-dimension variance; the encoder posterior shape.
struct DiagGaussian {
  Vec mean;
  Vec var;

  DiagGaussian() = default;
  DiagGaussian(Vec m, Vec v) : mean(std::move(m)), var(std::move(v)) {
    if (mean.size() != var.size()) throw Error("diag gaussian: mean/var length mismatch");
    for (double x : var)
      if (!(x > 0.0)) throw Error("diag gaussian: variance entries must be > 0");
  }
  std::size_t dim() const { return mean.size(); }
};

struct FullGaussian {
  Vec mean;
  Mat cov;

  FullGaussian() = default;
  FullGaussian(Vec m, Mat c) : mean(std::move(m)), cov(std::move(c)) {
    if (mean.size() != cov.n) throw Error("full gaussian: mean/cov dimension mismatch");
    if (!cov.symmetric()) throw Error("full gaussian: covariance not symmetric");
    (void)cholesky(cov);  // positive definiteness check
  }
  std::size_t dim() const { return mean.size(); }
};

inline FullGaussian to_full(const DiagGaussian& g) { return FullGaussian(g.mean, Mat::diag(g.var)); }

// Mixture base distribution for the latent prior; every field trainable.
struct GmmPrior {
  Vec weights;            // simplex
  std::vector<Vec> means;
  std::vector<Vec> vars;  // per-component diagonal variances

  GmmPrior() = default;
  GmmPrior(Vec w, std::vector<Vec> m, std::vector<Vec> v)
      : weights(std::move(w)), means(std::move(m)), vars(std::move(v)) {
    validate();
  }
  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.empty() ? 0 : means[0].size(); }

  void validate() const {
    if (weights.empty() || means.size() != weights.size() || vars.size() != weights.size())
      throw Error("gmm prior: component count mismatch");
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0 || w > 1.0) throw Error("gmm prior: weight outside [0,1]");
      total += w;
    }
    if (std::fabs(total - 1.0) > 1e-9) throw Error("gmm prior: weights must sum to 1");
    for (std::size_t c = 0; c < components(); ++c) {
      if (means[c].size() != dim() || vars[c].size() != dim())
        throw Error("gmm prior: inconsistent component dimension");
      for (double v : vars[c])
        if (!(v > 0.0)) throw Error("gmm prior: variance entries must be > 0");
    }
  }
};

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

inline void check_dim(std::size_t a, std::size_t b, const char* where) {
  if (a != b)
    throw Error(std::string(where) + ": dimension mismatch " + std::to_string(a) + " vs " +
                std::to_string(b));
}

inline double log_density(const DiagGaussian& g, const Vec& x) {
  check_dim(g.dim(), x.size(), "log_density");
  double quad = 0.0, logdet = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - g.mean[i];
    quad += d * d / g.var[i];
    logdet += std::log(g.var[i]);
  }
  return -0.5 * (quad + logdet + static_cast<double>(g.dim()) * kLog2Pi);
}

inline double log_density(const FullGaussian& g, const Vec& x) {
  check_dim(g.dim(), x.size(), "log_density");
  const Mat l = cholesky(g.cov);
  Vec d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - g.mean[i];
  const Vec s = chol_solve(l, d);
  double quad = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) quad += d[i] * s[i];
  return -0.5 * (quad + logdet_from_chol(l) + static_cast<double>(g.dim()) * kLog2Pi);
}

// KL(q || p) for diagonal Gaussians, exact per-dimension closed form.
inline double kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  check_dim(q.dim(), p.dim(), "kl_diag");
  double s = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) {
    const double dm = q.mean[i] - p.mean[i];
    s += q.var[i] / p.var[i] + dm * dm / p.var[i] - 1.0 + std::log(p.var[i] / q.var[i]);
  }
  return 0.5 * s;
}

// Squared 2-Wasserstein between diagonal Gaussians:
// ||mu_a - mu_b||^2 + sum_i (sigma_a,i - sigma_b,i)^2.
inline double w2_diag(const DiagGaussian& a, const DiagGaussian& b) {
  check_dim(a.dim(), b.dim(), "w2_diag");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double dm = a.mean[i] - b.mean[i];
    const double ds = std::sqrt(a.var[i]) - std::sqrt(b.var[i]);
    s += dm * dm + ds * ds;
  }
  return s;
}

// E[(x - a)^T A (x - a)] = Tr(A Sigma) + (mu - a)^T A (mu - a).
inline double expected_quadratic_form(const Mat& a_mat, const FullGaussian& g, const Vec& shift) {
  check_dim(a_mat.n, g.dim(), "expected_quadratic_form");
  check_dim(shift.size(), g.dim(), "expected_quadratic_form");
  if (!a_mat.symmetric()) throw Error("expected_quadratic_form: matrix not symmetric");
  double tr = 0.0;
  for (std::size_t i = 0; i < a_mat.n; ++i)
    for (std::size_t j = 0; j < a_mat.n; ++j) tr += a_mat(i, j) * g.cov(j, i);
  Vec d(g.dim());
  for (std::size_t i = 0; i < g.dim(); ++i) d[i] = g.mean[i] - shift[i];
  const Vec ad = mat_vec(a_mat, d);
  double quad = 0.0;
  for (std::size_t i = 0; i < g.dim(); ++i) quad += d[i] * ad[i];
  return tr + quad;
}

// Cross-entropy E_a[-log b] and Shannon entropy of a Gaussian.
inline double cross_entropy(const FullGaussian& a, const FullGaussian& b) {
  check_dim(a.dim(), b.dim(), "cross_entropy");
  const Mat l = cholesky(b.cov);
  const Mat b_inv = mat_inverse_spd(b.cov);
  double tr = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i)
    for (std::size_t j = 0; j < a.dim(); ++j) tr += a.cov(i, j) * b_inv(j, i);
  Vec d(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) d[i] = a.mean[i] - b.mean[i];
  const Vec bd = mat_vec(b_inv, d);
  double quad = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) quad += d[i] * bd[i];
  return 0.5 * (tr + quad + logdet_from_chol(l) + static_cast<double>(a.dim()) * kLog2Pi);
}

inline double entropy(const FullGaussian& a) {
  const Mat l = cholesky(a.cov);
  const double d = static_cast<double>(a.dim());
  return 0.5 * (d + d * kLog2Pi + logdet_from_chol(l));
}

// Product of two Gaussian densities: N(x;mu_a,S_a) N(x;mu_b,S_b)
// = N(x;mu_c,S_c) * exp(log_scale), with S_c = (S_a^-1 + S_b^-1)^-1,
// mu_c = S_c (S_a^-1 mu_a + S_b^-1 mu_b), log_scale = log N(0; mu_a-mu_b, S_a+S_b).
struct GaussianProduct {
  FullGaussian dist;
  double log_scale = 0.0;
};

inline GaussianProduct gaussian_product(const FullGaussian& a, const FullGaussian& b) {
  check_dim(a.dim(), b.dim(), "gaussian_product");
  const Mat a_inv = mat_inverse_spd(a.cov);
  const Mat b_inv = mat_inverse_spd(b.cov);
  const Mat c_cov = mat_inverse_spd(mat_add(a_inv, b_inv));
  Vec rhs(a.dim(), 0.0);
  const Vec am = mat_vec(a_inv, a.mean);
  const Vec bm = mat_vec(b_inv, b.mean);
  for (std::size_t i = 0; i < a.dim(); ++i) rhs[i] = am[i] + bm[i];
  const Vec c_mean = mat_vec(c_cov, rhs);
  Vec diff(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) diff[i] = a.mean[i] - b.mean[i];
  const double log_scale = log_density(FullGaussian(diff, mat_add(a.cov, b.cov)), Vec(a.dim(), 0.0));
  return {FullGaussian(c_mean, c_cov), log_scale};
}

// log N(0; z - z', 2 S_aug) for diagonal S_aug (variances).
inline double log_pair_difference_density(const Vec& z, const Vec& zp, const Vec& sigma_aug_var) {
  check_dim(z.size(), zp.size(), "paired prior");
  check_dim(z.size(), sigma_aug_var.size(), "paired prior");
  double quad = 0.0, logdet = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = 2.0 * sigma_aug_var[i];
    const double d = z[i] - zp[i];
    quad += d * d / v;
    logdet += std::log(v);
  }
  return -0.5 * (quad + logdet + static_cast<double>(z.size()) * kLog2Pi);
}

// Latent prior over an augmented pair with unit-Gaussian base distribution:
// log N(0; z - z', 2 S_aug) + log N((z + z')/2; 0, I + S_aug/2).
inline double paired_prior_log_density(const Vec& z, const Vec& zp, const Vec& sigma_aug_var) {
  double out = log_pair_difference_density(z, zp, sigma_aug_var);
  double quad = 0.0, logdet = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = 1.0 + 0.5 * sigma_aug_var[i];
    const double m = 0.5 * (z[i] + zp[i]);
    quad += m * m / v;
    logdet += std::log(v);
  }
  return out - 0.5 * (quad + logdet + static_cast<double>(z.size()) * kLog2Pi);
}

// Mixture-base variant: log N(0; z-z', 2 S_aug)
//   + log sum_c pi_c N((z+z')/2; mu_c, S_c + S_aug/2), via log-sum-exp.
inline double gmm_paired_prior_log_density(const Vec& z, const Vec& zp, const Vec& sigma_aug_var,
                                           const GmmPrior& prior) {
  prior.validate();
  check_dim(z.size(), prior.dim(), "gmm paired prior");
  const double diff_part = log_pair_difference_density(z, zp, sigma_aug_var);
  Vec mid(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) mid[i] = 0.5 * (z[i] + zp[i]);
  Vec logs(prior.components());
  for (std::size_t c = 0; c < prior.components(); ++c) {
    Vec v(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) v[i] = prior.vars[c][i] + 0.5 * sigma_aug_var[i];
    logs[c] = std::log(prior.weights[c]) + log_density(DiagGaussian(prior.means[c], v), mid);
  }
  const double m = *std::max_element(logs.begin(), logs.end());
  double acc = 0.0;
  for (double lv : logs) acc += std::exp(lv - m);
  return diff_part + m + std::log(acc);
}

}  // namespace raven
