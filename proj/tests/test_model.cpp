#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "raven/model.hpp"
#include "raven/objectives.hpp"
#include "raven/rng.hpp"

using namespace raven;

namespace {

Tensor random_batch(std::size_t n, std::size_t d, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t = Tensor::zeros({n, d});
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("encoder emits a strictly positive scale and is deterministic") {
  Rng rng(1);
  VaeModel model = VaeModel::init(16, 4, {10, 8}, rng);
  Tensor x = random_batch(6, 16, rng);

  EncodedBatch a = encode_batch(model, x);
  EncodedBatch b = encode_batch(model, x);
  CHECK(a.mean.data == b.mean.data);
  CHECK(a.logvar.data == b.logvar.data);
  CHECK(a.mean.shape == Shape{6, 4});
  for (double lv : a.logvar.data) CHECK(std::exp(0.5 * lv) > 0.0);

  // identical rows encode identically
  Tensor xx = Tensor::zeros({2, 16});
  for (std::size_t j = 0; j < 16; ++j) xx.at(0, j) = xx.at(1, j) = x.at(0, j);
  EncodedBatch c = encode_batch(model, xx);
  for (std::size_t j = 0; j < 4; ++j) CHECK(c.mean.at(0, j) == c.mean.at(1, j));
}

TEST_CASE("encoder mean gradient w.r.t. the input passes finite differences") {
  Rng rng(2);
  VaeModel model = VaeModel::init(9, 3, {7}, rng);
  Tensor x = random_batch(2, 9, rng, 0.1, 0.9);
  auto f = [&](Graph& g, Var xv) {
    ModelBinding mb = bind(g, model, false);
    PosteriorVars q = encode(mb, xv);
    return g.sum(g.square(q.mean));
  };
  CHECK(finite_diff_check(f, x, 1e-5) < 1e-4);
}

TEST_CASE("reparameterization") {
  Rng rng(3);
  VaeModel model = VaeModel::init(12, 3, {8}, rng);
  Tensor x = random_batch(4, 12, rng);

  // eps = 0 returns the mean exactly
  Graph g;
  ModelBinding mb = bind(g, model, false);
  PosteriorVars q = encode(mb, g.constant(x));
  Var z0 = reparameterize(g, q, Tensor::zeros({4, 3}));
  CHECK(z0.value().data == q.mean.value().data);
  CHECK_THROWS_AS(reparameterize(g, q, Tensor::zeros({4, 2})), Error);

  // sample mean and variance against the posterior parameters
  const std::size_t reps = 100000;
  const double mu = q.mean.value().at(0, 0);
  const double sigma = std::exp(0.5 * q.logvar.value().at(0, 0));
  Rng mc(17);
  double s = 0.0, s2 = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    const double zz = mu + sigma * mc.normal();
    s += zz;
    s2 += zz * zz;
  }
  const double mean = s / reps;
  const double var = s2 / reps - mean * mean;
  const double se_mean = sigma / std::sqrt(double(reps));
  CHECK(std::fabs(mean - mu) <= 3.0 * se_mean);
  const double se_var = var * std::sqrt(2.0 / double(reps));
  CHECK(std::fabs(var - sigma * sigma) <= 3.0 * se_var);
}

TEST_CASE("bernoulli reconstruction log-likelihood") {
  Graph g;
  const std::size_t D = 6;
  Var logits = g.leaf(Tensor::zeros({2, D}));
  Var x_half = g.leaf(Tensor::full({2, D}, 0.5));
  Var rows = bernoulli_recon_rows(g, logits, x_half);
  CHECK(rows.value().at(0) == doctest::Approx(-double(D) * std::log(2.0)));

  // perfect confidence on x = 1 drives the per-pixel term to zero
  Graph g2;
  Var big = g2.leaf(Tensor::full({1, D}, 40.0));
  Var ones = g2.leaf(Tensor::full({1, D}, 1.0));
  CHECK(bernoulli_recon_rows(g2, big, ones).value().at(0) == doctest::Approx(0.0).epsilon(1e-12));

  // log-probabilities of binary pixels are never positive
  Rng rng(5);
  Graph g3;
  Tensor l = Tensor::zeros({3, D});
  Tensor xb = Tensor::zeros({3, D});
  for (auto& v : l.data) v = rng.uniform(-4.0, 4.0);
  for (auto& v : xb.data) v = rng.below(2) ? 1.0 : 0.0;
  Var r3 = bernoulli_recon_rows(g3, g3.leaf(l), g3.leaf(xb));
  for (std::size_t i = 0; i < 3; ++i) CHECK(r3.value().at(i) <= 0.0);

  // pixel-range precondition
  Graph g4;
  CHECK_THROWS_AS(bernoulli_recon_rows(g4, g4.leaf(Tensor::zeros({1, 2})),
                                       g4.leaf(Tensor::row({0.5, 1.5}))),
                  Error);
}

TEST_CASE("gaussian mse reconstruction option") {
  Rng rng(7);
  Graph g;
  Tensor l = Tensor::zeros({2, 4});
  for (auto& v : l.data) v = rng.uniform(-2.0, 2.0);
  Tensor x = random_batch(2, 4, rng);
  Var rows = gaussian_mse_recon_rows(g, g.leaf(l), g.leaf(x));
  for (std::size_t i = 0; i < 2; ++i) {
    double expect = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      const double p = 1.0 / (1.0 + std::exp(-l.at(i, j)));
      expect += (x.at(i, j) - p) * (x.at(i, j) - p);
    }
    CHECK(rows.value().at(i) == doctest::Approx(-0.5 * expect));
  }
}

TEST_CASE("end-to-end elbo gradient on a toy model") {
  Rng rng(11);
  VaeModel model = VaeModel::init(8, 2, {6}, rng);
  Tensor x = random_batch(3, 8, rng, 0.05, 0.95);
  Tensor eps = Tensor::zeros({3, 2});
  rng.fill_normal(eps.data);

  auto params = model.parameters();
  Graph g;
  ModelBinding mb = bind(g, model, true);
  ObjectiveResult obj = vanilla_elbo_objective(g, mb, x, eps, ReconLikelihood::kBernoulliCrossEntropy);
  g.backward(obj.total);

  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Vec& g_ad = g.grad(mb.params[pi]);
    Tensor& t = *params[pi].tensor;
    const std::size_t probes = std::min<std::size_t>(t.numel(), 4);
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t idx = (k * 131) % t.numel();
      const double keep = t.data[idx];
      auto eval = [&] {
        Graph gg;
        ModelBinding mbb = bind(gg, model, false);
        return vanilla_elbo_objective(gg, mbb, x, eps, ReconLikelihood::kBernoulliCrossEntropy)
            .breakdown.total;
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
  CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(13);
  VaeModel model = VaeModel::init(10, 3, {6, 4}, rng);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "raven_ckpt_test").string();
  save_checkpoint(dir, model, "deadbeef00000000");
  VaeModel back = load_checkpoint(dir);
  CHECK(back.input_dim == model.input_dim);
  CHECK(back.latent_dim == model.latent_dim);
  CHECK(back.hidden == model.hidden);
  CHECK(checkpoint_config_hash(dir) == "deadbeef00000000");
  auto pa = model.parameters();
  auto pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].tensor->data == pb[i].tensor->data);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint with mixture sidecar restores the prior") {
  Rng rng(17);
  VaeModel model = VaeModel::init(6, 2, {4}, rng);
  GmmParams gp = GmmParams::init(3, 2, rng);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "raven_ckpt_gmm_test").string();
  save_checkpoint(dir, model, "0", &gp);
  auto back = load_gmm_checkpoint(dir);
  REQUIRE(back.has_value());
  CHECK(back->logits.data == gp.logits.data);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(back->means[c].data == gp.means[c].data);
    CHECK(back->logvars[c].data == gp.logvars[c].data);
  }
  // round-trip through the normalized parameterization keeps the simplex
  GmmPrior prior = back->to_prior();
  double total = 0.0;
  for (double w : prior.weights) total += w;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  std::filesystem::remove_all(dir);
}
