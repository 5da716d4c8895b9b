#include <doctest.h>

#include <cmath>

#include "raven/robustness.hpp"
#include "raven/trainer.hpp"

using namespace raven;

namespace {

TrainConfig small_config(Regime regime, int epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.regime = regime;
  cfg.epochs = epochs;
  cfg.batch_size = 64;
  cfg.learning_rate = 0.002;
  cfg.seed = seed;
  cfg.hidden = {24, 12};
  cfg.bound = RavenBoundConfig::isotropic(4, 0.1);
  cfg.aug.noise_std = 0.05;
  if (regime == Regime::kRavenGmm) cfg.gmm_components = 2;
  return cfg;
}

}  // namespace

TEST_CASE("make_pair") {
  Rng rng(1);
  Dataset ds = synth_blobs(2, 50, 16, 1.0, 3);

  AugmentationSpec zero{0.0};
  Rng r0(5);
  auto [x0, xp0] = make_pair(ds.images, zero, r0);
  CHECK(xp0.data == x0.data);

  AugmentationSpec spec{0.05};
  Rng r1(7);
  auto [x, xp] = make_pair(ds.images, spec, r1);
  const std::size_t n = x.numel();
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = xp.data[i] - x.data[i];
    s += d;
    s2 += d * d;
  }
  const double mean = s / double(n);
  const double stdd = std::sqrt(s2 / double(n) - mean * mean);
  CHECK(std::fabs(mean) <= 3.0 * 0.05 / std::sqrt(double(n)));
  CHECK(std::fabs(stdd - 0.05) <= 3.0 * 0.05 / std::sqrt(2.0 * double(n)));

  // a fixed seed reproduces the identical pair stream
  Rng r2(7);
  auto [y, yp] = make_pair(ds.images, spec, r2);
  CHECK(yp.data == xp.data);
}

TEST_CASE("radam: zero gradients leave parameters untouched") {
  Tensor p = Tensor::row({1.0, -2.0, 3.0});
  std::vector<Tensor*> params{&p};
  RAdamState st = RAdamState::init(params);
  Vec zero(3, 0.0);
  const Tensor before = p;
  for (int t = 0; t < 50; ++t) radam_step(st, params, {&zero}, 0.001);
  CHECK(p.data == before.data);
}

TEST_CASE("radam: first step is momentum-only") {
  Tensor p = Tensor::row({0.5, -0.25});
  std::vector<Tensor*> params{&p};
  RAdamState st = RAdamState::init(params);
  Vec grad{0.2, -0.4};
  const double lr = 0.01;
  const Tensor before = p;
  radam_step(st, params, {&grad}, lr);
  // rho_1 = rho_inf - 2 beta2 / (1 - beta2) = 1 <= 4, so update = -lr * m_hat
  // and m_hat after one step equals the raw gradient.
  CHECK(p.data[0] == doctest::Approx(before.data[0] - lr * grad[0]).epsilon(1e-15));
  CHECK(p.data[1] == doctest::Approx(before.data[1] - lr * grad[1]).epsilon(1e-15));
}

TEST_CASE("radam: constant gradient drives the first moment to the gradient") {
  Tensor p = Tensor::row({0.0});
  std::vector<Tensor*> params{&p};
  RAdamState st = RAdamState::init(params);
  Vec grad{0.7};
  for (int t = 0; t < 2000; ++t) radam_step(st, params, {&grad}, 1e-6);
  const double m_hat = st.m[0][0] / (1.0 - std::pow(st.beta1, double(st.t)));
  CHECK(m_hat == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("radam: rejects non-finite gradients and zero lr is a no-op on parameters") {
  Tensor p = Tensor::row({1.0});
  std::vector<Tensor*> params{&p};
  RAdamState st = RAdamState::init(params);
  Vec bad{std::nan("")};
  CHECK_THROWS_AS(radam_step(st, params, {&bad}, 0.001), Error);

  Vec grad{0.3};
  const Tensor before = p;
  radam_step(st, params, {&grad}, 0.0);
  CHECK(p.data == before.data);
}

TEST_CASE("raven training improves the bound on synthetic blobs") {
  Dataset ds = synth_blobs(2, 128, 8, 1.5, 21);
  TrainConfig cfg = small_config(Regime::kRaven, 100, 3);
  cfg.batch_size = 64;
  cfg.hidden = {16, 8};
  cfg.bound = RavenBoundConfig::isotropic(2, 0.1);
  TrainResult res = train(cfg, ds);
  REQUIRE(res.metrics.size() >= 200);
  CHECK_FALSE(res.diverged);

  double early = 0.0, late = 0.0;
  for (int i = 0; i < 10; ++i) early += res.metrics[static_cast<std::size_t>(i)].breakdown.total;
  for (std::size_t i = res.metrics.size() - 10; i < res.metrics.size(); ++i)
    late += res.metrics[i].breakdown.total;
  CHECK(late / 10.0 > early / 10.0);
}

TEST_CASE("identical seeds produce identical metrics") {
  Dataset ds = synth_blobs(2, 64, 8, 1.0, 31);
  TrainConfig cfg = small_config(Regime::kRaven, 2, 11);
  cfg.hidden = {10};
  cfg.bound = RavenBoundConfig::isotropic(2, 0.2);
  TrainResult a = train(cfg, ds);
  TrainResult b = train(cfg, ds);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].loss == b.metrics[i].loss);
    CHECK(a.metrics[i].breakdown.total == b.metrics[i].breakdown.total);
  }
  auto pa = a.model.parameters();
  auto pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor->data == pb[i].tensor->data);
}

TEST_CASE("all four regimes keep the loss finite") {
  Dataset ds = synth_blobs(3, 60, 10, 1.0, 41);
  for (Regime regime :
       {Regime::kVanilla, Regime::kNoiseVae, Regime::kRaven, Regime::kRavenGmm}) {
    TrainConfig cfg = small_config(regime, 3, 17);
    cfg.bound = RavenBoundConfig::isotropic(3, 0.15);
    TrainResult res = train(cfg, ds);
    INFO("regime " << regime_name(regime));
    CHECK_FALSE(res.diverged);
    for (const auto& row : res.metrics) CHECK(std::isfinite(row.loss));
    CHECK(res.model.all_finite());
  }
}

TEST_CASE("trained vanilla reconstruction beats the uniform-gray baseline") {
  Dataset ds = synth_blobs(3, 100, 10, 1.0, 43);
  TrainConfig cfg = small_config(Regime::kVanilla, 15, 19);
  cfg.bound = RavenBoundConfig::isotropic(3, 0.15);
  TrainResult res = train(cfg, ds);
  REQUIRE_FALSE(res.diverged);
  // the all-0.5 predictor scores -D log 2 per datum
  const double baseline = -10.0 * std::log(2.0);
  double tail = 0.0;
  for (std::size_t i = res.metrics.size() - 5; i < res.metrics.size(); ++i)
    tail += res.metrics[i].breakdown.recon_x;
  CHECK(tail / 5.0 > baseline);
}

TEST_CASE("raven training contracts the pair distance from its value at initialization") {
  Dataset ds = synth_blobs(2, 150, 12, 1.2, 51);
  TrainConfig cfg = small_config(Regime::kRaven, 60, 23);
  cfg.bound = RavenBoundConfig::isotropic(3, 0.05);
  cfg.hidden = {16, 8};

  // untrained reference with the same init stream
  Rng init_rng = Rng(cfg.seed).fork(1);
  VaeModel fresh = VaeModel::init(12, 3, cfg.hidden, init_rng);
  LatentPairDistance before = latent_pair_distance(fresh, ds.images, cfg.aug.noise_std, 777);

  TrainResult res = train(cfg, ds);
  CHECK_FALSE(res.diverged);
  LatentPairDistance after = latent_pair_distance(res.model, ds.images, cfg.aug.noise_std, 777);
  CHECK(after.mean < before.mean);
}

TEST_CASE("divergence aborts with the last finite parameters retained") {
  Dataset ds = synth_blobs(2, 40, 6, 1.0, 61);
  TrainConfig cfg = small_config(Regime::kVanilla, 3, 29);
  cfg.bound = RavenBoundConfig::isotropic(2, 0.2);
  cfg.hidden = {8};
  cfg.learning_rate = 1e9;  // momentum-only first steps blow the weights up
  cfg.clip_norm = 1e12;
  TrainResult res = train(cfg, ds);
  CHECK(res.diverged);
  CHECK(res.model.all_finite());
}

TEST_CASE("per-epoch checkpoints are written when requested") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "raven_trainer_ckpts").string();
  fs::remove_all(dir);
  Dataset ds = synth_blobs(2, 40, 6, 1.0, 71);
  TrainConfig cfg = small_config(Regime::kVanilla, 2, 31);
  cfg.bound = RavenBoundConfig::isotropic(2, 0.2);
  cfg.hidden = {8};
  cfg.checkpoint_dir = dir;
  cfg.config_hash = "cafe";
  TrainResult res = train(cfg, ds);
  CHECK_FALSE(res.diverged);
  CHECK(fs::exists(dir + "/epoch_0/manifest.json"));
  CHECK(fs::exists(dir + "/epoch_1/manifest.json"));
  VaeModel back = load_checkpoint(dir + "/epoch_1");
  CHECK(back.latent_dim == 2);
  fs::remove_all(dir);
}

TEST_CASE("trained encoder responds smoothly to tiny input perturbations") {
  Dataset ds = synth_blobs(2, 100, 8, 1.2, 81);
  TrainConfig cfg = small_config(Regime::kVanilla, 10, 37);
  cfg.bound = RavenBoundConfig::isotropic(2, 0.2);
  cfg.hidden = {12};
  TrainResult res = train(cfg, ds);
  REQUIRE_FALSE(res.diverged);

  Tensor x = Tensor::zeros({1, 8});
  for (std::size_t j = 0; j < 8; ++j) x.at(0, j) = ds.images.at(0, j);
  Tensor xp = x;
  for (auto& v : xp.data) v += 1e-6;
  EncodedBatch a = encode_batch(res.model, x);
  EncodedBatch b = encode_batch(res.model, xp);
  double shift = 0.0;
  for (std::size_t j = 0; j < 2; ++j) shift = std::fmax(shift, std::fabs(a.mean.data[j] - b.mean.data[j]));
  CHECK(shift < 1e-3);
}
