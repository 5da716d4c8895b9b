#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "raven/rng.hpp"
#include "raven/tensor.hpp"

namespace raven {

// One affine layer; slope present only on PReLU layers (one learnable scalar
// per layer, shared across units).
struct LayerParams {
  Tensor w;      // [in, out]
  Tensor b;      // [out]
  Tensor slope;  // [1] when has_prelu
  bool has_prelu = false;
};

// Symmetric MLP encoder/decoder. The encoder ends in two linear heads (mean
// and log-variance), so the posterior scale is structurally positive.
struct VaeModel {
  int input_dim = 784;
  int latent_dim = 10;
  std::vector<int> hidden = {500, 250};

  std::vector<LayerParams> enc;
  LayerParams mean_head, logvar_head;
  std::vector<LayerParams> dec;
  LayerParams out_head;

  static VaeModel init(int input_dim, int latent_dim, std::vector<int> hidden, Rng& rng) {
    VaeModel m;
    m.input_dim = input_dim;
    m.latent_dim = latent_dim;
    m.hidden = std::move(hidden);
    int in = input_dim;
    for (int h : m.hidden) {
      m.enc.push_back(make_layer(in, h, true, rng));
      in = h;
    }
    m.mean_head = make_layer(in, latent_dim, false, rng);
    m.logvar_head = make_layer(in, latent_dim, false, rng);
    in = latent_dim;
    for (auto it = m.hidden.rbegin(); it != m.hidden.rend(); ++it) {
      m.dec.push_back(make_layer(in, *it, true, rng));
      in = *it;
    }
    m.out_head = make_layer(in, input_dim, false, rng);
    return m;
  }

  struct NamedParam {
    std::string name;
    Tensor* tensor;
  };

  std::vector<NamedParam> parameters() {
    std::vector<NamedParam> out;
    auto push_layer = [&out](const std::string& prefix, LayerParams& l) {
      out.push_back({prefix + ".w", &l.w});
      out.push_back({prefix + ".b", &l.b});
      if (l.has_prelu) out.push_back({prefix + ".slope", &l.slope});
    };
    for (std::size_t i = 0; i < enc.size(); ++i) push_layer("enc" + std::to_string(i), enc[i]);
    push_layer("mean", mean_head);
    push_layer("logvar", logvar_head);
    for (std::size_t i = 0; i < dec.size(); ++i) push_layer("dec" + std::to_string(i), dec[i]);
    push_layer("out", out_head);
    return out;
  }

  bool all_finite() {
    for (auto& p : parameters())
      if (!p.tensor->all_finite()) return false;
    return true;
  }

private:
  static LayerParams make_layer(int in, int out, bool prelu, Rng& rng) {
    LayerParams l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    l.w = Tensor::zeros({static_cast<std::size_t>(in), static_cast<std::size_t>(out)});
    for (auto& v : l.w.data) v = rng.uniform(-bound, bound);
    l.b = Tensor::zeros({static_cast<std::size_t>(out)});
    for (auto& v : l.b.data) v = rng.uniform(-bound, bound);
    l.has_prelu = prelu;
    if (prelu) l.slope = Tensor::scalar(0.25);
    return l;
  }
};

// Parameter leaves of one model on one tape, in parameters() order.
struct ModelBinding {
  Graph* g = nullptr;
  const VaeModel* model = nullptr;
  std::vector<Var> params;
  std::size_t enc_param_count = 0;  // leading params belonging to the encoder side
};

inline ModelBinding bind(Graph& g, VaeModel& model, bool trainable) {
  ModelBinding b;
  b.g = &g;
  b.model = &model;
  auto named = model.parameters();
  for (auto& p : named) b.params.push_back(g.leaf(*p.tensor, trainable));
  std::size_t enc_count = 0;
  for (auto& p : named) {
    if (p.name.rfind("enc", 0) == 0 || p.name.rfind("mean", 0) == 0 || p.name.rfind("logvar", 0) == 0)
      ++enc_count;
  }
  b.enc_param_count = enc_count;
  return b;
}

struct PosteriorVars {
  Var mean;
  Var logvar;
};

namespace detail_model {

inline Var affine(Graph& g, Var x, Var w, Var b) { return g.add(g.matmul(x, w), b); }

}  // namespace detail_model

// x: [N, D] -> posterior mean and log-variance, each [N, d].
inline PosteriorVars encode(ModelBinding& mb, Var x) {
  Graph& g = *mb.g;
  std::size_t p = 0;
  Var h = x;
  for (std::size_t i = 0; i < mb.model->enc.size(); ++i) {
    Var w = mb.params[p++], b = mb.params[p++], slope = mb.params[p++];
    h = g.prelu(detail_model::affine(g, h, w, b), slope);
  }
  Var mu = detail_model::affine(g, h, mb.params[p], mb.params[p + 1]);
  p += 2;
  Var lv = detail_model::affine(g, h, mb.params[p], mb.params[p + 1]);
  return {mu, lv};
}

// z = mu + sigma (.) eps with sigma = exp(logvar / 2); eps enters as data.
inline Var reparameterize(Graph& g, const PosteriorVars& q, const Tensor& eps) {
  if (eps.shape != q.mean.value().shape)
    throw Error("reparameterize: eps shape " + shape_str(eps.shape) + " does not match posterior " +
                shape_str(q.mean.value().shape));
  Var sigma = g.exp(g.scalar_mul(q.logvar, 0.5));
  return g.add(q.mean, g.mul(sigma, g.constant(eps)));
}

// z: [N, d] -> pixel logits [N, D].
inline Var decode(ModelBinding& mb, Var z) {
  Graph& g = *mb.g;
  std::size_t p = mb.enc_param_count;
  Var h = z;
  for (std::size_t i = 0; i < mb.model->dec.size(); ++i) {
    Var w = mb.params[p++], b = mb.params[p++], slope = mb.params[p++];
    h = g.prelu(detail_model::affine(g, h, w, b), slope);
  }
  return detail_model::affine(g, h, mb.params[p], mb.params[p + 1]);
}

// Per-datum Bernoulli log-likelihood sum_pixels [x log s(l) + (1-x) log(1-s(l))]
// in the stable logit form x*l - softplus(l). Strict mode requires x in [0,1];
// the logit form itself is defined for any finite target, which the training
// path needs because noisy augmentations are deliberately left unclamped.
inline Var bernoulli_recon_rows(Graph& g, Var logits, Var x, bool soft_targets = false) {
  for (double v : x.value().data) {
    if (!std::isfinite(v)) throw Error("bernoulli recon: non-finite target");
    if (!soft_targets && (v < 0.0 || v > 1.0))
      throw Error("bernoulli recon: data outside [0,1]");
  }
  return g.row_sum(g.sub(g.mul(x, logits), g.softplus(logits)));
}

// Ablation likelihood: -1/2 || x - sigmoid(l) ||^2 per datum.
inline Var gaussian_mse_recon_rows(Graph& g, Var logits, Var x) {
  return g.scalar_mul(g.row_sum(g.square(g.sub(x, g.sigmoid(logits)))), -0.5);
}

// ---------------------------------------------------------------------------
// Plain (value-level) helpers
// ---------------------------------------------------------------------------

struct EncodedBatch {
  Tensor mean;    // [N, d]
  Tensor logvar;  // [N, d]
};

inline EncodedBatch encode_batch(VaeModel& model, const Tensor& images) {
  Graph g;
  ModelBinding mb = bind(g, model, false);
  PosteriorVars q = encode(mb, g.constant(images));
  return {q.mean.value(), q.logvar.value()};
}

inline Tensor decode_batch(VaeModel& model, const Tensor& z, bool apply_sigmoid) {
  Graph g;
  ModelBinding mb = bind(g, model, false);
  Var logits = decode(mb, g.constant(z));
  if (!apply_sigmoid) return logits.value();
  return g.sigmoid(logits).value();
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json + one tensor file per parameter.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& dir, VaeModel& model, const std::string& config_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "raven-checkpoint-v1";
  manifest["architecture"] = {{"input_dim", model.input_dim},
                              {"latent_dim", model.latent_dim},
                              {"hidden", model.hidden}};
  manifest["config_hash"] = config_hash;
  std::vector<std::string> names;
  for (auto& p : model.parameters()) {
    names.push_back(p.name);
    save_tensor((fs::path(dir) / (p.name + ".tsr")).string(), *p.tensor);
  }
  manifest["params"] = names;
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw Error("checkpoint: cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

inline VaeModel load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f) throw Error("checkpoint: cannot open manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(f);
  if (manifest.value("format", "") != "raven-checkpoint-v1")
    throw Error("checkpoint: unsupported format in " + dir);
  VaeModel m;
  m.input_dim = manifest["architecture"]["input_dim"].get<int>();
  m.latent_dim = manifest["architecture"]["latent_dim"].get<int>();
  m.hidden = manifest["architecture"]["hidden"].get<std::vector<int>>();
  Rng scratch(0);
  m = VaeModel::init(m.input_dim, m.latent_dim, m.hidden, scratch);
  for (auto& p : m.parameters()) {
    Tensor t = load_tensor((fs::path(dir) / (p.name + ".tsr")).string());
    if (t.shape != p.tensor->shape) throw Error("checkpoint: shape mismatch for " + p.name);
    *p.tensor = std::move(t);
  }
  return m;
}

inline std::string checkpoint_config_hash(const std::string& dir) {
  std::ifstream f(std::filesystem::path(dir) / "manifest.json");
  if (!f) throw Error("checkpoint: cannot open manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(f);
  return manifest.value("config_hash", "");
}

}  // namespace raven
