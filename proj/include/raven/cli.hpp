#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "raven/oracle.hpp"
#include "raven/report.hpp"

namespace raven {

namespace cli {

inline std::string default_data_dir() {
  const char* env = std::getenv("RAVEN_DATA_DIR");
  return env ? env : "data";
}

// Flat key=value config support: file keys become options spliced in right
// after the subcommand, so later command-line flags override them.
inline std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream f(path);
  if (!f) throw Error("config: cannot open " + path);
  std::vector<std::string> expanded;
  expanded.push_back(args[0]);
  std::string line;
  while (std::getline(f, line)) {
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config: expected key=value, got '" + line + "'");
    std::string key = line.substr(first, eq - first);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::string value = line.substr(eq + 1);
    const auto vf = value.find_first_not_of(" \t");
    value = vf == std::string::npos ? "" : value.substr(vf);
    while (!value.empty() && (value.back() == ' ' || value.back() == '\t' || value.back() == '\r'))
      value.pop_back();
    expanded.push_back("--" + key + "=" + value);
  }
  expanded.insert(expanded.end(), args.begin() + 1, args.end());
  return expanded;
}

struct DataOpts {
  std::string dataset = "synth";
  std::string data_dir = default_data_dir();
  std::size_t subsample = 0;     // 0 = all
  std::uint64_t split_seed = 0;  // stratified subsample / synth split seed
  // synthetic dataset shape
  int synth_classes = 4;
  int synth_per_class = 400;
  int synth_dim = 16;
  double synth_sep = 1.2;
  std::uint64_t synth_seed = 99;
};

inline void add_data_flags(CLI::App* cmd, DataOpts& d) {
  cmd->add_option("--dataset", d.dataset, "dataset: mnist, fmnist or synth")
      ->check(CLI::IsMember({"mnist", "fmnist", "synth"}));
  cmd->add_option("--data-dir", d.data_dir, "directory holding the idx files (env RAVEN_DATA_DIR)");
  cmd->add_option("--subsample", d.subsample, "stratified subsample size (0 = all)");
  cmd->add_option("--synth-classes", d.synth_classes, "synth: number of classes");
  cmd->add_option("--synth-per-class", d.synth_per_class, "synth: samples per class");
  cmd->add_option("--synth-dim", d.synth_dim, "synth: pixel dimension");
  cmd->add_option("--synth-sep", d.synth_sep, "synth: class separation");
  cmd->add_option("--synth-seed", d.synth_seed, "synth: generation seed");
}

struct IdxPaths {
  std::string train_images, train_labels, test_images, test_labels;
};

inline IdxPaths find_idx_files(const std::string& data_dir, const std::string& name) {
  namespace fs = std::filesystem;
  std::vector<std::string> roots = {data_dir + "/" + name, data_dir};
  if (name == "fmnist") {
    roots.insert(roots.begin(), data_dir + "/fashion-mnist");
    roots.insert(roots.begin(), data_dir + "/fashion_mnist");
  }
  for (const auto& root : roots) {
    IdxPaths p{root + "/train-images-idx3-ubyte", root + "/train-labels-idx1-ubyte",
               root + "/t10k-images-idx3-ubyte", root + "/t10k-labels-idx1-ubyte"};
    if (fs::exists(p.train_images) && fs::exists(p.train_labels) && fs::exists(p.test_images) &&
        fs::exists(p.test_labels))
      return p;
  }
  throw Error("dataset '" + name + "' not found under " + data_dir +
              " (expected train-images-idx3-ubyte / train-labels-idx1-ubyte / "
              "t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte; see README)");
}

struct LoadedData {
  Dataset train;
  Dataset test;
  std::vector<std::string> input_files;  // for manifest hashing
};

inline LoadedData load_data(const DataOpts& d) {
  LoadedData out;
  if (d.dataset == "synth") {
    Dataset all = synth_blobs(d.synth_classes, d.synth_per_class, d.synth_dim, d.synth_sep,
                              d.synth_seed);
    const std::size_t test_n = std::max<std::size_t>(1, all.size() / 5);
    auto [train, test] = split_train_test(all, test_n, d.split_seed + 1);
    out.train = std::move(train);
    out.test = std::move(test);
    out.train.name = out.test.name = "synth";
  } else {
    IdxPaths p = find_idx_files(d.data_dir, d.dataset);
    out.train = load_idx(p.train_images, p.train_labels);
    out.test = load_idx(p.test_images, p.test_labels);
    out.train.name = out.test.name = d.dataset;
    out.train.split = "train";
    out.test.split = "test";
    out.input_files = {p.train_images, p.train_labels, p.test_images, p.test_labels};
  }
  if (d.subsample > 0) {
    out.train = subsample(out.train, std::min(d.subsample, out.train.size()), d.split_seed);
    const std::size_t test_n = std::max<std::size_t>(1, d.subsample / 5);
    out.test = subsample(out.test, std::min(test_n, out.test.size()), d.split_seed + 1);
  }
  return out;
}

inline void add_data_config(std::map<std::string, std::string>& cfg, const DataOpts& d) {
  cfg["dataset"] = d.dataset;
  cfg["subsample"] = std::to_string(d.subsample);
  if (d.dataset == "synth") {
    cfg["synth_classes"] = std::to_string(d.synth_classes);
    cfg["synth_per_class"] = std::to_string(d.synth_per_class);
    cfg["synth_dim"] = std::to_string(d.synth_dim);
    cfg["synth_sep"] = fmt_double(d.synth_sep);
    cfg["synth_seed"] = std::to_string(d.synth_seed);
  }
}

// Checkpoint bytes participate in downstream manifests, so runs against
// different parameters (e.g. different epochs of one training) never share a
// manifest hash.
inline std::vector<std::string> checkpoint_files(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(fs::path(dir) / "manifest.json"))
    throw Error("checkpoint: no manifest.json under " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    out.push_back(std::stod(cell));
  }
  if (out.empty()) throw Error("empty delta grid");
  return out;
}

inline std::vector<int> parse_hidden(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    out.push_back(std::stoi(cell));
    if (out.back() < 1) throw Error("hidden layer sizes must be >= 1");
  }
  if (out.empty()) throw Error("empty hidden layer list");
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

struct VerifyOpts {
  std::uint64_t seed = 7;
  std::string out_path;
};

inline int run_verify(const VerifyOpts& o) {
  const auto rows = run_verification(o.seed);
  std::ostringstream csv;
  csv << "identity,seed,error,threshold,status\n";
  for (const auto& r : rows)
    csv << r.name << "," << r.seed << "," << fmt_double(r.error) << "," << fmt_double(r.threshold)
        << "," << (r.pass ? "pass" : "fail") << "\n";
  std::cout << csv.str();
  if (!o.out_path.empty()) {
    std::ofstream f(o.out_path);
    if (!f) throw Error("verify: cannot write " + o.out_path);
    f << csv.str();
  }
  if (!all_pass(rows)) {
    std::cerr << "verify: identity checks FAILED\n";
    return 1;
  }
  return 0;
}

struct TrainOpts {
  DataOpts data;
  std::string regime = "vanilla";
  int epochs = 50;
  int batch_size = 128;
  double lr = 0.001;
  std::uint64_t seed = 0;
  double sigma_aug = -1.0;  // std of the latent kernel; <0 picks a per-dataset default
  double noise_std = 0.05;
  int latent_dim = 10;
  std::string hidden = "500,250";
  int gmm_components = 0;
  std::string recon = "bernoulli";
  std::string out_dir = "out/train";
  bool epoch_checkpoints = true;
};

inline double default_sigma_aug(const std::string& dataset) {
  if (dataset == "mnist") return 0.01;
  if (dataset == "fmnist") return 0.04;
  return 0.1;
}

inline int run_train(const TrainOpts& o) {
  namespace fs = std::filesystem;
  DataOpts data_opts = o.data;
  data_opts.split_seed = o.seed;  // one seed spans the whole experiment
  LoadedData data = load_data(data_opts);

  TrainConfig cfg;
  cfg.regime = parse_regime(o.regime);
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.learning_rate = o.lr;
  cfg.seed = o.seed;
  cfg.hidden = parse_hidden(o.hidden);
  const double sig = o.sigma_aug > 0.0 ? o.sigma_aug : default_sigma_aug(o.data.dataset);
  cfg.bound = RavenBoundConfig::isotropic(o.latent_dim, sig,
                                          o.recon == "bernoulli"
                                              ? ReconLikelihood::kBernoulliCrossEntropy
                                              : ReconLikelihood::kGaussianMse);
  cfg.aug.noise_std = o.noise_std;
  cfg.gmm_components = o.gmm_components;
  cfg.validate();

  RunManifest manifest;
  manifest.command = "train";
  manifest.seed = o.seed;
  manifest.input_files = data.input_files;
  add_data_config(manifest.config, o.data);
  manifest.config["regime"] = o.regime;
  manifest.config["epochs"] = std::to_string(o.epochs);
  manifest.config["batch_size"] = std::to_string(o.batch_size);
  manifest.config["lr"] = fmt_double(o.lr);
  manifest.config["sigma_aug"] = fmt_double(sig);
  manifest.config["noise_std"] = fmt_double(o.noise_std);
  manifest.config["latent_dim"] = std::to_string(o.latent_dim);
  manifest.config["hidden"] = o.hidden;
  manifest.config["gmm_components"] = std::to_string(o.gmm_components);
  manifest.config["recon"] = o.recon;
  manifest.started_at = now_iso8601();
  const std::string hash = manifest.hash();

  cfg.config_hash = hash;
  if (o.epoch_checkpoints) cfg.checkpoint_dir = o.out_dir + "/checkpoints";

  fs::create_directories(o.out_dir);
  TrainResult result = train(cfg, data.train);
  manifest.finished_at = now_iso8601();

  save_checkpoint(o.out_dir + "/checkpoint", result.model, hash,
                  result.gmm ? &*result.gmm : nullptr);
  write_metrics_csv(o.out_dir + "/metrics.csv", result.metrics, hash);
  write_timing_csv(o.out_dir + "/timing.csv", result.metrics, hash);
  manifest.write(o.out_dir + "/manifest.json");

  std::cout << "train: regime=" << o.regime << " steps=" << result.steps
            << " clip_events=" << result.clip_events << " manifest=" << hash << "\n";
  if (result.diverged) {
    std::cerr << "train: loss diverged; last finite parameters retained in "
              << o.out_dir + "/checkpoint" << "\n";
    return 1;
  }
  return 0;
}

struct AttackOpts {
  DataOpts data;
  std::string checkpoint;
  double delta = 0.1;
  int iterations = 50;
  double step = -1.0;
  std::string objective = "kl";
  std::uint64_t seed = 0;
  bool random_start = false;
  std::string out_dir = "out/attack";
};

inline int run_attack(const AttackOpts& o) {
  namespace fs = std::filesystem;
  if (o.checkpoint.empty()) throw Error("attack: --checkpoint is required");
  DataOpts data_opts = o.data;
  data_opts.split_seed = o.seed;
  LoadedData data = load_data(data_opts);
  VaeModel model = load_checkpoint(o.checkpoint);

  AttackConfig cfg;
  cfg.delta = o.delta;
  cfg.iterations = o.iterations;
  cfg.step = o.step;
  cfg.objective = parse_objective(o.objective);
  cfg.seed = o.seed;
  cfg.random_start = o.random_start;

  RunManifest manifest;
  manifest.command = "attack";
  manifest.seed = o.seed;
  manifest.input_files = data.input_files;
  for (const auto& f : cli::checkpoint_files(o.checkpoint)) manifest.input_files.push_back(f);
  add_data_config(manifest.config, o.data);
  manifest.config["checkpoint"] = o.checkpoint;
  manifest.config["checkpoint_hash"] = checkpoint_config_hash(o.checkpoint);
  manifest.config["delta"] = fmt_double(o.delta);
  manifest.config["iterations"] = std::to_string(o.iterations);
  manifest.config["step"] = fmt_double(cfg.resolved_step());
  manifest.config["objective"] = o.objective;
  manifest.config["random_start"] = o.random_start ? "1" : "0";
  manifest.started_at = now_iso8601();
  const std::string hash = manifest.hash();

  AttackResult result = pgd_attack(model, data.test.images, cfg);
  manifest.finished_at = now_iso8601();

  fs::create_directories(o.out_dir);
  std::ofstream f(o.out_dir + "/attack.csv");
  if (!f) throw Error("attack: cannot write attack.csv");
  f << "# manifest " << hash << "\n";
  f << "sample,objective_start,objective_best,linf,failed\n";
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    double linf = 0.0;
    for (std::size_t j = 0; j < data.test.dim(); ++j)
      linf = std::fmax(linf, std::fabs(result.eps.at(i, j)));
    f << i << "," << fmt_double(result.objective_start[i]) << ","
      << fmt_double(result.objective_best[i]) << "," << fmt_double(linf) << ","
      << int(result.failed[i]) << "\n";
  }
  manifest.write(o.out_dir + "/manifest.json");
  std::cout << "attack: samples=" << data.test.size() << " failures=" << result.failures()
            << " manifest=" << hash << "\n";
  return 0;
}

struct EvaluateOpts {
  DataOpts data;
  std::string checkpoint;
  std::string delta_grid = "0,0.05,0.1,0.15,0.2";
  std::string objectives = "kl,w2";
  int iterations = 50;
  std::uint64_t seed = 0;
  double noise_std = 0.05;
  std::uint64_t pair_noise_seed = 12345;
  bool export_latents = false;
  std::string out_dir = "out/evaluate";
};

inline int run_evaluate(const EvaluateOpts& o) {
  namespace fs = std::filesystem;
  if (o.checkpoint.empty()) throw Error("evaluate: --checkpoint is required");
  DataOpts data_opts = o.data;
  data_opts.split_seed = o.seed;
  LoadedData data = load_data(data_opts);
  VaeModel model = load_checkpoint(o.checkpoint);

  EvalOptions opts;
  opts.delta_grid = parse_grid(o.delta_grid);
  opts.objectives.clear();
  {
    std::stringstream ss(o.objectives);
    std::string cell;
    while (std::getline(ss, cell, ',')) opts.objectives.push_back(parse_objective(cell));
    if (opts.objectives.empty()) throw Error("evaluate: no objectives given");
  }
  opts.attack_iterations = o.iterations;
  opts.attack_seed = o.seed;
  opts.pair_noise_std = o.noise_std;
  opts.pair_noise_seed = o.pair_noise_seed;

  RunManifest manifest;
  manifest.command = "evaluate";
  manifest.seed = o.seed;
  manifest.input_files = data.input_files;
  for (const auto& f : cli::checkpoint_files(o.checkpoint)) manifest.input_files.push_back(f);
  add_data_config(manifest.config, o.data);
  manifest.config["checkpoint"] = o.checkpoint;
  manifest.config["checkpoint_hash"] = checkpoint_config_hash(o.checkpoint);
  manifest.config["delta_grid"] = o.delta_grid;
  manifest.config["objectives"] = o.objectives;
  manifest.config["iterations"] = std::to_string(o.iterations);
  manifest.config["noise_std"] = fmt_double(o.noise_std);
  manifest.config["pair_noise_seed"] = std::to_string(o.pair_noise_seed);
  manifest.started_at = now_iso8601();
  const std::string hash = manifest.hash();

  Tensor z_train = extract_representations(model, data.train.images);
  LinearProbe probe = fit_linear_probe(z_train, data.train.labels);
  EvalReport report = evaluate(model, probe, data.test, opts);
  manifest.finished_at = now_iso8601();

  fs::create_directories(o.out_dir);
  nlohmann::json j = report.to_json();
  j["manifest"] = hash;
  j["probe"] = {{"train_accuracy", probe.train_accuracy},
                {"iterations", probe.iterations},
                {"grad_norm", probe.grad_norm}};
  std::ofstream jf(o.out_dir + "/eval.json");
  if (!jf) throw Error("evaluate: cannot write eval.json");
  jf << j.dump(2) << "\n";
  write_eval_csv(o.out_dir + "/eval.csv", report, hash);
  if (o.export_latents) {
    write_latents_csv(o.out_dir + "/latents_test.csv", extract_representations(model, data.test.images),
                      data.test.labels, hash);
  }
  manifest.write(o.out_dir + "/manifest.json");
  std::cout << "evaluate: clean_accuracy=" << fmt_double(report.clean_accuracy)
            << " recon_mse=" << fmt_double(report.recon_mse) << " manifest=" << hash << "\n";
  return 0;
}

struct ReportOpts {
  std::vector<std::string> inputs;
  std::string labels;  // comma-separated, defaults to file stems
  std::string out_path = "out/report.svg";
};

inline int run_report(const ReportOpts& o) {
  namespace fs = std::filesystem;
  if (o.inputs.empty()) throw Error("report: at least one evaluate csv is required");
  std::vector<std::string> labels;
  if (!o.labels.empty()) {
    std::stringstream ss(o.labels);
    std::string cell;
    while (std::getline(ss, cell, ',')) labels.push_back(cell);
    if (labels.size() != o.inputs.size())
      throw Error("report: label count does not match input count");
  } else {
    for (const auto& p : o.inputs) labels.push_back(fs::path(p).stem().string());
  }

  std::uint64_t h = fnv1a64("report");
  std::vector<PlotSeries> series;
  for (std::size_t k = 0; k < o.inputs.size(); ++k) {
    h = fnv1a64_file(o.inputs[k], h);
    CsvTable t = read_csv(o.inputs[k]);
    const int c_delta = t.column("delta");
    const int c_obj = t.column("objective");
    const int c_acc = t.column("accuracy");
    if (c_delta < 0 || c_obj < 0 || c_acc < 0)
      throw Error("report: " + o.inputs[k] + " lacks delta/objective/accuracy columns");
    std::map<std::string, PlotSeries> by_obj;
    for (const auto& row : t.rows) {
      const std::string& obj = row[static_cast<std::size_t>(c_obj)];
      auto& s = by_obj[obj];
      s.label = labels[k] + " (" + obj + ")";
      s.points.push_back({std::stod(row[static_cast<std::size_t>(c_delta)]),
                          std::stod(row[static_cast<std::size_t>(c_acc)])});
    }
    for (auto& [obj, s] : by_obj) {
      std::sort(s.points.begin(), s.points.end());
      series.push_back(std::move(s));
    }
  }

  const std::string svg = render_accuracy_svg(series, hex64(h));
  if (const auto parent = fs::path(o.out_path).parent_path(); !parent.empty())
    fs::create_directories(parent);
  std::ofstream f(o.out_path);
  if (!f) throw Error("report: cannot write " + o.out_path);
  f << svg;
  std::cout << "report: wrote " << o.out_path << " with " << series.size() << " series\n";
  return 0;
}

}  // namespace cli

// Entry point shared by the binary and the tests. argv excludes the program
// name. Exit codes: 0 success, 1 failure, CLI11 codes for usage errors.
inline int dispatch(const std::vector<std::string>& argv_in) {
  std::vector<std::string> argv;
  try {
    argv = argv_in.empty() ? argv_in : cli::apply_config_file(argv_in);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"robust-VAE workbench: paired-prior bound, training, attacks, evaluation"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_path;  // consumed by apply_config_file; listed for --help
  cli::VerifyOpts vo;
  CLI::App* verify = app.add_subcommand("verify", "run all closed-form identity oracles");
  verify->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  verify->add_option("--config", config_path, "flat key=value config file; flags override");
  verify->add_option("--seed", vo.seed, "oracle battery seed");
  verify->add_option("--out", vo.out_path, "also write the csv here");

  cli::TrainOpts to;
  CLI::App* train = app.add_subcommand("train", "train a model under one regime");
  train->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  train->add_option("--config", config_path, "flat key=value config file; flags override");
  cli::add_data_flags(train, to.data);
  train->add_option("--regime", to.regime, "vanilla | noise_vae | raven | raven_gmm")
      ->check(CLI::IsMember({"vanilla", "noise_vae", "raven", "raven_gmm"}));
  train->add_option("--epochs", to.epochs);
  train->add_option("--batch-size", to.batch_size);
  train->add_option("--lr", to.lr);
  train->add_option("--seed", to.seed);
  train->add_option("--sigma-aug", to.sigma_aug,
                    "std of the latent augmentation kernel (variance = value^2)");
  train->add_option("--noise-std", to.noise_std, "pixel noise std for the augmented twin");
  train->add_option("--latent-dim", to.latent_dim);
  train->add_option("--hidden", to.hidden, "comma-separated hidden layer sizes");
  train->add_option("--gmm-components", to.gmm_components, "mixture components for raven_gmm");
  train->add_option("--recon", to.recon)->check(CLI::IsMember({"bernoulli", "mse"}));
  train->add_option("--out-dir", to.out_dir);
  train->add_flag("!--no-epoch-checkpoints", to.epoch_checkpoints, "disable per-epoch checkpoints");

  cli::AttackOpts ao;
  CLI::App* attack = app.add_subcommand("attack", "run the max-norm PGD attack against an encoder");
  attack->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  attack->add_option("--config", config_path, "flat key=value config file; flags override");
  cli::add_data_flags(attack, ao.data);
  attack->add_option("--checkpoint", ao.checkpoint, "model checkpoint directory")->required();
  attack->add_option("--delta", ao.delta, "l-infinity budget");
  attack->add_option("--iterations", ao.iterations);
  attack->add_option("--step", ao.step, "step size (default delta/25)");
  attack->add_option("--objective", ao.objective)->check(CLI::IsMember({"kl", "w2"}));
  attack->add_option("--seed", ao.seed);
  attack->add_flag("--random-start", ao.random_start, "start from a random point in the budget box");
  attack->add_option("--out-dir", ao.out_dir);

  cli::EvaluateOpts eo;
  CLI::App* evaluate = app.add_subcommand("evaluate", "probe accuracy, attack grid, mse, distances");
  evaluate->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  evaluate->add_option("--config", config_path, "flat key=value config file; flags override");
  cli::add_data_flags(evaluate, eo.data);
  evaluate->add_option("--checkpoint", eo.checkpoint, "model checkpoint directory")->required();
  evaluate->add_option("--delta-grid", eo.delta_grid, "comma-separated budgets");
  evaluate->add_option("--objective", eo.objectives, "comma-separated attack objectives");
  evaluate->add_option("--iterations", eo.iterations);
  evaluate->add_option("--seed", eo.seed);
  evaluate->add_option("--noise-std", eo.noise_std, "pixel noise for the latent pair distance");
  evaluate->add_option("--pair-noise-seed", eo.pair_noise_seed,
                       "noise realization shared across models under comparison");
  evaluate->add_flag("--export-latents", eo.export_latents, "write latents_test.csv");
  evaluate->add_option("--out-dir", eo.out_dir);

  cli::ReportOpts ro;
  CLI::App* report = app.add_subcommand("report", "render accuracy-vs-budget curves as svg");
  report->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  report->add_option("--config", config_path, "flat key=value config file; flags override");
  report->add_option("inputs", ro.inputs, "evaluate csv files")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  report->add_option("--labels", ro.labels, "comma-separated series labels");
  report->add_option("--out", ro.out_path, "output svg path");

  std::vector<const char*> cargv;
  cargv.push_back("raven");
  for (const auto& a : argv) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (verify->parsed()) return cli::run_verify(vo);
    if (train->parsed()) return cli::run_train(to);
    if (attack->parsed()) return cli::run_attack(ao);
    if (evaluate->parsed()) return cli::run_evaluate(eo);
    if (report->parsed()) return cli::run_report(ro);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace raven
