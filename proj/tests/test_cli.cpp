#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "raven/cli.hpp"

using namespace raven;

namespace {

namespace fs = std::filesystem;

struct TmpDir {
  fs::path path;
  explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> synth_args(const TmpDir& tmp, const std::string& out,
                                    const std::string& regime, const std::string& seed) {
  return {"train",          "--dataset",      "synth",
          "--synth-classes", "2",             "--synth-per-class", "80",
          "--synth-dim",    "12",             "--synth-sep",       "1.2",
          "--regime",       regime,           "--epochs",          "2",
          "--batch-size",   "32",             "--latent-dim",      "2",
          "--hidden",       "10,6",           "--seed",            seed,
          "--sigma-aug",    "0.2",            "--out-dir",         tmp.sub(out),
          "--no-epoch-checkpoints"};
}

}  // namespace

TEST_CASE("verify subcommand emits a csv and exits zero") {
  TmpDir tmp("raven_cli_verify");
  const std::string out = tmp.sub("oracles.csv");
  CHECK(dispatch({"verify", "--seed", "7", "--out", out}) == 0);
  CsvTable t = read_csv(out);
  CHECK(t.column("identity") == 0);
  CHECK(t.column("status") >= 0);
  CHECK(t.rows.size() > 10);
  for (const auto& row : t.rows) CHECK(row[static_cast<std::size_t>(t.column("status"))] == "pass");
}

TEST_CASE("train smoke run writes checkpoint, metrics and manifest") {
  TmpDir tmp("raven_cli_train");
  CHECK(dispatch(synth_args(tmp, "run", "raven", "3")) == 0);
  CHECK(fs::exists(tmp.sub("run/checkpoint/manifest.json")));
  CHECK(fs::exists(tmp.sub("run/metrics.csv")));
  CHECK(fs::exists(tmp.sub("run/timing.csv")));
  CHECK(fs::exists(tmp.sub("run/manifest.json")));

  // metrics reference the manifest hash
  const std::string metrics = slurp(tmp.sub("run/metrics.csv"));
  nlohmann::json manifest = nlohmann::json::parse(slurp(tmp.sub("run/manifest.json")));
  const std::string hash = manifest["hash"].get<std::string>();
  CHECK(metrics.find("# manifest " + hash) == 0);

  // checkpoint loads and carries the same hash
  VaeModel model = load_checkpoint(tmp.sub("run/checkpoint"));
  CHECK(model.latent_dim == 2);
  CHECK(checkpoint_config_hash(tmp.sub("run/checkpoint")) == hash);
}

TEST_CASE("identical manifests produce byte-identical metrics") {
  TmpDir tmp("raven_cli_determinism");
  CHECK(dispatch(synth_args(tmp, "a", "raven", "11")) == 0);
  CHECK(dispatch(synth_args(tmp, "b", "raven", "11")) == 0);
  CHECK(slurp(tmp.sub("a/metrics.csv")) == slurp(tmp.sub("b/metrics.csv")));

  // different seed -> different bytes
  CHECK(dispatch(synth_args(tmp, "c", "raven", "12")) == 0);
  CHECK(slurp(tmp.sub("a/metrics.csv")) != slurp(tmp.sub("c/metrics.csv")));
}

TEST_CASE("attack and evaluate run against a trained checkpoint") {
  TmpDir tmp("raven_cli_attack_eval");
  REQUIRE(dispatch(synth_args(tmp, "run", "vanilla", "5")) == 0);
  const std::string ckpt = tmp.sub("run/checkpoint");

  CHECK(dispatch({"attack", "--dataset", "synth", "--synth-classes", "2", "--synth-per-class",
                  "80", "--synth-dim", "12", "--synth-sep", "1.2", "--checkpoint", ckpt, "--delta",
                  "0.05", "--iterations", "10", "--objective", "w2", "--out-dir",
                  tmp.sub("atk")}) == 0);
  CsvTable atk = read_csv(tmp.sub("atk/attack.csv"));
  CHECK(atk.rows.size() > 0);
  const int c_linf = atk.column("linf");
  REQUIRE(c_linf >= 0);
  for (const auto& row : atk.rows)
    CHECK(std::stod(row[static_cast<std::size_t>(c_linf)]) <= 0.05 + 1e-12);

  CHECK(dispatch({"evaluate", "--dataset", "synth", "--synth-classes", "2", "--synth-per-class",
                  "80", "--synth-dim", "12", "--synth-sep", "1.2", "--checkpoint", ckpt,
                  "--delta-grid", "0,0.05", "--objective", "kl", "--iterations", "10",
                  "--export-latents", "--out-dir", tmp.sub("eval")}) == 0);
  CHECK(fs::exists(tmp.sub("eval/eval.json")));
  CHECK(fs::exists(tmp.sub("eval/latents_test.csv")));
  CsvTable ev = read_csv(tmp.sub("eval/eval.csv"));
  CHECK(ev.rows.size() == 2);

  nlohmann::json j = nlohmann::json::parse(slurp(tmp.sub("eval/eval.json")));
  CHECK(j["clean_accuracy"].get<double>() >= 0.0);

  // latent csv row count matches the test split
  CsvTable lat = read_csv(tmp.sub("eval/latents_test.csv"));
  CHECK(lat.rows.size() == j["test_size"].get<std::size_t>());
}

TEST_CASE("report renders one polyline per series") {
  TmpDir tmp("raven_cli_report");
  {
    std::ofstream f(tmp.sub("eval_a.csv"));
    f << "delta,objective,accuracy\n0,kl,0.9\n0.1,kl,0.7\n0.2,kl,0.5\n";
  }
  {
    std::ofstream f(tmp.sub("eval_b.csv"));
    f << "delta,objective,accuracy\n0,kl,0.88\n0.1,kl,0.8\n0.2,kl,0.75\n0,w2,0.88\n0.1,w2,0.82\n";
  }
  const std::string svg_path = tmp.sub("plot.svg");
  CHECK(dispatch({"report", tmp.sub("eval_a.csv"), tmp.sub("eval_b.csv"), "--labels",
                  "first,second", "--out", svg_path}) == 0);
  const std::string svg = slurp(svg_path);
  CHECK(svg.find("<svg") != std::string::npos);
  std::size_t polylines = 0;
  for (std::size_t pos = 0; (pos = svg.find("<polyline", pos)) != std::string::npos; ++pos)
    ++polylines;
  CHECK(polylines == 3);  // first:kl, second:kl, second:w2
  CHECK(svg.find("first (kl)") != std::string::npos);
  CHECK(svg.find("second (w2)") != std::string::npos);

  // pure function of its inputs
  const std::string svg_path2 = tmp.sub("plot2.svg");
  CHECK(dispatch({"report", tmp.sub("eval_a.csv"), tmp.sub("eval_b.csv"), "--labels",
                  "first,second", "--out", svg_path2}) == 0);
  CHECK(slurp(svg_path2) == svg);
}

TEST_CASE("config file values apply with flag overrides") {
  TmpDir tmp("raven_cli_config");
  {
    std::ofstream f(tmp.sub("train.cfg"));
    f << "dataset=synth\nsynth-classes=2\nsynth-per-class=60\nsynth-dim=10\n"
      << "regime=vanilla\nepochs=1\nbatch-size=32\nlatent-dim=2\nhidden=8\nsigma-aug=0.2\n"
      << "out-dir=" << tmp.sub("cfg_run") << "\nno-epoch-checkpoints=true\n";
  }
  CHECK(dispatch({"train", "--config", tmp.sub("train.cfg"), "--seed", "2"}) == 0);
  nlohmann::json manifest = nlohmann::json::parse(slurp(tmp.sub("cfg_run/manifest.json")));
  CHECK(manifest["config"]["epochs"] == "1");
  CHECK(manifest["seed"] == 2);
}

TEST_CASE("bad invocations exit nonzero with diagnostics") {
  CHECK(dispatch({"train", "--regime", "nonsense"}) != 0);
  CHECK(dispatch({"unknown-subcommand"}) != 0);
  CHECK(dispatch({"evaluate"}) != 0);  // missing --checkpoint
  CHECK(dispatch({"attack", "--checkpoint", "/nonexistent", "--dataset", "synth"}) != 0);
  // raven_gmm without a mixture spec is an invalid combination
  TmpDir tmp("raven_cli_bad");
  auto args = synth_args(tmp, "g", "raven_gmm", "1");
  CHECK(dispatch(args) != 0);
}

TEST_CASE("mnist selection without data files names the expected layout") {
  TmpDir tmp("raven_cli_nodata");
  auto args = synth_args(tmp, "m", "vanilla", "1");
  args[2] = "mnist";  // --dataset mnist
  args.push_back("--data-dir");
  args.push_back(tmp.sub("empty"));
  CHECK(dispatch(args) != 0);
}

TEST_CASE("idx-backed dataset flows through train and evaluate") {
  TmpDir tmp("raven_cli_idx");
  fs::create_directories(tmp.sub("mnist"));
  Dataset all = synth_blobs(3, 60, 16, 1.5, 55);
  auto [train_ds, test_ds] = split_train_test(all, 45, 3);
  save_idx(train_ds, tmp.sub("mnist/train-images-idx3-ubyte"),
           tmp.sub("mnist/train-labels-idx1-ubyte"), 4, 4);
  save_idx(test_ds, tmp.sub("mnist/t10k-images-idx3-ubyte"),
           tmp.sub("mnist/t10k-labels-idx1-ubyte"), 4, 4);

  CHECK(dispatch({"train", "--dataset", "mnist", "--data-dir", tmp.path.string(), "--regime",
                  "raven", "--epochs", "1", "--subsample", "90", "--batch-size", "32",
                  "--latent-dim", "2", "--hidden", "10,6", "--sigma-aug", "0.2", "--out-dir",
                  tmp.sub("run"), "--no-epoch-checkpoints"}) == 0);
  CHECK(fs::exists(tmp.sub("run/checkpoint/manifest.json")));

  CHECK(dispatch({"evaluate", "--dataset", "mnist", "--data-dir", tmp.path.string(),
                  "--checkpoint", tmp.sub("run/checkpoint"), "--delta-grid", "0,0.05",
                  "--objective", "w2", "--iterations", "5", "--out-dir", tmp.sub("eval")}) == 0);
  CsvTable ev = read_csv(tmp.sub("eval/eval.csv"));
  CHECK(ev.rows.size() == 2);
}
