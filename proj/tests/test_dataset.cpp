#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "raven/dataset.hpp"
#include "raven/robustness.hpp"

using namespace raven;

namespace {

namespace fs = std::filesystem;

struct TmpDir {
  fs::path path;
  TmpDir() : path(fs::temp_directory_path() / "raven_dataset_test") { fs::create_directories(path); }
  ~TmpDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("idx round trip is bit exact and magic is validated") {
  TmpDir tmp;
  Dataset ds = synth_blobs(3, 5, 8, 1.0, 42);
  save_idx(ds, tmp.file("images"), tmp.file("labels"), 2, 4);

  Dataset back = load_idx(tmp.file("images"), tmp.file("labels"));
  CHECK(back.images.shape == ds.images.shape);
  CHECK(back.images.data == ds.images.data);
  CHECK(back.labels == ds.labels);

  // label file passed where an image file is expected -> magic error
  CHECK_THROWS_WITH_AS(load_idx(tmp.file("labels"), tmp.file("labels")),
                       doctest::Contains("magic"), Error);
  CHECK_THROWS_WITH_AS(load_idx(tmp.file("images"), tmp.file("images")),
                       doctest::Contains("magic"), Error);
}

TEST_CASE("idx truncation reports the byte offset and count mismatches are caught") {
  TmpDir tmp;
  Dataset ds = synth_blobs(2, 4, 6, 1.0, 7);
  save_idx(ds, tmp.file("images"), tmp.file("labels"), 2, 3);

  const auto full = fs::file_size(tmp.file("images"));
  fs::resize_file(tmp.file("images"), full - 4);
  CHECK_THROWS_WITH_AS(load_idx(tmp.file("images"), tmp.file("labels")),
                       doctest::Contains("truncated at byte"), Error);

  // rewrite images with a different count than labels
  Dataset ds2 = synth_blobs(2, 3, 6, 1.0, 7);
  save_idx(ds2, tmp.file("images"), tmp.file("labels2"), 2, 3);
  CHECK_THROWS_WITH_AS(load_idx(tmp.file("images"), tmp.file("labels")),
                       doctest::Contains("count"), Error);
}

TEST_CASE("all-zero images survive the container") {
  TmpDir tmp;
  Dataset ds;
  ds.images = Tensor::zeros({10, 12});
  ds.labels.assign(10, 0);
  save_idx(ds, tmp.file("z_img"), tmp.file("z_lbl"), 3, 4);
  Dataset back = load_idx(tmp.file("z_img"), tmp.file("z_lbl"));
  CHECK(back.size() == 10);
  for (double v : back.images.data) CHECK(v == 0.0);
}

TEST_CASE("stratified subsample") {
  Dataset ds = synth_blobs(10, 200, 5, 1.0, 3);  // balanced, 2000 rows

  // n == N returns the same content
  Dataset all = subsample(ds, ds.size(), 1);
  CHECK(all.images.data == ds.images.data);
  CHECK(all.labels == ds.labels);

  // balanced 10-class set, n=1000 -> exactly 100 per class
  Dataset sub = subsample(ds, 1000, 5);
  std::vector<int> counts(10, 0);
  for (int l : sub.labels) counts[static_cast<std::size_t>(l)]++;
  for (int c : counts) CHECK(c == 100);

  // deterministic per seed
  Dataset sub2 = subsample(ds, 1000, 5);
  CHECK(sub.images.data == sub2.images.data);
  CHECK(sub.labels == sub2.labels);

  // proportions preserved within +-1 on an unbalanced set
  Dataset unbalanced = synth_blobs(2, 300, 4, 1.0, 9);
  Dataset more = synth_blobs(2, 150, 4, 1.0, 10);
  // build a 450/150-ish split by relabeling half of 'more'
  for (auto& l : more.labels) l = 0;
  Dataset joined;
  joined.images = Tensor::zeros({unbalanced.size() + more.size(), 4});
  for (std::size_t i = 0; i < unbalanced.size(); ++i)
    for (std::size_t j = 0; j < 4; ++j) joined.images.at(i, j) = unbalanced.images.at(i, j);
  for (std::size_t i = 0; i < more.size(); ++i)
    for (std::size_t j = 0; j < 4; ++j)
      joined.images.at(unbalanced.size() + i, j) = more.images.at(i, j);
  joined.labels = unbalanced.labels;
  joined.labels.insert(joined.labels.end(), more.labels.begin(), more.labels.end());

  const std::size_t n = 301;
  Dataset js = subsample(joined, n, 2);
  std::vector<double> got(2, 0);
  for (int l : js.labels) got[static_cast<std::size_t>(l)]++;
  const double expect0 = double(n) * 600.0 / 900.0;
  const double expect1 = double(n) * 300.0 / 900.0;
  CHECK(std::fabs(got[0] - expect0) <= 1.0);
  CHECK(std::fabs(got[1] - expect1) <= 1.0);

  CHECK_THROWS_AS(subsample(ds, ds.size() + 1, 0), Error);
}

TEST_CASE("synthetic blobs separability") {
  // large separation: a linear probe on raw pixels is perfect
  Dataset sep = synth_blobs(4, 100, 10, 3.0, 11);
  LinearProbe probe = fit_linear_probe(sep.images, sep.labels);
  CHECK(probe.train_accuracy == doctest::Approx(1.0));

  // zero separation: chance level on held-out data
  Dataset flat = synth_blobs(4, 400, 10, 0.0, 13);
  auto [train, test] = split_train_test(flat, 400, 17);
  LinearProbe chance = fit_linear_probe(train.images, train.labels);
  const double acc = accuracy(probe_predict(chance, test.images), test.labels);
  CHECK(acc == doctest::Approx(0.25).epsilon(0.2));  // 1/K +- 0.05

  // range and quantization
  for (double v : sep.images.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v * 255.0 == doctest::Approx(std::round(v * 255.0)).epsilon(1e-12));
  }
}

TEST_CASE("train/test split partitions the data") {
  Dataset ds = synth_blobs(5, 100, 6, 1.5, 19);
  auto [train, test] = split_train_test(ds, 100, 23);
  CHECK(train.size() == 400);
  CHECK(test.size() == 100);
  std::vector<int> counts(5, 0);
  for (int l : test.labels) counts[static_cast<std::size_t>(l)]++;
  for (int c : counts) CHECK(c == 20);
}
