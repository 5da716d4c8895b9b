#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "raven/rng.hpp"
#include "raven/tensor.hpp"

namespace raven {

// Images live as f64 in [0,1] from load time on; additive augmentation noise
// therefore operates on the normalized scale.
struct Dataset {
  Tensor images;            // [N, D]
  std::vector<int> labels;  // N entries in {0..K-1}
  std::string name;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return images.rank() == 2 ? images.cols() : 0; }

  int num_classes() const {
    int k = 0;
    for (int l : labels) k = std::max(k, l + 1);
    return k;
  }

  Tensor row_image(std::size_t i) const {
    Vec out(dim());
    for (std::size_t j = 0; j < dim(); ++j) out[j] = images.at(i, j);
    return Tensor({dim()}, std::move(out));
  }

  void validate() const {
    if (images.rank() != 2 || images.rows() != labels.size())
      throw Error("dataset: image/label count mismatch");
    for (double v : images.data)
      if (v < 0.0 || v > 1.0 || !std::isfinite(v)) throw Error("dataset: pixel outside [0,1]");
  }
};

namespace detail_idx {

inline std::uint32_t read_u32_be(std::ifstream& f, const std::string& path, std::size_t offset) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4))
    throw Error("idx parse: " + path + " truncated at byte " + std::to_string(offset));
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

inline void write_u32_be(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail_idx

// IDX container: big-endian magic (2051 images / 2049 labels), big-endian u32
// dimension sizes, u8 payload. Pixels scale by 1/255.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  using detail_idx::read_u32_be;

  std::ifstream imgf(images_path, std::ios::binary);
  if (!imgf) throw Error("idx parse: cannot open " + images_path);
  if (read_u32_be(imgf, images_path, 0) != 2051)
    throw Error("idx parse: " + images_path + " has wrong magic (want 2051)");
  const std::uint32_t n_images = read_u32_be(imgf, images_path, 4);
  const std::uint32_t rows = read_u32_be(imgf, images_path, 8);
  const std::uint32_t cols = read_u32_be(imgf, images_path, 12);
  const std::size_t dim = static_cast<std::size_t>(rows) * cols;

  std::ifstream lblf(labels_path, std::ios::binary);
  if (!lblf) throw Error("idx parse: cannot open " + labels_path);
  if (read_u32_be(lblf, labels_path, 0) != 2049)
    throw Error("idx parse: " + labels_path + " has wrong magic (want 2049)");
  const std::uint32_t n_labels = read_u32_be(lblf, labels_path, 4);
  if (n_images != n_labels)
    throw Error("idx parse: image count " + std::to_string(n_images) + " != label count " +
                std::to_string(n_labels));

  Dataset ds;
  ds.images = Tensor::zeros({n_images, dim});
  std::vector<unsigned char> buf(dim);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    if (!imgf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim)))
      throw Error("idx parse: " + images_path + " truncated at byte " +
                  std::to_string(16 + static_cast<std::size_t>(i) * dim));
    for (std::size_t j = 0; j < dim; ++j)
      ds.images.at(i, j) = static_cast<double>(buf[j]) / 255.0;
  }
  ds.labels.resize(n_labels);
  for (std::uint32_t i = 0; i < n_labels; ++i) {
    unsigned char c;
    if (!lblf.read(reinterpret_cast<char*>(&c), 1))
      throw Error("idx parse: " + labels_path + " truncated at byte " + std::to_string(8 + i));
    ds.labels[i] = static_cast<int>(c);
  }
  return ds;
}

// Inverse of load_idx for u8-quantized pixel data (exact round trip when every
// pixel is an integer multiple of 1/255, which holds for loaded and synthetic
// datasets alike).
inline void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path,
                     std::uint32_t rows = 0, std::uint32_t cols = 0) {
  using detail_idx::write_u32_be;
  if (rows == 0 || cols == 0) {
    rows = 1;
    cols = static_cast<std::uint32_t>(ds.dim());
  }
  if (static_cast<std::size_t>(rows) * cols != ds.dim())
    throw Error("idx save: rows*cols != image dimension");

  std::ofstream imgf(images_path, std::ios::binary);
  if (!imgf) throw Error("idx save: cannot open " + images_path);
  write_u32_be(imgf, 2051);
  write_u32_be(imgf, static_cast<std::uint32_t>(ds.size()));
  write_u32_be(imgf, rows);
  write_u32_be(imgf, cols);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      const auto byte =
          static_cast<unsigned char>(std::lround(std::clamp(ds.images.at(i, j), 0.0, 1.0) * 255.0));
      imgf.write(reinterpret_cast<const char*>(&byte), 1);
    }

  std::ofstream lblf(labels_path, std::ios::binary);
  if (!lblf) throw Error("idx save: cannot open " + labels_path);
  write_u32_be(lblf, 2049);
  write_u32_be(lblf, static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels) {
    const auto byte = static_cast<unsigned char>(l);
    lblf.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

// Stratified index pick: per-class counts preserved within +-1, deterministic
// per seed (largest-remainder apportionment, ties by class id).
inline std::vector<std::size_t> stratified_indices(const Dataset& ds, std::size_t n,
                                                   std::uint64_t seed) {
  if (n > ds.size()) throw Error("subsample: n exceeds dataset size");
  const int k = ds.num_classes();
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  std::vector<std::size_t> take(static_cast<std::size_t>(k));
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (int c = 0; c < k; ++c) {
    const double exact = static_cast<double>(n) * static_cast<double>(by_class[c].size()) /
                         static_cast<double>(ds.size());
    take[c] = std::min(static_cast<std::size_t>(exact), by_class[c].size());
    assigned += take[c];
    remainders.push_back({exact - static_cast<double>(take[c]), c});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (const auto& [frac, c] : remainders) {
    if (assigned == n) break;
    if (take[c] < by_class[c].size()) {
      ++take[c];
      ++assigned;
    }
  }
  if (assigned != n) throw Error("subsample: could not apportion requested size");

  Rng rng(seed);
  std::vector<std::size_t> chosen;
  for (int c = 0; c < k; ++c) {
    auto& pool = by_class[c];
    // Fisher-Yates prefix shuffle
    for (std::size_t i = 0; i < take[c]; ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
      chosen.push_back(pool[i]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

inline Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.name = ds.name;
  out.split = ds.split;
  out.images = Tensor::zeros({rows.size(), ds.dim()});
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.labels[i] = ds.labels[rows[i]];
    for (std::size_t j = 0; j < ds.dim(); ++j) out.images.at(i, j) = ds.images.at(rows[i], j);
  }
  return out;
}

inline Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  return take_rows(ds, stratified_indices(ds, n, seed));
}

// Gaussian class blobs clipped to [0,1] and quantized to the u8 pixel grid.
// separation scales how far the class centers spread from mid-gray; zero
// separation collapses every class onto the same center.
inline Dataset synth_blobs(int classes, int per_class, int dim, double separation, std::uint64_t seed) {
  if (classes < 1 || per_class < 1 || dim < 1) throw Error("synth_blobs: all sizes must be >= 1");
  Rng rng(seed);
  std::vector<Vec> centers(static_cast<std::size_t>(classes), Vec(static_cast<std::size_t>(dim)));
  for (auto& c : centers)
    for (auto& v : c) v = 0.5 + separation * rng.uniform(-0.5, 0.5);

  const double blob_std = 0.08;
  Dataset ds;
  ds.name = "synth";
  ds.split = "all";
  const std::size_t n = static_cast<std::size_t>(classes) * static_cast<std::size_t>(per_class);
  ds.images = Tensor::zeros({n, static_cast<std::size_t>(dim)});
  ds.labels.resize(n);
  std::size_t row = 0;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i, ++row) {
      ds.labels[row] = c;
      for (int j = 0; j < dim; ++j) {
        const double raw = centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] +
                           blob_std * rng.normal();
        const double clipped = std::clamp(raw, 0.0, 1.0);
        ds.images.at(row, static_cast<std::size_t>(j)) =
            static_cast<double>(std::lround(clipped * 255.0)) / 255.0;
      }
    }
  return ds;
}

// Fixed train/test split by stratified draw of the test indices.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::size_t test_n,
                                                    std::uint64_t seed) {
  if (test_n >= ds.size()) throw Error("split: test size must be smaller than the dataset");
  const std::vector<std::size_t> test_idx = stratified_indices(ds, test_n, seed);
  std::vector<char> in_test(ds.size(), 0);
  for (std::size_t i : test_idx) in_test[i] = 1;
  std::vector<std::size_t> train_idx;
  train_idx.reserve(ds.size() - test_n);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!in_test[i]) train_idx.push_back(i);
  Dataset train = take_rows(ds, train_idx);
  Dataset test = take_rows(ds, test_idx);
  train.split = "train";
  test.split = "test";
  return {train, test};
}

}  // namespace raven
