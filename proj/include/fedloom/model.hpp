/**
 * Copyright 2026 The Fedloom Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Reference trainable model: multinomial softmax regression fitted with
// per-sample SGD, plus the datasets it trains on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedloom/errors.hpp"

namespace fedloom {

/// Flat parameter vector of a softmax-regression model. Row-major with
/// (n_features + 1) rows of n_classes columns; the last row is the bias.
struct ModelWeights {
  std::uint32_t n_features = 0;
  std::uint32_t n_classes = 0;
  std::vector<double> values;

  ModelWeights() = default;
  ModelWeights(std::uint32_t features, std::uint32_t classes)
      : n_features(features),
        n_classes(classes),
        values(static_cast<std::size_t>(features + 1) * classes, 0.0) {}

  static std::size_t expected_size(std::uint32_t features, std::uint32_t classes) {
    return static_cast<std::size_t>(features + 1) * classes;
  }

  double& at(std::uint32_t row, std::uint32_t cls) {
    return values[static_cast<std::size_t>(row) * n_classes + cls];
  }
  double at(std::uint32_t row, std::uint32_t cls) const {
    return values[static_cast<std::size_t>(row) * n_classes + cls];
  }

  bool same_shape(const ModelWeights& other) const {
    return n_features == other.n_features && n_classes == other.n_classes;
  }

  bool valid() const {
    return n_classes >= 1 && values.size() == expected_size(n_features, n_classes) &&
           std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

struct Sample {
  std::vector<double> features;
  std::uint32_t label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::uint32_t n_features = 0;
  std::uint32_t n_classes = 0;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct TrainConfig {
  double learning_rate = 0.1;
  std::uint32_t epochs = 10;
  std::uint64_t rng_seed = 0;
};

/// Batches of data allotted to each worker in a scenario.
struct AllocationRow {
  std::vector<std::uint32_t> batches_per_worker;
  std::uint32_t batch_size = 100;

  std::size_t required_samples() const {
    std::size_t total = 0;
    for (auto b : batches_per_worker) total += static_cast<std::size_t>(b) * batch_size;
    return total;
  }
};

namespace detail {

inline void check_shapes(const ModelWeights& w, const Dataset& d) {
  if (w.values.size() != ModelWeights::expected_size(w.n_features, w.n_classes)) {
    throw InvalidArgument("weights: value count does not match shape");
  }
  if (w.n_features != d.n_features || w.n_classes != d.n_classes) {
    throw InvalidArgument("weights shape (" + std::to_string(w.n_features) + "x" +
                          std::to_string(w.n_classes) + ") does not match dataset (" +
                          std::to_string(d.n_features) + "x" + std::to_string(d.n_classes) + ")");
  }
}

// Class scores W^T x + b written into `scores`.
inline void class_scores(const ModelWeights& w, std::span<const double> x, std::span<double> scores) {
  const std::uint32_t k = w.n_classes;
  const double* bias = w.values.data() + static_cast<std::size_t>(w.n_features) * k;
  std::copy(bias, bias + k, scores.begin());
  for (std::uint32_t f = 0; f < w.n_features; ++f) {
    const double xf = x[f];
    if (xf == 0.0) continue;
    const double* row = w.values.data() + static_cast<std::size_t>(f) * k;
    for (std::uint32_t c = 0; c < k; ++c) scores[c] += xf * row[c];
  }
}

inline void softmax_inplace(std::span<double> z) {
  const double peak = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - peak);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

inline std::uint32_t argmax_lowest(std::span<const double> scores) {
  std::uint32_t best = 0;
  for (std::uint32_t c = 1; c < scores.size(); ++c) {
    if (scores[c] > scores[best]) best = c;
  }
  return best;
}

}  // namespace detail

/// Uniform [-0.01, 0.01] initialisation, deterministic per seed.
inline ModelWeights init_weights(std::uint32_t n_features, std::uint32_t n_classes, std::uint64_t seed) {
  if (n_features < 1) throw InvalidArgument("init_weights: n_features must be >= 1");
  if (n_classes < 2) throw InvalidArgument("init_weights: n_classes must be >= 2");
  ModelWeights w(n_features, n_classes);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.01, 0.01);
  for (double& v : w.values) v = dist(rng);
  return w;
}

/// Cross-entropy loss of one sample and its gradient w.r.t. every weight.
inline double loss_and_gradient(const ModelWeights& w, std::span<const double> x, std::uint32_t label,
                                std::vector<double>& grad) {
  const std::uint32_t k = w.n_classes;
  std::vector<double> p(k);
  detail::class_scores(w, x, p);
  detail::softmax_inplace(p);
  const double loss = -std::log(std::max(p[label], 1e-300));
  p[label] -= 1.0;
  grad.assign(w.values.size(), 0.0);
  for (std::uint32_t f = 0; f < w.n_features; ++f) {
    for (std::uint32_t c = 0; c < k; ++c) grad[static_cast<std::size_t>(f) * k + c] = x[f] * p[c];
  }
  for (std::uint32_t c = 0; c < k; ++c) grad[static_cast<std::size_t>(w.n_features) * k + c] = p[c];
  return loss;
}

inline double loss(const ModelWeights& w, std::span<const double> x, std::uint32_t label) {
  std::vector<double> p(w.n_classes);
  detail::class_scores(w, x, p);
  detail::softmax_inplace(p);
  return -std::log(std::max(p[label], 1e-300));
}

/// Runs `cfg.epochs` passes of per-sample SGD over `data`; one seeded
/// shuffle per epoch. The input weights are left untouched.
inline ModelWeights train_epochs(const ModelWeights& weights, const Dataset& data, const TrainConfig& cfg) {
  detail::check_shapes(weights, data);
  if (data.empty()) throw InvalidArgument("train_epochs: empty dataset");
  if (cfg.epochs < 1) throw InvalidArgument("train_epochs: epochs must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw InvalidArgument("train_epochs: learning_rate must be > 0");

  ModelWeights w = weights;
  const std::uint32_t k = w.n_classes;
  const std::uint32_t nf = w.n_features;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<double> p(k);

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const Sample& s = data.samples[idx];
      detail::class_scores(w, s.features, p);
      detail::softmax_inplace(p);
      p[s.label] -= 1.0;
      for (std::uint32_t f = 0; f < nf; ++f) {
        const double step = cfg.learning_rate * s.features[f];
        if (step == 0.0) continue;
        double* row = w.values.data() + static_cast<std::size_t>(f) * k;
        for (std::uint32_t c = 0; c < k; ++c) row[c] -= step * p[c];
      }
      double* bias = w.values.data() + static_cast<std::size_t>(nf) * k;
      for (std::uint32_t c = 0; c < k; ++c) bias[c] -= cfg.learning_rate * p[c];
    }
  }
  return w;
}

/// Number of correctly classified samples (argmax, ties to the lowest class).
inline std::size_t count_correct(const ModelWeights& weights, const Dataset& test) {
  detail::check_shapes(weights, test);
  std::vector<double> scores(weights.n_classes);
  std::size_t correct = 0;
  for (const Sample& s : test.samples) {
    detail::class_scores(weights, s.features, scores);
    if (detail::argmax_lowest(scores) == s.label) ++correct;
  }
  return correct;
}

inline double evaluate(const ModelWeights& weights, const Dataset& test) {
  if (test.empty()) throw InvalidArgument("evaluate: empty test set");
  return static_cast<double>(count_correct(weights, test)) / static_cast<double>(test.size());
}

/// Number of coordinates needed to give every class a distinct binary code.
inline std::uint32_t code_bits(std::uint32_t n_classes) {
  std::uint32_t bits = 1;
  while ((1u << bits) < n_classes) ++bits;
  return bits;
}

/// Centre of class `cls`: corner of the unit hypercube given by its binary code.
/// Coordinates past the code width stay at zero.
inline std::vector<double> class_center(std::uint32_t cls, std::uint32_t n_features) {
  std::vector<double> c(n_features, 0.0);
  for (std::uint32_t b = 0; b < n_features && b < 32; ++b) c[b] = (cls >> b) & 1u ? 1.0 : 0.0;
  return c;
}

/// Isotropic Gaussian clusters, one per class, samples ordered class by class.
/// `n_features` of 0 means "just enough coordinates for the class codes"; any
/// extra coordinates are pure noise around zero.
inline Dataset synth_dataset(std::uint32_t n_classes, std::uint32_t samples_per_class, double spread,
                             std::uint64_t seed, std::uint32_t n_features = 0) {
  if (n_classes < 2) throw InvalidArgument("synth_dataset: n_classes must be >= 2");
  if (samples_per_class < 1) throw InvalidArgument("synth_dataset: samples_per_class must be >= 1");
  if (!(spread > 0.0)) throw InvalidArgument("synth_dataset: spread must be > 0");
  const std::uint32_t bits = code_bits(n_classes);
  if (n_features == 0) n_features = bits;
  if (n_features < bits) throw InvalidArgument("synth_dataset: n_features too small for class codes");

  Dataset d{n_features, n_classes, {}};
  d.samples.reserve(static_cast<std::size_t>(n_classes) * samples_per_class);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  for (std::uint32_t cls = 0; cls < n_classes; ++cls) {
    const auto center = class_center(cls, n_features);
    for (std::uint32_t i = 0; i < samples_per_class; ++i) {
      Sample s{center, cls};
      for (double& v : s.features) v += noise(rng);
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const char* field) {
  if (buf.size() < off + 4) throw FormatError(std::string("truncated file: missing ") + field);
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
         (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image/label pair (MNIST layout). Pixels are scaled to [0,1];
/// the class count is max(label) + 1, at least 2.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = detail::read_file(images_path);
  const auto labels = detail::read_file(labels_path);

  const auto img_magic = detail::read_be32(images, 0, "images magic");
  if (img_magic != kIdxImagesMagic) throw FormatError("images magic: expected 0x00000803");
  const auto n_images = detail::read_be32(images, 4, "images count");
  const auto rows = detail::read_be32(images, 8, "images rows");
  const auto cols = detail::read_be32(images, 12, "images columns");

  const auto lbl_magic = detail::read_be32(labels, 0, "labels magic");
  if (lbl_magic != kIdxLabelsMagic) throw FormatError("labels magic: expected 0x00000801");
  const auto n_labels = detail::read_be32(labels, 4, "labels count");

  if (n_images != n_labels) {
    throw FormatError("count mismatch: " + std::to_string(n_images) + " images vs " +
                      std::to_string(n_labels) + " labels");
  }
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  if (pixels == 0) throw FormatError("images rows/columns: zero-sized image");
  if (images.size() < 16 + pixels * n_images) throw FormatError("truncated file: images pixel data");
  if (labels.size() < 8 + static_cast<std::size_t>(n_labels)) throw FormatError("truncated file: labels data");

  Dataset d;
  d.n_features = static_cast<std::uint32_t>(pixels);
  std::uint32_t max_label = 1;
  d.samples.reserve(n_images);
  for (std::size_t i = 0; i < n_images; ++i) {
    Sample s;
    s.features.resize(pixels);
    const unsigned char* px = images.data() + 16 + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) s.features[p] = static_cast<double>(px[p]) / 255.0;
    s.label = labels[8 + i];
    max_label = std::max(max_label, s.label);
    d.samples.push_back(std::move(s));
  }
  d.n_classes = max_label + 1;
  return d;
}

/// Sample indices of each worker's shard: a seeded shuffle cut into
/// contiguous slices, worker w taking batches_per_worker[w] * batch_size.
inline std::vector<std::vector<std::size_t>> partition_indices(std::size_t available, const AllocationRow& row,
                                                               std::uint64_t seed) {
  const std::size_t needed = row.required_samples();
  if (needed > available) {
    throw InvalidArgument("partition: allocation needs " + std::to_string(needed) + " samples, dataset has " +
                          std::to_string(available));
  }
  std::vector<std::size_t> order(available);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> slices;
  slices.reserve(row.batches_per_worker.size());
  auto cursor = order.begin();
  for (auto batches : row.batches_per_worker) {
    const auto count = static_cast<std::ptrdiff_t>(batches) * row.batch_size;
    slices.emplace_back(cursor, cursor + count);
    cursor += count;
  }
  return slices;
}

/// One dataset per worker; workers with zero batches get an empty shard.
inline std::vector<Dataset> partition(const Dataset& data, const AllocationRow& row, std::uint64_t seed) {
  std::vector<Dataset> shards;
  for (const auto& slice : partition_indices(data.size(), row, seed)) {
    Dataset shard{data.n_features, data.n_classes, {}};
    shard.samples.reserve(slice.size());
    for (auto idx : slice) shard.samples.push_back(data.samples[idx]);
    shards.push_back(std::move(shard));
  }
  return shards;
}

}  // namespace fedloom
