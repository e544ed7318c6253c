#ifndef HFL_DATA_HPP_
#define HFL_DATA_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hfl/error.hpp"
#include "hfl/rng.hpp"

namespace hfl {

using ClientId = std::size_t;

// Labelled samples stored row-major: sample i occupies
// features[i * width, (i + 1) * width).
struct Dataset {
  std::size_t width = 0;
  std::size_t class_count = 0;
  std::vector<double> features;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const double> sample(std::size_t i) const {
    return {features.data() + i * width, width};
  }

  void push_back(std::span<const double> x, std::size_t label) {
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.width = width;
    out.class_count = class_count;
    out.features.reserve(indices.size() * width);
    out.labels.reserve(indices.size());
    for (auto i : indices) out.push_back(sample(i), labels[i]);
    return out;
  }
};

struct ClientShard {
  ClientId client = 0;
  std::vector<std::size_t> indices;  // positions in the source pool
  Dataset data;
};

struct Partition {
  std::vector<ClientShard> shards;
  Dataset holdout;
};

// Gaussian class blobs. Class centroids are drawn from N(0, I); each sample is
// its centroid plus N(0, spread^2 I) noise. Label of sample i is i mod C, so
// class counts differ by at most one.
inline Dataset synth_generate(std::uint64_t seed, std::size_t n_samples,
                              std::size_t n_features, std::size_t n_classes,
                              double cluster_spread) {
  if (n_samples == 0 || n_features == 0 || n_classes == 0) {
    throw UsageError("synth_generate: sample, feature and class counts must be positive");
  }
  if (!(cluster_spread >= 0.0) || !std::isfinite(cluster_spread)) {
    throw UsageError("synth_generate: cluster_spread must be finite and >= 0");
  }
  Rng centroid_rng(mix_seed({seed, 0x63656e74ULL}));
  std::vector<double> centroids(n_classes * n_features);
  for (auto& c : centroids) c = centroid_rng.normal();

  Rng noise_rng(mix_seed({seed, 0x6e6f6973ULL}));
  Dataset data;
  data.width = n_features;
  data.class_count = n_classes;
  data.features.reserve(n_samples * n_features);
  data.labels.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::size_t label = i % n_classes;
    for (std::size_t f = 0; f < n_features; ++f) {
      data.features.push_back(centroids[label * n_features + f] +
                              cluster_spread * noise_rng.normal());
    }
    data.labels.push_back(label);
  }
  return data;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw IoError("truncated IDX header in " + path);
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Loads an MNIST-layout IDX image/label pair. Pixels are scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t limit) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw IoError("cannot open " + images_path);
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw IoError("cannot open " + labels_path);

  if (detail::read_be32(images, images_path) != kIdxImageMagic) {
    throw FormatError("bad IDX image magic in " + images_path);
  }
  if (detail::read_be32(labels, labels_path) != kIdxLabelMagic) {
    throw FormatError("bad IDX label magic in " + labels_path);
  }
  const std::size_t image_count = detail::read_be32(images, images_path);
  const std::size_t rows = detail::read_be32(images, images_path);
  const std::size_t cols = detail::read_be32(images, images_path);
  const std::size_t label_count = detail::read_be32(labels, labels_path);
  if (image_count != label_count) {
    throw FormatError("IDX image count " + std::to_string(image_count) +
                      " does not match label count " + std::to_string(label_count));
  }

  const std::size_t n = std::min(limit, image_count);
  const std::size_t width = rows * cols;
  Dataset data;
  data.width = width;

  std::vector<unsigned char> pixels(n * width);
  if (n > 0 && !images.read(reinterpret_cast<char*>(pixels.data()),
                            static_cast<std::streamsize>(pixels.size()))) {
    throw IoError("truncated IDX image data in " + images_path);
  }
  std::vector<unsigned char> raw_labels(n);
  if (n > 0 && !labels.read(reinterpret_cast<char*>(raw_labels.data()),
                            static_cast<std::streamsize>(raw_labels.size()))) {
    throw IoError("truncated IDX label data in " + labels_path);
  }

  data.features.resize(n * width);
  std::transform(pixels.begin(), pixels.end(), data.features.begin(),
                 [](unsigned char p) { return static_cast<double>(p) / 255.0; });
  data.labels.assign(raw_labels.begin(), raw_labels.end());
  std::size_t max_label = 0;
  for (auto l : data.labels) max_label = std::max(max_label, l);
  data.class_count = n == 0 ? 0 : max_label + 1;
  return data;
}

// Seeded shuffle of the pool followed by contiguous near-equal shards. Shard
// sizes differ by at most one; shard j goes to client_ids[j].
inline Partition partition_iid(const Dataset& pool, std::span<const ClientId> client_ids,
                               std::uint64_t seed) {
  if (client_ids.empty()) throw UsageError("partition_iid: need at least one client");
  if (pool.size() < client_ids.size()) {
    throw UsageError("partition_iid: " + std::to_string(client_ids.size()) +
                     " clients but only " + std::to_string(pool.size()) + " samples");
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  const std::size_t n = pool.size();
  const std::size_t k = client_ids.size();
  Partition out;
  out.shards.reserve(k);
  std::size_t begin = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t len = n / k + (j < n % k ? 1 : 0);
    ClientShard shard;
    shard.client = client_ids[j];
    shard.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(begin + len));
    shard.data = pool.subset(shard.indices);
    out.shards.push_back(std::move(shard));
    begin += len;
  }
  return out;
}

}  // namespace hfl

#endif  // HFL_DATA_HPP_
