#ifndef HFL_CODEC_HPP_
#define HFL_CODEC_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hfl/error.hpp"
#include "hfl/nn.hpp"
#include "hfl/rng.hpp"

namespace hfl {

using Matrix = Eigen::MatrixXd;
using ClusterId = std::size_t;

// Layer values with every entry of magnitude below mu set to zero.
struct SparseLayer {
  std::vector<double> values;
  double mu = 0.0;
};

inline SparseLayer sparsify(std::span<const double> values, double mu) {
  if (!(mu >= 0.0)) throw UsageError("sparsify: mu must be >= 0");
  SparseLayer out{std::vector<double>(values.begin(), values.end()), mu};
  for (auto& v : out.values) {
    if (!(std::abs(v) >= mu)) v = 0.0;
  }
  return out;
}

// Threshold that keeps the floor(s * G) largest magnitudes. With s = 1 this is
// zero. Ties at the cut keep every tied entry, since sparsify keeps |P| >= mu.
inline double mu_for_density(std::span<const double> values, double density) {
  if (values.empty()) throw UsageError("mu_for_density: empty layer");
  if (!(density > 0.0 && density <= 1.0)) throw UsageError("mu_for_density: density must lie in (0, 1]");
  if (density == 1.0) return 0.0;
  std::vector<double> mags(values.size());
  std::transform(values.begin(), values.end(), mags.begin(), [](double v) { return std::abs(v); });
  const auto keep = static_cast<std::size_t>(std::floor(density * static_cast<double>(mags.size()) + 1e-9));
  std::sort(mags.begin(), mags.end(), std::greater<>());
  if (keep == 0) return std::nextafter(mags.front(), HUGE_VAL);
  return mags[keep - 1];
}

// How a client thins each layer before projection.
struct Sparsification {
  enum class Mode { density, threshold };
  Mode mode = Mode::density;
  double value = 0.1;  // target density s, or mu

  double threshold_for(std::span<const double> layer) const {
    return mode == Mode::density ? mu_for_density(layer, value) : value;
  }
};

// Projected length ceil(ratio * G), required to stay below G.
inline std::size_t projected_length(std::size_t full_length, double ratio) {
  const auto g = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(full_length) - 1e-9));
  return std::max<std::size_t>(g, 1);
}

// rows x cols matrix with i.i.d. N(0, 1/rows) entries.
inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t stream_seed) {
  Rng rng(stream_seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(rows));
  Matrix phi(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < phi.rows(); ++r) {
    for (Eigen::Index c = 0; c < phi.cols(); ++c) phi(r, c) = sd * rng.normal();
  }
  return phi;
}

// Projection for (cluster, layer): ceil(ratio * G) x G, drawn from
// (seed, cluster, layer).
inline Matrix projection_matrix(std::size_t full_length, double ratio, std::uint64_t seed,
                                ClusterId cluster, std::size_t layer) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("projection ratio must lie in (0, 1)");
  const std::size_t g = projected_length(full_length, ratio);
  if (g >= full_length) {
    throw UsageError("projection of a length-" + std::to_string(full_length) +
                     " layer at ratio " + std::to_string(ratio) + " does not shrink it");
  }
  return gaussian_matrix(g, full_length, mix_seed({seed, cluster, layer}));
}

// Per-(cluster, layer) projection matrices shared by all members of a cluster.
class CompressionBank {
 public:
  CompressionBank() = default;
  CompressionBank(double ratio, std::uint64_t seed) : ratio_(ratio), seed_(seed) {}

  double ratio() const { return ratio_; }
  std::uint64_t seed() const { return seed_; }

  void insert(ClusterId cluster, std::size_t layer, Matrix phi) {
    matrices_.insert_or_assign({cluster, layer}, std::move(phi));
  }

  bool contains(ClusterId cluster, std::size_t layer) const {
    return matrices_.contains({cluster, layer});
  }

  const Matrix& matrix(ClusterId cluster, std::size_t layer) const {
    auto it = matrices_.find({cluster, layer});
    if (it == matrices_.end()) {
      throw ConfigError("compression bank has no matrix for cluster " + std::to_string(cluster) +
                        " layer " + std::to_string(layer));
    }
    return it->second;
  }

  std::size_t size() const { return matrices_.size(); }

 private:
  double ratio_ = 0.25;
  std::uint64_t seed_ = 0;
  std::map<std::pair<ClusterId, std::size_t>, Matrix> matrices_;
};

// layer_lengths lists G_k for every compressed (non-output) layer.
inline CompressionBank gen_bank(std::span<const std::size_t> layer_lengths,
                                std::span<const ClusterId> clusters, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("gen_bank: ratio must lie in (0, 1)");
  CompressionBank bank(ratio, seed);
  for (auto cluster : clusters) {
    for (std::size_t k = 0; k < layer_lengths.size(); ++k) {
      bank.insert(cluster, k, projection_matrix(layer_lengths[k], ratio, seed, cluster, k));
    }
  }
  return bank;
}

inline std::vector<double> compress(const SparseLayer& sparse, const Matrix& phi) {
  if (static_cast<std::size_t>(phi.cols()) != sparse.values.size()) {
    throw ShapeError("compress: matrix has " + std::to_string(phi.cols()) + " columns, layer has " +
                     std::to_string(sparse.values.size()) + " entries");
  }
  const Eigen::Map<const Eigen::VectorXd> x(sparse.values.data(), phi.cols());
  const Eigen::VectorXd y = phi * x;
  return {y.data(), y.data() + y.size()};
}

// Projected non-output layers of one client (or, after LC aggregation, the sum
// over a cluster). The output layer never appears here.
struct CompressedModel {
  ClusterId cluster = 0;
  std::vector<std::vector<double>> layers;
  std::vector<LayerBlock> shapes;  // hidden-layer shapes with empty values
  bool output_excluded = true;
};

inline std::vector<std::size_t> body_lengths(const ModelParams& model) {
  std::vector<std::size_t> out;
  for (const auto& l : model.layers) {
    if (l.role != LayerRole::output) out.push_back(l.param_count());
  }
  return out;
}

inline CompressedModel compress_model(const ModelParams& model, const CompressionBank& bank,
                                      ClusterId cluster, const Sparsification& sparsification) {
  CompressedModel out;
  out.cluster = cluster;
  std::size_t k = 0;
  for (const auto& layer : model.layers) {
    if (layer.role == LayerRole::output) continue;
    const auto& phi = bank.matrix(cluster, k);
    const auto sparse = sparsify(layer.values, sparsification.threshold_for(layer.values));
    out.layers.push_back(compress(sparse, phi));
    out.shapes.push_back({layer.outputs, layer.inputs, layer.role, {}});
    ++k;
  }
  return out;
}

// Core-client aggregation: component-wise sum of compressed layers.
inline CompressedModel lc_aggregate(std::span<const CompressedModel> models) {
  if (models.empty()) throw UsageError("lc_aggregate: nothing to aggregate");
  CompressedModel sum = models.front();
  for (std::size_t m = 1; m < models.size(); ++m) {
    const auto& other = models[m];
    if (other.cluster != sum.cluster || other.layers.size() != sum.layers.size()) {
      throw ShapeError("lc_aggregate: models from different clusters or layouts");
    }
    for (std::size_t k = 0; k < sum.layers.size(); ++k) {
      if (other.layers[k].size() != sum.layers[k].size()) throw ShapeError("lc_aggregate: layer length mismatch");
      for (std::size_t i = 0; i < sum.layers[k].size(); ++i) sum.layers[k][i] += other.layers[k][i];
    }
  }
  return sum;
}

// True when the expected aggregate support c * s * G exceeds half the
// projected length, where basis-pursuit recovery becomes unreliable.
inline bool recovery_at_risk(std::size_t members, double density, std::size_t full_length,
                             std::size_t projected) {
  return static_cast<double>(members) * density * static_cast<double>(full_length) >
         0.5 * static_cast<double>(projected);
}

}  // namespace hfl

#endif  // HFL_CODEC_HPP_
