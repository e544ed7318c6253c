#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "hfl/codec.hpp"

using namespace hfl;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace

TEST(Sparsify, ElementwiseRule) {
  const std::vector<double> v{0.5, -0.02, 0.3, 0.0, -0.9};
  EXPECT_EQ(sparsify(v, 0.1).values, (std::vector<double>{0.5, 0.0, 0.3, 0.0, -0.9}));
  EXPECT_EQ(sparsify(v, 0.0).values, v);
  EXPECT_EQ(sparsify(v, 0.91).values, std::vector<double>(5, 0.0));
  EXPECT_THROW(sparsify(v, -1e-3), UsageError);
}

TEST(Sparsify, Idempotent) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto v = random_vector(97, seed);
    const double mu = 0.1 * static_cast<double>(seed % 7);
    const auto once = sparsify(v, mu);
    EXPECT_EQ(sparsify(once.values, mu).values, once.values);
  }
}

TEST(MuForDensity, Examples) {
  const std::vector<double> v{1, -2, 3, 4, -5, 6, 7, -8, 9, 10};
  EXPECT_EQ(mu_for_density(v, 1.0), 0.0);
  const auto kept = sparsify(v, mu_for_density(v, 0.3)).values;
  EXPECT_EQ(kept, (std::vector<double>{0, 0, 0, 0, 0, 0, 0, -8, 9, 10}));

  const std::vector<double> equal(8, -0.5);
  const double mu = mu_for_density(equal, 0.5);
  EXPECT_EQ(mu, 0.5);
  EXPECT_EQ(sparsify(equal, mu).values, equal);

  EXPECT_THROW(mu_for_density(v, 0.0), UsageError);
  EXPECT_THROW(mu_for_density(v, 1.1), UsageError);
}

TEST(MuForDensity, KeptFractionBracketsTarget) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t n = 5 + rng.index(500);
    const double s = rng.uniform(0.01, 1.0);
    const auto v = random_vector(n, seed + 1000);
    const auto kept = sparsify(v, mu_for_density(v, s)).values;
    const double frac =
        static_cast<double>(std::count_if(kept.begin(), kept.end(), [](double x) { return x != 0.0; })) / n;
    EXPECT_LE(frac, s + 1e-12);
    EXPECT_GE(frac, std::max(s - 1.0 / n, 0.0) - 1e-12);
  }
}

TEST(Bank, ShapeAndDeterminism) {
  const std::vector<std::size_t> lengths{100, 40};
  const std::vector<ClusterId> clusters{0, 3};
  const auto a = gen_bank(lengths, clusters, 0.25, 11);
  const auto b = gen_bank(lengths, clusters, 0.25, 11);
  EXPECT_EQ(a.size(), 4u);
  EXPECT_EQ(a.matrix(0, 0).rows(), 25);
  EXPECT_EQ(a.matrix(0, 0).cols(), 100);
  EXPECT_EQ(a.matrix(3, 1).rows(), 10);
  for (ClusterId c : clusters) {
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& x = a.matrix(c, k);
      const auto& y = b.matrix(c, k);
      EXPECT_EQ(std::memcmp(x.data(), y.data(), sizeof(double) * x.size()), 0);
    }
  }
  EXPECT_NE(a.matrix(0, 0), a.matrix(3, 0));
  EXPECT_NE(a.matrix(0, 0), gen_bank(lengths, clusters, 0.25, 12).matrix(0, 0));
  EXPECT_THROW(a.matrix(1, 0), ConfigError);
  EXPECT_THROW(gen_bank(lengths, clusters, 0.0, 1), UsageError);
  EXPECT_THROW(gen_bank(lengths, clusters, 1.0, 1), UsageError);
}

TEST(Bank, GaussianMoments) {
  const auto m = gaussian_matrix(100, 400, 99);
  const double n = static_cast<double>(m.size());
  const double mean = m.sum() / n;
  const double var = (m.array() - mean).square().sum() / (n - 1.0);
  EXPECT_LT(std::abs(mean), 4.0 / std::sqrt(100.0 * 400.0));
  EXPECT_NEAR(var, 1.0 / 100.0, 0.2 / 100.0);
}

TEST(Compress, ZeroIdentityAndShape) {
  const auto phi = gaussian_matrix(6, 15, 3);
  const SparseLayer zero{std::vector<double>(15, 0.0), 0.0};
  EXPECT_EQ(compress(zero, phi), std::vector<double>(6, 0.0));

  Matrix head = Matrix::Zero(4, 9);
  for (int i = 0; i < 4; ++i) head(i, i) = 1.0;
  const auto v = random_vector(9, 8);
  const auto y = compress({v, 0.0}, head);
  EXPECT_EQ(y, std::vector<double>(v.begin(), v.begin() + 4));

  EXPECT_THROW(compress({std::vector<double>(14, 1.0), 0.0}, phi), ShapeError);
}

TEST(Compress, MatchesNaiveProduct) {
  const auto phi = gaussian_matrix(8, 20, 21);
  const auto v = random_vector(20, 22);
  const auto y = compress({v, 0.0}, phi);
  for (int r = 0; r < 8; ++r) {
    double acc = 0.0;
    for (int c = 0; c < 20; ++c) acc += phi(r, c) * v[static_cast<std::size_t>(c)];
    EXPECT_NEAR(y[static_cast<std::size_t>(r)], acc, 1e-12);
  }
}

TEST(Compress, Linear) {
  const auto phi = gaussian_matrix(30, 120, 5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = random_vector(120, seed);
    const auto b = random_vector(120, seed + 50);
    std::vector<double> ab(120);
    for (std::size_t i = 0; i < 120; ++i) ab[i] = a[i] + b[i];
    const auto ya = compress({a, 0.0}, phi);
    const auto yb = compress({b, 0.0}, phi);
    std::vector<double> sum(30);
    for (std::size_t i = 0; i < 30; ++i) sum[i] = ya[i] + yb[i];
    EXPECT_LT(rel_diff(compress({ab, 0.0}, phi), sum), 1e-10);
  }
}

class CompressModel : public ::testing::Test {
 protected:
  std::vector<std::size_t> widths{6, 10, 8, 3};
  ModelParams model = make_mlp(widths, 17);
  std::vector<ClusterId> clusters{0, 1};
  CompressionBank bank = gen_bank(body_lengths(model), clusters, 0.25, 4);
};

TEST_F(CompressModel, SingleHiddenLayerGivesOneBlock) {
  const std::vector<std::size_t> w2{4, 5, 2};
  const auto m = make_mlp(w2, 1);
  const auto b = gen_bank(body_lengths(m), clusters, 0.25, 4);
  const auto cm = compress_model(m, b, 0, {Sparsification::Mode::density, 0.5});
  ASSERT_EQ(cm.layers.size(), 1u);
  EXPECT_EQ(cm.layers[0].size(), projected_length(25, 0.25));
  EXPECT_TRUE(cm.output_excluded);
}

TEST_F(CompressModel, HugeThresholdGivesZeros) {
  const auto cm = compress_model(model, bank, 1, {Sparsification::Mode::threshold, 1e9});
  for (const auto& l : cm.layers) EXPECT_EQ(l, std::vector<double>(l.size(), 0.0));
}

TEST_F(CompressModel, EqualsManualComposition) {
  const Sparsification sp{Sparsification::Mode::density, 0.2};
  const auto cm = compress_model(model, bank, 1, sp);
  ASSERT_EQ(cm.layers.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& values = model.layers[k].values;
    const auto manual = compress(sparsify(values, mu_for_density(values, 0.2)), bank.matrix(1, k));
    EXPECT_EQ(cm.layers[k], manual);
  }
}

TEST_F(CompressModel, OutputLayerUntouched) {
  const auto before = model.layers.back().values;
  (void)compress_model(model, bank, 0, {Sparsification::Mode::density, 0.1});
  ASSERT_EQ(model.layers.back().values.size(), before.size());
  EXPECT_EQ(std::memcmp(model.layers.back().values.data(), before.data(), before.size() * sizeof(double)), 0);
}

TEST_F(CompressModel, LcAggregateIsComponentwiseSum) {
  const Sparsification sp{Sparsification::Mode::density, 0.3};
  std::vector<CompressedModel> parts;
  for (std::uint64_t s = 0; s < 3; ++s) parts.push_back(compress_model(make_mlp(widths, 40 + s), bank, 0, sp));
  const auto sum = lc_aggregate(parts);
  for (std::size_t k = 0; k < sum.layers.size(); ++k) {
    for (std::size_t i = 0; i < sum.layers[k].size(); ++i) {
      EXPECT_DOUBLE_EQ(sum.layers[k][i], parts[0].layers[k][i] + parts[1].layers[k][i] + parts[2].layers[k][i]);
    }
  }
  auto wrong = parts;
  wrong[1].cluster = 1;
  EXPECT_THROW(lc_aggregate(wrong), ShapeError);
  EXPECT_THROW(lc_aggregate(std::vector<CompressedModel>{}), UsageError);
}

TEST(RecoveryAtRisk, Guard) {
  EXPECT_FALSE(recovery_at_risk(1, 0.05, 200, 60));
  EXPECT_TRUE(recovery_at_risk(4, 0.05, 200, 60));
}
