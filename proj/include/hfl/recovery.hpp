#ifndef HFL_RECOVERY_HPP_
#define HFL_RECOVERY_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "hfl/codec.hpp"
#include "hfl/error.hpp"
#include "hfl/nn.hpp"

namespace hfl {

struct AdmmSettings {
  double penalty = 1.0;
  double tol_primal = 1e-6;
  double tol_dual = 1e-6;
  int max_iter = 5000;
};

struct RecoveryResult {
  std::vector<double> x_hat;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool converged = false;
  // ||phi x_hat - y||_2 / max(1, ||y||_2)
  double feasibility = 0.0;
};

// Basis pursuit  min ||x||_1  s.t.  phi x = y  by ADMM:
//   x <- projection of (z - u) onto {x : phi x = y}
//   z <- soft_threshold(x + u, 1 / penalty)
//   u <- u + x - z
// The projection uses phi^T (phi phi^T)^-1, factored once per matrix and reused
// for every right-hand side.
class BasisPursuitSolver {
 public:
  explicit BasisPursuitSolver(Matrix phi) : phi_(std::move(phi)) {
    if (phi_.rows() >= phi_.cols()) {
      throw UsageError("basis pursuit needs a wide matrix (g < G), got " + std::to_string(phi_.rows()) +
                       " x " + std::to_string(phi_.cols()));
    }
    const Matrix gram = phi_ * phi_.transpose();
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success) throw FactorizationError("phi phi^T is not positive definite");
    const Eigen::VectorXd diag = llt.matrixLLT().diagonal().cwiseAbs();
    if (diag.minCoeff() <= 1e-7 * diag.maxCoeff()) {
      throw FactorizationError("phi is rank deficient (Cholesky pivot ratio " +
                               std::to_string(diag.minCoeff() / diag.maxCoeff()) + ")");
    }
    pinv_ = llt.solve(phi_).transpose();
  }

  const Matrix& phi() const { return phi_; }

  RecoveryResult solve(std::span<const double> y_in, const AdmmSettings& settings = {}) const {
    const Eigen::Index g = phi_.rows();
    const Eigen::Index n = phi_.cols();
    if (static_cast<Eigen::Index>(y_in.size()) != g) {
      throw ShapeError("basis pursuit: measurement length " + std::to_string(y_in.size()) +
                       " does not match " + std::to_string(g) + " rows");
    }
    const Eigen::Map<const Eigen::VectorXd> y_raw(y_in.data(), g);

    // The minimiser scales linearly with y, so solve at unit scale (largest
    // entry of the least-norm solution) and rescale afterwards.
    const Eigen::VectorXd least_norm = pinv_ * y_raw;
    const double scale = least_norm.cwiseAbs().maxCoeff();
    RecoveryResult result;
    if (!(scale > 0.0)) {
      result.x_hat.assign(static_cast<std::size_t>(n), 0.0);
      result.iterations = 1;
      result.converged = true;
      return result;
    }
    const Eigen::VectorXd offset = least_norm / scale;  // pinv * (y / scale)
    const double kappa = 1.0 / settings.penalty;
    const double sqrt_n = std::sqrt(static_cast<double>(n));

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd z_old(n);
    Eigen::VectorXd v(n);
    Eigen::VectorXd best_x = x;
    double best_score = std::numeric_limits<double>::infinity();
    double best_r = 0.0;
    double best_s = 0.0;

    for (int it = 1; it <= settings.max_iter; ++it) {
      v = z - u;
      x = v - pinv_ * (phi_ * v) + offset;
      z_old = z;
      z = (x + u).unaryExpr([kappa](double a) {
        return a > kappa ? a - kappa : (a < -kappa ? a + kappa : 0.0);
      });
      u += x - z;

      const double r = (x - z).norm();
      const double s = settings.penalty * (z - z_old).norm();
      const double eps_pri = settings.tol_primal * (sqrt_n + std::max(x.norm(), z.norm()));
      const double eps_dual = settings.tol_dual * (sqrt_n + settings.penalty * u.norm());
      const double score = std::max(r / eps_pri, s / eps_dual);
      if (score < best_score) {
        best_score = score;
        best_x = x;
        best_r = r;
        best_s = s;
      }
      result.iterations = it;
      if (r <= eps_pri && s <= eps_dual) {
        result.converged = true;
        break;
      }
    }

    best_x *= scale;
    result.primal_residual = best_r * scale;
    result.dual_residual = best_s * scale;
    result.x_hat.assign(best_x.data(), best_x.data() + n);
    result.feasibility = (phi_ * best_x - y_raw).norm() / std::max(1.0, y_raw.norm());
    return result;
  }

 private:
  Matrix phi_;
  Matrix pinv_;  // phi^T (phi phi^T)^-1
};

inline RecoveryResult basis_pursuit(const Matrix& phi, std::span<const double> y,
                                    const AdmmSettings& settings = {}) {
  return BasisPursuitSolver(phi).solve(y, settings);
}

// Factorisations keyed by (cluster, layer); built on first use for the bank
// they were created from. Call reset() whenever the bank is regenerated.
class RecoveryCache {
 public:
  const BasisPursuitSolver& solver(const CompressionBank& bank, ClusterId cluster, std::size_t layer) {
    auto key = std::make_pair(cluster, layer);
    auto it = solvers_.find(key);
    if (it == solvers_.end()) {
      it = solvers_.emplace(key, std::make_unique<BasisPursuitSolver>(bank.matrix(cluster, layer))).first;
    }
    return *it->second;
  }
  void reset() { solvers_.clear(); }

 private:
  std::map<std::pair<ClusterId, std::size_t>, std::unique_ptr<BasisPursuitSolver>> solvers_;
};

struct ClusterRecovery {
  std::vector<LayerBlock> body;       // non-output layers, reshaped
  std::vector<RecoveryResult> layers;  // x_hat cleared; diagnostics only

  bool all_converged() const {
    return std::all_of(layers.begin(), layers.end(), [](const auto& r) { return r.converged; });
  }
  double max_feasibility() const {
    double m = 0.0;
    for (const auto& r : layers) m = std::max(m, r.feasibility);
    return m;
  }
};

// Solves one basis-pursuit problem per layer of an LC-aggregated model. With
// normalize the recovered sum is divided by the member count.
inline ClusterRecovery recover_cluster(const CompressedModel& aggregated, const CompressionBank& bank,
                                       RecoveryCache& cache, std::size_t member_count, bool normalize,
                                       const AdmmSettings& settings = {}) {
  if (member_count == 0) throw UsageError("recover_cluster: member_count must be positive");
  ClusterRecovery out;
  for (std::size_t k = 0; k < aggregated.layers.size(); ++k) {
    const auto& solver = cache.solver(bank, aggregated.cluster, k);
    if (static_cast<std::size_t>(solver.phi().rows()) != aggregated.layers[k].size()) {
      throw ShapeError("recover_cluster: layer " + std::to_string(k) + " length does not match bank");
    }
    auto res = solver.solve(aggregated.layers[k], settings);
    const auto& shape = aggregated.shapes[k];
    if (res.x_hat.size() != shape.param_count()) throw ShapeError("recover_cluster: layer shape mismatch");
    LayerBlock block{shape.outputs, shape.inputs, shape.role, std::move(res.x_hat)};
    if (normalize) {
      const double inv = 1.0 / static_cast<double>(member_count);
      for (auto& v : block.values) v *= inv;
    }
    res.x_hat.clear();
    out.body.push_back(std::move(block));
    out.layers.push_back(std::move(res));
  }
  return out;
}

// Error of an estimate against the truth, normalised by max(1, ||truth||).
inline double recovery_error(std::span<const double> estimate, std::span<const double> truth) {
  double diff = 0.0;
  double norm = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    diff += (estimate[i] - truth[i]) * (estimate[i] - truth[i]);
    norm += truth[i] * truth[i];
  }
  return std::sqrt(diff) / std::max(1.0, std::sqrt(norm));
}

struct EquivalenceReport {
  double per_model_error = 0.0;  // sum of individual recoveries vs true sum
  double aggregate_error = 0.0;  // one recovery of the summed projections vs true sum
  double path_gap = 0.0;         // between the two estimates
  bool equivalent = false;
};

// Compares recovering every model separately and summing against recovering
// the summed projection once.
inline EquivalenceReport equivalence_check(std::span<const std::vector<double>> models, const Matrix& phi,
                                        double tol, const AdmmSettings& settings = {}) {
  if (models.size() < 2) throw UsageError("equivalence_check: need at least two models");
  const BasisPursuitSolver solver(phi);
  const auto n = static_cast<std::size_t>(phi.cols());
  std::vector<double> truth(n, 0.0);
  std::vector<double> summed_individual(n, 0.0);
  Eigen::VectorXd summed_projection = Eigen::VectorXd::Zero(phi.rows());
  for (const auto& m : models) {
    if (m.size() != n) throw ShapeError("equivalence_check: model length mismatch");
    const Eigen::Map<const Eigen::VectorXd> x(m.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd y = phi * x;
    summed_projection += y;
    const auto single = solver.solve(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), settings);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] += m[i];
      summed_individual[i] += single.x_hat[i];
    }
  }
  const auto once = solver.solve(
      std::span<const double>(summed_projection.data(), static_cast<std::size_t>(summed_projection.size())),
      settings);
  EquivalenceReport rep;
  rep.per_model_error = recovery_error(summed_individual, truth);
  rep.aggregate_error = recovery_error(once.x_hat, truth);
  rep.path_gap = recovery_error(once.x_hat, summed_individual);
  rep.equivalent = rep.per_model_error <= tol && rep.aggregate_error <= tol && rep.path_gap <= tol;
  return rep;
}

}  // namespace hfl

#endif  // HFL_RECOVERY_HPP_
