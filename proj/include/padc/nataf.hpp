#pragma once

// Normal-copula (Nataf) dependence model and the transforms between the
// physical inputs u, the independent standard normals eta and the
// standardized PCE variables xi.

#include <vector>

#include <Eigen/Core>

#include "padc/dist.hpp"

namespace padc {

struct CorrelationModel {
  std::vector<Marginal> marginals;
  Eigen::MatrixXd rho; ///< linear (Pearson) correlation of u
  Eigen::MatrixXd R;   ///< correlation of the underlying normals
  Eigen::MatrixXd L;   ///< lower Cholesky factor, R = L L^T
  double repair_distance = 0.0; ///< Frobenius norm of the PD repair (0 if none)

  std::size_t size() const { return marginals.size(); }
};

/// Linear correlation of (F_a^-1(Phi(z1)), F_b^-1(Phi(z2))) when (z1, z2) are
/// standard normal with correlation R (64 x 64 Gauss-Hermite).
double nataf_pair_correlation(const Marginal& a, const Marginal& b, double R);

/// Solves every pair for R_ij, repairs R if it is not positive definite and
/// factors it. Throws ValidationError for a malformed rho or an infeasible
/// pair, NumericalError if the repaired matrix still cannot be factored.
CorrelationModel build_correlation_model(std::vector<Marginal> marginals, const Eigen::MatrixXd& rho);

/// u -> eta. Probabilities are clamped to [1e-15, 1 - 1e-15]; `clamped` is
/// set when that happened.
Eigen::VectorXd nataf_forward(const CorrelationModel& cm, const Eigen::VectorXd& u, bool* clamped = nullptr);

/// eta -> u.
Eigen::VectorXd nataf_inverse(const CorrelationModel& cm, const Eigen::VectorXd& eta);

/// xi = G^-1(Phi(eta)) for the standardized target G.
double iso_transform(double eta, const Marginal& target);
/// eta = Phi^-1(G(xi)).
double iso_transform_inverse(double xi, const Marginal& target);

/// Standardized marginal used as PCE dimension for an input: Normal ->
/// N(0,1), Uniform -> U(-1,1), Beta -> Beta(a,b,-1,1), Gamma -> Gamma(k,1),
/// Exponential -> Exp(1), Weibull -> itself, Constant -> N(0,1). With
/// `hermite_only` every target is N(0,1).
Marginal standard_target(const Marginal& m, bool hermite_only = false);

} // namespace padc
