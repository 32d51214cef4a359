#pragma once

// Univariate orthonormal polynomial bases and Gauss rules.
//
// A basis is stored as the three-term recurrence of its orthonormal members
//
//   sqrt(b_{k+1}) phi_{k+1}(x) = (x - d_k) phi_k(x) - sqrt(b_k) phi_{k-1}(x),
//   phi_{-1} = 0, phi_0 = 1,
//
// where d_k and b_k are the centers and squared off-diagonals of the monic
// recurrence with respect to the marginal's density (b_0 = 1 for a
// probability weight).

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "padc/dist.hpp"

namespace padc {

struct PolyBasis1D {
  Marginal weight;
  int max_degree = 0;
  std::vector<double> recur_a; ///< d_0 .. d_{max_degree}
  std::vector<double> recur_b; ///< b_0 .. b_{max_degree}
  std::string family;          ///< "hermite", "legendre", "jacobi", "laguerre" or "stieltjes"
};

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  int order() const { return static_cast<int>(nodes.size()); }
};

/// True when `classical_basis` has a closed form for the family.
bool has_classical_basis(Family f);

/// Closed-form Hermite / Legendre / Jacobi / Laguerre recurrences, affinely
/// mapped to the marginal's parameters. Throws ValidationError for Weibull
/// and Constant.
PolyBasis1D classical_basis(const Marginal& m, int max_degree);

/// Discretized Stieltjes procedure on a composite Gauss-Legendre
/// discretization of the density (`quad_order` nodes per panel; 0 selects
/// 4 * max_degree). Throws NumericalError on a non-positive b_k or when the
/// orthonormality check still fails after two refinements.
PolyBasis1D stieltjes_basis(const Marginal& m, int max_degree, int quad_order = 0);

/// Classical basis where one exists, Stieltjes otherwise.
PolyBasis1D make_basis(const Marginal& m, int max_degree);

/// Orthonormal polynomial of degree k at x.
double eval_basis(const PolyBasis1D& b, int k, double x);

/// All degrees 0..out.size()-1 at x in one recurrence sweep.
void eval_basis_all(const PolyBasis1D& b, double x, std::span<double> out);

/// Golub-Welsch rule with n nodes (n <= max_degree + 1).
QuadratureRule gauss_rule(const PolyBasis1D& b, int n);

/// Gram matrix <phi_i, phi_j> for i, j <= degree under `rule`.
Eigen::MatrixXd gram_matrix(const PolyBasis1D& b, int degree, const QuadratureRule& rule);

/// Probability-weighted composite Gauss-Legendre discretization of m's
/// density on its support. Unbounded ends start at the 1e-14 quantiles and
/// are pushed outward until pdf * z^(2 * nodes_per_panel) falls below 1e-18,
/// so moments up to the discretization's exactness are not truncated.
/// Finite ends are geometrically graded.
QuadratureRule discretize_density(const Marginal& m, int nodes_per_panel, int panels);

nlohmann::json basis_to_json(const PolyBasis1D& b);
/// Restores a basis from `basis_to_json` output without recomputation.
PolyBasis1D basis_from_json(const nlohmann::json& j);

} // namespace padc
