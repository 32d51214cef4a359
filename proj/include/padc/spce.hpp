#pragma once

// Sparse polynomial chaos: multi-index sets, design matrices, LAR selection,
// least-squares refit and the corrected leave-one-out error.

#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "padc/orthopoly.hpp"

namespace padc {

using MultiIndex = std::vector<int>;

struct SpceOptions {
  int p0 = 1;
  int pmax = 8;
  double q = 0.75;
  int max_interaction = 2;
  double eps_target = 1e-6;
};

nlohmann::json spce_options_to_json(const SpceOptions& o);
/// Reads the keys present in `j` over the defaults; unknown keys are rejected.
SpceOptions spce_options_from_json(const nlohmann::json& j);

struct PceModel {
  int dim = 0;
  std::vector<PolyBasis1D> bases;
  std::vector<MultiIndex> active; ///< active[0] is the zero index
  std::vector<double> coeffs;
  int degree = 0;
  double q = 1.0;
  double err_loo = 0.0;
  double err_cloo = 0.0;
  int ed_size = 0;
};

struct EdSet {
  Eigen::MatrixXd xi; ///< M x n standardized samples
  Eigen::VectorXd y;  ///< M responses
  /// Unbiased sample variance of y (0 for fewer than two samples).
  double sigma_y2() const;
};

struct LooErrors {
  double loo = 0.0;
  double cloo = 0.0;
};

/// Multi-indices with q-norm <= p and at most r nonzero entries, ordered by
/// total degree, then by largest entry, then reverse lexicographically (so
/// (1,0,0) precedes (0,1,0)).
std::vector<MultiIndex> build_index_set(int n, int p, double q, int r);

double q_norm(const MultiIndex& a, double q);

/// H(l, k) = prod_i phi_{i, a_ki}(xi(l, i)). Throws std::out_of_range when an
/// index exceeds a basis degree.
Eigen::MatrixXd assemble_design_matrix(const std::vector<PolyBasis1D>& bases, const std::vector<MultiIndex>& indices,
                                       const Eigen::MatrixXd& xi);

/// Least-squares coefficients by Householder QR. Throws ValidationError when
/// M < P and NumericalError when cond(H) > 1e12.
Eigen::VectorXd ols_fit(const Eigen::MatrixXd& H, const Eigen::VectorXd& y);

/// Column entry order of least angle regression on standardized columns and
/// centered y. Constant and collinear columns never enter. Empty for
/// constant y.
std::vector<int> lar_path(const Eigen::MatrixXd& H, const Eigen::VectorXd& y);

/// Leave-one-out error from the hat-matrix diagonal, normalized by the
/// unbiased variance of y, and its small-sample corrected value. Throws
/// ValidationError for M <= P or constant y, NumericalError for a leverage of 1.
LooErrors corrected_loo(const Eigen::MatrixXd& H, const Eigen::VectorXd& coeffs, const Eigen::VectorXd& y);

/// Degree-adaptive hybrid LAR/OLS fit. Bases must reach degree o.pmax.
PceModel adaptive_fit(const EdSet& ed, const std::vector<PolyBasis1D>& bases, const SpceOptions& o);

double pce_eval(const PceModel& model, const Eigen::VectorXd& xi);
/// Row-wise evaluation of an M x n sample matrix.
Eigen::VectorXd pce_eval_rows(const PceModel& model, const Eigen::MatrixXd& xi);

Moments pce_moments(const PceModel& model);

nlohmann::json pce_to_json(const PceModel& model);
PceModel pce_from_json(const nlohmann::json& j);

} // namespace padc
