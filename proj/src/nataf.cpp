#include "padc/nataf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/tools/roots.hpp>

#include "padc/error.hpp"
#include "padc/orthopoly.hpp"

namespace padc {

namespace {

constexpr double kClamp = 1e-15;
constexpr int kHermiteNodes = 64;

const QuadratureRule& hermite_rule() {
  static const QuadratureRule rule =
      gauss_rule(classical_basis(Marginal::normal(0.0, 1.0), kHermiteNodes - 1), kHermiteNodes);
  return rule;
}

double clamp_prob(double w, bool* flag) {
  if (w < kClamp || w > 1.0 - kClamp) {
    if (flag)
      *flag = true;
    return std::clamp(w, kClamp, 1.0 - kClamp);
  }
  return w;
}

double to_physical(const Marginal& m, double z) {
  if (m.family() == Family::Normal) {
    const auto& p = std::get<NormalParams>(m.params());
    return p.mean + p.stdev * z;
  }
  return m.inv_cdf(clamp_prob(std_normal_cdf(z), nullptr));
}

} // namespace

double nataf_pair_correlation(const Marginal& a, const Marginal& b, double R) {
  const QuadratureRule& gh = hermite_rule();
  const int n = gh.order();
  const double s = std::sqrt(std::max(0.0, 1.0 - R * R));

  // Moments under the same rule, so R = 0 maps to exactly zero.
  double ma = 0, mb = 0, va = 0, vb = 0;
  std::vector<double> ga(n);
  for (int i = 0; i < n; ++i) {
    ga[i] = to_physical(a, gh.nodes[i]);
    const double gb = to_physical(b, gh.nodes[i]);
    ma += gh.weights[i] * ga[i];
    mb += gh.weights[i] * gb;
    va += gh.weights[i] * ga[i] * ga[i];
    vb += gh.weights[i] * gb * gb;
  }
  va -= ma * ma;
  vb -= mb * mb;
  if (!(va > 0.0) || !(vb > 0.0))
    return 0.0;

  double cov = 0.0;
  for (int i = 0; i < n; ++i) {
    double inner = 0.0;
    for (int j = 0; j < n; ++j)
      inner += gh.weights[j] * (to_physical(b, R * gh.nodes[i] + s * gh.nodes[j]) - mb);
    cov += gh.weights[i] * (ga[i] - ma) * inner;
  }
  return cov / std::sqrt(va * vb);
}

CorrelationModel build_correlation_model(std::vector<Marginal> marginals, const Eigen::MatrixXd& rho) {
  const Eigen::Index n = static_cast<Eigen::Index>(marginals.size());
  if (rho.rows() != n || rho.cols() != n)
    throw ValidationError("correlation matrix is " + std::to_string(rho.rows()) + "x" +
                          std::to_string(rho.cols()) + ", expected " + std::to_string(n) + "x" +
                          std::to_string(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(rho(i, i) - 1.0) > 1e-12)
      throw ValidationError("correlation matrix must have a unit diagonal");
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!std::isfinite(rho(i, j)) || std::abs(rho(i, j)) > 1.0)
        throw ValidationError("correlation entries must lie in [-1, 1]");
      if (std::abs(rho(i, j) - rho(j, i)) > 1e-12)
        throw ValidationError("correlation matrix must be symmetric");
    }
  }

  CorrelationModel cm;
  cm.marginals = std::move(marginals);
  cm.rho = rho;
  cm.R = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Marginal& a = cm.marginals[i];
      const Marginal& b = cm.marginals[j];
      const double target = rho(i, j);
      double r = 0.0;
      if (target == 0.0 || a.family() == Family::Constant || b.family() == Family::Constant) {
        r = 0.0;
      } else if (a.family() == Family::Normal && b.family() == Family::Normal) {
        r = target;
      } else {
        auto f = [&](double x) { return nataf_pair_correlation(a, b, x) - target; };
        const double lo = -0.999, hi = 0.999;
        const double flo = f(lo), fhi = f(hi);
        if (flo > 0.0 || fhi < 0.0)
          throw ValidationError("correlation " + std::to_string(target) + " between inputs " +
                                std::to_string(i) + " and " + std::to_string(j) +
                                " is not attainable for " + a.describe() + " and " + b.describe());
        boost::uintmax_t iters = 100;
        const auto root = boost::math::tools::toms748_solve(
            f, lo, hi, flo, fhi, boost::math::tools::eps_tolerance<double>(45), iters);
        r = 0.5 * (root.first + root.second);
      }
      cm.R(i, j) = cm.R(j, i) = r;
    }
  }

  Eigen::LLT<Eigen::MatrixXd> llt(cm.R);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cm.R);
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(1e-10);
    Eigen::MatrixXd fixed = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    const Eigen::VectorXd d = fixed.diagonal().cwiseSqrt().cwiseInverse();
    fixed = d.asDiagonal() * fixed * d.asDiagonal();
    fixed = 0.5 * (fixed + fixed.transpose());
    fixed.diagonal().setOnes();
    cm.repair_distance = (fixed - cm.R).norm();
    cm.R = fixed;
    llt.compute(cm.R);
    if (llt.info() != Eigen::Success)
      throw NumericalError("copula correlation matrix is not positive definite after repair");
  }
  cm.L = llt.matrixL();
  return cm;
}

Eigen::VectorXd nataf_forward(const CorrelationModel& cm, const Eigen::VectorXd& u, bool* clamped) {
  const Eigen::Index n = static_cast<Eigen::Index>(cm.size());
  if (u.size() != n)
    throw std::invalid_argument("nataf_forward: dimension mismatch");
  if (clamped)
    *clamped = false;
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Marginal& m = cm.marginals[i];
    if (m.family() == Family::Constant) {
      z[i] = 0.0;
    } else if (m.family() == Family::Normal) {
      const auto& p = std::get<NormalParams>(m.params());
      z[i] = (u[i] - p.mean) / p.stdev;
    } else {
      z[i] = std_normal_inv_cdf(clamp_prob(m.cdf(u[i]), clamped));
    }
  }
  return cm.L.triangularView<Eigen::Lower>().solve(z);
}

Eigen::VectorXd nataf_inverse(const CorrelationModel& cm, const Eigen::VectorXd& eta) {
  const Eigen::Index n = static_cast<Eigen::Index>(cm.size());
  if (eta.size() != n)
    throw std::invalid_argument("nataf_inverse: dimension mismatch");
  const Eigen::VectorXd z = cm.L.triangularView<Eigen::Lower>() * eta;
  Eigen::VectorXd u(n);
  for (Eigen::Index i = 0; i < n; ++i)
    u[i] = to_physical(cm.marginals[i], z[i]);
  return u;
}

double iso_transform(double eta, const Marginal& target) {
  return to_physical(target, eta);
}

double iso_transform_inverse(double xi, const Marginal& target) {
  if (target.family() == Family::Normal) {
    const auto& p = std::get<NormalParams>(target.params());
    return (xi - p.mean) / p.stdev;
  }
  return std_normal_inv_cdf(clamp_prob(target.cdf(xi), nullptr));
}

Marginal standard_target(const Marginal& m, bool hermite_only) {
  if (hermite_only)
    return Marginal::normal(0.0, 1.0);
  switch (m.family()) {
  case Family::Uniform:
    return Marginal::uniform(-1.0, 1.0);
  case Family::Beta: {
    const auto& p = std::get<BetaParams>(m.params());
    return Marginal::beta(p.alpha, p.beta, -1.0, 1.0);
  }
  case Family::Gamma:
    return Marginal::gamma(std::get<GammaParams>(m.params()).shape, 1.0);
  case Family::Exponential:
    return Marginal::exponential(1.0);
  case Family::Weibull:
    return m;
  default:
    return Marginal::normal(0.0, 1.0);
  }
}

} // namespace padc
