#include "padc/orthopoly.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

#include "padc/error.hpp"

namespace padc {

namespace {

struct AffineMap {
  double center;
  double half_width;
};

PolyBasis1D make_empty(const Marginal& m, int max_degree, std::string family) {
  if (max_degree < 0)
    throw std::invalid_argument("basis: max_degree must be >= 0");
  PolyBasis1D b{m, max_degree, {}, {}, std::move(family)};
  b.recur_a.resize(static_cast<std::size_t>(max_degree) + 1);
  b.recur_b.resize(static_cast<std::size_t>(max_degree) + 1);
  return b;
}

// Monic Jacobi recurrence for the weight (1-t)^a (1+t)^b on [-1, 1],
// normalized to a probability measure.
void jacobi_recurrence(double a, double b, std::vector<double>& d, std::vector<double>& beta) {
  const std::size_t n = d.size();
  const double s = a + b;
  d[0] = (b - a) / (s + 2.0);
  beta[0] = 1.0;
  for (std::size_t k = 1; k < n; ++k) {
    const double kk = static_cast<double>(k);
    const double t = 2.0 * kk + s;
    d[k] = (b * b - a * a) / (t * (t + 2.0));
    if (k == 1)
      beta[k] = 4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + s) * (2.0 + s) * (3.0 + s));
    else
      beta[k] = 4.0 * kk * (kk + a) * (kk + b) * (kk + s) / (t * t * (t + 1.0) * (t - 1.0));
  }
}

void apply_affine(PolyBasis1D& basis, AffineMap map) {
  for (double& d : basis.recur_a)
    d = map.center + map.half_width * d;
  for (std::size_t k = 1; k < basis.recur_b.size(); ++k)
    basis.recur_b[k] *= map.half_width * map.half_width;
}

double gram_defect(const PolyBasis1D& b, const QuadratureRule& rule) {
  const Eigen::MatrixXd g = gram_matrix(b, b.max_degree, rule);
  return (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
}

} // namespace

bool has_classical_basis(Family f) {
  switch (f) {
  case Family::Normal:
  case Family::Uniform:
  case Family::Beta:
  case Family::Exponential:
  case Family::Gamma:
    return true;
  default:
    return false;
  }
}

PolyBasis1D classical_basis(const Marginal& m, int max_degree) {
  switch (m.family()) {
  case Family::Normal: {
    const auto& p = std::get<NormalParams>(m.params());
    auto b = make_empty(m, max_degree, "hermite");
    for (int k = 0; k <= max_degree; ++k) {
      b.recur_a[k] = 0.0;
      b.recur_b[k] = k == 0 ? 1.0 : static_cast<double>(k);
    }
    apply_affine(b, {p.mean, p.stdev});
    return b;
  }
  case Family::Uniform: {
    const auto& p = std::get<UniformParams>(m.params());
    auto b = make_empty(m, max_degree, "legendre");
    jacobi_recurrence(0.0, 0.0, b.recur_a, b.recur_b);
    apply_affine(b, {0.5 * (p.a + p.b), 0.5 * (p.b - p.a)});
    return b;
  }
  case Family::Beta: {
    // Density (x-lo)^(alpha-1) (hi-x)^(beta-1): the (1-t) exponent pairs with beta.
    const auto& p = std::get<BetaParams>(m.params());
    auto b = make_empty(m, max_degree, "jacobi");
    jacobi_recurrence(p.beta - 1.0, p.alpha - 1.0, b.recur_a, b.recur_b);
    apply_affine(b, {0.5 * (p.lo + p.hi), 0.5 * (p.hi - p.lo)});
    return b;
  }
  case Family::Exponential:
  case Family::Gamma: {
    double shape = 1.0;
    double scale = 1.0;
    if (m.family() == Family::Gamma) {
      const auto& p = std::get<GammaParams>(m.params());
      shape = p.shape;
      scale = p.scale;
    } else {
      scale = 1.0 / std::get<ExponentialParams>(m.params()).rate;
    }
    // Generalized Laguerre with parameter shape - 1, then x -> scale * x.
    auto b = make_empty(m, max_degree, "laguerre");
    for (int k = 0; k <= max_degree; ++k) {
      const double kk = k;
      b.recur_a[k] = scale * (2.0 * kk + shape);
      b.recur_b[k] = k == 0 ? 1.0 : scale * scale * kk * (kk + shape - 1.0);
    }
    return b;
  }
  default:
    throw ValidationError("classical_basis: no classical polynomial family for " + m.describe() +
                          "; use stieltjes_basis");
  }
}

QuadratureRule discretize_density(const Marginal& m, int nodes_per_panel, int panels) {
  if (m.family() == Family::Constant)
    throw ValidationError("discretize_density: point mass has no density");
  if (nodes_per_panel < 1 || panels < 1)
    throw std::invalid_argument("discretize_density: need at least one node and one panel");

  const Support sup = m.support();
  const Moments mom = m.moments();
  const double sd = std::sqrt(mom.variance);
  const bool lo_finite = std::isfinite(sup.lo);
  const bool hi_finite = std::isfinite(sup.hi);
  double lo = lo_finite ? sup.lo : m.inv_cdf(1e-14);
  double hi = hi_finite ? sup.hi : m.inv_cdf(1.0 - 1e-14);

  // Push unbounded ends out until the polynomial-weighted tail is negligible.
  const double step = 0.25 * (hi - lo);
  const double power = 2.0 * nodes_per_panel;
  auto tail = [&](double x) {
    const double z = std::max(1.0, std::abs(x - mom.mean) / sd);
    return m.pdf(x) * sd * std::pow(z, power);
  };
  for (int i = 0; i < 40 && !lo_finite && tail(lo) > 1e-18; ++i)
    lo -= step;
  for (int i = 0; i < 40 && !hi_finite && tail(hi) > 1e-18; ++i)
    hi += step;

  std::vector<std::pair<double, double>> edges;
  const double h = (hi - lo) / panels;
  constexpr int grading_levels = 12;
  constexpr double grading_ratio = 0.2;
  for (int p = 0; p < panels; ++p) {
    const double a = lo + p * h;
    const double b = (p + 1 == panels) ? hi : lo + (p + 1) * h;
    const bool grade_lo = p == 0 && lo_finite;
    const bool grade_hi = p + 1 == panels && hi_finite;
    if (!grade_lo && !grade_hi) {
      edges.emplace_back(a, b);
      continue;
    }
    // Geometric refinement toward a finite support end, where the density may
    // be singular or only Hoelder continuous.
    std::vector<double> cuts{a, b};
    double w = b - a;
    for (int l = 0; l < grading_levels; ++l) {
      w *= grading_ratio;
      if (grade_lo)
        cuts.push_back(a + w);
      if (grade_hi)
        cuts.push_back(b - w);
    }
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
      edges.emplace_back(cuts[i], cuts[i + 1]);
  }

  const QuadratureRule gl = gauss_rule(classical_basis(Marginal::uniform(-1.0, 1.0), nodes_per_panel),
                                       nodes_per_panel);
  QuadratureRule out;
  out.nodes.reserve(edges.size() * gl.nodes.size());
  out.weights.reserve(out.nodes.capacity());
  double total = 0.0;
  for (const auto& [a, b] : edges) {
    const double c = 0.5 * (a + b);
    const double r = 0.5 * (b - a);
    for (int i = 0; i < gl.order(); ++i) {
      const double x = c + r * gl.nodes[i];
      // gl weights are probability weights on [-1, 1], so dx = 2 r w.
      const double w = 2.0 * r * gl.weights[i] * m.pdf(x);
      out.nodes.push_back(x);
      out.weights.push_back(w);
      total += w;
    }
  }
  if (!(total > 0.0))
    throw NumericalError("discretize_density: zero discrete mass for " + m.describe());
  for (double& w : out.weights)
    w /= total;
  return out;
}

PolyBasis1D stieltjes_basis(const Marginal& m, int max_degree, int quad_order) {
  if (quad_order <= 0)
    quad_order = std::max(4 * max_degree, 8);
  if (quad_order < 2 * max_degree + 1)
    throw std::invalid_argument("stieltjes_basis: quad_order must be >= 2 * max_degree + 1");
  constexpr int panels = 48;
  constexpr int retries = 2;

  for (int attempt = 0;; ++attempt) {
    const QuadratureRule rule = discretize_density(m, quad_order, panels);
    const std::size_t n = rule.nodes.size();
    auto b = make_empty(m, max_degree, "stieltjes");

    // Normalized Stieltjes sweep: q holds phi_k at the nodes.
    std::vector<double> q(n, 1.0), q_prev(n, 0.0), r(n);
    b.recur_b[0] = 1.0;
    for (int k = 0; k <= max_degree; ++k) {
      double num = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        num += rule.weights[j] * rule.nodes[j] * q[j] * q[j];
      b.recur_a[k] = num;
      if (k == max_degree)
        break;
      const double sb = std::sqrt(b.recur_b[k]);
      double norm2 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        r[j] = (rule.nodes[j] - num) * q[j] - (k > 0 ? sb * q_prev[j] : 0.0);
        norm2 += rule.weights[j] * r[j] * r[j];
      }
      if (!(norm2 > 0.0))
        throw NumericalError("stieltjes_basis: non-positive b_" + std::to_string(k + 1) + " for " +
                             m.describe());
      b.recur_b[k + 1] = norm2;
      const double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t j = 0; j < n; ++j) {
        q_prev[j] = q[j];
        q[j] = r[j] * inv;
      }
    }

    const QuadratureRule check = discretize_density(m, 2 * quad_order, 2 * panels);
    if (gram_defect(b, check) <= 1e-8)
      return b;
    if (attempt == retries)
      throw NumericalError("stieltjes_basis: orthonormality check failed for " + m.describe());
    quad_order *= 2;
  }
}

PolyBasis1D make_basis(const Marginal& m, int max_degree) {
  return has_classical_basis(m.family()) ? classical_basis(m, max_degree) : stieltjes_basis(m, max_degree);
}

double eval_basis(const PolyBasis1D& b, int k, double x) {
  if (k < 0 || k > b.max_degree)
    throw std::out_of_range("eval_basis: degree " + std::to_string(k) + " outside [0, " +
                            std::to_string(b.max_degree) + "]");
  double prev = 0.0;
  double cur = 1.0;
  for (int j = 0; j < k; ++j) {
    const double next = ((x - b.recur_a[j]) * cur - std::sqrt(b.recur_b[j]) * (j > 0 ? prev : 0.0)) /
                        std::sqrt(b.recur_b[j + 1]);
    prev = cur;
    cur = next;
  }
  return cur;
}

void eval_basis_all(const PolyBasis1D& b, double x, std::span<double> out) {
  if (out.empty())
    return;
  if (static_cast<int>(out.size()) > b.max_degree + 1)
    throw std::out_of_range("eval_basis_all: requested degree exceeds basis");
  out[0] = 1.0;
  if (out.size() > 1)
    out[1] = (x - b.recur_a[0]) / std::sqrt(b.recur_b[1]);
  for (std::size_t j = 1; j + 1 < out.size(); ++j)
    out[j + 1] = ((x - b.recur_a[j]) * out[j] - std::sqrt(b.recur_b[j]) * out[j - 1]) / std::sqrt(b.recur_b[j + 1]);
}

QuadratureRule gauss_rule(const PolyBasis1D& b, int n) {
  if (n < 1 || n > b.max_degree + 1)
    throw std::out_of_range("gauss_rule: node count must lie in [1, max_degree + 1]");
  Eigen::VectorXd diag(n);
  Eigen::VectorXd sub(std::max(n - 1, 0));
  for (int k = 0; k < n; ++k)
    diag[k] = b.recur_a[k];
  for (int k = 1; k < n; ++k)
    sub[k - 1] = std::sqrt(b.recur_b[k]);

  QuadratureRule rule;
  if (n == 1) {
    rule.nodes = {diag[0]};
    rule.weights = {b.recur_b[0]};
    return rule;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success)
    throw NumericalError("gauss_rule: eigen-decomposition of the Jacobi matrix failed");
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = es.eigenvalues()[i];
    const double v0 = es.eigenvectors()(0, i);
    rule.weights[i] = b.recur_b[0] * v0 * v0;
  }
  return rule;
}

Eigen::MatrixXd gram_matrix(const PolyBasis1D& b, int degree, const QuadratureRule& rule) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(degree + 1, degree + 1);
  std::vector<double> phi(static_cast<std::size_t>(degree) + 1);
  for (int i = 0; i < rule.order(); ++i) {
    eval_basis_all(b, rule.nodes[i], phi);
    const Eigen::Map<const Eigen::VectorXd> v(phi.data(), degree + 1);
    g.noalias() += rule.weights[i] * v * v.transpose();
  }
  return g;
}

nlohmann::json basis_to_json(const PolyBasis1D& b) {
  return {{"family", b.family},
          {"weight", marginal_to_json(b.weight)},
          {"max_degree", b.max_degree},
          {"recur_a", b.recur_a},
          {"recur_b", b.recur_b}};
}

PolyBasis1D basis_from_json(const nlohmann::json& j) {
  try {
    PolyBasis1D b{marginal_from_json(j.at("weight")), j.at("max_degree").get<int>(),
                  j.at("recur_a").get<std::vector<double>>(), j.at("recur_b").get<std::vector<double>>(),
                  j.at("family").get<std::string>()};
    const auto n = static_cast<std::size_t>(b.max_degree) + 1;
    if (b.max_degree < 0 || b.recur_a.size() != n || b.recur_b.size() != n)
      throw ValidationError("basis: recurrence length does not match max_degree");
    for (double v : b.recur_b)
      if (!(v > 0.0))
        throw ValidationError("basis: recurrence b_k must be positive");
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("basis: ") + e.what());
  }
}

} // namespace padc
