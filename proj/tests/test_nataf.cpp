#include <doctest.h>

#include <cmath>
#include <random>

#include "padc/error.hpp"
#include "padc/nataf.hpp"

using namespace padc;

namespace {

Eigen::MatrixXd sample_corr(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mean;
  const Eigen::MatrixXd cov = c.transpose() * c / double(x.rows() - 1);
  const Eigen::VectorXd d = cov.diagonal().cwiseSqrt().cwiseInverse();
  return d.asDiagonal() * cov * d.asDiagonal();
}

Eigen::MatrixXd draw_u(const CorrelationModel& cm, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const int n = static_cast<int>(cm.size());
  Eigen::MatrixXd u(count, n);
  Eigen::VectorXd eta(n);
  for (int s = 0; s < count; ++s) {
    for (int i = 0; i < n; ++i)
      eta[i] = nd(rng);
    u.row(s) = nataf_inverse(cm, eta).transpose();
  }
  return u;
}

} // namespace

TEST_CASE("identity correlation maps to identity") {
  const auto cm = build_correlation_model({Marginal::weibull(2, 1), Marginal::beta(2.06, 2.5, 0, 1000),
                                           Marginal::normal(3, 0.15)},
                                          Eigen::MatrixXd::Identity(3, 3));
  CHECK(cm.R.isApprox(Eigen::MatrixXd::Identity(3, 3)));
  CHECK(cm.repair_distance == 0.0);
  Eigen::VectorXd u(3);
  u << 0.8, 300, 3.1;
  const Eigen::VectorXd eta = nataf_forward(cm, u);
  CHECK(eta[0] == doctest::Approx(std_normal_inv_cdf(cm.marginals[0].cdf(0.8))).epsilon(1e-14));
  CHECK(eta[1] == doctest::Approx(std_normal_inv_cdf(cm.marginals[1].cdf(300))).epsilon(1e-14));
}

TEST_CASE("normal marginals keep rho") {
  Eigen::MatrixXd rho(3, 3);
  rho << 1, 0.5, -0.3, 0.5, 1, 0.2, -0.3, 0.2, 1;
  const auto cm = build_correlation_model({Marginal::normal(1, 2), Marginal::normal(0, 1), Marginal::normal(-4, 0.1)}, rho);
  CHECK((cm.R - rho).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((cm.L * cm.L.transpose() - cm.R).cwiseAbs().maxCoeff() <= 1e-10);
  Eigen::VectorXd mu(3);
  mu << 1, 0, -4;
  CHECK(nataf_forward(cm, mu).norm() <= 1e-14);
  CHECK((nataf_inverse(cm, Eigen::VectorXd::Zero(3)) - mu).norm() <= 1e-14);
}

TEST_CASE("weibull pair correlation against sampling") {
  Eigen::MatrixXd rho(2, 2);
  rho << 1, 0.5, 0.5, 1;
  const auto cm = build_correlation_model({Marginal::weibull(2, 1), Marginal::weibull(2, 1)}, rho);
  CHECK(cm.R(0, 1) > 0.5);
  CHECK(cm.R(0, 1) < 0.53);
  const Eigen::MatrixXd u = draw_u(cm, 1000000, 11);
  CHECK(std::abs(sample_corr(u)(0, 1) - 0.5) <= 0.005);
  CHECK(nataf_inverse(cm, Eigen::VectorXd::Zero(2))[0] == doctest::Approx(std::sqrt(std::log(2.0))).epsilon(1e-12));
}

TEST_CASE("pushforward reproduces marginals and rho") {
  Eigen::MatrixXd rho(4, 4);
  rho << 1, 0.5, 0.2, -0.3, 0.5, 1, 0.4, 0.0, 0.2, 0.4, 1, 0.1, -0.3, 0.0, 0.1, 1;
  const auto cm = build_correlation_model(
      {Marginal::weibull(2, 1), Marginal::normal(3, 0.15), Marginal::exponential(2.0), Marginal::uniform(-1, 2)}, rho);
  const int count = 1000000;
  const Eigen::MatrixXd u = draw_u(cm, count, 5);
  CHECK((sample_corr(u) - rho).cwiseAbs().maxCoeff() <= 0.01);
  for (int i = 0; i < 4; ++i) {
    CAPTURE(i);
    const Moments m = cm.marginals[i].moments();
    const double mean = u.col(i).mean();
    const Eigen::ArrayXd d = u.col(i).array() - m.mean;
    const double var = (d * d).mean();
    const double m4 = (d * d * d * d).mean();
    CHECK(std::abs(mean - m.mean) <= 3 * std::sqrt(m.variance / count));
    CHECK(std::abs(var - m.variance) <= 3 * std::sqrt((m4 - var * var) / count));
  }
}

TEST_CASE("beta inputs with strong correlation") {
  Eigen::MatrixXd rho(2, 2);
  rho << 1, 0.8, 0.8, 1;
  const auto cm = build_correlation_model(
      {Marginal::beta(2.06, 2.5, 0, 1000), Marginal::beta(2.06, 2.5, 0, 1000)}, rho);
  const Eigen::MatrixXd u = draw_u(cm, 100000, 3);
  CHECK(std::abs(sample_corr(u)(0, 1) - 0.8) <= 0.01);
}

TEST_CASE("forward and inverse round trip") {
  Eigen::MatrixXd rho = Eigen::MatrixXd::Constant(5, 5, 0.4);
  rho.diagonal().setOnes();
  const auto cm = build_correlation_model({Marginal::weibull(7.41, 2.06), Marginal::beta(2.06, 2.5, 0, 1000),
                                           Marginal::normal(3, 0.15), Marginal::gamma(2, 3),
                                           Marginal::uniform(0, 1)},
                                          rho);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  double worst = 0;
  for (int s = 0; s < 1000; ++s) {
    Eigen::VectorXd eta(5);
    for (int i = 0; i < 5; ++i)
      eta[i] = nd(rng);
    bool clamped = true;
    const Eigen::VectorXd back = nataf_forward(cm, nataf_inverse(cm, eta), &clamped);
    CHECK_FALSE(clamped);
    worst = std::max(worst, (back - eta).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("marginal stage is increasing") {
  const auto cm = build_correlation_model({Marginal::weibull(7.41, 2.06), Marginal::beta(0.7, 1.4, 0, 1)},
                                          Eigen::MatrixXd::Identity(2, 2));
  for (int i = 0; i < 2; ++i) {
    double prev = -INFINITY;
    for (int k = 1; k < 500; ++k) {
      Eigen::VectorXd u(2);
      u << cm.marginals[0].inv_cdf(0.5), cm.marginals[1].inv_cdf(0.5);
      u[i] = cm.marginals[i].inv_cdf(k / 500.0);
      const double e = nataf_forward(cm, u)[i];
      CHECK(e > prev);
      prev = e;
    }
  }
}

TEST_CASE("boundary values are clamped and flagged") {
  const auto cm = build_correlation_model({Marginal::beta(2, 2, 0, 1)}, Eigen::MatrixXd::Identity(1, 1));
  bool clamped = false;
  Eigen::VectorXd u(1);
  u << 0.0;
  const Eigen::VectorXd eta = nataf_forward(cm, u, &clamped);
  CHECK(clamped);
  CHECK(std::isfinite(eta[0]));
}

TEST_CASE("rejects malformed or infeasible correlation") {
  Eigen::MatrixXd bad(2, 2);
  bad << 1, 0.3, 0.2, 1;
  CHECK_THROWS_AS(build_correlation_model({Marginal::normal(0, 1), Marginal::normal(0, 1)}, bad), ValidationError);
  bad << 1, 1.2, 1.2, 1;
  CHECK_THROWS_AS(build_correlation_model({Marginal::normal(0, 1), Marginal::normal(0, 1)}, bad), ValidationError);
  Eigen::MatrixXd neg(2, 2);
  neg << 1, -0.99, -0.99, 1;
  CHECK_THROWS_AS(build_correlation_model({Marginal::exponential(1), Marginal::exponential(1)}, neg), ValidationError);
  CHECK_THROWS_AS(build_correlation_model({Marginal::normal(0, 1)}, Eigen::MatrixXd::Identity(2, 2)), ValidationError);
}

TEST_CASE("indefinite R is repaired") {
  Eigen::MatrixXd rho(3, 3);
  rho << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
  const auto cm = build_correlation_model({Marginal::normal(0, 1), Marginal::normal(0, 1), Marginal::normal(0, 1)}, rho);
  CHECK(cm.repair_distance > 0.0);
  CHECK(cm.R.diagonal().isOnes(1e-14));
  CHECK((cm.L * cm.L.transpose() - cm.R).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("iso transform") {
  CHECK(iso_transform(1.3, Marginal::normal(0, 1)) == 1.3);
  CHECK(std::abs(iso_transform(0.0, Marginal::uniform(-1, 1))) <= 1e-15);
  const auto b = Marginal::beta(2.06, 2.50, -1, 1);
  CHECK(iso_transform(0.0, b) == doctest::Approx(b.inv_cdf(0.5)).epsilon(1e-14));
  CHECK(iso_transform_inverse(iso_transform(0.7, b), b) == doctest::Approx(0.7).epsilon(1e-10));
  CHECK(standard_target(Marginal::beta(2.06, 2.5, 0, 1000)) == b);
  CHECK(standard_target(Marginal::weibull(7.41, 2.06)) == Marginal::weibull(7.41, 2.06));
  CHECK(standard_target(Marginal::weibull(7.41, 2.06), true) == Marginal::normal(0, 1));
  CHECK(standard_target(Marginal::gamma(3, 2)) == Marginal::gamma(3, 1));
}
