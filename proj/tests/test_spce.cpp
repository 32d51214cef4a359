#include <doctest.h>
#include <numeric>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/QR>

#include "padc/error.hpp"
#include "padc/nataf.hpp"
#include "padc/spce.hpp"

using namespace padc;

namespace {

std::vector<PolyBasis1D> hermite_bases(int n, int p) {
  return std::vector<PolyBasis1D>(n, classical_basis(Marginal::normal(0, 1), p));
}

Eigen::MatrixXd normal_samples(int m, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd x(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      x(i, j) = nd(rng);
  return x;
}

// Literal leave-one-out: refit M times without sample i.
double brute_loo(const Eigen::MatrixXd& H, const Eigen::VectorXd& y) {
  const int m = static_cast<int>(H.rows());
  double acc = 0;
  for (int i = 0; i < m; ++i) {
    Eigen::MatrixXd Hi(m - 1, H.cols());
    Eigen::VectorXd yi(m - 1);
    for (int r = 0, t = 0; r < m; ++r) {
      if (r == i)
        continue;
      Hi.row(t) = H.row(r);
      yi[t++] = y[r];
    }
    const Eigen::VectorXd c = Hi.colPivHouseholderQr().solve(yi);
    const double e = y[i] - H.row(i).dot(c);
    acc += e * e;
  }
  const double var = (y.array() - y.mean()).square().sum() / (m - 1);
  return acc / m / var;
}

double ishigami(const Eigen::VectorXd& x) {
  return std::sin(x[0]) + 7.0 * std::pow(std::sin(x[1]), 2) + 0.1 * std::pow(x[2], 4) * std::sin(x[0]);
}

} // namespace

TEST_CASE("index set for three inputs up to degree two") {
  const auto s = build_index_set(3, 2, 1.0, 3);
  const std::vector<MultiIndex> want{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0},
                                     {1, 0, 1}, {0, 1, 1}, {2, 0, 0}, {0, 2, 0}, {0, 0, 2}};
  CHECK(s == want);
  CHECK(build_index_set(5, 0, 0.5, 2) == std::vector<MultiIndex>{{0, 0, 0, 0, 0}});
}

TEST_CASE("hyperbolic set agrees with brute force enumeration") {
  for (double q : {1.0, 0.75, 0.5}) {
    CAPTURE(q);
    const auto got = build_index_set(12, 2, q, 12);
    std::set<MultiIndex> brute;
    MultiIndex a(12, 0);
    for (int code = 0; code < 531441; ++code) {
      int c = code;
      double s = 0;
      for (int i = 0; i < 12; ++i) {
        a[i] = c % 3;
        c /= 3;
        s += a[i] ? std::pow(a[i], q) : 0.0;
      }
      if (s == 0 || std::pow(s, 1 / q) <= 2 + 1e-9)
        brute.insert(a);
    }
    CHECK(std::set<MultiIndex>(got.begin(), got.end()) == brute);
    CHECK(got.size() == brute.size());
  }
  CHECK(build_index_set(12, 2, 1.0, 12).size() == 91);
  CHECK(build_index_set(12, 2, 0.75, 2).size() == 25);
}

TEST_CASE("index set containment") {
  for (int p = 0; p < 5; ++p) {
    const auto small = build_index_set(4, p, 0.6, 2);
    const auto wider = build_index_set(4, p, 0.9, 2);
    const auto deeper = build_index_set(4, p + 1, 0.6, 2);
    const std::set<MultiIndex> w(wider.begin(), wider.end()), d(deeper.begin(), deeper.end());
    for (const auto& a : small) {
      CHECK(w.count(a) == 1);
      CHECK(d.count(a) == 1);
    }
    CHECK(small.size() < wider.size() + 1);
  }
  for (const auto& a : build_index_set(6, 4, 1.0, 2))
    CHECK(std::count_if(a.begin(), a.end(), [](int v) { return v > 0; }) <= 2);
}

TEST_CASE("design matrix entries") {
  const auto bases = hermite_bases(2, 3);
  Eigen::MatrixXd xi(2, 2);
  xi << 2.0, 0.5, -1.0, 3.0;
  const Eigen::MatrixXd H = assemble_design_matrix(bases, {{0, 0}, {1, 0}, {1, 2}}, xi);
  CHECK(H.col(0).isOnes());
  CHECK(H(0, 1) == doctest::Approx(2.0));
  CHECK(H(1, 2) == doctest::Approx(-1.0 * (9.0 - 1.0) / std::sqrt(2.0)));
  CHECK_THROWS_AS(assemble_design_matrix(bases, {{4, 0}}, xi), std::out_of_range);
}

TEST_CASE("design matrix gram approaches identity") {
  std::vector<PolyBasis1D> bases{classical_basis(Marginal::normal(0, 1), 3),
                                 classical_basis(Marginal::uniform(-1, 1), 3),
                                 stieltjes_basis(Marginal::weibull(7.41, 2.06), 3)};
  const int m = 100000;
  std::mt19937_64 rng(3);
  Eigen::MatrixXd xi(m, 3);
  for (int l = 0; l < m; ++l)
    for (int i = 0; i < 3; ++i)
      xi(l, i) = bases[i].weight.inv_cdf(uniform_open01(rng));
  const auto idx = build_index_set(3, 3, 1.0, 3);
  const Eigen::MatrixXd H = assemble_design_matrix(bases, idx, xi);
  const Eigen::MatrixXd G = H.transpose() * H / m;
  const double dev = (G - Eigen::MatrixXd::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff();
  CHECK(dev < 0.1);
  CHECK(dev > 0.0);
}

TEST_CASE("least squares") {
  const auto bases = hermite_bases(2, 3);
  const auto idx = build_index_set(2, 2, 1.0, 2);
  const Eigen::MatrixXd xi = normal_samples(12, 2, 9);
  const Eigen::MatrixXd H = assemble_design_matrix(bases, idx, xi);
  const Eigen::VectorXd c = ols_fit(H, H.col(3));
  for (int k = 0; k < c.size(); ++k)
    CHECK(std::abs(c[k] - (k == 3 ? 1.0 : 0.0)) <= 1e-12);

  const Eigen::VectorXd y = (2.0 + 3.0 * xi.col(0).array()).matrix();
  const Eigen::MatrixXd H3 = assemble_design_matrix(bases, idx, xi.topRows(3));
  const Eigen::VectorXd c2 = ols_fit(H.leftCols(3), y);
  CHECK(c2[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(c2[1] == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(std::abs(c2[2]) <= 1e-10);

  const Eigen::MatrixXd Hs = H.topRows(6);
  const Eigen::VectorXd r = normal_samples(6, 1, 2).col(0);
  CHECK((Hs * ols_fit(Hs, r) - r).norm() <= 1e-10);

  Eigen::MatrixXd dup = H.leftCols(3);
  dup.col(2) = dup.col(1);
  CHECK_THROWS_AS(ols_fit(dup, y), NumericalError);
  CHECK_THROWS_AS(ols_fit(H.topRows(3), y.head(3)), ValidationError);
}

TEST_CASE("lar entry order") {
  const Eigen::MatrixXd raw = normal_samples(40, 6, 4);
  Eigen::MatrixXd c = raw.rowwise() - raw.colwise().mean();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(40, 6);

  Eigen::MatrixXd H(40, 7);
  H << Eigen::VectorXd::Ones(40), Q;
  CHECK(lar_path(H, 2.5 * H.col(4)).front() == 4);

  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd(0, 1e-3);
  Eigen::VectorXd y = 5 * H.col(2) + 0.1 * H.col(5);
  for (int i = 0; i < 40; ++i)
    y[i] += nd(rng);
  const auto path = lar_path(H, y);
  REQUIRE(path.size() >= 2);
  CHECK(path[0] == 2);
  CHECK(path[1] == 5);

  // orthonormal centered columns: order equals ranking of |H^T y|
  const Eigen::VectorXd z = normal_samples(40, 1, 21).col(0);
  const Eigen::VectorXd corr = (Q.transpose() * z).cwiseAbs();
  std::vector<int> rank(6);
  std::iota(rank.begin(), rank.end(), 0);
  std::sort(rank.begin(), rank.end(), [&](int a, int b) { return corr[a] > corr[b]; });
  const auto p2 = lar_path(H, z);
  REQUIRE(p2.size() == 6);
  for (int k = 0; k < 6; ++k)
    CHECK(p2[k] == rank[k] + 1);

  CHECK(lar_path(H, Eigen::VectorXd::Constant(40, 3.0)).empty());
  CHECK(lar_path(H.topRows(4), z.head(4)).size() == 3);
}

TEST_CASE("lar skips collinear columns") {
  const Eigen::MatrixXd x = normal_samples(30, 3, 6);
  Eigen::MatrixXd H(30, 5);
  H << Eigen::VectorXd::Ones(30), x, x.col(0) * 2.0;
  const Eigen::VectorXd y = x.col(0) + 0.5 * x.col(1) + 0.1 * x.col(2);
  const auto path = lar_path(H, y);
  CHECK(std::count(path.begin(), path.end(), 4) + std::count(path.begin(), path.end(), 1) == 1);
}

TEST_CASE("loo shortcut equals literal refitting") {
  const auto bases = hermite_bases(2, 3);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Eigen::MatrixXd xi = normal_samples(20, 2, seed);
    const Eigen::MatrixXd H = assemble_design_matrix(bases, {{0, 0}, {1, 0}, {0, 1}}, xi);
    Eigen::VectorXd y = (xi.col(0).array().sin() + xi.col(1).array().square()).matrix();
    const Eigen::VectorXd c = ols_fit(H, y);
    const LooErrors e = corrected_loo(H, c, y);
    CHECK(std::abs(e.loo - brute_loo(H, y)) <= 1e-10 * std::max(1.0, e.loo));
    CHECK(e.cloo >= e.loo);
  }
  const Eigen::MatrixXd xi = normal_samples(20, 2, 5);
  const Eigen::MatrixXd H = assemble_design_matrix(bases, {{0, 0}, {1, 0}, {0, 1}}, xi);
  const Eigen::VectorXd y = H * Eigen::Vector3d(1, 2, 3);
  CHECK(corrected_loo(H, ols_fit(H, y), y).loo <= 1e-20);
  const Eigen::VectorXd flat = Eigen::VectorXd::Constant(20, 4.0);
  CHECK_THROWS_AS(corrected_loo(H, ols_fit(H, flat), flat), ValidationError);
  CHECK_THROWS_AS(corrected_loo(H.topRows(3), Eigen::Vector3d(1, 2, 3), y.head(3)), ValidationError);
}

TEST_CASE("exact recovery of a quadratic response") {
  const auto bases = hermite_bases(3, 8);
  const Eigen::MatrixXd xi = normal_samples(30, 3, 12);
  auto f = [](const Eigen::RowVectorXd& x) {
    return 1.5 + 2 * x[0] - x[1] + 0.5 * x[2] + 0.7 * (x[0] * x[0] - 1) / std::sqrt(2.0) + 0.3 * x[1] * x[2];
  };
  EdSet ed{xi, Eigen::VectorXd(30)};
  for (int i = 0; i < 30; ++i)
    ed.y[i] = f(xi.row(i));
  for (double q : {1.0, 0.75}) {
    SpceOptions o;
    o.q = q;
    const PceModel m = adaptive_fit(ed, bases, o);
    CHECK(m.err_cloo < 1e-10);
    auto coeff = [&](const MultiIndex& a) {
      for (std::size_t t = 0; t < m.active.size(); ++t)
        if (m.active[t] == a)
          return m.coeffs[t];
      return 0.0;
    };
    CHECK(std::abs(coeff({0, 0, 0}) - 1.5) <= 1e-8);
    CHECK(std::abs(coeff({1, 0, 0}) - 2.0) <= 1e-8);
    CHECK(std::abs(coeff({0, 1, 0}) + 1.0) <= 1e-8);
    CHECK(std::abs(coeff({0, 0, 1}) - 0.5) <= 1e-8);
    CHECK(std::abs(coeff({2, 0, 0}) - 0.7) <= 1e-8);
    CHECK(std::abs(coeff({0, 1, 1}) - 0.3) <= 1e-8);
    double other = 0;
    for (std::size_t t = 0; t < m.active.size(); ++t)
      if (std::accumulate(m.active[t].begin(), m.active[t].end(), 0) > 0)
        other += m.coeffs[t] * m.coeffs[t];
    CHECK(std::abs(other - (4 + 1 + 0.25 + 0.49 + 0.09)) <= 1e-8);
  }
}

TEST_CASE("ishigami moments") {
  const int n = 3;
  const auto u = Marginal::uniform(-std::numbers::pi, std::numbers::pi);
  const auto target = standard_target(u);
  std::vector<PolyBasis1D> bases(n, classical_basis(target, 12));
  const auto lhs = lhs_sample(n, 300, 77);
  EdSet ed{Eigen::MatrixXd(300, n), Eigen::VectorXd(300)};
  for (int l = 0; l < 300; ++l) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) {
      ed.xi(l, i) = target.inv_cdf(lhs.points(l, i));
      x[i] = u.inv_cdf(lhs.points(l, i));
    }
    ed.y[l] = ishigami(x);
  }
  SpceOptions o;
  o.pmax = 12;
  o.max_interaction = 3;
  const PceModel m = adaptive_fit(ed, bases, o);
  const Moments mo = pce_moments(m);
  const double pi4 = std::pow(std::numbers::pi, 4);
  const double var = 49.0 / 8 + 0.1 * pi4 / 5 + 0.01 * pi4 * pi4 / 18 + 0.5;
  CHECK(var == doctest::Approx(13.8445).epsilon(1e-4));
  CHECK(std::abs(mo.mean - 3.5) <= 0.035);
  CHECK(std::abs(mo.variance - var) <= 0.01 * var);
}

TEST_CASE("twelve inputs with a small design stay sparse") {
  const int n = 12;
  const auto bases = hermite_bases(n, 8);
  const Eigen::MatrixXd xi = normal_samples(31, n, 44);
  EdSet ed{xi, Eigen::VectorXd(31)};
  for (int l = 0; l < 31; ++l) {
    double y = 3.0;
    for (int i = 0; i < n; ++i)
      y += (0.5 + 0.1 * i) * xi(l, i) + 0.05 * (i % 3) * xi(l, i) * xi(l, i);
    y += 0.02 * xi(l, 0) * xi(l, 1);
    ed.y[l] = y;
  }
  SpceOptions o;
  o.pmax = 3;
  const PceModel m = adaptive_fit(ed, bases, o);
  CHECK(m.active.size() >= 10);
  CHECK(m.active.size() <= 30);
  CHECK(m.active.size() < 91);
}

TEST_CASE("hybrid refit satisfies normal equations and is deterministic") {
  const auto bases = hermite_bases(4, 8);
  const Eigen::MatrixXd xi = normal_samples(60, 4, 2);
  EdSet ed{xi, Eigen::VectorXd(60)};
  for (int l = 0; l < 60; ++l)
    ed.y[l] = std::exp(0.3 * xi(l, 0)) + std::sin(xi(l, 1)) * xi(l, 2) + 0.1 * xi(l, 3);
  const PceModel a = adaptive_fit(ed, bases, {});
  const PceModel b = adaptive_fit(ed, bases, {});
  CHECK(a.active == b.active);
  CHECK(a.coeffs == b.coeffs);
  CHECK(a.err_cloo == b.err_cloo);
  CHECK(a.active.front() == MultiIndex(4, 0));
  const Eigen::MatrixXd H = assemble_design_matrix(a.bases, a.active, xi);
  const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(a.coeffs.data(), a.coeffs.size());
  const Eigen::VectorXd r = ed.y - H * c;
  CHECK((H.transpose() * r).cwiseAbs().maxCoeff() <= 1e-10 * ed.y.norm() * H.norm());
  CHECK(a.err_cloo >= a.err_loo);
  CHECK(a.err_loo >= 0);
}

TEST_CASE("constant response gives a constant model") {
  const auto bases = hermite_bases(2, 8);
  EdSet ed{normal_samples(10, 2, 1), Eigen::VectorXd::Constant(10, 7.0)};
  const PceModel m = adaptive_fit(ed, bases, {});
  CHECK(m.active.size() == 1);
  CHECK(m.coeffs[0] == 7.0);
  CHECK(m.err_cloo == 0.0);
}

TEST_CASE("evaluation and moments") {
  PceModel m;
  m.dim = 1;
  m.bases = hermite_bases(1, 2);
  m.active = {{0}};
  m.coeffs = {5.0};
  CHECK(pce_eval(m, Eigen::VectorXd::Constant(1, 0.3)) == 5.0);
  CHECK(pce_moments(m).mean == 5.0);
  CHECK(pce_moments(m).variance == 0.0);
  m.active = {{0}, {1}};
  m.coeffs = {2.0, 3.0};
  CHECK(pce_eval(m, Eigen::VectorXd::Constant(1, 1.5)) == doctest::Approx(6.5));
  CHECK(pce_moments(m).mean == 2.0);
  CHECK(pce_moments(m).variance == 9.0);
}

TEST_CASE("sampled moments of a fitted model") {
  const auto bases = std::vector<PolyBasis1D>{classical_basis(Marginal::normal(0, 1), 8),
                                              stieltjes_basis(Marginal::weibull(2, 1), 8)};
  const int m = 80;
  std::mt19937_64 rng(31);
  EdSet ed{Eigen::MatrixXd(m, 2), Eigen::VectorXd(m)};
  for (int l = 0; l < m; ++l) {
    ed.xi(l, 0) = bases[0].weight.inv_cdf(uniform_open01(rng));
    ed.xi(l, 1) = bases[1].weight.inv_cdf(uniform_open01(rng));
    ed.y[l] = std::cos(ed.xi(l, 0)) * ed.xi(l, 1) + ed.xi(l, 1) * ed.xi(l, 1);
  }
  const PceModel model = adaptive_fit(ed, bases, {});
  const Moments mo = pce_moments(model);

  const int s = 1000000;
  Eigen::MatrixXd xs(s, 2);
  for (int l = 0; l < s; ++l) {
    xs(l, 0) = bases[0].weight.inv_cdf(uniform_open01(rng));
    xs(l, 1) = bases[1].weight.inv_cdf(uniform_open01(rng));
  }
  const Eigen::VectorXd y = pce_eval_rows(model, xs);
  const double mean = y.mean();
  const Eigen::ArrayXd d = y.array() - mo.mean;
  const double var = (d * d).mean();
  const double m4 = (d * d * d * d).mean();
  CHECK(std::abs(mean - mo.mean) <= 3 * std::sqrt(mo.variance / s));
  CHECK(std::abs(var - mo.variance) <= 3 * std::sqrt((m4 - var * var) / s));
  for (int l = 0; l < 50; ++l)
    CHECK(pce_eval(model, Eigen::VectorXd(xs.row(l).transpose())) == doctest::Approx(y[l]).epsilon(1e-12));
}

TEST_CASE("model json round trip") {
  const auto bases = std::vector<PolyBasis1D>{classical_basis(Marginal::normal(0, 1), 8),
                                              stieltjes_basis(Marginal::weibull(7.41, 2.06), 8)};
  EdSet ed{normal_samples(40, 2, 3), Eigen::VectorXd(40)};
  ed.xi.col(1) = ed.xi.col(1).array().abs() + 1.0;
  for (int l = 0; l < 40; ++l)
    ed.y[l] = ed.xi(l, 0) * ed.xi(l, 1);
  const PceModel m = adaptive_fit(ed, bases, {});
  const PceModel r = pce_from_json(nlohmann::json::parse(pce_to_json(m).dump()));
  CHECK(r.active == m.active);
  CHECK(r.coeffs == m.coeffs);
  CHECK(r.bases[1].recur_b == m.bases[1].recur_b);
  CHECK(pce_to_json(r).dump() == pce_to_json(m).dump());
  CHECK_THROWS_AS(pce_from_json(nlohmann::json::parse("{}")), ValidationError);
}

TEST_CASE("options parsing") {
  const auto o = spce_options_from_json(nlohmann::json::parse(R"({"pmax":5,"q":1.0})"));
  CHECK(o.pmax == 5);
  CHECK(o.q == 1.0);
  CHECK(o.p0 == 1);
  CHECK_THROWS_AS(spce_options_from_json(nlohmann::json::parse(R"({"qq":1})")), ValidationError);
  CHECK_THROWS_AS(spce_options_from_json(nlohmann::json::parse(R"({"q":1.5})")), ValidationError);
}
