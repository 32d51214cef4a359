#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "padc/error.hpp"
#include "padc/study.hpp"

using namespace padc;
using nlohmann::json;

namespace {

const std::string kData = PADC_DATA_DIR;

StudySetup normal_setup(const Eigen::MatrixXd& rho) {
  std::vector<Marginal> m{Marginal::normal(10.0, 2.0), Marginal::normal(-3.0, 0.5), Marginal::normal(100.0, 5.0),
                          Marginal::normal(0.0, 1.0)};
  return make_setup({"a", "b", "c", "d"}, {InputClass::Load, InputClass::Load, InputClass::Load, InputClass::Load},
                    m, rho, 3);
}

Eigen::MatrixXd rho4() {
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(4, 4);
  r(0, 1) = r(1, 0) = 0.4;
  r(0, 2) = r(2, 0) = 0.4;
  r(1, 2) = r(2, 1) = 0.4;
  r(2, 3) = r(3, 2) = -0.3;
  return r;
}

const Eigen::Vector4d kC(0.7, -1.2, 0.05, 2.0);

Evaluator affine() {
  return [](const Eigen::VectorXd& u) {
    const double y = 1.5 + kC.dot(u);
    return std::array<double, 3>{y, 2.0 * y, y + 1.0};
  };
}

StudyConfig small_config() {
  StudyConfig c;
  c.ed_size = 20;
  c.samples = 2000;
  c.seed = 7;
  c.spce.pmax = 3;
  c.spce.eps_target = 1e-10;
  c.max_enrichments = 0;
  c.jobs = 1;
  return c;
}

json ieee13_config() {
  std::ifstream in(kData + "/ieee13_study.json");
  return json::parse(in);
}

} // namespace

TEST_CASE("summary statistics") {
  const ResponseStats s = summarize_statistics({3.0, 1.0, 2.0});
  CHECK(s.mean == 2.0);
  CHECK(s.variance == 1.0);
  CHECK(s.sorted == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(s.positions[0] == doctest::Approx(1.0 / 6.0));
  CHECK(s.quantiles.size() == kQuantileLevels.size());
  for (std::size_t i = 1; i < s.sorted.size(); ++i) {
    CHECK(s.sorted[i] >= s.sorted[i - 1]);
    CHECK(s.positions[i] > s.positions[i - 1]);
  }
  CHECK_THROWS_AS(summarize_statistics({}), ValidationError);

  const ResponseStats c = summarize_statistics(std::vector<double>(50, 0.894));
  CHECK(c.variance == 0.0);
  CHECK(c.sorted.front() == c.sorted.back());
  for (const auto& [p, x] : c.quantiles)
    CHECK(x == 0.894);
}

TEST_CASE("normal quantile oracle") {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> g;
  std::vector<double> v(1000000);
  for (double& x : v)
    x = g(rng);
  const ResponseStats s = summarize_statistics(std::move(v));
  CHECK(empirical_quantile(s.sorted, 0.95) == doctest::Approx(1.6448536).epsilon(0.01 / 1.645));
  CHECK(std::abs(empirical_quantile(s.sorted, 0.5)) < 0.01);
}

TEST_CASE("confidence ADC") {
  StudyResult r;
  SUBCASE("median at level one half") {
    for (auto* rr : {&r.responses[0], &r.responses[1], &r.responses[2], &r.overall})
      rr->stats = summarize_statistics({5.0, 1.0, 4.0, 2.0, 3.0});
    const auto c = confidence_adc(r, 0.5);
    for (double v : c)
      CHECK(v == 3.0);
  }
  SUBCASE("degenerate distribution") {
    for (auto* rr : {&r.responses[0], &r.responses[1], &r.responses[2], &r.overall})
      rr->stats = summarize_statistics(std::vector<double>(100, 0.894));
    CHECK(confidence_adc(r, 0.95)[3] == 0.894);
    CHECK(confidence_adc(r, 0.2)[3] == 0.894);
  }
  SUBCASE("normal ADC at 95%") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.894, 0.0158);
    std::vector<double> v(400000);
    for (double& x : v)
      x = g(rng);
    for (auto* rr : {&r.responses[0], &r.responses[1], &r.responses[2], &r.overall})
      rr->stats = summarize_statistics(v);
    CHECK(confidence_adc(r, 0.95)[3] == doctest::Approx(0.894 - 1.6448536 * 0.0158).epsilon(5e-4));
  }
  CHECK_THROWS_AS(confidence_adc(r, 1.0), ValidationError);
}

TEST_CASE("class correlation shorthand") {
  CorrelationSpec spec;
  spec.wind = 0.5;
  spec.solar = 0.8;
  spec.load = 0.4;
  spec.wind_load = 0.1;
  const std::vector<InputClass> cls{InputClass::Wind, InputClass::Wind, InputClass::Solar, InputClass::Load,
                                    InputClass::Load};
  const Eigen::MatrixXd r = correlation_matrix(spec, cls);
  CHECK(r(0, 1) == 0.5);
  CHECK(r(0, 2) == 0.0);
  CHECK(r(2, 2) == 1.0);
  CHECK(r(3, 4) == 0.4);
  CHECK(r(1, 4) == 0.1);
  CHECK((r - r.transpose()).norm() == 0.0);
  spec.matrix = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(correlation_matrix(spec, cls), ValidationError);
}

TEST_CASE("affine response: surrogate moments equal the analytic image") {
  const StudySetup s = normal_setup(rho4());
  const StudyConfig cfg = small_config();
  const StudyResult r = run_adaptive_study(cfg, s, affine());

  Eigen::Vector4d mu(10.0, -3.0, 100.0, 0.0), sd(2.0, 0.5, 5.0, 1.0);
  const Eigen::Vector4d cs = kC.cwiseProduct(sd);
  const double mean = 1.5 + kC.dot(mu);
  const double var = cs.dot(rho4() * cs);
  REQUIRE(r.responses[0].pce_moments.has_value());
  CHECK(r.responses[0].pce_moments->mean == doctest::Approx(mean).epsilon(1e-6));
  CHECK(r.responses[0].pce_moments->variance == doctest::Approx(var).epsilon(1e-6));
  CHECK(r.responses[1].pce_moments->variance == doctest::Approx(4.0 * var).epsilon(1e-6));
  CHECK(r.converged);

  // sampling oracle on the physical inputs
  const Eigen::MatrixXd u = standard_to_physical(s, standard_lhs(s, 1000000, 99, 5, true));
  const Eigen::VectorXd y = (u * kC).array() + 1.5;
  const double m_mc = y.mean();
  const double v_mc = (y.array() - m_mc).square().sum() / static_cast<double>(y.size() - 1);
  CHECK(m_mc == doctest::Approx(mean).epsilon(1e-4));
  CHECK(v_mc == doctest::Approx(var).epsilon(5e-3));
}

TEST_CASE("surrogate and Monte Carlo share the sampling stream") {
  const StudySetup s = normal_setup(rho4());
  StudyConfig cfg = small_config();
  cfg.samples = 500;
  const StudyResult a = run_adaptive_study(cfg, s, affine());
  const StudyResult m = run_mcs_baseline(cfg, s, affine());
  CHECK(m.deterministic_solves == 500);
  CHECK((a.samples - m.samples).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(a.overall.stats.mean == doctest::Approx(m.overall.stats.mean).epsilon(1e-12));
  for (Eigen::Index r = 0; r < a.samples.rows(); ++r)
    CHECK(a.samples(r, 3) == a.samples.row(r).head(3).minCoeff());
}

TEST_CASE("experimental design is reproducible and stream-separated") {
  const StudySetup s = normal_setup(rho4());
  const StudyConfig cfg = small_config();
  const EdArchive a = run_experimental_design(cfg, s, affine(), 15, 1);
  const EdArchive b = run_experimental_design(cfg, s, affine(), 15, 1);
  const EdArchive c = run_experimental_design(cfg, s, affine(), 15, 2);
  CHECK((a.xi.array() == b.xi.array()).all());
  CHECK((a.y.array() == b.y.array()).all());
  CHECK((a.xi - c.xi).cwiseAbs().maxCoeff() > 1e-3);
  CHECK(a.failures() == 0);
}

TEST_CASE("parallel evaluation keeps sample order") {
  const StudySetup s = normal_setup(rho4());
  StudyConfig cfg = small_config();
  const EdArchive a = run_experimental_design(cfg, s, affine(), 64, 3);
  cfg.jobs = 4;
  const EdArchive b = run_experimental_design(cfg, s, affine(), 64, 3);
  CHECK((a.y.array() == b.y.array()).all());
}

TEST_CASE("failed evaluations are excluded up to 10%") {
  const StudySetup s = normal_setup(rho4());
  const StudyConfig cfg = small_config();
  const Eigen::MatrixXd xi = standard_lhs(s, 40, 1, 1, true);
  const Eigen::MatrixXd u = standard_to_physical(s, xi);
  std::vector<double> first(u.col(0).data(), u.col(0).data() + u.rows());
  std::sort(first.begin(), first.end());

  auto failing_above = [&](double cut) {
    return Evaluator([cut](const Eigen::VectorXd& v) -> std::array<double, 3> {
      if (v[0] > cut)
        throw ConvergenceError("synthetic failure");
      return {v[0], v[1], v[2]};
    });
  };
  const EdArchive ok = evaluate_design(s, failing_above(first[35]), xi, 1); // 4 of 40 fail
  CHECK(ok.failures() == 4);
  CHECK(ok.response(VV).y.size() == 36);
  CHECK(ok.errors[static_cast<std::size_t>(std::distance(u.col(0).data(),
                                                          std::max_element(u.col(0).data(), u.col(0).data() + 40)))] ==
        "synthetic failure");
  CHECK_THROWS_AS(evaluate_design(s, failing_above(first[34]), xi, 1), ConvergenceError); // 5 of 40
}

TEST_CASE("enrichment keeps earlier samples and counts solves") {
  const StudySetup s = normal_setup(rho4());
  StudyConfig cfg = small_config();
  // a kinked response the basis cannot reach, so the target is never met
  const Evaluator kink = [](const Eigen::VectorXd& u) {
    const double y = std::abs(u[0] - 10.0) + u[1];
    return std::array<double, 3>{y, y, y};
  };
  const StudyResult base = run_adaptive_study(cfg, s, kink);
  cfg.max_enrichments = 2;
  cfg.enrich_size = 7;
  const StudyResult more = run_adaptive_study(cfg, s, kink);
  CHECK_FALSE(more.converged);
  CHECK(more.deterministic_solves == 20 + 2 * 7);
  CHECK(more.history.size() == 3);
  CHECK(more.history.back().ed_size == 34);
  CHECK((more.ed.xi.topRows(20).array() == base.ed.xi.array()).all());
  cfg.samples = 5000;
  CHECK(run_adaptive_study(cfg, s, kink).deterministic_solves == 34);
}

TEST_CASE("result document is deterministic and round-trips") {
  const StudySetup s = normal_setup(rho4());
  const StudyConfig cfg = small_config();
  const json a = study_result_to_json(run_adaptive_study(cfg, s, affine()));
  const json b = study_result_to_json(run_adaptive_study(cfg, s, affine()));
  CHECK(a.dump() == b.dump());
  CHECK_FALSE(a.contains("timing"));
  const StudyResult back = study_result_from_json(json::parse(a.dump()));
  CHECK(study_result_to_json(back).dump() == a.dump());
  CHECK(back.responses[0].pce->coeffs.size() == 5);
  CHECK_THROWS_AS(study_result_from_json(json{{"method", "spce"}}), ValidationError);
}

TEST_CASE("study config validation") {
  json doc = ieee13_config();
  CHECK(validate_study_document(doc).empty());
  const StudyConfig c = parse_study_config(doc, kData);
  CHECK(c.feeder_path == kData + "/ieee13_res.json");
  CHECK(c.mode == StudyMode::Both);
  CHECK(study_config_to_json(c)["samples"] == 4000);

  doc["correlation"]["load"] = 1.4;
  doc["marginals"]["solar"]["alpha"] = -2.0;
  doc["samples"] = 10;
  doc["confidence"] = 1.5;
  doc["colour"] = 1;
  const auto errs = validate_study_document(doc);
  CHECK(errs.size() == 5);
  CHECK_THROWS_AS(parse_study_config(doc), ValidationError);
  doc.erase("ed_size");
  CHECK(validate_study_document(doc).size() == 6);
  CHECK_THROWS_AS(load_study_config("/no/such/config.json"), ValidationError);
}

TEST_CASE("feeder study setup") {
  const StudyConfig cfg = load_study_config(kData + "/ieee13_study.json");
  const FeederModel f = load_feeder(cfg.feeder_path);
  const StudySetup s = make_feeder_setup(cfg, f);
  REQUIRE(s.dim() == 12);
  CHECK(s.classes[0] == InputClass::Wind);
  CHECK(s.classes[2] == InputClass::Solar);
  CHECK(s.classes[11] == InputClass::Load);
  CHECK(s.cm.rho(0, 1) == 0.5);
  CHECK(s.cm.rho(2, 3) == 0.8);
  CHECK(s.cm.rho(4, 11) == 0.4);
  CHECK(s.cm.rho(0, 4) == 0.0);
  CHECK(s.bases[0].family == "stieltjes");
  CHECK(s.bases[2].family == "jacobi");
  CHECK(s.bases[5].family == "hermite");
}

TEST_CASE("degenerate inputs reproduce the deterministic study") {
  StudyConfig cfg = load_study_config(kData + "/ieee13_study.json");
  cfg.degenerate = true;
  const FeederModel f = load_feeder(cfg.feeder_path);
  const StudySetup s = make_feeder_setup(cfg, f);
  const Evaluator ev = make_adc_evaluator(f);
  const EdArchive ed = run_experimental_design(cfg, s, ev, 1);
  REQUIRE(ed.size() == 1);
  Eigen::VectorXd means(12);
  for (std::size_t k = 0; k < 12; ++k)
    means[static_cast<Eigen::Index>(k)] = s.cm.marginals[k].moments().mean;
  const auto y = ev(means);
  for (int k = 0; k < 3; ++k)
    CHECK(ed.y(0, k) == y[k]);
  CHECK(y[0] < y[1]);
  CHECK(y[1] < y[2]);
}
