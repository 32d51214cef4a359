#include "padc/study.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "padc/error.hpp"

namespace padc {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed,
                std::vector<std::string>& errs) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      errs.push_back(where + ": unknown field '" + it.key() + "'");
}

std::optional<double> get_number(const json& j, const char* key, const std::string& where,
                                 std::vector<std::string>& errs) {
  if (!j.contains(key))
    return std::nullopt;
  if (!j[key].is_number()) {
    errs.push_back(where + ": field '" + key + "' must be a number");
    return std::nullopt;
  }
  return j[key].get<double>();
}

std::optional<long long> get_int(const json& j, const char* key, const std::string& where,
                                 std::vector<std::string>& errs) {
  if (!j.contains(key))
    return std::nullopt;
  if (!j[key].is_number_integer()) {
    errs.push_back(where + ": field '" + key + "' must be an integer");
    return std::nullopt;
  }
  return j[key].get<long long>();
}

std::optional<bool> get_bool(const json& j, const char* key, const std::string& where,
                             std::vector<std::string>& errs) {
  if (!j.contains(key))
    return std::nullopt;
  if (!j[key].is_boolean()) {
    errs.push_back(where + ": field '" + key + "' must be true or false");
    return std::nullopt;
  }
  return j[key].get<bool>();
}

std::optional<Marginal> get_marginal(const json& j, const std::string& where, std::vector<std::string>& errs) {
  try {
    return marginal_from_json(j);
  } catch (const std::exception& e) {
    errs.push_back(where + ": " + e.what());
    return std::nullopt;
  }
}

StudyConfig parse_into(const json& doc, const std::string& base_dir, std::vector<std::string>& errs) {
  StudyConfig c;
  if (!doc.is_object()) {
    errs.push_back("config: must be a JSON object");
    return c;
  }
  check_keys(doc, "config",
             {"feeder", "marginals", "correlation", "ed_size", "enrich_size", "max_enrichments", "samples", "seed",
              "spce", "confidence", "mode", "lhs_jitter", "basis", "degenerate", "jobs", "cpf"},
             errs);
  if (doc.contains("feeder") && doc["feeder"].is_string()) {
    std::filesystem::path p(doc["feeder"].get<std::string>());
    if (p.is_relative())
      p = std::filesystem::path(base_dir) / p;
    c.feeder_path = p.lexically_normal().string();
  } else if (doc.contains("feeder")) {
    errs.push_back("config: field 'feeder' must be a path string");
  }

  if (doc.contains("marginals")) {
    const json& m = doc["marginals"];
    if (!m.is_object()) {
      errs.push_back("config: field 'marginals' must be an object");
    } else {
      check_keys(m, "marginals", {"wind", "solar"}, errs);
      if (m.contains("wind"))
        c.wind = get_marginal(m["wind"], "marginals.wind", errs);
      if (m.contains("solar"))
        c.solar = get_marginal(m["solar"], "marginals.solar", errs);
    }
  }

  if (doc.contains("correlation")) {
    const json& r = doc["correlation"];
    if (!r.is_object()) {
      errs.push_back("config: field 'correlation' must be an object");
    } else {
      check_keys(r, "correlation", {"wind", "solar", "load", "wind_solar", "wind_load", "solar_load", "matrix"},
                 errs);
      auto coef = [&](const char* key, double& out) {
        if (auto v = get_number(r, key, "correlation", errs)) {
          if (!(std::abs(*v) <= 1.0))
            errs.push_back(std::string("correlation: '") + key + "' must lie in [-1, 1]");
          out = *v;
        }
      };
      coef("wind", c.correlation.wind);
      coef("solar", c.correlation.solar);
      coef("load", c.correlation.load);
      coef("wind_solar", c.correlation.wind_solar);
      coef("wind_load", c.correlation.wind_load);
      coef("solar_load", c.correlation.solar_load);
      if (r.contains("matrix")) {
        const json& mj = r["matrix"];
        const std::size_t n = mj.is_array() ? mj.size() : 0;
        bool shape = n > 0;
        for (std::size_t i = 0; shape && i < n; ++i)
          shape = mj[i].is_array() && mj[i].size() == n &&
                  std::all_of(mj[i].begin(), mj[i].end(), [](const json& e) { return e.is_number(); });
        if (!shape) {
          errs.push_back("correlation: 'matrix' must be a square array of numbers");
        } else {
          Eigen::MatrixXd m(n, n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k)
              m(i, k) = mj[i][k].get<double>();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k) {
              if (!(std::abs(m(i, k)) <= 1.0))
                errs.push_back("correlation: matrix entry (" + std::to_string(i) + "," + std::to_string(k) +
                               ") must lie in [-1, 1]");
              if (m(i, k) != m(k, i) && i < k)
                errs.push_back("correlation: matrix is not symmetric at (" + std::to_string(i) + "," +
                               std::to_string(k) + ")");
            }
          for (std::size_t i = 0; i < n; ++i)
            if (m(i, i) != 1.0)
              errs.push_back("correlation: matrix diagonal must be 1");
          c.correlation.matrix = m;
        }
      }
    }
  }

  if (auto v = get_int(doc, "ed_size", "config", errs)) {
    if (*v < 2)
      errs.push_back("config: 'ed_size' must be at least 2");
    c.ed_size = static_cast<int>(*v);
  } else if (!doc.contains("ed_size")) {
    errs.push_back("config: missing field 'ed_size'");
  }
  if (auto v = get_int(doc, "enrich_size", "config", errs)) {
    if (*v < 0)
      errs.push_back("config: 'enrich_size' must be nonnegative");
    c.enrich_size = static_cast<int>(*v);
  }
  if (auto v = get_int(doc, "max_enrichments", "config", errs)) {
    if (*v < 0)
      errs.push_back("config: 'max_enrichments' must be nonnegative");
    c.max_enrichments = static_cast<int>(*v);
  }
  if (auto v = get_int(doc, "samples", "config", errs)) {
    if (*v < 1000)
      errs.push_back("config: 'samples' must be at least 1000");
    c.samples = static_cast<int>(*v);
  }
  if (doc.contains("seed")) {
    if (doc["seed"].is_number_unsigned())
      c.seed = doc["seed"].get<std::uint64_t>();
    else
      errs.push_back("config: 'seed' must be a nonnegative integer");
  }
  if (doc.contains("spce")) {
    try {
      c.spce = spce_options_from_json(doc["spce"]);
    } catch (const std::exception& e) {
      errs.push_back(std::string("spce: ") + e.what());
    }
  }
  if (auto v = get_number(doc, "confidence", "config", errs)) {
    if (!(*v > 0.0 && *v < 1.0))
      errs.push_back("config: 'confidence' must lie in (0, 1)");
    c.confidence = *v;
  }
  if (doc.contains("mode")) {
    const std::string m = doc["mode"].is_string() ? doc["mode"].get<std::string>() : "";
    if (m == "spce")
      c.mode = StudyMode::Spce;
    else if (m == "mcs")
      c.mode = StudyMode::Mcs;
    else if (m == "both")
      c.mode = StudyMode::Both;
    else
      errs.push_back("config: 'mode' must be spce, mcs or both");
  }
  if (auto v = get_bool(doc, "lhs_jitter", "config", errs))
    c.lhs_jitter = *v;
  if (doc.contains("basis")) {
    const std::string b = doc["basis"].is_string() ? doc["basis"].get<std::string>() : "";
    if (b == "native")
      c.hermite_basis = false;
    else if (b == "hermite")
      c.hermite_basis = true;
    else
      errs.push_back("config: 'basis' must be native or hermite");
  }
  if (auto v = get_bool(doc, "degenerate", "config", errs))
    c.degenerate = *v;
  if (auto v = get_int(doc, "jobs", "config", errs)) {
    if (*v < 0)
      errs.push_back("config: 'jobs' must be nonnegative");
    c.jobs = static_cast<int>(*v);
  }
  if (doc.contains("cpf")) {
    const json& p = doc["cpf"];
    if (!p.is_object()) {
      errs.push_back("config: field 'cpf' must be an object");
    } else {
      check_keys(p, "cpf", {"max_step", "arc_switch", "nose_tol", "max_lambda"}, errs);
      auto positive = [&](const char* key, double& out) {
        if (auto v = get_number(p, key, "cpf", errs)) {
          if (!(*v > 0.0))
            errs.push_back(std::string("cpf: '") + key + "' must be positive");
          out = *v;
        }
      };
      positive("max_step", c.cpf.max_step);
      positive("arc_switch", c.cpf.arc_switch);
      positive("nose_tol", c.cpf.nose_tol);
      positive("max_lambda", c.cpf.max_lambda);
    }
  }
  return c;
}

Marginal frozen(const Marginal& m) { return Marginal::constant(m.moments().mean); }

} // namespace

std::string to_string(StudyMode m) {
  switch (m) {
  case StudyMode::Spce:
    return "spce";
  case StudyMode::Mcs:
    return "mcs";
  default:
    return "both";
  }
}

std::vector<std::string> validate_study_document(const json& doc) {
  std::vector<std::string> errs;
  parse_into(doc, ".", errs);
  return errs;
}

StudyConfig parse_study_config(const json& doc, const std::string& base_dir) {
  std::vector<std::string> errs;
  StudyConfig c = parse_into(doc, base_dir, errs);
  if (!errs.empty()) {
    std::string msg = "invalid study config:";
    for (const auto& e : errs)
      msg += "\n  " + e;
    throw ValidationError(msg);
  }
  return c;
}

StudyConfig load_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config file '" + path + "': " + e.what());
  }
  const std::string dir = std::filesystem::path(path).parent_path().string();
  return parse_study_config(doc, dir.empty() ? "." : dir);
}

json study_config_to_json(const StudyConfig& c) {
  json j;
  j["feeder"] = c.feeder_path;
  if (c.wind || c.solar) {
    j["marginals"] = json::object();
    if (c.wind)
      j["marginals"]["wind"] = marginal_to_json(*c.wind);
    if (c.solar)
      j["marginals"]["solar"] = marginal_to_json(*c.solar);
  }
  const CorrelationSpec& r = c.correlation;
  j["correlation"] = {{"wind", r.wind},           {"solar", r.solar},         {"load", r.load},
                      {"wind_solar", r.wind_solar}, {"wind_load", r.wind_load}, {"solar_load", r.solar_load}};
  if (r.matrix) {
    json m = json::array();
    for (Eigen::Index i = 0; i < r.matrix->rows(); ++i) {
      json row = json::array();
      for (Eigen::Index k = 0; k < r.matrix->cols(); ++k)
        row.push_back((*r.matrix)(i, k));
      m.push_back(row);
    }
    j["correlation"]["matrix"] = m;
  }
  j["ed_size"] = c.ed_size;
  j["enrich_size"] = c.enrich_size;
  j["max_enrichments"] = c.max_enrichments;
  j["samples"] = c.samples;
  j["seed"] = c.seed;
  j["spce"] = spce_options_to_json(c.spce);
  j["confidence"] = c.confidence;
  j["mode"] = to_string(c.mode);
  j["lhs_jitter"] = c.lhs_jitter;
  j["basis"] = c.hermite_basis ? "hermite" : "native";
  j["degenerate"] = c.degenerate;
  j["jobs"] = c.jobs;
  j["cpf"] = {{"max_step", c.cpf.max_step},
              {"arc_switch", c.cpf.arc_switch},
              {"nose_tol", c.cpf.nose_tol},
              {"max_lambda", c.cpf.max_lambda}};
  return j;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd correlation_matrix(const CorrelationSpec& spec, const std::vector<InputClass>& classes) {
  const Eigen::Index n = static_cast<Eigen::Index>(classes.size());
  if (spec.matrix) {
    if (spec.matrix->rows() != n)
      throw ValidationError("correlation matrix is " + std::to_string(spec.matrix->rows()) + "x" +
                            std::to_string(spec.matrix->cols()) + " but the study has " + std::to_string(n) +
                            " random inputs");
    return *spec.matrix;
  }
  auto pair = [&](InputClass a, InputClass b) {
    if (a == b)
      return a == InputClass::Wind ? spec.wind : a == InputClass::Solar ? spec.solar : spec.load;
    const std::set<InputClass> s{a, b};
    if (s.count(InputClass::Wind) && s.count(InputClass::Solar))
      return spec.wind_solar;
    if (s.count(InputClass::Wind))
      return spec.wind_load;
    return spec.solar_load;
  };
  Eigen::MatrixXd rho = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < n; ++k)
      if (i != k)
        rho(i, k) = pair(classes[i], classes[k]);
  return rho;
}

StudySetup make_setup(std::vector<std::string> labels, std::vector<InputClass> classes,
                      std::vector<Marginal> marginals, const Eigen::MatrixXd& rho, int max_degree,
                      bool hermite_basis) {
  if (labels.size() != marginals.size() || classes.size() != marginals.size())
    throw ValidationError("study setup: labels, classes and marginals differ in length");
  StudySetup s;
  s.labels = std::move(labels);
  s.classes = std::move(classes);
  s.cm = build_correlation_model(std::move(marginals), rho);
  for (const Marginal& m : s.cm.marginals) {
    s.targets.push_back(standard_target(m, hermite_basis));
    s.bases.push_back(make_basis(s.targets.back(), max_degree));
  }
  return s;
}

StudySetup make_feeder_setup(const StudyConfig& cfg, const FeederModel& f) {
  std::vector<std::string> labels;
  std::vector<InputClass> classes;
  std::vector<Marginal> marginals;
  for (const InputInfo& in : f.inputs()) {
    labels.push_back(in.label);
    classes.push_back(in.cls);
    std::optional<Marginal> m = in.marginal;
    if (!m && in.cls == InputClass::Wind)
      m = cfg.wind;
    if (!m && in.cls == InputClass::Solar)
      m = cfg.solar;
    if (!m)
      throw ValidationError("input '" + in.label + "' (" + to_string(in.cls) +
                            ") has no marginal: give one on the unit or under config 'marginals'");
    marginals.push_back(cfg.degenerate ? frozen(*m) : *m);
  }
  if (marginals.empty())
    throw ValidationError("feeder '" + f.name + "' has no random inputs");
  const Eigen::MatrixXd rho = cfg.degenerate ? Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(classes.size()),
                                                                         static_cast<Eigen::Index>(classes.size()))
                                             : correlation_matrix(cfg.correlation, classes);
  return make_setup(std::move(labels), std::move(classes), std::move(marginals), rho, cfg.spce.pmax,
                    cfg.hermite_basis);
}

Eigen::MatrixXd standard_to_physical(const StudySetup& s, const Eigen::MatrixXd& xi) {
  const Eigen::Index n = static_cast<Eigen::Index>(s.dim());
  Eigen::MatrixXd u(xi.rows(), n);
  Eigen::VectorXd eta(n);
  for (Eigen::Index r = 0; r < xi.rows(); ++r) {
    for (Eigen::Index k = 0; k < n; ++k)
      eta[k] = iso_transform_inverse(xi(r, k), s.targets[k]);
    u.row(r) = nataf_inverse(s.cm, eta).transpose();
  }
  return u;
}

Eigen::MatrixXd standard_lhs(const StudySetup& s, std::size_t count, std::uint64_t seed, std::uint64_t stream,
                             bool jitter) {
  const LhsDesign d = lhs_sample(s.dim(), count, derive_seed(seed, stream), jitter);
  Eigen::MatrixXd xi(d.points.rows(), d.points.cols());
  for (Eigen::Index r = 0; r < xi.rows(); ++r)
    for (Eigen::Index k = 0; k < xi.cols(); ++k)
      xi(r, k) = s.targets[k].inv_cdf(d.points(r, k));
  return xi;
}

Evaluator make_adc_evaluator(const FeederModel& f, const ContinuationOptions& opt) {
  auto net = std::make_shared<const NetworkModel>(build_network(f));
  auto feeder = std::make_shared<const FeederModel>(f);
  return [net, feeder, opt](const Eigen::VectorXd& u) {
    const VariationVector b = build_variation_vector(*feeder, u);
    const AdcTriple adc = compute_adc(*net, b, opt);
    return std::array<double, 3>{adc.vv, adc.tv, adc.vc};
  };
}

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  std::size_t workers = jobs > 0 ? static_cast<std::size_t>(jobs) : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error)
            first_error = std::current_exception();
        }
      }
    });
  for (auto& t : pool)
    t.join();
  if (first_error)
    std::rethrow_exception(first_error);
}

std::size_t EdArchive::failures() const { return static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 0)); }

void EdArchive::append(const EdArchive& more) {
  if (size() == 0) {
    *this = more;
    return;
  }
  auto stack = [](Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
    out << a, b;
    a.swap(out);
  };
  stack(xi, more.xi);
  stack(u, more.u);
  stack(y, more.y);
  ok.insert(ok.end(), more.ok.begin(), more.ok.end());
  errors.insert(errors.end(), more.errors.begin(), more.errors.end());
}

EdSet EdArchive::response(Response r) const {
  const Eigen::Index good = static_cast<Eigen::Index>(size() - failures());
  EdSet ed;
  ed.xi.resize(good, xi.cols());
  ed.y.resize(good);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < ok.size(); ++i)
    if (ok[i]) {
      ed.xi.row(k) = xi.row(static_cast<Eigen::Index>(i));
      ed.y[k] = y(static_cast<Eigen::Index>(i), r);
      ++k;
    }
  return ed;
}

EdArchive evaluate_design(const StudySetup& s, const Evaluator& evaluate, const Eigen::MatrixXd& xi, int jobs) {
  EdArchive a;
  a.xi = xi;
  a.u = standard_to_physical(s, xi);
  const std::size_t m = static_cast<std::size_t>(xi.rows());
  a.y = Eigen::MatrixXd::Constant(xi.rows(), 3, std::numeric_limits<double>::quiet_NaN());
  a.ok.assign(m, 0);
  a.errors.assign(m, "");
  parallel_for(m, jobs, [&](std::size_t i) {
    const Eigen::Index r = static_cast<Eigen::Index>(i);
    try {
      const std::array<double, 3> v = evaluate(a.u.row(r).transpose());
      for (int k = 0; k < 3; ++k)
        a.y(r, k) = v[k];
      a.ok[i] = 1;
    } catch (const Error& e) {
      a.errors[i] = e.what();
    }
  });
  if (m > 0 && static_cast<double>(a.failures()) > 0.1 * static_cast<double>(m)) {
    std::string first;
    for (const auto& e : a.errors)
      if (!e.empty()) {
        first = e;
        break;
      }
    throw ConvergenceError(std::to_string(a.failures()) + " of " + std::to_string(m) +
                           " deterministic evaluations failed (limit 10%); first failure: " + first);
  }
  return a;
}

EdArchive run_experimental_design(const StudyConfig& cfg, const StudySetup& s, const Evaluator& evaluate,
                                  std::size_t M, std::uint64_t stream) {
  return evaluate_design(s, evaluate, standard_lhs(s, M, cfg.seed, stream, cfg.lhs_jitter), cfg.jobs);
}

// ---------------------------------------------------------------------------

double empirical_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty())
    throw ValidationError("quantile of an empty sample");
  const double n = static_cast<double>(sorted.size());
  const double h = n * p + 0.5; // 1-based position with Hazen (i - 0.5) / n = p
  if (h <= 1.0)
    return sorted.front();
  if (h >= n)
    return sorted.back();
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const double w = h - static_cast<double>(lo);
  return sorted[lo - 1] + w * (sorted[lo] - sorted[lo - 1]);
}

ResponseStats summarize_statistics(std::vector<double> samples) {
  if (samples.empty())
    throw ValidationError("statistics of an empty sample set");
  ResponseStats st;
  const double n = static_cast<double>(samples.size());
  // shifted by the first sample so that constant data gives exactly zero variance
  const double x0 = samples.front();
  double shift = 0.0;
  for (double v : samples)
    shift += v - x0;
  shift /= n;
  const double mean = x0 + shift;
  double ss = 0.0;
  for (double v : samples)
    ss += (v - x0 - shift) * (v - x0 - shift);
  st.mean = mean;
  st.variance = samples.size() > 1 ? ss / (n - 1.0) : 0.0;
  std::sort(samples.begin(), samples.end());
  st.positions.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    st.positions[i] = (static_cast<double>(i) + 0.5) / n;
  st.sorted = std::move(samples);
  for (double p : kQuantileLevels)
    st.quantiles.emplace_back(p, empirical_quantile(st.sorted, p));
  return st;
}

namespace {

ResponseResult stats_of(const Eigen::VectorXd& v) {
  std::vector<double> s;
  s.reserve(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (std::isfinite(v[i]))
      s.push_back(v[i]);
  ResponseResult r;
  r.stats = summarize_statistics(std::move(s));
  return r;
}

EnrichmentRecord record(const std::array<PceModel, 3>& models, std::size_t ed_size) {
  EnrichmentRecord rec;
  rec.ed_size = ed_size;
  for (int k = 0; k < 3; ++k) {
    rec.err_cloo[k] = models[k].err_cloo;
    rec.degree[k] = models[k].degree;
  }
  return rec;
}

} // namespace

StudyResult run_adaptive_study(const StudyConfig& cfg, const StudySetup& s, const Evaluator& evaluate) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  StudyResult res;
  res.method = "spce";
  res.labels = s.labels;
  res.confidence = cfg.confidence;
  res.seed = cfg.seed;

  auto t0 = clock::now();
  res.ed = run_experimental_design(cfg, s, evaluate, static_cast<std::size_t>(cfg.ed_size), 1);
  res.timing.t_ed += seconds_since(t0);

  std::array<PceModel, 3> models;
  auto fit_all = [&](const std::array<int, 3>& p0) {
    const auto t = clock::now();
    for (int k = 0; k < 3; ++k) {
      SpceOptions o = cfg.spce;
      o.p0 = std::min(p0[k], o.pmax);
      models[k] = adaptive_fit(res.ed.response(static_cast<Response>(k)), s.bases, o);
    }
    res.timing.t_sc += seconds_since(t);
    res.history.push_back(record(models, res.ed.size()));
  };
  auto met = [&] {
    return std::all_of(models.begin(), models.end(),
                       [&](const PceModel& m) { return m.err_cloo <= cfg.spce.eps_target; });
  };

  fit_all({cfg.spce.p0, cfg.spce.p0, cfg.spce.p0});
  const std::size_t step = cfg.enrich_size > 0 ? static_cast<std::size_t>(cfg.enrich_size) : s.dim();
  for (int k = 1; k <= cfg.max_enrichments && !met(); ++k) {
    t0 = clock::now();
    res.ed.append(run_experimental_design(cfg, s, evaluate, step, 1 + static_cast<std::uint64_t>(k)));
    res.timing.t_ed += seconds_since(t0);
    // restart each response just below its previous best degree
    std::array<int, 3> p0;
    for (int r = 0; r < 3; ++r)
      p0[r] = std::max(cfg.spce.p0, models[r].degree - 1);
    fit_all(p0);
  }
  res.converged = met();
  res.deterministic_solves = res.ed.size();
  res.ed_size = res.ed.size();
  res.ed_failures = res.ed.failures();

  t0 = clock::now();
  const Eigen::MatrixXd xi = standard_lhs(s, static_cast<std::size_t>(cfg.samples), cfg.seed, kSamplingStream,
                                          cfg.lhs_jitter);
  res.samples.resize(xi.rows(), 4);
  for (int k = 0; k < 3; ++k)
    res.samples.col(k) = pce_eval_rows(models[k], xi);
  res.samples.col(3) = res.samples.leftCols(3).rowwise().minCoeff();
  for (int k = 0; k < 3; ++k) {
    res.responses[k] = stats_of(res.samples.col(k));
    res.responses[k].pce = models[k];
    res.responses[k].pce_moments = pce_moments(models[k]);
  }
  res.overall = stats_of(res.samples.col(3));
  res.timing.t_es = seconds_since(t0);
  res.timing.t_total = seconds_since(t_start);
  return res;
}

StudyResult run_mcs_baseline(const StudyConfig& cfg, const StudySetup& s, const Evaluator& evaluate) {
  const auto t_start = std::chrono::steady_clock::now();
  StudyResult res;
  res.method = "mcs";
  res.labels = s.labels;
  res.confidence = cfg.confidence;
  res.seed = cfg.seed;
  const Eigen::MatrixXd xi = standard_lhs(s, static_cast<std::size_t>(cfg.samples), cfg.seed, kSamplingStream,
                                          cfg.lhs_jitter);
  res.ed = evaluate_design(s, evaluate, xi, cfg.jobs);
  res.timing.t_ed = seconds_since(t_start);
  res.deterministic_solves = res.ed.size();
  res.ed_size = res.ed.size();
  res.ed_failures = res.ed.failures();
  const auto t0 = std::chrono::steady_clock::now();
  res.samples.resize(xi.rows(), 4);
  res.samples.leftCols(3) = res.ed.y;
  for (Eigen::Index r = 0; r < xi.rows(); ++r)
    res.samples(r, 3) = res.ed.y.row(r).minCoeff(); // NaN rows stay NaN
  for (int k = 0; k < 3; ++k)
    res.responses[k] = stats_of(res.samples.col(k));
  res.overall = stats_of(res.samples.col(3));
  res.timing.t_es = seconds_since(t0);
  res.timing.t_total = seconds_since(t_start);
  return res;
}

std::array<double, 4> confidence_adc(const StudyResult& r, double level) {
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("confidence level must lie in (0, 1)");
  std::array<double, 4> out{};
  for (int k = 0; k < 3; ++k)
    out[k] = empirical_quantile(r.responses[k].stats.sorted, 1.0 - level);
  out[3] = empirical_quantile(r.overall.stats.sorted, 1.0 - level);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

json response_to_json(const ResponseResult& r, double level) {
  json j;
  j["mean"] = r.stats.mean;
  j["variance"] = r.stats.variance;
  json q = json::array();
  for (const auto& [p, x] : r.stats.quantiles)
    q.push_back({p, x});
  j["quantiles"] = q;
  j["confidence_adc"] = empirical_quantile(r.stats.sorted, 1.0 - level);
  json cdf = json::array();
  for (std::size_t i = 0; i < r.stats.sorted.size(); ++i)
    cdf.push_back({r.stats.sorted[i], r.stats.positions[i]});
  j["cdf"] = cdf;
  if (r.pce)
    j["pce"] = pce_to_json(*r.pce);
  if (r.pce_moments)
    j["pce_moments"] = {{"mean", r.pce_moments->mean}, {"variance", r.pce_moments->variance}};
  return j;
}

ResponseResult response_from_json(const json& j) {
  ResponseResult r;
  r.stats.mean = j.at("mean").get<double>();
  r.stats.variance = j.at("variance").get<double>();
  for (const auto& q : j.at("quantiles"))
    r.stats.quantiles.emplace_back(q.at(0).get<double>(), q.at(1).get<double>());
  for (const auto& c : j.at("cdf")) {
    r.stats.sorted.push_back(c.at(0).get<double>());
    r.stats.positions.push_back(c.at(1).get<double>());
  }
  if (j.contains("pce"))
    r.pce = pce_from_json(j["pce"]);
  if (j.contains("pce_moments"))
    r.pce_moments = Moments{j["pce_moments"].at("mean").get<double>(), j["pce_moments"].at("variance").get<double>()};
  return r;
}

} // namespace

json timing_to_json(const StudyTiming& t) {
  return {{"t_ed", t.t_ed}, {"t_sc", t.t_sc}, {"t_es", t.t_es}, {"t_total", t.t_total}};
}

json study_result_to_json(const StudyResult& r, bool with_timing) {
  json j;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["converged"] = r.converged;
  j["confidence"] = r.confidence;
  j["inputs"] = r.labels;
  j["responses"] = json::object();
  for (int k = 0; k < 3; ++k)
    j["responses"][kResponseNames[k]] = response_to_json(r.responses[k], r.confidence);
  j["overall"] = response_to_json(r.overall, r.confidence);
  json hist = json::array();
  for (const auto& h : r.history) {
    json e;
    e["ed_size"] = h.ed_size;
    for (int k = 0; k < 3; ++k) {
      e["err_cloo"][kResponseNames[k]] = h.err_cloo[k];
      e["degree"][kResponseNames[k]] = h.degree[k];
    }
    hist.push_back(e);
  }
  j["ed"] = {{"size", r.ed_size},
             {"failures", r.ed_failures},
             {"deterministic_solves", r.deterministic_solves},
             {"history", hist}};
  if (with_timing)
    j["timing"] = timing_to_json(r.timing);
  return j;
}

StudyResult study_result_from_json(const json& j) {
  StudyResult r;
  try {
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.converged = j.at("converged").get<bool>();
    r.confidence = j.at("confidence").get<double>();
    r.labels = j.at("inputs").get<std::vector<std::string>>();
    for (int k = 0; k < 3; ++k)
      r.responses[k] = response_from_json(j.at("responses").at(kResponseNames[k]));
    r.overall = response_from_json(j.at("overall"));
    const json& ed = j.at("ed");
    r.deterministic_solves = ed.at("deterministic_solves").get<std::size_t>();
    r.ed_size = ed.at("size").get<std::size_t>();
    r.ed_failures = ed.at("failures").get<std::size_t>();
    for (const auto& e : ed.at("history")) {
      EnrichmentRecord h;
      h.ed_size = e.at("ed_size").get<std::size_t>();
      for (int k = 0; k < 3; ++k) {
        h.err_cloo[k] = e.at("err_cloo").at(kResponseNames[k]).get<double>();
        h.degree[k] = e.at("degree").at(kResponseNames[k]).get<int>();
      }
      r.history.push_back(h);
    }
    if (j.contains("timing")) {
      const json& t = j["timing"];
      r.timing = {t.at("t_ed").get<double>(), t.at("t_sc").get<double>(), t.at("t_es").get<double>(),
                  t.at("t_total").get<double>()};
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed study result: ") + e.what());
  }
  return r;
}

} // namespace padc
