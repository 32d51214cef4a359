// padc: probabilistic available delivery capability from the command line.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "padc/cpf.hpp"
#include "padc/error.hpp"
#include "padc/feeder.hpp"
#include "padc/orthopoly.hpp"
#include "padc/study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace padc;

namespace {

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kNotConverged = 2;

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out)
    throw Error("cannot write '" + p.string() + "'");
  out << std::setprecision(17);
  return out;
}

json read_json(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in)
    throw ValidationError(std::string("cannot open ") + what + " file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string(what) + " file '" + path + "': " + e.what());
  }
}

// Physical input vector with every random input at its mean.
Eigen::VectorXd mean_inputs(const FeederModel& f, const StudyConfig* cfg) {
  const auto inputs = f.inputs();
  Eigen::VectorXd u(static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::optional<Marginal> m = inputs[i].marginal;
    if (!m && cfg)
      m = inputs[i].cls == InputClass::Wind ? cfg->wind : inputs[i].cls == InputClass::Solar ? cfg->solar : m;
    if (!m)
      throw ValidationError("input '" + inputs[i].label + "' has no marginal; pass --config with 'marginals'");
    u[static_cast<Eigen::Index>(i)] = m->moments().mean;
  }
  return u;
}

void write_ed_csv(const fs::path& p, const StudySetup& s, const EdArchive& ed) {
  auto out = open_out(p);
  out << "index";
  for (const auto& l : s.labels)
    out << ",xi_" << l;
  for (const auto& l : s.labels)
    out << ",u_" << l;
  out << ",vv,tv,vc,ok\n";
  for (std::size_t r = 0; r < ed.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    out << r;
    for (Eigen::Index k = 0; k < ed.xi.cols(); ++k)
      out << ',' << ed.xi(i, k);
    for (Eigen::Index k = 0; k < ed.u.cols(); ++k)
      out << ',' << ed.u(i, k);
    for (int k = 0; k < 3; ++k)
      out << ',' << ed.y(i, k);
    out << ',' << (ed.ok[r] ? 1 : 0) << '\n';
  }
}

void write_cdf_csv(const fs::path& p, const ResponseStats& st) {
  auto out = open_out(p);
  out << "adc_mw,p\n";
  for (std::size_t i = 0; i < st.sorted.size(); ++i)
    out << st.sorted[i] << ',' << st.positions[i] << '\n';
}

void write_result(const fs::path& dir, const StudySetup& s, const StudyResult& r, bool timing_inline) {
  auto out = open_out(dir / ("result_" + r.method + ".json"));
  out << study_result_to_json(r, timing_inline).dump(1) << '\n';
  for (int k = 0; k < 3; ++k)
    write_cdf_csv(dir / ("cdf_" + r.method + "_" + kResponseNames[k] + ".csv"), r.responses[k].stats);
  write_cdf_csv(dir / ("cdf_" + r.method + "_overall.csv"), r.overall.stats);
  write_ed_csv(dir / (r.method == "spce" ? "ed.csv" : "mcs_samples.csv"), s, r.ed);
}

void write_comparison(const fs::path& p, const StudyResult& mcs, const StudyResult& pce) {
  auto out = open_out(p);
  out << "response,mu_mcs,mu_spce,dmu_pct,var_mcs,var_spce,dvar_over_mu_pct\n";
  auto row = [&](const char* name, const ResponseStats& m, const ResponseStats& s) {
    out << name << ',' << m.mean << ',' << s.mean << ',' << 100.0 * (s.mean - m.mean) / m.mean << ',' << m.variance
        << ',' << s.variance << ',' << 100.0 * (s.variance - m.variance) / m.mean << '\n';
  };
  for (int k = 0; k < 3; ++k)
    row(kResponseNames[k], mcs.responses[k].stats, pce.responses[k].stats);
  row("overall", mcs.overall.stats, pce.overall.stats);
}

void print_summary(const StudyResult& r) {
  std::cout << std::fixed << std::setprecision(6);
  std::cout << r.method << ": " << r.deterministic_solves << " deterministic solves";
  if (r.method == "spce")
    std::cout << (r.converged ? ", converged" : ", error target not met");
  std::cout << '\n';
  const auto conf = confidence_adc(r, r.confidence);
  for (int k = 0; k < 4; ++k) {
    const ResponseStats& st = k < 3 ? r.responses[k].stats : r.overall.stats;
    std::cout << "  " << std::left << std::setw(8) << (k < 3 ? kResponseNames[k] : "overall") << std::right
              << " mean " << st.mean << " MW  variance " << st.variance << "  " << 100.0 * r.confidence
              << "% ADC " << conf[k] << " MW\n";
  }
  std::cout.unsetf(std::ios::floatfield);
}

struct RunArgs {
  std::string config, feeder, out = ".", mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  bool timing_inline = false;
  std::string dump_recurrence;
};

int cmd_run(const RunArgs& a) {
  StudyConfig cfg = load_study_config(a.config);
  if (!a.feeder.empty())
    cfg.feeder_path = a.feeder;
  if (const char* env = std::getenv("PADC_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ValidationError(std::string("PADC_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  if (a.seed)
    cfg.seed = *a.seed;
  if (a.jobs)
    cfg.jobs = *a.jobs;
  if (!a.mode.empty())
    cfg.mode = a.mode == "spce" ? StudyMode::Spce : a.mode == "mcs" ? StudyMode::Mcs : StudyMode::Both;

  const FeederModel f = load_feeder(cfg.feeder_path);
  const StudySetup s = make_feeder_setup(cfg, f);
  const Evaluator ev = make_adc_evaluator(f, cfg.cpf);
  fs::create_directories(a.out);
  if (s.cm.repair_distance > 0.0)
    std::cout << "correlation matrix repaired to positive definite (Frobenius distance " << s.cm.repair_distance
              << ")\n";
  if (!a.dump_recurrence.empty()) {
    json bases = json::object();
    for (std::size_t i = 0; i < s.dim(); ++i)
      bases[s.labels[i]] = basis_to_json(s.bases[i]);
    open_out(a.dump_recurrence) << bases.dump(1) << '\n';
  }

  json timing = json::object();
  std::optional<StudyResult> pce, mcs;
  if (cfg.mode != StudyMode::Mcs) {
    pce = run_adaptive_study(cfg, s, ev);
    write_result(a.out, s, *pce, a.timing_inline);
    timing["spce"] = timing_to_json(pce->timing);
    print_summary(*pce);
  }
  if (cfg.mode != StudyMode::Spce) {
    mcs = run_mcs_baseline(cfg, s, ev);
    write_result(a.out, s, *mcs, a.timing_inline);
    timing["mcs"] = timing_to_json(mcs->timing);
    print_summary(*mcs);
  }
  if (pce && mcs)
    write_comparison(fs::path(a.out) / "comparison.csv", *mcs, *pce);
  if (!a.timing_inline)
    open_out(fs::path(a.out) / "timing.json") << timing.dump(1) << '\n';
  return pce && !pce->converged ? kNotConverged : kOk;
}

int cmd_cpf(const std::string& feeder, const std::string& config, const std::string& pv_csv) {
  const FeederModel f = load_feeder(feeder);
  std::optional<StudyConfig> cfg;
  if (!config.empty())
    cfg = load_study_config(config);
  const NetworkModel net = build_network(f);
  const VariationVector b = build_variation_vector(f, mean_inputs(f, cfg ? &*cfg : nullptr));
  const ContinuationOptions opt = cfg ? cfg->cpf : ContinuationOptions{};
  const ContinuationTrace tr = trace_continuation(net, b, opt);
  const AdcTriple adc = extract_adc(net, b, tr, opt);
  std::cout << std::setprecision(6) << std::fixed;
  std::cout << "feeder " << (f.name.empty() ? feeder : f.name) << ": growth direction " << b.p_norm1_mw
            << " MW per unit lambda\n";
  std::cout << "  V.V. ADC " << adc.vv << " MW  (lambda " << adc.lambda_vv << ", binding " << adc.binding_vv << ")\n";
  std::cout << "  T.V. ADC " << adc.tv << " MW  (lambda " << adc.lambda_tv << ", binding " << adc.binding_tv << ")\n";
  std::cout << "  V.C. ADC " << adc.vc << " MW  (nose lambda " << adc.lambda_vc << ")\n";
  std::cout << "  overall  " << adc.overall << " MW  (binding " << adc.binding_overall << ")\n";
  for (const auto& e : tr.events)
    std::cout << "  event at lambda " << e.lambda << ": " << e.what << '\n';
  if (!pv_csv.empty()) {
    auto out = open_out(pv_csv);
    write_pv_curve(out, net, b, tr);
  }
  return kOk;
}

int cmd_pv_curve(const std::string& feeder, const std::string& config, const std::string& out_csv) {
  const FeederModel f = load_feeder(feeder);
  std::optional<StudyConfig> cfg;
  if (!config.empty())
    cfg = load_study_config(config);
  const NetworkModel net = build_network(f);
  const VariationVector b = build_variation_vector(f, mean_inputs(f, cfg ? &*cfg : nullptr));
  const ContinuationTrace tr = trace_continuation(net, b, cfg ? cfg->cpf : ContinuationOptions{});
  auto out = open_out(out_csv);
  write_pv_curve(out, net, b, tr);
  return kOk;
}

int cmd_validate(const std::string& config, const std::string& feeder) {
  std::vector<std::string> problems;
  std::optional<StudyConfig> cfg;
  std::string feeder_path = feeder;
  if (!config.empty()) {
    try {
      const json doc = read_json(config, "config");
      for (const auto& e : validate_study_document(doc))
        problems.push_back("config: " + e);
      if (problems.empty()) {
        const std::string dir = fs::path(config).parent_path().string();
        cfg = parse_study_config(doc, dir.empty() ? "." : dir);
        if (feeder_path.empty())
          feeder_path = cfg->feeder_path;
      }
    } catch (const Error& e) {
      problems.push_back(e.what());
    }
  }
  if (!feeder_path.empty()) {
    try {
      const json doc = read_json(feeder_path, "feeder");
      const auto errs = validate_feeder_document(doc);
      for (const auto& e : errs)
        problems.push_back("feeder: " + e);
      if (errs.empty() && cfg) {
        const FeederModel f = parse_feeder(doc);
        std::vector<InputClass> classes;
        for (const auto& in : f.inputs()) {
          classes.push_back(in.cls);
          if (!in.marginal && ((in.cls == InputClass::Wind && !cfg->wind) ||
                               (in.cls == InputClass::Solar && !cfg->solar)))
            problems.push_back("input '" + in.label + "' has no marginal");
        }
        try {
          correlation_matrix(cfg->correlation, classes);
        } catch (const Error& e) {
          problems.push_back(e.what());
        }
      }
    } catch (const Error& e) {
      problems.push_back(e.what());
    }
  }
  if (config.empty() && feeder_path.empty())
    problems.push_back("nothing to validate: give --config and/or --feeder");
  if (problems.empty()) {
    std::cout << "ok\n";
    return kOk;
  }
  for (const auto& p : problems)
    std::cout << p << '\n';
  return kError;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic available delivery capability of distribution feeders"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a probabilistic ADC study (surrogate and/or Monte Carlo)");
  run_cmd->add_option("--config,-c", run.config, "Study config (JSON)")->required();
  run_cmd->add_option("--feeder,-f", run.feeder, "Feeder document; overrides the config's feeder");
  run_cmd->add_option("--out,-o", run.out, "Output directory")->capture_default_str();
  run_cmd->add_option("--mode", run.mode, "spce, mcs or both; overrides the config")
      ->check(CLI::IsMember({"spce", "mcs", "both"}));
  run_cmd->add_option("--seed", run.seed, "Master seed; overrides PADC_SEED and the config");
  run_cmd->add_option("--jobs,-j", run.jobs, "Worker threads (0: all cores)");
  run_cmd->add_option("--dump-recurrence", run.dump_recurrence,
                      "Write the recurrence coefficients of every input's basis to this JSON file");
  run_cmd->add_flag("--timing-inline", run.timing_inline, "Put timings in the result JSON instead of timing.json");

  std::string cpf_feeder, cpf_config, cpf_pv;
  auto* cpf_cmd = app.add_subcommand("cpf", "Deterministic continuation at mean inputs; prints the three ADCs");
  cpf_cmd->add_option("--feeder,-f", cpf_feeder, "Feeder document")->required();
  cpf_cmd->add_option("--config,-c", cpf_config, "Study config supplying wind/solar marginals");
  cpf_cmd->add_option("--pv-curve", cpf_pv, "Write the P-V trace to this CSV");

  std::string val_config, val_feeder;
  auto* val_cmd = app.add_subcommand("validate", "Check a config and/or feeder without computing");
  val_cmd->add_option("--config,-c", val_config, "Study config");
  val_cmd->add_option("--feeder,-f", val_feeder, "Feeder document; defaults to the config's feeder");

  std::string pv_feeder, pv_config, pv_out;
  auto* pv_cmd = app.add_subcommand("pv-curve", "Write the P-V trace at mean inputs as CSV");
  pv_cmd->add_option("--feeder,-f", pv_feeder, "Feeder document")->required();
  pv_cmd->add_option("--config,-c", pv_config, "Study config supplying wind/solar marginals");
  pv_cmd->add_option("--out,-o", pv_out, "Output CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd)
      return cmd_run(run);
    if (*cpf_cmd)
      return cmd_cpf(cpf_feeder, cpf_config, cpf_pv);
    if (*val_cmd)
      return cmd_validate(val_config, val_feeder);
    if (*pv_cmd)
      return cmd_pv_curve(pv_feeder, pv_config, pv_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kError;
  }
  return kError;
}
