#pragma once

// Probabilistic ADC study: experimental design, adaptive sparse PCE per
// response, surrogate sampling, statistics and the LHS Monte Carlo baseline.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "padc/cpf.hpp"
#include "padc/dist.hpp"
#include "padc/feeder.hpp"
#include "padc/nataf.hpp"
#include "padc/spce.hpp"

namespace padc {

enum class StudyMode { Spce, Mcs, Both };

std::string to_string(StudyMode m);

/// Within-class and cross-class input correlations. Inputs of the same class
/// share one coefficient; an explicit matrix overrides the shorthand.
struct CorrelationSpec {
  double wind = 0.0, solar = 0.0, load = 0.0;
  double wind_solar = 0.0, wind_load = 0.0, solar_load = 0.0;
  std::optional<Eigen::MatrixXd> matrix;
};

struct StudyConfig {
  std::string feeder_path; ///< resolved against the config file's directory
  std::optional<Marginal> wind;  ///< for wind units without their own law
  std::optional<Marginal> solar; ///< for solar units without their own law
  CorrelationSpec correlation;
  int ed_size = 0;          ///< M_C
  int enrich_size = 0;      ///< Delta M_C; 0 selects the input count
  int max_enrichments = 5;
  int samples = 4000;       ///< M_S
  std::uint64_t seed = 1;
  SpceOptions spce;
  double confidence = 0.95;
  StudyMode mode = StudyMode::Spce;
  bool lhs_jitter = true;
  bool hermite_basis = false; ///< map every input to a standard normal
  bool degenerate = false;    ///< freeze every input at its mean
  int jobs = 0;               ///< 0: hardware concurrency
  ContinuationOptions cpf;
};

/// Every problem with a config document, without stopping at the first.
std::vector<std::string> validate_study_document(const nlohmann::json& doc);
/// Throws ValidationError listing every problem.
StudyConfig parse_study_config(const nlohmann::json& doc, const std::string& base_dir = ".");
StudyConfig load_study_config(const std::string& path);
nlohmann::json study_config_to_json(const StudyConfig& c);

/// The random-input model of a study in physical and standardized space.
struct StudySetup {
  std::vector<std::string> labels;
  std::vector<InputClass> classes;
  CorrelationModel cm;              ///< physical marginals and Nataf factor
  std::vector<Marginal> targets;    ///< standardized law of each xi
  std::vector<PolyBasis1D> bases;   ///< orthonormal w.r.t. targets, up to pmax
  std::size_t dim() const { return labels.size(); }
};

/// Input model from explicit marginals and correlations.
StudySetup make_setup(std::vector<std::string> labels, std::vector<InputClass> classes,
                      std::vector<Marginal> marginals, const Eigen::MatrixXd& rho, int max_degree,
                      bool hermite_basis = false);

/// Input model of a feeder under a config: unit marginals from the config
/// (or the unit), load marginals from the feeder, correlations per class.
StudySetup make_feeder_setup(const StudyConfig& cfg, const FeederModel& f);

/// Correlation matrix implied by the shorthand for the given input classes.
Eigen::MatrixXd correlation_matrix(const CorrelationSpec& spec, const std::vector<InputClass>& classes);

/// Physical inputs u for standardized samples xi (rows).
Eigen::MatrixXd standard_to_physical(const StudySetup& s, const Eigen::MatrixXd& xi);

/// Standardized LHS design: `count` rows of xi from stream `stream` of `seed`.
Eigen::MatrixXd standard_lhs(const StudySetup& s, std::size_t count, std::uint64_t seed, std::uint64_t stream,
                             bool jitter);

enum Response { VV = 0, TV = 1, VC = 2 };
inline constexpr std::array<const char*, 3> kResponseNames{"vv", "tv", "vc"};

/// Deterministic model: physical inputs -> (VV, TV, VC) in MW. Throws
/// padc::Error when the realization cannot be evaluated.
using Evaluator = std::function<std::array<double, 3>(const Eigen::VectorXd&)>;

/// Continuation-based evaluator for a feeder. The network is built once and
/// shared read-only.
Evaluator make_adc_evaluator(const FeederModel& f, const ContinuationOptions& opt = {});

/// Runs fn(0) .. fn(count-1) on up to `jobs` threads.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

struct EdArchive {
  Eigen::MatrixXd xi; ///< M x n
  Eigen::MatrixXd u;  ///< M x n
  Eigen::MatrixXd y;  ///< M x 3, NaN where the evaluation failed
  std::vector<char> ok;
  std::vector<std::string> errors; ///< message per failed row, empty otherwise
  std::size_t failures() const;
  std::size_t size() const { return ok.size(); }
  void append(const EdArchive& more);
  /// Successful rows only.
  EdSet response(Response r) const;
};

/// Evaluates `evaluate` on standardized samples. Throws ConvergenceError
/// when more than 10% of the rows fail.
EdArchive evaluate_design(const StudySetup& s, const Evaluator& evaluate, const Eigen::MatrixXd& xi, int jobs);

/// LHS experimental design of size M from the given seed stream.
EdArchive run_experimental_design(const StudyConfig& cfg, const StudySetup& s, const Evaluator& evaluate,
                                  std::size_t M, std::uint64_t stream = 1);

struct ResponseStats {
  double mean = 0.0;
  double variance = 0.0; ///< unbiased
  std::vector<double> sorted;
  std::vector<double> positions; ///< Hazen plotting positions (i - 0.5) / N
  std::vector<std::pair<double, double>> quantiles;
};

inline constexpr std::array<double, 7> kQuantileLevels{0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99};

/// Throws ValidationError for an empty sample set.
ResponseStats summarize_statistics(std::vector<double> samples);

/// Linear interpolation of sorted samples at Hazen positions, clamped to the
/// extreme samples.
double empirical_quantile(const std::vector<double>& sorted, double p);

struct ResponseResult {
  ResponseStats stats;
  std::optional<PceModel> pce;
  std::optional<Moments> pce_moments;
};

struct EnrichmentRecord {
  std::size_t ed_size = 0;
  std::array<double, 3> err_cloo{};
  std::array<int, 3> degree{};
};

struct StudyTiming {
  double t_ed = 0.0, t_sc = 0.0, t_es = 0.0, t_total = 0.0; ///< seconds
};

struct StudyResult {
  std::string method; ///< "spce" or "mcs"
  std::vector<std::string> labels;
  std::array<ResponseResult, 3> responses;
  ResponseResult overall;
  Eigen::MatrixXd samples; ///< M_S x 4: vv, tv, vc, overall
  EdArchive ed; ///< not part of the result document
  std::size_t ed_size = 0, ed_failures = 0;
  std::vector<EnrichmentRecord> history;
  bool converged = true;
  std::size_t deterministic_solves = 0;
  double confidence = 0.95;
  std::uint64_t seed = 0;
  StudyTiming timing;
};

/// Adaptive SPCE study: ED of size M_C, fit, enrich until every response's
/// corrected LOO error meets the target or the cap is hit, then M_S
/// surrogate samples from seed stream 100.
StudyResult run_adaptive_study(const StudyConfig& cfg, const StudySetup& s, const Evaluator& evaluate);

/// LHS Monte Carlo on the same M_S standardized samples the surrogate uses.
StudyResult run_mcs_baseline(const StudyConfig& cfg, const StudySetup& s, const Evaluator& evaluate);

/// Seed stream of the M_S sampling design, shared by both methods.
inline constexpr std::uint64_t kSamplingStream = 100;

/// The ADC deliverable with probability >= level: the (1 - level) quantile,
/// per response and overall (vv, tv, vc, overall).
std::array<double, 4> confidence_adc(const StudyResult& r, double level);

/// Result document; timings are left out unless `with_timing` so that reruns
/// are byte-identical.
nlohmann::json study_result_to_json(const StudyResult& r, bool with_timing = false);
/// Restores statistics, surrogates and bookkeeping from `study_result_to_json`.
StudyResult study_result_from_json(const nlohmann::json& j);
nlohmann::json timing_to_json(const StudyTiming& t);

} // namespace padc
