#pragma once

// Three-phase Newton power flow, continuation tracing and ADC extraction.

#include <complex>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "padc/feeder.hpp"

namespace padc {

using SparseYbus = Eigen::SparseMatrix<std::complex<double>>;

/// Per-unit admittance matrix over `node_list(f)`. Throws ValidationError
/// for a branch with a singular impedance matrix.
SparseYbus assemble_ybus(const FeederModel& f);

struct BranchPhase {
  std::size_t branch;
  int phase;
  Eigen::Index from_node;
  Eigen::Index to_node;
};

/// Everything the solver needs, derived once from a feeder.
struct NetworkModel {
  std::vector<Node> nodes;
  std::vector<std::string> node_labels; ///< "bus.phase"
  SparseYbus ybus;
  Eigen::MatrixXcd Y; ///< dense copy of ybus
  std::vector<char> is_slack;
  std::vector<char> is_pv;
  Eigen::VectorXcd v_slack; ///< complex slack voltages (zero elsewhere)
  Eigen::VectorXd v_start;  ///< flat-start magnitudes
  Eigen::VectorXd angle_start;
  Eigen::VectorXd v_set, q_min, q_max; ///< PV data (p.u.)
  Eigen::VectorXd p_gen;               ///< base generation (p.u.)
  // ZIP load per node: P(V) = p_load.col(0) + p_load.col(1) V + p_load.col(2) V^2
  Eigen::MatrixXd p_load, q_load;
  Eigen::VectorXd vmin, vmax;
  // Branch series elements, for current checks
  struct BranchData {
    std::string id;
    std::vector<Eigen::Index> from, to; ///< node per branch phase
    PhaseSet phases;
    Eigen::MatrixXcd ys;   ///< series admittance (p.u.)
    Eigen::VectorXd tap;
    Eigen::VectorXd ampacity; ///< A
    double i_base = 1.0;      ///< A per p.u.
  };
  std::vector<BranchData> branches;
  double phase_base_mva = 1.0;
};

NetworkModel build_network(const FeederModel& f);

struct PowerFlowState {
  Eigen::VectorXd theta; ///< per node (rad)
  Eigen::VectorXd vm;    ///< per node (p.u.)
  Eigen::VectorXd qg;    ///< generator reactive output at PV nodes (p.u.)
  std::vector<char> switched; ///< PV node held at a reactive limit
  double lambda = 0.0;
  int iterations = 0;
};

struct SolverOptions {
  double tol = 1e-8;
  int max_iter = 25;
  int max_mode_switches = 10;
};

/// Newton solve of f(x) - lambda b = 0 with PV-to-PQ switching. Throws
/// ConvergenceError on failure.
PowerFlowState solve_power_flow(const NetworkModel& net, const VariationVector& b, double lambda,
                                const PowerFlowState* warm = nullptr, const SolverOptions& opt = {});

/// Largest absolute P/Q mismatch of a state (p.u.).
double max_mismatch(const NetworkModel& net, const VariationVector& b, const PowerFlowState& s);

/// Branch series currents (A) per branch phase, aligned with net.branches.
std::vector<Eigen::VectorXd> branch_currents(const NetworkModel& net, const PowerFlowState& s);

struct TraceEvent {
  double lambda;
  std::string what;
};

struct ContinuationOptions {
  double max_step = 0.05;     ///< normalized lambda
  double arc_switch = 0.2;    ///< |d lambda / ds| threshold
  double nose_tol = 1e-4;     ///< normalized lambda bracket
  double max_lambda = 1000.0; ///< normalized; guard for directions without a nose
  int max_points = 5000;
  SolverOptions solver;
};

struct ContinuationTrace {
  std::vector<PowerFlowState> points; ///< upper branch, lambda increasing, then a few post-nose points
  std::size_t peak = 0;               ///< index of the highest stored lambda
  double nose_lambda = 0.0;
  bool nose_found = false;
  double scale = 1.0; ///< normalized lambda = lambda * scale
  std::vector<TraceEvent> events;
};

/// Predictor-corrector trace from lambda = 0 past the nose. Throws
/// ValidationError for a degenerate direction, ConvergenceError when the base
/// case has no solution.
ContinuationTrace trace_continuation(const NetworkModel& net, const VariationVector& b,
                                     const ContinuationOptions& opt = {});

struct AdcTriple {
  double vv = 0.0, tv = 0.0, vc = 0.0, overall = 0.0; ///< MW of growth along b
  double lambda_vv = 0.0, lambda_tv = 0.0, lambda_vc = 0.0;
  std::string binding_vv, binding_tv, binding_overall;
};

/// Limit crossings on the upper branch, refined by regula falsi on warm
/// started power flows. A limit never reached is reported at the nose.
AdcTriple extract_adc(const NetworkModel& net, const VariationVector& b, const ContinuationTrace& trace,
                      const ContinuationOptions& opt = {});

/// Convenience: trace and extract for one direction.
AdcTriple compute_adc(const NetworkModel& net, const VariationVector& b, const ContinuationOptions& opt = {});

/// P-V curve CSV: lambda, MW, then one magnitude column per node.
void write_pv_curve(std::ostream& os, const NetworkModel& net, const VariationVector& b,
                    const ContinuationTrace& trace);

} // namespace padc
