#pragma once

// Unbalanced three-phase feeder data model, renewable power curves and the
// load-generation variation vector b(U).

#include <array>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "padc/dist.hpp"

namespace padc {

/// Phase index: 0 = a, 1 = b, 2 = c.
using PhaseSet = std::vector<int>;
using PhaseArray = std::array<double, 3>;

char phase_letter(int phase);

enum class BusKind { Slack, PQ, PV };

struct Bus {
  std::string id;
  PhaseSet phases;
  BusKind kind = BusKind::PQ;
  PhaseArray v0{1.0, 1.0, 1.0}; ///< slack magnitude / flat start (p.u.)
  double vmin = 0.90;
  double vmax = 1.10;
  double base_kv = 0.0; ///< line-to-line kV; 0 uses the feeder base
  PhaseArray v_set{1.0, 1.0, 1.0}; ///< PV regulated magnitude
  PhaseArray qmin_kvar{0.0, 0.0, 0.0};
  PhaseArray qmax_kvar{0.0, 0.0, 0.0};
  PhaseArray shunt_kvar{0.0, 0.0, 0.0}; ///< capacitor rating at 1 p.u.
  PhaseArray p_gen_kw{0.0, 0.0, 0.0};  ///< base-case generation
  PhaseArray dp_gen_kw{0.0, 0.0, 0.0}; ///< deterministic generation growth
};

struct Branch {
  std::string id;
  std::string from;
  std::string to;
  PhaseSet phases;
  Eigen::MatrixXcd z_ohm;   ///< series impedance over `phases`
  Eigen::MatrixXcd y_shunt; ///< total shunt admittance (S), split to both ends
  PhaseArray ampacity{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                      std::numeric_limits<double>::infinity()};
  PhaseArray tap{1.0, 1.0, 1.0}; ///< off-nominal ratio at the from end
  double base_kv = 0.0;          ///< kV the ohmic data refers to; 0 uses the to-bus base
};

enum class GrowthKind { None, Fixed, Normal };

struct Load {
  std::string id;
  std::string bus;
  int phase = 0;
  double p_kw = 0.0;
  double q_kvar = 0.0;
  PhaseArray zip{1.0, 0.0, 0.0}; ///< constant power, current, impedance shares
  GrowthKind growth = GrowthKind::None;
  double growth_mean_kw = 0.0; ///< mean of the growth increment
  double stdev_frac = 0.0;     ///< growth stdev as a fraction of its mean
  /// Loads naming the same input share one random growth variable, split in
  /// proportion to their means (e.g. the phases of a three-phase load).
  /// Empty: the load is its own input.
  std::string growth_input;
  /// Reactive growth per unit active growth (base power factor held).
  double q_per_p() const { return p_kw != 0.0 ? q_kvar / p_kw : 0.0; }
};

enum class ResKind { Wind, Solar };

struct ResUnit {
  std::string id;
  ResKind kind = ResKind::Wind;
  std::string bus;
  PhaseSet phases;
  double p_rated_kw = 0.0;
  double v_in = 0.0, v_rated = 0.0, v_out = 0.0;
  double pf = 0.85; ///< lagging: reactive output is positive
  double r_c = 0.0, r_std = 0.0;
  std::optional<Marginal> marginal;
};

enum class InputClass { Wind, Solar, Load };

std::string to_string(InputClass c);

/// One random input. Inputs are ordered wind units, solar units, then
/// stochastic loads, each in document order.
struct InputInfo {
  InputClass cls;
  std::size_t owner; ///< index into res, or the first member load
  std::vector<std::size_t> members; ///< loads driven by this input (load inputs only)
  std::string label;
  std::optional<Marginal> marginal; ///< set for loads and for units that carry their own law
};

struct FeederModel {
  std::string name;
  double base_mva = 1.0; ///< three-phase MVA
  double base_kv = 1.0;  ///< line-to-line kV
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Load> loads;
  std::vector<ResUnit> res;

  std::size_t bus_index(const std::string& id) const; ///< throws ValidationError
  double bus_base_kv(std::size_t bus) const;
  /// Per-phase base power in MVA.
  double phase_base_mva() const { return base_mva / 3.0; }
  std::vector<InputInfo> inputs() const;
  std::size_t input_count() const { return inputs().size(); }
};

/// (bus, phase) pair; the network unknowns are indexed by node.
struct Node {
  std::size_t bus;
  int phase;
};

/// Nodes in bus order, phases ascending within a bus.
std::vector<Node> node_list(const FeederModel& f);

/// Lists every schema and invariant violation; empty means valid.
std::vector<std::string> validate_feeder_document(const nlohmann::json& doc);

/// Parses and validates; throws ValidationError carrying all violations.
FeederModel parse_feeder(const nlohmann::json& doc);
FeederModel load_feeder(const std::string& path);

double wind_power(const ResUnit& unit, double v);
double wind_reactive(const ResUnit& unit, double p_kw);
double solar_power(const ResUnit& unit, double r);

struct VariationVector {
  Eigen::VectorXd p; ///< per node, p.u. of the per-phase base
  Eigen::VectorXd q;
  double p_norm1_mw = 0.0; ///< sum |p| in MW: lambda * this = delivered growth
  bool degenerate = false; ///< no active-power growth anywhere
};

/// b(U) for an input realization ordered as `inputs()`.
VariationVector build_variation_vector(const FeederModel& f, const Eigen::VectorXd& u);

} // namespace padc
