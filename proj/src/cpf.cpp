#include "padc/cpf.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "padc/error.hpp"

namespace padc {

namespace {

using cd = std::complex<double>;
constexpr double kTwoPiThird = 2.0 * std::numbers::pi / 3.0;

struct Layout {
  std::vector<Eigen::Index> ang; ///< nodes with an angle unknown / P equation
  std::vector<Eigen::Index> mag; ///< nodes with a magnitude unknown / Q equation
  Eigen::Index size() const { return static_cast<Eigen::Index>(ang.size() + mag.size()); }
};

Layout make_layout(const NetworkModel& net, const std::vector<char>& switched) {
  Layout l;
  const Eigen::Index n = static_cast<Eigen::Index>(net.nodes.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (net.is_slack[i])
      continue;
    l.ang.push_back(i);
    if (!net.is_pv[i] || switched[i])
      l.mag.push_back(i);
  }
  return l;
}

Eigen::VectorXcd voltages(const PowerFlowState& s) {
  Eigen::VectorXcd v(s.vm.size());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v[i] = std::polar(s.vm[i], s.theta[i]);
  return v;
}

double zip_value(const Eigen::MatrixXd& m, Eigen::Index i, double v) {
  return m(i, 0) + m(i, 1) * v + m(i, 2) * v * v;
}

double zip_slope(const Eigen::MatrixXd& m, Eigen::Index i, double v) { return m(i, 1) + 2.0 * m(i, 2) * v; }

// Mismatch of the equations in `l`: computed injection minus specified injection.
Eigen::VectorXd residual(const NetworkModel& net, const VariationVector& b, double lambda, const PowerFlowState& s,
                         const Layout& l, Eigen::VectorXcd* s_out = nullptr) {
  const Eigen::VectorXcd v = voltages(s);
  const Eigen::VectorXcd i = net.Y * v;
  const Eigen::VectorXcd sc = v.cwiseProduct(i.conjugate());
  Eigen::VectorXd f(l.size());
  Eigen::Index r = 0;
  for (Eigen::Index k : l.ang)
    f[r++] = sc[k].real() - (net.p_gen[k] - zip_value(net.p_load, k, s.vm[k]) + lambda * b.p[k]);
  for (Eigen::Index k : l.mag) {
    const double qg = net.is_pv[k] ? s.qg[k] : 0.0;
    f[r++] = sc[k].imag() - (qg - zip_value(net.q_load, k, s.vm[k]) + lambda * b.q[k]);
  }
  if (s_out)
    *s_out = sc;
  return f;
}

// d(residual)/d(unknowns) and d(residual)/d(lambda).
void jacobian(const NetworkModel& net, const VariationVector& b, const PowerFlowState& s, const Layout& l,
              Eigen::MatrixXd& J, Eigen::VectorXd& f_lambda) {
  const Eigen::Index n = static_cast<Eigen::Index>(net.nodes.size());
  const Eigen::VectorXcd v = voltages(s);
  const Eigen::VectorXcd cur = net.Y * v;
  Eigen::VectorXcd vn(n);
  for (Eigen::Index k = 0; k < n; ++k)
    vn[k] = v[k] / s.vm[k];
  const Eigen::Index na = static_cast<Eigen::Index>(l.ang.size());
  const Eigen::Index nm = static_cast<Eigen::Index>(l.mag.size());
  J.setZero(na + nm, na + nm);
  f_lambda.resize(na + nm);

  // dS_i/dtheta_j = j V_i conj(delta_ij I_i - Y_ij V_j); dS_i/dV_j = V_i conj(Y_ij vn_j) + delta_ij conj(I_i) vn_i
  auto ds_dtheta = [&](Eigen::Index i, Eigen::Index j) {
    cd val = -v[i] * std::conj(net.Y(i, j) * v[j]);
    if (i == j)
      val += v[i] * std::conj(cur[i]);
    return cd(0.0, 1.0) * val;
  };
  auto ds_dvm = [&](Eigen::Index i, Eigen::Index j) {
    cd val = v[i] * std::conj(net.Y(i, j) * vn[j]);
    if (i == j)
      val += std::conj(cur[i]) * vn[i];
    return val;
  };
  for (Eigen::Index r = 0; r < na; ++r) {
    const Eigen::Index i = l.ang[r];
    for (Eigen::Index c = 0; c < na; ++c)
      J(r, c) = ds_dtheta(i, l.ang[c]).real();
    for (Eigen::Index c = 0; c < nm; ++c) {
      const Eigen::Index j = l.mag[c];
      J(r, na + c) = ds_dvm(i, j).real() + (i == j ? zip_slope(net.p_load, i, s.vm[i]) : 0.0);
    }
    f_lambda[r] = -b.p[i];
  }
  for (Eigen::Index r = 0; r < nm; ++r) {
    const Eigen::Index i = l.mag[r];
    for (Eigen::Index c = 0; c < na; ++c)
      J(na + r, c) = ds_dtheta(i, l.ang[c]).imag();
    for (Eigen::Index c = 0; c < nm; ++c) {
      const Eigen::Index j = l.mag[c];
      J(na + r, na + c) = ds_dvm(i, j).imag() + (i == j ? zip_slope(net.q_load, i, s.vm[i]) : 0.0);
    }
    f_lambda[na + r] = -b.q[i];
  }
}

void apply_step(PowerFlowState& s, const Layout& l, const Eigen::VectorXd& dx) {
  const Eigen::Index na = static_cast<Eigen::Index>(l.ang.size());
  for (Eigen::Index r = 0; r < na; ++r)
    s.theta[l.ang[r]] += dx[r];
  for (std::size_t r = 0; r < l.mag.size(); ++r)
    s.vm[l.mag[r]] += dx[na + static_cast<Eigen::Index>(r)];
}

bool sane(const PowerFlowState& s) {
  return s.vm.allFinite() && s.theta.allFinite() && (s.vm.array() > 1e-6).all() && (s.vm.array() < 1e3).all();
}

// Plain Newton at fixed lambda with fixed modes. Returns true on convergence.
bool newton(const NetworkModel& net, const VariationVector& b, double lambda, PowerFlowState& s,
            const SolverOptions& opt) {
  const Layout l = make_layout(net, s.switched);
  Eigen::MatrixXd J;
  Eigen::VectorXd fl;
  for (int it = 0;; ++it) {
    const Eigen::VectorXd f = residual(net, b, lambda, s, l);
    if (!f.allFinite())
      return false;
    if (f.size() == 0 || f.cwiseAbs().maxCoeff() < opt.tol) {
      s.iterations += it;
      return true;
    }
    if (it == opt.max_iter)
      return false;
    jacobian(net, b, s, l, J, fl);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
    const Eigen::VectorXd dx = lu.solve(-f);
    if (!dx.allFinite())
      return false;
    apply_step(s, l, dx);
    if (!sane(s))
      return false;
  }
}

// Generator reactive output at PV nodes implied by the state.
void update_qg(const NetworkModel& net, const VariationVector& b, double lambda, PowerFlowState& s) {
  const Eigen::VectorXcd v = voltages(s);
  const Eigen::VectorXcd sc = v.cwiseProduct((net.Y * v).conjugate());
  for (Eigen::Index k = 0; k < sc.size(); ++k)
    if (net.is_pv[k] && !s.switched[k])
      s.qg[k] = sc[k].imag() + zip_value(net.q_load, k, s.vm[k]) - lambda * b.q[k];
}

// Switches PV nodes whose reactive output left its band. Returns the nodes switched.
std::vector<Eigen::Index> enforce_q_limits(const NetworkModel& net, PowerFlowState& s) {
  std::vector<Eigen::Index> hit;
  for (Eigen::Index k = 0; k < s.qg.size(); ++k) {
    if (!net.is_pv[k] || s.switched[k])
      continue;
    if (s.qg[k] > net.q_max[k] + 1e-9) {
      s.qg[k] = net.q_max[k];
      s.switched[k] = 1;
      hit.push_back(k);
    } else if (s.qg[k] < net.q_min[k] - 1e-9) {
      s.qg[k] = net.q_min[k];
      s.switched[k] = 1;
      hit.push_back(k);
    }
  }
  return hit;
}

PowerFlowState flat_start(const NetworkModel& net) {
  PowerFlowState s;
  s.vm = net.v_start;
  s.theta = net.angle_start;
  s.qg = Eigen::VectorXd::Zero(s.vm.size());
  s.switched.assign(net.nodes.size(), 0);
  return s;
}

VariationVector scaled(const VariationVector& b, double factor) {
  VariationVector out = b;
  out.p *= factor;
  out.q *= factor;
  return out;
}

PowerFlowState lerp(const PowerFlowState& a, const PowerFlowState& b, double t) {
  PowerFlowState s = a;
  s.theta = (1.0 - t) * a.theta + t * b.theta;
  s.vm = (1.0 - t) * a.vm + t * b.vm;
  s.iterations = 0;
  return s;
}

// Full-space vector (theta, vm, lambda) of a state.
Eigen::VectorXd full_vector(const PowerFlowState& s) {
  const Eigen::Index n = s.vm.size();
  Eigen::VectorXd y(2 * n + 1);
  y << s.theta, s.vm, s.lambda;
  return y;
}

// Tangent in full space from [J f_l; row^T] z = [0; 1], unit length.
Eigen::VectorXd tangent(const NetworkModel& net, const VariationVector& b, const PowerFlowState& s,
                        const Eigen::VectorXd& prev) {
  const Layout l = make_layout(net, s.switched);
  Eigen::MatrixXd J;
  Eigen::VectorXd fl;
  jacobian(net, b, s, l, J, fl);
  const Eigen::Index m = l.size();
  const Eigen::Index n = s.vm.size();
  const Eigen::Index na = static_cast<Eigen::Index>(l.ang.size());
  Eigen::MatrixXd A(m + 1, m + 1);
  A.topLeftCorner(m, m) = J;
  A.topRightCorner(m, 1) = fl;
  for (Eigen::Index r = 0; r < na; ++r)
    A(m, r) = prev[l.ang[r]];
  for (std::size_t r = 0; r < l.mag.size(); ++r)
    A(m, na + static_cast<Eigen::Index>(r)) = prev[n + l.mag[r]];
  A(m, m) = prev[2 * n];
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 1);
  rhs[m] = 1.0;
  const Eigen::VectorXd z = A.partialPivLu().solve(rhs);
  Eigen::VectorXd t = Eigen::VectorXd::Zero(2 * n + 1);
  for (Eigen::Index r = 0; r < na; ++r)
    t[l.ang[r]] = z[r];
  for (std::size_t r = 0; r < l.mag.size(); ++r)
    t[n + l.mag[r]] = z[na + static_cast<Eigen::Index>(r)];
  t[2 * n] = z[m];
  return t / t.norm();
}

// Pseudo-arclength corrector: F = 0 and T^T (y - y_pred) = 0.
bool arc_corrector(const NetworkModel& net, const VariationVector& b, PowerFlowState& s, const Eigen::VectorXd& T,
                   const Eigen::VectorXd& y_pred, const SolverOptions& opt) {
  const Layout l = make_layout(net, s.switched);
  const Eigen::Index m = l.size();
  const Eigen::Index n = s.vm.size();
  const Eigen::Index na = static_cast<Eigen::Index>(l.ang.size());
  Eigen::MatrixXd J, A(m + 1, m + 1);
  Eigen::VectorXd fl, g(m + 1);
  for (int it = 0;; ++it) {
    const Eigen::VectorXd f = residual(net, b, s.lambda, s, l);
    const double arc = T.dot(full_vector(s) - y_pred);
    if (!f.allFinite())
      return false;
    if (f.cwiseAbs().maxCoeff() < opt.tol && std::abs(arc) < opt.tol) {
      s.iterations += it;
      return true;
    }
    if (it == opt.max_iter)
      return false;
    jacobian(net, b, s, l, J, fl);
    A.topLeftCorner(m, m) = J;
    A.topRightCorner(m, 1) = fl;
    for (Eigen::Index r = 0; r < na; ++r)
      A(m, r) = T[l.ang[r]];
    for (std::size_t r = 0; r < l.mag.size(); ++r)
      A(m, na + static_cast<Eigen::Index>(r)) = T[n + l.mag[r]];
    A(m, m) = T[2 * n];
    g << f, arc;
    const Eigen::VectorXd d = A.partialPivLu().solve(-g);
    if (!d.allFinite())
      return false;
    apply_step(s, l, d.head(m));
    s.lambda += d[m];
    if (!sane(s))
      return false;
  }
}

struct Segment {
  double lambda;
  std::string element;
};

} // namespace

SparseYbus assemble_ybus(const FeederModel& f) {
  const std::vector<Node> nodes = node_list(f);
  std::map<std::pair<std::size_t, int>, Eigen::Index> at;
  for (std::size_t k = 0; k < nodes.size(); ++k)
    at[{nodes[k].bus, nodes[k].phase}] = static_cast<Eigen::Index>(k);
  const Eigen::Index n = static_cast<Eigen::Index>(nodes.size());
  std::vector<Eigen::Triplet<cd>> trip;

  for (const Branch& br : f.branches) {
    const std::size_t fb = f.bus_index(br.from), tb = f.bus_index(br.to);
    const double kv = br.base_kv > 0.0 ? br.base_kv : f.bus_base_kv(tb);
    const double zb = kv * kv / f.base_mva;
    const Eigen::MatrixXcd z = br.z_ohm / zb;
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(z);
    if (!lu.isInvertible() || lu.rcond() < 1e-14)
      throw ValidationError("branch '" + br.id + "': series impedance matrix is singular");
    const Eigen::MatrixXcd ys = lu.inverse();
    const Eigen::MatrixXcd ysh = br.y_shunt * zb * 0.5;
    const Eigen::Index d = static_cast<Eigen::Index>(br.phases.size());
    Eigen::VectorXd a(d);
    for (Eigen::Index k = 0; k < d; ++k)
      a[k] = br.tap[br.phases[k]];
    const Eigen::MatrixXcd yff = a.asDiagonal() * ys * a.asDiagonal() + ysh;
    const Eigen::MatrixXcd yft = -(a.asDiagonal() * ys);
    const Eigen::MatrixXcd ytf = -(ys * a.asDiagonal());
    const Eigen::MatrixXcd ytt = ys + ysh;
    for (Eigen::Index r = 0; r < d; ++r) {
      const Eigen::Index fr = at.at({fb, br.phases[r]}), tr = at.at({tb, br.phases[r]});
      for (Eigen::Index c = 0; c < d; ++c) {
        const Eigen::Index fc = at.at({fb, br.phases[c]}), tc = at.at({tb, br.phases[c]});
        trip.emplace_back(fr, fc, yff(r, c));
        trip.emplace_back(fr, tc, yft(r, c));
        trip.emplace_back(tr, fc, ytf(r, c));
        trip.emplace_back(tr, tc, ytt(r, c));
      }
    }
  }
  for (std::size_t b = 0; b < f.buses.size(); ++b)
    for (int p : f.buses[b].phases)
      if (f.buses[b].shunt_kvar[p] != 0.0) {
        const Eigen::Index k = at.at({b, p});
        trip.emplace_back(k, k, cd(0.0, f.buses[b].shunt_kvar[p] / 1000.0 / f.phase_base_mva()));
      }
  SparseYbus y(n, n);
  y.setFromTriplets(trip.begin(), trip.end());
  return y;
}

NetworkModel build_network(const FeederModel& f) {
  NetworkModel net;
  net.nodes = node_list(f);
  const Eigen::Index n = static_cast<Eigen::Index>(net.nodes.size());
  std::map<std::pair<std::size_t, int>, Eigen::Index> at;
  for (Eigen::Index k = 0; k < n; ++k) {
    at[{net.nodes[k].bus, net.nodes[k].phase}] = k;
    net.node_labels.push_back(f.buses[net.nodes[k].bus].id + "." + phase_letter(net.nodes[k].phase));
  }
  net.ybus = assemble_ybus(f);
  net.Y = Eigen::MatrixXcd(net.ybus);
  net.phase_base_mva = f.phase_base_mva();
  const double kw = 1.0 / (1000.0 * net.phase_base_mva);

  net.is_slack.assign(n, 0);
  net.is_pv.assign(n, 0);
  net.v_slack = Eigen::VectorXcd::Zero(n);
  net.v_start.resize(n);
  net.angle_start.resize(n);
  net.v_set = Eigen::VectorXd::Ones(n);
  net.q_min = Eigen::VectorXd::Zero(n);
  net.q_max = Eigen::VectorXd::Zero(n);
  net.p_gen = Eigen::VectorXd::Zero(n);
  net.p_load = Eigen::MatrixXd::Zero(n, 3);
  net.q_load = Eigen::MatrixXd::Zero(n, 3);
  net.vmin.resize(n);
  net.vmax.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Bus& bus = f.buses[net.nodes[k].bus];
    const int p = net.nodes[k].phase;
    const double ang = -kTwoPiThird * p;
    net.angle_start[k] = std::remainder(ang, 2.0 * std::numbers::pi);
    net.v_start[k] = bus.v0[p];
    net.vmin[k] = bus.vmin;
    net.vmax[k] = bus.vmax;
    net.p_gen[k] = bus.p_gen_kw[p] * kw;
    if (bus.kind == BusKind::Slack) {
      net.is_slack[k] = 1;
      net.v_slack[k] = std::polar(bus.v0[p], net.angle_start[k]);
    } else if (bus.kind == BusKind::PV) {
      net.is_pv[k] = 1;
      net.v_set[k] = bus.v_set[p];
      net.v_start[k] = bus.v_set[p];
      net.q_min[k] = bus.qmin_kvar[p] * kw;
      net.q_max[k] = bus.qmax_kvar[p] * kw;
    }
  }
  for (const Load& ld : f.loads) {
    const Eigen::Index k = at.at({f.bus_index(ld.bus), ld.phase});
    for (int c = 0; c < 3; ++c) {
      net.p_load(k, c) += ld.p_kw * kw * ld.zip[c];
      net.q_load(k, c) += ld.q_kvar * kw * ld.zip[c];
    }
  }
  for (const Branch& br : f.branches) {
    NetworkModel::BranchData bd;
    bd.id = br.id;
    bd.phases = br.phases;
    const std::size_t fb = f.bus_index(br.from), tb = f.bus_index(br.to);
    const double kv = br.base_kv > 0.0 ? br.base_kv : f.bus_base_kv(tb);
    const double zb = kv * kv / f.base_mva;
    bd.ys = (br.z_ohm / zb).inverse();
    const Eigen::Index d = static_cast<Eigen::Index>(br.phases.size());
    bd.tap.resize(d);
    bd.ampacity.resize(d);
    for (Eigen::Index c = 0; c < d; ++c) {
      bd.from.push_back(at.at({fb, br.phases[c]}));
      bd.to.push_back(at.at({tb, br.phases[c]}));
      bd.tap[c] = br.tap[br.phases[c]];
      bd.ampacity[c] = br.ampacity[br.phases[c]];
    }
    // per-phase base current: S_phase / V_phase
    bd.i_base = net.phase_base_mva * 1e6 / (kv * 1e3 / std::sqrt(3.0));
    net.branches.push_back(std::move(bd));
  }
  return net;
}

PowerFlowState solve_power_flow(const NetworkModel& net, const VariationVector& b, double lambda,
                                const PowerFlowState* warm, const SolverOptions& opt) {
  PowerFlowState s = warm ? *warm : flat_start(net);
  s.lambda = lambda;
  s.iterations = 0;
  for (Eigen::Index k = 0; k < s.vm.size(); ++k) {
    if (net.is_slack[k]) {
      s.vm[k] = std::abs(net.v_slack[k]);
      s.theta[k] = std::arg(net.v_slack[k]);
    } else if (net.is_pv[k] && !s.switched[k]) {
      s.vm[k] = net.v_set[k];
    }
  }
  for (int round = 0;; ++round) {
    if (!newton(net, b, lambda, s, opt))
      throw ConvergenceError("power flow did not converge at lambda = " + std::to_string(lambda));
    update_qg(net, b, lambda, s);
    if (enforce_q_limits(net, s).empty())
      return s;
    if (round + 1 >= opt.max_mode_switches)
      throw ConvergenceError("reactive-limit switching did not settle at lambda = " + std::to_string(lambda));
  }
}

double max_mismatch(const NetworkModel& net, const VariationVector& b, const PowerFlowState& s) {
  const Eigen::VectorXd f = residual(net, b, s.lambda, s, make_layout(net, s.switched));
  return f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
}

std::vector<Eigen::VectorXd> branch_currents(const NetworkModel& net, const PowerFlowState& s) {
  const Eigen::VectorXcd v = voltages(s);
  std::vector<Eigen::VectorXd> out;
  out.reserve(net.branches.size());
  for (const auto& bd : net.branches) {
    const Eigen::Index d = static_cast<Eigen::Index>(bd.phases.size());
    Eigen::VectorXcd drop(d);
    for (Eigen::Index c = 0; c < d; ++c)
      drop[c] = bd.tap[c] * v[bd.from[c]] - v[bd.to[c]];
    out.push_back((bd.ys * drop).cwiseAbs() * bd.i_base);
  }
  return out;
}

ContinuationTrace trace_continuation(const NetworkModel& net, const VariationVector& b,
                                     const ContinuationOptions& opt) {
  if (b.degenerate)
    throw ValidationError("degenerate direction: the variation vector has no active-power growth");
  ContinuationTrace tr;
  tr.scale = b.p.cwiseAbs().sum();
  const VariationVector bh = scaled(b, 1.0 / tr.scale);

  PowerFlowState cur;
  try {
    cur = solve_power_flow(net, bh, 0.0, nullptr, opt.solver);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(std::string("base case (lambda = 0) has no solution: ") + e.what());
  }
  std::vector<PowerFlowState> pts{cur};
  std::vector<double> arc{0.0};
  const Eigen::Index n = cur.vm.size();
  for (Eigen::Index k = 0; k < n; ++k)
    if (cur.switched[k])
      tr.events.push_back({0.0, "reactive limit at " + net.node_labels[k]});

  auto record_switches = [&](const PowerFlowState& before, const PowerFlowState& after) {
    for (Eigen::Index k = 0; k < n; ++k)
      if (after.switched[k] && !before.switched[k])
        tr.events.push_back({after.lambda / tr.scale, "reactive limit at " + net.node_labels[k]});
  };

  bool arc_mode = false;
  double h = opt.max_step;
  Eigen::VectorXd T;
  constexpr double kMinNatural = 0.05;
  constexpr double kMinArc = 1e-9;

  // Natural parameterization while the curve is far from the nose.
  while (!arc_mode) {
    if (cur.lambda >= opt.max_lambda || static_cast<int>(pts.size()) >= opt.max_points)
      break;
    Eigen::VectorXd zero_row = Eigen::VectorXd::Zero(2 * n + 1);
    zero_row[2 * n] = 1.0;
    T = tangent(net, bh, cur, zero_row);
    if (std::abs(T[2 * n]) < opt.arc_switch) {
      arc_mode = true;
      break;
    }
    const Eigen::VectorXd dxdl = T / T[2 * n];
    PowerFlowState pred = cur;
    pred.theta += h * dxdl.head(n);
    pred.vm += h * dxdl.segment(n, n);
    try {
      PowerFlowState next = solve_power_flow(net, bh, cur.lambda + h, &pred, opt.solver);
      // A corrector that lands far from its predictor has left the branch.
      const double moved = (next.vm - pred.vm).cwiseAbs().maxCoeff();
      const double stepped = (pred.vm - cur.vm).cwiseAbs().maxCoeff();
      if (moved > 0.5 * stepped + 1e-4)
        throw ConvergenceError("corrector left the branch");
      record_switches(cur, next);
      arc.push_back(arc.back() + (full_vector(next) - full_vector(cur)).norm());
      pts.push_back(next);
      cur = next;
      h = std::min(opt.max_step, 2.0 * h);
    } catch (const ConvergenceError&) {
      h *= 0.5;
      if (h < kMinNatural * opt.max_step)
        arc_mode = true;
    }
  }

  // Pseudo-arclength through the nose.
  if (arc_mode) {
    h = std::max(h, 1e-3);
    h = std::min(h, opt.max_step);
    while (!tr.nose_found && static_cast<int>(pts.size()) < opt.max_points && cur.lambda < opt.max_lambda) {
      const Eigen::VectorXd y_pred = full_vector(cur) + h * T;
      PowerFlowState next = cur;
      next.theta = y_pred.head(n);
      next.vm = y_pred.segment(n, n);
      next.lambda = y_pred[2 * n];
      next.iterations = 0;
      bool ok = arc_corrector(net, bh, next, T, y_pred, opt.solver) &&
                (full_vector(next) - y_pred).norm() <= 0.5 * h + 1e-6;
      if (ok) {
        update_qg(net, bh, next.lambda, next);
        for (int round = 0; ok && !enforce_q_limits(net, next).empty(); ++round) {
          ok = round < opt.solver.max_mode_switches && arc_corrector(net, bh, next, T, y_pred, opt.solver);
          if (ok)
            update_qg(net, bh, next.lambda, next);
        }
      }
      if (!ok) {
        h *= 0.5;
        if (h < kMinArc)
          throw ConvergenceError("continuation stalled at lambda = " + std::to_string(cur.lambda / tr.scale));
        continue;
      }
      if (next.lambda < cur.lambda) {
        const bool tight = cur.lambda - next.lambda < opt.nose_tol && h <= 1e-3;
        if (!tight) {
          h *= 0.25;
          continue;
        }
        // Vertex of the parabola through the last three points in (s, lambda).
        const double s2 = arc.back() + (full_vector(next) - full_vector(cur)).norm();
        const double s1 = arc.back();
        const double s0 = arc.size() > 1 ? arc[arc.size() - 2] : s1 - 1.0;
        const double l0 = pts.size() > 1 ? pts[pts.size() - 2].lambda : cur.lambda;
        const double l1 = cur.lambda, l2 = next.lambda;
        const double d01 = (l1 - l0) / (s1 - s0), d12 = (l2 - l1) / (s2 - s1);
        const double c2 = (d12 - d01) / (s2 - s0);
        double nose = l1;
        if (c2 < 0.0) {
          const double c1 = d01 - c2 * (s0 + s1);
          const double sv = -c1 / (2.0 * c2);
          nose = l0 + d01 * (sv - s0) + c2 * (sv - s0) * (sv - s1);
        }
        tr.nose_lambda = std::clamp(nose, l1, l1 + opt.nose_tol);
        tr.nose_found = true;
        record_switches(cur, next);
        arc.push_back(s2);
        pts.push_back(next);
        break;
      }
      record_switches(cur, next);
      const Eigen::VectorXd Tn = tangent(net, bh, next, T);
      arc.push_back(arc.back() + (full_vector(next) - full_vector(cur)).norm());
      pts.push_back(next);
      cur = next;
      T = Tn;
      h = std::min(opt.max_step, 1.5 * h);
    }
  }

  tr.peak = 0;
  for (std::size_t k = 0; k < pts.size(); ++k)
    if (pts[k].lambda > pts[tr.peak].lambda)
      tr.peak = k;
  if (!tr.nose_found)
    tr.nose_lambda = pts[tr.peak].lambda;
  // back to the caller's lambda units
  for (auto& p : pts)
    p.lambda /= tr.scale;
  tr.nose_lambda /= tr.scale;
  tr.points = std::move(pts);
  return tr;
}

namespace {

// Earliest crossing of g > 0 along the upper branch; g is a vector metric
// per element, refined with regula falsi on warm-started solves.
template <class Metric>
std::optional<Segment> first_crossing(const NetworkModel& net, const VariationVector& b,
                                      const ContinuationTrace& tr, const ContinuationOptions& opt, Metric metric,
                                      const std::vector<std::string>& labels) {
  Eigen::VectorXd g_prev = metric(tr.points[0]);
  if ((g_prev.array() > 0.0).any()) {
    Eigen::Index worst;
    g_prev.maxCoeff(&worst);
    return Segment{0.0, labels[worst]};
  }
  for (std::size_t k = 1; k <= tr.peak; ++k) {
    const Eigen::VectorXd g = metric(tr.points[k]);
    if (!(g.array() > 0.0).any()) {
      g_prev = g;
      continue;
    }
    std::optional<Segment> best;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      if (!(g[j] > 0.0))
        continue;
      double la = tr.points[k - 1].lambda, lb = tr.points[k].lambda;
      double ga = g_prev[j], gb = g[j];
      double est = la + (lb - la) * (-ga) / (gb - ga);
      // Illinois variant of regula falsi
      try {
        int side = 0;
        for (int it = 0; it < 60; ++it) {
          const double lc = (la * gb - lb * ga) / (gb - ga);
          const double t = (lc - tr.points[k - 1].lambda) / (tr.points[k].lambda - tr.points[k - 1].lambda);
          const PowerFlowState warm = lerp(tr.points[k - 1], tr.points[k], std::clamp(t, 0.0, 1.0));
          const PowerFlowState sc = solve_power_flow(net, b, lc, &warm, opt.solver);
          const double gc = metric(sc)[j];
          est = lc;
          if (std::abs(gc) < 1e-10 || lb - la < 1e-12 * std::max(1.0, lb))
            break;
          if (gc > 0.0) {
            lb = lc;
            gb = gc;
            if (side == 1)
              ga *= 0.5;
            side = 1;
          } else {
            la = lc;
            ga = gc;
            if (side == -1)
              gb *= 0.5;
            side = -1;
          }
        }
      } catch (const ConvergenceError&) {
        // keep the latest bracketed estimate
      }
      if (!best || est < best->lambda)
        best = Segment{est, labels[j]};
    }
    return best;
  }
  return std::nullopt;
}

} // namespace

AdcTriple extract_adc(const NetworkModel& net, const VariationVector& b, const ContinuationTrace& tr,
                      const ContinuationOptions& opt) {
  AdcTriple adc;
  const double mw = b.p_norm1_mw;
  adc.lambda_vc = tr.nose_lambda;

  const Eigen::Index n = static_cast<Eigen::Index>(net.nodes.size());
  std::vector<std::string> vlabels;
  for (Eigen::Index k = 0; k < n; ++k)
    vlabels.push_back(net.node_labels[k]);
  // One metric entry per node: distance outside [vmin, vmax] normalized by the band.
  auto vmetric = [&](const PowerFlowState& s) {
    Eigen::VectorXd g(n);
    for (Eigen::Index k = 0; k < n; ++k)
      g[k] = std::max(net.vmin[k] - s.vm[k], s.vm[k] - net.vmax[k]);
    return g;
  };
  std::vector<std::string> blabels;
  for (const auto& bd : net.branches)
    for (int p : bd.phases)
      blabels.push_back(bd.id + "." + phase_letter(p));
  auto imetric = [&](const PowerFlowState& s) {
    const auto cur = branch_currents(net, s);
    Eigen::VectorXd g(static_cast<Eigen::Index>(blabels.size()));
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < cur.size(); ++i)
      for (Eigen::Index c = 0; c < cur[i].size(); ++c)
        g[r++] = std::isfinite(net.branches[i].ampacity[c]) ? cur[i][c] / net.branches[i].ampacity[c] - 1.0 : -1.0;
    return g;
  };

  if (auto v = first_crossing(net, b, tr, opt, vmetric, vlabels)) {
    adc.lambda_vv = std::min(v->lambda, tr.nose_lambda);
    adc.binding_vv = v->element;
  } else {
    adc.lambda_vv = tr.nose_lambda;
    adc.binding_vv = "nose";
  }
  if (!blabels.empty()) {
    if (auto t = first_crossing(net, b, tr, opt, imetric, blabels)) {
      adc.lambda_tv = std::min(t->lambda, tr.nose_lambda);
      adc.binding_tv = t->element;
    } else {
      adc.lambda_tv = tr.nose_lambda;
      adc.binding_tv = "nose";
    }
  } else {
    adc.lambda_tv = tr.nose_lambda;
    adc.binding_tv = "nose";
  }
  adc.vv = adc.lambda_vv * mw;
  adc.tv = adc.lambda_tv * mw;
  adc.vc = adc.lambda_vc * mw;
  adc.overall = std::min({adc.vv, adc.tv, adc.vc});
  adc.binding_overall = adc.overall == adc.vv ? adc.binding_vv : adc.overall == adc.tv ? adc.binding_tv : "nose";
  return adc;
}

AdcTriple compute_adc(const NetworkModel& net, const VariationVector& b, const ContinuationOptions& opt) {
  return extract_adc(net, b, trace_continuation(net, b, opt), opt);
}

void write_pv_curve(std::ostream& os, const NetworkModel& net, const VariationVector& b,
                    const ContinuationTrace& trace) {
  os << "lambda,mw";
  for (const auto& l : net.node_labels)
    os << ',' << l;
  os << '\n';
  os.precision(17);
  for (const auto& p : trace.points) {
    os << p.lambda << ',' << p.lambda * b.p_norm1_mw;
    for (Eigen::Index k = 0; k < p.vm.size(); ++k)
      os << ',' << p.vm[k];
    os << '\n';
  }
}

} // namespace padc
