#include "padc/feeder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "padc/error.hpp"

namespace padc {

namespace {

using nlohmann::json;

// Collects violations while parsing so that one pass reports all of them.
class Collector {
public:
  void add(std::string msg) { errors_.push_back(std::move(msg)); }
  const std::vector<std::string>& errors() const { return errors_; }

private:
  std::vector<std::string> errors_;
};

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed, Collector& c) {
  for (const auto& [key, v] : j.items()) {
    (void)v;
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end())
      c.add(where + ": unknown field '" + key + "'");
  }
}

std::optional<double> number(const json& j, const char* key, const std::string& where, Collector& c,
                             bool required = false) {
  if (!j.contains(key)) {
    if (required)
      c.add(where + ": missing field '" + key + "'");
    return std::nullopt;
  }
  if (!j[key].is_number()) {
    c.add(where + ": field '" + key + "' must be a number");
    return std::nullopt;
  }
  return j[key].get<double>();
}

std::optional<std::string> text(const json& j, const char* key, const std::string& where, Collector& c,
                                bool required = true) {
  if (!j.contains(key)) {
    if (required)
      c.add(where + ": missing field '" + key + "'");
    return std::nullopt;
  }
  if (j[key].is_string())
    return j[key].get<std::string>();
  if (j[key].is_number_integer())
    return std::to_string(j[key].get<long long>());
  c.add(where + ": field '" + key + "' must be a string");
  return std::nullopt;
}

int parse_phase_char(char ch) {
  switch (ch) {
  case 'a':
  case 'A':
    return 0;
  case 'b':
  case 'B':
    return 1;
  case 'c':
  case 'C':
    return 2;
  default:
    return -1;
  }
}

std::optional<PhaseSet> phases(const json& j, const char* key, const std::string& where, Collector& c) {
  if (!j.contains(key))
    return std::nullopt;
  std::string letters;
  if (j[key].is_string()) {
    letters = j[key].get<std::string>();
  } else if (j[key].is_array()) {
    for (const auto& e : j[key]) {
      if (!e.is_string() || e.get<std::string>().size() != 1) {
        c.add(where + ": phases must be letters a, b, c");
        return std::nullopt;
      }
      letters += e.get<std::string>();
    }
  } else {
    c.add(where + ": phases must be a string like \"abc\" or a list of letters");
    return std::nullopt;
  }
  PhaseSet out;
  for (char ch : letters) {
    const int p = parse_phase_char(ch);
    if (p < 0) {
      c.add(where + ": unknown phase '" + std::string(1, ch) + "'");
      return std::nullopt;
    }
    if (std::find(out.begin(), out.end(), p) != out.end()) {
      c.add(where + ": phase '" + std::string(1, ch) + "' listed twice");
      return std::nullopt;
    }
    out.push_back(p);
  }
  if (out.empty()) {
    c.add(where + ": empty phase set");
    return std::nullopt;
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Scalar applies to every phase; an array is aligned with `ph`.
bool per_phase(const json& j, const char* key, const PhaseSet& ph, PhaseArray& out, const std::string& where,
               Collector& c) {
  if (!j.contains(key))
    return false;
  const json& v = j[key];
  if (v.is_number()) {
    for (int p : ph)
      out[p] = v.get<double>();
    return true;
  }
  if (v.is_array() && v.size() == ph.size() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
    for (std::size_t k = 0; k < ph.size(); ++k)
      out[ph[k]] = v[k].get<double>();
    return true;
  }
  c.add(where + ": field '" + key + "' must be a number or one number per phase (" + std::to_string(ph.size()) + ")");
  return false;
}

std::optional<Eigen::MatrixXcd> complex_matrix(const json& j, const char* key, std::size_t dim, const char* re,
                                               const char* im, const std::string& where, Collector& c) {
  if (!j.contains(key))
    return std::nullopt;
  const json& m = j[key];
  const std::string bad = where + ": field '" + key + "' must be a " + std::to_string(dim) + "x" +
                          std::to_string(dim) + " matrix of {\"" + re + "\",\"" + im + "\"} entries";
  if (!m.is_array() || m.size() != dim) {
    c.add(bad);
    return std::nullopt;
  }
  Eigen::MatrixXcd out(dim, dim);
  for (std::size_t r = 0; r < dim; ++r) {
    if (!m[r].is_array() || m[r].size() != dim) {
      c.add(bad);
      return std::nullopt;
    }
    for (std::size_t k = 0; k < dim; ++k) {
      const json& e = m[r][k];
      if (!e.is_object()) {
        c.add(bad);
        return std::nullopt;
      }
      for (const auto& [name, val] : e.items())
        if ((name != re && name != im) || !val.is_number()) {
          c.add(bad);
          return std::nullopt;
        }
      out(r, k) = {e.value(re, 0.0), e.value(im, 0.0)};
    }
  }
  return out;
}

std::string phase_name(const PhaseSet& ph) {
  std::string s;
  for (int p : ph)
    s += phase_letter(p);
  return s;
}

FeederModel parse_into(const json& doc, Collector& c) {
  FeederModel f;
  if (!doc.is_object()) {
    c.add("feeder: document must be a JSON object");
    return f;
  }
  check_keys(doc, "feeder", {"name", "baseMVA", "baseKV", "buses", "branches", "loads", "res"}, c);
  f.name = doc.value("name", std::string());
  if (auto v = number(doc, "baseMVA", "feeder", c, true))
    f.base_mva = *v;
  if (auto v = number(doc, "baseKV", "feeder", c, true))
    f.base_kv = *v;
  if (!(f.base_mva > 0.0))
    c.add("feeder: baseMVA must be positive");
  if (!(f.base_kv > 0.0))
    c.add("feeder: baseKV must be positive");

  std::map<std::string, std::size_t> bus_at;
  if (!doc.contains("buses") || !doc["buses"].is_array() || doc["buses"].empty()) {
    c.add("feeder: 'buses' must be a non-empty array");
  } else {
    for (std::size_t i = 0; i < doc["buses"].size(); ++i) {
      const json& jb = doc["buses"][i];
      std::string where = "bus #" + std::to_string(i);
      if (!jb.is_object()) {
        c.add(where + ": must be an object");
        continue;
      }
      Bus b;
      if (auto id = text(jb, "id", where, c))
        b.id = *id;
      where = "bus '" + b.id + "'";
      check_keys(jb, where,
                 {"id", "phases", "kind", "v0", "vmin", "vmax", "base_kv", "v_set", "qmin_kvar", "qmax_kvar",
                  "shunt_kvar", "p_gen_kw", "dp_gen_kw"},
                 c);
      if (auto ph = phases(jb, "phases", where, c))
        b.phases = *ph;
      else if (!jb.contains("phases"))
        b.phases = {0, 1, 2};
      const std::string kind = jb.value("kind", std::string("PQ"));
      if (kind == "slack")
        b.kind = BusKind::Slack;
      else if (kind == "PQ" || kind == "pq")
        b.kind = BusKind::PQ;
      else if (kind == "PV" || kind == "pv")
        b.kind = BusKind::PV;
      else
        c.add(where + ": kind must be slack, PQ or PV");
      per_phase(jb, "v0", b.phases, b.v0, where, c);
      if (auto v = number(jb, "vmin", where, c))
        b.vmin = *v;
      if (auto v = number(jb, "vmax", where, c))
        b.vmax = *v;
      if (!(b.vmin < b.vmax))
        c.add(where + ": vmin must be below vmax");
      if (auto v = number(jb, "base_kv", where, c)) {
        b.base_kv = *v;
        if (!(b.base_kv > 0.0))
          c.add(where + ": base_kv must be positive");
      }
      per_phase(jb, "v_set", b.phases, b.v_set, where, c);
      const bool has_qmin = per_phase(jb, "qmin_kvar", b.phases, b.qmin_kvar, where, c);
      const bool has_qmax = per_phase(jb, "qmax_kvar", b.phases, b.qmax_kvar, where, c);
      if (b.kind == BusKind::PV) {
        if (!has_qmin || !has_qmax)
          c.add(where + ": PV bus needs qmin_kvar and qmax_kvar");
        for (int p : b.phases)
          if (b.qmin_kvar[p] > b.qmax_kvar[p])
            c.add(where + ": qmin_kvar exceeds qmax_kvar on phase " + phase_letter(p));
      }
      per_phase(jb, "shunt_kvar", b.phases, b.shunt_kvar, where, c);
      per_phase(jb, "p_gen_kw", b.phases, b.p_gen_kw, where, c);
      per_phase(jb, "dp_gen_kw", b.phases, b.dp_gen_kw, where, c);
      if (bus_at.count(b.id))
        c.add(where + ": duplicate bus id");
      else
        bus_at[b.id] = f.buses.size();
      f.buses.push_back(std::move(b));
    }
  }
  const auto slack_count = std::count_if(f.buses.begin(), f.buses.end(), [](const Bus& b) { return b.kind == BusKind::Slack; });
  if (!f.buses.empty() && slack_count == 0)
    c.add("feeder: no slack bus");
  if (slack_count > 1)
    c.add("feeder: more than one slack bus");

  auto bus_phases = [&](const std::string& id) -> const PhaseSet* {
    auto it = bus_at.find(id);
    return it == bus_at.end() ? nullptr : &f.buses[it->second].phases;
  };

  if (doc.contains("branches")) {
    if (!doc["branches"].is_array()) {
      c.add("feeder: 'branches' must be an array");
    } else {
      std::set<std::string> ids;
      for (std::size_t i = 0; i < doc["branches"].size(); ++i) {
        const json& jb = doc["branches"][i];
        std::string where = "branch #" + std::to_string(i);
        if (!jb.is_object()) {
          c.add(where + ": must be an object");
          continue;
        }
        Branch br;
        br.from = text(jb, "from", where, c).value_or("");
        br.to = text(jb, "to", where, c).value_or("");
        br.id = text(jb, "id", where, c, false).value_or(br.from + "-" + br.to);
        where = "branch '" + br.id + "'";
        check_keys(jb, where, {"id", "from", "to", "phases", "z", "y_shunt", "ampacity", "tap", "base_kv"}, c);
        if (!ids.insert(br.id).second)
          c.add(where + ": duplicate branch id");
        const PhaseSet* pf = bus_phases(br.from);
        const PhaseSet* pt = bus_phases(br.to);
        if (!pf)
          c.add(where + ": unknown bus '" + br.from + "'");
        if (!pt)
          c.add(where + ": unknown bus '" + br.to + "'");
        if (br.from == br.to)
          c.add(where + ": connects bus '" + br.from + "' to itself");
        if (auto ph = phases(jb, "phases", where, c)) {
          br.phases = *ph;
        } else if (pf && pt) {
          std::set_intersection(pf->begin(), pf->end(), pt->begin(), pt->end(), std::back_inserter(br.phases));
        }
        if (pf && pt) {
          for (int p : br.phases)
            if (std::find(pf->begin(), pf->end(), p) == pf->end() || std::find(pt->begin(), pt->end(), p) == pt->end())
              c.add(where + ": phase " + phase_letter(p) + " is missing at an endpoint (" + br.from + " has " +
                    phase_name(*pf) + ", " + br.to + " has " + phase_name(*pt) + ")");
        }
        if (br.phases.empty()) {
          c.add(where + ": no common phases");
          continue;
        }
        const std::size_t d = br.phases.size();
        if (auto z = complex_matrix(jb, "z", d, "r", "x", where, c))
          br.z_ohm = *z;
        else if (!jb.contains("z"))
          c.add(where + ": missing field 'z'");
        if (auto y = complex_matrix(jb, "y_shunt", d, "g", "b", where, c))
          br.y_shunt = *y;
        else
          br.y_shunt = Eigen::MatrixXcd::Zero(d, d);
        if (br.z_ohm.size() && br.z_ohm.cwiseAbs().maxCoeff() == 0.0)
          c.add(where + ": zero impedance");
        if (per_phase(jb, "ampacity", br.phases, br.ampacity, where, c))
          for (int p : br.phases)
            if (!(br.ampacity[p] > 0.0))
              c.add(where + ": ampacity must be positive on phase " + phase_letter(p));
        if (per_phase(jb, "tap", br.phases, br.tap, where, c))
          for (int p : br.phases)
            if (!(br.tap[p] > 0.0))
              c.add(where + ": tap must be positive");
        if (auto v = number(jb, "base_kv", where, c)) {
          br.base_kv = *v;
          if (!(br.base_kv > 0.0))
            c.add(where + ": base_kv must be positive");
        }
        f.branches.push_back(std::move(br));
      }
    }
  }

  if (doc.contains("loads")) {
    if (!doc["loads"].is_array()) {
      c.add("feeder: 'loads' must be an array");
    } else {
      std::set<std::string> ids;
      for (std::size_t i = 0; i < doc["loads"].size(); ++i) {
        const json& jl = doc["loads"][i];
        std::string where = "load #" + std::to_string(i);
        if (!jl.is_object()) {
          c.add(where + ": must be an object");
          continue;
        }
        Load ld;
        ld.bus = text(jl, "bus", where, c).value_or("");
        const std::string ph = text(jl, "phase", where, c).value_or("a");
        ld.phase = ph.size() == 1 ? parse_phase_char(ph[0]) : -1;
        if (ld.phase < 0) {
          c.add(where + ": phase must be one of a, b, c");
          ld.phase = 0;
        }
        ld.id = text(jl, "id", where, c, false).value_or(ld.bus + phase_letter(ld.phase));
        where = "load '" + ld.id + "'";
        check_keys(jl, where, {"id", "bus", "phase", "p_kw", "q_kvar", "zip", "growth"}, c);
        if (!ids.insert(ld.id).second)
          c.add(where + ": duplicate load id");
        if (const PhaseSet* bp = bus_phases(ld.bus)) {
          if (std::find(bp->begin(), bp->end(), ld.phase) == bp->end())
            c.add(where + ": bus '" + ld.bus + "' has no phase " + phase_letter(ld.phase));
        } else {
          c.add(where + ": unknown bus '" + ld.bus + "'");
        }
        ld.p_kw = number(jl, "p_kw", where, c, true).value_or(0.0);
        ld.q_kvar = number(jl, "q_kvar", where, c).value_or(0.0);
        if (jl.contains("zip")) {
          const json& z = jl["zip"];
          if (!z.is_array() || z.size() != 3 || !std::all_of(z.begin(), z.end(), [](const json& e) { return e.is_number(); })) {
            c.add(where + ": zip must be three numbers [pq, i, z]");
          } else {
            for (int k = 0; k < 3; ++k)
              ld.zip[k] = z[k].get<double>();
            if (std::any_of(ld.zip.begin(), ld.zip.end(), [](double w) { return w < 0.0; }) ||
                std::abs(ld.zip[0] + ld.zip[1] + ld.zip[2] - 1.0) > 1e-9)
              c.add(where + ": zip weights must be nonnegative and sum to 1");
          }
        }
        ld.growth_mean_kw = ld.p_kw;
        if (jl.contains("growth")) {
          const json& g = jl["growth"];
          const std::string gw = where + " growth";
          if (!g.is_object()) {
            c.add(gw + ": must be an object");
          } else {
            check_keys(g, gw, {"family", "stdev_frac", "mean_kw", "input"}, c);
            const std::string fam = g.value("family", std::string());
            if (fam == "normal") {
              ld.growth = GrowthKind::Normal;
              ld.stdev_frac = number(g, "stdev_frac", gw, c, true).value_or(0.05);
              if (!(ld.stdev_frac > 0.0))
                c.add(gw + ": stdev_frac must be positive");
            } else if (fam == "fixed") {
              ld.growth = GrowthKind::Fixed;
              if (g.contains("stdev_frac"))
                c.add(gw + ": stdev_frac applies only to normal growth");
            } else {
              c.add(gw + ": family must be 'normal' or 'fixed'");
            }
            if (auto m = number(g, "mean_kw", gw, c))
              ld.growth_mean_kw = *m;
            if (ld.growth == GrowthKind::Normal && !(ld.growth_mean_kw > 0.0))
              c.add(gw + ": normal growth needs a positive mean");
            if (auto in = text(g, "input", gw, c, false)) {
              if (ld.growth != GrowthKind::Normal)
                c.add(gw + ": 'input' applies only to normal growth");
              ld.growth_input = *in;
            }
          }
        }
        f.loads.push_back(std::move(ld));
      }
    }
  }

  {
    std::map<std::string, double> frac;
    for (const Load& ld : f.loads) {
      if (ld.growth_input.empty())
        continue;
      auto [it, fresh] = frac.emplace(ld.growth_input, ld.stdev_frac);
      if (!fresh && it->second != ld.stdev_frac)
        c.add("load '" + ld.id + "': loads sharing growth input '" + ld.growth_input + "' must share stdev_frac");
    }
  }
  if (doc.contains("res")) {
    if (!doc["res"].is_array()) {
      c.add("feeder: 'res' must be an array");
    } else {
      std::set<std::string> ids;
      for (std::size_t i = 0; i < doc["res"].size(); ++i) {
        const json& jr = doc["res"][i];
        std::string where = "res #" + std::to_string(i);
        if (!jr.is_object()) {
          c.add(where + ": must be an object");
          continue;
        }
        ResUnit u;
        const std::string kind = text(jr, "kind", where, c).value_or("");
        u.bus = text(jr, "bus", where, c).value_or("");
        u.id = text(jr, "id", where, c, false).value_or(kind + "@" + u.bus);
        where = "res '" + u.id + "'";
        if (!ids.insert(u.id).second)
          c.add(where + ": duplicate unit id");
        if (kind == "wind") {
          u.kind = ResKind::Wind;
          check_keys(jr, where, {"id", "kind", "bus", "phases", "p_rated_kw", "v_in", "v_rated", "v_out", "pf", "marginal"}, c);
          u.v_in = number(jr, "v_in", where, c, true).value_or(0.0);
          u.v_rated = number(jr, "v_rated", where, c, true).value_or(0.0);
          u.v_out = number(jr, "v_out", where, c, true).value_or(0.0);
          u.pf = number(jr, "pf", where, c).value_or(0.85);
          if (!(0.0 <= u.v_in && u.v_in < u.v_rated && u.v_rated < u.v_out))
            c.add(where + ": need 0 <= v_in < v_rated < v_out");
          if (!(u.pf > 0.0 && u.pf <= 1.0))
            c.add(where + ": pf must lie in (0, 1]");
        } else if (kind == "solar") {
          u.kind = ResKind::Solar;
          check_keys(jr, where, {"id", "kind", "bus", "phases", "p_rated_kw", "r_c", "r_std", "marginal"}, c);
          u.r_c = number(jr, "r_c", where, c, true).value_or(0.0);
          u.r_std = number(jr, "r_std", where, c, true).value_or(0.0);
          u.pf = 1.0;
          if (!(0.0 < u.r_c && u.r_c < u.r_std))
            c.add(where + ": need 0 < r_c < r_std");
        } else {
          c.add(where + ": kind must be 'wind' or 'solar'");
          continue;
        }
        u.p_rated_kw = number(jr, "p_rated_kw", where, c, true).value_or(0.0);
        if (!(u.p_rated_kw > 0.0))
          c.add(where + ": p_rated_kw must be positive");
        const PhaseSet* bp = bus_phases(u.bus);
        if (!bp)
          c.add(where + ": unknown bus '" + u.bus + "'");
        if (auto ph = phases(jr, "phases", where, c))
          u.phases = *ph;
        else if (bp)
          u.phases = *bp;
        if (bp)
          for (int p : u.phases)
            if (std::find(bp->begin(), bp->end(), p) == bp->end())
              c.add(where + ": bus '" + u.bus + "' has no phase " + phase_letter(p));
        if (jr.contains("marginal")) {
          try {
            u.marginal = marginal_from_json(jr["marginal"]);
          } catch (const std::exception& e) {
            c.add(where + ": " + e.what());
          }
        }
        f.res.push_back(std::move(u));
      }
    }
  }

  // Per-phase connectivity from the slack.
  if (slack_count == 1 && c.errors().empty()) {
    const std::size_t root = static_cast<std::size_t>(
        std::find_if(f.buses.begin(), f.buses.end(), [](const Bus& b) { return b.kind == BusKind::Slack; }) -
        f.buses.begin());
    for (int p = 0; p < 3; ++p) {
      std::vector<char> seen(f.buses.size(), 0);
      std::vector<std::size_t> stack;
      if (std::find(f.buses[root].phases.begin(), f.buses[root].phases.end(), p) != f.buses[root].phases.end()) {
        seen[root] = 1;
        stack.push_back(root);
      }
      while (!stack.empty()) {
        const std::size_t b = stack.back();
        stack.pop_back();
        for (const Branch& br : f.branches) {
          if (std::find(br.phases.begin(), br.phases.end(), p) == br.phases.end())
            continue;
          const std::size_t a = bus_at[br.from], z = bus_at[br.to];
          const std::size_t other = a == b ? z : (z == b ? a : f.buses.size());
          if (other < f.buses.size() && !seen[other]) {
            seen[other] = 1;
            stack.push_back(other);
          }
        }
      }
      for (std::size_t b = 0; b < f.buses.size(); ++b)
        if (!seen[b] && std::find(f.buses[b].phases.begin(), f.buses[b].phases.end(), p) != f.buses[b].phases.end())
          c.add("bus '" + f.buses[b].id + "': phase " + phase_letter(p) + " is disconnected from the slack");
    }
  }
  return f;
}

} // namespace

char phase_letter(int phase) { return "abc"[phase]; }

std::string to_string(InputClass c) {
  switch (c) {
  case InputClass::Wind:
    return "wind";
  case InputClass::Solar:
    return "solar";
  default:
    return "load";
  }
}

std::size_t FeederModel::bus_index(const std::string& id) const {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == id)
      return i;
  throw ValidationError("unknown bus '" + id + "'");
}

double FeederModel::bus_base_kv(std::size_t bus) const {
  return buses[bus].base_kv > 0.0 ? buses[bus].base_kv : base_kv;
}

std::vector<InputInfo> FeederModel::inputs() const {
  std::vector<InputInfo> out;
  for (ResKind kind : {ResKind::Wind, ResKind::Solar})
    for (std::size_t i = 0; i < res.size(); ++i)
      if (res[i].kind == kind)
        out.push_back({kind == ResKind::Wind ? InputClass::Wind : InputClass::Solar, i, {}, res[i].id, res[i].marginal});
  std::map<std::string, std::size_t> group;
  for (std::size_t i = 0; i < loads.size(); ++i) {
    if (loads[i].growth != GrowthKind::Normal)
      continue;
    const std::string key = loads[i].growth_input.empty() ? loads[i].id : loads[i].growth_input;
    auto [it, fresh] = group.emplace(key, out.size());
    if (fresh)
      out.push_back({InputClass::Load, i, {}, key, std::nullopt});
    out[it->second].members.push_back(i);
  }
  for (InputInfo& in : out) {
    if (in.cls != InputClass::Load)
      continue;
    double mean = 0.0;
    for (std::size_t m : in.members)
      mean += loads[m].growth_mean_kw;
    in.marginal = Marginal::normal(mean, loads[in.owner].stdev_frac * mean);
  }
  return out;
}

std::vector<Node> node_list(const FeederModel& f) {
  std::vector<Node> nodes;
  for (std::size_t b = 0; b < f.buses.size(); ++b)
    for (int p : f.buses[b].phases)
      nodes.push_back({b, p});
  return nodes;
}

std::vector<std::string> validate_feeder_document(const nlohmann::json& doc) {
  Collector c;
  parse_into(doc, c);
  return c.errors();
}

FeederModel parse_feeder(const nlohmann::json& doc) {
  Collector c;
  FeederModel f = parse_into(doc, c);
  if (!c.errors().empty()) {
    std::ostringstream os;
    os << "invalid feeder:";
    for (const auto& e : c.errors())
      os << "\n  " << e;
    throw ValidationError(os.str());
  }
  return f;
}

FeederModel load_feeder(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot open feeder file '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("feeder file '" + path + "': " + e.what());
  }
  return parse_feeder(doc);
}

double wind_power(const ResUnit& u, double v) {
  if (v <= u.v_in || v > u.v_out)
    return 0.0;
  if (v <= u.v_rated)
    return u.p_rated_kw * (v - u.v_in) / (u.v_rated - u.v_in);
  return u.p_rated_kw;
}

double wind_reactive(const ResUnit& u, double p_kw) {
  return p_kw * std::tan(std::acos(u.pf));
}

double solar_power(const ResUnit& u, double r) {
  if (r <= 0.0)
    return 0.0;
  if (r < u.r_c)
    return u.p_rated_kw * r * r / (u.r_c * u.r_std);
  if (r <= u.r_std)
    return u.p_rated_kw * r / u.r_std;
  return u.p_rated_kw;
}

VariationVector build_variation_vector(const FeederModel& f, const Eigen::VectorXd& u) {
  const std::vector<InputInfo> inputs = f.inputs();
  if (static_cast<std::size_t>(u.size()) != inputs.size())
    throw ValidationError("variation vector: expected " + std::to_string(inputs.size()) + " inputs, got " +
                          std::to_string(u.size()));
  const std::vector<Node> nodes = node_list(f);
  std::map<std::pair<std::size_t, int>, Eigen::Index> at;
  for (std::size_t k = 0; k < nodes.size(); ++k)
    at[{nodes[k].bus, nodes[k].phase}] = static_cast<Eigen::Index>(k);

  // kW / kvar accumulators
  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nodes.size()));
  Eigen::VectorXd q = p;
  for (std::size_t k = 0; k < nodes.size(); ++k)
    p[k] += f.buses[nodes[k].bus].dp_gen_kw[nodes[k].phase];

  std::vector<char> random_load(f.loads.size(), 0);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const InputInfo& in = inputs[i];
    if (in.cls == InputClass::Load) {
      const double total = in.marginal->moments().mean;
      for (std::size_t m : in.members) {
        random_load[m] = 1;
        const Load& ld = f.loads[m];
        const Eigen::Index k = at.at({f.bus_index(ld.bus), ld.phase});
        const double share = u[i] * ld.growth_mean_kw / total;
        p[k] -= share;
        q[k] -= share * ld.q_per_p();
      }
      continue;
    }
    const ResUnit& unit = f.res[in.owner];
    const double pk = in.cls == InputClass::Wind ? wind_power(unit, u[i]) : solar_power(unit, u[i]);
    const double qk = in.cls == InputClass::Wind ? wind_reactive(unit, pk) : 0.0;
    const std::size_t b = f.bus_index(unit.bus);
    const double share = 1.0 / static_cast<double>(unit.phases.size());
    for (int ph : unit.phases) {
      const Eigen::Index k = at.at({b, ph});
      p[k] += pk * share;
      q[k] += qk * share;
    }
  }
  for (std::size_t l = 0; l < f.loads.size(); ++l) {
    const Load& ld = f.loads[l];
    if (ld.growth != GrowthKind::Fixed || random_load[l])
      continue;
    const Eigen::Index k = at.at({f.bus_index(ld.bus), ld.phase});
    p[k] -= ld.growth_mean_kw;
    q[k] -= ld.growth_mean_kw * ld.q_per_p();
  }

  VariationVector out;
  const double to_pu = 1.0 / (1000.0 * f.phase_base_mva());
  out.p = p * to_pu;
  out.q = q * to_pu;
  out.p_norm1_mw = p.cwiseAbs().sum() / 1000.0;
  out.degenerate = !(out.p_norm1_mw > 1e-12);
  return out;
}

} // namespace padc
