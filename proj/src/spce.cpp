#include "padc/spce.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "padc/error.hpp"

namespace padc {

namespace {

constexpr double kMaxCond = 1e12;

struct QrFit {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr;
  Eigen::MatrixXd R;
};

QrFit factor(const Eigen::MatrixXd& H) {
  if (H.rows() < H.cols())
    throw ValidationError("least squares needs at least as many samples (" + std::to_string(H.rows()) +
                          ") as terms (" + std::to_string(H.cols()) + ")");
  QrFit f{Eigen::HouseholderQR<Eigen::MatrixXd>(H), {}};
  f.R = f.qr.matrixQR().topRows(H.cols()).triangularView<Eigen::Upper>();
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(f.R).singularValues();
  const double smax = sv.size() ? sv[0] : 0.0;
  const double smin = sv.size() ? sv[sv.size() - 1] : 0.0;
  if (!(smin > 0.0) || smax / smin > kMaxCond)
    throw NumericalError("design matrix is rank deficient (condition number " +
                         (smin > 0.0 ? std::to_string(smax / smin) : std::string("inf")) + ")");
  return f;
}

Eigen::VectorXd solve_factored(const QrFit& f, const Eigen::VectorXd& y) {
  const Eigen::Index p = f.R.cols();
  const Eigen::VectorXd qty = (f.qr.householderQ().transpose() * y).head(p);
  return f.R.triangularView<Eigen::Upper>().solve(qty);
}

LooErrors loo_from_factor(const QrFit& f, const Eigen::MatrixXd& H, const Eigen::VectorXd& coeffs,
                          const Eigen::VectorXd& y, double sigma2) {
  const Eigen::Index m = H.rows();
  const Eigen::Index p = H.cols();
  if (m <= p)
    throw ValidationError("corrected LOO needs more samples than terms");
  if (!(sigma2 > 0.0))
    throw ValidationError("corrected LOO is undefined for a constant response");
  const Eigen::MatrixXd Q = f.qr.householderQ() * Eigen::MatrixXd::Identity(m, p);
  const Eigen::VectorXd resid = y - H * coeffs;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double h = Q.row(i).squaredNorm();
    if (h >= 1.0 - 1e-12)
      throw NumericalError("sample " + std::to_string(i) + " has leverage 1");
    const double e = resid[i] / (1.0 - h);
    acc += e * e;
  }
  LooErrors out;
  out.loo = acc / static_cast<double>(m) / sigma2;
  const Eigen::MatrixXd Rinv =
      f.R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const double trace = Rinv.squaredNorm(); // tr((H^T H)^-1)
  const double T = static_cast<double>(m) / static_cast<double>(m - p) * (1.0 + trace);
  out.cloo = out.loo * T;
  return out;
}

double unbiased_variance(const Eigen::VectorXd& y) {
  if (y.size() < 2)
    return 0.0;
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1);
}

void enumerate(int n, int pos, double budget, int nonzero_left, int p, double q, MultiIndex& cur,
               std::vector<MultiIndex>& out) {
  if (pos == n) {
    out.push_back(cur);
    return;
  }
  enumerate(n, pos + 1, budget, nonzero_left, p, q, cur, out);
  if (nonzero_left == 0)
    return;
  for (int a = 1; a <= p; ++a) {
    const double cost = std::pow(static_cast<double>(a), q);
    if (cost > budget + 1e-10)
      break;
    cur[pos] = a;
    enumerate(n, pos + 1, budget - cost, nonzero_left - 1, p, q, cur, out);
    cur[pos] = 0;
  }
}

int total_degree(const MultiIndex& a) {
  int s = 0;
  for (int v : a)
    s += v;
  return s;
}

std::vector<double> as_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

} // namespace

nlohmann::json spce_options_to_json(const SpceOptions& o) {
  return {{"p0", o.p0}, {"pmax", o.pmax}, {"q", o.q}, {"max_interaction", o.max_interaction},
          {"eps_target", o.eps_target}};
}

SpceOptions spce_options_from_json(const nlohmann::json& j) {
  if (!j.is_object())
    throw ValidationError("spce options must be an object");
  SpceOptions o;
  for (const auto& [key, v] : j.items()) {
    if (key == "p0")
      o.p0 = v.get<int>();
    else if (key == "pmax")
      o.pmax = v.get<int>();
    else if (key == "q")
      o.q = v.get<double>();
    else if (key == "max_interaction")
      o.max_interaction = v.get<int>();
    else if (key == "eps_target")
      o.eps_target = v.get<double>();
    else
      throw ValidationError("spce: unknown option '" + key + "'");
  }
  if (o.p0 < 0 || o.pmax < o.p0)
    throw ValidationError("spce: need 0 <= p0 <= pmax");
  if (!(o.q > 0.0 && o.q <= 1.0))
    throw ValidationError("spce: q must lie in (0, 1]");
  if (o.max_interaction < 1)
    throw ValidationError("spce: max_interaction must be >= 1");
  if (!(o.eps_target > 0.0))
    throw ValidationError("spce: eps_target must be positive");
  return o;
}

double EdSet::sigma_y2() const { return unbiased_variance(y); }

double q_norm(const MultiIndex& a, double q) {
  double s = 0.0;
  for (int v : a)
    if (v > 0)
      s += std::pow(static_cast<double>(v), q);
  return s > 0.0 ? std::pow(s, 1.0 / q) : 0.0;
}

std::vector<MultiIndex> build_index_set(int n, int p, double q, int r) {
  if (n < 1 || p < 0 || !(q > 0.0 && q <= 1.0) || r < 1)
    throw std::invalid_argument("build_index_set: need n >= 1, p >= 0, q in (0, 1], r >= 1");
  r = std::min(r, n);
  std::vector<MultiIndex> out;
  MultiIndex cur(n, 0);
  enumerate(n, 0, std::pow(static_cast<double>(p), q), r, p, q, cur, out);
  std::sort(out.begin(), out.end(), [](const MultiIndex& a, const MultiIndex& b) {
    const int da = total_degree(a), db = total_degree(b);
    if (da != db)
      return da < db;
    const int ma = *std::max_element(a.begin(), a.end());
    const int mb = *std::max_element(b.begin(), b.end());
    if (ma != mb)
      return ma < mb;
    return a > b;
  });
  return out;
}

Eigen::MatrixXd assemble_design_matrix(const std::vector<PolyBasis1D>& bases, const std::vector<MultiIndex>& indices,
                                       const Eigen::MatrixXd& xi) {
  const Eigen::Index m = xi.rows();
  const int n = static_cast<int>(bases.size());
  if (xi.cols() != n)
    throw std::invalid_argument("assemble_design_matrix: sample dimension does not match bases");
  std::vector<int> need(n, 0);
  for (const auto& a : indices) {
    if (static_cast<int>(a.size()) != n)
      throw std::invalid_argument("assemble_design_matrix: multi-index length does not match bases");
    for (int i = 0; i < n; ++i) {
      if (a[i] > bases[i].max_degree)
        throw std::out_of_range("assemble_design_matrix: degree " + std::to_string(a[i]) + " in dimension " +
                                std::to_string(i) + " exceeds basis degree " +
                                std::to_string(bases[i].max_degree));
      need[i] = std::max(need[i], a[i]);
    }
  }
  // phi[i](l, k) = phi_{i,k}(xi(l, i))
  std::vector<Eigen::MatrixXd> phi(n);
  std::vector<double> buf;
  for (int i = 0; i < n; ++i) {
    phi[i].resize(m, need[i] + 1);
    buf.resize(need[i] + 1);
    for (Eigen::Index l = 0; l < m; ++l) {
      eval_basis_all(bases[i], xi(l, i), buf);
      for (int k = 0; k <= need[i]; ++k)
        phi[i](l, k) = buf[k];
    }
  }
  Eigen::MatrixXd H = Eigen::MatrixXd::Ones(m, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t c = 0; c < indices.size(); ++c)
    for (int i = 0; i < n; ++i)
      if (indices[c][i] > 0)
        H.col(c).array() *= phi[i].col(indices[c][i]).array();
  return H;
}

Eigen::VectorXd ols_fit(const Eigen::MatrixXd& H, const Eigen::VectorXd& y) {
  if (y.size() != H.rows())
    throw std::invalid_argument("ols_fit: response length does not match design rows");
  return solve_factored(factor(H), y);
}

std::vector<int> lar_path(const Eigen::MatrixXd& H, const Eigen::VectorXd& y) {
  const Eigen::Index m = H.rows();
  const Eigen::Index p = H.cols();
  if (y.size() != m)
    throw std::invalid_argument("lar_path: response length does not match design rows");
  std::vector<int> path;
  if (m < 2)
    return path;

  const Eigen::VectorXd yc = y.array() - y.mean();
  if (yc.norm() <= 1e-13 * std::max(y.norm(), std::numeric_limits<double>::min()))
    return path;

  // 0 = candidate, 1 = active, 2 = excluded (constant or collinear)
  std::vector<char> status(p, 0);
  Eigen::MatrixXd X(m, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const Eigen::VectorXd c = H.col(j).array() - H.col(j).mean();
    const double nrm = c.norm();
    if (nrm <= 1e-10 * std::max(H.col(j).norm(), std::numeric_limits<double>::min())) {
      status[j] = 2;
      X.col(j).setZero();
    } else {
      X.col(j) = c / nrm;
    }
  }
  const std::size_t usable = static_cast<std::size_t>(std::count(status.begin(), status.end(), 0));
  const std::size_t max_steps = std::min<std::size_t>(static_cast<std::size_t>(m - 1), usable);
  if (max_steps == 0)
    return path;

  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
  auto collinear = [&](int j) {
    if (path.empty())
      return false;
    Eigen::MatrixXd XA(m, static_cast<Eigen::Index>(path.size()));
    for (std::size_t k = 0; k < path.size(); ++k)
      XA.col(k) = X.col(path[k]);
    const Eigen::VectorXd coef = XA.colPivHouseholderQr().solve(X.col(j));
    return (X.col(j) - XA * coef).squaredNorm() < 1e-10;
  };

  {
    const Eigen::VectorXd c = X.transpose() * yc;
    int best = -1;
    for (Eigen::Index j = 0; j < p; ++j)
      if (status[j] == 0 && (best < 0 || std::abs(c[j]) > std::abs(c[best])))
        best = static_cast<int>(j);
    status[best] = 1;
    path.push_back(best);
  }

  while (path.size() < max_steps) {
    const Eigen::VectorXd c = X.transpose() * (yc - mu);
    const Eigen::Index k = static_cast<Eigen::Index>(path.size());
    Eigen::MatrixXd XA(m, k);
    double C = 0.0;
    for (Eigen::Index t = 0; t < k; ++t) {
      const double s = c[path[t]] >= 0.0 ? 1.0 : -1.0;
      XA.col(t) = s * X.col(path[t]);
      C = std::max(C, std::abs(c[path[t]]));
    }
    const Eigen::MatrixXd G = XA.transpose() * XA;
    const Eigen::VectorXd g1 = G.ldlt().solve(Eigen::VectorXd::Ones(k));
    const double denom = g1.sum();
    if (!(denom > 0.0))
      break;
    const double A = 1.0 / std::sqrt(denom);
    const Eigen::VectorXd u = XA * (A * g1);
    const Eigen::VectorXd a = X.transpose() * u;

    double gamma = std::numeric_limits<double>::infinity();
    int next = -1;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (status[j] != 0)
        continue;
      for (double g : {(C - c[j]) / (A - a[j]), (C + c[j]) / (A + a[j])}) {
        if (g > 1e-14 && g < gamma) {
          gamma = g;
          next = static_cast<int>(j);
        }
      }
    }
    if (next < 0)
      break;
    mu += gamma * u;
    if (collinear(next)) {
      status[next] = 2;
      continue;
    }
    status[next] = 1;
    path.push_back(next);
  }
  return path;
}

LooErrors corrected_loo(const Eigen::MatrixXd& H, const Eigen::VectorXd& coeffs, const Eigen::VectorXd& y) {
  if (H.rows() <= H.cols())
    throw ValidationError("corrected LOO needs more samples than terms");
  return loo_from_factor(factor(H), H, coeffs, y, unbiased_variance(y));
}

PceModel adaptive_fit(const EdSet& ed, const std::vector<PolyBasis1D>& bases, const SpceOptions& o) {
  const int n = static_cast<int>(bases.size());
  const Eigen::Index m = ed.xi.rows();
  if (m == 0 || ed.y.size() != m)
    throw ValidationError("adaptive_fit: empty or misaligned experimental design");
  if (ed.xi.cols() != n)
    throw ValidationError("adaptive_fit: sample dimension does not match bases");
  if (o.p0 > o.pmax)
    throw ValidationError("adaptive_fit: p0 exceeds pmax");

  PceModel base;
  base.dim = n;
  base.bases = bases;
  base.q = o.q;
  base.ed_size = static_cast<int>(m);

  // Constant up to round-off: the relative LOO error would be noise over noise.
  const double sigma2 = ed.sigma_y2();
  const double scale = ed.y.size() ? ed.y.cwiseAbs().maxCoeff() : 0.0;
  if (!(sigma2 > 1e-24 * scale * scale)) {
    base.active = {MultiIndex(n, 0)};
    base.coeffs = {ed.y.size() ? ed.y.mean() : 0.0};
    base.degree = 0;
    return base;
  }

  std::vector<MultiIndex> indices;
  std::set<MultiIndex> seen;
  Eigen::MatrixXd H(m, 0);
  bool have_best = false;
  PceModel best = base;
  std::vector<double> history;

  for (int k = o.p0; k <= o.pmax; ++k) {
    // H_k = [H_{k-1}, new columns]
    std::vector<MultiIndex> fresh;
    for (auto& a : build_index_set(n, k, o.q, o.max_interaction))
      if (seen.insert(a).second)
        fresh.push_back(std::move(a));
    if (!fresh.empty()) {
      const Eigen::MatrixXd dH = assemble_design_matrix(bases, fresh, ed.xi);
      Eigen::MatrixXd grown(m, H.cols() + dH.cols());
      grown << H, dH;
      H.swap(grown);
      indices.insert(indices.end(), fresh.begin(), fresh.end());
    }
    const int zero_col = 0; // the zero index always sorts first

    const std::vector<int> path = lar_path(H, ed.y);
    double best_k = std::numeric_limits<double>::infinity();
    PceModel model_k = base;
    for (std::size_t len = 0; len <= path.size(); ++len) {
      const Eigen::Index P = static_cast<Eigen::Index>(len) + 1;
      if (m <= P)
        break;
      std::vector<int> cols{zero_col};
      cols.insert(cols.end(), path.begin(), path.begin() + static_cast<std::ptrdiff_t>(len));
      Eigen::MatrixXd Ha(m, P);
      for (Eigen::Index t = 0; t < P; ++t)
        Ha.col(t) = H.col(cols[t]);
      try {
        const QrFit f = factor(Ha);
        const Eigen::VectorXd c = solve_factored(f, ed.y);
        const LooErrors e = loo_from_factor(f, Ha, c, ed.y, sigma2);
        if (std::isfinite(e.cloo) && e.cloo < best_k) {
          best_k = e.cloo;
          model_k.active.clear();
          for (int col : cols)
            model_k.active.push_back(indices[col]);
          model_k.coeffs = as_std(c);
          model_k.err_loo = e.loo;
          model_k.err_cloo = e.cloo;
          model_k.degree = k;
        }
      } catch (const Error&) {
        // rank-deficient or degenerate prefix: not a candidate
      }
    }
    if (!std::isfinite(best_k)) {
      history.push_back(best_k);
      continue;
    }
    if (!have_best || best_k < best.err_cloo) {
      best = model_k;
      have_best = true;
    }
    history.push_back(best_k);
    if (best_k < o.eps_target)
      break;
    const std::size_t h = history.size();
    if (h >= 3 && history[h - 1] >= history[h - 2] && history[h - 2] >= history[h - 3])
      break;
  }
  if (!have_best)
    throw NumericalError("adaptive_fit: no candidate model has a finite corrected LOO error");
  return best;
}

double pce_eval(const PceModel& model, const Eigen::VectorXd& xi) {
  if (xi.size() != model.dim)
    throw std::invalid_argument("pce_eval: expected " + std::to_string(model.dim) + " coordinates");
  std::vector<std::vector<double>> phi(model.dim);
  for (int i = 0; i < model.dim; ++i) {
    int need = 0;
    for (const auto& a : model.active)
      need = std::max(need, a[i]);
    phi[i].resize(need + 1);
    eval_basis_all(model.bases[i], xi[i], phi[i]);
  }
  double y = 0.0;
  for (std::size_t t = 0; t < model.active.size(); ++t) {
    double term = model.coeffs[t];
    for (int i = 0; i < model.dim; ++i)
      if (model.active[t][i] > 0)
        term *= phi[i][model.active[t][i]];
    y += term;
  }
  return y;
}

Eigen::VectorXd pce_eval_rows(const PceModel& model, const Eigen::MatrixXd& xi) {
  const Eigen::MatrixXd H = assemble_design_matrix(model.bases, model.active, xi);
  return H * Eigen::Map<const Eigen::VectorXd>(model.coeffs.data(), static_cast<Eigen::Index>(model.coeffs.size()));
}

Moments pce_moments(const PceModel& model) {
  Moments m{0.0, 0.0};
  for (std::size_t t = 0; t < model.active.size(); ++t) {
    const bool zero = std::all_of(model.active[t].begin(), model.active[t].end(), [](int v) { return v == 0; });
    if (zero)
      m.mean += model.coeffs[t];
    else
      m.variance += model.coeffs[t] * model.coeffs[t];
  }
  return m;
}

nlohmann::json pce_to_json(const PceModel& model) {
  nlohmann::json terms = nlohmann::json::array();
  for (std::size_t t = 0; t < model.active.size(); ++t)
    terms.push_back({{"index", model.active[t]}, {"coeff", model.coeffs[t]}});
  nlohmann::json bases = nlohmann::json::array();
  for (const auto& b : model.bases)
    bases.push_back(basis_to_json(b));
  return {{"dim", model.dim},     {"degree", model.degree},     {"q", model.q},
          {"err_loo", model.err_loo}, {"err_cloo", model.err_cloo}, {"ed_size", model.ed_size},
          {"terms", terms},       {"bases", bases}};
}

PceModel pce_from_json(const nlohmann::json& j) {
  try {
    PceModel m;
    m.dim = j.at("dim").get<int>();
    m.degree = j.at("degree").get<int>();
    m.q = j.at("q").get<double>();
    m.err_loo = j.at("err_loo").get<double>();
    m.err_cloo = j.at("err_cloo").get<double>();
    m.ed_size = j.at("ed_size").get<int>();
    for (const auto& b : j.at("bases"))
      m.bases.push_back(basis_from_json(b));
    for (const auto& t : j.at("terms")) {
      m.active.push_back(t.at("index").get<MultiIndex>());
      m.coeffs.push_back(t.at("coeff").get<double>());
    }
    if (static_cast<int>(m.bases.size()) != m.dim)
      throw ValidationError("pce model: basis count does not match dim");
    for (const auto& a : m.active)
      if (static_cast<int>(a.size()) != m.dim)
        throw ValidationError("pce model: multi-index length does not match dim");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("pce model: ") + e.what());
  }
}

} // namespace padc
