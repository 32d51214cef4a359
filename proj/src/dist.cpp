#include "padc/dist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "padc/error.hpp"

namespace padc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Evaluate in double throughout; the default policy promotes to long double,
// which makes beta quantiles several times slower for no useful accuracy.
using DoublePolicy = boost::math::policies::policy<boost::math::policies::promote_double<false>>;
using BetaLaw = boost::math::beta_distribution<double, DoublePolicy>;
using GammaLaw = boost::math::gamma_distribution<double, DoublePolicy>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require(bool ok, const std::string& what) {
  if (!ok)
    throw ValidationError(what);
}

bool finite(double v) { return std::isfinite(v); }

} // namespace

std::string to_string(Family f) {
  switch (f) {
  case Family::Normal: return "normal";
  case Family::Uniform: return "uniform";
  case Family::Beta: return "beta";
  case Family::Exponential: return "exponential";
  case Family::Gamma: return "gamma";
  case Family::Weibull: return "weibull";
  case Family::Constant: return "constant";
  }
  return "unknown";
}

Marginal Marginal::normal(double mean, double stdev) {
  require(finite(mean) && finite(stdev) && stdev > 0.0, "normal: requires finite mean and stdev > 0");
  return Marginal(NormalParams{mean, stdev});
}

Marginal Marginal::uniform(double a, double b) {
  require(finite(a) && finite(b) && a < b, "uniform: requires finite a < b");
  return Marginal(UniformParams{a, b});
}

Marginal Marginal::beta(double alpha, double beta, double lo, double hi) {
  require(finite(alpha) && alpha > 0.0, "beta: alpha must be > 0");
  require(finite(beta) && beta > 0.0, "beta: beta must be > 0");
  require(finite(lo) && finite(hi) && lo < hi, "beta: support requires lo < hi");
  return Marginal(BetaParams{alpha, beta, lo, hi});
}

Marginal Marginal::exponential(double rate) {
  require(finite(rate) && rate > 0.0, "exponential: rate must be > 0");
  return Marginal(ExponentialParams{rate});
}

Marginal Marginal::gamma(double shape, double scale) {
  require(finite(shape) && shape > 0.0, "gamma: shape must be > 0");
  require(finite(scale) && scale > 0.0, "gamma: scale must be > 0");
  return Marginal(GammaParams{shape, scale});
}

Marginal Marginal::weibull(double shape, double scale) {
  require(finite(shape) && shape > 0.0, "weibull: shape must be > 0");
  require(finite(scale) && scale > 0.0, "weibull: scale must be > 0");
  return Marginal(WeibullParams{shape, scale});
}

Marginal Marginal::constant(double value) {
  require(finite(value), "constant: value must be finite");
  return Marginal(ConstantParams{value});
}

Family Marginal::family() const {
  return std::visit(overloaded{
                        [](const NormalParams&) { return Family::Normal; },
                        [](const UniformParams&) { return Family::Uniform; },
                        [](const BetaParams&) { return Family::Beta; },
                        [](const ExponentialParams&) { return Family::Exponential; },
                        [](const GammaParams&) { return Family::Gamma; },
                        [](const WeibullParams&) { return Family::Weibull; },
                        [](const ConstantParams&) { return Family::Constant; },
                    },
                    params_);
}

Support Marginal::support() const {
  return std::visit(overloaded{
                        [](const NormalParams&) { return Support{-kInf, kInf}; },
                        [](const UniformParams& p) { return Support{p.a, p.b}; },
                        [](const BetaParams& p) { return Support{p.lo, p.hi}; },
                        [](const ExponentialParams&) { return Support{0.0, kInf}; },
                        [](const GammaParams&) { return Support{0.0, kInf}; },
                        [](const WeibullParams&) { return Support{0.0, kInf}; },
                        [](const ConstantParams& p) { return Support{p.value, p.value}; },
                    },
                    params_);
}

double Marginal::pdf(double x) const {
  return std::visit(
      overloaded{
          [x](const NormalParams& p) {
            const double z = (x - p.mean) / p.stdev;
            return std_normal_pdf(z) / p.stdev;
          },
          [x](const UniformParams& p) { return (x < p.a || x > p.b) ? 0.0 : 1.0 / (p.b - p.a); },
          [x](const BetaParams& p) {
            const double w = p.hi - p.lo;
            const double t = (x - p.lo) / w;
            if (t < 0.0 || t > 1.0)
              return 0.0;
            if (t == 0.0)
              return p.alpha < 1.0 ? kInf : (p.alpha == 1.0 ? p.beta / w : 0.0);
            if (t == 1.0)
              return p.beta < 1.0 ? kInf : (p.beta == 1.0 ? p.alpha / w : 0.0);
            return boost::math::pdf(BetaLaw(p.alpha, p.beta), t) / w;
          },
          [x](const ExponentialParams& p) { return x < 0.0 ? 0.0 : p.rate * std::exp(-p.rate * x); },
          [x](const GammaParams& p) {
            if (x < 0.0)
              return 0.0;
            if (x == 0.0)
              return p.shape < 1.0 ? kInf : (p.shape == 1.0 ? 1.0 / p.scale : 0.0);
            return boost::math::pdf(GammaLaw(p.shape, p.scale), x);
          },
          [x](const WeibullParams& p) {
            if (x < 0.0)
              return 0.0;
            if (x == 0.0)
              return p.shape < 1.0 ? kInf : (p.shape == 1.0 ? 1.0 / p.scale : 0.0);
            const double r = x / p.scale;
            return p.shape / p.scale * std::pow(r, p.shape - 1.0) * std::exp(-std::pow(r, p.shape));
          },
          // A point mass has no density; report 0 everywhere.
          [](const ConstantParams&) { return 0.0; },
      },
      params_);
}

double Marginal::cdf(double x) const {
  return std::visit(
      overloaded{
          [x](const NormalParams& p) { return std_normal_cdf((x - p.mean) / p.stdev); },
          [x](const UniformParams& p) { return std::clamp((x - p.a) / (p.b - p.a), 0.0, 1.0); },
          [x](const BetaParams& p) {
            const double t = (x - p.lo) / (p.hi - p.lo);
            if (t <= 0.0)
              return 0.0;
            if (t >= 1.0)
              return 1.0;
            return boost::math::cdf(BetaLaw(p.alpha, p.beta), t);
          },
          [x](const ExponentialParams& p) { return x <= 0.0 ? 0.0 : -std::expm1(-p.rate * x); },
          [x](const GammaParams& p) {
            return x <= 0.0 ? 0.0 : boost::math::gamma_p(p.shape, x / p.scale, DoublePolicy());
          },
          [x](const WeibullParams& p) {
            return x <= 0.0 ? 0.0 : -std::expm1(-std::pow(x / p.scale, p.shape));
          },
          [x](const ConstantParams& p) { return x < p.value ? 0.0 : 1.0; },
      },
      params_);
}

double Marginal::inv_cdf(double prob) const {
  if (!(prob > 0.0 && prob < 1.0))
    throw std::domain_error("inv_cdf: probability must lie in (0, 1)");
  return std::visit(
      overloaded{
          [prob](const NormalParams& p) { return p.mean + p.stdev * std_normal_inv_cdf(prob); },
          [prob](const UniformParams& p) { return p.a + prob * (p.b - p.a); },
          [prob](const BetaParams& p) {
            const double t = boost::math::quantile(BetaLaw(p.alpha, p.beta), prob);
            return p.lo + t * (p.hi - p.lo);
          },
          [prob](const ExponentialParams& p) { return -std::log1p(-prob) / p.rate; },
          [prob](const GammaParams& p) { return p.scale * boost::math::gamma_p_inv(p.shape, prob, DoublePolicy()); },
          [prob](const WeibullParams& p) { return p.scale * std::pow(-std::log1p(-prob), 1.0 / p.shape); },
          [](const ConstantParams& p) { return p.value; },
      },
      params_);
}

Moments Marginal::moments() const {
  return std::visit(overloaded{
                        [](const NormalParams& p) { return Moments{p.mean, p.stdev * p.stdev}; },
                        [](const UniformParams& p) {
                          const double w = p.b - p.a;
                          return Moments{0.5 * (p.a + p.b), w * w / 12.0};
                        },
                        [](const BetaParams& p) {
                          const double s = p.alpha + p.beta;
                          const double w = p.hi - p.lo;
                          const double m = p.alpha / s;
                          const double v = p.alpha * p.beta / (s * s * (s + 1.0));
                          return Moments{p.lo + w * m, w * w * v};
                        },
                        [](const ExponentialParams& p) { return Moments{1.0 / p.rate, 1.0 / (p.rate * p.rate)}; },
                        [](const GammaParams& p) { return Moments{p.shape * p.scale, p.shape * p.scale * p.scale}; },
                        [](const WeibullParams& p) {
                          const double g1 = std::tgamma(1.0 + 1.0 / p.shape);
                          const double g2 = std::tgamma(1.0 + 2.0 / p.shape);
                          return Moments{p.scale * g1, p.scale * p.scale * (g2 - g1 * g1)};
                        },
                        [](const ConstantParams& p) { return Moments{p.value, 0.0}; },
                    },
                    params_);
}

std::string Marginal::describe() const {
  std::ostringstream os;
  os.precision(6);
  std::visit(overloaded{
                 [&](const NormalParams& p) { os << "Normal(" << p.mean << ", " << p.stdev << ")"; },
                 [&](const UniformParams& p) { os << "Uniform(" << p.a << ", " << p.b << ")"; },
                 [&](const BetaParams& p) {
                   os << "Beta(" << p.alpha << ", " << p.beta << ", [" << p.lo << ", " << p.hi << "])";
                 },
                 [&](const ExponentialParams& p) { os << "Exponential(" << p.rate << ")"; },
                 [&](const GammaParams& p) { os << "Gamma(" << p.shape << ", " << p.scale << ")"; },
                 [&](const WeibullParams& p) { os << "Weibull(k=" << p.shape << ", c=" << p.scale << ")"; },
                 [&](const ConstantParams& p) { os << "Constant(" << p.value << ")"; },
             },
             params_);
  return os.str();
}

double marginal_eval(const Marginal& m, double x, EvalKind kind) {
  if (!std::isfinite(x))
    throw std::domain_error("marginal_eval: x must be finite");
  return kind == EvalKind::Pdf ? m.pdf(x) : m.cdf(x);
}

double marginal_inv_cdf(const Marginal& m, double p) { return m.inv_cdf(p); }

Moments marginal_moments(const Marginal& m) { return m.moments(); }

double std_normal_pdf(double z) {
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

double std_normal_cdf(double z) {
  if (std::isnan(z))
    throw std::domain_error("std_normal_cdf: NaN argument");
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

double std_normal_inv_cdf(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("std_normal_inv_cdf: probability must lie in (0, 1)");
  return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p, DoublePolicy());
}

// ---------------------------------------------------------------------------

namespace {

double get_number(const nlohmann::json& j, const char* key) {
  if (!j.contains(key))
    throw ValidationError(std::string("marginal: missing field '") + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number())
    throw ValidationError(std::string("marginal: field '") + key + "' must be a number");
  return v.get<double>();
}

double get_number_or(const nlohmann::json& j, const char* key, double fallback) {
  return j.contains(key) ? get_number(j, key) : fallback;
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key))
      throw ValidationError("marginal: unknown field '" + key + "'");
}

} // namespace

Marginal marginal_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("family") || !j.at("family").is_string())
    throw ValidationError("marginal: expected an object with a string 'family'");
  const auto fam = j.at("family").get<std::string>();
  if (fam == "normal") {
    reject_unknown(j, {"family", "mean", "stdev"});
    return Marginal::normal(get_number(j, "mean"), get_number(j, "stdev"));
  }
  if (fam == "uniform") {
    reject_unknown(j, {"family", "a", "b"});
    return Marginal::uniform(get_number(j, "a"), get_number(j, "b"));
  }
  if (fam == "beta") {
    reject_unknown(j, {"family", "alpha", "beta", "lo", "hi"});
    return Marginal::beta(get_number(j, "alpha"), get_number(j, "beta"), get_number_or(j, "lo", 0.0),
                          get_number_or(j, "hi", 1.0));
  }
  if (fam == "exponential") {
    reject_unknown(j, {"family", "rate"});
    return Marginal::exponential(get_number_or(j, "rate", 1.0));
  }
  if (fam == "gamma") {
    reject_unknown(j, {"family", "shape", "scale"});
    return Marginal::gamma(get_number(j, "shape"), get_number_or(j, "scale", 1.0));
  }
  if (fam == "weibull") {
    reject_unknown(j, {"family", "shape", "scale", "swap_shape_scale"});
    double shape = get_number(j, "shape");
    double scale = get_number(j, "scale");
    if (j.contains("swap_shape_scale")) {
      if (!j.at("swap_shape_scale").is_boolean())
        throw ValidationError("marginal: 'swap_shape_scale' must be a boolean");
      if (j.at("swap_shape_scale").get<bool>())
        std::swap(shape, scale);
    }
    return Marginal::weibull(shape, scale);
  }
  if (fam == "constant") {
    reject_unknown(j, {"family", "value"});
    return Marginal::constant(get_number(j, "value"));
  }
  throw ValidationError("marginal: unknown family '" + fam + "'");
}

nlohmann::json marginal_to_json(const Marginal& m) {
  return std::visit(
      overloaded{
          [](const NormalParams& p) {
            return nlohmann::json{{"family", "normal"}, {"mean", p.mean}, {"stdev", p.stdev}};
          },
          [](const UniformParams& p) { return nlohmann::json{{"family", "uniform"}, {"a", p.a}, {"b", p.b}}; },
          [](const BetaParams& p) {
            return nlohmann::json{
                {"family", "beta"}, {"alpha", p.alpha}, {"beta", p.beta}, {"lo", p.lo}, {"hi", p.hi}};
          },
          [](const ExponentialParams& p) { return nlohmann::json{{"family", "exponential"}, {"rate", p.rate}}; },
          [](const GammaParams& p) {
            return nlohmann::json{{"family", "gamma"}, {"shape", p.shape}, {"scale", p.scale}};
          },
          [](const WeibullParams& p) {
            return nlohmann::json{{"family", "weibull"}, {"shape", p.shape}, {"scale", p.scale}};
          },
          [](const ConstantParams& p) { return nlohmann::json{{"family", "constant"}, {"value", p.value}}; },
      },
      m.params());
}

// ---------------------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform_open01(std::mt19937_64& rng) {
  // 53 random bits, shifted by half an ulp so 0 and 1 are unreachable.
  const std::uint64_t bits = rng() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

namespace {

// Unbiased integer in [0, bound) by rejection; std::uniform_int_distribution
// is implementation-defined, so designs would differ across standard libraries.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % bound;
}

} // namespace

LhsDesign lhs_sample(std::size_t dim, std::size_t count, std::uint64_t seed, bool jitter) {
  if (dim == 0 || count == 0)
    throw std::invalid_argument("lhs_sample: dimension and count must be >= 1");
  LhsDesign d;
  d.dim = dim;
  d.count = count;
  d.seed = seed;
  d.points.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> perm(count);
  const double m = static_cast<double>(count);
  for (std::size_t j = 0; j < dim; ++j) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = count - 1; i > 0; --i)
      std::swap(perm[i], perm[bounded(rng, i + 1)]);
    for (std::size_t i = 0; i < count; ++i) {
      const double offset = jitter ? uniform_open01(rng) : 0.5;
      const double k = static_cast<double>(perm[i]);
      // Keep rounding from landing on the upper stratum edge.
      d.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::min((k + offset) / m, std::nextafter((k + 1.0) / m, 0.0));
    }
  }
  return d;
}

} // namespace padc
