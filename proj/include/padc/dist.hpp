#pragma once

// Univariate marginal laws and Latin hypercube designs.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <variant>

#include <Eigen/Core>
#include <json.hpp>

namespace padc {

enum class Family { Normal, Uniform, Beta, Exponential, Gamma, Weibull, Constant };

std::string to_string(Family f);

struct NormalParams {
  double mean;
  double stdev;
  friend bool operator==(const NormalParams&, const NormalParams&) = default;
};
struct UniformParams {
  double a;
  double b;
  friend bool operator==(const UniformParams&, const UniformParams&) = default;
};
/// Beta(alpha, beta) on the interval [lo, hi].
struct BetaParams {
  double alpha;
  double beta;
  double lo;
  double hi;
  friend bool operator==(const BetaParams&, const BetaParams&) = default;
};
struct ExponentialParams {
  double rate;
  friend bool operator==(const ExponentialParams&, const ExponentialParams&) = default;
};
struct GammaParams {
  double shape;
  double scale;
  friend bool operator==(const GammaParams&, const GammaParams&) = default;
};
struct WeibullParams {
  double shape;
  double scale;
  friend bool operator==(const WeibullParams&, const WeibullParams&) = default;
};
/// Point mass; used for frozen (degenerate) inputs.
struct ConstantParams {
  double value;
  friend bool operator==(const ConstantParams&, const ConstantParams&) = default;
};

using MarginalParams = std::variant<NormalParams, UniformParams, BetaParams, ExponentialParams,
                                    GammaParams, WeibullParams, ConstantParams>;

struct Support {
  double lo;
  double hi;
};

struct Moments {
  double mean;
  double variance;
};

enum class EvalKind { Pdf, Cdf };

/// A univariate probability law. Instances are only created through the
/// validating factories, so every Marginal satisfies its family invariants.
class Marginal {
public:
  static Marginal normal(double mean, double stdev);
  static Marginal uniform(double a, double b);
  static Marginal beta(double alpha, double beta, double lo = 0.0, double hi = 1.0);
  static Marginal exponential(double rate = 1.0);
  static Marginal gamma(double shape, double scale = 1.0);
  static Marginal weibull(double shape, double scale);
  static Marginal constant(double value);

  Family family() const;
  const MarginalParams& params() const { return params_; }

  /// Closed support of the law; infinite ends for unbounded families.
  Support support() const;

  double pdf(double x) const;
  double cdf(double x) const;
  /// Inverse cdf; requires 0 < p < 1.
  double inv_cdf(double p) const;
  Moments moments() const;

  std::string describe() const;

  friend bool operator==(const Marginal&, const Marginal&) = default;

private:
  explicit Marginal(MarginalParams p) : params_(std::move(p)) {}
  MarginalParams params_;
};

/// pdf or cdf of `m` at `x`. Throws std::domain_error for non-finite x.
double marginal_eval(const Marginal& m, double x, EvalKind kind);
double marginal_inv_cdf(const Marginal& m, double p);
Moments marginal_moments(const Marginal& m);

double std_normal_pdf(double z);
double std_normal_cdf(double z);
double std_normal_inv_cdf(double p);

/// Tagged-record JSON form, e.g. {"family":"weibull","shape":7.41,"scale":2.06}.
/// Weibull records accept "swap_shape_scale": true to read the two numbers in
/// the opposite order.
Marginal marginal_from_json(const nlohmann::json& j);
nlohmann::json marginal_to_json(const Marginal& m);

// ---------------------------------------------------------------------------
// Random streams and Latin hypercube sampling

/// Derive an independent 64-bit seed for stream `stream` of `master`
/// (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Uniform double in the open interval (0, 1) from a 64-bit engine draw.
double uniform_open01(std::mt19937_64& rng);

struct LhsDesign {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  Eigen::MatrixXd points; ///< count x dim, every entry in (0, 1)
};

/// One point per stratum [i/M, (i+1)/M) in every column. With `jitter` off
/// the points sit at stratum midpoints.
LhsDesign lhs_sample(std::size_t dim, std::size_t count, std::uint64_t seed, bool jitter = true);

} // namespace padc
