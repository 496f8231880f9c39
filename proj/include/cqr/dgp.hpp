#pragma once

// Synthetic censored samples for the three simulation models under both
// covariate settings and the paired bivariate-error design, plus Monte Carlo
// calibration of the uniform censoring bound to a target censoring rate.
//
// Model 1: log T = b0 + b1 Z1 + b2 Z2 + eps
// Model 2: log T = b0 + b1 Z1 + (b2 + Z2) eps      (requires b2 + Z2 > 0)
// Model 3: log T = b0 + b1 Z1 + b2 Z2 + eps / 2
// eps ~ N(0, 0.25) for independent samples; paired errors are bivariate normal
// with marginal variance 0.5 and covariance eta, shared covariates and shared
// censoring times across the two samples.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cqr/rng.hpp"
#include "cqr/types.hpp"

namespace cqr {

enum class CovariateSetting {
  equal,    // Setting 1: Z1 ~ U[0,1], Z2 ~ B(0.5) in both samples
  shifted,  // Setting 2: sample 2 has Z1 ~ U[0,1.2], Z2 ~ B(0.7)
};

struct DgpConfig {
  int model = 1;
  Eigen::Vector3d beta1{0.0, -0.5, 0.5};
  Eigen::Vector3d beta2{0.0, -0.5, 0.5};
  CovariateSetting setting = CovariateSetting::equal;
  bool paired = false;
  double eta = 0.0;  // paired error covariance
  int n1 = 200;
  int n2 = 200;
  std::optional<double> censor_target;                 // fraction in (0,1)
  std::optional<std::pair<double, double>> censor_bounds;  // (c1, c2); paired uses c1
  std::uint64_t seed = 0;

  void validate() const {
    if (model < 1 || model > 3) throw std::invalid_argument("DgpConfig: model must be 1..3");
    if (n1 < 1 || n2 < 1) throw std::invalid_argument("DgpConfig: need positive sizes");
    if (paired && n1 != n2) throw std::invalid_argument("DgpConfig: paired requires n1 == n2");
    if (paired && !(std::fabs(eta) < 0.5))
      throw std::invalid_argument("DgpConfig: |eta| must be < 0.5 for a valid covariance");
    if (censor_target && !(*censor_target > 0.0 && *censor_target < 1.0))
      throw std::invalid_argument("DgpConfig: censor target must be in (0,1)");
    if (model == 2) {
      // beta_{j2} + Z2 > 0 a.s. with Z2 in {0,1}
      if (beta1(2) <= 0.0 || beta2(2) <= 0.0)
        throw std::invalid_argument("DgpConfig: model 2 requires beta_{j2} > 0");
    }
  }

  // Marginal error standard deviation before the model-specific transform.
  double error_sd() const { return paired ? std::sqrt(0.5) : 0.5; }
};

// Latent variables exposed for tests only; production output carries (X, delta, Z).
struct LatentDebug {
  std::vector<double> log_t1, log_c1, eps1;
  std::vector<double> log_t2, log_c2, eps2;
};

namespace detail {

inline double model_log_time(int model, const Eigen::Vector3d& beta, double z1, double z2,
                             double eps) {
  switch (model) {
    case 1: return beta(0) + beta(1) * z1 + beta(2) * z2 + eps;
    case 2: return beta(0) + beta(1) * z1 + (beta(2) + z2) * eps;
    case 3: return beta(0) + beta(1) * z1 + beta(2) * z2 + 0.5 * eps;
    default: throw std::invalid_argument("model must be 1..3");
  }
}

inline void draw_covariates(const DgpConfig& config, int j, Rng& rng, double& z1,
                            double& z2) {
  const bool second_shifted = !config.paired &&
                              config.setting == CovariateSetting::shifted && j == 2;
  z1 = rng.uniform(0.0, second_shifted ? 1.2 : 1.0);
  z2 = static_cast<double>(rng.bernoulli(second_shifted ? 0.7 : 0.5));
}

inline Observation make_observation(double log_t, double log_c, const double* z, int p) {
  Observation o;
  o.event = log_t <= log_c ? 1 : 0;
  o.log_time = std::min(log_t, log_c);
  o.covariates.assign(z, z + p + 1);
  return o;
}

}  // namespace detail

// Latent log survival time for sample j at fixed covariates; the building
// block of generate() and of conditional-quantile checks.
inline double draw_log_time(const DgpConfig& config, int j, double z1, double z2, Rng& rng) {
  const Eigen::Vector3d& beta = j == 1 ? config.beta1 : config.beta2;
  return detail::model_log_time(config.model, beta, z1, z2,
                                rng.normal(0.0, config.error_sd()));
}

// True coefficient vector at quantile level tau. The quantile shift always
// enters through the effective error scale of the model.
inline Eigen::Vector3d true_beta(const DgpConfig& config, int j, double tau) {
  const Eigen::Vector3d& beta = j == 1 ? config.beta1 : config.beta2;
  const double q = normal_icdf(tau);
  const double sd = config.error_sd();
  switch (config.model) {
    case 1: return {beta(0) + sd * q, beta(1), beta(2)};
    case 2: return {beta(0) + beta(2) * sd * q, beta(1), sd * q};
    case 3: return {beta(0) + 0.5 * sd * q, beta(1), beta(2)};
    default: throw std::invalid_argument("true_beta: model must be 1..3");
  }
}

// Generates one comparison dataset. Independent design: separate covariates,
// errors and censoring; paired design: shared covariates, bivariate errors and
// one shared censoring time per subject.
inline ComparisonInput generate(const DgpConfig& config, Rng& rng,
                                LatentDebug* debug = nullptr) {
  config.validate();
  if (config.censor_target && !config.censor_bounds)
    throw std::invalid_argument("generate: censoring requested but bounds not calibrated");

  const double c1 = config.censor_bounds ? config.censor_bounds->first
                                         : std::numeric_limits<double>::infinity();
  const double c2 = config.censor_bounds
                        ? (config.paired ? config.censor_bounds->first
                                         : config.censor_bounds->second)
                        : std::numeric_limits<double>::infinity();
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<Observation> obs1, obs2;
  obs1.reserve(static_cast<std::size_t>(config.n1));
  obs2.reserve(static_cast<std::size_t>(config.n2));

  if (config.paired) {
    const double sd = config.error_sd();
    const double a21 = config.eta / sd;                       // Cholesky row 2
    const double a22 = std::sqrt(sd * sd - a21 * a21);
    for (int i = 0; i < config.n1; ++i) {
      double z1, z2;
      detail::draw_covariates(config, 1, rng, z1, z2);
      const double g1 = rng.normal(), g2 = rng.normal();
      const double e1 = sd * g1;
      const double e2 = a21 * g1 + a22 * g2;
      const double lt1 = detail::model_log_time(config.model, config.beta1, z1, z2, e1);
      const double lt2 = detail::model_log_time(config.model, config.beta2, z1, z2, e2);
      const double lc = std::isfinite(c1) ? std::log(c1 * rng.uniform_open01()) : inf;
      const double z[3] = {1.0, z1, z2};
      obs1.push_back(detail::make_observation(lt1, lc, z, 2));
      obs2.push_back(detail::make_observation(lt2, lc, z, 2));
      if (debug) {
        debug->log_t1.push_back(lt1); debug->log_c1.push_back(lc); debug->eps1.push_back(e1);
        debug->log_t2.push_back(lt2); debug->log_c2.push_back(lc); debug->eps2.push_back(e2);
      }
    }
    return ComparisonInput{SampleData(std::move(obs1), 2), SampleData(std::move(obs2), 2),
                           true};
  }

  for (int j = 1; j <= 2; ++j) {
    const int n = j == 1 ? config.n1 : config.n2;
    const double cj = j == 1 ? c1 : c2;
    auto& obs = j == 1 ? obs1 : obs2;
    auto* lt_dbg = debug ? (j == 1 ? &debug->log_t1 : &debug->log_t2) : nullptr;
    auto* lc_dbg = debug ? (j == 1 ? &debug->log_c1 : &debug->log_c2) : nullptr;
    auto* e_dbg = debug ? (j == 1 ? &debug->eps1 : &debug->eps2) : nullptr;
    for (int i = 0; i < n; ++i) {
      double z1, z2;
      detail::draw_covariates(config, j, rng, z1, z2);
      const double eps = rng.normal(0.0, config.error_sd());
      const Eigen::Vector3d& beta = j == 1 ? config.beta1 : config.beta2;
      const double lt = detail::model_log_time(config.model, beta, z1, z2, eps);
      const double lc = std::isfinite(cj) ? std::log(cj * rng.uniform_open01()) : inf;
      const double z[3] = {1.0, z1, z2};
      obs.push_back(detail::make_observation(lt, lc, z, 2));
      if (lt_dbg) { lt_dbg->push_back(lt); lc_dbg->push_back(lc); e_dbg->push_back(eps); }
    }
  }
  return ComparisonInput{SampleData(std::move(obs1), 2), SampleData(std::move(obs2), 2),
                         false};
}

// Calibrates the uniform censoring bounds so that P(C < T) hits the target
// rate. One large latent sample of T is drawn per sample index; conditional on
// it, the censoring fraction E[min(T/c, 1)] is exact and monotone in c, so
// bisection converges deterministically. Paired designs calibrate one shared
// bound against the first sample.
inline std::pair<double, double> calibrate_censoring(const DgpConfig& config, double target,
                                                     double precision = 2e-3,
                                                     long draws_per_eval = 1000000) {
  if (!(target > 0.0 && target < 1.0))
    throw std::invalid_argument("calibrate_censoring: target must be in (0,1)");
  if (!(precision > 0.0)) throw std::invalid_argument("calibrate_censoring: bad precision");

  auto calibrate_one = [&](int j) {
    Rng rng(derive_seed(config.seed, {0xCA11B4A7Eull, static_cast<std::uint64_t>(j)}));
    std::vector<double> t(static_cast<std::size_t>(draws_per_eval));
    for (auto& v : t) {
      double z1, z2;
      detail::draw_covariates(config, j, rng, z1, z2);
      v = std::exp(draw_log_time(config, j, z1, z2, rng));
    }
    auto frac = [&](double c) {
      double s = 0.0;
      for (double v : t) s += std::min(v / c, 1.0);
      return s / static_cast<double>(t.size());
    };
    double lo = 1e-12, hi = 1.0;
    while (frac(hi) > target) {
      hi *= 2.0;
      if (hi > 1e300) throw std::runtime_error("calibrate_censoring: target unreachable");
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double f = frac(mid);
      if (std::fabs(f - target) <= 0.25 * precision) return mid;
      (f > target ? lo : hi) = mid;
      if (hi - lo <= 1e-12 * hi) break;
    }
    return 0.5 * (lo + hi);
  };

  const double c1 = calibrate_one(1);
  if (config.paired) return {c1, c1};
  return {c1, calibrate_one(2)};
}

}  // namespace cqr
