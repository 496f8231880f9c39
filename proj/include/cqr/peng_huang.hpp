#pragma once

// Censored quantile regression via martingale estimating equations, fitted
// sequentially over the grid. Each grid step solves an augmented weighted L1
// problem whose subgradient reproduces the estimating equation
//   S(b, tau_k) = (1/n) sum_i eta_i Z_i [ Delta_i I(log X_i <= Z_i^T b) - w_ik ]
// where w_ik are the cumulative hazard weights accumulated along the fitted
// path. The two pseudo-terms carry a constant R* large enough that their
// residual signs never flip at any candidate minimizer.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "cqr/l1_solver.hpp"
#include "cqr/types.hpp"

namespace cqr {

// H(u) = -log(1-u), the quantile-scale cumulative hazard transform.
inline double cumulative_hazard(double u) {
  if (!(u >= 0.0 && u < 1.0))
    throw std::invalid_argument("cumulative_hazard: u must be in [0,1)");
  return -std::log1p(-u);
}

// Contract every plug-in estimator must honor: a fit over the grid honoring
// per-observation multipliers (all-ones multipliers reproduce the unweighted
// estimator), plus a declared validity range.
class Estimator {
 public:
  enum class Capability { single_level, uniform_over_interval };

  virtual ~Estimator() = default;

  virtual CoefficientProcess fit(const SampleData& sample, const TauGrid& grid,
                                 const Eigen::VectorXd& multipliers,
                                 bool require_analysis_coverage = true) const = 0;

  CoefficientProcess fit(const SampleData& sample, const TauGrid& grid,
                         bool require_analysis_coverage = true) const {
    return fit(sample, grid, Eigen::VectorXd::Ones(sample.n()),
               require_analysis_coverage);
  }

  virtual bool supports_multipliers() const = 0;
  virtual Capability capability() const = 0;
};

namespace detail {

// Cumulative weights w[i][k] = sum_{r<k} I(log X_i >= Z_i^T beta(tau_r)) dH_r,
// with the tau_0 convention that the indicator is 1 for every observation.
// This helper advances them one grid step at a time.
struct CumulativeWeightState {
  Eigen::VectorXd w;          // current w[.][k]
  Eigen::ArrayXd pred_prev;   // Z beta(tau_{k-1}); -inf before the first step
  double prev_tau = 0.0;

  explicit CumulativeWeightState(int n)
      : w(Eigen::VectorXd::Zero(n)),
        pred_prev(Eigen::ArrayXd::Constant(n, -std::numeric_limits<double>::infinity())) {}

  void advance(const Eigen::VectorXd& logx, double tau) {
    const double dH = cumulative_hazard(tau) - cumulative_hazard(prev_tau);
    w += ((logx.array() >= pred_prev).cast<double>() * dH).matrix();
    prev_tau = tau;
  }
};

}  // namespace detail

struct PhFitOptions {
  double tol = 1e-8;
};

// Sequential grid fit. Returns the process with defined_upto marking the last
// grid index before identifiability breakdown; throws BreakdownError if the
// analysis set is not covered and coverage is required.
inline CoefficientProcess ph_fit(const SampleData& sample, const TauGrid& grid,
                                 const Eigen::VectorXd& multipliers,
                                 bool require_analysis_coverage = true,
                                 const PhFitOptions& options = {}) {
  const int n = sample.n();
  const int m = sample.dim();
  const int M = grid.M();
  if (multipliers.size() != n)
    throw std::invalid_argument("ph_fit: multiplier length mismatch");
  double eta_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(multipliers(i)) || multipliers(i) < 0.0)
      throw std::invalid_argument("ph_fit: multipliers must be finite and >= 0");
    eta_sum += multipliers(i);
  }
  if (eta_sum <= 0.0) throw std::invalid_argument("ph_fit: multipliers all zero");

  const Eigen::MatrixXd Z = sample.covariate_matrix();
  const Eigen::VectorXd logx = sample.log_times();
  const Eigen::VectorXi delta = sample.events();

  std::vector<int> ev;
  for (int i = 0; i < n; ++i)
    if (delta(i) == 1 && multipliers(i) > 0.0) ev.push_back(i);
  const int nev = static_cast<int>(ev.size());

  Eigen::MatrixXd beta = Eigen::MatrixXd::Constant(
      M, m, std::numeric_limits<double>::quiet_NaN());
  int defined_upto = 0;

  if (nev > 0) {
    // R* large enough that the pseudo residuals stay positive throughout.
    double max_z1 = 0.0, wlog = 0.0;
    for (int i = 0; i < n; ++i) {
      max_z1 = std::max(max_z1, Z.row(i).cwiseAbs().sum());
      wlog += multipliers(i) * (1.0 + std::fabs(logx(i)));
    }
    const double r_star = 1e6 * (1.0 + wlog * max_z1);

    Eigen::VectorXd u1 = Eigen::VectorXd::Zero(m);
    for (int i : ev) u1 += multipliers(i) * Z.row(i).transpose();

    // Term layout: nev event rows, then the two pseudo rows.
    Eigen::MatrixXd D(nev + 2, m);
    Eigen::VectorXd a(nev + 2), wt(nev + 2);
    for (int e = 0; e < nev; ++e) {
      D.row(e) = Z.row(ev[static_cast<std::size_t>(e)]);
      a(e) = logx(ev[static_cast<std::size_t>(e)]);
      wt(e) = multipliers(ev[static_cast<std::size_t>(e)]);
    }
    D.row(nev) = -u1.transpose();
    a(nev) = r_star;
    wt(nev) = 1.0;
    a(nev + 1) = r_star;
    wt(nev + 1) = 1.0;

    detail::CumulativeWeightState state(n);
    std::vector<int> warm_basis;

    for (int k = 1; k <= M; ++k) {
      state.advance(logx, grid.level(k));

      // Breakdown: no event remains at risk above the previous quantile plane.
      double at_risk = 0.0;
      for (int i : ev)
        if (logx(i) >= state.pred_prev(i)) at_risk += multipliers(i);
      if (at_risk <= 0.0) break;

      Eigen::VectorXd u2 = Eigen::VectorXd::Zero(m);
      for (int i = 0; i < n; ++i)
        u2 += 2.0 * multipliers(i) * state.w(i) * Z.row(i).transpose();
      D.row(nev + 1) = u2.transpose();

      L1Solution sol = solve_weighted_l1(D, a, wt, options.tol, &warm_basis);
      if (sol.status != L1Status::optimal) break;
      if (!sol.x.allFinite()) break;
      // R* assumption: both pseudo residuals must stay strictly positive.
      if (r_star + u1.dot(sol.x) <= 0.0 || r_star - u2.dot(sol.x) <= 0.0) break;

      beta.row(k - 1) = sol.x.transpose();
      defined_upto = k;
      state.pred_prev = (Z * sol.x).array();
    }
  }

  CoefficientProcess process(grid, std::move(beta), defined_upto);
  if (require_analysis_coverage) process.require_analysis_coverage();
  return process;
}

inline CoefficientProcess ph_fit(const SampleData& sample, const TauGrid& grid,
                                 bool require_analysis_coverage = true,
                                 const PhFitOptions& options = {}) {
  return ph_fit(sample, grid, Eigen::VectorXd::Ones(sample.n()),
                require_analysis_coverage, options);
}

// Raw estimating function S(beta(tau_k), tau_k) at a fitted process row, with
// cumulative weights rebuilt from the stored path; diagnostic only.
inline Eigen::VectorXd estimating_function(const SampleData& sample,
                                           const CoefficientProcess& process,
                                           int k, const Eigen::VectorXd& multipliers) {
  const int n = sample.n();
  if (multipliers.size() != n)
    throw std::invalid_argument("estimating_function: multiplier length mismatch");
  if (k < 1 || k > process.defined_upto)
    throw std::out_of_range("estimating_function: grid index past defined range");

  const Eigen::MatrixXd Z = sample.covariate_matrix();
  const Eigen::VectorXd logx = sample.log_times();
  const Eigen::VectorXi delta = sample.events();

  detail::CumulativeWeightState state(n);
  for (int r = 1; r <= k; ++r) {
    state.advance(logx, process.grid.level(r));
    if (r < k) state.pred_prev = (Z * process.at(r)).array();
  }

  const Eigen::VectorXd b = process.at(k);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(sample.dim());
  for (int i = 0; i < n; ++i) {
    const double ind = (delta(i) == 1 && logx(i) <= Z.row(i).dot(b)) ? 1.0 : 0.0;
    s += multipliers(i) * (ind - state.w(i)) * Z.row(i).transpose();
  }
  return s / static_cast<double>(n);
}

inline Eigen::VectorXd estimating_function(const SampleData& sample,
                                           const CoefficientProcess& process, int k) {
  return estimating_function(sample, process, k, Eigen::VectorXd::Ones(sample.n()));
}

// The built-in estimator with uniform-over-interval validity.
class PengHuangEstimator final : public Estimator {
 public:
  explicit PengHuangEstimator(PhFitOptions options = {}) : options_(options) {}

  using Estimator::fit;
  CoefficientProcess fit(const SampleData& sample, const TauGrid& grid,
                         const Eigen::VectorXd& multipliers,
                         bool require_analysis_coverage = true) const override {
    return ph_fit(sample, grid, multipliers, require_analysis_coverage, options_);
  }

  bool supports_multipliers() const override { return true; }
  Capability capability() const override { return Capability::uniform_over_interval; }

 private:
  PhFitOptions options_;
};

}  // namespace cqr
