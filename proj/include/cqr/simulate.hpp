#pragma once

// Rejection-probability studies over scenario grids. The warp-speed method
// computes, per simulated dataset, the standardized point statistic and the
// statistic of a single bootstrap draw, pools the draws across replications
// into one empirical null and reads rejections off the pooled two-sided
// interval. A full-bootstrap mode running the complete test per replication is
// kept for validating warp-speed agreement.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cqr/bootstrap.hpp"
#include "cqr/dgp.hpp"
#include "cqr/parallel.hpp"
#include "cqr/peng_huang.hpp"
#include "cqr/rng.hpp"
#include "cqr/test_stats.hpp"
#include "cqr/types.hpp"

namespace cqr {

struct Scenario {
  std::string label;
  DgpConfig dgp;
  double grid_step = 0.01;
  double analysis_lo = 0.5;
  double analysis_hi = 0.5;   // tau_R equals the analysis upper endpoint
  double alpha = 0.05;
  bool standardize = true;
  BootstrapScheme scheme = BootstrapScheme::multiplier();
  int replications = 500;
  int pilot_draws = 20;       // per-replication draws behind the warp-speed Sigma
  int n_boot = 500;           // full-bootstrap mode only
  int max_draw_retries = 5;

  TauGrid make_grid() const {
    return TauGrid::make(analysis_hi, grid_step, analysis_lo, analysis_hi);
  }
};

struct ScenarioResult {
  std::string label;
  double reject_bonf = 0.0, reject_l2 = 0.0, reject_linf = 0.0;
  double se_bonf = 0.0, se_l2 = 0.0, se_linf = 0.0;
  int replications = 0;         // successful replications
  int failed_replicates = 0;
  double seconds = 0.0;
};

struct SimulationReport {
  std::vector<ScenarioResult> scenarios;
};

namespace detail {

struct RepStats {
  double l2 = 0.0, linf = 0.0;
  Eigen::VectorXd bonf;
};

inline double binom_se(double p, int n) {
  return n > 0 ? std::sqrt(p * (1.0 - p) / n) : 0.0;
}

// One multiplier/naive draw of the centered difference process, with bounded
// retries under fresh randomness.
inline bool one_draw(const ComparisonInput& input, const Estimator& estimator,
                     const TauGrid& grid, BootstrapScheme scheme,
                     const Eigen::MatrixXd& base1, const Eigen::MatrixXd& base2,
                     double sqrt_n, std::uint64_t seed, int max_retries,
                     Eigen::MatrixXd& out) {
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(attempt)}));
    try {
      Eigen::MatrixXd s1, s2;
      if (scheme.kind == BootstrapScheme::Kind::multiplier) {
        auto eta = draw_multipliers(input.sample1.n(), input.sample2.n(), input.paired, rng);
        s1 = estimator.fit(input.sample1, grid, eta.first).analysis_rows();
        s2 = estimator.fit(input.sample2, grid, eta.second).analysis_rows();
      } else {
        ComparisonInput star = naive_resample(input, rng);
        s1 = estimator.fit(star.sample1, grid).analysis_rows();
        s2 = estimator.fit(star.sample2, grid).analysis_rows();
      }
      out = sqrt_n * ((s1 - base1) - (s2 - base2));
      return true;
    } catch (const BreakdownError&) {
    } catch (const std::runtime_error&) {
    }
  }
  return false;
}

inline RepStats process_stats(const Eigen::MatrixXd& m, const std::vector<double>& taus,
                              const std::vector<double>& weights, bool interval) {
  RepStats s;
  s.l2 = integrated_norm(m, taus, weights, interval, 1.0,
                         [](const auto& row) { return row.norm(); });
  s.linf = integrated_norm(m, taus, weights, interval, 1.0,
                           [](const auto& row) { return row.cwiseAbs().maxCoeff(); });
  s.bonf.resize(m.cols());
  for (int k = 0; k < m.cols(); ++k)
    s.bonf(k) = integrated_norm(m.col(k), taus, weights, interval, 1.0,
                                [](const auto& row) { return std::fabs(row(0)); });
  return s;
}

}  // namespace detail

// Warp-speed estimate of the rejection probabilities of all three statistics
// for each scenario. Every replication contributes one pooled bootstrap draw;
// standardization uses a per-replication pilot of multiplier draws.
inline SimulationReport warp_speed_study(const std::vector<Scenario>& grid_spec,
                                         const Estimator& estimator,
                                         std::uint64_t master_seed, int threads = 1) {
  if (grid_spec.empty()) throw std::invalid_argument("warp_speed_study: empty scenario grid");
  SimulationReport report;

  for (std::size_t s = 0; s < grid_spec.size(); ++s) {
    const Scenario& sc = grid_spec[s];
    if (sc.replications < 2)
      throw std::invalid_argument("warp_speed_study: need >= 2 replications");
    const auto t0 = std::chrono::steady_clock::now();

    DgpConfig dgp = sc.dgp;
    dgp.seed = derive_seed(master_seed, {0xD67Au, static_cast<std::uint64_t>(s)});
    if (dgp.censor_target && !dgp.censor_bounds)
      dgp.censor_bounds = calibrate_censoring(dgp, *dgp.censor_target);
    const TauGrid grid = sc.make_grid();
    const auto taus = grid.analysis_levels();
    const std::vector<double> weights(taus.size(), 1.0);
    const bool interval = grid.analysis_is_interval();
    const int R = sc.replications;

    std::vector<detail::RepStats> point_stats(static_cast<std::size_t>(R));
    std::vector<detail::RepStats> draw_stats(static_cast<std::size_t>(R));
    std::vector<char> ok(static_cast<std::size_t>(R), 0);

    parallel_for(R, threads, [&](std::int64_t r) {
      const std::uint64_t rep_seed =
          derive_seed(dgp.seed, {0x5EEDu, static_cast<std::uint64_t>(r)});
      Rng data_rng(derive_seed(rep_seed, {0xDA7Au}));
      DgpConfig rep_dgp = dgp;
      rep_dgp.seed = rep_seed;
      ComparisonInput input = generate(rep_dgp, data_rng);
      const double sqrt_n = std::sqrt(input.n_effective());

      Eigen::MatrixXd base1, base2;
      try {
        base1 = estimator.fit(input.sample1, grid).analysis_rows();
        base2 = estimator.fit(input.sample2, grid).analysis_rows();
      } catch (const BreakdownError&) {
        return;  // replication failed
      }
      Eigen::MatrixXd point = sqrt_n * (base1 - base2);

      Eigen::MatrixXd warp_draw;
      if (!detail::one_draw(input, estimator, grid, sc.scheme, base1, base2, sqrt_n,
                            derive_seed(rep_seed, {0xAB00u}), sc.max_draw_retries,
                            warp_draw))
        return;

      if (sc.standardize) {
        BootstrapDraws pilot;
        pilot.n_effective = input.n_effective();
        pilot.draws.reserve(static_cast<std::size_t>(sc.pilot_draws));
        for (int j = 0; j < sc.pilot_draws; ++j) {
          Eigen::MatrixXd d;
          if (detail::one_draw(input, estimator, grid, sc.scheme, base1, base2, sqrt_n,
                               derive_seed(rep_seed, {0x9107u, static_cast<std::uint64_t>(j)}),
                               sc.max_draw_retries, d))
            pilot.draws.push_back(std::move(d));
        }
        if (pilot.count() < 2) return;
        const auto sigma = covariance_estimate(pilot);
        for (std::size_t t = 0; t < sigma.size(); ++t) {
          const Eigen::MatrixXd root = inv_sqrt_psd(sigma[t]);
          const int row = static_cast<int>(t);
          point.row(row) = (root * point.row(row).transpose()).transpose();
          warp_draw.row(row) = (root * warp_draw.row(row).transpose()).transpose();
        }
      }

      point_stats[static_cast<std::size_t>(r)] =
          detail::process_stats(point, taus, weights, interval);
      draw_stats[static_cast<std::size_t>(r)] =
          detail::process_stats(warp_draw, taus, weights, interval);
      ok[static_cast<std::size_t>(r)] = 1;
    });

    std::vector<int> good;
    for (int r = 0; r < R; ++r)
      if (ok[static_cast<std::size_t>(r)]) good.push_back(r);
    const int failed = R - static_cast<int>(good.size());
    if (failed > 0.05 * R)
      throw std::runtime_error("warp_speed_study: scenario '" + sc.label + "' lost " +
                               std::to_string(failed) + " of " + std::to_string(R) +
                               " replications");

    // Pool the single draws into one empirical null per statistic.
    std::vector<double> pool_l2, pool_linf;
    for (int r : good) {
      pool_l2.push_back(draw_stats[static_cast<std::size_t>(r)].l2);
      pool_linf.push_back(draw_stats[static_cast<std::size_t>(r)].linf);
    }
    std::sort(pool_l2.begin(), pool_l2.end());
    std::sort(pool_linf.begin(), pool_linf.end());

    const int ncomp = static_cast<int>(point_stats[static_cast<std::size_t>(good.front())]
                                           .bonf.size());
    std::vector<std::vector<double>> pool_bonf(static_cast<std::size_t>(ncomp));
    for (int k = 0; k < ncomp; ++k) {
      for (int r : good)
        pool_bonf[static_cast<std::size_t>(k)].push_back(
            draw_stats[static_cast<std::size_t>(r)].bonf(k));
      std::sort(pool_bonf[static_cast<std::size_t>(k)].begin(),
                pool_bonf[static_cast<std::size_t>(k)].end());
    }

    auto outside = [&](const std::vector<double>& pool, double t) {
      return t < nearest_rank_quantile(pool, sc.alpha / 2.0) ||
             t > nearest_rank_quantile(pool, 1.0 - sc.alpha / 2.0);
    };

    int rej_l2 = 0, rej_linf = 0, rej_bonf = 0;
    const double bonf_alpha = sc.alpha / ncomp;
    for (int r : good) {
      const auto& ps = point_stats[static_cast<std::size_t>(r)];
      rej_l2 += outside(pool_l2, ps.l2) ? 1 : 0;
      rej_linf += outside(pool_linf, ps.linf) ? 1 : 0;
      bool any = false;
      for (int k = 0; k < ncomp; ++k)
        any = any ||
              empirical_p_value(pool_bonf[static_cast<std::size_t>(k)], ps.bonf(k)) < bonf_alpha;
      rej_bonf += any ? 1 : 0;
    }

    ScenarioResult res;
    res.label = sc.label;
    res.replications = static_cast<int>(good.size());
    res.failed_replicates = failed;
    const double denom = std::max(1, res.replications);
    res.reject_l2 = rej_l2 / denom;
    res.reject_linf = rej_linf / denom;
    res.reject_bonf = rej_bonf / denom;
    res.se_l2 = detail::binom_se(res.reject_l2, res.replications);
    res.se_linf = detail::binom_se(res.reject_linf, res.replications);
    res.se_bonf = detail::binom_se(res.reject_bonf, res.replications);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.scenarios.push_back(std::move(res));
  }
  return report;
}

// Full-bootstrap validation mode: the complete test with its own draw set per
// replication; slower, used to validate warp-speed agreement.
inline SimulationReport full_bootstrap_study(const std::vector<Scenario>& grid_spec,
                                             const Estimator& estimator,
                                             std::uint64_t master_seed, int threads = 1) {
  if (grid_spec.empty())
    throw std::invalid_argument("full_bootstrap_study: empty scenario grid");
  SimulationReport report;

  for (std::size_t s = 0; s < grid_spec.size(); ++s) {
    const Scenario& sc = grid_spec[s];
    if (sc.replications < 1)
      throw std::invalid_argument("full_bootstrap_study: need >= 1 replication");
    if (sc.n_boot < 50)
      throw std::invalid_argument("full_bootstrap_study: need n_boot >= 50");
    const auto t0 = std::chrono::steady_clock::now();

    DgpConfig dgp = sc.dgp;
    dgp.seed = derive_seed(master_seed, {0xD67Au, static_cast<std::uint64_t>(s)});
    if (dgp.censor_target && !dgp.censor_bounds)
      dgp.censor_bounds = calibrate_censoring(dgp, *dgp.censor_target);
    const TauGrid grid = sc.make_grid();
    const int R = sc.replications;

    std::vector<char> ok(static_cast<std::size_t>(R), 0);
    std::vector<char> rej_l2(static_cast<std::size_t>(R), 0),
        rej_linf(static_cast<std::size_t>(R), 0), rej_bonf(static_cast<std::size_t>(R), 0);

    parallel_for(R, threads, [&](std::int64_t r) {
      const std::uint64_t rep_seed =
          derive_seed(dgp.seed, {0x5EEDu, static_cast<std::uint64_t>(r)});
      Rng data_rng(derive_seed(rep_seed, {0xDA7Au}));
      DgpConfig rep_dgp = dgp;
      rep_dgp.seed = rep_seed;
      ComparisonInput input = generate(rep_dgp, data_rng);

      TestConfig config;
      config.statistic = StatKind::All;
      config.alpha = sc.alpha;
      config.standardize = sc.standardize;
      config.n_boot = sc.n_boot;
      config.seed = derive_seed(rep_seed, {0x7E57u});
      try {
        const TestResult res = run_test(input, estimator, grid, sc.scheme, config);
        rej_l2[static_cast<std::size_t>(r)] = res.l2 && res.l2->reject;
        rej_linf[static_cast<std::size_t>(r)] = res.linf && res.linf->reject;
        rej_bonf[static_cast<std::size_t>(r)] = res.bonferroni_reject;
        ok[static_cast<std::size_t>(r)] = 1;
      } catch (const BreakdownError&) {
      } catch (const std::runtime_error&) {
      }
    });

    int good = 0, l2 = 0, linf = 0, bonf = 0;
    for (int r = 0; r < R; ++r) {
      if (!ok[static_cast<std::size_t>(r)]) continue;
      ++good;
      l2 += rej_l2[static_cast<std::size_t>(r)];
      linf += rej_linf[static_cast<std::size_t>(r)];
      bonf += rej_bonf[static_cast<std::size_t>(r)];
    }
    const int failed = R - good;
    if (failed > 0.05 * R)
      throw std::runtime_error("full_bootstrap_study: scenario '" + sc.label + "' lost " +
                               std::to_string(failed) + " of " + std::to_string(R) +
                               " replications");

    ScenarioResult res;
    res.label = sc.label;
    res.replications = good;
    res.failed_replicates = failed;
    const double denom = std::max(1, good);
    res.reject_l2 = l2 / denom;
    res.reject_linf = linf / denom;
    res.reject_bonf = bonf / denom;
    res.se_l2 = detail::binom_se(res.reject_l2, good);
    res.se_linf = detail::binom_se(res.reject_linf, good);
    res.se_bonf = detail::binom_se(res.reject_bonf, good);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.scenarios.push_back(std::move(res));
  }
  return report;
}

}  // namespace cqr
