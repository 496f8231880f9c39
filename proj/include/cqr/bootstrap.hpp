#pragma once

// Bootstrap replication of the difference process
//   sqrt(n) [ (beta1* - beta1) - (beta2* - beta2) ](tau),  tau in A,
// under the multiplier scheme (unit exponential weights, shared across samples
// for paired data) and the naive scheme (resampling triplets, jointly for
// paired data), plus the per-tau covariance used for standardization.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cqr/parallel.hpp"
#include "cqr/peng_huang.hpp"
#include "cqr/rng.hpp"
#include "cqr/types.hpp"

namespace cqr {

struct BootstrapScheme {
  enum class Kind { multiplier, naive };
  Kind kind = Kind::multiplier;

  static BootstrapScheme multiplier() { return {Kind::multiplier}; }
  static BootstrapScheme naive() { return {Kind::naive}; }
};

struct BootstrapDraws {
  std::vector<Eigen::MatrixXd> draws;  // each |A| x (p+1), sqrt(n)-scaled
  double n_effective = 0.0;
  int failed_replicates = 0;

  int count() const { return static_cast<int>(draws.size()); }
};

// Exp(1) multiplier vectors; paired samples share one vector elementwise.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> draw_multipliers(int n1, int n2,
                                                                    bool paired,
                                                                    Rng& rng) {
  if (n1 < 1 || n2 < 1) throw std::invalid_argument("draw_multipliers: need n >= 1");
  if (paired && n1 != n2)
    throw std::invalid_argument("draw_multipliers: paired requires n1 == n2");
  Eigen::VectorXd eta1(n1);
  for (int i = 0; i < n1; ++i) eta1(i) = rng.exponential();
  if (paired) return {eta1, eta1};
  Eigen::VectorXd eta2(n2);
  for (int i = 0; i < n2; ++i) eta2(i) = rng.exponential();
  return {std::move(eta1), std::move(eta2)};
}

namespace detail {

inline SampleData resample_rows(const SampleData& data, const std::vector<std::size_t>& idx) {
  std::vector<Observation> obs;
  obs.reserve(idx.size());
  for (std::size_t i : idx) obs.push_back(data.observations()[i]);
  return SampleData(std::move(obs), data.p());
}

inline std::vector<std::size_t> draw_indices(int n, Rng& rng) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(n));
  for (auto& v : idx) v = rng.index(static_cast<std::size_t>(n));
  return idx;
}

inline bool has_event(const SampleData& data, const std::vector<std::size_t>& idx) {
  for (std::size_t i : idx)
    if (data.observations()[i].event == 1) return true;
  return false;
}

}  // namespace detail

// Resampling with replacement; paired subjects are drawn jointly. A resample
// without events is redrawn up to a bounded count.
inline SampleData naive_resample(const SampleData& data, Rng& rng, int max_retries = 100) {
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    auto idx = detail::draw_indices(data.n(), rng);
    if (detail::has_event(data, idx)) return detail::resample_rows(data, idx);
  }
  throw std::runtime_error("naive_resample: no events after bounded retries");
}

inline ComparisonInput naive_resample(const ComparisonInput& input, Rng& rng,
                                      int max_retries = 100) {
  if (input.paired) {
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
      auto idx = detail::draw_indices(input.sample1.n(), rng);
      if (detail::has_event(input.sample1, idx) && detail::has_event(input.sample2, idx))
        return ComparisonInput{detail::resample_rows(input.sample1, idx),
                               detail::resample_rows(input.sample2, idx), true};
    }
    throw std::runtime_error("naive_resample: no events after bounded retries");
  }
  SampleData s1 = naive_resample(input.sample1, rng, max_retries);
  SampleData s2 = naive_resample(input.sample2, rng, max_retries);
  return ComparisonInput{std::move(s1), std::move(s2), false};
}

struct DifferenceDrawOptions {
  int max_retries = 20;        // fresh randomness per retry
  double max_fail_fraction = 0.05;
  int threads = 1;
};

namespace detail {

inline Eigen::MatrixXd analysis_difference(const CoefficientProcess& b1,
                                           const CoefficientProcess& b2,
                                           double sqrt_n) {
  return sqrt_n * (b1.analysis_rows() - b2.analysis_rows());
}

}  // namespace detail

// Point process sqrt(n)(beta1 - beta2) over A plus N centered bootstrap draws.
// Replicates are independent tasks seeded by (seed, replicate, attempt), so the
// result is identical for any thread count.
inline std::pair<Eigen::MatrixXd, BootstrapDraws> difference_draws(
    const ComparisonInput& input, const Estimator& estimator, const TauGrid& grid,
    BootstrapScheme scheme, int n_draws, std::uint64_t seed,
    const DifferenceDrawOptions& options = {}) {
  if (n_draws < 1) throw std::invalid_argument("difference_draws: at least one draw required");
  if (scheme.kind == BootstrapScheme::Kind::multiplier && !estimator.supports_multipliers())
    throw std::invalid_argument(
        "difference_draws: multiplier scheme requires a weight-capable estimator");
  if (estimator.capability() == Estimator::Capability::single_level &&
      grid.analysis_set().size() > 1)
    throw std::invalid_argument(
        "difference_draws: estimator is only valid at a single quantile level");

  const CoefficientProcess fit1 = estimator.fit(input.sample1, grid);
  const CoefficientProcess fit2 = estimator.fit(input.sample2, grid);
  const double sqrt_n = std::sqrt(input.n_effective());
  const Eigen::MatrixXd point = detail::analysis_difference(fit1, fit2, sqrt_n);
  const Eigen::MatrixXd base1 = fit1.analysis_rows();
  const Eigen::MatrixXd base2 = fit2.analysis_rows();

  std::vector<Eigen::MatrixXd> draws(static_cast<std::size_t>(n_draws));
  std::vector<char> ok(static_cast<std::size_t>(n_draws), 0);

  parallel_for(n_draws, options.threads, [&](std::int64_t j) {
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
      Rng rng(derive_seed(seed, {0xB007u, static_cast<std::uint64_t>(j),
                                 static_cast<std::uint64_t>(attempt)}));
      try {
        Eigen::MatrixXd star1, star2;
        if (scheme.kind == BootstrapScheme::Kind::multiplier) {
          auto eta = draw_multipliers(input.sample1.n(), input.sample2.n(),
                                      input.paired, rng);
          star1 = estimator.fit(input.sample1, grid, eta.first).analysis_rows();
          star2 = estimator.fit(input.sample2, grid, eta.second).analysis_rows();
        } else {
          ComparisonInput star = naive_resample(input, rng);
          star1 = estimator.fit(star.sample1, grid).analysis_rows();
          star2 = estimator.fit(star.sample2, grid).analysis_rows();
        }
        draws[static_cast<std::size_t>(j)] = sqrt_n * ((star1 - base1) - (star2 - base2));
        ok[static_cast<std::size_t>(j)] = 1;
        return;
      } catch (const BreakdownError&) {
        // retry with fresh randomness
      } catch (const std::runtime_error&) {
        // zero-event resample exhausted its own retries; redraw replicate
      }
    }
  });

  BootstrapDraws result;
  result.n_effective = input.n_effective();
  for (int j = 0; j < n_draws; ++j) {
    if (ok[static_cast<std::size_t>(j)])
      result.draws.push_back(std::move(draws[static_cast<std::size_t>(j)]));
    else
      ++result.failed_replicates;
  }
  if (result.failed_replicates > options.max_fail_fraction * n_draws)
    throw std::runtime_error("difference_draws: " +
                             std::to_string(result.failed_replicates) + " of " +
                             std::to_string(n_draws) + " replicates failed");
  return {point, std::move(result)};
}

// Per-tau sample covariance of the draws (divisor N), symmetrized.
inline std::vector<Eigen::MatrixXd> covariance_estimate(const BootstrapDraws& draws) {
  const int N = draws.count();
  if (N < 2) throw std::invalid_argument("covariance_estimate: need at least two draws");
  const int na = static_cast<int>(draws.draws.front().rows());
  const int m = static_cast<int>(draws.draws.front().cols());
  std::vector<Eigen::MatrixXd> sigma(static_cast<std::size_t>(na));
  for (int t = 0; t < na; ++t) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(m);
    for (const auto& d : draws.draws) mean += d.row(t).transpose();
    mean /= static_cast<double>(N);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(m, m);
    for (const auto& d : draws.draws) {
      const Eigen::VectorXd c = d.row(t).transpose() - mean;
      s += c * c.transpose();
    }
    s /= static_cast<double>(N);
    sigma[static_cast<std::size_t>(t)] = 0.5 * (s + s.transpose());
  }
  return sigma;
}

// Inverse square root of a PSD matrix with eigenvalue flooring, realizing the
// standardization matrix Sigma^{-1/2}.
inline Eigen::MatrixXd inv_sqrt_psd(const Eigen::MatrixXd& m, double floor_ratio = 1e-10) {
  if (m.rows() != m.cols()) throw std::invalid_argument("inv_sqrt_psd: matrix not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw std::invalid_argument("inv_sqrt_psd: matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  Eigen::VectorXd lam = eig.eigenvalues();
  const double lmax = lam.maxCoeff();
  const double ref = lmax > 0.0 ? lmax : 1.0;
  for (int i = 0; i < lam.size(); ++i)
    lam(i) = 1.0 / std::sqrt(std::max(lam(i), floor_ratio * ref));
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace cqr
