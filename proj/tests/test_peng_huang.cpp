#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cqr/dgp.hpp"
#include "cqr/peng_huang.hpp"
#include "cqr/rng.hpp"
#include "cqr/types.hpp"

using namespace cqr;

namespace {

SampleData sample_from(const std::vector<double>& log_times, const std::vector<int>& events) {
  std::vector<Observation> obs;
  for (std::size_t i = 0; i < log_times.size(); ++i)
    obs.push_back(Observation{log_times[i], events[i], {1.0}});
  return SampleData(std::move(obs), 0);
}

// Independent oracle 1: grid-exact Nelson-Aalen inversion. A pure counting
// recursion on the same tau grid, no optimization anywhere: accumulate
// at-risk-weighted hazard increments along the fitted step path and invert the
// event-count step function.
std::vector<double> grid_na_quantiles(const std::vector<double>& log_times,
                                      const std::vector<int>& events, const TauGrid& grid) {
  const std::size_t n = log_times.size();
  std::vector<double> event_times;
  for (std::size_t i = 0; i < n; ++i)
    if (events[i] == 1) event_times.push_back(log_times[i]);
  std::sort(event_times.begin(), event_times.end());

  auto count_le = [&](double t) {
    return static_cast<double>(std::upper_bound(event_times.begin(), event_times.end(), t) -
                               event_times.begin());
  };
  auto at_risk = [&](double t) {
    double y = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (log_times[i] >= t) y += 1.0;
    return y;
  };

  std::vector<double> out;
  double W = 0.0;
  double prev_level = -std::numeric_limits<double>::infinity();
  double prev_tau = 0.0;
  for (int k = 1; k <= grid.M(); ++k) {
    const double tau = grid.level(k);
    const double y = prev_level == -std::numeric_limits<double>::infinity()
                         ? static_cast<double>(n)
                         : at_risk(prev_level);
    W += y * (cumulative_hazard(tau) - cumulative_hazard(prev_tau));
    prev_tau = tau;
    // smallest event time whose count reaches W (breakdown when none does)
    double q = std::numeric_limits<double>::quiet_NaN();
    for (auto it = event_times.begin(); it != event_times.end(); ++it) {
      if (count_le(*it) >= W - 1e-12) {
        q = *it;
        break;
      }
    }
    if (std::isnan(q)) break;
    out.push_back(q);
    prev_level = q;
  }
  return out;
}

// Independent oracle 2: the continuum Nelson-Aalen quantile
// inf{t : Lambda(t) >= H(tau)}.
std::vector<double> continuum_na_quantiles(const std::vector<double>& log_times,
                                           const std::vector<int>& events,
                                           const std::vector<double>& taus) {
  std::vector<std::pair<double, int>> ordered;
  for (std::size_t i = 0; i < log_times.size(); ++i) ordered.emplace_back(log_times[i], events[i]);
  std::sort(ordered.begin(), ordered.end());
  std::vector<double> uniq, lam;
  double cum = 0.0;
  for (std::size_t i = 0; i < ordered.size();) {
    const double t = ordered[i].first;
    int d = 0;
    double y = static_cast<double>(ordered.size() - i);
    std::size_t j = i;
    while (j < ordered.size() && ordered[j].first == t) {
      d += ordered[j].second;
      ++j;
    }
    if (d > 0) {
      cum += static_cast<double>(d) / y;
      uniq.push_back(t);
      lam.push_back(cum);
    }
    i = j;
  }
  std::vector<double> out;
  for (double tau : taus) {
    const double h = cumulative_hazard(tau);
    double q = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < uniq.size(); ++i)
      if (lam[i] >= h - 1e-12) {
        q = uniq[i];
        break;
      }
    out.push_back(q);
  }
  return out;
}

}  // namespace

TEST_CASE("cumulative_hazard values and domain") {
  CHECK(cumulative_hazard(0.0) == 0.0);
  CHECK(cumulative_hazard(0.5) == Catch::Approx(0.6931472).epsilon(1e-6));
  CHECK(cumulative_hazard(0.99) == Catch::Approx(4.6051702).epsilon(1e-6));
  CHECK_THROWS(cumulative_hazard(1.0));
  CHECK_THROWS(cumulative_hazard(-0.1));
}

TEST_CASE("intercept-only fit hits the Nelson-Aalen crossing") {
  // log-times {0,1,2,3,4}, all events: NA jumps 1/5,1/4,1/3,1/2,1/1 so the
  // tau=0.5 quantile is 2 (first cumulative hazard >= log 2)
  const auto s = sample_from({0, 1, 2, 3, 4}, {1, 1, 1, 1, 1});
  const TauGrid grid = TauGrid::make(0.5, 0.002, 0.5, 0.5);
  const auto fit = ph_fit(s, grid);
  CHECK(fit.at(grid.M())(0) == 2.0);

  // censored middle observation: first hazard jump 1/3 >= H(0.25) keeps the
  // tau=0.25 quantile at the first event time 0
  const auto s2 = sample_from({0, 1, 2}, {1, 0, 1});
  const TauGrid grid2 = TauGrid::make(0.25, 0.0025, 0.25, 0.25);
  const auto fit2 = ph_fit(s2, grid2);
  CHECK(fit2.at(grid2.M())(0) == 0.0);
}

TEST_CASE("intercept-only fit equals the grid-exact Nelson-Aalen inversion") {
  Rng rng(424242);
  int continuum_checked = 0, continuum_equal = 0;
  for (int rep = 0; rep < 60; ++rep) {
    const int n = 8 + static_cast<int>(rng.index(43));
    std::vector<double> lt;
    std::vector<int> ev;
    int nev = 0;
    for (int i = 0; i < n; ++i) {
      const double t = rng.normal(0.0, 1.0);
      const double c = rng.normal(0.6, 1.0);
      lt.push_back(std::min(t, c));
      ev.push_back(t <= c ? 1 : 0);
      nev += ev.back();
    }
    if (nev == 0) continue;
    const TauGrid grid = TauGrid::make(0.6, 0.01, 0.1, 0.6);
    const auto fit = ph_fit(sample_from(lt, ev), grid, false);
    const auto oracle = grid_na_quantiles(lt, ev, grid);
    REQUIRE(fit.defined_upto == static_cast<int>(oracle.size()));
    for (int k = 1; k <= fit.defined_upto; ++k)
      CHECK(fit.at(k)(0) == oracle[static_cast<std::size_t>(k - 1)]);

    // the continuum inversion agrees except on grid-quantization slivers
    std::vector<double> taus;
    for (int k = 1; k <= fit.defined_upto; ++k) taus.push_back(grid.level(k));
    const auto cont = continuum_na_quantiles(lt, ev, taus);
    for (int k = 1; k <= fit.defined_upto; ++k) {
      if (std::isnan(cont[static_cast<std::size_t>(k - 1)])) continue;
      ++continuum_checked;
      if (fit.at(k)(0) == cont[static_cast<std::size_t>(k - 1)]) ++continuum_equal;
    }
  }
  // quantization affects only a small fraction of grid points
  CHECK(continuum_equal > 0.9 * continuum_checked);
}

TEST_CASE("estimating_function reproduces hand-computed values") {
  // n=1, log X=0, event, intercept-only, grid {0.2}
  const auto s = sample_from({0.0}, {1});
  const TauGrid grid = TauGrid::with_levels({0.0, 0.2}, {1}, false);

  SECTION("at b = 0 the indicator is active") {
    Eigen::MatrixXd beta(1, 1);
    beta(0, 0) = 0.0;
    const CoefficientProcess proc(grid, beta, 1);
    const auto S = estimating_function(s, proc, 1);
    CHECK(S(0) == Catch::Approx(1.0 - cumulative_hazard(0.2)).epsilon(1e-6));  // 0.77686
  }
  SECTION("at b = -1 the fitted line sits below the observation") {
    Eigen::MatrixXd beta(1, 1);
    beta(0, 0) = -1.0;
    const CoefficientProcess proc(grid, beta, 1);
    const auto S = estimating_function(s, proc, 1);
    CHECK(S(0) == Catch::Approx(-cumulative_hazard(0.2)).epsilon(1e-6));  // -0.22314
  }
}

TEST_CASE("estimating function stays within the discreteness bound at the fit") {
  Rng rng(77);
  for (int rep = 0; rep < 10; ++rep) {
    DgpConfig cfg;
    cfg.n1 = 120;
    cfg.n2 = 120;
    cfg.setting = CovariateSetting::shifted;
    Rng data_rng(derive_seed(1000, {static_cast<std::uint64_t>(rep)}));
    const auto input = generate(cfg, data_rng);
    const TauGrid grid = TauGrid::make(0.5, 0.02, 0.1, 0.5);
    const auto fit = ph_fit(input.sample1, grid, false);
    REQUIRE(fit.defined_upto >= 1);
    double max_z = 0.0;
    for (const auto& o : input.sample1.observations())
      for (double z : o.covariates) max_z = std::max(max_z, std::fabs(z));
    const double bound =
        3.0 * input.sample1.dim() * max_z / static_cast<double>(input.sample1.n());
    for (int k = 1; k <= fit.defined_upto; ++k) {
      const auto S = estimating_function(input.sample1, fit, k);
      CHECK(S.cwiseAbs().maxCoeff() <= bound);
    }
  }
}

TEST_CASE("breakdown before the analysis set fails loudly") {
  // largest observations censored: no quantile beyond is identifiable
  const auto s = sample_from({0.0, 0.1, 0.2, 1.0, 1.1, 1.2}, {1, 1, 1, 0, 0, 0});
  const TauGrid grid = TauGrid::make(0.9, 0.01, 0.1, 0.9);
  CHECK_THROWS_AS(ph_fit(s, grid), BreakdownError);
  const auto partial = ph_fit(s, grid, false);
  CHECK(partial.defined_upto < grid.M());
  CHECK(partial.defined_upto > 0);
}

TEST_CASE("all-ones multipliers reproduce the default fit bit-for-bit") {
  DgpConfig cfg;
  cfg.n1 = 80;
  cfg.n2 = 80;
  Rng rng(5);
  const auto input = generate(cfg, rng);
  const TauGrid grid = TauGrid::make(0.5, 0.01, 0.1, 0.5);
  const auto a = ph_fit(input.sample1, grid);
  const auto b = ph_fit(input.sample1, grid, Eigen::VectorXd::Ones(input.sample1.n()));
  REQUIRE(a.defined_upto == b.defined_upto);
  CHECK((a.beta.topRows(a.defined_upto) - b.beta.topRows(b.defined_upto))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  // constant multipliers c > 0 leave the process unchanged
  const auto c = ph_fit(input.sample1, grid,
                        Eigen::VectorXd::Constant(input.sample1.n(), 3.25));
  CHECK((a.beta.topRows(a.defined_upto) - c.beta.topRows(c.defined_upto))
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("fitted linear predictor at the mean covariate is monotone in tau") {
  DgpConfig cfg;
  cfg.n1 = 150;
  cfg.n2 = 150;
  cfg.model = 2;
  Rng rng(17);
  const auto input = generate(cfg, rng);
  const TauGrid grid = TauGrid::make(0.6, 0.01, 0.1, 0.6);
  const auto fit = ph_fit(input.sample1, grid, false);
  Eigen::VectorXd zbar = input.sample1.covariate_matrix().colwise().mean();
  double prev = -std::numeric_limits<double>::infinity();
  for (int k = 1; k <= fit.defined_upto; ++k) {
    const double pred = zbar.dot(fit.at(k));
    CHECK(pred >= prev - 1e-7);
    prev = pred;
  }
}

TEST_CASE("sqrt(n) S(beta_true, tau) is centered across replications") {
  // martingale centering of the estimating function at the true coefficients
  DgpConfig cfg;
  cfg.n1 = 200;
  cfg.n2 = 200;
  cfg.censor_target = 0.2;
  cfg.censor_bounds = calibrate_censoring(cfg, 0.2, 5e-3, 200000);
  const TauGrid grid = TauGrid::make(0.5, 0.01, 0.1, 0.5);
  const int R = 200;
  const std::vector<int> check_levels{10, 30, 50};

  Eigen::MatrixXd sums(static_cast<int>(check_levels.size()), 3);
  Eigen::MatrixXd sq_sums(static_cast<int>(check_levels.size()), 3);
  sums.setZero();
  sq_sums.setZero();
  for (int rep = 0; rep < R; ++rep) {
    Rng rng(derive_seed(31337, {static_cast<std::uint64_t>(rep)}));
    const auto input = generate(cfg, rng);
    // true coefficient path on the grid
    Eigen::MatrixXd beta(grid.M(), 3);
    for (int k = 1; k <= grid.M(); ++k)
      beta.row(k - 1) = true_beta(cfg, 1, grid.level(k)).transpose();
    const CoefficientProcess truth(grid, beta, grid.M());
    const double sqn = std::sqrt(static_cast<double>(input.sample1.n()));
    for (std::size_t c = 0; c < check_levels.size(); ++c) {
      const Eigen::VectorXd S =
          sqn * estimating_function(input.sample1, truth, check_levels[c]);
      for (int j = 0; j < 3; ++j) {
        sums(static_cast<int>(c), j) += S(j);
        sq_sums(static_cast<int>(c), j) += S(j) * S(j);
      }
    }
  }
  for (int c = 0; c < sums.rows(); ++c)
    for (int j = 0; j < 3; ++j) {
      const double mean = sums(c, j) / R;
      const double var = sq_sums(c, j) / R - mean * mean;
      const double se = std::sqrt(var / R);
      CHECK(std::fabs(mean) <= 3.0 * se + 1e-12);
    }
}
