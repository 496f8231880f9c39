#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cqr/bootstrap.hpp"
#include "cqr/dgp.hpp"
#include "cqr/peng_huang.hpp"
#include "cqr/rng.hpp"

using namespace cqr;

TEST_CASE("paired multipliers share one vector, independent ones do not") {
  Rng rng(1);
  const auto [a, b] = draw_multipliers(5, 5, true, rng);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

  Rng rng2(1);
  const auto [c, d] = draw_multipliers(5, 5, false, rng2);
  CHECK((c - d).cwiseAbs().maxCoeff() > 0.0);

  CHECK_THROWS(draw_multipliers(4, 5, true, rng));
}

TEST_CASE("multipliers have Exp(1) moments and vanishing cross-correlation") {
  Rng rng(123);
  const int n = 1000000;
  const auto [a, b] = draw_multipliers(n, n, false, rng);
  const double mean_a = a.mean();
  const double var_a = (a.array() - mean_a).square().sum() / n;
  CHECK(std::fabs(mean_a - 1.0) < 0.005);
  CHECK(std::fabs(var_a - 1.0) < 0.01);

  const double mean_b = b.mean();
  double cov = ((a.array() - mean_a) * (b.array() - mean_b)).sum() / n;
  const double var_b = (b.array() - mean_b).square().sum() / n;
  CHECK(std::fabs(cov / std::sqrt(var_a * var_b)) <= 0.01);
}

TEST_CASE("multiplier draws are deterministic given the rng state") {
  Rng r1(777), r2(777);
  const auto [a1, b1] = draw_multipliers(50, 60, false, r1);
  const auto [a2, b2] = draw_multipliers(50, 60, false, r2);
  CHECK((a1 - a2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((b1 - b2).cwiseAbs().maxCoeff() == 0.0);
}

namespace {

SampleData tiny_sample(std::vector<double> values) {
  std::vector<Observation> obs;
  for (double v : values) obs.push_back(Observation{v, 1, {1.0, v}});
  return SampleData(std::move(obs), 1);
}

}  // namespace

TEST_CASE("naive resample of a single observation returns it") {
  const auto s = tiny_sample({0.4});
  Rng rng(3);
  const auto r = naive_resample(s, rng);
  REQUIRE(r.n() == 1);
  CHECK(r[0].log_time == 0.4);
}

TEST_CASE("paired naive resample keeps subject rows together") {
  std::vector<Observation> o1, o2;
  for (int i = 0; i < 8; ++i) {
    o1.push_back(Observation{static_cast<double>(i), 1, {1.0}});
    o2.push_back(Observation{static_cast<double>(i) + 100.0, 1, {1.0}});
  }
  const ComparisonInput input{SampleData(o1, 0), SampleData(o2, 0), true};
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const auto star = naive_resample(input, rng);
    for (int i = 0; i < star.sample1.n(); ++i)
      CHECK(star.sample2[i].log_time == star.sample1[i].log_time + 100.0);
  }
}

TEST_CASE("naive resample draws indices uniformly") {
  const auto s = tiny_sample({0.0, 1.0, 2.0});
  Rng rng(2024);
  const int reps = 100000;
  Eigen::Vector3d freq = Eigen::Vector3d::Zero();
  for (int r = 0; r < reps; ++r) {
    const auto star = naive_resample(s, rng);
    for (int i = 0; i < 3; ++i) freq(static_cast<int>(star[i].log_time)) += 1.0;
  }
  freq /= 3.0 * reps;
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(freq(i) - 1.0 / 3.0) < 0.01);
}

TEST_CASE("covariance_estimate matches hand computations") {
  SECTION("identical draws give zero covariance") {
    BootstrapDraws d;
    d.n_effective = 10;
    Eigen::MatrixXd m(2, 2);
    m << 1, 2, 3, 4;
    d.draws = {m, m, m};
    const auto sigma = covariance_estimate(d);
    for (const auto& s : sigma) CHECK(s.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("two draws +v/-v give v v^T") {
    BootstrapDraws d;
    d.n_effective = 10;
    Eigen::MatrixXd v(1, 2);
    v << 0.5, -1.5;
    d.draws = {v, -v};
    const auto sigma = covariance_estimate(d);
    REQUIRE(sigma.size() == 1);
    Eigen::MatrixXd expected(2, 2);
    expected << 0.25, -0.75, -0.75, 2.25;  // divisor N = 2, mean 0
    CHECK((sigma[0] - expected).cwiseAbs().maxCoeff() < 1e-14);
  }
  SECTION("random draws give symmetric PSD slices") {
    Rng rng(31);
    BootstrapDraws d;
    d.n_effective = 10;
    for (int j = 0; j < 40; ++j) {
      Eigen::MatrixXd m(3, 3);
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) m(a, b) = rng.normal();
      d.draws.push_back(m);
    }
    for (const auto& s : covariance_estimate(d)) {
      CHECK((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
      CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * s.trace());
    }
  }
  SECTION("fewer than two draws is an error") {
    BootstrapDraws d;
    d.draws.resize(1, Eigen::MatrixXd::Zero(1, 1));
    CHECK_THROWS(covariance_estimate(d));
  }
}

TEST_CASE("inv_sqrt_psd analytic cases and floor") {
  CHECK((inv_sqrt_psd(Eigen::MatrixXd::Identity(3, 3)) - Eigen::MatrixXd::Identity(3, 3))
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  Eigen::MatrixXd d(2, 2);
  d << 4, 0, 0, 9;
  const auto r = inv_sqrt_psd(d);
  CHECK(r(0, 0) == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(r(1, 1) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

  Eigen::MatrixXd sing(2, 2);
  sing << 1, 0, 0, 0;
  const auto rs = inv_sqrt_psd(sing, 1e-10);
  CHECK(rs(0, 0) == Catch::Approx(1.0).epsilon(1e-10));
  CHECK(rs(1, 1) == Catch::Approx(1e5).epsilon(1e-6));

  Eigen::MatrixXd asym(2, 2);
  asym << 1, 0.5, -0.5, 1;
  CHECK_THROWS(inv_sqrt_psd(asym));
}

TEST_CASE("inv_sqrt_psd whitens well-conditioned matrices") {
  Rng rng(40);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::MatrixXd a(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) a(i, j) = rng.normal();
    Eigen::MatrixXd sigma = a * a.transpose() + Eigen::MatrixXd::Identity(3, 3);
    const auto m = inv_sqrt_psd(sigma);
    CHECK((m * sigma * m - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("difference draws: validation, reproducibility and centering") {
  DgpConfig cfg;
  cfg.n1 = 70;
  cfg.n2 = 70;
  Rng rng(8);
  const auto input = generate(cfg, rng);
  const TauGrid grid = TauGrid::make(0.5, 0.025, 0.25, 0.5);
  const PengHuangEstimator est;

  SECTION("at least one draw required") {
    CHECK_THROWS_WITH(difference_draws(input, est, grid, BootstrapScheme::multiplier(), 0, 1),
                      Catch::Matchers::ContainsSubstring("at least one draw"));
  }

  SECTION("identical paired samples give an identically zero point process") {
    const ComparisonInput same{input.sample1, input.sample1, true};
    const auto [point, draws] =
        difference_draws(same, est, grid, BootstrapScheme::multiplier(), 5, 42);
    CHECK(point.cwiseAbs().maxCoeff() == 0.0);
    // multiplier draws share eta across paired samples, so every draw cancels
    for (const auto& d : draws.draws) CHECK(d.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("same seed reproduces draws bit-for-bit") {
    const auto [p1, d1] = difference_draws(input, est, grid, BootstrapScheme::naive(), 8, 99);
    const auto [p2, d2] = difference_draws(input, est, grid, BootstrapScheme::naive(), 8, 99);
    REQUIRE(d1.count() == d2.count());
    CHECK((p1 - p2).cwiseAbs().maxCoeff() == 0.0);
    for (int j = 0; j < d1.count(); ++j)
      CHECK((d1.draws[static_cast<std::size_t>(j)] - d2.draws[static_cast<std::size_t>(j)])
                .cwiseAbs()
                .maxCoeff() == 0.0);
  }

  SECTION("thread count does not change the draws") {
    DifferenceDrawOptions serial, threaded;
    serial.threads = 1;
    threaded.threads = 4;
    const auto [p1, d1] =
        difference_draws(input, est, grid, BootstrapScheme::multiplier(), 12, 5, serial);
    const auto [p2, d2] =
        difference_draws(input, est, grid, BootstrapScheme::multiplier(), 12, 5, threaded);
    REQUIRE(d1.count() == d2.count());
    for (int j = 0; j < d1.count(); ++j)
      CHECK((d1.draws[static_cast<std::size_t>(j)] - d2.draws[static_cast<std::size_t>(j)])
                .cwiseAbs()
                .maxCoeff() == 0.0);
  }
}

namespace {

// plug-in declaring single-level validity only
class SingleLevelEstimator final : public Estimator {
 public:
  using Estimator::fit;
  CoefficientProcess fit(const SampleData& s, const TauGrid& g, const Eigen::VectorXd& m,
                         bool require = true) const override {
    return ph_fit(s, g, m, require);
  }
  bool supports_multipliers() const override { return true; }
  Capability capability() const override { return Capability::single_level; }
};

}  // namespace

TEST_CASE("single-level estimators are rejected on interval analysis sets") {
  DgpConfig cfg;
  cfg.n1 = 50;
  cfg.n2 = 50;
  Rng rng(14);
  const auto input = generate(cfg, rng);
  const SingleLevelEstimator est;
  const TauGrid interval = TauGrid::make(0.5, 0.05, 0.25, 0.5);
  CHECK_THROWS_WITH(difference_draws(input, est, interval, BootstrapScheme::naive(), 2, 1),
                    Catch::Matchers::ContainsSubstring("single quantile level"));
  const TauGrid single = TauGrid::make(0.5, 0.05, 0.5, 0.5);
  CHECK_NOTHROW(difference_draws(input, est, single, BootstrapScheme::naive(), 2, 1));
}

TEST_CASE("bootstrap draw means shrink at the root-N rate") {
  DgpConfig cfg;
  cfg.n1 = 60;
  cfg.n2 = 60;
  Rng rng(21);
  const auto input = generate(cfg, rng);
  const TauGrid grid = TauGrid::make(0.5, 0.01, 0.5, 0.5);
  const PengHuangEstimator est;
  const int N = 1000;
  const auto [point, draws] =
      difference_draws(input, est, grid, BootstrapScheme::multiplier(), N, 2023);
  REQUIRE(draws.count() == N);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (const auto& d : draws.draws) {
      mean += d(0, c);
      sq += d(0, c) * d(0, c);
    }
    mean /= N;
    const double sd = std::sqrt(sq / N - mean * mean);
    CHECK(std::fabs(mean) <= 5.0 * sd / std::sqrt(static_cast<double>(N)));
  }
}
