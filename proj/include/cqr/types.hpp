#pragma once

// Shared data model: censored samples, quantile grids and fitted coefficient
// processes. All types are immutable value types once constructed and safe to
// share read-only across workers.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace cqr {

// One censored observation: log of the follow-up time X = min(T,C), the event
// indicator I(T <= C) and the covariate vector with a leading intercept 1.
struct Observation {
  double log_time = 0.0;
  int event = 0;
  std::vector<double> covariates;  // covariates[0] == 1
};

class SampleData {
 public:
  SampleData() = default;

  SampleData(std::vector<Observation> obs, int p) : obs_(std::move(obs)), p_(p) {
    if (p_ < 0) throw std::invalid_argument("SampleData: negative covariate dimension");
    int events = 0;
    for (std::size_t i = 0; i < obs_.size(); ++i) {
      const Observation& o = obs_[i];
      if (o.covariates.size() != static_cast<std::size_t>(p_ + 1))
        throw std::invalid_argument("SampleData: inconsistent covariate length at row " +
                                    std::to_string(i + 1));
      if (o.covariates[0] != 1.0)
        throw std::invalid_argument("SampleData: covariates[0] must equal 1 at row " +
                                    std::to_string(i + 1));
      if (o.event != 0 && o.event != 1)
        throw std::invalid_argument("SampleData: event must be 0 or 1 at row " +
                                    std::to_string(i + 1));
      if (!std::isfinite(o.log_time))
        throw std::invalid_argument("SampleData: non-finite log time at row " +
                                    std::to_string(i + 1));
      for (double z : o.covariates)
        if (!std::isfinite(z))
          throw std::invalid_argument("SampleData: non-finite covariate at row " +
                                      std::to_string(i + 1));
      events += o.event;
    }
    if (obs_.empty()) throw std::invalid_argument("SampleData: empty sample");
    if (events == 0) throw std::invalid_argument("SampleData: no events");
  }

  int n() const { return static_cast<int>(obs_.size()); }
  int p() const { return p_; }
  int dim() const { return p_ + 1; }
  const std::vector<Observation>& observations() const { return obs_; }
  const Observation& operator[](int i) const { return obs_[static_cast<std::size_t>(i)]; }

  Eigen::MatrixXd covariate_matrix() const {
    Eigen::MatrixXd Z(n(), dim());
    for (int i = 0; i < n(); ++i)
      for (int j = 0; j < dim(); ++j) Z(i, j) = obs_[static_cast<std::size_t>(i)].covariates[static_cast<std::size_t>(j)];
    return Z;
  }

  Eigen::VectorXd log_times() const {
    Eigen::VectorXd y(n());
    for (int i = 0; i < n(); ++i) y(i) = obs_[static_cast<std::size_t>(i)].log_time;
    return y;
  }

  Eigen::VectorXi events() const {
    Eigen::VectorXi d(n());
    for (int i = 0; i < n(); ++i) d(i) = obs_[static_cast<std::size_t>(i)].event;
    return d;
  }

 private:
  std::vector<Observation> obs_;
  int p_ = 0;
};

// Raw input row prior to validation: positive time on the original scale.
struct RawRow {
  double time = 0.0;
  int event = 0;
  std::vector<double> covariates;  // with or without leading intercept
};

// Validates raw rows, applies the log transform and prepends the intercept
// column when absent (absent = first column not identically 1).
inline SampleData validate_sample(const std::vector<RawRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("validate_sample: no rows");
  const std::size_t ncov = rows.front().covariates.size();
  bool has_intercept = ncov > 0;
  for (const RawRow& r : rows) {
    if (r.covariates.size() != ncov)
      throw std::invalid_argument("validate_sample: inconsistent covariate lengths");
    if (has_intercept && r.covariates[0] != 1.0) has_intercept = false;
  }
  std::vector<Observation> obs;
  obs.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RawRow& r = rows[i];
    if (!(r.time > 0.0) || !std::isfinite(r.time))
      throw std::invalid_argument("validate_sample: nonpositive time at row " +
                                  std::to_string(i + 1));
    Observation o;
    o.log_time = std::log(r.time);
    o.event = r.event;
    if (has_intercept) {
      o.covariates = r.covariates;
    } else {
      o.covariates.reserve(ncov + 1);
      o.covariates.push_back(1.0);
      o.covariates.insert(o.covariates.end(), r.covariates.begin(), r.covariates.end());
    }
    obs.push_back(std::move(o));
  }
  const int p = static_cast<int>(obs.front().covariates.size()) - 1;
  return SampleData(std::move(obs), p);
}

// Two samples collected from the same subjects; index i refers to the same
// subject in both.
struct PairedData {
  SampleData sample1;
  SampleData sample2;

  PairedData(SampleData s1, SampleData s2)
      : sample1(std::move(s1)), sample2(std::move(s2)) {
    if (sample1.n() != sample2.n())
      throw std::invalid_argument("PairedData: samples must have equal length");
    if (sample1.p() != sample2.p())
      throw std::invalid_argument("PairedData: samples must share covariate dimension");
  }
  int n() const { return sample1.n(); }
};

// A two-sample comparison input; paired flags that equal indices are the same
// subject (and resampling must keep them together).
struct ComparisonInput {
  SampleData sample1;
  SampleData sample2;
  bool paired = false;

  static ComparisonInput independent(SampleData s1, SampleData s2) {
    if (s1.p() != s2.p())
      throw std::invalid_argument("ComparisonInput: covariate dimensions differ");
    return ComparisonInput{std::move(s1), std::move(s2), false};
  }
  static ComparisonInput from_paired(PairedData d) {
    return ComparisonInput{std::move(d.sample1), std::move(d.sample2), true};
  }
  int p() const { return sample1.p(); }
  // n entering the sqrt(n) scaling: n1 + n2 for independent samples, the
  // number of pairs for paired data.
  double n_effective() const {
    return paired ? sample1.n() : sample1.n() + sample2.n();
  }
};

// Estimation grid 0 = tau_0 < tau_1 < ... < tau_M < 1 plus the analysis set
// A (indices into the grid). tau_0 is a formal origin only; no coefficient is
// stored for it.
class TauGrid {
 public:
  // Equally spaced levels {step, 2 step, ..., tau_R}; analysis endpoints are
  // snapped to the nearest grid level (exact when multiples of the step).
  static TauGrid make(double tau_R, double step, double analysis_lo, double analysis_hi) {
    if (!(step > 0.0) || !(step <= tau_R) || !(tau_R < 1.0))
      throw std::invalid_argument("TauGrid: need 0 < step <= tau_R < 1");
    if (!(analysis_lo > 0.0) || analysis_lo > analysis_hi || analysis_hi > tau_R + 1e-12)
      throw std::invalid_argument("TauGrid: need 0 < analysis_lo <= analysis_hi <= tau_R");
    const int M = static_cast<int>(std::floor(tau_R / step + 1e-9));
    std::vector<double> levels(static_cast<std::size_t>(M) + 1);
    levels[0] = 0.0;
    for (int k = 1; k <= M; ++k) levels[static_cast<std::size_t>(k)] = k * step;
    const int lo = std::clamp(static_cast<int>(std::llround(analysis_lo / step)), 1, M);
    const int hi = std::clamp(static_cast<int>(std::llround(analysis_hi / step)), 1, M);
    if (lo > hi) throw std::invalid_argument("TauGrid: empty analysis set after snapping");
    std::vector<int> analysis;
    for (int k = lo; k <= hi; ++k) analysis.push_back(k);
    return TauGrid(std::move(levels), std::move(analysis), hi > lo);
  }

  // Arbitrary strictly increasing levels with an explicit analysis subset;
  // interval selects trapezoid quadrature, otherwise plain sums are used.
  static TauGrid with_levels(std::vector<double> levels, std::vector<int> analysis,
                             bool interval) {
    return TauGrid(std::move(levels), std::move(analysis), interval);
  }

  int M() const { return static_cast<int>(levels_.size()) - 1; }
  double level(int k) const { return levels_[static_cast<std::size_t>(k)]; }
  const std::vector<double>& levels() const { return levels_; }
  const std::vector<int>& analysis_set() const { return analysis_; }
  bool analysis_is_interval() const { return interval_; }
  int max_analysis_index() const { return analysis_.back(); }

  std::vector<double> analysis_levels() const {
    std::vector<double> out;
    out.reserve(analysis_.size());
    for (int k : analysis_) out.push_back(level(k));
    return out;
  }

 private:
  TauGrid(std::vector<double> levels, std::vector<int> analysis, bool interval)
      : levels_(std::move(levels)), analysis_(std::move(analysis)), interval_(interval) {
    if (levels_.size() < 2 || levels_[0] != 0.0)
      throw std::invalid_argument("TauGrid: levels must start at the formal origin 0");
    for (std::size_t k = 1; k < levels_.size(); ++k)
      if (!(levels_[k] > levels_[k - 1]))
        throw std::invalid_argument("TauGrid: levels must be strictly increasing");
    if (levels_.back() >= 1.0) throw std::invalid_argument("TauGrid: tau_M must be < 1");
    if (analysis_.empty()) throw std::invalid_argument("TauGrid: empty analysis set");
    for (std::size_t i = 0; i < analysis_.size(); ++i) {
      if (analysis_[i] < 1 || analysis_[i] > M())
        throw std::invalid_argument("TauGrid: analysis index out of range");
      if (i > 0 && analysis_[i] <= analysis_[i - 1])
        throw std::invalid_argument("TauGrid: analysis indices must increase");
      if (interval_ && i > 0 && analysis_[i] != analysis_[i - 1] + 1)
        throw std::invalid_argument("TauGrid: interval analysis set must be contiguous");
    }
    if (interval_ && analysis_.size() < 2)
      throw std::invalid_argument("TauGrid: interval analysis set needs >= 2 points");
  }

  std::vector<double> levels_;
  std::vector<int> analysis_;
  bool interval_ = false;
};

// Thrown when estimation breaks down before covering the requested range.
class BreakdownError : public std::runtime_error {
 public:
  BreakdownError(const std::string& what, double largest_tau)
      : std::runtime_error(what), largest_tau_(largest_tau) {}
  double largest_attainable_tau() const { return largest_tau_; }

 private:
  double largest_tau_;
};

// Fitted coefficient process over a grid. Row k-1 holds beta(tau_k); rows past
// defined_upto are NaN (identifiability breakdown).
struct CoefficientProcess {
  TauGrid grid;
  Eigen::MatrixXd beta;  // M x (p+1)
  int defined_upto = 0;  // largest k with a valid row

  CoefficientProcess(TauGrid g, Eigen::MatrixXd b, int upto)
      : grid(std::move(g)), beta(std::move(b)), defined_upto(upto) {
    if (beta.rows() != grid.M())
      throw std::invalid_argument("CoefficientProcess: row count must equal M");
    if (defined_upto < 0 || defined_upto > grid.M())
      throw std::invalid_argument("CoefficientProcess: defined_upto out of range");
    for (int k = 1; k <= defined_upto; ++k)
      if (!beta.row(k - 1).allFinite())
        throw std::invalid_argument("CoefficientProcess: non-finite defined row");
  }

  int dim() const { return static_cast<int>(beta.cols()); }

  Eigen::VectorXd at(int k) const {  // k in 1..defined_upto
    if (k < 1 || k > defined_upto)
      throw std::out_of_range("CoefficientProcess: index past defined range");
    return beta.row(k - 1);
  }

  bool covers_analysis() const { return defined_upto >= grid.max_analysis_index(); }

  void require_analysis_coverage() const {
    if (!covers_analysis())
      throw BreakdownError(
          "coefficient process breaks down at tau = " +
              std::to_string(defined_upto >= 1 ? grid.level(defined_upto) : 0.0) +
              " before covering the analysis set",
          defined_upto >= 1 ? grid.level(defined_upto) : 0.0);
  }

  // Rows of beta restricted to the analysis set (requires coverage).
  Eigen::MatrixXd analysis_rows() const {
    require_analysis_coverage();
    const auto& A = grid.analysis_set();
    Eigen::MatrixXd out(static_cast<int>(A.size()), beta.cols());
    for (std::size_t i = 0; i < A.size(); ++i) out.row(static_cast<int>(i)) = beta.row(A[i] - 1);
    return out;
  }
};

}  // namespace cqr
