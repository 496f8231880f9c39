#pragma once

// Minimizes weighted piecewise-linear convex objectives
//     f(b) = sum_i w_i |a_i - d_i^T b|,   b in R^m,
// by vertex descent: keep m residuals pinned at zero, test the 2m edge
// directions leaving the vertex, and take an exact weighted-median line search
// along the steepest descending edge. Finite for generic data; an iteration
// cap plus a final subgradient certificate guards degenerate inputs.
//
// Optimality certificate at a vertex b with basis B: with u_j solving
// D_B u_j = e_j, the directional derivatives along +/- u_j are w_j -/+ g^T u_j
// where g = sum_{i not in B} w_i sign(d_i^T b - a_i) d_i. The vertex is optimal
// iff |g^T u_j| <= w_j for all j in B, which exhibits an exact zero subgradient
// (s_j = -g^T u_j / w_j on the basis terms).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cqr {

enum class L1Status { optimal, degenerate, unbounded, iteration_limit };

struct L1Term {
  double weight = 1.0;
  double response = 0.0;
  Eigen::VectorXd direction;
};

struct L1Problem {
  int dim = 0;
  std::vector<L1Term> terms;
};

struct L1Solution {
  Eigen::VectorXd x;
  L1Status status = L1Status::degenerate;
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  std::vector<int> basis;  // term indices pinned at zero residual
};

namespace detail {

inline double l1_objective(const Eigen::MatrixXd& D, const Eigen::VectorXd& a,
                           const Eigen::VectorXd& w, const Eigen::VectorXd& b) {
  return (w.array() * (a - D * b).array().abs()).sum();
}

// Greedy independent row selection among `candidates` (in order), via
// modified Gram-Schmidt. Returns chosen indices; empty if span deficient.
inline std::vector<int> select_basis(const Eigen::MatrixXd& D,
                                     const std::vector<int>& candidates, int m) {
  std::vector<int> chosen;
  std::vector<Eigen::VectorXd> ortho;
  chosen.reserve(static_cast<std::size_t>(m));
  for (int idx : candidates) {
    Eigen::VectorXd v = D.row(idx).transpose();
    const double base = v.norm();
    if (base <= 0.0) continue;
    for (const auto& q : ortho) v -= q.dot(v) * q;
    if (v.norm() > 1e-10 * base) {
      ortho.push_back(v.normalized());
      chosen.push_back(idx);
      if (static_cast<int>(chosen.size()) == m) return chosen;
    }
  }
  return {};
}

}  // namespace detail

namespace detail {

// Coalesces terms with bit-identical (response, direction), summing weights.
// Duplicate rows (typical under resampling) otherwise create degenerate
// vertices where the per-term subgradient certificate is too strict and the
// descent cycles. Returns representative original indices per merged term and
// the original->merged map.
struct MergedTerms {
  Eigen::MatrixXd D;
  Eigen::VectorXd a, w;
  std::vector<int> rep;       // merged -> original index
  std::vector<int> to_merged; // original -> merged index
  bool merged = false;
};

inline MergedTerms merge_duplicate_terms(const Eigen::MatrixXd& D, const Eigen::VectorXd& a,
                                         const Eigen::VectorXd& w) {
  const int n = static_cast<int>(D.rows());
  const int m = static_cast<int>(D.cols());
  MergedTerms out;
  out.to_merged.resize(static_cast<std::size_t>(n));
  std::unordered_map<std::string, int> seen;
  seen.reserve(static_cast<std::size_t>(n));
  std::vector<double> weights;
  std::string key(static_cast<std::size_t>(m + 1) * sizeof(double), '\0');
  for (int i = 0; i < n; ++i) {
    std::memcpy(key.data(), &a(i), sizeof(double));
    for (int j = 0; j < m; ++j)
      std::memcpy(key.data() + (static_cast<std::size_t>(j) + 1) * sizeof(double), &D(i, j),
                  sizeof(double));
    const auto [it, inserted] = seen.emplace(key, static_cast<int>(out.rep.size()));
    if (inserted) {
      out.rep.push_back(i);
      weights.push_back(w(i));
    } else {
      weights[static_cast<std::size_t>(it->second)] += w(i);
      out.merged = true;
    }
    out.to_merged[static_cast<std::size_t>(i)] = it->second;
  }
  if (!out.merged) return out;
  const int k = static_cast<int>(out.rep.size());
  out.D.resize(k, m);
  out.a.resize(k);
  out.w.resize(k);
  for (int i = 0; i < k; ++i) {
    out.D.row(i) = D.row(out.rep[static_cast<std::size_t>(i)]);
    out.a(i) = a(out.rep[static_cast<std::size_t>(i)]);
    out.w(i) = weights[static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace detail

// Core solver on raw arrays: rows of D are term directions. `basis_io`, when
// non-null, supplies a warm-start basis and receives the final one.
inline L1Solution solve_weighted_l1(const Eigen::MatrixXd& D_in, const Eigen::VectorXd& a_in,
                                    const Eigen::VectorXd& w_in, double tol = 1e-8,
                                    std::vector<int>* basis_io = nullptr) {
  if (a_in.size() != D_in.rows() || w_in.size() != D_in.rows())
    throw std::invalid_argument("solve_weighted_l1: shape mismatch");
  if (D_in.cols() < 1) throw std::invalid_argument("solve_weighted_l1: empty dimension");

  const detail::MergedTerms merged = detail::merge_duplicate_terms(D_in, a_in, w_in);
  const Eigen::MatrixXd& D = merged.merged ? merged.D : D_in;
  const Eigen::VectorXd& a = merged.merged ? merged.a : a_in;
  const Eigen::VectorXd& w = merged.merged ? merged.w : w_in;
  const int n = static_cast<int>(D.rows());
  const int m = static_cast<int>(D.cols());

  // translate a warm-start basis into merged indices (drop it on collisions)
  std::vector<int> warm;
  if (basis_io && static_cast<int>(basis_io->size()) == m) {
    warm.reserve(static_cast<std::size_t>(m));
    for (int idx : *basis_io) {
      if (idx < 0 || idx >= static_cast<int>(merged.to_merged.size())) {
        warm.clear();
        break;
      }
      const int t = merged.merged ? merged.to_merged[static_cast<std::size_t>(idx)] : idx;
      if (std::find(warm.begin(), warm.end(), t) != warm.end()) {
        warm.clear();
        break;
      }
      warm.push_back(t);
    }
  }

  L1Solution sol;
  sol.x = Eigen::VectorXd::Zero(m);

  std::vector<int> active;  // positive-weight terms
  active.reserve(static_cast<std::size_t>(n));
  double scale = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!(w(i) >= 0.0) || !std::isfinite(w(i)))
      throw std::invalid_argument("solve_weighted_l1: weights must be finite and >= 0");
    if (w(i) > 0.0) {
      active.push_back(i);
      scale += w(i) * D.row(i).cwiseAbs().maxCoeff();
    }
  }
  if (static_cast<int>(active.size()) < m) {
    sol.status = L1Status::degenerate;
    return sol;
  }
  if (scale <= 0.0) scale = 1.0;
  const double slack = tol * scale;

  // Basis: warm start when still independent, greedy selection otherwise.
  std::vector<int> basis;
  if (static_cast<int>(warm.size()) == m) {
    bool plausible = true;
    for (int idx : warm)
      if (idx < 0 || idx >= n || !(w(idx) > 0.0)) plausible = false;
    if (plausible) {
      std::vector<int> check = detail::select_basis(D, warm, m);
      if (static_cast<int>(check.size()) == m) basis = warm;
    }
  }
  if (basis.empty()) {
    basis = detail::select_basis(D, active, m);
    if (basis.empty()) {
      sol.status = L1Status::degenerate;
      return sol;
    }
  }

  Eigen::MatrixXd DB(m, m);
  Eigen::VectorXd aB(m);
  std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
  for (int j = 0; j < m; ++j) in_basis[static_cast<std::size_t>(basis[j])] = 1;

  const int max_iter = 200 + 20 * m + 4 * n;
  double best_obj = std::numeric_limits<double>::infinity();
  int stall = 0;

  for (int iter = 0; iter < max_iter; ++iter) {
    sol.iterations = iter;
    for (int j = 0; j < m; ++j) {
      DB.row(j) = D.row(basis[j]);
      aB(j) = a(basis[j]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(DB);
    if (!lu.isInvertible()) {
      // stale warm start after direction updates; rebuild and restart
      for (int idx : basis) in_basis[static_cast<std::size_t>(idx)] = 0;
      basis = detail::select_basis(D, active, m);
      if (basis.empty()) {
        sol.status = L1Status::degenerate;
        return sol;
      }
      for (int idx : basis) in_basis[static_cast<std::size_t>(idx)] = 1;
      continue;
    }
    const Eigen::VectorXd b = lu.solve(aB);

    Eigen::VectorXd g = Eigen::VectorXd::Zero(m);
    for (int i : active) {
      if (in_basis[static_cast<std::size_t>(i)]) continue;
      const double r = a(i) - D.row(i).dot(b);
      if (r > 0.0)
        g -= w(i) * D.row(i).transpose();
      else if (r < 0.0)
        g += w(i) * D.row(i).transpose();
    }
    // v_j = g^T u_j with D_B u_j = e_j  <=>  D_B^T v = g
    const Eigen::VectorXd v = lu.transpose().solve(g);

    // Certificate: with s_j = clip(-v_j / w_j) on the basis terms the
    // remaining subgradient norm is bounded by the scaled excess sum.
    double worst = 0.0;
    double excess_sum = 0.0;
    int jstar = -1;
    const bool bland = stall > m + 2;  // anti-cycling fallback
    for (int j = 0; j < m; ++j) {
      const double excess = std::fabs(v(j)) - w(basis[j]);
      if (excess > 0.0) {
        excess_sum += excess * DB.row(j).cwiseAbs().maxCoeff();
        if (bland ? (jstar == -1 || basis[j] < basis[jstar]) : (excess > worst)) {
          worst = excess;
          jstar = j;
        }
      }
    }
    if (jstar == -1 || excess_sum <= slack) {
      sol.x = b;
      sol.status = L1Status::optimal;
      sol.objective = detail::l1_objective(D, a, w, b);
      sol.basis = basis;
      if (merged.merged)
        for (int& idx : sol.basis) idx = merged.rep[static_cast<std::size_t>(idx)];
      if (basis_io) *basis_io = sol.basis;
      return sol;
    }

    // Descend along the edge that releases basis term jstar.
    Eigen::VectorXd u = lu.solve(Eigen::VectorXd::Unit(m, jstar));
    if (v(jstar) > 0.0) u = -u;
    double deriv = g.dot(u) + w(basis[jstar]);  // < 0 by choice of jstar

    // Exact line search over residual sign changes.
    std::vector<std::pair<double, int>> crossings;
    crossings.reserve(active.size());
    for (int i : active) {
      if (in_basis[static_cast<std::size_t>(i)]) continue;
      const double s = D.row(i).dot(u);
      if (s == 0.0) continue;
      const double r = a(i) - D.row(i).dot(b);
      const double t = r / s;
      if (t >= 0.0) crossings.emplace_back(t, i);
    }
    std::sort(crossings.begin(), crossings.end());

    int entering = -1;
    for (const auto& [t, i] : crossings) {
      deriv += 2.0 * w(i) * std::fabs(D.row(i).dot(u));
      if (deriv >= 0.0) {
        entering = i;
        break;
      }
    }
    if (entering == -1) {
      sol.x = b;
      sol.status = L1Status::unbounded;
      sol.basis = basis;
      if (merged.merged)
        for (int& idx : sol.basis) idx = merged.rep[static_cast<std::size_t>(idx)];
      return sol;
    }

    in_basis[static_cast<std::size_t>(basis[jstar])] = 0;
    in_basis[static_cast<std::size_t>(entering)] = 1;
    basis[jstar] = entering;

    const double obj = detail::l1_objective(D, a, w, b);
    if (obj < best_obj - slack) {
      best_obj = obj;
      stall = 0;
    } else {
      ++stall;
    }
  }

  // Cap reached: accept only if the certificate already holds.
  for (int j = 0; j < m; ++j) {
    DB.row(j) = D.row(basis[j]);
    aB(j) = a(basis[j]);
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(DB);
  if (lu.isInvertible()) {
    sol.x = lu.solve(aB);
    sol.objective = detail::l1_objective(D, a, w, sol.x);
    sol.basis = basis;
    if (merged.merged)
      for (int& idx : sol.basis) idx = merged.rep[static_cast<std::size_t>(idx)];
  }
  sol.status = L1Status::iteration_limit;
  return sol;
}

// Validated front end over L1Problem.
inline L1Solution solve_l1(const L1Problem& problem, double tol = 1e-8) {
  const int m = problem.dim;
  const int n = static_cast<int>(problem.terms.size());
  if (m < 1) throw std::invalid_argument("solve_l1: dimension must be >= 1");
  if (n < 1) throw std::invalid_argument("solve_l1: no terms");
  Eigen::MatrixXd D(n, m);
  Eigen::VectorXd a(n), w(n);
  for (int i = 0; i < n; ++i) {
    const L1Term& t = problem.terms[static_cast<std::size_t>(i)];
    if (t.direction.size() != m)
      throw std::invalid_argument("solve_l1: direction length mismatch");
    if (!std::isfinite(t.response))
      throw std::invalid_argument("solve_l1: non-finite response");
    D.row(i) = t.direction.transpose();
    a(i) = t.response;
    w(i) = t.weight;
  }
  return solve_weighted_l1(D, a, w, tol);
}

}  // namespace cqr
