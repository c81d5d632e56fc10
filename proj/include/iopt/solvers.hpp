#pragma once

#include "iopt/model.hpp"

#include <functional>
#include <limits>

namespace iopt {

enum class SolveStatus { Success, Infeasible, Unbounded, MaxIterations, NonFinite };

const char* to_string(SolveStatus s);

// Dense convex QP/LP
//   min 1/2 x'Qx + r'x
//   s.t. A_eq x = b_eq,  A_in x <= b_in,  lb <= x <= ub.
// Q may be empty (LP).  Matrices may have zero rows.
struct ConicProgram {
  Mat Q;
  Vec r;
  Mat A_eq;
  Vec b_eq;
  Mat A_in;
  Vec b_in;
  Vec lb;
  Vec ub;

  // Epigraph programs mark where their auxiliary tail starts: variables from
  // `dense_head` on have diagonal Q, never appear in A_eq, and appear in at
  // most one A_in row each.  solve_qp then eliminates them by a Schur
  // complement instead of factoring the full system.  -1 = no structure.
  int dense_head = -1;

  int n() const { return static_cast<int>(r.size()); }
  static ConicProgram make(int n);
};

struct QpResult {
  Vec x;
  Vec y_eq;     // equality duals
  Vec z_in;     // inequality duals (>= 0)
  Vec z_lb;     // lower-bound duals (>= 0)
  Vec z_ub;     // upper-bound duals (>= 0)
  SolveStatus status = SolveStatus::MaxIterations;
  int iterations = 0;
  double kkt_error = std::numeric_limits<double>::infinity();
  double primal_obj = 0.0;
  double dual_obj = 0.0;
};

// Mehrotra-style predictor-corrector primal-dual interior-point method.
QpResult solve_qp(const ConicProgram& prog, double tol = 1e-9, int max_iter = 100);

// Smooth convex minimization over a box, optionally with a proximal anchor:
//   min f(x) + 1/(2 gamma) ||x - anchor||^2   s.t. lb <= x <= ub.
struct SmoothProgram {
  int n = 0;
  std::function<double(const Vec&)> f;
  std::function<Vec(const Vec&)> grad;
  Vec lb;
  Vec ub;
  Vec x0;
  Vec prox_anchor;                                          // empty = no prox
  double prox_gamma = std::numeric_limits<double>::infinity();
};

struct SmoothResult {
  Vec x;
  SolveStatus status = SolveStatus::MaxIterations;
  int iterations = 0;
  double obj = 0.0;
  double pg_norm = std::numeric_limits<double>::infinity();
};

// Projected quasi-Newton descent: spectral (Barzilai-Borwein) steps with
// monotone Armijo backtracking (factor 0.5, slope 1e-4).
SmoothResult solve_smooth(const SmoothProgram& prog, double tol = 1e-8,
                          int max_iter = 2000);

// General smooth convex program
//   min f(x)  s.t.  g_k(x) <= 0,  A_eq x = b_eq
// solved by a log-barrier Newton method (t <- 10 t schedule).
struct BarrierProgram {
  int n = 0;
  std::function<double(const Vec&)> f;
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;
  int m = 0;
  std::function<Vec(const Vec&)> g;        // m
  std::function<Mat(const Vec&)> jac_g;    // m x n
  std::function<Mat(const Vec&, const Vec& w)> hess_g;  // Sum_k w_k Hess g_k; may be null (affine g)
  Mat A_eq;
  Vec b_eq;
  Vec x0;  // strictly feasible start; phase I is attempted when violated
};

struct BarrierResult {
  Vec x;
  Vec lambda;   // barrier multiplier estimates 1 / (t * (-g_k))
  Vec mu_eq;
  SolveStatus status = SolveStatus::MaxIterations;
  double gap = std::numeric_limits<double>::infinity();
};

BarrierResult solve_barrier(const BarrierProgram& prog, double tol = 1e-8);

}  // namespace iopt
