#pragma once

#include "iopt/model.hpp"
#include "iopt/solvers.hpp"

#include <Eigen/Dense>
#include <utility>
#include <vector>

namespace iopt {

struct UnknownBlock : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Residual blocks of the single-level KKT system, one row per observation.
struct KktResiduals {
  Mat stationarity;    // |I| x n
  Mat ineq_violation;  // |I| x m, max{0, g}
  Mat eq_violation;    // |I| x p
  Mat comp_slack;      // |I| x m, lambda_ik * g_k
};

// Penalty weights: one entry per residual group
// (stationarity, inequality, equality, complementarity).
struct PenaltyState {
  Eigen::Vector4d c = Eigen::Vector4d::Constant(500.0);
  double rho = 1000.0;
  double gamma = 1e6;                  // proximal parameter of the BCD subproblems
  double delta = 1e-6;                 // smoothing constant for non-affine blocks
  std::vector<bool> penalize_g;        // rows of g in the primal-feasibility penalty;
                                       // empty = complement of fop.g_hard

  void validate() const;
  std::vector<bool> effective_mask(const ParametricFop& fop) const;
};

KktResiduals residuals(const ParametricFop& fop, const Dataset& ds,
                       const IopEstimate& est);

// P = (sum_i ||r_stat_i||_1, sum_i ||ineq_i||_1, sum_i ||eq_i||_1, sum_i ||cs_i||_1)
std::pair<Eigen::Vector4d, double> penalty_norm(const KktResiduals& res);

double penalized_objective(const ParametricFop& fop, const Dataset& ds,
                           const WeightMatrix& w, const IopEstimate& est,
                           const PenaltyState& ps);

// --- BCD block machinery -------------------------------------------------

enum class BlockId { ThetaDuals, Omega, XHat };

BlockId block_id_from_name(const std::string& name);  // throws UnknownBlock

// Flat layouts used by the block and full-space solvers.
int theta_duals_dim(const ParametricFop& fop, int n_obs);
Vec pack_theta_duals(const ParametricFop& fop, const IopEstimate& est);
void unpack_theta_duals(const ParametricFop& fop, const Vec& z, IopEstimate& est);
int full_dim(const ParametricFop& fop, int n_obs);
Vec pack_full(const ParametricFop& fop, const IopEstimate& est);
void unpack_full(const ParametricFop& fop, const Vec& z, IopEstimate& est);

// Self-contained convex subproblem for one BCD block with all other blocks
// frozen at `est`.  Affine blocks additionally carry an exact LP/QP epigraph
// form whose leading `epigraph_real_dim` variables are the block variables;
// the smoothed form is always present.  The XHat block separates over
// observations and is returned as one piece per observation.
struct BlockProblem {
  BlockId id = BlockId::ThetaDuals;
  bool affine = false;
  bool separated = false;  // one piece per observation
  std::vector<ConicProgram> epigraph;
  std::vector<int> epigraph_real_dim;
  std::vector<SmoothProgram> smooth;
  std::vector<Vec> current;
};

BlockProblem block_subproblem_data(const ParametricFop& fop, const Dataset& ds,
                                   const WeightMatrix& w, const IopEstimate& est,
                                   const PenaltyState& ps, BlockId block);

// Epigraph LP fitting theta alone to the stationarity residuals, with the
// duals frozen at `est`.  Valid when stationarity is affine in theta; used
// when the joint (theta, duals) piece is too large to solve in one shot.
// Leading dim_theta variables are theta.
ConicProgram theta_only_epigraph(const ParametricFop& fop, const Dataset& ds,
                                 const IopEstimate& est, const PenaltyState& ps);

// Smoothed full-space program over (theta, omega, x_hat, lambda, mu); used by
// the full-space baseline.
SmoothProgram full_space_program(const ParametricFop& fop, const Dataset& ds,
                                 const WeightMatrix& w, const IopEstimate& est,
                                 const PenaltyState& ps);

// smoothed absolute value / positive part
inline double smooth_abs(double r, double delta) {
  return std::sqrt(r * r + delta * delta);
}
inline double smooth_abs_d(double r, double delta) {
  return r / std::sqrt(r * r + delta * delta);
}
inline double smooth_pos(double r, double delta) {
  return 0.5 * (r + std::sqrt(r * r + delta * delta));
}
inline double smooth_pos_d(double r, double delta) {
  return 0.5 * (1.0 + r / std::sqrt(r * r + delta * delta));
}

}  // namespace iopt
