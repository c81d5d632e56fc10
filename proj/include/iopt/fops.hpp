#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "iopt/model.hpp"
#include "iopt/solvers.hpp"

namespace iopt {

struct NoPositiveAllocation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- water-filling (rate allocation) ---------------------------------------
// max sum_d theta_d log(x_d + u_d)  s.t.  omega' x = omega_{D+1}, x >= 0,
// handled internally in minimization form.
struct WaterfillModel {
  int D = 0;
  Vec theta;  // D
  Vec omega;  // D + 1 (weights and right-hand side)

  void validate() const;
};

struct WaterfillKkt {
  Vec x;       // D
  double nu;   // equality multiplier (minimization sign convention)
  Vec lambda;  // D, duals of -x <= 0
};

// Dual bisection on the equality multiplier; exact for this separable FOP.
WaterfillKkt waterfill_bisect(const WaterfillModel& model, const Vec& u);

// Parametric version for estimation: theta in [1e-4, 10]^D, omega_d in
// [0, 10] with omega_{D+1} fixed to 1 (scale normalization).
ParametricFop make_waterfill_fop(int D);

std::pair<Dataset, TestSet> gen_waterfill_dataset(int D, int n_obs,
                                                  double sigma,
                                                  std::uint64_t seed);

// --- CVaR electricity procurement ------------------------------------------
// Deterministic equivalent of a two-stage program; variables stacked as
// z = [x(T); q(T*S); y(T*S); v; w(S)], scenario-major for q and y.
struct RiskModel {
  int T = 0;
  int S = 0;
  Vec c;        // T, contract cost coefficients (quadratic)
  Vec b;        // T, production cost coefficients
  Vec p;        // S, scenario probabilities
  Mat r;        // T x S, spot prices
  double i0 = 0.0;
  double i_min = 0.0;
  double i_max = 0.0;
  Vec d;        // T, demands
  double m = 1.0;      // consumption slope
  double alpha = 0.9;  // CVaR level
  double lambda_risk = 0.0;

  void validate() const;
  int n_vars() const { return T + 2 * T * S + 1 + S; }
  int n_ineq() const { return 2 * T * S + 2 * S; }       // general rows
  int n_bound() const { return T + 2 * T * S + S; }      // nonnegativity
  int n_eq() const { return T * S; }

  // index helpers into the stacked variable vector
  int ix(int t) const { return t; }
  int iq(int t, int s) const { return T + s * T + t; }
  int iy(int t, int s) const { return T + T * S + s * T + t; }
  int iv() const { return T + 2 * T * S; }
  int iw(int s) const { return T + 2 * T * S + 1 + s; }

  static RiskModel load(const std::string& path);
  std::string to_json() const;
  static RiskModel from_json(const std::string& text);
};

ConicProgram risk_qp_build(const RiskModel& model);

// Parametric version: theta = (lambda_risk), omega = (i_min); the
// per-observation input u is the flattened T x S spot-price matrix
// (column-major, scenario s contiguous).
ParametricFop make_risk_fop(const RiskModel& base);

// Diagonal weights selecting the observable coordinates (x_t for all t and
// q_{t, realized}); all others get weight zero.
WeightMatrix risk_observation_weights(const RiskModel& base, int realized_s);

// Each observation draws S scenarios from a synthesized pool of pool_size
// seeded spot-price profiles, solves the FOP at the true parameters, and
// records the realized scenario index.
Dataset gen_risk_dataset(const RiskModel& base, int n_obs, int pool_size,
                         std::uint64_t seed);

// --- Nash-bargaining resource allocation market -----------------------------
// max sum_b log(sum_g x_bg)  s.t.  sum_g p_bg x_bg^2 <= m_b,
//                                  sum_b x_bg <= c_g,  x >= 0.
struct RampModel {
  int B = 0;
  int G = 0;
  Mat p;  // B x G
  Vec m;  // B
  Vec c;  // G

  void validate() const;
  int idx(int b, int g) const { return b * G + g; }
};

Mat ramp_solve(const RampModel& model);

// Parametric version with the normalization m_b = 1: theta is a single
// fixed scale (1), omega stacks the normalized p_bg / m_b row-major, and u
// carries the capacity vector c.
ParametricFop make_ramp_fop(int B, int G);

std::pair<Dataset, RampModel> gen_ramp_dataset(int B, int G, int n_obs,
                                               double sigma,
                                               std::uint64_t seed);

}  // namespace iopt
