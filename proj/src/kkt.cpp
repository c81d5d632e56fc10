#include "iopt/kkt.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace iopt {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) throw NonFiniteEvaluation(std::string("non-finite ") + what);
}

Vec stationarity_at(const ParametricFop& fop, const Vec& x, const Vec& u,
                    const Vec& theta, const Vec& omega, const Vec& lambda,
                    const Vec& mu) {
  Vec r = fop.grad_f_x(x, u, theta);
  if (fop.m > 0) r += fop.jac_g_x(x, u, omega).transpose() * lambda;
  if (fop.p > 0) r += fop.jac_h_x(x, u, omega).transpose() * mu;
  return r;
}

}  // namespace

void PenaltyState::validate() const {
  if ((c.array() <= 0.0).any()) throw InvalidModel("PenaltyState: c must be positive");
  if (rho <= 0.0) throw InvalidModel("PenaltyState: rho must be positive");
  if (gamma <= 0.0) throw InvalidModel("PenaltyState: gamma must be positive");
}

std::vector<bool> PenaltyState::effective_mask(const ParametricFop& fop) const {
  if (!penalize_g.empty()) {
    if (static_cast<int>(penalize_g.size()) != fop.m)
      throw DimensionMismatch("PenaltyState: penalize_g size");
    return penalize_g;
  }
  std::vector<bool> mask(fop.m);
  for (int k = 0; k < fop.m; ++k) mask[k] = !fop.g_hard[k];
  return mask;
}

KktResiduals residuals(const ParametricFop& fop, const Dataset& ds,
                       const IopEstimate& est) {
  est.validate_against(fop, ds);
  const int ni = ds.size();
  KktResiduals res;
  res.stationarity.resize(ni, fop.n);
  res.ineq_violation.resize(ni, fop.m);
  res.eq_violation.resize(ni, fop.p);
  res.comp_slack.resize(ni, fop.m);

  for (int i = 0; i < ni; ++i) {
    const Vec x = est.x_hat.row(i);
    const Vec& u = ds.observations[i].u;
    const Vec lam = est.lambda.row(i);
    const Vec mu = est.mu.row(i);
    Vec r = stationarity_at(fop, x, u, est.theta, est.omega, lam, mu);
    check_finite(r, "stationarity residual");
    res.stationarity.row(i) = r;
    if (fop.m > 0) {
      Vec gv = fop.eval_g(x, u, est.omega);
      check_finite(gv, "inequality evaluation");
      res.ineq_violation.row(i) = gv.cwiseMax(0.0);
      res.comp_slack.row(i) = lam.cwiseProduct(gv);
    }
    if (fop.p > 0) {
      Vec hv = fop.eval_h(x, u, est.omega);
      check_finite(hv, "equality evaluation");
      res.eq_violation.row(i) = hv;
    }
  }
  return res;
}

std::pair<Eigen::Vector4d, double> penalty_norm(const KktResiduals& res) {
  Eigen::Vector4d P;
  P[0] = res.stationarity.cwiseAbs().sum();
  P[1] = res.ineq_violation.cwiseAbs().sum();
  P[2] = res.eq_violation.cwiseAbs().sum();
  P[3] = res.comp_slack.cwiseAbs().sum();
  return {P, P.sum()};
}

double penalized_objective(const ParametricFop& fop, const Dataset& ds,
                           const WeightMatrix& w, const IopEstimate& est,
                           const PenaltyState& ps) {
  KktResiduals res = residuals(fop, ds, est);
  const std::vector<bool> mask = ps.effective_mask(fop);

  double fit = 0.0;
  for (int i = 0; i < ds.size(); ++i) {
    Vec d = ds.observations[i].x - est.x_hat.row(i).transpose();
    fit += d.cwiseProduct(w.diagonal).dot(d);
  }
  Eigen::Vector4d P;
  P[0] = res.stationarity.cwiseAbs().sum();
  P[1] = 0.0;
  for (int k = 0; k < fop.m; ++k)
    if (mask[k]) P[1] += res.ineq_violation.col(k).cwiseAbs().sum();
  P[2] = res.eq_violation.cwiseAbs().sum();
  P[3] = res.comp_slack.cwiseAbs().sum();
  return fit + ps.c.dot(P);
}

// --- layouts --------------------------------------------------------------

BlockId block_id_from_name(const std::string& name) {
  if (name == "theta_duals" || name == "theta" || name == "theta_lambda_mu")
    return BlockId::ThetaDuals;
  if (name == "omega") return BlockId::Omega;
  if (name == "x_hat" || name == "x") return BlockId::XHat;
  throw UnknownBlock("unknown BCD block: " + name);
}

int theta_duals_dim(const ParametricFop& fop, int n_obs) {
  return fop.dim_theta + n_obs * (fop.m + fop.p);
}

Vec pack_theta_duals(const ParametricFop& fop, const IopEstimate& est) {
  const int ni = static_cast<int>(est.x_hat.rows());
  Vec z(theta_duals_dim(fop, ni));
  z.head(fop.dim_theta) = est.theta;
  int off = fop.dim_theta;
  for (int i = 0; i < ni; ++i) {
    if (fop.m > 0) z.segment(off, fop.m) = est.lambda.row(i);
    off += fop.m;
    if (fop.p > 0) z.segment(off, fop.p) = est.mu.row(i);
    off += fop.p;
  }
  return z;
}

void unpack_theta_duals(const ParametricFop& fop, const Vec& z, IopEstimate& est) {
  est.theta = z.head(fop.dim_theta);
  int off = fop.dim_theta;
  for (int i = 0; i < est.x_hat.rows(); ++i) {
    if (fop.m > 0) est.lambda.row(i) = z.segment(off, fop.m);
    off += fop.m;
    if (fop.p > 0) est.mu.row(i) = z.segment(off, fop.p);
    off += fop.p;
  }
}

int full_dim(const ParametricFop& fop, int n_obs) {
  return fop.dim_theta + fop.dim_omega + n_obs * (fop.n + fop.m + fop.p);
}

Vec pack_full(const ParametricFop& fop, const IopEstimate& est) {
  const int ni = static_cast<int>(est.x_hat.rows());
  Vec z(full_dim(fop, ni));
  z.head(fop.dim_theta) = est.theta;
  z.segment(fop.dim_theta, fop.dim_omega) = est.omega;
  int off = fop.dim_theta + fop.dim_omega;
  for (int i = 0; i < ni; ++i) {
    z.segment(off, fop.n) = est.x_hat.row(i);
    off += fop.n;
    if (fop.m > 0) z.segment(off, fop.m) = est.lambda.row(i);
    off += fop.m;
    if (fop.p > 0) z.segment(off, fop.p) = est.mu.row(i);
    off += fop.p;
  }
  return z;
}

void unpack_full(const ParametricFop& fop, const Vec& z, IopEstimate& est) {
  est.theta = z.head(fop.dim_theta);
  est.omega = z.segment(fop.dim_theta, fop.dim_omega);
  int off = fop.dim_theta + fop.dim_omega;
  for (int i = 0; i < est.x_hat.rows(); ++i) {
    est.x_hat.row(i) = z.segment(off, fop.n);
    off += fop.n;
    if (fop.m > 0) est.lambda.row(i) = z.segment(off, fop.m);
    off += fop.m;
    if (fop.p > 0) est.mu.row(i) = z.segment(off, fop.p);
    off += fop.p;
  }
}

// --- affine probing -------------------------------------------------------

namespace {

// grad_f(x, u, theta) = S * theta + d  (exact when affine in theta)
void probe_theta(const ParametricFop& fop, const Vec& x, const Vec& u,
                 const Vec& theta_base, Mat& S, Vec& d) {
  Vec g0 = fop.grad_f_x(x, u, theta_base);
  S.resize(fop.n, fop.dim_theta);
  for (int j = 0; j < fop.dim_theta; ++j) {
    Vec tp = theta_base;
    tp[j] += 1.0;
    S.col(j) = fop.grad_f_x(x, u, tp) - g0;
  }
  d = g0 - S * theta_base;
}

struct OmegaAffine {
  Mat R;  // stationarity: n x dw
  Vec r0;
  Mat G;  // inequality: m x dw
  Vec g0;
  Mat H;  // equality: p x dw
  Vec h0;
};

OmegaAffine probe_omega(const ParametricFop& fop, const Vec& x, const Vec& u,
                        const Vec& theta, const Vec& lam, const Vec& mu,
                        const Vec& omega_base) {
  OmegaAffine a;
  const int dw = fop.dim_omega;
  Vec r_base = stationarity_at(fop, x, u, theta, omega_base, lam, mu);
  Vec g_base = fop.m > 0 ? fop.eval_g(x, u, omega_base) : Vec(Vec::Zero(0));
  Vec h_base = fop.p > 0 ? fop.eval_h(x, u, omega_base) : Vec(Vec::Zero(0));
  a.R.resize(fop.n, dw);
  a.G.resize(fop.m, dw);
  a.H.resize(fop.p, dw);
  // central differences with unit step; exact for affine dependence and used
  // only as a linearization otherwise
  const double step = fop.constraints_affine_omega ? 0.5 : 1e-6;
  for (int j = 0; j < dw; ++j) {
    Vec wp = omega_base, wm = omega_base;
    wp[j] += step;
    wm[j] -= step;
    a.R.col(j) =
        (stationarity_at(fop, x, u, theta, wp, lam, mu) -
         stationarity_at(fop, x, u, theta, wm, lam, mu)) / (2 * step);
    if (fop.m > 0)
      a.G.col(j) = (fop.eval_g(x, u, wp) - fop.eval_g(x, u, wm)) / (2 * step);
    if (fop.p > 0)
      a.H.col(j) = (fop.eval_h(x, u, wp) - fop.eval_h(x, u, wm)) / (2 * step);
  }
  a.r0 = r_base - a.R * omega_base;
  a.g0 = g_base - a.G * omega_base;
  a.h0 = h_base - a.H * omega_base;
  return a;
}

// Jacobian of the stationarity residual in x; analytic when Hessian
// callbacks are present, otherwise central finite differences.
Mat stationarity_jac_x(const ParametricFop& fop, const Vec& x, const Vec& u,
                       const Vec& theta, const Vec& omega, const Vec& lam,
                       const Vec& mu) {
  if (fop.hess_f_x) {
    Mat J = fop.hess_f_x(x, u, theta);
    if (fop.m > 0 && fop.hess_g_x) J += fop.hess_g_x(x, u, omega, lam);
    // h affine in x: no curvature contribution
    return J;
  }
  Mat J(fop.n, fop.n);
  for (int j = 0; j < fop.n; ++j) {
    double step = 1e-6 * std::max(1.0, std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    J.col(j) = (stationarity_at(fop, xp, u, theta, omega, lam, mu) -
                stationarity_at(fop, xm, u, theta, omega, lam, mu)) /
               (2 * step);
  }
  return J;
}

// shared per-observation data for the (theta, lambda, mu) block
struct ThetaDualsData {
  std::vector<Mat> S;       // n x dtheta
  std::vector<Vec> d;       // n
  std::vector<Mat> Jg;      // m x n
  std::vector<Mat> Jh;      // p x n
  std::vector<Vec> g;       // m (constants in this block)
};

ThetaDualsData make_theta_duals_data(const ParametricFop& fop, const Dataset& ds,
                                     const IopEstimate& est) {
  ThetaDualsData td;
  const int ni = ds.size();
  td.S.resize(ni);
  td.d.resize(ni);
  td.Jg.resize(ni);
  td.Jh.resize(ni);
  td.g.resize(ni);
  for (int i = 0; i < ni; ++i) {
    const Vec x = est.x_hat.row(i);
    const Vec& u = ds.observations[i].u;
    probe_theta(fop, x, u, est.theta, td.S[i], td.d[i]);
    td.Jg[i] = fop.m > 0 ? fop.jac_g_x(x, u, est.omega) : Mat(0, fop.n);
    td.Jh[i] = fop.p > 0 ? fop.jac_h_x(x, u, est.omega) : Mat(0, fop.n);
    td.g[i] = fop.m > 0 ? fop.eval_g(x, u, est.omega) : Vec(Vec::Zero(0));
    check_finite(td.d[i], "theta probe");
  }
  return td;
}

}  // namespace

// --- block subproblems ----------------------------------------------------

namespace {

BoxDomain theta_duals_bounds(const ParametricFop& fop, int ni) {
  const int dim = theta_duals_dim(fop, ni);
  Vec lo = Vec::Constant(dim, -kInf);
  Vec hi = Vec::Constant(dim, kInf);
  lo.head(fop.dim_theta) = fop.theta_domain.lower;
  hi.head(fop.dim_theta) = fop.theta_domain.upper;
  int off = fop.dim_theta;
  for (int i = 0; i < ni; ++i) {
    lo.segment(off, fop.m).setZero();  // lambda >= 0
    off += fop.m + fop.p;
  }
  return BoxDomain(lo, hi);
}

SmoothProgram theta_duals_smooth(const ParametricFop& fop, const Dataset& ds,
                                 const IopEstimate& est, const PenaltyState& ps,
                                 std::shared_ptr<ThetaDualsData> td) {
  const int ni = ds.size();
  const int dim = theta_duals_dim(fop, ni);
  const double c1 = ps.c[0], c4 = ps.c[3];
  const double delta = ps.delta;
  const int dt = fop.dim_theta, m = fop.m, p = fop.p;

  SmoothProgram sp;
  sp.n = dim;
  BoxDomain bounds = theta_duals_bounds(fop, ni);
  sp.lb = bounds.lower;
  sp.ub = bounds.upper;
  sp.x0 = pack_theta_duals(fop, est);
  sp.prox_anchor = sp.x0;
  sp.prox_gamma = ps.gamma;
  sp.f = [td, ni, dt, m, p, c1, c4, delta](const Vec& z) {
    double val = 0.0;
    Vec theta = z.head(dt);
    int off = dt;
    for (int i = 0; i < ni; ++i) {
      Vec r = td->S[i] * theta + td->d[i];
      if (m > 0) r += td->Jg[i].transpose() * z.segment(off, m);
      if (p > 0) r += td->Jh[i].transpose() * z.segment(off + m, p);
      for (int j = 0; j < r.size(); ++j) val += c1 * smooth_abs(r[j], delta);
      for (int k = 0; k < m; ++k)
        val += c4 * z[off + k] * std::abs(td->g[i][k]);  // lambda >= 0
      off += m + p;
    }
    return val;
  };
  sp.grad = [td, ni, dt, m, p, c1, c4, delta](const Vec& z) {
    Vec grad = Vec::Zero(z.size());
    Vec theta = z.head(dt);
    int off = dt;
    for (int i = 0; i < ni; ++i) {
      Vec r = td->S[i] * theta + td->d[i];
      if (m > 0) r += td->Jg[i].transpose() * z.segment(off, m);
      if (p > 0) r += td->Jh[i].transpose() * z.segment(off + m, p);
      Vec w(r.size());
      for (int j = 0; j < r.size(); ++j) w[j] = c1 * smooth_abs_d(r[j], delta);
      grad.head(dt) += td->S[i].transpose() * w;
      if (m > 0) {
        grad.segment(off, m) += td->Jg[i] * w;
        grad.segment(off, m) += c4 * td->g[i].cwiseAbs();
      }
      if (p > 0) grad.segment(off + m, p) += td->Jh[i] * w;
      off += m + p;
    }
    return grad;
  };
  return sp;
}

// Per-observation piece of the (theta, lambda, mu) block for the case where
// every theta coordinate is pinned by its box: the duals of different
// observations then share no variables and the block separates.
SmoothProgram duals_obs_smooth(const ParametricFop& fop, const IopEstimate& est,
                               const PenaltyState& ps,
                               std::shared_ptr<ThetaDualsData> td, int i) {
  const int m = fop.m, p = fop.p;
  const double c1 = ps.c[0], c4 = ps.c[3];
  const double delta = ps.delta;
  const Vec base = td->S[i] * est.theta + td->d[i];

  SmoothProgram sp;
  sp.n = m + p;
  sp.lb = Vec::Constant(m + p, -kInf);
  sp.ub = Vec::Constant(m + p, kInf);
  sp.lb.head(m).setZero();  // lambda >= 0
  Vec z0(m + p);
  z0.head(m) = est.lambda.row(i);
  if (p > 0) z0.tail(p) = est.mu.row(i);
  sp.x0 = z0;
  sp.prox_anchor = z0;
  sp.prox_gamma = ps.gamma;
  sp.f = [td, i, base, m, p, c1, c4, delta](const Vec& z) {
    Vec r = base;
    if (m > 0) r += td->Jg[i].transpose() * z.head(m);
    if (p > 0) r += td->Jh[i].transpose() * z.tail(p);
    double val = 0.0;
    for (int j = 0; j < r.size(); ++j) val += c1 * smooth_abs(r[j], delta);
    for (int k = 0; k < m; ++k) val += c4 * z[k] * std::abs(td->g[i][k]);
    return val;
  };
  sp.grad = [td, i, base, m, p, c1, c4, delta](const Vec& z) {
    Vec r = base;
    if (m > 0) r += td->Jg[i].transpose() * z.head(m);
    if (p > 0) r += td->Jh[i].transpose() * z.tail(p);
    Vec w(r.size());
    for (int j = 0; j < r.size(); ++j) w[j] = c1 * smooth_abs_d(r[j], delta);
    Vec grad(m + p);
    if (m > 0) grad.head(m) = td->Jg[i] * w + c4 * td->g[i].cwiseAbs();
    if (p > 0) grad.tail(p) = td->Jh[i] * w;
    return grad;
  };
  return sp;
}

ConicProgram duals_obs_epigraph(const ParametricFop& fop, const IopEstimate& est,
                                const PenaltyState& ps, const ThetaDualsData& td,
                                int i) {
  const int m = fop.m, p = fop.p, n = fop.n;
  const int real = m + p;
  const int dim = real + n;
  const Vec base = td.S[i] * est.theta + td.d[i];

  ConicProgram cp = ConicProgram::make(dim);
  cp.dense_head = real;
  cp.lb.segment(0, m).setZero();  // lambda >= 0
  for (int k = 0; k < m; ++k) cp.r[k] = ps.c[3] * std::abs(td.g[i][k]);
  cp.r.tail(n).setConstant(ps.c[0]);
  cp.Q = Mat::Zero(dim, dim);
  cp.Q.topLeftCorner(real, real) = (1.0 / ps.gamma) * Mat::Identity(real, real);
  Vec anchor(real);
  anchor.head(m) = est.lambda.row(i);
  if (p > 0) anchor.tail(p) = est.mu.row(i);
  cp.r.head(real) -= anchor / ps.gamma;

  cp.A_in = Mat::Zero(2 * n, dim);
  cp.b_in = Vec::Zero(2 * n);
  int row = 0;
  auto fill = [&](double sgn) {
    if (m > 0) cp.A_in.block(row, 0, n, m) = sgn * td.Jg[i].transpose();
    if (p > 0) cp.A_in.block(row, m, n, p) = sgn * td.Jh[i].transpose();
    cp.A_in.block(row, real, n, n) = -Mat::Identity(n, n);
    cp.b_in.segment(row, n) = -sgn * base;
    row += n;
  };
  fill(1.0);
  fill(-1.0);
  return cp;
}

ConicProgram theta_duals_epigraph(const ParametricFop& fop, const Dataset& ds,
                                  const IopEstimate& est, const PenaltyState& ps,
                                  const ThetaDualsData& td, bool with_prox) {
  const int ni = ds.size();
  const int dt = fop.dim_theta, m = fop.m, p = fop.p, n = fop.n;
  const int real = theta_duals_dim(fop, ni);
  const int dim = real + ni * n;  // aux t per stationarity component

  ConicProgram cp = ConicProgram::make(dim);
  cp.dense_head = real;
  BoxDomain bounds = theta_duals_bounds(fop, ni);
  cp.lb.head(real) = bounds.lower;
  cp.ub.head(real) = bounds.upper;

  // costs
  for (int i = 0; i < ni; ++i) {
    int off = dt + i * (m + p);
    for (int k = 0; k < m; ++k) cp.r[off + k] = ps.c[3] * std::abs(td.g[i][k]);
    cp.r.segment(real + i * n, n).setConstant(ps.c[0]);
  }
  if (with_prox) {
    cp.Q = Mat::Zero(dim, dim);
    cp.Q.topLeftCorner(real, real) = (1.0 / ps.gamma) * Mat::Identity(real, real);
    Vec anchor = pack_theta_duals(fop, est);
    cp.r.head(real) -= anchor / ps.gamma;
  }

  // |S theta + Jg' lam + Jh' mu + d| <= t
  cp.A_in = Mat::Zero(2 * ni * n, dim);
  cp.b_in = Vec::Zero(2 * ni * n);
  for (int i = 0; i < ni; ++i) {
    int off = dt + i * (m + p);
    int taux = real + i * n;
    int row = 2 * i * n;
    auto fill = [&](double sgn) {
      cp.A_in.block(row, 0, n, dt) = sgn * td.S[i];
      if (m > 0) cp.A_in.block(row, off, n, m) = sgn * td.Jg[i].transpose();
      if (p > 0) cp.A_in.block(row, off + m, n, p) = sgn * td.Jh[i].transpose();
      cp.A_in.block(row, taux, n, n) = -Mat::Identity(n, n);
      cp.b_in.segment(row, n) = -sgn * td.d[i];
      row += n;
    };
    fill(1.0);
    fill(-1.0);
  }
  return cp;
}

SmoothProgram omega_smooth(const ParametricFop& fop, const Dataset& ds,
                           const IopEstimate& est, const PenaltyState& ps) {
  const int ni = ds.size();
  const int dw = fop.dim_omega;
  const double c1 = ps.c[0], c2 = ps.c[1], c3 = ps.c[2], c4 = ps.c[3];
  const double delta = ps.delta;
  const std::vector<bool> mask = ps.effective_mask(fop);

  auto data = std::make_shared<std::vector<OmegaAffine>>();
  auto lam = std::make_shared<Mat>(est.lambda);
  data->reserve(ni);
  for (int i = 0; i < ni; ++i) {
    data->push_back(probe_omega(fop, est.x_hat.row(i), ds.observations[i].u,
                                est.theta, est.lambda.row(i), est.mu.row(i),
                                est.omega));
  }

  SmoothProgram sp;
  sp.n = dw;
  sp.lb = fop.omega_domain.lower;
  sp.ub = fop.omega_domain.upper;
  sp.x0 = est.omega;
  sp.prox_anchor = est.omega;
  sp.prox_gamma = ps.gamma;
  const int m = fop.m, p = fop.p;
  sp.f = [data, lam, ni, m, p, c1, c2, c3, c4, delta, mask](const Vec& w) {
    double val = 0.0;
    for (int i = 0; i < ni; ++i) {
      const OmegaAffine& a = (*data)[i];
      Vec r = a.R * w + a.r0;
      for (int j = 0; j < r.size(); ++j) val += c1 * smooth_abs(r[j], delta);
      if (m > 0) {
        Vec gv = a.G * w + a.g0;
        for (int k = 0; k < m; ++k) {
          if (mask[k]) val += c2 * smooth_pos(gv[k], delta);
          val += c4 * smooth_abs((*lam)(i, k) * gv[k], delta);
        }
      }
      if (p > 0) {
        Vec hv = a.H * w + a.h0;
        for (int k = 0; k < p; ++k) val += c3 * smooth_abs(hv[k], delta);
      }
    }
    return val;
  };
  sp.grad = [data, lam, ni, m, p, c1, c2, c3, c4, delta, mask](const Vec& w) {
    Vec grad = Vec::Zero(w.size());
    for (int i = 0; i < ni; ++i) {
      const OmegaAffine& a = (*data)[i];
      Vec r = a.R * w + a.r0;
      Vec wr(r.size());
      for (int j = 0; j < r.size(); ++j) wr[j] = c1 * smooth_abs_d(r[j], delta);
      grad += a.R.transpose() * wr;
      if (m > 0) {
        Vec gv = a.G * w + a.g0;
        Vec wg = Vec::Zero(m);
        for (int k = 0; k < m; ++k) {
          if (mask[k]) wg[k] += c2 * smooth_pos_d(gv[k], delta);
          double l = (*lam)(i, k);
          wg[k] += c4 * smooth_abs_d(l * gv[k], delta) * l;
        }
        grad += a.G.transpose() * wg;
      }
      if (p > 0) {
        Vec hv = a.H * w + a.h0;
        Vec wh(p);
        for (int k = 0; k < p; ++k) wh[k] = c3 * smooth_abs_d(hv[k], delta);
        grad += a.H.transpose() * wh;
      }
    }
    return grad;
  };
  return sp;
}

ConicProgram omega_epigraph(const ParametricFop& fop, const Dataset& ds,
                            const IopEstimate& est, const PenaltyState& ps) {
  const int ni = ds.size();
  const int dw = fop.dim_omega;
  const int m = fop.m, p = fop.p, n = fop.n;
  const std::vector<bool> mask = ps.effective_mask(fop);

  std::vector<OmegaAffine> data;
  data.reserve(ni);
  for (int i = 0; i < ni; ++i)
    data.push_back(probe_omega(fop, est.x_hat.row(i), ds.observations[i].u,
                               est.theta, est.lambda.row(i), est.mu.row(i),
                               est.omega));

  // Residual components whose affine map in omega is (numerically) zero are
  // constants of this block: they need no epigraph variable.  Likewise,
  // complementarity rows with a negligible dual contribute nothing the block
  // can act on.  Dropping both keeps the QP at the size of the rows omega
  // actually touches.
  const double row_tol = 1e-12;
  double lam_scale = 0.0;
  for (int i = 0; i < ni; ++i)
    lam_scale = std::max(lam_scale, est.lambda.row(i).cwiseAbs().maxCoeff());
  const double lam_tol = 1e-9 * (1.0 + lam_scale);

  std::vector<std::pair<int, int>> stat_rows, in_rows, eq_rows, cs_rows;
  for (int i = 0; i < ni; ++i) {
    const OmegaAffine& a = data[i];
    for (int j = 0; j < n; ++j)
      if (a.R.row(j).cwiseAbs().maxCoeff() > row_tol) stat_rows.emplace_back(i, j);
    for (int k = 0; k < m; ++k) {
      const bool varies = a.G.row(k).cwiseAbs().maxCoeff() > row_tol;
      if (mask[k] && varies) in_rows.emplace_back(i, k);
      if (varies && std::abs(est.lambda(i, k)) > lam_tol) cs_rows.emplace_back(i, k);
    }
    for (int k = 0; k < p; ++k)
      if (a.H.row(k).cwiseAbs().maxCoeff() > row_tol) eq_rows.emplace_back(i, k);
  }

  const int n_stat = static_cast<int>(stat_rows.size());
  const int n_in = static_cast<int>(in_rows.size());
  const int n_eq = static_cast<int>(eq_rows.size());
  const int n_cs = static_cast<int>(cs_rows.size());
  const int dim = dw + n_stat + n_in + n_eq + n_cs;
  const int o_stat = dw, o_in = o_stat + n_stat, o_eq = o_in + n_in,
            o_cs = o_eq + n_eq;

  ConicProgram cp = ConicProgram::make(dim);
  cp.dense_head = dw;
  cp.lb.head(dw) = fop.omega_domain.lower;
  cp.ub.head(dw) = fop.omega_domain.upper;
  if (n_stat > 0) cp.r.segment(o_stat, n_stat).setConstant(ps.c[0]);
  if (n_in > 0) {
    cp.r.segment(o_in, n_in).setConstant(ps.c[1]);
    cp.lb.segment(o_in, n_in).setZero();  // t >= 0 for max{0, g}
  }
  if (n_eq > 0) cp.r.segment(o_eq, n_eq).setConstant(ps.c[2]);
  if (n_cs > 0) cp.r.segment(o_cs, n_cs).setConstant(ps.c[3]);
  cp.Q = Mat::Zero(dim, dim);
  cp.Q.topLeftCorner(dw, dw) = (1.0 / ps.gamma) * Mat::Identity(dw, dw);
  cp.r.head(dw) -= est.omega / ps.gamma;

  const int rows = 2 * n_stat + n_in + 2 * n_eq + 2 * n_cs;
  cp.A_in = Mat::Zero(rows, dim);
  cp.b_in = Vec::Zero(rows);
  int row = 0;
  for (int idx = 0; idx < n_stat; ++idx) {
    auto [i, j] = stat_rows[idx];
    const OmegaAffine& a = data[i];
    const int t = o_stat + idx;
    // |R_j w + r0_j| <= t
    cp.A_in.block(row, 0, 1, dw) = a.R.row(j);
    cp.A_in(row, t) = -1.0;
    cp.b_in[row] = -a.r0[j];
    ++row;
    cp.A_in.block(row, 0, 1, dw) = -a.R.row(j);
    cp.A_in(row, t) = -1.0;
    cp.b_in[row] = a.r0[j];
    ++row;
  }
  for (int idx = 0; idx < n_in; ++idx) {
    auto [i, k] = in_rows[idx];
    const OmegaAffine& a = data[i];
    const int t = o_in + idx;
    // g_k(w) <= t, t >= 0
    cp.A_in.block(row, 0, 1, dw) = a.G.row(k);
    cp.A_in(row, t) = -1.0;
    cp.b_in[row] = -a.g0[k];
    ++row;
  }
  for (int idx = 0; idx < n_eq; ++idx) {
    auto [i, k] = eq_rows[idx];
    const OmegaAffine& a = data[i];
    const int t = o_eq + idx;
    cp.A_in.block(row, 0, 1, dw) = a.H.row(k);
    cp.A_in(row, t) = -1.0;
    cp.b_in[row] = -a.h0[k];
    ++row;
    cp.A_in.block(row, 0, 1, dw) = -a.H.row(k);
    cp.A_in(row, t) = -1.0;
    cp.b_in[row] = a.h0[k];
    ++row;
  }
  for (int idx = 0; idx < n_cs; ++idx) {
    auto [i, k] = cs_rows[idx];
    const OmegaAffine& a = data[i];
    const double l = est.lambda(i, k);
    const int t = o_cs + idx;
    cp.A_in.block(row, 0, 1, dw) = l * a.G.row(k);
    cp.A_in(row, t) = -1.0;
    cp.b_in[row] = -l * a.g0[k];
    ++row;
    cp.A_in.block(row, 0, 1, dw) = -l * a.G.row(k);
    cp.A_in(row, t) = -1.0;
    cp.b_in[row] = l * a.g0[k];
    ++row;
  }
  return cp;
}

SmoothProgram xhat_smooth(const ParametricFop& fop, const Dataset& ds,
                          const WeightMatrix& w, const IopEstimate& est,
                          const PenaltyState& ps, int i) {
  const double c1 = ps.c[0], c2 = ps.c[1], c3 = ps.c[2], c4 = ps.c[3];
  const double delta = ps.delta;
  const std::vector<bool> mask = ps.effective_mask(fop);
  const int m = fop.m, p = fop.p;

  auto u = std::make_shared<Vec>(ds.observations[i].u);
  auto xobs = std::make_shared<Vec>(ds.observations[i].x);
  auto wd = std::make_shared<Vec>(w.diagonal);
  auto theta = std::make_shared<Vec>(est.theta);
  auto omega = std::make_shared<Vec>(est.omega);
  auto lam = std::make_shared<Vec>(est.lambda.row(i));
  auto mu = std::make_shared<Vec>(est.mu.row(i));
  const ParametricFop* fp = &fop;

  SmoothProgram sp;
  sp.n = fop.n;
  sp.lb = fop.x_bounds.lower;
  sp.ub = fop.x_bounds.upper;
  sp.x0 = est.x_hat.row(i);
  sp.prox_anchor = sp.x0;
  sp.prox_gamma = ps.gamma;
  sp.f = [fp, u, xobs, wd, theta, omega, lam, mu, m, p, c1, c2, c3, c4, delta,
          mask](const Vec& x) {
    Vec diff = *xobs - x;
    double val = diff.cwiseProduct(*wd).dot(diff);
    Vec r = stationarity_at(*fp, x, *u, *theta, *omega, *lam, *mu);
    if (!r.allFinite()) return kInf;
    for (int j = 0; j < r.size(); ++j) val += c1 * smooth_abs(r[j], delta);
    if (m > 0) {
      Vec gv = fp->eval_g(x, *u, *omega);
      if (!gv.allFinite()) return kInf;
      for (int k = 0; k < m; ++k) {
        if (mask[k]) val += c2 * smooth_pos(gv[k], delta);
        val += c4 * smooth_abs((*lam)[k] * gv[k], delta);
      }
    }
    if (p > 0) {
      Vec hv = fp->eval_h(x, *u, *omega);
      if (!hv.allFinite()) return kInf;
      for (int k = 0; k < p; ++k) val += c3 * smooth_abs(hv[k], delta);
    }
    return val;
  };
  sp.grad = [fp, u, xobs, wd, theta, omega, lam, mu, m, p, c1, c2, c3, c4,
             delta, mask](const Vec& x) {
    Vec grad = 2.0 * wd->cwiseProduct(x - *xobs);
    Vec r = stationarity_at(*fp, x, *u, *theta, *omega, *lam, *mu);
    Mat Jr = stationarity_jac_x(*fp, x, *u, *theta, *omega, *lam, *mu);
    Vec wr(r.size());
    for (int j = 0; j < r.size(); ++j) wr[j] = c1 * smooth_abs_d(r[j], delta);
    grad += Jr.transpose() * wr;
    if (m > 0) {
      Vec gv = fp->eval_g(x, *u, *omega);
      Mat Jg = fp->jac_g_x(x, *u, *omega);
      Vec wg = Vec::Zero(m);
      for (int k = 0; k < m; ++k) {
        if (mask[k]) wg[k] += c2 * smooth_pos_d(gv[k], delta);
        double l = (*lam)[k];
        wg[k] += c4 * smooth_abs_d(l * gv[k], delta) * l;
      }
      grad += Jg.transpose() * wg;
    }
    if (p > 0) {
      Vec hv = fp->eval_h(x, *u, *omega);
      Mat Jh = fp->jac_h_x(x, *u, *omega);
      Vec wh(p);
      for (int k = 0; k < p; ++k) wh[k] = c3 * smooth_abs_d(hv[k], delta);
      grad += Jh.transpose() * wh;
    }
    return grad;
  };
  return sp;
}

ConicProgram xhat_epigraph(const ParametricFop& fop, const Dataset& ds,
                           const WeightMatrix& w, const IopEstimate& est,
                           const PenaltyState& ps, int i) {
  const int n = fop.n, m = fop.m, p = fop.p;
  const std::vector<bool> mask = ps.effective_mask(fop);
  const Vec x0 = est.x_hat.row(i);
  const Vec& u = ds.observations[i].u;
  const Vec lam = est.lambda.row(i);
  const Vec mu = est.mu.row(i);

  // affine pieces in x (exact for QP-representable FOPs)
  Mat Jr = stationarity_jac_x(fop, x0, u, est.theta, est.omega, lam, mu);
  Vec r0 = stationarity_at(fop, x0, u, est.theta, est.omega, lam, mu) - Jr * x0;
  Mat Jg = m > 0 ? fop.jac_g_x(x0, u, est.omega) : Mat(0, n);
  Vec g0 = m > 0 ? Vec(fop.eval_g(x0, u, est.omega) - Jg * x0) : Vec(Vec::Zero(0));
  Mat Jh = p > 0 ? fop.jac_h_x(x0, u, est.omega) : Mat(0, n);
  Vec h0 = p > 0 ? Vec(fop.eval_h(x0, u, est.omega) - Jh * x0) : Vec(Vec::Zero(0));

  int n_pen = 0;
  for (int k = 0; k < m; ++k)
    if (mask[k]) ++n_pen;
  std::vector<int> cs_rows;
  for (int k = 0; k < m; ++k)
    if (lam[k] != 0.0) cs_rows.push_back(k);

  const int n_cs = static_cast<int>(cs_rows.size());
  const int o_stat = n, o_in = o_stat + n, o_eq = o_in + n_pen, o_cs = o_eq + p;
  const int dim = n + n + n_pen + p + n_cs;

  ConicProgram cp = ConicProgram::make(dim);
  cp.dense_head = n;
  cp.lb.head(n) = fop.x_bounds.lower;
  cp.ub.head(n) = fop.x_bounds.upper;
  cp.Q = Mat::Zero(dim, dim);
  cp.Q.topLeftCorner(n, n) =
      2.0 * w.diagonal.asDiagonal().toDenseMatrix() +
      (1.0 / ps.gamma) * Mat::Identity(n, n);
  cp.r.head(n) = -2.0 * w.diagonal.cwiseProduct(ds.observations[i].x) -
                 x0 / ps.gamma;
  cp.r.segment(o_stat, n).setConstant(ps.c[0]);
  if (n_pen > 0) {
    cp.r.segment(o_in, n_pen).setConstant(ps.c[1]);
    cp.lb.segment(o_in, n_pen).setZero();
  }
  if (p > 0) cp.r.segment(o_eq, p).setConstant(ps.c[2]);
  if (n_cs > 0) cp.r.segment(o_cs, n_cs).setConstant(ps.c[3]);

  const int rows = 2 * n + n_pen + 2 * p + 2 * n_cs;
  cp.A_in = Mat::Zero(rows, dim);
  cp.b_in = Vec::Zero(rows);
  int row = 0;
  // |Jr x + r0| <= t_stat
  cp.A_in.block(row, 0, n, n) = Jr;
  cp.A_in.block(row, o_stat, n, n) = -Mat::Identity(n, n);
  cp.b_in.segment(row, n) = -r0;
  row += n;
  cp.A_in.block(row, 0, n, n) = -Jr;
  cp.A_in.block(row, o_stat, n, n) = -Mat::Identity(n, n);
  cp.b_in.segment(row, n) = r0;
  row += n;
  {
    int t = o_in;
    for (int k = 0; k < m; ++k) {
      if (!mask[k]) continue;
      cp.A_in.block(row, 0, 1, n) = Jg.row(k);
      cp.A_in(row, t) = -1.0;
      cp.b_in[row] = -g0[k];
      ++row;
      ++t;
    }
  }
  for (int k = 0; k < p; ++k) {
    cp.A_in.block(row, 0, 1, n) = Jh.row(k);
    cp.A_in(row, o_eq + k) = -1.0;
    cp.b_in[row] = -h0[k];
    ++row;
    cp.A_in.block(row, 0, 1, n) = -Jh.row(k);
    cp.A_in(row, o_eq + k) = -1.0;
    cp.b_in[row] = h0[k];
    ++row;
  }
  for (int idx = 0; idx < n_cs; ++idx) {
    int k = cs_rows[idx];
    double l = lam[k];
    cp.A_in.block(row, 0, 1, n) = l * Jg.row(k);
    cp.A_in(row, o_cs + idx) = -1.0;
    cp.b_in[row] = -l * g0[k];
    ++row;
    cp.A_in.block(row, 0, 1, n) = -l * Jg.row(k);
    cp.A_in(row, o_cs + idx) = -1.0;
    cp.b_in[row] = l * g0[k];
    ++row;
  }
  return cp;
}

}  // namespace

ConicProgram theta_only_epigraph(const ParametricFop& fop, const Dataset& ds,
                                 const IopEstimate& est, const PenaltyState& ps) {
  if (!fop.stationarity_affine_theta)
    throw InvalidModel("theta_only_epigraph: stationarity not affine in theta");
  const int ni = ds.size();
  const int dt = fop.dim_theta, n = fop.n;
  const int dim = dt + ni * n;  // aux t per stationarity component

  ConicProgram cp = ConicProgram::make(dim);
  cp.dense_head = dt;
  cp.lb.head(dt) = fop.theta_domain.lower;
  cp.ub.head(dt) = fop.theta_domain.upper;
  cp.r.tail(ni * n).setConstant(ps.c[0]);
  cp.Q = Mat::Zero(dim, dim);
  cp.Q.topLeftCorner(dt, dt) = (1.0 / ps.gamma) * Mat::Identity(dt, dt);
  cp.r.head(dt) -= est.theta / ps.gamma;

  // |S theta + (d + Jg' lam + Jh' mu)| <= t, duals frozen
  cp.A_in = Mat::Zero(2 * ni * n, dim);
  cp.b_in = Vec::Zero(2 * ni * n);
  for (int i = 0; i < ni; ++i) {
    const Vec x = est.x_hat.row(i);
    const Vec& u = ds.observations[i].u;
    Mat S;
    Vec d;
    probe_theta(fop, x, u, est.theta, S, d);
    if (fop.m > 0)
      d += fop.jac_g_x(x, u, est.omega).transpose() * est.lambda.row(i).transpose();
    if (fop.p > 0)
      d += fop.jac_h_x(x, u, est.omega).transpose() * est.mu.row(i).transpose();
    const int taux = dt + i * n;
    int row = 2 * i * n;
    auto fill = [&](double sgn) {
      cp.A_in.block(row, 0, n, dt) = sgn * S;
      cp.A_in.block(row, taux, n, n) = -Mat::Identity(n, n);
      cp.b_in.segment(row, n) = -sgn * d;
      row += n;
    };
    fill(1.0);
    fill(-1.0);
  }
  return cp;
}

BlockProblem block_subproblem_data(const ParametricFop& fop, const Dataset& ds,
                                   const WeightMatrix& w, const IopEstimate& est,
                                   const PenaltyState& ps, BlockId block) {
  est.validate_against(fop, ds);
  BlockProblem bp;
  bp.id = block;
  const int ni = ds.size();

  switch (block) {
    case BlockId::ThetaDuals: {
      auto td = std::make_shared<ThetaDualsData>(make_theta_duals_data(fop, ds, est));
      bp.affine = fop.stationarity_affine_theta;
      bool theta_free = false;
      for (int j = 0; j < fop.dim_theta; ++j)
        if (!fop.theta_domain.is_fixed(j)) theta_free = true;
      if (!theta_free) {
        // no shared variables across observations: separate pieces
        bp.separated = true;
        for (int i = 0; i < ni; ++i) {
          bp.smooth.push_back(duals_obs_smooth(fop, est, ps, td, i));
          Vec z0(fop.m + fop.p);
          z0.head(fop.m) = est.lambda.row(i);
          if (fop.p > 0) z0.tail(fop.p) = est.mu.row(i);
          bp.current.push_back(z0);
          if (bp.affine) {
            bp.epigraph.push_back(duals_obs_epigraph(fop, est, ps, *td, i));
            bp.epigraph_real_dim.push_back(fop.m + fop.p);
          }
        }
        break;
      }
      bp.smooth.push_back(theta_duals_smooth(fop, ds, est, ps, td));
      bp.current.push_back(pack_theta_duals(fop, est));
      if (bp.affine) {
        bp.epigraph.push_back(theta_duals_epigraph(fop, ds, est, ps, *td, true));
        bp.epigraph_real_dim.push_back(theta_duals_dim(fop, ni));
      }
      break;
    }
    case BlockId::Omega: {
      bp.affine = fop.constraints_affine_omega;
      bp.smooth.push_back(omega_smooth(fop, ds, est, ps));
      bp.current.push_back(est.omega);
      if (bp.affine) {
        bp.epigraph.push_back(omega_epigraph(fop, ds, est, ps));
        bp.epigraph_real_dim.push_back(fop.dim_omega);
      }
      break;
    }
    case BlockId::XHat: {
      bp.affine = fop.fop_is_qp;
      bp.separated = true;
      for (int i = 0; i < ni; ++i) {
        bp.smooth.push_back(xhat_smooth(fop, ds, w, est, ps, i));
        bp.current.push_back(est.x_hat.row(i));
        // For non-QP forward problems this program linearizes the
        // stationarity residual at the current x-hat; callers must then
        // guard acceptance with the true objective (bp.affine == false).
        bp.epigraph.push_back(xhat_epigraph(fop, ds, w, est, ps, i));
        bp.epigraph_real_dim.push_back(fop.n);
      }
      break;
    }
  }
  return bp;
}

SmoothProgram full_space_program(const ParametricFop& fop, const Dataset& ds,
                                 const WeightMatrix& w, const IopEstimate& est,
                                 const PenaltyState& ps) {
  const int ni = ds.size();
  const int dt = fop.dim_theta, dw = fop.dim_omega;
  const int n = fop.n, m = fop.m, p = fop.p;
  const double c1 = ps.c[0], c2 = ps.c[1], c3 = ps.c[2], c4 = ps.c[3];
  const double delta = ps.delta;
  const std::vector<bool> mask = ps.effective_mask(fop);
  const int per_obs = n + m + p;
  const ParametricFop* fp = &fop;
  auto obs = std::make_shared<std::vector<Observation>>(ds.observations);
  auto wd = std::make_shared<Vec>(w.diagonal);

  SmoothProgram sp;
  sp.n = full_dim(fop, ni);
  sp.lb = Vec::Constant(sp.n, -kInf);
  sp.ub = Vec::Constant(sp.n, kInf);
  sp.lb.head(dt) = fop.theta_domain.lower;
  sp.ub.head(dt) = fop.theta_domain.upper;
  sp.lb.segment(dt, dw) = fop.omega_domain.lower;
  sp.ub.segment(dt, dw) = fop.omega_domain.upper;
  for (int i = 0; i < ni; ++i) {
    int off = dt + dw + i * per_obs;
    sp.lb.segment(off, n) = fop.x_bounds.lower;
    sp.ub.segment(off, n) = fop.x_bounds.upper;
    sp.lb.segment(off + n, m).setZero();  // lambda >= 0
  }
  sp.x0 = pack_full(fop, est);

  sp.f = [fp, obs, wd, ni, dt, dw, n, m, p, per_obs, c1, c2, c3, c4, delta,
          mask](const Vec& z) {
    Vec theta = z.head(dt);
    Vec omega = z.segment(dt, dw);
    double val = 0.0;
    for (int i = 0; i < ni; ++i) {
      int off = dt + dw + i * per_obs;
      Vec x = z.segment(off, n);
      Vec lam = z.segment(off + n, m);
      Vec mu = z.segment(off + n + m, p);
      Vec diff = (*obs)[i].x - x;
      val += diff.cwiseProduct(*wd).dot(diff);
      Vec r = stationarity_at(*fp, x, (*obs)[i].u, theta, omega, lam, mu);
      if (!r.allFinite()) return kInf;
      for (int j = 0; j < n; ++j) val += c1 * smooth_abs(r[j], delta);
      if (m > 0) {
        Vec gv = fp->eval_g(x, (*obs)[i].u, omega);
        if (!gv.allFinite()) return kInf;
        for (int k = 0; k < m; ++k) {
          if (mask[k]) val += c2 * smooth_pos(gv[k], delta);
          val += c4 * smooth_abs(lam[k] * gv[k], delta);
        }
      }
      if (p > 0) {
        Vec hv = fp->eval_h(x, (*obs)[i].u, omega);
        if (!hv.allFinite()) return kInf;
        for (int k = 0; k < p; ++k) val += c3 * smooth_abs(hv[k], delta);
      }
    }
    return val;
  };
  sp.grad = [fp, obs, wd, ni, dt, dw, n, m, p, per_obs, c1, c2, c3, c4, delta,
             mask](const Vec& z) {
    Vec theta = z.head(dt);
    Vec omega = z.segment(dt, dw);
    Vec grad = Vec::Zero(z.size());
    for (int i = 0; i < ni; ++i) {
      int off = dt + dw + i * per_obs;
      Vec x = z.segment(off, n);
      Vec lam = z.segment(off + n, m);
      Vec mu = z.segment(off + n + m, p);
      const Vec& u = (*obs)[i].u;

      grad.segment(off, n) += 2.0 * wd->cwiseProduct(x - (*obs)[i].x);

      Vec r = stationarity_at(*fp, x, u, theta, omega, lam, mu);
      Vec wr(n);
      for (int j = 0; j < n; ++j) wr[j] = c1 * smooth_abs_d(r[j], delta);

      // theta and omega sensitivities via affine probing / linearization
      Mat S, R;
      Vec d_unused;
      probe_theta(*fp, x, u, theta, S, d_unused);
      grad.head(dt) += S.transpose() * wr;
      OmegaAffine oa = probe_omega(*fp, x, u, theta, lam, mu, omega);
      grad.segment(dt, dw) += oa.R.transpose() * wr;

      Mat Jr = stationarity_jac_x(*fp, x, u, theta, omega, lam, mu);
      grad.segment(off, n) += Jr.transpose() * wr;

      if (m > 0) {
        Vec gv = fp->eval_g(x, u, omega);
        Mat Jg = fp->jac_g_x(x, u, omega);
        grad.segment(off + n, m) += Jg * wr;  // d r_stat / d lambda = Jg'
        Vec wg = Vec::Zero(m);
        for (int k = 0; k < m; ++k) {
          if (mask[k]) wg[k] += c2 * smooth_pos_d(gv[k], delta);
          double s = c4 * smooth_abs_d(lam[k] * gv[k], delta);
          wg[k] += s * lam[k];
          grad[off + n + k] += s * gv[k];
        }
        grad.segment(off, n) += Jg.transpose() * wg;
        grad.segment(dt, dw) += oa.G.transpose() * wg;
      }
      if (p > 0) {
        Vec hv = fp->eval_h(x, u, omega);
        Mat Jh = fp->jac_h_x(x, u, omega);
        grad.segment(off + n + m, p) += Jh * wr;
        Vec wh(p);
        for (int k = 0; k < p; ++k) wh[k] = c3 * smooth_abs_d(hv[k], delta);
        grad.segment(off, n) += Jh.transpose() * wh;
        grad.segment(dt, dw) += oa.H.transpose() * wh;
      }
    }
    return grad;
  };
  return sp;
}

}  // namespace iopt
