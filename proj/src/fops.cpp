#include "iopt/fops.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include "iopt/rng.hpp"

namespace iopt {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from_json(const nlohmann::json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}
}  // namespace

// --- water-filling ----------------------------------------------------------

void WaterfillModel::validate() const {
  if (theta.size() != D || omega.size() != D + 1)
    throw DimensionMismatch("WaterfillModel: dimension mismatch");
  if ((theta.array() <= 0).any()) throw InvalidModel("WaterfillModel: theta must be positive");
  if ((omega.head(D).array() < 0).any() || omega[D] <= 0)
    throw InvalidModel("WaterfillModel: omega out of range");
}

WaterfillKkt waterfill_bisect(const WaterfillModel& model, const Vec& u) {
  model.validate();
  const int D = model.D;
  if (u.size() != D) throw DimensionMismatch("waterfill_bisect: u dimension");
  if ((u.array() <= 0).any()) throw InvalidModel("waterfill_bisect: u must be positive");
  if ((model.omega.head(D).array() <= 0).any())
    throw NoPositiveAllocation("waterfill_bisect: omega weights must be positive");

  const Vec& th = model.theta;
  const Vec om = model.omega.head(D);
  const double budget = model.omega[D];

  auto phi = [&](double nu) {
    double s = 0.0;
    for (int d = 0; d < D; ++d) s += std::max(0.0, th[d] / nu - om[d] * u[d]);
    return s;  // omega' x(nu)
  };

  // phi is decreasing; bracket the root of phi(nu) = budget
  double hi = 0.0;
  for (int d = 0; d < D; ++d) hi = std::max(hi, th[d] / (om[d] * u[d]));
  double lo = hi;
  while (phi(lo) < budget) lo *= 0.5;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (phi(mid) >= budget ? lo : hi) = mid;
  }

  // closed form on the identified active set for full precision
  double nu = 0.5 * (lo + hi);
  double sum_th = 0.0, sum_ou = 0.0;
  for (int d = 0; d < D; ++d) {
    if (th[d] / nu - om[d] * u[d] > 0) {
      sum_th += th[d];
      sum_ou += om[d] * u[d];
    }
  }
  if (sum_th == 0.0) throw NoPositiveAllocation("waterfill_bisect: empty active set");
  nu = sum_th / (budget + sum_ou);

  WaterfillKkt out;
  out.nu = nu;
  out.x = Vec::Zero(D);
  out.lambda = Vec::Zero(D);
  for (int d = 0; d < D; ++d) {
    double xd = th[d] / (nu * om[d]) - u[d];
    if (xd > 0)
      out.x[d] = xd;
    else
      out.lambda[d] = nu * om[d] - th[d] / u[d];  // >= 0 for inactive d
  }
  return out;
}

ParametricFop make_waterfill_fop(int D) {
  if (D < 1) throw InvalidModel("make_waterfill_fop: D >= 1 required");
  ParametricFop fop;
  fop.n = D;
  fop.m = D;  // -x <= 0, hard
  fop.p = 1;
  fop.dim_u = D;
  fop.dim_theta = D;
  fop.dim_omega = D + 1;

  fop.eval_f = [D](const Vec& x, const Vec& u, const Vec& theta) {
    double f = 0.0;
    for (int d = 0; d < D; ++d) {
      double arg = x[d] + u[d];
      if (arg <= 0) return kNan;
      f -= theta[d] * std::log(arg);
    }
    return f;
  };
  fop.grad_f_x = [D](const Vec& x, const Vec& u, const Vec& theta) {
    Vec g(D);
    for (int d = 0; d < D; ++d) g[d] = -theta[d] / (x[d] + u[d]);
    return g;
  };
  fop.hess_f_x = [D](const Vec& x, const Vec& u, const Vec& theta) {
    Mat h = Mat::Zero(D, D);
    for (int d = 0; d < D; ++d) {
      double s = x[d] + u[d];
      h(d, d) = theta[d] / (s * s);
    }
    return h;
  };
  fop.eval_g = [](const Vec& x, const Vec&, const Vec&) { return Vec(-x); };
  fop.jac_g_x = [D](const Vec&, const Vec&, const Vec&) {
    return Mat(-Mat::Identity(D, D));
  };
  fop.hess_g_x = [D](const Vec&, const Vec&, const Vec&, const Vec&) {
    return Mat(Mat::Zero(D, D));
  };
  fop.eval_h = [D](const Vec& x, const Vec&, const Vec& omega) {
    Vec h(1);
    h[0] = omega.head(D).dot(x) - omega[D];
    return h;
  };
  fop.jac_h_x = [D](const Vec&, const Vec&, const Vec& omega) {
    Mat j(1, D);
    j.row(0) = omega.head(D).transpose();
    return j;
  };

  fop.theta_domain = BoxDomain::uniform(D, 1e-4, 10.0);
  {
    Vec lo = Vec::Zero(D + 1), up = Vec::Constant(D + 1, 10.0);
    lo[D] = up[D] = 1.0;  // scale normalization of the right-hand side
    fop.omega_domain = BoxDomain(lo, up);
  }
  fop.g_hard.assign(D, true);
  fop.x_bounds = BoxDomain::uniform(D, 0.0, 1e3);
  fop.stationarity_affine_theta = true;
  fop.constraints_affine_omega = true;
  fop.fop_is_qp = false;

  fop.forward_solve = [D](const Vec& u, const Vec& theta, const Vec& omega) {
    WaterfillModel wm{D, theta, omega};
    return waterfill_bisect(wm, u).x;
  };
  fop.validate_dims();
  return fop;
}

std::pair<Dataset, TestSet> gen_waterfill_dataset(int D, int n_obs, double sigma,
                                                  std::uint64_t seed) {
  Rng rng(seed);
  WaterfillModel wm;
  wm.D = D;
  wm.theta = Vec(D);
  wm.omega = Vec(D + 1);
  for (int d = 0; d < D; ++d) wm.theta[d] = rng.uniform(1.00, 1.10);
  for (int d = 0; d < D; ++d) wm.omega[d] = rng.uniform(1.00, 1.10);
  wm.omega[D] = static_cast<double>(D);

  Dataset ds;
  ds.dim_u = D;
  ds.n = D;
  ds.case_name = "waterfill";
  for (int i = 0; i < n_obs; ++i) {
    Observation obs;
    obs.u = Vec(D);
    for (int d = 0; d < D; ++d) obs.u[d] = rng.uniform(1.00, 2.00);
    obs.x = waterfill_bisect(wm, obs.u).x;
    for (int d = 0; d < D; ++d) obs.x[d] += sigma * rng.normal();
    ds.observations.push_back(std::move(obs));
  }
  ds.meta = TrueModel{wm.theta, wm.omega, sigma, seed};

  TestSet ts;
  for (int v = 0; v < 100; ++v) {
    Observation pt;
    pt.u = Vec(D);
    for (int d = 0; d < D; ++d) pt.u[d] = rng.uniform(1.00, 2.00);
    pt.x = waterfill_bisect(wm, pt.u).x;
    ts.points.push_back(std::move(pt));
  }
  return {std::move(ds), std::move(ts)};
}

// --- CVaR electricity procurement -------------------------------------------

void RiskModel::validate() const {
  if (T < 1 || S < 1) throw InvalidModel("RiskModel: T, S >= 1 required");
  if (c.size() != T || b.size() != T || d.size() != T)
    throw DimensionMismatch("RiskModel: time-indexed field size");
  if (p.size() != S) throw DimensionMismatch("RiskModel: probability size");
  if (r.rows() != T || r.cols() != S) throw DimensionMismatch("RiskModel: spot price shape");
  if ((p.array() < 0).any() || std::abs(p.sum() - 1.0) > 1e-9)
    throw InvalidModel("RiskModel: p must be a probability vector");
  if (alpha <= 0.0 || alpha >= 1.0) throw InvalidModel("RiskModel: alpha in (0,1)");
  if (i_min > i_max) throw InvalidModel("RiskModel: i_min <= i_max required");
  if (lambda_risk < 0) throw InvalidModel("RiskModel: lambda_risk >= 0 required");
}

std::string RiskModel::to_json() const {
  nlohmann::json j;
  j["T"] = T;
  j["S"] = S;
  j["c"] = vec_to_json(c);
  j["b"] = vec_to_json(b);
  j["p"] = vec_to_json(p);
  nlohmann::json rows = nlohmann::json::array();
  for (int t = 0; t < T; ++t) rows.push_back(vec_to_json(r.row(t)));
  j["r"] = rows;
  j["i0"] = i0;
  j["i_min"] = i_min;
  j["i_max"] = i_max;
  j["d"] = vec_to_json(d);
  j["m"] = m;
  j["alpha"] = alpha;
  j["lambda_risk"] = lambda_risk;
  return j.dump(2);
}

RiskModel RiskModel::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  RiskModel md;
  md.T = j.at("T").get<int>();
  md.S = j.at("S").get<int>();
  md.c = vec_from_json(j.at("c"));
  md.b = vec_from_json(j.at("b"));
  md.p = vec_from_json(j.at("p"));
  md.r = Mat(md.T, md.S);
  for (int t = 0; t < md.T; ++t) md.r.row(t) = vec_from_json(j.at("r")[t]);
  md.i0 = j.at("i0").get<double>();
  md.i_min = j.at("i_min").get<double>();
  md.i_max = j.at("i_max").get<double>();
  md.d = vec_from_json(j.at("d"));
  md.m = j.at("m").get<double>();
  md.alpha = j.at("alpha").get<double>();
  md.lambda_risk = j.at("lambda_risk").get<double>();
  md.validate();
  return md;
}

RiskModel RiskModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("RiskModel::load: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

ConicProgram risk_qp_build(const RiskModel& md) {
  md.validate();
  const int T = md.T, S = md.S;
  const int n = md.n_vars();
  ConicProgram cp = ConicProgram::make(n);

  cp.Q = Mat::Zero(n, n);
  for (int t = 0; t < T; ++t) cp.Q(md.ix(t), md.ix(t)) = 2.0 * md.c[t];
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < T; ++t) {
      cp.r[md.iq(t, s)] = md.p[s] * md.b[t];
      cp.r[md.iy(t, s)] = md.p[s] * md.r(t, s);
    }
  cp.r[md.iv()] = md.lambda_risk;
  for (int s = 0; s < S; ++s)
    cp.r[md.iw(s)] = md.lambda_risk * md.p[s] / (1.0 - md.alpha);

  const int n_in = md.n_ineq();
  cp.A_in = Mat::Zero(n_in, n);
  cp.b_in = Vec::Zero(n_in);
  int row = 0;
  // inventory band: i_min <= i0 + sum_{t'<=t}(q_t's - d_t') <= i_max
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < T; ++t) {
      double cum_d = md.d.head(t + 1).sum();
      for (int tp = 0; tp <= t; ++tp) cp.A_in(row, md.iq(tp, s)) = -1.0;
      cp.b_in[row] = md.i0 - cum_d - md.i_min;
      ++row;
      for (int tp = 0; tp <= t; ++tp) cp.A_in(row, md.iq(tp, s)) = 1.0;
      cp.b_in[row] = md.i_max - md.i0 + cum_d;
      ++row;
    }
  // total production covers total demand
  for (int s = 0; s < S; ++s) {
    for (int t = 0; t < T; ++t) cp.A_in(row, md.iq(t, s)) = -1.0;
    cp.b_in[row] = -md.d.sum();
    ++row;
  }
  // CVaR excess: scenario cost - v <= w_s
  for (int s = 0; s < S; ++s) {
    for (int t = 0; t < T; ++t) {
      cp.A_in(row, md.iq(t, s)) = md.b[t];
      cp.A_in(row, md.iy(t, s)) = md.r(t, s);
    }
    cp.A_in(row, md.iv()) = -1.0;
    cp.A_in(row, md.iw(s)) = -1.0;
    ++row;
  }

  // consumption balance: m q_ts = x_t + y_ts
  cp.A_eq = Mat::Zero(md.n_eq(), n);
  cp.b_eq = Vec::Zero(md.n_eq());
  int erow = 0;
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < T; ++t) {
      cp.A_eq(erow, md.iq(t, s)) = md.m;
      cp.A_eq(erow, md.ix(t)) = -1.0;
      cp.A_eq(erow, md.iy(t, s)) = -1.0;
      ++erow;
    }

  // nonnegativity of everything but v
  cp.lb.setZero();
  cp.lb[md.iv()] = -kInf;
  return cp;
}

namespace {

// constant part of the inequality Jacobian (everything except the spot-price
// entries in the CVaR rows, which depend on u)
struct RiskJacCache {
  RiskModel md;  // parameter container; r entries unused here
  Mat jac_base;  // m x n
  Mat jac_eq;    // p x n
};

std::shared_ptr<RiskJacCache> make_risk_cache(const RiskModel& base) {
  auto cache = std::make_shared<RiskJacCache>();
  cache->md = base;
  const RiskModel& md = cache->md;
  const int T = md.T, S = md.S, n = md.n_vars();
  const int m_all = md.n_ineq() + md.n_bound();
  // row order: inv_low (TS), inv_up (TS), total (S), cvar (S), then bounds
  Mat& J = cache->jac_base;
  J = Mat::Zero(m_all, n);
  int row = 0;
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < T; ++t) {
      for (int tp = 0; tp <= t; ++tp) J(row, md.iq(tp, s)) = -1.0;
      ++row;
    }
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < T; ++t) {
      for (int tp = 0; tp <= t; ++tp) J(row, md.iq(tp, s)) = 1.0;
      ++row;
    }
  for (int s = 0; s < S; ++s) {
    for (int t = 0; t < T; ++t) J(row, md.iq(t, s)) = -1.0;
    ++row;
  }
  for (int s = 0; s < S; ++s) {
    for (int t = 0; t < T; ++t) J(row, md.iq(t, s)) = md.b[t];
    // y entries filled from u at evaluation time
    J(row, md.iv()) = -1.0;
    J(row, md.iw(s)) = -1.0;
    ++row;
  }
  for (int t = 0; t < T; ++t) J(row++, md.ix(t)) = -1.0;
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < T; ++t) J(row++, md.iq(t, s)) = -1.0;
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < T; ++t) J(row++, md.iy(t, s)) = -1.0;
  for (int s = 0; s < S; ++s) J(row++, md.iw(s)) = -1.0;

  cache->jac_eq = Mat::Zero(md.n_eq(), n);
  int erow = 0;
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < T; ++t) {
      cache->jac_eq(erow, md.iq(t, s)) = md.m;
      cache->jac_eq(erow, md.ix(t)) = -1.0;
      cache->jac_eq(erow, md.iy(t, s)) = -1.0;
      ++erow;
    }
  return cache;
}

inline double spot_price(const Vec& u, int T, int t, int s) { return u[s * T + t]; }

}  // namespace

ParametricFop make_risk_fop(const RiskModel& base) {
  auto cache = make_risk_cache(base);
  const int T = base.T, S = base.S;
  const int n = base.n_vars();
  const int m_gen = base.n_ineq();
  const int m_all = m_gen + base.n_bound();

  ParametricFop fop;
  fop.n = n;
  fop.m = m_all;
  fop.p = base.n_eq();
  fop.dim_u = T * S;
  fop.dim_theta = 1;  // lambda_risk
  fop.dim_omega = 1;  // i_min

  fop.eval_f = [cache, T, S](const Vec& z, const Vec& u, const Vec& theta) {
    const RiskModel& md = cache->md;
    double f = 0.0;
    for (int t = 0; t < T; ++t) f += md.c[t] * z[md.ix(t)] * z[md.ix(t)];
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < T; ++t)
        f += md.p[s] * (md.b[t] * z[md.iq(t, s)] +
                        spot_price(u, T, t, s) * z[md.iy(t, s)]);
    double cvar = z[md.iv()];
    for (int s = 0; s < S; ++s)
      cvar += md.p[s] * z[md.iw(s)] / (1.0 - md.alpha);
    return f + theta[0] * cvar;
  };
  fop.grad_f_x = [cache, T, S, n](const Vec& z, const Vec& u, const Vec& theta) {
    const RiskModel& md = cache->md;
    Vec g = Vec::Zero(n);
    for (int t = 0; t < T; ++t) g[md.ix(t)] = 2.0 * md.c[t] * z[md.ix(t)];
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < T; ++t) {
        g[md.iq(t, s)] = md.p[s] * md.b[t];
        g[md.iy(t, s)] = md.p[s] * spot_price(u, T, t, s);
      }
    g[md.iv()] = theta[0];
    for (int s = 0; s < S; ++s)
      g[md.iw(s)] = theta[0] * md.p[s] / (1.0 - md.alpha);
    return g;
  };
  fop.hess_f_x = [cache, T, n](const Vec&, const Vec&, const Vec&) {
    const RiskModel& md = cache->md;
    Mat h = Mat::Zero(n, n);
    for (int t = 0; t < T; ++t) h(md.ix(t), md.ix(t)) = 2.0 * md.c[t];
    return h;
  };

  fop.eval_g = [cache, T, S, m_all](const Vec& z, const Vec& u, const Vec& omega) {
    const RiskModel& md = cache->md;
    Vec g(m_all);
    int row = 0;
    for (int s = 0; s < S; ++s) {
      double inv = md.i0;
      for (int t = 0; t < T; ++t) {
        inv += z[md.iq(t, s)] - md.d[t];
        g[row + t] = omega[0] - inv;               // inventory lower
        g[row + T * S + t] = inv - md.i_max;       // inventory upper (offset)
      }
      row += T;
    }
    row = 2 * T * S;
    for (int s = 0; s < S; ++s) {
      double total = 0.0;
      for (int t = 0; t < T; ++t) total += z[md.iq(t, s)];
      g[row++] = md.d.sum() - total;
    }
    for (int s = 0; s < S; ++s) {
      double cost = 0.0;
      for (int t = 0; t < T; ++t)
        cost += md.b[t] * z[md.iq(t, s)] + spot_price(u, T, t, s) * z[md.iy(t, s)];
      g[row++] = cost - z[md.iv()] - z[md.iw(s)];
    }
    for (int t = 0; t < T; ++t) g[row++] = -z[md.ix(t)];
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < T; ++t) g[row++] = -z[md.iq(t, s)];
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < T; ++t) g[row++] = -z[md.iy(t, s)];
    for (int s = 0; s < S; ++s) g[row++] = -z[md.iw(s)];
    return g;
  };
  fop.jac_g_x = [cache, T, S](const Vec&, const Vec& u, const Vec&) {
    const RiskModel& md = cache->md;
    Mat J = cache->jac_base;
    int row = 2 * T * S + S;  // first CVaR row
    for (int s = 0; s < S; ++s) {
      for (int t = 0; t < T; ++t) J(row, md.iy(t, s)) = spot_price(u, T, t, s);
      ++row;
    }
    return J;
  };
  fop.hess_g_x = [n](const Vec&, const Vec&, const Vec&, const Vec&) {
    return Mat(Mat::Zero(n, n));
  };

  fop.eval_h = [cache, T, S](const Vec& z, const Vec&, const Vec&) {
    const RiskModel& md = cache->md;
    Vec h(md.n_eq());
    int erow = 0;
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < T; ++t)
        h[erow++] = md.m * z[md.iq(t, s)] - z[md.ix(t)] - z[md.iy(t, s)];
    return h;
  };
  fop.jac_h_x = [cache](const Vec&, const Vec&, const Vec&) { return cache->jac_eq; };

  // the fixed expected-cost part of the objective already excludes the
  // trivial all-zero theta, but the domain invariant requires 0 outside
  fop.theta_domain = BoxDomain::uniform(1, 0.01, 10.0);
  fop.omega_domain = BoxDomain::uniform(1, 0.0, base.i_max);
  fop.g_hard.assign(m_all, false);
  for (int k = m_gen; k < m_all; ++k) fop.g_hard[k] = true;
  {
    Vec lo = Vec::Zero(n), up = Vec::Constant(n, kInf);
    lo[base.iv()] = -kInf;
    fop.x_bounds = BoxDomain(lo, up);
  }
  fop.stationarity_affine_theta = true;
  fop.constraints_affine_omega = true;
  fop.fop_is_qp = true;

  RiskModel fwd_base = base;
  fop.forward_solve = [fwd_base, T, S](const Vec& u, const Vec& theta,
                                       const Vec& omega) {
    RiskModel md = fwd_base;
    md.lambda_risk = theta[0];
    md.i_min = omega[0];
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < T; ++t) md.r(t, s) = spot_price(u, T, t, s);
    QpResult qr = solve_qp(risk_qp_build(md));
    if (qr.status != SolveStatus::Success)
      throw std::runtime_error(std::string("risk forward solve failed: ") + to_string(qr.status));
    return qr.x;
  };
  fop.validate_dims();
  return fop;
}

WeightMatrix risk_observation_weights(const RiskModel& base, int realized_s) {
  WeightMatrix w;
  w.diagonal = Vec::Zero(base.n_vars());
  for (int t = 0; t < base.T; ++t) {
    w.diagonal[base.ix(t)] = 1.0;
    w.diagonal[base.iq(t, realized_s)] = 1.0;
  }
  return w;
}

Dataset gen_risk_dataset(const RiskModel& base, int n_obs, int pool_size,
                         std::uint64_t seed) {
  base.validate();
  if (pool_size < base.S)
    throw InvalidModel("gen_risk_dataset: pool smaller than scenario count");
  Rng rng(seed);
  const int T = base.T, S = base.S;

  // seeded log-normal profiles around a sinusoidal daily shape whose mean
  // matches the configured spot prices
  const double r_mean = base.r.mean();
  Mat pool(T, pool_size);
  for (int j = 0; j < pool_size; ++j)
    for (int t = 0; t < T; ++t) {
      double shape = r_mean * (1.0 + 0.4 * std::sin(2.0 * M_PI * t / T));
      pool(t, j) = shape * std::exp(0.25 * rng.normal());
    }

  Dataset ds;
  ds.dim_u = T * S;
  ds.n = base.n_vars();
  ds.case_name = "risk";
  for (int i = 0; i < n_obs; ++i) {
    // draw S distinct pool indices
    std::vector<int> idx(pool_size);
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < S; ++k) {
      int j = k + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(pool_size - k)));
      std::swap(idx[k], idx[j]);
    }
    RiskModel md = base;
    Observation obs;
    obs.u = Vec(T * S);
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < T; ++t) {
        md.r(t, s) = pool(t, idx[s]);
        obs.u[s * T + t] = pool(t, idx[s]);
      }
    QpResult qr = solve_qp(risk_qp_build(md));
    if (qr.status != SolveStatus::Success)
      throw std::runtime_error("gen_risk_dataset: forward solve failed");
    obs.x = qr.x;
    ds.observations.push_back(std::move(obs));
    ds.realized_scenario.push_back(static_cast<int>(rng.next_below(S)));
  }
  Vec th(1), om(1);
  th[0] = base.lambda_risk;
  om[0] = base.i_min;
  ds.meta = TrueModel{th, om, 0.0, seed};
  return ds;
}

// --- Nash-bargaining resource allocation market -----------------------------

void RampModel::validate() const {
  if (B < 1 || G < 1) throw InvalidModel("RampModel: B, G >= 1 required");
  if (p.rows() != B || p.cols() != G || m.size() != B || c.size() != G)
    throw DimensionMismatch("RampModel: field shape mismatch");
  if ((p.array() <= 0).any() || (m.array() <= 0).any() || (c.array() <= 0).any())
    throw InvalidModel("RampModel: parameters must be positive");
}

Mat ramp_solve(const RampModel& md) {
  md.validate();
  const int B = md.B, G = md.G, n = B * G;

  BarrierProgram bp;
  bp.n = n;
  bp.m = B + G + n;
  bp.f = [B, G, &md](const Vec& x) {
    double f = 0.0;
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (int g = 0; g < G; ++g) s += x[md.idx(b, g)];
      if (s <= 0) return kInf;
      f -= std::log(s);
    }
    return f;
  };
  bp.grad = [B, G, n, &md](const Vec& x) {
    Vec grad(n);
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (int g = 0; g < G; ++g) s += x[md.idx(b, g)];
      for (int g = 0; g < G; ++g) grad[md.idx(b, g)] = -1.0 / s;
    }
    return grad;
  };
  bp.hess = [B, G, n, &md](const Vec& x) {
    Mat h = Mat::Zero(n, n);
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (int g = 0; g < G; ++g) s += x[md.idx(b, g)];
      double v = 1.0 / (s * s);
      for (int g1 = 0; g1 < G; ++g1)
        for (int g2 = 0; g2 < G; ++g2) h(md.idx(b, g1), md.idx(b, g2)) = v;
    }
    return h;
  };
  bp.g = [B, G, n, &md](const Vec& x) {
    Vec g(B + G + n);
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (int gg = 0; gg < G; ++gg) {
        double xv = x[md.idx(b, gg)];
        s += md.p(b, gg) * xv * xv;
      }
      g[b] = s - md.m[b];
    }
    for (int gg = 0; gg < G; ++gg) {
      double s = 0.0;
      for (int b = 0; b < B; ++b) s += x[md.idx(b, gg)];
      g[B + gg] = s - md.c[gg];
    }
    for (int k = 0; k < n; ++k) g[B + G + k] = -x[k];
    return g;
  };
  bp.jac_g = [B, G, n, &md](const Vec& x) {
    Mat J = Mat::Zero(B + G + n, n);
    for (int b = 0; b < B; ++b)
      for (int gg = 0; gg < G; ++gg)
        J(b, md.idx(b, gg)) = 2.0 * md.p(b, gg) * x[md.idx(b, gg)];
    for (int gg = 0; gg < G; ++gg)
      for (int b = 0; b < B; ++b) J(B + gg, md.idx(b, gg)) = 1.0;
    for (int k = 0; k < n; ++k) J(B + G + k, k) = -1.0;
    return J;
  };
  bp.hess_g = [B, G, n, &md](const Vec&, const Vec& w) {
    Mat h = Mat::Zero(n, n);
    for (int b = 0; b < B; ++b)
      for (int gg = 0; gg < G; ++gg)
        h(md.idx(b, gg), md.idx(b, gg)) += 2.0 * w[b] * md.p(b, gg);
    return h;
  };

  // strictly feasible start
  double delta = md.c.minCoeff() / (2.0 * B);
  for (int b = 0; b < B; ++b) {
    double rowp = md.p.row(b).sum();
    delta = std::min(delta, 0.5 * std::sqrt(md.m[b] / rowp));
  }
  bp.x0 = Vec::Constant(n, delta);

  BarrierResult br = solve_barrier(bp, 1e-9);
  if (br.status != SolveStatus::Success)
    throw std::runtime_error(std::string("ramp_solve: barrier solve failed: ") + to_string(br.status));
  Mat out(B, G);
  for (int b = 0; b < B; ++b)
    for (int g = 0; g < G; ++g) out(b, g) = std::max(0.0, br.x[md.idx(b, g)]);
  return out;
}

ParametricFop make_ramp_fop(int B, int G) {
  if (B < 1 || G < 1) throw InvalidModel("make_ramp_fop: B, G >= 1 required");
  const int n = B * G;
  const int m_all = B + G + n;
  auto idx = [G](int b, int g) { return b * G + g; };

  ParametricFop fop;
  fop.n = n;
  fop.m = m_all;
  fop.p = 0;
  fop.dim_u = G;        // capacities
  fop.dim_theta = 1;    // fixed objective scale
  fop.dim_omega = n;    // normalized p_bg / m_b, row-major

  fop.eval_f = [B, G, idx](const Vec& x, const Vec&, const Vec& theta) {
    double f = 0.0;
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (int g = 0; g < G; ++g) s += x[idx(b, g)];
      if (s <= 0) return kNan;
      f -= theta[0] * std::log(s);
    }
    return f;
  };
  fop.grad_f_x = [B, G, n, idx](const Vec& x, const Vec&, const Vec& theta) {
    Vec grad(n);
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (int g = 0; g < G; ++g) s += x[idx(b, g)];
      for (int g = 0; g < G; ++g) grad[idx(b, g)] = -theta[0] / s;
    }
    return grad;
  };
  fop.hess_f_x = [B, G, n, idx](const Vec& x, const Vec&, const Vec& theta) {
    Mat h = Mat::Zero(n, n);
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (int g = 0; g < G; ++g) s += x[idx(b, g)];
      double v = theta[0] / (s * s);
      for (int g1 = 0; g1 < G; ++g1)
        for (int g2 = 0; g2 < G; ++g2) h(idx(b, g1), idx(b, g2)) = v;
    }
    return h;
  };
  fop.eval_g = [B, G, n, m_all, idx](const Vec& x, const Vec& u, const Vec& omega) {
    Vec g(m_all);
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (int gg = 0; gg < G; ++gg) {
        double xv = x[idx(b, gg)];
        s += omega[idx(b, gg)] * xv * xv;
      }
      g[b] = s - 1.0;  // m_b normalized to 1
    }
    for (int gg = 0; gg < G; ++gg) {
      double s = 0.0;
      for (int b = 0; b < B; ++b) s += x[idx(b, gg)];
      g[B + gg] = s - u[gg];
    }
    for (int k = 0; k < n; ++k) g[B + G + k] = -x[k];
    return g;
  };
  fop.jac_g_x = [B, G, n, m_all, idx](const Vec& x, const Vec&, const Vec& omega) {
    Mat J = Mat::Zero(m_all, n);
    for (int b = 0; b < B; ++b)
      for (int gg = 0; gg < G; ++gg)
        J(b, idx(b, gg)) = 2.0 * omega[idx(b, gg)] * x[idx(b, gg)];
    for (int gg = 0; gg < G; ++gg)
      for (int b = 0; b < B; ++b) J(B + gg, idx(b, gg)) = 1.0;
    for (int k = 0; k < n; ++k) J(B + G + k, k) = -1.0;
    return J;
  };
  fop.hess_g_x = [B, G, n, idx](const Vec&, const Vec&, const Vec& omega, const Vec& w) {
    Mat h = Mat::Zero(n, n);
    for (int b = 0; b < B; ++b)
      for (int gg = 0; gg < G; ++gg)
        h(idx(b, gg), idx(b, gg)) += 2.0 * w[b] * omega[idx(b, gg)];
    return h;
  };
  fop.eval_h = [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(0)); };
  fop.jac_h_x = [n](const Vec&, const Vec&, const Vec&) { return Mat(Mat::Zero(0, n)); };

  fop.theta_domain = BoxDomain::fixed_value(Vec::Ones(1));
  fop.omega_domain = BoxDomain::uniform(n, 0.01, 10.0);
  fop.g_hard.assign(m_all, false);
  for (int k = B + G; k < m_all; ++k) fop.g_hard[k] = true;
  fop.x_bounds = BoxDomain::uniform(n, 0.0, 10.0);
  fop.stationarity_affine_theta = true;
  fop.constraints_affine_omega = true;
  fop.fop_is_qp = false;

  fop.forward_solve = [B, G, n](const Vec& u, const Vec&, const Vec& omega) {
    RampModel md;
    md.B = B;
    md.G = G;
    md.p = Mat(B, G);
    for (int b = 0; b < B; ++b)
      for (int g = 0; g < G; ++g) md.p(b, g) = omega[b * G + g];
    md.m = Vec::Ones(B);
    md.c = u;
    Mat x = ramp_solve(md);
    Vec out(n);
    for (int b = 0; b < B; ++b)
      for (int g = 0; g < G; ++g) out[b * G + g] = x(b, g);
    return out;
  };
  fop.validate_dims();
  return fop;
}

std::pair<Dataset, RampModel> gen_ramp_dataset(int B, int G, int n_obs,
                                               double sigma, std::uint64_t seed) {
  Rng rng(seed);
  RampModel md;
  md.B = B;
  md.G = G;
  md.p = Mat(B, G);
  md.m = Vec(B);
  md.c = Vec::Ones(G);  // per-observation capacities override this
  for (int b = 0; b < B; ++b)
    for (int g = 0; g < G; ++g) md.p(b, g) = rng.uniform(0.5, 2.0);
  for (int b = 0; b < B; ++b) md.m[b] = rng.uniform(0.5, 1.0);

  Dataset ds;
  ds.dim_u = G;
  ds.n = B * G;
  ds.case_name = "ramp";
  for (int i = 0; i < n_obs; ++i) {
    Observation obs;
    obs.u = Vec(G);
    // Capacities scale with the number of buyers so that budget constraints,
    // not market capacity, are the typically binding ones; otherwise the
    // budget parameters would be unidentifiable from the allocations.
    for (int g = 0; g < G; ++g) obs.u[g] = B * rng.uniform(0.1, 1.5);
    RampModel inst = md;
    inst.c = obs.u;
    Mat x = ramp_solve(inst);
    obs.x = Vec(B * G);
    for (int b = 0; b < B; ++b)
      for (int g = 0; g < G; ++g) obs.x[md.idx(b, g)] = x(b, g);
    for (int k = 0; k < B * G; ++k) obs.x[k] += sigma * rng.normal();
    ds.observations.push_back(std::move(obs));
  }
  Vec omega_true(B * G);
  for (int b = 0; b < B; ++b)
    for (int g = 0; g < G; ++g) omega_true[md.idx(b, g)] = md.p(b, g) / md.m[b];
  ds.meta = TrueModel{Vec::Ones(1), omega_true, sigma, seed};
  return {std::move(ds), std::move(md)};
}

}  // namespace iopt
