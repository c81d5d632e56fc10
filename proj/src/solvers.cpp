#include "iopt/solvers.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace iopt {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Success: return "Success";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::MaxIterations: return "MaxIterations";
    case SolveStatus::NonFinite: return "NonFinite";
  }
  return "?";
}

ConicProgram ConicProgram::make(int n) {
  ConicProgram p;
  p.r = Vec::Zero(n);
  p.lb = Vec::Constant(n, -kInf);
  p.ub = Vec::Constant(n, kInf);
  p.A_eq.resize(0, n);
  p.b_eq.resize(0);
  p.A_in.resize(0, n);
  p.b_in.resize(0);
  return p;
}

namespace {

// Gathers A_in plus the finite box bounds into one inequality block G x <= h.
struct IneqFold {
  Mat G;
  Vec h;
  std::vector<int> kind;   // 0 = A_in row, 1 = lb, 2 = ub
  std::vector<int> index;  // original row / variable index
};

IneqFold fold_inequalities(const ConicProgram& prog) {
  const int n = prog.n();
  int rows = static_cast<int>(prog.A_in.rows());
  int extra = 0;
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(prog.lb[j])) ++extra;
    if (std::isfinite(prog.ub[j])) ++extra;
  }
  IneqFold f;
  f.G = Mat::Zero(rows + extra, n);
  f.h = Vec::Zero(rows + extra);
  f.kind.resize(rows + extra);
  f.index.resize(rows + extra);
  if (rows > 0) {
    f.G.topRows(rows) = prog.A_in;
    f.h.head(rows) = prog.b_in;
  }
  for (int i = 0; i < rows; ++i) {
    f.kind[i] = 0;
    f.index[i] = i;
  }
  int k = rows;
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(prog.lb[j])) {
      f.G(k, j) = -1.0;
      f.h[k] = -prog.lb[j];
      f.kind[k] = 1;
      f.index[k] = j;
      ++k;
    }
    if (std::isfinite(prog.ub[j])) {
      f.G(k, j) = 1.0;
      f.h[k] = prog.ub[j];
      f.kind[k] = 2;
      f.index[k] = j;
      ++k;
    }
  }
  return f;
}

Mat q_or_zero(const ConicProgram& prog) {
  if (prog.Q.size() == 0) return Mat::Zero(prog.n(), prog.n());
  return prog.Q;
}

// Equality-constrained (or unconstrained) QP: direct KKT solve.
QpResult solve_eq_qp(const ConicProgram& prog, double tol) {
  const int n = prog.n();
  const int p = static_cast<int>(prog.A_eq.rows());
  Mat Q = q_or_zero(prog);
  Mat K = Mat::Zero(n + p, n + p);
  K.topLeftCorner(n, n) = Q + 1e-12 * Mat::Identity(n, n);
  if (p > 0) {
    K.topRightCorner(n, p) = prog.A_eq.transpose();
    K.bottomLeftCorner(p, n) = prog.A_eq;
  }
  Vec rhs(n + p);
  rhs.head(n) = -prog.r;
  if (p > 0) rhs.tail(p) = prog.b_eq;
  Vec sol = K.partialPivLu().solve(rhs);
  QpResult res;
  res.x = sol.head(n);
  res.y_eq = p > 0 ? Vec(sol.tail(p)) : Vec(Vec::Zero(0));
  res.z_in = Vec::Zero(prog.A_in.rows());
  res.z_lb = Vec::Zero(n);
  res.z_ub = Vec::Zero(n);
  Vec stat = Q * res.x + prog.r;
  if (p > 0) stat += prog.A_eq.transpose() * res.y_eq;
  res.kkt_error = stat.lpNorm<Eigen::Infinity>();
  if (p > 0)
    res.kkt_error = std::max(res.kkt_error,
                             (prog.A_eq * res.x - prog.b_eq).lpNorm<Eigen::Infinity>());
  res.primal_obj = 0.5 * res.x.dot(Q * res.x) + prog.r.dot(res.x);
  res.dual_obj = res.primal_obj;
  res.status = res.kkt_error <= std::max(tol, 1e-8) && res.x.allFinite()
                   ? SolveStatus::Success
                   : SolveStatus::Unbounded;
  res.iterations = 1;
  return res;
}

}  // namespace

QpResult solve_qp(const ConicProgram& prog0, double tol, int max_iter) {
  // Pin variables with lb == ub through equality rows; keeping them as an
  // opposing inequality pair leaves the interior-point method no strictly
  // feasible slack.
  ConicProgram prog = prog0;
  const int p_orig = static_cast<int>(prog.A_eq.rows());
  {
    std::vector<int> fixed;
    for (int j = 0; j < prog.n(); ++j)
      if (std::isfinite(prog.lb[j]) && prog.lb[j] == prog.ub[j]) fixed.push_back(j);
    if (!fixed.empty()) {
      const int nf = static_cast<int>(fixed.size());
      Mat A = Mat::Zero(p_orig + nf, prog.n());
      Vec b = Vec::Zero(p_orig + nf);
      if (p_orig > 0) {
        A.topRows(p_orig) = prog.A_eq;
        b.head(p_orig) = prog.b_eq;
      }
      for (int k = 0; k < nf; ++k) {
        A(p_orig + k, fixed[k]) = 1.0;
        b[p_orig + k] = prog.lb[fixed[k]];
        prog.lb[fixed[k]] = -std::numeric_limits<double>::infinity();
        prog.ub[fixed[k]] = std::numeric_limits<double>::infinity();
      }
      prog.A_eq = std::move(A);
      prog.b_eq = std::move(b);
    }
  }

  const int n = prog.n();
  const int p = static_cast<int>(prog.A_eq.rows());
  IneqFold fold = fold_inequalities(prog);
  const int mi = static_cast<int>(fold.G.rows());

  if (mi == 0) {
    QpResult r = solve_eq_qp(prog, tol);
    if (r.y_eq.size() > p_orig) r.y_eq = Vec(r.y_eq.head(p_orig));
    return r;
  }

  Mat Q = q_or_zero(prog);
  const Mat& G = fold.G;
  const Vec& h = fold.h;

  // starting point: box-interior x, positive slacks and duals
  Vec x = Vec::Zero(n);
  for (int j = 0; j < n; ++j) {
    double lo = prog.lb[j], hi = prog.ub[j];
    if (std::isfinite(lo) && std::isfinite(hi))
      x[j] = 0.5 * (lo + hi);
    else if (std::isfinite(lo))
      x[j] = lo + 1.0;
    else if (std::isfinite(hi))
      x[j] = hi - 1.0;
  }
  Vec y = Vec::Zero(p);
  Vec s(mi), z(mi);
  {
    Vec slack0 = h - G * x;
    for (int i = 0; i < mi; ++i) s[i] = std::max(1.0, slack0[i]);
    // Start each dual near the least-squares magnitude its row needs to
    // absorb from the linear cost; starting at 1 makes the first Newton
    // directions useless when the cost coefficients span several decades.
    for (int i = 0; i < mi; ++i) {
      double gr = G.row(i).dot(prog.r);
      double gg = G.row(i).squaredNorm();
      z[i] = std::min(1e8, std::max(1.0, std::abs(gr) / std::max(1.0, gg)));
    }
  }

  QpResult res;
  res.status = SolveStatus::MaxIterations;
  const double obj_scale = 1.0 + prog.r.lpNorm<Eigen::Infinity>();
  const double rhs_scale = 1.0 + h.lpNorm<Eigen::Infinity>() +
                           (p > 0 ? prog.b_eq.lpNorm<Eigen::Infinity>() : 0.0);

  // Schur elimination of the epigraph tail (see ConicProgram::dense_head):
  // each tail variable has diagonal curvature and couples to at most one
  // inequality row, so the Newton system reduces to the head block.
  const int sh = prog.dense_head;
  bool structured = sh > 0 && sh < n;
  std::vector<int> aux_col(structured ? mi : 0, -1);
  std::vector<double> aux_coef(structured ? mi : 0, 0.0);
  if (structured) {
    for (int i = 0; i < mi && structured; ++i) {
      if (fold.kind[i] != 0) {
        int j = fold.index[i];
        if (j >= sh) {
          aux_col[i] = j;
          aux_coef[i] = fold.kind[i] == 1 ? -1.0 : 1.0;
        }
        continue;
      }
      for (int j = sh; j < n; ++j) {
        double v = G(i, j);
        if (v != 0.0) {
          if (aux_col[i] >= 0) { structured = false; break; }
          aux_col[i] = j;
          aux_coef[i] = v;
        }
      }
    }
    if (structured && p > 0 &&
        prog.A_eq.rightCols(n - sh).cwiseAbs().maxCoeff() != 0.0)
      structured = false;
    if (structured && prog.Q.size() > 0) {
      // tail curvature must be diagonal and uncoupled from the head
      if (prog.Q.topRightCorner(sh, n - sh).cwiseAbs().maxCoeff() != 0.0)
        structured = false;
      Mat qt = prog.Q.bottomRightCorner(n - sh, n - sh);
      qt.diagonal().setZero();
      if (structured && qt.cwiseAbs().maxCoeff() != 0.0) structured = false;
    }
  }
  const int nt = structured ? n - sh : 0;

  Mat K(structured ? 0 : n + p, structured ? 0 : n + p);
  Vec rhs(n + p);
  Mat Hwt;
  Vec htt_inv;
  Mat K2;

  for (int iter = 0; iter < max_iter; ++iter) {
    Vec rd = Q * x + prog.r + G.transpose() * z;
    if (p > 0) rd += prog.A_eq.transpose() * y;
    Vec rp = p > 0 ? Vec(prog.A_eq * x - prog.b_eq) : Vec(Vec::Zero(0));
    Vec rg = G * x + s - h;
    double mu = s.dot(z) / mi;

    double err_d = rd.lpNorm<Eigen::Infinity>() / obj_scale;
    double err_p = rg.lpNorm<Eigen::Infinity>();
    if (p > 0) err_p = std::max(err_p, rp.lpNorm<Eigen::Infinity>());
    err_p /= rhs_scale;
    res.kkt_error = std::max({err_d, err_p, mu});
    res.iterations = iter;
    if (err_d <= tol && err_p <= tol && mu <= tol) {
      res.status = SolveStatus::Success;
      break;
    }
    if (!x.allFinite() || x.lpNorm<Eigen::Infinity>() > 1e13) {
      res.status = SolveStatus::Unbounded;
      break;
    }
    if (z.lpNorm<Eigen::Infinity>() > 1e13) {
      res.status = SolveStatus::Infeasible;
      break;
    }

    Vec d = z.cwiseQuotient(s);  // diag scaling
    Eigen::PartialPivLU<Mat> lu;
    Eigen::PartialPivLU<Mat> lu2;
    if (structured) {
      Mat Hww = Q.topLeftCorner(sh, sh);
      Hww.diagonal().array() += 1e-12;
      Hwt = Mat::Zero(sh, nt);
      Vec htt = Q.diagonal().tail(nt);
      htt.array() += 1e-12;
      for (int i = 0; i < mi; ++i) {
        const int j = aux_col[i];
        if (fold.kind[i] != 0) {
          if (j >= 0)
            htt[j - sh] += d[i];  // bound row on a tail variable
          else
            Hww(fold.index[i], fold.index[i]) += d[i];
          continue;
        }
        Vec gw = prog.A_in.row(fold.index[i]).head(sh);
        Hww.selfadjointView<Eigen::Lower>().rankUpdate(gw, d[i]);
        if (j >= 0) {
          htt[j - sh] += d[i] * aux_coef[i] * aux_coef[i];
          Hwt.col(j - sh) += (d[i] * aux_coef[i]) * gw;
        }
      }
      Hww.triangularView<Eigen::Upper>() = Hww.transpose();
      htt_inv = htt.cwiseInverse();
      K2 = Mat::Zero(sh + p, sh + p);
      K2.topLeftCorner(sh, sh) =
          Hww - Hwt * htt_inv.asDiagonal() * Hwt.transpose();
      if (p > 0) {
        K2.topRightCorner(sh, p) = prog.A_eq.leftCols(sh).transpose();
        K2.bottomLeftCorner(p, sh) = prog.A_eq.leftCols(sh);
        K2.bottomRightCorner(p, p).diagonal().array() -= 1e-12;
      }
      lu2.compute(K2);
    } else {
      K.setZero();
      K.topLeftCorner(n, n) = Q + G.transpose() * d.asDiagonal() * G;
      K.topLeftCorner(n, n).diagonal().array() += 1e-12;
      if (p > 0) {
        K.topRightCorner(n, p) = prog.A_eq.transpose();
        K.bottomLeftCorner(p, n) = prog.A_eq;
        K.bottomRightCorner(p, p).diagonal().array() -= 1e-12;
      }
      lu.compute(K);
    }

    auto solve_dir = [&](const Vec& rc) {
      // rc: complementarity residual target (S z + correction)
      Vec tmp = rg - rc.cwiseQuotient(z);
      rhs.head(n) = -rd - G.transpose() * (d.asDiagonal() * tmp);
      if (p > 0) rhs.tail(p) = -rp;
      Vec dx(n), dy;
      if (structured) {
        Vec rw = rhs.head(sh);
        Vec rt = rhs.segment(sh, nt);
        Vec rhs2(sh + p);
        rhs2.head(sh) = rw - Hwt * htt_inv.cwiseProduct(rt);
        if (p > 0) rhs2.tail(p) = rhs.tail(p);
        Vec sol2 = lu2.solve(rhs2);
        dx.head(sh) = sol2.head(sh);
        dx.tail(nt) =
            htt_inv.cwiseProduct(rt - Hwt.transpose() * sol2.head(sh));
        dy = p > 0 ? Vec(sol2.tail(p)) : Vec(Vec::Zero(0));
      } else {
        Vec sol = lu.solve(rhs);
        dx = sol.head(n);
        dy = p > 0 ? Vec(sol.tail(p)) : Vec(Vec::Zero(0));
      }
      Vec ds = -rg - G * dx;
      Vec dz = -(rc + z.cwiseProduct(ds)).cwiseQuotient(s);
      return std::make_tuple(dx, dy, ds, dz);
    };

    // affine-scaling (predictor) direction
    Vec rc_aff = s.cwiseProduct(z);
    auto [dx_a, dy_a, ds_a, dz_a] = solve_dir(rc_aff);

    auto max_step = [&](const Vec& v, const Vec& dv) {
      double a = 1.0;
      for (int i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
      return a;
    };
    double ap = max_step(s, ds_a);
    double ad = max_step(z, dz_a);
    double mu_aff = (s + ap * ds_a).dot(z + ad * dz_a) / mi;
    double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3);
    sigma = std::min(1.0, std::max(0.0, sigma));

    // corrector
    Vec rc = s.cwiseProduct(z) + ds_a.cwiseProduct(dz_a) -
             Vec::Constant(mi, sigma * mu);
    auto [dx, dy, ds, dz] = solve_dir(rc);

    // Separate primal/dual step lengths when the quadratic term is absent or
    // negligible (LP); the dual residual then does not couple x and z.
    const bool lp_like =
        Q.size() == 0 || Q.lpNorm<Eigen::Infinity>() <= 1e-4 * obj_scale;
    double ap_len = std::min(1.0, 0.995 * max_step(s, ds));
    double ad_len = std::min(1.0, 0.995 * max_step(z, dz));
    double alpha = std::min(ap_len, ad_len);
    double alpha_p = lp_like ? ap_len : alpha;
    double alpha_d = lp_like ? ad_len : alpha;
    x += alpha_p * dx;
    if (p > 0) y += alpha_d * dy;
    s += alpha_p * ds;
    z += alpha_d * dz;
  }

  res.x = x;
  res.y_eq = y.head(p_orig);  // drop the duals of the pinned-variable rows
  res.z_in = Vec::Zero(prog.A_in.rows());
  res.z_lb = Vec::Zero(n);
  res.z_ub = Vec::Zero(n);
  for (int i = 0; i < mi; ++i) {
    if (fold.kind[i] == 0)
      res.z_in[fold.index[i]] = z[i];
    else if (fold.kind[i] == 1)
      res.z_lb[fold.index[i]] = z[i];
    else
      res.z_ub[fold.index[i]] = z[i];
  }
  res.primal_obj = 0.5 * x.dot(Q * x) + prog.r.dot(x);
  res.dual_obj = -0.5 * x.dot(Q * x) - h.dot(z) -
                 (p > 0 ? prog.b_eq.dot(y) : 0.0);
  return res;
}

SmoothResult solve_smooth(const SmoothProgram& prog, double tol, int max_iter) {
  const int n = prog.n;
  const bool has_prox = prog.prox_anchor.size() == n &&
                        std::isfinite(prog.prox_gamma) && prog.prox_gamma > 0;

  auto project = [&](const Vec& v) -> Vec {
    return v.cwiseMax(prog.lb).cwiseMin(prog.ub);
  };
  auto value = [&](const Vec& v) -> double {
    double val = prog.f(v);
    if (has_prox) val += 0.5 / prog.prox_gamma * (v - prog.prox_anchor).squaredNorm();
    return val;
  };
  auto gradient = [&](const Vec& v) -> Vec {
    Vec g = prog.grad(v);
    if (has_prox) g += (v - prog.prox_anchor) / prog.prox_gamma;
    return g;
  };

  SmoothResult res;
  Vec x = project(prog.x0);
  double fx = value(x);
  if (!std::isfinite(fx)) throw NonFiniteEvaluation("solve_smooth: objective not finite at x0");
  Vec g = gradient(x);

  double alpha = 1.0 / std::max(1.0, g.lpNorm<Eigen::Infinity>());
  Vec x_prev = x, g_prev = g;
  bool have_prev = false;

  for (int iter = 0; iter < max_iter; ++iter) {
    res.pg_norm = (x - project(x - g)).lpNorm<Eigen::Infinity>();
    res.iterations = iter;
    if (res.pg_norm <= tol) {
      res.status = SolveStatus::Success;
      break;
    }

    if (have_prev) {
      Vec sv = x - x_prev;
      Vec yv = g - g_prev;
      double sy = sv.dot(yv);
      if (sy > 1e-300)
        alpha = std::min(1e10, std::max(1e-12, sv.squaredNorm() / sy));
    }

    Vec d = project(x - alpha * g) - x;
    double gTd = g.dot(d);
    if (gTd > -1e-300) {
      // spectral step produced no descent direction; fall back to a short step
      d = project(x - 1e-8 * g) - x;
      gTd = g.dot(d);
      if (gTd > -1e-300) {
        res.status = SolveStatus::Success;  // stationary within precision
        break;
      }
    }

    // monotone Armijo backtracking, factor 0.5, slope 1e-4
    double beta = 1.0;
    double f_new = kInf;
    Vec x_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + beta * d;
      f_new = value(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * beta * gTd) {
        accepted = true;
        break;
      }
      beta *= 0.5;
    }
    if (!accepted) {
      res.status = SolveStatus::Success;  // no further monotone progress possible
      break;
    }

    x_prev = x;
    g_prev = g;
    have_prev = true;
    x = x_new;
    fx = f_new;
    g = gradient(x);
  }

  res.x = x;
  res.obj = fx;
  return res;
}

namespace {

// Newton centering for  min t*f(x) + phi(x)  s.t. A_eq x = b_eq,
// phi the log barrier of g <= 0.  Returns equality multiplier (unscaled).
struct CenterResult {
  Vec x;
  Vec y;
  bool ok = false;
};

CenterResult center(const BarrierProgram& prog, Vec x, double t, double inner_tol,
                    int max_newton = 80) {
  const int n = prog.n;
  const int p = static_cast<int>(prog.A_eq.rows());
  CenterResult out;
  Vec y = Vec::Zero(p);

  for (int it = 0; it < max_newton; ++it) {
    Vec gv = prog.m > 0 ? prog.g(x) : Vec(Vec::Zero(0));
    Vec grad = t * prog.grad(x);
    Mat H = t * prog.hess(x);
    if (prog.m > 0) {
      Mat J = prog.jac_g(x);
      Vec inv_neg = (-gv.array()).inverse().matrix();  // 1/(-g_k)
      grad += J.transpose() * inv_neg;
      H += J.transpose() * inv_neg.array().square().matrix().asDiagonal() * J;
      if (prog.hess_g) H += prog.hess_g(x, inv_neg);
    }

    Mat K = Mat::Zero(n + p, n + p);
    K.topLeftCorner(n, n) = H;
    K.topLeftCorner(n, n).diagonal().array() += 1e-12;
    Vec rhs(n + p);
    rhs.head(n) = -grad;
    if (p > 0) {
      K.topRightCorner(n, p) = prog.A_eq.transpose();
      K.bottomLeftCorner(p, n) = prog.A_eq;
      rhs.tail(p) = prog.b_eq - prog.A_eq * x;
    }
    Vec sol = K.partialPivLu().solve(rhs);
    Vec dx = sol.head(n);
    if (p > 0) y = sol.tail(p);

    double decrement = -0.5 * (grad.dot(dx) - rhs.head(n).dot(dx));  // == 0.5 dx'H dx
    double lambda2 = dx.dot(H * dx);
    if (!std::isfinite(lambda2)) return out;
    if (0.5 * lambda2 <= inner_tol) {
      out.x = x;
      out.y = y;
      out.ok = true;
      return out;
    }
    (void)decrement;

    // backtracking keeping the iterate strictly feasible and finite
    double phi0 = t * prog.f(x);
    if (prog.m > 0) phi0 -= (-gv.array()).log().sum();
    double slope = grad.dot(dx);
    double step = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      Vec xn = x + step * dx;
      bool feas = true;
      if (prog.m > 0) {
        Vec gn = prog.g(xn);
        if ((gn.array() >= 0.0).any()) feas = false;
      }
      if (feas) {
        double phin = t * prog.f(xn);
        if (prog.m > 0) phin -= (-prog.g(xn).array()).log().sum();
        if (std::isfinite(phin) && phin <= phi0 + 1e-4 * step * slope) {
          x = xn;
          moved = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!moved) {
      out.x = x;
      out.y = y;
      out.ok = true;  // stuck at numerical precision; accept current center
      return out;
    }
  }
  out.x = x;
  out.y = y;
  out.ok = true;
  return out;
}

}  // namespace

BarrierResult solve_barrier(const BarrierProgram& prog, double tol) {
  BarrierResult res;
  const int p = static_cast<int>(prog.A_eq.rows());
  Vec x = prog.x0;

  // restore equality feasibility by a least-norm correction
  if (p > 0) {
    Vec r = prog.b_eq - prog.A_eq * x;
    if (r.lpNorm<Eigen::Infinity>() > 1e-12) {
      Mat AAt = prog.A_eq * prog.A_eq.transpose();
      x += prog.A_eq.transpose() * AAt.ldlt().solve(r);
    }
  }

  // phase I when the start violates the inequalities strictly
  if (prog.m > 0) {
    Vec g0 = prog.g(x);
    if (!g0.allFinite() || (g0.array() >= 0.0).any()) {
      const int n = prog.n;
      BarrierProgram ph;
      ph.n = n + 1;
      ph.m = prog.m;
      ph.f = [](const Vec& xs) { return xs[xs.size() - 1]; };
      ph.grad = [n](const Vec&) {
        Vec g = Vec::Zero(n + 1);
        g[n] = 1.0;
        return g;
      };
      ph.hess = [n](const Vec&) { return Mat::Zero(n + 1, n + 1); };
      ph.g = [&prog, n](const Vec& xs) -> Vec {
        return prog.g(xs.head(n)) - Vec::Constant(prog.m, xs[n]);
      };
      ph.jac_g = [&prog, n](const Vec& xs) -> Mat {
        Mat J(prog.m, n + 1);
        J.leftCols(n) = prog.jac_g(xs.head(n));
        J.col(n) = Vec::Constant(prog.m, -1.0);
        return J;
      };
      if (prog.hess_g)
        ph.hess_g = [&prog, n](const Vec& xs, const Vec& w) -> Mat {
          Mat H = Mat::Zero(n + 1, n + 1);
          H.topLeftCorner(n, n) = prog.hess_g(xs.head(n), w);
          return H;
        };
      if (p > 0) {
        ph.A_eq = Mat::Zero(p, n + 1);
        ph.A_eq.leftCols(n) = prog.A_eq;
        ph.b_eq = prog.b_eq;
      }
      ph.x0 = Vec(n + 1);
      ph.x0.head(n) = x;
      double gmax = g0.allFinite() ? g0.maxCoeff() : 1.0;
      ph.x0[n] = gmax + 1.0;

      // run the same barrier machinery on the phase-I program
      double t = 1.0;
      Vec xs = ph.x0;
      bool strictly = false;
      for (int outer = 0; outer < 40; ++outer) {
        CenterResult c = center(ph, xs, t, 1e-9);
        if (!c.ok) break;
        xs = c.x;
        if (xs[n] < -1e-10) {
          strictly = true;
          break;
        }
        if (ph.m / t <= 1e-10) break;
        t *= 10.0;
      }
      if (!strictly) {
        res.status = SolveStatus::Infeasible;
        res.x = x;
        return res;
      }
      x = xs.head(n);
    }
  }

  // main barrier loop, t <- 10 t, Newton inner tolerance 1e-9
  double t = 1.0;
  Vec y = Vec::Zero(p);
  const int m = prog.m;
  for (int outer = 0; outer < 60; ++outer) {
    CenterResult c = center(prog, x, t, 1e-9);
    if (!c.ok) {
      res.status = SolveStatus::MaxIterations;
      break;
    }
    x = c.x;
    y = c.y;
    res.gap = m > 0 ? static_cast<double>(m) / t : 0.0;
    if (res.gap <= tol) {
      res.status = SolveStatus::Success;
      break;
    }
    t *= 10.0;
  }
  if (m == 0) res.status = SolveStatus::Success;

  res.x = x;
  res.lambda = m > 0 ? Vec((1.0 / t) * (-prog.g(x).array()).inverse().matrix())
                     : Vec(Vec::Zero(0));
  res.mu_eq = p > 0 ? Vec(y / t) : Vec(Vec::Zero(0));
  return res;
}

}  // namespace iopt
