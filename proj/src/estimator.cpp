#include "iopt/estimator.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "iopt/rng.hpp"

namespace iopt {

namespace {
// coupled epigraph QPs beyond this size fall back to the smoothed solve
constexpr int kEpigraphVarLimit = 1600;
constexpr int kEpigraphRowLimit = 4000;
constexpr double kMonotoneTol = 1e-9;

double now_s() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

void note(std::vector<std::string>* notes, const std::string& msg) {
  if (notes) notes->push_back(msg);
}
}  // namespace

std::string to_string(Method m) {
  return m == Method::BCD ? "BCD" : "FullSpaceSmoothed";
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::PenaltyFeasible: return "PenaltyFeasible";
    case Termination::ValidationStall: return "ValidationStall";
    case Termination::MaxOuter: return "MaxOuter";
    case Termination::Diverged: return "Diverged";
    case Termination::Timeout: return "Timeout";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "BCD") return Method::BCD;
  if (s == "FullSpaceSmoothed") return Method::FullSpaceSmoothed;
  throw InvalidModel("unknown method: " + s);
}

void EstimatorConfig::validate() const {
  if ((c1.array() <= 0).any()) throw InvalidModel("EstimatorConfig: c1 must be positive");
  if (rho <= 0 || gamma <= 0 || eps_penalty <= 0)
    throw InvalidModel("EstimatorConfig: rho, gamma, eps_penalty must be positive");
  if (max_outer < 1 || max_bcd_passes < 1)
    throw InvalidModel("EstimatorConfig: iteration counts must be positive");
  if (stall_window < 2) throw InvalidModel("EstimatorConfig: stall_window >= 2");
  if (stall_rel_tol <= 0) throw InvalidModel("EstimatorConfig: stall_rel_tol must be positive");
  if (!(time_budget_s > 0)) throw InvalidModel("EstimatorConfig: time_budget_s must be positive");
}

std::string EstimatorConfig::to_json() const {
  nlohmann::json j;
  j["c1"] = {c1[0], c1[1], c1[2], c1[3]};
  j["rho"] = rho;
  j["gamma"] = gamma;
  j["eps_penalty"] = eps_penalty;
  j["max_outer"] = max_outer;
  j["max_bcd_passes"] = max_bcd_passes;
  j["stall_window"] = stall_window;
  j["stall_rel_tol"] = stall_rel_tol;
  j["time_budget_s"] = time_budget_s;
  j["method"] = to_string(method);
  j["seed"] = seed;
  return j.dump(2);
}

EstimatorConfig EstimatorConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  EstimatorConfig cfg;
  if (j.contains("c1")) {
    if (j["c1"].is_number()) {
      cfg.c1.setConstant(j["c1"].get<double>());
    } else {
      for (int i = 0; i < 4; ++i) cfg.c1[i] = j["c1"][i].get<double>();
    }
  }
  if (j.contains("rho")) cfg.rho = j["rho"].get<double>();
  if (j.contains("gamma")) cfg.gamma = j["gamma"].get<double>();
  if (j.contains("eps_penalty")) cfg.eps_penalty = j["eps_penalty"].get<double>();
  if (j.contains("max_outer")) cfg.max_outer = j["max_outer"].get<int>();
  if (j.contains("max_bcd_passes")) cfg.max_bcd_passes = j["max_bcd_passes"].get<int>();
  if (j.contains("stall_window")) cfg.stall_window = j["stall_window"].get<int>();
  if (j.contains("stall_rel_tol")) cfg.stall_rel_tol = j["stall_rel_tol"].get<double>();
  if (j.contains("time_budget_s")) cfg.time_budget_s = j["time_budget_s"].get<double>();
  if (j.contains("method")) cfg.method = method_from_string(j["method"].get<std::string>());
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

EstimatorConfig EstimatorConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("EstimatorConfig::load: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

namespace {

// Solve one block subproblem and write the result into est.  Returns false
// when every solver path failed for some piece.
bool solve_block(const ParametricFop& fop, const Dataset& ds,
                 const WeightMatrix& w, IopEstimate& est,
                 const PenaltyState& ps, BlockId id,
                 std::vector<std::string>* notes) {
  // Non-QP forward problems: minimize the x-hat pieces by prox-linear steps
  // (solve the epigraph QP of the residuals linearized at the current point,
  // accept only if the true smoothed objective decreases, re-linearize).
  // The plain smoothed solve stalls on these pieces: the penalty kinks give
  // the projected-gradient method an effective curvature of c / delta.
  if (id == BlockId::XHat && !fop.fop_is_qp) {
    std::vector<char> ok_piece(static_cast<std::size_t>(ds.size()), 0);
    auto piece_value = [](const SmoothProgram& sp, const Vec& v) {
      double val = sp.f(v);
      if (sp.prox_anchor.size() == sp.n && sp.prox_gamma > 0)
        val += 0.5 / sp.prox_gamma * (v - sp.prox_anchor).squaredNorm();
      return val;
    };
    for (int round = 0; round < 6; ++round) {
      BlockProblem bq = block_subproblem_data(fop, ds, w, est, ps, id);
      bool improved = false;
      for (std::size_t j = 0; j < bq.epigraph.size(); ++j) {
        const ConicProgram& cp = bq.epigraph[j];
        const int rows = static_cast<int>(cp.A_in.rows() + cp.A_eq.rows());
        if (cp.n() > kEpigraphVarLimit || rows > kEpigraphRowLimit) continue;
        QpResult qr = solve_qp(cp, 1e-9, 80);
        if ((qr.status != SolveStatus::Success &&
             qr.status != SolveStatus::MaxIterations) ||
            !qr.x.allFinite())
          continue;
        Vec cand = qr.x.head(bq.epigraph_real_dim[j])
                       .cwiseMax(bq.smooth[j].lb)
                       .cwiseMin(bq.smooth[j].ub);
        try {
          double before = piece_value(bq.smooth[j], bq.current[j]);
          double after = piece_value(bq.smooth[j], cand);
          if (std::isfinite(after) &&
              after < before - 1e-10 * (1.0 + std::abs(before))) {
            est.x_hat.row(j) = cand;
            improved = true;
          }
          ok_piece[j] = 1;  // the step was evaluated, even if rejected
        } catch (const NonFiniteEvaluation&) {
        }
      }
      if (!improved) break;
    }
    // pieces the QP path never handled fall back to the smoothed solve
    bool all_ok = true;
    for (char c : ok_piece) all_ok = all_ok && c;
    if (all_ok) return true;
    BlockProblem bq = block_subproblem_data(fop, ds, w, est, ps, id);
    bool any = false;
    for (std::size_t j = 0; j < bq.smooth.size(); ++j) {
      if (ok_piece[j]) {
        any = true;
        continue;
      }
      try {
        SmoothResult sr = solve_smooth(bq.smooth[j], 1e-8, 1500);
        if (sr.x.allFinite()) {
          est.x_hat.row(j) = sr.x.cwiseMax(bq.smooth[j].lb).cwiseMin(bq.smooth[j].ub);
          any = true;
        }
      } catch (const NonFiniteEvaluation&) {
        note(notes, "x-hat piece " + std::to_string(j) + " skipped (solver failure)");
      }
    }
    return any;
  }

  // Joint (theta, duals) pieces can exceed the tractable epigraph size when
  // theta is free and m + p is large.  When the theta-only fit itself stays
  // small, alternate: pin theta (the piece then separates per observation)
  // and refit theta against stationarity with the duals frozen.
  if (id == BlockId::ThetaDuals && fop.stationarity_affine_theta) {
    bool theta_free = false;
    for (int j = 0; j < fop.dim_theta; ++j)
      if (!fop.theta_domain.is_fixed(j)) theta_free = true;
    const int ni = ds.size();
    const int joint = theta_duals_dim(fop, ni) + ni * fop.n;  // vars + aux
    const int theta_fit_dim = fop.dim_theta + ni * fop.n;
    if (theta_free && joint > kEpigraphVarLimit &&
        theta_fit_dim <= kEpigraphVarLimit &&
        2 * ni * fop.n <= kEpigraphRowLimit) {
      bool any = false;
      for (int round = 0; round < 3; ++round) {
        ParametricFop pinned = fop;
        pinned.theta_domain = BoxDomain(est.theta, est.theta);
        if (solve_block(pinned, ds, w, est, ps, id, notes)) any = true;
        Vec theta_prev = est.theta;
        try {
          QpResult qr = solve_qp(theta_only_epigraph(fop, ds, est, ps), 1e-9, 80);
          if ((qr.status == SolveStatus::Success ||
               qr.status == SolveStatus::MaxIterations) &&
              qr.x.allFinite()) {
            est.theta = qr.x.head(fop.dim_theta)
                            .cwiseMax(fop.theta_domain.lower)
                            .cwiseMin(fop.theta_domain.upper);
            any = true;
          }
        } catch (const std::exception&) {
        }
        if ((est.theta - theta_prev).lpNorm<Eigen::Infinity>() <=
            1e-8 * (1.0 + theta_prev.lpNorm<Eigen::Infinity>()))
          break;
      }
      if (!any) note(notes, "theta/duals alternation made no progress");
      return any;
    }
  }

  BlockProblem bp = block_subproblem_data(fop, ds, w, est, ps, id);
  bool any_ok = false;

  for (std::size_t j = 0; j < bp.smooth.size(); ++j) {
    Vec z;
    bool ok = false;
    if (bp.affine && !bp.epigraph.empty()) {
      const ConicProgram& cp = bp.epigraph[j];
      const int rows = static_cast<int>(cp.A_in.rows() + cp.A_eq.rows());
      if (cp.n() <= kEpigraphVarLimit && rows <= kEpigraphRowLimit) {
        QpResult qr = solve_qp(cp, 1e-9, 80);
        if ((qr.status == SolveStatus::Success ||
             qr.status == SolveStatus::MaxIterations) &&
            qr.x.allFinite()) {
          z = qr.x.head(bp.epigraph_real_dim[j]);
          ok = true;
        }
      }
    }
    if (!ok) {
      try {
        SmoothResult sr = solve_smooth(bp.smooth[j], 1e-8, 1500);
        if (sr.x.allFinite()) {
          z = sr.x;
          ok = true;
        }
      } catch (const NonFiniteEvaluation&) {
        ok = false;
      }
    }
    if (!ok) {
      note(notes, "block " + std::to_string(static_cast<int>(id)) +
                      " piece " + std::to_string(j) + " skipped (solver failure)");
      continue;
    }
    // clamp to the hard sets so iterates stay exactly feasible
    z = z.cwiseMax(bp.smooth[j].lb).cwiseMin(bp.smooth[j].ub);
    switch (id) {
      case BlockId::ThetaDuals:
        if (bp.separated) {  // separated per observation (theta pinned)
          est.lambda.row(j) = z.head(fop.m);
          if (fop.p > 0) est.mu.row(j) = z.tail(fop.p);
        } else {
          unpack_theta_duals(fop, z, est);
        }
        break;
      case BlockId::Omega: est.omega = z; break;
      case BlockId::XHat: est.x_hat.row(j) = z; break;
    }
    any_ok = true;
  }
  return any_ok;
}

IopEstimate blank_estimate(const ParametricFop& fop, const Dataset& ds) {
  IopEstimate est;
  const int ni = ds.size();
  est.theta = fop.theta_domain.midpoint();
  est.omega = fop.omega_domain.midpoint();
  est.x_hat = Mat::Zero(ni, fop.n);
  est.lambda = Mat::Zero(ni, fop.m);
  est.mu = Mat::Zero(ni, fop.p);
  return est;
}

}  // namespace

IopEstimate initialize(const ParametricFop& fop, const Dataset& ds,
                       const WeightMatrix& w, std::uint64_t seed,
                       std::vector<std::string>* notes) {
  ds.validate();
  w.validate();
  if (ds.size() == 0) throw InvalidModel("initialize: empty dataset");
  if (w.dim() != fop.n) throw DimensionMismatch("initialize: weight dimension");

  IopEstimate est = blank_estimate(fop, ds);
  const bool partial = (w.diagonal.array() == 0.0).any();

  Rng rng(derive_seed(seed, "init-fill"));
  double scale = 0.0;
  int cnt = 0;
  for (const auto& obs : ds.observations)
    for (int jj = 0; jj < fop.n; ++jj)
      if (w.diagonal[jj] > 0) {
        scale += std::abs(obs.x[jj]);
        ++cnt;
      }
  scale = cnt > 0 ? 2.0 * scale / cnt + 1.0 : 1.0;

  for (int i = 0; i < ds.size(); ++i) {
    Vec fill(fop.n);
    for (int jj = 0; jj < fop.n; ++jj) {
      double lo = std::max(fop.x_bounds.lower[jj], -scale);
      double hi = std::min(fop.x_bounds.upper[jj], scale);
      fill[jj] = rng.uniform(lo, hi);
    }
    Vec x0 = apply_observation_mask(w, fill, ds.observations[i].x);
    est.x_hat.row(i) = fop.x_bounds.project(x0);
  }

  if (partial) {
    // under partial observability the fitting problems below are
    // under-determined on the random fill; sample the parameter boxes and,
    // when a forward solver exists, replace the random fill with the forward
    // solution at the sampled parameters so the unobserved coordinates are
    // at least mutually consistent
    for (int jj = 0; jj < fop.dim_theta; ++jj)
      est.theta[jj] = fop.theta_domain.is_fixed(jj)
                          ? fop.theta_domain.lower[jj]
                          : rng.uniform(fop.theta_domain.lower[jj],
                                        fop.theta_domain.upper[jj]);
    for (int jj = 0; jj < fop.dim_omega; ++jj)
      est.omega[jj] = fop.omega_domain.is_fixed(jj)
                          ? fop.omega_domain.lower[jj]
                          : rng.uniform(fop.omega_domain.lower[jj],
                                        fop.omega_domain.upper[jj]);
    note(notes, "partial observability: parameters sampled from their boxes");
    if (!fop.forward_solve) return est;

    // refine the sampled parameters by derivative-free search on the
    // prediction error of the observed coordinates, then take the
    // unobserved coordinates from the forward solution
    auto pred_err = [&](const Vec& th, const Vec& om) {
      double e = 0.0;
      for (const auto& obs : ds.observations) {
        Vec sol;
        try {
          sol = fop.forward_solve(obs.u, th, om);
        } catch (const std::exception&) {
          return std::numeric_limits<double>::infinity();
        }
        e += (w.diagonal.array() * (sol - obs.x).array()).matrix().squaredNorm();
      }
      return e;
    };

    const int dt = fop.dim_theta, dw = fop.dim_omega;
    std::vector<int> free_t, free_w;
    for (int jj = 0; jj < dt; ++jj)
      if (!fop.theta_domain.is_fixed(jj)) free_t.push_back(jj);
    for (int jj = 0; jj < dw; ++jj)
      if (!fop.omega_domain.is_fixed(jj)) free_w.push_back(jj);

    double best = pred_err(est.theta, est.omega);
    // a handful of random restarts; positive coordinates log-uniform
    for (int trial = 0; trial < 11; ++trial) {
      Vec th = est.theta, om = est.omega;
      auto draw = [&](double lo, double hi) {
        if (lo > 0.0) return std::exp(rng.uniform(std::log(lo), std::log(hi)));
        return rng.uniform(lo, hi);
      };
      for (int jj : free_t) th[jj] = draw(fop.theta_domain.lower[jj], fop.theta_domain.upper[jj]);
      for (int jj : free_w) om[jj] = draw(fop.omega_domain.lower[jj], fop.omega_domain.upper[jj]);
      double e = pred_err(th, om);
      if (e < best) { best = e; est.theta = th; est.omega = om; }
    }
    // shrinking coordinate search around the best sample; each level sweeps
    // until no probe improves so the iterate can travel several steps
    auto probe_coord = [&](const BoxDomain& dom, Vec& v, int jj, double step,
                           bool is_theta) {
      const double range = dom.upper[jj] - dom.lower[jj];
      bool improved = false;
      for (double cand : {v[jj] * (1.0 + step), v[jj] * (1.0 - step),
                          v[jj] + 0.1 * step * range, v[jj] - 0.1 * step * range}) {
        cand = std::clamp(cand, dom.lower[jj], dom.upper[jj]);
        if (cand == v[jj]) continue;
        Vec t = v;
        t[jj] = cand;
        double e = is_theta ? pred_err(t, est.omega) : pred_err(est.theta, t);
        if (e < best) { best = e; v = t; improved = true; }
      }
      return improved;
    };
    for (double step : {0.4, 0.15, 0.05}) {
      for (int sweep = 0; sweep < 6 && best > 0.0; ++sweep) {
        bool improved = false;
        for (int jj : free_t)
          improved |= probe_coord(fop.theta_domain, est.theta, jj, step, true);
        for (int jj : free_w)
          improved |= probe_coord(fop.omega_domain, est.omega, jj, step, false);
        if (!improved) break;
      }
    }
    {
      std::ostringstream os;
      os << "partial observability: parameters refined by forward-prediction search"
         << " (err " << best << ")";
      note(notes, os.str());
    }

    try {
      for (int i = 0; i < ds.size(); ++i) {
        Vec sol = fop.forward_solve(ds.observations[i].u, est.theta, est.omega);
        Vec x0 = apply_observation_mask(w, sol, ds.observations[i].x);
        est.x_hat.row(i) = fop.x_bounds.project(x0);
      }
    } catch (const std::exception& e) {
      note(notes, std::string("forward fill failed: ") + e.what());
      return est;
    }
    // fit the duals at the searched parameters and stop: the
    // full-observability refits below would pull the parameters away from
    // the prediction-error minimum toward a spurious corner of the box
    try {
      PenaltyState psd;
      psd.c << 1.0, 1.0, 1.0, 1.0;
      psd.gamma = 1e12;
      ParametricFop pinned = fop;
      pinned.theta_domain = BoxDomain(est.theta, est.theta);
      solve_block(pinned, ds, w, est, psd, BlockId::ThetaDuals, notes);
    } catch (const std::exception& e) {
      note(notes, std::string("dual initialization failed: ") + e.what());
    }
    return est;
  }

  // constraint-violation minimization for omega: same machinery as the
  // omega block with unit violation weights and negligible extras
  try {
    PenaltyState ps0;
    ps0.c << 1e-9, 1.0, 1.0, 1e-9;
    ps0.gamma = 1e12;  // no effective proximal pull
    if (!solve_block(fop, ds, w, est, ps0, BlockId::Omega, notes))
      note(notes, "omega initialization failed; keeping box midpoint");
  } catch (const std::exception& e) {
    note(notes, std::string("omega initialization failed: ") + e.what());
    est.omega = fop.omega_domain.midpoint();
  }

  // stationarity minimization for (theta, lambda, mu).  Complementarity gets
  // almost no weight here: the duals of the rows that are truly active carry
  // the stationarity signal, and at this point g at the (noisy) anchor is
  // rarely exactly zero, so any complementarity weight would zero those
  // duals out and hide the active set from the refinement step below.
  try {
    PenaltyState ps1;
    ps1.c << 1.0, 1.0, 1.0, 1e-9;
    ps1.gamma = 1e12;
    if (!solve_block(fop, ds, w, est, ps1, BlockId::ThetaDuals, notes))
      note(notes, "theta initialization failed; keeping box midpoint");
  } catch (const std::exception& e) {
    note(notes, std::string("theta initialization failed: ") + e.what());
    est.theta = fop.theta_domain.midpoint();
    est.lambda.setZero();
    est.mu.setZero();
  }

  // Alternate a few more omega / dual fits at the data anchor.  The first
  // omega fit ran before any duals were available, so it has no incentive to
  // put observations on their constraint boundaries, and the constraint
  // parameters are identified precisely by the rows the duals mark as active
  // (complementarity) together with the stationarity system.  Without this
  // the solve can start in a (lambda = 0, g < 0) pocket that block descent
  // never leaves.
  try {
    PenaltyState ps2;
    ps2.c << 1.0, 1.0, 1.0, 1.0;
    ps2.gamma = 1e12;
    for (int cycle = 0; cycle < 1; ++cycle) {
    double prev = std::numeric_limits<double>::infinity();
    for (int round = 0; round < 40; ++round) {
      solve_block(fop, ds, w, est, ps2, BlockId::Omega, notes);
      solve_block(fop, ds, w, est, ps2, BlockId::ThetaDuals, notes);
      auto [P, l1] = penalty_norm(residuals(fop, ds, est));
      if (l1 >= prev * (1.0 - 1e-3)) break;
      prev = l1;
    }
    // Scale correction.  When all omega coordinates entering inequality row
    // k enter no other constraint, the KKT system is invariant under
    // (omega_k *= s, lambda_k /= s): stationarity keeps the product, and the
    // alternation above can settle with the row uniformly slack but its dual
    // positive.  Neither block can fix that alone -- the scale is set by the
    // boundary (positive-dual rows are tight at a KKT point).  Rescale each
    // such group to best zero its row across observations, co-scale the
    // duals, and keep the change only if the aggregate residual drops.
    const int dw = fop.dim_omega;
    std::vector<std::vector<int>> row_coords(fop.m);
    {
      const Vec x0 = est.x_hat.row(0);
      const Vec& u0 = ds.observations[0].u;
      const double dstep = fop.constraints_affine_omega ? 0.5 : 1e-6;
      std::vector<int> owner(dw, -1);  // -1 none, -2 shared
      for (int j = 0; j < dw; ++j) {
        Vec wp = est.omega, wm = est.omega;
        wp[j] += dstep;
        wm[j] -= dstep;
        Vec diff = (fop.eval_g(x0, u0, wp) - fop.eval_g(x0, u0, wm)) / (2 * dstep);
        for (int k = 0; k < fop.m; ++k)
          if (std::abs(diff[k]) > 1e-10)
            owner[j] = (owner[j] == -1 || owner[j] == k) ? k : -2;
      }
      for (int j = 0; j < dw; ++j)
        if (owner[j] >= 0 && !fop.omega_domain.is_fixed(j))
          row_coords[owner[j]].push_back(j);
    }
    auto total_res = [&]() {
      auto [P, l1] = penalty_norm(residuals(fop, ds, est));
      return l1;
    };
    const int ni2 = ds.size();
    double F = total_res();
    for (int k = 0; k < fop.m; ++k) {
      if (row_coords[k].empty()) continue;
      if (est.lambda.col(k).cwiseAbs().maxCoeff() <= 1e-6) continue;
      Vec omega_zeroed = est.omega;
      for (int j : row_coords[k]) omega_zeroed[j] = 0.0;
      std::vector<double> dk(ni2), ek(ni2), cand;
      for (int i = 0; i < ni2; ++i) {
        const Vec xi = est.x_hat.row(i);
        const Vec& ui = ds.observations[i].u;
        ek[i] = fop.eval_g(xi, ui, omega_zeroed)[k];
        dk[i] = fop.eval_g(xi, ui, est.omega)[k] - ek[i];
        if (std::abs(dk[i]) > 1e-12) cand.push_back(-ek[i] / dk[i]);
      }
      // the l1-best scale sits at one of the per-observation roots
      double best_s = 1.0;
      double best_v = 0.0;
      for (int i = 0; i < ni2; ++i) best_v += std::abs(dk[i] + ek[i]);
      for (double s : cand) {
        if (s <= 1e-6) continue;
        double v = 0.0;
        for (int i = 0; i < ni2; ++i) v += std::abs(s * dk[i] + ek[i]);
        if (v < best_v) {
          best_v = v;
          best_s = s;
        }
      }
      if (best_s == 1.0) continue;
      IopEstimate saved = est;
      for (int j : row_coords[k])
        est.omega[j] = std::min(fop.omega_domain.upper[j],
                                std::max(fop.omega_domain.lower[j],
                                         best_s * est.omega[j]));
      est.lambda.col(k) /= best_s;
      double F2 = total_res();
      if (F2 < F * (1.0 - 1e-9)) {
        F = F2;
      } else {
        est = std::move(saved);
      }
    }
    solve_block(fop, ds, w, est, ps2, BlockId::ThetaDuals, notes);
    }  // cycle
  } catch (const std::exception& e) {
    note(notes, std::string("init refinement skipped: ") + e.what());
  }
  return est;
}

std::pair<IopEstimate, double> bcd_pass(const ParametricFop& fop,
                                        const Dataset& ds,
                                        const WeightMatrix& w,
                                        const IopEstimate& est,
                                        const PenaltyState& ps,
                                        std::vector<std::string>* notes) {
  IopEstimate cur = est;
  double obj = penalized_objective(fop, ds, w, cur, ps);

  for (BlockId id : {BlockId::ThetaDuals, BlockId::Omega, BlockId::XHat}) {
    IopEstimate cand = cur;
    bool ok = false;
    try {
      ok = solve_block(fop, ds, w, cand, ps, id, notes);
    } catch (const std::exception& e) {
      note(notes, std::string("block update failed: ") + e.what());
    }
    if (!ok) continue;
    double obj_c;
    try {
      obj_c = penalized_objective(fop, ds, w, cand, ps);
    } catch (const NonFiniteEvaluation&) {
      note(notes, "block update produced non-finite objective; reverted");
      continue;
    }
    if (obj_c <= obj + kMonotoneTol) {
      cur = std::move(cand);
      obj = std::min(obj, obj_c);
    } else {
      note(notes, "block update increased objective; reverted");
    }
  }
  return {std::move(cur), obj};
}

namespace {

double validation_error(const ParametricFop& fop, const IopEstimate& est,
                        const TestSet& vs) {
  std::vector<Vec> us;
  us.reserve(vs.points.size());
  for (const auto& pt : vs.points) us.push_back(pt.u);
  int failures = 0;
  std::vector<Vec> preds = predict(fop, est.theta, est.omega, us, &failures);
  double err = 0.0;
  for (std::size_t v = 0; v < preds.size(); ++v)
    err += (vs.points[v].x - preds[v]).lpNorm<1>();
  return err;
}

}  // namespace

SolveReport solve(const ParametricFop& fop, const Dataset& ds,
                  const WeightMatrix& w, const EstimatorConfig& cfg) {
  cfg.validate();
  const double t_start = now_s();
  SolveReport rep;
  rep.estimate = initialize(fop, ds, w, cfg.seed, &rep.notes);
  if (cfg.method == Method::FullSpaceSmoothed)
    rep.notes.push_back(
        "baseline: full-space smoothed solve in place of a third-party NLP solver");

  PenaltyState ps;
  ps.c = cfg.c1;
  ps.rho = cfg.rho;
  ps.gamma = cfg.gamma;
  const double eps = cfg.eps_penalty * ds.size();

  std::vector<double> val_hist;
  rep.termination = Termination::MaxOuter;

  auto out_of_time = [&]() { return now_s() - t_start > cfg.time_budget_s; };

  for (int k = 1; k <= cfg.max_outer; ++k) {
    auto [P, p_l1] = penalty_norm(residuals(fop, ds, rep.estimate));
    double obj = penalized_objective(fop, ds, w, rep.estimate, ps);

    TraceEntry te;
    te.k = k;
    te.c = ps.c;
    te.penalty_l1 = p_l1;
    te.objective = obj;
    if (cfg.validation_set)
      te.val_error = validation_error(fop, rep.estimate, *cfg.validation_set);
    te.wall_s = now_s() - t_start;
    rep.trace.push_back(te);

    if (p_l1 <= eps) {
      rep.termination = Termination::PenaltyFeasible;
      break;
    }
    if (out_of_time()) {
      rep.termination = Termination::Timeout;
      break;
    }

    if (cfg.validation_set) {
      val_hist.push_back(te.val_error);
      if (static_cast<int>(val_hist.size()) > cfg.stall_window) {
        bool stalled = true;
        const double base = std::abs(val_hist.back()) + 1e-12;
        for (int q = 1; q <= cfg.stall_window; ++q) {
          double prev = val_hist[val_hist.size() - 1 - q];
          if (std::abs(val_hist.back() - prev) >= cfg.stall_rel_tol * base)
            stalled = false;
        }
        if (stalled) {
          rep.termination = Termination::ValidationStall;
          break;
        }
      }
    }

    // inner solve at the current c
    if (cfg.method == Method::BCD) {
      double prev = obj;
      double prev_p = p_l1;
      for (int pass = 0; pass < cfg.max_bcd_passes; ++pass) {
        auto [next, obj_after] = bcd_pass(fop, ds, w, rep.estimate, ps, &rep.notes);
        rep.estimate = std::move(next);
        if (prev - obj_after <= 1e-8 * (std::abs(prev) + 1.0)) break;
        // the objective scales with c, so also stop once the penalty itself
        // stops moving in relative terms
        double p_now = penalty_norm(residuals(fop, ds, rep.estimate)).second;
        if (p_now > eps && p_now >= prev_p * (1.0 - 1e-3)) break;
        prev = obj_after;
        prev_p = p_now;
        if (out_of_time()) break;
      }
    } else {
      SmoothProgram sp = full_space_program(fop, ds, w, rep.estimate, ps);
      try {
        SmoothResult sr = solve_smooth(sp, 1e-8, 3000);
        Vec z = sr.x.cwiseMax(sp.lb).cwiseMin(sp.ub);
        IopEstimate cand = rep.estimate;
        unpack_full(fop, z, cand);
        double before = penalized_objective(fop, ds, w, rep.estimate, ps);
        double after = penalized_objective(fop, ds, w, cand, ps);
        if (after <= before + kMonotoneTol) rep.estimate = std::move(cand);
      } catch (const std::exception& e) {
        rep.notes.push_back(std::string("full-space solve failed: ") + e.what());
      }
    }

    double iter_norm = pack_full(fop, rep.estimate).lpNorm<Eigen::Infinity>();
    if (!std::isfinite(iter_norm) || iter_norm > 1e9) {
      rep.notes.push_back("iterate norm exceeded 1e9; aborting");
      rep.termination = Termination::Diverged;
      break;
    }

    ps.c *= (1.0 + ps.rho);
  }

  rep.wall_s = now_s() - t_start;
  return rep;
}

std::vector<Vec> predict(const ParametricFop& fop, const Vec& theta,
                         const Vec& omega, const std::vector<Vec>& test_u,
                         int* failures) {
  if (!fop.forward_solve) throw InvalidModel("predict: no forward solver registered");
  if (!fop.theta_domain.contains(theta, 1e-9) ||
      !fop.omega_domain.contains(omega, 1e-9))
    throw InvalidModel("predict: parameters outside their domains");
  std::vector<Vec> out;
  out.reserve(test_u.size());
  int fail = 0;
  for (const Vec& u : test_u) {
    try {
      out.push_back(fop.forward_solve(u, theta, omega));
    } catch (const std::exception&) {
      ++fail;
      out.push_back(fop.x_bounds.project(Vec::Zero(fop.n)));
    }
  }
  if (failures) *failures = fail;
  return out;
}

}  // namespace iopt
