#include "iopt/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace iopt {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from_json(const nlohmann::json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}
}  // namespace

BoxDomain::BoxDomain(Vec lo, Vec up) : lower(std::move(lo)), upper(std::move(up)) {
  if (lower.size() != upper.size())
    throw DimensionMismatch("BoxDomain: lower/upper size mismatch");
  for (Eigen::Index i = 0; i < lower.size(); ++i)
    if (lower[i] > upper[i]) throw InvalidModel("BoxDomain: lower > upper");
}

BoxDomain BoxDomain::uniform(int dim, double lo, double up) {
  return BoxDomain(Vec::Constant(dim, lo), Vec::Constant(dim, up));
}

BoxDomain BoxDomain::free(int dim) {
  return BoxDomain(Vec::Constant(dim, -kInf), Vec::Constant(dim, kInf));
}

BoxDomain BoxDomain::fixed_value(const Vec& v) { return BoxDomain(v, v); }

bool BoxDomain::contains(const Vec& v, double tol) const {
  if (v.size() != lower.size()) return false;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] < lower[i] - tol || v[i] > upper[i] + tol) return false;
  return true;
}

Vec BoxDomain::project(const Vec& v) const {
  return v.cwiseMax(lower).cwiseMin(upper);
}

Vec BoxDomain::midpoint() const {
  Vec mid(dim());
  for (int i = 0; i < dim(); ++i) {
    if (std::isfinite(lower[i]) && std::isfinite(upper[i]))
      mid[i] = 0.5 * (lower[i] + upper[i]);
    else if (std::isfinite(lower[i]))
      mid[i] = lower[i] + 1.0;
    else if (std::isfinite(upper[i]))
      mid[i] = upper[i] - 1.0;
    else
      mid[i] = 0.0;
  }
  return mid;
}

bool BoxDomain::bounded() const {
  for (int i = 0; i < dim(); ++i)
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i])) return false;
  return true;
}

void ParametricFop::validate_dims() const {
  if (n <= 0) throw InvalidModel("ParametricFop: n must be positive");
  if (m < 0 || p < 0) throw InvalidModel("ParametricFop: negative constraint count");
  if (theta_domain.dim() != dim_theta) throw DimensionMismatch("theta_domain dim");
  if (omega_domain.dim() != dim_omega) throw DimensionMismatch("omega_domain dim");
  if (static_cast<int>(g_hard.size()) != m)
    throw DimensionMismatch("g_hard size must equal m");
  if (x_bounds.dim() != n) throw DimensionMismatch("x_bounds dim must equal n");
  if (!theta_domain.bounded())
    throw InvalidModel("theta_domain must be a bounded box");
  if (!omega_domain.bounded())
    throw InvalidModel("omega_domain must be a bounded box");
  // the all-zero theta is a trivial solution and must be excluded
  Vec zero = Vec::Zero(dim_theta);
  if (dim_theta > 0 && theta_domain.contains(zero))
    throw InvalidModel("theta_domain must exclude theta = 0");
}

void Dataset::validate() const {
  if (observations.empty()) throw InvalidModel("Dataset: at least one observation required");
  for (const auto& obs : observations) {
    if (obs.u.size() != dim_u) throw DimensionMismatch("Dataset: u dimension mismatch");
    if (obs.x.size() != n) throw DimensionMismatch("Dataset: x dimension mismatch");
  }
}

std::string Dataset::to_json() const {
  nlohmann::json j;
  j["dim_u"] = dim_u;
  j["n"] = n;
  j["observations"] = nlohmann::json::array();
  for (const auto& obs : observations) {
    j["observations"].push_back({{"u", vec_to_json(obs.u)}, {"x", vec_to_json(obs.x)}});
  }
  if (meta) {
    j["meta"] = {{"theta", vec_to_json(meta->theta)},
                 {"omega", vec_to_json(meta->omega)},
                 {"sigma", meta->sigma},
                 {"seed", meta->seed}};
  }
  if (!case_name.empty()) j["case"] = case_name;
  if (!realized_scenario.empty()) j["realized_scenario"] = realized_scenario;
  // nlohmann serializes doubles with shortest round-trip representation,
  // so the text form is bit-faithful
  return j.dump();
}

Dataset Dataset::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Dataset ds;
  ds.dim_u = j.at("dim_u").get<int>();
  ds.n = j.at("n").get<int>();
  for (const auto& o : j.at("observations")) {
    ds.observations.push_back({vec_from_json(o.at("u")), vec_from_json(o.at("x"))});
  }
  if (j.contains("meta")) {
    TrueModel tm;
    tm.theta = vec_from_json(j["meta"].at("theta"));
    tm.omega = vec_from_json(j["meta"].at("omega"));
    tm.sigma = j["meta"].at("sigma").get<double>();
    tm.seed = j["meta"].at("seed").get<std::uint64_t>();
    ds.meta = tm;
  }
  if (j.contains("case")) ds.case_name = j["case"].get<std::string>();
  if (j.contains("realized_scenario"))
    ds.realized_scenario = j["realized_scenario"].get<std::vector<int>>();
  ds.validate();
  return ds;
}

void Dataset::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("Dataset::save: cannot open " + path);
  out << to_json();
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("Dataset::load: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

WeightMatrix WeightMatrix::identity(int n) { return WeightMatrix{Vec::Ones(n)}; }

void WeightMatrix::validate() const {
  if (diagonal.size() == 0) throw InvalidModel("WeightMatrix: empty diagonal");
  if ((diagonal.array() < 0.0).any())
    throw InvalidModel("WeightMatrix: negative weight");
  if ((diagonal.array() > 0.0).count() == 0)
    throw InvalidModel("WeightMatrix: all weights zero");
}

void IopEstimate::validate_against(const ParametricFop& fop, const Dataset& ds) const {
  const int ni = ds.size();
  if (theta.size() != fop.dim_theta || omega.size() != fop.dim_omega)
    throw DimensionMismatch("IopEstimate: parameter dims");
  if (x_hat.rows() != ni || x_hat.cols() != fop.n)
    throw DimensionMismatch("IopEstimate: x_hat shape");
  if (lambda.rows() != ni || lambda.cols() != fop.m)
    throw DimensionMismatch("IopEstimate: lambda shape");
  if (mu.rows() != ni || mu.cols() != fop.p)
    throw DimensionMismatch("IopEstimate: mu shape");
  if ((lambda.array() < 0.0).any())
    throw InvalidModel("IopEstimate: lambda must be nonnegative");
}

bool ValidationReport::all_passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

const ValidationCheck* ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

namespace {

// relative error with absolute floor
double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

}  // namespace

ValidationReport validate_model(const ParametricFop& fop,
                                const std::vector<ProbePoint>& probes) {
  ValidationReport rep;
  ValidationCheck grad{"grad_f_fd", true, 0.0, ""};
  ValidationCheck jg{"jac_g_fd", true, 0.0, ""};
  ValidationCheck jh{"jac_h_fd", true, 0.0, ""};
  ValidationCheck fcvx{"f_midpoint_convex", true, 0.0, ""};
  ValidationCheck gcvx{"g_midpoint_convex", true, 0.0, ""};
  ValidationCheck haff{"h_affine", true, 0.0, ""};

  const double fd_tol = 1e-5;
  const double aff_tol = 1e-10;

  for (const auto& pp : probes) {
    if (pp.x.size() != fop.n || pp.u.size() != fop.dim_u ||
        pp.theta.size() != fop.dim_theta || pp.omega.size() != fop.dim_omega)
      throw DimensionMismatch("validate_model: probe point dims");

    // shape checks on callback outputs
    if (fop.grad_f_x(pp.x, pp.u, pp.theta).size() != fop.n)
      throw DimensionMismatch("grad_f_x output size != n");
    if (fop.m > 0) {
      if (fop.eval_g(pp.x, pp.u, pp.omega).size() != fop.m)
        throw DimensionMismatch("eval_g output size != m");
      Mat J = fop.jac_g_x(pp.x, pp.u, pp.omega);
      if (J.rows() != fop.m || J.cols() != fop.n)
        throw DimensionMismatch("jac_g_x output shape != m x n");
    }
    if (fop.p > 0) {
      if (fop.eval_h(pp.x, pp.u, pp.omega).size() != fop.p)
        throw DimensionMismatch("eval_h output size != p");
      Mat J = fop.jac_h_x(pp.x, pp.u, pp.omega);
      if (J.rows() != fop.p || J.cols() != fop.n)
        throw DimensionMismatch("jac_h_x output shape != p x n");
    }

    // central finite differences of f vs grad_f_x
    Vec gfd(fop.n);
    Vec ga = fop.grad_f_x(pp.x, pp.u, pp.theta);
    for (int j = 0; j < fop.n; ++j) {
      double step = 1e-6 * std::max(1.0, std::abs(pp.x[j]));
      Vec xp = pp.x, xm = pp.x;
      xp[j] += step;
      xm[j] -= step;
      gfd[j] = (fop.eval_f(xp, pp.u, pp.theta) - fop.eval_f(xm, pp.u, pp.theta)) / (2 * step);
    }
    for (int j = 0; j < fop.n; ++j) {
      double e = rel_err(ga[j], gfd[j]);
      grad.worst = std::max(grad.worst, e);
      if (e > fd_tol) grad.passed = false;
    }

    if (fop.m > 0) {
      Mat Ja = fop.jac_g_x(pp.x, pp.u, pp.omega);
      for (int j = 0; j < fop.n; ++j) {
        double step = 1e-6 * std::max(1.0, std::abs(pp.x[j]));
        Vec xp = pp.x, xm = pp.x;
        xp[j] += step;
        xm[j] -= step;
        Vec col = (fop.eval_g(xp, pp.u, pp.omega) - fop.eval_g(xm, pp.u, pp.omega)) / (2 * step);
        for (int k = 0; k < fop.m; ++k) {
          double e = rel_err(Ja(k, j), col[k]);
          jg.worst = std::max(jg.worst, e);
          if (e > fd_tol) jg.passed = false;
        }
      }
    }
    if (fop.p > 0) {
      Mat Ja = fop.jac_h_x(pp.x, pp.u, pp.omega);
      for (int j = 0; j < fop.n; ++j) {
        double step = 1e-6 * std::max(1.0, std::abs(pp.x[j]));
        Vec xp = pp.x, xm = pp.x;
        xp[j] += step;
        xm[j] -= step;
        Vec col = (fop.eval_h(xp, pp.u, pp.omega) - fop.eval_h(xm, pp.u, pp.omega)) / (2 * step);
        for (int k = 0; k < fop.p; ++k) {
          double e = rel_err(Ja(k, j), col[k]);
          jh.worst = std::max(jh.worst, e);
          if (e > fd_tol) jh.passed = false;
        }
      }
    }
  }

  // midpoint convexity of f and g, affinity of h: random pairs drawn from
  // consecutive probe points
  for (std::size_t a = 0; a + 1 < probes.size(); ++a) {
    const auto& p1 = probes[a];
    const auto& p2 = probes[a + 1];
    Vec xm = 0.5 * (p1.x + p2.x);
    double fm = fop.eval_f(xm, p1.u, p1.theta);
    double favg = 0.5 * (fop.eval_f(p1.x, p1.u, p1.theta) + fop.eval_f(p2.x, p1.u, p1.theta));
    double viol = fm - favg;
    fcvx.worst = std::max(fcvx.worst, viol);
    if (viol > 1e-9 * std::max(1.0, std::abs(favg))) fcvx.passed = false;

    if (fop.m > 0) {
      Vec gm = fop.eval_g(xm, p1.u, p1.omega);
      Vec gavg = 0.5 * (fop.eval_g(p1.x, p1.u, p1.omega) + fop.eval_g(p2.x, p1.u, p1.omega));
      for (int k = 0; k < fop.m; ++k) {
        double v = gm[k] - gavg[k];
        gcvx.worst = std::max(gcvx.worst, v);
        if (v > 1e-9 * std::max(1.0, std::abs(gavg[k]))) gcvx.passed = false;
      }
    }
    if (fop.p > 0) {
      Vec hm = fop.eval_h(xm, p1.u, p1.omega);
      Vec havg = 0.5 * (fop.eval_h(p1.x, p1.u, p1.omega) + fop.eval_h(p2.x, p1.u, p1.omega));
      double v = (hm - havg).cwiseAbs().maxCoeff();
      haff.worst = std::max(haff.worst, v);
      if (v > aff_tol * std::max(1.0, havg.cwiseAbs().maxCoeff())) haff.passed = false;
    }
  }

  if (probes.size() < 2) {
    fcvx.detail = gcvx.detail = haff.detail = "skipped: fewer than two probes";
  }

  rep.checks = {grad, jg, jh, fcvx, gcvx, haff};
  return rep;
}

Vec apply_observation_mask(const WeightMatrix& w, const Vec& full_x,
                           const Vec& observed_x) {
  if (w.dim() != full_x.size() || w.dim() != observed_x.size())
    throw DimensionMismatch("apply_observation_mask: dims");
  Vec out = full_x;
  for (int i = 0; i < w.dim(); ++i)
    if (w.diagonal[i] > 0.0) out[i] = observed_x[i];
  return out;
}

}  // namespace iopt
