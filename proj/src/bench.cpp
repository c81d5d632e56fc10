#include "iopt/bench.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "iopt/rng.hpp"

namespace iopt {

double metric_dv(const TestSet& test, const std::vector<Vec>& predictions) {
  if (test.points.size() != predictions.size())
    throw LengthMismatch("metric_dv: test/prediction length mismatch");
  double total = 0.0;
  for (std::size_t v = 0; v < predictions.size(); ++v) {
    if (test.points[v].x.size() != predictions[v].size())
      throw LengthMismatch("metric_dv: prediction dimension mismatch");
    total += (test.points[v].x - predictions[v]).lpNorm<1>();
  }
  return total;
}

double metric_param_ramp(const RampModel& truth, const RampModel& est) {
  if (truth.B != est.B || truth.G != est.G)
    throw DimensionMismatch("metric_param_ramp: shape mismatch");
  double err = 0.0;
  for (int b = 0; b < truth.B; ++b)
    for (int g = 0; g < truth.G; ++g)
      err += std::abs(truth.p(b, g) / truth.m[b] - est.p(b, g) / est.m[b]);
  return err;
}

RampModel regression_baseline_ramp(const Dataset& ds) {
  const int G = ds.dim_u;
  if (G < 1 || ds.n % G != 0)
    throw DimensionMismatch("regression_baseline_ramp: not a ramp dataset");
  const int B = ds.n / G;
  const int ni = ds.size();
  if (ni < G) throw RankDeficient("regression_baseline_ramp: |I| < G");

  RampModel md;
  md.B = B;
  md.G = G;
  md.p = Mat(B, G);
  md.m = Vec::Ones(B);
  md.c = Vec::Ones(G);
  for (int b = 0; b < B; ++b) {
    Mat A(ni, G);
    for (int i = 0; i < ni; ++i)
      for (int g = 0; g < G; ++g) {
        double x = ds.observations[i].x[b * G + g];
        A(i, g) = x * x;
      }
    Vec beta = A.colPivHouseholderQr().solve(Vec::Ones(ni));
    if (A.colPivHouseholderQr().rank() < G)
      throw RankDeficient("regression_baseline_ramp: rank-deficient buyer block");
    md.p.row(b) = beta.cwiseMax(0.0).transpose();
  }
  return md;
}

void ExperimentSpec::validate() const {
  if (case_name != "waterfill" && case_name != "ramp" && case_name != "risk")
    throw InvalidModel("ExperimentSpec: unknown case " + case_name);
  if (n_obs_list.empty() || seeds.empty())
    throw InvalidModel("ExperimentSpec: sizes and seeds must be nonempty");
  if (methods.empty()) throw InvalidModel("ExperimentSpec: no methods");
  if (out_dir.empty()) throw InvalidModel("ExperimentSpec: no output directory");
  for (const auto& [name, cfg] : methods) cfg.validate();
  if (case_name == "waterfill" && D < 1) throw InvalidModel("ExperimentSpec: D >= 1");
  if (case_name == "ramp" && (B < 1 || G < 1))
    throw InvalidModel("ExperimentSpec: B, G >= 1");
  if (case_name == "risk" && risk_config.empty())
    throw InvalidModel("ExperimentSpec: risk case needs risk_config");
}

ExperimentSpec ExperimentSpec::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ExperimentSpec spec;
  spec.case_name = j.at("case").get<std::string>();
  if (j.contains("D")) spec.D = j["D"].get<int>();
  if (j.contains("B")) spec.B = j["B"].get<int>();
  if (j.contains("G")) spec.G = j["G"].get<int>();
  if (j.contains("risk_config")) spec.risk_config = j["risk_config"].get<std::string>();
  if (j.contains("sigma")) spec.sigma = j["sigma"].get<double>();
  spec.n_obs_list = j.at("n_obs").get<std::vector<int>>();
  spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (auto& [name, sub] : j.at("methods").items())
    spec.methods[name] = EstimatorConfig::from_json(sub.dump());
  spec.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("time_limit_s")) spec.time_limit_s = j["time_limit_s"].get<double>();
  spec.validate();
  return spec;
}

ExperimentSpec ExperimentSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ExperimentSpec::load: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

namespace {

std::string csv_escape(const std::string& s) { return s; }  // fields hold no commas

void append_row(std::ofstream& out, const ResultRow& r) {
  out << csv_escape(r.case_name) << ',' << csv_escape(r.method) << ','
      << csv_escape(r.size) << ',' << r.sigma << ',' << r.n_obs << ',' << r.seed
      << ',' << r.d_v << ',' << r.param_err << ',' << r.wall_s << ','
      << csv_escape(r.termination) << '\n';
  out.flush();
}

struct CellOutcome {
  double d_v = 0.0;
  double param_err = 0.0;
  std::string termination;
  double wall_s = 0.0;
};

// one estimation run on the waterfill case
CellOutcome run_waterfill(const ExperimentSpec& spec, int n_obs,
                          std::uint64_t cell_seed, const EstimatorConfig& cfg0) {
  auto [ds, test] = gen_waterfill_dataset(spec.D, n_obs, spec.sigma, cell_seed);
  ParametricFop fop = make_waterfill_fop(spec.D);
  WeightMatrix w = WeightMatrix::identity(fop.n);
  EstimatorConfig cfg = cfg0;
  cfg.seed = cell_seed;
  cfg.validation_set = test;
  SolveReport rep = solve(fop, ds, w, cfg);

  std::vector<Vec> us;
  for (const auto& pt : test.points) us.push_back(pt.u);
  std::vector<Vec> preds = predict(fop, rep.estimate.theta, rep.estimate.omega, us);

  CellOutcome out;
  out.d_v = metric_dv(test, preds);
  const TrueModel& tm = *ds.meta;
  Vec th_true = tm.theta / tm.theta.lpNorm<1>();
  Vec th_est = rep.estimate.theta / rep.estimate.theta.lpNorm<1>();
  Vec om_true = tm.omega / tm.omega[spec.D];
  Vec om_est = rep.estimate.omega / rep.estimate.omega[spec.D];
  out.param_err = (th_true - th_est).lpNorm<1>() + (om_true - om_est).lpNorm<1>();
  out.termination = to_string(rep.termination);
  out.wall_s = rep.wall_s;
  return out;
}

TestSet ramp_test_set(const RampModel& truth, int n_points, std::uint64_t seed) {
  Rng rng(seed);
  TestSet ts;
  for (int v = 0; v < n_points; ++v) {
    Observation pt;
    pt.u = Vec(truth.G);
    for (int g = 0; g < truth.G; ++g)
      pt.u[g] = truth.B * rng.uniform(0.1, 1.5);  // match gen_ramp_dataset
    RampModel inst = truth;
    inst.c = pt.u;
    Mat x = ramp_solve(inst);
    pt.x = Vec(truth.B * truth.G);
    for (int b = 0; b < truth.B; ++b)
      for (int g = 0; g < truth.G; ++g) pt.x[truth.idx(b, g)] = x(b, g);
    ts.points.push_back(std::move(pt));
  }
  return ts;
}

CellOutcome run_ramp(const ExperimentSpec& spec, int n_obs,
                     std::uint64_t cell_seed, const EstimatorConfig& cfg0,
                     const std::string& method_label) {
  auto [ds, truth] = gen_ramp_dataset(spec.B, spec.G, n_obs, spec.sigma, cell_seed);
  TestSet test = ramp_test_set(truth, 20, derive_seed(cell_seed, "ramp-test"));

  CellOutcome out;
  RampModel est_model;
  est_model.B = spec.B;
  est_model.G = spec.G;
  est_model.m = Vec::Ones(spec.B);
  est_model.c = Vec::Ones(spec.G);
  est_model.p = Mat(spec.B, spec.G);

  if (method_label == "Regression") {
    auto t0 = std::chrono::steady_clock::now();
    RampModel reg = regression_baseline_ramp(ds);
    out.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    est_model = reg;
    out.termination = "Regression";
    out.d_v = std::numeric_limits<double>::quiet_NaN();
  } else {
    ParametricFop fop = make_ramp_fop(spec.B, spec.G);
    WeightMatrix w = WeightMatrix::identity(fop.n);
    EstimatorConfig cfg = cfg0;
    cfg.seed = cell_seed;
    cfg.validation_set = test;
    SolveReport rep = solve(fop, ds, w, cfg);
    for (int b = 0; b < spec.B; ++b)
      for (int g = 0; g < spec.G; ++g)
        est_model.p(b, g) = rep.estimate.omega[est_model.idx(b, g)];
    out.termination = to_string(rep.termination);
    out.wall_s = rep.wall_s;
    std::vector<Vec> us;
    for (const auto& pt : test.points) us.push_back(pt.u);
    std::vector<Vec> preds =
        predict(fop, rep.estimate.theta, rep.estimate.omega, us);
    out.d_v = metric_dv(test, preds);
  }

  RampModel truth_norm = truth;
  for (int b = 0; b < spec.B; ++b) {
    truth_norm.p.row(b) /= truth.m[b];
    truth_norm.m[b] = 1.0;
  }
  out.param_err = metric_param_ramp(truth_norm, est_model);
  if (!std::isfinite(out.d_v)) out.d_v = -1.0;  // regression has no predictor
  return out;
}

CellOutcome run_risk(const ExperimentSpec&, int n_obs,
                     std::uint64_t cell_seed, const EstimatorConfig& cfg0,
                     const RiskModel& base) {
  Dataset ds = gen_risk_dataset(base, n_obs, 40, cell_seed);
  ParametricFop fop = make_risk_fop(base);

  // all observations share the realized scenario's weighting only when the
  // realized index is common; otherwise intersect by averaging the masks
  WeightMatrix w;
  w.diagonal = Vec::Zero(fop.n);
  for (int i = 0; i < ds.size(); ++i)
    w.diagonal += risk_observation_weights(base, ds.realized_scenario[i]).diagonal;
  w.diagonal = (w.diagonal.array() > 0.0).cast<double>();

  EstimatorConfig cfg = cfg0;
  cfg.seed = cell_seed;
  SolveReport rep = solve(fop, ds, w, cfg);

  CellOutcome out;
  out.termination = to_string(rep.termination);
  out.wall_s = rep.wall_s;
  double lam_true = base.lambda_risk, lam_est = rep.estimate.theta[0];
  double imin_true = base.i_min, imin_est = rep.estimate.omega[0];
  out.param_err = std::abs(lam_est - lam_true) / std::max(1e-12, std::abs(lam_true)) +
                  std::abs(imin_est - imin_true) / std::max(1e-12, std::abs(imin_true));

  // first-stage decision error on held-out scenario sets
  Dataset held = gen_risk_dataset(base, 20, 40, derive_seed(cell_seed, "risk-test"));
  double num = 0.0, den = 0.0;
  for (const auto& obs : held.observations) {
    Vec z_true = obs.x;
    Vec z_est = fop.forward_solve(obs.u, rep.estimate.theta, rep.estimate.omega);
    num += (z_true.head(base.T) - z_est.head(base.T)).lpNorm<1>();
    den += z_true.head(base.T).lpNorm<1>();
  }
  out.d_v = num / std::max(1e-12, den);
  return out;
}

}  // namespace

void write_rows_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_rows_csv: cannot open " + path);
  out << "case,method,size,sigma,n_obs,seed,d_v,param_err,wall_s,termination\n";
  for (const auto& r : rows) append_row(out, r);
}

void write_summary_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  // cell = (case, method, size, sigma, n_obs)
  std::map<std::string, std::vector<const ResultRow*>> cells;
  for (const auto& r : rows) {
    std::ostringstream key;
    key << r.case_name << ',' << r.method << ',' << r.size << ',' << r.sigma
        << ',' << r.n_obs;
    cells[key.str()].push_back(&r);
  }
  auto stats = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double med = v.size() % 2 == 1
                     ? v[v.size() / 2]
                     : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    return std::array<double, 3>{med, v.front(), v.back()};
  };
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_summary_csv: cannot open " + path);
  out << "case,method,size,sigma,n_obs,"
         "d_v_median,d_v_min,d_v_max,"
         "param_err_median,param_err_min,param_err_max,"
         "wall_s_median,wall_s_min,wall_s_max\n";
  for (const auto& [key, cell] : cells) {
    std::vector<double> dv, pe, ws;
    for (const ResultRow* r : cell) {
      dv.push_back(r->d_v);
      pe.push_back(r->param_err);
      ws.push_back(r->wall_s);
    }
    auto a = stats(dv), b = stats(pe), c = stats(ws);
    out << key << ',' << a[0] << ',' << a[1] << ',' << a[2] << ',' << b[0] << ','
        << b[1] << ',' << b[2] << ',' << c[0] << ',' << c[1] << ',' << c[2]
        << '\n';
  }
}

std::vector<ResultRow> run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  std::filesystem::create_directories(spec.out_dir);
  std::ofstream rows_out(spec.out_dir + "/rows.csv");
  if (!rows_out)
    throw std::runtime_error("run_experiment: cannot open rows.csv in " + spec.out_dir);
  rows_out << "case,method,size,sigma,n_obs,seed,d_v,param_err,wall_s,termination\n";

  RiskModel risk_base;
  if (spec.case_name == "risk") risk_base = RiskModel::load(spec.risk_config);

  std::string size;
  if (spec.case_name == "waterfill")
    size = "D=" + std::to_string(spec.D);
  else if (spec.case_name == "ramp")
    size = "B=" + std::to_string(spec.B) + ";G=" + std::to_string(spec.G);
  else
    size = "T=" + std::to_string(risk_base.T) + ";S=" + std::to_string(risk_base.S);

  std::vector<ResultRow> rows;
  for (int n_obs : spec.n_obs_list) {
    for (std::uint64_t seed : spec.seeds) {
      // independent, reproducible per-cell stream
      std::ostringstream label;
      label << spec.case_name << '|' << size << '|' << spec.sigma << '|' << n_obs;
      std::uint64_t cell_seed = derive_seed(seed, label.str());

      for (const auto& [method, cfg] : spec.methods) {
        ResultRow row;
        row.case_name = spec.case_name;
        row.method = method;
        row.size = size;
        row.sigma = spec.sigma;
        row.n_obs = n_obs;
        row.seed = seed;
        try {
          CellOutcome oc;
          if (spec.case_name == "waterfill")
            oc = run_waterfill(spec, n_obs, cell_seed, cfg);
          else if (spec.case_name == "ramp")
            oc = run_ramp(spec, n_obs, cell_seed, cfg, method);
          else
            oc = run_risk(spec, n_obs, cell_seed, cfg, risk_base);
          row.d_v = oc.d_v;
          row.param_err = oc.param_err;
          row.wall_s = oc.wall_s;
          row.termination =
              oc.wall_s > spec.time_limit_s ? "Timeout" : oc.termination;
        } catch (const std::exception& e) {
          row.d_v = row.param_err = row.wall_s = -1.0;
          row.termination = std::string("Error:") + e.what();
        }
        append_row(rows_out, row);
        rows.push_back(std::move(row));
      }
    }
  }
  write_summary_csv(spec.out_dir + "/summary.csv", rows);
  return rows;
}

}  // namespace iopt
