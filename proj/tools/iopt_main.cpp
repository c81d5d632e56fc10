// Command-line front end: dataset generation, estimation, evaluation, and
// experiment sweeps for the inverse-optimization library.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "iopt/bench.hpp"
#include "iopt/estimator.hpp"
#include "iopt/fops.hpp"

namespace {

using iopt::Dataset;
using iopt::ParametricFop;
using iopt::RiskModel;
using iopt::TestSet;
using iopt::Vec;

nlohmann::json vec_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from(const nlohmann::json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

// test sets reuse the dataset serialization (noiseless observations)
Dataset testset_as_dataset(const TestSet& ts, int dim_u, int n) {
  Dataset ds;
  ds.dim_u = dim_u;
  ds.n = n;
  ds.observations = ts.points;
  return ds;
}

TestSet testset_from_dataset(const Dataset& ds) {
  TestSet ts;
  ts.points = ds.observations;
  return ts;
}

ParametricFop fop_for_dataset(const Dataset& ds, const std::string& risk_config) {
  if (ds.case_name == "waterfill") return iopt::make_waterfill_fop(ds.n);
  if (ds.case_name == "ramp") return iopt::make_ramp_fop(ds.n / ds.dim_u, ds.dim_u);
  if (ds.case_name == "risk") {
    if (risk_config.empty())
      throw std::runtime_error("risk datasets need --risk-config");
    return iopt::make_risk_fop(RiskModel::load(risk_config));
  }
  throw std::runtime_error("dataset carries no recognized case tag");
}

iopt::WeightMatrix weights_for_dataset(const Dataset& ds,
                                       const std::string& risk_config) {
  if (ds.case_name == "risk" && !ds.realized_scenario.empty()) {
    RiskModel base = RiskModel::load(risk_config);
    iopt::WeightMatrix w;
    w.diagonal = Vec::Zero(ds.n);
    for (int i = 0; i < ds.size(); ++i)
      w.diagonal +=
          iopt::risk_observation_weights(base, ds.realized_scenario[i]).diagonal;
    w.diagonal = (w.diagonal.array() > 0.0).cast<double>();
    return w;
  }
  return iopt::WeightMatrix::identity(ds.n);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << text;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"inverse optimization of convex forward problems"};
  app.require_subcommand(1);

  // --- generate -------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  std::string g_case, g_out, g_test_out, g_risk_config;
  int g_D = 10, g_B = 20, g_G = 5, g_nobs = 50, g_pool = 40;
  double g_sigma = 0.0;
  std::uint64_t g_seed = 1;
  gen->add_option("--case", g_case, "waterfill | ramp | risk")->required();
  gen->add_option("--out", g_out, "dataset output path")->required();
  gen->add_option("--test-out", g_test_out, "held-out test set output path");
  gen->add_option("--D", g_D, "waterfill dimension");
  gen->add_option("--B", g_B, "ramp buyers");
  gen->add_option("--G", g_G, "ramp goods");
  gen->add_option("--n-obs", g_nobs, "number of observations");
  gen->add_option("--sigma", g_sigma, "observation noise");
  gen->add_option("--seed", g_seed, "random seed");
  gen->add_option("--risk-config", g_risk_config, "RiskModel JSON (risk case)");
  gen->add_option("--pool", g_pool, "spot-price pool size (risk case)");

  // --- estimate ---------------------------------------------------------------
  auto* est = app.add_subcommand("estimate", "estimate parameters from a dataset");
  std::string e_data, e_config, e_out, e_risk_config;
  est->add_option("--data", e_data, "dataset path")->required();
  est->add_option("--config", e_config, "estimator config JSON")->required();
  est->add_option("--out", e_out, "estimate output path")->required();
  est->add_option("--risk-config", e_risk_config, "RiskModel JSON (risk case)");

  // --- evaluate ---------------------------------------------------------------
  auto* eval = app.add_subcommand("evaluate", "prediction error on a test set");
  std::string v_est, v_test, v_risk_config, v_out;
  eval->add_option("--estimate", v_est, "estimate JSON path")->required();
  eval->add_option("--test", v_test, "test set path")->required();
  eval->add_option("--risk-config", v_risk_config, "RiskModel JSON (risk case)");
  eval->add_option("--out", v_out, "optional metrics output path");

  // --- bench ------------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "run an experiment sweep");
  std::string b_spec;
  bench->add_option("--spec", b_spec, "experiment spec JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (g_case == "waterfill") {
        auto [ds, ts] = iopt::gen_waterfill_dataset(g_D, g_nobs, g_sigma, g_seed);
        ds.save(g_out);
        if (!g_test_out.empty())
          testset_as_dataset(ts, ds.dim_u, ds.n).save(g_test_out);
      } else if (g_case == "ramp") {
        auto [ds, truth] = iopt::gen_ramp_dataset(g_B, g_G, g_nobs, g_sigma, g_seed);
        (void)truth;
        ds.save(g_out);
      } else if (g_case == "risk") {
        RiskModel base = RiskModel::load(g_risk_config);
        Dataset ds = iopt::gen_risk_dataset(base, g_nobs, g_pool, g_seed);
        ds.save(g_out);
      } else {
        throw std::runtime_error("unknown case: " + g_case);
      }
      std::cout << "wrote " << g_out << "\n";
    } else if (est->parsed()) {
      Dataset ds = Dataset::load(e_data);
      iopt::EstimatorConfig cfg = iopt::EstimatorConfig::load(e_config);
      ParametricFop fop = fop_for_dataset(ds, e_risk_config);
      iopt::WeightMatrix w = weights_for_dataset(ds, e_risk_config);
      iopt::SolveReport rep = iopt::solve(fop, ds, w, cfg);

      nlohmann::json j;
      j["case"] = ds.case_name;
      j["theta"] = vec_json(rep.estimate.theta);
      j["omega"] = vec_json(rep.estimate.omega);
      j["termination"] = iopt::to_string(rep.termination);
      j["wall_s"] = rep.wall_s;
      j["notes"] = rep.notes;
      nlohmann::json trace = nlohmann::json::array();
      for (const auto& te : rep.trace)
        trace.push_back({{"k", te.k},
                         {"c", {te.c[0], te.c[1], te.c[2], te.c[3]}},
                         {"penalty_l1", te.penalty_l1},
                         {"objective", te.objective},
                         {"val_error", std::isfinite(te.val_error) ? te.val_error : -1.0},
                         {"wall_s", te.wall_s}});
      j["trace"] = trace;
      write_file(e_out, j.dump(2));
      std::cout << "termination=" << iopt::to_string(rep.termination)
                << " wall_s=" << rep.wall_s << "\n";
    } else if (eval->parsed()) {
      nlohmann::json j = nlohmann::json::parse(read_file(v_est));
      Dataset test_ds = Dataset::load(v_test);
      test_ds.case_name = j.at("case").get<std::string>();
      ParametricFop fop = fop_for_dataset(test_ds, v_risk_config);
      TestSet ts = testset_from_dataset(test_ds);
      std::vector<Vec> us;
      for (const auto& pt : ts.points) us.push_back(pt.u);
      int failures = 0;
      std::vector<Vec> preds = iopt::predict(fop, vec_from(j.at("theta")),
                                             vec_from(j.at("omega")), us, &failures);
      double dv = iopt::metric_dv(ts, preds);
      std::cout << "d_v=" << dv << " forward_failures=" << failures << "\n";
      if (!v_out.empty()) {
        nlohmann::json m;
        m["d_v"] = dv;
        m["forward_failures"] = failures;
        write_file(v_out, m.dump(2));
      }
    } else if (bench->parsed()) {
      iopt::ExperimentSpec spec = iopt::ExperimentSpec::load(b_spec);
      std::vector<iopt::ResultRow> rows = iopt::run_experiment(spec);
      std::cout << "wrote " << rows.size() << " rows to " << spec.out_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
