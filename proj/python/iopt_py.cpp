// Python bindings for the main operations: forward solvers, dataset
// generation, estimation, and prediction-error metrics.  Vectors cross the
// boundary as plain lists; structured data as JSON strings.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "iopt/bench.hpp"
#include "iopt/estimator.hpp"
#include "iopt/fops.hpp"

namespace py = pybind11;
using iopt::Dataset;
using iopt::Vec;

namespace {

Vec to_vec(const std::vector<double>& v) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

std::vector<double> to_list(const Vec& v) {
  return {v.data(), v.data() + v.size()};
}

iopt::ParametricFop fop_for(const Dataset& ds, const std::string& risk_config_json) {
  if (ds.case_name == "waterfill") return iopt::make_waterfill_fop(ds.n);
  if (ds.case_name == "ramp") return iopt::make_ramp_fop(ds.n / ds.dim_u, ds.dim_u);
  if (ds.case_name == "risk")
    return iopt::make_risk_fop(iopt::RiskModel::from_json(risk_config_json));
  throw std::runtime_error("dataset carries no recognized case tag");
}

}  // namespace

PYBIND11_MODULE(iopt_py, m) {
  m.doc() = "inverse optimization of convex forward problems";

  m.def(
      "waterfill_solve",
      [](const std::vector<double>& theta, const std::vector<double>& omega,
         const std::vector<double>& u) {
        iopt::WaterfillModel wm{static_cast<int>(theta.size()), to_vec(theta),
                                to_vec(omega)};
        iopt::WaterfillKkt kkt = iopt::waterfill_bisect(wm, to_vec(u));
        return py::make_tuple(to_list(kkt.x), kkt.nu, to_list(kkt.lambda));
      },
      "closed-form rate-allocation solve; returns (x, nu, lambda)");

  m.def(
      "ramp_solve",
      [](const std::vector<std::vector<double>>& p, const std::vector<double>& mm,
         const std::vector<double>& c) {
        iopt::RampModel md;
        md.B = static_cast<int>(p.size());
        md.G = static_cast<int>(c.size());
        md.p = iopt::Mat(md.B, md.G);
        for (int b = 0; b < md.B; ++b)
          for (int g = 0; g < md.G; ++g) md.p(b, g) = p[b][g];
        md.m = to_vec(mm);
        md.c = to_vec(c);
        iopt::Mat x = iopt::ramp_solve(md);
        std::vector<std::vector<double>> out(md.B, std::vector<double>(md.G));
        for (int b = 0; b < md.B; ++b)
          for (int g = 0; g < md.G; ++g) out[b][g] = x(b, g);
        return out;
      },
      "Nash-bargaining allocation solve; returns the B x G allocation");

  m.def(
      "gen_waterfill_dataset",
      [](int D, int n_obs, double sigma, std::uint64_t seed) {
        auto [ds, ts] = iopt::gen_waterfill_dataset(D, n_obs, sigma, seed);
        Dataset test;
        test.dim_u = ds.dim_u;
        test.n = ds.n;
        test.observations = ts.points;
        return py::make_tuple(ds.to_json(), test.to_json());
      },
      "returns (dataset_json, test_set_json)");

  m.def(
      "estimate",
      [](const std::string& dataset_json, const std::string& config_json,
         const std::string& risk_config_json) {
        Dataset ds = Dataset::from_json(dataset_json);
        iopt::EstimatorConfig cfg = iopt::EstimatorConfig::from_json(config_json);
        iopt::ParametricFop fop = fop_for(ds, risk_config_json);
        iopt::WeightMatrix w = iopt::WeightMatrix::identity(ds.n);
        if (ds.case_name == "risk" && !ds.realized_scenario.empty()) {
          iopt::RiskModel base = iopt::RiskModel::from_json(risk_config_json);
          w.diagonal.setZero();
          for (int i = 0; i < ds.size(); ++i)
            w.diagonal +=
                iopt::risk_observation_weights(base, ds.realized_scenario[i]).diagonal;
          w.diagonal = (w.diagonal.array() > 0.0).cast<double>();
        }
        iopt::SolveReport rep = iopt::solve(fop, ds, w, cfg);
        nlohmann::json j;
        j["theta"] = to_list(rep.estimate.theta);
        j["omega"] = to_list(rep.estimate.omega);
        j["termination"] = iopt::to_string(rep.termination);
        j["penalty_l1"] = rep.trace.back().penalty_l1;
        j["wall_s"] = rep.wall_s;
        return j.dump();
      },
      py::arg("dataset_json"), py::arg("config_json"),
      py::arg("risk_config_json") = std::string(),
      "run the estimator; returns a JSON report");

  m.def(
      "predict_waterfill",
      [](const std::vector<double>& theta, const std::vector<double>& omega,
         const std::vector<std::vector<double>>& test_u) {
        iopt::ParametricFop fop =
            iopt::make_waterfill_fop(static_cast<int>(theta.size()));
        std::vector<Vec> us;
        for (const auto& u : test_u) us.push_back(to_vec(u));
        std::vector<Vec> preds = iopt::predict(fop, to_vec(theta), to_vec(omega), us);
        std::vector<std::vector<double>> out;
        for (const Vec& x : preds) out.push_back(to_list(x));
        return out;
      },
      "forward-solve the rate-allocation problem per test input");

  m.def(
      "metric_dv",
      [](const std::string& test_json, const std::vector<std::vector<double>>& preds) {
        Dataset test = Dataset::from_json(test_json);
        iopt::TestSet ts;
        ts.points = test.observations;
        std::vector<Vec> pv;
        for (const auto& x : preds) pv.push_back(to_vec(x));
        return iopt::metric_dv(ts, pv);
      },
      "sum of Manhattan distances between test decisions and predictions");

  m.def("default_config",
        []() { return iopt::EstimatorConfig{}.to_json(); },
        "estimator configuration defaults as JSON");
}
