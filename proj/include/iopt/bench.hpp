#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iopt/estimator.hpp"
#include "iopt/fops.hpp"
#include "iopt/model.hpp"

namespace iopt {

struct LengthMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RankDeficient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sum of Manhattan distances between true and predicted decisions.
double metric_dv(const TestSet& test, const std::vector<Vec>& predictions);

// Sum of absolute differences of the normalized budget coefficients
// p_bg / m_b.
double metric_param_ramp(const RampModel& truth, const RampModel& est);

// Per-buyer least squares on sum_g (p_bg/m_b) x_bg^2 = 1 assuming active
// budgets, clipped at zero; returns the normalized model (m_b = 1).
RampModel regression_baseline_ramp(const Dataset& ds);

struct ExperimentSpec {
  std::string case_name;  // waterfill | ramp | risk
  int D = 0;              // waterfill
  int B = 0, G = 0;       // ramp
  std::string risk_config;  // path to a RiskModel JSON (risk case)
  double sigma = 0.0;
  std::vector<int> n_obs_list;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, EstimatorConfig> methods;  // label -> config
  std::string out_dir;
  double time_limit_s = 300.0;

  void validate() const;
  static ExperimentSpec from_json(const std::string& text);
  static ExperimentSpec load(const std::string& path);
};

struct ResultRow {
  std::string case_name;
  std::string method;
  std::string size;  // e.g. "D=20" or "B=20,G=5" or "T=12,S=8"
  double sigma = 0.0;
  int n_obs = 0;
  std::uint64_t seed = 0;
  double d_v = 0.0;
  double param_err = 0.0;
  double wall_s = 0.0;
  std::string termination;
};

// Runs every (n_obs, seed, method) cell, appending rows.csv incrementally in
// out_dir and writing summary.csv (median/min/max per cell) at the end.
std::vector<ResultRow> run_experiment(const ExperimentSpec& spec);

void write_rows_csv(const std::string& path, const std::vector<ResultRow>& rows);
void write_summary_csv(const std::string& path, const std::vector<ResultRow>& rows);

}  // namespace iopt
