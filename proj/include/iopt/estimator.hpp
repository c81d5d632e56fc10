#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "iopt/kkt.hpp"
#include "iopt/model.hpp"

namespace iopt {

enum class Method { BCD, FullSpaceSmoothed };
enum class Termination {
  PenaltyFeasible,
  ValidationStall,
  MaxOuter,
  Diverged,
  Timeout,
};

std::string to_string(Method m);
std::string to_string(Termination t);
Method method_from_string(const std::string& s);

struct EstimatorConfig {
  Eigen::Vector4d c1 = Eigen::Vector4d::Constant(500.0);
  double rho = 1000.0;
  double gamma = 1e6;
  // per-observation penalty tolerance; the solve stops when
  // ||P||_1 <= eps_penalty * |I|
  double eps_penalty = 1e-6;
  int max_outer = 12;
  int max_bcd_passes = 50;
  int stall_window = 2;
  double stall_rel_tol = 0.01;
  double time_budget_s = 300.0;  // wall-clock cap for one solve
  Method method = Method::BCD;
  std::uint64_t seed = 0;  // drives the partial-observability random fill
  std::optional<TestSet> validation_set;  // not serialized

  void validate() const;
  std::string to_json() const;
  static EstimatorConfig from_json(const std::string& text);
  static EstimatorConfig load(const std::string& path);
};

struct TraceEntry {
  int k = 0;
  Eigen::Vector4d c;
  double penalty_l1 = 0.0;
  double objective = 0.0;
  double val_error = std::numeric_limits<double>::quiet_NaN();
  double wall_s = 0.0;
};

struct SolveReport {
  std::vector<TraceEntry> trace;
  Termination termination = Termination::MaxOuter;
  IopEstimate estimate;
  std::vector<std::string> notes;  // skipped blocks, fallbacks, substitutions
  double wall_s = 0.0;
};

// x-hat from the observed data (random seeded fill on zero-weight
// coordinates), omega from constraint-violation minimization, then
// (theta, lambda, mu) from stationarity/complementarity minimization.
// Partial observability skips the two fitting problems and samples the
// parameter boxes instead.
IopEstimate initialize(const ParametricFop& fop, const Dataset& ds,
                       const WeightMatrix& w, std::uint64_t seed = 0,
                       std::vector<std::string>* notes = nullptr);

// One cyclic pass over the blocks ((theta, lambda, mu), omega, x-hat) with
// proximal regularization; reverts any block update that fails to decrease
// the exact penalized objective.
std::pair<IopEstimate, double> bcd_pass(const ParametricFop& fop,
                                        const Dataset& ds,
                                        const WeightMatrix& w,
                                        const IopEstimate& est,
                                        const PenaltyState& ps,
                                        std::vector<std::string>* notes = nullptr);

SolveReport solve(const ParametricFop& fop, const Dataset& ds,
                  const WeightMatrix& w, const EstimatorConfig& cfg);

// Forward-solves the FOP for each test input; failures are counted and the
// corresponding prediction is the projection of zero onto the variable box.
std::vector<Vec> predict(const ParametricFop& fop, const Vec& theta,
                         const Vec& omega, const std::vector<Vec>& test_u,
                         int* failures = nullptr);

}  // namespace iopt
