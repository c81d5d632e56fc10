#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace iopt {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteEvaluation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidModel : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Closed box, possibly with fixed components (lower == upper).  Infinite
// bounds are allowed where compactness is not required (e.g. free duals).
struct BoxDomain {
  Vec lower;
  Vec upper;

  BoxDomain() = default;
  BoxDomain(Vec lo, Vec up);

  static BoxDomain uniform(int dim, double lo, double up);
  static BoxDomain free(int dim);
  static BoxDomain fixed_value(const Vec& v);

  int dim() const { return static_cast<int>(lower.size()); }
  bool is_fixed(int i) const { return lower[i] == upper[i]; }
  bool contains(const Vec& v, double tol = 0.0) const;
  Vec project(const Vec& v) const;
  Vec midpoint() const;
  bool bounded() const;
};

// Parametric forward optimization problem
//   min_x f(x, u; theta)  s.t.  g(x, u; omega) <= 0,  h(x, u; omega) = 0.
// Functions are supplied as evaluation callbacks with analytic x-derivatives.
// Callbacks must be reentrant; the struct is immutable after construction.
struct ParametricFop {
  int n = 0;         // decision dimension
  int m = 0;         // inequality count
  int p = 0;         // equality count
  int dim_u = 0;
  int dim_theta = 0;
  int dim_omega = 0;

  std::function<double(const Vec& x, const Vec& u, const Vec& theta)> eval_f;
  std::function<Vec(const Vec& x, const Vec& u, const Vec& theta)> grad_f_x;
  std::function<Vec(const Vec& x, const Vec& u, const Vec& omega)> eval_g;    // m
  std::function<Mat(const Vec& x, const Vec& u, const Vec& omega)> jac_g_x;   // m x n
  std::function<Vec(const Vec& x, const Vec& u, const Vec& omega)> eval_h;    // p
  std::function<Mat(const Vec& x, const Vec& u, const Vec& omega)> jac_h_x;   // p x n

  // Optional second derivatives in x; used by the smoothed x-block solves.
  // When absent, stationarity Jacobians fall back to finite differences.
  std::function<Mat(const Vec& x, const Vec& u, const Vec& theta)> hess_f_x;  // n x n
  // Sum_k w_k * Hess_x g_k
  std::function<Mat(const Vec& x, const Vec& u, const Vec& omega, const Vec& w)> hess_g_x;

  BoxDomain theta_domain;
  BoxDomain omega_domain;

  // Hard treatment: rows of g that are simple bound constraints with known
  // parameters stay hard (enforced through x_bounds, excluded from the
  // primal-feasibility penalty).  Their duals still enter stationarity and
  // complementarity.
  std::vector<bool> g_hard;   // size m
  BoxDomain x_bounds;         // hard box on x-hat implied by the hard rows

  // Multiconvexity declarations for the BCD block partition
  // ((theta, lambda, mu), (omega), (x_hat)).
  bool stationarity_affine_theta = true;  // grad_f affine in theta
  bool constraints_affine_omega = true;   // g, h affine in omega
  bool fop_is_qp = false;                 // x-block subproblems are QPs

  // Forward solver hook used by predict(); set by the FOP library.
  std::function<Vec(const Vec& u, const Vec& theta, const Vec& omega)> forward_solve;

  void validate_dims() const;
};

struct TrueModel {
  Vec theta;
  Vec omega;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

struct Observation {
  Vec u;
  Vec x;
};

struct Dataset {
  int dim_u = 0;
  int n = 0;
  std::vector<Observation> observations;
  std::optional<TrueModel> meta;
  std::string case_name;
  // Partial observability: which scenario realized per observation (one
  // entry per observation when used, empty otherwise).
  std::vector<int> realized_scenario;

  int size() const { return static_cast<int>(observations.size()); }
  void validate() const;

  std::string to_json() const;
  static Dataset from_json(const std::string& text);
  void save(const std::string& path) const;
  static Dataset load(const std::string& path);
};

// Noiseless (u, x*) pairs used for prediction-error evaluation.
struct TestSet {
  std::vector<Observation> points;
  int size() const { return static_cast<int>(points.size()); }
};

// Diagonal nonnegative weighting; zero entries mark unobserved coordinates.
struct WeightMatrix {
  Vec diagonal;

  static WeightMatrix identity(int n);
  void validate() const;
  int dim() const { return static_cast<int>(diagonal.size()); }
};

// Full iterate of the single-level problem.  Row i of each matrix belongs to
// observation i.
struct IopEstimate {
  Vec theta;
  Vec omega;
  Mat x_hat;    // |I| x n
  Mat lambda;   // |I| x m
  Mat mu;       // |I| x p

  void validate_against(const ParametricFop& fop, const Dataset& ds) const;
};

struct ValidationCheck {
  std::string name;
  bool passed = false;
  double worst = 0.0;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  bool all_passed() const;
  const ValidationCheck* find(const std::string& name) const;
};

struct ProbePoint {
  Vec x;
  Vec u;
  Vec theta;
  Vec omega;
};

// Operational checks for the documented model contracts: derivative
// consistency against central finite differences, midpoint convexity of f
// and g in x, affinity of h in x.
ValidationReport validate_model(const ParametricFop& fop,
                                const std::vector<ProbePoint>& probes);

// Returns observed_x on positive-weight coordinates and full_x elsewhere.
Vec apply_observation_mask(const WeightMatrix& w, const Vec& full_x,
                           const Vec& observed_x);

}  // namespace iopt
