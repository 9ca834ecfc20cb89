#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace twreh::gp {

using Assignment = std::vector<double>; // strictly positive variable values, indexed by id

// ---------- posynomial algebra ----------

// c * prod z_i^{e_i} with c >= 0. Exponents are kept sparse and sorted by id.
struct Monomial {
  double coeff = 1.0;
  std::vector<std::pair<int, double>> exps;

  double eval(const Assignment& z) const;
  double log_eval(const Assignment& z) const; // log value; requires coeff > 0
  Monomial& mul(const Monomial& other);       // in-place product
  Monomial& mul_var(int id, double exponent); // multiply by z_id^exponent
  Monomial pow(double p) const;
};

Monomial make_monomial(double coeff, std::initializer_list<std::pair<int, double>> exps = {});

// Sum of monomials with nonnegative coefficients; zero-coefficient terms are
// dropped on insertion.
struct Posynomial {
  std::vector<Monomial> terms;

  double eval(const Assignment& z) const;
  bool empty() const { return terms.empty(); }
  void add(Monomial m);
  void add(const Posynomial& p);
};

// num / den with a monomial denominator (den defaults to the constant 1).
struct PosyRatio {
  Posynomial num;
  Monomial den = make_monomial(1.0);

  double eval(const Assignment& z) const { return num.eval(z) / den.eval(z); }
};

// Best monomial lower bound of p that is tight at z_ref (weighted AM-GM with
// weights proportional to each term's share of p(z_ref)). Zero-share terms are
// dropped. Requires p nonempty and p(z_ref) > 0.
Monomial condense(const Posynomial& p, const Assignment& z_ref);

// ---------- problem container ----------

struct VarBounds {
  double lo = 1e-9; // positivity floor in solver space
  double hi = std::numeric_limits<double>::infinity();
};

// minimize   prod_k objective[k]          (empty product = constant 1)
// subject to constraints[i] <= 1, equalities[j] == 1, bounds on each variable.
struct GpProblem {
  int num_vars = 0;
  std::vector<PosyRatio> objective;
  std::vector<PosyRatio> constraints;
  std::vector<Monomial> equalities;
  std::vector<VarBounds> bounds; // resized to num_vars with defaults if shorter

  double objective_value(const Assignment& z) const;
  double log_objective_value(const Assignment& z) const;
  std::string dump() const; // debug text; one monomial per line
};

// ---------- log-space convex form ----------

// value(t) = log sum_k exp(A t[cols] + b) + (affine . t) + affine_c
// The affine part carries monomial denominators so that the log-sum-exp rows
// stay sparse (an affine shift has zero Hessian).
struct LseBlock {
  std::vector<int> cols;
  Eigen::MatrixXd A; // K x cols.size()
  Eigen::VectorXd b; // K
  std::vector<std::pair<int, double>> affine;
  double affine_c = 0.0;

  double value(const Eigen::VectorXd& t) const;
  // Full-dimension gradient of value() at t (softmax weights scattered onto cols).
  Eigen::VectorXd gradient(const Eigen::VectorXd& t) const;
};

struct AffineEq { // a . t + c == 0
  std::vector<std::pair<int, double>> a;
  double c = 0.0;
};

struct ConvexForm {
  int n = 0;
  std::vector<LseBlock> objective;   // F0(t) = sum of blocks
  std::vector<LseBlock> constraints; // F_i(t) <= 0
  std::vector<AffineEq> equalities;
  Eigen::VectorXd t_lo, t_hi; // box bounds in t (log of z bounds; +-inf allowed)

  double objective_value(const Eigen::VectorXd& t) const;
};

ConvexForm to_convex_form(const GpProblem& gp);

// ---------- interior-point solver ----------

struct SolverSettings {
  double kkt_tol = 1e-7;       // target for stationarity and duality gap
  double barrier_mu = 30.0;    // barrier parameter growth factor
  int max_newton_iters = 400;  // total Newton steps across all barrier stages
  double newton_tol = 1e-10;   // half squared Newton decrement threshold
};

struct SolveReport {
  Assignment z;
  double objective_value = 0.0; // product objective at z
  double log_objective = 0.0;
  bool converged = false;
  bool infeasible = false;
  double kkt_stationarity = 0.0;
  double kkt_gap = 0.0;
  int newton_iters = 0;
};

// Minimizes the convexified problem starting from the (positive) assignment
// `start`. Runs a feasibility phase first if the start violates a constraint.
SolveReport solve_convex(const ConvexForm& cf, const Assignment& start,
                         const SolverSettings& settings = {});

// ---------- successive convex approximation ----------

struct ScaSettings {
  double tolerance = 1e-4; // stop when |log-objective change| <= tolerance
  int max_iterations = 60;
  Assignment initial_point; // must satisfy the true constraints
  SolverSettings solver;
};

struct ScaResult {
  Assignment z;
  std::vector<double> trace;          // log objective; trace[0] is at the initial point
  std::vector<Assignment> iterates;   // iterates[0] is the initial point
  int solves = 0;
  bool converged = false;
};

// Builds a GP approximation around the current iterate, solves it, repeats
// until the log-objective change falls within tolerance. The builder must
// return problems whose constraints are conservative approximations that are
// tight at the reference point. Throws std::invalid_argument if the initial
// point violates a constraint of the problem built at itself.
using Builder = std::function<GpProblem(const Assignment& z_ref)>;

ScaResult run_sca(const Builder& build, const ScaSettings& settings);

}  // namespace twreh::gp
