#pragma once

#include <array>
#include <limits>
#include <optional>
#include <vector>

#include "twreh/gp.hpp"
#include "twreh/model.hpp"

namespace twreh {

// Continuous inner problem: for a given relay-selection pattern, choose the
// splitting ratios and relay powers maximizing the configured utility, by
// iterated condensation of the (log-space convex) surrogate.
//
// Each relay/slot cell carries a state: 0 = idle, 1 = forwarding, and -1 =
// relaxed (the selection flag itself becomes a continuous variable in (0,1],
// used by the branch-and-bound outer search). Binary callers pass the
// selection matrix directly as the state.
constexpr int kRelaxedCell = -1;

// ---------- linear-coefficient views of the energy and SNR models ----------

// Per-cell coefficients such that, for binary selections,
//   harvest(l,b)  = -zeta1*beta + zeta2 * sum_{j forwarding} p_r(j,b)*peer_gain(l,j) + zeta3
//   consumed(l,b) =  theta1*p_r + theta2
// reproduce the model-module energy values exactly.
struct EnergyCoefficients {
  Eigen::MatrixXd zeta1;  // L x B: harvest forfeited per unit splitting ratio (0 when idle)
  Eigen::MatrixXd zeta2;  // L x B: pickup factor on peers' radiated power (0 when forwarding)
  Eigen::MatrixXd zeta3;  // L x B: selection-independent harvest ceiling
  Eigen::MatrixXd theta1; // L x B: consumption slope in transmit power (0 when idle)
  Eigen::MatrixXd theta2; // L x B: consumption offset
  std::vector<Eigen::MatrixXd> peer_gain; // B entries of L x L: |h_{lj}|^2, diagonal 0
};

EnergyCoefficients energy_coefficients(const SystemParams& params, const SelectionMatrix& eps,
                                       const ChannelSet& ch, const RenewableTrace& re);

// Reconstruction helpers (cross-checks against the model module).
double coefficient_harvest(const EnergyCoefficients& co, const SelectionMatrix& eps,
                           const ContinuousDecision& dec, int l, int b);
double coefficient_consumption(const EnergyCoefficients& co, const ContinuousDecision& dec, int l,
                               int b);

// Per-cell SNR coefficients under the noise-neglected relay gain:
//   delta1[q](l,b) = eps * |h_q(l,b)|^2 / s(l,b)
//   delta2(l,b)    = eps * |h_1(l,b)||h_2(l,b)| / sqrt(s(l,b))
// where s is the total terminal RF power arriving at the relay; cells with
// s = 0 get zero coefficients (such a relay contributes nothing).
struct SnrCoefficients {
  std::array<Eigen::MatrixXd, 2> delta1; // indexed by receiving terminal
  Eigen::MatrixXd delta2;
};

SnrCoefficients snr_coefficients(const SystemParams& params, const SelectionMatrix& eps,
                                 const ChannelSet& ch);

// ---------- variable layout ----------

// Index assignment for the optimization variables of one subproblem. Cells
// with state 0 own no variables; cells with nonzero state own a power (and a
// splitting ratio unless it is globally fixed); relaxed cells additionally own
// a selection variable. The worst-link problems append one rate-floor variable.
struct VariableLayout {
  Eigen::MatrixXi beta_id; // L x B, -1 where absent
  Eigen::MatrixXi p_id;    // L x B, -1 where absent
  Eigen::MatrixXi eps_id;  // L x B, -1 where absent (binary cells)
  int gamma_id = -1;
  int num_vars = 0;

  // Decode an assignment into a physical decision: beta = 1 and p_r = 0 where
  // absent; powers below `snap` collapse to exactly zero.
  ContinuousDecision decision(const gp::Assignment& z, double snap = 1e-8) const;
  // Encode a decision (values clamped into [floor, cap]); relaxed selection
  // variables take eps_fill, the rate-floor variable takes gamma_fill.
  gp::Assignment assignment(const SystemParams& params, const ContinuousDecision& dec,
                            double eps_fill = 0.5, double gamma_fill = 1.0) const;
  // Selection values implied by an assignment: fixed cells echo their state,
  // relaxed cells read their variable.
  Eigen::MatrixXd selection_values(const Eigen::MatrixXi& state, const gp::Assignment& z) const;
};

VariableLayout make_layout(const Eigen::MatrixXi& state, UtilityKind kind,
                           bool beta_variable = true);

// ---------- subproblem construction ----------

struct BuildOptions {
  UtilityKind kind = UtilityKind::max_sum;
  // Lock every splitting ratio to this value instead of optimizing it (no
  // splitting-ratio variables in the layout; pair with make_layout(...,false)).
  std::optional<double> fixed_beta;
  double p_floor = 1e-9;
  double beta_floor = 1e-6;
  double eps_floor = 1e-9;
  double gamma_floor = 1e-18;
};

// Build the condensed surrogate at z_ref. Throws std::invalid_argument when
// z_ref violates an energy-budget or storage-capacity ratio (message names the
// relay and slot). Constraint order: all energy budgets (relay-major), all
// storage capacities, power caps, splitting-ratio caps, relaxed-selection
// caps, then (worst-link only) one rate-floor coupling constraint per active
// slot and terminal.
gp::GpProblem build_subproblem(const SystemParams& params, const Eigen::MatrixXi& state,
                               const ChannelSet& ch, const RenewableTrace& re,
                               const VariableLayout& layout, const gp::Assignment& z_ref,
                               const BuildOptions& options);

// Binary convenience wrappers over build_subproblem using the canonical layout
// make_layout(eps, kind): total-rate and worst-link objectives.
gp::GpProblem build_max_sum(const SystemParams& params, const SelectionMatrix& eps,
                            const ChannelSet& ch, const RenewableTrace& re,
                            const gp::Assignment& z_ref);
gp::GpProblem build_max_min(const SystemParams& params, const SelectionMatrix& eps,
                            const ChannelSet& ch, const RenewableTrace& re,
                            const gp::Assignment& z_ref);

// ---------- scoring ----------

// Exact utility (thermal noise included in the relay gain) plus the
// feasibility verdict; the value is reported even when infeasible.
struct UtilityScore {
  double value = 0.0;
  FeasibilityReport report;
};

UtilityScore true_utility(const SystemParams& params, const SelectionMatrix& eps,
                          const ContinuousDecision& dec, const ChannelSet& ch,
                          const RenewableTrace& re, UtilityKind kind);

// ---------- inner solve ----------

struct ContinuousSolveSettings {
  gp::ScaSettings sca;   // initial_point is computed internally and ignored here
  std::optional<double> fixed_beta;
  double p_floor = 1e-9;
  double beta_floor = 1e-6;
  double eps_floor = 1e-9;
  double gamma_floor = 1e-18;
};

struct ContinuousSolveResult {
  bool feasible = false;
  double utility = -std::numeric_limits<double>::infinity(); // exact, bits
  ContinuousDecision decision;
  FeasibilityReport report;
  std::vector<double> trace; // surrogate log-objective per iteration
  int sca_iterations = 0;
  int gp_solves = 0;
};

// Score one binary selection end to end: feasible start (with repair), the
// condense/solve loop, snap, exact re-scoring. Short-circuits: all-silent
// patterns, and worst-link patterns with any silent slot, score utility 0
// without solving (feasibility still probed).
ContinuousSolveResult solve_continuous(const SystemParams& params, const SelectionMatrix& eps,
                                       const ChannelSet& ch, const RenewableTrace& re,
                                       UtilityKind kind, const ContinuousSolveSettings& settings);

struct RelaxedSolveResult {
  bool solved = false;               // a relaxed optimum was reached
  bool certified_infeasible = false; // interval certificate: EVERY completion is infeasible
  double bound = std::numeric_limits<double>::infinity(); // utility estimate, bits
  Eigen::MatrixXd eps_value;        // L x B selection values at the solution
  ContinuousDecision decision;
  int sca_iterations = 0;
};

// Solve the continuous relaxation over a partially fixed state (used for
// bounding in branch-and-bound). The bound is the surrogate utility at the
// final iterate; when the solve fails the bound stays +infinity so callers
// never prune on an uncertified failure.
RelaxedSolveResult solve_relaxed(const SystemParams& params, const Eigen::MatrixXi& state,
                                 const ChannelSet& ch, const RenewableTrace& re, UtilityKind kind,
                                 const ContinuousSolveSettings& settings);

// Feasible starting assignment for the layout: splitting ratios 0.5 (or the
// fixed value), powers at half cap, relaxed selections 0.5, then up to 64
// repair rounds (halving powers for budget violations, pushing ratios toward 1
// for storage violations). Empty when repair fails.
std::optional<gp::Assignment> initial_assignment(const SystemParams& params,
                                                 const Eigen::MatrixXi& state,
                                                 const ChannelSet& ch, const RenewableTrace& re,
                                                 const VariableLayout& layout,
                                                 const BuildOptions& options);

}  // namespace twreh
