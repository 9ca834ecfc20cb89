#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace twreh {

// ---------- unit conversions ----------

inline double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double watt_to_dbm(double w) {
  if (!(w > 0.0)) throw std::domain_error("watt_to_dbm: power must be positive");
  return 10.0 * std::log10(w) + 30.0;
}
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) {
  if (!(x > 0.0)) throw std::domain_error("linear_to_db: value must be positive");
  return 10.0 * std::log10(x);
}

// ---------- system parameters ----------

// Scenario constants for the two-way relaying network: two terminals exchange
// data through L amplify-and-forward relays over B time slots of length tc_s.
// Relays are powered by harvested energy only (RF pickup plus a renewable
// source) buffered in a finite battery.
struct SystemParams {
  int relays = 3;  // L
  int slots = 8;   // B

  double tc_s = 0.175;        // slot duration [s]
  double bandwidth_hz = 2e6;  // W
  double carrier_hz = 2.45e9; // f
  double light_speed = 3e8;   // propagation speed used in the path-loss model

  double p1_w = 1e-3;     // terminal 1 transmit power [W]
  double p2_w = 1e-3;     // terminal 2 transmit power [W]
  double pr_max_w = 1e-3; // per-relay transmit power cap [W]
  double noise_w = 7.943282347242789e-18; // N0 = -141 dBm

  double eta_rf = 0.4; // RF harvesting efficiency
  double eta_re = 0.3; // renewable harvesting efficiency

  double a0_w = 1.2;     // circuit offset power drawn every slot [W]
  double a_r_w = 1.2e-3; // receive-electronics power [W]
  double a_t = 4e-3;     // transmit-chain scale (dimensionless multiplier on P_r)

  double storage_max_j = 5.0;  // battery capacity [J]
  double leak_j = 0.01;        // per-slot leakage [J]
  double battery_init_j = 2.5; // initial charge per relay [J] (default: half capacity)

  double pl_exponent = 2.0; // path-loss exponent
  double pl_los_db = 0.0;   // extra line-of-sight loss [dB]
  double rician_k_db = 7.78;

  double area_diameter_m = 50.0; // D: terminal separation; relays live in the disk of radius D/2

  // Renewable source: i.i.d. truncated-normal power per relay and slot.
  double re_mean_w = 2.0;
  double re_sd_w = 0.5;
  double re_lo_w = 0.0;
  double re_hi_w = 2.4;

  void validate() const; // throws std::invalid_argument on nonsense values
};

// ---------- geometry, channels, renewable trace ----------

struct Geometry {
  std::array<std::array<double, 2>, 2> terminals{}; // positions of terminal 1 and 2
  std::vector<std::array<double, 2>> relays;        // L relay positions
};

// Terminals at the ends of a diameter, relays uniform over the disk of radius D/2.
Geometry sample_geometry(const SystemParams& params, std::uint64_t seed);

double distance(const std::array<double, 2>& a, const std::array<double, 2>& b);

// Free-space-style path loss in dB at the given distance. Throws std::domain_error
// for non-positive distance.
double path_loss_db(const SystemParams& params, double distance_m);

// Complex channel gains with path loss applied. Entry (l,b) of h1r/h2r is the
// terminal->relay gain in slot b; hrr[b](l,j) is the relay_j -> relay_l gain
// (diagonal unused, set to zero). Rician small-scale fading with unit mean power.
struct ChannelSet {
  Eigen::MatrixXcd h1r, h2r;        // L x B
  std::vector<Eigen::MatrixXcd> hrr; // B entries of L x L
};

ChannelSet sample_channels(const SystemParams& params, const Geometry& geom, std::uint64_t seed);

// Renewable source power phi [W] per relay and slot, L x B.
using RenewableTrace = Eigen::MatrixXd;

RenewableTrace sample_renewable(const SystemParams& params, std::uint64_t seed);

// ---------- decisions ----------

using SelectionMatrix = Eigen::MatrixXi; // L x B of {0,1}; 1 = relay forwards in that slot

struct ContinuousDecision {
  Eigen::MatrixXd beta; // L x B power-splitting ratios in [0,1]
  Eigen::MatrixXd p_r;  // L x B relay transmit powers [W]
};

SelectionMatrix zero_selection(const SystemParams& params);
ContinuousDecision silent_decision(const SystemParams& params); // beta = 1, p_r = 0

// Encode a selection matrix as an integer (bit l*B+b), used for tie-breaking
// and memoization. Requires relays*slots <= 63.
std::uint64_t selection_code(const SelectionMatrix& eps);

// ---------- energy accounting ----------

// Energy harvested by relay l in slot b [J]. A forwarding relay splits the
// terminals' RF off its receive signal (factor 1-beta) and always collects the
// renewable term; an idle relay picks up the full terminal RF, the RF radiated
// by the forwarding relays, and the renewable term.
double harvested_energy(const SystemParams& params, const SelectionMatrix& eps,
                        const ContinuousDecision& dec, const ChannelSet& ch,
                        const RenewableTrace& re, int l, int b);

struct HarvestSplit {
  double rf = 0.0;
  double re = 0.0;
};
HarvestSplit harvested_energy_split(const SystemParams& params, const SelectionMatrix& eps,
                                    const ContinuousDecision& dec, const ChannelSet& ch,
                                    const RenewableTrace& re, int l, int b);

// Energy consumed by relay l in slot b [J]: circuit offset every slot, plus
// half-slot receive+transmit electronics when forwarding, or full-slot receive
// electronics when idle.
double consumed_energy(const SystemParams& params, const SelectionMatrix& eps,
                       const ContinuousDecision& dec, int l, int b);

// Battery ledger under harvest-store-use: energy banked in slot b becomes
// spendable in slot b+1. stored has B+1 columns; column 0 is the initial charge.
// No clamping is applied -- infeasible decisions show up as out-of-range values.
struct EnergyLedger {
  Eigen::MatrixXd harvested; // L x B
  Eigen::MatrixXd consumed;  // L x B
  Eigen::MatrixXd stored;    // L x (B+1)
};

EnergyLedger roll_ledger(const SystemParams& params, const SelectionMatrix& eps,
                         const ContinuousDecision& dec, const ChannelSet& ch,
                         const RenewableTrace& re);

// ---------- feasibility ----------

struct FeasibilityReport {
  enum class Kind {
    none,             // feasible
    consumed_budget,  // consumption + leakage exceeds the energy stored entering the slot
    storage_capacity, // stored + incoming harvest would exceed the battery capacity
    relay_power,      // p_r outside [0, pr_max]
    split_range,      // beta outside [0, 1]
    selection_binary, // eps entry not in {0,1}
  };
  bool feasible = true;
  Kind kind = Kind::none;
  int relay = -1;
  int slot = -1;
  double lhs = 0.0;
  double rhs = 0.0;
  std::string message() const;
};

// Checks, in order: per-slot energy budget, storage capacity, relay power
// bounds, splitting-ratio bounds, selection integrality. Returns the first
// violation found.
FeasibilityReport check_feasible(const SystemParams& params, const SelectionMatrix& eps,
                                 const ContinuousDecision& dec, const ChannelSet& ch,
                                 const RenewableTrace& re);

// ---------- rates ----------

// Amplify-and-forward gain of relay l in slot b. With neglect_noise the thermal
// noise term in the normalization is dropped (requires beta > 0).
double amplification_gain(const SystemParams& params, const ContinuousDecision& dec,
                          const ChannelSet& ch, int l, int b, bool neglect_noise = false);

struct RateResult {
  Eigen::MatrixXd snr;  // B x 2; column q is the SNR at terminal q+1
  Eigen::MatrixXd rate; // B x 2 [bits per slot]
};

RateResult snr_and_rate(const SystemParams& params, const SelectionMatrix& eps,
                        const ContinuousDecision& dec, const ChannelSet& ch,
                        bool neglect_noise = false);

enum class UtilityKind { max_sum, max_min };

// max_sum: total rate over all slots and both terminals; max_min: worst
// single-slot single-terminal rate.
double utility(const RateResult& rates, UtilityKind kind);

}  // namespace twreh
