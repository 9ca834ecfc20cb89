#include "twreh/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "twreh/rng.hpp"

namespace twreh {

void SystemParams::validate() const {
  auto bad = [](const std::string& what) { throw std::invalid_argument("SystemParams: " + what); };
  if (relays < 1) bad("relays must be >= 1");
  if (slots < 1) bad("slots must be >= 1");
  if (!(tc_s > 0)) bad("tc_s must be positive");
  if (!(bandwidth_hz > 0)) bad("bandwidth_hz must be positive");
  if (!(carrier_hz > 0)) bad("carrier_hz must be positive");
  if (!(light_speed > 0)) bad("light_speed must be positive");
  if (!(p1_w >= 0) || !(p2_w >= 0)) bad("terminal powers must be >= 0");
  if (!(pr_max_w > 0)) bad("pr_max_w must be positive");
  if (!(noise_w > 0)) bad("noise_w must be positive");
  if (!(eta_rf >= 0 && eta_rf <= 1)) bad("eta_rf must be in [0,1]");
  if (!(eta_re >= 0 && eta_re <= 1)) bad("eta_re must be in [0,1]");
  if (!(a0_w >= 0) || !(a_r_w >= 0) || !(a_t >= 0)) bad("power-model constants must be >= 0");
  if (!(storage_max_j > 0)) bad("storage_max_j must be positive");
  if (!(leak_j >= 0)) bad("leak_j must be >= 0");
  if (!(battery_init_j >= 0) || battery_init_j > storage_max_j)
    bad("battery_init_j must be in [0, storage_max_j]");
  if (!(pl_exponent > 0)) bad("pl_exponent must be positive");
  if (!(area_diameter_m > 0)) bad("area_diameter_m must be positive");
  if (!(re_sd_w >= 0)) bad("re_sd_w must be >= 0");
  if (!(re_hi_w > re_lo_w)) bad("renewable interval must satisfy hi > lo");
  if (re_lo_w < 0) bad("renewable interval must be nonnegative");
}

double distance(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

Geometry sample_geometry(const SystemParams& params, std::uint64_t seed) {
  Geometry g;
  const double r = params.area_diameter_m / 2.0;
  g.terminals[0] = {-r, 0.0};
  g.terminals[1] = {r, 0.0};
  Rng rng(seed);
  g.relays.resize(static_cast<std::size_t>(params.relays));
  for (auto& p : g.relays) {
    const double rad = r * std::sqrt(rng.uniform01());
    const double ang = 2.0 * M_PI * rng.uniform01();
    p = {rad * std::cos(ang), rad * std::sin(ang)};
  }
  return g;
}

double path_loss_db(const SystemParams& params, double distance_m) {
  if (!(distance_m > 0.0)) throw std::domain_error("path_loss_db: distance must be positive");
  const double ratio = 4.0 * M_PI * distance_m * params.carrier_hz / params.light_speed;
  return 10.0 * params.pl_exponent * std::log10(ratio) + params.pl_los_db;
}

namespace {

std::complex<double> rician_draw(Rng& rng, double k_linear) {
  const double los = std::sqrt(k_linear / (k_linear + 1.0));
  const double scatter = std::sqrt(1.0 / (k_linear + 1.0));
  return los + scatter * rng.cnormal();
}

}  // namespace

ChannelSet sample_channels(const SystemParams& params, const Geometry& geom, std::uint64_t seed) {
  const int L = params.relays, B = params.slots;
  if (static_cast<int>(geom.relays.size()) != L)
    throw std::invalid_argument("sample_channels: geometry relay count mismatch");
  const double k_lin = db_to_linear(params.rician_k_db);

  ChannelSet ch;
  ch.h1r.resize(L, B);
  ch.h2r.resize(L, B);
  ch.hrr.assign(static_cast<std::size_t>(B), Eigen::MatrixXcd::Zero(L, L));

  Rng rng(seed);
  // Fixed draw order: terminal links first (l-major, then slot), then
  // inter-relay links; keeps traces reproducible for a given seed.
  for (int l = 0; l < L; ++l) {
    const double pl1 = std::sqrt(db_to_linear(path_loss_db(params, distance(geom.terminals[0], geom.relays[l]))));
    const double pl2 = std::sqrt(db_to_linear(path_loss_db(params, distance(geom.terminals[1], geom.relays[l]))));
    for (int b = 0; b < B; ++b) {
      ch.h1r(l, b) = rician_draw(rng, k_lin) / pl1;
      ch.h2r(l, b) = rician_draw(rng, k_lin) / pl2;
    }
  }
  for (int l = 0; l < L; ++l) {
    for (int j = 0; j < L; ++j) {
      if (j == l) continue;
      const double pl = std::sqrt(db_to_linear(path_loss_db(params, distance(geom.relays[l], geom.relays[j]))));
      for (int b = 0; b < B; ++b) ch.hrr[b](l, j) = rician_draw(rng, k_lin) / pl;
    }
  }
  return ch;
}

RenewableTrace sample_renewable(const SystemParams& params, std::uint64_t seed) {
  if (!(params.re_hi_w > params.re_lo_w) || params.re_lo_w < 0)
    throw std::invalid_argument("sample_renewable: invalid truncation interval");
  RenewableTrace re(params.relays, params.slots);
  Rng rng(seed);
  for (int l = 0; l < params.relays; ++l)
    for (int b = 0; b < params.slots; ++b)
      re(l, b) = rng.truncated_normal(params.re_mean_w, params.re_sd_w, params.re_lo_w, params.re_hi_w);
  return re;
}

SelectionMatrix zero_selection(const SystemParams& params) {
  return SelectionMatrix::Zero(params.relays, params.slots);
}

ContinuousDecision silent_decision(const SystemParams& params) {
  ContinuousDecision d;
  d.beta = Eigen::MatrixXd::Ones(params.relays, params.slots);
  d.p_r = Eigen::MatrixXd::Zero(params.relays, params.slots);
  return d;
}

std::uint64_t selection_code(const SelectionMatrix& eps) {
  const int L = static_cast<int>(eps.rows()), B = static_cast<int>(eps.cols());
  if (L * B > 63) throw std::invalid_argument("selection_code: matrix too large to encode");
  std::uint64_t code = 0;
  for (int l = 0; l < L; ++l)
    for (int b = 0; b < B; ++b)
      if (eps(l, b) != 0) code |= (1ull << (l * B + b));
  return code;
}

namespace {

// Total RF power arriving at relay l from the two terminals in slot b.
double terminal_rf_power(const SystemParams& params, const ChannelSet& ch, int l, int b) {
  return params.p1_w * std::norm(ch.h1r(l, b)) + params.p2_w * std::norm(ch.h2r(l, b));
}

}  // namespace

HarvestSplit harvested_energy_split(const SystemParams& params, const SelectionMatrix& eps,
                                    const ContinuousDecision& dec, const ChannelSet& ch,
                                    const RenewableTrace& re, int l, int b) {
  const double s = terminal_rf_power(params, ch, l, b);
  const double half = params.tc_s / 2.0;
  HarvestSplit out;
  out.re = params.eta_re * re(l, b) * params.tc_s;
  if (eps(l, b) != 0) {
    out.rf = (1.0 - dec.beta(l, b)) * params.eta_rf * s * half;
  } else {
    double relay_rf = 0.0;
    for (int j = 0; j < params.relays; ++j)
      if (j != l && eps(j, b) != 0) relay_rf += dec.p_r(j, b) * std::norm(ch.hrr[b](l, j));
    out.rf = params.eta_rf * (s + relay_rf) * half;
  }
  return out;
}

double harvested_energy(const SystemParams& params, const SelectionMatrix& eps,
                        const ContinuousDecision& dec, const ChannelSet& ch,
                        const RenewableTrace& re, int l, int b) {
  const HarvestSplit split = harvested_energy_split(params, eps, dec, ch, re, l, b);
  return split.rf + split.re;
}

double consumed_energy(const SystemParams& params, const SelectionMatrix& eps,
                       const ContinuousDecision& dec, int l, int b) {
  double e = params.a0_w * params.tc_s;
  if (eps(l, b) != 0) {
    e += (params.a_r_w + params.a_t * dec.p_r(l, b)) * params.tc_s / 2.0;
  } else {
    e += params.a_r_w * params.tc_s;
  }
  return e;
}

EnergyLedger roll_ledger(const SystemParams& params, const SelectionMatrix& eps,
                         const ContinuousDecision& dec, const ChannelSet& ch,
                         const RenewableTrace& re) {
  const int L = params.relays, B = params.slots;
  EnergyLedger ledger;
  ledger.harvested.resize(L, B);
  ledger.consumed.resize(L, B);
  ledger.stored.resize(L, B + 1);
  for (int l = 0; l < L; ++l) {
    ledger.stored(l, 0) = params.battery_init_j;
    for (int b = 0; b < B; ++b) {
      ledger.harvested(l, b) = harvested_energy(params, eps, dec, ch, re, l, b);
      ledger.consumed(l, b) = consumed_energy(params, eps, dec, l, b);
      ledger.stored(l, b + 1) =
          ledger.stored(l, b) + ledger.harvested(l, b) - ledger.consumed(l, b) - params.leak_j;
    }
  }
  return ledger;
}

std::string FeasibilityReport::message() const {
  if (feasible) return "feasible";
  std::ostringstream os;
  switch (kind) {
    case Kind::consumed_budget:
      os << "energy budget violated at relay " << relay << ", slot " << slot << ": consumption+leak "
         << lhs << " J > stored " << rhs << " J";
      break;
    case Kind::storage_capacity:
      os << "storage capacity violated at relay " << relay << ", slot " << slot
         << ": stored+harvest " << lhs << " J > capacity " << rhs << " J";
      break;
    case Kind::relay_power:
      os << "relay power out of range at relay " << relay << ", slot " << slot << ": " << lhs
         << " W not in [0, " << rhs << "] W";
      break;
    case Kind::split_range:
      os << "splitting ratio out of range at relay " << relay << ", slot " << slot << ": " << lhs
         << " not in [0, 1]";
      break;
    case Kind::selection_binary:
      os << "selection entry not binary at relay " << relay << ", slot " << slot << ": " << lhs;
      break;
    default:
      os << "infeasible";
  }
  return os.str();
}

FeasibilityReport check_feasible(const SystemParams& params, const SelectionMatrix& eps,
                                 const ContinuousDecision& dec, const ChannelSet& ch,
                                 const RenewableTrace& re) {
  const int L = params.relays, B = params.slots;
  FeasibilityReport rep;
  auto fail = [&](FeasibilityReport::Kind k, int l, int b, double lhs, double rhs) {
    rep.feasible = false;
    rep.kind = k;
    rep.relay = l;
    rep.slot = b;
    rep.lhs = lhs;
    rep.rhs = rhs;
    return rep;
  };

  const EnergyLedger ledger = roll_ledger(params, eps, dec, ch, re);
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l) {
      const double need = ledger.consumed(l, b) + params.leak_j;
      if (need > ledger.stored(l, b))
        return fail(FeasibilityReport::Kind::consumed_budget, l, b, need, ledger.stored(l, b));
    }
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l) {
      const double level = ledger.stored(l, b) + ledger.harvested(l, b);
      if (level > params.storage_max_j)
        return fail(FeasibilityReport::Kind::storage_capacity, l, b, level, params.storage_max_j);
    }
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l) {
      const double p = dec.p_r(l, b);
      if (!(p >= 0.0) || p > params.pr_max_w)
        return fail(FeasibilityReport::Kind::relay_power, l, b, p, params.pr_max_w);
    }
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l) {
      const double bta = dec.beta(l, b);
      if (!(bta >= 0.0) || bta > 1.0)
        return fail(FeasibilityReport::Kind::split_range, l, b, bta, 1.0);
    }
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l)
      if (eps(l, b) != 0 && eps(l, b) != 1)
        return fail(FeasibilityReport::Kind::selection_binary, l, b, eps(l, b), 1.0);
  return rep;
}

double amplification_gain(const SystemParams& params, const ContinuousDecision& dec,
                          const ChannelSet& ch, int l, int b, bool neglect_noise) {
  const double s = terminal_rf_power(params, ch, l, b);
  const double beta = dec.beta(l, b);
  if (neglect_noise && !(beta > 0.0))
    throw std::domain_error("amplification_gain: beta must be positive when neglecting noise");
  const double denom = neglect_noise ? beta * s : beta * s + params.noise_w;
  if (!(denom > 0.0)) throw std::domain_error("amplification_gain: zero received power");
  return std::sqrt(dec.p_r(l, b) / denom);
}

RateResult snr_and_rate(const SystemParams& params, const SelectionMatrix& eps,
                        const ContinuousDecision& dec, const ChannelSet& ch,
                        bool neglect_noise) {
  const int L = params.relays, B = params.slots;
  RateResult out;
  out.snr = Eigen::MatrixXd::Zero(B, 2);
  out.rate = Eigen::MatrixXd::Zero(B, 2);
  const double term_power[2] = {params.p1_w, params.p2_w};
  for (int b = 0; b < B; ++b) {
    for (int q = 0; q < 2; ++q) {
      // q is the receiving terminal; the partner's transmission is the signal.
      const int partner = 1 - q;
      double signal_amp = 0.0;
      double noise_amp = 0.0;
      for (int l = 0; l < L; ++l) {
        if (eps(l, b) == 0) continue;
        const double w = amplification_gain(params, dec, ch, l, b, neglect_noise);
        const double hq = std::abs(q == 0 ? ch.h1r(l, b) : ch.h2r(l, b));
        const double hpartner = std::abs(q == 0 ? ch.h2r(l, b) : ch.h1r(l, b));
        signal_amp += w * std::sqrt(dec.beta(l, b)) * hq * hpartner;
        noise_amp += w * w * hq * hq;
      }
      const double gamma =
          term_power[partner] * signal_amp * signal_amp / (params.noise_w * (1.0 + noise_amp));
      out.snr(b, q) = gamma;
      out.rate(b, q) = params.bandwidth_hz * (params.tc_s / 2.0) * std::log2(1.0 + gamma);
    }
  }
  return out;
}

double utility(const RateResult& rates, UtilityKind kind) {
  if (kind == UtilityKind::max_sum) return rates.rate.sum();
  return rates.rate.minCoeff();
}

}  // namespace twreh
