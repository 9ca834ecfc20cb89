#include "twreh/subproblem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

namespace twreh {

namespace {

double terminal_rf(const SystemParams& params, const ChannelSet& ch, int l, int b) {
  return params.p1_w * std::norm(ch.h1r(l, b)) + params.p2_w * std::norm(ch.h2r(l, b));
}

double rate_bits(const SystemParams& params, double gamma) {
  return params.bandwidth_hz * (params.tc_s / 2.0) * std::log2(1.0 + gamma);
}

// Everything the constraint/objective assembly needs, precomputed once.
struct BuildContext {
  const SystemParams& params;
  const Eigen::MatrixXi& state;
  const VariableLayout& layout;
  BuildOptions options;
  int L, B;
  Eigen::MatrixXd s;         // terminal RF power arriving at each cell
  Eigen::MatrixXd zeta1hat;  // harvest forfeited per unit (selection x ratio)
  Eigen::MatrixXd zeta3;     // selection-independent harvest
  Eigen::MatrixXd habs1, habs2;
  std::vector<Eigen::MatrixXd> pick; // B of L x L: pickup energy per unit peer power
  double c_idle = 0, c_fwd = 0, slope = 0, dcons = 0;
  bool beta_var = true;
  double beta_fix = 1.0;
};

BuildContext make_context(const SystemParams& params, const Eigen::MatrixXi& state,
                          const ChannelSet& ch, const RenewableTrace& re,
                          const VariableLayout& layout, const BuildOptions& options) {
  const int L = params.relays, B = params.slots;
  if (state.rows() != L || state.cols() != B)
    throw std::invalid_argument("subproblem: selection state has wrong shape");
  for (int l = 0; l < L; ++l)
    for (int b = 0; b < B; ++b)
      if (state(l, b) != 0 && state(l, b) != 1 && state(l, b) != kRelaxedCell)
        throw std::invalid_argument("subproblem: selection state entries must be 0, 1, or -1");
  BuildContext cx{params, state, layout, options, L, B, {}, {}, {}, {}, {}, {}};
  const double half = params.tc_s / 2.0;
  cx.s.resize(L, B);
  cx.zeta1hat.resize(L, B);
  cx.zeta3.resize(L, B);
  cx.habs1.resize(L, B);
  cx.habs2.resize(L, B);
  for (int l = 0; l < L; ++l)
    for (int b = 0; b < B; ++b) {
      cx.s(l, b) = terminal_rf(params, ch, l, b);
      cx.zeta1hat(l, b) = params.eta_rf * cx.s(l, b) * half;
      cx.zeta3(l, b) = cx.zeta1hat(l, b) + params.eta_re * re(l, b) * params.tc_s;
      cx.habs1(l, b) = std::abs(ch.h1r(l, b));
      cx.habs2(l, b) = std::abs(ch.h2r(l, b));
    }
  cx.pick.resize(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    cx.pick[b] = Eigen::MatrixXd::Zero(L, L);
    for (int l = 0; l < L; ++l)
      for (int j = 0; j < L; ++j)
        if (j != l) cx.pick[b](l, j) = params.eta_rf * half * std::norm(ch.hrr[b](l, j));
  }
  cx.c_idle = params.a0_w * params.tc_s + params.a_r_w * params.tc_s;
  cx.c_fwd = params.a0_w * params.tc_s + params.a_r_w * half;
  cx.slope = params.a_t * half;
  cx.dcons = params.a_r_w * half;
  cx.beta_var = !options.fixed_beta.has_value();
  if (options.fixed_beta) {
    cx.beta_fix = *options.fixed_beta;
    if (!(cx.beta_fix > 0.0 && cx.beta_fix <= 1.0))
      throw std::invalid_argument("subproblem: fixed splitting ratio must be in (0,1]");
  }
  return cx;
}

// Signed-term accumulator for one inequality written as (sum of terms) <= 0;
// positive terms form the constraint numerator, negated negative terms its
// denominator (to be condensed into a monomial).
struct SignedPosy {
  gp::Posynomial pos, neg;
  void add(double coeff, std::initializer_list<std::pair<int, double>> exps = {}) {
    if (coeff > 0.0)
      pos.add(gp::make_monomial(coeff, exps));
    else if (coeff < 0.0)
      neg.add(gp::make_monomial(-coeff, exps));
  }
};

// Consumption of cell (l,t), scaled by sign, appended to sp.
void emit_consumption(const BuildContext& cx, int l, int t, double sign, SignedPosy& sp) {
  const int st = cx.state(l, t);
  if (st == 0) {
    sp.add(sign * cx.c_idle);
    return;
  }
  const int pid = cx.layout.p_id(l, t);
  if (st == 1) {
    sp.add(sign * cx.c_fwd);
    sp.add(sign * cx.slope, {{pid, 1.0}});
  } else {  // relaxed: idle baseline, selection variable scales the difference
    const int eid = cx.layout.eps_id(l, t);
    sp.add(sign * cx.c_idle);
    sp.add(-sign * cx.dcons, {{eid, 1.0}});
    sp.add(sign * cx.slope, {{eid, 1.0}, {pid, 1.0}});
  }
}

// Harvest of cell (l,t), scaled by sign, appended to sp.
void emit_harvest(const BuildContext& cx, int l, int t, double sign, SignedPosy& sp) {
  const int st = cx.state(l, t);
  sp.add(sign * cx.zeta3(l, t));
  auto split_loss = [&](double scale, std::initializer_list<std::pair<int, double>> exps) {
    sp.add(-sign * cx.zeta1hat(l, t) * scale, exps);
  };
  auto peers = [&](double scale, int extra_eps) {
    for (int j = 0; j < cx.L; ++j) {
      if (j == l || cx.state(j, t) == 0) continue;
      const double c = sign * scale * cx.pick[static_cast<std::size_t>(t)](l, j);
      const int pj = cx.layout.p_id(j, t);
      if (cx.state(j, t) == 1) {
        if (extra_eps < 0)
          sp.add(c, {{pj, 1.0}});
        else
          sp.add(c, {{extra_eps, 1.0}, {pj, 1.0}});
      } else {
        const int ej = cx.layout.eps_id(j, t);
        if (extra_eps < 0)
          sp.add(c, {{ej, 1.0}, {pj, 1.0}});
        else
          sp.add(c, {{extra_eps, 1.0}, {ej, 1.0}, {pj, 1.0}});
      }
    }
  };
  if (st == 1) {
    if (cx.beta_var)
      split_loss(1.0, {{cx.layout.beta_id(l, t), 1.0}});
    else
      split_loss(cx.beta_fix, {});
  } else if (st == 0) {
    peers(1.0, -1);
  } else {  // relaxed
    const int eid = cx.layout.eps_id(l, t);
    if (cx.beta_var)
      split_loss(1.0, {{eid, 1.0}, {cx.layout.beta_id(l, t), 1.0}});
    else
      split_loss(cx.beta_fix, {{eid, 1.0}});
    peers(1.0, -1);       // idle-style pickup ...
    peers(-1.0, eid);     // ... scaled down by the selection variable
  }
}

// The energy inequality at (l,b): storage=false gives the spending budget
// (cumulative consumption+leak within banked energy), storage=true the
// battery-capacity form (banked + incoming harvest within the cap).
SignedPosy energy_inequality(const BuildContext& cx, int l, int b, bool storage) {
  SignedPosy sp;
  if (!storage) {
    for (int t = 0; t <= b; ++t) emit_consumption(cx, l, t, +1.0, sp);
    sp.add(cx.params.leak_j * (b + 1));
    sp.add(-cx.params.battery_init_j);
    for (int t = 0; t < b; ++t) emit_harvest(cx, l, t, -1.0, sp);
  } else {
    sp.add(cx.params.battery_init_j);
    for (int t = 0; t <= b; ++t) emit_harvest(cx, l, t, +1.0, sp);
    sp.add(-cx.params.storage_max_j);
    for (int t = 0; t < b; ++t) {
      emit_consumption(cx, l, t, -1.0, sp);
      sp.add(-cx.params.leak_j);
    }
  }
  return sp;
}

// Noise-plus-unity factor f and signal posynomial sig for slot b and receiving
// terminal q, under the noise-neglected relay gain. sig omits cells whose
// terminal RF power is zero (they cannot contribute signal).
void rate_posynomials(const BuildContext& cx, int b, int q, gp::Posynomial& f,
                      gp::Posynomial& sig) {
  f = gp::Posynomial{};
  sig = gp::Posynomial{};
  f.add(gp::make_monomial(1.0));
  const double p_partner = (q == 0) ? cx.params.p2_w : cx.params.p1_w;
  struct SigTerm {
    double d;
    int pid, eid;
  };
  std::vector<SigTerm> sig_terms;
  for (int l = 0; l < cx.L; ++l) {
    if (cx.state(l, b) == 0) continue;
    const double s = cx.s(l, b);
    if (!(s > 0.0)) continue;
    const double hq = (q == 0) ? cx.habs1(l, b) : cx.habs2(l, b);
    const int pid = cx.layout.p_id(l, b);
    const int eid = (cx.state(l, b) == kRelaxedCell) ? cx.layout.eps_id(l, b) : -1;
    gp::Monomial noise_term =
        gp::make_monomial(cx.beta_var ? hq * hq / s : hq * hq / (cx.beta_fix * s), {{pid, 1.0}});
    if (cx.beta_var) noise_term.mul_var(cx.layout.beta_id(l, b), -1.0);
    if (eid >= 0) noise_term.mul_var(eid, 1.0);
    f.add(std::move(noise_term));
    sig_terms.push_back({cx.habs1(l, b) * cx.habs2(l, b) / std::sqrt(s), pid, eid});
  }
  for (std::size_t i = 0; i < sig_terms.size(); ++i)
    for (std::size_t j = i; j < sig_terms.size(); ++j) {
      const auto& a = sig_terms[i];
      const auto& c = sig_terms[j];
      gp::Monomial m = gp::make_monomial(p_partner * a.d * c.d * (i == j ? 1.0 : 2.0));
      m.mul_var(a.pid, 0.5).mul_var(c.pid, 0.5);
      if (a.eid >= 0) m.mul_var(a.eid, 1.0);
      if (c.eid >= 0) m.mul_var(c.eid, 1.0);
      sig.add(std::move(m));
    }
}

bool slot_active(const Eigen::MatrixXi& state, int b) {
  for (int l = 0; l < state.rows(); ++l)
    if (state(l, b) != 0) return true;
  return false;
}

// Relaxed-gain SNR per (slot, terminal) at an assignment, from the same
// posynomial assembly the surrogate uses (exact for binary states too).
Eigen::MatrixXd assignment_snr(const BuildContext& cx, const gp::Assignment& z) {
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(cx.B, 2);
  for (int b = 0; b < cx.B; ++b) {
    if (!slot_active(cx.state, b)) continue;
    for (int q = 0; q < 2; ++q) {
      gp::Posynomial f, sig;
      rate_posynomials(cx, b, q, f, sig);
      if (sig.empty()) continue;
      gamma(b, q) = sig.eval(z) / (cx.params.noise_w * f.eval(z));
    }
  }
  return gamma;
}

double max_energy_ratio(const BuildContext& cx, const gp::Assignment& z, bool& storage_worst) {
  double worst = 0.0;
  storage_worst = false;
  for (int l = 0; l < cx.L; ++l)
    for (int b = 0; b < cx.B; ++b)
      for (int kind = 0; kind < 2; ++kind) {
        const SignedPosy sp = energy_inequality(cx, l, b, kind == 1);
        const double ratio = sp.pos.eval(z) / sp.neg.eval(z);
        if (ratio > worst) {
          worst = ratio;
          storage_worst = (kind == 1);
        }
      }
  return worst;
}

BuildOptions options_from(const ContinuousSolveSettings& s, UtilityKind kind) {
  BuildOptions o;
  o.kind = kind;
  o.fixed_beta = s.fixed_beta;
  o.p_floor = s.p_floor;
  o.beta_floor = s.beta_floor;
  o.eps_floor = s.eps_floor;
  o.gamma_floor = s.gamma_floor;
  return o;
}

}  // namespace

// ---------- coefficient views ----------

EnergyCoefficients energy_coefficients(const SystemParams& params, const SelectionMatrix& eps,
                                       const ChannelSet& ch, const RenewableTrace& re) {
  const int L = params.relays, B = params.slots;
  const double half = params.tc_s / 2.0;
  EnergyCoefficients co;
  co.zeta1.resize(L, B);
  co.zeta2.resize(L, B);
  co.zeta3.resize(L, B);
  co.theta1.resize(L, B);
  co.theta2.resize(L, B);
  for (int l = 0; l < L; ++l)
    for (int b = 0; b < B; ++b) {
      const double s = terminal_rf(params, ch, l, b);
      const bool on = eps(l, b) != 0;
      co.zeta1(l, b) = on ? params.eta_rf * s * half : 0.0;
      co.zeta2(l, b) = on ? 0.0 : params.eta_rf * half;
      co.zeta3(l, b) = params.eta_rf * s * half + params.eta_re * re(l, b) * params.tc_s;
      co.theta1(l, b) = on ? params.a_t * half : 0.0;
      co.theta2(l, b) = params.a0_w * params.tc_s + (on ? params.a_r_w * half : params.a_r_w * params.tc_s);
    }
  co.peer_gain.assign(static_cast<std::size_t>(B), Eigen::MatrixXd::Zero(L, L));
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l)
      for (int j = 0; j < L; ++j)
        if (j != l) co.peer_gain[static_cast<std::size_t>(b)](l, j) = std::norm(ch.hrr[b](l, j));
  return co;
}

double coefficient_harvest(const EnergyCoefficients& co, const SelectionMatrix& eps,
                           const ContinuousDecision& dec, int l, int b) {
  double pickup = 0.0;
  for (int j = 0; j < eps.rows(); ++j)
    if (j != l && eps(j, b) != 0)
      pickup += dec.p_r(j, b) * co.peer_gain[static_cast<std::size_t>(b)](l, j);
  return -co.zeta1(l, b) * dec.beta(l, b) + co.zeta2(l, b) * pickup + co.zeta3(l, b);
}

double coefficient_consumption(const EnergyCoefficients& co, const ContinuousDecision& dec, int l,
                               int b) {
  return co.theta1(l, b) * dec.p_r(l, b) + co.theta2(l, b);
}

SnrCoefficients snr_coefficients(const SystemParams& params, const SelectionMatrix& eps,
                                 const ChannelSet& ch) {
  const int L = params.relays, B = params.slots;
  SnrCoefficients co;
  co.delta1[0].setZero(L, B);
  co.delta1[1].setZero(L, B);
  co.delta2.setZero(L, B);
  for (int l = 0; l < L; ++l)
    for (int b = 0; b < B; ++b) {
      if (eps(l, b) == 0) continue;
      const double s = terminal_rf(params, ch, l, b);
      if (!(s > 0.0)) continue;
      const double h1 = std::abs(ch.h1r(l, b)), h2 = std::abs(ch.h2r(l, b));
      co.delta1[0](l, b) = h1 * h1 / s;
      co.delta1[1](l, b) = h2 * h2 / s;
      co.delta2(l, b) = h1 * h2 / std::sqrt(s);
    }
  return co;
}

// ---------- layout ----------

VariableLayout make_layout(const Eigen::MatrixXi& state, UtilityKind kind, bool beta_variable) {
  const int L = static_cast<int>(state.rows()), B = static_cast<int>(state.cols());
  VariableLayout lay;
  lay.beta_id = Eigen::MatrixXi::Constant(L, B, -1);
  lay.p_id = Eigen::MatrixXi::Constant(L, B, -1);
  lay.eps_id = Eigen::MatrixXi::Constant(L, B, -1);
  int next = 0;
  if (beta_variable)
    for (int l = 0; l < L; ++l)
      for (int b = 0; b < B; ++b)
        if (state(l, b) != 0) lay.beta_id(l, b) = next++;
  for (int l = 0; l < L; ++l)
    for (int b = 0; b < B; ++b)
      if (state(l, b) != 0) lay.p_id(l, b) = next++;
  for (int l = 0; l < L; ++l)
    for (int b = 0; b < B; ++b)
      if (state(l, b) == kRelaxedCell) lay.eps_id(l, b) = next++;
  if (kind == UtilityKind::max_min) lay.gamma_id = next++;
  lay.num_vars = next;
  return lay;
}

ContinuousDecision VariableLayout::decision(const gp::Assignment& z, double snap) const {
  const int L = static_cast<int>(beta_id.rows()), B = static_cast<int>(beta_id.cols());
  ContinuousDecision dec;
  dec.beta = Eigen::MatrixXd::Ones(L, B);
  dec.p_r = Eigen::MatrixXd::Zero(L, B);
  for (int l = 0; l < L; ++l)
    for (int b = 0; b < B; ++b) {
      if (beta_id(l, b) >= 0) dec.beta(l, b) = std::min(1.0, z[static_cast<std::size_t>(beta_id(l, b))]);
      if (p_id(l, b) >= 0) {
        const double p = z[static_cast<std::size_t>(p_id(l, b))];
        dec.p_r(l, b) = (p < snap) ? 0.0 : p;
      }
    }
  return dec;
}

gp::Assignment VariableLayout::assignment(const SystemParams& params, const ContinuousDecision& dec,
                                          double eps_fill, double gamma_fill) const {
  gp::Assignment z(static_cast<std::size_t>(num_vars), 1.0);
  const int L = static_cast<int>(beta_id.rows()), B = static_cast<int>(beta_id.cols());
  for (int l = 0; l < L; ++l)
    for (int b = 0; b < B; ++b) {
      if (beta_id(l, b) >= 0)
        z[static_cast<std::size_t>(beta_id(l, b))] = std::clamp(dec.beta(l, b), 1e-6, 1.0);
      if (p_id(l, b) >= 0)
        z[static_cast<std::size_t>(p_id(l, b))] = std::clamp(dec.p_r(l, b), 1e-9, params.pr_max_w);
      if (eps_id(l, b) >= 0) z[static_cast<std::size_t>(eps_id(l, b))] = eps_fill;
    }
  if (gamma_id >= 0) z[static_cast<std::size_t>(gamma_id)] = gamma_fill;
  return z;
}

Eigen::MatrixXd VariableLayout::selection_values(const Eigen::MatrixXi& state,
                                                 const gp::Assignment& z) const {
  const int L = static_cast<int>(state.rows()), B = static_cast<int>(state.cols());
  Eigen::MatrixXd v(L, B);
  for (int l = 0; l < L; ++l)
    for (int b = 0; b < B; ++b)
      v(l, b) = (state(l, b) == kRelaxedCell) ? z[static_cast<std::size_t>(eps_id(l, b))]
                                              : static_cast<double>(state(l, b));
  return v;
}

// ---------- construction ----------

gp::GpProblem build_subproblem(const SystemParams& params, const Eigen::MatrixXi& state,
                               const ChannelSet& ch, const RenewableTrace& re,
                               const VariableLayout& layout, const gp::Assignment& z_ref,
                               const BuildOptions& options) {
  const BuildContext cx = make_context(params, state, ch, re, layout, options);
  if (static_cast<int>(z_ref.size()) != layout.num_vars)
    throw std::invalid_argument("build_subproblem: reference point has wrong dimension");
  for (double v : z_ref)
    if (!(v > 0.0))
      throw std::invalid_argument("build_subproblem: reference point must be strictly positive");

  gp::GpProblem prob;
  prob.num_vars = layout.num_vars;
  prob.bounds.assign(static_cast<std::size_t>(layout.num_vars), gp::VarBounds{});
  for (int l = 0; l < cx.L; ++l)
    for (int b = 0; b < cx.B; ++b) {
      if (layout.beta_id(l, b) >= 0)
        prob.bounds[static_cast<std::size_t>(layout.beta_id(l, b))].lo = options.beta_floor;
      if (layout.p_id(l, b) >= 0)
        prob.bounds[static_cast<std::size_t>(layout.p_id(l, b))].lo = options.p_floor;
      if (layout.eps_id(l, b) >= 0)
        prob.bounds[static_cast<std::size_t>(layout.eps_id(l, b))].lo = options.eps_floor;
    }
  if (layout.gamma_id >= 0)
    prob.bounds[static_cast<std::size_t>(layout.gamma_id)].lo = options.gamma_floor;

  auto add_energy = [&](bool storage) {
    for (int l = 0; l < cx.L; ++l)
      for (int b = 0; b < cx.B; ++b) {
        SignedPosy sp = energy_inequality(cx, l, b, storage);
        const double ratio = sp.pos.eval(z_ref) / sp.neg.eval(z_ref);
        if (!(ratio <= 1.0 + 1e-9)) {
          std::ostringstream os;
          os << "build_subproblem: reference point violates the "
             << (storage ? "storage capacity" : "energy budget") << " at relay " << l << ", slot "
             << b << " (ratio " << ratio << ")";
          throw std::invalid_argument(os.str());
        }
        prob.constraints.push_back(
            gp::PosyRatio{std::move(sp.pos), gp::condense(sp.neg, z_ref)});
      }
  };
  add_energy(false);
  add_energy(true);

  for (int l = 0; l < cx.L; ++l)
    for (int b = 0; b < cx.B; ++b)
      if (layout.p_id(l, b) >= 0) {
        gp::Posynomial cap;
        cap.add(gp::make_monomial(1.0 / params.pr_max_w, {{layout.p_id(l, b), 1.0}}));
        prob.constraints.push_back(gp::PosyRatio{std::move(cap)});
      }
  for (int l = 0; l < cx.L; ++l)
    for (int b = 0; b < cx.B; ++b)
      if (layout.beta_id(l, b) >= 0) {
        gp::Posynomial cap;
        cap.add(gp::make_monomial(1.0, {{layout.beta_id(l, b), 1.0}}));
        prob.constraints.push_back(gp::PosyRatio{std::move(cap)});
      }
  for (int l = 0; l < cx.L; ++l)
    for (int b = 0; b < cx.B; ++b)
      if (layout.eps_id(l, b) >= 0) {
        gp::Posynomial cap;
        cap.add(gp::make_monomial(1.0, {{layout.eps_id(l, b), 1.0}}));
        prob.constraints.push_back(gp::PosyRatio{std::move(cap)});
      }

  if (options.kind == UtilityKind::max_sum) {
    for (int b = 0; b < cx.B; ++b) {
      if (!slot_active(state, b)) continue;
      for (int q = 0; q < 2; ++q) {
        gp::Posynomial f, sig;
        rate_posynomials(cx, b, q, f, sig);
        if (sig.empty()) continue;  // carries no signal; factor is constant 1
        gp::Posynomial g = f;
        for (gp::Monomial m : sig.terms) {
          m.coeff /= params.noise_w;
          g.add(std::move(m));
        }
        prob.objective.push_back(gp::PosyRatio{std::move(f), gp::condense(g, z_ref)});
      }
    }
  } else {
    if (layout.gamma_id < 0)
      throw std::invalid_argument("build_subproblem: layout lacks the rate-floor variable");
    gp::Posynomial inv_floor;
    inv_floor.add(gp::make_monomial(1.0, {{layout.gamma_id, -1.0}}));
    prob.objective.push_back(gp::PosyRatio{std::move(inv_floor)});
    for (int b = 0; b < cx.B; ++b) {
      if (!slot_active(state, b)) {
        std::ostringstream os;
        os << "build_subproblem: slot " << b
           << " is silent; the worst-link objective is degenerate";
        throw std::invalid_argument(os.str());
      }
      for (int q = 0; q < 2; ++q) {
        gp::Posynomial f, sig;
        rate_posynomials(cx, b, q, f, sig);
        if (sig.empty()) {
          std::ostringstream os;
          os << "build_subproblem: slot " << b << " carries no signal toward terminal " << (q + 1)
             << "; the worst-link objective is degenerate";
          throw std::invalid_argument(os.str());
        }
        gp::Posynomial num;
        for (gp::Monomial m : f.terms) {
          m.coeff *= params.noise_w;
          m.mul_var(layout.gamma_id, 1.0);
          num.add(std::move(m));
        }
        prob.constraints.push_back(gp::PosyRatio{std::move(num), gp::condense(sig, z_ref)});
      }
    }
  }
  return prob;
}

gp::GpProblem build_max_sum(const SystemParams& params, const SelectionMatrix& eps,
                            const ChannelSet& ch, const RenewableTrace& re,
                            const gp::Assignment& z_ref) {
  BuildOptions options;
  options.kind = UtilityKind::max_sum;
  return build_subproblem(params, eps, ch, re, make_layout(eps, UtilityKind::max_sum), z_ref,
                          options);
}

gp::GpProblem build_max_min(const SystemParams& params, const SelectionMatrix& eps,
                            const ChannelSet& ch, const RenewableTrace& re,
                            const gp::Assignment& z_ref) {
  BuildOptions options;
  options.kind = UtilityKind::max_min;
  return build_subproblem(params, eps, ch, re, make_layout(eps, UtilityKind::max_min), z_ref,
                          options);
}

// ---------- scoring ----------

UtilityScore true_utility(const SystemParams& params, const SelectionMatrix& eps,
                          const ContinuousDecision& dec, const ChannelSet& ch,
                          const RenewableTrace& re, UtilityKind kind) {
  UtilityScore score;
  score.value = utility(snr_and_rate(params, eps, dec, ch, false), kind);
  score.report = check_feasible(params, eps, dec, ch, re);
  return score;
}

// ---------- initial point ----------

std::optional<gp::Assignment> initial_assignment(const SystemParams& params,
                                                 const Eigen::MatrixXi& state,
                                                 const ChannelSet& ch, const RenewableTrace& re,
                                                 const VariableLayout& layout,
                                                 const BuildOptions& options) {
  const BuildContext cx = make_context(params, state, ch, re, layout, options);
  gp::Assignment z(static_cast<std::size_t>(layout.num_vars), 1.0);
  for (int l = 0; l < cx.L; ++l)
    for (int b = 0; b < cx.B; ++b) {
      if (layout.beta_id(l, b) >= 0) z[static_cast<std::size_t>(layout.beta_id(l, b))] = 0.5;
      if (layout.p_id(l, b) >= 0)
        z[static_cast<std::size_t>(layout.p_id(l, b))] = params.pr_max_w / 2.0;
      if (layout.eps_id(l, b) >= 0) z[static_cast<std::size_t>(layout.eps_id(l, b))] = 0.5;
    }

  bool ok = false;
  for (int round = 0; round < 64; ++round) {
    bool storage_worst = false;
    if (max_energy_ratio(cx, z, storage_worst) <= 1.0) {
      ok = true;
      break;
    }
    bool moved = false;
    for (int l = 0; l < cx.L; ++l)
      for (int b = 0; b < cx.B; ++b) {
        if (layout.p_id(l, b) >= 0) {
          auto& p = z[static_cast<std::size_t>(layout.p_id(l, b))];
          const double next = std::max(options.p_floor, p / 2.0);
          moved |= next != p;
          p = next;
        }
        if (storage_worst && layout.beta_id(l, b) >= 0) {
          auto& bt = z[static_cast<std::size_t>(layout.beta_id(l, b))];
          const double next = (1.0 + bt) / 2.0;
          moved |= next != bt;
          bt = next;
        }
      }
    if (!moved) break;
  }
  if (!ok) {
    bool storage_worst = false;
    if (max_energy_ratio(cx, z, storage_worst) > 1.0) return std::nullopt;
  }

  if (layout.gamma_id >= 0) {
    const Eigen::MatrixXd gamma = assignment_snr(cx, z);
    double gmin = std::numeric_limits<double>::infinity();
    for (int b = 0; b < cx.B; ++b)
      if (slot_active(state, b)) gmin = std::min(gmin, std::min(gamma(b, 0), gamma(b, 1)));
    if (!std::isfinite(gmin) || gmin <= 0.0)
      z[static_cast<std::size_t>(layout.gamma_id)] = options.gamma_floor;
    else
      z[static_cast<std::size_t>(layout.gamma_id)] =
          std::max(options.gamma_floor, gmin * (1.0 - 1e-9));
  }
  return z;
}

// ---------- solves ----------

namespace {

// Utility value implied by the relaxed-gain SNR matrix.
double relaxed_utility(const SystemParams& params, const Eigen::MatrixXd& gamma, UtilityKind kind) {
  double total = 0.0;
  double worst = std::numeric_limits<double>::infinity();
  for (int b = 0; b < gamma.rows(); ++b)
    for (int q = 0; q < 2; ++q) {
      const double r = rate_bits(params, gamma(b, q));
      total += r;
      worst = std::min(worst, r);
    }
  return kind == UtilityKind::max_sum ? total : worst;
}

// Interval test: true only when EVERY completion of the state is infeasible.
// Per relay, the spending and capacity ledgers are bracketed with each cell's
// consumption/harvest replaced by its best case over all decisions; the cells
// decouple, so the brackets are sound (if loose).
bool certainly_infeasible(const BuildContext& cx) {
  const double beta_hi = cx.beta_var ? 1.0 : cx.beta_fix;  // least harvest
  const double beta_lo = cx.beta_var ? 0.0 : cx.beta_fix;  // most harvest
  for (int l = 0; l < cx.L; ++l) {
    double min_cons = 0, max_cons = 0, min_harv = 0, max_harv = 0;
    for (int b = 0; b < cx.B; ++b) {
      const int st = cx.state(l, b);
      double pickup_max = 0;
      if (st != 1)
        for (int j = 0; j < cx.L; ++j)
          if (j != l && cx.state(j, b) != 0)
            pickup_max += cx.pick[static_cast<std::size_t>(b)](l, j) * cx.params.pr_max_w;
      const double h_sel_min = cx.zeta3(l, b) - cx.zeta1hat(l, b) * beta_hi;
      const double h_sel_max = cx.zeta3(l, b) - cx.zeta1hat(l, b) * beta_lo;
      const double slot_min_harv = (st == 0)   ? cx.zeta3(l, b)
                                   : (st == 1) ? h_sel_min
                                               : std::min(cx.zeta3(l, b), h_sel_min);
      const double slot_max_harv = (st == 0)   ? cx.zeta3(l, b) + pickup_max
                                   : (st == 1) ? h_sel_max
                                               : std::max(cx.zeta3(l, b) + pickup_max, h_sel_max);
      const double fwd_max = cx.c_fwd + cx.slope * cx.params.pr_max_w;
      const double slot_min_cons = (st == 0) ? cx.c_idle : cx.c_fwd;
      const double slot_max_cons = (st == 0)   ? cx.c_idle
                                   : (st == 1) ? fwd_max
                                               : std::max(cx.c_idle, fwd_max);
      // Spending: cumulative consumption + leakage must fit the banked energy.
      if (min_cons + slot_min_cons + (b + 1) * cx.params.leak_j >
          cx.params.battery_init_j + max_harv)
        return true;
      // Capacity: banked energy + incoming harvest must fit the battery.
      if (cx.params.battery_init_j + min_harv + slot_min_harv >
          cx.params.storage_max_j + max_cons + b * cx.params.leak_j)
        return true;
      min_cons += slot_min_cons;
      max_cons += slot_max_cons;
      min_harv += slot_min_harv;
      max_harv += slot_max_harv;
    }
  }
  return false;
}

// Feasibility probe used when a pattern's utility is known to be zero: try the
// least-stressful decisions (no transmit power; ratio 1 then ratio 0).
ContinuousSolveResult probe_zero_utility(const SystemParams& params, const SelectionMatrix& eps,
                                         const ChannelSet& ch, const RenewableTrace& re,
                                         UtilityKind kind) {
  ContinuousSolveResult out;
  for (double beta : {1.0, 0.0}) {
    ContinuousDecision dec;
    dec.beta = Eigen::MatrixXd::Constant(params.relays, params.slots, beta);
    dec.p_r = Eigen::MatrixXd::Zero(params.relays, params.slots);
    const FeasibilityReport rep = check_feasible(params, eps, dec, ch, re);
    if (rep.feasible || beta == 0.0) {
      out.feasible = rep.feasible;
      out.decision = dec;
      out.report = rep;
      out.utility = rep.feasible
                        ? true_utility(params, eps, dec, ch, re, kind).value
                        : -std::numeric_limits<double>::infinity();
    }
    if (out.feasible) break;
  }
  return out;
}

}  // namespace

ContinuousSolveResult solve_continuous(const SystemParams& params, const SelectionMatrix& eps,
                                       const ChannelSet& ch, const RenewableTrace& re,
                                       UtilityKind kind, const ContinuousSolveSettings& settings) {
  for (int l = 0; l < eps.rows(); ++l)
    for (int b = 0; b < eps.cols(); ++b)
      if (eps(l, b) != 0 && eps(l, b) != 1)
        throw std::invalid_argument("solve_continuous: selection matrix must be binary");

  bool all_silent = true, any_silent_slot = false;
  for (int b = 0; b < eps.cols(); ++b) {
    const bool active = slot_active(eps, b);
    all_silent &= !active;
    any_silent_slot |= !active;
  }
  if (all_silent || (kind == UtilityKind::max_min && any_silent_slot))
    return probe_zero_utility(params, eps, ch, re, kind);

  const BuildOptions options = options_from(settings, kind);
  const VariableLayout layout = make_layout(eps, kind, !settings.fixed_beta.has_value());
  const std::optional<gp::Assignment> z0 =
      initial_assignment(params, eps, ch, re, layout, options);

  ContinuousSolveResult out;
  if (!z0) {
    const ContinuousDecision dec = silent_decision(params);
    out.decision = dec;
    out.report = check_feasible(params, eps, dec, ch, re);
    return out;
  }

  gp::ScaSettings sca = settings.sca;
  sca.initial_point = *z0;
  const auto builder = [&](const gp::Assignment& z_ref) {
    return build_subproblem(params, eps, ch, re, layout, z_ref, options);
  };

  std::vector<gp::Assignment> candidates;
  try {
    gp::ScaResult res = gp::run_sca(builder, sca);
    out.trace = res.trace;
    out.sca_iterations = static_cast<int>(res.trace.size()) - 1;
    out.gp_solves = res.solves;
    candidates = std::move(res.iterates);
    std::reverse(candidates.begin(), candidates.end());
  } catch (const std::exception&) {
    candidates.push_back(*z0);
  }

  for (const gp::Assignment& z : candidates) {
    ContinuousDecision dec = layout.decision(z);
    if (settings.fixed_beta) {
      for (int l = 0; l < eps.rows(); ++l)
        for (int b = 0; b < eps.cols(); ++b)
          if (eps(l, b) != 0) dec.beta(l, b) = *settings.fixed_beta;
    }
    const FeasibilityReport rep = check_feasible(params, eps, dec, ch, re);
    if (rep.feasible) {
      out.feasible = true;
      out.decision = dec;
      out.report = rep;
      out.utility = true_utility(params, eps, dec, ch, re, kind).value;
      return out;
    }
    if (out.report.kind == FeasibilityReport::Kind::none) out.report = rep;
  }
  out.decision = layout.decision(*z0);
  return out;
}

RelaxedSolveResult solve_relaxed(const SystemParams& params, const Eigen::MatrixXi& state,
                                 const ChannelSet& ch, const RenewableTrace& re, UtilityKind kind,
                                 const ContinuousSolveSettings& settings) {
  RelaxedSolveResult out;
  out.eps_value = Eigen::MatrixXd::Zero(params.relays, params.slots);
  out.decision = silent_decision(params);

  if (kind == UtilityKind::max_min) {
    for (int b = 0; b < state.cols(); ++b)
      if (!slot_active(state, b)) {
        // Every completion keeps this slot silent, so the worst-link utility
        // of the whole subtree is exactly zero.
        out.solved = true;
        out.bound = 0.0;
        for (int l = 0; l < state.rows(); ++l)
          for (int t = 0; t < state.cols(); ++t)
            out.eps_value(l, t) = state(l, t) == 1 ? 1.0 : 0.0;
        return out;
      }
  }
  bool any_active = false;
  for (int b = 0; b < state.cols(); ++b) any_active |= slot_active(state, b);
  if (!any_active) {
    out.solved = true;
    out.bound = 0.0;
    return out;
  }

  const BuildOptions options = options_from(settings, kind);
  const VariableLayout layout = make_layout(state, kind, !settings.fixed_beta.has_value());
  const std::optional<gp::Assignment> z0 =
      initial_assignment(params, state, ch, re, layout, options);
  if (!z0) {
    out.certified_infeasible =
        certainly_infeasible(make_context(params, state, ch, re, layout, options));
    return out;  // without a certificate the bound stays +infinity
  }

  gp::ScaSettings sca = settings.sca;
  sca.initial_point = *z0;
  const auto builder = [&](const gp::Assignment& z_ref) {
    return build_subproblem(params, state, ch, re, layout, z_ref, options);
  };
  gp::Assignment z_final;
  try {
    gp::ScaResult res = gp::run_sca(builder, sca);
    z_final = std::move(res.z);
    out.sca_iterations = static_cast<int>(res.trace.size()) - 1;
  } catch (const std::exception&) {
    return out;  // solver trouble: leave the bound at +infinity
  }

  const BuildContext cx = make_context(params, state, ch, re, layout, options);
  out.solved = true;
  out.bound = relaxed_utility(params, assignment_snr(cx, z_final), kind);
  out.eps_value = layout.selection_values(state, z_final);
  out.decision = layout.decision(z_final);
  if (settings.fixed_beta) {
    for (int l = 0; l < state.rows(); ++l)
      for (int b = 0; b < state.cols(); ++b)
        if (state(l, b) != 0) out.decision.beta(l, b) = *settings.fixed_beta;
  }
  return out;
}

}  // namespace twreh
