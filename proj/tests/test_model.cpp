#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <limits>
#include <random>

#include "twreh/model.hpp"
#include "twreh/rng.hpp"

using namespace twreh;

namespace {

// Small fixed scenarios used across tests.
SystemParams tiny_params(int relays, int slots) {
  SystemParams p;
  p.relays = relays;
  p.slots = slots;
  return p;
}

// All-ones unit channels for hand-computable cases.
ChannelSet unit_channels(int relays, int slots) {
  ChannelSet ch;
  ch.h1r = Eigen::MatrixXcd::Ones(relays, slots);
  ch.h2r = Eigen::MatrixXcd::Ones(relays, slots);
  ch.hrr.assign(static_cast<std::size_t>(slots), Eigen::MatrixXcd::Zero(relays, relays));
  return ch;
}

RenewableTrace constant_renewable(int relays, int slots, double watts) {
  return Eigen::MatrixXd::Constant(relays, slots, watts);
}

double phi_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }
double phi_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

// ---------- conversions ----------

TEST_CASE("power unit conversions round-trip and hit known anchors") {
  CHECK(dbm_to_watt(0.0) == doctest::Approx(1e-3).epsilon(1e-14));
  CHECK(dbm_to_watt(30.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(watt_to_dbm(1e-3) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(dbm_to_watt(-141.0) == doctest::Approx(7.9432823472427895e-18).epsilon(1e-14));
  for (double dbm : {-141.0, -30.0, 0.0, 10.0, 27.5})
    CHECK(watt_to_dbm(dbm_to_watt(dbm)) == doctest::Approx(dbm).epsilon(1e-12));
  CHECK_THROWS_AS(watt_to_dbm(0.0), std::domain_error);
  CHECK_THROWS_AS(linear_to_db(-1.0), std::domain_error);
  CHECK(db_to_linear(linear_to_db(0.37)) == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("default parameters pass validation and encode the reference system") {
  SystemParams p;
  CHECK_NOTHROW(p.validate());
  CHECK(p.noise_w == doctest::Approx(dbm_to_watt(-141.0)).epsilon(1e-14));
  CHECK(p.battery_init_j == doctest::Approx(p.storage_max_j / 2.0));
}

TEST_CASE("parameter validation rejects out-of-range values") {
  auto expect_throw = [](auto mutate) {
    SystemParams p;
    mutate(p);
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  };
  expect_throw([](SystemParams& p) { p.relays = 0; });
  expect_throw([](SystemParams& p) { p.slots = 0; });
  expect_throw([](SystemParams& p) { p.tc_s = 0.0; });
  expect_throw([](SystemParams& p) { p.eta_rf = 1.5; });
  expect_throw([](SystemParams& p) { p.noise_w = 0.0; });
  expect_throw([](SystemParams& p) { p.battery_init_j = 99.0; });
  expect_throw([](SystemParams& p) { p.re_hi_w = p.re_lo_w; });
}

// ---------- path loss ----------

TEST_CASE("free-space loss at 50 m and 2.45 GHz matches the hand-computed value") {
  SystemParams p;
  CHECK(path_loss_db(p, 50.0) == doctest::Approx(74.2044939600597).epsilon(1e-12));
  CHECK(std::fabs(path_loss_db(p, 50.0) - 74.21) < 0.01);
}

TEST_CASE("loss vanishes when the log argument is one and doubles add 6.02 dB") {
  SystemParams p;
  const double d_unit = p.light_speed / (4.0 * M_PI * p.carrier_hz);
  CHECK(path_loss_db(p, d_unit) == doctest::Approx(0.0).epsilon(1e-10));
  for (double d : {1.0, 13.7, 50.0, 200.0})
    CHECK(path_loss_db(p, 2.0 * d) - path_loss_db(p, d) ==
          doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(path_loss_db(p, 0.0), std::domain_error);
}

TEST_CASE("a nonzero environment offset shifts the loss additively") {
  SystemParams p;
  const double base = path_loss_db(p, 80.0);
  p.pl_los_db = 3.5;
  CHECK(path_loss_db(p, 80.0) == doctest::Approx(base + 3.5).epsilon(1e-12));
}

// ---------- geometry ----------

TEST_CASE("sampled geometry puts terminals at opposite rim points and relays inside") {
  SystemParams p;
  p.relays = 64;
  const Geometry g = sample_geometry(p, 7);
  const double r = p.area_diameter_m / 2.0;
  CHECK(distance(g.terminals[0], g.terminals[1]) == doctest::Approx(p.area_diameter_m));
  for (const auto& pos : g.relays)
    CHECK(distance(pos, {0.0, 0.0}) <= r + 1e-12);
  CHECK(sample_geometry(p, 7).relays == g.relays);
  CHECK(sample_geometry(p, 8).relays != g.relays);
}

// ---------- rng primitives ----------

TEST_CASE("stream mixing decorrelates substreams of one seed") {
  CHECK(mix_seed(42, 0) != mix_seed(42, 1));
  CHECK(mix_seed(42, 1) != mix_seed(43, 1));
  Rng a(mix_seed(42, 0)), b(mix_seed(42, 1));
  CHECK(a.uniform01() != b.uniform01());
}

TEST_CASE("the normal quantile inverts the normal distribution function") {
  for (double u : {1e-9, 1e-4, 0.1, 0.5, 0.77, 0.9999, 1.0 - 1e-9}) {
    const double x = normal_ppf(u);
    CHECK(normal_cdf(x) == doctest::Approx(u).epsilon(1e-9));
  }
  CHECK(normal_ppf(0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(normal_ppf(0.0), std::domain_error);
  CHECK_THROWS_AS(normal_ppf(1.0), std::domain_error);
}

TEST_CASE("bounded normal draws stay inside their interval") {
  Rng rng(5);
  for (int i = 0; i < 20000; ++i) {
    const double x = rng.truncated_normal(2.0, 0.5, 0.0, 2.4);
    CHECK(x >= 0.0);
    CHECK(x <= 2.4);
  }
  CHECK(rng.truncated_normal(2.0, 0.0, 0.0, 2.4) == 2.0);
  CHECK(rng.truncated_normal(99.0, 0.0, 0.0, 2.4) == 2.4);
  CHECK_THROWS_AS(rng.truncated_normal(2.0, 0.5, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(rng.truncated_normal(2.0, -0.5, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("bounded normal sample mean matches the closed-form moment") {
  // E[X] = mu + sd * (pdf(alpha) - pdf(beta)) / (cdf(beta) - cdf(alpha))
  const double mu = 2.0, sd = 0.5, lo = 0.0, hi = 2.4;
  const double alpha = (lo - mu) / sd, beta = (hi - mu) / sd;
  const double want = mu + sd * (phi_pdf(alpha) - phi_pdf(beta)) / (phi_cdf(beta) - phi_cdf(alpha));
  CHECK(want == doctest::Approx(1.81629680757077).epsilon(1e-10));
  Rng rng(17);
  double acc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) acc += rng.truncated_normal(mu, sd, lo, hi);
  CHECK(acc / n == doctest::Approx(want).epsilon(0.01));
}

// ---------- channels ----------

TEST_CASE("channel draws are reproducible and shaped per link and slot") {
  SystemParams p = tiny_params(3, 5);
  const Geometry g = sample_geometry(p, 11);
  const ChannelSet a = sample_channels(p, g, 21);
  const ChannelSet b = sample_channels(p, g, 21);
  const ChannelSet c = sample_channels(p, g, 22);
  CHECK(a.h1r.cwiseEqual(b.h1r).all());
  CHECK(a.h2r.cwiseEqual(b.h2r).all());
  REQUIRE(a.hrr.size() == 5);
  for (int s = 0; s < 5; ++s) {
    CHECK(a.hrr[s].cwiseEqual(b.hrr[s]).all());
    for (int l = 0; l < 3; ++l) CHECK(a.hrr[s](l, l) == std::complex<double>(0.0, 0.0));
  }
  CHECK_FALSE(a.h1r.cwiseEqual(c.h1r).all());
}

TEST_CASE("an overwhelming line-of-sight factor pins gains to the loss profile") {
  SystemParams p = tiny_params(4, 3);
  p.rician_k_db = 600.0;  // deterministic limit
  const Geometry g = sample_geometry(p, 3);
  const ChannelSet ch = sample_channels(p, g, 9);
  for (int l = 0; l < p.relays; ++l) {
    const double pl1 = db_to_linear(path_loss_db(p, distance(g.terminals[0], g.relays[l])));
    const double pl2 = db_to_linear(path_loss_db(p, distance(g.terminals[1], g.relays[l])));
    for (int b = 0; b < p.slots; ++b) {
      CHECK(std::abs(ch.h1r(l, b)) * std::sqrt(pl1) == doctest::Approx(1.0).epsilon(1e-10));
      CHECK(std::abs(ch.h2r(l, b)) * std::sqrt(pl2) == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("fading power averages to one over a hundred thousand draws") {
  SystemParams p = tiny_params(50, 1000);
  const Geometry g = sample_geometry(p, 13);
  const ChannelSet ch = sample_channels(p, g, 31);
  double acc = 0.0;
  long count = 0;
  for (int l = 0; l < p.relays; ++l) {
    const double pl1 = db_to_linear(path_loss_db(p, distance(g.terminals[0], g.relays[l])));
    const double pl2 = db_to_linear(path_loss_db(p, distance(g.terminals[1], g.relays[l])));
    for (int b = 0; b < p.slots; ++b) {
      acc += std::norm(ch.h1r(l, b)) * pl1 + std::norm(ch.h2r(l, b)) * pl2;
      count += 2;
    }
  }
  CHECK(count == 100000);
  CHECK(acc / static_cast<double>(count) == doctest::Approx(1.0).epsilon(0.01));
}

// ---------- renewable source ----------

TEST_CASE("renewable draws respect the configured interval and determinism") {
  SystemParams p = tiny_params(3, 200);
  const RenewableTrace a = sample_renewable(p, 41);
  CHECK(a.rows() == 3);
  CHECK(a.cols() == 200);
  CHECK((a.array() >= p.re_lo_w).all());
  CHECK((a.array() <= p.re_hi_w).all());
  CHECK(sample_renewable(p, 41).cwiseEqual(a).all());
  CHECK_FALSE(sample_renewable(p, 42).cwiseEqual(a).all());
  p.re_sd_w = 0.0;
  const RenewableTrace c = sample_renewable(p, 1);
  CHECK((c.array() == p.re_mean_w).all());
}

// ---------- energy accounting ----------

TEST_CASE("a forwarding relay that splits nothing harvests only the ambient term") {
  SystemParams p = tiny_params(1, 1);
  SelectionMatrix eps = Eigen::MatrixXi::Ones(1, 1);
  ContinuousDecision dec{Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1)};
  const ChannelSet ch = unit_channels(1, 1);
  CHECK(harvested_energy(p, eps, dec, ch, constant_renewable(1, 1, 0.0), 0, 0) == 0.0);
  // 0.3 * 2 W * 0.175 s = 0.105 J from the ambient source alone
  CHECK(harvested_energy(p, eps, dec, ch, constant_renewable(1, 1, 2.0), 0, 0) ==
        doctest::Approx(0.105).epsilon(1e-12));
}

TEST_CASE("an idle relay with no active peers harvests like a full-split forwarder") {
  SystemParams p = tiny_params(2, 1);
  const Geometry g = sample_geometry(p, 2);
  const ChannelSet ch = sample_channels(p, g, 5);
  const RenewableTrace re = constant_renewable(2, 1, 1.3);
  ContinuousDecision dec{Eigen::MatrixXd::Constant(2, 1, 0.0), Eigen::MatrixXd::Zero(2, 1)};
  const double idle = harvested_energy(p, zero_selection(p), dec, ch, re, 0, 0);
  SelectionMatrix eps = zero_selection(p);
  eps(0, 0) = 1;
  const double selected_full_split = harvested_energy(p, eps, dec, ch, re, 0, 0);
  CHECK(idle == doctest::Approx(selected_full_split).epsilon(1e-12));
}

TEST_CASE("splitting off more signal power strictly reduces the harvest") {
  SystemParams p = tiny_params(1, 1);
  const Geometry g = sample_geometry(p, 6);
  const ChannelSet ch = sample_channels(p, g, 6);
  const RenewableTrace re = constant_renewable(1, 1, 2.0);
  SelectionMatrix eps = Eigen::MatrixXi::Ones(1, 1);
  double prev = std::numeric_limits<double>::infinity();
  for (double beta : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    ContinuousDecision dec{Eigen::MatrixXd::Constant(1, 1, beta), Eigen::MatrixXd::Zero(1, 1)};
    const double h = harvested_energy(p, eps, dec, ch, re, 0, 0);
    CHECK(h < prev);
    prev = h;
  }
}

TEST_CASE("an idle relay also scavenges the power radiated by forwarding peers") {
  SystemParams p = tiny_params(2, 1);
  ChannelSet ch = unit_channels(2, 1);
  ch.hrr[0](0, 1) = std::complex<double>(2.0, 0.0);  // strong crosstalk from relay 1 to relay 0
  ch.hrr[0](1, 0) = std::complex<double>(2.0, 0.0);
  SelectionMatrix eps = zero_selection(tiny_params(2, 1));
  eps(1, 0) = 1;
  ContinuousDecision dec{Eigen::MatrixXd::Ones(2, 1), Eigen::MatrixXd::Constant(2, 1, 5e-4)};
  const RenewableTrace re = constant_renewable(2, 1, 0.0);
  // idle relay 0: RF from terminals (P1+P2 over unit gains) plus 4x the peer power
  const double s = p.p1_w + p.p2_w;
  const double expect = p.eta_rf * (s + 4.0 * 5e-4) * p.tc_s / 2.0;
  CHECK(harvested_energy(p, eps, dec, ch, re, 0, 0) == doctest::Approx(expect).epsilon(1e-12));
  const HarvestSplit split = harvested_energy_split(p, eps, dec, ch, re, 0, 0);
  CHECK(split.rf == doctest::Approx(expect).epsilon(1e-12));
  CHECK(split.re == 0.0);
  CHECK(split.rf + split.re ==
        doctest::Approx(harvested_energy(p, eps, dec, ch, re, 0, 0)).epsilon(1e-12));
}

TEST_CASE("idle consumption burns the offset plus full-slot receive electronics") {
  SystemParams p = tiny_params(1, 1);
  ContinuousDecision dec{Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1)};
  // 1.2*0.175 + 1.2e-3*0.175 = 0.21021 J
  CHECK(consumed_energy(p, zero_selection(p), dec, 0, 0) ==
        doctest::Approx(0.21021).epsilon(1e-12));
}

TEST_CASE("forwarding consumption charges half a slot of electronics") {
  SystemParams p = tiny_params(1, 1);
  SelectionMatrix eps = Eigen::MatrixXi::Ones(1, 1);
  ContinuousDecision dec{Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1)};
  CHECK(consumed_energy(p, eps, dec, 0, 0) ==
        doctest::Approx(p.a0_w * p.tc_s + p.a_r_w * p.tc_s / 2.0).epsilon(1e-12));
  dec.p_r(0, 0) = 8e-4;
  CHECK(consumed_energy(p, eps, dec, 0, 0) ==
        doctest::Approx(p.a0_w * p.tc_s + (p.a_r_w + p.a_t * 8e-4) * p.tc_s / 2.0).epsilon(1e-12));
  p.a0_w = p.a_r_w = p.a_t = 0.0;
  CHECK(consumed_energy(p, eps, dec, 0, 0) == 0.0);
}

TEST_CASE("the battery recurrence reproduces the single-slot hand computation") {
  // stored = 1 + 0.105 - 0.21021 - 0.01 = 0.88479
  SystemParams p = tiny_params(1, 1);
  p.battery_init_j = 1.0;
  p.eta_rf = 0.0;  // isolate the ambient harvest at 0.105 J
  SelectionMatrix eps = zero_selection(p);
  ContinuousDecision dec = silent_decision(p);
  const ChannelSet ch = unit_channels(1, 1);
  const RenewableTrace re = constant_renewable(1, 1, 2.0);
  const EnergyLedger led = roll_ledger(p, eps, dec, ch, re);
  CHECK(led.harvested(0, 0) == doctest::Approx(0.105).epsilon(1e-12));
  CHECK(led.consumed(0, 0) == doctest::Approx(0.21021).epsilon(1e-12));
  CHECK(led.stored(0, 0) == 1.0);
  CHECK(led.stored(0, 1) == doctest::Approx(0.88479).epsilon(1e-12));
}

TEST_CASE("a dead battery with no flows stays identically empty") {
  SystemParams p = tiny_params(2, 4);
  p.battery_init_j = 0.0;
  p.leak_j = 0.0;
  p.a0_w = p.a_r_w = p.a_t = 0.0;
  p.eta_rf = 0.0;
  p.eta_re = 0.0;
  const EnergyLedger led = roll_ledger(p, zero_selection(p), silent_decision(p),
                                       unit_channels(2, 4), constant_renewable(2, 4, 2.0));
  CHECK((led.stored.array() == 0.0).all());
}

TEST_CASE("ledger prefix sums telescope exactly for random decisions") {
  std::mt19937 meta(404);
  for (int trial = 0; trial < 50; ++trial) {
    SystemParams p = tiny_params(3, 6);
    const Geometry g = sample_geometry(p, 1000 + trial);
    const ChannelSet ch = sample_channels(p, g, 2000 + trial);
    const RenewableTrace re = sample_renewable(p, 3000 + trial);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    SelectionMatrix eps(3, 6);
    ContinuousDecision dec{Eigen::MatrixXd(3, 6), Eigen::MatrixXd(3, 6)};
    for (int l = 0; l < 3; ++l)
      for (int b = 0; b < 6; ++b) {
        eps(l, b) = u01(meta) < 0.5 ? 1 : 0;
        dec.beta(l, b) = u01(meta);
        dec.p_r(l, b) = u01(meta) * p.pr_max_w;
      }
    const EnergyLedger led = roll_ledger(p, eps, dec, ch, re);
    for (int l = 0; l < 3; ++l) {
      double acc = p.battery_init_j;
      for (int b = 0; b < 6; ++b) acc += led.harvested(l, b) - led.consumed(l, b) - p.leak_j;
      CHECK(led.stored(l, 6) == doctest::Approx(acc).epsilon(1e-12));
      CHECK(std::fabs(led.stored(l, 6) - acc) <= 1e-12 * std::max(1.0, std::fabs(acc)));
    }
  }
}

// ---------- feasibility ----------

TEST_CASE("silent relays are feasible exactly while the cumulative budget holds") {
  SystemParams p = tiny_params(1, 1);
  p.eta_rf = p.eta_re = 0.0;
  const double need = p.a0_w * p.tc_s + p.a_r_w * p.tc_s + p.leak_j;  // 0.22021 J
  p.battery_init_j = need;
  const ChannelSet ch = unit_channels(1, 1);
  const RenewableTrace re = constant_renewable(1, 1, 0.0);
  CHECK(check_feasible(p, zero_selection(p), silent_decision(p), ch, re).feasible);
  p.battery_init_j = need - 1e-9;
  const FeasibilityReport rep = check_feasible(p, zero_selection(p), silent_decision(p), ch, re);
  CHECK_FALSE(rep.feasible);
  CHECK(rep.kind == FeasibilityReport::Kind::consumed_budget);
  CHECK(rep.relay == 0);
  CHECK(rep.slot == 0);
  CHECK_FALSE(rep.message().empty());
}

TEST_CASE("an empty battery cannot power forwarding in the first slot") {
  SystemParams p = tiny_params(2, 3);
  p.battery_init_j = 0.0;
  SelectionMatrix eps = zero_selection(p);
  eps(1, 0) = 1;
  ContinuousDecision dec = silent_decision(p);
  dec.p_r(1, 0) = 5e-4;
  const Geometry g = sample_geometry(p, 4);
  const ChannelSet ch = sample_channels(p, g, 4);
  const FeasibilityReport rep = check_feasible(p, eps, dec, ch, sample_renewable(p, 4));
  CHECK_FALSE(rep.feasible);
  CHECK(rep.kind == FeasibilityReport::Kind::consumed_budget);
  CHECK(rep.slot == 0);
}

TEST_CASE("an over-cap transmit power is reported with its indices") {
  SystemParams p = tiny_params(2, 2);
  SelectionMatrix eps = zero_selection(p);
  eps(1, 1) = 1;
  ContinuousDecision dec = silent_decision(p);
  dec.p_r(1, 1) = p.pr_max_w + 1.0;
  const Geometry g = sample_geometry(p, 14);
  const ChannelSet ch = sample_channels(p, g, 14);
  const FeasibilityReport rep = check_feasible(p, eps, dec, ch, sample_renewable(p, 14));
  CHECK_FALSE(rep.feasible);
  CHECK(rep.kind == FeasibilityReport::Kind::relay_power);
  CHECK(rep.relay == 1);
  CHECK(rep.slot == 1);
  CHECK(rep.lhs == doctest::Approx(p.pr_max_w + 1.0));
  CHECK(rep.rhs == doctest::Approx(p.pr_max_w));
}

TEST_CASE("overfilling the battery trips the capacity check") {
  SystemParams p = tiny_params(1, 1);
  p.battery_init_j = 4.95;
  const ChannelSet ch = unit_channels(1, 1);
  const RenewableTrace re = constant_renewable(1, 1, 2.0);  // harvests 0.105 J while idle
  const FeasibilityReport rep = check_feasible(p, zero_selection(p), silent_decision(p), ch, re);
  CHECK_FALSE(rep.feasible);
  CHECK(rep.kind == FeasibilityReport::Kind::storage_capacity);
}

TEST_CASE("split ratios and selection flags outside their sets are flagged") {
  SystemParams p = tiny_params(1, 1);
  ContinuousDecision dec = silent_decision(p);
  dec.beta(0, 0) = 1.2;
  const ChannelSet ch = unit_channels(1, 1);
  const RenewableTrace re = constant_renewable(1, 1, 0.0);
  FeasibilityReport rep = check_feasible(p, zero_selection(p), dec, ch, re);
  CHECK_FALSE(rep.feasible);
  CHECK(rep.kind == FeasibilityReport::Kind::split_range);

  SelectionMatrix eps = zero_selection(p);
  eps(0, 0) = 2;
  rep = check_feasible(p, eps, silent_decision(p), ch, re);
  CHECK_FALSE(rep.feasible);
  CHECK(rep.kind == FeasibilityReport::Kind::selection_binary);
}

TEST_CASE("feasibility verdicts agree with an independent recomputation") {
  std::mt19937 meta(505);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  int infeasible_seen = 0;
  for (int trial = 0; trial < 200; ++trial) {
    SystemParams p = tiny_params(2, 4);
    p.battery_init_j = u01(meta) * 0.9;  // scarce energy: both verdicts well represented
    const Geometry g = sample_geometry(p, 7000 + trial);
    const ChannelSet ch = sample_channels(p, g, 8000 + trial);
    const RenewableTrace re = sample_renewable(p, 9000 + trial);
    SelectionMatrix eps(2, 4);
    ContinuousDecision dec{Eigen::MatrixXd(2, 4), Eigen::MatrixXd(2, 4)};
    for (int l = 0; l < 2; ++l)
      for (int b = 0; b < 4; ++b) {
        eps(l, b) = u01(meta) < 0.5 ? 1 : 0;
        dec.beta(l, b) = u01(meta);
        dec.p_r(l, b) = u01(meta) * p.pr_max_w;
      }

    // Straight-line recomputation from the definitions, kept separate from
    // the library's ledger helpers.
    bool ok = true;
    for (int l = 0; l < 2 && ok; ++l) {
      double stored = p.battery_init_j;
      for (int b = 0; b < 4 && ok; ++b) {
        const double s = p.p1_w * std::norm(ch.h1r(l, b)) + p.p2_w * std::norm(ch.h2r(l, b));
        double harv, cons;
        if (eps(l, b) == 1) {
          harv = (1.0 - dec.beta(l, b)) * p.eta_rf * s * p.tc_s / 2.0 +
                 p.eta_re * re(l, b) * p.tc_s;
          cons = p.a0_w * p.tc_s + (p.a_r_w + p.a_t * dec.p_r(l, b)) * p.tc_s / 2.0;
        } else {
          double peers = 0.0;
          for (int j = 0; j < 2; ++j)
            if (j != l && eps(j, b) == 1) peers += dec.p_r(j, b) * std::norm(ch.hrr[b](l, j));
          harv = p.eta_rf * (s + peers) * p.tc_s / 2.0 + p.eta_re * re(l, b) * p.tc_s;
          cons = p.a0_w * p.tc_s + p.a_r_w * p.tc_s;
        }
        if (cons + p.leak_j > stored) ok = false;
        if (stored + harv > p.storage_max_j) ok = false;
        if (dec.p_r(l, b) < 0.0 || dec.p_r(l, b) > p.pr_max_w) ok = false;
        if (dec.beta(l, b) < 0.0 || dec.beta(l, b) > 1.0) ok = false;
        stored += harv - cons - p.leak_j;
      }
    }

    const FeasibilityReport rep = check_feasible(p, eps, dec, ch, re);
    CHECK(rep.feasible == ok);
    if (!rep.feasible) ++infeasible_seen;
  }
  CHECK(infeasible_seen > 20);
  CHECK(infeasible_seen < 200);
}

// ---------- gain, SNR, rate ----------

TEST_CASE("relay gain anchors: zero power, matched noise, noise-free dominance") {
  SystemParams p = tiny_params(1, 1);
  ChannelSet ch = unit_channels(1, 1);
  ContinuousDecision dec{Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1)};
  CHECK(amplification_gain(p, dec, ch, 0, 0) == 0.0);

  // make P1|h1|^2 + P2|h2|^2 equal the noise floor
  SystemParams q = p;
  q.p1_w = q.noise_w / 2.0;
  q.p2_w = q.noise_w / 2.0;
  dec.p_r(0, 0) = 7e-4;
  CHECK(amplification_gain(q, dec, ch, 0, 0) ==
        doctest::Approx(std::sqrt(7e-4 / (2.0 * q.noise_w))).epsilon(1e-12));

  std::mt19937 meta(606);
  std::uniform_real_distribution<double> u01(0.01, 1.0);
  for (int i = 0; i < 50; ++i) {
    SystemParams r = tiny_params(1, 1);
    const Geometry g = sample_geometry(r, 100 + i);
    const ChannelSet rc = sample_channels(r, g, 200 + i);
    ContinuousDecision d2{Eigen::MatrixXd::Constant(1, 1, u01(meta)),
                          Eigen::MatrixXd::Constant(1, 1, u01(meta) * r.pr_max_w)};
    CHECK(amplification_gain(r, d2, rc, 0, 0, true) >= amplification_gain(r, d2, rc, 0, 0));
  }
}

TEST_CASE("the noise-free gain rejects a zero split ratio") {
  SystemParams p = tiny_params(1, 1);
  ChannelSet ch = unit_channels(1, 1);
  ContinuousDecision dec{Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Constant(1, 1, 1e-4)};
  CHECK_THROWS_AS(amplification_gain(p, dec, ch, 0, 0, true), std::domain_error);
  CHECK_NOTHROW(amplification_gain(p, dec, ch, 0, 0, false));
}

TEST_CASE("no forwarding relays means zero SNR and zero rate everywhere") {
  SystemParams p = tiny_params(3, 4);
  const Geometry g = sample_geometry(p, 19);
  const ChannelSet ch = sample_channels(p, g, 19);
  const RateResult rr = snr_and_rate(p, zero_selection(p), silent_decision(p), ch);
  CHECK((rr.snr.array() == 0.0).all());
  CHECK((rr.rate.array() == 0.0).all());
  CHECK(utility(rr, UtilityKind::max_sum) == 0.0);
  CHECK(utility(rr, UtilityKind::max_min) == 0.0);
}

TEST_CASE("a crafted link with SNR three carries 0.35 Mbit in its half slot") {
  SystemParams p = tiny_params(1, 1);
  ChannelSet ch = unit_channels(1, 1);
  SelectionMatrix eps = Eigen::MatrixXi::Ones(1, 1);
  // with unit gains and beta=1: w^2 = pr/(2P+N0); solve SNR(pr) = 3
  const double P = p.p1_w, n0 = p.noise_w;
  const double pr = 3.0 * n0 * (2.0 * P + n0) / (P - 3.0 * n0);
  ContinuousDecision dec{Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Constant(1, 1, pr)};
  const RateResult rr = snr_and_rate(p, eps, dec, ch);
  CHECK(rr.snr(0, 0) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(rr.snr(0, 1) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(rr.rate(0, 0) == doctest::Approx(0.35e6).epsilon(1e-9));
}

TEST_CASE("symmetric links face identical SNR at both terminals") {
  SystemParams p = tiny_params(1, 2);
  const Geometry g = sample_geometry(p, 23);
  ChannelSet ch = sample_channels(p, g, 23);
  ch.h2r = ch.h1r;  // equal magnitudes by construction
  SelectionMatrix eps = Eigen::MatrixXi::Ones(1, 2);
  ContinuousDecision dec{Eigen::MatrixXd::Constant(1, 2, 0.6),
                         Eigen::MatrixXd::Constant(1, 2, 8e-4)};
  const RateResult rr = snr_and_rate(p, eps, dec, ch);
  for (int b = 0; b < 2; ++b) CHECK(rr.snr(b, 0) == doctest::Approx(rr.snr(b, 1)).epsilon(1e-12));
}

TEST_CASE("more transmit power at a lone forwarding relay never hurts its SNR") {
  // single-relay link quality is a rising saturating curve in the relay power
  for (int i = 0; i < 20; ++i) {
    SystemParams p = tiny_params(1, 1);
    const Geometry g = sample_geometry(p, 300 + i);
    const ChannelSet ch = sample_channels(p, g, 400 + i);
    SelectionMatrix eps = Eigen::MatrixXi::Ones(1, 1);
    double prev0 = -1.0, prev1 = -1.0;
    for (int step = 1; step <= 30; ++step) {
      ContinuousDecision dec{Eigen::MatrixXd::Constant(1, 1, 0.5),
                             Eigen::MatrixXd::Constant(1, 1, step * p.pr_max_w / 30.0)};
      const RateResult rr = snr_and_rate(p, eps, dec, ch, true);
      CHECK(rr.snr(0, 0) >= prev0);
      CHECK(rr.snr(0, 1) >= prev1);
      prev0 = rr.snr(0, 0);
      prev1 = rr.snr(0, 1);
    }
  }
}

TEST_CASE("harvested terminal RF falls off with the fourth power of doubled range") {
  // with exponent 2, doubling every distance scales each linear loss by 4
  SystemParams p = tiny_params(1, 1);
  p.rician_k_db = 600.0;  // deterministic gains isolate the loss scaling
  Geometry g;
  g.terminals[0] = {-25.0, 0.0};
  g.terminals[1] = {25.0, 0.0};
  g.relays = {{4.0, 6.0}};
  Geometry g2 = g;
  g2.terminals[0] = {-50.0, 0.0};
  g2.terminals[1] = {50.0, 0.0};
  g2.relays = {{8.0, 12.0}};
  const ChannelSet ch = sample_channels(p, g, 77);
  const ChannelSet ch2 = sample_channels(p, g2, 77);
  SelectionMatrix eps = Eigen::MatrixXi::Ones(1, 1);
  ContinuousDecision dec{Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1)};
  const RenewableTrace re = constant_renewable(1, 1, 0.0);
  const double near = harvested_energy(p, eps, dec, ch, re, 0, 0);
  const double far = harvested_energy(p, eps, dec, ch2, re, 0, 0);
  CHECK(near / far == doctest::Approx(4.0).epsilon(1e-9));
}

// ---------- utilities and selection helpers ----------

TEST_CASE("published per-slot rates reduce to their stated worst case and total") {
  Eigen::MatrixXd rate(4, 2);
  rate << 2.44, 2.84, 3.36, 2.88, 3.44, 2.60, 3.20, 2.88;
  RateResult rr{Eigen::MatrixXd::Zero(4, 2), rate};
  CHECK(utility(rr, UtilityKind::max_min) == doctest::Approx(2.44).epsilon(1e-12));
  CHECK(utility(rr, UtilityKind::max_sum) == doctest::Approx(23.64).epsilon(1e-12));
  CHECK(std::fabs(utility(rr, UtilityKind::max_sum) - 23.63) <= 0.02);
}

TEST_CASE("selection codes enumerate matrices in column-within-row bit order") {
  SystemParams p = tiny_params(2, 2);
  SelectionMatrix eps = zero_selection(p);
  CHECK(selection_code(eps) == 0);
  eps(0, 1) = 1;
  CHECK(selection_code(eps) == 2);
  eps(1, 0) = 1;
  CHECK(selection_code(eps) == 6);
  eps(0, 1) = 0;
  CHECK(selection_code(eps) == 4);
  ContinuousDecision dec = silent_decision(p);
  CHECK((dec.beta.array() == 1.0).all());
  CHECK((dec.p_r.array() == 0.0).all());
}
