#include "twreh/gp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace twreh::gp {

// ---------- posynomial algebra ----------

double Monomial::eval(const Assignment& z) const {
  double v = coeff;
  for (const auto& [id, e] : exps) v *= std::pow(z.at(static_cast<std::size_t>(id)), e);
  return v;
}

double Monomial::log_eval(const Assignment& z) const {
  if (!(coeff > 0.0)) throw std::domain_error("Monomial::log_eval: nonpositive coefficient");
  double v = std::log(coeff);
  for (const auto& [id, e] : exps) v += e * std::log(z.at(static_cast<std::size_t>(id)));
  return v;
}

Monomial& Monomial::mul(const Monomial& other) {
  coeff *= other.coeff;
  for (const auto& [id, e] : other.exps) mul_var(id, e);
  return *this;
}

Monomial& Monomial::mul_var(int id, double exponent) {
  if (exponent == 0.0) return *this;
  auto it = std::lower_bound(exps.begin(), exps.end(), id,
                             [](const auto& p, int v) { return p.first < v; });
  if (it != exps.end() && it->first == id) {
    it->second += exponent;
    if (it->second == 0.0) exps.erase(it);
  } else {
    exps.insert(it, {id, exponent});
  }
  return *this;
}

Monomial Monomial::pow(double p) const {
  Monomial out;
  out.coeff = std::pow(coeff, p);
  out.exps = exps;
  for (auto& [id, e] : out.exps) e *= p;
  return out;
}

Monomial make_monomial(double coeff, std::initializer_list<std::pair<int, double>> exps) {
  Monomial m;
  m.coeff = coeff;
  for (const auto& p : exps) m.mul_var(p.first, p.second);
  return m;
}

double Posynomial::eval(const Assignment& z) const {
  double v = 0.0;
  for (const auto& t : terms) v += t.eval(z);
  return v;
}

void Posynomial::add(Monomial m) {
  if (m.coeff < 0.0) throw std::invalid_argument("Posynomial: negative coefficient");
  if (m.coeff == 0.0) return;
  terms.push_back(std::move(m));
}

void Posynomial::add(const Posynomial& p) {
  for (const auto& t : p.terms) add(t);
}

Monomial condense(const Posynomial& p, const Assignment& z_ref) {
  if (p.empty()) throw std::invalid_argument("condense: empty posynomial");
  const std::size_t k = p.terms.size();
  std::vector<double> logs(k);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    logs[i] = p.terms[i].log_eval(z_ref);
    mx = std::max(mx, logs[i]);
  }
  if (!std::isfinite(mx)) throw std::domain_error("condense: posynomial vanishes at reference");
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += std::exp(logs[i] - mx);
  const double log_sum = mx + std::log(total);

  // weight_i = share of term i at z_ref; bound = prod (term_i / weight_i)^weight_i
  Monomial out;
  double log_coeff = 0.0;
  std::vector<std::pair<int, double>> acc;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = std::exp(logs[i] - log_sum);
    if (w <= 0.0) continue; // zero-share terms drop out of the bound
    log_coeff += w * (std::log(p.terms[i].coeff) - std::log(w));
    for (const auto& [id, e] : p.terms[i].exps) {
      auto it = std::lower_bound(acc.begin(), acc.end(), id,
                                 [](const auto& q, int v) { return q.first < v; });
      if (it != acc.end() && it->first == id)
        it->second += w * e;
      else
        acc.insert(it, {id, w * e});
    }
  }
  out.coeff = std::exp(log_coeff);
  for (auto& [id, e] : acc)
    if (e != 0.0) out.exps.push_back({id, e});
  return out;
}

// ---------- problem container ----------

namespace {

double posy_log_eval(const Posynomial& p, const Assignment& z) {
  if (p.empty()) throw std::domain_error("posynomial log value: empty sum");
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(p.terms.size());
  for (std::size_t i = 0; i < p.terms.size(); ++i) {
    logs[i] = p.terms[i].log_eval(z);
    mx = std::max(mx, logs[i]);
  }
  double s = 0.0;
  for (double lv : logs) s += std::exp(lv - mx);
  return mx + std::log(s);
}

}  // namespace

double GpProblem::objective_value(const Assignment& z) const {
  return std::exp(log_objective_value(z));
}

double GpProblem::log_objective_value(const Assignment& z) const {
  double v = 0.0;
  for (const auto& r : objective) v += posy_log_eval(r.num, z) - r.den.log_eval(z);
  return v;
}

std::string GpProblem::dump() const {
  std::ostringstream os;
  auto mono = [&](const Monomial& m) {
    os << m.coeff;
    for (const auto& [id, e] : m.exps) os << " z" << id << ":" << e;
    os << "\n";
  };
  auto ratio = [&](const PosyRatio& r) {
    for (const auto& t : r.num.terms) mono(t);
    if (!r.den.exps.empty() || r.den.coeff != 1.0) {
      os << "/ ";
      mono(r.den);
    }
  };
  os << "minimize product of " << objective.size() << " factor(s)\n";
  for (std::size_t i = 0; i < objective.size(); ++i) {
    os << "factor " << i << ":\n";
    ratio(objective[i]);
  }
  for (std::size_t i = 0; i < constraints.size(); ++i) {
    os << "constraint " << i << " <= 1:\n";
    ratio(constraints[i]);
  }
  for (std::size_t i = 0; i < equalities.size(); ++i) {
    os << "equality " << i << " == 1:\n";
    mono(equalities[i]);
  }
  for (int v = 0; v < num_vars && v < static_cast<int>(bounds.size()); ++v)
    os << "z" << v << " in [" << bounds[v].lo << ", " << bounds[v].hi << "]\n";
  return os.str();
}

// ---------- log-space convex form ----------

namespace {

LseBlock ratio_to_block(const PosyRatio& r) {
  if (r.num.empty()) throw std::invalid_argument("to_convex_form: empty posynomial numerator");
  LseBlock blk;
  for (const auto& t : r.num.terms)
    for (const auto& [id, e] : t.exps) {
      auto it = std::lower_bound(blk.cols.begin(), blk.cols.end(), id);
      if (it == blk.cols.end() || *it != id) blk.cols.insert(it, id);
    }
  const int K = static_cast<int>(r.num.terms.size());
  const int C = static_cast<int>(blk.cols.size());
  blk.A = Eigen::MatrixXd::Zero(K, C);
  blk.b.resize(K);
  for (int k = 0; k < K; ++k) {
    const Monomial& t = r.num.terms[static_cast<std::size_t>(k)];
    if (!(t.coeff > 0.0)) throw std::invalid_argument("to_convex_form: nonpositive coefficient");
    blk.b(k) = std::log(t.coeff);
    for (const auto& [id, e] : t.exps) {
      const auto pos = std::lower_bound(blk.cols.begin(), blk.cols.end(), id) - blk.cols.begin();
      blk.A(k, pos) = e;
    }
  }
  if (!(r.den.coeff > 0.0)) throw std::invalid_argument("to_convex_form: nonpositive denominator");
  blk.affine_c = -std::log(r.den.coeff);
  for (const auto& [id, e] : r.den.exps) blk.affine.push_back({id, -e});
  return blk;
}

}  // namespace

double LseBlock::value(const Eigen::VectorXd& t) const {
  double v = affine_c;
  for (const auto& [id, e] : affine) v += e * t(id);
  if (b.size() == 0) return v;
  double mx = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd y = b;
  for (int k = 0; k < A.rows(); ++k) {
    for (int c = 0; c < A.cols(); ++c) y(k) += A(k, c) * t(cols[static_cast<std::size_t>(c)]);
    mx = std::max(mx, y(k));
  }
  double s = 0.0;
  for (int k = 0; k < y.size(); ++k) s += std::exp(y(k) - mx);
  return v + mx + std::log(s);
}

Eigen::VectorXd LseBlock::gradient(const Eigen::VectorXd& t) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(t.size());
  for (const auto& [id, e] : affine) g(id) += e;
  if (b.size() == 0) return g;
  Eigen::VectorXd y = b;
  double mx = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < A.rows(); ++k) {
    for (int c = 0; c < A.cols(); ++c) y(k) += A(k, c) * t(cols[static_cast<std::size_t>(c)]);
    mx = std::max(mx, y(k));
  }
  double s = 0.0;
  for (int k = 0; k < y.size(); ++k) {
    y(k) = std::exp(y(k) - mx);
    s += y(k);
  }
  for (int k = 0; k < A.rows(); ++k) {
    const double w = y(k) / s;
    for (int c = 0; c < A.cols(); ++c) g(cols[static_cast<std::size_t>(c)]) += w * A(k, c);
  }
  return g;
}

double ConvexForm::objective_value(const Eigen::VectorXd& t) const {
  double v = 0.0;
  for (const auto& blk : objective) v += blk.value(t);
  return v;
}

ConvexForm to_convex_form(const GpProblem& gp) {
  ConvexForm cf;
  cf.n = gp.num_vars;
  for (const auto& r : gp.objective) cf.objective.push_back(ratio_to_block(r));
  for (const auto& r : gp.constraints) cf.constraints.push_back(ratio_to_block(r));
  for (const auto& m : gp.equalities) {
    if (!(m.coeff > 0.0)) throw std::invalid_argument("to_convex_form: nonpositive equality coefficient");
    AffineEq eq;
    eq.c = std::log(m.coeff);
    for (const auto& [id, e] : m.exps) eq.a.push_back({id, e});
    cf.equalities.push_back(std::move(eq));
  }
  cf.t_lo = Eigen::VectorXd::Constant(cf.n, -std::numeric_limits<double>::infinity());
  cf.t_hi = Eigen::VectorXd::Constant(cf.n, std::numeric_limits<double>::infinity());
  for (int v = 0; v < cf.n; ++v) {
    VarBounds b;
    if (v < static_cast<int>(gp.bounds.size())) b = gp.bounds[static_cast<std::size_t>(v)];
    if (!(b.lo > 0.0)) throw std::invalid_argument("to_convex_form: variable floor must be positive");
    if (!(b.hi > b.lo)) throw std::invalid_argument("to_convex_form: empty variable range");
    cf.t_lo(v) = std::log(b.lo);
    cf.t_hi(v) = std::isfinite(b.hi) ? std::log(b.hi) : std::numeric_limits<double>::infinity();
  }
  return cf;
}

// ---------- interior-point solver ----------

namespace {

// Per-block evaluation workspace. The log-sum-exp rows only touch `cols`
// (sparse), while the affine part (monomial denominators) has no curvature,
// so Hessian work stays proportional to the numerator's variable footprint.
struct BlockWork {
  const LseBlock* blk = nullptr;
  std::vector<int> supp;    // union of cols and affine ids (sorted, global ids)
  std::vector<int> col_pos; // position of each cols entry inside supp
  Eigen::VectorXd aff_supp; // affine coefficients laid out over supp
  Eigen::VectorXd tc, y, wn, u, gs;
  Eigen::MatrixXd Aw, Hs;
  double F = 0.0;

  void init(const LseBlock& b) {
    blk = &b;
    supp = b.cols;
    for (const auto& [id, e] : b.affine) {
      auto it = std::lower_bound(supp.begin(), supp.end(), id);
      if (it == supp.end() || *it != id) supp.insert(it, id);
    }
    col_pos.resize(b.cols.size());
    for (std::size_t k = 0; k < b.cols.size(); ++k)
      col_pos[k] = static_cast<int>(std::lower_bound(supp.begin(), supp.end(), b.cols[k]) - supp.begin());
    aff_supp = Eigen::VectorXd::Zero(static_cast<int>(supp.size()));
    for (const auto& [id, e] : b.affine) {
      const auto pos = std::lower_bound(supp.begin(), supp.end(), id) - supp.begin();
      aff_supp(pos) += e;
    }
    const int K = static_cast<int>(b.A.rows());
    const int C = static_cast<int>(b.A.cols());
    tc.resize(C);
    y.resize(K);
    wn.resize(K);
    u.resize(C);
    gs.resize(static_cast<int>(supp.size()));
    Aw.resize(K, C);
    Hs.resize(C, C);
  }

  double value(const Eigen::VectorXd& t) {
    double v = blk->affine_c;
    for (std::size_t i = 0; i < supp.size(); ++i) v += aff_supp(static_cast<int>(i)) * t(supp[i]);
    const int K = static_cast<int>(y.size());
    if (K == 0) return v;
    for (int c = 0; c < tc.size(); ++c) tc(c) = t(blk->cols[static_cast<std::size_t>(c)]);
    y.noalias() = blk->A * tc;
    y += blk->b;
    const double mx = y.maxCoeff();
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += std::exp(y(k) - mx);
    return v + mx + std::log(s);
  }

  // Fills F, gs (gradient over supp) and Hs (curvature over cols).
  void derivs(const Eigen::VectorXd& t) {
    F = blk->affine_c;
    for (std::size_t i = 0; i < supp.size(); ++i) F += aff_supp(static_cast<int>(i)) * t(supp[i]);
    gs = aff_supp;
    const int K = static_cast<int>(y.size());
    if (K == 0) {
      Hs.setZero();
      return;
    }
    for (int c = 0; c < tc.size(); ++c) tc(c) = t(blk->cols[static_cast<std::size_t>(c)]);
    y.noalias() = blk->A * tc;
    y += blk->b;
    const double mx = y.maxCoeff();
    double s = 0.0;
    for (int k = 0; k < K; ++k) {
      wn(k) = std::exp(y(k) - mx);
      s += wn(k);
    }
    F += mx + std::log(s);
    wn /= s;
    u.noalias() = blk->A.transpose() * wn;
    for (std::size_t k = 0; k < col_pos.size(); ++k)
      gs(col_pos[k]) += u(static_cast<int>(k));
    if (K == 1) {
      Hs.setZero(); // single-term blocks are affine
      return;
    }
    Aw.noalias() = wn.asDiagonal() * blk->A;
    Hs.noalias() = blk->A.transpose() * Aw;
    Hs.noalias() -= u * u.transpose();
  }
};

constexpr double kInf = std::numeric_limits<double>::infinity();

class Solver {
 public:
  Solver(const ConvexForm& cf, const SolverSettings& st) : cf_(cf), st_(st) {
    obj_.resize(cf.objective.size());
    for (std::size_t i = 0; i < cf.objective.size(); ++i) obj_[i].init(cf.objective[i]);
    con_.resize(cf.constraints.size());
    for (std::size_t i = 0; i < cf.constraints.size(); ++i) con_[i].init(cf.constraints[i]);
    grad_.resize(cf.n);
    hess_.resize(cf.n, cf.n);
    barrier_count_ = static_cast<int>(cf.constraints.size());
    for (int v = 0; v < cf.n; ++v) {
      if (std::isfinite(cf.t_lo(v))) ++barrier_count_;
      if (std::isfinite(cf.t_hi(v))) ++barrier_count_;
    }
    const int m = static_cast<int>(cf.equalities.size());
    if (m > 0) {
      eq_rows_ = Eigen::MatrixXd::Zero(m, cf.n);
      for (int j = 0; j < m; ++j)
        for (const auto& [id, e] : cf.equalities[static_cast<std::size_t>(j)].a)
          eq_rows_(j, id) += e;
    }
  }

  SolveReport solve(const Assignment& start);

 private:
  const ConvexForm& cf_;
  SolverSettings st_;
  std::vector<BlockWork> obj_, con_;
  Eigen::VectorXd grad_;
  Eigen::MatrixXd hess_;
  Eigen::MatrixXd eq_rows_;
  int barrier_count_ = 0;
  int iters_used_ = 0;

  double eq_residual_inf(const Eigen::VectorXd& t) const {
    double r = 0.0;
    for (const auto& eq : cf_.equalities) {
      double v = eq.c;
      for (const auto& [id, e] : eq.a) v += e * t(id);
      r = std::max(r, std::fabs(v));
    }
    return r;
  }

  // Stationarity certificate at the original problem scale. The raw barrier
  // gradient divided by tau is noise-limited near tightly active constraints
  // (the multiplier 1/(tau*(-F)) inherits the absolute rounding error of F,
  // amplified by 1/F^2), so instead fit nonnegative multipliers over the
  // near-active constraint and bound gradients by least squares and report
  // the fit residual: it demonstrates existence of KKT multipliers directly.
  double kkt_certificate(const Eigen::VectorXd& t, double tau) {
    const int n = cf_.n;
    Eigen::VectorXd g0 = Eigen::VectorXd::Zero(n);
    for (auto& o : obj_) {
      o.derivs(t);
      for (std::size_t i = 0; i < o.supp.size(); ++i) g0(o.supp[i]) += o.gs(static_cast<int>(i));
    }
    const double thresh = 1e-9 * (1.0 + g0.lpNorm<Eigen::Infinity>());
    std::vector<Eigen::VectorXd> cols;
    std::vector<char> free_sign;
    for (auto& c : con_) {
      c.derivs(t);
      const double lam = 1.0 / (tau * std::max(-c.F, 1e-300));
      if (lam <= thresh) continue;
      Eigen::VectorXd col = Eigen::VectorXd::Zero(n);
      for (std::size_t i = 0; i < c.supp.size(); ++i) col(c.supp[i]) += c.gs(static_cast<int>(i));
      cols.push_back(std::move(col));
      free_sign.push_back(0);
    }
    for (int j = 0; j < n; ++j) {
      if (std::isfinite(cf_.t_lo(j)) && 1.0 / (tau * (t(j) - cf_.t_lo(j))) > thresh) {
        Eigen::VectorXd col = Eigen::VectorXd::Zero(n);
        col(j) = -1.0;
        cols.push_back(std::move(col));
        free_sign.push_back(0);
      }
      if (std::isfinite(cf_.t_hi(j)) && 1.0 / (tau * (cf_.t_hi(j) - t(j))) > thresh) {
        Eigen::VectorXd col = Eigen::VectorXd::Zero(n);
        col(j) = 1.0;
        cols.push_back(std::move(col));
        free_sign.push_back(0);
      }
    }
    for (int j = 0; j < eq_rows_.rows(); ++j) {
      cols.push_back(eq_rows_.row(j).transpose());
      free_sign.push_back(1);
    }
    std::vector<int> act(cols.size());
    for (std::size_t i = 0; i < cols.size(); ++i) act[i] = static_cast<int>(i);
    Eigen::VectorXd resid = g0;
    for (int pass = 0; pass < static_cast<int>(cols.size()) + 1; ++pass) {
      if (act.empty()) {
        resid = g0;
        break;
      }
      Eigen::MatrixXd A(n, static_cast<int>(act.size()));
      for (std::size_t k = 0; k < act.size(); ++k) A.col(static_cast<int>(k)) = cols[static_cast<std::size_t>(act[k])];
      const Eigen::VectorXd lam = A.colPivHouseholderQr().solve(-g0);
      int worst = -1;
      double worst_val = -1e-9;
      for (std::size_t k = 0; k < act.size(); ++k)
        if (!free_sign[static_cast<std::size_t>(act[k])] && lam(static_cast<int>(k)) < worst_val) {
          worst_val = lam(static_cast<int>(k));
          worst = static_cast<int>(k);
        }
      if (worst < 0) {
        resid = g0 + A * lam;
        break;
      }
      act.erase(act.begin() + worst);
    }
    return resid.lpNorm<Eigen::Infinity>();
  }

  bool box_ok(const Eigen::VectorXd& t) const {
    for (int v = 0; v < cf_.n; ++v)
      if (!(t(v) > cf_.t_lo(v)) || !(t(v) < cf_.t_hi(v))) return false;
    return true;
  }

  bool domain_ok(const Eigen::VectorXd& t) {
    if (!box_ok(t)) return false;
    for (auto& c : con_)
      if (!(c.value(t) < 0.0)) return false;
    return true;
  }

  // Barrier value at t; +inf outside the domain.
  double phi(const Eigen::VectorXd& t, double tau) {
    if (!box_ok(t)) return kInf;
    double v = 0.0;
    for (auto& c : con_) {
      const double F = c.value(t);
      if (!(F < 0.0)) return kInf;
      v -= std::log(-F);
    }
    for (auto& o : obj_) v += tau * o.value(t);
    for (int i = 0; i < cf_.n; ++i) {
      if (std::isfinite(cf_.t_lo(i))) v -= std::log(t(i) - cf_.t_lo(i));
      if (std::isfinite(cf_.t_hi(i))) v -= std::log(cf_.t_hi(i) - t(i));
    }
    return v;
  }

  // Barrier value/gradient/Hessian; returns false outside the domain.
  bool phi_derivs(const Eigen::VectorXd& t, double tau, double& val) {
    if (!box_ok(t)) return false;
    grad_.setZero();
    hess_.setZero();
    val = 0.0;
    for (auto& o : obj_) {
      o.derivs(t);
      val += tau * o.F;
      for (std::size_t i = 0; i < o.supp.size(); ++i) grad_(o.supp[i]) += tau * o.gs(static_cast<int>(i));
      const auto& cols = o.blk->cols;
      for (std::size_t a = 0; a < cols.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b)
          hess_(cols[a], cols[b]) += tau * o.Hs(static_cast<int>(a), static_cast<int>(b));
    }
    for (auto& c : con_) {
      c.derivs(t);
      if (!(c.F < 0.0)) return false;
      const double inv = -1.0 / c.F;  // 1/(-F) > 0
      val -= std::log(-c.F);
      for (std::size_t i = 0; i < c.supp.size(); ++i) grad_(c.supp[i]) += inv * c.gs(static_cast<int>(i));
      const auto& cols = c.blk->cols;
      for (std::size_t a = 0; a < cols.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b)
          hess_(cols[a], cols[b]) += inv * c.Hs(static_cast<int>(a), static_cast<int>(b));
      for (std::size_t a = 0; a < c.supp.size(); ++a)
        for (std::size_t b = 0; b < c.supp.size(); ++b)
          hess_(c.supp[a], c.supp[b]) +=
              inv * inv * c.gs(static_cast<int>(a)) * c.gs(static_cast<int>(b));
    }
    for (int i = 0; i < cf_.n; ++i) {
      if (std::isfinite(cf_.t_lo(i))) {
        const double d = t(i) - cf_.t_lo(i);
        if (!(d > 0.0)) return false;
        val -= std::log(d);
        grad_(i) -= 1.0 / d;
        hess_(i, i) += 1.0 / (d * d);
      }
      if (std::isfinite(cf_.t_hi(i))) {
        const double d = cf_.t_hi(i) - t(i);
        if (!(d > 0.0)) return false;
        val -= std::log(d);
        grad_(i) += 1.0 / d;
        hess_(i, i) += 1.0 / (d * d);
      }
    }
    return true;
  }

  // Newton step with optional linear equality constraints. Returns the step.
  Eigen::VectorXd newton_step(const Eigen::VectorXd& t) {
    const int m = static_cast<int>(cf_.equalities.size());
    if (m == 0) {
      Eigen::LLT<Eigen::MatrixXd> llt(hess_);
      if (llt.info() == Eigen::Success) return llt.solve(-grad_);
      double ridge = 1e-12 * std::max(1.0, hess_.diagonal().cwiseAbs().maxCoeff());
      Eigen::MatrixXd H = hess_;
      for (int tries = 0; tries < 20; ++tries) {
        H.diagonal().array() += ridge;
        Eigen::LLT<Eigen::MatrixXd> llt2(H);
        if (llt2.info() == Eigen::Success) return llt2.solve(-grad_);
        ridge *= 10.0;
      }
      throw std::runtime_error("solve_convex: Newton system not positive definite");
    }
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(cf_.n + m, cf_.n + m);
    kkt.topLeftCorner(cf_.n, cf_.n) = hess_;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(cf_.n + m);
    rhs.head(cf_.n) = -grad_;
    for (int j = 0; j < m; ++j) {
      double res = cf_.equalities[static_cast<std::size_t>(j)].c;
      for (const auto& [id, e] : cf_.equalities[static_cast<std::size_t>(j)].a) {
        kkt(cf_.n + j, id) = e;
        kkt(id, cf_.n + j) = e;
        res += e * t(id);
      }
      rhs(cf_.n + j) = -res;
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);
    return lu.solve(rhs).head(cf_.n);
  }

  // Minimizes phi(., tau); stops on a small Newton decrement.
  void newton_minimize(Eigen::VectorXd& t, double tau, double tol, int max_iters) {
    for (int it = 0; it < max_iters && iters_used_ < st_.max_newton_iters; ++it, ++iters_used_) {
      double val;
      if (!phi_derivs(t, tau, val))
        throw std::runtime_error("solve_convex: iterate left the barrier domain");
      const bool eq_ok = eq_residual_inf(t) <= 1e-10;
      const Eigen::VectorXd dt = newton_step(t);
      const double lambda2 = dt.dot(hess_ * dt);
      if (eq_ok && 0.5 * lambda2 <= tol) return;
      // Below this, a sufficient-decrease test cannot resolve the predicted
      // decrement against |phi|; take the domain-checked full Newton step.
      if (0.5 * lambda2 <= 1e4 * 2.220446049250313e-16 * (1.0 + std::fabs(val))) {
        double alpha = 1.0;
        Eigen::VectorXd trial = t + dt;
        for (int ls = 0; ls < 60 && phi(trial, tau) == kInf; ++ls) {
          alpha *= 0.5;
          trial = t + alpha * dt;
        }
        t = trial;
        continue;
      }
      const double slope = grad_.dot(dt);
      const double r0 = eq_ok ? 0.0 : eq_residual_inf(t);
      double alpha = 1.0;
      Eigen::VectorXd trial;
      for (int ls = 0; ls < 60; ++ls) {
        trial = t + alpha * dt;
        const double v = phi(trial, tau);
        if (v <= val + 0.1 * alpha * slope) break;
        // From an equality-infeasible point the KKT step may raise the
        // barrier value while shrinking the residual; accept that progress.
        if (!eq_ok && v < kInf && eq_residual_inf(trial) <= (1.0 - 0.5 * alpha) * r0) break;
        alpha *= 0.5;
      }
      t = trial;
    }
  }

  // Phase I: minimize s subject to F_i(t) <= s, box bounds on t. Succeeds as
  // soon as a strictly feasible t is found.
  bool phase1(Eigen::VectorXd& t) {
    const int n = cf_.n;
    double maxF = -kInf;
    for (auto& c : con_) maxF = std::max(maxF, c.value(t));
    if (maxF < -1e-10) return true;
    double s = maxF + std::max(1.0, 0.1 * std::fabs(maxF));
    const int m = static_cast<int>(con_.size());

    Eigen::VectorXd g(n + 1);
    Eigen::MatrixXd H(n + 1, n + 1);
    double tau = 1.0;
    for (int stage = 0; stage < 60; ++stage) {
      for (int it = 0; it < 80 && iters_used_ < st_.max_newton_iters; ++it, ++iters_used_) {
        g.setZero();
        H.setZero();
        g(n) = tau;
        bool ok = true;
        for (auto& c : con_) {
          c.derivs(t);
          const double d = s - c.F;
          if (!(d > 0.0)) { ok = false; break; }
          const double r = 1.0 / d;
          for (std::size_t i = 0; i < c.supp.size(); ++i) g(c.supp[i]) += r * c.gs(static_cast<int>(i));
          g(n) -= r;
          const auto& cols = c.blk->cols;
          for (std::size_t a = 0; a < cols.size(); ++a)
            for (std::size_t b = 0; b < cols.size(); ++b)
              H(cols[a], cols[b]) += r * c.Hs(static_cast<int>(a), static_cast<int>(b));
          for (std::size_t a = 0; a < c.supp.size(); ++a) {
            for (std::size_t b = 0; b < c.supp.size(); ++b)
              H(c.supp[a], c.supp[b]) += r * r * c.gs(static_cast<int>(a)) * c.gs(static_cast<int>(b));
            H(c.supp[a], n) -= r * r * c.gs(static_cast<int>(a));
            H(n, c.supp[a]) -= r * r * c.gs(static_cast<int>(a));
          }
          H(n, n) += r * r;
        }
        if (!ok) throw std::runtime_error("solve_convex: phase-1 domain breach");
        for (int i = 0; i < n; ++i) {
          if (std::isfinite(cf_.t_lo(i))) {
            const double d = t(i) - cf_.t_lo(i);
            g(i) -= 1.0 / d;
            H(i, i) += 1.0 / (d * d);
          }
          if (std::isfinite(cf_.t_hi(i))) {
            const double d = cf_.t_hi(i) - t(i);
            g(i) += 1.0 / d;
            H(i, i) += 1.0 / (d * d);
          }
        }
        H.diagonal().array() += 1e-12;
        Eigen::LLT<Eigen::MatrixXd> llt(H);
        Eigen::VectorXd step;
        if (llt.info() == Eigen::Success) {
          step = llt.solve(-g);
        } else {
          Eigen::MatrixXd H2 = H;
          H2.diagonal().array() += 1e-6 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
          step = H2.ldlt().solve(-g);
        }
        const double lambda2 = step.dot(H * step);
        // Backtracking on the phase-1 barrier.
        double alpha = 1.0;
        auto p1_phi = [&](const Eigen::VectorXd& tt, double ss) {
          if (!box_ok(tt)) return kInf;
          double v = tau * ss;
          for (auto& c : con_) {
            const double d = ss - c.value(tt);
            if (!(d > 0.0)) return kInf;
            v -= std::log(d);
          }
          for (int i = 0; i < n; ++i) {
            if (std::isfinite(cf_.t_lo(i))) v -= std::log(tt(i) - cf_.t_lo(i));
            if (std::isfinite(cf_.t_hi(i))) v -= std::log(cf_.t_hi(i) - tt(i));
          }
          return v;
        };
        const double base = p1_phi(t, s);
        const double slope = g.dot(step);
        Eigen::VectorXd tt;
        double ss = s;
        for (int ls = 0; ls < 60; ++ls) {
          tt = t + alpha * step.head(n);
          ss = s + alpha * step(n);
          if (p1_phi(tt, ss) <= base + 0.1 * alpha * slope) break;
          alpha *= 0.5;
        }
        t = tt;
        s = ss;
        double cur = -kInf;
        for (auto& c : con_) cur = std::max(cur, c.value(t));
        if (cur < -1e-9) return true; // strictly feasible point found
        if (0.5 * lambda2 <= 1e-12) break;
      }
      double cur = -kInf;
      for (auto& c : con_) cur = std::max(cur, c.value(t));
      if (cur < -1e-9) return true;
      if (static_cast<double>(m) / tau < 1e-12 && s > -1e-12) return false;
      tau *= 10.0;
    }
    return false;
  }
};

SolveReport Solver::solve(const Assignment& start) {
  SolveReport rep;
  const int n = cf_.n;
  if (static_cast<int>(start.size()) != n)
    throw std::invalid_argument("solve_convex: start size mismatch");

  if (n == 0) {
    // Constant problem: feasible iff all constant constraints hold.
    rep.converged = true;
    Eigen::VectorXd t0(0);
    for (const auto& blk : cf_.constraints)
      if (blk.value(t0) > 0.0) {
        rep.infeasible = true;
        rep.converged = false;
      }
    rep.log_objective = cf_.objective_value(t0);
    rep.objective_value = std::exp(rep.log_objective);
    return rep;
  }

  Eigen::VectorXd t(n);
  for (int i = 0; i < n; ++i) {
    if (!(start[static_cast<std::size_t>(i)] > 0.0))
      throw std::invalid_argument("solve_convex: start must be strictly positive");
    t(i) = std::log(start[static_cast<std::size_t>(i)]);
    const double margin = 2e-7 * std::max(1.0, std::fabs(cf_.t_lo(i)));
    if (std::isfinite(cf_.t_lo(i))) t(i) = std::max(t(i), cf_.t_lo(i) + margin);
    if (std::isfinite(cf_.t_hi(i))) t(i) = std::min(t(i), cf_.t_hi(i) - margin);
  }

  if (!domain_ok(t)) {
    if (!phase1(t)) {
      rep.infeasible = true;
      return rep;
    }
  }

  const double gap_target = 0.1 * st_.kkt_tol;
  double tau = 1.0;
  const double mu = st_.barrier_mu;
  while (iters_used_ < st_.max_newton_iters) {
    if (static_cast<double>(barrier_count_) / tau <= gap_target) {
      newton_minimize(t, tau, st_.newton_tol, 80);
      break;
    }
    newton_minimize(t, tau, std::max(1e-9, st_.newton_tol), 60);
    tau *= mu;
    if (barrier_count_ > 0) tau = std::min(tau, static_cast<double>(barrier_count_) / gap_target);
  }

  rep.newton_iters = iters_used_;
  rep.kkt_gap = static_cast<double>(barrier_count_) / tau;
  rep.kkt_stationarity = kkt_certificate(t, tau);
  rep.converged = rep.kkt_gap <= st_.kkt_tol && rep.kkt_stationarity <= st_.kkt_tol &&
                  eq_residual_inf(t) <= st_.kkt_tol;
  rep.z.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rep.z[static_cast<std::size_t>(i)] = std::exp(t(i));
  rep.log_objective = cf_.objective_value(t);
  rep.objective_value = std::exp(rep.log_objective);
  return rep;
}

}  // namespace

SolveReport solve_convex(const ConvexForm& cf, const Assignment& start,
                         const SolverSettings& settings) {
  Solver solver(cf, settings);
  return solver.solve(start);
}

// ---------- successive convex approximation ----------

ScaResult run_sca(const Builder& build, const ScaSettings& settings) {
  ScaResult out;
  Assignment z = settings.initial_point;
  GpProblem gp = build(z);
  if (static_cast<int>(z.size()) != gp.num_vars)
    throw std::invalid_argument("run_sca: initial point size mismatch");

  // The approximation is tight at its reference point, so evaluating the
  // built constraints at the initial point checks the true constraints.
  for (std::size_t i = 0; i < gp.constraints.size(); ++i) {
    const double v = gp.constraints[i].eval(z);
    if (!(v <= 1.0 + 1e-9)) {
      std::ostringstream os;
      os << "run_sca: initial point violates constraint " << i << " (value " << v << ")";
      throw std::invalid_argument(os.str());
    }
  }
  for (std::size_t i = 0; i < gp.equalities.size(); ++i) {
    const double v = gp.equalities[i].eval(z);
    if (std::fabs(v - 1.0) > 1e-6) {
      std::ostringstream os;
      os << "run_sca: initial point violates equality " << i << " (value " << v << ")";
      throw std::invalid_argument(os.str());
    }
  }

  double u_prev = std::numeric_limits<double>::infinity();
  double u_cur = gp.log_objective_value(z);
  out.trace.push_back(u_cur);
  out.iterates.push_back(z);

  for (int it = 0; it < settings.max_iterations; ++it) {
    if (std::fabs(u_cur - u_prev) <= settings.tolerance) {
      out.converged = true;
      break;
    }
    if (it > 0) gp = build(z);
    const ConvexForm cf = to_convex_form(gp);
    const SolveReport rep = solve_convex(cf, z, settings.solver);
    if (rep.infeasible) {
      std::ostringstream os;
      os << "run_sca: subproblem infeasible at iteration " << (it + 1);
      throw std::runtime_error(os.str());
    }
    z = rep.z;
    u_prev = u_cur;
    u_cur = rep.log_objective;
    ++out.solves;
    out.trace.push_back(u_cur);
    out.iterates.push_back(z);
  }
  if (!out.converged && std::fabs(u_cur - u_prev) <= settings.tolerance) out.converged = true;
  out.z = std::move(z);
  return out;
}

}  // namespace twreh::gp
