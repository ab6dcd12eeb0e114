#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "delqg/errors.hpp"
#include "delqg/linalg.hpp"
#include "delqg/plant.hpp"
#include "delqg/synthesis.hpp"

namespace delqg {

/// Fixed-length delay line: a value pushed at step k is returned by lag(l)
/// at step k + l, for 1 ≤ l ≤ length.
class DelayLine {
 public:
  DelayLine() = default;
  DelayLine(int length, Eigen::Index width)
      : buf_(static_cast<std::size_t>(length), VectorXd::Zero(width)) {}

  int length() const { return static_cast<int>(buf_.size()); }
  const VectorXd& lag(int l) const {
    if (l < 1 || l > length()) {
      throw IndexOutOfRange("DelayLine: lag out of range");
    }
    const int n = length();
    return buf_[static_cast<std::size_t>(((head_ - l) % n + n) % n)];
  }
  void push(const VectorXd& v) {
    if (buf_.empty()) return;
    buf_[static_cast<std::size_t>(head_)] = v;
    head_ = (head_ + 1) % length();
  }
  void clear() {
    for (auto& v : buf_) v.setZero();
    head_ = 0;
  }

 private:
  std::vector<VectorXd> buf_;
  int head_ = 0;
};

/// Discretized loop of one agent: its plant block and its controller.
struct AgentLoop {
  int agent = 0;
  // Plant: x⁺ = Φx + Γ_u u + Γ_w w,  y = C2 x + D21 w.
  MatrixXd Phi_x, Gam_u, Gam_w, C2, D21;
  // Controller: ζ⁺ = Φ_ζ ζ + Γ_y (y + b) + Γ_a a, ζ = (η, ξ), ν̃ = F η.
  // a is the delayed ancestor command sum r (local model) or the delayed
  // ancestor estimate sum c (shared innovation).
  MatrixXd Phi_z, Gam_y, Gam_a;
  MatrixXd F;
  int eta_dim = 0;
  std::vector<int> own_inputs, delayed_inputs;
  // Trapezoid-weighted FIR kernels, lags 0..d (empty when τ = 0 or no
  // strict descendants).
  std::vector<MatrixXd> Ku, Kb;
  IndexSet ancestors;                       // strict
  std::vector<std::vector<int>> anc_nu_rows;   // agent i's rows in ν̃_k
  std::vector<std::vector<int>> anc_eta_rows;  // agent i's rows in η_k
  bool keeps_nu_history = false;
  bool keeps_eta_history = false;
};

/// Discretized interconnection of the plant and a decentralized controller.
struct ClosedLoopModel {
  FourBlockPlant plant;
  AncestorCoupling coupling = AncestorCoupling::kLocalModel;
  double h = 0.0;
  double tau = 0.0;
  int d = 0;
  std::vector<AgentLoop> agents;
  double step_ratio = 0.0;  // max ‖A‖₂·h over the discretized blocks
  std::vector<std::string> warnings;

  int size() const { return static_cast<int>(agents.size()); }
};

struct DiscretizeOptions {
  double warn_step_ratio = 0.1;
  double max_step_ratio = 1.0;
  /// Relative tolerance on τ/h being an integer.
  double ratio_tol = 1e-9;
};

namespace internal {

// Zero-order hold: [Φ, Γ] from exp([[A, B], [0, 0]]·h).
inline std::pair<MatrixXd, MatrixXd> zoh(const MatrixXd& A, const MatrixXd& B,
                                         double h) {
  const Eigen::Index n = A.rows(), m = B.cols();
  MatrixXd M = MatrixXd::Zero(n + m, n + m);
  M.topLeftCorner(n, n) = A * h;
  M.topRightCorner(n, m) = B * h;
  const MatrixXd E = expm(M);
  return {E.topLeftCorner(n, n), E.topRightCorner(n, m)};
}

inline int delay_steps(double tau, double h, double tol) {
  if (!(h > 0.0)) throw StepTooLarge("discretize: h must be positive");
  const double r = tau / h;
  const double d = std::round(r);
  if (std::abs(r - d) > tol * std::max(1.0, r)) {
    throw NonIntegerDelayRatio("discretize: τ/h = " + std::to_string(r) +
                               " is not an integer");
  }
  return static_cast<int>(d);
}

}  // namespace internal

inline ClosedLoopModel discretize(const FourBlockPlant& plant,
                                  const DecentralizedController& K, double h,
                                  const DiscretizeOptions& opts = {}) {
  const int N = plant.agents();
  if (K.size() != N) throw DimensionMismatch("discretize: size mismatch");
  ClosedLoopModel model;
  model.plant = plant;
  model.h = h;
  model.tau = K.tau;
  model.d = internal::delay_steps(K.tau, h, opts.ratio_tol);
  model.coupling = N > 0 ? K.agents.front().coupling
                         : AncestorCoupling::kLocalModel;
  const int d = model.d;
  auto check_ratio = [&](const MatrixXd& A, const std::string& what) {
    const double r = op_norm(A) * h;
    model.step_ratio = std::max(model.step_ratio, r);
    if (r > opts.max_step_ratio) {
      throw StepTooLarge("discretize: ‖A‖h = " + std::to_string(r) + " for " +
                         what);
    }
    if (r > opts.warn_step_ratio) {
      model.warnings.push_back("‖A‖h = " + std::to_string(r) + " for " + what);
    }
  };

  for (int i = 0; i < N; ++i) {
    const AgentController& c = K.agents[static_cast<std::size_t>(i)];
    if (c.coupling != model.coupling) {
      throw DimensionMismatch("discretize: mixed ancestor couplings");
    }
    const AgentBlocks& ag = plant.agent(i);
    AgentLoop L;
    L.agent = i;
    check_ratio(ag.A, "plant " + std::to_string(i));
    MatrixXd Bx(ag.A.rows(), ag.B2.cols() + ag.B1.cols());
    Bx << ag.B2, ag.B1;
    auto [Phi, Gam] = internal::zoh(ag.A, Bx, h);
    L.Phi_x = Phi;
    L.Gam_u = Gam.leftCols(ag.B2.cols());
    L.Gam_w = Gam.rightCols(ag.B1.cols());
    L.C2 = ag.C2;
    L.D21 = ag.D21;

    // Controller state matrix and held inputs (y + b, a).
    const int ne = c.estimate_dim();
    const int nz = c.state_dim();
    const int ni = static_cast<int>(c.A_local.rows());
    const MatrixXd EL = c.injection();
    MatrixXd Az = MatrixXd::Zero(nz, nz);
    Az.topLeftCorner(ne, ne) = c.A + c.lc() + c.B * c.F;
    const int pa = c.strict_ancestors.empty()
                       ? 0
                       : (c.has_local_model() ? static_cast<int>(c.B_local.cols())
                                              : ni);
    MatrixXd Bz = MatrixXd::Zero(nz, EL.cols() + pa);
    Bz.topLeftCorner(ne, EL.cols()) = -EL;
    if (c.has_local_model()) {
      Az.block(0, ne, ne, ni) = EL * c.C_local;
      Az.bottomRightCorner(ni, ni) = c.A_local;
      Bz.bottomRightCorner(ni, pa) = c.B_local;
    } else if (pa > 0) {
      Bz.topRightCorner(ne, pa) = EL * c.C_local;
    }
    check_ratio(Az, "controller " + std::to_string(i));
    auto [Phz, Gz] = internal::zoh(Az, Bz, h);
    L.Phi_z = Phz;
    L.Gam_y = Gz.leftCols(EL.cols());
    L.Gam_a = Gz.rightCols(pa);
    L.F = c.F;
    L.eta_dim = ne;
    L.own_inputs = c.own_inputs;
    L.delayed_inputs = c.delayed_inputs;

    if (d > 0 && !c.delayed_inputs.empty()) {
      const auto ku = c.fir_u.sample_kernel(d);
      const auto kb = c.fir_b.sample_kernel(d);
      for (int l = 0; l <= d; ++l) {
        const double w = (l == 0 || l == d) ? 0.5 * h : h;
        L.Ku.push_back(w * ku[static_cast<std::size_t>(l)]);
        L.Kb.push_back(w * kb[static_cast<std::size_t>(l)]);
      }
      // Impulsive taps D_near δ(t) − D_far δ(t − τ).
      L.Ku.front() += c.fir_u.D_near;
      L.Ku.back() -= c.fir_u.D_far;
      L.Kb.front() += c.fir_b.D_near;
      L.Kb.back() -= c.fir_b.D_far;
    }
    L.ancestors = c.strict_ancestors;
    for (int k : c.strict_ancestors) {
      const AgentController& ck = K.agents[static_cast<std::size_t>(k)];
      const int pos = subset_position(ck.descendants, {i}).front();
      L.anc_nu_rows.push_back(ck.m.indices({pos}));
      L.anc_eta_rows.push_back(ck.n.indices({pos}));
    }
    const bool broadcasts = c.descendants.size() > 1;
    L.keeps_nu_history = d > 0 && broadcasts;
    L.keeps_eta_history = d > 0 && broadcasts &&
                          model.coupling == AncestorCoupling::kSharedInnovation;
    model.agents.push_back(std::move(L));
  }
  return model;
}

/// Slowest time constant among the plant blocks and the regulator and
/// estimator loops of every agent.
inline double slowest_time_constant(const FourBlockPlant& plant,
                                    const DecentralizedController& K) {
  double alpha = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < plant.agents(); ++i) {
    const AgentController& c = K.agents[static_cast<std::size_t>(i)];
    alpha = std::max(alpha, spectral_abscissa(plant.agent(i).A));
    alpha = std::max(alpha, spectral_abscissa(c.A + c.B * c.F));
    alpha = std::max(alpha,
                     spectral_abscissa(c.A_local + c.L * c.C_local));
  }
  if (!(alpha < 0.0)) {
    throw NotSchurStable("slowest_time_constant: loop is not stable");
  }
  return -1.0 / alpha;
}

// ---------------------------------------------------------------------------
// Time stepping

/// Mutable loop state: plant states, controller states and delay lines.
struct LoopState {
  std::vector<VectorXd> x, z;
  std::vector<DelayLine> nu_hist, eta_hist;

  explicit LoopState(const ClosedLoopModel& m) {
    for (const AgentLoop& a : m.agents) {
      x.push_back(VectorXd::Zero(a.Phi_x.rows()));
      z.push_back(VectorXd::Zero(a.Phi_z.rows()));
      nu_hist.emplace_back(a.keeps_nu_history ? m.d : 0, a.F.rows());
      eta_hist.emplace_back(a.keeps_eta_history ? m.d : 0, a.eta_dim);
    }
  }
};

/// Signals produced by one step.
struct StepSignals {
  std::vector<VectorXd> y, u;
  VectorXd cost_output;  // z = C1x + D12u
};

/// Advances the loop by one step. `w` holds each agent's noise sample (as
/// applied, i.e. already scaled); `y_extra` optionally adds to y.
inline StepSignals step(const ClosedLoopModel& m, LoopState& s,
                        const std::vector<VectorXd>& w,
                        const std::vector<VectorXd>* y_extra = nullptr) {
  const int N = m.size();
  const int d = m.d;
  StepSignals out;
  out.y.resize(static_cast<std::size_t>(N));
  out.u.resize(static_cast<std::size_t>(N));
  std::vector<VectorXd> nu(static_cast<std::size_t>(N));
  // (1) measurements and current commands.
  for (int i = 0; i < N; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const AgentLoop& a = m.agents[k];
    out.y[k] = a.C2 * s.x[k] + a.D21 * w[k];
    if (y_extra) out.y[k] += (*y_extra)[k];
    nu[k] = a.F * s.z[k].head(a.eta_dim);
  }
  auto nu_lag = [&](int k, int l) -> const VectorXd& {
    return l == 0 ? nu[static_cast<std::size_t>(k)]
                  : s.nu_hist[static_cast<std::size_t>(k)].lag(l);
  };
  auto eta_lag = [&](int k, int l) -> VectorXd {
    const auto kk = static_cast<std::size_t>(k);
    return l == 0 ? VectorXd(s.z[kk].head(m.agents[kk].eta_dim))
                  : s.eta_hist[kk].lag(l);
  };
  // (2)-(3) read broadcasts, form u, update controllers.
  std::vector<VectorXd> z_next(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const AgentLoop& a = m.agents[k];
    VectorXd u = nu[k](a.own_inputs);
    VectorXd b = VectorXd::Zero(a.C2.rows());
    for (std::size_t l = 0; l < a.Ku.size(); ++l) {
      const VectorXd v = nu_lag(i, static_cast<int>(l))(a.delayed_inputs);
      u += a.Ku[l] * v;
      b += a.Kb[l] * v;
    }
    VectorXd r = VectorXd::Zero(u.size());
    VectorXd c = VectorXd::Zero(a.Phi_x.rows());
    for (std::size_t q = 0; q < a.ancestors.size(); ++q) {
      const int anc = a.ancestors[q];
      r += nu_lag(anc, d)(a.anc_nu_rows[q]);
      if (m.coupling == AncestorCoupling::kSharedInnovation) {
        c += eta_lag(anc, d)(a.anc_eta_rows[q]);
      }
    }
    u += r;
    out.u[k] = u;
    z_next[k] = a.Phi_z * s.z[k] + a.Gam_y * (out.y[k] + b);
    if (a.Gam_a.cols() > 0) {
      z_next[k] += a.Gam_a * (m.coupling == AncestorCoupling::kLocalModel
                                  ? r
                                  : c);
    }
  }
  // Cost output.
  VectorXd xs(m.plant.n().total()), us(m.plant.m().total());
  for (int i = 0; i < N; ++i) {
    const auto k = static_cast<std::size_t>(i);
    xs.segment(m.plant.n().offset(i), m.plant.n().size(i)) = s.x[k];
    us.segment(m.plant.m().offset(i), m.plant.m().size(i)) = out.u[k];
  }
  out.cost_output = m.plant.C1() * xs + m.plant.D12() * us;
  // (4) broadcast, (5) plant update.
  for (int i = 0; i < N; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const AgentLoop& a = m.agents[k];
    if (a.keeps_nu_history) s.nu_hist[k].push(nu[k]);
    if (a.keeps_eta_history) s.eta_hist[k].push(s.z[k].head(a.eta_dim));
    s.z[k] = z_next[k];
    s.x[k] = a.Phi_x * s.x[k] + a.Gam_u * out.u[k] + a.Gam_w * w[k];
  }
  return out;
}

/// Independent standard-normal noise streams, one per agent.
class NoiseSource {
 public:
  NoiseSource(std::uint64_t seed, const std::vector<int>& stream_ids,
              const std::vector<int>& widths, double scale)
      : widths_(widths), scale_(scale) {
    for (int id : stream_ids) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed),
                        static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(id)};
      rngs_.emplace_back(seq);
      dists_.emplace_back();
    }
  }
  std::vector<VectorXd> draw() {
    std::vector<VectorXd> w;
    for (std::size_t k = 0; k < rngs_.size(); ++k) {
      VectorXd v(widths_[k]);
      for (int j = 0; j < widths_[k]; ++j) v(j) = scale_ * dists_[k](rngs_[k]);
      w.push_back(std::move(v));
    }
    return w;
  }

 private:
  std::vector<std::mt19937_64> rngs_;
  std::vector<int> widths_;
  double scale_;
  std::vector<std::normal_distribution<double>> dists_;
};

struct SimulationOptions {
  std::uint64_t seed = 0;
  /// Noise stream of each agent; defaults to the agent index.
  std::vector<int> stream_ids;
  bool noise = true;
  /// Zero the noise from this time on (negative: never).
  double noise_off_after = -1.0;
  bool record = true;
  /// Optional deterministic measurement injection, called per step.
  std::function<void(int step, std::vector<VectorXd>& y_extra)> inject;
};

struct SimulationTrace {
  double h = 0.0;
  std::vector<double> t;
  std::vector<VectorXd> x, u, y, eta;  // stacked over agents
  std::vector<VectorXd> z;             // cost output
  std::vector<double> running_cost;    // h·Σ‖z‖²
  int steps() const { return static_cast<int>(t.size()); }
};

inline SimulationTrace simulate(const ClosedLoopModel& m, double horizon,
                                const SimulationOptions& opts = {}) {
  const int N = m.size();
  const int steps = static_cast<int>(std::llround(horizon / m.h));
  std::vector<int> ids = opts.stream_ids;
  if (ids.empty()) {
    for (int i = 0; i < N; ++i) ids.push_back(i);
  }
  if (static_cast<int>(ids.size()) != N) {
    throw DimensionMismatch("simulate: one stream id per agent required");
  }
  std::vector<int> widths;
  for (const AgentLoop& a : m.agents) widths.push_back(static_cast<int>(a.Gam_w.cols()));
  NoiseSource noise(opts.seed, ids, widths, 1.0 / std::sqrt(m.h));
  LoopState s(m);
  SimulationTrace tr;
  tr.h = m.h;
  std::vector<VectorXd> zeros, extra;
  for (int w : widths) zeros.push_back(VectorXd::Zero(w));
  for (const AgentLoop& a : m.agents) extra.push_back(VectorXd::Zero(a.C2.rows()));
  double acc = 0.0;
  auto stack = [](const std::vector<VectorXd>& v) {
    Eigen::Index n = 0;
    for (const auto& e : v) n += e.size();
    VectorXd out(n);
    n = 0;
    for (const auto& e : v) {
      out.segment(n, e.size()) = e;
      n += e.size();
    }
    return out;
  };
  for (int k = 0; k < steps; ++k) {
    const double t = k * m.h;
    std::vector<VectorXd> w = noise.draw();
    if (!opts.noise || (opts.noise_off_after >= 0.0 && t >= opts.noise_off_after)) {
      w = zeros;
    }
    const std::vector<VectorXd>* ye = nullptr;
    if (opts.inject) {
      for (auto& e : extra) e.setZero();
      opts.inject(k, extra);
      ye = &extra;
    }
    if (opts.record) {
      tr.x.push_back(stack(s.x));
      std::vector<VectorXd> etas;
      for (int i = 0; i < N; ++i) {
        etas.push_back(s.z[static_cast<std::size_t>(i)].head(
            m.agents[static_cast<std::size_t>(i)].eta_dim));
      }
      tr.eta.push_back(stack(etas));
    }
    StepSignals sig = step(m, s, w, ye);
    const double zz = sig.cost_output.squaredNorm();
    acc += m.h * zz;
    for (const auto& xi : s.x) {
      if (!(xi.norm() <= 1e12)) {
        throw Divergence("simulate: state norm exceeded 1e12 at t = " +
                         std::to_string(t));
      }
    }
    if (opts.record) {
      tr.t.push_back(t);
      tr.u.push_back(stack(sig.u));
      tr.y.push_back(stack(sig.y));
      tr.z.push_back(sig.cost_output);
      tr.running_cost.push_back(acc);
    }
  }
  return tr;
}

/// Time average of ‖z‖² over the samples after `burn_in` steps.
inline double empirical_cost(const SimulationTrace& trace, int burn_in) {
  double acc = 0.0;
  int count = 0;
  for (int k = std::max(0, burn_in); k < trace.steps(); ++k) {
    acc += trace.z[static_cast<std::size_t>(k)].squaredNorm();
    ++count;
  }
  return count > 0 ? acc / count : 0.0;
}

struct MonteCarloResult {
  double cost = 0.0;
  double stderr_ = 0.0;
  std::vector<double> batches;
};

/// Mean of `batches` independent runs (seeds seed, seed+1, …), each averaged
/// after `burn_in` steps. Batches run in parallel.
inline MonteCarloResult monte_carlo_cost(const ClosedLoopModel& m,
                                         int batches, double horizon,
                                         int burn_in, std::uint64_t seed,
                                         int threads = 0) {
  if (batches <= 0) throw DimensionMismatch("monte_carlo_cost: batches ≥ 1");
  MonteCarloResult r;
  r.batches.assign(static_cast<std::size_t>(batches), 0.0);
  const int steps = static_cast<int>(std::llround(horizon / m.h));
  if (burn_in >= steps) {
    throw DimensionMismatch("monte_carlo_cost: horizon of " +
                            std::to_string(steps) +
                            " steps does not exceed the burn-in of " +
                            std::to_string(burn_in));
  }
  internal::parallel_for(
      batches, internal::thread_budget(threads),
      [&](int b) {
        std::vector<int> ids;
        std::vector<int> widths;
        for (const AgentLoop& a : m.agents) {
          ids.push_back(a.agent);
          widths.push_back(static_cast<int>(a.Gam_w.cols()));
        }
        NoiseSource noise(seed + static_cast<std::uint64_t>(b), ids, widths,
                          1.0 / std::sqrt(m.h));
        LoopState s(m);
        double acc = 0.0;
        int count = 0;
        for (int k = 0; k < steps; ++k) {
          const StepSignals sig = step(m, s, noise.draw());
          if (k >= burn_in) {
            acc += sig.cost_output.squaredNorm();
            ++count;
          }
          if ((k & 1023) == 0) {
            for (const auto& xi : s.x) {
              if (!(xi.norm() <= 1e12)) {
                throw Divergence("monte_carlo_cost: state norm exceeded 1e12");
              }
            }
          }
        }
        r.batches[static_cast<std::size_t>(b)] = count > 0 ? acc / count : 0.0;
      },
      "batch");
  double mean = 0.0;
  for (double v : r.batches) mean += v;
  mean /= batches;
  double var = 0.0;
  for (double v : r.batches) var += (v - mean) * (v - mean);
  r.cost = mean;
  r.stderr_ = batches > 1 ? std::sqrt(var / (batches - 1) / batches) : 0.0;
  return r;
}

struct StructureReport {
  int i = 0, j = 0;
  bool connected = false;  // S(i, j)
  double peak = 0.0;       // max |u_i| over the run
  double early = 0.0;      // max |u_i| for t < τ
  bool passed = false;
};

/// Injects a discrete impulse of area `amplitude` into y_j at t = 0 (noise
/// off) and inspects u_i.
inline StructureReport structure_check(const ClosedLoopModel& m,
                                       const Topology& topology, int i, int j,
                                       double amplitude = 1.0,
                                       double horizon = -1.0,
                                       double tol = 1e-9) {
  if (horizon <= 0.0) horizon = m.tau + 50.0 * m.h + 1.0;
  SimulationOptions o;
  o.noise = false;
  o.inject = [&](int k, std::vector<VectorXd>& ye) {
    if (k == 0) ye[static_cast<std::size_t>(j)].setConstant(amplitude / m.h);
  };
  const SimulationTrace tr = simulate(m, horizon, o);
  StructureReport rep;
  rep.i = i;
  rep.j = j;
  rep.connected = topology.reaches(j, i);
  const int off = m.plant.m().offset(i), len = m.plant.m().size(i);
  // Samples with t ≤ τ − h, i.e. the first d steps.
  for (int k = 0; k < tr.steps(); ++k) {
    const double v =
        tr.u[static_cast<std::size_t>(k)].segment(off, len).cwiseAbs().maxCoeff();
    rep.peak = std::max(rep.peak, v);
    if (k < m.d) rep.early = std::max(rep.early, v);
  }
  if (!rep.connected) {
    rep.passed = rep.peak <= tol;
  } else if (i != j) {
    rep.passed = rep.early <= tol * rep.peak;
  } else {
    rep.passed = true;
  }
  return rep;
}

}  // namespace delqg
