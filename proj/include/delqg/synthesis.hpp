#pragma once

#include <algorithm>
#include <complex>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "delqg/adobe.hpp"
#include "delqg/errors.hpp"
#include "delqg/linalg.hpp"
#include "delqg/plant.hpp"
#include "delqg/topology.hpp"

namespace delqg {

/// How the information an agent receives from its strict ancestors enters
/// its observer.
enum class AncestorCoupling {
  /// The receiving agent runs a local model ξ̇ = A_ii ξ + B2_ii r of its own
  /// state driven by the delayed ancestor commands r, and its observer uses
  /// LC·ξ. This realization is exact for every τ.
  kLocalModel,
  /// The observer uses LC·Σ_k η_k(t − τ), the ancestors' delayed estimates of
  /// the agent's state. Exact at τ = 0 only.
  kSharedInnovation,
};

inline const char* to_string(AncestorCoupling c) {
  return c == AncestorCoupling::kLocalModel ? "local_model"
                                            : "shared_innovation";
}

/// Controller of agent i. States are η (dimension n_i̲) and, with the local
/// model coupling and at least one strict ancestor, ξ (dimension n_i):
///
///   η̇ = (A + LC + BF)η + E L C2 (ξ or c) − E L (y + Π_b ν̃)
///   ξ̇ = A_ii ξ + B2_ii r
///   u  = [Π_u ν̃]_i + r,   ν̃ = Fη,
///
/// where r = Σ_k ν̃_k(t − τ) restricted to agent i, c = Σ_k η_k(t − τ)
/// restricted to agent i, both summed over strict ancestors k, and
/// E = E_{n_i̲}ᵀE_{n_i} embeds agent i's block.
struct AgentController {
  int agent = 0;
  IndexSet descendants;        // i̲, ascending
  IndexSet strict_ancestors;   // ascending
  int own = 0;                 // position of i inside `descendants`
  Partition n, m;              // state / input partitions over i̲
  double tau = 0.0;
  AncestorCoupling coupling = AncestorCoupling::kLocalModel;

  MatrixXd A;   // A_{i̲i̲}
  MatrixXd B;   // B̃2_{i̲i̲}, ascending columns
  MatrixXd F;   // F̃ⁱ: m_i̲ × n_i̲
  MatrixXd L;   // n_i × p_i
  MatrixXd A_local, B_local, C_local;  // A_ii, B2_ii, C2_ii
  MatrixXd C1_modified;                // C̃1 used for F
  FirBlock fir_u, fir_b;               // act on the delayed columns of ν̃
  std::vector<int> own_inputs, delayed_inputs;

  MatrixXd X, Y;
  double regulator_residual = 0.0, estimator_residual = 0.0;
  double symplectic_error = 0.0;

  int estimate_dim() const { return static_cast<int>(A.rows()); }
  bool has_local_model() const {
    return coupling == AncestorCoupling::kLocalModel &&
           !strict_ancestors.empty();
  }
  int state_dim() const {
    return estimate_dim() + (has_local_model() ? static_cast<int>(A_local.rows()) : 0);
  }
  /// Rows of η holding agent i's own block.
  std::vector<int> own_states() const { return n.indices({own}); }
  /// E L, the measurement injection into η.
  MatrixXd injection() const {
    MatrixXd EL = MatrixXd::Zero(estimate_dim(), L.cols());
    EL(own_states(), Eigen::all) = L;
    return EL;
  }
  /// (LC)ⁱ = E L C2_ii Eᵀ.
  MatrixXd lc() const {
    MatrixXd M = MatrixXd::Zero(estimate_dim(), estimate_dim());
    M(own_states(), own_states()) = L * C_local;
    return M;
  }
  /// Π_u(jω), Π_b(jω), Λ(jω) in ascending coordinates.
  MatrixXcd pi_u(double omega) const {
    const Eigen::Index mm = m.total();
    MatrixXcd P = MatrixXcd::Identity(mm, mm);
    if (!delayed_inputs.empty()) {
      P(own_inputs, delayed_inputs) = fir_u.frequency_response(omega);
    }
    return P;
  }
  MatrixXcd pi_b(double omega) const {
    MatrixXcd P = MatrixXcd::Zero(L.cols(), m.total());
    if (!delayed_inputs.empty()) {
      P(Eigen::all, delayed_inputs) = fir_b.frequency_response(omega);
    }
    return P;
  }
  VectorXcd lambda(double omega) const {
    VectorXcd v = VectorXcd::Ones(m.total());
    const std::complex<double> z =
        std::exp(std::complex<double>(0.0, -omega * tau));
    for (int c : delayed_inputs) v(c) = z;
    return v;
  }
};

struct DecentralizedController {
  std::vector<AgentController> agents;
  /// Communication graph the controller uses (the decoupled limit uses the
  /// empty graph).
  Topology topology;
  double tau = 0.0;

  int size() const { return static_cast<int>(agents.size()); }
};

struct AgentGains {
  RiccatiSolution regulator;  // (X̃, F̃)
  RiccatiSolution estimator;  // (Y, Lᵀ)
  double regulator_residual = 0.0;
  double estimator_residual = 0.0;
  MatrixXd L() const { return estimator.F.transpose(); }
};

/// Regulator gain from the modified sub-plant, estimator gain from agent i's
/// own measurement channel.
inline AgentGains agent_gains(const SubPlant& modified,
                              const RiccatiOptions& ropts = {}) {
  AgentGains g;
  g.regulator = solve_care(modified.A, modified.B2, modified.C1, modified.D12,
                           ropts);
  g.regulator_residual = care_relative_residual(
      modified.A, modified.B2, modified.C1, modified.D12, g.regulator.X);
  const auto own = modified.n.indices({modified.own});
  const MatrixXd Aii = modified.A(own, own);
  const MatrixXd C2ii = modified.C2(Eigen::all, own);
  const MatrixXd B1ii = modified.B1(own, Eigen::all);
  g.estimator = solve_care(Aii.transpose(), C2ii.transpose(),
                           B1ii.transpose(), modified.D21.transpose(), ropts);
  g.estimator_residual =
      care_relative_residual(Aii.transpose(), C2ii.transpose(),
                             B1ii.transpose(), modified.D21.transpose(),
                             g.estimator.X);
  return g;
}

struct SynthesisOptions {
  AncestorCoupling coupling = AncestorCoupling::kLocalModel;
  GammaOptions gamma;
  RiccatiOptions riccati;
  /// Worker threads for synthesize_all; 0 selects the hardware concurrency.
  /// DELQG_THREADS caps either choice.
  int threads = 0;
};

inline AgentController synthesize_agent(const FourBlockPlant& plant,
                                        const Topology& topology, double tau,
                                        int i,
                                        const SynthesisOptions& opts = {}) {
  const SubPlant sp = extract_subplant(plant, topology, i);
  const GammaResult g = gamma(sp, tau, opts.gamma);
  const AgentGains gains = agent_gains(g.modified, opts.riccati);

  AgentController c;
  c.agent = i;
  c.descendants = sp.agents;
  c.strict_ancestors = topology.strict_ancestors(i);
  c.own = sp.own;
  c.n = sp.n;
  c.m = sp.m;
  c.tau = tau;
  c.coupling = opts.coupling;
  c.A = sp.A;
  c.B = g.modified.B2;
  c.F = gains.regulator.F;
  c.L = gains.L();
  c.A_local = plant.agent(i).A;
  c.B_local = plant.agent(i).B2;
  c.C_local = plant.agent(i).C2;
  c.C1_modified = g.modified.C1;
  c.fir_u = g.fir_u;
  c.fir_b = g.fir_b;
  c.own_inputs = g.own_inputs;
  c.delayed_inputs = g.delayed_inputs;
  c.X = gains.regulator.X;
  c.Y = gains.estimator.X;
  c.regulator_residual = gains.regulator_residual;
  c.estimator_residual = gains.estimator_residual;
  c.symplectic_error = g.symplectic_error;
  return c;
}

namespace internal {

// Requested worker count (0: hardware concurrency), capped by DELQG_THREADS.
inline int thread_budget(int requested) {
  int n = requested > 0
              ? requested
              : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("DELQG_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

// Runs f(0..count−1) on up to `threads` workers and rethrows the first
// failure (lowest index) with the index prepended.
template <typename Fn>
void parallel_for(int count, int threads, Fn&& f, const char* label) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  auto run = [&](int k) {
    try {
      f(k);
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  };
  const int workers = std::min(std::max(1, threads), count);
  if (workers <= 1) {
    for (int k = 0; k < count; ++k) run(k);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int k = w; k < count; k += workers) run(k);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (int k = 0; k < count; ++k) {
    if (errors[static_cast<std::size_t>(k)]) {
      rethrow_with_context(errors[static_cast<std::size_t>(k)],
                           std::string(label) + " " + std::to_string(k));
    }
  }
}

}  // namespace internal

/// Optimal controller for every agent. Per-agent problems run in parallel.
inline DecentralizedController synthesize_all(
    const FourBlockPlant& plant, const Topology& topology, double tau,
    const SynthesisOptions& opts = {}) {
  if (topology.agents() != plant.agents()) {
    throw DimensionMismatch("synthesize_all: topology / plant size mismatch");
  }
  DecentralizedController K;
  K.topology = topology;
  K.tau = tau;
  K.agents.resize(static_cast<std::size_t>(plant.agents()));
  internal::parallel_for(
      plant.agents(), internal::thread_budget(opts.threads),
      [&](int i) {
        K.agents[static_cast<std::size_t>(i)] =
            synthesize_agent(plant, topology, tau, i, opts);
      },
      "agent");
  return K;
}

/// Zero-delay controller: undelayed sub-plant gains, ancestor estimates
/// shared without delay.
inline DecentralizedController limit_zero_delay(
    const FourBlockPlant& plant, const Topology& topology,
    const SynthesisOptions& opts = {}) {
  SynthesisOptions o = opts;
  o.coupling = AncestorCoupling::kSharedInnovation;
  return synthesize_all(plant, topology, 0.0, o);
}

/// Infinite-delay controller: N independent LQG controllers, agent i using
/// ric(A_ii, B2_ii, C1_{:,i}, D12_{:,i}) and its own estimator.
inline DecentralizedController limit_infinite_delay(
    const FourBlockPlant& plant, const SynthesisOptions& opts = {}) {
  const Topology none = Topology::disconnected(plant.agents());
  DecentralizedController K = synthesize_all(plant, none, 0.0, opts);
  K.tau = 0.0;
  return K;
}

// ---------------------------------------------------------------------------
// Aggregated frequency response

namespace internal {

struct AgentResponseBlocks {
  MatrixXcd M;     // sI − A − LC − BF + E L Π_b F, on η
  MatrixXcd U;     // Λ Π_u F, rows m_i̲
};

inline AgentResponseBlocks agent_blocks(const AgentController& c,
                                        double omega) {
  using cd = std::complex<double>;
  const cd s(0.0, omega);
  const MatrixXcd Fc = c.F.cast<cd>();
  AgentResponseBlocks b;
  b.M = -(c.A + c.lc() + c.B * c.F).cast<cd>() +
        c.injection().cast<cd>() * c.pi_b(omega) * Fc;
  b.M.diagonal().array() += s;
  b.U = c.lambda(omega).asDiagonal() * c.pi_u(omega) * Fc;
  return b;
}

}  // namespace internal

/// K(jω) of the aggregated closed form: per-agent model-matching blocks
/// coupled through the plant, p → m over all agents. Valid for controllers
/// with the local-model coupling (or without ancestors).
inline MatrixXcd global_controller_response(
    const FourBlockPlant& plant, const DecentralizedController& K,
    double omega) {
  using cd = std::complex<double>;
  const int N = plant.agents();
  if (K.size() != N) {
    throw DimensionMismatch("global_controller_response: size mismatch");
  }
  std::vector<int> dims;
  for (const auto& a : K.agents) dims.push_back(a.estimate_dim());
  const Partition eta(dims);
  const int T = eta.total();
  const Partition& mp = plant.m();
  const Partition& pp = plant.p();
  MatrixXcd M = MatrixXcd::Zero(T, T);
  MatrixXcd Bin = MatrixXcd::Zero(T, pp.total());
  MatrixXcd U = MatrixXcd::Zero(mp.total(), T);
  MatrixXcd Uoff = MatrixXcd::Zero(mp.total(), T);
  for (int i = 0; i < N; ++i) {
    const AgentController& c = K.agents[static_cast<std::size_t>(i)];
    const auto blk = internal::agent_blocks(c, omega);
    const auto rows = eta.indices({i});
    M(rows, rows) = blk.M;
    Bin(rows, pp.indices({i})) = -c.injection().cast<cd>();
    const auto mrows = mp.indices(c.descendants);
    U(mrows, rows) = blk.U;
    MatrixXcd off = blk.U;
    off(c.own_inputs, Eigen::all).setZero();
    Uoff(mrows, rows) = off;
  }
  // Each agent's innovation sees the plant response to the other agents'
  // commands on its inputs: −E L G_jj (Uoff)_j.
  const cd s(0.0, omega);
  for (int j = 0; j < N; ++j) {
    const AgentController& c = K.agents[static_cast<std::size_t>(j)];
    const AgentBlocks& ag = plant.agent(j);
    MatrixXcd R = -ag.A.cast<cd>();
    R.diagonal().array() += s;
    const MatrixXcd Gjj =
        ag.C2.cast<cd>() * R.partialPivLu().solve(ag.B2.cast<cd>());
    M(eta.indices({j}), Eigen::all) -=
        c.injection().cast<cd>() * Gjj * Uoff(mp.indices({j}), Eigen::all);
  }
  Eigen::PartialPivLU<MatrixXcd> lu(M);
  if (!(lu.rcond() > 1e-13)) {
    throw SingularResolvent("global_controller_response: singular at ω = " +
                            std::to_string(omega));
  }
  return U * lu.solve(Bin);
}

/// Centralized LQG cost tr(B1ᵀXB1) + tr(F Y Fᵀ) (normalized D12, D21).
inline double centralized_lqg_cost(const FourBlockPlant& plant) {
  const MatrixXd A = plant.A();
  const MatrixXd B1 = plant.B1();
  const RiccatiSolution reg =
      solve_care(A, plant.B2(), plant.C1(), plant.D12());
  const RiccatiSolution est = solve_care(A.transpose(), plant.C2().transpose(),
                                         B1.transpose(),
                                         plant.D21().transpose());
  const MatrixXd R = plant.D12().transpose() * plant.D12();
  return (B1.transpose() * reg.X * B1).trace() +
         (R * reg.F * est.X * reg.F.transpose()).trace();
}

}  // namespace delqg
