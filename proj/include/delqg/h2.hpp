#pragma once

#include <cmath>
#include <complex>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "delqg/errors.hpp"
#include "delqg/linalg.hpp"
#include "delqg/plant.hpp"
#include "delqg/simulation.hpp"
#include "delqg/synthesis.hpp"

namespace delqg {

/// One step of the discretized loop as x⁺ = Ad x + Bd ξ, z = Cd x, with ξ a
/// standard normal vector (the noise applied is ξ/√h).
///
/// State layout: plant states of every agent, then controller states of
/// every agent, then the delay lines (ν̃ history, lags 1..d, for agents that
/// broadcast; η history as well with the shared-innovation coupling).
struct AugmentedDiscreteLoop {
  MatrixXd Ad, Bd, Cd;
  double h = 0.0;
  int plant_dim = 0, controller_dim = 0, buffer_dim = 0;
  std::vector<int> x_off, z_off, nu_off, eta_off, w_off;

  int dim() const { return static_cast<int>(Ad.rows()); }
};

inline AugmentedDiscreteLoop augment(const ClosedLoopModel& m) {
  const int N = m.size();
  const int d = m.d;
  AugmentedDiscreteLoop L;
  L.h = m.h;
  int off = 0;
  for (const AgentLoop& a : m.agents) {
    L.x_off.push_back(off);
    off += static_cast<int>(a.Phi_x.rows());
  }
  L.plant_dim = off;
  for (const AgentLoop& a : m.agents) {
    L.z_off.push_back(off);
    off += static_cast<int>(a.Phi_z.rows());
  }
  L.controller_dim = off - L.plant_dim;
  for (const AgentLoop& a : m.agents) {
    L.nu_off.push_back(off);
    if (a.keeps_nu_history) off += d * static_cast<int>(a.F.rows());
  }
  for (const AgentLoop& a : m.agents) {
    L.eta_off.push_back(off);
    if (a.keeps_eta_history) off += d * a.eta_dim;
  }
  L.buffer_dim = off - L.plant_dim - L.controller_dim;
  const int dim = off;
  int wdim = 0;
  for (const AgentLoop& a : m.agents) {
    L.w_off.push_back(wdim);
    wdim += static_cast<int>(a.Gam_w.cols());
  }
  L.Ad = MatrixXd::Zero(dim, dim);
  L.Bd = MatrixXd::Zero(dim, wdim);
  L.Cd = MatrixXd::Zero(m.plant.q(), dim);
  const double ws = 1.0 / std::sqrt(m.h);

  // target += coeff · ν̃_k(t − l h)
  auto add_nu = [&](Eigen::Ref<MatrixXd> target, int k, int l,
                    const MatrixXd& coeff) {
    const AgentLoop& a = m.agents[static_cast<std::size_t>(k)];
    const int mk = static_cast<int>(a.F.rows());
    if (l == 0) {
      target.middleCols(L.z_off[static_cast<std::size_t>(k)], a.eta_dim) +=
          coeff * a.F;
    } else {
      target.middleCols(L.nu_off[static_cast<std::size_t>(k)] + (l - 1) * mk,
                        mk) += coeff;
    }
  };
  // target += coeff · η_k(t − l h)
  auto add_eta = [&](Eigen::Ref<MatrixXd> target, int k, int l,
                     const MatrixXd& coeff) {
    const AgentLoop& a = m.agents[static_cast<std::size_t>(k)];
    const int col = l == 0 ? L.z_off[static_cast<std::size_t>(k)]
                           : L.eta_off[static_cast<std::size_t>(k)] +
                                 (l - 1) * a.eta_dim;
    target.middleCols(col, a.eta_dim) += coeff;
  };
  auto selection = [](Eigen::Index width, const std::vector<int>& cols) {
    MatrixXd S = MatrixXd::Zero(static_cast<Eigen::Index>(cols.size()), width);
    for (std::size_t r = 0; r < cols.size(); ++r) {
      S(static_cast<Eigen::Index>(r), cols[r]) = 1.0;
    }
    return S;
  };

  std::vector<MatrixXd> U(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const AgentLoop& a = m.agents[k];
    const Eigen::Index mi = a.Gam_u.cols();
    const Eigen::Index pi = a.C2.rows();
    const Eigen::Index mw = a.F.rows();
    MatrixXd Ui = MatrixXd::Zero(mi, dim);
    MatrixXd Bi = MatrixXd::Zero(pi, dim);
    MatrixXd Ai = MatrixXd::Zero(a.Gam_a.cols(), dim);
    add_nu(Ui, i, 0, selection(mw, a.own_inputs));
    const MatrixXd Sdel = selection(mw, a.delayed_inputs);
    for (std::size_t l = 0; l < a.Ku.size(); ++l) {
      add_nu(Ui, i, static_cast<int>(l), a.Ku[l] * Sdel);
      add_nu(Bi, i, static_cast<int>(l), a.Kb[l] * Sdel);
    }
    for (std::size_t q = 0; q < a.ancestors.size(); ++q) {
      const int anc = a.ancestors[q];
      const auto& ak = m.agents[static_cast<std::size_t>(anc)];
      const MatrixXd Sr = selection(ak.F.rows(), a.anc_nu_rows[q]);
      add_nu(Ui, anc, d, Sr);
      if (Ai.rows() > 0) {
        if (m.coupling == AncestorCoupling::kLocalModel) {
          add_nu(Ai, anc, d, Sr);
        } else {
          add_eta(Ai, anc, d, selection(ak.eta_dim, a.anc_eta_rows[q]));
        }
      }
    }
    // Plant block.
    const int xo = L.x_off[k], zo = L.z_off[k], wo = L.w_off[k];
    const int nx = static_cast<int>(a.Phi_x.rows());
    const int nz = static_cast<int>(a.Phi_z.rows());
    L.Ad.block(xo, xo, nx, nx) += a.Phi_x;
    L.Ad.middleRows(xo, nx) += a.Gam_u * Ui;
    L.Bd.block(xo, wo, nx, a.Gam_w.cols()) = ws * a.Gam_w;
    // Controller block: y + b held over the step.
    MatrixXd Yb = Bi;
    Yb.middleCols(xo, nx) += a.C2;
    L.Ad.block(zo, zo, nz, nz) += a.Phi_z;
    L.Ad.middleRows(zo, nz) += a.Gam_y * Yb;
    if (Ai.rows() > 0) L.Ad.middleRows(zo, nz) += a.Gam_a * Ai;
    L.Bd.block(zo, wo, nz, a.D21.cols()) = ws * a.Gam_y * a.D21;
    // Delay lines.
    if (a.keeps_nu_history) {
      const int no = L.nu_off[k];
      L.Ad.block(no, zo, mw, a.eta_dim) = a.F;
      for (int l = 2; l <= d; ++l) {
        L.Ad.block(no + (l - 1) * mw, no + (l - 2) * mw, mw, mw).setIdentity();
      }
    }
    if (a.keeps_eta_history) {
      const int eo = L.eta_off[k];
      const int ne = a.eta_dim;
      L.Ad.block(eo, zo, ne, ne).setIdentity();
      for (int l = 2; l <= d; ++l) {
        L.Ad.block(eo + (l - 1) * ne, eo + (l - 2) * ne, ne, ne).setIdentity();
      }
    }
    U[k] = std::move(Ui);
  }
  // Cost output z = C1 x + D12 u.
  const Partition& np = m.plant.n();
  const Partition& mp = m.plant.m();
  for (int i = 0; i < N; ++i) {
    const auto k = static_cast<std::size_t>(i);
    L.Cd.middleCols(L.x_off[k], np.size(i)) +=
        m.plant.C1().middleCols(np.offset(i), np.size(i));
    L.Cd += m.plant.D12().middleCols(mp.offset(i), mp.size(i)) * U[k];
  }
  return L;
}

/// Stationary E‖z‖² of the discretized loop: tr(BdᵀPBd) with
/// AdᵀPAd − P + CdᵀCd = 0. Converges to the continuous H₂² as h → 0.
inline double h2_norm(const AugmentedDiscreteLoop& L) {
  const MatrixXd P = solve_dlyap(L.Ad, L.Cd.transpose() * L.Cd);
  return (L.Bd.transpose() * P * L.Bd).trace();
}

inline double discretized_cost(const FourBlockPlant& plant,
                               const DecentralizedController& K, double h) {
  return h2_norm(augment(discretize(plant, K, h)));
}

struct RichardsonEstimate {
  double coarse = 0.0;        // cost at h
  double fine = 0.0;          // cost at h/2
  double extrapolated = 0.0;  // 2·fine − coarse
  double error = 0.0;         // |fine − coarse|
};

inline RichardsonEstimate richardson(const FourBlockPlant& plant,
                                     const DecentralizedController& K,
                                     double h) {
  RichardsonEstimate r;
  r.coarse = discretized_cost(plant, K, h);
  r.fine = discretized_cost(plant, K, 0.5 * h);
  r.extrapolated = 2.0 * r.fine - r.coarse;
  r.error = std::abs(r.fine - r.coarse);
  return r;
}

/// Burn-in of 20 time constants of the slowest discrete mode.
inline int default_burn_in(const AugmentedDiscreteLoop& L) {
  const double rho = spectral_radius(L.Ad);
  if (!(rho < 1.0)) throw NotSchurStable("default_burn_in: ρ(Ad) ≥ 1");
  if (rho == 0.0) return 0;
  const double steps = 20.0 / -std::log(rho);
  return static_cast<int>(std::ceil(steps));
}

// ---------------------------------------------------------------------------
// Sweeps

enum class CostMethod { kLyapunov, kMonteCarlo };

struct SweepOptions {
  CostMethod method = CostMethod::kLyapunov;
  int batches = 30;
  double horizon = 200.0;
  std::uint64_t seed = 0;
  SynthesisOptions synthesis;
};

struct SweepRow {
  double tau = 0.0;
  double cost = 0.0;
  double stderr_ = 0.0;
  double centralized_ref = 0.0;
  double decoupled_ref = 0.0;
};

struct CostEstimate {
  double cost = 0.0;
  double stderr_ = 0.0;
};

inline CostEstimate evaluate_cost(const ClosedLoopModel& model,
                                  const SweepOptions& opts) {
  const AugmentedDiscreteLoop L = augment(model);
  if (opts.method == CostMethod::kLyapunov) return {h2_norm(L), 0.0};
  const MonteCarloResult mc = monte_carlo_cost(
      model, opts.batches, opts.horizon, default_burn_in(L), opts.seed,
      opts.synthesis.threads);
  return {mc.cost, mc.stderr_};
}

/// Cost per τ with the centralized (complete graph, τ = 0) and decoupled
/// (infinite-delay limit) references, all on the same discretization.
inline std::vector<SweepRow> cost_sweep(const FourBlockPlant& plant,
                                        const Topology& topology,
                                        const std::vector<double>& taus,
                                        double h,
                                        const SweepOptions& opts = {}) {
  const DecentralizedController Kc =
      synthesize_all(plant, Topology::complete(plant.agents()), 0.0,
                     opts.synthesis);
  const DecentralizedController Kd = limit_infinite_delay(plant, opts.synthesis);
  const double central = evaluate_cost(discretize(plant, Kc, h), opts).cost;
  const double decoupled = evaluate_cost(discretize(plant, Kd, h), opts).cost;
  std::vector<SweepRow> rows(taus.size());
  internal::parallel_for(
      static_cast<int>(taus.size()),
      internal::thread_budget(opts.synthesis.threads),
      [&](int k) {
        const double tau = taus[static_cast<std::size_t>(k)];
        SweepOptions o = opts;
        o.synthesis.threads = 1;
        const DecentralizedController K =
            synthesize_all(plant, topology, tau, o.synthesis);
        const CostEstimate c = evaluate_cost(discretize(plant, K, h), o);
        rows[static_cast<std::size_t>(k)] = {tau, c.cost, c.stderr_, central,
                                             decoupled};
      },
      "τ index");
  return rows;
}

// ---------------------------------------------------------------------------
// Frequency responses

/// K(jω) of the agent-level realization, obtained by eliminating every
/// controller state and every message at s = jω (delays as e^{−jωτ}, FIR
/// blocks by their exact response).
inline MatrixXcd controller_response(const FourBlockPlant& plant,
                                     const DecentralizedController& K,
                                     double omega) {
  using cd = std::complex<double>;
  const int N = plant.agents();
  if (K.size() != N) {
    throw DimensionMismatch("controller_response: size mismatch");
  }
  const cd s(0.0, omega);
  const cd delay = std::exp(-s * K.tau);
  std::vector<int> dims;
  for (const auto& a : K.agents) dims.push_back(a.state_dim());
  const Partition st(dims);
  const Partition& mp = plant.m();
  const Partition& pp = plant.p();
  MatrixXcd M = MatrixXcd::Zero(st.total(), st.total());
  MatrixXcd Bin = MatrixXcd::Zero(st.total(), pp.total());
  MatrixXcd Cout = MatrixXcd::Zero(mp.total(), st.total());
  for (int i = 0; i < N; ++i) {
    const AgentController& c = K.agents[static_cast<std::size_t>(i)];
    const int o = st.offset(i);
    const int ne = c.estimate_dim();
    const int ni = static_cast<int>(c.A_local.rows());
    const MatrixXcd EL = c.injection().cast<cd>();
    const MatrixXcd Fc = c.F.cast<cd>();
    MatrixXcd Mi = -(c.A + c.lc() + c.B * c.F).cast<cd>() +
                   EL * c.pi_b(omega) * Fc;
    Mi.diagonal().array() += s;
    M.block(o, o, ne, ne) = Mi;
    Bin.block(o, pp.offset(i), ne, pp.size(i)) = -EL;
    const MatrixXcd PF = c.pi_u(omega) * Fc;
    Cout.block(mp.offset(i), o, mp.size(i), ne) += PF(c.own_inputs, Eigen::all);
    if (c.has_local_model()) {
      M.block(o, o + ne, ne, ni) = -(EL * c.C_local.cast<cd>());
      MatrixXcd Ml = -c.A_local.cast<cd>();
      Ml.diagonal().array() += s;
      M.block(o + ne, o + ne, ni, ni) = Ml;
    }
    for (int k : c.strict_ancestors) {
      const AgentController& ck = K.agents[static_cast<std::size_t>(k)];
      const int pos = subset_position(ck.descendants, {i}).front();
      const int ok = st.offset(k);
      const MatrixXcd Fk =
          ck.F(ck.m.indices({pos}), Eigen::all).cast<cd>();
      Cout.block(mp.offset(i), ok, mp.size(i), ck.estimate_dim()) += delay * Fk;
      if (c.has_local_model()) {
        M.block(o + ne, ok, ni, ck.estimate_dim()) -=
            delay * c.B_local.cast<cd>() * Fk;
      } else {
        MatrixXcd Ek = MatrixXcd::Zero(ni, ck.estimate_dim());
        Ek(Eigen::all, ck.n.indices({pos})) = MatrixXcd::Identity(ni, ni);
        M.block(o, ok, ne, ck.estimate_dim()) -=
            delay * EL * c.C_local.cast<cd>() * Ek;
      }
    }
  }
  Eigen::PartialPivLU<MatrixXcd> lu(M);
  if (!(lu.rcond() > 1e-13)) {
    throw SingularResolvent("controller_response: singular at ω = " +
                            std::to_string(omega));
  }
  return Cout * lu.solve(Bin);
}

inline std::vector<double> log_grid(double lo, double hi, int count) {
  std::vector<double> g;
  for (int k = 0; k < count; ++k) {
    const double t = count == 1 ? 0.0 : static_cast<double>(k) / (count - 1);
    g.push_back(lo * std::pow(hi / lo, t));
  }
  return g;
}

inline double relative_difference(const MatrixXcd& a, const MatrixXcd& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale > 0.0 ? (a - b).norm() / scale : 0.0;
}

/// Largest relative Frobenius difference between the agent-level response
/// and the aggregated closed form over `omegas`.
inline double response_match(const FourBlockPlant& plant,
                             const Topology& topology, double tau,
                             const std::vector<double>& omegas,
                             const SynthesisOptions& opts = {}) {
  const DecentralizedController K = synthesize_all(plant, topology, tau, opts);
  double worst = 0.0;
  for (double w : omegas) {
    worst = std::max(worst,
                     relative_difference(controller_response(plant, K, w),
                                         global_controller_response(plant, K, w)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// First-order optimality spot-check

struct PerturbationResult {
  double base_cost = 0.0;
  /// (cost(F̃ + ε‖F̃‖Δ) − cost)/cost for each trial, Δ random with ‖Δ‖_F = 1.
  std::vector<double> relative_changes;
  double min_change() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : relative_changes) m = std::min(m, v);
    return m;
  }
};

/// Perturbs one agent's regulator gain per trial (agents taken round-robin)
/// and reports the relative change of the discretized cost.
inline PerturbationResult perturbation_check(const FourBlockPlant& plant,
                                             const DecentralizedController& K,
                                             double h, double eps, int trials,
                                             std::uint64_t seed) {
  PerturbationResult r;
  r.base_cost = discretized_cost(plant, K, h);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (int t = 0; t < trials; ++t) {
    DecentralizedController Kp = K;
    AgentController& a = Kp.agents[static_cast<std::size_t>(t % K.size())];
    MatrixXd D(a.F.rows(), a.F.cols());
    for (Eigen::Index i = 0; i < D.rows(); ++i) {
      for (Eigen::Index j = 0; j < D.cols(); ++j) D(i, j) = nd(rng);
    }
    D /= D.norm();
    a.F += eps * a.F.norm() * D;
    const double c = discretized_cost(plant, Kp, h);
    r.relative_changes.push_back((c - r.base_cost) / r.base_cost);
  }
  return r;
}

}  // namespace delqg
