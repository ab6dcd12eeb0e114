#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "delqg/h2.hpp"
#include "delqg/plant.hpp"
#include "delqg/synthesis.hpp"
#include "delqg/topology.hpp"

namespace delqg::testing {

/// Random digraph with edge probability `p` (no self loops).
inline Topology random_topology(std::uint64_t seed, int N, double p) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution edge(p);
  BoolMatrix a = BoolMatrix::Constant(N, N, false);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      if (i != j) a(i, j) = edge(rng);
    }
  }
  return Topology(std::move(a));
}

/// Random per-agent dimensions with n_i ≤ max_n, m_i, p_i ≤ 2, pw_i = n_i + p_i.
inline std::vector<AgentDims> random_dims(std::uint64_t seed, int N,
                                          int max_n = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> un(1, max_n), u2(1, 2);
  std::vector<AgentDims> dims;
  for (int i = 0; i < N; ++i) {
    AgentDims d;
    d.n = un(rng);
    d.m = u2(rng);
    d.p = u2(rng);
    d.pw = d.n + d.p;
    dims.push_back(d);
  }
  return dims;
}

/// Random instance: N in [2, 4], random graph, random dims.
inline Problem random_instance(std::uint64_t seed, double tau,
                               double edge_p = 0.5, int max_n = 2) {
  std::mt19937_64 rng(seed * 7919 + 17);
  const int N = std::uniform_int_distribution<int>(2, 4)(rng);
  const Topology t = random_topology(seed + 101, N, edge_p);
  return random_problem(seed, random_dims(seed + 202, N, max_n), t, tau);
}

/// Four-agent example graph with dims (n, m, p) = (2, 1, 1) per agent.
inline Problem four_agent_instance(std::uint64_t seed, double tau) {
  const std::vector<AgentDims> dims(4, AgentDims{2, 1, 1, 3});
  return random_problem(seed, dims, Topology::four_agent_example(), tau);
}

/// K(jω) from the model-matching relation K = P(I + G(P − diag P))⁻¹, with
/// P assembled from the per-agent blocks −ΛΠ_uF̃(sI − M̃)⁻¹EL.
inline MatrixXcd youla_response(const FourBlockPlant& plant,
                                const DecentralizedController& K,
                                double omega) {
  using cd = std::complex<double>;
  const cd s(0.0, omega);
  const Partition& mp = plant.m();
  const Partition& pp = plant.p();
  MatrixXcd P = MatrixXcd::Zero(mp.total(), pp.total());
  for (const AgentController& c : K.agents) {
    MatrixXcd M = -(c.A + c.lc() + c.B * c.F).cast<cd>() +
                  c.injection().cast<cd>() * c.pi_b(omega) * c.F.cast<cd>();
    M.diagonal().array() += s;
    const MatrixXcd blk = -(c.lambda(omega).asDiagonal() * c.pi_u(omega) *
                            c.F.cast<cd>() *
                            M.partialPivLu().solve(c.injection().cast<cd>()));
    P(mp.indices(c.descendants), pp.indices({c.agent})) = blk;
  }
  MatrixXcd R = -plant.A().cast<cd>();
  R.diagonal().array() += s;
  const MatrixXcd G = plant.C2().cast<cd>() *
                      R.partialPivLu().solve(plant.B2().cast<cd>());
  MatrixXcd off = P;
  for (int i = 0; i < plant.agents(); ++i) {
    off(mp.indices({i}), pp.indices({i})).setZero();
  }
  const MatrixXcd I = MatrixXcd::Identity(pp.total(), pp.total());
  return P * (I + G * off).partialPivLu().inverse();
}

}  // namespace delqg::testing
