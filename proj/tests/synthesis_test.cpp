#include <cstdlib>
#include <string>

#include <gtest/gtest.h>

#include "delqg/h2.hpp"
#include "delqg/synthesis.hpp"
#include "support.hpp"

namespace delqg {
namespace {

using cd = std::complex<double>;

TEST(Synthesis, SingleAgentIsClassicalLqg) {
  const Problem pr = random_problem(3, {{3, 2, 2, 5}}, Topology::disconnected(1), 0.4);
  const FourBlockPlant& P = pr.plant;
  const DecentralizedController K = synthesize_all(P, pr.topology, 0.4);
  const AgentController& c = K.agents[0];
  EXPECT_TRUE(c.delayed_inputs.empty());
  EXPECT_EQ(c.state_dim(), 3);

  const RiccatiSolution reg = solve_care(P.A(), P.B2(), P.C1(), P.D12());
  const RiccatiSolution est = solve_care(P.A().transpose(), P.C2().transpose(),
                                         P.B1().transpose(), P.D21().transpose());
  const MatrixXd L = est.F.transpose();
  EXPECT_LE((c.F - reg.F).norm(), 1e-10 * reg.F.norm());
  EXPECT_LE((c.L - L).norm(), 1e-10 * L.norm());
  for (double w : log_grid(1e-2, 1e2, 9)) {
    MatrixXcd R = -(P.A() + P.B2() * reg.F + L * P.C2()).cast<cd>();
    R.diagonal().array() += cd(0.0, w);
    const MatrixXcd expected =
        -reg.F.cast<cd>() * R.partialPivLu().solve(L.cast<cd>());
    EXPECT_LE(relative_difference(controller_response(P, K, w), expected), 1e-12);
  }
}

TEST(Synthesis, DisconnectedGraphIsInfiniteDelayLimit) {
  const Problem pr = testing::four_agent_instance(4, 0.0);
  const DecentralizedController a =
      synthesize_all(pr.plant, Topology::disconnected(4), 0.7);
  const DecentralizedController b = limit_infinite_delay(pr.plant);
  for (int i = 0; i < 4; ++i) {
    EXPECT_LE((a.agents[i].F - b.agents[i].F).norm(), 1e-12);
    EXPECT_EQ(a.agents[i].descendants, IndexSet{i});
    const RiccatiSolution s =
        solve_care(pr.plant.agent(i).A, pr.plant.agent(i).B2,
                   pr.plant.C1().middleCols(2 * i, 2),
                   pr.plant.D12().middleCols(i, 1));
    EXPECT_LE((b.agents[i].F - s.F).norm(), 1e-10 * s.F.norm());
  }
}

TEST(Synthesis, ResidualsOnRandomInstances) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Problem pr = testing::random_instance(seed, 0.5);
    const DecentralizedController K = synthesize_all(pr.plant, pr.topology, 0.5);
    for (const AgentController& c : K.agents) {
      EXPECT_LE(c.regulator_residual, 1e-8) << "seed " << seed;
      EXPECT_LE(c.estimator_residual, 1e-8) << "seed " << seed;
      EXPECT_LT(spectral_abscissa(c.A + c.B * c.F), 0.0);
      EXPECT_LT(spectral_abscissa(c.A_local + c.L * c.C_local), 0.0);
    }
  }
}

TEST(Synthesis, FourAgentLeafController) {
  const Problem pr = testing::four_agent_instance(1, 0.3);
  const AgentController c = synthesize_agent(pr.plant, pr.topology, 0.3, 3);
  EXPECT_EQ(c.estimate_dim(), 2);
  EXPECT_TRUE(c.delayed_inputs.empty());
  EXPECT_EQ(c.strict_ancestors, (IndexSet{0, 1, 2}));
  // η plus the local model of the agent's own state.
  EXPECT_TRUE(c.has_local_model());
  EXPECT_EQ(c.state_dim(), 4);
  SynthesisOptions o;
  o.coupling = AncestorCoupling::kSharedInnovation;
  EXPECT_EQ(synthesize_agent(pr.plant, pr.topology, 0.3, 3, o).state_dim(), 2);

  const AgentController c1 = synthesize_agent(pr.plant, pr.topology, 0.3, 1);
  EXPECT_EQ(c1.estimate_dim(), 8);
  EXPECT_EQ(c1.F.rows(), 4);
  EXPECT_EQ(c1.delayed_inputs, (std::vector<int>{0, 2, 3}));
}

TEST(Synthesis, ZeroDelayCouplingsAgree) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Problem pr = testing::random_instance(seed, 0.0);
    const DecentralizedController a = synthesize_all(pr.plant, pr.topology, 0.0);
    const DecentralizedController b = limit_zero_delay(pr.plant, pr.topology);
    for (double w : log_grid(1e-2, 1e2, 7)) {
      EXPECT_LE(relative_difference(controller_response(pr.plant, a, w),
                                    controller_response(pr.plant, b, w)),
                1e-9)
          << "seed " << seed << " ω = " << w;
    }
  }
}

TEST(Synthesis, AggregatedFormMatchesModelMatching) {
  const Problem pr = testing::four_agent_instance(9, 0.3);
  const DecentralizedController K = synthesize_all(pr.plant, pr.topology, 0.3);
  for (double w : {0.0, 0.05, 0.7, 3.0, 20.0}) {
    EXPECT_LE(relative_difference(global_controller_response(pr.plant, K, w),
                                  testing::youla_response(pr.plant, K, w)),
              1e-10)
        << "ω = " << w;
  }
}

TEST(Synthesis, ThreadCountDoesNotChangeResult) {
  const Problem pr = testing::four_agent_instance(10, 0.25);
  SynthesisOptions one, many;
  one.threads = 1;
  many.threads = 4;
  const DecentralizedController a = synthesize_all(pr.plant, pr.topology, 0.25, one);
  const DecentralizedController b = synthesize_all(pr.plant, pr.topology, 0.25, many);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(a.agents[i].F, b.agents[i].F);
    EXPECT_EQ(a.agents[i].L, b.agents[i].L);
  }
}

TEST(Synthesis, ThreadBudgetHonoursEnvironment) {
  ::setenv("DELQG_THREADS", "2", 1);
  EXPECT_EQ(internal::thread_budget(8), 2);
  EXPECT_EQ(internal::thread_budget(1), 1);
  EXPECT_LE(internal::thread_budget(0), 2);
  ::unsetenv("DELQG_THREADS");
  EXPECT_EQ(internal::thread_budget(8), 8);
}

TEST(Synthesis, ErrorNamesTheAgent) {
  const Problem pr = testing::four_agent_instance(2, 0.2);
  std::vector<AgentBlocks> blocks;
  for (int i = 0; i < 4; ++i) blocks.push_back(pr.plant.agent(i));
  blocks[2].D21.setZero();
  const FourBlockPlant bad(blocks, pr.plant.C1(), pr.plant.D12());
  try {
    synthesize_all(bad, pr.topology, 0.2);
    FAIL() << "expected NoStabilizingSolution";
  } catch (const NoStabilizingSolution& e) {
    EXPECT_NE(std::string(e.what()).find("agent 2"), std::string::npos)
        << e.what();
  }
}

TEST(Synthesis, ControllerDependsOnDescendantsOnly) {
  const Problem pr = testing::four_agent_instance(6, 0.2);
  std::vector<AgentBlocks> blocks;
  for (int i = 0; i < 4; ++i) blocks.push_back(pr.plant.agent(i));
  blocks[0].A(0, 1) += 0.3;
  const FourBlockPlant mutated(blocks, pr.plant.C1(), pr.plant.D12());
  const DecentralizedController a = synthesize_all(pr.plant, pr.topology, 0.2);
  const DecentralizedController b = synthesize_all(mutated, pr.topology, 0.2);
  EXPECT_EQ(a.agents[3].F, b.agents[3].F);  // 0 is not a descendant of 3
  EXPECT_EQ(a.agents[3].L, b.agents[3].L);
  EXPECT_GT((a.agents[1].F - b.agents[1].F).norm(), 1e-6);
}

TEST(Synthesis, ShortcutDoesNotChangeGain) {
  const Problem pr = testing::four_agent_instance(7, 0.0);
  SynthesisOptions o;
  o.gamma.shortcut_trivial = false;
  for (double tau : {0.0, 0.4}) {
    const AgentController a = synthesize_agent(pr.plant, pr.topology, tau, 3);
    const AgentController b = synthesize_agent(pr.plant, pr.topology, tau, 3, o);
    EXPECT_LE((a.F - b.F).norm(), 1e-10 * a.F.norm()) << "τ = " << tau;
  }
  const AgentController a = synthesize_agent(pr.plant, pr.topology, 0.0, 1);
  const AgentController b = synthesize_agent(pr.plant, pr.topology, 0.0, 1, o);
  EXPECT_LE((a.F - b.F).norm(), 1e-10 * a.F.norm());
}

TEST(Synthesis, LargeDelayRegression) {
  // Badly scaled modified plant near the conditioning cap.
  const std::vector<AgentDims> dims(3, AgentDims{2, 1, 1, 3});
  const Problem pr = random_problem(2, dims, Topology::chain(3), 3.0);
  const AgentController c = synthesize_agent(pr.plant, pr.topology, 3.0, 1);
  EXPECT_LE(c.regulator_residual, 1e-8);
  EXPECT_LT(spectral_abscissa(c.A + c.B * c.F), 0.0);
}

// Own-state columns of F̃ⁱ approach the decoupled gain as τ grows.
TEST(Synthesis, ApproachesDecoupledGain) {
  const std::vector<AgentDims> dims(3, AgentDims{2, 1, 1, 3});
  GeneratorOptions g;
  g.hurwitz_margin = 2.0;
  const Problem pr = random_problem(2, dims, Topology::chain(3), 0.0, g);
  const int i = 1;
  ASSERT_GE(op_norm(pr.plant.agent(i).A), 1.0);
  const MatrixXd Finf = limit_infinite_delay(pr.plant).agents[i].F;
  double prev = std::numeric_limits<double>::infinity();
  for (double tau = 0.25; tau <= 3.5 + 1e-12; tau += 0.25) {
    const AgentController c = synthesize_agent(pr.plant, pr.topology, tau, i);
    MatrixXd E = MatrixXd::Zero(c.F.rows(), Finf.cols());
    E(c.own_inputs, Eigen::all) = Finf;
    const double err = (c.F(Eigen::all, c.own_states()) - E).norm() / Finf.norm();
    EXPECT_LT(err, prev) << "τ = " << tau;
    prev = err;
  }
  EXPECT_LE(prev, 1e-3);
}

}  // namespace
}  // namespace delqg
