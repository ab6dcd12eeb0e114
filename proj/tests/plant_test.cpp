#include <string>

#include <gtest/gtest.h>

#include "delqg/plant.hpp"
#include "support.hpp"

namespace delqg {
namespace {

bool check_passed(const AssumptionReport& rep, const std::string& name) {
  for (const Check& c : rep.checks) {
    if (c.name == name) return c.passed;
  }
  ADD_FAILURE() << "no check named " << name;
  return false;
}

TEST(Generator, ValidatesForManySeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Problem pr = testing::random_instance(seed, 0.1, 0.5, 3);
    const AssumptionReport rep = validate_assumptions(pr.plant, pr.topology);
    ASSERT_TRUE(rep.passed()) << "seed " << seed;
  }
}

TEST(Generator, IsReproducible) {
  const Problem a = testing::four_agent_instance(4, 0.2);
  const Problem b = testing::four_agent_instance(4, 0.2);
  EXPECT_EQ(a.plant.A(), b.plant.A());
  EXPECT_EQ(a.plant.C1(), b.plant.C1());
  EXPECT_EQ(a.plant.D21(), b.plant.D21());
  const Problem c = testing::four_agent_instance(5, 0.2);
  EXPECT_NE(a.plant.A(), c.plant.A());
}

TEST(Generator, RejectsInfeasibleDims) {
  const Topology t = Topology::chain(2);
  EXPECT_THROW(random_problem(0, {{1, 1, 2, 1}, {1, 1, 1, 2}}, t, 0.0),
               InfeasibleDims);
  EXPECT_THROW(random_problem(0, {{0, 1, 1, 2}, {1, 1, 1, 2}}, t, 0.0),
               InfeasibleDims);
  GeneratorOptions o;
  o.q = 1;
  EXPECT_THROW(random_problem(0, {{1, 1, 1, 2}, {1, 1, 1, 2}}, t, 0.0, o),
               InfeasibleDims);
  EXPECT_THROW(random_problem(0, {{1, 1, 1, 2}}, t, 0.0), DimensionMismatch);
}

TEST(Validation, DetectsViolations) {
  Problem pr = testing::four_agent_instance(1, 0.0);
  std::vector<AgentBlocks> blocks;
  for (int i = 0; i < 4; ++i) blocks.push_back(pr.plant.agent(i));
  blocks[2].A(0, 0) += 10.0;  // unstable A_33
  blocks[1].B1 += MatrixXd::Ones(2, 1) * blocks[1].D21;  // B1 D21ᵀ ≠ 0
  MatrixXd C1 = pr.plant.C1();
  C1 += pr.plant.D12() * MatrixXd::Ones(pr.plant.D12().cols(), C1.cols());
  const FourBlockPlant bad(blocks, C1, 2.0 * pr.plant.D12());
  const AssumptionReport rep = validate_assumptions(bad, pr.topology);
  EXPECT_FALSE(rep.passed());
  EXPECT_FALSE(check_passed(rep, "hurwitz[2]"));
  EXPECT_TRUE(check_passed(rep, "hurwitz[1]"));
  EXPECT_FALSE(check_passed(rep, "estimator.B1D21t[1]"));
  EXPECT_TRUE(check_passed(rep, "estimator.B1D21t[0]"));
  EXPECT_FALSE(check_passed(rep, "regulator.C1tD12"));
  EXPECT_FALSE(check_passed(rep, "normalized.D12[0]"));
}

TEST(Validation, UndetectableAgent) {
  const Problem pr = testing::four_agent_instance(2, 0.0);
  std::vector<AgentBlocks> blocks;
  for (int i = 0; i < 4; ++i) blocks.push_back(pr.plant.agent(i));
  // Unstable, unobserved mode in agent 0.
  blocks[0].A = MatrixXd::Zero(2, 2);
  blocks[0].A(0, 0) = 1.0;
  blocks[0].A(1, 1) = -1.0;
  blocks[0].C2 = MatrixXd::Zero(1, 2);
  blocks[0].C2(0, 1) = 1.0;
  const FourBlockPlant bad(blocks, pr.plant.C1(), pr.plant.D12());
  const AssumptionReport rep = validate_assumptions(bad, pr.topology);
  EXPECT_FALSE(check_passed(rep, "estimator.detectable[0]"));
  EXPECT_TRUE(check_passed(rep, "estimator.detectable[1]"));
}

TEST(Plant, ShapeChecks) {
  AgentBlocks a{MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 3), MatrixXd::Zero(2, 1),
                MatrixXd::Zero(1, 2), MatrixXd::Zero(1, 3)};
  EXPECT_NO_THROW(FourBlockPlant({a}, MatrixXd::Zero(3, 2), MatrixXd::Zero(3, 1)));
  EXPECT_THROW(FourBlockPlant({a}, MatrixXd::Zero(3, 3), MatrixXd::Zero(3, 1)),
               DimensionMismatch);
  AgentBlocks b = a;
  b.D21 = MatrixXd::Zero(2, 3);
  EXPECT_THROW(FourBlockPlant({b}, MatrixXd::Zero(3, 2), MatrixXd::Zero(3, 1)),
               DimensionMismatch);
  const FourBlockPlant P({a, a}, MatrixXd::Zero(3, 4), MatrixXd::Zero(3, 2));
  EXPECT_THROW(P.agent(2), IndexOutOfRange);
  EXPECT_EQ(P.A().rows(), 4);
  EXPECT_EQ(P.B1().cols(), 6);
}

TEST(Plant, FromDenseRoundTrip) {
  const Problem pr = testing::four_agent_instance(3, 0.0);
  const FourBlockPlant& P = pr.plant;
  const FourBlockPlant Q = FourBlockPlant::from_dense(
      P.A(), P.B1(), P.B2(), P.C1(), P.C2(), P.D12(), P.D21(), P.n(), P.m(),
      P.p(), P.pw());
  EXPECT_EQ(Q.A(), P.A());
  EXPECT_EQ(Q.B1(), P.B1());
  EXPECT_EQ(Q.D21(), P.D21());
  MatrixXd A = P.A();
  A(0, 2) = 1e-300;  // coupling between agents 0 and 1
  EXPECT_THROW(FourBlockPlant::from_dense(A, P.B1(), P.B2(), P.C1(), P.C2(),
                                          P.D12(), P.D21(), P.n(), P.m(),
                                          P.p(), P.pw()),
               DimensionMismatch);
}

TEST(SubPlant, LeafAgentIsItsOwnProblem) {
  const Problem pr = testing::four_agent_instance(1, 0.0);
  const SubPlant sp = extract_subplant(pr.plant, pr.topology, 3);
  EXPECT_EQ(sp.agents, IndexSet{3});
  EXPECT_EQ(sp.own, 0);
  EXPECT_EQ(sp.A, pr.plant.agent(3).A);
  EXPECT_EQ(sp.B1, pr.plant.agent(3).B1);
  EXPECT_TRUE(sp.delayed_inputs().empty());
  EXPECT_EQ(sp.C1, pr.plant.C1().middleCols(6, 2));
}

TEST(SubPlant, OverDescendants) {
  const Problem pr = testing::four_agent_instance(1, 0.0);
  const SubPlant sp = extract_subplant(pr.plant, pr.topology, 1);
  EXPECT_EQ(sp.agents, (IndexSet{0, 1, 2, 3}));
  EXPECT_EQ(sp.own, 1);
  EXPECT_EQ(sp.A, pr.plant.A());
  EXPECT_EQ(sp.B2, pr.plant.B2());
  // Noise and measurements are agent 1's only.
  EXPECT_EQ(sp.B1.cols(), pr.plant.agent(1).B1.cols());
  EXPECT_EQ(sp.B1.middleRows(2, 2), pr.plant.agent(1).B1);
  EXPECT_EQ(sp.B1.topRows(2).norm(), 0.0);
  EXPECT_EQ(sp.B1.bottomRows(4).norm(), 0.0);
  EXPECT_EQ(sp.C2.middleCols(2, 2), pr.plant.agent(1).C2);
  EXPECT_EQ(sp.C2.norm(), pr.plant.agent(1).C2.norm());
  EXPECT_EQ(sp.own_inputs(), std::vector<int>{1});
  EXPECT_EQ(sp.delayed_inputs(), (std::vector<int>{0, 2, 3}));
  EXPECT_THROW(extract_subplant(pr.plant, pr.topology, 4), IndexOutOfRange);
  EXPECT_THROW(extract_subplant(pr.plant, Topology::chain(3), 0),
               DimensionMismatch);
}

TEST(StateSpace, ResponseOfFirstOrderLag) {
  StateSpaceSystem s{MatrixXd::Constant(1, 1, -2.0), MatrixXd::Constant(1, 1, 3.0),
                     MatrixXd::Constant(1, 1, 1.0), MatrixXd::Constant(1, 1, 0.5)};
  const std::complex<double> jw(0.0, 1.5);
  const std::complex<double> expected = 3.0 / (jw + 2.0) + 0.5;
  EXPECT_LE(std::abs(s.response(jw)(0, 0) - expected), 1e-15);
}

}  // namespace
}  // namespace delqg
