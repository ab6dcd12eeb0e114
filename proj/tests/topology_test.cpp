#include <gtest/gtest.h>

#include "delqg/topology.hpp"

namespace delqg {
namespace {

BoolMatrix bools(std::initializer_list<std::initializer_list<int>> rows) {
  const int r = static_cast<int>(rows.size());
  const int c = static_cast<int>(rows.begin()->size());
  BoolMatrix M(r, c);
  int i = 0;
  for (const auto& row : rows) {
    int j = 0;
    for (int v : row) M(i, j++) = v != 0;
    ++i;
  }
  return M;
}

TEST(Closure, Chain) {
  const Topology t = Topology::chain(3);
  EXPECT_EQ(t.closure(), bools({{1, 0, 0}, {1, 1, 0}, {1, 1, 1}}));
  EXPECT_EQ(t.ancestors(2), (IndexSet{0, 1, 2}));
  EXPECT_EQ(t.descendants(0), (IndexSet{0, 1, 2}));
  EXPECT_EQ(t.strict_descendants(2), IndexSet{});
}

TEST(Closure, FourAgentExample) {
  const Topology t = Topology::four_agent_example();
  EXPECT_EQ(t.closure(),
            bools({{1, 1, 1, 0}, {1, 1, 1, 0}, {1, 1, 1, 0}, {1, 1, 1, 1}}));
  // Agent indices are zero-based: the second agent is index 1.
  EXPECT_EQ(t.descendants(1), (IndexSet{0, 1, 2, 3}));
  EXPECT_EQ(t.strict_descendants(1), (IndexSet{0, 2, 3}));
  EXPECT_EQ(t.strict_ancestors(1), (IndexSet{0, 2}));
  EXPECT_EQ(t.descendants(3), IndexSet{3});
  EXPECT_EQ(t.strict_ancestors(3), (IndexSet{0, 1, 2}));
}

TEST(Closure, IsReflexiveAndTransitive) {
  for (int seed = 0; seed < 20; ++seed) {
    const int N = 2 + seed % 5;
    BoolMatrix a(N, N);
    unsigned state = 2654435761u * static_cast<unsigned>(seed + 1);
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) {
        state = state * 1664525u + 1013904223u;
        a(i, j) = (state >> 28) < 5;
      }
    }
    const BoolMatrix S = transitive_closure(a);
    for (int i = 0; i < N; ++i) {
      EXPECT_TRUE(S(i, i));
      for (int j = 0; j < N; ++j) {
        if (a(i, j)) {
          EXPECT_TRUE(S(i, j));
        }
        for (int k = 0; k < N; ++k) {
          if (S(i, j) && S(j, k)) {
            EXPECT_TRUE(S(i, k));
          }
        }
      }
    }
  }
}

TEST(Closure, Presets) {
  EXPECT_EQ(Topology::disconnected(3).closure(),
            BoolMatrix(BoolMatrix::Identity(3, 3)));
  EXPECT_TRUE(Topology::complete(4).closure().all());
  const Topology star = Topology::star(4);
  EXPECT_EQ(star.descendants(0), (IndexSet{0, 1, 2, 3}));
  EXPECT_EQ(star.descendants(2), IndexSet{2});
}

TEST(Partition, OffsetsAndIndices) {
  const Partition p({2, 1, 3});
  EXPECT_EQ(p.total(), 6);
  EXPECT_EQ(p.offset(2), 3);
  EXPECT_EQ(p.indices({0, 2}), (std::vector<int>{0, 1, 3, 4, 5}));
  EXPECT_EQ(p.restrict({1, 2}).sizes(), (std::vector<int>{1, 3}));
}

TEST(Selector, PicksBlock) {
  const Partition p({2, 1, 3});
  const Eigen::MatrixXd E = selector(p, {1});
  ASSERT_EQ(E.rows(), 6);
  ASSERT_EQ(E.cols(), 1);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(6);
  expected(2) = 1.0;
  EXPECT_EQ(E.col(0), expected);
  EXPECT_EQ(selector(p, {0, 2}).transpose() * selector(p, {0, 2}),
            Eigen::MatrixXd(Eigen::MatrixXd::Identity(5, 5)));
}

TEST(Selector, Errors) {
  const Partition p({2, 1, 3});
  EXPECT_THROW(selector(p, {2, 1}), UnsortedSubset);
  EXPECT_THROW(selector(p, {1, 1}), UnsortedSubset);
  EXPECT_THROW(selector(p, {3}), IndexOutOfRange);
  EXPECT_THROW(Topology::chain(3).descendants(3), IndexOutOfRange);
}

TEST(SubsetPosition, Examples) {
  EXPECT_EQ(subset_position({0, 2, 3}, {2, 3}), (std::vector<int>{1, 2}));
  const Topology t = Topology::four_agent_example();
  EXPECT_EQ(subset_position(t.descendants(0), t.descendants(1)),
            (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(subset_position(t.descendants(0), t.ancestors(1)),
            (std::vector<int>{0, 1, 2}));
  EXPECT_THROW(subset_position({0, 2}, {1}), NotASubset);
}

}  // namespace
}  // namespace delqg
