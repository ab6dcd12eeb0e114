#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "delqg/errors.hpp"

namespace delqg {

/// Sorted (ascending) list of agent indices.
using IndexSet = std::vector<int>;

/// Square boolean matrix over agents. Entry (i, j) refers to the ordered pair
/// "j → i" throughout: i receives from / is reachable from j.
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Block sizes of a partitioned dimension (n₁…n_N, m₁…m_N, ...).
class Partition {
 public:
  Partition() : offsets_{0} {}
  explicit Partition(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    offsets_.resize(sizes_.size() + 1, 0);
    for (std::size_t k = 0; k < sizes_.size(); ++k) {
      if (sizes_[k] < 0) {
        throw DimensionMismatch("Partition: negative block size");
      }
      offsets_[k + 1] = offsets_[k] + sizes_[k];
    }
  }

  int blocks() const { return static_cast<int>(sizes_.size()); }
  int size(int k) const { return sizes_.at(static_cast<std::size_t>(k)); }
  int offset(int k) const { return offsets_.at(static_cast<std::size_t>(k)); }
  int total() const { return offsets_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }

  /// Total dimension of the blocks in `subset`.
  int total(const IndexSet& subset) const {
    int t = 0;
    for (int k : subset) t += size(check(k));
    return t;
  }

  /// Scalar indices covered by the blocks of `subset`, in subset order.
  std::vector<int> indices(const IndexSet& subset) const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(total(subset)));
    for (int k : subset) {
      for (int r = 0; r < size(k); ++r) out.push_back(offset(k) + r);
    }
    return out;
  }

  /// Partition made of the blocks of `subset`, in subset order.
  Partition restrict(const IndexSet& subset) const {
    std::vector<int> s;
    s.reserve(subset.size());
    for (int k : subset) s.push_back(size(check(k)));
    return Partition(std::move(s));
  }

  bool operator==(const Partition& o) const { return sizes_ == o.sizes_; }

 private:
  int check(int k) const {
    if (k < 0 || k >= blocks()) {
      throw IndexOutOfRange("Partition: block index " + std::to_string(k) +
                            " out of range");
    }
    return k;
  }

  std::vector<int> sizes_;
  std::vector<int> offsets_;
};

/// Reflexive-transitive closure by repeated boolean squaring.
inline BoolMatrix transitive_closure(const BoolMatrix& adjacency) {
  if (adjacency.rows() != adjacency.cols()) {
    throw DimensionMismatch("transitive_closure: adjacency must be square");
  }
  const Eigen::Index N = adjacency.rows();
  BoolMatrix S = adjacency;
  for (Eigen::Index i = 0; i < N; ++i) S(i, i) = true;
  for (;;) {
    BoolMatrix next = S;
    for (Eigen::Index i = 0; i < N; ++i) {
      for (Eigen::Index k = 0; k < N; ++k) {
        if (!S(i, k)) continue;
        for (Eigen::Index j = 0; j < N; ++j) {
          if (S(k, j)) next(i, j) = true;
        }
      }
    }
    if (next == S) return S;
    S = std::move(next);
  }
}

/// Communication graph and its connectivity matrix S, where S(i, j) = 1 iff
/// i = j or there is a directed path from agent j to agent i.
class Topology {
 public:
  Topology() = default;
  explicit Topology(BoolMatrix adjacency)
      : adjacency_(std::move(adjacency)),
        closure_(transitive_closure(adjacency_)) {}

  static Topology disconnected(int N) {
    return Topology(BoolMatrix::Constant(N, N, false));
  }
  static Topology complete(int N) {
    return Topology(BoolMatrix::Constant(N, N, true));
  }
  /// 0 → 1 → … → N−1.
  static Topology chain(int N) {
    BoolMatrix a = BoolMatrix::Constant(N, N, false);
    for (int i = 1; i < N; ++i) a(i, i - 1) = true;
    return Topology(std::move(a));
  }
  /// Agent 0 broadcasts to every other agent.
  static Topology star(int N) {
    BoolMatrix a = BoolMatrix::Constant(N, N, false);
    for (int i = 1; i < N; ++i) a(i, 0) = true;
    return Topology(std::move(a));
  }
  /// Four-agent example: agents 0, 1, 2 form a cycle 0 → 1 → 2 → 0 and agent
  /// 0 also feeds agent 3.
  static Topology four_agent_example() {
    BoolMatrix a = BoolMatrix::Constant(4, 4, false);
    a(1, 0) = true;
    a(2, 1) = true;
    a(0, 2) = true;
    a(3, 0) = true;
    return Topology(std::move(a));
  }

  int agents() const { return static_cast<int>(closure_.rows()); }
  const BoolMatrix& adjacency() const { return adjacency_; }
  const BoolMatrix& closure() const { return closure_; }
  bool reaches(int from, int to) const {
    return closure_(check(to), check(from));
  }

  /// { j : S(j, i) = 1 }: agents reachable from i, including i.
  IndexSet descendants(int i) const {
    check(i);
    IndexSet out;
    for (int j = 0; j < agents(); ++j) {
      if (closure_(j, i)) out.push_back(j);
    }
    return out;
  }
  IndexSet strict_descendants(int i) const { return without(descendants(i), i); }

  /// { j : S(i, j) = 1 }: agents that reach i, including i.
  IndexSet ancestors(int i) const {
    check(i);
    IndexSet out;
    for (int j = 0; j < agents(); ++j) {
      if (closure_(i, j)) out.push_back(j);
    }
    return out;
  }
  IndexSet strict_ancestors(int i) const { return without(ancestors(i), i); }

 private:
  int check(int i) const {
    if (i < 0 || i >= agents()) {
      throw IndexOutOfRange("Topology: agent " + std::to_string(i) +
                            " out of range");
    }
    return i;
  }
  static IndexSet without(IndexSet s, int i) {
    s.erase(std::remove(s.begin(), s.end(), i), s.end());
    return s;
  }

  BoolMatrix adjacency_;
  BoolMatrix closure_;
};

/// The (Σ sizes) × (Σ subset sizes) 0/1 matrix whose columns pick out the
/// blocks of `subset` in ascending order.
inline Eigen::MatrixXd selector(const Partition& partition,
                                const IndexSet& subset) {
  for (std::size_t k = 0; k < subset.size(); ++k) {
    if (subset[k] < 0 || subset[k] >= partition.blocks()) {
      throw IndexOutOfRange("selector: block index out of range");
    }
    if (k > 0 && subset[k] <= subset[k - 1]) {
      throw UnsortedSubset("selector: subset must be strictly ascending");
    }
  }
  const std::vector<int> rows = partition.indices(subset);
  Eigen::MatrixXd E =
      Eigen::MatrixXd::Zero(partition.total(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c) {
    E(rows[c], static_cast<Eigen::Index>(c)) = 1.0;
  }
  return E;
}

/// Block positions of `inner` inside `outer` (both sorted).
inline std::vector<int> subset_position(const IndexSet& outer,
                                        const IndexSet& inner) {
  std::vector<int> pos;
  pos.reserve(inner.size());
  for (int k : inner) {
    auto it = std::lower_bound(outer.begin(), outer.end(), k);
    if (it == outer.end() || *it != k) {
      throw NotASubset("subset_position: agent " + std::to_string(k) +
                       " not in outer set");
    }
    pos.push_back(static_cast<int>(it - outer.begin()));
  }
  return pos;
}

}  // namespace delqg
