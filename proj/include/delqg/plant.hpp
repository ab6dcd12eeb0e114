#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "delqg/errors.hpp"
#include "delqg/linalg.hpp"
#include "delqg/topology.hpp"

namespace delqg {

/// Dense (A, B, C, D) realization of an LTI block.
struct StateSpaceSystem {
  MatrixXd A, B, C, D;

  int states() const { return static_cast<int>(A.rows()); }
  int inputs() const { return static_cast<int>(B.cols()); }
  int outputs() const { return static_cast<int>(C.rows()); }

  MatrixXcd response(std::complex<double> s) const {
    MatrixXcd M = -A.cast<std::complex<double>>();
    M.diagonal().array() += s;
    return C.cast<std::complex<double>>() *
               M.partialPivLu().solve(B.cast<std::complex<double>>()) +
           D.cast<std::complex<double>>();
  }
};

/// Per-agent blocks of the block-diagonal matrices of the four-block plant.
struct AgentBlocks {
  MatrixXd A;    // n_i × n_i
  MatrixXd B1;   // n_i × pw_i
  MatrixXd B2;   // n_i × m_i
  MatrixXd C2;   // p_i × n_i
  MatrixXd D21;  // p_i × pw_i
};

inline MatrixXd block_diagonal(const std::vector<const MatrixXd*>& blocks) {
  Eigen::Index r = 0, c = 0;
  for (const MatrixXd* b : blocks) {
    r += b->rows();
    c += b->cols();
  }
  MatrixXd out = MatrixXd::Zero(r, c);
  r = c = 0;
  for (const MatrixXd* b : blocks) {
    out.block(r, c, b->rows(), b->cols()) = *b;
    r += b->rows();
    c += b->cols();
  }
  return out;
}

/// Four-block plant of dynamically decoupled agents:
///
///   ẋ = Ax + B1w + B2u,  z = C1x + D12u,  y = C2x + D21w
///
/// with A, B1, B2, C2, D21 block-diagonal over agents (stored per agent) and
/// dense cost matrices C1, D12.
class FourBlockPlant {
 public:
  FourBlockPlant() = default;
  FourBlockPlant(std::vector<AgentBlocks> agents, MatrixXd C1, MatrixXd D12)
      : agents_(std::move(agents)), C1_(std::move(C1)), D12_(std::move(D12)) {
    std::vector<int> n, m, p, pw;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const AgentBlocks& a = agents_[i];
      const std::string who = "FourBlockPlant: agent " + std::to_string(i);
      if (a.A.rows() != a.A.cols()) throw DimensionMismatch(who + " A not square");
      const Eigen::Index ni = a.A.rows();
      if (a.B1.rows() != ni || a.B2.rows() != ni || a.C2.cols() != ni ||
          a.D21.rows() != a.C2.rows() || a.D21.cols() != a.B1.cols()) {
        throw DimensionMismatch(who + " blocks have inconsistent shapes");
      }
      n.push_back(static_cast<int>(ni));
      m.push_back(static_cast<int>(a.B2.cols()));
      p.push_back(static_cast<int>(a.C2.rows()));
      pw.push_back(static_cast<int>(a.B1.cols()));
    }
    n_ = Partition(n);
    m_ = Partition(m);
    p_ = Partition(p);
    pw_ = Partition(pw);
    if (C1_.cols() != n_.total() || D12_.cols() != m_.total() ||
        D12_.rows() != C1_.rows()) {
      throw DimensionMismatch("FourBlockPlant: C1 / D12 shapes inconsistent");
    }
  }

  /// Builds a plant from dense global matrices, rejecting any nonzero outside
  /// the agent diagonal blocks of A, B1, B2, C2, D21.
  static FourBlockPlant from_dense(const MatrixXd& A, const MatrixXd& B1,
                                   const MatrixXd& B2, const MatrixXd& C1,
                                   const MatrixXd& C2, const MatrixXd& D12,
                                   const MatrixXd& D21, const Partition& n,
                                   const Partition& m, const Partition& p,
                                   const Partition& pw) {
    auto take = [](const MatrixXd& M, const Partition& rows,
                   const Partition& cols, const char* name) {
      if (M.rows() != rows.total() || M.cols() != cols.total()) {
        throw DimensionMismatch(std::string("from_dense: ") + name +
                                " has wrong shape");
      }
      std::vector<MatrixXd> out;
      for (int i = 0; i < rows.blocks(); ++i) {
        for (int j = 0; j < cols.blocks(); ++j) {
          auto blk = M.block(rows.offset(i), cols.offset(j), rows.size(i),
                             cols.size(j));
          if (i != j && blk.size() > 0 && blk.cwiseAbs().maxCoeff() != 0.0) {
            throw DimensionMismatch(std::string("from_dense: ") + name +
                                    " is not block-diagonal");
          }
        }
        out.emplace_back(M.block(rows.offset(i), cols.offset(i), rows.size(i),
                                 cols.size(i)));
      }
      return out;
    };
    const int N = n.blocks();
    if (m.blocks() != N || p.blocks() != N || pw.blocks() != N) {
      throw DimensionMismatch("from_dense: partitions disagree on N");
    }
    auto a = take(A, n, n, "A");
    auto b1 = take(B1, n, pw, "B1");
    auto b2 = take(B2, n, m, "B2");
    auto c2 = take(C2, p, n, "C2");
    auto d21 = take(D21, p, pw, "D21");
    std::vector<AgentBlocks> agents;
    for (int i = 0; i < N; ++i) {
      agents.push_back({a[i], b1[i], b2[i], c2[i], d21[i]});
    }
    return FourBlockPlant(std::move(agents), C1, D12);
  }

  int agents() const { return static_cast<int>(agents_.size()); }
  const AgentBlocks& agent(int i) const {
    if (i < 0 || i >= agents()) {
      throw IndexOutOfRange("FourBlockPlant: agent index out of range");
    }
    return agents_[static_cast<std::size_t>(i)];
  }
  const Partition& n() const { return n_; }
  const Partition& m() const { return m_; }
  const Partition& p() const { return p_; }
  const Partition& pw() const { return pw_; }
  int q() const { return static_cast<int>(C1_.rows()); }
  const MatrixXd& C1() const { return C1_; }
  const MatrixXd& D12() const { return D12_; }

  MatrixXd A() const { return assemble(&AgentBlocks::A); }
  MatrixXd B1() const { return assemble(&AgentBlocks::B1); }
  MatrixXd B2() const { return assemble(&AgentBlocks::B2); }
  MatrixXd C2() const { return assemble(&AgentBlocks::C2); }
  MatrixXd D21() const { return assemble(&AgentBlocks::D21); }

 private:
  MatrixXd assemble(MatrixXd AgentBlocks::*field) const {
    std::vector<const MatrixXd*> b;
    for (const AgentBlocks& a : agents_) b.push_back(&(a.*field));
    return block_diagonal(b);
  }

  std::vector<AgentBlocks> agents_;
  MatrixXd C1_, D12_;
  Partition n_, m_, p_, pw_;
};

/// Four-block sub-plant of agent i over its descendants i̲ (ascending): the
/// noise and measurement channels are agent i's only, all cost rows are kept.
struct SubPlant {
  int agent = 0;
  IndexSet agents;  // i̲, ascending
  int own = 0;      // position of agent i inside `agents`
  Partition n, m;   // state / input blocks over i̲
  MatrixXd A, B1, B2, C1, C2, D12, D21;

  IndexSet strict() const {
    IndexSet s;
    for (std::size_t k = 0; k < agents.size(); ++k) {
      if (static_cast<int>(k) != own) s.push_back(static_cast<int>(k));
    }
    return s;
  }
  /// Input columns of agent i, and of its strict descendants (ascending).
  std::vector<int> own_inputs() const { return m.indices({own}); }
  std::vector<int> delayed_inputs() const { return m.indices(strict()); }
};

inline SubPlant extract_subplant(const FourBlockPlant& plant,
                                 const Topology& topology, int i) {
  if (topology.agents() != plant.agents()) {
    throw DimensionMismatch("extract_subplant: topology / plant size mismatch");
  }
  if (i < 0 || i >= plant.agents()) {
    throw IndexOutOfRange("extract_subplant: agent index out of range");
  }
  SubPlant sp;
  sp.agent = i;
  sp.agents = topology.descendants(i);
  sp.own = subset_position(sp.agents, {i}).front();
  sp.n = plant.n().restrict(sp.agents);
  sp.m = plant.m().restrict(sp.agents);
  std::vector<const MatrixXd*> a, b2;
  for (int k : sp.agents) {
    a.push_back(&plant.agent(k).A);
    b2.push_back(&plant.agent(k).B2);
  }
  sp.A = block_diagonal(a);
  sp.B2 = block_diagonal(b2);
  const AgentBlocks& own = plant.agent(i);
  sp.B1 = MatrixXd::Zero(sp.n.total(), own.B1.cols());
  sp.B1.middleRows(sp.n.offset(sp.own), own.B1.rows()) = own.B1;
  sp.C2 = MatrixXd::Zero(own.C2.rows(), sp.n.total());
  sp.C2.middleCols(sp.n.offset(sp.own), own.C2.cols()) = own.C2;
  sp.D21 = own.D21;
  const std::vector<int> ncols = plant.n().indices(sp.agents);
  const std::vector<int> mcols = plant.m().indices(sp.agents);
  sp.C1 = plant.C1()(Eigen::all, ncols);
  sp.D12 = plant.D12()(Eigen::all, mcols);
  return sp;
}

// ---------------------------------------------------------------------------
// Assumption checks

struct Check {
  std::string name;
  bool passed = false;
  double value = 0.0;  // measured margin or residual
  std::string detail;
};

struct AssumptionReport {
  std::vector<Check> checks;
  bool passed() const {
    for (const Check& c : checks) {
      if (!c.passed) return false;
    }
    return true;
  }
};

struct ValidationOptions {
  double tol = 1e-9;
  /// Frequencies (rad/s) on which the rank condition is sampled; ω = 0 is
  /// always included.
  int grid_points = 61;
  double grid_min = 1e-3;
  double grid_max = 1e3;
};

namespace internal {

// Smallest singular value of [A − jωI, B; C, D] over the sampled grid.
inline double min_rank_margin(const MatrixXd& A, const MatrixXd& B,
                              const MatrixXd& C, const MatrixXd& D,
                              const ValidationOptions& opts) {
  const Eigen::Index n = A.rows(), m = B.cols(), q = C.rows();
  std::vector<double> grid{0.0};
  for (int k = 0; k < opts.grid_points; ++k) {
    const double t = opts.grid_points == 1
                         ? 0.0
                         : static_cast<double>(k) / (opts.grid_points - 1);
    grid.push_back(opts.grid_min *
                   std::pow(opts.grid_max / opts.grid_min, t));
  }
  double worst = std::numeric_limits<double>::infinity();
  for (double w : grid) {
    MatrixXcd M(n + q, n + m);
    M.topLeftCorner(n, n) = A.cast<std::complex<double>>();
    M.topLeftCorner(n, n).diagonal().array() -= std::complex<double>(0.0, w);
    M.topRightCorner(n, m) = B.cast<std::complex<double>>();
    M.bottomLeftCorner(q, n) = C.cast<std::complex<double>>();
    M.bottomRightCorner(q, m) = D.cast<std::complex<double>>();
    if (n + q < n + m) return 0.0;
    Eigen::JacobiSVD<MatrixXcd> svd(M);
    worst = std::min(worst, svd.singularValues()(n + m - 1));
  }
  return worst;
}

// PBH stabilizability: min over eigenvalues λ with Re λ ≥ 0 of
// σ_min([A − λI, B]); +∞ when A is Hurwitz.
inline double stabilizability_margin(const MatrixXd& A, const MatrixXd& B) {
  Eigen::EigenSolver<MatrixXd> es(A, false);
  double worst = std::numeric_limits<double>::infinity();
  const Eigen::Index n = A.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    const std::complex<double> lam = es.eigenvalues()(k);
    if (lam.real() < 0.0) continue;
    MatrixXcd M(n, n + B.cols());
    M.leftCols(n) = A.cast<std::complex<double>>();
    M.leftCols(n).diagonal().array() -= lam;
    M.rightCols(B.cols()) = B.cast<std::complex<double>>();
    Eigen::JacobiSVD<MatrixXcd> svd(M);
    worst = std::min(worst, svd.singularValues()(n - 1));
  }
  return worst;
}

inline double min_eig_sym(const MatrixXd& M) {
  if (M.rows() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace internal

/// Checks the system assumptions: every A_ii Hurwitz; the Riccati
/// assumptions for the regulator data (A, B2, C1, D12) and for each agent's
/// estimator data (A_iiᵀ, C2_iiᵀ, B1_iiᵀ, D21_iiᵀ); and the normalizations
/// D12_{:,i̲}ᵀD12_{:,i̲} = I, D21_ii D21_iiᵀ = I. Failures are reported, not
/// thrown. The rank condition is sampled on a frequency grid.
inline AssumptionReport validate_assumptions(
    const FourBlockPlant& plant, const Topology& topology,
    const ValidationOptions& opts = {}) {
  if (topology.agents() != plant.agents()) {
    throw DimensionMismatch("validate_assumptions: topology size mismatch");
  }
  AssumptionReport rep;
  auto add = [&](std::string name, bool ok, double v, std::string detail = {}) {
    rep.checks.push_back({std::move(name), ok, v, std::move(detail)});
  };
  const int N = plant.agents();
  for (int i = 0; i < N; ++i) {
    const double a = spectral_abscissa(plant.agent(i).A);
    add("hurwitz[" + std::to_string(i) + "]", a < -opts.tol, -a,
        "stability margin −max Re λ(A_ii)");
  }

  const MatrixXd A = plant.A();
  const MatrixXd B2 = plant.B2();
  const double cross = (plant.C1().transpose() * plant.D12()).cwiseAbs().maxCoeff();
  add("regulator.C1tD12", cross <= opts.tol, cross, "max |C1ᵀD12|");
  const double rmin = internal::min_eig_sym(plant.D12().transpose() * plant.D12());
  add("regulator.D12tD12_pd", rmin > opts.tol, rmin, "λ_min(D12ᵀD12)");
  const double stab = internal::stabilizability_margin(A, B2);
  add("regulator.stabilizable", stab > opts.tol, stab,
      "PBH margin over unstable eigenvalues (∞ when A Hurwitz)");
  const double rank =
      internal::min_rank_margin(A, B2, plant.C1(), plant.D12(), opts);
  add("regulator.rank", rank > opts.tol, rank,
      "min σ_min([A − jωI, B2; C1, D12]) on grid");

  for (int i = 0; i < N; ++i) {
    const AgentBlocks& ag = plant.agent(i);
    const std::string s = "[" + std::to_string(i) + "]";
    const double c = (ag.B1 * ag.D21.transpose()).cwiseAbs().maxCoeff();
    add("estimator.B1D21t" + s, c <= opts.tol, c, "max |B1_ii D21_iiᵀ|");
    const double dmin = internal::min_eig_sym(ag.D21 * ag.D21.transpose());
    add("estimator.D21D21t_pd" + s, dmin > opts.tol, dmin,
        "λ_min(D21 D21ᵀ)");
    const double st = internal::stabilizability_margin(
        ag.A.transpose(), ag.C2.transpose());
    add("estimator.detectable" + s, st > opts.tol, st, "PBH margin");
    const double rk = internal::min_rank_margin(
        ag.A.transpose(), ag.C2.transpose(), ag.B1.transpose(),
        ag.D21.transpose(), opts);
    add("estimator.rank" + s, rk > opts.tol, rk, "min σ_min on grid");

    const std::vector<int> cols = plant.m().indices(topology.descendants(i));
    const MatrixXd Dsub = plant.D12()(Eigen::all, cols);
    const double e12 =
        (Dsub.transpose() * Dsub -
         MatrixXd::Identity(Dsub.cols(), Dsub.cols()))
            .norm();
    add("normalized.D12" + s, e12 <= 1e3 * opts.tol, e12,
        "‖D12_{:,i̲}ᵀD12_{:,i̲} − I‖");
    const double e21 =
        (ag.D21 * ag.D21.transpose() -
         MatrixXd::Identity(ag.D21.rows(), ag.D21.rows()))
            .norm();
    add("normalized.D21" + s, e21 <= 1e3 * opts.tol, e21,
        "‖D21_ii D21_iiᵀ − I‖");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Random problems

struct AgentDims {
  int n = 1, m = 1, p = 1, pw = 2;
};

struct GeneratorOptions {
  /// Minimum Hurwitz margin of every A_ii.
  double hurwitz_margin = 0.1;
  /// Extra uniform shift in [0, spread] added on top of the margin.
  double margin_spread = 0.5;
  /// Standard deviation of the entries of A_ii before shifting.
  double a_scale = 1.0;
  /// Cost rows; 0 selects Σm + Σn.
  int q = 0;
};

struct Problem {
  FourBlockPlant plant;
  Topology topology;
  double tau = 0.0;
};

namespace internal {

inline MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                         double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  MatrixXd M(r, c);
  // Row-major fill keeps the stream order independent of Eigen's layout.
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) M(i, j) = nd(rng);
  }
  return M;
}

// r × c matrix with orthonormal columns (r ≥ c).
inline MatrixXd orthonormal_columns(std::mt19937_64& rng, Eigen::Index r,
                                    Eigen::Index c) {
  const MatrixXd G = gaussian(rng, r, c);
  Eigen::HouseholderQR<MatrixXd> qr(G);
  MatrixXd Q = qr.householderQ() * MatrixXd::Identity(r, c);
  // Fix column signs so the result is a function of G alone.
  const MatrixXd R = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < c; ++k) {
    if (R(k, k) < 0.0) Q.col(k) = -Q.col(k);
  }
  return Q;
}

}  // namespace internal

/// Reproducible random instance satisfying the system assumptions by
/// construction.
inline Problem random_problem(std::uint64_t seed,
                              const std::vector<AgentDims>& dims,
                              const Topology& topology, double tau,
                              const GeneratorOptions& opts = {}) {
  const int N = static_cast<int>(dims.size());
  if (topology.agents() != N) {
    throw DimensionMismatch("random_problem: topology size mismatch");
  }
  if (tau < 0.0) throw InfeasibleDims("random_problem: τ must be ≥ 0");
  int n_tot = 0, m_tot = 0;
  for (const AgentDims& d : dims) {
    if (d.n <= 0 || d.m <= 0 || d.p <= 0 || d.pw <= 0) {
      throw InfeasibleDims("random_problem: dimensions must be positive");
    }
    if (d.pw < d.p) {
      throw InfeasibleDims("random_problem: pw_i < p_i leaves no room for "
                           "orthonormal D21 rows");
    }
    n_tot += d.n;
    m_tot += d.m;
  }
  const int q = opts.q > 0 ? opts.q : n_tot + m_tot;
  if (q < m_tot) {
    throw InfeasibleDims("random_problem: q < m, D12 cannot have orthonormal "
                         "columns");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<AgentBlocks> agents;
  for (const AgentDims& d : dims) {
    AgentBlocks a;
    a.A = internal::gaussian(rng, d.n, d.n, opts.a_scale);
    const double shift = spectral_abscissa(a.A) + opts.hurwitz_margin +
                         opts.margin_spread * unif(rng);
    a.A.diagonal().array() -= shift;
    a.B2 = internal::gaussian(rng, d.n, d.m);
    a.C2 = internal::gaussian(rng, d.p, d.n);
    a.D21 = internal::orthonormal_columns(rng, d.pw, d.p).transpose();
    const MatrixXd B1 = internal::gaussian(rng, d.n, d.pw);
    a.B1 = B1 - B1 * a.D21.transpose() * a.D21;
    agents.push_back(std::move(a));
  }
  const MatrixXd D12 = internal::orthonormal_columns(rng, q, m_tot);
  const MatrixXd C1raw = internal::gaussian(rng, q, n_tot);
  const MatrixXd C1 = C1raw - D12 * (D12.transpose() * C1raw);
  return {FourBlockPlant(std::move(agents), C1, D12), topology, tau};
}

}  // namespace delqg
