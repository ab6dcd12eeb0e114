#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "delqg/errors.hpp"

namespace delqg {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

/// Stabilizing solution of a continuous algebraic Riccati equation together
/// with its state-feedback gain, (X, F) = ric(A, B, C, D).
struct RiccatiSolution {
  MatrixXd X;
  MatrixXd F;
};

struct RiccatiOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  /// Hamiltonian eigenvalues with |Re λ| below this (relative to max |λ|) are
  /// treated as lying on the imaginary axis.
  double imaginary_axis_tol = 1e-9;
  int max_sign_iterations = 200;
  int max_refinement_steps = 8;
};

namespace internal {

inline void check_square(const MatrixXd& M, const char* who, const char* name) {
  if (M.rows() != M.cols()) {
    throw DimensionMismatch(std::string(who) + ": " + name + " must be square");
  }
}

// Padé coefficients for degrees 3, 5, 7, 9, 13 (Higham 2005).
constexpr double kPade3[] = {120.0, 60.0, 12.0, 1.0};
constexpr double kPade5[] = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
constexpr double kPade7[] = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                             25200.0,    1512.0,    56.0,      1.0};
constexpr double kPade9[] = {17643225600.0, 8821612800.0, 2075673600.0,
                             302702400.0,   30270240.0,   2162160.0,
                             110880.0,      3960.0,       90.0,
                             1.0};
constexpr double kPade13[] = {64764752532480000.0,
                              32382376266240000.0,
                              7771770303897600.0,
                              1187353796428800.0,
                              129060195264000.0,
                              10559470521600.0,
                              670442572800.0,
                              33522128640.0,
                              1323241920.0,
                              40840800.0,
                              960960.0,
                              16380.0,
                              182.0,
                              1.0};
// Largest 1-norm for which degree m is accurate to unit roundoff.
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068e0;
constexpr double kTheta13 = 5.371920351148152e0;

template <typename Mat>
void pade_low(const Mat& A, const double* c, int degree, Mat* U, Mat* V) {
  const Eigen::Index n = A.rows();
  const Mat I = Mat::Identity(n, n);
  const Mat A2 = A * A;
  Mat power = I;
  Mat u = c[1] * I;
  Mat v = c[0] * I;
  for (int k = 2; k <= degree; k += 2) {
    power = power * A2;
    u += c[k + 1] * power;
    v += c[k] * power;
  }
  *U = A * u;
  *V = v;
}

template <typename Mat>
void pade13(const Mat& A, Mat* U, Mat* V) {
  const double* b = kPade13;
  const Eigen::Index n = A.rows();
  const Mat I = Mat::Identity(n, n);
  const Mat A2 = A * A;
  const Mat A4 = A2 * A2;
  const Mat A6 = A4 * A2;
  Mat tmp = b[13] * A6 + b[11] * A4 + b[9] * A2;
  tmp = A6 * tmp;
  tmp += b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I;
  *U = A * tmp;
  tmp = b[12] * A6 + b[10] * A4 + b[8] * A2;
  *V = A6 * tmp + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;
}

}  // namespace internal

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant (degree chosen from the 1-norm as in Higham 2005).
///
/// Works for real and complex dense matrices. Throws Overflow when e^M is not
/// representable in double precision.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> expm(
    const Eigen::MatrixBase<Derived>& M_in) {
  using Mat = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic,
                            Eigen::Dynamic>;
  Mat M = M_in;
  if (M.rows() != M.cols()) {
    throw DimensionMismatch("expm: matrix must be square");
  }
  const Eigen::Index n = M.rows();
  if (n == 0) return M;
  if (!M.allFinite()) throw Overflow("expm: non-finite input");
  const double norm1 = M.cwiseAbs().colwise().sum().maxCoeff();
  // e^{‖M‖} beyond ~1e300 cannot be represented in general.
  if (norm1 > 5.0e4) {
    throw Overflow("expm: ‖M‖₁ too large for a representable exponential");
  }

  Mat U, V;
  int squarings = 0;
  if (norm1 <= internal::kTheta3) {
    internal::pade_low(M, internal::kPade3, 3, &U, &V);
  } else if (norm1 <= internal::kTheta5) {
    internal::pade_low(M, internal::kPade5, 5, &U, &V);
  } else if (norm1 <= internal::kTheta7) {
    internal::pade_low(M, internal::kPade7, 7, &U, &V);
  } else if (norm1 <= internal::kTheta9) {
    internal::pade_low(M, internal::kPade9, 9, &U, &V);
  } else {
    squarings = std::max(
        0, static_cast<int>(std::ceil(std::log2(norm1 / internal::kTheta13))));
    const Mat scaled = M / std::ldexp(1.0, squarings);
    internal::pade13(scaled, &U, &V);
  }
  Mat R = (V - U).partialPivLu().solve(V + U);
  for (int k = 0; k < squarings; ++k) {
    R = R * R;
  }
  if (!R.allFinite()) throw Overflow("expm: result overflowed");
  return R;
}

inline double spectral_abscissa(const MatrixXd& A) {
  internal::check_square(A, "spectral_abscissa", "A");
  if (A.rows() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::EigenSolver<MatrixXd> es(A, false);
  return es.eigenvalues().real().maxCoeff();
}

inline double spectral_radius(const MatrixXd& A) {
  internal::check_square(A, "spectral_radius", "A");
  if (A.rows() == 0) return 0.0;
  Eigen::EigenSolver<MatrixXd> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// True iff max Re λ(A) < −margin.
inline bool is_hurwitz(const MatrixXd& A, double margin = 1e-9) {
  return spectral_abscissa(A) < -margin;
}

/// Largest singular value.
inline double op_norm(const MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(A);
  return svd.singularValues()(0);
}

/// Solves AᵀX + XA + Q = 0 by Bartels–Stewart on the complex Schur form of
/// A. Requires λᵢ(A) + conj(λⱼ(A)) ≠ 0 for all i, j.
inline MatrixXd solve_clyap(const MatrixXd& A, const MatrixXd& Q) {
  internal::check_square(A, "solve_clyap", "A");
  if (Q.rows() != A.rows() || Q.cols() != A.cols()) {
    throw DimensionMismatch("solve_clyap: Q must match A");
  }
  const Eigen::Index n = A.rows();
  if (n == 0) return MatrixXd(0, 0);
  Eigen::ComplexSchur<MatrixXd> schur(A);
  const MatrixXcd& T = schur.matrixT();
  const MatrixXcd& U = schur.matrixU();
  // A real ⇒ Aᵀ = A*, so with X̂ = U*XU: T*X̂ + X̂T = −U*QU.
  const MatrixXcd Qh = U.adjoint() * Q.cast<std::complex<double>>() * U;
  const MatrixXcd Tadj = T.adjoint();
  MatrixXcd Xh = MatrixXcd::Zero(n, n);
  const double scale = std::max(1.0, T.cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXcd rhs = -Qh.col(j);
    for (Eigen::Index k = 0; k < j; ++k) rhs -= T(k, j) * Xh.col(k);
    MatrixXcd Lj = Tadj;
    Lj.diagonal().array() += T(j, j);
    for (Eigen::Index r = 0; r < n; ++r) {
      if (std::abs(Lj(r, r)) <= 1e-14 * scale) {
        throw NoStabilizingSolution(
            "solve_clyap: A has eigenvalues symmetric about the imaginary axis");
      }
    }
    Xh.col(j) = Lj.triangularView<Eigen::Lower>().solve(rhs);
  }
  MatrixXd X = (U * Xh * U.adjoint()).real();
  return 0.5 * (X + X.transpose());
}

/// Solves AdᵀPAd − P + Q = 0 by squared Smith iteration.
///
/// Throws NotSchurStable when the powers of Ad fail to decay (ρ(Ad) ≥ 1 up to
/// roundoff) or blow up.
inline MatrixXd solve_dlyap(const MatrixXd& Ad, const MatrixXd& Q) {
  internal::check_square(Ad, "solve_dlyap", "Ad");
  if (Q.rows() != Ad.rows() || Q.cols() != Ad.cols()) {
    throw DimensionMismatch("solve_dlyap: Q must match Ad");
  }
  const Eigen::Index n = Ad.rows();
  if (n == 0) return MatrixXd(0, 0);
  MatrixXd P = Q;
  MatrixXd Ak = Ad;
  MatrixXd tmp(n, n);
  constexpr int kMaxDoublings = 64;
  for (int it = 0; it < kMaxDoublings; ++it) {
    const double ak = Ak.cwiseAbs().colwise().sum().maxCoeff();
    if (!std::isfinite(ak) || ak > 1e150) {
      throw NotSchurStable("solve_dlyap: ρ(Ad) ≥ 1 (powers diverge)");
    }
    if (ak * ak < 1e-18) {
      return 0.5 * (P + P.transpose());
    }
    tmp.noalias() = P * Ak;
    P.noalias() += Ak.transpose() * tmp;
    tmp.noalias() = Ak * Ak;
    Ak.swap(tmp);
  }
  throw NotSchurStable("solve_dlyap: ρ(Ad) ≥ 1 (powers do not decay)");
}

/// Riccati residual AᵀX + XA + CᵀC − (XB + CᵀD)(DᵀD)⁻¹(BᵀX + DᵀC).
inline MatrixXd care_residual(const MatrixXd& A, const MatrixXd& B,
                              const MatrixXd& C, const MatrixXd& D,
                              const MatrixXd& X) {
  const MatrixXd R = D.transpose() * D;
  const MatrixXd S = X * B + C.transpose() * D;
  return A.transpose() * X + X * A + C.transpose() * C -
         S * R.ldlt().solve(S.transpose());
}

inline double care_relative_residual(const MatrixXd& A, const MatrixXd& B,
                                     const MatrixXd& C, const MatrixXd& D,
                                     const MatrixXd& X) {
  const double res = care_residual(A, B, C, D, X).norm();
  const double scale = (C.transpose() * C).norm();
  return scale > 0.0 ? res / scale : res;
}

namespace internal {

// Power-of-two diagonal S balancing the Hamiltonian [Ā, −G; −Q, −Āᵀ] under
// the symplectic similarity diag(S, S⁻¹) (Osborne-style sweeps).
inline VectorXd hamiltonian_balance(const MatrixXd& A, const MatrixXd& G,
                                    const MatrixXd& Q) {
  const Eigen::Index n = A.rows();
  VectorXd d = VectorXd::Ones(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool changed = false;
    for (Eigen::Index k = 0; k < n; ++k) {
      double grow = 0.0, shrink = 0.0;  // terms multiplied / divided by d_k
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j != k) {
          grow += std::abs(A(j, k)) * d(k) / d(j);
          shrink += std::abs(A(k, j)) * d(j) / d(k);
        }
        grow += std::abs(Q(k, j)) * d(k) * d(j);
        shrink += std::abs(G(k, j)) / (d(k) * d(j));
      }
      if (grow == 0.0 || shrink == 0.0) continue;
      const int e = static_cast<int>(std::lround(0.5 * std::log2(shrink / grow)));
      if (e != 0) {
        d(k) = std::ldexp(d(k), e);
        changed = true;
      }
    }
    if (!changed) break;
  }
  return d;
}

}  // namespace internal

/// Stabilizing solution of the continuous algebraic Riccati equation
/// associated with the cost ‖Cx + Du‖² and dynamics ẋ = Ax + Bu:
///
///   AᵀX + XA + CᵀC − (XB + CᵀD)(DᵀD)⁻¹(BᵀX + DᵀC) = 0,
///   F = −(DᵀD)⁻¹(BᵀX + DᵀC),  A + BF Hurwitz.
///
/// With CᵀD = 0 this is the usual ric(A, B, C, D). The cross term is kept
/// because the delay-shifted plants produced by the adobe transform have
/// C̃ᵀD ≠ 0.
///
/// Computed from the stable invariant subspace of the Hamiltonian via the
/// matrix sign function, then polished by Newton–Kleinman steps.
inline RiccatiSolution solve_care(const MatrixXd& A, const MatrixXd& B,
                                  const MatrixXd& C, const MatrixXd& D,
                                  const RiccatiOptions& opts = {}) {
  internal::check_square(A, "solve_care", "A");
  const Eigen::Index n = A.rows();
  const Eigen::Index m = B.cols();
  if (B.rows() != n || C.cols() != n || D.rows() != C.rows() ||
      D.cols() != m) {
    throw DimensionMismatch("solve_care: inconsistent (A, B, C, D) shapes");
  }
  if (n == 0) return {MatrixXd(0, 0), MatrixXd(m, 0)};
  const MatrixXd R = D.transpose() * D;
  Eigen::LDLT<MatrixXd> R_ldlt(R);
  if (m > 0 && (R_ldlt.info() != Eigen::Success ||
                R_ldlt.vectorD().minCoeff() <=
                    1e-12 * std::max(1.0, R.norm()))) {
    throw NoStabilizingSolution("solve_care: DᵀD is not positive definite");
  }
  auto gain = [&](const MatrixXd& X) -> MatrixXd {
    if (m == 0) return MatrixXd(0, n);
    return -R_ldlt.solve(B.transpose() * X + D.transpose() * C);
  };

  // Eliminate the cross term: Ā = A − BR⁻¹DᵀC, Q̄ = Cᵀ(I − DR⁻¹Dᵀ)C.
  MatrixXd Abar = A;
  MatrixXd Qbar = C.transpose() * C;
  MatrixXd G = MatrixXd::Zero(n, n);
  if (m > 0) {
    const MatrixXd RinvDtC = R_ldlt.solve(D.transpose() * C);
    Abar -= B * RinvDtC;
    Qbar -= C.transpose() * D * RinvDtC;
    G = B * R_ldlt.solve(B.transpose());
  }
  Qbar = 0.5 * (Qbar + Qbar.transpose());
  G = 0.5 * (G + G.transpose());

  // Symplectic balancing diag(S, S⁻¹): X̂ = SXS on the scaled problem.
  const VectorXd scale = internal::hamiltonian_balance(Abar, G, Qbar);
  const VectorXd inv_scale = scale.cwiseInverse();
  Abar = inv_scale.asDiagonal() * Abar * scale.asDiagonal();
  G = inv_scale.asDiagonal() * G * inv_scale.asDiagonal();
  Qbar = scale.asDiagonal() * Qbar * scale.asDiagonal();

  MatrixXd H(2 * n, 2 * n);
  H << Abar, -G, -Qbar, -Abar.transpose();
  {
    Eigen::EigenSolver<MatrixXd> es(H, false);
    const double min_re = es.eigenvalues().real().cwiseAbs().minCoeff();
    const double lam_max =
        std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (min_re <= opts.imaginary_axis_tol * lam_max) {
      throw NoStabilizingSolution(
          "solve_care: Hamiltonian has eigenvalues on the imaginary axis");
    }
  }

  // Newton iteration for sign(H) with determinant scaling.
  // Badly conditioned stable subspaces stall the iteration above 1e-13; once
  // close, a stalled step is accepted and Newton–Kleinman recovers accuracy.
  MatrixXd Z = H;
  MatrixXd best = H;
  bool converged = false;
  double prev_delta = std::numeric_limits<double>::infinity();
  double best_delta = prev_delta;
  for (int it = 0; it < opts.max_sign_iterations; ++it) {
    Eigen::PartialPivLU<MatrixXd> lu(Z);
    const MatrixXd Zinv = lu.inverse();
    double c = 1.0;
    if (it < 20) {
      const double logdet =
          lu.matrixLU().diagonal().cwiseAbs().array().log().sum();
      c = std::exp(-logdet / static_cast<double>(2 * n));
      if (!std::isfinite(c) || c <= 0.0) c = 1.0;
    }
    const MatrixXd Znext = 0.5 * (c * Z + Zinv / c);
    if (!Znext.allFinite()) break;
    const double delta = (Znext - Z).cwiseAbs().colwise().sum().maxCoeff();
    const double znorm = Znext.cwiseAbs().colwise().sum().maxCoeff();
    Z = Znext;
    if (delta < best_delta * znorm) {
      best_delta = delta / znorm;
      best = Z;
    }
    if (delta <= 1e-13 * znorm ||
        (it >= 20 && delta <= 1e-6 * znorm && delta >= 0.5 * prev_delta)) {
      converged = true;
      break;
    }
    prev_delta = delta;
  }
  // A stalled iteration is only trusted if the polished residual says so.
  const bool fallback = !converged;
  if (fallback) {
    if (!(best_delta <= 1e-3)) {
      throw NoStabilizingSolution("solve_care: sign iteration did not converge");
    }
    Z = best;
  }
  // Stable subspace: (W + I)[I; X] = 0 where W = sign(H)
  // ⇒ [W12; W22 + I] X = −[W11 + I; W21].
  const MatrixXd I = MatrixXd::Identity(n, n);
  MatrixXd lhs(2 * n, n), rhs(2 * n, n);
  lhs << Z.topRightCorner(n, n), Z.bottomRightCorner(n, n) + I;
  rhs << -(Z.topLeftCorner(n, n) + I), -Z.bottomLeftCorner(n, n);
  MatrixXd X = lhs.colPivHouseholderQr().solve(rhs);
  X = inv_scale.asDiagonal() * X * inv_scale.asDiagonal();
  X = 0.5 * (X + X.transpose());
  if (!X.allFinite()) {
    throw NoStabilizingSolution("solve_care: stable subspace not a graph");
  }

  // Newton–Kleinman polishing.
  double res = care_residual(A, B, C, D, X).norm();
  for (int it = 0; it < opts.max_refinement_steps; ++it) {
    const MatrixXd F = gain(X);
    const MatrixXd Acl = A + B * F;
    if (spectral_abscissa(Acl) >= 0.0) break;
    const MatrixXd Ccl = C + D * F;
    MatrixXd Xn;
    try {
      Xn = solve_clyap(Acl, Ccl.transpose() * Ccl);
    } catch (const NoStabilizingSolution&) {
      break;
    }
    const double res_n = care_residual(A, B, C, D, Xn).norm();
    if (!(res_n < res)) break;
    X = Xn;
    res = res_n;
    if (res <= 1e-15 * std::max(1.0, (C.transpose() * C).norm())) break;
  }

  if (fallback && !(care_relative_residual(A, B, C, D, X) <= opts.rtol)) {
    throw NoStabilizingSolution("solve_care: sign iteration did not converge");
  }
  RiccatiSolution sol{X, gain(X)};
  if (m > 0 && !is_hurwitz(A + B * sol.F, 0.0)) {
    throw NoStabilizingSolution("solve_care: A + BF is not Hurwitz");
  }
  return sol;
}

}  // namespace delqg
