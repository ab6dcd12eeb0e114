#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "delqg/errors.hpp"
#include "delqg/linalg.hpp"
#include "delqg/plant.hpp"

namespace delqg {

/// Finite-impulse-response block produced by the completion operator:
///
///   [A, B_near; C, D_near] − [A, B_far; C, D_far]·e^{−sτ},  B_near = e^{−Aτ}B_far.
///
/// The impulse response is C e^{−A(τ−t)} B_far on [0, τ] plus the impulses
/// D_near δ(t) − D_far δ(t − τ), and vanishes after τ. A may be unstable; the
/// block is never integrated as a state equation.
struct FirBlock {
  MatrixXd A, B_near, B_far, C, D_near, D_far;
  double tau = 0.0;

  int inputs() const { return static_cast<int>(B_far.cols()); }
  int outputs() const { return static_cast<int>(C.rows()); }

  /// Exact response at s = jω from the two-term formula. Falls back to the
  /// integral form when jωI − A is numerically singular.
  MatrixXcd frequency_response(double omega) const {
    using cd = std::complex<double>;
    const Eigen::Index k = A.rows();
    const cd s(0.0, omega);
    const cd delay = std::exp(-s * tau);
    MatrixXcd out = D_near.cast<cd>() - delay * D_far.cast<cd>();
    if (k == 0 || inputs() == 0 || outputs() == 0) return out;
    MatrixXcd M = -A.cast<cd>();
    M.diagonal().array() += s;
    Eigen::PartialPivLU<MatrixXcd> lu(M);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-10)) return frequency_response_integral(omega);
    const MatrixXcd rhs = B_near.cast<cd>() - delay * B_far.cast<cd>();
    out += C.cast<cd>() * lu.solve(rhs);
    return out;
  }

  /// Response from e^{−sτ} C ∫₀^τ e^{(sI−A)σ}dσ B_far, evaluated with one
  /// block exponential. Independent of the resolvent, so valid for any ω.
  MatrixXcd frequency_response_integral(double omega) const {
    using cd = std::complex<double>;
    const Eigen::Index k = A.rows(), m = inputs();
    const cd s(0.0, omega);
    const cd delay = std::exp(-s * tau);
    MatrixXcd out = D_near.cast<cd>() - delay * D_far.cast<cd>();
    if (k == 0 || m == 0 || outputs() == 0 || tau == 0.0) return out;
    MatrixXcd blk = MatrixXcd::Zero(k + m, k + m);
    blk.topLeftCorner(k, k) = -A.cast<cd>() * tau;
    blk.topLeftCorner(k, k).diagonal().array() += s * tau;
    blk.topRightCorner(k, m) = B_far.cast<cd>() * tau;
    const MatrixXcd E = expm(blk);
    out += delay * C.cast<cd>() * E.topRightCorner(k, m);
    return out;
  }

  /// Smooth part of the impulse response, C e^{−A(τ−t)} B_far, on [0, τ];
  /// zero outside.
  MatrixXd kernel(double t) const {
    if (t < 0.0 || t > tau) return MatrixXd::Zero(outputs(), inputs());
    return C * expm(MatrixXd(-A * (tau - t))) * B_far;
  }

  /// Smooth part of the impulse response evaluated literally from the two
  /// terms, C e^{At}B_near − 1(t ≥ τ)·C e^{A(t−τ)}B_far. Mathematically equal
  /// to kernel(t); used to measure the floating-point cancellation after τ.
  MatrixXd impulse_response(double t) const {
    if (t < 0.0) return MatrixXd::Zero(outputs(), inputs());
    MatrixXd r = C * expm(MatrixXd(A * t)) * B_near;
    if (t >= tau) r -= C * expm(MatrixXd(A * (t - tau))) * B_far;
    return r;
  }

  /// Largest literal response after τ relative to the kernel peak on [0, τ],
  /// both sampled at `samples` points; the tail window has length τ.
  double tail_ratio(int samples = 64) const {
    if (tau <= 0.0 || inputs() == 0 || outputs() == 0) return 0.0;
    double peak = 0.0, tail = 0.0;
    for (int k = 0; k <= samples; ++k) {
      const double t = tau * k / samples;
      peak = std::max(peak, kernel(t).cwiseAbs().maxCoeff());
      tail = std::max(tail,
                      impulse_response(tau + t).cwiseAbs().maxCoeff());
    }
    return peak > 0.0 ? tail / peak : tail;
  }

  /// Kernel samples at lags 0, h, …, τ with h = τ/d.
  std::vector<MatrixXd> sample_kernel(int d) const {
    if (d <= 0) throw DimensionMismatch("sample_kernel: need d ≥ 1");
    std::vector<MatrixXd> out;
    out.reserve(static_cast<std::size_t>(d) + 1);
    const double h = tau / d;
    for (int l = 0; l <= d; ++l) out.push_back(kernel(l * h));
    return out;
  }
};

/// π_τ applied to sys·e^{−sτ}.
inline FirBlock completion(const StateSpaceSystem& sys, double tau) {
  if (tau < 0.0) throw DimensionMismatch("completion: τ must be ≥ 0");
  if (sys.A.rows() != sys.A.cols() || sys.B.rows() != sys.A.rows() ||
      sys.C.cols() != sys.A.rows() || sys.D.rows() != sys.C.rows() ||
      sys.D.cols() != sys.B.cols()) {
    throw DimensionMismatch("completion: inconsistent realization");
  }
  FirBlock f;
  f.A = sys.A;
  f.B_far = sys.B;
  f.B_near = sys.B.cols() == 0 || tau == 0.0
                 ? sys.B
                 : MatrixXd(expm(MatrixXd(-sys.A * tau)) * sys.B);
  f.C = sys.C;
  f.D_near = sys.D;
  f.D_far = sys.D;
  f.tau = tau;
  return f;
}

/// Hamiltonian of the loop-shifting problem with undelayed input (B0, D0):
///
///   H = [A − B0D0ᵀC1,  −B0B0ᵀ; −C1ᵀPτC1,  −Aᵀ + C1ᵀD0B0ᵀ],  Pτ = I − D0D0ᵀ.
inline MatrixXd build_hamiltonian(const MatrixXd& A, const MatrixXd& B0,
                                  const MatrixXd& C1, const MatrixXd& D0) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B0.rows() != n || C1.cols() != n ||
      D0.rows() != C1.rows() || D0.cols() != B0.cols()) {
    throw DimensionMismatch("build_hamiltonian: inconsistent shapes");
  }
  const MatrixXd Pt =
      MatrixXd::Identity(D0.rows(), D0.rows()) - D0 * D0.transpose();
  MatrixXd H(2 * n, 2 * n);
  H.topLeftCorner(n, n) = A - B0 * D0.transpose() * C1;
  H.topRightCorner(n, n) = -B0 * B0.transpose();
  H.bottomLeftCorner(n, n) = -C1.transpose() * Pt * C1;
  H.bottomRightCorner(n, n) =
      -A.transpose() + C1.transpose() * D0 * B0.transpose();
  return H;
}

inline MatrixXd symplectic_form(Eigen::Index n) {
  MatrixXd J = MatrixXd::Zero(2 * n, 2 * n);
  J.topRightCorner(n, n).setIdentity();
  J.bottomLeftCorner(n, n) = -MatrixXd::Identity(n, n);
  return J;
}

struct GammaOptions {
  /// Reject when ‖H‖₂·τ exceeds this.
  double max_h_tau = 50.0;
  /// Reject when cond₂(Σ₂₂) exceeds this.
  double max_cond_sigma22 = 1e12;
  /// Return the input plant unchanged when nothing is delayed (τ = 0 or no
  /// strict descendants). Disabling it runs the general formulas anyway.
  bool shortcut_trivial = true;
};

struct GammaResult {
  /// Delay-free plant: only B2 and C1 differ from the input.
  SubPlant modified;
  /// Π̃_u (m_i outputs) and Π̃_b (p_i outputs); both take the delayed input
  /// columns, in ascending order.
  FirBlock fir_u, fir_b;
  MatrixXd H, Sigma;
  /// Input columns in the order used internally: agent i's columns, then
  /// the delayed ones. Entries are ascending column indices of the sub-plant.
  std::vector<int> input_order;
  std::vector<int> own_inputs, delayed_inputs;
  double h_tau = 0.0;
  double cond_sigma22 = 1.0;
  /// ‖ΣᵀJΣ − J‖_F / ‖Σ‖₂².
  double symplectic_error = 0.0;
  bool trivial = false;

  /// Π_u(jω) = I + (own rows)·Π̃_u·(delayed columns), ascending coordinates.
  MatrixXcd pi_u(double omega) const {
    const Eigen::Index m = static_cast<Eigen::Index>(input_order.size());
    MatrixXcd P = MatrixXcd::Identity(m, m);
    if (!delayed_inputs.empty()) {
      P(own_inputs, delayed_inputs) = fir_u.frequency_response(omega);
    }
    return P;
  }
  /// Π_b(jω) = Π̃_b·(delayed columns), ascending coordinates.
  MatrixXcd pi_b(double omega) const {
    const Eigen::Index m = static_cast<Eigen::Index>(input_order.size());
    MatrixXcd P = MatrixXcd::Zero(fir_b.outputs(), m);
    if (!delayed_inputs.empty()) {
      P(Eigen::all, delayed_inputs) = fir_b.frequency_response(omega);
    }
    return P;
  }
  /// Λ(jω): identity on agent i's inputs, e^{−jωτ} on the delayed ones.
  VectorXcd lambda(double omega) const {
    VectorXcd v = VectorXcd::Ones(static_cast<Eigen::Index>(input_order.size()));
    const std::complex<double> z = std::exp(std::complex<double>(0.0, -omega * fir_u.tau));
    for (int c : delayed_inputs) v(c) = z;
    return v;
  }
};

/// The adobe-delay transform Γ for one agent's sub-plant.
inline GammaResult gamma(const SubPlant& sp, double tau,
                         const GammaOptions& opts = {}) {
  if (tau < 0.0) throw DimensionMismatch("gamma: τ must be ≥ 0");
  const Eigen::Index n = sp.A.rows();
  if (sp.B2.rows() != n || sp.C1.cols() != n ||
      sp.D12.cols() != sp.B2.cols() || sp.D12.rows() != sp.C1.rows() ||
      sp.m.total() != sp.B2.cols() || sp.n.total() != n) {
    throw DimensionMismatch("gamma: sub-plant shapes inconsistent");
  }
  GammaResult g;
  g.own_inputs = sp.own_inputs();
  g.delayed_inputs = sp.delayed_inputs();
  g.input_order = g.own_inputs;
  g.input_order.insert(g.input_order.end(), g.delayed_inputs.begin(),
                       g.delayed_inputs.end());

  const MatrixXd B0 = sp.B2(Eigen::all, g.own_inputs);
  const MatrixXd Bt = sp.B2(Eigen::all, g.delayed_inputs);
  const MatrixXd D0 = sp.D12(Eigen::all, g.own_inputs);
  const MatrixXd Dt = sp.D12(Eigen::all, g.delayed_inputs);
  const MatrixXd& C1 = sp.C1;
  const MatrixXd C2 = sp.C2;
  g.H = build_hamiltonian(sp.A, B0, C1, D0);

  // FIR pair: π_τ of [H, [Bτ; −C1ᵀDτ]; [D0ᵀC1, B0ᵀ; C2, 0], 0]·e^{−sτ}.
  StateSpaceSystem u_sys, b_sys;
  u_sys.A = b_sys.A = g.H;
  MatrixXd Bf(2 * n, Bt.cols());
  Bf << Bt, -C1.transpose() * Dt;
  u_sys.B = b_sys.B = Bf;
  u_sys.C.resize(B0.cols(), 2 * n);
  u_sys.C << D0.transpose() * C1, B0.transpose();
  b_sys.C.resize(C2.rows(), 2 * n);
  b_sys.C << C2, MatrixXd::Zero(C2.rows(), n);
  u_sys.D = MatrixXd::Zero(u_sys.C.rows(), Bf.cols());
  b_sys.D = MatrixXd::Zero(b_sys.C.rows(), Bf.cols());

  g.modified = sp;
  g.trivial = tau == 0.0 || g.delayed_inputs.empty();
  if (g.trivial && opts.shortcut_trivial) {
    g.Sigma = MatrixXd::Identity(2 * n, 2 * n);
    g.fir_u = completion(u_sys, tau);
    g.fir_b = completion(b_sys, tau);
    return g;
  }

  g.h_tau = op_norm(g.H) * tau;
  if (g.h_tau > opts.max_h_tau) {
    throw DelayTooLarge("gamma: ‖H‖·τ = " + std::to_string(g.h_tau) +
                        " exceeds the cap " + std::to_string(opts.max_h_tau));
  }
  g.fir_u = completion(u_sys, tau);
  g.fir_b = completion(b_sys, tau);

  g.Sigma = expm(MatrixXd(g.H * tau));
  const MatrixXd J = symplectic_form(n);
  const double sig2 = op_norm(g.Sigma);
  g.symplectic_error =
      (g.Sigma.transpose() * J * g.Sigma - J).norm() / (sig2 * sig2);

  const MatrixXd S12 = g.Sigma.topRightCorner(n, n);
  const MatrixXd S21 = g.Sigma.bottomLeftCorner(n, n);
  const MatrixXd S22 = g.Sigma.bottomRightCorner(n, n);
  if (n > 0) {
    Eigen::JacobiSVD<MatrixXd> svd(S22);
    const auto& sv = svd.singularValues();
    g.cond_sigma22 = sv(n - 1) > 0.0 ? sv(0) / sv(n - 1)
                                     : std::numeric_limits<double>::infinity();
    if (!(g.cond_sigma22 <= opts.max_cond_sigma22)) {
      throw SingularSigma22("gamma: cond(Σ₂₂) = " +
                            std::to_string(g.cond_sigma22) +
                            " exceeds the cap");
    }
  }

  const MatrixXd P0 = D0 * D0.transpose();
  const MatrixXd Pt = MatrixXd::Identity(P0.rows(), P0.cols()) - P0;
  g.modified.B2(Eigen::all, g.delayed_inputs) =
      S12.transpose() * C1.transpose() * Dt + S22.transpose() * Bt;
  // C̃1 = (PτC1 + P0C1Σ₂₂ᵀ − D0B0ᵀΣ₂₁ᵀ)Σ₂₂⁻ᵀ, i.e. C̃1Σ₂₂ᵀ = (…).
  const MatrixXd rhs =
      Pt * C1 + P0 * C1 * S22.transpose() - D0 * B0.transpose() * S21.transpose();
  g.modified.C1 =
      S22.partialPivLu().solve(rhs.transpose()).transpose();
  return g;
}

}  // namespace delqg
