#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "dreamnet/errors.hpp"
#include "dreamnet/sym_matrix.hpp"

namespace dreamnet {

/// Eigendecomposition of a symmetric matrix: ascending eigenvalues, column
/// i of eigenvectors pairs with eigenvalue i. Deterministic sign convention:
/// in each eigenvector the entry of largest absolute value is non-negative.
struct EigDecomposition {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;

  Eigen::Index dim() const { return eigenvalues.size(); }
};

inline EigDecomposition sym_eig(const SymMatrix& x) {
  if (!x.mat().allFinite()) {
    throw NonFinite("sym_eig: input has non-finite entries");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(x.mat());
  if (solver.info() != Eigen::Success) {
    throw ConvergenceFailure("sym_eig: eigenvalue iteration did not converge");
  }
  EigDecomposition eig{solver.eigenvalues(), solver.eigenvectors()};
  // Fix the sign of each column so that its largest-magnitude entry is
  // non-negative (first such entry on ties).
  for (Eigen::Index j = 0; j < eig.dim(); ++j) {
    Eigen::Index imax = 0;
    eig.eigenvectors.col(j).cwiseAbs().maxCoeff(&imax);
    if (eig.eigenvectors(imax, j) < 0.0) {
      eig.eigenvectors.col(j) = -eig.eigenvectors.col(j);
    }
  }
  return eig;
}

/// U g(Sigma) U^T for an elementwise spectral map g.
template <class G>
SymMatrix spectral_apply(const EigDecomposition& eig, G&& g) {
  Eigen::VectorXd mapped(eig.eigenvalues.size());
  for (Eigen::Index i = 0; i < mapped.size(); ++i) {
    mapped(i) = g(eig.eigenvalues(i));
  }
  return SymMatrix(eig.eigenvectors * mapped.asDiagonal() * eig.eigenvectors.transpose());
}

/// Regularized covariance descriptor of a frame set:
///   X = 1/(n-1) sum_j (s_j - u)(s_j - u)^T + lambda I,
/// lambda = trace(X_raw) * 1e-3. The trace-proportional regularizer
/// vanishes for identical frames, in which case the output would not be
/// SPD and DegenerateSet is thrown.
inline SpdMatrix covariance_descriptor(const FrameSet& frames) {
  const Eigen::MatrixXd& s = frames.frames();
  const double n = static_cast<double>(frames.n_frames());
  const Eigen::RowVectorXd mean = s.colwise().mean();
  const Eigen::MatrixXd centered = s.rowwise() - mean;
  Eigen::MatrixXd raw = (centered.transpose() * centered) / (n - 1.0);
  const double tr = raw.trace();
  if (tr <= 1e-12) {
    throw DegenerateSet("covariance_descriptor: trace " + std::to_string(tr) +
                        " <= 1e-12, regularizer vanishes");
  }
  const double lambda = tr * 1e-3;
  raw.diagonal().array() += lambda;
  return SpdMatrix(SymMatrix(raw));
}

/// Divided-difference (Loewner) matrix for a spectral map g:
///   L(i,j) = (g(s_i) - g(s_j)) / (s_i - s_j)   when the gap exceeds
///   delta = 1e-10 * max(1, max|s|), and g'((s_i+s_j)/2) otherwise.
/// The analytic limit makes repeated eigenvalues exact rather than 0/0.
template <class G, class Gp>
Eigen::MatrixXd loewner(const Eigen::VectorXd& eigenvalues, G&& g, Gp&& gprime) {
  const Eigen::Index n = eigenvalues.size();
  const double scale = n > 0 ? eigenvalues.cwiseAbs().maxCoeff() : 0.0;
  const double delta = 1e-10 * std::max(1.0, scale);
  Eigen::VectorXd gv(n);
  for (Eigen::Index i = 0; i < n; ++i) gv(i) = g(eigenvalues(i));
  Eigen::MatrixXd l(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double gap = eigenvalues(i) - eigenvalues(j);
      const double v = std::abs(gap) > delta ? (gv(i) - gv(j)) / gap
                                             : gprime(0.5 * (eigenvalues(i) + eigenvalues(j)));
      l(i, j) = v;
      l(j, i) = v;
    }
  }
  return l;
}

inline double frobenius_dist2(const SymMatrix& a, const SymMatrix& b) {
  a.require_same_dim(b, "frobenius_dist2");
  return (a.mat() - b.mat()).squaredNorm();
}

/// Matrix logarithm of an SPD matrix via its eigendecomposition.
inline SymMatrix log_spd(const SpdMatrix& a, const char* where = "log_spd") {
  const EigDecomposition eig = sym_eig(a.sym());
  if (eig.eigenvalues.minCoeff() <= 0.0) {
    throw NotSpd(std::string(where) + ": smallest eigenvalue " +
                 std::to_string(eig.eigenvalues.minCoeff()) + " <= 0");
  }
  return spectral_apply(eig, [](double t) { return std::log(t); });
}

/// Squared Log-Euclidean distance ||log(a) - log(b)||_F^2.
inline double lem_dist2(const SpdMatrix& a, const SpdMatrix& b) {
  a.sym().require_same_dim(b.sym(), "lem_dist2");
  return frobenius_dist2(log_spd(a, "lem_dist2"), log_spd(b, "lem_dist2"));
}

inline bool is_spd(const SymMatrix& a, double tol) {
  return sym_eig(a).eigenvalues.minCoeff() > tol;
}

/// Sum of absolute eigenvalues; equals the trace for SPD inputs.
inline double nuclear_norm(const SymMatrix& a) {
  return sym_eig(a).eigenvalues.cwiseAbs().sum();
}

}  // namespace dreamnet
