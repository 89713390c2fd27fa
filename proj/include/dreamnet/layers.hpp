#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>

#include "dreamnet/errors.hpp"
#include "dreamnet/spd_core.hpp"
#include "dreamnet/sym_matrix.hpp"

namespace dreamnet {

// ---------------------------------------------------------------------------
// BiMap: bilinear transform y = W^T x W, the SPD analogue of a dense layer.
// W is d_in x d_out; the thin side is kept semi-orthogonal by the optimizer,
// but the forward/backward math holds for any W (finite-difference probes
// perturb W off the manifold).
// ---------------------------------------------------------------------------

struct BiMapCache {
  Eigen::MatrixXd x;  // forward input, saved for the weight gradient
};

inline std::pair<SymMatrix, BiMapCache> bimap_forward(const Eigen::MatrixXd& w,
                                                      const SymMatrix& x) {
  if (w.rows() != x.dim()) {
    throw DimensionMismatch("bimap_forward: W is " + std::to_string(w.rows()) + "x" +
                            std::to_string(w.cols()) + " but input dim is " +
                            std::to_string(x.dim()));
  }
  SymMatrix y(w.transpose() * x.mat() * w);
  return {std::move(y), BiMapCache{x.mat()}};
}

struct BiMapGrads {
  SymMatrix dx;
  Eigen::MatrixXd dw;  // Euclidean gradient, same shape as W
};

inline BiMapGrads bimap_backward(const Eigen::MatrixXd& w, const BiMapCache& cache,
                                 const SymMatrix& dy) {
  if (w.cols() != dy.dim() || w.rows() != cache.x.rows()) {
    throw DimensionMismatch("bimap_backward: cotangent/cache dims do not match W");
  }
  // d tr(dy^T W^T X W) / dX = W dy W^T,  / dW = X W dy + X^T W dy^T.
  SymMatrix dx(w * dy.mat() * w.transpose());
  Eigen::MatrixXd dw =
      cache.x * w * dy.mat() + cache.x.transpose() * w * dy.mat().transpose();
  return {std::move(dx), std::move(dw)};
}

// ---------------------------------------------------------------------------
// ReEig: spectral rectifier y = U max(eps I, Sigma) U^T.
// ---------------------------------------------------------------------------

struct ReEigCache {
  EigDecomposition eig;
  double epsilon = 0.0;
};

inline std::pair<SpdMatrix, ReEigCache> reeig_forward(const SymMatrix& x, double epsilon) {
  if (epsilon <= 0.0) {
    throw BadConfig("reeig_forward: epsilon must be positive");
  }
  EigDecomposition eig = sym_eig(x);
  SymMatrix y = spectral_apply(eig, [epsilon](double t) { return std::max(epsilon, t); });
  return {SpdMatrix(std::move(y)), ReEigCache{std::move(eig), epsilon}};
}

/// dx = U (L o (U^T dy U)) U^T with the divided-difference kernel of
/// g(t) = max(eps, t). The subgradient at t == eps is taken on the clamped
/// side (g' = 0).
inline SymMatrix reeig_backward(const ReEigCache& cache, const SymMatrix& dy) {
  const Eigen::MatrixXd& u = cache.eig.eigenvectors;
  const double eps = cache.epsilon;
  Eigen::MatrixXd l = loewner(
      cache.eig.eigenvalues, [eps](double t) { return std::max(eps, t); },
      [eps](double t) { return t > eps ? 1.0 : 0.0; });
  Eigen::MatrixXd inner = u.transpose() * dy.mat() * u;
  return SymMatrix(u * l.cwiseProduct(inner) * u.transpose());
}

// ---------------------------------------------------------------------------
// LogEig: matrix logarithm y = U log(Sigma) U^T, flattening the manifold.
// ---------------------------------------------------------------------------

struct LogEigCache {
  EigDecomposition eig;
};

inline std::pair<SymMatrix, LogEigCache> logeig_forward(const SpdMatrix& x) {
  EigDecomposition eig = sym_eig(x.sym());
  if (eig.eigenvalues.minCoeff() <= 0.0) {
    throw NotSpd("logeig_forward: smallest eigenvalue " +
                 std::to_string(eig.eigenvalues.minCoeff()) + " <= 0");
  }
  SymMatrix y = spectral_apply(eig, [](double t) { return std::log(t); });
  return {std::move(y), LogEigCache{std::move(eig)}};
}

inline SymMatrix logeig_backward(const LogEigCache& cache, const SymMatrix& dy) {
  const Eigen::MatrixXd& u = cache.eig.eigenvectors;
  Eigen::MatrixXd l = loewner(
      cache.eig.eigenvalues, [](double t) { return std::log(t); },
      [](double t) { return 1.0 / t; });
  Eigen::MatrixXd inner = u.transpose() * dy.mat() * u;
  return SymMatrix(u * l.cwiseProduct(inner) * u.transpose());
}

// ---------------------------------------------------------------------------
// Shortcut addition. Backward distributes the cotangent to both inputs
// unchanged, so no cache is needed.
// ---------------------------------------------------------------------------

inline SymMatrix shortcut_add(const SymMatrix& h, const SymMatrix& skip) {
  h.require_same_dim(skip, "shortcut_add");
  return h + skip;
}

// ---------------------------------------------------------------------------
// Classification head: row-major vectorization, linear projection, softmax
// and cross-entropy.
// ---------------------------------------------------------------------------

/// Projection of the FC layer, one row per class (c x d^2); grad is the
/// Euclidean gradient slot filled by the backward pass.
struct HeadParam {
  Eigen::MatrixXd projection;
  Eigen::MatrixXd grad;
};

inline HeadParam make_head(Eigen::MatrixXd projection) {
  HeadParam h;
  h.grad = Eigen::MatrixXd::Zero(projection.rows(), projection.cols());
  h.projection = std::move(projection);
  return h;
}

/// Row-major vectorization of a symmetric matrix.
inline Eigen::VectorXd vectorize_row_major(const SymMatrix& x) {
  const Eigen::Index d = x.dim();
  Eigen::VectorXd v(d * d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      v(i * d + j) = x(i, j);
    }
  }
  return v;
}

/// Softmax with max-subtraction stabilization.
inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
  Eigen::VectorXd e = shifted.array().exp();
  return e / e.sum();
}

inline Eigen::VectorXd head_probs(const Eigen::MatrixXd& projection, const SymMatrix& x) {
  if (projection.cols() != x.dim() * x.dim()) {
    throw DimensionMismatch("head: projection has " + std::to_string(projection.cols()) +
                            " columns, input vectorizes to " +
                            std::to_string(x.dim() * x.dim()));
  }
  return softmax(projection * vectorize_row_major(x));
}

struct HeadCache {
  Eigen::VectorXd v;      // vectorized input
  Eigen::VectorXd probs;  // softmax output
  int label = 0;
  Eigen::Index dim = 0;   // side length of the input matrix
};

struct HeadForward {
  double loss = 0.0;
  Eigen::VectorXd probs;
  HeadCache cache;
};

inline HeadForward head_forward(const Eigen::MatrixXd& projection, const SymMatrix& x,
                                int label) {
  if (projection.cols() != x.dim() * x.dim()) {
    throw DimensionMismatch("head_forward: projection has " +
                            std::to_string(projection.cols()) +
                            " columns, input vectorizes to " +
                            std::to_string(x.dim() * x.dim()));
  }
  if (label < 0 || label >= projection.rows()) {
    throw BadLabel("head_forward: label " + std::to_string(label) + " outside [0, " +
                   std::to_string(projection.rows()) + ")");
  }
  Eigen::VectorXd v = vectorize_row_major(x);
  Eigen::VectorXd probs = softmax(projection * v);
  HeadForward out;
  out.loss = -std::log(probs(label));
  out.probs = probs;
  out.cache = HeadCache{std::move(v), std::move(probs), label, x.dim()};
  return out;
}

struct HeadGrads {
  Eigen::MatrixXd dp;
  SymMatrix dx;
};

inline HeadGrads head_backward(const Eigen::MatrixXd& projection, const HeadCache& cache) {
  Eigen::VectorXd dlogits = cache.probs;
  dlogits(cache.label) -= 1.0;
  Eigen::MatrixXd dp = dlogits * cache.v.transpose();
  Eigen::VectorXd dv = projection.transpose() * dlogits;
  const Eigen::Index d = cache.dim;
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      m(i, j) = dv(i * d + j);
    }
  }
  return {std::move(dp), SymMatrix(m)};  // SymMatrix ctor symmetrizes (M + M^T)/2
}

}  // namespace dreamnet
