#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dreamnet/errors.hpp"
#include "dreamnet/layers.hpp"

namespace dreamnet {

/// Semi-orthogonal weight, always stored on its tall side (n >= p,
/// W^T W = I_p). Wide BiMap weights are kept as the transpose's Stiefel
/// point. grad is the Euclidean gradient slot, in the stored orientation.
struct StiefelParam {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
};

/// Q-factor of the thin QR decomposition with the R diagonal sign-fixed to
/// be non-negative, which makes the factor unique and the map deterministic.
inline Eigen::MatrixXd thin_qr_factor(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.rows(), p = a.cols();
  if (n < p) {
    throw BadShape("thin_qr_factor: " + std::to_string(n) + "x" + std::to_string(p) +
                   " is not tall");
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, p);
  const Eigen::MatrixXd& qrmat = qr.matrixQR();
  const double rank_tol = 1e-12 * std::max(1.0, a.norm());
  for (Eigen::Index j = 0; j < p; ++j) {
    const double rjj = qrmat(j, j);
    if (std::abs(rjj) <= rank_tol) {
      throw RankDeficient("thin_qr_factor: R(" + std::to_string(j) + "," + std::to_string(j) +
                          ") = " + std::to_string(rjj) + " below tolerance");
    }
    if (rjj < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

/// Random semi-orthogonal n x p matrix (n >= p): thin QR of a seeded
/// i.i.d. standard normal matrix. Deterministic per seed.
inline StiefelParam init_semi_orthogonal(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  if (n < p || p < 1) {
    throw BadShape("init_semi_orthogonal: need n >= p >= 1, got " + std::to_string(n) + "x" +
                   std::to_string(p));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd a(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      a(i, j) = gauss(rng);
    }
  }
  StiefelParam w;
  w.value = thin_qr_factor(a);
  w.grad = Eigen::MatrixXd::Zero(n, p);
  return w;
}

/// Projection of a Euclidean gradient onto the tangent space at W:
///   Z = G - W sym(W^T G),  sym(A) = (A + A^T)/2,
/// so that W^T Z + Z^T W = 0.
inline Eigen::MatrixXd stiefel_project(const Eigen::MatrixXd& w, const Eigen::MatrixXd& g) {
  if (w.rows() != g.rows() || w.cols() != g.cols()) {
    throw BadShape("stiefel_project: gradient shape does not match point");
  }
  Eigen::MatrixXd wtg = w.transpose() * g;
  return g - w * (0.5 * (wtg + wtg.transpose()));
}

/// QR retraction: W' = qf(W - eta * direction). Restores the Gram invariant
/// to working precision; agrees with the exponential map to first order.
inline Eigen::MatrixXd stiefel_retract(const Eigen::MatrixXd& w, const Eigen::MatrixXd& direction,
                                       double eta) {
  if (w.rows() != direction.rows() || w.cols() != direction.cols()) {
    throw BadShape("stiefel_retract: direction shape does not match point");
  }
  return thin_qr_factor(w - eta * direction);
}

/// Learning-rate schedule and step counter. decay_period == 0 disables the
/// schedule (the constant eta = 0.01 of the reference setup).
struct OptimState {
  double learning_rate = 0.01;
  double decay_factor = 1.0;
  long decay_period = 0;
  long step_count = 0;

  double effective_lr() const {
    if (decay_period <= 0 || decay_factor == 1.0) return learning_rate;
    const long k = step_count / decay_period;
    return learning_rate * std::pow(decay_factor, static_cast<double>(k));
  }
};

/// Mutable views into a model's trainable parameters, in a fixed order.
struct ParamRefs {
  std::vector<StiefelParam*> stiefel;
  std::vector<HeadParam*> heads;
};

/// One SGD step from the gradients currently held in the parameter slots:
/// project-then-retract for Stiefel weights, a plain Euclidean step for
/// head projections. Requires exclusive access to the parameters.
inline void sgd_step(const ParamRefs& params, OptimState& state) {
  const double eta = state.effective_lr();
  for (StiefelParam* p : params.stiefel) {
    const Eigen::MatrixXd tangent = stiefel_project(p->value, p->grad);
    p->value = stiefel_retract(p->value, tangent, eta);
  }
  for (HeadParam* h : params.heads) {
    h->projection -= eta * h->grad;
  }
  ++state.step_count;
}

}  // namespace dreamnet
