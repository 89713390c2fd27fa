#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>

#include "dreamnet/errors.hpp"

namespace dreamnet {

/// Dense symmetric matrix. Symmetry is enforced on construction by
/// averaging (A + A^T)/2, so entries(i,j) == entries(j,i) holds exactly.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) {
      throw DimensionMismatch("SymMatrix: input is " + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + ", expected square");
    }
    m_ = 0.5 * (a + a.transpose());
  }

  static SymMatrix Zero(Eigen::Index dim) { return SymMatrix(Eigen::MatrixXd::Zero(dim, dim)); }
  static SymMatrix Identity(Eigen::Index dim) {
    return SymMatrix(Eigen::MatrixXd::Identity(dim, dim));
  }

  Eigen::Index dim() const { return m_.rows(); }
  const Eigen::MatrixXd& mat() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  SymMatrix operator+(const SymMatrix& o) const {
    require_same_dim(o, "operator+");
    return SymMatrix(m_ + o.m_);
  }
  SymMatrix operator-(const SymMatrix& o) const {
    require_same_dim(o, "operator-");
    return SymMatrix(m_ - o.m_);
  }
  SymMatrix operator*(double s) const { return SymMatrix(m_ * s); }

  void require_same_dim(const SymMatrix& o, const std::string& where) const {
    if (dim() != o.dim()) {
      throw DimensionMismatch(where + ": dims " + std::to_string(dim()) + " vs " +
                              std::to_string(o.dim()));
    }
  }

 private:
  Eigen::MatrixXd m_;
};

/// Symmetric positive definite matrix. Construction does not re-validate
/// definiteness; boundaries that claim SPD output (covariance descriptors,
/// dataset loading, ReEig) check it with is_spd.
class SpdMatrix {
 public:
  SpdMatrix() = default;
  explicit SpdMatrix(SymMatrix s) : inner_(std::move(s)) {}

  Eigen::Index dim() const { return inner_.dim(); }
  const SymMatrix& sym() const { return inner_; }
  const Eigen::MatrixXd& mat() const { return inner_.mat(); }

 private:
  SymMatrix inner_;
};

/// A set of vectorized frames (one per row) from which a covariance
/// descriptor is computed. The n-1 covariance denominator requires at
/// least two frames.
class FrameSet {
 public:
  explicit FrameSet(Eigen::MatrixXd frames) : frames_(std::move(frames)) {
    if (frames_.rows() < 2) {
      throw BadShape("FrameSet: needs at least 2 frames, got " + std::to_string(frames_.rows()));
    }
    if (frames_.cols() < 1) {
      throw BadShape("FrameSet: frame dimension must be positive");
    }
  }

  Eigen::Index n_frames() const { return frames_.rows(); }
  Eigen::Index dim() const { return frames_.cols(); }
  const Eigen::MatrixXd& frames() const { return frames_; }

 private:
  Eigen::MatrixXd frames_;
};

}  // namespace dreamnet
