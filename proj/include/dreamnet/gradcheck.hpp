#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dreamnet/errors.hpp"
#include "dreamnet/layers.hpp"
#include "dreamnet/network.hpp"
#include "dreamnet/optim.hpp"
#include "dreamnet/sym_matrix.hpp"

namespace dreamnet::gradcheck {

// The numeric side of every check below evaluates forward code only; none
// of the backward passes are reachable from it.

struct BlockReport {
  std::string name;
  double rel_error = 0.0;
  bool passed = true;
};

struct CheckReport {
  std::vector<BlockReport> blocks;
  double max_rel_error = 0.0;
  double h = 0.0;
  double tolerance = 0.0;
  bool passed = true;

  void add(const std::string& name, double rel_error) {
    const bool ok = rel_error <= tolerance;
    blocks.push_back({name, rel_error, ok});
    max_rel_error = std::max(max_rel_error, rel_error);
    passed = passed && ok;
  }
};

inline double relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  return (analytic - numeric).norm() / std::max(1e-12, analytic.norm() + numeric.norm());
}

// ---------------------------------------------------------------------------
// Central differences.
// ---------------------------------------------------------------------------

template <class F>
Eigen::VectorXd finite_diff(F&& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe(k) = x(k) + h;
    const double fp = f(probe);
    probe(k) = x(k) - h;
    const double fm = f(probe);
    probe(k) = x(k);
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NonFinite("finite_diff: objective not finite near coordinate " + std::to_string(k));
    }
    g(k) = (fp - fm) / (2.0 * h);
  }
  return g;
}

template <class F>
Eigen::MatrixXd finite_diff_matrix(F&& f, const Eigen::MatrixXd& x, double h) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  Eigen::MatrixXd probe = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      probe(i, j) = x(i, j) + h;
      const double fp = f(probe);
      probe(i, j) = x(i, j) - h;
      const double fm = f(probe);
      probe(i, j) = x(i, j);
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NonFinite("finite_diff_matrix: objective not finite near entry (" +
                        std::to_string(i) + "," + std::to_string(j) + ")");
      }
      g(i, j) = (fp - fm) / (2.0 * h);
    }
  }
  return g;
}

/// Symmetric-matrix points perturb (i,j) and (j,i) jointly, so the numeric
/// gradient of an off-diagonal pair is g_ij + g_ji of the full-matrix
/// convention. The result is reported symmetrically.
template <class F>
Eigen::MatrixXd finite_diff_sym(F&& f, const SymMatrix& x, double h) {
  const Eigen::Index d = x.dim();
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      Eigen::MatrixXd up = x.mat();
      Eigen::MatrixXd dn = x.mat();
      up(i, j) += h;
      dn(i, j) -= h;
      if (i != j) {
        up(j, i) += h;
        dn(j, i) -= h;
      }
      const double fp = f(SymMatrix(up));
      const double fm = f(SymMatrix(dn));
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NonFinite("finite_diff_sym: objective not finite near entry (" +
                        std::to_string(i) + "," + std::to_string(j) + ")");
      }
      const double v = (fp - fm) / (2.0 * h);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

/// Maps a full-matrix-convention symmetric gradient to the joint-perturbation
/// parameterization used by finite_diff_sym (off-diagonals doubled).
inline Eigen::MatrixXd joint_convention(const SymMatrix& g) {
  Eigen::MatrixXd j = 2.0 * g.mat();
  j.diagonal() = g.mat().diagonal();
  return j;
}

// ---------------------------------------------------------------------------
// Random instances. Spectra are constructed explicitly so that every
// pairwise eigengap is at least 0.1 and no eigenvalue sits within 1e-3 of
// the ReEig threshold, where spectral derivatives are discontinuous.
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::VectorXd spaced_spectrum(std::mt19937_64& rng, Eigen::Index d, double start) {
  std::uniform_real_distribution<double> jitter(0.0, 0.04);
  Eigen::VectorXd v(d);
  double cur = start + jitter(rng);
  for (Eigen::Index i = 0; i < d; ++i) {
    v(i) = cur;
    cur += 0.15 + jitter(rng);
  }
  return v;
}

/// Roughly half the eigenvalues below the rectification threshold and half
/// above, all pairwise gaps >= 0.18 and all at least 0.19 away from zero.
inline Eigen::VectorXd mixed_spectrum(std::mt19937_64& rng, Eigen::Index d) {
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  Eigen::VectorXd v(d);
  const Eigen::Index negatives = d / 2 + (d % 2);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double base =
        i < negatives ? -0.2 - 0.2 * static_cast<double>(negatives - 1 - i)
                      : 0.2 + 0.2 * static_cast<double>(i - negatives);
    v(i) = base + jitter(rng);
  }
  return v;
}

inline SymMatrix sym_with_spectrum(const Eigen::VectorXd& evals, std::uint64_t basis_seed) {
  const Eigen::Index d = evals.size();
  const Eigen::MatrixXd u = init_semi_orthogonal(d, d, basis_seed).value;
  return SymMatrix(u * evals.asDiagonal() * u.transpose());
}

inline SymMatrix random_sym(std::mt19937_64& rng, Eigen::Index d) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = gauss(rng);
  return SymMatrix(m);
}

}  // namespace detail

/// Finite-difference check of one layer's backward pass over seeded random
/// instances (dims <= 10). Failures are report entries, not errors.
inline CheckReport check_layer(const std::string& layer, int trials, double tol,
                               double h = 1e-5) {
  CheckReport report;
  report.tolerance = tol;
  report.h = h;
  const double epsilon = 1e-4;

  for (int t = 0; t < trials; ++t) {
    std::mt19937_64 rng(mix_seed(0xD1CE, static_cast<std::uint64_t>(t) * 131 +
                                              std::hash<std::string>{}(layer)));
    std::uniform_int_distribution<int> dim_pick(2, 8);
    const Eigen::Index d = dim_pick(rng);
    const std::string tag = layer + "[" + std::to_string(t) + "]";

    if (layer == "bimap") {
      std::uniform_int_distribution<int> p_pick(1, static_cast<int>(d));
      const Eigen::Index p = p_pick(rng);
      Eigen::MatrixXd w = init_semi_orthogonal(d, p, rng()).value;
      if (t % 2 == 1) w = w.transpose().eval();  // exercise the wide (decoder) direction
      const Eigen::Index d_in = w.rows();
      const SymMatrix x =
          detail::sym_with_spectrum(detail::spaced_spectrum(rng, d_in, 0.3), rng());
      const SymMatrix dy = detail::random_sym(rng, w.cols());

      auto [y0, cache] = bimap_forward(w, x);
      const BiMapGrads grads = bimap_backward(w, cache, dy);
      const auto fx = [&](const SymMatrix& xp) {
        return dy.mat().cwiseProduct(bimap_forward(w, xp).first.mat()).sum();
      };
      const auto fw = [&](const Eigen::MatrixXd& wp) {
        return dy.mat().cwiseProduct(bimap_forward(wp, x).first.mat()).sum();
      };
      report.add(tag + ".dx",
                 relative_error(joint_convention(grads.dx), finite_diff_sym(fx, x, h)));
      report.add(tag + ".dw", relative_error(grads.dw, finite_diff_matrix(fw, w, h)));
    } else if (layer == "reeig") {
      // Alternate between all-above-threshold spectra and mixed-sign ones
      // so both branches of the rectifier get exercised.
      Eigen::VectorXd evals = t % 2 == 0 ? detail::spaced_spectrum(rng, d, 0.2)
                                         : detail::mixed_spectrum(rng, d);
      const SymMatrix x = detail::sym_with_spectrum(evals, rng());
      const SymMatrix dy = detail::random_sym(rng, d);
      auto [y0, cache] = reeig_forward(x, epsilon);
      const SymMatrix dx = reeig_backward(cache, dy);
      const auto f = [&](const SymMatrix& xp) {
        return dy.mat().cwiseProduct(reeig_forward(xp, epsilon).first.mat()).sum();
      };
      report.add(tag + ".dx", relative_error(joint_convention(dx), finite_diff_sym(f, x, h)));
    } else if (layer == "logeig") {
      const SymMatrix x = detail::sym_with_spectrum(detail::spaced_spectrum(rng, d, 0.2), rng());
      const SymMatrix dy = detail::random_sym(rng, d);
      auto [y0, cache] = logeig_forward(SpdMatrix(x));
      const SymMatrix dx = logeig_backward(cache, dy);
      const auto f = [&](const SymMatrix& xp) {
        return dy.mat().cwiseProduct(logeig_forward(SpdMatrix(xp)).first.mat()).sum();
      };
      report.add(tag + ".dx", relative_error(joint_convention(dx), finite_diff_sym(f, x, h)));
    } else if (layer == "shortcut") {
      // Exact linear map: backward passes dy through unchanged. A large step
      // keeps the difference quotient clear of cancellation noise.
      const SymMatrix x = detail::random_sym(rng, d);
      const SymMatrix skip = detail::random_sym(rng, d);
      const SymMatrix dy = detail::random_sym(rng, d);
      const double h_lin = 0.5;
      const auto fh = [&](const SymMatrix& hp) {
        return dy.mat().cwiseProduct(shortcut_add(hp, skip).mat()).sum();
      };
      const auto fs = [&](const SymMatrix& sp) {
        return dy.mat().cwiseProduct(shortcut_add(x, sp).mat()).sum();
      };
      report.add(tag + ".dh",
                 relative_error(joint_convention(dy), finite_diff_sym(fh, x, h_lin)));
      report.add(tag + ".dskip",
                 relative_error(joint_convention(dy), finite_diff_sym(fs, skip, h_lin)));
    } else if (layer == "head") {
      std::uniform_int_distribution<int> c_pick(2, 6);
      const int c = c_pick(rng);
      std::uniform_int_distribution<int> label_pick(0, c - 1);
      const int label = label_pick(rng);
      // Projection at the 1/d init scale keeps logits O(1); a saturated
      // softmax starves the difference quotient of signal.
      std::normal_distribution<double> gauss(0.0, 1.0 / static_cast<double>(d));
      Eigen::MatrixXd p(c, d * d);
      for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) = gauss(rng);
      const SymMatrix x = detail::random_sym(rng, d);

      const HeadForward hf = head_forward(p, x, label);
      const HeadGrads grads = head_backward(p, hf.cache);
      const auto fp = [&](const Eigen::MatrixXd& pp) { return head_forward(pp, x, label).loss; };
      const auto fx = [&](const SymMatrix& xp) { return head_forward(p, xp, label).loss; };
      report.add(tag + ".dp", relative_error(grads.dp, finite_diff_matrix(fp, p, h)));
      report.add(tag + ".dx",
                 relative_error(joint_convention(grads.dx), finite_diff_sym(fx, x, h)));
    } else {
      throw BadConfig("check_layer: unknown layer id '" + layer + "'");
    }
  }
  return report;
}

/// Batch of synthetic SPD descriptors sized for a model config, with labels
/// cycling over the classes.
inline std::vector<Sample> synthetic_batch(const ModelConfig& config, int batch_size,
                                           std::uint64_t seed) {
  std::vector<Sample> batch;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int d = config.input_dim();
  const int frames = 4 * d;
  for (int b = 0; b < batch_size; ++b) {
    Eigen::MatrixXd f(frames, d);
    for (int i = 0; i < frames; ++i)
      for (int j = 0; j < d; ++j) f(i, j) = gauss(rng);
    batch.push_back({covariance_descriptor(FrameSet(f)), b % config.num_classes});
  }
  return batch;
}

/// Perturbs every entry of every parameter block of the full composite loss
/// and compares against the analytic gradients block by block.
inline CheckReport check_model(const ModelConfig& config, int batch_size, double tol,
                               double h = 1e-5) {
  CheckReport report;
  report.tolerance = tol;
  report.h = h;

  Model model = build(config);
  long param_count = 0;
  for (const auto& w : model.backbone) param_count += w.value.size();
  for (const auto& w : model.encoders) param_count += w.value.size();
  for (const auto& w : model.decoders) param_count += w.value.size();
  for (const auto& hd : model.heads) param_count += hd.projection.size();
  if (param_count > 4096) {
    throw BadConfig("check_model: " + std::to_string(param_count) +
                    " parameters; use a tiny config (<= ~2000)");
  }

  const std::vector<Sample> batch = synthetic_batch(config, batch_size, config.seed + 77);
  const double lambda = config.lambda_rt;

  Model analytic = model;
  loss_and_grads(analytic, batch, lambda);

  struct Block {
    std::string name;
    Eigen::MatrixXd* value;
    const Eigen::MatrixXd* grad;
  };
  Model probe = model;
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < probe.backbone.size(); ++i) {
    blocks.push_back(
        {"backbone[" + std::to_string(i) + "]", &probe.backbone[i].value, &analytic.backbone[i].grad});
  }
  for (std::size_t e = 0; e < probe.encoders.size(); ++e) {
    blocks.push_back(
        {"encoder[" + std::to_string(e) + "]", &probe.encoders[e].value, &analytic.encoders[e].grad});
    blocks.push_back(
        {"decoder[" + std::to_string(e) + "]", &probe.decoders[e].value, &analytic.decoders[e].grad});
  }
  for (std::size_t i = 0; i < probe.heads.size(); ++i) {
    blocks.push_back(
        {"head[" + std::to_string(i) + "]", &probe.heads[i].projection, &analytic.heads[i].grad});
  }

  for (const Block& blk : blocks) {
    const auto f = [&](const Eigen::MatrixXd& wp) {
      *blk.value = wp;
      return loss_only(probe, batch, lambda);
    };
    const Eigen::MatrixXd saved = *blk.value;
    const Eigen::MatrixXd numeric = finite_diff_matrix(f, saved, h);
    *blk.value = saved;
    report.add(blk.name, relative_error(*blk.grad, numeric));
  }
  return report;
}

}  // namespace dreamnet::gradcheck
