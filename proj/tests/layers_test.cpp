#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dreamnet/gradcheck.hpp"
#include "dreamnet/layers.hpp"
#include "dreamnet/optim.hpp"
#include "test_support.hpp"

using namespace dreamnet;
using Catch::Matchers::WithinAbs;

namespace {

SymMatrix sym_of(const Eigen::MatrixXd& m) { return SymMatrix(m); }

SymMatrix with_spectrum(const Eigen::VectorXd& evals, std::uint64_t basis_seed) {
  const Eigen::MatrixXd u = init_semi_orthogonal(evals.size(), evals.size(), basis_seed).value;
  return SymMatrix(u * evals.asDiagonal() * u.transpose());
}

double fd_error_sym(const SymMatrix& analytic, const Eigen::MatrixXd& numeric) {
  return gradcheck::relative_error(gradcheck::joint_convention(analytic), numeric);
}

}  // namespace

// ---------------------------------------------------------------------------
// BiMap
// ---------------------------------------------------------------------------

TEST_CASE("bimap with identity weight is the identity") {
  const SymMatrix x(oracle::random_symmetric(4, 1));
  const auto [y, cache] = bimap_forward(Eigen::MatrixXd::Identity(4, 4), x);
  CHECK((y.mat() - x.mat()).norm() < 1e-15);
}

TEST_CASE("bimap with a basis column selects a coordinate") {
  Eigen::MatrixXd w(2, 1);
  w << 1, 0;
  Eigen::MatrixXd xm(2, 2);
  xm << 4, 1, 1, 3;
  const auto [y, cache] = bimap_forward(w, sym_of(xm));
  CHECK(y.dim() == 1);
  CHECK_THAT(y(0, 0), WithinAbs(4.0, 1e-15));
}

TEST_CASE("bimap dimension mismatch is rejected") {
  CHECK_THROWS_AS(bimap_forward(Eigen::MatrixXd::Identity(3, 2), SymMatrix::Identity(4)),
                  DimensionMismatch);
}

TEST_CASE("bimap matches a naive triple-product oracle and preserves SPD") {
  const Eigen::MatrixXd w = init_semi_orthogonal(5, 3, 11).value;
  const SymMatrix x(oracle::random_spd(5, 11));
  const auto [y, cache] = bimap_forward(w, x);

  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(3, 3);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) expected(a, b) += w(i, a) * x(i, j) * w(j, b);
  CHECK((y.mat() - expected).norm() < 1e-12);
  CHECK(is_spd(y, 0.0));
}

TEST_CASE("bimap backward zero cotangent") {
  const Eigen::MatrixXd w = init_semi_orthogonal(4, 2, 2).value;
  const SymMatrix x(oracle::random_symmetric(4, 2));
  const auto [y, cache] = bimap_forward(w, x);
  const BiMapGrads g = bimap_backward(w, cache, SymMatrix::Zero(2));
  CHECK(g.dx.mat().norm() == 0.0);
  CHECK(g.dw.norm() == 0.0);
}

TEST_CASE("bimap backward with identity weight passes dy through") {
  const SymMatrix x(oracle::random_symmetric(3, 3));
  const SymMatrix dy(oracle::random_symmetric(3, 4));
  const auto [y, cache] = bimap_forward(Eigen::MatrixXd::Identity(3, 3), x);
  const BiMapGrads g = bimap_backward(Eigen::MatrixXd::Identity(3, 3), cache, dy);
  CHECK((g.dx.mat() - dy.mat()).norm() < 1e-15);
}

TEST_CASE("bimap backward matches finite differences (seed 3)") {
  const Eigen::MatrixXd w = init_semi_orthogonal(5, 3, 3).value;
  const SymMatrix x(oracle::random_symmetric(5, 3));
  const SymMatrix dy(oracle::random_symmetric(3, 33));
  const auto [y, cache] = bimap_forward(w, x);
  const BiMapGrads g = bimap_backward(w, cache, dy);

  const auto fx = [&](const SymMatrix& xp) {
    return dy.mat().cwiseProduct(bimap_forward(w, xp).first.mat()).sum();
  };
  const auto fw = [&](const Eigen::MatrixXd& wp) {
    return dy.mat().cwiseProduct(bimap_forward(wp, x).first.mat()).sum();
  };
  CHECK(fd_error_sym(g.dx, gradcheck::finite_diff_sym(fx, x, 1e-5)) <= 1e-7);
  CHECK(gradcheck::relative_error(g.dw, gradcheck::finite_diff_matrix(fw, w, 1e-5)) <= 1e-7);
}

// ---------------------------------------------------------------------------
// ReEig
// ---------------------------------------------------------------------------

TEST_CASE("reeig leaves matrices above the threshold unchanged") {
  Eigen::MatrixXd d(2, 2);
  d << 1, 0, 0, 2;
  const auto [y, cache] = reeig_forward(sym_of(d), 1e-4);
  CHECK((y.mat() - d).norm() < 1e-14);
}

TEST_CASE("reeig clamps small eigenvalues on a diagonal matrix") {
  Eigen::MatrixXd d(2, 2);
  d << 1e-6, 0, 0, 2;
  const auto [y, cache] = reeig_forward(sym_of(d), 1e-4);
  CHECK_THAT(y.mat()(0, 0), WithinAbs(1e-4, 1e-16));
  CHECK_THAT(y.mat()(1, 1), WithinAbs(2.0, 1e-14));
}

TEST_CASE("reeig on the zero matrix yields eps I") {
  const auto [y, cache] = reeig_forward(SymMatrix::Zero(3), 1e-4);
  CHECK((y.mat() - 1e-4 * Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-16);
}

TEST_CASE("reeig requires a positive threshold") {
  CHECK_THROWS_AS(reeig_forward(SymMatrix::Identity(2), 0.0), BadConfig);
}

TEST_CASE("reeig output eigenvalues never fall below eps") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const SymMatrix x(oracle::random_symmetric(6, 100 + seed));
    const auto [y, cache] = reeig_forward(x, 1e-4);
    CHECK(sym_eig(y.sym()).eigenvalues.minCoeff() >= 1e-4 * (1.0 - 1e-12));
  }
}

TEST_CASE("reeig backward is the identity in the all-above regime") {
  Eigen::VectorXd evals(3);
  evals << 0.5, 1.0, 2.0;
  const SymMatrix x = with_spectrum(evals, 5);
  const SymMatrix dy(oracle::random_symmetric(3, 55));
  const auto [y, cache] = reeig_forward(x, 1e-4);
  const SymMatrix dx = reeig_backward(cache, dy);
  CHECK((dx.mat() - dy.mat()).norm() < 1e-12 * dy.mat().norm());
}

TEST_CASE("reeig backward vanishes when every eigenvalue is clamped") {
  Eigen::VectorXd evals(3);
  evals << -0.5, -0.3, -0.2;  // distinct, all below eps
  const SymMatrix x = with_spectrum(evals, 6);
  const auto [y, cache] = reeig_forward(x, 1e-4);
  // dy diagonal in the eigenbasis
  const Eigen::MatrixXd& u = cache.eig.eigenvectors;
  Eigen::VectorXd d(3);
  d << 1.0, -2.0, 3.0;
  const SymMatrix dy(u * d.asDiagonal() * u.transpose());
  const SymMatrix dx = reeig_backward(cache, dy);
  CHECK(dx.mat().norm() < 1e-14);
}

TEST_CASE("reeig backward matches finite differences (seed 5)") {
  Eigen::VectorXd evals(5);
  evals << -0.7, -0.3, 0.2, 0.6, 1.1;  // gaps >= 0.3, far from the kink
  const SymMatrix x = with_spectrum(evals, 5);
  const SymMatrix dy(oracle::random_symmetric(5, 505));
  const auto [y, cache] = reeig_forward(x, 1e-4);
  const SymMatrix dx = reeig_backward(cache, dy);
  const auto f = [&](const SymMatrix& xp) {
    return dy.mat().cwiseProduct(reeig_forward(xp, 1e-4).first.mat()).sum();
  };
  CHECK(fd_error_sym(dx, gradcheck::finite_diff_sym(f, x, 1e-5)) <= 1e-6);
}

// ---------------------------------------------------------------------------
// LogEig
// ---------------------------------------------------------------------------

TEST_CASE("logeig of the identity is zero") {
  const auto [y, cache] = logeig_forward(SpdMatrix(SymMatrix::Identity(4)));
  CHECK(y.mat().norm() < 1e-14);
}

TEST_CASE("logeig of a diagonal exponential") {
  Eigen::MatrixXd d(2, 2);
  d << std::exp(1.0), 0, 0, std::exp(2.0);
  const auto [y, cache] = logeig_forward(SpdMatrix(sym_of(d)));
  CHECK_THAT(y.mat()(0, 0), WithinAbs(1.0, 1e-12));
  CHECK_THAT(y.mat()(1, 1), WithinAbs(2.0, 1e-12));
}

TEST_CASE("logeig rejects indefinite input") {
  Eigen::MatrixXd d(2, 2);
  d << 1, 0, 0, -1;
  CHECK_THROWS_AS(logeig_forward(SpdMatrix(sym_of(d))), NotSpd);
}

TEST_CASE("logeig round-trips through an independent matrix exponential (seed 9)") {
  const SymMatrix x(oracle::random_spd(5, 9));
  const auto [y, cache] = logeig_forward(SpdMatrix(x));
  CHECK((oracle::taylor_expm(y.mat()) - x.mat()).norm() <= 1e-9 * x.mat().norm());
}

TEST_CASE("logeig backward at the identity passes dy through") {
  const SymMatrix dy(oracle::random_symmetric(4, 14));
  const auto [y, cache] = logeig_forward(SpdMatrix(SymMatrix::Identity(4)));
  const SymMatrix dx = logeig_backward(cache, dy);
  CHECK((dx.mat() - dy.mat()).norm() < 1e-12 * dy.mat().norm());
}

TEST_CASE("logeig backward on a scalar matrix is the scalar chain rule") {
  const double a = 2.5;
  const auto [y, cache] = logeig_forward(SpdMatrix(SymMatrix(a * Eigen::MatrixXd::Identity(3, 3))));
  Eigen::VectorXd d(3);
  d << 1.0, 2.0, -1.0;
  const Eigen::MatrixXd& u = cache.eig.eigenvectors;
  const SymMatrix dy(u * d.asDiagonal() * u.transpose());
  const SymMatrix dx = logeig_backward(cache, dy);
  CHECK((dx.mat() - dy.mat() / a).norm() < 1e-13);
}

TEST_CASE("logeig backward matches finite differences (seed 13)") {
  Eigen::VectorXd evals(4);
  evals << 0.3, 0.6, 1.2, 2.0;
  const SymMatrix x = with_spectrum(evals, 13);
  const SymMatrix dy(oracle::random_symmetric(4, 113));
  const auto [y, cache] = logeig_forward(SpdMatrix(x));
  const SymMatrix dx = logeig_backward(cache, dy);
  const auto f = [&](const SymMatrix& xp) {
    return dy.mat().cwiseProduct(logeig_forward(SpdMatrix(xp)).first.mat()).sum();
  };
  CHECK(fd_error_sym(dx, gradcheck::finite_diff_sym(f, x, 1e-5)) <= 1e-6);
}

// ---------------------------------------------------------------------------
// Shortcut addition
// ---------------------------------------------------------------------------

TEST_CASE("shortcut_add basics") {
  const SymMatrix x(oracle::random_symmetric(3, 17));
  CHECK((shortcut_add(x, SymMatrix::Zero(3)).mat() - x.mat()).norm() == 0.0);
  CHECK((shortcut_add(SymMatrix::Identity(2), SymMatrix::Identity(2)).mat() -
         2 * Eigen::MatrixXd::Identity(2, 2))
            .norm() == 0.0);
  CHECK_THROWS_AS(shortcut_add(SymMatrix::Identity(2), SymMatrix::Identity(3)),
                  DimensionMismatch);
}

TEST_CASE("sum of SPD matrices stays SPD") {
  const SymMatrix a(oracle::random_spd(4, 18));
  const SymMatrix b(oracle::random_spd(4, 19));
  CHECK(is_spd(shortcut_add(a, b), 0.0));
}

// ---------------------------------------------------------------------------
// Classification head
// ---------------------------------------------------------------------------

TEST_CASE("head with zero projection gives uniform probabilities and log c loss") {
  const int c = 5;
  const SymMatrix x(oracle::random_symmetric(3, 20));
  const HeadForward hf = head_forward(Eigen::MatrixXd::Zero(c, 9), x, 2);
  for (int t = 0; t < c; ++t) CHECK_THAT(hf.probs(t), WithinAbs(1.0 / c, 1e-15));
  CHECK_THAT(hf.loss, WithinAbs(std::log(static_cast<double>(c)), 1e-14));
}

TEST_CASE("head loss decays monotonically with the true-class margin") {
  // Projection rows chosen so logits = (margin, 0, 0).
  const SymMatrix x = SymMatrix::Identity(2);
  const Eigen::VectorXd v = vectorize_row_major(x);
  double prev = std::numeric_limits<double>::infinity();
  for (double margin : {1.0, 10.0, 100.0}) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(3, 4);
    p.row(0) = margin * v.transpose() / v.squaredNorm();
    const HeadForward hf = head_forward(p, x, 0);
    CHECK(hf.loss < prev);
    prev = hf.loss;
  }
  CHECK(prev < 1e-10);
}

TEST_CASE("head loss matches an independent log-sum-exp evaluation (seed 17)") {
  const int c = 4, d = 3;
  const Eigen::MatrixXd p = oracle::random_matrix(c, d * d, 17);
  const SymMatrix x(oracle::random_symmetric(d, 170));
  const int label = 1;
  const HeadForward hf = head_forward(p, x, label);

  // Straight-line evaluation: row-major vectorization, logits, LSE.
  Eigen::VectorXd v(d * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) v(i * d + j) = x(i, j);
  const Eigen::VectorXd logits = p * v;
  const double m = logits.maxCoeff();
  double lse = 0.0;
  for (int t = 0; t < c; ++t) lse += std::exp(logits(t) - m);
  const double expected = -(logits(label) - m - std::log(lse));
  CHECK_THAT(hf.loss, WithinAbs(expected, 1e-12));
}

TEST_CASE("head errors") {
  CHECK_THROWS_AS(head_forward(Eigen::MatrixXd::Zero(3, 8), SymMatrix::Identity(3), 0),
                  DimensionMismatch);
  CHECK_THROWS_AS(head_forward(Eigen::MatrixXd::Zero(3, 9), SymMatrix::Identity(3), 3), BadLabel);
  CHECK_THROWS_AS(head_forward(Eigen::MatrixXd::Zero(3, 9), SymMatrix::Identity(3), -1), BadLabel);
}

TEST_CASE("head backward is zero at a saturated correct prediction") {
  const SymMatrix x = SymMatrix::Identity(2);
  const Eigen::VectorXd v = vectorize_row_major(x);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(2, 4);
  p.row(0) = 2000.0 * v.transpose();  // probs underflow to exactly (1, 0)
  const HeadForward hf = head_forward(p, x, 0);
  const HeadGrads g = head_backward(p, hf.cache);
  CHECK(g.dp.norm() == 0.0);
  CHECK(g.dx.mat().norm() == 0.0);
}

TEST_CASE("head backward under uniform probabilities has +-1/2 logit gradients") {
  const SymMatrix x(oracle::random_symmetric(2, 21));
  const Eigen::MatrixXd p = Eigen::MatrixXd::Zero(2, 4);
  const HeadForward hf = head_forward(p, x, 0);
  const HeadGrads g = head_backward(p, hf.cache);
  const Eigen::VectorXd v = vectorize_row_major(x);
  CHECK((g.dp.row(0).transpose() + 0.5 * v).norm() < 1e-14);
  CHECK((g.dp.row(1).transpose() - 0.5 * v).norm() < 1e-14);
}

TEST_CASE("head backward matches finite differences (seed 19)") {
  const int c = 3, d = 3;
  const Eigen::MatrixXd p = oracle::random_matrix(c, d * d, 19) / d;
  const SymMatrix x(oracle::random_symmetric(d, 190));
  const int label = 2;
  const HeadForward hf = head_forward(p, x, label);
  const HeadGrads g = head_backward(p, hf.cache);
  const auto fp = [&](const Eigen::MatrixXd& pp) { return head_forward(pp, x, label).loss; };
  const auto fx = [&](const SymMatrix& xp) { return head_forward(p, xp, label).loss; };
  CHECK(gradcheck::relative_error(g.dp, gradcheck::finite_diff_matrix(fp, p, 1e-5)) <= 1e-7);
  CHECK(fd_error_sym(g.dx, gradcheck::finite_diff_sym(fx, x, 1e-5)) <= 1e-7);
}

// ---------------------------------------------------------------------------
// Cross-cutting properties
// ---------------------------------------------------------------------------

TEST_CASE("softmax is invariant under constant logit shifts") {
  const Eigen::VectorXd logits = Eigen::VectorXd::Random(6);
  const Eigen::VectorXd shifted = logits.array() + 123.456;
  CHECK((softmax(logits) - softmax(shifted)).norm() <= 1e-12);
}

TEST_CASE("backward outputs are exactly symmetric") {
  Eigen::VectorXd evals(4);
  evals << -0.6, 0.3, 0.9, 1.6;
  const SymMatrix x = with_spectrum(evals, 23);
  const SymMatrix dy(oracle::random_symmetric(4, 230));
  const auto [yr, rcache] = reeig_forward(x, 1e-4);
  const SymMatrix dxr = reeig_backward(rcache, dy);
  CHECK((dxr.mat() - dxr.mat().transpose()).norm() <= 1e-12 * dxr.mat().norm());
  const auto [yl, lcache] = logeig_forward(SpdMatrix(oracle::random_spd(4, 24)));
  const SymMatrix dxl = logeig_backward(lcache, dy);
  CHECK((dxl.mat() - dxl.mat().transpose()).norm() <= 1e-12 * dxl.mat().norm());
}

TEST_CASE("wide bimap produces PSD of bounded rank") {
  // Decoder direction: 3 -> 5 through the transpose of a tall Stiefel point.
  const Eigen::MatrixXd v = init_semi_orthogonal(5, 3, 31).value;
  const SymMatrix h(oracle::random_spd(3, 31));
  const auto [y, cache] = bimap_forward(v.transpose(), h);
  const Eigen::VectorXd evals = sym_eig(y).eigenvalues;
  CHECK(y.dim() == 5);
  CHECK(evals.minCoeff() > -1e-12);          // PSD up to roundoff
  CHECK(std::abs(evals(0)) < 1e-12);         // rank <= 3: two zero eigenvalues
  CHECK(std::abs(evals(1)) < 1e-12);
  CHECK(evals(2) > 1e-6);
}
