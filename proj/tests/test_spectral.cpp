#include "resjac/spectral.hpp"

#include <doctest.h>

#include <cmath>

using namespace resjac;

TEST_CASE("rotation block gives a complex pair") {
  const double t = 0.3;
  Matrix m = Matrix::Zero(3, 3);
  m << std::cos(t), -std::sin(t), 0, std::sin(t), std::cos(t), 0, 0, 0, 2.0;
  const auto e = eig_spectrum(m);
  CHECK(e.pair_count == 2);
  CHECK(e.complex_fraction() == doctest::Approx(2.0 / 3.0));
  CHECK(e.spectral_radius() == doctest::Approx(2.0));
  CHECK(e.frac_expanding() == doctest::Approx(1.0 / 3.0));  // |λ| = 1 is not expanding
  CHECK(e.mean_abs() == doctest::Approx(4.0 / 3.0));
}

TEST_CASE("svd metrics of a diagonal matrix") {
  Vector d(4);
  d << 4, 2, 1, 1;
  const auto s = svd_metrics(Matrix(d.asDiagonal()));
  CHECK(s.kappa == doctest::Approx(4.0));
  CHECK_FALSE(s.kappa_infinite);
  // (Σσ²)² / Σσ⁴ = 22² / 274
  CHECK(s.participation_ratio == doctest::Approx(484.0 / 274.0));
  CHECK(s.frobenius == doctest::Approx(std::sqrt(22.0)));
}

TEST_CASE("singular matrices give the infinite condition sentinel") {
  Matrix m = Matrix::Zero(3, 3);
  m(0, 0) = 1;
  m(1, 1) = 2;
  const auto s = svd_metrics(m);
  CHECK(s.kappa_infinite);
}

TEST_CASE("self alignment is 1 for symmetric positive definite matrices") {
  Rng rng(5);
  const Matrix g = gaussian_matrix(20, 20, rng);
  const Matrix spd = g * g.transpose() + Matrix::Identity(20, 20);
  CHECK(self_alignment(spd, 5).value == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(self_alignment(spd, 5).random_baseline == doctest::Approx(0.25));
}

TEST_CASE("self alignment of a nilpotent shift is 0") {
  // Shift maps e_{i+1} to e_i: top input and output subspaces are disjoint at k = 1
  // once the singular values are split by a diagonal weight.
  Matrix m = Matrix::Zero(4, 4);
  m(0, 1) = 3.0;
  m(1, 2) = 2.0;
  m(2, 3) = 1.0;
  CHECK(self_alignment(m, 1).value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("self alignment is invariant to singular vector sign flips") {
  Rng rng(6);
  const Matrix m = gaussian_matrix(12, 12, rng);
  SvdFactors f = thin_svd(m);
  const double a = self_alignment(f, 4).value;
  f.u.col(1) *= -1;
  f.v.col(1) *= -1;
  CHECK(self_alignment(f, 4).value == doctest::Approx(a).epsilon(1e-14));
}

TEST_CASE("degenerate singular gaps are flagged") {
  Vector s(4);
  s << 3, 2, 2, 1;
  CHECK(degenerate_cut(s, 2));
  CHECK_FALSE(degenerate_cut(s, 1));
}

TEST_CASE("forward alignment between identical symmetric layers is 1") {
  Rng rng(8);
  const Matrix g = gaussian_matrix(10, 10, rng);
  const Matrix s = g + g.transpose();
  CHECK(forward_alignment(s, s, 3).value == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("henrici departure closed forms") {
  Matrix normal(2, 2);
  normal << 0, -1, 1, 0;
  CHECK(henrici(normal).value == doctest::Approx(0.0).epsilon(1e-12));
  Matrix jordan(2, 2);
  jordan << 0, 1, 0, 0;
  CHECK(henrici(jordan).value == doctest::Approx(1.0));
  Matrix tri(2, 2);
  tri << 1, 1, 0, 1;  // ‖M‖² = 3, Σ|λ|² = 2
  CHECK(henrici(tri).value == doctest::Approx(std::sqrt(1.0 / 3.0)));
  CHECK_THROWS_AS(henrici(Matrix::Zero(3, 3).eval()), ValidationError);
}

TEST_CASE("layer summaries report residual ratios and null forward alignment on the last layer") {
  Rng rng(9);
  std::vector<Matrix> js;
  for (int l = 0; l < 3; ++l) js.push_back(Matrix::Identity(8, 8) + 0.1 * gaussian_matrix(8, 8, rng));
  const auto set = JacobianSet::from_means(js);
  const auto s = summarize_layers(set, 4);
  REQUIRE(s.size() == 3);
  CHECK(s[0].forward_alignment.has_value());
  CHECK_FALSE(s[2].forward_alignment.has_value());
  const Matrix r = js[1] - Matrix::Identity(8, 8);
  CHECK(s[1].residual_norm_ratio == doctest::Approx(r.norm() / js[1].norm()));
  CHECK(s[1].layer == 1);
  CHECK(s[1].k == 4);
}

TEST_CASE("per-sample statistics appear only with sample Jacobians") {
  Rng rng(10);
  std::vector<Matrix> js = {Matrix::Identity(4, 4) + 0.1 * gaussian_matrix(4, 4, rng)};
  auto set = JacobianSet::from_means(js, "m", "c", 2);
  CHECK_FALSE(layer_summary(set, 0, 2).sample_kappa.has_value());
  set.sample_jacobians = {{js[0] * 0.5}, {js[0] * 1.5}};
  const auto s = layer_summary(set, 0, 2);
  REQUIRE(s.sample_kappa.has_value());
  CHECK(s.sample_kappa->median == doctest::Approx(s.kappa));
}
