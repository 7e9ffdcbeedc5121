#include "resjac/schur.hpp"

#include "resjac/cumulative.hpp"
#include "resjac/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>

namespace resjac {

std::string to_string(SchurMode mode) { return mode == SchurMode::J ? "J" : "R"; }

std::string to_string(Construction c) {
  switch (c) {
    case Construction::dose: return "dose";
    case Construction::control_a: return "controlA";
    case Construction::control_b: return "controlB";
  }
  return "?";
}

SchurMode parse_schur_mode(const std::string& s) {
  if (s == "J") return SchurMode::J;
  if (s == "R") return SchurMode::R;
  throw ValidationError("unknown Schur mode '" + s + "' (expected J or R)");
}

Construction parse_construction(const std::string& s) {
  if (s == "dose") return Construction::dose;
  if (s == "controlA" || s == "control_A" || s == "control_a") return Construction::control_a;
  if (s == "controlB" || s == "control_B" || s == "control_b") return Construction::control_b;
  throw ValidationError("unknown construction '" + s + "' (expected dose, controlA or controlB)");
}

SchurFactors schur_factor(const Matrix& m, SchurMode mode) {
  if (m.rows() != m.cols()) throw ValidationError("schur_factor: matrix is not square");
  if (!m.allFinite()) throw ValidationError("schur_factor: non-finite input");
  CMatrix a = m.cast<Complex>();
  if (mode == SchurMode::R) a -= CMatrix::Identity(m.rows(), m.cols());
  Eigen::ComplexSchur<CMatrix> schur(a, /*computeU=*/true);
  if (schur.info() != Eigen::Success) throw NumericalError("complex Schur factorization failed");
  SchurFactors f;
  f.source_mode = mode;
  f.q = schur.matrixU();
  const CMatrix& t = schur.matrixT();
  f.lambda = t.diagonal();
  f.n = CMatrix::Zero(t.rows(), t.cols());
  f.n.triangularView<Eigen::StrictlyUpper>() = t.triangularView<Eigen::StrictlyUpper>();
  return f;
}

namespace {

void check_dose(double c) {
  if (!(c >= 0) || !std::isfinite(c)) throw ValidationError("dose must be finite and >= 0");
}

CMatrix conjugate_by(const CMatrix& q, const CMatrix& core) { return q * core * q.adjoint(); }

CMatrix with_skip(CMatrix a, SchurMode mode) {
  if (mode == SchurMode::R) a += CMatrix::Identity(a.rows(), a.cols());
  return a;
}

}  // namespace

CMatrix recompose(const SchurFactors& f, double c) {
  check_dose(c);
  CMatrix core = f.n * Complex(c, 0.0);
  core.diagonal() = f.lambda;
  return with_skip(conjugate_by(f.q, core), f.source_mode);
}

double imaginary_residue(const CMatrix& a) {
  const double re = a.real().norm();
  const double im = a.imag().norm();
  if (im == 0.0) return 0.0;
  return re > 0 ? im / re : std::numeric_limits<double>::infinity();
}

Matrix recompose_real(const SchurFactors& f, double c) {
  CMatrix a = recompose(f, c);
  const double residue = imaginary_residue(a);
  if (residue > kRealResidueTolerance)
    throw NumericalError("non-real recomposition (imaginary residue " + format_double(residue) + ")");
  return a.real();
}

CMatrix haar_unitary(int d, Rng& rng) {
  CMatrix z(d, d);
  const double s = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double re = rng.normal();
      double im = rng.normal();
      z(i, j) = Complex(s * re, s * im);
    }
  Eigen::HouseholderQR<CMatrix> qr(z);
  CMatrix q = qr.householderQ() * CMatrix::Identity(d, d);
  const CMatrix& r = qr.matrixQR();
  for (int j = 0; j < d; ++j) {
    const Complex rjj = r(j, j);
    const double mag = std::abs(rjj);
    if (mag > 0) q.col(j) *= rjj / mag;
  }
  return q;
}

CMatrix control_a(const SchurFactors& f, double c, std::uint64_t seed) {
  check_dose(c);
  CMatrix normal_part = conjugate_by(f.q, f.lambda.asDiagonal().toDenseMatrix());
  const int d = f.dim();
  const double target = c * f.nonnormal_mass();
  if (target > 0) {
    Rng rng(seed);
    Matrix g = gaussian_matrix(d, d, rng);
    g *= target / g.norm();
    normal_part += g.cast<Complex>();
  }
  return with_skip(std::move(normal_part), f.source_mode);
}

CMatrix control_b(const SchurFactors& f, double c, std::uint64_t seed) {
  check_dose(c);
  Rng rng(seed);
  CMatrix q = haar_unitary(f.dim(), rng);
  CMatrix core = f.n * Complex(c, 0.0);
  core.diagonal() = f.lambda;
  return with_skip(conjugate_by(q, core), f.source_mode);
}

namespace {

struct ProductMetrics {
  double erank = 0.0;
  double log10_frobenius = 0.0;
  double henrici = 0.0;
  bool truncation_limited = false;
};

// Nonzero eigenvalues of U Σ Vᴴ are those of the k×k matrix Σ Vᴴ U.
template <typename Scalar>
double low_rank_henrici(const LowRankProduct<Scalar>& p) {
  CMatrix core = (p.sigma.template cast<Scalar>().asDiagonal() * (p.v.adjoint() * p.u)).template cast<Complex>();
  Eigen::ComplexEigenSolver<CMatrix> solver(core, false);
  if (solver.info() != Eigen::Success) throw NumericalError("eigensolver failed on cumulative core");
  return henrici_from(p.sigma.squaredNorm(), solver.eigenvalues().squaredNorm()).value;
}

template <typename Scalar>
ProductMetrics measure(std::span<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> layers, int k,
                       bool full_henrici) {
  LowRankProduct<Scalar> p = compose_low_rank<Scalar>(layers, 0, k);
  CumulativeResult r = summarize_product(p, 0, k, false);
  ProductMetrics m;
  m.erank = r.effective_rank;
  m.log10_frobenius = r.log10_frobenius();
  m.truncation_limited = r.truncation_limited;
  if (full_henrici) {
    const int d = static_cast<int>(layers.front().rows());
    CMatrix prod = CMatrix::Identity(d, d);
    for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
      prod = prod * layers[l].template cast<Complex>();
      prod /= prod.cwiseAbs().maxCoeff();
    }
    m.henrici = henrici(prod).value;
  } else {
    m.henrici = low_rank_henrici(p);
  }
  return m;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace

DoseCurve dose_sweep(const JacobianSet& set, const DoseOptions& options) {
  if (options.doses.empty()) throw ValidationError("dose grid is empty");
  for (double c : options.doses) check_dose(c);
  if (options.full_henrici && set.d() > 512) throw ValidationError("full Henrici path requires d <= 512");
  const int L = set.L();
  bool clamped = false;
  const int k = clamp_rank(options.k_cum, set.d(), &clamped);
  const bool random = options.construction != Construction::dose;
  const int draws = random ? options.n_draws : 1;
  if (draws < 1) throw ValidationError("n_draws must be >= 1");

  std::vector<SchurFactors> factors(L);
  parallel_for(L, [&](std::size_t l) {
    try {
      factors[l] = schur_factor(set.mean_jacobians[l], options.mode);
    } catch (const NumericalError& e) {
      throw NumericalError("layer " + std::to_string(l) + ": " + e.what());
    }
  });

  const std::size_t n_doses = options.doses.size();
  std::vector<ProductMetrics> results(n_doses * draws);
  parallel_for(results.size(), [&](std::size_t task) {
    const double c = options.doses[task / draws];
    const int draw = static_cast<int>(task % draws);
    if (!random && c == 1.0) {
      // c = 1 is the trained stack itself.
      results[task] = measure<double>(std::span<const Matrix>(set.mean_jacobians), k, options.full_henrici);
      return;
    }
    std::vector<CMatrix> layers(L);
    for (int l = 0; l < L; ++l) {
      const std::uint64_t s =
          derive_seed(options.seed, {static_cast<std::uint64_t>(options.construction), static_cast<std::uint64_t>(l),
                                     static_cast<std::uint64_t>(draw)});
      switch (options.construction) {
        case Construction::dose: layers[l] = recompose(factors[l], c); break;
        case Construction::control_a: layers[l] = control_a(factors[l], c, s); break;
        case Construction::control_b: layers[l] = control_b(factors[l], c, s); break;
      }
    }
    results[task] = measure<Complex>(std::span<const CMatrix>(layers), k, options.full_henrici);
  });

  DoseCurve curve;
  curve.construction = options.construction;
  curve.mode = options.mode;
  curve.n_random_draws = draws;
  curve.k_cum = k;
  curve.full_henrici = options.full_henrici;
  for (std::size_t i = 0; i < n_doses; ++i) {
    std::vector<double> er, lf, he;
    bool limited = false;
    for (int r = 0; r < draws; ++r) {
      const auto& m = results[i * draws + r];
      er.push_back(m.erank);
      lf.push_back(m.log10_frobenius);
      he.push_back(m.henrici);
      limited = limited || m.truncation_limited;
    }
    DosePoint p;
    p.dose = options.doses[i];
    std::tie(p.erank, p.erank_std) = mean_std(er);
    std::tie(p.log10_frobenius, p.log10_frobenius_std) = mean_std(lf);
    std::tie(p.henrici, p.henrici_std) = mean_std(he);
    p.truncation_limited = limited;
    curve.points.push_back(p);
  }
  return curve;
}

}  // namespace resjac
