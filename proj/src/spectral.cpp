#include "resjac/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace resjac {

double EigenSpectrum::frac_expanding() const {
  if (values.size() == 0) return 0.0;
  Eigen::Index n = 0;
  for (const auto& v : values)
    if (std::abs(v) > 1.0) ++n;
  return static_cast<double>(n) / static_cast<double>(values.size());
}

double EigenSpectrum::mean_abs() const { return values.size() ? values.cwiseAbs().mean() : 0.0; }

double EigenSpectrum::spectral_radius() const { return values.size() ? values.cwiseAbs().maxCoeff() : 0.0; }

double EigenSpectrum::complex_fraction() const {
  return values.size() ? static_cast<double>(pair_count) / static_cast<double>(values.size()) : 0.0;
}

EigenSpectrum eig_spectrum(const Matrix& m, double threshold_im) {
  if (m.rows() != m.cols()) throw ValidationError("eig_spectrum: matrix is not square");
  if (!m.allFinite()) throw ValidationError("eig_spectrum: non-finite input");
  Eigen::EigenSolver<Matrix> solver(m, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) throw NumericalError("eigensolver did not converge");
  EigenSpectrum out;
  out.values = solver.eigenvalues();
  out.threshold_im = threshold_im;
  for (const auto& v : out.values)
    if (std::abs(v.imag()) > threshold_im) ++out.pair_count;
  return out;
}

SvdFactors thin_svd(const Matrix& m) {
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD did not converge");
  return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

SvdMetrics svd_metrics_from_sigma(const Vector& sigma) {
  SvdMetrics out;
  out.sigma = sigma;
  if (sigma.size() == 0) return out;
  const double smax = sigma(0);
  const double smin = sigma(sigma.size() - 1);
  if (smin < kSigmaFloor) {
    out.kappa = std::numeric_limits<double>::infinity();
    out.kappa_infinite = true;
  } else {
    out.kappa = smax / smin;
  }
  const double s2 = sigma.squaredNorm();
  out.frobenius = std::sqrt(s2);
  // Ratio form (Σσ²)²/Σσ⁴ on σ/σ_max keeps the fourth powers in range.
  if (smax > 0) {
    Vector r = sigma / smax;
    double a = r.squaredNorm();
    double b = r.array().pow(4).sum();
    out.participation_ratio = a * a / b;
  }
  return out;
}

SvdMetrics svd_metrics(const Matrix& m) {
  if (!m.allFinite()) throw ValidationError("svd_metrics: non-finite input");
  Eigen::BDCSVD<Matrix> svd(m);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD did not converge");
  return svd_metrics_from_sigma(svd.singularValues());
}

bool degenerate_cut(const Vector& sigma, int k) {
  if (k <= 0 || k >= sigma.size()) return false;
  return sigma(k - 1) - sigma(k) <= 1e-10 * sigma(0);
}

namespace {

void check_k(int k, Eigen::Index d) {
  if (k < 1 || k > d) throw ValidationError("alignment rank k=" + std::to_string(k) + " outside [1, d]");
}

}  // namespace

Alignment self_alignment(const SvdFactors& svd, int k) {
  check_k(k, svd.sigma.size());
  Alignment out;
  out.k = k;
  out.random_baseline = static_cast<double>(k) / static_cast<double>(svd.sigma.size());
  out.value = (svd.v.leftCols(k).transpose() * svd.u.leftCols(k)).squaredNorm() / k;
  out.subspace_ambiguous = degenerate_cut(svd.sigma, k);
  return out;
}

Alignment self_alignment(const Matrix& m, int k) { return self_alignment(thin_svd(m), k); }

Alignment forward_alignment(const SvdFactors& current, const SvdFactors& next, int k) {
  if (current.sigma.size() != next.sigma.size()) throw ValidationError("forward_alignment: dimension mismatch");
  check_k(k, current.sigma.size());
  Alignment out;
  out.k = k;
  out.random_baseline = static_cast<double>(k) / static_cast<double>(current.sigma.size());
  out.value = (current.u.leftCols(k).transpose() * next.v.leftCols(k)).squaredNorm() / k;
  out.subspace_ambiguous = degenerate_cut(current.sigma, k) || degenerate_cut(next.sigma, k);
  return out;
}

Alignment forward_alignment(const Matrix& current, const Matrix& next, int k) {
  return forward_alignment(thin_svd(current), thin_svd(next), k);
}

Henrici henrici_from(double frobenius_sq, double eig_abs_sq_sum) {
  if (!(frobenius_sq > 0)) throw ValidationError("henrici: undefined for zero matrix");
  double ratio = (frobenius_sq - eig_abs_sq_sum) / frobenius_sq;
  Henrici out;
  if (ratio < 0) {
    out.clamp = -ratio;
    ratio = 0;
  } else if (ratio > 1) {
    out.clamp = ratio - 1;
    ratio = 1;
  }
  out.value = std::sqrt(ratio);
  return out;
}

Henrici henrici(const Matrix& m) {
  const double f2 = m.squaredNorm();
  if (!(f2 > 0)) throw ValidationError("henrici: undefined for zero matrix");
  return henrici_from(f2, eig_spectrum(m).values.squaredNorm());
}

Henrici henrici(const CMatrix& m) {
  const double f2 = m.squaredNorm();
  if (!(f2 > 0)) throw ValidationError("henrici: undefined for zero matrix");
  Eigen::ComplexEigenSolver<CMatrix> solver(m, false);
  if (solver.info() != Eigen::Success) throw NumericalError("complex eigensolver did not converge");
  return henrici_from(f2, solver.eigenvalues().squaredNorm());
}

namespace {

struct LayerFactors {
  SvdFactors j;
  SvdFactors r;
};

LayerFactors factor_layer(const Matrix& j) {
  const Matrix r = j - Matrix::Identity(j.rows(), j.cols());
  return {thin_svd(j), thin_svd(r)};
}

SpectralSummary assemble(const JacobianSet& set, int layer, int k, const LayerFactors& f,
                         const LayerFactors* next) {
  const Matrix& j = set.mean_jacobians[layer];
  SpectralSummary s;
  s.layer = layer;
  s.k = k;

  SvdMetrics metrics = svd_metrics_from_sigma(f.j.sigma);
  s.kappa = metrics.kappa;
  s.kappa_infinite = metrics.kappa_infinite;
  s.participation_ratio = metrics.participation_ratio;
  s.frobenius = metrics.frobenius;
  s.sigma_max = f.j.sigma(0);
  s.sigma_min = f.j.sigma(f.j.sigma.size() - 1);

  EigenSpectrum eig = eig_spectrum(j);
  s.frac_expanding = eig.frac_expanding();
  s.mean_abs_lambda = eig.mean_abs();
  s.spectral_radius = eig.spectral_radius();
  s.pair_count = eig.pair_count;
  s.complex_fraction = eig.complex_fraction();
  s.henrici = henrici_from(j.squaredNorm(), eig.values.squaredNorm()).value;

  Alignment aj = self_alignment(f.j, k);
  Alignment ar = self_alignment(f.r, k);
  s.self_alignment_J = aj.value;
  s.self_alignment_R = ar.value;
  s.random_baseline = aj.random_baseline;
  s.subspace_ambiguous = aj.subspace_ambiguous || ar.subspace_ambiguous;
  if (next) {
    Alignment fj = forward_alignment(f.j, next->j, k);
    Alignment fr = forward_alignment(f.r, next->r, k);
    s.forward_alignment = fj.value;
    s.forward_alignment_R = fr.value;
    s.subspace_ambiguous = s.subspace_ambiguous || fj.subspace_ambiguous || fr.subspace_ambiguous;
  }

  const double jf = f.j.sigma.norm();
  s.residual_norm_ratio = jf > 0 ? f.r.sigma.norm() / jf : 0.0;

  if (set.has_samples()) {
    std::vector<double> kap, pr, fro;
    for (const auto& sample : set.sample_jacobians) {
      SvdMetrics sm = svd_metrics(sample[layer]);
      kap.push_back(sm.kappa);
      pr.push_back(sm.participation_ratio);
      fro.push_back(sm.frobenius);
    }
    s.sample_kappa = quantile_summary(kap);
    s.sample_participation_ratio = quantile_summary(pr);
    s.sample_frobenius = quantile_summary(fro);
  }
  return s;
}

void check_layer(const JacobianSet& set, int layer) {
  if (layer < 0 || layer >= set.L())
    throw ValidationError("layer " + std::to_string(layer) + " out of range [0, " + std::to_string(set.L()) + ")");
}

template <typename F>
auto with_layer_context(int layer, F&& f) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError("layer " + std::to_string(layer) + ": " + e.what());
  }
}

}  // namespace

SpectralSummary layer_summary(const JacobianSet& set, int layer, int k) {
  check_layer(set, layer);
  return with_layer_context(layer, [&] {
    LayerFactors f = factor_layer(set.mean_jacobians[layer]);
    if (layer + 1 < set.L()) {
      LayerFactors next = factor_layer(set.mean_jacobians[layer + 1]);
      return assemble(set, layer, k, f, &next);
    }
    return assemble(set, layer, k, f, nullptr);
  });
}

std::vector<SpectralSummary> summarize_layers(const JacobianSet& set, int k) {
  const int L = set.L();
  std::vector<LayerFactors> factors(L);
  parallel_for(L, [&](std::size_t l) {
    factors[l] = with_layer_context(static_cast<int>(l), [&] { return factor_layer(set.mean_jacobians[l]); });
  });
  std::vector<SpectralSummary> out(L);
  parallel_for(L, [&](std::size_t l) {
    const int layer = static_cast<int>(l);
    out[l] = with_layer_context(layer, [&] {
      return assemble(set, layer, k, factors[l], layer + 1 < L ? &factors[l + 1] : nullptr);
    });
  });
  return out;
}

double pooled_complex_fraction(const std::vector<SpectralSummary>& summaries, int d) {
  if (summaries.empty() || d <= 0) return 0.0;
  long long pairs = 0;
  for (const auto& s : summaries) pairs += s.pair_count;
  return static_cast<double>(pairs) / (static_cast<double>(d) * static_cast<double>(summaries.size()));
}

}  // namespace resjac
