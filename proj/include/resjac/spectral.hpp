#pragma once

#include "resjac/common.hpp"
#include "resjac/tensorstore.hpp"

#include <optional>
#include <vector>

namespace resjac {

/// Eigenvalues of a real square matrix.
struct EigenSpectrum {
  CVector values;
  int pair_count = 0;  // eigenvalues with |Im| > threshold_im
  double threshold_im = 1e-6;

  double frac_expanding() const;  // |{i : |λ_i| > 1}| / d, strict
  double mean_abs() const;
  double spectral_radius() const;
  double complex_fraction() const;  // pair_count / d
};

EigenSpectrum eig_spectrum(const Matrix& m, double threshold_im = 1e-6);

/// σ below this floor makes κ an infinite sentinel.
inline constexpr double kSigmaFloor = 1e-300;

struct SvdMetrics {
  double kappa = 1.0;
  bool kappa_infinite = false;
  double participation_ratio = 1.0;
  double frobenius = 0.0;
  Vector sigma;  // descending
};

SvdMetrics svd_metrics(const Matrix& m);
SvdMetrics svd_metrics_from_sigma(const Vector& sigma_descending);

/// Thin SVD with singular values descending.
struct SvdFactors {
  Matrix u;
  Vector sigma;
  Matrix v;
};
SvdFactors thin_svd(const Matrix& m);

struct Alignment {
  double value = 0.0;
  int k = 0;
  double random_baseline = 0.0;  // k / d
  bool subspace_ambiguous = false;
};

/// Relative gap σ_k − σ_{k+1} < 1e-10·σ_1 marks the top-k subspace as non-unique.
bool degenerate_cut(const Vector& sigma, int k);

/// ‖V_kᵀ U_k‖_F² / k on the top-k singular subspaces. Sign flips of singular
/// vector pairs leave the value unchanged.
Alignment self_alignment(const Matrix& m, int k);
Alignment self_alignment(const SvdFactors& svd, int k);

/// ‖U_{l,k}ᵀ V_{l+1,k}‖_F² / k between adjacent layers.
Alignment forward_alignment(const Matrix& current, const Matrix& next, int k);
Alignment forward_alignment(const SvdFactors& current, const SvdFactors& next, int k);

struct Henrici {
  double value = 0.0;
  double clamp = 0.0;  // how far the raw ratio fell outside [0,1] before clamping
};

/// √(‖M‖_F² − Σ|λ_i|²)/‖M‖_F. Throws ValidationError on the zero matrix.
Henrici henrici(const Matrix& m);
Henrici henrici(const CMatrix& m);
Henrici henrici_from(double frobenius_sq, double eig_abs_sq_sum);

inline int default_alignment_k(int d) { return std::min(64, d); }

struct SpectralSummary {
  int layer = 0;
  double kappa = 1.0;
  bool kappa_infinite = false;
  double participation_ratio = 1.0;
  double frac_expanding = 0.0;
  double mean_abs_lambda = 0.0;
  double spectral_radius = 0.0;
  double complex_fraction = 0.0;
  int pair_count = 0;
  double self_alignment_J = 1.0;
  double self_alignment_R = 1.0;
  std::optional<double> forward_alignment;    // null on the last layer
  std::optional<double> forward_alignment_R;  // null on the last layer
  double random_baseline = 0.0;
  double henrici = 0.0;
  double residual_norm_ratio = 0.0;
  double frobenius = 0.0;
  double sigma_max = 0.0;
  double sigma_min = 0.0;
  bool subspace_ambiguous = false;
  int k = 0;
  // Per-sample distributions, present only when sample Jacobians exist.
  std::optional<QuantileSummary> sample_kappa;
  std::optional<QuantileSummary> sample_participation_ratio;
  std::optional<QuantileSummary> sample_frobenius;
};

/// All metrics of one layer's mean Jacobian, plus the residual operator R = J − I.
SpectralSummary layer_summary(const JacobianSet& set, int layer, int k);

/// layer_summary for every layer; layers are analysed in parallel.
std::vector<SpectralSummary> summarize_layers(const JacobianSet& set, int k);

/// Complex-pair fraction pooled over every eigenvalue of every layer.
double pooled_complex_fraction(const std::vector<SpectralSummary>& summaries, int d);

}  // namespace resjac
