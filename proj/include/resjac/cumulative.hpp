#pragma once

#include "resjac/common.hpp"
#include "resjac/tensorstore.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace resjac {

enum class CompositionMethod { truncated, dense };

std::string to_string(CompositionMethod method);

/// Rank-K factorization U·diag(σ)·Vᴴ of a running product, with σ normalized
/// so that σ_1 = 1 and the removed scale kept as a base-10 logarithm.
template <typename Scalar>
struct LowRankProduct {
  using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  MatrixType u;
  Vector sigma;
  MatrixType v;
  double log10_scale = 0.0;
};

/// Composes P = M_{L−1}···M_{injection} by marching backward and
/// right-multiplying, re-truncating to rank k_cum after every step. The SVD at
/// each step is on the k_cum×d core. on_step (optional) sees the product after
/// each layer is absorbed, with the layer index that was just absorbed.
template <typename Scalar>
LowRankProduct<Scalar> compose_low_rank(
    std::span<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> layers, int injection_layer, int k_cum,
    const std::function<void(int, const LowRankProduct<Scalar>&)>& on_step = {});

struct CumulativeResult {
  int injection_layer = 0;
  Vector sigma_top;  // normalized, descending, σ_1 = 1
  double log10_scale = 0.0;
  double effective_rank = 1.0;
  int truncation_rank = 512;     // K_cum after clamping to d
  bool truncation_limited = false;  // effective_rank ≥ 0.5·K_cum
  bool rank_clamped = false;        // requested K_cum exceeded d
  CompositionMethod method = CompositionMethod::truncated;

  /// log10 ‖P‖_F of the (truncated) product.
  double log10_frobenius() const;
  /// Absolute singular values σ_i·10^log10_scale (may overflow for deep stacks).
  Vector absolute_sigma() const;
};

/// exp(−Σ p_i log p_i), p_i = σ_i²/Σσ_j², with 0·log 0 = 0.
double effective_rank(std::span<const double> sigma);
double effective_rank(const Vector& sigma);

/// Clamps K_cum to d, warning when it had to.
int clamp_rank(int k_cum, int d, bool* clamped = nullptr);

CumulativeResult compose_backward(const JacobianSet& set, int injection_layer, int k_cum = 512);
CumulativeResult compose_backward(std::span<const CMatrix> layers, int injection_layer, int k_cum = 512);

/// Exact dense product with per-step max normalization, then a full SVD.
/// Intended for d up to a few hundred.
CumulativeResult compose_dense(const JacobianSet& set, int injection_layer);

template <typename Scalar>
CumulativeResult summarize_product(const LowRankProduct<Scalar>& p, int injection_layer, int k_cum, bool clamped);

struct BottleneckProfile {
  std::vector<CumulativeResult> cumulative;  // indexed by injection layer
  std::vector<double> spectral_radius;       // ρ(J_ℓ)
  std::vector<double> frac_expanding;        // fraction of |λ| > 1 in J_ℓ
  std::optional<double> spearman_erank_radius;  // null when undefined (L < 3 or constant input)
};

/// Every P_ℓ from one backward sweep, plus per-layer spectral radius and
/// expanding fraction, and their rank correlation with erank(P_ℓ).
BottleneckProfile bottleneck_profile(const JacobianSet& set, int k_cum = 512,
                                     CompositionMethod method = CompositionMethod::truncated);

}  // namespace resjac
