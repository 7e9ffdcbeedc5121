#pragma once

#include "resjac/common.hpp"
#include "resjac/community.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace resjac {

/// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

/// Pearson correlation of average ranks. Throws ValidationError "undefined"
/// when either input is constant, and on length mismatch or n < 3.
double spearman(std::span<const double> x, std::span<const double> y);
/// As spearman, but NaN instead of the "undefined" error.
double spearman_or_nan(std::span<const double> x, std::span<const double> y);

enum class Sidedness { two_sided, greater, less };

struct PermutationResult {
  double observed = 0.0;
  double p_value = 1.0;
  int n_permutations = 0;
  bool degenerate = false;  // statistic undefined or identical under every permutation
};

/// Statistic of a relabeling: perm[i] is the item that takes position i.
using PermutedStatistic = std::function<double(std::span<const int> perm)>;

/// Monte-Carlo permutation test with the add-one convention
///   p = (1 + #{|s_perm| ≥ |s_obs|}) / (1 + n_perm)   (two-sided).
/// Draws are generated in fixed chunks with derived seeds, so the result does
/// not depend on the thread count.
PermutationResult perm_test(const PermutedStatistic& statistic, int n_items, int n_perm, std::uint64_t seed,
                            Sidedness sidedness = Sidedness::two_sided);

struct FdrResult {
  std::vector<double> q_values;
  std::vector<bool> significant;
};

/// Benjamini–Hochberg step-up.
FdrResult bh_fdr(std::span<const double> p_values, double alpha = 0.05);

/// Columns 1/√n_c on the members of community c.
Matrix community_basis(const std::vector<int>& labels);

struct MesoscaleOperator {
  Matrix k;  // n_out_communities × n_in_communities
  double variance_captured = 0.0;
};

/// K = C_outᵀ J C_in and ‖K‖_F²/‖J‖_F².
MesoscaleOperator mesoscale_operator(const Matrix& j, const std::vector<int>& labels_in,
                                     const std::vector<int>& labels_out);

/// (mean top − mean bottom) / std(all values, ddof = 1).
double cohens_d(std::span<const double> top, std::span<const double> bottom, std::span<const double> all);

struct StatResult {
  std::string test;
  std::string measure;
  int layer = -1;
  std::optional<double> statistic;
  std::optional<double> p_value;
  int n_permutations = 0;
  std::optional<double> q_value;
  bool significant = false;
  std::string flag;  // empty, "undefined" or "degenerate"
};

inline constexpr double kAlpha = 0.05;

/// Spearman of x against y with a two-sided pairing permutation test.
StatResult rate_coupling(std::span<const double> x, std::span<const double> y, int n_perm, std::uint64_t seed);

/// Disruption 1 − NMI between consecutive layers against |Δσ_max(K)| and
/// |Δvariance_captured|, plus the signed variants, in that order.
std::vector<StatResult> test1_rate_coupling(const std::vector<Partition>& layer_partitions,
                                            const std::vector<MesoscaleOperator>& operators, int n_perm,
                                            std::uint64_t seed, NmiNorm norm = NmiNorm::arithmetic);

/// Observed variance_captured against n_null size-preserving label shuffles;
/// statistic is z = (obs − mean_null)/std_null (ddof = 1), p one-sided.
StatResult test2_variance_captured(const Matrix& j, const std::vector<int>& labels_in,
                                   const std::vector<int>& labels_out, int n_null, std::uint64_t seed, int layer = -1);

struct BoundaryOptions {
  double tail_frac = 0.10;
  int n_perm = 5000;
  std::uint64_t seed = 0;
};

/// Cohen's d of column norms between the top and bottom participation tails,
/// with a two-sided label-shuffle permutation test among tail members.
StatResult test3_boundary_coupling(const Matrix& j, const ParticipationVector& participation,
                                   const BoundaryOptions& options, int layer = -1);

/// Spearman of per-layer self-alignment against per-layer Cohen's d.
StatResult selfalign_vs_d(std::span<const double> self_alignment, std::span<const double> d, int n_perm,
                          std::uint64_t seed);

/// BH across the results that have a p-value; sets q_value and significant.
void apply_fdr(std::vector<StatResult>& results, double alpha = kAlpha);

}  // namespace resjac
