#pragma once

// Synthetic stacks, planted activations and graphs, and brute-force oracles.
// The oracles use their own arithmetic and never call the modules they check.

#include "resjac/actgraph.hpp"
#include "resjac/common.hpp"
#include "resjac/tensorstore.hpp"

#include <optional>
#include <string>
#include <vector>

namespace resjac {

enum class StackKind { init_like, trained_like, planted_funnel, custom };

std::string to_string(StackKind kind);
StackKind parse_stack_kind(const std::string& s);

struct StackProfile {
  StackKind kind = StackKind::trained_like;
  int d = 64;
  int L = 8;
  std::vector<double> nonnormality_gradient;  // length L; empty means linspace(0, 1, L)
  std::optional<int> funnel_rank;
  double skip_scale = 1.0;
  std::uint64_t seed = 0;

  double epsilon = 0.01;         // init_like perturbation
  double nilpotent_scale = 3.0;  // η at g = 0 for trained_like
  double funnel_gain = 1.0;      // planted_funnel drive inside the projector
  double custom_scale = 0.5;     // custom: J = skip·I + scale·G/√d
};

/// Throws ValidationError on a malformed profile.
void validate(const StackProfile& profile);

/// init_like:      J = skip·I + ε·G/√d.
/// trained_like:   J = skip·I + R, R = (1−g)·A + g·S + η(1−g)·B·U·Bᵀ with A
///                 skew and S symmetric (spectral norm 0.5), U strictly upper
///                 triangular (spectral norm 1), B a fixed orthogonal basis;
///                 with funnel_rank r, R is left-multiplied by a rank-r projector.
/// planted_funnel: J = skip·I + Π_r·(gain·I + A).
/// custom:         J = skip·I + scale·G/√d.
JacobianSet gen_stack(const StackProfile& profile);

/// Haar-distributed real orthogonal matrix.
Matrix haar_orthogonal(int d, Rng& rng);

struct PlantedActivationSpec {
  int n_samples = 200;
  int d = 64;
  int communities = 4;
  double intra_corr = 0.8;
  double inter_corr = 0.0;
  std::vector<int> bridge_nodes;  // load equally on their own block and the next one
  int n_snapshots = 1;
  std::uint64_t seed = 0;
};

struct PlantedActivations {
  ActivationTensor tensor;
  std::vector<int> membership;  // planted block of every unit
};

/// Gaussian factor model: unit i in block b is √intra·f_b + √(1−intra)·ε_i,
/// with block factors correlated at inter/intra. Throws ValidationError when
/// the implied covariance is not positive semi-definite.
PlantedActivations gen_planted_activations(const PlantedActivationSpec& spec);

struct PlantedGraph {
  SignedGraph graph;
  std::vector<int> membership;
};

/// Unit-weight signed SBM: positive edges inside blocks with probability
/// p_in, negative edges across blocks with probability p_out.
PlantedGraph gen_signed_sbm(int n, int blocks, double p_in, double p_out, std::uint64_t seed);

/// Every pair present with probability density, weight uniform in [−1, 1].
/// Isolated nodes are flagged degenerate.
SignedGraph gen_random_signed_graph(int n, double density, std::uint64_t seed);

struct DenseSpectrum {
  Vector sigma;  // descending, σ_1 = 1
  double log10_scale = 0.0;
};

/// Exact product J_{L−1}···J_{injection} with Frobenius rescaling after every
/// factor, then a two-sided Jacobi SVD.
DenseSpectrum oracle_dense_cumulative(const JacobianSet& set, int injection_layer);

struct ExhaustiveOptimum {
  double objective = 0.0;
  std::vector<int> labels;
  long long partitions_checked = 0;
};

/// Global optimum of the signed CPM objective over every set partition
/// (restricted growth strings). Refuses n > 10.
ExhaustiveOptimum oracle_exhaustive_partitions(const SignedGraph& g, double gamma_pos, double gamma_neg);

}  // namespace resjac
