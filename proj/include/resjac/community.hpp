#pragma once

#include "resjac/actgraph.hpp"
#include "resjac/common.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace resjac {

struct Partition {
  std::vector<int> labels;  // contiguous from 0, numbered by first appearance
  double gamma_pos = 0.001;
  double gamma_neg = 0.0;
  double objective = 0.0;

  int n_nodes() const { return static_cast<int>(labels.size()); }
  int n_communities() const;
  std::vector<int> sizes() const;
  /// Communities with at least two members.
  int non_degenerate_count() const;

  /// Relabels arbitrary non-negative ids to the contiguous form.
  static Partition from_labels(const std::vector<int>& labels);
};

/// Signed CPM quality:
///   Σ_c [W⁺_c − γ⁺·n_c(n_c−1)/2] − Σ_c [W⁻_c − γ⁻·n_c(n_c−1)/2]
/// where W⁺_c, W⁻_c are the intra-community positive weight and absolute
/// negative weight.
double cpm_objective(const SignedGraph& g, const std::vector<int>& labels, double gamma_pos, double gamma_neg);

struct LeidenOptions {
  double gamma_pos = 0.001;
  double gamma_neg = 0.0;
  std::uint64_t seed = 0;
  int max_iterations = 10;  // Leiden passes per convergence, and perturbation rounds per restart
  int restarts = 5;
  double randomness = 0.01;  // refinement temperature
};

/// Leiden (local moving, randomized refinement, aggregation) on the signed
/// CPM objective, followed by a single-node moving pass on the original graph.
/// Restart 0 starts from singletons, later ones from a random partition; each
/// restart then runs max_iterations split/merge perturbation rounds, keeping
/// only improvements. Restarts run in parallel; the best objective wins, ties
/// to the lowest restart.
Partition leiden_signed_cpm(const SignedGraph& g, const LeidenOptions& options = {});

/// True if no single node can move to another existing community or to a new
/// singleton and raise the objective by more than tolerance.
bool is_single_move_optimal(const SignedGraph& g, const Partition& p, double tolerance = 1e-9);

/// Hook for alternative detectors.
class CommunityDetector {
 public:
  virtual ~CommunityDetector() = default;
  virtual std::string name() const = 0;
  virtual Partition detect(const SignedGraph& g) const = 0;
};

class LeidenCpmDetector : public CommunityDetector {
 public:
  explicit LeidenCpmDetector(LeidenOptions options = {}) : options_(options) {}
  std::string name() const override { return "leiden_signed_cpm"; }
  Partition detect(const SignedGraph& g) const override { return leiden_signed_cpm(g, options_); }

 private:
  LeidenOptions options_;
};

enum class NmiNorm { arithmetic, max, sqrt };

std::string to_string(NmiNorm norm);
NmiNorm parse_nmi_norm(const std::string& s);

/// Mutual information over the normalizing entropy (natural log). Two
/// single-community partitions give 1.
double nmi(const std::vector<int>& a, const std::vector<int>& b, NmiNorm norm = NmiNorm::arithmetic);
double nmi(const Partition& a, const Partition& b, NmiNorm norm = NmiNorm::arithmetic);
Matrix nmi_matrix(const std::vector<Partition>& partitions, NmiNorm norm = NmiNorm::arithmetic);

/// p_i = 1 − Σ_c (k_ic/k_i)² on absolute weights; undefined for isolated nodes.
struct ParticipationVector {
  std::vector<std::optional<double>> p;

  std::size_t size() const { return p.size(); }
  std::size_t defined_count() const;
};

ParticipationVector participation(const SignedGraph& g, const Partition& partition);

}  // namespace resjac
