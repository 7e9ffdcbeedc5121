#pragma once

#include "resjac/common.hpp"
#include "resjac/tensorstore.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace resjac {

/// Units z-scored across samples (ddof = 1). Zero-variance units are flagged
/// and their column is left at zero.
struct Standardized {
  Matrix z;  // n_samples × d
  std::vector<bool> degenerate;
  int snapshot = 0;

  int n_samples() const { return static_cast<int>(z.rows()); }
  int d() const { return static_cast<int>(z.cols()); }
};

Standardized zscore(const Matrix& x, int snapshot = 0);
Standardized zscore(const ActivationTensor& tensor, int snapshot);

/// Pearson correlation of the standardized columns, clipped to [−1, 1].
/// Rows and columns of degenerate units are zero.
Matrix correlation_matrix(const Standardized& s);

struct GraphEdge {
  int i = 0;
  int j = 0;
  double weight = 0.0;
};

/// Undirected signed graph in CSR form; every edge is stored in both rows.
struct SignedGraph {
  int n_nodes = 0;
  int k_per_node = 20;
  int snapshot = 0;
  std::vector<std::size_t> row_ptr;  // n_nodes + 1
  std::vector<int> col;
  std::vector<double> weight;
  std::vector<bool> degenerate;  // per node; empty means none

  std::size_t degree(int node) const { return row_ptr[node + 1] - row_ptr[node]; }
  std::size_t n_edges() const { return col.size() / 2; }
  bool is_degenerate(int node) const { return !degenerate.empty() && degenerate[node]; }
  double weight_between(int a, int b) const;  // 0 when absent

  /// Edges with i < j in lexicographic order.
  std::vector<GraphEdge> edge_list() const;

  /// Builds from undirected edges (either orientation, no duplicates).
  static SignedGraph from_edges(int n_nodes, const std::vector<GraphEdge>& edges);
};

/// Throws ValidationError on asymmetry, self-loops, out-of-range or
/// non-finite weights, or an isolated node that is not flagged degenerate.
void validate(const SignedGraph& g);

/// Top-k partners per unit by |corr| (ties to the smaller index), then the
/// union of both directions. k ≥ d keeps every off-diagonal pair and warns.
SignedGraph build_graph(const Standardized& s, int k = 20);

/// Text format: one JSON header line, then "i j weight" per edge with i < j,
/// sorted lexicographically.
std::string encode_graph(const SignedGraph& g);
SignedGraph decode_graph(std::string_view text);
void write_graph(const std::filesystem::path& path, const SignedGraph& g);
SignedGraph read_graph(const std::filesystem::path& path);

}  // namespace resjac
