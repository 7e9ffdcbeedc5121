#include "resjac/actgraph.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

namespace resjac {

using json = nlohmann::json;

Standardized zscore(const Matrix& x, int snapshot) {
  if (x.rows() < 2) throw ValidationError("zscore: need at least 2 samples");
  if (!x.allFinite()) throw ValidationError("zscore: non-finite activation");
  const Eigen::Index n = x.rows();
  Standardized s;
  s.snapshot = snapshot;
  s.z = Matrix::Zero(n, x.cols());
  s.degenerate.assign(x.cols(), false);
  int live = 0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double sd = std::sqrt((x.col(j).array() - mean).square().sum() / static_cast<double>(n - 1));
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
      s.degenerate[j] = true;
      continue;
    }
    s.z.col(j) = (x.col(j).array() - mean) / sd;
    ++live;
  }
  if (live == 0) throw ValidationError("zscore: every unit has zero variance");
  return s;
}

Standardized zscore(const ActivationTensor& tensor, int snapshot) {
  if (snapshot < 0 || snapshot >= tensor.S())
    throw ValidationError("snapshot " + std::to_string(snapshot) + " out of range [0, " + std::to_string(tensor.S()) +
                          ")");
  return zscore(tensor.snapshot(snapshot), snapshot);
}

Matrix correlation_matrix(const Standardized& s) {
  Matrix c = (s.z.transpose() * s.z) / static_cast<double>(s.n_samples() - 1);
  c = c.cwiseMax(-1.0).cwiseMin(1.0);
  return c;
}

double SignedGraph::weight_between(int a, int b) const {
  auto first = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[a]);
  auto last = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[a + 1]);
  auto it = std::lower_bound(first, last, b);
  if (it == last || *it != b) return 0.0;
  return weight[static_cast<std::size_t>(it - col.begin())];
}

std::vector<GraphEdge> SignedGraph::edge_list() const {
  std::vector<GraphEdge> out;
  out.reserve(n_edges());
  for (int i = 0; i < n_nodes; ++i)
    for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e)
      if (col[e] > i) out.push_back({i, col[e], weight[e]});
  return out;
}

SignedGraph SignedGraph::from_edges(int n_nodes, const std::vector<GraphEdge>& edges) {
  if (n_nodes < 0) throw ValidationError("negative node count");
  std::vector<std::vector<std::pair<int, double>>> adj(n_nodes);
  for (const auto& e : edges) {
    if (e.i < 0 || e.j < 0 || e.i >= n_nodes || e.j >= n_nodes)
      throw ValidationError("edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) + ") out of range");
    if (e.i == e.j) throw ValidationError("self-loop on node " + std::to_string(e.i));
    adj[e.i].push_back({e.j, e.weight});
    adj[e.j].push_back({e.i, e.weight});
  }
  SignedGraph g;
  g.n_nodes = n_nodes;
  g.row_ptr.assign(n_nodes + 1, 0);
  for (int i = 0; i < n_nodes; ++i) {
    std::sort(adj[i].begin(), adj[i].end());
    for (std::size_t t = 1; t < adj[i].size(); ++t)
      if (adj[i][t].first == adj[i][t - 1].first)
        throw ValidationError("duplicate edge (" + std::to_string(i) + ", " + std::to_string(adj[i][t].first) + ")");
    g.row_ptr[i + 1] = g.row_ptr[i] + adj[i].size();
    for (const auto& [j, w] : adj[i]) {
      g.col.push_back(j);
      g.weight.push_back(w);
    }
  }
  return g;
}

void validate(const SignedGraph& g) {
  if (g.row_ptr.size() != static_cast<std::size_t>(g.n_nodes) + 1)
    throw ValidationError("graph: row pointer length mismatch");
  if (!g.degenerate.empty() && g.degenerate.size() != static_cast<std::size_t>(g.n_nodes))
    throw ValidationError("graph: degenerate flag length mismatch");
  for (int i = 0; i < g.n_nodes; ++i) {
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const int j = g.col[e];
      if (j < 0 || j >= g.n_nodes) throw ValidationError("graph: neighbor out of range");
      if (j == i) throw ValidationError("graph: self-loop on node " + std::to_string(i));
      if (!std::isfinite(g.weight[e])) throw ValidationError("graph: non-finite weight");
      if (g.weight_between(j, i) != g.weight[e])
        throw ValidationError("graph: asymmetric edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    }
    if (g.degree(i) == 0 && !g.is_degenerate(i))
      throw ValidationError("graph: node " + std::to_string(i) + " is isolated but not flagged degenerate");
  }
}

SignedGraph build_graph(const Standardized& s, int k) {
  if (s.n_samples() < 3) throw ValidationError("build_graph: need at least 3 samples");
  if (k < 1) throw ValidationError("build_graph: k must be >= 1");
  const int d = s.d();
  int k_eff = k;
  if (k >= d) {
    log_warning("k=" + std::to_string(k) + " >= d=" + std::to_string(d) + ", keeping all off-diagonal edges");
    k_eff = d - 1;
  }
  const Matrix c = correlation_matrix(s);

  std::vector<std::vector<std::pair<int, double>>> picks(d);
  parallel_for(static_cast<std::size_t>(d), [&](std::size_t ii) {
    const int i = static_cast<int>(ii);
    if (s.degenerate[i]) return;
    std::vector<int> partners;
    partners.reserve(d);
    for (int j = 0; j < d; ++j)
      if (j != i && !s.degenerate[j]) partners.push_back(j);
    const auto take = std::min<std::size_t>(k_eff, partners.size());
    auto by_strength = [&](int a, int b) {
      const double wa = std::abs(c(i, a)), wb = std::abs(c(i, b));
      return wa != wb ? wa > wb : a < b;
    };
    std::partial_sort(partners.begin(), partners.begin() + static_cast<std::ptrdiff_t>(take), partners.end(),
                      by_strength);
    for (std::size_t t = 0; t < take; ++t) picks[i].push_back({partners[t], c(i, partners[t])});
  });

  std::map<std::pair<int, int>, double> merged;
  for (int i = 0; i < d; ++i) {
    for (const auto& [j, w] : picks[i]) {
      const auto key = std::minmax(i, j);
      auto [it, inserted] = merged.try_emplace(key, w);
      if (!inserted && std::abs(w) > std::abs(it->second)) it->second = w;
    }
  }
  std::vector<GraphEdge> edges;
  edges.reserve(merged.size());
  for (const auto& [key, w] : merged) edges.push_back({key.first, key.second, w});

  SignedGraph g = SignedGraph::from_edges(d, edges);
  g.k_per_node = k;
  g.snapshot = s.snapshot;
  g.degenerate = s.degenerate;
  return g;
}

namespace {

constexpr const char* kGraphFormat = "resjac-graph";
constexpr int kGraphVersion = 1;

double parse_double(std::string_view token) {
  if (token == "nan" || token == "inf" || token == "-inf") throw ValidationError("graph file: non-finite weight");
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw ValidationError("graph file: bad number '" + std::string(token) + "'");
  return v;
}

int parse_int(std::string_view token) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw ValidationError("graph file: bad index '" + std::string(token) + "'");
  return v;
}

}  // namespace

std::string encode_graph(const SignedGraph& g) {
  const auto edges = g.edge_list();
  json header;
  header["format"] = kGraphFormat;
  header["version"] = kGraphVersion;
  header["n_nodes"] = g.n_nodes;
  header["k"] = g.k_per_node;
  header["snapshot"] = g.snapshot;
  header["n_edges"] = edges.size();
  std::vector<int> degenerate;
  for (int i = 0; i < g.n_nodes; ++i)
    if (g.is_degenerate(i)) degenerate.push_back(i);
  header["degenerate"] = degenerate;

  std::string out = header.dump();
  out += '\n';
  for (const auto& e : edges) {
    out += std::to_string(e.i);
    out += ' ';
    out += std::to_string(e.j);
    out += ' ';
    out += format_double(e.weight);
    out += '\n';
  }
  return out;
}

SignedGraph decode_graph(std::string_view text) {
  const auto eol = text.find('\n');
  if (eol == std::string_view::npos) throw ValidationError("graph file: missing header line");
  json header;
  try {
    header = json::parse(text.substr(0, eol));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("graph file: malformed header: ") + e.what());
  }
  int n_nodes = 0, k = 0, snapshot = 0;
  std::size_t n_edges = 0;
  std::vector<int> degenerate;
  try {
    if (header.at("format").get<std::string>() != kGraphFormat) throw ValidationError("graph file: wrong format tag");
    if (header.at("version").get<int>() != kGraphVersion)
      throw ValidationError("graph file: unsupported version " + header.at("version").dump());
    n_nodes = header.at("n_nodes").get<int>();
    k = header.at("k").get<int>();
    snapshot = header.at("snapshot").get<int>();
    n_edges = header.at("n_edges").get<std::size_t>();
    degenerate = header.at("degenerate").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("graph file: malformed header: ") + e.what());
  }
  if (n_nodes < 0) throw ValidationError("graph file: negative node count");

  std::vector<GraphEdge> edges;
  edges.reserve(n_edges);
  std::string_view rest = text.substr(eol + 1);
  while (!rest.empty()) {
    auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (line.empty()) continue;
    std::string_view tok[3];
    std::size_t pos = 0;
    for (int t = 0; t < 3; ++t) {
      auto sp = line.find(' ', pos);
      if (t < 2 && sp == std::string_view::npos) throw ValidationError("graph file: malformed edge line");
      tok[t] = line.substr(pos, t < 2 ? sp - pos : std::string_view::npos);
      pos = sp + 1;
    }
    GraphEdge e{parse_int(tok[0]), parse_int(tok[1]), parse_double(tok[2])};
    if (e.i >= e.j) throw ValidationError("graph file: edge must satisfy i < j");
    if (!edges.empty()) {
      const auto& p = edges.back();
      if (std::tie(p.i, p.j) >= std::tie(e.i, e.j)) throw ValidationError("graph file: edges not sorted");
    }
    edges.push_back(e);
  }
  if (edges.size() != n_edges) throw ValidationError("graph file: edge count does not match header");

  SignedGraph g = SignedGraph::from_edges(n_nodes, edges);
  g.k_per_node = k;
  g.snapshot = snapshot;
  if (!degenerate.empty()) {
    g.degenerate.assign(n_nodes, false);
    for (int i : degenerate) {
      if (i < 0 || i >= n_nodes) throw ValidationError("graph file: degenerate node out of range");
      g.degenerate[i] = true;
    }
  }
  validate(g);
  return g;
}

void write_graph(const std::filesystem::path& path, const SignedGraph& g) { write_file(path, encode_graph(g)); }

SignedGraph read_graph(const std::filesystem::path& path) { return decode_graph(read_file(path)); }

}  // namespace resjac
