#include "resjac/community.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>

namespace resjac {

int Partition::n_communities() const {
  int m = -1;
  for (int l : labels) m = std::max(m, l);
  return m + 1;
}

std::vector<int> Partition::sizes() const {
  std::vector<int> out(n_communities(), 0);
  for (int l : labels) ++out[l];
  return out;
}

int Partition::non_degenerate_count() const {
  int n = 0;
  for (int s : sizes())
    if (s >= 2) ++n;
  return n;
}

namespace {

std::vector<int> contiguous(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw ValidationError("partition labels must be non-negative");
    auto [it, inserted] = remap.try_emplace(labels[i], static_cast<int>(remap.size()));
    out[i] = it->second;
  }
  return out;
}

}  // namespace

Partition Partition::from_labels(const std::vector<int>& labels) {
  Partition p;
  p.labels = contiguous(labels);
  return p;
}

double cpm_objective(const SignedGraph& g, const std::vector<int>& labels, double gamma_pos, double gamma_neg) {
  if (labels.size() != static_cast<std::size_t>(g.n_nodes)) throw ValidationError("partition does not cover graph");
  double w_pos = 0.0, w_neg = 0.0;
  for (int i = 0; i < g.n_nodes; ++i)
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const int j = g.col[e];
      if (j <= i || labels[i] != labels[j]) continue;
      if (g.weight[e] > 0)
        w_pos += g.weight[e];
      else
        w_neg -= g.weight[e];
    }
  std::map<int, double> sizes;
  for (int l : labels) sizes[l] += 1.0;
  double pairs = 0.0;
  for (const auto& [l, n] : sizes) pairs += n * (n - 1) / 2;
  return (w_pos - gamma_pos * pairs) - (w_neg - gamma_neg * pairs);
}

namespace {

// Both CPM layers collapse into one graph with signed weights and a single
// resolution γ⁺ − γ⁻.
struct WorkGraph {
  std::vector<std::vector<std::pair<int, double>>> adj;  // no self-loops
  std::vector<double> size;

  int n() const { return static_cast<int>(size.size()); }
};

constexpr double kMoveTolerance = 1e-12;

WorkGraph from_signed(const SignedGraph& g) {
  WorkGraph w;
  w.adj.resize(g.n_nodes);
  w.size.assign(g.n_nodes, 1.0);
  for (int i = 0; i < g.n_nodes; ++i)
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) w.adj[i].push_back({g.col[e], g.weight[e]});
  return w;
}

// Sparse accumulator of weights from one node into communities.
class Accumulator {
 public:
  explicit Accumulator(int n) : w_(n, 0.0), seen_(n, false) {}
  void add(int c, double w) {
    if (!seen_[c]) {
      seen_[c] = true;
      touched_.push_back(c);
    }
    w_[c] += w;
  }
  double at(int c) const { return w_[c]; }
  const std::vector<int>& touched() const { return touched_; }
  void clear() {
    for (int c : touched_) {
      w_[c] = 0.0;
      seen_[c] = false;
    }
    touched_.clear();
  }

 private:
  std::vector<double> w_;
  std::vector<bool> seen_;
  std::vector<int> touched_;
};

int count_distinct(const std::vector<int>& labels) {
  std::vector<int> sorted(labels);
  std::sort(sorted.begin(), sorted.end());
  return static_cast<int>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

// Queue-based local moving. Community ids live in [0, n).
void move_nodes(const WorkGraph& g, std::vector<int>& comm, double gamma, Rng& rng) {
  const int n = g.n();
  std::vector<double> csize(n, 0.0);
  std::vector<int> members(n, 0);
  for (int v = 0; v < n; ++v) {
    csize[comm[v]] += g.size[v];
    ++members[comm[v]];
  }
  std::vector<int> empty;
  for (int c = n - 1; c >= 0; --c)
    if (members[c] == 0) empty.push_back(c);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  std::deque<int> queue(order.begin(), order.end());
  std::vector<bool> queued(n, true);
  Accumulator acc(n);

  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    queued[v] = false;
    const int a = comm[v];
    const double nv = g.size[v];
    for (const auto& [u, w] : g.adj[v]) acc.add(comm[u], w);
    const double w_own = acc.at(a);

    int best = a;
    double best_gain = kMoveTolerance;
    for (int c : acc.touched()) {
      if (c == a) continue;
      const double gain = acc.at(c) - w_own - gamma * nv * (csize[c] - csize[a] + nv);
      if (gain > best_gain) {
        best_gain = gain;
        best = c;
      }
    }
    if (members[a] > 1 && !empty.empty()) {
      const double gain = -w_own - gamma * nv * (nv - csize[a]);
      if (gain > best_gain) {
        best_gain = gain;
        best = empty.back();
      }
    }
    acc.clear();
    if (best == a) continue;

    if (!empty.empty() && best == empty.back()) empty.pop_back();
    csize[a] -= nv;
    --members[a];
    if (members[a] == 0) empty.push_back(a);
    csize[best] += nv;
    ++members[best];
    comm[v] = best;
    for (const auto& [u, w] : g.adj[v])
      if (!queued[u] && comm[u] != best) {
        queued[u] = true;
        queue.push_back(u);
      }
  }
}

// Randomized merge of singletons inside each community of comm.
std::vector<int> refine(const WorkGraph& g, const std::vector<int>& comm, double gamma, double theta, Rng& rng) {
  const int n = g.n();
  std::vector<double> comm_size(n, 0.0);
  for (int v = 0; v < n; ++v) comm_size[comm[v]] += g.size[v];

  std::vector<int> ref(n);
  std::iota(ref.begin(), ref.end(), 0);
  std::vector<double> rsize(g.size);
  std::vector<int> rcount(n, 1);
  std::vector<double> ext(n, 0.0);  // weight from refined community to the rest of its community
  for (int v = 0; v < n; ++v)
    for (const auto& [u, w] : g.adj[v])
      if (comm[u] == comm[v]) ext[v] += w;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  Accumulator acc(n);
  std::vector<int> cand;
  std::vector<double> gains;

  for (int v : order) {
    if (rcount[ref[v]] != 1) continue;
    const double nv = g.size[v];
    const double nc = comm_size[comm[v]];
    if (ext[v] < gamma * nv * (nc - nv)) continue;

    for (const auto& [u, w] : g.adj[v])
      if (comm[u] == comm[v]) acc.add(ref[u], w);
    cand.assign(1, ref[v]);
    gains.assign(1, 0.0);
    for (int t : acc.touched()) {
      if (t == ref[v]) continue;
      if (ext[t] < gamma * rsize[t] * (nc - rsize[t])) continue;
      const double gain = acc.at(t) - gamma * nv * rsize[t];
      if (gain >= 0) {
        cand.push_back(t);
        gains.push_back(gain);
      }
    }
    if (cand.size() > 1) {
      const double top = *std::max_element(gains.begin(), gains.end());
      std::vector<double> cum(cand.size());
      double total = 0.0;
      for (std::size_t i = 0; i < cand.size(); ++i) {
        total += std::exp((gains[i] - top) / theta);
        cum[i] = total;
      }
      const double r = rng.uniform() * total;
      std::size_t pick = std::upper_bound(cum.begin(), cum.end(), r) - cum.begin();
      pick = std::min(pick, cand.size() - 1);
      const int t = cand[pick];
      if (t != ref[v]) {
        const double w_vt = acc.at(t);
        ext[t] += ext[v] - 2.0 * w_vt;
        rsize[t] += nv;
        ++rcount[t];
        rcount[ref[v]] = 0;
        ref[v] = t;
      }
    }
    acc.clear();
  }
  return ref;
}

struct Aggregated {
  WorkGraph graph;
  std::vector<int> node_map;  // old node -> new node
};

Aggregated aggregate(const WorkGraph& g, const std::vector<int>& groups) {
  Aggregated out;
  out.node_map = contiguous(groups);
  const int m = count_distinct(out.node_map);
  out.graph.size.assign(m, 0.0);
  out.graph.adj.resize(m);
  std::vector<std::map<int, double>> acc(m);
  for (int v = 0; v < g.n(); ++v) {
    const int a = out.node_map[v];
    out.graph.size[a] += g.size[v];
    for (const auto& [u, w] : g.adj[v]) {
      const int b = out.node_map[u];
      if (a != b) acc[a][b] += w;
    }
  }
  for (int a = 0; a < m; ++a) out.graph.adj[a].assign(acc[a].begin(), acc[a].end());
  return out;
}

std::vector<int> leiden_pass(const WorkGraph& base, std::vector<int> labels, double gamma, double theta, Rng& rng) {
  WorkGraph g = base;
  std::vector<int> comm = contiguous(labels);
  std::vector<int> node_of(base.n());
  std::iota(node_of.begin(), node_of.end(), 0);

  for (;;) {
    move_nodes(g, comm, gamma, rng);
    if (count_distinct(comm) == g.n()) break;
    std::vector<int> groups = refine(g, comm, gamma, theta, rng);
    if (count_distinct(groups) == g.n()) groups = comm;
    Aggregated agg = aggregate(g, groups);
    std::vector<int> next_comm(agg.graph.n());
    for (int v = 0; v < g.n(); ++v) next_comm[agg.node_map[v]] = comm[v];
    for (int& x : node_of) x = agg.node_map[x];
    g = std::move(agg.graph);
    comm = contiguous(next_comm);
  }
  std::vector<int> out(base.n());
  for (int i = 0; i < base.n(); ++i) out[i] = comm[node_of[i]];
  return contiguous(out);
}

double work_objective(const WorkGraph& g, const std::vector<int>& labels, double gamma) {
  double w = 0.0;
  for (int v = 0; v < g.n(); ++v)
    for (const auto& [u, x] : g.adj[v])
      if (u > v && labels[u] == labels[v]) w += x;
  std::vector<double> size(g.n(), 0.0);
  for (int v = 0; v < g.n(); ++v) size[labels[v]] += g.size[v];
  double pairs = 0.0;
  for (double s : size) pairs += s * (s - 1) / 2;
  return w - gamma * pairs;
}

std::vector<int> converge(const WorkGraph& g, std::vector<int> labels, const LeidenOptions& o, double gamma, Rng& rng) {
  for (int it = 0; it < o.max_iterations; ++it) {
    std::vector<int> next = leiden_pass(g, labels, gamma, o.randomness, rng);
    const bool same = next == labels;
    labels = std::move(next);
    if (same) break;
  }
  move_nodes(g, labels, gamma, rng);
  return contiguous(labels);
}

// Restart 0 starts from singletons, later restarts from a random partition into
// about √n groups. After convergence, max_iterations perturbation rounds
// alternately split a random community in two or merge two random communities,
// re-converge, and keep the result if the objective improved.
std::vector<int> leiden_restart(const WorkGraph& g, const LeidenOptions& o, Rng& rng, std::size_t restart) {
  const double gamma = o.gamma_pos - o.gamma_neg;
  const int n = g.n();
  std::vector<int> labels(n);
  std::iota(labels.begin(), labels.end(), 0);
  if (restart > 0) {
    const int groups = std::max(2, static_cast<int>(std::lround(std::sqrt(static_cast<double>(n)))));
    for (int& l : labels) l = static_cast<int>(rng.below(groups));
    labels = contiguous(labels);
  }
  labels = converge(g, labels, o, gamma, rng);
  double best = work_objective(g, labels, gamma);
  for (int k = 0; k < o.max_iterations; ++k) {
    std::vector<int> trial = labels;
    const int c = trial[rng.below(n)];
    const int other = trial[rng.below(n)];
    if (k % 2 == 1) {
      for (int& l : trial)
        if (l == other) l = c;
    } else {
      for (int& l : trial)
        if (l == c && rng.uniform() < 0.5) l = n;  // n is never a live id
    }
    trial = converge(g, contiguous(trial), o, gamma, rng);
    const double obj = work_objective(g, trial, gamma);
    if (obj > best + kMoveTolerance) {
      best = obj;
      labels = std::move(trial);
    }
  }
  return labels;
}

}  // namespace

Partition leiden_signed_cpm(const SignedGraph& g, const LeidenOptions& options) {
  if (options.restarts < 1) throw ValidationError("restarts must be >= 1");
  if (options.max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
  if (!(options.randomness > 0)) throw ValidationError("randomness must be > 0");
  validate(g);

  Partition best;
  best.gamma_pos = options.gamma_pos;
  best.gamma_neg = options.gamma_neg;
  if (g.n_nodes == 0) return best;

  const WorkGraph work = from_signed(g);
  std::vector<std::vector<int>> labels(options.restarts);
  std::vector<double> objective(options.restarts);
  parallel_for(static_cast<std::size_t>(options.restarts), [&](std::size_t r) {
    Rng rng(derive_seed(options.seed, {r}));
    labels[r] = leiden_restart(work, options, rng, r);
    objective[r] = cpm_objective(g, labels[r], options.gamma_pos, options.gamma_neg);
  });
  std::size_t pick = 0;
  for (std::size_t r = 1; r < labels.size(); ++r)
    if (objective[r] > objective[pick]) pick = r;

  best.labels = std::move(labels[pick]);
  best.objective = objective[pick];
  return best;
}

bool is_single_move_optimal(const SignedGraph& g, const Partition& p, double tolerance) {
  if (p.labels.size() != static_cast<std::size_t>(g.n_nodes)) throw ValidationError("partition does not cover graph");
  const double gamma = p.gamma_pos - p.gamma_neg;
  const std::vector<int> sizes = p.sizes();
  const int m = static_cast<int>(sizes.size());
  for (int v = 0; v < g.n_nodes; ++v) {
    std::vector<double> w(m, 0.0);
    for (std::size_t e = g.row_ptr[v]; e < g.row_ptr[v + 1]; ++e) w[p.labels[g.col[e]]] += g.weight[e];
    const int a = p.labels[v];
    for (int c = 0; c < m; ++c) {
      if (c == a) continue;
      const double gain = w[c] - w[a] - gamma * (sizes[c] - sizes[a] + 1);
      if (gain > tolerance) return false;
    }
    if (sizes[a] > 1 && -w[a] - gamma * (1 - sizes[a]) > tolerance) return false;
  }
  return true;
}

std::string to_string(NmiNorm norm) {
  switch (norm) {
    case NmiNorm::arithmetic: return "arithmetic";
    case NmiNorm::max: return "max";
    case NmiNorm::sqrt: return "sqrt";
  }
  return "?";
}

NmiNorm parse_nmi_norm(const std::string& s) {
  if (s == "arithmetic") return NmiNorm::arithmetic;
  if (s == "max") return NmiNorm::max;
  if (s == "sqrt") return NmiNorm::sqrt;
  throw ValidationError("unknown NMI normalization '" + s + "' (expected arithmetic, max or sqrt)");
}

double nmi(const std::vector<int>& a, const std::vector<int>& b, NmiNorm norm) {
  if (a.size() != b.size()) throw ValidationError("nmi: partitions have different lengths");
  if (a.empty()) throw ValidationError("nmi: empty partitions");
  const std::vector<int> x = contiguous(a), y = contiguous(b);
  const double n = static_cast<double>(x.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> px, py;
  for (std::size_t i = 0; i < x.size(); ++i) {
    joint[{x[i], y[i]}] += 1.0;
    px[x[i]] += 1.0;
    py[y[i]] += 1.0;
  }
  auto entropy = [n](const std::map<int, double>& counts) {
    double h = 0.0;
    for (const auto& [k, c] : counts) h -= (c / n) * std::log(c / n);
    return h;
  };
  const double hx = entropy(px), hy = entropy(py);
  if (px.size() == 1 && py.size() == 1) return 1.0;
  double mi = 0.0;
  for (const auto& [key, c] : joint) mi += (c / n) * std::log(c * n / (px[key.first] * py[key.second]));
  double denom = 0.0;
  switch (norm) {
    case NmiNorm::arithmetic: denom = 0.5 * (hx + hy); break;
    case NmiNorm::max: denom = std::max(hx, hy); break;
    case NmiNorm::sqrt: denom = std::sqrt(hx * hy); break;
  }
  if (!(denom > 0)) return 0.0;
  return std::clamp(mi / denom, 0.0, 1.0);
}

double nmi(const Partition& a, const Partition& b, NmiNorm norm) { return nmi(a.labels, b.labels, norm); }

Matrix nmi_matrix(const std::vector<Partition>& partitions, NmiNorm norm) {
  const int s = static_cast<int>(partitions.size());
  if (s < 2) throw ValidationError("nmi_matrix: need at least 2 partitions");
  Matrix out = Matrix::Identity(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = i + 1; j < s; ++j) out(i, j) = out(j, i) = nmi(partitions[i], partitions[j], norm);
  return out;
}

std::size_t ParticipationVector::defined_count() const {
  return static_cast<std::size_t>(std::count_if(p.begin(), p.end(), [](const auto& v) { return v.has_value(); }));
}

ParticipationVector participation(const SignedGraph& g, const Partition& partition) {
  if (partition.labels.size() != static_cast<std::size_t>(g.n_nodes))
    throw ValidationError("participation: partition does not cover graph");
  ParticipationVector out;
  out.p.resize(g.n_nodes);
  std::map<int, double> k_c;
  for (int i = 0; i < g.n_nodes; ++i) {
    k_c.clear();
    double k = 0.0;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const double w = std::abs(g.weight[e]);
      k_c[partition.labels[g.col[e]]] += w;
      k += w;
    }
    if (!(k > 0)) continue;
    double sum = 0.0;
    for (const auto& [c, kc] : k_c) sum += kc * kc;
    out.p[i] = std::max(0.0, 1.0 - sum / (k * k));
  }
  return out;
}

}  // namespace resjac
