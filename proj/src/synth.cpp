#include "resjac/synth.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace resjac {

std::string to_string(StackKind kind) {
  switch (kind) {
    case StackKind::init_like: return "init_like";
    case StackKind::trained_like: return "trained_like";
    case StackKind::planted_funnel: return "planted_funnel";
    case StackKind::custom: return "custom";
  }
  return "?";
}

StackKind parse_stack_kind(const std::string& s) {
  if (s == "init_like") return StackKind::init_like;
  if (s == "trained_like") return StackKind::trained_like;
  if (s == "planted_funnel") return StackKind::planted_funnel;
  if (s == "custom") return StackKind::custom;
  throw ValidationError("unknown stack profile '" + s + "'");
}

void validate(const StackProfile& p) {
  if (p.d < 1 || p.L < 1) throw ValidationError("stack profile: d and L must be >= 1");
  if (!p.nonnormality_gradient.empty()) {
    if (p.nonnormality_gradient.size() != static_cast<std::size_t>(p.L))
      throw ValidationError("stack profile: gradient length must equal L");
    for (double g : p.nonnormality_gradient)
      if (!(g >= 0 && g <= 1)) throw ValidationError("stack profile: gradient entries must lie in [0, 1]");
  }
  if (p.funnel_rank && (*p.funnel_rank < 1 || *p.funnel_rank > p.d))
    throw ValidationError("stack profile: funnel_rank must lie in [1, d]");
  if (p.kind == StackKind::planted_funnel && !p.funnel_rank)
    throw ValidationError("stack profile: planted_funnel requires funnel_rank");
  if (!std::isfinite(p.skip_scale) || !std::isfinite(p.epsilon) || !std::isfinite(p.nilpotent_scale))
    throw ValidationError("stack profile: non-finite parameter");
}

Matrix haar_orthogonal(int d, Rng& rng) {
  Matrix z = gaussian_matrix(d, d, rng);
  Eigen::HouseholderQR<Matrix> qr(z);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  for (int j = 0; j < d; ++j)
    if (qr.matrixQR()(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

namespace {

double spectral_norm(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

Matrix scaled_to(Matrix m, double norm) {
  const double s = spectral_norm(m);
  if (s > 0) m *= norm / s;
  return m;
}

Matrix skew(int d, Rng& rng) {
  Matrix g = gaussian_matrix(d, d, rng);
  return scaled_to(g - g.transpose(), 0.5);
}

Matrix symmetric(int d, Rng& rng) {
  Matrix g = gaussian_matrix(d, d, rng);
  return scaled_to(g + g.transpose(), 0.5);
}

Matrix strict_upper(int d, Rng& rng) {
  Matrix g = gaussian_matrix(d, d, rng);
  Matrix u = Matrix::Zero(d, d);
  u.triangularView<Eigen::StrictlyUpper>() = g.triangularView<Eigen::StrictlyUpper>();
  return scaled_to(u, 1.0);
}

Matrix projector(int d, int r, Rng& rng) {
  Matrix basis = haar_orthogonal(d, rng).leftCols(r);
  return basis * basis.transpose();
}

enum SeedStream : std::uint64_t { kShared = 0, kLayer = 1 };

}  // namespace

JacobianSet gen_stack(const StackProfile& p) {
  validate(p);
  const int d = p.d, L = p.L;
  const auto kind = static_cast<std::uint64_t>(p.kind);
  std::vector<double> g = p.nonnormality_gradient;
  if (g.empty()) {
    g.resize(L);
    for (int l = 0; l < L; ++l) g[l] = L == 1 ? 0.0 : static_cast<double>(l) / (L - 1);
  }

  Rng shared(derive_seed(p.seed, {kind, kShared}));
  Matrix basis, pi;
  if (p.kind == StackKind::trained_like) basis = haar_orthogonal(d, shared);
  if (p.funnel_rank && (p.kind == StackKind::trained_like || p.kind == StackKind::planted_funnel))
    pi = projector(d, *p.funnel_rank, shared);

  std::vector<Matrix> layers(L);
  parallel_for(static_cast<std::size_t>(L), [&](std::size_t l) {
    Rng rng(derive_seed(p.seed, {kind, kLayer, l}));
    Matrix r;
    switch (p.kind) {
      case StackKind::init_like:
        r = p.epsilon * gaussian_matrix(d, d, rng) / std::sqrt(static_cast<double>(d));
        break;
      case StackKind::custom:
        r = p.custom_scale * gaussian_matrix(d, d, rng) / std::sqrt(static_cast<double>(d));
        break;
      case StackKind::trained_like: {
        const Matrix a = skew(d, rng);
        const Matrix s = symmetric(d, rng);
        const Matrix u = strict_upper(d, rng);
        r = (1 - g[l]) * a + g[l] * s + p.nilpotent_scale * (1 - g[l]) * basis * u * basis.transpose();
        if (pi.size()) r = pi * r;
        break;
      }
      case StackKind::planted_funnel:
        r = pi * (p.funnel_gain * Matrix::Identity(d, d) + skew(d, rng));
        break;
    }
    layers[l] = p.skip_scale * Matrix::Identity(d, d) + r;
  });

  JacobianSet set = JacobianSet::from_means(std::move(layers), "synthetic-" + to_string(p.kind),
                                            "seed-" + std::to_string(p.seed));
  return set;
}

PlantedActivations gen_planted_activations(const PlantedActivationSpec& s) {
  if (s.n_samples < 2 || s.d < 1 || s.communities < 1 || s.communities > s.d || s.n_snapshots < 1)
    throw ValidationError("planted activations: invalid sizes");
  if (!(std::abs(s.intra_corr) <= 1) || !(s.intra_corr >= 0))
    throw ValidationError("planted activations: intra_corr must lie in [0, 1]");
  if (!std::isfinite(s.inter_corr)) throw ValidationError("planted activations: non-finite inter_corr");
  const int B = s.communities;

  // Block-factor correlation; its square root colours the factor draws.
  Matrix phi = Matrix::Identity(B, B);
  if (s.intra_corr > 0) {
    for (int a = 0; a < B; ++a)
      for (int b = 0; b < B; ++b)
        if (a != b) phi(a, b) = s.inter_corr / s.intra_corr;
  } else if (s.inter_corr != 0) {
    throw ValidationError("planted activations: covariance is not positive semi-definite");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(phi);
  if (eig.eigenvalues().minCoeff() < -1e-10)
    throw ValidationError("planted activations: covariance is not positive semi-definite");
  const Matrix root =
      eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();

  PlantedActivations out;
  out.membership.resize(s.d);
  for (int i = 0; i < s.d; ++i) out.membership[i] = static_cast<int>(static_cast<long long>(i) * B / s.d);

  Matrix loading = Matrix::Zero(s.d, B);
  const double amp = std::sqrt(s.intra_corr);
  for (int i = 0; i < s.d; ++i) loading(i, out.membership[i]) = amp;
  for (int i : s.bridge_nodes) {
    if (i < 0 || i >= s.d) throw ValidationError("planted activations: bridge node out of range");
    if (B < 2) throw ValidationError("planted activations: bridges need at least 2 communities");
    const int a = out.membership[i], b = (a + 1) % B;
    const double norm = std::sqrt(2.0 + 2.0 * phi(a, b));
    loading.row(i).setZero();
    if (norm > 0) {
      loading(i, a) = amp / norm;
      loading(i, b) = amp / norm;
    }
  }
  const double noise = std::sqrt(1.0 - s.intra_corr);

  std::vector<Matrix> snapshots(s.n_snapshots);
  for (int t = 0; t < s.n_snapshots; ++t) {
    Rng rng(derive_seed(s.seed, {static_cast<std::uint64_t>(t)}));
    Matrix z = gaussian_matrix(s.n_samples, B, rng) * root;
    Matrix e = gaussian_matrix(s.n_samples, s.d, rng);
    snapshots[t] = z * loading.transpose() + noise * e;
  }
  std::vector<std::string> labels;
  for (int t = 0; t < s.n_snapshots; ++t) labels.push_back("snapshot_" + std::to_string(t));
  out.tensor = ActivationTensor::from_snapshots(snapshots, labels, "synthetic-planted", "seed-" + std::to_string(s.seed));
  return out;
}

PlantedGraph gen_signed_sbm(int n, int blocks, double p_in, double p_out, std::uint64_t seed) {
  if (n < 2 || blocks < 1 || blocks > n) throw ValidationError("signed SBM: invalid sizes");
  if (!(p_in >= 0 && p_in <= 1 && p_out >= 0 && p_out <= 1)) throw ValidationError("signed SBM: bad probabilities");
  PlantedGraph out;
  out.membership.resize(n);
  for (int i = 0; i < n; ++i) out.membership[i] = static_cast<int>(static_cast<long long>(i) * blocks / n);
  Rng rng(seed);
  std::vector<GraphEdge> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const bool same = out.membership[i] == out.membership[j];
      if (rng.uniform() < (same ? p_in : p_out)) edges.push_back({i, j, same ? 1.0 : -1.0});
    }
  out.graph = SignedGraph::from_edges(n, edges);
  out.graph.degenerate.assign(n, false);
  for (int i = 0; i < n; ++i)
    if (out.graph.degree(i) == 0) out.graph.degenerate[i] = true;
  return out;
}

SignedGraph gen_random_signed_graph(int n, double density, std::uint64_t seed) {
  if (n < 1) throw ValidationError("random graph: n must be >= 1");
  Rng rng(seed);
  std::vector<GraphEdge> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.uniform() < density) edges.push_back({i, j, 2.0 * rng.uniform() - 1.0});
  SignedGraph g = SignedGraph::from_edges(n, edges);
  g.degenerate.assign(n, false);
  for (int i = 0; i < n; ++i)
    if (g.degree(i) == 0) g.degenerate[i] = true;
  return g;
}

DenseSpectrum oracle_dense_cumulative(const JacobianSet& set, int injection_layer) {
  if (set.d() > 512) throw ValidationError("dense oracle: d must be <= 512");
  if (injection_layer < 0 || injection_layer >= set.L()) throw ValidationError("dense oracle: layer out of range");
  DenseSpectrum out;
  Matrix p = Matrix::Identity(set.d(), set.d());
  for (int l = set.L() - 1; l >= injection_layer; --l) {
    p = p * set.mean_jacobians[l];
    const double f = p.norm();
    if (!(f > 0) || !std::isfinite(f)) throw NumericalError("dense oracle: product vanished or overflowed");
    p /= f;
    out.log10_scale += std::log10(f);
  }
  Eigen::JacobiSVD<Matrix> svd(p);
  out.sigma = svd.singularValues();
  const double top = out.sigma(0);
  out.sigma /= top;
  out.log10_scale += std::log10(top);
  return out;
}

ExhaustiveOptimum oracle_exhaustive_partitions(const SignedGraph& g, double gamma_pos, double gamma_neg) {
  const int n = g.n_nodes;
  if (n > 10) throw ValidationError("exhaustive partitions: n must be <= 10");
  ExhaustiveOptimum best;
  if (n == 0) return best;

  std::vector<std::vector<double>> pos(n, std::vector<double>(n, 0.0)), neg = pos;
  for (int i = 0; i < n; ++i)
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const double w = g.weight[e];
      (w > 0 ? pos : neg)[i][g.col[e]] = std::abs(w);
    }
  auto score = [&](const std::vector<int>& a) {
    double wp = 0.0, wn = 0.0;
    std::vector<double> count(n, 0.0);
    for (int i = 0; i < n; ++i) {
      count[a[i]] += 1.0;
      for (int j = i + 1; j < n; ++j)
        if (a[i] == a[j]) {
          wp += pos[i][j];
          wn += neg[i][j];
        }
    }
    double pairs = 0.0;
    for (double c : count) pairs += c * (c - 1.0) / 2.0;
    return (wp - gamma_pos * pairs) - (wn - gamma_neg * pairs);
  };

  // Restricted growth strings: a[0] = 0, a[i] ≤ 1 + max(a[0..i−1]).
  std::vector<int> a(n, 0), prefix_max(n, 0);
  best.objective = -std::numeric_limits<double>::infinity();
  for (;;) {
    const double q = score(a);
    ++best.partitions_checked;
    if (q > best.objective) {
      best.objective = q;
      best.labels = a;
    }
    int i = n - 1;
    while (i > 0 && a[i] == prefix_max[i - 1] + 1) --i;
    if (i == 0) break;
    ++a[i];
    prefix_max[i] = std::max(prefix_max[i - 1], a[i]);
    for (int t = i + 1; t < n; ++t) {
      a[t] = 0;
      prefix_max[t] = prefix_max[t - 1];
    }
  }
  return best;
}

}  // namespace resjac
