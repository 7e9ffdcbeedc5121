#include "resjac/stats.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace resjac {

std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  for (double v : x)
    if (std::isnan(v)) throw ValidationError("average_ranks: NaN input");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace {

// NaN when either side is constant.
double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman: length mismatch");
  if (x.size() < 3) throw ValidationError("spearman: need at least 3 observations");
}

}  // namespace

double spearman_or_nan(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const double rho = spearman_or_nan(x, y);
  if (std::isnan(rho)) throw ValidationError("spearman: undefined for constant input");
  return rho;
}

namespace {

constexpr int kPermChunk = 256;

bool at_least_as_extreme(double s, double obs, Sidedness side) {
  const double tol = 1e-12 * std::max(1.0, std::abs(obs));
  switch (side) {
    case Sidedness::two_sided: return std::abs(s) >= std::abs(obs) - tol;
    case Sidedness::greater: return s >= obs - tol;
    case Sidedness::less: return s <= obs + tol;
  }
  return false;
}

}  // namespace

PermutationResult perm_test(const PermutedStatistic& statistic, int n_items, int n_perm, std::uint64_t seed,
                            Sidedness sidedness) {
  if (n_perm < 100) throw ValidationError("perm_test: n_perm must be >= 100");
  if (n_items < 2) throw ValidationError("perm_test: need at least 2 items");
  std::vector<int> identity(n_items);
  std::iota(identity.begin(), identity.end(), 0);

  PermutationResult out;
  out.n_permutations = n_perm;
  out.observed = statistic(identity);
  if (std::isnan(out.observed)) {
    out.degenerate = true;
    out.p_value = 1.0;
    return out;
  }

  const int n_chunks = (n_perm + kPermChunk - 1) / kPermChunk;
  std::vector<long long> hits(n_chunks, 0);
  std::vector<char> varied(n_chunks, 0);
  parallel_for(static_cast<std::size_t>(n_chunks), [&](std::size_t c) {
    Rng rng(derive_seed(seed, {c}));
    std::vector<int> perm(n_items);
    const int count = std::min(kPermChunk, n_perm - static_cast<int>(c) * kPermChunk);
    const double tol = 1e-12 * std::max(1.0, std::abs(out.observed));
    for (int t = 0; t < count; ++t) {
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm.begin(), perm.end());
      const double s = statistic(perm);
      if (std::isnan(s)) continue;
      if (std::abs(s - out.observed) > tol) varied[c] = 1;
      if (at_least_as_extreme(s, out.observed, sidedness)) ++hits[c];
    }
  });
  const long long total = std::accumulate(hits.begin(), hits.end(), 0LL);
  out.degenerate = std::none_of(varied.begin(), varied.end(), [](char v) { return v != 0; });
  out.p_value = out.degenerate ? 1.0 : static_cast<double>(1 + total) / static_cast<double>(1 + n_perm);
  return out;
}

FdrResult bh_fdr(std::span<const double> p_values, double alpha) {
  const std::size_t m = p_values.size();
  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("bh_fdr: p-values must lie in [0, 1]");
  FdrResult out;
  out.q_values.assign(m, 1.0);
  out.significant.assign(m, false);
  if (m == 0) return out;

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });

  std::size_t cutoff = 0;  // number of rejections
  for (std::size_t r = 1; r <= m; ++r)
    if (p_values[order[r - 1]] <= static_cast<double>(r) * alpha / static_cast<double>(m)) cutoff = r;

  double running = 1.0;
  for (std::size_t r = m; r >= 1; --r) {
    const double q = p_values[order[r - 1]] * static_cast<double>(m) / static_cast<double>(r);
    running = std::min(running, q);
    out.q_values[order[r - 1]] = running;
    out.significant[order[r - 1]] = r <= cutoff;
  }
  return out;
}

namespace {

std::vector<int> community_sizes(const std::vector<int>& labels) {
  int m = 0;
  for (int l : labels) {
    if (l < 0) throw ValidationError("community labels must be non-negative");
    m = std::max(m, l + 1);
  }
  std::vector<int> sizes(m, 0);
  for (int l : labels) ++sizes[l];
  for (int s : sizes)
    if (s == 0) throw ValidationError("community labels must be contiguous");
  return sizes;
}

// Sum of squares over ascending magnitudes, so that two matrices holding the
// same entries in any arrangement give the same bits.
double ordered_square_sum(const double* data, std::size_t n) {
  std::vector<double> sq(data, data + n);
  for (double& v : sq) v *= v;
  std::sort(sq.begin(), sq.end());
  long double total = 0.0L;
  for (double v : sq) total += v;
  return static_cast<double>(total);
}

Matrix block_operator(const Matrix& j, const std::vector<int>& labels_in, const std::vector<int>& labels_out,
                      const std::vector<int>& size_in, const std::vector<int>& size_out) {
  Matrix k = Matrix::Zero(static_cast<Eigen::Index>(size_out.size()), static_cast<Eigen::Index>(size_in.size()));
  for (Eigen::Index c = 0; c < j.cols(); ++c) {
    const int b = labels_in[c];
    for (Eigen::Index r = 0; r < j.rows(); ++r) k(labels_out[r], b) += j(r, c);
  }
  for (Eigen::Index a = 0; a < k.rows(); ++a)
    for (Eigen::Index b = 0; b < k.cols(); ++b)
      k(a, b) /= std::sqrt(static_cast<double>(size_out[a]) * static_cast<double>(size_in[b]));
  return k;
}

double captured_fraction(const Matrix& k, double j_norm2) {
  const double v = ordered_square_sum(k.data(), static_cast<std::size_t>(k.size())) / j_norm2;
  if (!(v <= 1.0 + 1e-9) || v < 0) throw NumericalError("variance_captured outside [0, 1]: " + format_double(v));
  return std::min(v, 1.0);
}

void check_cover(const Matrix& j, const std::vector<int>& labels_in, const std::vector<int>& labels_out) {
  if (labels_in.size() != static_cast<std::size_t>(j.cols()) || labels_out.size() != static_cast<std::size_t>(j.rows()))
    throw ValidationError("partition does not cover the Jacobian");
}

double j_norm2_checked(const Matrix& j) {
  const double n2 = ordered_square_sum(j.data(), static_cast<std::size_t>(j.size()));
  if (!(n2 > 0)) throw ValidationError("mesoscale operator undefined for a zero Jacobian");
  return n2;
}

}  // namespace

Matrix community_basis(const std::vector<int>& labels) {
  const auto sizes = community_sizes(labels);
  Matrix c = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(sizes.size()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    c(static_cast<Eigen::Index>(i), labels[i]) = 1.0 / std::sqrt(static_cast<double>(sizes[labels[i]]));
  return c;
}

MesoscaleOperator mesoscale_operator(const Matrix& j, const std::vector<int>& labels_in,
                                     const std::vector<int>& labels_out) {
  check_cover(j, labels_in, labels_out);
  MesoscaleOperator out;
  out.k = block_operator(j, labels_in, labels_out, community_sizes(labels_in), community_sizes(labels_out));
  out.variance_captured = captured_fraction(out.k, j_norm2_checked(j));
  return out;
}

double cohens_d(std::span<const double> top, std::span<const double> bottom, std::span<const double> all) {
  if (top.empty() || bottom.empty() || all.size() < 2) throw ValidationError("cohens_d: groups too small");
  auto mean = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const double m = mean(all);
  double ss = 0.0;
  for (double v : all) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(all.size() - 1));
  const double diff = mean(top) - mean(bottom);
  if (sd == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  return diff / sd;
}

StatResult rate_coupling(std::span<const double> x, std::span<const double> y, int n_perm, std::uint64_t seed) {
  check_pair(x, y);
  StatResult r;
  r.n_permutations = n_perm;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double rho = pearson(rx, ry);
  if (std::isnan(rho)) {
    r.flag = "undefined";
    return r;
  }
  auto stat = [&rx, &ry](std::span<const int> perm) {
    std::vector<double> py(ry.size());
    for (std::size_t i = 0; i < perm.size(); ++i) py[i] = ry[perm[i]];
    return pearson(rx, py);
  };
  PermutationResult p = perm_test(stat, static_cast<int>(x.size()), n_perm, seed);
  r.statistic = rho;
  r.p_value = p.p_value;
  if (p.degenerate) r.flag = "degenerate";
  r.significant = p.p_value <= kAlpha;
  return r;
}

std::vector<StatResult> test1_rate_coupling(const std::vector<Partition>& layer_partitions,
                                            const std::vector<MesoscaleOperator>& operators, int n_perm,
                                            std::uint64_t seed, NmiNorm norm) {
  if (layer_partitions.size() != operators.size())
    throw ValidationError("test1: partition and operator counts differ");
  const std::size_t L = operators.size();
  if (L < 5) throw ValidationError("test1: need at least 4 adjacent layer pairs");

  std::vector<double> sigma(L), vc(L);
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::JacobiSVD<Matrix> svd(operators[l].k);
    sigma[l] = svd.singularValues()(0);
    vc[l] = operators[l].variance_captured;
  }
  std::vector<double> disruption(L - 1), abs_ds(L - 1), abs_dv(L - 1), ds(L - 1), dv(L - 1);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    disruption[l] = 1.0 - nmi(layer_partitions[l], layer_partitions[l + 1], norm);
    ds[l] = sigma[l + 1] - sigma[l];
    dv[l] = vc[l + 1] - vc[l];
    abs_ds[l] = std::abs(ds[l]);
    abs_dv[l] = std::abs(dv[l]);
  }
  const std::vector<std::pair<std::string, const std::vector<double>*>> measures = {
      {"abs_delta_sigma_max", &abs_ds},
      {"abs_delta_variance_captured", &abs_dv},
      {"signed_delta_sigma_max", &ds},
      {"signed_delta_variance_captured", &dv}};
  std::vector<StatResult> out;
  for (std::size_t m = 0; m < measures.size(); ++m) {
    StatResult r = rate_coupling(disruption, *measures[m].second, n_perm, derive_seed(seed, {m}));
    r.test = "test1";
    r.measure = measures[m].first;
    out.push_back(std::move(r));
  }
  return out;
}

StatResult test2_variance_captured(const Matrix& j, const std::vector<int>& labels_in,
                                   const std::vector<int>& labels_out, int n_null, std::uint64_t seed, int layer) {
  check_cover(j, labels_in, labels_out);
  if (n_null < 2) throw ValidationError("test2: n_null must be >= 2");
  const auto size_in = community_sizes(labels_in), size_out = community_sizes(labels_out);
  const double j2 = j_norm2_checked(j);
  const double observed = captured_fraction(block_operator(j, labels_in, labels_out, size_in, size_out), j2);
  const bool shared = labels_in == labels_out;

  std::vector<double> null(n_null);
  parallel_for(static_cast<std::size_t>(n_null), [&](std::size_t r) {
    Rng rng(derive_seed(seed, {r}));
    std::vector<int> in = labels_in;
    rng.shuffle(in.begin(), in.end());
    std::vector<int> out = in;
    if (!shared) {
      out = labels_out;
      rng.shuffle(out.begin(), out.end());
    }
    null[r] = captured_fraction(block_operator(j, in, out, size_in, size_out), j2);
  });

  StatResult r;
  r.test = "test2";
  r.measure = "variance_captured";
  r.layer = layer;
  r.n_permutations = n_null;
  const double mean = std::accumulate(null.begin(), null.end(), 0.0) / n_null;
  double ss = 0.0;
  long long above = 0;
  for (double v : null) {
    ss += (v - mean) * (v - mean);
    if (v >= observed) ++above;
  }
  const double sd = std::sqrt(ss / (n_null - 1));
  r.p_value = static_cast<double>(1 + above) / static_cast<double>(1 + n_null);
  if (!(sd > 0)) {
    r.flag = "undefined";
    return r;
  }
  r.statistic = (observed - mean) / sd;
  r.significant = *r.statistic > 1.96;
  return r;
}

StatResult test3_boundary_coupling(const Matrix& j, const ParticipationVector& participation,
                                   const BoundaryOptions& options, int layer) {
  if (participation.size() != static_cast<std::size_t>(j.cols()))
    throw ValidationError("test3: participation length does not match Jacobian width");
  if (!(options.tail_frac > 0 && options.tail_frac <= 0.5)) throw ValidationError("test3: tail_frac must be in (0, 0.5]");

  std::vector<int> defined;
  for (std::size_t i = 0; i < participation.size(); ++i)
    if (participation.p[i]) defined.push_back(static_cast<int>(i));
  if (defined.size() < 20)
    throw ValidationError("test3: need at least 20 defined participation values, got " +
                          std::to_string(defined.size()));
  std::stable_sort(defined.begin(), defined.end(),
                   [&](int a, int b) { return *participation.p[a] < *participation.p[b]; });
  const std::size_t n_tail =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(options.tail_frac * defined.size() + 1e-9)));

  std::vector<double> norms(j.cols());
  for (Eigen::Index c = 0; c < j.cols(); ++c) norms[c] = j.col(c).norm();

  // Pool holds the top tail first, then the bottom tail.
  std::vector<double> pool;
  for (std::size_t t = 0; t < n_tail; ++t) pool.push_back(norms[defined[defined.size() - n_tail + t]]);
  for (std::size_t t = 0; t < n_tail; ++t) pool.push_back(norms[defined[t]]);

  auto stat = [&](std::span<const int> perm) {
    std::vector<double> top(n_tail), bottom(n_tail);
    for (std::size_t t = 0; t < n_tail; ++t) {
      top[t] = pool[perm[t]];
      bottom[t] = pool[perm[n_tail + t]];
    }
    return cohens_d(top, bottom, norms);
  };

  StatResult r;
  r.test = "test3";
  r.measure = "cohens_d";
  r.layer = layer;
  r.n_permutations = options.n_perm;
  PermutationResult p = perm_test(stat, static_cast<int>(pool.size()), options.n_perm, options.seed);
  if (std::isnan(p.observed)) {
    r.flag = "undefined";
    return r;
  }
  r.statistic = p.observed;
  r.p_value = p.p_value;
  if (p.degenerate) r.flag = "degenerate";
  r.significant = p.p_value <= kAlpha;
  return r;
}

StatResult selfalign_vs_d(std::span<const double> self_alignment, std::span<const double> d, int n_perm,
                          std::uint64_t seed) {
  if (self_alignment.size() < 4) throw ValidationError("selfalign_vs_d: need at least 4 layers");
  StatResult r = rate_coupling(self_alignment, d, n_perm, seed);
  r.test = "selfalign";
  r.measure = "spearman_selfalign_d";
  return r;
}

void apply_fdr(std::vector<StatResult>& results, double alpha) {
  std::vector<double> p;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < results.size(); ++i)
    if (results[i].p_value) {
      p.push_back(*results[i].p_value);
      where.push_back(i);
    }
  FdrResult f = bh_fdr(p, alpha);
  for (std::size_t t = 0; t < where.size(); ++t) {
    results[where[t]].q_value = f.q_values[t];
    results[where[t]].significant = f.significant[t];
  }
}

}  // namespace resjac
