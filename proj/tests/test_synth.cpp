#include "resjac/actgraph.hpp"
#include "resjac/community.hpp"
#include "resjac/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace resjac;

namespace {

PlantedActivationSpec planted(std::uint64_t seed) {
  PlantedActivationSpec s;
  s.n_samples = 2000;
  s.d = 32;
  s.communities = 4;
  s.intra_corr = 0.6;
  s.inter_corr = -0.15;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("planted activations carry the block correlation structure") {
  const auto pa = gen_planted_activations(planted(1));
  CHECK(pa.tensor.n_samples() == 2000);
  CHECK(pa.tensor.d() == 32);
  const Matrix c = correlation_matrix(zscore(pa.tensor, 0));
  double intra = 0, inter = 0;
  int ni = 0, nx = 0;
  for (int a = 0; a < 32; ++a)
    for (int b = a + 1; b < 32; ++b) {
      if (pa.membership[a] == pa.membership[b]) {
        intra += c(a, b);
        ++ni;
      } else {
        inter += c(a, b);
        ++nx;
      }
    }
  CHECK(intra / ni == doctest::Approx(0.6).epsilon(0.1));
  CHECK(inter / nx == doctest::Approx(-0.15).epsilon(0.3));
}

TEST_CASE("bridge nodes have high participation") {
  auto spec = planted(2);
  spec.d = 64;
  spec.n_samples = 600;
  spec.bridge_nodes = {3, 20, 37, 54};
  const auto pa = gen_planted_activations(spec);
  const auto g = build_graph(zscore(pa.tensor, 0), 20);
  const auto p = participation(g, Partition::from_labels(pa.membership));
  std::vector<double> others;
  for (int i = 0; i < 64; ++i)
    if (std::find(spec.bridge_nodes.begin(), spec.bridge_nodes.end(), i) == spec.bridge_nodes.end())
      others.push_back(*p.p[i]);
  std::sort(others.begin(), others.end());
  const double p90 = others[static_cast<std::size_t>(0.9 * (others.size() - 1))];
  for (int b : spec.bridge_nodes) CHECK(*p.p[b] > p90);
}

TEST_CASE("an impossible correlation spec is rejected") {
  auto spec = planted(3);
  spec.inter_corr = -0.6;  // four blocks cannot be pairwise anti-correlated this strongly
  CHECK_THROWS_AS(gen_planted_activations(spec), ValidationError);
}

TEST_CASE("funnel rank bounds the residual branch") {
  StackProfile p;
  p.kind = StackKind::trained_like;
  p.d = 32;
  p.L = 4;
  p.funnel_rank = 5;
  p.seed = 4;
  const auto set = gen_stack(p);
  for (const Matrix& j : set.mean_jacobians) {
    const Matrix r = j - Matrix::Identity(32, 32);
    Eigen::JacobiSVD<Matrix> svd(r);
    const Vector s = svd.singularValues();
    CHECK(s(4) > 1e-6);
    CHECK(s(5) < 1e-10 * s(0));
  }
}

TEST_CASE("stacks are seed-deterministic") {
  StackProfile p;
  p.d = 16;
  p.L = 3;
  p.seed = 9;
  const auto a = gen_stack(p), b = gen_stack(p);
  for (int l = 0; l < 3; ++l) CHECK(a.mean_jacobians[l] == b.mean_jacobians[l]);
  p.seed = 10;
  CHECK(gen_stack(p).mean_jacobians[0] != a.mean_jacobians[0]);
}

TEST_CASE("init_like stays close to the skip connection") {
  StackProfile p;
  p.kind = StackKind::init_like;
  p.d = 32;
  p.L = 2;
  p.skip_scale = 0.5;
  const auto set = gen_stack(p);
  const double dev = (set.mean_jacobians[0] - 0.5 * Matrix::Identity(32, 32)).norm();
  CHECK(dev < 0.05 * std::sqrt(32.0));
}

TEST_CASE("malformed profiles are rejected") {
  StackProfile p;
  p.d = 0;
  CHECK_THROWS_AS(validate(p), ValidationError);
  p = {};
  p.L = 4;
  p.nonnormality_gradient = {0.1, 0.2};
  CHECK_THROWS_AS(validate(p), ValidationError);
  p = {};
  p.funnel_rank = 0;
  CHECK_THROWS_AS(validate(p), ValidationError);
  CHECK_THROWS_AS(parse_stack_kind("trained"), ValidationError);
}

TEST_CASE("exhaustive oracle counts bell numbers") {
  const auto g = gen_random_signed_graph(5, 1.0, 1);
  CHECK(oracle_exhaustive_partitions(g, 0.0, 0.0).partitions_checked == 52);
  const auto big = gen_random_signed_graph(11, 0.5, 1);
  CHECK_THROWS_AS(oracle_exhaustive_partitions(big, 0.0, 0.0), ValidationError);
}

TEST_CASE("signed sbm edge signs follow the blocks") {
  const auto pg = gen_signed_sbm(60, 3, 0.3, 0.1, 5);
  for (const auto& e : pg.graph.edge_list())
    CHECK((pg.membership[e.i] == pg.membership[e.j]) == (e.weight > 0));
}
