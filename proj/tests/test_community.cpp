#include "resjac/community.hpp"
#include "resjac/synth.hpp"

#include <doctest.h>

#include <cmath>

using namespace resjac;

namespace {

std::vector<GraphEdge> clique(int first, int size, double w) {
  std::vector<GraphEdge> e;
  for (int i = first; i < first + size; ++i)
    for (int j = i + 1; j < first + size; ++j) e.push_back({i, j, w});
  return e;
}

SignedGraph two_cliques(bool with_negative) {
  auto e = clique(0, 8, 1.0);
  auto f = clique(8, 8, 1.0);
  e.insert(e.end(), f.begin(), f.end());
  if (with_negative)
    for (int i = 0; i < 8; ++i)
      for (int j = 8; j < 16; ++j) e.push_back({i, j, -0.5});
  return SignedGraph::from_edges(16, e);
}

}  // namespace

TEST_CASE("objective closed form") {
  // Triangle with one negative edge, all in one community: W+ = 2, W- = 0.5, 3 pairs.
  const auto g = SignedGraph::from_edges(3, {{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, -0.5}});
  CHECK(cpm_objective(g, {0, 0, 0}, 0.1, 0.2) == doctest::Approx((2.0 - 0.3) - (0.5 - 0.6)));
  CHECK(cpm_objective(g, {0, 1, 2}, 0.1, 0.2) == 0.0);
}

TEST_CASE("two disconnected cliques are recovered exactly") {
  const auto p = leiden_signed_cpm(two_cliques(false));
  CHECK(p.n_communities() == 2);
  CHECK(p.labels == std::vector<int>{0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1});
  CHECK(p.objective == doctest::Approx(2 * (28 - 0.001 * 28)));
}

TEST_CASE("negative edges between cliques keep the split and do not change the objective") {
  const auto a = leiden_signed_cpm(two_cliques(false));
  const auto b = leiden_signed_cpm(two_cliques(true));
  CHECK(b.labels == a.labels);
  CHECK(b.objective == doctest::Approx(a.objective));
  CHECK(is_single_move_optimal(two_cliques(true), b));
}

TEST_CASE("two triangles match the exhaustive optimum") {
  auto e = clique(0, 3, 1.0);
  auto f = clique(3, 3, 1.0);
  e.insert(e.end(), f.begin(), f.end());
  e.push_back({2, 3, -1.0});
  const auto g = SignedGraph::from_edges(6, e);
  const auto opt = oracle_exhaustive_partitions(g, 0.001, 0.0);
  const auto p = leiden_signed_cpm(g);
  CHECK(p.objective == doctest::Approx(opt.objective));
  CHECK(p.labels == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(opt.partitions_checked == 203);  // Bell(6)
}

TEST_CASE("leiden never loses to the exhaustive search on small random graphs") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto g = gen_random_signed_graph(7, 0.5, 100 + s);
    const auto opt = oracle_exhaustive_partitions(g, 0.05, 0.02);
    LeidenOptions o;
    o.gamma_pos = 0.05;
    o.gamma_neg = 0.02;
    o.seed = s;
    const auto p = leiden_signed_cpm(g, o);
    CHECK(p.objective >= opt.objective - 1e-9);
    CHECK(is_single_move_optimal(g, p));
  }
}

TEST_CASE("results are seed-deterministic and independent of the thread count") {
  const auto pg = gen_signed_sbm(200, 4, 0.2, 0.05, 9);
  LeidenOptions o;
  o.seed = 4;
  const auto a = leiden_signed_cpm(pg.graph, o);
  setenv("RESJAC_THREADS", "1", 1);
  const auto b = leiden_signed_cpm(pg.graph, o);
  unsetenv("RESJAC_THREADS");
  CHECK(a.labels == b.labels);
  CHECK(nmi(a.labels, pg.membership) > 0.95);
}

TEST_CASE("partitions relabel by first appearance") {
  const auto p = Partition::from_labels({7, 3, 7, 9, 3});
  CHECK(p.labels == std::vector<int>{0, 1, 0, 2, 1});
  CHECK(p.sizes() == std::vector<int>{2, 2, 1});
  CHECK(p.non_degenerate_count() == 2);
  CHECK_THROWS_AS(Partition::from_labels({0, -1}), ValidationError);
}

TEST_CASE("nmi closed forms") {
  const std::vector<int> a = {0, 0, 1, 1}, b = {0, 1, 0, 1}, c = {1, 1, 0, 0};
  CHECK(nmi(a, a) == doctest::Approx(1.0));
  CHECK(nmi(a, c) == doctest::Approx(1.0));
  CHECK(nmi(a, b) == doctest::Approx(0.0));
  CHECK(nmi(std::vector<int>{0, 0, 0}, std::vector<int>{0, 0, 0}) == 1.0);
  // a = {0,0,1,1}, d = {0,0,0,1}: I = H(d) - H(d|a) with natural logs.
  const std::vector<int> d = {0, 0, 0, 1};
  const double ha = std::log(2.0);
  const double hd = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  const double mi = hd - 0.5 * std::log(2.0);
  CHECK(nmi(a, d, NmiNorm::arithmetic) == doctest::Approx(2 * mi / (ha + hd)));
  CHECK(nmi(a, d, NmiNorm::max) == doctest::Approx(mi / std::max(ha, hd)));
  CHECK(nmi(a, d, NmiNorm::sqrt) == doctest::Approx(mi / std::sqrt(ha * hd)));
  CHECK_THROWS_AS(nmi(a, std::vector<int>{0, 1}), ValidationError);
}

TEST_CASE("nmi matrix is symmetric with a unit diagonal") {
  std::vector<Partition> ps = {Partition::from_labels({0, 0, 1, 1}), Partition::from_labels({0, 1, 0, 1}),
                               Partition::from_labels({0, 0, 0, 1})};
  const Matrix m = nmi_matrix(ps);
  CHECK(m(1, 2) == m(2, 1));
  CHECK(m.diagonal().isOnes());
}

TEST_CASE("participation closed forms") {
  // Node 0 sends |w| = 1, 1, 2 into communities {1}, {2}, {3,4}: k = 4, Σk_c² = 1 + 1 + 4.
  const auto g = SignedGraph::from_edges(5, {{0, 1, 1.0}, {0, 2, -1.0}, {0, 3, 1.0}, {0, 4, 1.0}, {3, 4, 1.0}, {1, 2, 1.0}});
  const auto pv = participation(g, Partition::from_labels({0, 1, 2, 3, 3}));
  REQUIRE(pv.p[0].has_value());
  CHECK(*pv.p[0] == doctest::Approx(1.0 - 6.0 / 16.0));
  CHECK(pv.defined_count() == 5);
  // A node whose edges all stay in one community has p = 0.
  CHECK(*pv.p[4] == doctest::Approx(0.5));
  const auto in_one = participation(g, Partition::from_labels({0, 0, 0, 0, 0}));
  CHECK(*in_one.p[0] == 0.0);
}

TEST_CASE("participation is undefined for isolated nodes") {
  auto g = SignedGraph::from_edges(3, {{0, 1, 1.0}});
  g.degenerate = {false, false, true};
  const auto pv = participation(g, Partition::from_labels({0, 0, 1}));
  CHECK_FALSE(pv.p[2].has_value());
  CHECK(pv.defined_count() == 2);
}

TEST_CASE("detector interface wraps leiden") {
  LeidenCpmDetector det;
  CHECK(det.name() == "leiden_signed_cpm");
  CHECK(det.detect(two_cliques(false)).n_communities() == 2);
}

TEST_CASE("bad options are rejected") {
  LeidenOptions o;
  o.restarts = 0;
  CHECK_THROWS_AS(leiden_signed_cpm(two_cliques(false), o), ValidationError);
}
