#include "resjac/pipeline.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace resjac;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("resjac_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json small_config() {
  return json{{"seed", 3},
              {"output_dir", "out"},
              {"stages", {"synth", "spectral", "cumulative", "schur", "graph", "community", "stats", "report"}},
              {"synth", {{"profile", "trained_like"}, {"d", 24}, {"L", 6}, {"activations", {{"n_samples", 120}}}}},
              {"spectral", {{"k", 8}}},
              {"cumulative", {{"k_cum", 16}}},
              {"schur", {{"doses", {0, 1, 2}}, {"n_draws", 2}}},
              {"graph", {{"k", 6}}},
              {"community", {{"restarts", 2}}},
              {"stats", {{"n_perm", 199}, {"n_null", 20}, {"n_perm_test3", 199}, {"k", 8}}}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RESJAC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("layer snapshot mapping") {
  CHECK(layer_snapshots(8, 4, 0) == std::pair{0, 2});
  CHECK(layer_snapshots(8, 4, 3) == std::pair{6, 6});
  CHECK(layer_snapshots(5, 4, 2) == std::pair{2, 3});
  CHECK(layer_snapshots(4, 4, 3) == std::pair{3, 3});
  CHECK(layer_snapshots(4, 4, 1) == std::pair{1, 2});
  CHECK(layer_snapshots(1, 4, 2) == std::pair{0, 0});
  CHECK_THROWS_AS(layer_snapshots(3, 4, 0), ValidationError);
}

TEST_CASE("tables round-trip through both renderings") {
  Table t;
  t.columns = {"name", "x", "flag", "missing"};
  t.add({"a,b", 0.1, true, nullptr});
  t.add({"plain", -2.5e-300, false, 3});
  for (Format f : {Format::csv, Format::json}) {
    const Table back = parse_table(render(t, f), f);
    REQUIRE(back.rows.size() == 2);
    CHECK(back.columns == t.columns);
    CHECK(back.rows[0][0] == "a,b");
    CHECK(back.rows[0][1].get<double>() == 0.1);
    CHECK(back.rows[1][1].get<double>() == -2.5e-300);
    CHECK(back.rows[0][3].is_null());
  }
  CHECK(render_csv(t).substr(0, 25) == "name,x,flag,missing\n\"a,b\"");
  CHECK_THROWS_AS(t.column("nope"), ValidationError);
}

TEST_CASE("config errors") {
  CHECK_THROWS_WITH_AS(parse_config(json{{"stages", {"spectral"}}}, "."), doctest::Contains("seed"),
                       ValidationError);
  CHECK_THROWS_AS(parse_config(json{{"seed", 1}, {"stages", {"bogus"}}}, "."), ValidationError);
  CHECK_THROWS_AS(parse_config(json{{"seed", 1}, {"stages", {"spectral", "spectral"}}}, "."), ValidationError);
  const auto c = parse_config(json{{"seed", 1}, {"inputs", {{"jacobians", "j.rsjd"}}}}, "/base");
  CHECK(*c.jacobians == fs::path("/base/j.rsjd"));
}

TEST_CASE("a missing input fails before any stage writes output") {
  const fs::path dir = scratch("missing");
  auto j = json{{"seed", 1}, {"output_dir", "out"}, {"inputs", {{"jacobians", "absent.rsjd"}}},
                {"stages", {"spectral", "cumulative"}}};
  const auto c = parse_config(j, dir);
  CHECK_THROWS_WITH_AS(run(c), doctest::Contains("absent.rsjd"), ValidationError);
  CHECK((!fs::exists(dir / "out") || fs::is_empty(dir / "out")));
}

TEST_CASE("report needs a run directory") {
  const fs::path dir = scratch("empty");
  CHECK_THROWS_AS(report(dir), ValidationError);
  CHECK_THROWS_AS(report(dir / "nope"), ValidationError);
}

TEST_CASE("full synthetic run") {
  const fs::path dir = scratch("full");
  const auto manifest = run(parse_config(small_config(), dir));
  const fs::path out = dir / "out";
  CHECK(fs::exists(out / "run_manifest.json"));
  CHECK(manifest["stages"].size() == 8);

  const Table layers = read_table(out / "summary_layers.csv");
  CHECK(layers.rows.size() == 6);
  const Table doses = read_table(out / "summary_doses.csv");
  CHECK(doses.rows.size() >= 3);
  const Table cum = read_table(out / "cumulative.csv");
  CHECK(cum.rows.size() == 6);
  const Table stats = read_table(out / "stats.csv");
  CHECK(stats.rows.size() == 4 + 6 + 6 + 1);

  const json summary = json::parse(slurp(out / "summary.json"));
  CHECK(summary["missing_stages"].empty());
  CHECK(summary["layers"].size() == 6);

  // Reporting again from disk reproduces the same summary.
  const std::string first = slurp(out / "summary.json");
  report(out);
  CHECK(slurp(out / "summary.json") == first);
  CHECK(sha256_hex(first) == "d4938142e71184dda9717a5e27d6b5302af803d22aa68a762a526e64da3f8b56");
}

TEST_CASE("json output format") {
  const fs::path dir = scratch("jsonfmt");
  auto cfg = small_config();
  cfg["format"] = "json";
  cfg["stages"] = {"synth", "spectral"};
  run(parse_config(cfg, dir));
  const Table t = read_table(dir / "out" / "spectral.json");
  CHECK(t.rows.size() == 6);
  CHECK_FALSE(fs::exists(dir / "out" / "spectral.csv"));
}

TEST_CASE("cli exit codes") {
  const fs::path dir = scratch("cli");
  std::ofstream(dir / "config.json") << small_config().dump();
  CHECK(run_cli("synth --profile init_like --d 8 --L 2 --seed 1 --out " + (dir / "j.rsjd").string()) == 0);
  CHECK(run_cli("spectral --dump " + (dir / "j.rsjd").string() + " --k 4 --out " + (dir / "s.csv").string()) == 0);
  CHECK(run_cli("spectral --dump " + (dir / "absent.rsjd").string() + " --out " + (dir / "s.csv").string()) == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("synth --profile trained_like --d 8 --L 2") == 1);  // no seed
  CHECK(run_cli("report " + (dir / "nothing").string()) == 1);
}
