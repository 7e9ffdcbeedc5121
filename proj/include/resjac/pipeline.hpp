#pragma once

// Multi-stage runs: a JSON config names the inputs, the stages and their
// parameters; each stage writes tables into the output directory and the run
// ends with run_manifest.json (config echo, SHA-256 of inputs and outputs,
// wall times).
//
// Config schema (every key except "seed" is optional):
//   {
//     "seed": 7,
//     "output_dir": "out",                     // relative to the config file
//     "format": "csv" | "json",
//     "inputs": {"jacobians": "...", "activations": "..."},
//     "stages": ["synth", "spectral", "cumulative", "schur", "graph",
//                "community", "stats", "report"],
//     "synth": {"profile": "trained_like", "d": 64, "L": 8, "funnel_rank": null,
//               "skip_scale": 1.0, "activations": {"n_samples": 200,
//               "communities": 4, "intra_corr": 0.6, "inter_corr": -0.15,
//               "bridge_fraction": 0.1}},
//     "spectral": {"k": 64},
//     "cumulative": {"k_cum": 512, "method": "truncated"},
//     "schur": {"constructions": ["dose", "controlA", "controlB"], "mode": "J",
//               "doses": [0, 0.25, 0.5, 0.75, 1, 1.5, 2], "n_draws": 4,
//               "k_cum": 512, "full_henrici": false},
//     "graph": {"k": 20},
//     "community": {"gamma": 0.001, "gamma_neg": 0, "restarts": 5,
//                   "max_iterations": 10, "nmi_norm": "arithmetic"},
//     "stats": {"tests": ["1", "2", "3", "selfalign"], "n_perm": 10000,
//               "n_null": 100, "n_perm_test3": 5000, "tail_frac": 0.1,
//               "k": 64}
//   }

#include "resjac/community.hpp"
#include "resjac/cumulative.hpp"
#include "resjac/schur.hpp"
#include "resjac/spectral.hpp"
#include "resjac/stats.hpp"
#include "resjac/synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace resjac {

enum class Format { csv, json };

std::string to_string(Format format);
Format parse_format(const std::string& s);
/// json for a ".json" extension, csv otherwise.
Format format_for(const std::filesystem::path& path);

/// Column-ordered table whose cells are JSON scalars (null, number, bool, string).
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<nlohmann::json>> rows;

  void add(std::vector<nlohmann::json> row);
  /// Column index; throws ValidationError when absent.
  std::size_t column(const std::string& name) const;
};

std::string render_csv(const Table& table);
std::string render_json(const Table& table);
std::string render(const Table& table, Format format);
/// Parses either rendering back (CSV numbers become doubles, empty cells null).
Table parse_table(std::string_view text, Format format);
Table read_table(const std::filesystem::path& path);
/// Writes <stem>.csv or <stem>.json and returns the path written.
std::filesystem::path write_table(const std::filesystem::path& stem, const Table& table, Format format);

Table spectral_table(const std::vector<SpectralSummary>& summaries);
Table cumulative_table(const BottleneckProfile& profile);
Table schur_table(const std::vector<DoseCurve>& curves);
Table stats_table(const std::vector<StatResult>& results);
Table nmi_table(const Matrix& nmi);
nlohmann::json community_json(const Partition& partition, const ParticipationVector& participation);
Partition partition_from_json(const nlohmann::json& j);

/// Input and output snapshot of a layer for a given snapshot count S:
///   S = 2L      → (2ℓ, 2ℓ+2), last layer (2ℓ, 2ℓ)
///   S = L + 1   → (ℓ, ℓ+1)
///   S = L       → (ℓ, min(ℓ+1, L−1))
///   S = 1       → (0, 0)
std::pair<int, int> layer_snapshots(int S, int L, int layer);

struct StatsParams {
  std::vector<std::string> tests = {"1", "2", "3", "selfalign"};
  int n_perm = 10000;
  int n_null = 100;
  int n_perm_test3 = 5000;
  double tail_frac = 0.10;
  int k = 64;  // self-alignment rank for the selfalign test
  NmiNorm nmi_norm = NmiNorm::arithmetic;
};

/// Runs the requested coupling tests. graphs and partitions are indexed by
/// snapshot; test 3 results are BH-adjusted across layers.
std::vector<StatResult> run_stats(const JacobianSet& set, const std::vector<SignedGraph>& graphs,
                                  const std::vector<Partition>& partitions, const StatsParams& params,
                                  std::uint64_t seed);

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "resjac_out";
  Format format = Format::csv;
  std::optional<std::filesystem::path> jacobians;
  std::optional<std::filesystem::path> activations;
  std::vector<std::string> stages;
  nlohmann::json params = nlohmann::json::object();  // per-stage objects
  nlohmann::json echo;                               // config as given
};

inline const std::vector<std::string> kStageOrder = {"synth", "spectral", "cumulative", "schur",
                                                     "graph", "community", "stats", "report"};

/// Parses and checks a config; relative paths resolve against base_dir.
RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

/// Executes the stages in dependency order and returns the run manifest,
/// which is also written to <output_dir>/run_manifest.json. Missing inputs are
/// reported before any stage runs; a failing stage aborts the run with its
/// name in the message.
nlohmann::json run(const RunConfig& config);

/// Joins the stage outputs of a run directory into summary.json,
/// summary_layers.csv and summary_long.csv. Returns the summary document.
nlohmann::json report(const std::filesystem::path& run_dir);

}  // namespace resjac
