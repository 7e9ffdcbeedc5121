// resjac command-line front end: one subcommand per stage plus `run` for
// config-driven pipelines. Exit codes: 0 success, 1 validation, 2 numerical.

#include "resjac/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace resjac;

namespace {

std::vector<double> parse_doses(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad dose '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("empty dose list");
  return out;
}

Format output_format(const std::string& flag, const fs::path& out) {
  return flag.empty() ? format_for(out) : parse_format(flag);
}

void emit(const Table& t, const fs::path& out, const std::string& format_flag) {
  write_file(out, render(t, output_format(format_flag, out)));
}

std::vector<fs::path> files_with_extension(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no " + ext + " files in " + dir.string());
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"resjac: residual-stream Jacobian analysis"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic Jacobian or activation dump");
  std::string profile = "trained_like";
  int d = 64, L = 8, n_samples = 200, communities = 4, snapshots = 1;
  std::optional<int> funnel_rank;
  double skip_scale = 1.0, intra = 0.6, inter = 0.0, bridge_fraction = 0.0;
  std::uint64_t seed = 0;
  fs::path out;
  synth->add_option("--profile", profile, "init_like|trained_like|planted_funnel|custom|planted_activations")
      ->capture_default_str();
  synth->add_option("--d", d)->capture_default_str();
  synth->add_option("--L", L)->capture_default_str();
  synth->add_option("--funnel-rank", funnel_rank);
  synth->add_option("--skip-scale", skip_scale)->capture_default_str();
  synth->add_option("--n-samples", n_samples, "planted_activations")->capture_default_str();
  synth->add_option("--communities", communities, "planted_activations")->capture_default_str();
  synth->add_option("--intra-corr", intra, "planted_activations")->capture_default_str();
  synth->add_option("--inter-corr", inter, "planted_activations")->capture_default_str();
  synth->add_option("--bridge-fraction", bridge_fraction, "planted_activations")->capture_default_str();
  synth->add_option("--snapshots", snapshots, "planted_activations")->capture_default_str();
  synth->add_option("--seed", seed)->required();
  synth->add_option("--out", out)->required();

  // spectral
  auto* spectral = app.add_subcommand("spectral", "Per-layer spectral diagnostics");
  fs::path dump;
  std::optional<int> k_opt;
  std::string format_flag;
  spectral->add_option("--dump", dump)->required()->check(CLI::ExistingFile);
  spectral->add_option("--k", k_opt, "Alignment rank (default min(64, d))");
  spectral->add_option("--out", out)->required();
  spectral->add_option("--format", format_flag, "csv|json (default from extension)");

  // cumulative
  auto* cumulative = app.add_subcommand("cumulative", "Cumulative product bottleneck profile");
  int k_cum = 512;
  std::string method = "truncated";
  cumulative->add_option("--dump", dump)->required()->check(CLI::ExistingFile);
  cumulative->add_option("--kcum", k_cum)->capture_default_str();
  cumulative->add_option("--method", method, "truncated|dense")->capture_default_str();
  cumulative->add_option("--out", out)->required();
  cumulative->add_option("--format", format_flag);

  // schur
  auto* schur = app.add_subcommand("schur", "Schur dose-response sweep");
  std::string mode = "J", construction = "dose", doses_text = "0,0.25,0.5,0.75,1,1.5,2";
  int draws = 4;
  bool full_henrici = false;
  schur->add_option("--dump", dump)->required()->check(CLI::ExistingFile);
  schur->add_option("--mode", mode, "J|R")->capture_default_str();
  schur->add_option("--construction", construction, "dose|controlA|controlB")->capture_default_str();
  schur->add_option("--doses", doses_text)->capture_default_str();
  schur->add_option("--draws", draws)->capture_default_str();
  schur->add_option("--kcum", k_cum)->capture_default_str();
  schur->add_flag("--full-henrici", full_henrici, "Henrici of the dense product (d <= 512)");
  schur->add_option("--seed", seed)->required();
  schur->add_option("--out", out)->required();
  schur->add_option("--format", format_flag);

  // graph
  auto* graph = app.add_subcommand("graph", "Top-k signed correlation graph of one snapshot");
  int snapshot = 0, k_graph = 20;
  graph->add_option("--dump", dump, "Activation dump")->required()->check(CLI::ExistingFile);
  graph->add_option("--snapshot", snapshot)->capture_default_str();
  graph->add_option("--k", k_graph)->capture_default_str();
  graph->add_option("--out", out)->required();

  // community
  auto* community = app.add_subcommand("community", "Signed CPM communities of a graph");
  fs::path graph_file;
  LeidenOptions leiden;
  community->add_option("--graph", graph_file)->required()->check(CLI::ExistingFile);
  community->add_option("--gamma", leiden.gamma_pos)->capture_default_str();
  community->add_option("--gamma-neg", leiden.gamma_neg)->capture_default_str();
  community->add_option("--restarts", leiden.restarts)->capture_default_str();
  community->add_option("--max-iterations", leiden.max_iterations)->capture_default_str();
  community->add_option("--seed", seed)->required();
  community->add_option("--out", out)->required();

  // stats
  auto* stats = app.add_subcommand("stats", "Community/Jacobian coupling tests");
  fs::path graphs_dir, communities_dir;
  std::vector<std::string> tests;
  StatsParams sp;
  std::string nmi_norm = "arithmetic";
  stats->add_option("--dump", dump, "Jacobian dump")->required()->check(CLI::ExistingFile);
  stats->add_option("--graphs", graphs_dir)->required()->check(CLI::ExistingDirectory);
  stats->add_option("--communities", communities_dir, "Partitions (detected from the graphs when absent)")
      ->check(CLI::ExistingDirectory);
  stats->add_option("--test", tests, "1|2|3|selfalign (repeatable; default all)");
  stats->add_option("--nperm", sp.n_perm)->capture_default_str();
  stats->add_option("--nnull", sp.n_null)->capture_default_str();
  stats->add_option("--nperm3", sp.n_perm_test3)->capture_default_str();
  stats->add_option("--tail-frac", sp.tail_frac)->capture_default_str();
  stats->add_option("--k", k_opt, "Self-alignment rank (default min(64, d))");
  stats->add_option("--gamma", leiden.gamma_pos)->capture_default_str();
  stats->add_option("--gamma-neg", leiden.gamma_neg)->capture_default_str();
  stats->add_option("--restarts", leiden.restarts)->capture_default_str();
  stats->add_option("--nmi-norm", nmi_norm, "arithmetic|max|sqrt")->capture_default_str();
  stats->add_option("--seed", seed)->required();
  stats->add_option("--out", out)->required();
  stats->add_option("--format", format_flag);

  // report
  auto* report_cmd = app.add_subcommand("report", "Summarize a run directory");
  fs::path run_dir;
  report_cmd->add_option("run_dir", run_dir)->required();

  // run
  auto* run_cmd = app.add_subcommand("run", "Execute a config-driven pipeline");
  fs::path config_path;
  run_cmd->add_option("config", config_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (quiet) set_warnings_enabled(false);

  try {
    if (synth->parsed()) {
      if (profile == "planted_activations") {
        PlantedActivationSpec spec;
        spec.n_samples = n_samples;
        spec.d = d;
        spec.communities = communities;
        spec.intra_corr = intra;
        spec.inter_corr = inter;
        spec.n_snapshots = snapshots;
        spec.seed = seed;
        const int n_bridges = static_cast<int>(std::floor(bridge_fraction * d));
        for (int b = 0; b < n_bridges; ++b)
          spec.bridge_nodes.push_back(static_cast<int>((2LL * b + 1) * d / (2 * n_bridges)));
        write_dump(out, gen_planted_activations(spec).tensor);
      } else {
        StackProfile p;
        p.kind = parse_stack_kind(profile);
        p.d = d;
        p.L = L;
        p.funnel_rank = funnel_rank;
        p.skip_scale = skip_scale;
        p.seed = seed;
        write_dump(out, gen_stack(p));
      }
    } else if (spectral->parsed()) {
      const JacobianSet set = read_jacobians(dump);
      emit(spectral_table(summarize_layers(set, k_opt.value_or(default_alignment_k(set.d())))), out, format_flag);
    } else if (cumulative->parsed()) {
      if (method != "truncated" && method != "dense") throw ValidationError("unknown method '" + method + "'");
      const JacobianSet set = read_jacobians(dump);
      const auto m = method == "dense" ? CompositionMethod::dense : CompositionMethod::truncated;
      emit(cumulative_table(bottleneck_profile(set, k_cum, m)), out, format_flag);
    } else if (schur->parsed()) {
      DoseOptions o;
      o.construction = parse_construction(construction);
      o.mode = parse_schur_mode(mode);
      o.doses = parse_doses(doses_text);
      o.n_draws = draws;
      o.k_cum = k_cum;
      o.full_henrici = full_henrici;
      o.seed = seed;
      emit(schur_table({dose_sweep(read_jacobians(dump), o)}), out, format_flag);
    } else if (graph->parsed()) {
      write_graph(out, build_graph(zscore(read_activations(dump), snapshot), k_graph));
    } else if (community->parsed()) {
      leiden.seed = seed;
      const SignedGraph g = read_graph(graph_file);
      const Partition p = leiden_signed_cpm(g, leiden);
      write_file(out, community_json(p, participation(g, p)).dump() + "\n");
    } else if (stats->parsed()) {
      const JacobianSet set = read_jacobians(dump);
      std::vector<SignedGraph> graphs;
      for (const auto& f : files_with_extension(graphs_dir, ".graph")) graphs.push_back(read_graph(f));
      std::vector<Partition> parts;
      if (!communities_dir.empty()) {
        for (const auto& f : files_with_extension(communities_dir, ".json"))
          parts.push_back(partition_from_json(nlohmann::json::parse(read_file(f))));
      } else {
        parts.resize(graphs.size());
        for (std::size_t s = 0; s < graphs.size(); ++s) {
          LeidenOptions o = leiden;
          o.seed = derive_seed(seed, {6, s});
          parts[s] = leiden_signed_cpm(graphs[s], o);
        }
      }
      if (!tests.empty()) sp.tests = tests;
      sp.k = k_opt.value_or(default_alignment_k(set.d()));
      sp.nmi_norm = parse_nmi_norm(nmi_norm);
      emit(stats_table(run_stats(set, graphs, parts, sp, derive_seed(seed, {7}))), out, format_flag);
    } else if (report_cmd->parsed()) {
      report(run_dir);
      std::cout << (run_dir / "summary.json").string() << "\n";
    } else if (run_cmd->parsed()) {
      const RunConfig config = load_config(config_path);
      run(config);
      std::cout << (config.output_dir / "run_manifest.json").string() << "\n";
    }
  } catch (const NumericalError& e) {
    std::cerr << "resjac: numerical error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "resjac: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "resjac: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
