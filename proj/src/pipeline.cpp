#include "resjac/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace resjac {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(Format format) { return format == Format::json ? "json" : "csv"; }

Format parse_format(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  throw ValidationError("unknown format '" + s + "' (expected csv or json)");
}

Format format_for(const fs::path& path) { return path.extension() == ".json" ? Format::json : Format::csv; }

// ---------------------------------------------------------------- tables

void Table::add(std::vector<json> row) {
  if (row.size() != columns.size()) throw ValidationError("table row has the wrong width");
  rows.push_back(std::move(row));
}

std::size_t Table::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ValidationError("table has no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

namespace {

json num(double v) { return json(v); }

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number_float()) return format_double(v.get<double>());
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

json parse_cell(const std::string& s) {
  if (s.empty()) return nullptr;
  if (s == "true") return true;
  if (s == "false") return false;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  const bool integral = s.find_first_of(".eE") == std::string::npos;
  if (integral) {
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && p == s.data() + s.size()) return v;
  }
  double d = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (ec == std::errc() && p == s.data() + s.size()) return d;
  return s;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

std::string render_csv(const Table& t) {
  std::string out;
  for (std::size_t c = 0; c < t.columns.size(); ++c) out += (c ? "," : "") + t.columns[c];
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      out += csv_cell(row[c]);
    }
    out += '\n';
  }
  return out;
}

std::string render_json(const Table& t) {
  ordered_json arr = ordered_json::array();
  for (const auto& row : t.rows) {
    ordered_json rec = ordered_json::object();
    for (std::size_t c = 0; c < row.size(); ++c) {
      const json& v = row[c];
      rec[t.columns[c]] = (v.is_number_float() && !std::isfinite(v.get<double>())) ? ordered_json(nullptr)
                                                                                      : ordered_json::parse(v.dump());
    }
    arr.push_back(std::move(rec));
  }
  return arr.dump(1) + "\n";
}

std::string render(const Table& t, Format f) { return f == Format::json ? render_json(t) : render_csv(t); }

Table parse_table(std::string_view text, Format format) {
  Table t;
  if (format == Format::json) {
    ordered_json arr;
    try {
      arr = ordered_json::parse(text);
    } catch (const ordered_json::exception& e) {
      throw ValidationError(std::string("malformed table: ") + e.what());
    }
    if (!arr.is_array()) throw ValidationError("malformed table: expected an array of records");
    for (const auto& rec : arr) {
      if (t.columns.empty())
        for (const auto& item : rec.items()) t.columns.push_back(item.key());
      std::vector<json> row;
      for (const auto& c : t.columns) row.push_back(rec.contains(c) ? json::parse(rec[c].dump()) : json(nullptr));
      t.add(std::move(row));
    }
    return t;
  }
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (header) {
      t.columns = cells;
      header = false;
      continue;
    }
    if (cells.size() != t.columns.size()) throw ValidationError("malformed table: ragged CSV row");
    std::vector<json> row;
    for (const auto& c : cells) row.push_back(parse_cell(c));
    t.add(std::move(row));
  }
  return t;
}

Table read_table(const fs::path& path) { return parse_table(read_file(path), format_for(path)); }

fs::path write_table(const fs::path& stem, const Table& table, Format format) {
  fs::path p = stem;
  p += format == Format::json ? ".json" : ".csv";
  write_file(p, render(table, format));
  return p;
}

// ---------------------------------------------------------------- stage tables

Table spectral_table(const std::vector<SpectralSummary>& summaries) {
  Table t;
  t.columns = {"layer",          "kappa",          "kappa_infinite",    "participation_ratio", "frac_expanding",
               "mean_abs_lambda", "spectral_radius", "complex_fraction", "self_alignment_J",    "self_alignment_R",
               "forward_alignment", "forward_alignment_R", "random_baseline", "henrici", "residual_norm_ratio",
               "frobenius",      "sigma_max",      "sigma_min",         "subspace_ambiguous",  "k",
               "sample_kappa_median", "sample_kappa_iqr", "sample_pr_median", "sample_pr_iqr"};
  for (const auto& s : summaries) {
    t.add({s.layer,
           s.kappa_infinite ? json(nullptr) : num(s.kappa),
           s.kappa_infinite,
           num(s.participation_ratio),
           num(s.frac_expanding),
           num(s.mean_abs_lambda),
           num(s.spectral_radius),
           num(s.complex_fraction),
           num(s.self_alignment_J),
           num(s.self_alignment_R),
           opt(s.forward_alignment),
           opt(s.forward_alignment_R),
           num(s.random_baseline),
           num(s.henrici),
           num(s.residual_norm_ratio),
           num(s.frobenius),
           num(s.sigma_max),
           num(s.sigma_min),
           s.subspace_ambiguous,
           s.k,
           s.sample_kappa ? num(s.sample_kappa->median) : json(nullptr),
           s.sample_kappa ? num(s.sample_kappa->iqr) : json(nullptr),
           s.sample_participation_ratio ? num(s.sample_participation_ratio->median) : json(nullptr),
           s.sample_participation_ratio ? num(s.sample_participation_ratio->iqr) : json(nullptr)});
  }
  return t;
}

Table cumulative_table(const BottleneckProfile& p) {
  constexpr int kTop = 16;
  Table t;
  t.columns = {"injection_layer", "effective_rank", "log10_scale", "log10_frobenius"};
  for (int i = 1; i <= kTop; ++i) t.columns.push_back("sigma_" + std::to_string(i));
  for (const char* c : {"truncation_flag", "truncation_rank", "rank_clamped", "method", "spectral_radius",
                        "frac_expanding"})
    t.columns.push_back(c);
  for (std::size_t l = 0; l < p.cumulative.size(); ++l) {
    const auto& c = p.cumulative[l];
    std::vector<json> row = {c.injection_layer, num(c.effective_rank), num(c.log10_scale), num(c.log10_frobenius())};
    for (int i = 0; i < kTop; ++i) row.push_back(i < c.sigma_top.size() ? num(c.sigma_top(i)) : json(nullptr));
    row.insert(row.end(), {c.truncation_limited, c.truncation_rank, c.rank_clamped, to_string(c.method),
                           num(p.spectral_radius[l]), num(p.frac_expanding[l])});
    t.add(std::move(row));
  }
  return t;
}

Table schur_table(const std::vector<DoseCurve>& curves) {
  Table t;
  t.columns = {"construction", "mode",          "dose",    "erank",       "erank_std",          "log10_frobenius",
               "log10_frobenius_std", "henrici", "henrici_std", "truncation_limited", "n_draws", "k_cum",
               "full_henrici"};
  for (const auto& c : curves)
    for (const auto& p : c.points)
      t.add({to_string(c.construction), to_string(c.mode), num(p.dose), num(p.erank), num(p.erank_std),
             num(p.log10_frobenius), num(p.log10_frobenius_std), num(p.henrici), num(p.henrici_std),
             p.truncation_limited, c.n_random_draws, c.k_cum, c.full_henrici});
  return t;
}

Table stats_table(const std::vector<StatResult>& results) {
  Table t;
  t.columns = {"test", "measure", "layer", "statistic", "p_value", "n_permutations", "q_value", "significant", "flag"};
  for (const auto& r : results)
    t.add({r.test, r.measure, r.layer >= 0 ? json(r.layer) : json(nullptr), opt(r.statistic), opt(r.p_value),
           r.n_permutations, opt(r.q_value), r.significant, r.flag});
  return t;
}

Table nmi_table(const Matrix& m) {
  Table t;
  t.columns.push_back("snapshot");
  for (Eigen::Index j = 0; j < m.cols(); ++j) t.columns.push_back("s" + std::to_string(j));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<json> row = {static_cast<int>(i)};
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(num(m(i, j)));
    t.add(std::move(row));
  }
  return t;
}

json community_json(const Partition& p, const ParticipationVector& pv) {
  json j;
  j["labels"] = p.labels;
  j["sizes"] = p.sizes();
  j["n_communities"] = p.n_communities();
  j["non_degenerate_count"] = p.non_degenerate_count();
  j["objective"] = p.objective;
  j["gamma_pos"] = p.gamma_pos;
  j["gamma_neg"] = p.gamma_neg;
  json part = json::array();
  for (const auto& v : pv.p) part.push_back(v ? json(*v) : json(nullptr));
  j["participation"] = part;
  return j;
}

Partition partition_from_json(const json& j) {
  try {
    Partition p = Partition::from_labels(j.at("labels").get<std::vector<int>>());
    p.objective = j.value("objective", 0.0);
    p.gamma_pos = j.value("gamma_pos", 0.001);
    p.gamma_neg = j.value("gamma_neg", 0.0);
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed community file: ") + e.what());
  }
}

std::pair<int, int> layer_snapshots(int S, int L, int layer) {
  if (layer < 0 || layer >= L) throw ValidationError("layer out of range");
  if (S == 2 * L) return {2 * layer, layer + 1 < L ? 2 * layer + 2 : 2 * layer};
  if (S == L + 1) return {layer, layer + 1};
  if (S == L) return {layer, std::min(layer + 1, L - 1)};
  if (S == 1) return {0, 0};
  throw ValidationError("cannot map " + std::to_string(S) + " snapshots onto " + std::to_string(L) +
                        " layers (expected S = 2L, L + 1, L or 1)");
}

// ---------------------------------------------------------------- stats stage

std::vector<StatResult> run_stats(const JacobianSet& set, const std::vector<SignedGraph>& graphs,
                                  const std::vector<Partition>& partitions, const StatsParams& params,
                                  std::uint64_t seed) {
  const int L = set.L(), d = set.d();
  const int S = static_cast<int>(partitions.size());
  if (graphs.size() != partitions.size()) throw ValidationError("stats: graph and partition counts differ");
  for (int s = 0; s < S; ++s)
    if (partitions[s].n_nodes() != d || graphs[s].n_nodes != d)
      throw ValidationError("stats: snapshot " + std::to_string(s) + " does not have d=" + std::to_string(d) + " units");
  auto wants = [&](const char* name) {
    return std::find(params.tests.begin(), params.tests.end(), name) != params.tests.end();
  };
  for (const auto& t : params.tests)
    if (t != "1" && t != "2" && t != "3" && t != "selfalign") throw ValidationError("stats: unknown test '" + t + "'");

  std::vector<std::pair<int, int>> snaps(L);
  for (int l = 0; l < L; ++l) snaps[l] = layer_snapshots(S, L, l);

  std::vector<StatResult> out;
  if (wants("1")) {
    std::vector<Partition> layer_parts(L);
    std::vector<MesoscaleOperator> ops(L);
    for (int l = 0; l < L; ++l) {
      layer_parts[l] = partitions[snaps[l].first];
      ops[l] = mesoscale_operator(set.mean_jacobians[l], partitions[snaps[l].first].labels,
                                  partitions[snaps[l].second].labels);
    }
    auto r = test1_rate_coupling(layer_parts, ops, params.n_perm, derive_seed(seed, {1}), params.nmi_norm);
    out.insert(out.end(), r.begin(), r.end());
  }
  if (wants("2")) {
    for (int l = 0; l < L; ++l)
      out.push_back(test2_variance_captured(set.mean_jacobians[l], partitions[snaps[l].first].labels,
                                            partitions[snaps[l].second].labels, params.n_null,
                                            derive_seed(seed, {2, static_cast<std::uint64_t>(l)}), l));
  }
  std::vector<StatResult> t3;
  if (wants("3") || wants("selfalign")) {
    for (int l = 0; l < L; ++l) {
      const int in = snaps[l].first;
      ParticipationVector pv = participation(graphs[in], partitions[in]);
      BoundaryOptions o{params.tail_frac, params.n_perm_test3, derive_seed(seed, {3, static_cast<std::uint64_t>(l)})};
      t3.push_back(test3_boundary_coupling(set.mean_jacobians[l], pv, o, l));
    }
    apply_fdr(t3);
    if (wants("3")) out.insert(out.end(), t3.begin(), t3.end());
  }
  if (wants("selfalign")) {
    std::vector<double> sa, dd;
    const int k = std::min(params.k, d);
    for (int l = 0; l < L; ++l) {
      if (!t3[l].statistic) continue;
      sa.push_back(self_alignment(set.mean_jacobians[l], k).value);
      dd.push_back(*t3[l].statistic);
    }
    if (sa.size() < 4) {
      StatResult r;
      r.test = "selfalign";
      r.measure = "spearman_selfalign_d";
      r.flag = "undefined";
      out.push_back(r);
    } else {
      out.push_back(selfalign_vs_d(sa, dd, params.n_perm, derive_seed(seed, {4})));
    }
  }
  return out;
}

// ---------------------------------------------------------------- config

namespace {

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  try {
    return obj[key].get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

json section(const RunConfig& c, const std::string& name) {
  return c.params.contains(name) ? c.params[name] : json::object();
}

}  // namespace

RunConfig parse_config(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  if (!j.contains("seed") || !j["seed"].is_number_integer())
    throw ValidationError("config: 'seed' is mandatory and must be an integer");
  RunConfig c;
  c.echo = j;
  c.seed = j["seed"].get<std::uint64_t>();
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  c.output_dir = resolve(get_or<std::string>(j, "output_dir", "resjac_out"));
  c.format = parse_format(get_or<std::string>(j, "format", "csv"));
  if (j.contains("inputs")) {
    const json& in = j["inputs"];
    if (!in.is_object()) throw ValidationError("config: 'inputs' must be an object");
    if (in.contains("jacobians") && !in["jacobians"].is_null()) c.jacobians = resolve(in["jacobians"].get<std::string>());
    if (in.contains("activations") && !in["activations"].is_null())
      c.activations = resolve(in["activations"].get<std::string>());
  }
  c.stages = get_or<std::vector<std::string>>(j, "stages", kStageOrder);
  if (c.stages.empty()) throw ValidationError("config: stage list is empty");
  std::set<std::string> seen;
  for (const auto& s : c.stages) {
    if (std::find(kStageOrder.begin(), kStageOrder.end(), s) == kStageOrder.end())
      throw ValidationError("config: unknown stage '" + s + "'");
    if (!seen.insert(s).second) throw ValidationError("config: stage '" + s + "' listed twice");
  }
  for (const auto& name : kStageOrder)
    if (j.contains(name)) {
      if (!j[name].is_object()) throw ValidationError("config: '" + name + "' must be an object");
      c.params[name] = j[name];
    }
  return c;
}

RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

// ---------------------------------------------------------------- run

namespace {

std::string snapshot_name(int s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snapshot_%03d", s);
  return buf;
}

struct RunContext {
  const RunConfig& config;
  fs::path out;
  std::optional<fs::path> jacobians_path;
  std::optional<fs::path> activations_path;
  std::optional<JacobianSet> jacobians;
  std::optional<ActivationTensor> activations;
  std::vector<SignedGraph> graphs;
  std::vector<Partition> partitions;
  std::map<std::string, std::vector<fs::path>> outputs;  // per stage
  std::mutex mu;

  bool has(const std::string& stage) const {
    return std::find(config.stages.begin(), config.stages.end(), stage) != config.stages.end();
  }
  void record(const std::string& stage, const fs::path& p) {
    std::lock_guard<std::mutex> lock(mu);
    outputs[stage].push_back(p);
  }
};

void stage_synth(RunContext& ctx) {
  const json p = section(ctx.config, "synth");
  StackProfile prof;
  prof.kind = parse_stack_kind(get_or<std::string>(p, "profile", "trained_like"));
  prof.d = get_or(p, "d", 64);
  prof.L = get_or(p, "L", 8);
  if (p.contains("funnel_rank") && !p["funnel_rank"].is_null()) prof.funnel_rank = p["funnel_rank"].get<int>();
  prof.skip_scale = get_or(p, "skip_scale", 1.0);
  prof.nilpotent_scale = get_or(p, "nilpotent_scale", prof.nilpotent_scale);
  prof.epsilon = get_or(p, "epsilon", prof.epsilon);
  prof.funnel_gain = get_or(p, "funnel_gain", prof.funnel_gain);
  prof.nonnormality_gradient = get_or(p, "nonnormality_gradient", std::vector<double>{});
  prof.seed = derive_seed(ctx.config.seed, {1});
  JacobianSet set = gen_stack(prof);

  const json a = p.contains("activations") ? p["activations"] : json::object();
  PlantedActivationSpec spec;
  spec.n_samples = get_or(a, "n_samples", 200);
  spec.d = prof.d;
  spec.communities = get_or(a, "communities", 4);
  spec.intra_corr = get_or(a, "intra_corr", 0.6);
  spec.inter_corr = get_or(a, "inter_corr", -0.15);
  const double bridge_fraction = get_or(a, "bridge_fraction", 0.1);
  const int n_bridges = static_cast<int>(std::floor(bridge_fraction * prof.d));
  for (int b = 0; b < n_bridges; ++b) spec.bridge_nodes.push_back(static_cast<int>((2LL * b + 1) * prof.d / (2 * std::max(1, n_bridges))));
  spec.n_snapshots = get_or(a, "n_snapshots", 2 * prof.L);
  spec.seed = derive_seed(ctx.config.seed, {2});
  PlantedActivations act = gen_planted_activations(spec);

  const fs::path jp = ctx.out / "synth" / "jacobians.rsjd";
  const fs::path ap = ctx.out / "synth" / "activations.rsjd";
  write_dump(jp, set);
  write_dump(ap, act.tensor);
  ctx.record("synth", jp);
  ctx.record("synth", ap);
  if (!ctx.jacobians_path) {
    ctx.jacobians_path = jp;
    ctx.jacobians = std::move(set);
  }
  if (!ctx.activations_path) {
    ctx.activations_path = ap;
    ctx.activations = std::move(act.tensor);
  }
}

void stage_spectral(RunContext& ctx) {
  const json p = section(ctx.config, "spectral");
  const JacobianSet& set = *ctx.jacobians;
  const int k = get_or(p, "k", default_alignment_k(set.d()));
  ctx.record("spectral", write_table(ctx.out / "spectral", spectral_table(summarize_layers(set, k)), ctx.config.format));
}

void stage_cumulative(RunContext& ctx) {
  const json p = section(ctx.config, "cumulative");
  const std::string method = get_or<std::string>(p, "method", "truncated");
  if (method != "truncated" && method != "dense") throw ValidationError("cumulative: unknown method '" + method + "'");
  BottleneckProfile prof = bottleneck_profile(*ctx.jacobians, get_or(p, "k_cum", 512),
                                              method == "dense" ? CompositionMethod::dense : CompositionMethod::truncated);
  ctx.record("cumulative", write_table(ctx.out / "cumulative", cumulative_table(prof), ctx.config.format));
  json summary;
  summary["spearman_erank_radius"] =
      prof.spearman_erank_radius ? json(*prof.spearman_erank_radius) : json(nullptr);
  const fs::path sp = ctx.out / "cumulative_summary.json";
  write_file(sp, summary.dump(1) + "\n");
  ctx.record("cumulative", sp);
}

void stage_schur(RunContext& ctx) {
  const json p = section(ctx.config, "schur");
  std::vector<DoseCurve> curves;
  const auto constructions =
      get_or(p, "constructions", std::vector<std::string>{"dose", "controlA", "controlB"});
  for (const auto& name : constructions) {
    DoseOptions o;
    o.construction = parse_construction(name);
    o.mode = parse_schur_mode(get_or<std::string>(p, "mode", "J"));
    o.doses = get_or(p, "doses", kDefaultDoses);
    o.n_draws = get_or(p, "n_draws", 4);
    o.k_cum = get_or(p, "k_cum", 512);
    o.full_henrici = get_or(p, "full_henrici", false);
    o.seed = derive_seed(ctx.config.seed, {4});
    curves.push_back(dose_sweep(*ctx.jacobians, o));
  }
  ctx.record("schur", write_table(ctx.out / "schur", schur_table(curves), ctx.config.format));
}

void stage_graph(RunContext& ctx) {
  const json p = section(ctx.config, "graph");
  const int k = get_or(p, "k", 20);
  const ActivationTensor& act = *ctx.activations;
  std::vector<SignedGraph> graphs(act.S());
  parallel_for(static_cast<std::size_t>(act.S()),
               [&](std::size_t s) { graphs[s] = build_graph(zscore(act, static_cast<int>(s)), k); });
  for (int s = 0; s < act.S(); ++s) {
    const fs::path gp = ctx.out / "graphs" / (snapshot_name(s) + ".graph");
    write_graph(gp, graphs[s]);
    ctx.record("graph", gp);
  }
  ctx.graphs = std::move(graphs);
}

std::vector<SignedGraph> load_graph_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".graph") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no .graph files in " + dir.string());
  std::vector<SignedGraph> out;
  for (const auto& f : files) out.push_back(read_graph(f));
  return out;
}

void stage_community(RunContext& ctx) {
  const json p = section(ctx.config, "community");
  if (ctx.graphs.empty()) ctx.graphs = load_graph_dir(ctx.out / "graphs");
  const int S = static_cast<int>(ctx.graphs.size());
  LeidenOptions o;
  o.gamma_pos = get_or(p, "gamma", 0.001);
  o.gamma_neg = get_or(p, "gamma_neg", 0.0);
  o.restarts = get_or(p, "restarts", 5);
  o.max_iterations = get_or(p, "max_iterations", 10);
  const NmiNorm norm = parse_nmi_norm(get_or<std::string>(p, "nmi_norm", "arithmetic"));

  std::vector<Partition> parts(S);
  std::vector<ParticipationVector> pvs(S);
  parallel_for(static_cast<std::size_t>(S), [&](std::size_t s) {
    LeidenOptions so = o;
    so.seed = derive_seed(ctx.config.seed, {6, s});
    parts[s] = leiden_signed_cpm(ctx.graphs[s], so);
    pvs[s] = participation(ctx.graphs[s], parts[s]);
  });
  Table summary;
  summary.columns = {"snapshot", "n_communities", "non_degenerate_count", "objective", "defined_participation"};
  for (int s = 0; s < S; ++s) {
    const fs::path cp = ctx.out / "communities" / (snapshot_name(s) + ".json");
    write_file(cp, community_json(parts[s], pvs[s]).dump() + "\n");
    ctx.record("community", cp);
    summary.add({s, parts[s].n_communities(), parts[s].non_degenerate_count(), num(parts[s].objective),
                 static_cast<long long>(pvs[s].defined_count())});
  }
  ctx.record("community", write_table(ctx.out / "communities", summary, ctx.config.format));
  if (S >= 2) ctx.record("community", write_table(ctx.out / "nmi", nmi_table(nmi_matrix(parts, norm)), ctx.config.format));
  ctx.partitions = std::move(parts);
}

std::vector<Partition> load_partition_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Partition> out;
  for (const auto& f : files) {
    json j;
    try {
      j = json::parse(read_file(f));
    } catch (const json::exception& e) {
      throw ValidationError("community file " + f.string() + ": " + e.what());
    }
    out.push_back(partition_from_json(j));
  }
  return out;
}

void stage_stats(RunContext& ctx) {
  const json p = section(ctx.config, "stats");
  if (ctx.graphs.empty()) ctx.graphs = load_graph_dir(ctx.out / "graphs");
  if (ctx.partitions.empty()) ctx.partitions = load_partition_dir(ctx.out / "communities");
  StatsParams sp;
  sp.tests = get_or(p, "tests", sp.tests);
  sp.n_perm = get_or(p, "n_perm", sp.n_perm);
  sp.n_null = get_or(p, "n_null", sp.n_null);
  sp.n_perm_test3 = get_or(p, "n_perm_test3", sp.n_perm_test3);
  sp.tail_frac = get_or(p, "tail_frac", sp.tail_frac);
  sp.k = get_or(p, "k", default_alignment_k(ctx.jacobians->d()));
  sp.nmi_norm = parse_nmi_norm(get_or<std::string>(section(ctx.config, "community"), "nmi_norm", "arithmetic"));
  auto results = run_stats(*ctx.jacobians, ctx.graphs, ctx.partitions, sp, derive_seed(ctx.config.seed, {7}));
  ctx.record("stats", write_table(ctx.out / "stats", stats_table(results), ctx.config.format));
}

json report_impl(const fs::path& dir, std::vector<fs::path>* written);

void stage_report(RunContext& ctx) {
  std::vector<fs::path> written;
  report_impl(ctx.out, &written);
  for (const auto& w : written) ctx.record("report", w);
}

using StageFn = void (*)(RunContext&);

StageFn stage_fn(const std::string& name) {
  static const std::map<std::string, StageFn> table = {
      {"synth", stage_synth}, {"spectral", stage_spectral}, {"cumulative", stage_cumulative},
      {"schur", stage_schur}, {"graph", stage_graph},       {"community", stage_community},
      {"stats", stage_stats}, {"report", stage_report}};
  return table.at(name);
}

// Stages in one wave only read shared inputs and write disjoint files.
const std::vector<std::vector<std::string>> kWaves = {
    {"synth"}, {"spectral", "cumulative", "schur", "graph"}, {"community"}, {"stats"}, {"report"}};

void check_resolvable(const RunContext& ctx) {
  const RunConfig& c = ctx.config;
  for (const auto& p : {c.jacobians, c.activations})
    if (p && !fs::exists(*p)) throw ValidationError("input not found: " + p->string());
  const bool synth = ctx.has("synth");
  for (const char* s : {"spectral", "cumulative", "schur", "stats"})
    if (ctx.has(s) && !c.jacobians && !synth)
      throw ValidationError(std::string("stage '") + s + "' needs a Jacobian dump (inputs.jacobians or synth)");
  if (ctx.has("graph") && !c.activations && !synth)
    throw ValidationError("stage 'graph' needs an activation dump (inputs.activations or synth)");
  if ((ctx.has("community") || ctx.has("stats")) && !ctx.has("graph") && !fs::is_directory(ctx.out / "graphs"))
    throw ValidationError("stages 'community'/'stats' need graphs from the graph stage or " +
                          (ctx.out / "graphs").string());
  if (ctx.has("stats") && !ctx.has("community") && !fs::is_directory(ctx.out / "communities"))
    throw ValidationError("stage 'stats' needs partitions from the community stage or " +
                          (ctx.out / "communities").string());
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  return fs::relative(p, base).generic_string();
}

}  // namespace

json run(const RunConfig& config) {
  RunContext ctx{config, config.output_dir, config.jacobians, config.activations, {}, {}, {}, {}, {}, {}};
  check_resolvable(ctx);
  fs::create_directories(ctx.out);
  if (config.jacobians) ctx.jacobians = read_jacobians(*config.jacobians);
  if (config.activations) ctx.activations = read_activations(*config.activations);

  std::map<std::string, double> wall;
  for (const auto& wave : kWaves) {
    std::vector<std::string> todo;
    for (const auto& s : wave)
      if (ctx.has(s)) todo.push_back(s);
    if (todo.empty()) continue;
    std::vector<std::exception_ptr> errors(todo.size());
    std::vector<double> seconds(todo.size());
    auto exec = [&](std::size_t i) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        stage_fn(todo[i])(ctx);
      } catch (...) {
        errors[i] = std::current_exception();
      }
      seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    if (todo.size() == 1) {
      exec(0);
    } else {
      std::vector<std::thread> threads;
      for (std::size_t i = 0; i < todo.size(); ++i) threads.emplace_back(exec, i);
      for (auto& t : threads) t.join();
    }
    for (std::size_t i = 0; i < todo.size(); ++i) {
      wall[todo[i]] = seconds[i];
      if (!errors[i]) continue;
      try {
        std::rethrow_exception(errors[i]);
      } catch (const NumericalError& e) {
        throw NumericalError("stage '" + todo[i] + "' failed: " + e.what());
      } catch (const std::exception& e) {
        throw ValidationError("stage '" + todo[i] + "' failed: " + e.what());
      }
    }
  }

  ordered_json manifest;
  manifest["tool"] = "resjac";
  manifest["manifest_version"] = 1;
  manifest["config"] = ordered_json::parse(config.echo.dump());
  manifest["seed"] = config.seed;
  manifest["format"] = to_string(config.format);
  ordered_json inputs = ordered_json::object();
  if (config.jacobians) inputs["jacobians"] = {{"path", config.jacobians->string()}, {"sha256", sha256_file(*config.jacobians)}};
  if (config.activations)
    inputs["activations"] = {{"path", config.activations->string()}, {"sha256", sha256_file(*config.activations)}};
  manifest["inputs"] = inputs;
  ordered_json stages = ordered_json::array();
  std::map<std::string, std::string> hashes;
  for (const auto& name : kStageOrder) {
    if (!ctx.has(name)) continue;
    ordered_json st;
    st["name"] = name;
    st["wall_seconds"] = wall[name];
    std::vector<std::string> files;
    for (const auto& f : ctx.outputs[name]) {
      const std::string rel = relative_to(f, ctx.out);
      files.push_back(rel);
      hashes[rel] = sha256_file(f);
    }
    std::sort(files.begin(), files.end());
    st["outputs"] = files;
    stages.push_back(std::move(st));
  }
  manifest["stages"] = stages;
  ordered_json outs = ordered_json::object();
  for (const auto& [k, v] : hashes) outs[k] = v;
  manifest["outputs"] = outs;
  write_file(ctx.out / "run_manifest.json", manifest.dump(1) + "\n");
  return json::parse(manifest.dump());
}

// ---------------------------------------------------------------- report

namespace {

std::optional<fs::path> find_table(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".csv", ".json"}) {
    fs::path p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

json cell(const Table& t, std::size_t row, const std::string& col) {
  auto it = std::find(t.columns.begin(), t.columns.end(), col);
  if (it == t.columns.end()) return nullptr;
  return t.rows[row][static_cast<std::size_t>(it - t.columns.begin())];
}

int layer_of(const json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float()) return static_cast<int>(v.get<double>());
  return -1;
}

json report_impl(const fs::path& dir, std::vector<fs::path>* written) {
  const std::vector<std::string> tables = {"spectral", "cumulative", "schur", "communities", "stats"};
  std::map<std::string, Table> found;
  for (const auto& name : tables)
    if (auto p = find_table(dir, name)) found[name] = read_table(*p);
  if (found.empty()) throw ValidationError("report: no stage outputs in " + dir.string());

  ordered_json summary;
  ordered_json present = ordered_json::array(), missing = ordered_json::array();
  for (const auto& name : tables) (found.count(name) ? present : missing).push_back(name);
  summary["stages_present"] = present;
  summary["missing_stages"] = missing;

  // One row per layer joined across stages.
  const std::vector<std::pair<std::string, std::vector<std::string>>> layer_cols = {
      {"spectral", {"kappa", "participation_ratio", "frac_expanding", "spectral_radius", "self_alignment_J",
                    "self_alignment_R", "forward_alignment", "henrici", "residual_norm_ratio"}},
      {"cumulative", {"effective_rank", "log10_frobenius", "truncation_flag"}}};
  auto key_of = [](const std::string& stage) { return stage == "cumulative" ? "injection_layer" : "layer"; };
  std::set<int> layers;
  for (const auto& [stage, cols] : layer_cols)
    if (found.count(stage))
      for (std::size_t r = 0; r < found[stage].rows.size(); ++r) layers.insert(layer_of(cell(found[stage], r, key_of(stage))));
  std::map<int, std::map<std::string, json>> joined;
  for (const auto& [stage, cols] : layer_cols) {
    if (!found.count(stage)) continue;
    const Table& t = found[stage];
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const int l = layer_of(cell(t, r, key_of(stage)));
      for (const auto& c : cols) joined[l][stage == "cumulative" ? "cumulative_" + c : c] = cell(t, r, c);
    }
  }
  if (found.count("stats")) {
    const Table& t = found["stats"];
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const int l = layer_of(cell(t, r, "layer"));
      if (l < 0) continue;
      layers.insert(l);
      const std::string test = cell(t, r, "test").get<std::string>();
      joined[l][test + "_statistic"] = cell(t, r, "statistic");
      joined[l][test + "_p_value"] = cell(t, r, "p_value");
      joined[l][test + "_q_value"] = cell(t, r, "q_value");
      joined[l][test + "_significant"] = cell(t, r, "significant");
    }
  }

  Table layer_table;
  layer_table.columns.push_back("layer");
  for (const auto& [stage, cols] : layer_cols)
    for (const auto& c : cols) layer_table.columns.push_back(stage == "cumulative" ? "cumulative_" + c : c);
  for (const char* test : {"test2", "test3"})
    for (const char* f : {"_statistic", "_p_value", "_q_value", "_significant"})
      layer_table.columns.push_back(std::string(test) + f);
  layer_table.columns.push_back("missing_stages");
  std::string missing_list;
  for (const auto& m : missing) missing_list += (missing_list.empty() ? "" : ";") + m.get<std::string>();
  for (int l : layers) {
    std::vector<json> row = {l};
    for (std::size_t c = 1; c + 1 < layer_table.columns.size(); ++c) {
      auto it = joined[l].find(layer_table.columns[c]);
      row.push_back(it == joined[l].end() ? json(nullptr) : it->second);
    }
    row.push_back(missing_list);
    layer_table.add(std::move(row));
  }

  // Long format: one (x, y) point per row, keyed by figure axis.
  Table long_table;
  long_table.columns = {"source", "series", "x_name", "x", "y_name", "y"};
  if (found.count("spectral")) {
    const Table& t = found["spectral"];
    for (const char* m : {"kappa", "participation_ratio", "frac_expanding", "spectral_radius", "self_alignment_J",
                          "self_alignment_R", "henrici"})
      for (std::size_t r = 0; r < t.rows.size(); ++r)
        long_table.add({"spectral", m, "layer", cell(t, r, "layer"), m, cell(t, r, m)});
  }
  if (found.count("cumulative")) {
    const Table& t = found["cumulative"];
    for (const char* m : {"effective_rank", "log10_frobenius"})
      for (std::size_t r = 0; r < t.rows.size(); ++r)
        long_table.add({"cumulative", m, "injection_layer", cell(t, r, "injection_layer"), m, cell(t, r, m)});
  }
  ordered_json doses = ordered_json::array();
  if (found.count("schur")) {
    const Table& t = found["schur"];
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::string series = cell(t, r, "construction").get<std::string>() + "/" + cell(t, r, "mode").get<std::string>();
      for (const char* m : {"erank", "log10_frobenius", "henrici"})
        long_table.add({"schur", series, "dose", cell(t, r, "dose"), m, cell(t, r, m)});
      ordered_json rec;
      for (const auto& c : t.columns) rec[c] = ordered_json::parse(cell(t, r, c).dump());
      doses.push_back(std::move(rec));
    }
  }
  ordered_json tests = ordered_json::array();
  if (found.count("stats")) {
    const Table& t = found["stats"];
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const json layer = cell(t, r, "layer");
      const std::string series = cell(t, r, "test").get<std::string>() + "/" + cell(t, r, "measure").get<std::string>();
      if (!layer.is_null()) long_table.add({"stats", series, "layer", layer, "statistic", cell(t, r, "statistic")});
      ordered_json rec;
      for (const auto& c : t.columns) rec[c] = ordered_json::parse(cell(t, r, c).dump());
      tests.push_back(std::move(rec));
    }
  }
  ordered_json communities = ordered_json::array();
  if (found.count("communities")) {
    const Table& t = found["communities"];
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      ordered_json rec;
      for (const auto& c : t.columns) rec[c] = ordered_json::parse(cell(t, r, c).dump());
      communities.push_back(std::move(rec));
    }
  }
  if (fs::exists(dir / "cumulative_summary.json")) {
    json cs = json::parse(read_file(dir / "cumulative_summary.json"));
    summary["spearman_erank_radius"] = ordered_json::parse(cs["spearman_erank_radius"].dump());
  }
  ordered_json layer_records = ordered_json::parse(render_json(layer_table));
  summary["layers"] = layer_records;
  summary["doses"] = doses;
  summary["tests"] = tests;
  summary["communities"] = communities;

  const fs::path sj = dir / "summary.json";
  write_file(sj, summary.dump(1) + "\n");
  const fs::path sl = write_table(dir / "summary_layers", layer_table, Format::csv);
  const fs::path sg = write_table(dir / "summary_long", long_table, Format::csv);
  if (written) *written = {sj, sl, sg};
  if (found.count("schur")) {
    const fs::path sd = write_table(dir / "summary_doses", found["schur"], Format::csv);
    if (written) written->push_back(sd);
  }
  return json::parse(summary.dump());
}

}  // namespace

json report(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw ValidationError("report: not a directory: " + run_dir.string());
  if (!fs::exists(run_dir / "run_manifest.json"))
    throw ValidationError("report: no run_manifest.json in " + run_dir.string());
  return report_impl(run_dir, nullptr);
}

}  // namespace resjac
