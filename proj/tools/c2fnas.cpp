// c2fnas: coarse-to-fine architecture search driver.
//
//   c2fnas enumerate [--cells N --downs D --ups U] [--list FILE]
//   c2fnas coarse    [--config FILE] [--out DIR] [--seed S] [--workers N] [--resume DIR]
//   c2fnas fine      --topology FILE [--out DIR] [--candidates K]
//   c2fnas export    --code JSON | --topology FILE [--ops JSON] [--multiplier M]
//   c2fnas scale     --code JSON | --topology FILE [--ops JSON] [--grid a,b,c]
//   c2fnas report    --out DIR
//
// Any config field can be overridden with --dotted.name VALUE (e.g. --evolution.budget 30).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "c2fnas/c2fnas.hpp"

namespace fs = std::filesystem;
using namespace c2fnas;

namespace {

struct CommonOptions {
  std::string config_file;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> cells, downs, ups;
  std::string evaluator_command;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config_file, "JSON run configuration");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--seed", o.seed, "seed for clustering, evolution and fine search");
  app->add_option("--workers", o.workers, "concurrent evaluator sessions");
  app->add_option("--cells", o.cells, "number of cells");
  app->add_option("--downs", o.downs, "number of down-sampling cells");
  app->add_option("--ups", o.ups, "number of up-sampling cells");
  app->add_option("--evaluator", o.evaluator_command, "external evaluator command (default: surrogate)");
  app->allow_extras();
}

// Config file, then dotted overrides, then the convenience flags.
RunConfig build_config(const CommonOptions& o, const std::vector<std::string>& extras) {
  nlohmann::json doc = o.config_file.empty() ? nlohmann::json::object() : read_json_file(o.config_file);
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string key = extras[i];
    if (key.rfind("--", 0) != 0) throw ConfigError("unexpected argument \"" + key + "\"");
    key = key.substr(2);
    std::string value;
    if (auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("missing value for --" + key);
      value = extras[++i];
    }
    apply_override(doc, key, value);
  }
  if (o.cells) doc["space"]["num_cells"] = *o.cells;
  if (o.downs) {
    doc["space"]["num_down"] = *o.downs;
    if (!doc["space"].contains("max_level")) doc["space"]["max_level"] = *o.downs;
  }
  if (o.ups) doc["space"]["num_up"] = *o.ups;
  if (o.seed) {
    doc["evolution"]["seed"] = *o.seed;
    doc["clustering"]["seed"] = *o.seed;
    doc["fine"]["seed"] = *o.seed;
  }
  if (o.workers) doc["workers"] = *o.workers;
  if (!o.out.empty()) doc["output_dir"] = o.out;
  if (!o.evaluator_command.empty()) {
    doc["evaluator"]["kind"] = "external";
    doc["evaluator"]["command"] = o.evaluator_command;
  }
  RunConfig c = config_from_json(doc);
  c.check();
  return c;
}

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

TopologyCode load_topology(const std::string& file, const std::string& inline_code) {
  if (!inline_code.empty()) {
    try {
      return nlohmann::json::parse(inline_code).get<TopologyCode>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("--code: " + std::string(e.what()));
    }
  }
  if (file.empty()) throw ConfigError("a topology is required (--topology FILE or --code JSON)");
  if (!fs::exists(file)) throw ConfigError("topology file not found: " + file);
  const auto j = read_json_file(file);
  try {
    return (j.is_object() ? j.at("code") : j).get<TopologyCode>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(file + ": " + e.what());
  }
}

OpConfig load_ops(const std::string& text, std::size_t cells) {
  if (text.empty()) return OpConfig::uniform(cells, OperationKind::kConv3d);
  nlohmann::json j;
  if (fs::exists(text)) {
    j = read_json_file(text);
  } else {
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("--ops: " + std::string(e.what()));
    }
  }
  if (j.is_object()) j = j.at("ops");
  OpConfig ops = ops_from_strings(j.get<std::vector<std::string>>());
  if (ops.size() != cells) throw LengthMismatch("ops", cells, ops.size());
  return ops;
}

void write_coarse_outputs(const fs::path& dir, const SearchState& state, int k) {
  if (!state.history.empty()) {
    const auto& best = best_model(state);
    nlohmann::ordered_json b;
    b["code"] = best.code.levels;
    b["score"] = best.score;
    b["cluster"] = best.cluster;
    b["seq"] = best.seq;
    b["evaluations"] = state.history.size();
    write_text_file(dir / "best_topology.json", b.dump(2) + "\n");
  }
  std::ostringstream csv;
  csv << "eval_index";
  for (int c = 0; c < k; ++c) csv << ",cluster_" << c;
  csv << '\n';
  const auto rows = cluster_proportions(state, k);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    csv << (t + 1);
    for (double v : rows[t]) csv << ',' << fixed6(v);
    csv << '\n';
  }
  write_text_file(dir / "cluster_proportions.csv", csv.str());
}

int cmd_enumerate(const CommonOptions& o, const std::vector<std::string>& extras, const std::string& list) {
  const RunConfig c = build_config(o, extras);
  const auto codes = enumerate_pruned(c.space);
  std::cout << "pruned=" << codes.size() << '\n'
            << "full=" << count_full_space(c.space) << '\n'
            << "op_space=" << op_space_size(c.space.num_cells) << '\n';
  if (!list.empty()) {
    std::ostringstream os;
    for (const auto& code : codes) os << nlohmann::json(code.levels).dump() << '\n';
    write_text_file(list, os.str());
  }
  return 0;
}

int cmd_coarse(const CommonOptions& o, const std::vector<std::string>& extras, const std::string& resume,
               std::optional<std::size_t> stop_after) {
  RunConfig c;
  fs::path dir;
  ReplayedSearch run;
  std::ofstream journal_file;

  if (!resume.empty()) {
    dir = resume;
    CommonOptions ro = o;
    ro.config_file = (dir / "config.json").string();
    ro.out = dir.string();
    c = build_config(ro, extras);
    const auto journal_path = dir / "journal.jsonl";
    run = replay_journal_file(journal_path.string());
    if (!(run.header == c.journal_header())) throw ConfigError("journal header does not match " + ro.config_file);
    fs::resize_file(journal_path, run.valid_bytes);
    journal_file.open(journal_path, std::ios::binary | std::ios::app);
    std::cerr << "resuming: " << run.state.history.size() << " evaluations replayed, " << run.state.in_flight.size()
              << " in flight\n";
  } else {
    c = build_config(o, extras);
    dir = c.output_dir;
    fs::create_directories(dir);
    write_text_file(dir / "config.json", config_to_json(c).dump(2) + "\n");
    run.header = c.journal_header();
    run.model = build_cluster_model(run.header);
    run.state = init_search(run.model, c.evolution);
    write_text_file(dir / "clusters.json", nlohmann::json(run.model).dump() + "\n");
    journal_file.open(dir / "journal.jsonl", std::ios::binary | std::ios::trunc);
  }
  if (!journal_file) throw ConfigError("cannot open journal in " + dir.string());

  JournalWriter journal(journal_file, run.next_seq);
  if (resume.empty()) journal.header(run.header);

  CoarseRunOptions opts;
  opts.workers = c.workers;
  opts.budget = {c.evaluator.coarse_iterations, c.evaluator.coarse_stride};
  opts.stop_after = stop_after;
  try {
    run_coarse_search(run.state, run.model, c.evolution, make_evaluator_factory(c), &journal, opts);
  } catch (...) {
    write_coarse_outputs(dir, run.state, c.evolution.k);
    throw;
  }
  write_coarse_outputs(dir, run.state, c.evolution.k);

  std::cout << "evaluations=" << run.state.history.size() << '\n';
  if (!run.state.history.empty()) {
    const auto& best = best_model(run.state);
    std::cout << "best=" << best.code.str() << " score=" << fixed6(best.score) << " cluster=" << best.cluster << '\n';
  }
  return 0;
}

int cmd_fine(const CommonOptions& o, const std::vector<std::string>& extras, const std::string& topology_file,
             std::optional<int> candidates, std::optional<long long> iterations) {
  RunConfig c;
  {
    CommonOptions fo = o;
    std::vector<std::string> ex = extras;
    if (candidates) {
      ex.push_back("--fine.num_candidates");
      ex.push_back(std::to_string(*candidates));
    }
    if (iterations) {
      ex.push_back("--fine.supernet_iterations");
      ex.push_back(std::to_string(*iterations));
    }
    c = build_config(fo, ex);
  }
  const TopologyCode topology = load_topology(topology_file, "");
  require_valid(topology, c.space);
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);

  const auto factory = make_evaluator_factory(c);
  SupernetHandle handle;
  {
    auto evaluator = factory();
    handle = run_supernet_training(topology, c.fine, *evaluator);
  }
  {
    std::ofstream paths(dir / "supernet_paths.jsonl", std::ios::binary | std::ios::trunc);
    for (const auto& p : handle.paths) paths << nlohmann::json(ops_to_strings(p)).dump() << '\n';
  }
  const auto ranked = random_search_rank(handle, c.fine, factory, c.workers);

  std::ofstream out(dir / "ranked.jsonl", std::ios::binary | std::ios::trunc);
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    nlohmann::ordered_json line;
    line["rank"] = r + 1;
    line["ops"] = ops_to_strings(ranked[r].ops);
    line["score"] = ranked[r].score;
    out << line.dump() << '\n';
  }
  nlohmann::ordered_json best;
  best["code"] = topology.levels;
  best["ops"] = ops_to_strings(ranked.front().ops);
  best["score"] = ranked.front().score;
  write_text_file(dir / "best_ops.json", best.dump(2) + "\n");
  std::cout << "candidates=" << ranked.size() << '\n'
            << "best_ops=" << nlohmann::json(ops_to_strings(ranked.front().ops)).dump()
            << " score=" << fixed6(ranked.front().score) << '\n';
  return 0;
}

int cmd_export(const CommonOptions& o, const std::vector<std::string>& extras, const std::string& topology_file,
               const std::string& code_text, const std::string& ops_text, double multiplier) {
  const RunConfig c = build_config(o, extras);
  const TopologyCode code = load_topology(topology_file, code_text);
  const OpConfig ops = load_ops(ops_text, code.size());
  const auto ir = materialize(code, ops, c.space, multiplier, c.arch);
  verify_shapes(ir, c.input_extent);
  const auto costs = cost_report(ir, c.input_extent);

  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  write_text_file(dir / "architecture.json", ir_to_json(ir, c.input_extent).dump(2) + "\n");
  write_text_file(dir / "costs.json", cost_to_json(costs).dump(2) + "\n");
  write_text_file(dir / "architecture.dot", ir_to_dot(ir));
  std::cout << "layers=" << ir.layers.size() << '\n'
            << "params=" << costs.params << '\n'
            << "flops=" << costs.flops << '\n';
  return 0;
}

int cmd_scale(const CommonOptions& o, const std::vector<std::string>& extras, const std::string& topology_file,
              const std::string& code_text, const std::string& ops_text, const std::vector<double>& grid) {
  RunConfig c = build_config(o, extras);
  if (!grid.empty()) c.multipliers = grid;
  const TopologyCode code = load_topology(topology_file, code_text);
  const OpConfig ops = load_ops(ops_text, code.size());
  auto evaluator = make_evaluator_factory(c)();
  const auto rows = scaling_grid(code, ops, c.space, c.multipliers, evaluator.get(), c.arch, c.input_extent,
                                 {c.evaluator.coarse_iterations, c.fine.eval_stride});

  std::ostringstream csv;
  csv << "multiplier,params,flops,score,error\n";
  bool failed = false;
  for (const auto& r : rows) {
    csv << r.multiplier << ',' << r.params << ',' << r.flops << ',' << (r.score ? fixed6(*r.score) : "") << ','
        << r.error << '\n';
    failed |= !r.error.empty();
  }
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  write_text_file(dir / "scaling.csv", csv.str());
  std::cout << csv.str();
  return failed ? 3 : 0;
}

int cmd_report(const std::string& out) {
  const fs::path dir = out;
  if (!fs::is_directory(dir)) throw ConfigError("no such output directory: " + out);
  bool any = false;
  if (fs::exists(dir / "best_topology.json")) {
    const auto b = read_json_file(dir / "best_topology.json");
    std::cout << "coarse: best topology " << b.at("code").dump() << " score " << fixed6(b.at("score").get<double>())
              << " (cluster " << b.at("cluster") << ", " << b.value("evaluations", 0) << " evaluations)\n";
    any = true;
  }
  if (fs::exists(dir / "cluster_proportions.csv")) {
    std::ifstream in(dir / "cluster_proportions.csv");
    std::string header, line, last;
    std::getline(in, header);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');
      auto& row = rows.emplace_back();
      while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    }
    if (!rows.empty()) {
      std::cout << "cluster proportions (mean over evaluation quartiles):\n";
      const std::size_t k = rows.front().size();
      for (std::size_t c = 0; c < k; ++c) {
        std::cout << "  cluster_" << c << ":";
        for (int q = 0; q < 4; ++q) {
          const std::size_t lo = rows.size() * static_cast<std::size_t>(q) / 4;
          const std::size_t hi = std::max(lo + 1, rows.size() * static_cast<std::size_t>(q + 1) / 4);
          double sum = 0;
          for (std::size_t t = lo; t < hi && t < rows.size(); ++t) sum += rows[t][c];
          std::cout << ' ' << fixed6(sum / static_cast<double>(hi - lo));
        }
        std::cout << "  final " << fixed6(rows.back()[c]) << '\n';
      }
    }
    any = true;
  }
  if (fs::exists(dir / "best_ops.json")) {
    const auto b = read_json_file(dir / "best_ops.json");
    std::cout << "fine: best ops " << b.at("ops").dump() << " score " << fixed6(b.at("score").get<double>()) << '\n';
    any = true;
  }
  if (fs::exists(dir / "costs.json")) {
    const auto j = read_json_file(dir / "costs.json");
    std::cout << "costs: params " << j.at("params") << ", flops " << j.at("flops") << " at input "
              << j.at("input_extent").dump() << '\n';
    any = true;
  }
  if (!any) throw ConfigError("nothing to report in " + out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coarse-to-fine architecture search"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string list_file, resume, topology_file, code_text, ops_text;
  std::optional<std::size_t> stop_after;
  std::optional<int> candidates;
  std::optional<long long> iterations;
  double multiplier = 1.0;
  std::vector<double> grid;

  auto* enumerate = app.add_subcommand("enumerate", "count (and optionally list) the search spaces");
  add_common(enumerate, common);
  enumerate->add_option("--list", list_file, "write every pruned code, one JSON array per line");

  auto* coarse = app.add_subcommand("coarse", "cluster the topology space and run the evolutionary search");
  add_common(coarse, common);
  coarse->add_option("--resume", resume, "continue the run stored in this directory");
  coarse->add_option("--stop-after", stop_after, "stop dispatching after this many evaluations");

  auto* fine = app.add_subcommand("fine", "one-shot operation search on a fixed topology");
  add_common(fine, common);
  fine->add_option("--topology", topology_file, "best_topology.json or a JSON code array")->required();
  fine->add_option("--candidates", candidates, "number of sampled candidates (K)");
  fine->add_option("--iterations", iterations, "supernet training iterations");

  auto* exp = app.add_subcommand("export", "materialize an architecture and its cost report");
  add_common(exp, common);
  exp->add_option("--topology", topology_file, "best_topology.json or a JSON code array");
  exp->add_option("--code", code_text, "topology code as JSON");
  exp->add_option("--ops", ops_text, "operations as JSON array or best_ops.json (default all 3d)");
  exp->add_option("--multiplier", multiplier, "channel multiplier");
  exp->add_option("--format", [](const CLI::results_t& r) { return r.size() == 1 && r[0] == "json"; },
                  "export format (json)");

  auto* scale = app.add_subcommand("scale", "channel-multiplier grid search");
  add_common(scale, common);
  scale->add_option("--topology", topology_file, "best_topology.json or a JSON code array");
  scale->add_option("--code", code_text, "topology code as JSON");
  scale->add_option("--ops", ops_text, "operations as JSON array or best_ops.json (default all 3d)");
  scale->add_option("--grid", grid, "multipliers (default 0.25..2.0 step 0.25)")->delimiter(',');

  auto* report = app.add_subcommand("report", "summarize an output directory");
  std::string report_dir;
  report->add_option("--out", report_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*enumerate) return cmd_enumerate(common, enumerate->remaining(), list_file);
    if (*coarse) return cmd_coarse(common, coarse->remaining(), resume, stop_after);
    if (*fine) return cmd_fine(common, fine->remaining(), topology_file, candidates, iterations);
    if (*exp) return cmd_export(common, exp->remaining(), topology_file, code_text, ops_text, multiplier);
    if (*scale) return cmd_scale(common, scale->remaining(), topology_file, code_text, ops_text, grid);
    if (*report) return cmd_report(report_dir);
  } catch (const c2fnas::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
