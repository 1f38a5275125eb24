#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2fnas/arch_builder.hpp"
#include "c2fnas/cache.hpp"
#include "c2fnas/coarse_evolution.hpp"
#include "c2fnas/errors.hpp"
#include "c2fnas/evaluation.hpp"
#include "c2fnas/external_evaluator.hpp"
#include "c2fnas/fine_search.hpp"
#include "c2fnas/topology.hpp"

namespace c2fnas {

struct EvaluatorSettings {
  std::string kind = "surrogate";  // or "external"
  std::optional<SurrogateSpec> surrogate;
  std::string command;
  double timeout_seconds = 600.0;
  long long coarse_iterations = 20000;
  int coarse_stride = 16;
  bool cache = true;  // external evaluators only
};

struct RunConfig {
  SpaceSpec space;
  EvolutionConfig evolution;
  std::uint64_t cluster_seed = 0;
  int cluster_iterations = 300;
  FineSearchConfig fine;
  EvaluatorSettings evaluator;
  BuildOptions arch;
  Extent input_extent{96, 96, 96};
  std::vector<double> multipliers = default_multiplier_grid();
  int workers = 1;
  std::string output_dir = "c2fnas_run";

  JournalHeader journal_header() const { return {space, evolution, cluster_seed, cluster_iterations}; }

  void check() const {
    space.check();
    evolution.check();
    fine.check();
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (evaluator.kind == "external" && evaluator.command.empty())
      throw ConfigError("evaluator.command is required for the external evaluator");
    if (evaluator.kind != "external" && evaluator.kind != "surrogate")
      throw ConfigError("evaluator.kind must be \"surrogate\" or \"external\"");
    if (evaluator.timeout_seconds <= 0) throw ConfigError("evaluator.timeout_s must be positive");
  }
};

// Planted optimum used when the config names none: the middle member of the space, with
// a repeating 3d/p3d/2d coloring.
inline SurrogateSpec default_surrogate(const SpaceSpec& space) {
  SurrogateSpec s;
  const auto codes = enumerate_pruned(space);
  s.target_code = codes[codes.size() / 2];
  for (int i = 0; i < space.num_cells; ++i) s.target_ops.ops.push_back(kAllOperations[static_cast<std::size_t>(i) % 3]);
  return s;
}

inline SurrogateSpec surrogate_spec(const RunConfig& c) {
  return c.evaluator.surrogate ? *c.evaluator.surrogate : default_surrogate(c.space);
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["space"] = {{"num_cells", c.space.num_cells},
                {"num_down", c.space.num_down},
                {"num_up", c.space.num_up},
                {"max_level", c.space.max_level}};
  j["evolution"] = {{"k", c.evolution.k},
                    {"init_per_cluster", c.evolution.init_per_cluster},
                    {"epsilon", c.evolution.epsilon},
                    {"budget", c.evolution.budget},
                    {"seed", c.evolution.seed}};
  j["clustering"] = {{"seed", c.cluster_seed}, {"max_iterations", c.cluster_iterations}};
  j["fine"] = {{"supernet_iterations", c.fine.supernet_iterations},
               {"num_candidates", c.fine.num_candidates},
               {"seed", c.fine.seed},
               {"eval_stride", c.fine.eval_stride},
               {"paths_per_request", c.fine.paths_per_request}};
  nlohmann::ordered_json ev;
  ev["kind"] = c.evaluator.kind;
  if (c.evaluator.kind == "surrogate") {
    const auto s = surrogate_spec(c);
    ev["surrogate"] = {{"target_code", s.target_code.levels},
                       {"target_ops", ops_to_strings(s.target_ops)},
                       {"alpha", s.alpha},
                       {"beta", s.beta},
                       {"sigma", s.sigma},
                       {"seed", s.seed}};
  }
  ev["command"] = c.evaluator.command;
  ev["timeout_s"] = c.evaluator.timeout_seconds;
  ev["coarse_iterations"] = c.evaluator.coarse_iterations;
  ev["coarse_stride"] = c.evaluator.coarse_stride;
  ev["cache"] = c.evaluator.cache;
  j["evaluator"] = std::move(ev);
  j["arch"] = {{"base_filters", c.arch.base_filters},
               {"num_classes", c.arch.num_classes},
               {"input_channels", c.arch.input_channels},
               {"input_extent", c.input_extent},
               {"multipliers", c.multipliers}};
  j["workers"] = c.workers;
  j["output_dir"] = c.output_dir;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("space")) c.space = j["space"].get<SpaceSpec>();
    if (j.contains("evolution")) c.evolution = j["evolution"].get<EvolutionConfig>();
    if (j.contains("clustering")) {
      c.cluster_seed = j["clustering"].value("seed", c.cluster_seed);
      c.cluster_iterations = j["clustering"].value("max_iterations", c.cluster_iterations);
    }
    if (j.contains("fine")) c.fine = j["fine"].get<FineSearchConfig>();
    if (j.contains("evaluator")) {
      const auto& e = j["evaluator"];
      c.evaluator.kind = e.value("kind", c.evaluator.kind);
      if (e.contains("surrogate") && e["surrogate"].contains("target_code")) {
        c.evaluator.surrogate = e["surrogate"].get<SurrogateSpec>();
      } else if (e.contains("surrogate")) {
        // tuning knobs without a target: keep the default target
        auto s = default_surrogate(c.space);
        auto patch = nlohmann::json(s);
        patch.update(e["surrogate"]);
        c.evaluator.surrogate = patch.get<SurrogateSpec>();
      }
      c.evaluator.command = e.value("command", c.evaluator.command);
      c.evaluator.timeout_seconds = e.value("timeout_s", c.evaluator.timeout_seconds);
      c.evaluator.coarse_iterations = e.value("coarse_iterations", c.evaluator.coarse_iterations);
      c.evaluator.coarse_stride = e.value("coarse_stride", c.evaluator.coarse_stride);
      c.evaluator.cache = e.value("cache", c.evaluator.cache);
    }
    if (j.contains("arch")) {
      const auto& a = j["arch"];
      c.arch.base_filters = a.value("base_filters", c.arch.base_filters);
      c.arch.num_classes = a.value("num_classes", c.arch.num_classes);
      c.arch.input_channels = a.value("input_channels", c.arch.input_channels);
      c.input_extent = a.value("input_extent", c.input_extent);
      c.multipliers = a.value("multipliers", c.multipliers);
    }
    c.workers = j.value("workers", c.workers);
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

// Sets `dotted.key` in a config document. The value is parsed as JSON when possible
// (numbers, arrays, booleans), otherwise taken as a string. Unknown keys are rejected.
inline void apply_override(nlohmann::json& doc, const std::string& dotted, const std::string& value) {
  const nlohmann::json known = nlohmann::json::parse(config_to_json(RunConfig{}).dump());
  std::string pointer;
  std::stringstream ss(dotted);
  for (std::string part; std::getline(ss, part, '.');) pointer += "/" + part;
  const nlohmann::json::json_pointer ptr(pointer);

  bool ok = known.contains(ptr);
  if (!ok) {
    // surrogate fields are not in the default document when no target is set
    static const std::vector<std::string> surrogate_keys = {"target_code", "target_ops", "alpha", "beta", "sigma", "seed"};
    for (const auto& k : surrogate_keys) ok |= dotted == "evaluator.surrogate." + k;
  }
  if (!ok) throw ConfigError("unknown config key \"" + dotted + "\"");

  nlohmann::json v;
  try {
    v = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    v = value;
  }
  doc[ptr] = std::move(v);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

// Evaluator sessions for a run: the surrogate, or one child process per worker behind a
// shared persistent cache.
inline EvaluatorFactory make_evaluator_factory(const RunConfig& c) {
  if (c.evaluator.kind == "surrogate") {
    auto spec = surrogate_spec(c);
    auto space = c.space;
    return [spec, space] { return std::unique_ptr<Evaluator>(std::make_unique<SurrogateEvaluator>(spec, space)); };
  }
  ExternalConfig ext{c.evaluator.command, c.evaluator.timeout_seconds};
  std::shared_ptr<ResultCache> cache;
  if (c.evaluator.cache)
    cache = std::make_shared<ResultCache>(default_cache_file(std::filesystem::path(c.output_dir) / "cache"));
  return [ext, cache]() -> std::unique_ptr<Evaluator> {
    auto session = std::make_unique<ExternalSession>(ext);
    if (!cache) return session;
    return std::make_unique<CachingEvaluator>(std::move(session), cache);
  };
}

}  // namespace c2fnas
