#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2fnas/errors.hpp"
#include "c2fnas/operations.hpp"
#include "c2fnas/rng.hpp"
#include "c2fnas/topology.hpp"

namespace c2fnas {

enum class Command { kEvaluateTopology, kTrainSupernet, kEvaluateCandidate };

inline const char* command_name(Command c) {
  switch (c) {
    case Command::kEvaluateTopology: return "evaluate_topology";
    case Command::kTrainSupernet: return "train_supernet";
    case Command::kEvaluateCandidate: return "evaluate_candidate";
  }
  return "?";
}

inline Command parse_command(const std::string& s) {
  if (s == "evaluate_topology") return Command::kEvaluateTopology;
  if (s == "train_supernet") return Command::kTrainSupernet;
  if (s == "evaluate_candidate") return Command::kEvaluateCandidate;
  throw ValidationError("unknown command \"" + s + "\"");
}

struct Budget {
  long long iterations = 0;
  int stride = 16;
  friend bool operator==(const Budget&, const Budget&) = default;
};

struct EvaluationRequest {
  long long id = 0;
  Command command = Command::kEvaluateTopology;
  TopologyCode code;
  std::optional<OpConfig> ops;
  std::vector<OpConfig> paths;  // train_supernet only
  Budget budget;
  std::optional<double> multiplier;  // channel scaling rows only
};

struct EvaluationResult {
  long long id = 0;
  double score = 0.0;
  std::map<std::string, double> metrics;
  double duration = 0.0;  // seconds
};

// Wire encoding, field order fixed.
inline nlohmann::ordered_json request_to_wire(const EvaluationRequest& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["cmd"] = command_name(r.command);
  j["code"] = r.code.levels;
  if (r.ops) j["ops"] = ops_to_strings(*r.ops);
  if (r.command == Command::kTrainSupernet) {
    auto paths = nlohmann::ordered_json::array();
    for (const auto& p : r.paths) paths.push_back(ops_to_strings(p));
    j["paths"] = std::move(paths);
  }
  j["budget"] = {{"iterations", r.budget.iterations}, {"stride", r.budget.stride}};
  if (r.multiplier) j["multiplier"] = *r.multiplier;
  return j;
}

inline EvaluationRequest request_from_wire(const nlohmann::json& j) {
  EvaluationRequest r;
  r.id = j.at("id").get<long long>();
  r.command = parse_command(j.at("cmd").get<std::string>());
  r.code.levels = j.at("code").get<std::vector<int>>();
  if (j.contains("ops")) r.ops = ops_from_strings(j["ops"].get<std::vector<std::string>>());
  if (j.contains("paths"))
    for (const auto& p : j["paths"]) r.paths.push_back(ops_from_strings(p.get<std::vector<std::string>>()));
  if (j.contains("budget")) {
    r.budget.iterations = j["budget"].value("iterations", 0LL);
    r.budget.stride = j["budget"].value("stride", 16);
  }
  if (j.contains("multiplier")) r.multiplier = j["multiplier"].get<double>();
  return r;
}

inline nlohmann::ordered_json result_to_wire(const EvaluationResult& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["score"] = r.score;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.metrics) metrics[k] = v;
  j["metrics"] = std::move(metrics);
  return j;
}

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual EvaluationResult evaluate(const EvaluationRequest& request) = 0;
};

// One evaluator per worker; sessions are not shared between threads.
using EvaluatorFactory = std::function<std::unique_ptr<Evaluator>()>;

// Synthetic fitness with a planted optimum, standing in for training.
struct SurrogateSpec {
  TopologyCode target_code;
  OpConfig target_ops;
  double alpha = 1.0;   // code-distance weight
  double beta = 0.05;   // ops-hamming weight
  double sigma = 0.01;  // noise amplitude
  std::uint64_t seed = 0;

  void check() const {
    if (alpha < 0 || beta < 0 || sigma < 0) throw ConfigError("surrogate: alpha, beta, sigma must be >= 0");
    if (target_ops.size() != target_code.size())
      throw LengthMismatch("surrogate target_ops", target_code.size(), target_ops.size());
  }
};

inline void to_json(nlohmann::json& j, const SurrogateSpec& s) {
  j = nlohmann::json{{"target_code", s.target_code}, {"target_ops", ops_to_strings(s.target_ops)},
                     {"alpha", s.alpha},             {"beta", s.beta},
                     {"sigma", s.sigma},             {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SurrogateSpec& s) {
  s = SurrogateSpec{};
  s.target_code = j.at("target_code").get<TopologyCode>();
  if (j.contains("target_ops"))
    s.target_ops = ops_from_strings(j["target_ops"].get<std::vector<std::string>>());
  else
    s.target_ops = OpConfig::uniform(s.target_code.size(), OperationKind::kConv3d);
  s.alpha = j.value("alpha", s.alpha);
  s.beta = j.value("beta", s.beta);
  s.sigma = j.value("sigma", s.sigma);
  s.seed = j.value("seed", s.seed);
}

// Deterministic perturbation in [-sigma, sigma] keyed by (seed, code, ops).
inline double surrogate_noise(const SurrogateSpec& spec, const TopologyCode& code, const OpConfig& ops) {
  if (spec.sigma == 0.0) return 0.0;
  std::uint64_t h = mix64(spec.seed);
  for (int l : code.levels) h = mix64(h ^ static_cast<std::uint64_t>(l + 1));
  h = mix64(h ^ 0x5bd1e995ULL);
  for (auto op : ops.ops) h = mix64(h ^ static_cast<std::uint64_t>(op));
  const double unit = static_cast<double>(h >> 11) * 0x1.0p-53;  // [0, 1)
  return spec.sigma * (2.0 * unit - 1.0);
}

inline double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

// score = clamp01(1 - alpha * d(code, target)/d_max - beta * hamming(ops, target_ops)/n + noise)
// with d_max = distance_scale(space). Missing ops mean all-3D.
inline EvaluationResult surrogate_evaluate(const SurrogateSpec& spec, const SpaceSpec& space,
                                           const TopologyCode& code,
                                           const std::optional<OpConfig>& ops = std::nullopt) {
  require_valid(code, space);
  const OpConfig coloring = ops ? *ops : OpConfig::uniform(code.size(), OperationKind::kConv3d);
  if (coloring.size() != code.size()) throw LengthMismatch("surrogate ops", code.size(), coloring.size());

  const double d_max = distance_scale(space);
  const double d = code_distance(code, spec.target_code);
  const double h = static_cast<double>(hamming(coloring, spec.target_ops));
  const double n = static_cast<double>(code.size());
  const double code_term = d_max > 0 ? spec.alpha * d / d_max : 0.0;
  const double ops_term = spec.beta * h / n;
  const double noise = surrogate_noise(spec, code, coloring);

  EvaluationResult r;
  r.score = clamp01(1.0 - code_term - ops_term + noise);
  r.metrics = {{"code_distance", d}, {"ops_hamming", h}, {"noise", noise}};
  return r;
}

class SurrogateEvaluator final : public Evaluator {
 public:
  SurrogateEvaluator(SurrogateSpec spec, SpaceSpec space) : spec_(std::move(spec)), space_(space) {
    spec_.check();
    require_valid(spec_.target_code, space_);
  }

  EvaluationResult evaluate(const EvaluationRequest& request) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    if (request.command == Command::kTrainSupernet) {
      require_valid(request.code, space_);
      EvaluationResult r;
      r.id = request.id;
      r.metrics["paths"] = static_cast<double>(request.paths.size());
      return r;
    }
    auto r = surrogate_evaluate(spec_, space_, request.code, request.ops);
    r.id = request.id;
    return r;
  }

  const SurrogateSpec& spec() const noexcept { return spec_; }
  const SpaceSpec& space() const noexcept { return space_; }
  long long calls() const noexcept { return calls_.load(); }

 private:
  SurrogateSpec spec_;
  SpaceSpec space_;
  std::atomic<long long> calls_{0};
};

// Dice-Sorensen coefficient of two binary masks on the same grid (nonzero = foreground).
// Two empty masks agree perfectly and score 1.
inline double dice_score(std::span<const std::uint8_t> prediction, std::span<const std::uint8_t> truth) {
  if (prediction.size() != truth.size())
    throw ShapeError("dice_score: grid mismatch (" + std::to_string(prediction.size()) + " vs " +
                     std::to_string(truth.size()) + " voxels)");
  std::size_t y = 0, z = 0, both = 0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const bool p = prediction[i] != 0;
    const bool t = truth[i] != 0;
    y += p;
    z += t;
    both += p && t;
  }
  if (y + z == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(y + z);
}

}  // namespace c2fnas
