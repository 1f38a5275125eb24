#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2fnas/errors.hpp"
#include "c2fnas/evaluation.hpp"
#include "c2fnas/operations.hpp"
#include "c2fnas/rng.hpp"
#include "c2fnas/topology.hpp"

namespace c2fnas {

struct FineSearchConfig {
  long long supernet_iterations = 40000;
  int num_candidates = 2000;
  std::uint64_t seed = 0;
  int eval_stride = 48;
  int paths_per_request = 1000;  // supernet paths shipped per train_supernet request

  void check() const {
    if (supernet_iterations < 0) throw ConfigError("fine: supernet_iterations must be >= 0");
    if (num_candidates < 1) throw ConfigError("fine: num_candidates must be >= 1");
    if (paths_per_request < 1) throw ConfigError("fine: paths_per_request must be >= 1");
  }

  // Also requires K distinct configurations to exist over `num_cells` cells.
  void check(std::size_t num_cells) const {
    check();
    if (num_cells <= 40 && static_cast<std::uint64_t>(num_candidates) > op_space_size(static_cast<int>(num_cells)))
      throw ConfigError("fine: num_candidates=" + std::to_string(num_candidates) + " exceeds the " +
                        std::to_string(op_space_size(static_cast<int>(num_cells))) + " configurations of " +
                        std::to_string(num_cells) + " cells");
  }
};

inline void to_json(nlohmann::json& j, const FineSearchConfig& c) {
  j = nlohmann::json{{"supernet_iterations", c.supernet_iterations},
                     {"num_candidates", c.num_candidates},
                     {"seed", c.seed},
                     {"eval_stride", c.eval_stride},
                     {"paths_per_request", c.paths_per_request}};
}

inline void from_json(const nlohmann::json& j, FineSearchConfig& c) {
  c = FineSearchConfig{};
  c.supernet_iterations = j.value("supernet_iterations", c.supernet_iterations);
  c.num_candidates = j.value("num_candidates", c.num_candidates);
  c.seed = j.value("seed", c.seed);
  c.eval_stride = j.value("eval_stride", c.eval_stride);
  c.paths_per_request = j.value("paths_per_request", c.paths_per_request);
}

// Independent RNG streams derived from the fine-stage seed.
inline constexpr std::uint64_t kPathStream = 1;
inline constexpr std::uint64_t kCandidateStream = 2;

// The per-iteration path sequence for supernet training; a function of seed and cell count.
inline std::vector<OpConfig> supernet_paths(std::size_t num_cells, long long iterations, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kPathStream));
  std::vector<OpConfig> paths;
  paths.reserve(static_cast<std::size_t>(iterations));
  for (long long i = 0; i < iterations; ++i) paths.push_back(sample_uniform_path(num_cells, rng));
  return paths;
}

// Result of supernet training: which topology, and the exact path log it was trained on.
struct SupernetHandle {
  std::string session;
  TopologyCode topology;
  std::uint64_t seed = 0;
  std::vector<OpConfig> paths;
  std::size_t requests = 0;
};

// Ships the seeded path sequence to the evaluator in train_supernet chunks. A failing
// evaluator surfaces as SessionError carrying how many chunks completed.
inline SupernetHandle run_supernet_training(const TopologyCode& topology, const FineSearchConfig& config,
                                            Evaluator& evaluator) {
  config.check(topology.size());
  SupernetHandle h;
  h.topology = topology;
  h.seed = config.seed;
  h.session = "supernet-" + std::to_string(mix64(config.seed ^ mix64(topology.levels.size())) & 0xffffffffULL);
  h.paths = supernet_paths(topology.size(), config.supernet_iterations, config.seed);

  const auto chunk = static_cast<std::size_t>(config.paths_per_request);
  for (std::size_t off = 0; off < h.paths.size(); off += chunk) {
    EvaluationRequest req;
    req.id = static_cast<long long>(h.requests) + 1;
    req.command = Command::kTrainSupernet;
    req.code = topology;
    req.paths.assign(h.paths.begin() + static_cast<std::ptrdiff_t>(off),
                     h.paths.begin() + static_cast<std::ptrdiff_t>(std::min(off + chunk, h.paths.size())));
    req.budget = {config.supernet_iterations, config.eval_stride};
    try {
      evaluator.evaluate(req);
    } catch (const EvaluationError& e) {
      throw SessionError(std::string("supernet training failed: ") + e.what(), h.session, h.requests, e.payload());
    }
    ++h.requests;
  }
  return h;
}

struct RankedCandidate {
  OpConfig ops;
  double score = 0.0;
  std::size_t sample_index = 0;
};

// K distinct configurations in seeded sample order. Dense requests (K > half the space)
// shuffle the full space; sparse ones rejection-sample.
inline std::vector<OpConfig> sample_candidates(std::size_t num_cells, int k, std::uint64_t seed) {
  const std::uint64_t space = op_space_size(static_cast<int>(num_cells));
  const auto want = static_cast<std::uint64_t>(k);
  if (want > space) throw ConfigError("fine: more candidates than configurations");
  Rng rng(derive_seed(seed, kCandidateStream));
  std::vector<OpConfig> out;
  out.reserve(static_cast<std::size_t>(want));
  if (want * 2 > space) {
    std::vector<std::uint64_t> all(static_cast<std::size_t>(space));
    for (std::uint64_t i = 0; i < space; ++i) all[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = 0; i < static_cast<std::size_t>(want); ++i)
      std::swap(all[i], all[i + rng.uniform_index(all.size() - i)]);
    for (std::size_t i = 0; i < static_cast<std::size_t>(want); ++i)
      out.push_back(OpConfig::from_index(all[i], num_cells));
    return out;
  }
  std::unordered_set<std::uint64_t> seen;
  while (out.size() < static_cast<std::size_t>(want)) {
    OpConfig c = sample_uniform_path(num_cells, rng);
    if (seen.insert(c.index()).second) out.push_back(std::move(c));
  }
  return out;
}

// Scores K distinct sampled configurations with the shared supernet weights and returns them
// best first (earlier sample first on ties). `make_evaluator` is called once per worker;
// scores depend only on the candidate, so the order is the same for any worker count.
inline std::vector<RankedCandidate> random_search_rank(const SupernetHandle& handle, const FineSearchConfig& config,
                                                       const EvaluatorFactory& make_evaluator, int workers = 1) {
  const std::size_t cells = handle.topology.size();
  config.check(cells);
  const auto candidates = sample_candidates(cells, config.num_candidates, config.seed);

  std::vector<RankedCandidate> ranked(candidates.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;

  const auto worker = [&] {
    try {
      auto evaluator = make_evaluator();
      for (std::size_t i = next++; i < candidates.size(); i = next++) {
        {
          std::lock_guard lock(mu);
          if (error) return;
        }
        EvaluationRequest req;
        req.id = static_cast<long long>(i) + 1;
        req.command = Command::kEvaluateCandidate;
        req.code = handle.topology;
        req.ops = candidates[i];
        req.budget = {0, config.eval_stride};
        try {
          ranked[i] = {candidates[i], evaluator->evaluate(req).score, i};
        } catch (const EvaluationError& e) {
          throw EvaluationError("candidate #" + std::to_string(i) + " " +
                                    nlohmann::json(ops_to_strings(candidates[i])).dump() + ": " + e.what(),
                                e.payload());
        }
      }
    } catch (...) {
      std::lock_guard lock(mu);
      if (!error) error = std::current_exception();
    }
  };

  const int n = std::max(1, std::min<int>(workers, static_cast<int>(candidates.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedCandidate& a, const RankedCandidate& b) { return a.score > b.score; });
  return ranked;
}

inline std::vector<RankedCandidate> random_search_rank(const SupernetHandle& handle, const FineSearchConfig& config,
                                                       Evaluator& evaluator) {
  return random_search_rank(handle, config, [&] {
    struct Ref final : Evaluator {
      Evaluator& e;
      explicit Ref(Evaluator& e) : e(e) {}
      EvaluationResult evaluate(const EvaluationRequest& r) override { return e.evaluate(r); }
    };
    return std::unique_ptr<Evaluator>(std::make_unique<Ref>(evaluator));
  });
}

}  // namespace c2fnas
