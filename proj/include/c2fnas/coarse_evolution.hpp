#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <fstream>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2fnas/clustering.hpp"
#include "c2fnas/errors.hpp"
#include "c2fnas/evaluation.hpp"
#include "c2fnas/rng.hpp"
#include "c2fnas/topology.hpp"

namespace c2fnas {

struct EvolutionConfig {
  int k = 8;
  int init_per_cluster = 2;
  double epsilon = 0.2;  // chance of replacing the top-ranked cluster by a random one
  int budget = 50;       // total evaluations, initial ones included
  std::uint64_t seed = 0;

  void check() const {
    if (k < 1) throw ConfigError("evolution: k must be >= 1");
    if (init_per_cluster < 1) throw ConfigError("evolution: init_per_cluster must be >= 1");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("evolution: epsilon must lie in [0, 1]");
    if (budget < k * init_per_cluster)
      throw ConfigError("evolution: budget " + std::to_string(budget) + " is smaller than k * init_per_cluster = " +
                        std::to_string(k * init_per_cluster));
  }

  friend bool operator==(const EvolutionConfig&, const EvolutionConfig&) = default;
};

inline void to_json(nlohmann::json& j, const EvolutionConfig& c) {
  j = nlohmann::json{{"k", c.k},
                     {"init_per_cluster", c.init_per_cluster},
                     {"epsilon", c.epsilon},
                     {"budget", c.budget},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, EvolutionConfig& c) {
  c = EvolutionConfig{};
  c.k = j.value("k", c.k);
  c.init_per_cluster = j.value("init_per_cluster", c.init_per_cluster);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.budget = j.value("budget", c.budget);
  c.seed = j.value("seed", c.seed);
}

struct HistoryEntry {
  TopologyCode code;
  double score = 0.0;
  int cluster = 0;
  std::size_t seq = 0;     // position in the history
  std::size_t member = 0;  // population index
  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

enum class MemberStatus : std::uint8_t { kUntouched, kQueued, kInFlight, kDone };

// Scheduler state: history, per-cluster trained sets, outstanding work and the RNG.
struct SearchState {
  std::vector<HistoryEntry> history;
  std::vector<std::vector<std::size_t>> trained;  // per cluster, indices into history
  std::deque<std::size_t> queued;                 // initial samples not yet handed out
  std::vector<std::size_t> in_flight;             // dispatched, awaiting a result
  std::vector<MemberStatus> status;               // per population member
  Rng rng;
  std::size_t budget = 0;

  std::size_t pending() const noexcept { return queued.size() + in_flight.size(); }
  bool complete() const noexcept { return history.size() >= budget; }

  friend bool operator==(const SearchState&, const SearchState&) = default;
};

// Draws init_per_cluster distinct members from every cluster and queues them in a seeded
// random order.
inline SearchState init_search(const ClusterModel& model, const EvolutionConfig& config) {
  config.check();
  if (model.k != config.k)
    throw ConfigError("evolution: cluster model has k=" + std::to_string(model.k) + ", config expects " +
                      std::to_string(config.k));
  SearchState s;
  s.rng = Rng(config.seed);
  s.budget = static_cast<std::size_t>(config.budget);
  s.trained.resize(static_cast<std::size_t>(config.k));
  s.status.assign(model.population.size(), MemberStatus::kUntouched);

  std::vector<std::size_t> picks;
  for (int c = 0; c < config.k; ++c) {
    auto members = model.members(c);
    if (members.size() < static_cast<std::size_t>(config.init_per_cluster))
      throw ConfigError("evolution: cluster " + std::to_string(c) + " has " + std::to_string(members.size()) +
                        " members, fewer than init_per_cluster=" + std::to_string(config.init_per_cluster));
    for (int t = 0; t < config.init_per_cluster; ++t) {
      const std::size_t j = static_cast<std::size_t>(t) + s.rng.uniform_index(members.size() - static_cast<std::size_t>(t));
      std::swap(members[static_cast<std::size_t>(t)], members[j]);
      picks.push_back(members[static_cast<std::size_t>(t)]);
    }
  }
  for (std::size_t i = picks.size(); i > 1; --i) std::swap(picks[i - 1], picks[s.rng.uniform_index(i)]);
  for (auto p : picks) {
    s.queued.push_back(p);
    s.status[p] = MemberStatus::kQueued;
  }
  return s;
}

struct ClusterChoice {
  std::vector<double> sampled;  // score of the trained model drawn from each cluster
  std::vector<int> ranking;     // best first, lower id on ties
  int chosen = 0;
  bool explored = false;        // chosen by the epsilon draw
};

// One ranking round: draw a trained model from every cluster, rank clusters by its score,
// and with probability epsilon replace the winner with a uniformly drawn cluster.
// Requires every cluster to hold at least one completed evaluation.
inline ClusterChoice select_cluster(SearchState& state, const EvolutionConfig& config) {
  ClusterChoice ch;
  const auto k = static_cast<std::size_t>(config.k);
  ch.sampled.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const auto& m = state.trained[c];
    ch.sampled[c] = state.history[m[state.rng.uniform_index(m.size())]].score;
  }
  ch.ranking.resize(k);
  for (std::size_t c = 0; c < k; ++c) ch.ranking[c] = static_cast<int>(c);
  std::stable_sort(ch.ranking.begin(), ch.ranking.end(), [&](int a, int b) {
    return ch.sampled[static_cast<std::size_t>(a)] > ch.sampled[static_cast<std::size_t>(b)];
  });
  ch.chosen = ch.ranking.front();
  if (state.rng.uniform01() < config.epsilon) {
    ch.chosen = static_cast<int>(state.rng.uniform_index(k));
    ch.explored = true;
  }
  return ch;
}

struct Assignment {
  enum class Status { kDispatch, kWait, kExhausted };
  Status status = Status::kExhausted;
  TopologyCode code;
  int cluster = -1;
  std::size_t member = 0;
  bool from_init = false;

  explicit operator bool() const noexcept { return status == Status::kDispatch; }
};

// Picks the next topology for an idle worker and marks it in flight. Initial samples are
// served first; kWait means some cluster still lacks a completed result while others are
// in flight.
inline Assignment next_assignment(SearchState& state, const ClusterModel& model, const EvolutionConfig& config) {
  Assignment a;
  auto dispatch = [&](std::size_t member) {
    state.status[member] = MemberStatus::kInFlight;
    state.in_flight.push_back(member);
    a.status = Assignment::Status::kDispatch;
    a.member = member;
    a.code = model.population[member];
    a.cluster = model.assignment[member];
  };

  if (!state.queued.empty()) {
    const std::size_t member = state.queued.front();
    state.queued.pop_front();
    dispatch(member);
    a.from_init = true;
    return a;
  }
  if (state.history.size() + state.in_flight.size() >= state.budget) return a;  // exhausted
  for (const auto& m : state.trained)
    if (m.empty()) {
      a.status = state.in_flight.empty() ? Assignment::Status::kExhausted : Assignment::Status::kWait;
      return a;
    }

  const auto checkpoint = state.rng.draws();
  const ClusterChoice ch = select_cluster(state, config);
  std::vector<int> order{ch.chosen};
  for (int c : ch.ranking)
    if (c != ch.chosen) order.push_back(c);

  for (int c : order) {
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < model.assignment.size(); ++i)
      if (model.assignment[i] == c && state.status[i] == MemberStatus::kUntouched) open.push_back(i);
    if (open.empty()) continue;
    dispatch(open[state.rng.uniform_index(open.size())]);
    return a;
  }
  state.rng.restore(checkpoint);  // nothing left anywhere; leave no trace
  return a;
}

// Completes an in-flight topology. Throws ProtocolError for anything not in flight.
inline const HistoryEntry& record_result(SearchState& state, const ClusterModel& model, const TopologyCode& code,
                                         double score) {
  const std::size_t member = model.index_of(code);
  if (member == ClusterModel::npos) throw ProtocolError("result for unknown topology " + code.str());
  switch (state.status[member]) {
    case MemberStatus::kInFlight: break;
    case MemberStatus::kDone: throw ProtocolError("duplicate result for topology " + code.str());
    default: throw ProtocolError("result for topology " + code.str() + " that was never dispatched");
  }
  if (state.complete()) throw ProtocolError("result after the evaluation budget was reached");
  state.in_flight.erase(std::find(state.in_flight.begin(), state.in_flight.end(), member));
  state.status[member] = MemberStatus::kDone;

  HistoryEntry e{code, score, model.assignment[member], state.history.size(), member};
  state.trained[static_cast<std::size_t>(e.cluster)].push_back(state.history.size());
  state.history.push_back(std::move(e));
  return state.history.back();
}

// Highest score in the history, earliest entry on ties.
inline const HistoryEntry& best_model(const SearchState& state) {
  if (state.history.empty()) throw ProtocolError("best_model: empty history");
  const HistoryEntry* best = &state.history.front();
  for (const auto& e : state.history)
    if (e.score > best->score) best = &e;
  return *best;
}

// Row t holds each cluster's share of the first t+1 history entries.
inline std::vector<std::vector<double>> cluster_proportions(const SearchState& state, int k) {
  std::vector<std::vector<double>> rows;
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (std::size_t t = 0; t < state.history.size(); ++t) {
    counts[static_cast<std::size_t>(state.history[t].cluster)] += 1.0;
    auto& row = rows.emplace_back(counts);
    for (auto& v : row) v /= static_cast<double>(t + 1);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Journal: one JSON object per line. The first line is a header that pins everything
// needed to rebuild the cluster model and the initial state; the rest are
// dispatch/complete events in the order the scheduler applied them.

struct JournalHeader {
  SpaceSpec space;
  EvolutionConfig evolution;
  std::uint64_t cluster_seed = 0;
  int cluster_iterations = 300;

  friend bool operator==(const JournalHeader&, const JournalHeader&) = default;
};

inline nlohmann::ordered_json header_to_json(const JournalHeader& h) {
  nlohmann::ordered_json j;
  j["event"] = "header";
  j["version"] = 1;
  j["space"] = {{"num_cells", h.space.num_cells},
                {"num_down", h.space.num_down},
                {"num_up", h.space.num_up},
                {"max_level", h.space.max_level}};
  j["evolution"] = {{"k", h.evolution.k},
                    {"init_per_cluster", h.evolution.init_per_cluster},
                    {"epsilon", h.evolution.epsilon},
                    {"budget", h.evolution.budget},
                    {"seed", h.evolution.seed}};
  j["clustering"] = {{"seed", h.cluster_seed}, {"max_iterations", h.cluster_iterations}};
  return j;
}

inline JournalHeader header_from_json(const nlohmann::json& j) {
  if (j.value("event", "") != "header") throw ProtocolError("journal: first line is not a header");
  if (j.value("version", 0) != 1) throw ProtocolError("journal: unsupported version");
  JournalHeader h;
  h.space = j.at("space").get<SpaceSpec>();
  h.evolution = j.at("evolution").get<EvolutionConfig>();
  h.cluster_seed = j.at("clustering").at("seed").get<std::uint64_t>();
  h.cluster_iterations = j.at("clustering").at("max_iterations").get<int>();
  return h;
}

inline ClusterModel build_cluster_model(const JournalHeader& h) {
  return kmeans_cluster(enumerate_pruned(h.space), h.evolution.k, h.cluster_seed, h.cluster_iterations);
}

class JournalWriter {
 public:
  explicit JournalWriter(std::ostream& out, std::size_t next_seq = 0) : out_(out), seq_(next_seq) {}

  void header(const JournalHeader& h) { emit(header_to_json(h)); }

  void dispatch(const Assignment& a, const SearchState& s) {
    nlohmann::ordered_json j;
    j["seq"] = seq_++;
    j["event"] = "dispatch";
    j["code"] = a.code.levels;
    j["cluster"] = a.cluster;
    j["rng_checkpoint"] = s.rng.draws();
    emit(j);
  }

  void complete(const HistoryEntry& e, const SearchState& s) {
    nlohmann::ordered_json j;
    j["seq"] = seq_++;
    j["event"] = "complete";
    j["code"] = e.code.levels;
    j["cluster"] = e.cluster;
    j["score"] = e.score;
    j["rng_checkpoint"] = s.rng.draws();
    emit(j);
  }

  std::size_t next_seq() const noexcept { return seq_; }

 private:
  void emit(const nlohmann::ordered_json& j) { out_ << j.dump() << '\n' << std::flush; }

  std::ostream& out_;
  std::size_t seq_;
};

struct ReplayedSearch {
  JournalHeader header;
  ClusterModel model;
  SearchState state;
  std::size_t next_seq = 0;
  std::size_t valid_bytes = 0;  // length of the well-formed journal prefix
};

// Rebuilds the scheduler from a journal by re-running every recorded operation and checking
// it reproduces the recorded code, cluster and RNG position. A torn final line (crash while
// writing) is dropped.
inline ReplayedSearch replay_journal(std::istream& in) {
  ReplayedSearch r;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    const bool terminated = !in.eof();
    if (line.empty()) {
      r.valid_bytes += terminated ? 1 : 0;
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      if (!terminated) break;
      throw ProtocolError("journal line " + std::to_string(lineno) + " is not valid JSON");
    }
    if (!terminated) break;  // last record was never fully written
    const auto fail = [&](const std::string& why) {
      throw ProtocolError("journal line " + std::to_string(lineno) + ": " + why);
    };

    if (!have_header) {
      r.header = header_from_json(j);
      r.model = build_cluster_model(r.header);
      r.state = init_search(r.model, r.header.evolution);
      have_header = true;
    } else {
      if (j.at("seq").get<std::size_t>() != r.next_seq) fail("sequence gap");
      const TopologyCode code{j.at("code").get<std::vector<int>>()};
      const std::string event = j.at("event").get<std::string>();
      if (event == "dispatch") {
        const Assignment a = next_assignment(r.state, r.model, r.header.evolution);
        if (!a || a.code != code) fail("dispatch of " + code.str() + " does not match the scheduler");
      } else if (event == "complete") {
        const auto& e = record_result(r.state, r.model, code, j.at("score").get<double>());
        if (e.cluster != j.at("cluster").get<int>()) fail("cluster mismatch");
      } else {
        fail("unknown event \"" + event + "\"");
      }
      if (j.at("rng_checkpoint").get<std::uint64_t>() != r.state.rng.draws()) fail("rng checkpoint mismatch");
      ++r.next_seq;
    }
    r.valid_bytes += line.size() + 1;
  }
  if (!have_header) throw ProtocolError("journal is empty");
  return r;
}

inline ReplayedSearch replay_journal_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open journal " + path);
  return replay_journal(in);
}

// ---------------------------------------------------------------------------

struct CoarseRunOptions {
  int workers = 1;
  Budget budget{20000, 16};
  std::optional<std::size_t> stop_after;  // stop dispatching once this many results exist
};

// Drives the scheduler to its budget with `options.workers` evaluator sessions. Each worker
// asks for an assignment, evaluates it outside the lock, then records it; the journal is
// written under the same lock. Topologies left in flight by an earlier interrupted run are
// evaluated first. On an evaluator failure the remaining workers stop and the first error
// is rethrown; the journal stays resumable.
inline void run_coarse_search(SearchState& state, const ClusterModel& model, const EvolutionConfig& config,
                              const EvaluatorFactory& make_evaluator, JournalWriter* journal,
                              const CoarseRunOptions& options = {}) {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::size_t> redo(state.in_flight.begin(), state.in_flight.end());
  std::exception_ptr error;
  long long request_id = 0;

  const auto worker = [&] {
    std::unique_ptr<Evaluator> evaluator;
    try {
      evaluator = make_evaluator();
    } catch (...) {
      std::lock_guard lock(mu);
      if (!error) error = std::current_exception();
      cv.notify_all();
      return;
    }
    while (true) {
      EvaluationRequest req;
      {
        std::unique_lock lock(mu);
        Assignment a;
        while (true) {
          if (error) return;
          if (!redo.empty()) {
            a.status = Assignment::Status::kDispatch;
            a.member = redo.front();
            a.code = model.population[a.member];
            redo.pop_front();
            break;
          }
          if (options.stop_after && state.history.size() + state.in_flight.size() >= *options.stop_after) return;
          a = next_assignment(state, model, config);
          if (a.status == Assignment::Status::kDispatch) {
            if (journal) journal->dispatch(a, state);
            break;
          }
          if (a.status == Assignment::Status::kExhausted) return;
          cv.wait(lock);
        }
        req.id = ++request_id;
        req.command = Command::kEvaluateTopology;
        req.code = a.code;
        req.budget = options.budget;
      }
      try {
        const EvaluationResult res = evaluator->evaluate(req);
        std::lock_guard lock(mu);
        const auto& e = record_result(state, model, req.code, res.score);
        if (journal) journal->complete(e, state);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
      cv.notify_all();
    }
  };

  const int n = std::max(1, options.workers);
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace c2fnas
