// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "c2fnas/c2fnas.hpp"

using namespace c2fnas;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s  %-28s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Brute-force count of level traces from 0 with unit steps.
std::uint64_t brute_full_count(int n, int max_level) {
  std::uint64_t count = 0;
  std::vector<int> v(static_cast<std::size_t>(n), 0);
  while (true) {
    bool ok = v[0] == 0;
    for (std::size_t i = 1; ok && i < v.size(); ++i) ok = std::abs(v[i] - v[i - 1]) <= 1;
    count += ok;
    int i = n - 1;
    while (i >= 0 && v[static_cast<std::size_t>(i)] == max_level) v[static_cast<std::size_t>(i--)] = 0;
    if (i < 0) break;
    ++v[static_cast<std::size_t>(i)];
  }
  return count;
}

// ---- coarse-stage runs shared by two criteria ----

struct CoarseRun {
  std::uint64_t seed = 0;
  std::size_t best_rank = 0;  // codes scoring strictly higher than the returned best
  double seconds = 0;
  double final_target_share = 0;
  std::array<double, 4> quartile_means{};
};

std::vector<CoarseRun> coarse_runs() {
  static std::vector<CoarseRun> runs = [] {
    std::vector<CoarseRun> out;
    const SpaceSpec space{};
    const EvolutionConfig defaults{};
    const auto codes = enumerate_pruned(space);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      CoarseRun r;
      r.seed = seed;
      SurrogateSpec spec = default_surrogate(space);
      spec.seed = seed;
      const auto t0 = Clock::now();
      EvolutionConfig cfg = defaults;
      cfg.seed = seed;
      const auto model = kmeans_cluster(codes, cfg.k, seed);
      auto state = init_search(model, cfg);
      run_coarse_search(state, model, cfg, [&] {
        return std::unique_ptr<Evaluator>(std::make_unique<SurrogateEvaluator>(spec, space));
      }, nullptr);
      r.seconds = seconds_since(t0);

      const double best = best_model(state).score;
      for (const auto& c : codes) r.best_rank += surrogate_evaluate(spec, space, c).score > best;

      const int target_cluster = model.assignment[model.index_of(spec.target_code)];
      const auto rows = cluster_proportions(state, cfg.k);
      r.final_target_share = rows.back()[static_cast<std::size_t>(target_cluster)];
      for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t lo = rows.size() * q / 4, hi = rows.size() * (q + 1) / 4;
        double sum = 0;
        for (std::size_t t = lo; t < hi; ++t) sum += rows[t][static_cast<std::size_t>(target_cluster)];
        r.quartile_means[q] = sum / static_cast<double>(hi - lo);
      }
      out.push_back(r);
    }
    return out;
  }();
  return runs;
}

std::string journal_of(const JournalHeader& h, const ClusterModel& model, const EvaluatorFactory& factory,
                       std::optional<std::size_t> stop_after = std::nullopt, SearchState* out = nullptr) {
  std::ostringstream os;
  JournalWriter w(os);
  w.header(h);
  auto state = init_search(model, h.evolution);
  CoarseRunOptions opts;
  opts.stop_after = stop_after;
  run_coarse_search(state, model, h.evolution, factory, &w, opts);
  if (out) *out = state;
  return os.str();
}

ExternalConfig mock(const std::string& args, double timeout = 10.0) {
  return {std::string(MOCK_EVALUATOR_PATH) + " " + args, timeout, 10.0};
}

// Runs one request against a mock mode and records a complaint unless it throws E.
template <typename E>
void expect_error(const std::string& name, const std::string& args, double timeout, const EvaluationRequest& req,
                  std::vector<std::string>& bad) {
  try {
    ExternalSession s(mock(args, timeout));
    s.evaluate(req);
    bad.push_back(name + " (no error)");
  } catch (const E&) {
  } catch (const std::exception& e) {
    bad.push_back(name + " (" + e.what() + ")");
  }
}

}  // namespace

int main() {
  const SpaceSpec space{};

  report("pruned-space cardinality", [&] {
    const auto t0 = Clock::now();
    const auto codes = enumerate_pruned(space);
    const double s = seconds_since(t0);
    return Outcome{codes.size() == 924 && s < 1.0,
                   std::to_string(codes.size()) + " codes in " + fmt("%.4f s (need 924, < 1 s)", s)};
  });

  report("fine-space cardinality", [] {
    const auto n = op_space_size(12);
    return Outcome{n == 531441, "op_space_size(12) = " + std::to_string(n)};
  });

  report("full-space count", [] {
    const auto n = count_full_space(12, 3);
    bool agree = true;
    for (int cells = 1; cells <= 8; ++cells)
      for (int l = 0; l <= 3; ++l) agree &= count_full_space(cells, l) == brute_full_count(cells, l);
    // 2 significant figures of 2.9e4
    const bool two_sig = std::lround(static_cast<double>(n) / 1000.0) == 29;
    return Outcome{n == 28657 && agree && two_sig,
                   "count = " + std::to_string(n) + ", exhaustive n<=8 " + (agree ? "agrees" : "DISAGREES") +
                       ", rounds to 2.9e4: " + (two_sig ? "yes" : "no")};
  });

  report("coarse oracle (top 5%)", [] {
    const auto runs = coarse_runs();
    const std::size_t top = static_cast<std::size_t>(0.05 * 924);  // 46 codes
    int hits = 0;
    double slowest = 0;
    std::string ranks;
    for (const auto& r : runs) {
      hits += r.best_rank < top;
      slowest = std::max(slowest, r.seconds);
      ranks += (ranks.empty() ? "" : ",") + std::to_string(r.best_rank + 1);
    }
    return Outcome{hits >= 18 && slowest < 5.0, std::to_string(hits) + "/20 in top " + std::to_string(top) +
                                                   fmt(", slowest run %.3f s", slowest) + " (ranks " + ranks + ")"};
  });

  report("cluster proportions", [] {
    const auto runs = coarse_runs();
    int above = 0;
    std::array<double, 4> mean{};
    for (const auto& r : runs) {
      above += r.final_target_share > 1.0 / 8.0;
      for (std::size_t q = 0; q < 4; ++q) mean[q] += r.quartile_means[q] / static_cast<double>(runs.size());
    }
    const bool monotone = mean[0] <= mean[1] && mean[1] <= mean[2] && mean[2] <= mean[3];
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d/20 final share > 1/8; quartile means %.3f %.3f %.3f %.3f", above, mean[0],
                  mean[1], mean[2], mean[3]);
    return Outcome{above >= 18 && monotone, buf};
  });

  report("fine oracle", [&] {
    std::string detail;
    bool ok = true;
    for (int n : {2, 4, 6, 8}) {
      const SpaceSpec s = SpaceSpec::symmetric(n, 1, 1);
      SurrogateSpec spec = default_surrogate(s);
      spec.seed = static_cast<std::uint64_t>(n);
      FineSearchConfig cfg;
      cfg.supernet_iterations = 100;
      cfg.num_candidates = static_cast<int>(op_space_size(n));
      SurrogateEvaluator eval(spec, s);
      const auto ranked = random_search_rank(run_supernet_training(spec.target_code, cfg, eval), cfg, eval);
      double best = -1;
      for (std::uint64_t v = 0; v < op_space_size(n); ++v)
        best = std::max(best, surrogate_evaluate(spec, s, spec.target_code,
                                                 OpConfig::from_index(v, static_cast<std::size_t>(n))).score);
      ok &= ranked.front().score == best;
    }
    detail += std::string("exhaustive argmax n=2,4,6,8: ") + (ok ? "exact" : "MISSED");

    const auto spec = default_surrogate(space);
    FineSearchConfig cfg;
    cfg.supernet_iterations = 1000;
    SurrogateEvaluator eval(spec, space);
    const auto ranked = random_search_rank(run_supernet_training(spec.target_code, cfg, eval), cfg, eval);
    std::mt19937_64 gen(12345);
    std::vector<double> sample;
    for (int t = 0; t < 100000; ++t) {
      const auto ops = OpConfig::from_index(gen() % op_space_size(12), 12);
      sample.push_back(surrogate_evaluate(spec, space, spec.target_code, ops).score);
    }
    std::sort(sample.begin(), sample.end());
    const double p995 = sample[static_cast<std::size_t>(0.995 * (sample.size() - 1))];
    const bool top = ranked.front().score >= p995;
    char buf[128];
    std::snprintf(buf, sizeof buf, "; K=2000 best %.6f vs p99.5 %.6f", ranked.front().score, p995);
    return Outcome{ok && top, detail + buf};
  });

  report("uniform-path statistics", [] {
    constexpr long long kPaths = 30000;
    const auto paths = supernet_paths(12, kPaths, FineSearchConfig{}.seed);
    std::vector<std::array<long long, 3>> counts(12, {0, 0, 0});
    for (const auto& p : paths)
      for (std::size_t i = 0; i < 12; ++i) ++counts[i][static_cast<std::size_t>(p[i])];
    const double mean = kPaths / 3.0, bound = 3.0 * std::sqrt(kPaths * (1.0 / 3.0) * (2.0 / 3.0));
    double worst = 0;
    for (const auto& c : counts)
      for (auto v : c) worst = std::max(worst, std::abs(static_cast<double>(v) - mean));
    char buf[128];
    std::snprintf(buf, sizeof buf, "worst |count - N/3| = %.1f, 3 sigma = %.1f", worst, bound);
    return Outcome{worst <= bound, buf};
  });

  report("determinism and replay", [&] {
    const JournalHeader h{space, EvolutionConfig{8, 2, 0.2, 50, 7}, 7, 300};
    const auto model = build_cluster_model(h);
    const auto spec = default_surrogate(space);
    const EvaluatorFactory factory = [&] {
      return std::unique_ptr<Evaluator>(std::make_unique<SurrogateEvaluator>(spec, space));
    };
    SearchState live;
    const std::string a = journal_of(h, model, factory, std::nullopt, &live);
    const std::string b = journal_of(h, model, factory);
    std::istringstream in(a);
    const auto replayed = replay_journal(in);
    const std::string part = journal_of(h, model, factory, 20);
    std::istringstream pin(part);
    auto resumed = replay_journal(pin);
    std::ostringstream rest;
    JournalWriter w(rest, resumed.next_seq);
    run_coarse_search(resumed.state, resumed.model, h.evolution, factory, &w);
    const bool same = a == b, replay = replayed.state == live, resume = part + rest.str() == a;
    return Outcome{same && replay && resume, std::string("byte-identical ") + (same ? "yes" : "no") +
                                                 ", replay equal " + (replay ? "yes" : "no") +
                                                 ", kill-and-resume equal " + (resume ? "yes" : "no")};
  });

  report("clustering", [&] {
    const auto codes = enumerate_pruned(space);
    bool monotone = true, nonempty = true, deterministic = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto m = kmeans_cluster(codes, 8, seed);
      for (std::size_t i = 1; i < m.objective_history.size(); ++i)
        monotone &= m.objective_history[i] <= m.objective_history[i - 1];
      const auto sizes = m.sizes();
      nonempty &= sizes.size() == 8 && std::all_of(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 0; });
      const auto again = kmeans_cluster(codes, 8, seed);
      deterministic &= again.assignment == m.assignment && again.centroids == m.centroids;
    }
    return Outcome{monotone && nonempty && deterministic,
                   std::string("20 seeds: objective non-increasing ") + (monotone ? "yes" : "no") +
                       ", 8 non-empty " + (nonempty ? "yes" : "no") + ", deterministic " +
                       (deterministic ? "yes" : "no")};
  });

  report("arch builder", [&] {
    const auto all3d = OpConfig::uniform(12, OperationKind::kConv3d);
    std::size_t shaped = 0;
    for (const auto& code : enumerate_pruned(space)) {
      verify_shapes(materialize(code, all3d, space), {96, 96, 96});
      ++shaped;
    }
    LayerSpec a;
    a.kernel = {3, 3, 3};
    a.in_channels = 1;
    a.out_channels = 32;
    LayerSpec b;
    b.in_channels = b.out_channels = 1;
    b.normalized = false;
    LayerSpec xy, z;
    xy.kernel = {3, 3, 1};
    z.kernel = {1, 1, 3};
    xy.in_channels = xy.out_channels = z.in_channels = z.out_channels = 64;
    const std::uint64_t p3d = (64ULL * 64 * 9 + 64 + 128) + (64ULL * 64 * 3 + 64 + 128);
    const bool examples = layer_params(a) == 960 && layer_params(b) == 2 && layer_params(xy) + layer_params(z) == p3d;

    const TopologyCode reference{{1, 2, 3, 3, 3, 3, 3, 3, 2, 1, 0, 0}};
    const auto rows = scaling_grid(reference, all3d, space, default_multiplier_grid(), nullptr);
    const auto p1 = static_cast<double>(rows[3].params);
    const double r05 = static_cast<double>(rows[1].params) / p1 / 0.25;
    const double r20 = static_cast<double>(rows[7].params) / p1 / 4.0;
    const bool ratios = std::abs(r05 - 1.0) <= 0.05 && std::abs(r20 - 1.0) <= 0.05;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "%zu/924 shape-consistent at 96^3, param examples %s, %zu grid rows, ratio/m^2 %.4f (0.5) %.4f (2.0)",
                  shaped, examples ? "exact" : "WRONG", rows.size(), r05, r20);
    return Outcome{shaped == 924 && examples && rows.size() == 8 && ratios, buf};
  });

  report("dice properties", [] {
    const std::vector<std::uint8_t> y{1, 1, 0, 0}, disjoint{0, 0, 1, 1}, half{0, 1, 1, 0};
    const bool examples = dice_score(y, y) == 1.0 && dice_score(y, disjoint) == 0.0 && dice_score(y, half) == 0.5;
    std::mt19937_64 gen(99);
    bool props = true;
    for (int t = 0; t < 1000; ++t) {
      const std::size_t n = 1 + gen() % 1000;
      std::bernoulli_distribution on(static_cast<double>(gen() % 101) / 100.0);
      std::vector<std::uint8_t> p(n), q(n);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = on(gen);
        q[i] = on(gen);
      }
      const double d = dice_score(p, q);
      props &= d == dice_score(q, p) && d >= 0.0 && d <= 1.0;
    }
    return Outcome{examples && props, std::string("examples ") + (examples ? "exact" : "WRONG") +
                                          ", symmetric and bounded over 1000 pairs " + (props ? "yes" : "no")};
  });

  report("protocol", [] {
    EvaluationRequest req;
    req.code = TopologyCode{{1, 2, 3, 3, 3, 3, 3, 3, 2, 1, 0, 0}};
    std::vector<std::string> bad;
    {
      ExternalSession s(mock("--mode echo --score 0.5"));
      if (s.evaluate(req).score != 0.5) bad.push_back("echo");
    }
    expect_error<IdMismatchError>("id-mismatch", "--mode id-mismatch", 10.0, req, bad);
    expect_error<ScoreRangeError>("range", "--mode range", 10.0, req, bad);
    expect_error<TimeoutError>("timeout", "--mode hang", 0.5, req, bad);

    auto inner = std::make_unique<SurrogateEvaluator>(default_surrogate(SpaceSpec{}), SpaceSpec{});
    auto* raw = inner.get();
    CachingEvaluator cached(std::move(inner), std::make_shared<ResultCache>());
    cached.evaluate(req);
    const long long before = raw->calls();
    cached.evaluate(req);
    if (raw->calls() != before) bad.push_back("cache hit called the evaluator");

    std::string detail = "echo, id-mismatch, range, timeout, cache hit";
    for (const auto& b : bad) detail += "; failed: " + b;
    return Outcome{bad.empty(), detail};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
