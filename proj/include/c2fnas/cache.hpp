#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "c2fnas/evaluation.hpp"

namespace c2fnas {

// Key over everything that determines a result: command, code, ops, budget hints,
// multiplier. The request id is not part of it. train_supernet requests are never cached.
inline std::string cache_key(const EvaluationRequest& r) {
  nlohmann::ordered_json j;
  j["cmd"] = command_name(r.command);
  j["code"] = r.code.levels;
  if (r.ops) j["ops"] = ops_to_strings(*r.ops);
  j["budget"] = {{"iterations", r.budget.iterations}, {"stride", r.budget.stride}};
  if (r.multiplier) j["multiplier"] = *r.multiplier;
  return j.dump();
}

// Thread-safe key -> result store, optionally persisted as JSON lines {key, result}.
// Identical keys written twice keep the last value.
class ResultCache {
 public:
  ResultCache() = default;

  explicit ResultCache(std::filesystem::path file, std::ostream& log = std::cerr) : file_(std::move(file)) {
    load(log);
  }

  std::optional<EvaluationResult> find(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void store(const std::string& key, const EvaluationResult& result) {
    std::lock_guard lock(mu_);
    entries_[key] = result;
    if (file_.empty()) return;
    nlohmann::ordered_json line;
    line["key"] = key;
    line["result"] = result_to_wire(result);
    line["result"]["duration"] = result.duration;
    std::ofstream out(file_, std::ios::app);
    out << line.dump() << '\n';
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  const std::filesystem::path& file() const noexcept { return file_; }

 private:
  void load(std::ostream& log) {
    if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
    std::ifstream in(file_);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0, bad = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        EvaluationResult r;
        const auto& res = j.at("result");
        r.id = res.value("id", 0LL);
        r.score = res.at("score").get<double>();
        if (res.contains("metrics")) r.metrics = res["metrics"].get<std::map<std::string, double>>();
        r.duration = res.value("duration", 0.0);
        if (r.score < 0.0 || r.score > 1.0) throw std::out_of_range("score");
        entries_[j.at("key").get<std::string>()] = std::move(r);
      } catch (const std::exception&) {
        ++bad;
      }
    }
    if (bad)
      log << "warning: ignored " << bad << " corrupt line(s) in result cache " << file_.string()
          << "; affected results will be recomputed\n";
  }

  mutable std::mutex mu_;
  std::filesystem::path file_;
  std::unordered_map<std::string, EvaluationResult> entries_;
};

// Default cache file: $C2F_CACHE_DIR/results.jsonl, else `fallback_dir`/results.jsonl.
inline std::filesystem::path default_cache_file(const std::filesystem::path& fallback_dir) {
  if (const char* dir = std::getenv("C2F_CACHE_DIR"); dir && *dir)
    return std::filesystem::path(dir) / "results.jsonl";
  return fallback_dir / "results.jsonl";
}

// Serves repeated requests from a shared cache without touching the wrapped evaluator.
class CachingEvaluator final : public Evaluator {
 public:
  CachingEvaluator(std::unique_ptr<Evaluator> inner, std::shared_ptr<ResultCache> cache)
      : inner_(std::move(inner)), cache_(std::move(cache)) {}

  EvaluationResult evaluate(const EvaluationRequest& request) override {
    if (request.command == Command::kTrainSupernet) return inner_->evaluate(request);
    const std::string key = cache_key(request);
    if (auto hit = cache_->find(key)) {
      ++hits_;
      hit->id = request.id;
      return *hit;
    }
    auto result = inner_->evaluate(request);
    cache_->store(key, result);
    result.id = request.id;
    return result;
  }

  long long hits() const noexcept { return hits_; }

 private:
  std::unique_ptr<Evaluator> inner_;
  std::shared_ptr<ResultCache> cache_;
  long long hits_ = 0;
};

}  // namespace c2fnas
