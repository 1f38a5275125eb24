#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2fnas/errors.hpp"
#include "c2fnas/rng.hpp"
#include "c2fnas/topology.hpp"

namespace c2fnas {

// K-means partition of a topology population. `assignment` is parallel to `population`.
struct ClusterModel {
  int k = 0;
  std::vector<TopologyCode> population;
  std::vector<std::vector<double>> centroids;
  std::vector<int> assignment;
  // Sum of squared distances to the assigned centroid after each Lloyd iteration.
  std::vector<double> objective_history;
  int iterations = 0;

  std::size_t dimension() const { return centroids.empty() ? 0 : centroids.front().size(); }

  std::vector<std::size_t> members(int cluster) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == cluster) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out(static_cast<std::size_t>(k), 0);
    for (int c : assignment) ++out[static_cast<std::size_t>(c)];
    return out;
  }

  // Population index of a code, or npos.
  std::size_t index_of(const TopologyCode& code) const {
    if (index_.size() != population.size()) {
      index_.clear();
      for (std::size_t i = 0; i < population.size(); ++i) index_.emplace(population[i], i);
    }
    auto it = index_.find(code);
    return it == index_.end() ? npos : it->second;
  }

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

 private:
  mutable std::map<TopologyCode, std::size_t> index_;
};

namespace detail {

inline double squared_distance(const std::vector<int>& code, const std::vector<double>& centroid) {
  double s = 0.0;
  for (std::size_t i = 0; i < code.size(); ++i) {
    const double d = static_cast<double>(code[i]) - centroid[i];
    s += d * d;
  }
  return s;
}

inline int nearest(const std::vector<std::vector<double>>& centroids, const std::vector<int>& code) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(code, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

inline double objective(const ClusterModel& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.population.size(); ++i)
    s += squared_distance(m.population[i].levels,
                          m.centroids[static_cast<std::size_t>(m.assignment[i])]);
  return s;
}

inline void recompute_centroids(ClusterModel& m) {
  const std::size_t dim = m.population.front().size();
  std::vector<std::vector<double>> sums(static_cast<std::size_t>(m.k), std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(static_cast<std::size_t>(m.k), 0);
  for (std::size_t i = 0; i < m.population.size(); ++i) {
    const auto c = static_cast<std::size_t>(m.assignment[i]);
    ++counts[c];
    for (std::size_t d = 0; d < dim; ++d) sums[c][d] += m.population[i][d];
  }
  for (std::size_t c = 0; c < sums.size(); ++c) {
    if (!counts[c]) continue;  // kept as-is; repaired before this is reached
    for (std::size_t d = 0; d < dim; ++d) m.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
  }
}

// Moves the point farthest from its centroid (taken from a cluster with >1 member) into
// each empty cluster. Returns true when anything moved.
inline bool repair_empty(ClusterModel& m) {
  bool moved = false;
  for (int c = 0; c < m.k; ++c) {
    auto sizes = m.sizes();
    if (sizes[static_cast<std::size_t>(c)] != 0) continue;
    std::size_t far = ClusterModel::npos;
    double far_d = -1.0;
    for (std::size_t i = 0; i < m.population.size(); ++i) {
      const auto owner = static_cast<std::size_t>(m.assignment[i]);
      if (sizes[owner] < 2) continue;
      const double d = squared_distance(m.population[i].levels, m.centroids[owner]);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    m.assignment[far] = c;
    m.centroids[static_cast<std::size_t>(c)].assign(m.population[far].levels.begin(),
                                                    m.population[far].levels.end());
    moved = true;
  }
  return moved;
}

}  // namespace detail

// Lloyd's algorithm with seeded farthest-point initialisation: the first centroid is a
// uniformly drawn member, each further one the member farthest from those chosen so far
// (lowest index on ties). Stops when assignments are stable or after `max_iterations`.
inline ClusterModel kmeans_cluster(std::vector<TopologyCode> population, int k, std::uint64_t seed,
                                   int max_iterations = 300) {
  if (population.empty()) throw ConfigError("kmeans: empty population");
  if (k <= 0) throw ConfigError("kmeans: k must be positive");
  if (static_cast<std::size_t>(k) > population.size())
    throw ConfigError("kmeans: k=" + std::to_string(k) + " exceeds population size " +
                      std::to_string(population.size()));
  const std::size_t dim = population.front().size();
  for (const auto& c : population)
    if (c.size() != dim) throw LengthMismatch("kmeans population member", dim, c.size());

  ClusterModel m;
  m.k = k;
  m.population = std::move(population);
  const std::size_t n = m.population.size();

  Rng rng(seed);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.uniform_index(n);
  for (int c = 0; c < k; ++c) {
    m.centroids.emplace_back(m.population[pick].levels.begin(), m.population[pick].levels.end());
    for (std::size_t i = 0; i < n; ++i)
      min_d[i] = std::min(min_d[i], detail::squared_distance(m.population[i].levels, m.centroids.back()));
    double far_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (min_d[i] > far_d) {
        far_d = min_d[i];
        pick = i;
      }
    }
  }

  m.assignment.assign(n, -1);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = detail::nearest(m.centroids, m.population[i].levels);
      if (c != m.assignment[i]) {
        m.assignment[i] = c;
        changed = true;
      }
    }
    changed |= detail::repair_empty(m);
    detail::recompute_centroids(m);
    m.objective_history.push_back(detail::objective(m));
    m.iterations = it + 1;
    if (!changed) break;
  }
  return m;
}

// Nearest centroid, lowest id on ties.
inline int assign(const ClusterModel& model, const TopologyCode& code) {
  if (code.size() != model.dimension()) throw LengthMismatch("assign", model.dimension(), code.size());
  return detail::nearest(model.centroids, code.levels);
}

inline void to_json(nlohmann::json& j, const ClusterModel& m) {
  j = nlohmann::json{{"k", m.k},
                     {"centroids", m.centroids},
                     {"assignment", m.assignment},
                     {"population", m.population},
                     {"iterations", m.iterations},
                     {"objective_history", m.objective_history}};
}

inline void from_json(const nlohmann::json& j, ClusterModel& m) {
  m = ClusterModel{};
  m.k = j.at("k").get<int>();
  m.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
  m.assignment = j.at("assignment").get<std::vector<int>>();
  m.population = j.at("population").get<std::vector<TopologyCode>>();
  m.iterations = j.value("iterations", 0);
  m.objective_history = j.value("objective_history", std::vector<double>{});
}

}  // namespace c2fnas
