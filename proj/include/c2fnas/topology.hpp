#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2fnas/errors.hpp"

namespace c2fnas {

// Shape of the macro-level search space: a path of `num_cells` cells through
// resolution levels 0..max_level, with fixed numbers of down and up steps.
struct SpaceSpec {
  int num_cells = 12;
  int num_down = 3;
  int num_up = 3;
  int max_level = 3;

  static SpaceSpec symmetric(int cells, int downs, int ups) { return {cells, downs, ups, downs}; }

  void check() const {
    if (num_cells < 1) throw ConfigError("space: num_cells must be positive");
    if (num_down < 0 || num_up < 0) throw ConfigError("space: transition counts must be non-negative");
    if (num_down != num_up)
      throw ConfigError("space: num_down (" + std::to_string(num_down) + ") must equal num_up (" +
                        std::to_string(num_up) + ")");
    if (num_down + num_up > num_cells)
      throw EmptySpaceError("space: " + std::to_string(num_down + num_up) +
                            " transitions do not fit in " + std::to_string(num_cells) + " cells");
    if (max_level < num_down) throw ConfigError("space: max_level must be >= num_down");
  }

  friend bool operator==(const SpaceSpec&, const SpaceSpec&) = default;
};

inline void to_json(nlohmann::json& j, const SpaceSpec& s) {
  j = nlohmann::json{{"num_cells", s.num_cells},
                     {"num_down", s.num_down},
                     {"num_up", s.num_up},
                     {"max_level", s.max_level}};
}

inline void from_json(const nlohmann::json& j, SpaceSpec& s) {
  s = SpaceSpec{};
  s.num_cells = j.value("num_cells", s.num_cells);
  s.num_down = j.value("num_down", s.num_down);
  s.num_up = j.value("num_up", s.num_up);
  s.max_level = j.value("max_level", j.contains("num_down") ? s.num_down : s.max_level);
}

// levels[i] is the resolution level cell i operates at. The entry stem sits at level 0,
// so a cell 0 at level 1 is a down cell.
struct TopologyCode {
  std::vector<int> levels;

  std::size_t size() const noexcept { return levels.size(); }
  int operator[](std::size_t i) const { return levels[i]; }

  std::string str() const {
    std::string out = "[";
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(levels[i]);
    }
    return out + "]";
  }

  friend auto operator<=>(const TopologyCode&, const TopologyCode&) = default;
  friend bool operator==(const TopologyCode&, const TopologyCode&) = default;
};

inline void to_json(nlohmann::json& j, const TopologyCode& c) { j = c.levels; }
inline void from_json(const nlohmann::json& j, TopologyCode& c) {
  c.levels = j.get<std::vector<int>>();
}

enum class CodeRule {
  kLevelBounds,   // 0 <= level <= max_level
  kStepSize,      // |levels[i] - levels[i-1]| <= 1
  kUShapeOrder,   // a down step after an up step
  kDownCount,     // exactly num_down down steps
  kUpCount,       // exactly num_up up steps
};

inline const char* rule_name(CodeRule r) {
  switch (r) {
    case CodeRule::kLevelBounds: return "level within [0, max_level]";
    case CodeRule::kStepSize: return "level step of at most 1";
    case CodeRule::kUShapeOrder: return "every down step precedes every up step";
    case CodeRule::kDownCount: return "exactly num_down down steps";
    case CodeRule::kUpCount: return "exactly num_up up steps";
  }
  return "?";
}

struct CodeVerdict {
  bool valid = true;
  CodeRule rule{};
  std::size_t index = 0;  // offending cell; num_cells for count rules

  explicit operator bool() const noexcept { return valid; }

  std::string message() const {
    if (valid) return "valid";
    return std::string("violates \"") + rule_name(rule) + "\" at index " + std::to_string(index);
  }
};

// Checks a code against the pruned (strict U-shape) space. Throws LengthMismatch when
// the code does not have num_cells entries; rule violations are reported in the verdict.
inline CodeVerdict validate_code(const TopologyCode& code, const SpaceSpec& spec) {
  if (code.size() != static_cast<std::size_t>(spec.num_cells))
    throw LengthMismatch("topology code", spec.num_cells, code.size());

  int prev = 0;
  int downs = 0;
  int ups = 0;
  for (std::size_t i = 0; i < code.size(); ++i) {
    const int level = code[i];
    if (level < 0 || level > spec.max_level) return {false, CodeRule::kLevelBounds, i};
    const int step = level - prev;
    if (step > 1 || step < -1) return {false, CodeRule::kStepSize, i};
    if (step == 1) {
      if (ups > 0) return {false, CodeRule::kUShapeOrder, i};
      ++downs;
    } else if (step == -1) {
      ++ups;
    }
    prev = level;
  }
  if (downs != spec.num_down) return {false, CodeRule::kDownCount, code.size()};
  if (ups != spec.num_up) return {false, CodeRule::kUpCount, code.size()};
  return {};
}

inline void require_valid(const TopologyCode& code, const SpaceSpec& spec) {
  if (auto v = validate_code(code, spec); !v)
    throw ValidationError("topology code " + code.str() + " " + v.message());
}

// Builds the code whose transitions sit at `positions` (sorted); the first num_down are
// down steps, the rest up steps.
inline TopologyCode code_from_transitions(const std::vector<int>& positions, int num_cells,
                                          int num_down) {
  TopologyCode code{std::vector<int>(static_cast<std::size_t>(num_cells))};
  int level = 0;
  std::size_t next = 0;
  for (int i = 0; i < num_cells; ++i) {
    if (next < positions.size() && positions[next] == i) {
      level += (static_cast<int>(next) < num_down) ? 1 : -1;
      ++next;
    }
    code.levels[static_cast<std::size_t>(i)] = level;
  }
  return code;
}

// Every member of the pruned space, ordered lexicographically by transition-index set.
inline std::vector<TopologyCode> enumerate_pruned(const SpaceSpec& spec) {
  spec.check();
  const int n = spec.num_cells;
  const int t = spec.num_down + spec.num_up;

  std::vector<TopologyCode> out;
  std::vector<int> pos(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) pos[static_cast<std::size_t>(i)] = i;
  while (true) {
    out.push_back(code_from_transitions(pos, n, spec.num_down));
    // advance to the next combination
    int i = t - 1;
    while (i >= 0 && pos[static_cast<std::size_t>(i)] == n - t + i) --i;
    if (i < 0) break;
    ++pos[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < t; ++j)
      pos[static_cast<std::size_t>(j)] = pos[static_cast<std::size_t>(j - 1)] + 1;
  }
  return out;
}

// Unpruned lattice size: cell 0 fixed at level 0, each later cell moves by -1/0/+1 and stays
// within [0, max_level], any end level.
inline std::uint64_t count_full_space(int num_cells, int max_level) {
  if (num_cells < 1 || max_level < 0) return 0;
  std::vector<std::uint64_t> ways(static_cast<std::size_t>(max_level) + 1, 0);
  ways[0] = 1;
  for (int cell = 1; cell < num_cells; ++cell) {
    std::vector<std::uint64_t> next(ways.size(), 0);
    for (std::size_t l = 0; l < ways.size(); ++l) {
      if (!ways[l]) continue;
      if (l > 0) next[l - 1] += ways[l];
      next[l] += ways[l];
      if (l + 1 < ways.size()) next[l + 1] += ways[l];
    }
    ways = std::move(next);
  }
  std::uint64_t total = 0;
  for (auto w : ways) total += w;
  return total;
}

inline std::uint64_t count_full_space(const SpaceSpec& spec) {
  return count_full_space(spec.num_cells, spec.max_level);
}

enum class CellKind { kSameLevel, kDown, kUp };

inline const char* kind_name(CellKind k) {
  switch (k) {
    case CellKind::kSameLevel: return "same";
    case CellKind::kDown: return "down";
    case CellKind::kUp: return "up";
  }
  return "?";
}

// Index of a cell whose output feeds another cell; kStem is the entry stem output.
inline constexpr int kStem = -1;

struct CellInputs {
  int primary = kStem;
  std::optional<int> secondary;
  CellKind kind = CellKind::kSameLevel;

  std::size_t count() const noexcept { return secondary ? 2 : 1; }
  friend bool operator==(const CellInputs&, const CellInputs&) = default;
};

struct CellWiring {
  std::vector<CellInputs> cells;
};

// Level of a node's output: the stem is at level 0.
inline int node_level(const TopologyCode& code, int node) {
  return node == kStem ? 0 : code[static_cast<std::size_t>(node)];
}

// Connects each cell to its predecessor, plus
//  (1) the cell two back when it is at the same level, or
//  (2) for the first cell after an up step, the last tensor at that level before the
//      matching down step (the stem when that down is cell 0).
inline CellWiring derive_wiring(const TopologyCode& code, const SpaceSpec& spec) {
  require_valid(code, spec);
  CellWiring w;
  w.cells.resize(code.size());
  for (std::size_t i = 0; i < code.size(); ++i) {
    const int idx = static_cast<int>(i);
    const int prev_level = node_level(code, idx - 1);
    CellInputs& in = w.cells[i];
    in.primary = idx - 1;
    in.kind = code[i] > prev_level   ? CellKind::kDown
              : code[i] < prev_level ? CellKind::kUp
                                     : CellKind::kSameLevel;
    if (in.kind == CellKind::kUp) {
      // innermost matching down: the latest earlier cell that stepped up out of this level
      for (int j = idx - 1; j >= 0; --j) {
        if (code[static_cast<std::size_t>(j)] == code[i] + 1 && node_level(code, j - 1) == code[i]) {
          in.secondary = j - 1;
          break;
        }
      }
    } else if (i >= 2 && code[i - 2] == code[i]) {
      in.secondary = idx - 2;
    }
  }
  return w;
}

inline double code_distance(const TopologyCode& a, const TopologyCode& b) {
  if (a.size() != b.size()) throw LengthMismatch("code_distance", a.size(), b.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i] - b[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

// The member with all transitions packed at the end, and the one that climbs at once and
// descends at the very end (pointwise highest).
inline TopologyCode lowest_code(const SpaceSpec& spec) {
  std::vector<int> pos;
  const int t = spec.num_down + spec.num_up;
  for (int i = spec.num_cells - t; i < spec.num_cells; ++i) pos.push_back(i);
  return code_from_transitions(pos, spec.num_cells, spec.num_down);
}

inline TopologyCode highest_code(const SpaceSpec& spec) {
  std::vector<int> pos;
  for (int i = 0; i < spec.num_down; ++i) pos.push_back(i);
  for (int i = spec.num_cells - spec.num_up; i < spec.num_cells; ++i) pos.push_back(i);
  return code_from_transitions(pos, spec.num_cells, spec.num_down);
}

// Normalizer for code distances: distance(lowest_code, highest_code). Not a true diameter;
// some pairs lie further apart, and surrogate scores clamp.
inline double distance_scale(const SpaceSpec& spec) {
  return code_distance(lowest_code(spec), highest_code(spec));
}

}  // namespace c2fnas
