#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "c2fnas/errors.hpp"
#include "c2fnas/rng.hpp"

namespace c2fnas {

// The per-cell operation choices.
enum class OperationKind : std::uint8_t {
  kConv3d,  // 3x3x3
  kP3d,     // 3x3x1 followed by 1x1x3
  kConv2d,  // 3x3x1
};

inline constexpr std::array<OperationKind, 3> kAllOperations = {
    OperationKind::kConv3d, OperationKind::kP3d, OperationKind::kConv2d};

inline const char* op_name(OperationKind k) {
  switch (k) {
    case OperationKind::kConv3d: return "3d";
    case OperationKind::kP3d: return "p3d";
    case OperationKind::kConv2d: return "2d";
  }
  return "?";
}

inline OperationKind parse_op(const std::string& s) {
  if (s == "3d") return OperationKind::kConv3d;
  if (s == "p3d") return OperationKind::kP3d;
  if (s == "2d") return OperationKind::kConv2d;
  throw ValidationError("unknown operation \"" + s + "\" (expected 2d, 3d or p3d)");
}

// One operation per cell.
struct OpConfig {
  std::vector<OperationKind> ops;

  static OpConfig uniform(std::size_t cells, OperationKind k) { return {std::vector<OperationKind>(cells, k)}; }

  std::size_t size() const noexcept { return ops.size(); }
  OperationKind operator[](std::size_t i) const { return ops[i]; }

  // Base-3 index; distinct configs of equal length map to distinct values.
  std::uint64_t index() const {
    std::uint64_t v = 0;
    for (auto op : ops) v = v * 3 + static_cast<std::uint64_t>(op);
    return v;
  }

  static OpConfig from_index(std::uint64_t v, std::size_t cells) {
    OpConfig c{std::vector<OperationKind>(cells)};
    for (std::size_t i = cells; i-- > 0;) {
      c.ops[i] = static_cast<OperationKind>(v % 3);
      v /= 3;
    }
    return c;
  }

  friend auto operator<=>(const OpConfig&, const OpConfig&) = default;
  friend bool operator==(const OpConfig&, const OpConfig&) = default;
};

inline std::vector<std::string> ops_to_strings(const OpConfig& c) {
  std::vector<std::string> out;
  out.reserve(c.size());
  for (auto op : c.ops) out.emplace_back(op_name(op));
  return out;
}

inline OpConfig ops_from_strings(const std::vector<std::string>& names) {
  OpConfig c;
  for (const auto& n : names) c.ops.push_back(parse_op(n));
  return c;
}

inline std::size_t hamming(const OpConfig& a, const OpConfig& b) {
  if (a.size() != b.size()) throw LengthMismatch("ops hamming", a.size(), b.size());
  std::size_t h = 0;
  for (std::size_t i = 0; i < a.size(); ++i) h += a[i] != b[i];
  return h;
}

// 3^num_cells.
inline std::uint64_t op_space_size(int num_cells) {
  if (num_cells < 1) throw ConfigError("op_space_size: num_cells must be >= 1");
  if (num_cells > 40) throw ConfigError("op_space_size: 3^" + std::to_string(num_cells) + " overflows");
  std::uint64_t n = 1;
  for (int i = 0; i < num_cells; ++i) n *= 3;
  return n;
}

// One single-path draw: every cell picks an operation independently and uniformly.
inline OpConfig sample_uniform_path(std::size_t num_cells, Rng& rng) {
  OpConfig c{std::vector<OperationKind>(num_cells)};
  for (auto& op : c.ops) op = kAllOperations[rng.uniform_index(kAllOperations.size())];
  return c;
}

}  // namespace c2fnas
