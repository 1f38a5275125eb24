#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2fnas/errors.hpp"
#include "c2fnas/evaluation.hpp"
#include "c2fnas/operations.hpp"
#include "c2fnas/topology.hpp"

namespace c2fnas {

using Extent = std::array<long long, 3>;

enum class LayerKind { kConv, kTrilinearUpsample, kSumJoin };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kTrilinearUpsample: return "trilinear-upsample";
    case LayerKind::kSumJoin: return "sum-join";
  }
  return "?";
}

// One node of the layer graph. `level` is the resolution level of the output:
// -1 is the input resolution, 0 the entry stem output, +1 per down-sampling.
// A normalized conv is followed by instance norm + ReLU (affine scale and shift).
struct LayerSpec {
  int id = 0;
  LayerKind kind = LayerKind::kConv;
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  int in_channels = 0;
  int out_channels = 0;
  int level = 0;
  bool bias = true;
  bool normalized = true;
  std::vector<int> inputs;  // producer ids; empty means the network input
  std::string name;
};

struct ArchitectureIR {
  std::vector<LayerSpec> layers;
  TopologyCode code;
  OpConfig ops;
  int base_filters = 32;
  double multiplier = 1.0;
  int input_channels = 1;
  int num_classes = 3;
  int entry_stem = -1;             // id of the stem output layer
  int output = -1;                 // id of the sink
  std::vector<int> cell_outputs;   // per cell, id of its post-conv

  int max_level() const {
    int m = -1;
    for (const auto& l : layers) m = std::max(m, l.level);
    return m;
  }
};

// round(base * multiplier), at least 1.
inline int scaled_base_channels(int base_filters, double multiplier) {
  return std::max(1, static_cast<int>(std::lround(static_cast<double>(base_filters) * multiplier)));
}

// Channel count at a resolution level; the full-resolution stem layers use the base count.
inline int level_channels(int base, int level) { return level <= 0 ? base : base << level; }

struct BuildOptions {
  int base_filters = 32;
  int num_classes = 3;
  int input_channels = 1;
};

namespace detail {

class IrBuilder {
 public:
  explicit IrBuilder(ArchitectureIR& ir) : ir_(ir) {}

  int conv(int input, std::array<int, 3> kernel, int stride, int in_c, int out_c, int level, std::string name,
           bool normalized = true) {
    LayerSpec l;
    l.kind = LayerKind::kConv;
    l.kernel = kernel;
    l.stride = {stride, stride, stride};
    l.in_channels = in_c;
    l.out_channels = out_c;
    l.level = level;
    l.normalized = normalized;
    if (input >= 0) l.inputs = {input};
    l.name = std::move(name);
    return push(std::move(l));
  }

  int upsample(int input, int channels, int level, std::string name) {
    LayerSpec l;
    l.kind = LayerKind::kTrilinearUpsample;
    l.kernel = {1, 1, 1};
    l.in_channels = l.out_channels = channels;
    l.level = level;
    l.bias = l.normalized = false;
    l.inputs = {input};
    l.name = std::move(name);
    return push(std::move(l));
  }

  int join(std::vector<int> inputs, int channels, int level, std::string name) {
    LayerSpec l;
    l.kind = LayerKind::kSumJoin;
    l.kernel = {1, 1, 1};
    l.in_channels = l.out_channels = channels;
    l.level = level;
    l.bias = l.normalized = false;
    l.inputs = std::move(inputs);
    l.name = std::move(name);
    return push(std::move(l));
  }

  const LayerSpec& at(int id) const { return ir_.layers[static_cast<std::size_t>(id)]; }

 private:
  int push(LayerSpec l) {
    l.id = static_cast<int>(ir_.layers.size());
    ir_.layers.push_back(std::move(l));
    return ir_.layers.back().id;
  }

  ArchitectureIR& ir_;
};

}  // namespace detail

// Layer graph for (topology, coloring, width):
//   entry stem   3x3x3 s1, 3x3x3 s2
//   per cell     [down: 3x3x3 s2 | up: trilinear x2 + 1x1x1] on the primary input,
//                per input a 1x1x1 pre-conv and the cell's op, sum, 1x1x1 post-conv
//   exit stem    3x3x3, trilinear x2, 3x3x3 to num_classes
inline ArchitectureIR materialize(const TopologyCode& code, const OpConfig& ops, const SpaceSpec& space,
                                  double multiplier = 1.0, const BuildOptions& opts = {}) {
  require_valid(code, space);
  if (ops.size() != code.size()) throw LengthMismatch("ops", code.size(), ops.size());
  if (!(multiplier > 0.0)) throw ValidationError("multiplier must be positive");
  if (opts.base_filters < 1 || opts.num_classes < 1 || opts.input_channels < 1)
    throw ValidationError("base_filters, num_classes and input_channels must be positive");

  ArchitectureIR ir;
  ir.code = code;
  ir.ops = ops;
  ir.base_filters = opts.base_filters;
  ir.multiplier = multiplier;
  ir.input_channels = opts.input_channels;
  ir.num_classes = opts.num_classes;
  const int base = scaled_base_channels(opts.base_filters, multiplier);
  const auto ch = [base](int level) { return level_channels(base, level); };
  detail::IrBuilder b(ir);

  const int s0 = b.conv(-1, {3, 3, 3}, 1, opts.input_channels, ch(0), -1, "stem.entry.conv0");
  ir.entry_stem = b.conv(s0, {3, 3, 3}, 2, ch(0), ch(0), 0, "stem.entry.conv1");

  const CellWiring wiring = derive_wiring(code, space);
  const auto node_out = [&](int node) { return node == kStem ? ir.entry_stem : ir.cell_outputs[static_cast<std::size_t>(node)]; };

  for (std::size_t i = 0; i < code.size(); ++i) {
    const std::string cell = "cell" + std::to_string(i);
    const int level = code[i];
    const int c = ch(level);
    const CellInputs& in = wiring.cells[i];

    int primary = node_out(in.primary);
    const int from_level = node_level(code, in.primary);
    if (in.kind == CellKind::kDown) {
      primary = b.conv(primary, {3, 3, 3}, 2, ch(from_level), c, level, cell + ".down");
    } else if (in.kind == CellKind::kUp) {
      const int up = b.upsample(primary, ch(from_level), level, cell + ".up.interp");
      primary = b.conv(up, {1, 1, 1}, 1, ch(from_level), c, level, cell + ".up.conv");
    }
    std::vector<int> sources{primary};
    if (in.secondary) sources.push_back(node_out(*in.secondary));

    std::vector<int> branches;
    for (std::size_t k = 0; k < sources.size(); ++k) {
      const std::string br = cell + ".in" + std::to_string(k);
      const int src_c = b.at(sources[k]).out_channels;
      int x = b.conv(sources[k], {1, 1, 1}, 1, src_c, c, level, br + ".pre");
      switch (ops[i]) {
        case OperationKind::kConv3d:
          x = b.conv(x, {3, 3, 3}, 1, c, c, level, br + ".op3d");
          break;
        case OperationKind::kP3d:
          x = b.conv(x, {3, 3, 1}, 1, c, c, level, br + ".p3d.xy");
          x = b.conv(x, {1, 1, 3}, 1, c, c, level, br + ".p3d.z");
          break;
        case OperationKind::kConv2d:
          x = b.conv(x, {3, 3, 1}, 1, c, c, level, br + ".op2d");
          break;
      }
      branches.push_back(x);
    }
    int merged = branches.front();
    if (branches.size() == 2) merged = b.join(branches, c, level, cell + ".sum");
    ir.cell_outputs.push_back(b.conv(merged, {1, 1, 1}, 1, c, c, level, cell + ".post"));
  }

  const int last = ir.cell_outputs.back();
  const int e0 = b.conv(last, {3, 3, 3}, 1, ch(code.levels.back()), ch(0), 0, "stem.exit.conv0");
  const int e1 = b.upsample(e0, ch(0), -1, "stem.exit.interp");
  ir.output = b.conv(e1, {3, 3, 3}, 1, ch(0), opts.num_classes, -1, "stem.exit.conv1", false);
  return ir;
}

// Spatial extent of a layer's output for a given network input extent.
inline Extent layer_extent(const LayerSpec& l, const Extent& input) {
  Extent e = input;
  for (auto& v : e) v >>= (l.level + 1);
  return e;
}

inline void check_divisible(const ArchitectureIR& ir, const Extent& input) {
  const long long div = 1LL << (1 + std::max(-1, ir.max_level()));
  for (auto v : input)
    if (v <= 0 || v % div != 0)
      throw ShapeError("input extent " + std::to_string(v) + " is not a positive multiple of " + std::to_string(div));
}

// Propagates shapes through the graph and checks every edge, the channel law, topological
// order and that exactly one layer (the output) feeds nothing. Throws ShapeError.
inline void verify_shapes(const ArchitectureIR& ir, const Extent& input) {
  check_divisible(ir, input);
  const int base = scaled_base_channels(ir.base_filters, ir.multiplier);
  std::vector<Extent> out(ir.layers.size());
  std::vector<int> consumers(ir.layers.size(), 0);
  const auto fail = [](const LayerSpec& l, const std::string& why) {
    throw ShapeError("layer " + std::to_string(l.id) + " (" + l.name + "): " + why);
  };

  for (const auto& l : ir.layers) {
    Extent in_extent = input;
    int in_channels = ir.input_channels;
    if (l.inputs.empty() && l.id != 0) fail(l, "only the first layer may read the network input");
    for (std::size_t k = 0; k < l.inputs.size(); ++k) {
      const int src = l.inputs[k];
      if (src < 0 || src >= l.id) fail(l, "input " + std::to_string(src) + " is not an earlier layer");
      ++consumers[static_cast<std::size_t>(src)];
      const auto& p = ir.layers[static_cast<std::size_t>(src)];
      if (k == 0) {
        in_extent = out[static_cast<std::size_t>(src)];
        in_channels = p.out_channels;
      } else if (out[static_cast<std::size_t>(src)] != in_extent || p.out_channels != in_channels) {
        fail(l, "join inputs differ in shape or channels");
      }
    }
    if (in_channels != l.in_channels)
      fail(l, "expects " + std::to_string(l.in_channels) + " channels, receives " + std::to_string(in_channels));

    Extent e = in_extent;
    switch (l.kind) {
      case LayerKind::kConv:
        for (std::size_t a = 0; a < 3; ++a) {
          if (l.stride[a] != 1 && l.stride[a] != 2) fail(l, "stride must be 1 or 2");
          if (e[a] % l.stride[a] != 0) fail(l, "extent not divisible by stride");
          e[a] /= l.stride[a];
        }
        break;
      case LayerKind::kTrilinearUpsample:
        for (auto& v : e) v *= 2;
        break;
      case LayerKind::kSumJoin:
        if (l.inputs.size() < 2) fail(l, "join needs two inputs");
        break;
    }
    if (e != layer_extent(l, input)) fail(l, "output extent disagrees with resolution level");
    out[static_cast<std::size_t>(l.id)] = e;

    // an interpolation keeps its producer's channels; the following 1x1x1 conv restores the law
    if (l.kind == LayerKind::kTrilinearUpsample) {
      if (l.out_channels != l.in_channels) fail(l, "interpolation must not change channels");
    } else if (l.id != ir.output) {
      const int want = level_channels(base, l.level);
      if (l.out_channels != want)
        fail(l, "has " + std::to_string(l.out_channels) + " channels, level law requires " + std::to_string(want));
    }
  }
  int sinks = 0;
  for (std::size_t i = 0; i < consumers.size(); ++i) {
    if (consumers[i] == 0) {
      ++sinks;
      if (static_cast<int>(i) != ir.output) throw ShapeError("layer " + std::to_string(i) + " is a dangling sink");
    }
  }
  if (sinks != 1) throw ShapeError("graph must have exactly one sink");
}

inline std::uint64_t layer_params(const LayerSpec& l) {
  if (l.kind != LayerKind::kConv) return 0;
  const auto cout = static_cast<std::uint64_t>(l.out_channels);
  std::uint64_t p = static_cast<std::uint64_t>(l.in_channels) * cout * static_cast<std::uint64_t>(l.kernel[0]) *
                    static_cast<std::uint64_t>(l.kernel[1]) * static_cast<std::uint64_t>(l.kernel[2]);
  if (l.bias) p += cout;
  if (l.normalized) p += 2 * cout;
  return p;
}

// 2 FLOPs per multiply-accumulate; interpolation, joins, norm and activation are free.
inline std::uint64_t layer_flops(const LayerSpec& l, const Extent& output_extent) {
  if (l.kind != LayerKind::kConv) return 0;
  const auto voxels = static_cast<std::uint64_t>(output_extent[0] * output_extent[1] * output_extent[2]);
  return 2ULL * static_cast<std::uint64_t>(l.in_channels) * static_cast<std::uint64_t>(l.out_channels) *
         static_cast<std::uint64_t>(l.kernel[0] * l.kernel[1] * l.kernel[2]) * voxels;
}

inline std::uint64_t count_params(const ArchitectureIR& ir) {
  std::uint64_t total = 0;
  for (const auto& l : ir.layers) total += layer_params(l);
  return total;
}

inline std::uint64_t count_flops(const ArchitectureIR& ir, const Extent& input = {96, 96, 96}) {
  check_divisible(ir, input);
  std::uint64_t total = 0;
  for (const auto& l : ir.layers) total += layer_flops(l, layer_extent(l, input));
  return total;
}

struct CostReport {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  Extent input{96, 96, 96};
};

inline CostReport cost_report(const ArchitectureIR& ir, const Extent& input = {96, 96, 96}) {
  return {count_params(ir), count_flops(ir, input), input};
}

inline nlohmann::ordered_json cost_to_json(const CostReport& c) {
  nlohmann::ordered_json j;
  j["params"] = c.params;
  j["flops"] = c.flops;
  j["input_extent"] = c.input;
  return j;
}

inline nlohmann::ordered_json ir_to_json(const ArchitectureIR& ir, const Extent& input = {96, 96, 96}) {
  nlohmann::ordered_json j;
  j["code"] = ir.code.levels;
  j["ops"] = ops_to_strings(ir.ops);
  j["base_filters"] = ir.base_filters;
  j["multiplier"] = ir.multiplier;
  j["input_channels"] = ir.input_channels;
  j["num_classes"] = ir.num_classes;
  j["entry_stem"] = ir.entry_stem;
  j["output"] = ir.output;
  j["cell_outputs"] = ir.cell_outputs;
  auto layers = nlohmann::ordered_json::array();
  auto edges = nlohmann::ordered_json::array();
  for (const auto& l : ir.layers) {
    nlohmann::ordered_json lj;
    lj["id"] = l.id;
    lj["name"] = l.name;
    lj["kind"] = layer_kind_name(l.kind);
    lj["kernel"] = l.kernel;
    lj["stride"] = l.stride;
    lj["in_channels"] = l.in_channels;
    lj["out_channels"] = l.out_channels;
    lj["level"] = l.level;
    lj["bias"] = l.bias;
    lj["normalized"] = l.normalized;
    lj["inputs"] = l.inputs;
    lj["output_extent"] = layer_extent(l, input);
    lj["params"] = layer_params(l);
    lj["flops"] = layer_flops(l, layer_extent(l, input));
    layers.push_back(std::move(lj));
    for (int src : l.inputs) edges.push_back({src, l.id});
  }
  j["layers"] = std::move(layers);
  j["edges"] = std::move(edges);
  j["costs"] = cost_to_json(cost_report(ir, input));
  return j;
}

// Graphviz description for visualization.
inline std::string ir_to_dot(const ArchitectureIR& ir) {
  std::ostringstream os;
  os << "digraph architecture {\n  rankdir=TB;\n  node [shape=box, fontsize=10];\n";
  os << "  input [label=\"input\\n" << ir.input_channels << " ch\", shape=ellipse];\n";
  for (const auto& l : ir.layers) {
    os << "  n" << l.id << " [label=\"" << l.name << "\\n" << layer_kind_name(l.kind);
    if (l.kind == LayerKind::kConv) os << " " << l.kernel[0] << "x" << l.kernel[1] << "x" << l.kernel[2];
    os << "\\n" << l.out_channels << " ch, level " << l.level << "\"];\n";
  }
  for (const auto& l : ir.layers) {
    if (l.inputs.empty()) os << "  input -> n" << l.id << ";\n";
    for (int src : l.inputs) os << "  n" << src << " -> n" << l.id << ";\n";
  }
  os << "}\n";
  return os.str();
}

inline std::vector<double> default_multiplier_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 8; ++i) grid.push_back(0.25 * i);
  return grid;
}

struct ScalingRow {
  double multiplier = 0.0;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::optional<double> score;
  std::string error;  // non-empty when this row failed
};

// Costs and scores one scaled copy of the architecture per multiplier, ascending. A failing
// row records its error and the rest still run.
inline std::vector<ScalingRow> scaling_grid(const TopologyCode& code, const OpConfig& ops, const SpaceSpec& space,
                                            std::vector<double> multipliers, Evaluator* evaluator,
                                            const BuildOptions& opts = {}, const Extent& input = {96, 96, 96},
                                            const Budget& budget = {0, 48}) {
  if (multipliers.empty()) throw ConfigError("scaling grid: no multipliers");
  for (double m : multipliers)
    if (!(m > 0.0)) throw ConfigError("scaling grid: multipliers must be positive");
  std::sort(multipliers.begin(), multipliers.end());

  std::vector<ScalingRow> rows;
  long long id = 0;
  for (double m : multipliers) {
    ScalingRow row;
    row.multiplier = m;
    try {
      const auto ir = materialize(code, ops, space, m, opts);
      verify_shapes(ir, input);
      row.params = count_params(ir);
      row.flops = count_flops(ir, input);
      if (evaluator) {
        EvaluationRequest req;
        req.id = ++id;
        req.command = Command::kEvaluateCandidate;
        req.code = code;
        req.ops = ops;
        req.budget = budget;
        req.multiplier = m;
        row.score = evaluator->evaluate(req).score;
      }
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace c2fnas
