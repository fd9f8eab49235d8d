#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cmatch/tensor.hpp"

namespace cmatch {

// Node features of one graph; same layout and invariants as a FeatureGrid.
using GraphNodeState = FeatureGrid;

enum class Neighborhood { kFour = 4, kEight = 8 };
enum class BorderMode { kTruncate, kWrap };
enum class FlowMode { kIterative, kStacked };

struct FlowSchedule {
  FlowMode mode = FlowMode::kIterative;
  int steps = 1;
  Neighborhood neighborhood = Neighborhood::kEight;

  // Number of parameter blocks the schedule consumes.
  std::size_t blocks_required() const;
  void validate() const;
};

const char* to_string(FlowMode mode);
FlowMode parse_flow_mode(const std::string& text);
Neighborhood parse_neighborhood(const std::string& text);

// All weight matrices are stored input-major: y = x * W + b, with W of shape
// [fan_in, fan_out].
struct AttentionParams {
  std::size_t channels = 0;
  std::vector<float> wq;      // [C, C]
  std::vector<float> wk;      // [C, C]
  std::vector<float> wv;      // [C, C]
  std::vector<float> mlp1_w;  // [2C, C]
  std::vector<float> mlp1_b;  // [C]
  std::vector<float> mlp2_w;  // [C, C]
  std::vector<float> mlp2_b;  // [C]

  void validate() const;

  // Glorot-uniform weights, zero biases.
  static AttentionParams random(std::size_t channels, std::uint64_t seed);
  // Same projections as `random`, with every MLP weight and bias zeroed.
  static AttentionParams zero_mlp(std::size_t channels, std::uint64_t seed);
  static AttentionParams identity_projections(std::size_t channels);
};

// Sinusoidal 2D encoding optionally post-multiplied by a learned C x C map.
class PositionalEncoder {
 public:
  explicit PositionalEncoder(std::size_t channels, double base = 10000.0,
                             std::optional<std::vector<float>> linear_map = std::nullopt);

  std::size_t channels() const noexcept { return channels_; }
  double base() const noexcept { return base_; }
  const std::optional<std::vector<float>>& linear_map() const noexcept { return map_; }

  Tensor encode(std::size_t height, std::size_t width) const;

 private:
  std::size_t channels_;
  double base_;
  std::optional<std::vector<float>> map_;
};

// Channels [0, C/2) encode the row, [C/2, C) the column; within a half,
// channel 2i is sin(p / base^(4i/C)) and 2i+1 the matching cosine.
Tensor positional_encode(std::size_t height, std::size_t width, std::size_t channels,
                         double base = 10000.0);

// f = f_a + encoding.
FeatureGrid fuse_position(const FeatureGrid& features, const Tensor& encoding);

// For each target node, the source indices it receives messages from.
class Adjacency {
 public:
  static Adjacency full(std::size_t targets, std::size_t sources);
  static Adjacency from_lists(std::size_t sources, std::vector<std::vector<std::size_t>> lists);

  std::size_t targets() const noexcept { return targets_; }
  std::size_t sources() const noexcept { return sources_; }
  std::span<const std::size_t> sources_of(std::size_t target) const;

 private:
  std::size_t targets_ = 0;
  std::size_t sources_ = 0;
  bool full_ = false;
  std::vector<std::size_t> all_;
  std::vector<std::vector<std::size_t>> lists_;
};

// Grid neighbours with truncated (or toroidal) borders. A 1x1 grid connects
// its single node to itself.
Adjacency grid_adjacency(std::size_t height, std::size_t width, Neighborhood nbhd,
                         BorderMode border = BorderMode::kTruncate);

// Softmax rows alpha_i over the connected sources of each target.
std::vector<std::vector<double>> attention_weights(const GraphNodeState& targets,
                                                   const GraphNodeState& sources,
                                                   const Adjacency& edges,
                                                   const AttentionParams& params);

// m_i = sum_j alpha_ij * (W_v f_j), returned as a float32 [targets, C] tensor.
Tensor attention_aggregate(const GraphNodeState& targets, const GraphNodeState& sources,
                           const Adjacency& edges, const AttentionParams& params);

// f' = f + mlp2(relu(mlp1(concat(f, m)))).
GraphNodeState residual_update(const GraphNodeState& state, const Tensor& messages,
                               const AttentionParams& params);

GraphNodeState inner_flow_step(const GraphNodeState& grid, const AttentionParams& params,
                               Neighborhood nbhd, BorderMode border = BorderMode::kTruncate);

// Returns (query', support'). Both directions read the pre-step states.
std::pair<GraphNodeState, GraphNodeState> cross_flow_step(const GraphNodeState& query,
                                                          const GraphNodeState& support,
                                                          const AttentionParams& params);

// Parameters for a whole message-flow schedule.
//
// On disk: `params.cfg` (channels, steps, mode, neighborhood, base), an
// optional top-level `pos_map.cmt`, and one `block_<i>/` directory per block
// holding wq/wk/wv/mlp1_w/mlp1_b/mlp2_w/mlp2_b `.cmt` tensors. A directory
// with the tensors at top level and no `block_0/` loads as a single block.
struct ParameterStore {
  std::size_t channels = 0;
  double base = 10000.0;
  std::optional<std::vector<float>> pos_map;
  FlowSchedule schedule;
  std::vector<AttentionParams> blocks;

  PositionalEncoder encoder() const { return PositionalEncoder(channels, base, pos_map); }
  void validate() const;

  static ParameterStore load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  static ParameterStore random(std::size_t channels, const FlowSchedule& schedule,
                               std::uint64_t seed);
  static ParameterStore zero_mlp(std::size_t channels, const FlowSchedule& schedule,
                                 std::uint64_t seed);
};

// Positional fusion once, then per step: inner flow on each grid followed by
// cross flow between them. Returns (query', support').
std::pair<FeatureGrid, FeatureGrid> run_message_flow(const FeatureGrid& query,
                                                     const FeatureGrid& support,
                                                     const FlowSchedule& schedule,
                                                     const ParameterStore& store);

}  // namespace cmatch
