#include "cmatch/message_flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "cmatch/error.hpp"
#include "cmatch/kv_config.hpp"
#include "cmatch/random.hpp"

namespace cmatch {

namespace {

namespace fs = std::filesystem;

void check_size(const std::vector<float>& v, std::size_t expected, const char* name) {
  if (v.size() != expected) {
    throw Error(ErrorKind::kShapeMismatch, std::string(name) + " has " +
                                               std::to_string(v.size()) + " entries, expected " +
                                               std::to_string(expected));
  }
  if (!std::ranges::all_of(v, [](float x) { return std::isfinite(x); })) {
    throw Error(ErrorKind::kInvalidShape, std::string(name) + " contains non-finite values");
  }
}

// y = x * W (+ b) for one row vector, accumulated in double.
void affine(std::span<const double> x, std::span<const float> weight, std::span<const float> bias,
            std::span<double> y) {
  const std::size_t out = y.size();
  for (std::size_t o = 0; o < out; ++o) y[o] = bias.empty() ? 0.0 : bias[o];
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const float* row = weight.data() + i * out;
    for (std::size_t o = 0; o < out; ++o) y[o] += xi * row[o];
  }
}

// Projects every node of `grid` through W: result is nodes x C, row-major.
std::vector<double> project(const GraphNodeState& grid, std::span<const float> weight) {
  const std::size_t c = grid.channels();
  std::vector<double> out(grid.nodes() * c);
  std::vector<double> x(c);
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    auto node = grid.node(n);
    std::copy(node.begin(), node.end(), x.begin());
    affine(x, weight, {}, std::span<double>(out.data() + n * c, c));
  }
  return out;
}

void glorot(Rng& rng, std::vector<float>& w, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  w.resize(fan_in * fan_out);
  for (auto& x : w) x = static_cast<float>(rng.uniform(-limit, limit));
}

std::vector<float> tensor_values(const fs::path& path, const Tensor::Shape& shape) {
  if (!fs::exists(path)) throw Error(ErrorKind::kConfig, "missing parameter file " + path.string());
  Tensor t = read_tensor(path);
  if (t.shape() != shape || t.dtype() != DType::kFloat32) {
    throw Error(ErrorKind::kConfig, path.string() + " has unexpected shape or dtype");
  }
  auto v = t.f32_data();
  return {v.begin(), v.end()};
}

AttentionParams load_block(const fs::path& dir, std::size_t c) {
  AttentionParams p;
  p.channels = c;
  p.wq = tensor_values(dir / "wq.cmt", {c, c});
  p.wk = tensor_values(dir / "wk.cmt", {c, c});
  p.wv = tensor_values(dir / "wv.cmt", {c, c});
  p.mlp1_w = tensor_values(dir / "mlp1_w.cmt", {2 * c, c});
  p.mlp1_b = tensor_values(dir / "mlp1_b.cmt", {c});
  p.mlp2_w = tensor_values(dir / "mlp2_w.cmt", {c, c});
  p.mlp2_b = tensor_values(dir / "mlp2_b.cmt", {c});
  p.validate();
  return p;
}

void save_block(const AttentionParams& p, const fs::path& dir) {
  const std::size_t c = p.channels;
  fs::create_directories(dir);
  write_tensor(Tensor::f32({c, c}, p.wq), dir / "wq.cmt");
  write_tensor(Tensor::f32({c, c}, p.wk), dir / "wk.cmt");
  write_tensor(Tensor::f32({c, c}, p.wv), dir / "wv.cmt");
  write_tensor(Tensor::f32({2 * c, c}, p.mlp1_w), dir / "mlp1_w.cmt");
  write_tensor(Tensor::f32({c}, p.mlp1_b), dir / "mlp1_b.cmt");
  write_tensor(Tensor::f32({c, c}, p.mlp2_w), dir / "mlp2_w.cmt");
  write_tensor(Tensor::f32({c}, p.mlp2_b), dir / "mlp2_b.cmt");
}

}  // namespace

// --- schedule --------------------------------------------------------------

std::size_t FlowSchedule::blocks_required() const {
  return mode == FlowMode::kIterative ? 1 : static_cast<std::size_t>(std::max(steps, 0));
}

void FlowSchedule::validate() const {
  if (steps < 1) throw Error(ErrorKind::kConfig, "message flow needs steps >= 1");
}

const char* to_string(FlowMode mode) {
  return mode == FlowMode::kIterative ? "iterative" : "stacked";
}

FlowMode parse_flow_mode(const std::string& text) {
  if (text == "iterative") return FlowMode::kIterative;
  if (text == "stacked") return FlowMode::kStacked;
  throw Error(ErrorKind::kConfig, "schedule must be iterative or stacked, got " + text);
}

Neighborhood parse_neighborhood(const std::string& text) {
  if (text == "4" || text == "4-connected") return Neighborhood::kFour;
  if (text == "8" || text == "8-connected") return Neighborhood::kEight;
  throw Error(ErrorKind::kConfig, "neighborhood must be 4 or 8, got " + text);
}

// --- parameters ------------------------------------------------------------

void AttentionParams::validate() const {
  const std::size_t c = channels;
  if (c == 0) throw Error(ErrorKind::kInvalidShape, "attention params have zero channels");
  check_size(wq, c * c, "wq");
  check_size(wk, c * c, "wk");
  check_size(wv, c * c, "wv");
  check_size(mlp1_w, 2 * c * c, "mlp1_w");
  check_size(mlp1_b, c, "mlp1_b");
  check_size(mlp2_w, c * c, "mlp2_w");
  check_size(mlp2_b, c, "mlp2_b");
}

AttentionParams AttentionParams::random(std::size_t channels, std::uint64_t seed) {
  Rng rng(seed);
  AttentionParams p;
  p.channels = channels;
  glorot(rng, p.wq, channels, channels);
  glorot(rng, p.wk, channels, channels);
  glorot(rng, p.wv, channels, channels);
  glorot(rng, p.mlp1_w, 2 * channels, channels);
  glorot(rng, p.mlp2_w, channels, channels);
  p.mlp1_b.assign(channels, 0.0f);
  p.mlp2_b.assign(channels, 0.0f);
  return p;
}

AttentionParams AttentionParams::zero_mlp(std::size_t channels, std::uint64_t seed) {
  AttentionParams p = random(channels, seed);
  std::ranges::fill(p.mlp1_w, 0.0f);
  std::ranges::fill(p.mlp2_w, 0.0f);
  return p;
}

AttentionParams AttentionParams::identity_projections(std::size_t channels) {
  AttentionParams p;
  p.channels = channels;
  std::vector<float> eye(channels * channels, 0.0f);
  for (std::size_t i = 0; i < channels; ++i) eye[i * channels + i] = 1.0f;
  p.wq = p.wk = p.wv = eye;
  p.mlp1_w.assign(2 * channels * channels, 0.0f);
  p.mlp1_b.assign(channels, 0.0f);
  p.mlp2_w.assign(channels * channels, 0.0f);
  p.mlp2_b.assign(channels, 0.0f);
  return p;
}

void ParameterStore::validate() const {
  schedule.validate();
  if (channels == 0 || channels % 4 != 0) {
    throw Error(ErrorKind::kConfig, "parameter channels must be a positive multiple of 4");
  }
  if (blocks.size() != schedule.blocks_required()) {
    std::ostringstream os;
    os << to_string(schedule.mode) << " schedule with " << schedule.steps << " steps needs "
       << schedule.blocks_required() << " parameter block(s), store has " << blocks.size();
    throw Error(ErrorKind::kConfig, os.str());
  }
  for (const auto& b : blocks) {
    if (b.channels != channels) throw Error(ErrorKind::kConfig, "block channel count differs");
    b.validate();
  }
  if (pos_map) check_size(*pos_map, channels * channels, "pos_map");
}

ParameterStore ParameterStore::load(const fs::path& dir) {
  const auto cfg = KeyValueConfig::load(dir / "params.cfg");
  ParameterStore store;
  const long long c = cfg.get_int("channels", 0);
  if (c <= 0) throw Error(ErrorKind::kConfig, "params.cfg: channels must be positive");
  store.channels = static_cast<std::size_t>(c);
  store.base = cfg.get_double("base", store.base);
  store.schedule.steps = static_cast<int>(cfg.get_int("steps", 1));
  store.schedule.mode = parse_flow_mode(cfg.get_string("mode", "iterative"));
  store.schedule.neighborhood = parse_neighborhood(cfg.get_string("neighborhood", "8"));
  if (fs::exists(dir / "pos_map.cmt")) {
    store.pos_map = tensor_values(dir / "pos_map.cmt", {store.channels, store.channels});
  }
  if (fs::exists(dir / "block_0")) {
    for (std::size_t b = 0; fs::exists(dir / ("block_" + std::to_string(b))); ++b) {
      store.blocks.push_back(load_block(dir / ("block_" + std::to_string(b)), store.channels));
    }
  } else {
    store.blocks.push_back(load_block(dir, store.channels));
  }
  return store;
}

void ParameterStore::save(const fs::path& dir) const {
  fs::create_directories(dir);
  std::ofstream cfg(dir / "params.cfg", std::ios::trunc);
  cfg << "channels = " << channels << "\n"
      << "steps = " << schedule.steps << "\n"
      << "mode = " << to_string(schedule.mode) << "\n"
      << "neighborhood = " << static_cast<int>(schedule.neighborhood) << "\n"
      << "base = " << base << "\n";
  if (!cfg) throw Error(ErrorKind::kIo, "cannot write " + (dir / "params.cfg").string());
  if (pos_map) write_tensor(Tensor::f32({channels, channels}, *pos_map), dir / "pos_map.cmt");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    save_block(blocks[b], dir / ("block_" + std::to_string(b)));
  }
}

ParameterStore ParameterStore::random(std::size_t channels, const FlowSchedule& schedule,
                                      std::uint64_t seed) {
  schedule.validate();
  ParameterStore store;
  store.channels = channels;
  store.schedule = schedule;
  for (std::size_t b = 0; b < schedule.blocks_required(); ++b) {
    store.blocks.push_back(AttentionParams::random(channels, seed + b));
  }
  return store;
}

ParameterStore ParameterStore::zero_mlp(std::size_t channels, const FlowSchedule& schedule,
                                        std::uint64_t seed) {
  ParameterStore store = random(channels, schedule, seed);
  for (auto& b : store.blocks) b = AttentionParams::zero_mlp(channels, seed);
  return store;
}

// --- positional encoding ---------------------------------------------------

Tensor positional_encode(std::size_t height, std::size_t width, std::size_t channels,
                         double base) {
  if (channels == 0 || channels % 4 != 0) {
    throw Error(ErrorKind::kInvalidShape,
                "positional encoding needs channels divisible by 4, got " +
                    std::to_string(channels));
  }
  if (height == 0 || width == 0) throw Error(ErrorKind::kInvalidShape, "empty grid");
  if (!(base > 0.0)) throw Error(ErrorKind::kConfig, "encoding base must be positive");
  const std::size_t half = channels / 2;
  std::vector<double> inv_freq(half / 2);
  for (std::size_t i = 0; i < inv_freq.size(); ++i) {
    inv_freq[i] = std::pow(base, -4.0 * static_cast<double>(i) / static_cast<double>(channels));
  }
  std::vector<float> values(height * width * channels);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      float* out = values.data() + (r * width + c) * channels;
      for (std::size_t i = 0; i < inv_freq.size(); ++i) {
        const double ar = static_cast<double>(r) * inv_freq[i];
        const double ac = static_cast<double>(c) * inv_freq[i];
        out[2 * i] = static_cast<float>(std::sin(ar));
        out[2 * i + 1] = static_cast<float>(std::cos(ar));
        out[half + 2 * i] = static_cast<float>(std::sin(ac));
        out[half + 2 * i + 1] = static_cast<float>(std::cos(ac));
      }
    }
  }
  return Tensor::f32({height, width, channels}, std::move(values));
}

PositionalEncoder::PositionalEncoder(std::size_t channels, double base,
                                     std::optional<std::vector<float>> linear_map)
    : channels_(channels), base_(base), map_(std::move(linear_map)) {
  if (map_) check_size(*map_, channels * channels, "pos_map");
}

Tensor PositionalEncoder::encode(std::size_t height, std::size_t width) const {
  Tensor raw = positional_encode(height, width, channels_, base_);
  if (!map_) return raw;
  auto src = raw.f32_data();
  std::vector<float> out(src.size());
  std::vector<double> x(channels_);
  std::vector<double> y(channels_);
  for (std::size_t n = 0; n < height * width; ++n) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(n * channels_), channels_, x.begin());
    affine(x, *map_, {}, y);
    std::ranges::transform(y, out.begin() + static_cast<std::ptrdiff_t>(n * channels_),
                           [](double v) { return static_cast<float>(v); });
  }
  return Tensor::f32(raw.shape(), std::move(out));
}

FeatureGrid fuse_position(const FeatureGrid& features, const Tensor& encoding) {
  const Tensor::Shape expected{features.height(), features.width(), features.channels()};
  if (encoding.shape() != expected || encoding.dtype() != DType::kFloat32) {
    throw Error(ErrorKind::kShapeMismatch, "encoding shape differs from feature grid");
  }
  auto f = features.values();
  auto e = encoding.f32_data();
  std::vector<float> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] + e[i];
  return FeatureGrid(features.height(), features.width(), features.channels(), std::move(out));
}

// --- graph -----------------------------------------------------------------

Adjacency Adjacency::full(std::size_t targets, std::size_t sources) {
  Adjacency a;
  a.targets_ = targets;
  a.sources_ = sources;
  a.full_ = true;
  a.all_.resize(sources);
  std::iota(a.all_.begin(), a.all_.end(), std::size_t{0});
  return a;
}

Adjacency Adjacency::from_lists(std::size_t sources,
                                std::vector<std::vector<std::size_t>> lists) {
  for (const auto& l : lists) {
    for (std::size_t s : l) {
      if (s >= sources) throw Error(ErrorKind::kShapeMismatch, "edge source out of range");
    }
  }
  Adjacency a;
  a.targets_ = lists.size();
  a.sources_ = sources;
  a.lists_ = std::move(lists);
  return a;
}

std::span<const std::size_t> Adjacency::sources_of(std::size_t target) const {
  return full_ ? std::span<const std::size_t>(all_) : std::span<const std::size_t>(lists_[target]);
}

Adjacency grid_adjacency(std::size_t height, std::size_t width, Neighborhood nbhd,
                         BorderMode border) {
  const std::size_t nodes = height * width;
  std::vector<std::vector<std::size_t>> lists(nodes);
  if (nodes == 1) {
    lists[0] = {0};
    return Adjacency::from_lists(1, std::move(lists));
  }
  const auto h = static_cast<long>(height);
  const auto w = static_cast<long>(width);
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      std::set<std::size_t> seen;
      for (long dr = -1; dr <= 1; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          if (nbhd == Neighborhood::kFour && dr != 0 && dc != 0) continue;
          long rr = r + dr;
          long cc = c + dc;
          if (border == BorderMode::kWrap) {
            rr = (rr + h) % h;
            cc = (cc + w) % w;
          } else if (rr < 0 || rr >= h || cc < 0 || cc >= w) {
            continue;
          }
          const auto idx = static_cast<std::size_t>(rr * w + cc);
          if (idx != static_cast<std::size_t>(r * w + c)) seen.insert(idx);
        }
      }
      lists[static_cast<std::size_t>(r * w + c)].assign(seen.begin(), seen.end());
    }
  }
  return Adjacency::from_lists(nodes, std::move(lists));
}

std::vector<std::vector<double>> attention_weights(const GraphNodeState& targets,
                                                   const GraphNodeState& sources,
                                                   const Adjacency& edges,
                                                   const AttentionParams& params) {
  const std::size_t c = targets.channels();
  if (sources.channels() != c || params.channels != c) {
    throw Error(ErrorKind::kShapeMismatch, "attention widths differ");
  }
  if (edges.targets() != targets.nodes() || edges.sources() != sources.nodes()) {
    throw Error(ErrorKind::kShapeMismatch, "adjacency does not match node counts");
  }
  const auto q = project(targets, params.wq);
  const auto k = project(sources, params.wk);

  std::vector<std::vector<double>> alpha(targets.nodes());
  for (std::size_t i = 0; i < targets.nodes(); ++i) {
    auto src = edges.sources_of(i);
    if (src.empty()) {
      throw Error(ErrorKind::kIsolatedNode, "target node " + std::to_string(i) + " has no edges");
    }
    auto& row = alpha[i];
    row.resize(src.size());
    const double* qi = q.data() + i * c;
    for (std::size_t e = 0; e < src.size(); ++e) {
      const double* kj = k.data() + src[e] * c;
      double logit = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) logit += qi[ch] * kj[ch];
      row[e] = logit;
    }
    const double top = *std::ranges::max_element(row);
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - top);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  return alpha;
}

Tensor attention_aggregate(const GraphNodeState& targets, const GraphNodeState& sources,
                           const Adjacency& edges, const AttentionParams& params) {
  const auto alpha = attention_weights(targets, sources, edges, params);
  const std::size_t c = targets.channels();
  const auto v = project(sources, params.wv);
  std::vector<float> out(targets.nodes() * c);
  std::vector<double> acc(c);
  for (std::size_t i = 0; i < targets.nodes(); ++i) {
    std::ranges::fill(acc, 0.0);
    auto src = edges.sources_of(i);
    for (std::size_t e = 0; e < src.size(); ++e) {
      const double* vj = v.data() + src[e] * c;
      for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += alpha[i][e] * vj[ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = static_cast<float>(acc[ch]);
  }
  return Tensor::f32({targets.nodes(), c}, std::move(out));
}

GraphNodeState residual_update(const GraphNodeState& state, const Tensor& messages,
                               const AttentionParams& params) {
  const std::size_t c = state.channels();
  if (messages.shape() != Tensor::Shape{state.nodes(), c} ||
      messages.dtype() != DType::kFloat32 || params.channels != c) {
    throw Error(ErrorKind::kShapeMismatch, "messages or params do not match node state");
  }
  auto msg = messages.f32_data();
  std::vector<float> out(state.values().begin(), state.values().end());
  std::vector<double> joined(2 * c);
  std::vector<double> hidden(c);
  std::vector<double> delta(c);
  for (std::size_t n = 0; n < state.nodes(); ++n) {
    auto f = state.node(n);
    std::copy(f.begin(), f.end(), joined.begin());
    std::copy_n(msg.begin() + static_cast<std::ptrdiff_t>(n * c), c,
                joined.begin() + static_cast<std::ptrdiff_t>(c));
    affine(joined, params.mlp1_w, params.mlp1_b, hidden);
    for (auto& h : hidden) h = std::max(h, 0.0);
    affine(hidden, params.mlp2_w, params.mlp2_b, delta);
    for (std::size_t ch = 0; ch < c; ++ch) {
      out[n * c + ch] = static_cast<float>(static_cast<double>(f[ch]) + delta[ch]);
    }
  }
  return GraphNodeState(state.height(), state.width(), c, std::move(out));
}

GraphNodeState inner_flow_step(const GraphNodeState& grid, const AttentionParams& params,
                               Neighborhood nbhd, BorderMode border) {
  const auto edges = grid_adjacency(grid.height(), grid.width(), nbhd, border);
  return residual_update(grid, attention_aggregate(grid, grid, edges, params), params);
}

std::pair<GraphNodeState, GraphNodeState> cross_flow_step(const GraphNodeState& query,
                                                          const GraphNodeState& support,
                                                          const AttentionParams& params) {
  if (query.channels() != support.channels()) {
    throw Error(ErrorKind::kShapeMismatch, "query and support widths differ");
  }
  if (query.nodes() == 0 || support.nodes() == 0) {
    throw Error(ErrorKind::kInvalidShape, "cross flow needs non-empty grids");
  }
  const auto to_query = attention_aggregate(
      query, support, Adjacency::full(query.nodes(), support.nodes()), params);
  const auto to_support = attention_aggregate(
      support, query, Adjacency::full(support.nodes(), query.nodes()), params);
  return {residual_update(query, to_query, params), residual_update(support, to_support, params)};
}

std::pair<FeatureGrid, FeatureGrid> run_message_flow(const FeatureGrid& query,
                                                     const FeatureGrid& support,
                                                     const FlowSchedule& schedule,
                                                     const ParameterStore& store) {
  schedule.validate();
  if (store.blocks.size() != schedule.blocks_required()) {
    std::ostringstream os;
    os << to_string(schedule.mode) << " schedule with " << schedule.steps << " steps needs "
       << schedule.blocks_required() << " parameter block(s), store has " << store.blocks.size();
    throw Error(ErrorKind::kConfig, os.str());
  }
  if (query.channels() != support.channels() || query.channels() != store.channels) {
    throw Error(ErrorKind::kShapeMismatch, "feature width differs from parameter width");
  }
  const auto encoder = store.encoder();
  FeatureGrid q = fuse_position(query, encoder.encode(query.height(), query.width()));
  FeatureGrid s = fuse_position(support, encoder.encode(support.height(), support.width()));
  for (int step = 0; step < schedule.steps; ++step) {
    const auto& params = schedule.mode == FlowMode::kIterative
                             ? store.blocks.front()
                             : store.blocks[static_cast<std::size_t>(step)];
    q = inner_flow_step(q, params, schedule.neighborhood);
    s = inner_flow_step(s, params, schedule.neighborhood);
    auto [q_next, s_next] = cross_flow_step(q, s, params);
    q = std::move(q_next);
    s = std::move(s_next);
  }
  return {std::move(q), std::move(s)};
}

}  // namespace cmatch
