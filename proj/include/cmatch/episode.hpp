#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "cmatch/kv_config.hpp"
#include "cmatch/tensor.hpp"

namespace cmatch {

// One support/query matching task at feature resolution.
struct Episode {
  FeatureGrid support;
  FeatureGrid query;
  BinaryMask support_mask;
  std::optional<BinaryMask> query_gt;
  std::string class_id = "0";
};

// Reads `support_feat.cmt`, `query_feat.cmt`, `support_mask.cmt` and, when
// present, `query_gt.cmt` and `meta.cfg`. Missing required files raise IoError
// naming the file.
Episode load_episode(const std::filesystem::path& dir);
void save_episode(const Episode& episode, const std::filesystem::path& dir);

struct EpisodeSpec {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 8;
  double fg_fraction = 0.25;
  // Distance between the foreground and background cluster centres, in units
  // of the per-coordinate noise stddev.
  double separation = 8.0;
  double noise = 1.0;
  // Episodes are assigned class `seed % classes`.
  int classes = 1;

  static EpisodeSpec from_config(const KeyValueConfig& cfg);
  void validate() const;
};

// Foreground features are drawn around a centre at distance
// `separation * noise` from the origin along a seeded random direction;
// background features are drawn around the origin. Support and query each get
// a compact foreground blob of exactly round(fg_fraction * H * W) cells.
Episode make_synthetic_episode(std::uint64_t seed, const EpisodeSpec& spec);

void generate_synthetic_episode(std::uint64_t seed, const EpisodeSpec& spec,
                                const std::filesystem::path& out_dir);

}  // namespace cmatch
