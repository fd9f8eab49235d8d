#include "cmatch/episode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

#include "cmatch/error.hpp"
#include "cmatch/random.hpp"

namespace cmatch {

namespace {

namespace fs = std::filesystem;

Tensor read_required(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kIo, "missing episode file " + path.string());
  return read_tensor(path);
}

std::vector<std::uint8_t> blob_mask(Rng& rng, std::size_t height, std::size_t width,
                                    std::size_t count) {
  const double cr = rng.uniform(0.0, static_cast<double>(height));
  const double cc = rng.uniform(0.0, static_cast<double>(width));
  std::vector<std::size_t> order(height * width);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> dist(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const double dr = static_cast<double>(i / width) + 0.5 - cr;
    const double dc = static_cast<double>(i % width) + 0.5 - cc;
    dist[i] = dr * dr + dc * dc;
  }
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  std::vector<std::uint8_t> mask(order.size(), 0);
  for (std::size_t i = 0; i < count; ++i) mask[order[i]] = 1;
  return mask;
}

std::vector<float> draw_features(Rng& rng, std::span<const std::uint8_t> mask,
                                 std::span<const double> fg_centre, double noise) {
  const std::size_t channels = fg_centre.size();
  std::vector<float> values(mask.size() * channels);
  for (std::size_t n = 0; n < mask.size(); ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double centre = mask[n] ? fg_centre[c] : 0.0;
      values[n * channels + c] = static_cast<float>(centre + noise * rng.normal());
    }
  }
  return values;
}

}  // namespace

Episode load_episode(const fs::path& dir) {
  auto support = FeatureGrid::from_tensor(read_required(dir / "support_feat.cmt"));
  auto query = FeatureGrid::from_tensor(read_required(dir / "query_feat.cmt"));
  auto mask = BinaryMask::from_tensor(read_required(dir / "support_mask.cmt"));
  std::optional<BinaryMask> gt;
  if (fs::exists(dir / "query_gt.cmt")) {
    gt = BinaryMask::from_tensor(read_tensor(dir / "query_gt.cmt"));
  }
  std::string class_id = "0";
  if (fs::exists(dir / "meta.cfg")) {
    class_id = KeyValueConfig::load(dir / "meta.cfg").get_string("class", class_id);
  }
  return Episode{std::move(support), std::move(query), std::move(mask), std::move(gt),
                 std::move(class_id)};
}

void save_episode(const Episode& episode, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  write_tensor(episode.support.to_tensor(), dir / "support_feat.cmt");
  write_tensor(episode.query.to_tensor(), dir / "query_feat.cmt");
  write_tensor(episode.support_mask.to_tensor(), dir / "support_mask.cmt");
  if (episode.query_gt) write_tensor(episode.query_gt->to_tensor(), dir / "query_gt.cmt");
  std::ofstream meta(dir / "meta.cfg", std::ios::trunc);
  meta << "class = " << episode.class_id << "\n";
  if (!meta) throw Error(ErrorKind::kIo, "cannot write " + (dir / "meta.cfg").string());
}

EpisodeSpec EpisodeSpec::from_config(const KeyValueConfig& cfg) {
  EpisodeSpec spec;
  auto dim = [&](const char* key, std::size_t fallback) {
    const long long v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 1) throw Error(ErrorKind::kInvalidShape, std::string(key) + " must be >= 1");
    return static_cast<std::size_t>(v);
  };
  spec.height = dim("H", spec.height);
  spec.width = dim("W", spec.width);
  spec.channels = dim("C", spec.channels);
  spec.fg_fraction = cfg.get_double("fg_fraction", spec.fg_fraction);
  spec.separation = cfg.get_double("separation", spec.separation);
  spec.noise = cfg.get_double("noise", spec.noise);
  spec.classes = static_cast<int>(cfg.get_int("classes", spec.classes));
  spec.validate();
  return spec;
}

void EpisodeSpec::validate() const {
  if (height < 1 || width < 1) throw Error(ErrorKind::kInvalidShape, "grid must be non-empty");
  if (channels < 2 || channels % 2 != 0) {
    throw Error(ErrorKind::kInvalidShape,
                "channel count must be even and >= 2, got " + std::to_string(channels));
  }
  if (!(fg_fraction > 0.0 && fg_fraction < 1.0)) {
    throw Error(ErrorKind::kConfig, "fg_fraction must lie in (0,1)");
  }
  if (!(separation > 0.0) || !(noise > 0.0)) {
    throw Error(ErrorKind::kConfig, "separation and noise must be positive");
  }
  if (classes < 1) throw Error(ErrorKind::kConfig, "classes must be >= 1");
}

Episode make_synthetic_episode(std::uint64_t seed, const EpisodeSpec& spec) {
  spec.validate();
  Rng rng(seed);
  const std::size_t cells = spec.height * spec.width;
  const auto fg_cells = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(spec.fg_fraction * static_cast<double>(cells))), 1,
      cells - 1);

  std::vector<double> centre(spec.channels);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& c : centre) {
      c = rng.normal();
      norm += c * c;
    }
    norm = std::sqrt(norm);
  } while (norm < 1e-6);
  for (auto& c : centre) c *= spec.separation * spec.noise / norm;

  auto support_mask = blob_mask(rng, spec.height, spec.width, fg_cells);
  auto query_mask = blob_mask(rng, spec.height, spec.width, fg_cells);
  auto support_values = draw_features(rng, support_mask, centre, spec.noise);
  auto query_values = draw_features(rng, query_mask, centre, spec.noise);

  return Episode{
      FeatureGrid(spec.height, spec.width, spec.channels, std::move(support_values)),
      FeatureGrid(spec.height, spec.width, spec.channels, std::move(query_values)),
      BinaryMask(spec.height, spec.width, std::move(support_mask)),
      BinaryMask(spec.height, spec.width, std::move(query_mask)),
      std::to_string(seed % static_cast<std::uint64_t>(spec.classes)),
  };
}

void generate_synthetic_episode(std::uint64_t seed, const EpisodeSpec& spec,
                                const fs::path& out_dir) {
  save_episode(make_synthetic_episode(seed, spec), out_dir);
}

}  // namespace cmatch
