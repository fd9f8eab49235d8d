#include <cstring>
#include <fstream>

#include "cmatch/episode.hpp"
#include "test_support.hpp"

namespace cmatch {
namespace {

using testing::TempDir;

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::vector<std::uint8_t> header(const char* magic, std::vector<std::uint32_t> dims,
                                 std::uint32_t dtype) {
  std::vector<std::uint8_t> out(magic, magic + 4);
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u32(out, d);
  put_u32(out, dtype);
  return out;
}

TEST(TensorFile, RoundTripsSmallFloatTensor) {
  TempDir dir;
  const auto t = Tensor::f32({2, 2}, {1, 2, 3, 4});
  write_tensor(t, dir / "t.cmt");
  EXPECT_EQ(read_tensor(dir / "t.cmt"), t);
}

TEST(TensorFile, ScalarHalfHasExactByteLayout) {
  TempDir dir;
  write_tensor(Tensor::f32({1}, {0.5f}), dir / "h.cmt");
  const auto bytes = file_bytes(dir / "h.cmt");
  const std::vector<std::uint8_t> expected = {'C', 'M', 'T', '1', 1, 0, 0, 0, 1, 0,
                                              0,   0,   1,   0,   0, 0, 0, 0, 0, 0x3F};
  // 4 magic + 4 ndim + 4 dim + 4 dtype + 4 payload.
  ASSERT_EQ(bytes.size(), 20u);
  EXPECT_EQ(bytes, expected);
}

TEST(TensorFile, MaskPayloadIsRawBytes) {
  const auto bytes = encode_tensor(Tensor::u8({2, 2}, {1, 1, 1, 1}));
  ASSERT_EQ(bytes.size(), 4u + 4u + 8u + 4u + 4u);
  EXPECT_EQ(std::vector<std::uint8_t>(bytes.end() - 4, bytes.end()),
            (std::vector<std::uint8_t>{1, 1, 1, 1}));
}

TEST(TensorFile, RejectsBadMagic) {
  TempDir dir;
  auto bytes = header("XXXX", {1}, 1);
  put_u32(bytes, 0);
  write_bytes(dir / "bad.cmt", bytes);
  EXPECT_ERROR_KIND(read_tensor(dir / "bad.cmt"), ErrorKind::kFormat);
}

TEST(TensorFile, RejectsShortPayload) {
  TempDir dir;
  auto bytes = header("CMT1", {3, 3}, 1);
  bytes.resize(bytes.size() + 35, 0);
  write_bytes(dir / "short.cmt", bytes);
  EXPECT_ERROR_KIND(read_tensor(dir / "short.cmt"), ErrorKind::kCorruptFile);
}

TEST(TensorFile, RejectsTrailingBytes) {
  auto bytes = header("CMT1", {2}, 2);
  bytes.resize(bytes.size() + 3, 0);
  EXPECT_ERROR_KIND(decode_tensor(bytes), ErrorKind::kCorruptFile);
}

TEST(TensorFile, RejectsUnknownDtype) {
  auto bytes = header("CMT1", {1}, 7);
  bytes.resize(bytes.size() + 4, 0);
  EXPECT_ERROR_KIND(decode_tensor(bytes), ErrorKind::kFormat);
}

TEST(TensorFile, RejectsTruncatedHeader) {
  const std::vector<std::uint8_t> bytes = {'C', 'M', 'T', '1', 2, 0};
  EXPECT_ERROR_KIND(decode_tensor(bytes), ErrorKind::kCorruptFile);
}

TEST(TensorFile, MissingFileIsIoError) {
  TempDir dir;
  EXPECT_ERROR_KIND(read_tensor(dir / "absent.cmt"), ErrorKind::kIo);
}

TEST(TensorFile, UnwritablePathIsIoError) {
  TempDir dir;
  EXPECT_ERROR_KIND(write_tensor(Tensor::f32({1}, {1}), dir / "no" / "such" / "dir" / "t.cmt"),
                    ErrorKind::kIo);
}

TEST(Tensor, ZeroLengthDimensionIsRejected) {
  EXPECT_ERROR_KIND(Tensor::f32({2, 0}, {}), ErrorKind::kInvalidShape);
}

TEST(Tensor, RankAboveFourIsRejected) {
  EXPECT_ERROR_KIND(Tensor::u8({1, 1, 1, 1, 1}, {0}), ErrorKind::kInvalidShape);
}

TEST(Tensor, WrongDtypeAccessorThrows) {
  const auto t = Tensor::u8({1}, {1});
  EXPECT_ERROR_KIND((void)t.f32_data(), ErrorKind::kShapeMismatch);
}

TEST(TensorProperty, RoundTripOverRandomTensors) {
  Rng rng(2024);
  TempDir dir;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor::Shape shape(1 + rng.below(4));
    std::size_t n = 1;
    for (auto& d : shape) {
      d = 1 + rng.below(5);
      n *= d;
    }
    Tensor t = Tensor::u8({1}, {0});
    if (rng.below(2) == 0) {
      std::vector<float> v(n);
      // Raw bit patterns exercise negative zero, subnormals and extremes.
      for (auto& x : v) {
        std::uint32_t bits;
        do {
          bits = static_cast<std::uint32_t>(rng.below(1ull << 32));
          std::memcpy(&x, &bits, sizeof x);
        } while (std::isnan(x));
      }
      t = Tensor::f32(shape, std::move(v));
    } else {
      std::vector<std::uint8_t> v(n);
      for (auto& x : v) x = static_cast<std::uint8_t>(rng.below(256));
      t = Tensor::u8(shape, std::move(v));
    }
    const auto path = dir / ("t" + std::to_string(trial) + ".cmt");
    write_tensor(t, path);
    ASSERT_EQ(read_tensor(path), t) << "trial " << trial;
  }
}

TEST(FeatureGrid, RejectsOddChannels) {
  EXPECT_ERROR_KIND(FeatureGrid(1, 1, 3, {0, 0, 0}), ErrorKind::kInvalidShape);
}

TEST(FeatureGrid, RejectsNonFiniteValues) {
  EXPECT_ERROR_KIND(FeatureGrid(1, 1, 2, {0.0f, std::numeric_limits<float>::infinity()}),
                    ErrorKind::kInvalidShape);
}

TEST(FeatureGrid, TensorRoundTrip) {
  Rng rng(1);
  const auto g = testing::random_grid(rng, 3, 2, 4);
  EXPECT_EQ(FeatureGrid::from_tensor(g.to_tensor()), g);
  EXPECT_EQ(g.at(2, 1)[3], g.values()[(2 * 2 + 1) * 4 + 3]);
}

TEST(BinaryMask, RejectsNonBinaryEntries) {
  EXPECT_ERROR_KIND(BinaryMask(1, 2, {0, 2}), ErrorKind::kFormat);
}

TEST(BoundingBox, FullCoverIsAllOnes) {
  const auto m = mask_from_bbox({0, 0, 5, 7}, 5, 7);
  EXPECT_EQ(m.count(), 35u);
}

TEST(BoundingBox, SingleCellBox) {
  const auto m = mask_from_bbox({0, 0, 1, 1}, 4, 4);
  EXPECT_EQ(m.count(), 1u);
  EXPECT_EQ(m.at(0, 0), 1);
}

TEST(BoundingBox, EmptyRowRangeIsInvalid) {
  EXPECT_ERROR_KIND(mask_from_bbox({2, 2, 2, 3}, 4, 4), ErrorKind::kInvalidBox);
}

TEST(BoundingBox, OutOfRangeIsInvalid) {
  EXPECT_ERROR_KIND(mask_from_bbox({0, 0, 5, 2}, 4, 4), ErrorKind::kInvalidBox);
}

TEST(BoundingBoxProperty, PopcountEqualsArea) {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 1 + rng.below(20);
    const std::size_t w = 1 + rng.below(20);
    const std::size_t r0 = rng.below(h);
    const std::size_t r1 = r0 + 1 + rng.below(h - r0);
    const std::size_t c0 = rng.below(w);
    const std::size_t c1 = c0 + 1 + rng.below(w - c0);
    const auto m = mask_from_bbox({r0, c0, r1, c1}, h, w);
    ASSERT_EQ(m.count(), (r1 - r0) * (c1 - c0));
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const bool inside = r >= r0 && r < r1 && c >= c0 && c < c1;
        ASSERT_EQ(m.at(r, c), inside ? 1 : 0);
      }
    }
  }
}

TEST(Downsample, ConstantMasksStayConstant) {
  const auto ones = mask_from_bbox({0, 0, 8, 8}, 8, 8);
  EXPECT_EQ(downsample_mask(ones, 4, 4).count(), 16u);
  EXPECT_EQ(downsample_mask(BinaryMask::zeros(8, 8), 4, 4).count(), 0u);
}

TEST(Downsample, HalfCoverageRoundsToForeground) {
  const BinaryMask m(2, 2, {1, 1, 0, 0});
  const auto d = downsample_mask(m, 1, 1);
  EXPECT_EQ(d.at(0, 0), 1);
}

TEST(Downsample, UnevenBlocksFollowFloorBoundaries) {
  // 5 rows into 2: blocks are rows [0,2) and [2,5).
  std::vector<std::uint8_t> v(5, 0);
  v[2] = 1;
  v[3] = 1;
  const auto d = downsample_mask(BinaryMask(5, 1, v), 2, 1);
  EXPECT_EQ(d.at(0, 0), 0);
  EXPECT_EQ(d.at(1, 0), 1);
}

TEST(Downsample, RejectsZeroTarget) {
  EXPECT_ERROR_KIND(downsample_mask(BinaryMask::zeros(4, 4), 0, 2), ErrorKind::kInvalidShape);
}

TEST(Downsample, RejectsUpsampling) {
  EXPECT_ERROR_KIND(downsample_mask(BinaryMask::zeros(4, 4), 5, 4), ErrorKind::kInvalidShape);
}

TEST(DownsampleProperty, IdentityAtEqualResolution) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.below(12);
    const std::size_t w = 1 + rng.below(12);
    std::vector<std::uint8_t> v(h * w);
    for (auto& x : v) x = static_cast<std::uint8_t>(rng.below(2));
    const BinaryMask m(h, w, v);
    ASSERT_EQ(downsample_mask(m, h, w), m);
  }
}

TEST(SyntheticEpisode, SameSeedGivesIdenticalFiles) {
  TempDir a, b;
  const EpisodeSpec spec;
  generate_synthetic_episode(9, spec, a.path());
  generate_synthetic_episode(9, spec, b.path());
  for (const char* f : {"support_feat.cmt", "query_feat.cmt", "support_mask.cmt", "query_gt.cmt",
                        "meta.cfg"}) {
    EXPECT_EQ(file_bytes(a / f), file_bytes(b / f)) << f;
  }
}

TEST(SyntheticEpisode, DifferentSeedsDiffer) {
  const EpisodeSpec spec;
  EXPECT_NE(make_synthetic_episode(1, spec).query, make_synthetic_episode(2, spec).query);
}

TEST(SyntheticEpisode, ForegroundCountIsRoundedFraction) {
  const EpisodeSpec spec;  // 8x8, fg_fraction 0.25
  const auto e = make_synthetic_episode(3, spec);
  EXPECT_EQ(e.support_mask.count(), 16u);
  ASSERT_TRUE(e.query_gt.has_value());
  EXPECT_EQ(e.query_gt->count(), 16u);
}

TEST(SyntheticEpisode, OddChannelsRejected) {
  EpisodeSpec spec;
  spec.channels = 7;
  EXPECT_ERROR_KIND(make_synthetic_episode(1, spec), ErrorKind::kInvalidShape);
}

TEST(SyntheticEpisode, FractionOutsideOpenIntervalRejected) {
  EpisodeSpec spec;
  spec.fg_fraction = 1.0;
  EXPECT_ERROR_KIND(make_synthetic_episode(1, spec), ErrorKind::kConfig);
}

TEST(Episode, SaveLoadRoundTrip) {
  TempDir dir;
  EpisodeSpec spec;
  spec.classes = 3;
  const auto e = make_synthetic_episode(5, spec);
  save_episode(e, dir.path());
  const auto back = load_episode(dir.path());
  EXPECT_EQ(back.support, e.support);
  EXPECT_EQ(back.query, e.query);
  EXPECT_EQ(back.support_mask, e.support_mask);
  EXPECT_EQ(back.query_gt, e.query_gt);
  EXPECT_EQ(back.class_id, "2");
}

TEST(Episode, MissingMaskNamesFile) {
  TempDir dir;
  save_episode(make_synthetic_episode(1, EpisodeSpec{}), dir.path());
  std::filesystem::remove(dir / "support_mask.cmt");
  try {
    (void)load_episode(dir.path());
    FAIL() << "expected IoError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
    EXPECT_NE(std::string(e.what()).find("support_mask.cmt"), std::string::npos);
  }
}

}  // namespace
}  // namespace cmatch
