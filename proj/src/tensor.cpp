#include "cmatch/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "cmatch/error.hpp"

namespace cmatch {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'T', '1'};
constexpr std::size_t kMaxRank = 4;

std::string shape_str(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + 4 > bytes.size()) {
    throw Error(ErrorKind::kCorruptFile, "truncated header");
  }
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes[pos + b]) << (8 * b);
  pos += 4;
  return v;
}

std::size_t product(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

void check_shape(const Tensor::Shape& shape, std::size_t payload_len) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw Error(ErrorKind::kInvalidShape, "rank must be in [1,4], got " + shape_str(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw Error(ErrorKind::kInvalidShape, "zero-length dimension in " + shape_str(shape));
  }
  if (product(shape) != payload_len) {
    throw Error(ErrorKind::kInvalidShape,
                "shape " + shape_str(shape) + " does not match " +
                    std::to_string(payload_len) + " elements");
  }
}

Tensor::Tensor(Shape shape, std::variant<std::vector<float>, std::vector<std::uint8_t>> data)
    : shape_(std::move(shape)), data_(std::move(data)) {}

Tensor Tensor::f32(Shape shape, std::vector<float> values) {
  check_shape(shape, values.size());
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::u8(Shape shape, std::vector<std::uint8_t> values) {
  check_shape(shape, values.size());
  return Tensor(std::move(shape), std::move(values));
}

std::size_t Tensor::numel() const noexcept { return product(shape_); }

DType Tensor::dtype() const noexcept {
  return std::holds_alternative<std::vector<float>>(data_) ? DType::kFloat32 : DType::kUInt8;
}

std::span<const float> Tensor::f32_data() const {
  if (auto* v = std::get_if<std::vector<float>>(&data_)) return *v;
  throw Error(ErrorKind::kShapeMismatch, "tensor is uint8, expected float32");
}

std::span<const std::uint8_t> Tensor::u8_data() const {
  if (auto* v = std::get_if<std::vector<std::uint8_t>>(&data_)) return *v;
  throw Error(ErrorKind::kShapeMismatch, "tensor is float32, expected uint8");
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.shape_ != b.shape_ || a.dtype() != b.dtype()) return false;
  if (a.dtype() == DType::kUInt8) {
    return std::ranges::equal(a.u8_data(), b.u8_data());
  }
  auto x = a.f32_data();
  auto y = b.f32_data();
  return std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  const std::size_t elem = t.dtype() == DType::kFloat32 ? 4 : 1;
  out.reserve(12 + 4 * t.ndim() + elem * t.numel());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  put_u32(out, static_cast<std::uint32_t>(t.dtype()));
  if (t.dtype() == DType::kFloat32) {
    for (float v : t.f32_data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  } else {
    auto data = t.u8_data();
    out.insert(out.end(), data.begin(), data.end());
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorKind::kFormat, "missing CMT1 magic");
  }
  std::size_t pos = 4;
  const std::uint32_t ndim = get_u32(bytes, pos);
  if (ndim == 0 || ndim > kMaxRank) {
    throw Error(ErrorKind::kFormat, "unsupported rank " + std::to_string(ndim));
  }
  Tensor::Shape shape(ndim);
  for (auto& d : shape) d = get_u32(bytes, pos);
  const std::uint32_t code = get_u32(bytes, pos);
  if (code != static_cast<std::uint32_t>(DType::kFloat32) &&
      code != static_cast<std::uint32_t>(DType::kUInt8)) {
    throw Error(ErrorKind::kFormat, "unknown dtype code " + std::to_string(code));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw Error(ErrorKind::kFormat, "zero-length dimension");
  }
  const std::size_t n = product(shape);
  const std::size_t elem = code == static_cast<std::uint32_t>(DType::kFloat32) ? 4 : 1;
  const std::size_t payload = bytes.size() - pos;
  if (payload != n * elem) {
    throw Error(ErrorKind::kCorruptFile, "payload is " + std::to_string(payload) +
                                             " bytes, shape " + shape_str(shape) +
                                             " requires " + std::to_string(n * elem));
  }
  if (elem == 1) {
    return Tensor::u8(std::move(shape), {bytes.begin() + pos, bytes.end()});
  }
  std::vector<float> values(n);
  for (auto& v : values) v = std::bit_cast<float>(get_u32(bytes, pos));
  return Tensor::f32(std::move(shape), std::move(values));
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.detail());
  }
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

// --- FeatureGrid ---------------------------------------------------------

FeatureGrid::FeatureGrid(std::size_t height, std::size_t width, std::size_t channels,
                         std::vector<float> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  if (height == 0 || width == 0) throw Error(ErrorKind::kInvalidShape, "empty feature grid");
  if (channels < 2 || channels % 2 != 0) {
    throw Error(ErrorKind::kInvalidShape,
                "channel count must be even and >= 2, got " + std::to_string(channels));
  }
  if (values_.size() != height * width * channels) {
    throw Error(ErrorKind::kInvalidShape, "feature payload does not match H*W*C");
  }
  if (!std::ranges::all_of(values_, [](float v) { return std::isfinite(v); })) {
    throw Error(ErrorKind::kInvalidShape, "feature grid contains non-finite values");
  }
}

FeatureGrid FeatureGrid::from_tensor(const Tensor& t) {
  if (t.ndim() != 3 || t.dtype() != DType::kFloat32) {
    throw Error(ErrorKind::kShapeMismatch, "feature grid must be a float32 [H,W,C] tensor");
  }
  auto data = t.f32_data();
  return FeatureGrid(t.shape()[0], t.shape()[1], t.shape()[2], {data.begin(), data.end()});
}

Tensor FeatureGrid::to_tensor() const {
  return Tensor::f32({height_, width_, channels_}, values_);
}

// --- BinaryMask ----------------------------------------------------------

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height == 0 || width == 0) throw Error(ErrorKind::kInvalidShape, "empty mask");
  if (values_.size() != height * width) {
    throw Error(ErrorKind::kInvalidShape, "mask payload does not match H*W");
  }
  if (!std::ranges::all_of(values_, [](std::uint8_t v) { return v <= 1; })) {
    throw Error(ErrorKind::kFormat, "mask entries must be 0 or 1");
  }
}

BinaryMask BinaryMask::zeros(std::size_t height, std::size_t width) {
  return BinaryMask(height, width, std::vector<std::uint8_t>(height * width, 0));
}

BinaryMask BinaryMask::from_tensor(const Tensor& t) {
  if (t.ndim() != 2 || t.dtype() != DType::kUInt8) {
    throw Error(ErrorKind::kShapeMismatch, "mask must be a uint8 [H,W] tensor");
  }
  auto data = t.u8_data();
  return BinaryMask(t.shape()[0], t.shape()[1], {data.begin(), data.end()});
}

Tensor BinaryMask::to_tensor() const { return Tensor::u8({height_, width_}, values_); }

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::ranges::count(values_, std::uint8_t{1}));
}

BinaryMask BinaryMask::inverted() const {
  std::vector<std::uint8_t> out(values_.size());
  std::ranges::transform(values_, out.begin(),
                         [](std::uint8_t v) { return static_cast<std::uint8_t>(1 - v); });
  return BinaryMask(height_, width_, std::move(out));
}

BinaryMask mask_from_bbox(const BoundingBox& box, std::size_t height, std::size_t width) {
  if (!(box.r0 < box.r1 && box.r1 <= height && box.c0 < box.c1 && box.c1 <= width)) {
    std::ostringstream os;
    os << "box (" << box.r0 << "," << box.c0 << "," << box.r1 << "," << box.c1
       << ") invalid for " << height << "x" << width;
    throw Error(ErrorKind::kInvalidBox, os.str());
  }
  std::vector<std::uint8_t> values(height * width, 0);
  for (std::size_t r = box.r0; r < box.r1; ++r) {
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(r * width + box.c0),
                box.c1 - box.c0, std::uint8_t{1});
  }
  return BinaryMask(height, width, std::move(values));
}

BinaryMask downsample_mask(const BinaryMask& mask, std::size_t height, std::size_t width) {
  if (height < 1 || width < 1) throw Error(ErrorKind::kInvalidShape, "target size must be >= 1");
  const std::size_t src_h = mask.height();
  const std::size_t src_w = mask.width();
  if (height > src_h || width > src_w) {
    throw Error(ErrorKind::kInvalidShape, "downsample target larger than source");
  }
  std::vector<std::uint8_t> out(height * width, 0);
  for (std::size_t i = 0; i < height; ++i) {
    const std::size_t r_begin = i * src_h / height;
    const std::size_t r_end = (i + 1) * src_h / height;
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t c_begin = j * src_w / width;
      const std::size_t c_end = (j + 1) * src_w / width;
      std::size_t ones = 0;
      for (std::size_t r = r_begin; r < r_end; ++r) {
        for (std::size_t c = c_begin; c < c_end; ++c) ones += mask.at(r, c);
      }
      const std::size_t area = (r_end - r_begin) * (c_end - c_begin);
      // mean >= 0.5 without floating point
      out[i * width + j] = 2 * ones >= area ? 1 : 0;
    }
  }
  return BinaryMask(height, width, std::move(out));
}

}  // namespace cmatch
