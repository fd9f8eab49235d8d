#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

namespace cmatch {

enum class DType : std::uint32_t { kFloat32 = 1, kUInt8 = 2 };

// Dense row-major tensor of rank 1..4. Equality is bit-exact on the payload.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  static Tensor f32(Shape shape, std::vector<float> values);
  static Tensor u8(Shape shape, std::vector<std::uint8_t> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept;
  DType dtype() const noexcept;

  // Throws ShapeMismatch when the dtype differs.
  std::span<const float> f32_data() const;
  std::span<const std::uint8_t> u8_data() const;

  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Tensor(Shape shape, std::variant<std::vector<float>, std::vector<std::uint8_t>> data);

  Shape shape_;
  std::variant<std::vector<float>, std::vector<std::uint8_t>> data_;
};

// Validates rank and dimension sizes against an element count.
void check_shape(const Tensor::Shape& shape, std::size_t payload_len);

Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const Tensor& t, const std::filesystem::path& path);

// In-memory CMT1 codec; read_tensor/write_tensor are thin wrappers.
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

/// H x W x C node features, row-major with channels innermost.
class FeatureGrid {
 public:
  FeatureGrid(std::size_t height, std::size_t width, std::size_t channels,
              std::vector<float> values);

  static FeatureGrid from_tensor(const Tensor& t);
  Tensor to_tensor() const;

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t nodes() const noexcept { return height_ * width_; }

  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> node(std::size_t index) const noexcept {
    return {values_.data() + index * channels_, channels_};
  }
  std::span<const float> at(std::size_t row, std::size_t col) const noexcept {
    return node(row * width_ + col);
  }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t channels_;
  std::vector<float> values_;
};

class BinaryMask {
 public:
  BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> values);
  static BinaryMask zeros(std::size_t height, std::size_t width);

  static BinaryMask from_tensor(const Tensor& t);
  Tensor to_tensor() const;

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<const std::uint8_t> values() const noexcept { return values_; }
  std::uint8_t operator[](std::size_t i) const noexcept { return values_[i]; }
  std::uint8_t at(std::size_t row, std::size_t col) const noexcept {
    return values_[row * width_ + col];
  }
  std::size_t count() const noexcept;
  BinaryMask inverted() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<std::uint8_t> values_;
};

// Half-open pixel rectangle: rows [r0, r1), cols [c0, c1).
struct BoundingBox {
  std::size_t r0 = 0;
  std::size_t c0 = 0;
  std::size_t r1 = 0;
  std::size_t c1 = 0;
};

BinaryMask mask_from_bbox(const BoundingBox& box, std::size_t height, std::size_t width);

// Block-mean downsampling; a target cell is foreground when at least half of
// its source block is. Block boundaries are floor(i * H / h).
BinaryMask downsample_mask(const BinaryMask& mask, std::size_t height, std::size_t width);

}  // namespace cmatch
