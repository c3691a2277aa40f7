#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace rddpm {

/// Channel-major image geometry (C x H x W).
struct Shape {
  int channels = 1;
  int height = 0;
  int width = 0;

  std::size_t plane() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::size_t size() const { return static_cast<std::size_t>(channels) * plane(); }
  bool valid() const { return channels > 0 && height > 0 && width > 0; }

  bool operator==(const Shape&) const = default;
};

/// Row-major C x H x W float image. Model inputs live in [-1, 1]; noisy
/// intermediates are unbounded.
class ImageTensor {
 public:
  ImageTensor() = default;
  explicit ImageTensor(Shape shape, float fill = 0.0f);
  ImageTensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  ImageTensor& operator+=(const ImageTensor& other);
  ImageTensor& operator-=(const ImageTensor& other);
  ImageTensor& operator*=(float scale);

  /// True when every element lies in [-1, 1].
  bool in_unit_range() const;

  bool operator==(const ImageTensor&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape shape_{};
  std::vector<float> data_;
};

ImageTensor operator+(ImageTensor lhs, const ImageTensor& rhs);
ImageTensor operator-(ImageTensor lhs, const ImageTensor& rhs);
ImageTensor operator*(float scale, ImageTensor x);

/// Counter-based random stream. Output i of a stream is a pure function of
/// (key, i), so streams can be split by name or index without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Independent child stream; does not advance this stream.
  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [0, n); unbiased.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Uniform over the inclusive range [lo, hi].
  int uniform_int(int lo, int hi);
  /// Standard normal via Box-Muller; the second variate of a pair is cached.
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return counter_; }

 private:
  Rng(std::uint64_t key, std::uint64_t counter, bool) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);

/// Tensor of i.i.d. N(0, 1) entries.
ImageTensor gaussian_like(const Shape& shape, Rng& rng);

template <class T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = rng.uniform_index(i);
    std::swap(items[i - 1], items[j]);
  }
}

/// k distinct indices from [0, n), sorted ascending.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);

}  // namespace rddpm
