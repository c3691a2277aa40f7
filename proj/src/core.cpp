#include "rddpm/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rddpm {

ImageTensor::ImageTensor(Shape shape, float fill) : shape_(shape) {
  if (!shape.valid()) throw std::invalid_argument("ImageTensor: non-positive dimension");
  data_.assign(shape.size(), fill);
}

ImageTensor::ImageTensor(Shape shape, std::vector<float> data)
    : shape_(shape), data_(std::move(data)) {
  if (!shape.valid()) throw std::invalid_argument("ImageTensor: non-positive dimension");
  if (data_.size() != shape.size()) {
    throw std::invalid_argument("ImageTensor: data length " + std::to_string(data_.size()) +
                                " does not match shape size " + std::to_string(shape.size()));
  }
}

ImageTensor& ImageTensor::operator+=(const ImageTensor& other) {
  if (other.shape_ != shape_) throw std::invalid_argument("ImageTensor: shape mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

ImageTensor& ImageTensor::operator-=(const ImageTensor& other) {
  if (other.shape_ != shape_) throw std::invalid_argument("ImageTensor: shape mismatch in -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

ImageTensor& ImageTensor::operator*=(float scale) {
  for (float& v : data_) v *= scale;
  return *this;
}

bool ImageTensor::in_unit_range() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return v >= -1.0f && v <= 1.0f; });
}

ImageTensor operator+(ImageTensor lhs, const ImageTensor& rhs) { return lhs += rhs; }
ImageTensor operator-(ImageTensor lhs, const ImageTensor& rhs) { return lhs -= rhs; }
ImageTensor operator*(float scale, ImageTensor x) { return x *= scale; }

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t hash_name(std::string_view name) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_(mix64(mix64(seed) ^ (stream * kGolden + 0x632BE59BD9B4E019ULL))) {}

Rng Rng::split(std::string_view name) const { return split(hash_name(name)); }

Rng Rng::split(std::uint64_t index) const {
  return Rng(mix64(key_ ^ mix64(index + kGolden)), 0, true);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::uniform_index: empty range");
  // Rejection on the top of the range keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
  return lo + static_cast<int>(uniform_index(static_cast<std::uint64_t>(hi - lo) + 1));
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

ImageTensor gaussian_like(const Shape& shape, Rng& rng) {
  ImageTensor out(shape);
  for (float& v : out.data()) v = static_cast<float>(rng.normal());
  return out;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  // Partial Fisher-Yates: the first k slots end up holding the sample.
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + rng.uniform_index(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace rddpm
