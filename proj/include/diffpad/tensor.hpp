#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace diffpad {

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Channels x height x width image. Pixel intensities live in [0, 1] at the
/// I/O boundary; diffusion states reuse the type with unbounded values.
class Image {
 public:
  Image() = default;
  explicit Image(Shape shape, double fill = 0.0);
  Image(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  double& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

// Throws ShapeMismatch with `context` in the message.
void require_same_shape(const Image& a, const Image& b, const char* context);

// 64-byte aligned storage. Vectorized kernels peel differently depending on
// the start address, so unaligned buffers give run-to-run rounding noise.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense rank-4 array in (channel, batch, row, column) order. Channel-major
/// storage lets a convolution write its GEMM output without a transpose.
template <typename T>
struct Tensor {
  int c = 0;
  int n = 0;
  int h = 0;
  int w = 0;
  AlignedVector<T> data;

  Tensor() = default;
  Tensor(int c_, int n_, int h_, int w_, T fill = T(0))
      : c(c_), n(n_), h(h_), w(w_),
        data(static_cast<std::size_t>(c_) * n_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool same_shape(const Tensor& o) const {
    return c == o.c && n == o.n && h == o.h && w == o.w;
  }

  T& at(int ci, int ni, int y, int x) {
    return data[((static_cast<std::size_t>(ci) * n + ni) * h + y) * w + x];
  }
  T at(int ci, int ni, int y, int x) const {
    return data[((static_cast<std::size_t>(ci) * n + ni) * h + y) * w + x];
  }
};

// Packs images (all of one shape) into a (C, N, H, W) tensor.
template <typename T>
Tensor<T> pack_batch(std::span<const Image> images);

template <typename T>
Image unpack_sample(const Tensor<T>& t, int index);

}  // namespace diffpad
