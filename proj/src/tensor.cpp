#include "diffpad/tensor.hpp"

#include <utility>

#include "diffpad/error.hpp"

namespace diffpad {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidSchedule: return "InvalidSchedule";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kInvalidTimestep: return "InvalidTimestep";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kImageTooSmall: return "ImageTooSmall";
    case ErrorCode::kBadCheckpoint: return "BadCheckpoint";
    case ErrorCode::kEmptyScores: return "EmptyScores";
    case ErrorCode::kEmptySubset: return "EmptySubset";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kMissingField: return "MissingField";
    case ErrorCode::kMissingSubject: return "MissingSubject";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kDecodeError: return "DecodeError";
    case ErrorCode::kWrongVariant: return "WrongVariant";
  }
  return "Unknown";
}

std::string Shape::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

Image::Image(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Image::Image(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "buffer of " + std::to_string(data_.size()) + " values for shape " + shape_.str());
  }
}

void require_same_shape(const Image& a, const Image& b, const char* context) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(context) + ": " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <typename T>
Tensor<T> pack_batch(std::span<const Image> images) {
  if (images.empty()) throw Error(ErrorCode::kEmptyBatch, "pack_batch");
  const Shape s = images.front().shape();
  const int n = static_cast<int>(images.size());
  Tensor<T> out(s.channels, n, s.height, s.width);
  const std::size_t plane = out.plane();
  for (int i = 0; i < n; ++i) {
    if (images[i].shape() != s) {
      throw Error(ErrorCode::kShapeMismatch, "pack_batch: " + images[i].shape().str() +
                                                 " vs " + s.str());
    }
    const auto& src = images[i].data();
    for (int c = 0; c < s.channels; ++c) {
      T* dst = out.data.data() + (static_cast<std::size_t>(c) * n + i) * plane;
      const double* from = src.data() + static_cast<std::size_t>(c) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = static_cast<T>(from[p]);
    }
  }
  return out;
}

template <typename T>
Image unpack_sample(const Tensor<T>& t, int index) {
  Image img(Shape{t.c, t.h, t.w});
  const std::size_t plane = t.plane();
  for (int c = 0; c < t.c; ++c) {
    const T* src = t.data.data() + (static_cast<std::size_t>(c) * t.n + index) * plane;
    double* dst = img.data().data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t p = 0; p < plane; ++p) dst[p] = static_cast<double>(src[p]);
  }
  return img;
}

template Tensor<float> pack_batch<float>(std::span<const Image>);
template Tensor<double> pack_batch<double>(std::span<const Image>);
template Image unpack_sample<float>(const Tensor<float>&, int);
template Image unpack_sample<double>(const Tensor<double>&, int);

}  // namespace diffpad
