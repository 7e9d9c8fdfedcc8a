#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "diffpad/autodiff.hpp"

namespace diffpad {

struct NamedArray {
  std::string name;
  Tensor<float> value;
};

/// Ordered collection of named float arrays. Models refer to entries by
/// the index returned from add(), so the order is part of a model's layout.
class ParamStore {
 public:
  int add(std::string name, Tensor<float> value);

  std::size_t size() const { return arrays_.size(); }
  std::size_t scalar_count() const;
  const NamedArray& operator[](std::size_t i) const { return arrays_[i]; }
  NamedArray& operator[](std::size_t i) { return arrays_[i]; }
  std::span<const NamedArray> arrays() const { return arrays_; }
  std::span<NamedArray> arrays() { return arrays_; }
  int find(const std::string& name) const;  // -1 when absent

  bool all_finite() const;
  bool operator==(const ParamStore& o) const;

  // Places every array on the tape as a leaf of scalar type T.
  template <typename T>
  std::vector<ad::Var> to_tape(ad::Tape<T>& tape, bool needs_grad) const;

 private:
  std::vector<NamedArray> arrays_;
};

// Deterministic fan-in scaled uniform initializer: U(-sqrt(3/fan_in), sqrt(3/fan_in)).
Tensor<float> fan_in_uniform(int c, int n, int h, int w, int fan_in, std::mt19937_64& rng);

// splitmix64 mixing of (base, index); used wherever a per-item stream is needed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace diffpad
