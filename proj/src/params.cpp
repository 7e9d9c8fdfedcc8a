#include "diffpad/params.hpp"

#include <cmath>
#include <cstring>
#include <utility>

namespace diffpad {

int ParamStore::add(std::string name, Tensor<float> value) {
  arrays_.push_back({std::move(name), std::move(value)});
  return static_cast<int>(arrays_.size()) - 1;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.value.size();
  return n;
}

int ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < arrays_.size(); ++i)
    if (arrays_[i].name == name) return static_cast<int>(i);
  return -1;
}

bool ParamStore::all_finite() const {
  for (const auto& a : arrays_)
    for (float v : a.value.data)
      if (!std::isfinite(v)) return false;
  return true;
}

bool ParamStore::operator==(const ParamStore& o) const {
  if (arrays_.size() != o.arrays_.size()) return false;
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    const auto& a = arrays_[i];
    const auto& b = o.arrays_[i];
    if (a.name != b.name || !a.value.same_shape(b.value)) return false;
    // Bitwise so that -0.0 and NaN payloads count as differences.
    if (std::memcmp(a.value.data.data(), b.value.data.data(), a.value.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

template <typename T>
std::vector<ad::Var> ParamStore::to_tape(ad::Tape<T>& tape, bool needs_grad) const {
  std::vector<ad::Var> vars;
  vars.reserve(arrays_.size());
  for (const auto& a : arrays_) {
    if constexpr (std::is_same_v<T, float>) {
      vars.push_back(tape.leaf_view(a.value, needs_grad));
    } else {
      Tensor<T> t(a.value.c, a.value.n, a.value.h, a.value.w);
      for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<T>(a.value.data[i]);
      vars.push_back(tape.leaf(std::move(t), needs_grad));
    }
  }
  return vars;
}

template std::vector<ad::Var> ParamStore::to_tape<float>(ad::Tape<float>&, bool) const;
template std::vector<ad::Var> ParamStore::to_tape<double>(ad::Tape<double>&, bool) const;

Tensor<float> fan_in_uniform(int c, int n, int h, int w, int fan_in, std::mt19937_64& rng) {
  Tensor<float> t(c, n, h, w);
  const double bound = std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data) v = static_cast<float>(dist(rng));
  return t;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace diffpad
