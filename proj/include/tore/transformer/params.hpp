#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tore/numerics/random.hpp"
#include "tore/numerics/tensor.hpp"

namespace tore {

enum class Init { Zeros, Ones, Normal, Scaled };

/// Named, ordered parameter collection. Every tensor draws its initial values
/// from a stream derived from (seed, name), so adding a parameter never
/// changes the initial values of the others.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  /// Scaled draws normal(0, 1/sqrt(shape[0])); Normal uses `stddev`.
  BasicTensor<T> add(const std::string& name, Shape shape, Init init, double stddev = 0.02);
  const BasicTensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& names() const { return names_; }
  std::vector<BasicTensor<T>>& tensors() { return tensors_; }
  const std::vector<BasicTensor<T>>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  void set_requires_grad(bool on);

  /// Copies values from a store with the same names and shapes, converting the
  /// scalar type.
  template <typename U>
  void copy_from(const ParamStore<U>& other) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      const auto& src = other.get(names_[i]);
      if (src.shape() != tensors_[i].shape()) throw ShapeError("ParamStore::copy_from: shape mismatch for " + names_[i]);
      auto dst = tensors_[i].mutable_data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(src.data()[k]);
    }
  }

 private:
  std::uint64_t seed_;
  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

std::uint64_t name_hash(const std::string& name);

}  // namespace tore
