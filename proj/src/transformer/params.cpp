#include "tore/transformer/params.hpp"

#include <cmath>
#include <stdexcept>

namespace tore {

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
BasicTensor<T> ParamStore<T>::add(const std::string& name, Shape shape, Init init, double stddev) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  BasicTensor<T> t;
  switch (init) {
    case Init::Zeros:
      t = BasicTensor<T>::zeros(shape);
      break;
    case Init::Ones:
      t = BasicTensor<T>::full(shape, T(1));
      break;
    case Init::Normal:
    case Init::Scaled: {
      Rng rng(derive_seed(seed_, name_hash(name)));
      const double sd = init == Init::Scaled ? 1.0 / std::sqrt(static_cast<double>(shape.at(0))) : stddev;
      t = randn<double>(shape, rng, sd).template cast<T>();
      break;
    }
  }
  t.set_requires_grad(true);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(t);
  return t;
}

template <typename T>
const BasicTensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter named " + name);
  return tensors_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

template <typename T>
void ParamStore<T>::set_requires_grad(bool on) {
  for (auto& t : tensors_) t.set_requires_grad(on);
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace tore
