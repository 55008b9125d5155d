#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ps2/ad/tensor.hpp"

namespace ps2::nn {

// Named parameters in insertion order. Tensors are shared handles, so layers
// bound to a store see updates made through it.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    ad::Tensor<T> tensor;
  };

  // Registers a zero-filled parameter; names must be unique.
  // Returns a handle sharing the stored tensor.
  ad::Tensor<T> add(const std::string& name, ad::Shape shape);
  ad::Tensor<T> add(const std::string& name, ad::Tensor<T> tensor);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const ad::Tensor<T>& get(const std::string& name) const;
  ad::Tensor<T>& get(const std::string& name);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_count() const;
  std::vector<std::string> names() const;

  // Every parameter whose name equals `prefix` or starts with `prefix + "."`.
  std::vector<const Entry*> with_prefix(const std::string& prefix) const;

  void zero_grad();
  // Deep copy with a different element type; requires_grad is preserved.
  template <typename U>
  ParameterStore<U> cast() const;
  ParameterStore clone() const { return cast<T>(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

bool has_prefix(const std::string& name, const std::string& prefix);

template <typename T>
template <typename U>
ParameterStore<U> ParameterStore<T>::cast() const {
  ParameterStore<U> out;
  for (const auto& e : entries_) {
    std::vector<U> v(e.tensor.values().begin(), e.tensor.values().end());
    out.add(e.name, ad::Tensor<U>(e.tensor.shape(), std::move(v), e.tensor.requires_grad()));
  }
  return out;
}

}  // namespace ps2::nn
