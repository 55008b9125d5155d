#include "ps2/nn/parameter_store.hpp"

#include "ps2/common/error.hpp"

namespace ps2::nn {

bool has_prefix(const std::string& name, const std::string& prefix) {
  if (name.size() < prefix.size() || name.compare(0, prefix.size(), prefix) != 0) return false;
  return name.size() == prefix.size() || name[prefix.size()] == '.';
}

template <typename T>
ad::Tensor<T> ParameterStore<T>::add(const std::string& name, ad::Shape shape) {
  return add(name, ad::Tensor<T>::zeros(std::move(shape), true));
}

template <typename T>
ad::Tensor<T> ParameterStore<T>::add(const std::string& name, ad::Tensor<T> tensor) {
  require(!name.empty(), ErrorKind::kUsage, "parameter name must not be empty");
  require(!contains(name), ErrorKind::kUsage, "duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(tensor)});
  return entries_.back().tensor;
}

template <typename T>
const ad::Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  const auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::kData, "unknown parameter: " + name);
  return entries_[it->second].tensor;
}

template <typename T>
ad::Tensor<T>& ParameterStore<T>::get(const std::string& name) {
  const auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::kData, "unknown parameter: " + name);
  return entries_[it->second].tensor;
}

template <typename T>
std::size_t ParameterStore<T>::total_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename T>
std::vector<std::string> ParameterStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

template <typename T>
std::vector<const typename ParameterStore<T>::Entry*> ParameterStore<T>::with_prefix(
    const std::string& prefix) const {
  std::vector<const Entry*> out;
  for (const auto& e : entries_) {
    if (has_prefix(e.name, prefix)) out.push_back(&e);
  }
  return out;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace ps2::nn
