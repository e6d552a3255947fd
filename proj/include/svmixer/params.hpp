#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "svmixer/autodiff.hpp"
#include "svmixer/tensor.hpp"

namespace svmixer {

// Ordered collection of uniquely named tensors. Insertion order is the
// serialization order and the gradient-accumulation order.
class ParameterStore {
 public:
  Tensor& add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Total scalar count over all tensors.
  std::size_t numel() const;
  // Scalar count over tensors whose name equals `prefix` or starts with `prefix.`.
  std::size_t numel_with_prefix(std::string_view prefix) const;

  // Zero-filled store with identical names and shapes.
  ParameterStore zeros_like() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

bool has_prefix(std::string_view name, std::string_view prefix);

// Parameters of one store registered on a tape as leaves (no copies).
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ParameterStore& store, bool requires_grad);

  ad::Var operator()(std::string_view name) const;
  ad::Tape& tape() const { return *tape_; }

  // Gradients of every bound parameter after tape.backward(); same layout as the store.
  ParameterStore gradients() const;

 private:
  ad::Tape* tape_;
  const ParameterStore* store_;
  std::map<std::string, ad::Var, std::less<>> vars_;
};

// dst[name] += src[name] for every entry; layouts must agree.
void accumulate(ParameterStore& dst, const ParameterStore& src);

}  // namespace svmixer
