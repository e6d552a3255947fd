#include "svmixer/params.hpp"

#include "svmixer/errors.hpp"

namespace svmixer {

bool has_prefix(std::string_view name, std::string_view prefix) {
  if (name == prefix) return true;
  return name.size() > prefix.size() && name.substr(0, prefix.size()) == prefix &&
         name[prefix.size()] == '.';
}

Tensor& ParameterStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw Error("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

bool ParameterStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

Tensor& ParameterStore::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + std::string(name));
  return entries_[it->second].second;
}

const Tensor& ParameterStore::get(std::string_view name) const {
  return const_cast<ParameterStore&>(*this).get(name);
}

std::size_t ParameterStore::numel() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

std::size_t ParameterStore::numel_with_prefix(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_)
    if (has_prefix(name, prefix)) n += t.numel();
  return n;
}

ParameterStore ParameterStore::zeros_like() const {
  ParameterStore out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape()));
  return out;
}

BoundParams::BoundParams(ad::Tape& tape, const ParameterStore& store, bool requires_grad)
    : tape_(&tape), store_(&store) {
  for (const auto& [name, t] : store.entries()) vars_.emplace(name, tape.leaf_ref(t, requires_grad));
}

ad::Var BoundParams::operator()(std::string_view name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error("parameter not bound: " + std::string(name));
  return it->second;
}

ParameterStore BoundParams::gradients() const {
  ParameterStore out;
  for (const auto& [name, t] : store_->entries()) {
    const ad::Var v = vars_.at(name);
    out.add(name, tape_->requires_grad(v) ? tape_->grad(v) : Tensor(t.shape()));
  }
  return out;
}

void accumulate(ParameterStore& dst, const ParameterStore& src) {
  if (dst.size() != src.size()) throw Error("accumulate: parameter layouts differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& [dn, dt] = dst.entries()[i];
    const auto& [sn, st] = src.entries()[i];
    if (dn != sn || dt.shape() != st.shape()) {
      throw Error("accumulate: parameter layouts differ at " + dn);
    }
    for (std::size_t e = 0; e < dt.numel(); ++e) dt[e] += st[e];
  }
}

}  // namespace svmixer
