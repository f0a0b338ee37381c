#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/hash.hpp"
#include "fedforget/core/tensor.hpp"

namespace ff {

// A model's trainable state: named arrays in a fixed order plus the id of
// the architecture they belong to.
template <typename T>
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::string arch_id) : arch_id_(std::move(arch_id)) {}

  const std::string& arch_id() const { return arch_id_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  void add(const std::string& name, Tensor<T> value) {
    FF_EXPECT(!index_.contains(name), ContractError, "duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(value));
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor<T>& at(const std::string& name) { return entries_.at(lookup(name)).second; }
  const Tensor<T>& at(const std::string& name) const {
    return entries_.at(lookup(name)).second;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  // Same names, same shapes, all zero.
  ParamVector zeros_like() const {
    ParamVector out(arch_id_);
    for (auto& [name, t] : entries_) out.add(name, Tensor<T>(t.shape));
    return out;
  }

  bool same_layout(const ParamVector& o) const {
    if (arch_id_ != o.arch_id_ || entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].first != o.entries_[i].first ||
          entries_[i].second.shape != o.entries_[i].second.shape)
        return false;
    return true;
  }
  void require_same_layout(const ParamVector& o, const char* what) const {
    FF_EXPECT(same_layout(o), ContractError,
              std::string(what) + ": parameter layouts differ (" + arch_id_ + " vs " +
                  o.arch_id_ + ")");
  }

  // this += alpha * other
  ParamVector& axpy(T alpha, const ParamVector& other) {
    require_same_layout(other, "axpy");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& a = entries_[i].second.data;
      const auto& b = other.entries_[i].second.data;
      for (std::size_t k = 0; k < a.size(); ++k) a[k] += alpha * b[k];
    }
    return *this;
  }
  ParamVector& operator+=(const ParamVector& o) { return axpy(T(1), o); }
  ParamVector& operator-=(const ParamVector& o) { return axpy(T(-1), o); }
  ParamVector& operator*=(T s) {
    for (auto& [_, t] : entries_)
      for (auto& v : t.data) v *= s;
    return *this;
  }
  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(ParamVector a, T s) { return a *= s; }

  T dot(const ParamVector& o) const {
    require_same_layout(o, "dot");
    long double acc = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i].second.data;
      const auto& b = o.entries_[i].second.data;
      for (std::size_t k = 0; k < a.size(); ++k) acc += (long double)a[k] * b[k];
    }
    return T(acc);
  }
  T squared_norm() const { return dot(*this); }
  T l2_norm() const { return std::sqrt(squared_norm()); }

  bool all_finite() const {
    for (auto& [_, t] : entries_)
      for (auto v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  ParamVector<U> cast() const {
    ParamVector<U> out(arch_id_);
    for (auto& [name, t] : entries_) out.add(name, t.template cast<U>());
    return out;
  }

  // Hash over arch id, names, shapes and raw element bytes.
  std::uint64_t content_hash() const {
    Fnv1a h;
    h.update(arch_id_);
    for (auto& [name, t] : entries_) {
      h.update(name);
      h.update_span(std::span<const std::size_t>(t.shape));
      h.update_span(std::span<const T>(t.data));
    }
    return h.digest();
  }

  bool operator==(const ParamVector& o) const {
    return arch_id_ == o.arch_id_ && entries_ == o.entries_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    FF_EXPECT(it != index_.end(), ContractError, "unknown parameter " + name);
    return it->second;
  }

  std::string arch_id_;
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace ff
