#pragma once

// Named parameter collections, seeded initialisation and checkpoint files.

#include "sacmt/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace sacmt {

using Rng = std::mt19937_64;

/// Ordered name -> parameter tensor map. Order is insertion order, which
/// fixes the layout of checkpoints and optimizer state.
class ParamSet {
 public:
  enum class Init { kXavier, kZero };

  Tensor& add(const std::string& name, Shape shape, Rng& rng, Init init = Init::kXavier) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    std::vector<double> values(shape_numel(shape), 0.0);
    if (init == Init::kXavier) {
      const double fan_in = static_cast<double>(shape.size() == 1 ? 1 : shape[0]);
      const double fan_out = static_cast<double>(shape.back());
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& v : values) v = dist(rng);
    }
    entries_.emplace_back(name, Tensor(std::move(shape), std::move(values), true));
    return entries_.back().second;
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor& get(const std::string& name) const {
    if (const Tensor* t = find(name)) return *t;
    throw std::out_of_range("no parameter named " + name);
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  /// Overwrites values with another set of identical layout.
  void copy_values_from(const ParamSet& other) {
    check_layout(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto src = other.entries_[i].second.values();
      auto dst = entries_[i].second.mutable_values();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  /// this <- tau * other + (1 - tau) * this, for every parameter.
  void blend_from(const ParamSet& other, double tau) {
    check_layout(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto src = other.entries_[i].second.values();
      auto dst = entries_[i].second.mutable_values();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = tau * src[j] + (1.0 - tau) * dst[j];
    }
  }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    for (const auto& e : entries_) out.emplace_back(e.second.values().begin(), e.second.values().end());
    return out;
  }
  void restore(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != entries_.size()) throw std::invalid_argument("snapshot size does not match parameter set");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto dst = entries_[i].second.mutable_values();
      if (snap[i].size() != dst.size()) throw std::invalid_argument("snapshot entry size mismatch for " + entries_[i].first);
      std::copy(snap[i].begin(), snap[i].end(), dst.begin());
    }
  }

 private:
  void check_layout(const ParamSet& other) const {
    if (other.entries_.size() != entries_.size()) throw std::invalid_argument("parameter sets differ in size");
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (other.entries_[i].second.shape() != entries_[i].second.shape())
        throw std::invalid_argument("parameter " + entries_[i].first + " differs in shape: " +
                                    shape_str(entries_[i].second.shape()) + " vs " +
                                    shape_str(other.entries_[i].second.shape()));
  }

  std::vector<std::pair<std::string, Tensor>> entries_;
};

// ---------------------------------------------------------------------------
// Checkpoint files
//
// Layout (little-endian):
//   "SACMTCKP"  u32 version
//   u32 meta count,  { u32 len, key bytes, u64 len, value bytes }*
//   u32 array count, { u32 len, name bytes, u32 rank, u64 dim*rank, f64 values* }*

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::map<std::string, std::string> meta;
  std::map<std::string, NamedArray> arrays;

  void put(const std::string& prefix, const ParamSet& params) {
    for (const auto& [name, t] : params.entries())
      arrays[prefix + name] = NamedArray{t.shape(), {t.values().begin(), t.values().end()}};
  }

  /// Loads every parameter of `params` from `prefix`-qualified arrays.
  void take(const std::string& prefix, ParamSet& params) const {
    for (const auto& [name, t] : params.entries()) {
      auto it = arrays.find(prefix + name);
      if (it == arrays.end()) throw std::runtime_error("checkpoint lacks parameter " + prefix + name);
      if (it->second.shape != t.shape())
        throw std::runtime_error("checkpoint parameter " + prefix + name + " has shape " +
                                 shape_str(it->second.shape) + ", expected " + shape_str(t.shape()));
      Tensor target = t;
      std::copy(it->second.values.begin(), it->second.values.end(), target.mutable_values().begin());
    }
  }
};

namespace detail {

template <class T>
void put_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get_pod(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("checkpoint truncated");
  return v;
}
inline std::string get_bytes(std::istream& is, std::size_t n) {
  if (n > (1ull << 32)) throw std::runtime_error("checkpoint field too large");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os.write("SACMTCKP", 8);
  detail::put_pod<std::uint32_t>(os, ck.version);
  detail::put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    detail::put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(k.size()));
    os.write(k.data(), static_cast<std::streamsize>(k.size()));
    detail::put_pod<std::uint64_t>(os, v.size());
    os.write(v.data(), static_cast<std::streamsize>(v.size()));
  }
  detail::put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& [name, arr] : ck.arrays) {
    detail::put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(arr.shape.size()));
    for (auto d : arr.shape) detail::put_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(arr.values.data()),
             static_cast<std::streamsize>(arr.values.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "SACMTCKP", 8) != 0)
    throw std::runtime_error(path + " is not a checkpoint file");
  Checkpoint ck;
  ck.version = detail::get_pod<std::uint32_t>(is);
  if (ck.version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(ck.version));
  auto nmeta = detail::get_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    auto k = detail::get_bytes(is, detail::get_pod<std::uint32_t>(is));
    auto v = detail::get_bytes(is, detail::get_pod<std::uint64_t>(is));
    ck.meta.emplace(std::move(k), std::move(v));
  }
  auto narr = detail::get_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < narr; ++i) {
    auto name = detail::get_bytes(is, detail::get_pod<std::uint32_t>(is));
    NamedArray arr;
    auto rank = detail::get_pod<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) arr.shape.push_back(detail::get_pod<std::uint64_t>(is));
    arr.values.resize(shape_numel(arr.shape));
    if (!arr.values.empty() &&
        !is.read(reinterpret_cast<char*>(arr.values.data()),
                 static_cast<std::streamsize>(arr.values.size() * sizeof(double))))
      throw std::runtime_error("checkpoint truncated in " + name);
    ck.arrays.emplace(std::move(name), std::move(arr));
  }
  return ck;
}

}  // namespace sacmt
