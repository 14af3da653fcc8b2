// Named parameter registry and its binary checkpoint format.
//
// Parameters keep their registration order, so describe() and save() are
// stable for a fixed model configuration and checkpoints are diffable.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "comgnn/tensor.hpp"

namespace comgnn {

class ParamStore {
 public:
  Tensor& create(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  Tensor& glorot(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out,
                 Rng& rng) {
    return create(name, glorot_param(std::move(shape), fan_in, fan_out, rng));
  }

  Tensor& zeros(const std::string& name, Shape shape) {
    return create(name, zero_param(std::move(shape)));
  }

  // Non-trainable entry (e.g. normalization statistics).
  Tensor& constant(const std::string& name, Tensor t) {
    t.set_requires_grad(false);
    return create(name, std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return entries_[it->second].second;
  }
  const Tensor& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  std::vector<std::pair<std::string, Tensor>> trainable() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& e : entries_)
      if (e.second.requires_grad()) out.push_back(e);
    return out;
  }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  // In-memory copies of all values, e.g. for best-so-far / last-good states.
  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second.values());
    return out;
  }

  void restore(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != entries_.size())
      throw std::logic_error("restore: snapshot holds " + std::to_string(snap.size()) +
                             " tensors, registry has " + std::to_string(entries_.size()));
    for (std::size_t i = 0; i < snap.size(); ++i) entries_[i].second.set_values(snap[i]);
  }

  // Differentiable sum of squared trainable parameter values.
  Tensor l2() const {
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& e : entries_)
      if (e.second.requires_grad()) acc = add(acc, sumsq(e.second));
    return acc;
  }

  void describe(std::ostream& os) const {
    for (const auto& [name, t] : entries_)
      os << name << " " << shape_str(t.shape()) << " " << t.numel()
         << (t.requires_grad() ? "" : " (fixed)") << "\n";
    os << "total " << entries_.size() << " tensors, " << total_values() << " values\n";
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write("COMGNNCK", 8);
    write_u64(f, 1);  // format version
    write_u64(f, entries_.size());
    for (const auto& [name, t] : entries_) {
      write_u64(f, name.size());
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      f.put(t.requires_grad() ? 1 : 0);
      write_u64(f, t.rank());
      for (std::size_t d : t.shape()) write_u64(f, d);
      f.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("write failed: " + path.string());
  }

  // Fills values of already-registered parameters; names and shapes must
  // match the file exactly (same model configuration).
  void load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "COMGNNCK", 8) != 0)
      throw std::runtime_error(path.string() + ": not a checkpoint file");
    if (read_u64(f) != 1) throw std::runtime_error(path.string() + ": unknown format version");
    const std::uint64_t count = read_u64(f);
    if (count != entries_.size())
      throw std::runtime_error(path.string() + ": holds " + std::to_string(count) +
                               " tensors, model has " + std::to_string(entries_.size()));
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint64_t name_len = read_u64(f);
      std::string name(name_len, '\0');
      f.read(name.data(), static_cast<std::streamsize>(name_len));
      f.get();  // trainable flag, informational
      const std::uint64_t rank = read_u64(f);
      Shape shape(rank);
      for (auto& d : shape) d = read_u64(f);
      if (!has(name)) throw std::runtime_error(path.string() + ": unknown parameter '" + name + "'");
      Tensor& t = get(name);
      if (t.shape() != shape)
        throw std::runtime_error(path.string() + ": parameter '" + name + "' has shape " +
                                 shape_str(shape) + ", model wants " + shape_str(t.shape()));
      std::vector<double> vals(shape_numel(shape));
      f.read(reinterpret_cast<char*>(vals.data()),
             static_cast<std::streamsize>(vals.size() * sizeof(double)));
      if (!f) throw std::runtime_error(path.string() + ": truncated payload for '" + name + "'");
      t.set_values(vals);
    }
  }

 private:
  static void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }

  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Finite-difference check of one registered parameter against the analytic
// gradient of loss_fn (which must read the parameter through the store).
inline double param_grad_check(const std::function<Tensor()>& loss_fn, Tensor& param,
                               double h = 1e-5) {
  return grad_check([&loss_fn](const Tensor&) { return loss_fn(); }, param, h);
}

}  // namespace comgnn
