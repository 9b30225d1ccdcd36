#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctxducer/numerics/tensor.hpp"

namespace ctxducer {

using NamedTensor = std::pair<std::string, Tensor>;

// Named trainable tensors in a fixed enumeration order. The version counter
// changes whenever values change, so cached activations can be invalidated.
class Parameters {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<NamedTensor>& entries() { return entries_; }
    const std::vector<NamedTensor>& entries() const { return entries_; }
    std::size_t scalar_count() const;

    void zero_grad();
    std::uint64_t version() const { return version_; }
    void bump_version() { ++version_; }

    // Deep copy (fresh leaves, same values, no grads).
    Parameters clone() const;

private:
    std::vector<NamedTensor> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t version_ = 0;
};

// "CTXC" v1: u32 count, then per tensor u32 name length, name bytes, u32 rank,
// u32 extents, float64 little-endian values.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

} // namespace ctxducer
