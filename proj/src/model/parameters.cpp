#include "ctxducer/model/parameters.hpp"

#include <cmath>
#include <fstream>

#include "ctxducer/binary_io.hpp"
#include "ctxducer/errors.hpp"

namespace ctxducer {

Tensor& Parameters::add(const std::string& name, Tensor t) {
    if (contains(name)) {
        throw std::logic_error("duplicate parameter " + name);
    }
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
}

Tensor& Parameters::get(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("no parameter named " + name);
    }
    return entries_[it->second].second;
}

const Tensor& Parameters::get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("no parameter named " + name);
    }
    return entries_[it->second].second;
}

std::size_t Parameters::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) {
        n += t.numel();
    }
    return n;
}

void Parameters::zero_grad() {
    for (auto& [name, t] : entries_) {
        t.zero_grad();
    }
}

Parameters Parameters::clone() const {
    Parameters p;
    for (const auto& [name, t] : entries_) {
        p.add(name, Tensor::from_values(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), true));
    }
    p.version_ = version_;
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    binio::write_magic(os, "CTXC");
    binio::write_u32(os, 1);
    binio::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        binio::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        binio::write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (auto e : t.shape()) {
            binio::write_u32(os, static_cast<std::uint32_t>(e));
        }
        for (double v : t.values()) {
            binio::write_f64(os, v);
        }
    }
    if (!os) {
        throw FormatError("write failed: " + path.string());
    }
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("cannot open checkpoint " + path.string());
    }
    binio::expect_magic(is, "CTXC", "checkpoint");
    binio::expect_version(is, 1, "checkpoint");
    const auto count = binio::read_u32(is, "checkpoint");
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = binio::read_u32(is, "checkpoint");
        if (len > 4096) {
            throw FormatError("implausible tensor name length in checkpoint");
        }
        std::string name(len, '\0');
        binio::read_exact(is, name.data(), len, "checkpoint");
        const auto rank = binio::read_u32(is, "checkpoint");
        if (rank == 0 || rank > 8) {
            throw FormatError("bad tensor rank in checkpoint for " + name);
        }
        Shape shape(rank);
        for (auto& e : shape) {
            e = binio::read_u32(is, "checkpoint");
        }
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) {
            v = binio::read_f64(is, "checkpoint");
            if (!std::isfinite(v)) {
                throw FormatError("non-finite value in checkpoint tensor " + name);
            }
        }
        out.emplace_back(std::move(name), Tensor::from_values(std::move(shape), std::move(values)));
    }
    binio::expect_eof(is, "checkpoint");
    return out;
}

} // namespace ctxducer
