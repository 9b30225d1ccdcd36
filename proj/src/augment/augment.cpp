#include "ctxducer/augment/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ctxducer/errors.hpp"
#include "ctxducer/numerics/ops.hpp"
#include "ctxducer/rng.hpp"

namespace ctxducer {

void AugmentConfig::validate() const {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw ConfigError("augment.noise_sigma must be finite and >= 0");
    }
}

bool AugmentConfig::is_identity() const {
    return !enabled || (warp_max_shift == 0 && (time_mask_num == 0 || time_mask_max_width == 0) &&
                        (embed_mask_num == 0 || embed_mask_max_width == 0) && noise_sigma == 0.0);
}

Tensor time_warp(const Tensor& x, std::size_t anchor, long shift) {
    const std::size_t T = x.dim(0);
    if (T < 3 || shift == 0) {
        return x;
    }
    anchor = std::clamp<std::size_t>(anchor, 1, T - 2);
    const long target = std::clamp<long>(static_cast<long>(anchor) + shift, 1, static_cast<long>(T) - 2);
    const auto moved = static_cast<std::size_t>(target);
    if (moved == anchor) {
        return x;
    }
    std::vector<double> w(T * T, 0.0);
    const double a = static_cast<double>(anchor);
    const double m = static_cast<double>(moved);
    const double last = static_cast<double>(T - 1);
    for (std::size_t i = 0; i < T; ++i) {
        const double di = static_cast<double>(i);
        const double src = i <= moved ? di * a / m : a + (di - m) * (last - a) / (last - m);
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const double frac = src - static_cast<double>(lo);
        if (lo + 1 < T && frac > 0.0) {
            w[i * T + lo] = 1.0 - frac;
            w[i * T + lo + 1] = frac;
        } else {
            w[i * T + std::min(lo, T - 1)] = 1.0;
        }
    }
    return matmul(Tensor::from_values({T, T}, std::move(w)), x);
}

Tensor time_mask(const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t T = x.dim(0), E = x.dim(1);
    end = std::min(end, T);
    if (begin >= end) {
        return x;
    }
    std::vector<double> keep(T * E, 1.0);
    std::fill(keep.begin() + static_cast<std::ptrdiff_t>(begin * E), keep.begin() + static_cast<std::ptrdiff_t>(end * E),
              0.0);
    return mul(x, Tensor::from_values(x.shape(), std::move(keep)));
}

Tensor embed_mask(const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t T = x.dim(0), E = x.dim(1);
    end = std::min(end, E);
    if (begin >= end) {
        return x;
    }
    std::vector<double> keep(T * E, 1.0);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t e = begin; e < end; ++e) {
            keep[t * E + e] = 0.0;
        }
    }
    return mul(x, Tensor::from_values(x.shape(), std::move(keep)));
}

Tensor add_gaussian_noise(const Tensor& x, double sigma, std::uint64_t stream_seed) {
    if (sigma == 0.0) {
        return x;
    }
    Rng rng(stream_seed);
    std::normal_distribution<double> normal(0.0, sigma);
    std::vector<double> noise(x.numel());
    for (auto& v : noise) {
        v = normal(rng);
    }
    return add(x, Tensor::from_values(x.shape(), std::move(noise)));
}

Tensor augment(const Tensor& x, const AugmentConfig& cfg, std::uint64_t stream_seed, RunMode mode) {
    if (mode != RunMode::Train) {
        throw std::logic_error("augmentation invoked outside training");
    }
    if (x.rank() != 2) {
        throw DimensionError("augment expects a T×E matrix");
    }
    if (cfg.is_identity()) {
        return x;
    }
    const std::size_t T = x.dim(0), E = x.dim(1);
    Rng rng(stream_seed);
    auto draw = [&rng](std::size_t lo, std::size_t hi) {  // inclusive
        return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
    };
    Tensor y = x;
    if (cfg.warp_max_shift > 0 && T >= 3) {
        const std::size_t anchor = draw(1, T - 2);
        const long span = static_cast<long>(cfg.warp_max_shift);
        const long shift = static_cast<long>(draw(0, 2 * cfg.warp_max_shift)) - span;
        y = time_warp(y, anchor, shift);
    }
    for (std::size_t i = 0; i < cfg.time_mask_num; ++i) {
        const std::size_t w = std::min(draw(0, cfg.time_mask_max_width), T);
        const std::size_t start = draw(0, T - w);
        y = time_mask(y, start, start + w);
    }
    for (std::size_t i = 0; i < cfg.embed_mask_num; ++i) {
        const std::size_t w = std::min(draw(0, cfg.embed_mask_max_width), E);
        const std::size_t start = draw(0, E - w);
        y = embed_mask(y, start, start + w);
    }
    return add_gaussian_noise(y, cfg.noise_sigma, rng());
}

} // namespace ctxducer
