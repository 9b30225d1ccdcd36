#pragma once

#include <cstddef>
#include <cstdint>

#include "ctxducer/numerics/tensor.hpp"

namespace ctxducer {

enum class RunMode { Train, Eval };

// Perturbations for embedded token sequences. Widths are upper bounds; each
// mask's actual width is drawn from [0, max] and clamped to the sequence.
struct AugmentConfig {
    bool enabled = true;
    std::size_t warp_max_shift = 1;
    std::size_t time_mask_num = 1;
    std::size_t time_mask_max_width = 2;
    std::size_t embed_mask_num = 1;
    std::size_t embed_mask_max_width = 8;
    double noise_sigma = 0.05;

    void validate() const;
    bool is_identity() const;
};

// Applies time warp → time masks → embedding masks → Gaussian noise to x[T×E],
// deterministically in `stream_seed`. Throws std::logic_error in Eval mode.
Tensor augment(const Tensor& x, const AugmentConfig& cfg, std::uint64_t stream_seed, RunMode mode);

// Building blocks. Rows/columns outside the given ranges are untouched.
// Piecewise-linear remap moving frame `anchor` to `anchor + shift` (clamped to
// the interior), with linear interpolation between frames.
Tensor time_warp(const Tensor& x, std::size_t anchor, long shift);
Tensor time_mask(const Tensor& x, std::size_t begin, std::size_t end);
Tensor embed_mask(const Tensor& x, std::size_t begin, std::size_t end);
Tensor add_gaussian_noise(const Tensor& x, double sigma, std::uint64_t stream_seed);

} // namespace ctxducer
