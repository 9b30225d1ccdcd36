#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ctxducer/numerics/tensor.hpp"

namespace ctxducer {

inline constexpr int kBlank = 0;
// Band half-width meaning "no pruning".
inline constexpr std::size_t kFullBand = static_cast<std::size_t>(-1);

// Log-domain forward/backward tables for one utterance. Cells outside the
// pruning band hold -inf.
struct TransducerLattice {
    std::size_t T = 0;
    std::size_t U = 0;
    std::size_t classes = 0;            // V + 1, blank at index 0
    std::vector<double> log_probs;      // T×(U+1)×classes
    std::vector<double> alpha;          // T×(U+1)
    std::vector<double> beta;           // T×(U+1)
    double log_likelihood = 0.0;        // α(T-1,U) + blank(T-1,U)
    double nll = 0.0;

    double lp(std::size_t t, std::size_t u, std::size_t k) const { return log_probs[(t * (U + 1) + u) * classes + k]; }
    double a(std::size_t t, std::size_t u) const { return alpha[t * (U + 1) + u]; }
    double b(std::size_t t, std::size_t u) const { return beta[t * (U + 1) + u]; }
};

struct TransducerLoss {
    double nll = 0.0;
    std::vector<double> grad;  // d nll / d logits, same layout as logits
    TransducerLattice lattice;
};

// True when cell (t,u) lies inside the band |u - floor(U·t/T)| <= band.
bool in_band(std::size_t t, std::size_t u, std::size_t T, std::size_t U, std::size_t band);

// Logits are T×(U+1)×classes raw joint outputs; labels in [1, classes-1].
// Throws DataError for T=0 or out-of-range labels, NumericError when the band
// leaves no complete alignment.
TransducerLattice build_lattice(std::span<const double> logits, std::size_t T, std::span<const int> labels,
                                std::size_t classes, std::size_t band = kFullBand);

TransducerLoss rnnt_loss(std::span<const double> logits, std::size_t T, std::span<const int> labels,
                         std::size_t classes);
TransducerLoss rnnt_loss_pruned(std::span<const double> logits, std::size_t T, std::span<const int> labels,
                                std::size_t classes, std::size_t band);

// Autograd wrapper: logits tensor [T×(U+1)×classes] → scalar nll.
Tensor rnnt_loss(const Tensor& logits, std::span<const int> labels, std::size_t band = kFullBand);

// Alignment enumeration oracle. Each path is a sequence of T+U symbols where
// 0 = blank (advance t) and 1 = emit (advance u); every path ends with blank.
using Alignment = std::vector<std::uint8_t>;
std::uint64_t alignment_count(std::size_t T, std::size_t U);  // C(T+U-1, U)
std::vector<Alignment> enumerate_alignments(std::size_t T, std::size_t U, std::uint64_t max_paths = 10000);

} // namespace ctxducer
