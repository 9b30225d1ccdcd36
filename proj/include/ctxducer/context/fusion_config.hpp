#pragma once

#include <cstddef>
#include <string>

namespace ctxducer {

enum class FusionMode { None, InputConcat, EncoderConcat, CompactPool };

// Default number of summary vectors per pooled neighbour.
inline constexpr std::size_t kReferenceCompactLength = 32;

struct FusionConfig {
    FusionMode mode = FusionMode::None;
    std::size_t preceding = 0;  // n_p ∈ {0, 1}
    std::size_t future = 0;     // n_f ∈ {0, 1}
    bool detach_context = true;
    std::size_t compact_length = kReferenceCompactLength;
    // Attend to the neighbour's final encoder output at every layer instead of
    // the layer-matched hidden states.
    bool final_layer_context = false;

    void validate() const;
    bool has_context() const { return mode != FusionMode::None && (preceding > 0 || future > 0); }
};

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& s);

} // namespace ctxducer
