#include "ctxducer/context/fusion_config.hpp"

#include "ctxducer/errors.hpp"

namespace ctxducer {

void FusionConfig::validate() const {
    if (preceding > 1 || future > 1) {
        throw ConfigError("fusion: preceding and future context counts must be 0 or 1");
    }
    if (mode == FusionMode::None && (preceding > 0 || future > 0)) {
        throw ConfigError("fusion: mode none requires preceding = future = 0");
    }
    if (mode == FusionMode::CompactPool && compact_length == 0) {
        throw ConfigError("fusion: compact mode requires L >= 1");
    }
}

std::string to_string(FusionMode mode) {
    switch (mode) {
    case FusionMode::None:
        return "none";
    case FusionMode::InputConcat:
        return "input-concat";
    case FusionMode::EncoderConcat:
        return "enc-concat";
    case FusionMode::CompactPool:
        return "compact";
    }
    return "none";
}

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "none") {
        return FusionMode::None;
    }
    if (s == "input-concat") {
        return FusionMode::InputConcat;
    }
    if (s == "enc-concat") {
        return FusionMode::EncoderConcat;
    }
    if (s == "compact") {
        return FusionMode::CompactPool;
    }
    throw ConfigError("unknown fusion mode: " + s);
}

} // namespace ctxducer
