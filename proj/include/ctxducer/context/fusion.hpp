#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "ctxducer/augment/augment.hpp"
#include "ctxducer/corpus/corpus.hpp"
#include "ctxducer/model/model.hpp"

namespace ctxducer {

// Encoder states of one neighbour utterance: the input to every block (at that
// block's rate) plus the final output.
struct ContextStates {
    std::vector<Tensor> layers;
    Tensor final_h;
    std::uint64_t param_version = 0;
};

// Full context-free encoder pass over a neighbour. Runs without gradient
// tracking when the model's fusion config detaches context.
ContextStates build_context(const TransducerModel& model, const Utterance& neighbour);

// Stored neighbour states keyed by (session, utterance index), tagged with the
// parameter version that produced them.
class ContextCache {
public:
    // Returns the cached entry for the current parameter version, building it
    // on a miss or when the stored entry is stale.
    std::shared_ptr<const ContextStates> get_or_build(const TransducerModel& model, const Utterance& utt);
    // Strict lookup: a missing or stale entry is an error.
    std::shared_ptr<const ContextStates> at(const std::string& session_id, std::size_t index,
                                            std::uint64_t param_version) const;
    void insert(const std::string& session_id, std::size_t index, std::shared_ptr<const ContextStates> states);
    std::size_t size() const;
    void clear();

private:
    using Key = std::pair<std::string, std::size_t>;
    mutable std::mutex mu_;
    std::map<Key, std::shared_ptr<const ContextStates>> entries_;
};

// Learned-query attention pooling: A = softmax(Q hᵀ/√D) row-wise, output A·h (L×D).
Tensor compact_attention(const Tensor& h_ctx, const Tensor& queries);
Tensor compact_pool(const Tensor& h_ctx, const Tensor& queries);

// Key/value plan for EncoderConcat and CompactPool: keys and values are
// [prev ; current ; future] with context rows normalised by the block's norm
// and tagged with a learned segment vector. Absent sides are omitted, so no
// context reproduces the plain block exactly.
class ContextFusion : public KeyValueFuser {
public:
    ContextFusion(const TransducerModel& model, const ContextStates* prev, const ContextStates* future);

    KeyValueSource keys_values(std::size_t layer, const Tensor& normed, const Tensor& norm_gain,
                               const Tensor& norm_bias) const override;

    // Number of key rows contributed by each side at a layer.
    std::size_t prev_rows(std::size_t layer) const;
    std::size_t future_rows(std::size_t layer) const;

    // Test hook: give every context key an additive -inf attention bias.
    void set_mask_context(bool mask) { mask_context_ = mask; }

private:
    Tensor side_rows(const ContextStates& ctx, std::size_t layer, const Tensor& gain, const Tensor& bias,
                     const char* segment) const;
    const Tensor& raw_state(const ContextStates& ctx, std::size_t layer) const;

    const TransducerModel& model_;
    const ContextStates* prev_;
    const ContextStates* future_;
    bool mask_context_ = false;
};

// Input-level concatenation: where the current utterance's frames land after
// stride-2 subsampling of [prev ; current ; future].
struct ConcatSpan {
    std::size_t prev_trim = 0;   // leading prev frames dropped so current starts on a pair boundary
    std::size_t begin = 0;       // first subsampled frame of the current utterance
    std::size_t end = 0;         // one past the last
};
ConcatSpan input_concat_span(std::size_t prev_frames, std::size_t cur_frames);

// Embedded pre-subsampling frames of [prev ; current ; future] and the span.
struct ConcatInput {
    Tensor frames;
    ConcatSpan span;
};
ConcatInput input_concat(const TransducerModel& model, const Utterance* prev, const Utterance& cur,
                         const Utterance* future);

// How the current utterance is encoded: neighbours used, augmentation applied.
struct EncodeOptions {
    const AugmentConfig* augment = nullptr;  // training only; null means none
    std::uint64_t augment_seed = 0;
    ContextCache* cache = nullptr;           // reuse neighbour states (evaluation)
    bool record_attention = false;
};

// Encoder output for session.utterances[pos] under the model's fusion config.
// Session edges give empty contexts on that side.
EncoderOutput encode_in_context(const TransducerModel& model, const Session& session, std::size_t pos,
                                const EncodeOptions& opts = {});

} // namespace ctxducer
