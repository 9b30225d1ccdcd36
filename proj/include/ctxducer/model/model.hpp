#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctxducer/context/fusion_config.hpp"
#include "ctxducer/model/parameters.hpp"
#include "ctxducer/numerics/tensor.hpp"

namespace ctxducer {

struct Utterance;

enum class InputKind { DiscreteTokens, ContinuousFeatures };

std::string to_string(InputKind kind);
InputKind input_kind_from_string(const std::string& s);

struct ModelConfig {
    InputKind input_kind = InputKind::DiscreteTokens;
    std::size_t vocab_classes = 0;   // V + 1, blank = 0
    std::size_t codebook_size = 64;  // discrete input alphabet
    std::size_t feature_dim = 16;    // continuous input dim F
    std::size_t token_embed_dim = 80;
    std::size_t model_dim = 32;
    std::size_t heads = 4;
    std::size_t ff_dim = 64;
    std::vector<std::size_t> downsample = {1, 2};  // one entry per stack
    std::size_t blocks_per_stack = 1;
    std::size_t predictor_embed_dim = 16;
    std::size_t context_order = 2;
    std::size_t predictor_dim = 32;
    std::size_t joint_dim = 32;

    void validate() const;
    std::size_t num_layers() const { return downsample.size() * blocks_per_stack; }
};

// What a block attends over: keys/values source rows and an optional additive
// per-key bias (-inf masks a key).
struct KeyValueSource {
    Tensor kv;
    std::vector<double> key_bias;
};

// Hook through which cross-utterance context enters each encoder block.
// `normed` is the block's layer-normalised input; gain/bias are that norm's
// parameters so context rows can be normalised the same way.
class KeyValueFuser {
public:
    virtual ~KeyValueFuser() = default;
    virtual KeyValueSource keys_values(std::size_t layer, const Tensor& normed, const Tensor& norm_gain,
                                       const Tensor& norm_bias) const = 0;
};

struct EncoderOutput {
    Tensor h;                                    // T×D, same length as the input
    std::vector<Tensor> layer_inputs;            // block input per layer, at that layer's rate
    std::vector<Tensor> layer_states;            // post-block state per layer, at that layer's rate
    std::vector<std::vector<Tensor>> attention;  // [layer][head] query×key weights, when recorded
};

// Transducer network: input embedding + stride-2 subsampling, transformer
// encoder stacks with per-stack down/upsampling, stateless predictor and joint.
class TransducerModel {
public:
    TransducerModel(ModelConfig cfg, FusionConfig fusion, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const FusionConfig& fusion() const { return fusion_; }
    Parameters& parameters() { return params_; }
    const Parameters& parameters() const { return params_; }

    // Pre-subsampling input frames T×E.
    Tensor embed_tokens(std::span<const int> tokens) const;
    Tensor embed_features(std::span<const double> features, std::size_t frames) const;
    Tensor embed_frames(const Utterance& utt) const;
    // Stride-2 convolutional subsampling: T×E → ceil(T/2)×D.
    Tensor subsample(const Tensor& frames) const;
    static std::size_t subsampled_length(std::size_t frames) { return (frames + 1) / 2; }
    // embed_frames followed by subsample.
    Tensor embed_input(const Utterance& utt) const;

    EncoderOutput encode(const Tensor& x, const KeyValueFuser* fuser = nullptr, bool record_attention = false) const;
    // Temporal pooling factor in effect at a given layer.
    std::size_t layer_factor(std::size_t layer) const;
    static std::size_t pooled_length(std::size_t frames, std::size_t factor) { return (frames + factor - 1) / factor; }

    // Stateless predictor output f for one label prefix → [predictor_dim].
    Tensor predict(std::span<const int> prefix) const;
    // Rows u = 0..U hold predict(labels[0:u]) → (U+1)×predictor_dim.
    Tensor predict_all(std::span<const int> labels) const;

    // Logits [V+1] for one (h_t, f_u) pair.
    Tensor joint(const Tensor& h_t, const Tensor& f_u) const;
    // Logits T×(U+1)×(V+1) for every (t, u) pair.
    Tensor joint_lattice(const Tensor& h, const Tensor& f) const;

    // Fresh seeded initialisation of the output projection only.
    void reinit_output(std::uint64_t seed);

    static constexpr const char* kOutputWeight = "joint.output.weight";

private:
    Tensor block(const Tensor& x, std::size_t layer, const KeyValueFuser* fuser, EncoderOutput* trace,
                 bool record_attention) const;
    const Tensor& p(const std::string& name) const { return params_.get(name); }

    ModelConfig cfg_;
    FusionConfig fusion_;
    Parameters params_;
};

// Sinusoidal positional encoding T×D.
Tensor sinusoidal_positions(std::size_t frames, std::size_t dim);

std::string layer_prefix(std::size_t layer);

} // namespace ctxducer
