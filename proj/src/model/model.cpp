#include "ctxducer/model/model.hpp"

#include <cmath>
#include <random>

#include "ctxducer/corpus/corpus.hpp"
#include "ctxducer/errors.hpp"
#include "ctxducer/numerics/ops.hpp"
#include "ctxducer/rng.hpp"

namespace ctxducer {

std::string to_string(InputKind kind) {
    return kind == InputKind::DiscreteTokens ? "discrete" : "continuous";
}

InputKind input_kind_from_string(const std::string& s) {
    if (s == "discrete") {
        return InputKind::DiscreteTokens;
    }
    if (s == "continuous") {
        return InputKind::ContinuousFeatures;
    }
    throw ConfigError("unknown input kind: " + s);
}

void ModelConfig::validate() const {
    if (vocab_classes < 2) {
        throw ConfigError("model: vocab_classes must include blank and at least one word");
    }
    if (model_dim == 0 || heads == 0 || model_dim % heads != 0) {
        throw ConfigError("model: model_dim must be a positive multiple of heads");
    }
    if (downsample.empty() || blocks_per_stack == 0) {
        throw ConfigError("model: need at least one stack with at least one block");
    }
    for (auto f : downsample) {
        if (f == 0) {
            throw ConfigError("model: downsample factors must be >= 1");
        }
    }
    if (context_order == 0) {
        throw ConfigError("model: context_order must be >= 1");
    }
    if (token_embed_dim == 0 || ff_dim == 0 || predictor_embed_dim == 0 || predictor_dim == 0 || joint_dim == 0) {
        throw ConfigError("model: all dimensions must be >= 1");
    }
    if (input_kind == InputKind::DiscreteTokens && codebook_size == 0) {
        throw ConfigError("model: codebook_size must be >= 1");
    }
    if (input_kind == InputKind::ContinuousFeatures && feature_dim == 0) {
        throw ConfigError("model: feature_dim must be >= 1");
    }
}

std::string layer_prefix(std::size_t layer) { return "encoder.layer" + std::to_string(layer) + "."; }

Tensor sinusoidal_positions(std::size_t frames, std::size_t dim) {
    std::vector<double> pe(frames * dim);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
            const double arg = static_cast<double>(t) * rate;
            pe[t * dim + i] = (i % 2 == 0) ? std::sin(arg) : std::cos(arg);
        }
    }
    return Tensor::from_values({frames, dim}, std::move(pe));
}

namespace {

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        x = normal(rng);
    }
    return Tensor::from_values(std::move(shape), std::move(v), true);
}

Tensor linear_weight(std::size_t in, std::size_t out, Rng& rng) {
    return normal_param({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

} // namespace

TransducerModel::TransducerModel(ModelConfig cfg, FusionConfig fusion, std::uint64_t seed)
    : cfg_(std::move(cfg)), fusion_(fusion) {
    cfg_.validate();
    fusion_.validate();
    Rng rng(derive_seed(seed, {0x1417u}));
    const std::size_t E = cfg_.token_embed_dim, D = cfg_.model_dim;

    if (cfg_.input_kind == InputKind::DiscreteTokens) {
        params_.add("input.embed", normal_param({cfg_.codebook_size, E}, 1.0, rng));
    } else {
        params_.add("input.proj.weight", linear_weight(cfg_.feature_dim, E, rng));
        params_.add("input.proj.bias", zeros_param({E}));
    }
    params_.add("subsample.weight", linear_weight(2 * E, D, rng));
    params_.add("subsample.bias", zeros_param({D}));

    for (std::size_t l = 0; l < cfg_.num_layers(); ++l) {
        const auto pre = layer_prefix(l);
        params_.add(pre + "ln1.gain", ones_param({D}));
        params_.add(pre + "ln1.bias", zeros_param({D}));
        for (const char* m : {"wq", "wk", "wv", "wo"}) {
            params_.add(pre + "attn." + m, linear_weight(D, D, rng));
            // Keys carry no bias: it shifts every score of a query equally, so
            // softmax cancels it and it could never receive gradient.
            if (std::string(m) != "wk") {
                params_.add(pre + "attn.b" + std::string(m + 1), zeros_param({D}));
            }
        }
        params_.add(pre + "ln2.gain", ones_param({D}));
        params_.add(pre + "ln2.bias", zeros_param({D}));
        params_.add(pre + "ff.w1", linear_weight(D, cfg_.ff_dim, rng));
        params_.add(pre + "ff.b1", zeros_param({cfg_.ff_dim}));
        params_.add(pre + "ff.w2", linear_weight(cfg_.ff_dim, D, rng));
        params_.add(pre + "ff.b2", zeros_param({D}));
    }

    params_.add("predictor.embed", normal_param({cfg_.vocab_classes, cfg_.predictor_embed_dim}, 1.0, rng));
    params_.add("predictor.conv.weight",
                linear_weight(cfg_.context_order * cfg_.predictor_embed_dim, cfg_.predictor_dim, rng));
    params_.add("predictor.conv.bias", zeros_param({cfg_.predictor_dim}));

    params_.add("joint.enc.weight", linear_weight(D, cfg_.joint_dim, rng));
    params_.add("joint.enc.bias", zeros_param({cfg_.joint_dim}));
    params_.add("joint.pred.weight", linear_weight(cfg_.predictor_dim, cfg_.joint_dim, rng));
    params_.add(kOutputWeight, linear_weight(cfg_.joint_dim, cfg_.vocab_classes, rng));

    // Context parameters come last so the core initialisation is identical for every fusion mode.
    if (fusion_.mode == FusionMode::EncoderConcat || fusion_.mode == FusionMode::CompactPool) {
        params_.add("context.segment.prev", normal_param({D}, 0.1, rng));
        params_.add("context.segment.future", normal_param({D}, 0.1, rng));
    }
    if (fusion_.mode == FusionMode::CompactPool) {
        for (std::size_t l = 0; l < cfg_.num_layers(); ++l) {
            params_.add("context.compact.layer" + std::to_string(l) + ".query",
                        normal_param({fusion_.compact_length, D}, 1.0, rng));
        }
    }
}

void TransducerModel::reinit_output(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x07a11u}));
    Tensor fresh = linear_weight(cfg_.joint_dim, cfg_.vocab_classes, rng);
    auto dst = params_.get(kOutputWeight).mutable_values();
    const auto src = fresh.values();
    std::copy(src.begin(), src.end(), dst.begin());
    params_.bump_version();
}

Tensor TransducerModel::embed_tokens(std::span<const int> tokens) const {
    if (cfg_.input_kind != InputKind::DiscreteTokens) {
        throw DataError("model expects continuous features, got tokens");
    }
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= cfg_.codebook_size) {
            throw DataError("token id " + std::to_string(t) + " outside codebook of size " +
                            std::to_string(cfg_.codebook_size));
        }
    }
    return gather_rows(p("input.embed"), tokens);
}

Tensor TransducerModel::embed_features(std::span<const double> features, std::size_t frames) const {
    if (cfg_.input_kind != InputKind::ContinuousFeatures) {
        throw DataError("model expects discrete tokens, got features");
    }
    if (frames == 0 || features.size() != frames * cfg_.feature_dim) {
        throw DimensionError("embed_features: expected " + std::to_string(frames) + "×" +
                             std::to_string(cfg_.feature_dim) + " features");
    }
    Tensor x = Tensor::from_values({frames, cfg_.feature_dim}, std::vector<double>(features.begin(), features.end()));
    return add_row(matmul(x, p("input.proj.weight")), p("input.proj.bias"));
}

Tensor TransducerModel::embed_frames(const Utterance& utt) const {
    if (cfg_.input_kind == InputKind::DiscreteTokens) {
        if (!utt.has_tokens()) {
            throw DataError("utterance " + utt.utterance_id + " has no tokens");
        }
        return embed_tokens(utt.tokens);
    }
    if (!utt.has_features()) {
        throw DataError("utterance " + utt.utterance_id + " has no features");
    }
    if (utt.feature_dim != cfg_.feature_dim) {
        throw DimensionError("utterance " + utt.utterance_id + " feature dim " + std::to_string(utt.feature_dim) +
                             " != model feature dim " + std::to_string(cfg_.feature_dim));
    }
    return embed_features(utt.features, utt.features.size() / utt.feature_dim);
}

Tensor TransducerModel::subsample(const Tensor& frames) const {
    const std::size_t T = frames.dim(0), E = frames.dim(1);
    Tensor x = frames;
    if (T % 2 == 1) {
        x = concat({frames, Tensor::zeros({1, E})}, 0);
    }
    Tensor pairs = reshape(x, {subsampled_length(T), 2 * E});
    return add_row(matmul(pairs, p("subsample.weight")), p("subsample.bias"));
}

Tensor TransducerModel::embed_input(const Utterance& utt) const { return subsample(embed_frames(utt)); }

std::size_t TransducerModel::layer_factor(std::size_t layer) const {
    return cfg_.downsample.at(layer / cfg_.blocks_per_stack);
}

Tensor TransducerModel::block(const Tensor& x, std::size_t layer, const KeyValueFuser* fuser, EncoderOutput* trace,
                              bool record_attention) const {
    const auto pre = layer_prefix(layer);
    const std::size_t D = cfg_.model_dim, H = cfg_.heads, dh = D / H;
    const Tensor& g1 = p(pre + "ln1.gain");
    const Tensor& b1 = p(pre + "ln1.bias");
    Tensor n = layernorm(x, g1, b1);
    KeyValueSource src = fuser ? fuser->keys_values(layer, n, g1, b1) : KeyValueSource{n, {}};
    if (src.kv.dim(1) != D) {
        throw DimensionError("context rows have dim " + std::to_string(src.kv.dim(1)) + ", encoder dim is " +
                             std::to_string(D));
    }
    Tensor q = add_row(matmul(n, p(pre + "attn.wq")), p(pre + "attn.bq"));
    Tensor k = matmul(src.kv, p(pre + "attn.wk"));
    Tensor v = add_row(matmul(src.kv, p(pre + "attn.wv")), p(pre + "attn.bv"));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> heads;
    heads.reserve(H);
    std::vector<Tensor> weights;
    for (std::size_t h = 0; h < H; ++h) {
        Tensor qh = H == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
        Tensor kh = H == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
        Tensor vh = H == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
        Tensor a = src.key_bias.empty() ? softmax(scores, 1) : biased_softmax_rows(scores, src.key_bias);
        if (record_attention) {
            weights.push_back(a);
        }
        heads.push_back(matmul(a, vh));
    }
    Tensor attn = H == 1 ? heads.front() : concat(heads, 1);
    attn = add_row(matmul(attn, p(pre + "attn.wo")), p(pre + "attn.bo"));
    Tensor y = add(x, attn);
    Tensor n2 = layernorm(y, p(pre + "ln2.gain"), p(pre + "ln2.bias"));
    Tensor ff = relu(add_row(matmul(n2, p(pre + "ff.w1")), p(pre + "ff.b1")));
    ff = add_row(matmul(ff, p(pre + "ff.w2")), p(pre + "ff.b2"));
    Tensor out = add(y, ff);
    if (trace && record_attention) {
        trace->attention.push_back(std::move(weights));
    }
    return out;
}

EncoderOutput TransducerModel::encode(const Tensor& x, const KeyValueFuser* fuser, bool record_attention) const {
    if (x.rank() != 2 || x.dim(1) != cfg_.model_dim) {
        throw DimensionError("encode: expected T×" + std::to_string(cfg_.model_dim) + ", got " + shape_str(x.shape()));
    }
    const std::size_t T = x.dim(0);
    EncoderOutput out;
    Tensor cur = add(x, sinusoidal_positions(T, cfg_.model_dim));
    std::size_t layer = 0;
    for (std::size_t s = 0; s < cfg_.downsample.size(); ++s) {
        const std::size_t f = cfg_.downsample[s];
        Tensor z_in = f == 1 ? cur : pool_rows(cur, f);
        Tensor z = z_in;
        for (std::size_t b = 0; b < cfg_.blocks_per_stack; ++b, ++layer) {
            out.layer_inputs.push_back(z);
            z = block(z, layer, fuser, &out, record_attention);
            out.layer_states.push_back(z);
        }
        // Downsampled stacks contribute their change back at full rate.
        cur = f == 1 ? z : add(cur, repeat_rows(sub(z, z_in), f, T));
    }
    out.h = cur;
    return out;
}

Tensor TransducerModel::predict_all(std::span<const int> labels) const {
    const std::size_t C = cfg_.context_order, U = labels.size();
    std::vector<int> ids;
    ids.reserve((U + 1) * C);
    for (int y : labels) {
        if (y < 1 || static_cast<std::size_t>(y) >= cfg_.vocab_classes) {
            throw DataError("label id " + std::to_string(y) + " out of range");
        }
    }
    for (std::size_t u = 0; u <= U; ++u) {
        for (std::size_t k = 0; k < C; ++k) {
            // Window position u - C + k; positions before the start use the start symbol (row 0).
            const long pos = static_cast<long>(u) - static_cast<long>(C) + static_cast<long>(k);
            ids.push_back(pos < 0 ? 0 : labels[static_cast<std::size_t>(pos)]);
        }
    }
    Tensor e = gather_rows(p("predictor.embed"), ids);
    e = reshape(e, {U + 1, C * cfg_.predictor_embed_dim});
    return relu(add_row(matmul(e, p("predictor.conv.weight")), p("predictor.conv.bias")));
}

Tensor TransducerModel::predict(std::span<const int> prefix) const {
    const std::size_t C = cfg_.context_order;
    const std::size_t keep = std::min(C, prefix.size());
    // Only the last C labels matter; predict_all's final row is exactly that window.
    Tensor all = predict_all(prefix.subspan(prefix.size() - keep));
    return reshape(slice(all, 0, keep, keep + 1), {cfg_.predictor_dim});
}

Tensor TransducerModel::joint_lattice(const Tensor& h, const Tensor& f) const {
    const std::size_t T = h.dim(0), U1 = f.dim(0);
    Tensor enc = add_row(matmul(h, p("joint.enc.weight")), p("joint.enc.bias"));
    Tensor pred = matmul(f, p("joint.pred.weight"));
    Tensor g = relu(outer_add(enc, pred));
    Tensor logits = matmul(g, p(kOutputWeight));
    return reshape(logits, {T, U1, cfg_.vocab_classes});
}

Tensor TransducerModel::joint(const Tensor& h_t, const Tensor& f_u) const {
    Tensor logits = joint_lattice(reshape(h_t, {1, h_t.numel()}), reshape(f_u, {1, f_u.numel()}));
    return reshape(logits, {cfg_.vocab_classes});
}

} // namespace ctxducer
