#include "ctxducer/context/fusion.hpp"

#include <cmath>
#include <limits>

#include "ctxducer/errors.hpp"
#include "ctxducer/numerics/ops.hpp"

namespace ctxducer {

ContextStates build_context(const TransducerModel& model, const Utterance& neighbour) {
    std::unique_ptr<NoGradGuard> guard;
    if (model.fusion().detach_context) {
        guard = std::make_unique<NoGradGuard>();
    }
    EncoderOutput enc = model.encode(model.embed_input(neighbour));
    ContextStates out;
    out.layers = std::move(enc.layer_inputs);
    out.final_h = enc.h;
    out.param_version = model.parameters().version();
    return out;
}

std::shared_ptr<const ContextStates> ContextCache::get_or_build(const TransducerModel& model, const Utterance& utt) {
    const std::uint64_t version = model.parameters().version();
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = entries_.find({utt.session_id, utt.index});
        if (it != entries_.end() && it->second->param_version == version) {
            return it->second;
        }
    }
    auto built = std::make_shared<const ContextStates>(build_context(model, utt));
    insert(utt.session_id, utt.index, built);
    return built;
}

std::shared_ptr<const ContextStates> ContextCache::at(const std::string& session_id, std::size_t index,
                                                      std::uint64_t param_version) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find({session_id, index});
    if (it == entries_.end()) {
        throw DataError("context cache miss for " + session_id + " #" + std::to_string(index));
    }
    if (it->second->param_version != param_version) {
        throw DataError("stale context cache entry for " + session_id + " #" + std::to_string(index));
    }
    return it->second;
}

void ContextCache::insert(const std::string& session_id, std::size_t index,
                          std::shared_ptr<const ContextStates> states) {
    std::lock_guard<std::mutex> lock(mu_);
    entries_[{session_id, index}] = std::move(states);
}

std::size_t ContextCache::size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.size();
}

void ContextCache::clear() {
    std::lock_guard<std::mutex> lock(mu_);
    entries_.clear();
}

Tensor compact_attention(const Tensor& h_ctx, const Tensor& queries) {
    if (h_ctx.rank() != 2 || queries.rank() != 2 || h_ctx.dim(1) != queries.dim(1)) {
        throw DimensionError("compact_pool: context " + shape_str(h_ctx.shape()) + " vs queries " +
                             shape_str(queries.shape()));
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(h_ctx.dim(1)));
    return softmax(scale(matmul_nt(queries, h_ctx), inv_sqrt), 1);
}

Tensor compact_pool(const Tensor& h_ctx, const Tensor& queries) {
    return matmul(compact_attention(h_ctx, queries), h_ctx);
}

ContextFusion::ContextFusion(const TransducerModel& model, const ContextStates* prev, const ContextStates* future)
    : model_(model), prev_(prev), future_(future) {
    const auto mode = model.fusion().mode;
    if ((prev || future) && mode != FusionMode::EncoderConcat && mode != FusionMode::CompactPool) {
        throw ConfigError("encoder-level context requires enc-concat or compact fusion, model has " +
                          to_string(mode));
    }
    for (const ContextStates* c : {prev, future}) {
        if (c && c->layers.size() != model.config().num_layers()) {
            throw DimensionError("context has " + std::to_string(c->layers.size()) + " layers, model has " +
                                 std::to_string(model.config().num_layers()));
        }
    }
}

const Tensor& ContextFusion::raw_state(const ContextStates& ctx, std::size_t layer) const {
    return model_.fusion().final_layer_context ? ctx.final_h : ctx.layers.at(layer);
}

Tensor ContextFusion::side_rows(const ContextStates& ctx, std::size_t layer, const Tensor& gain, const Tensor& bias,
                                const char* segment) const {
    Tensor raw = raw_state(ctx, layer);
    if (raw.dim(1) != model_.config().model_dim) {
        throw DimensionError("context dim " + std::to_string(raw.dim(1)) + " != encoder dim " +
                             std::to_string(model_.config().model_dim));
    }
    if (model_.fusion().mode == FusionMode::CompactPool) {
        raw = compact_pool(raw, model_.parameters().get("context.compact.layer" + std::to_string(layer) + ".query"));
    }
    return add_row(layernorm(raw, gain, bias), model_.parameters().get(segment));
}

std::size_t ContextFusion::prev_rows(std::size_t layer) const {
    if (!prev_) {
        return 0;
    }
    return model_.fusion().mode == FusionMode::CompactPool ? model_.fusion().compact_length
                                                           : raw_state(*prev_, layer).dim(0);
}

std::size_t ContextFusion::future_rows(std::size_t layer) const {
    if (!future_) {
        return 0;
    }
    return model_.fusion().mode == FusionMode::CompactPool ? model_.fusion().compact_length
                                                           : raw_state(*future_, layer).dim(0);
}

KeyValueSource ContextFusion::keys_values(std::size_t layer, const Tensor& normed, const Tensor& norm_gain,
                                          const Tensor& norm_bias) const {
    if (!prev_ && !future_) {
        return {normed, {}};
    }
    std::vector<Tensor> parts;
    if (prev_) {
        parts.push_back(side_rows(*prev_, layer, norm_gain, norm_bias, "context.segment.prev"));
    }
    parts.push_back(normed);
    if (future_) {
        parts.push_back(side_rows(*future_, layer, norm_gain, norm_bias, "context.segment.future"));
    }
    KeyValueSource src{concat(parts, 0), {}};
    if (mask_context_) {
        const double ninf = -std::numeric_limits<double>::infinity();
        const std::size_t np = prev_rows(layer), nc = normed.dim(0), nf = future_rows(layer);
        src.key_bias.assign(np + nc + nf, 0.0);
        std::fill(src.key_bias.begin(), src.key_bias.begin() + static_cast<long>(np), ninf);
        std::fill(src.key_bias.begin() + static_cast<long>(np + nc), src.key_bias.end(), ninf);
    }
    return src;
}

ConcatSpan input_concat_span(std::size_t prev_frames, std::size_t cur_frames) {
    ConcatSpan span;
    span.prev_trim = prev_frames % 2;
    span.begin = (prev_frames - span.prev_trim) / 2;
    span.end = span.begin + TransducerModel::subsampled_length(cur_frames);
    return span;
}

ConcatInput input_concat(const TransducerModel& model, const Utterance* prev, const Utterance& cur,
                         const Utterance* future) {
    Tensor cur_frames = model.embed_frames(cur);
    if (!prev && !future) {
        return {cur_frames, input_concat_span(0, cur_frames.dim(0))};
    }
    std::vector<Tensor> parts;
    std::size_t prev_frames = 0;
    ConcatSpan span;
    if (prev) {
        Tensor p = model.embed_frames(*prev);
        prev_frames = p.dim(0);
        span = input_concat_span(prev_frames, cur_frames.dim(0));
        if (span.prev_trim < prev_frames) {
            parts.push_back(span.prev_trim == 0 ? p : slice(p, 0, span.prev_trim, prev_frames));
        }
    } else {
        span = input_concat_span(0, cur_frames.dim(0));
    }
    parts.push_back(cur_frames);
    if (future) {
        parts.push_back(model.embed_frames(*future));
    }
    return {concat(parts, 0), span};
}

namespace {

const Utterance* neighbour(const Session& s, std::size_t pos, bool want, long offset) {
    if (!want) {
        return nullptr;
    }
    const long j = static_cast<long>(pos) + offset;
    if (j < 0 || j >= static_cast<long>(s.utterances.size())) {
        return nullptr;
    }
    return &s.utterances[static_cast<std::size_t>(j)];
}

Tensor maybe_augment(const Tensor& frames, const EncodeOptions& opts) {
    if (!opts.augment || !opts.augment->enabled) {
        return frames;
    }
    return augment(frames, *opts.augment, opts.augment_seed, RunMode::Train);
}

} // namespace

EncoderOutput encode_in_context(const TransducerModel& model, const Session& session, std::size_t pos,
                                const EncodeOptions& opts) {
    if (pos >= session.utterances.size()) {
        throw DataError("utterance position " + std::to_string(pos) + " outside session " + session.session_id);
    }
    const Utterance& cur = session.utterances[pos];
    const FusionConfig& fc = model.fusion();
    const Utterance* prev = neighbour(session, pos, fc.has_context() && fc.preceding > 0, -1);
    const Utterance* fut = neighbour(session, pos, fc.has_context() && fc.future > 0, +1);

    if (fc.mode == FusionMode::InputConcat) {
        ConcatInput in = input_concat(model, prev, cur, fut);
        EncoderOutput enc = model.encode(model.subsample(maybe_augment(in.frames, opts)), nullptr,
                                         opts.record_attention);
        if (in.span.begin != 0 || in.span.end != enc.h.dim(0)) {
            enc.h = slice(enc.h, 0, in.span.begin, in.span.end);
        }
        return enc;
    }

    Tensor x = model.subsample(maybe_augment(model.embed_frames(cur), opts));
    if (!prev && !fut) {
        return model.encode(x, nullptr, opts.record_attention);
    }
    std::shared_ptr<const ContextStates> prev_states, fut_states;
    auto states_for = [&](const Utterance& u) {
        return opts.cache ? opts.cache->get_or_build(model, u)
                          : std::make_shared<const ContextStates>(build_context(model, u));
    };
    if (prev) {
        prev_states = states_for(*prev);
    }
    if (fut) {
        fut_states = states_for(*fut);
    }
    ContextFusion fusion(model, prev_states.get(), fut_states.get());
    return model.encode(x, &fusion, opts.record_attention);
}

} // namespace ctxducer
