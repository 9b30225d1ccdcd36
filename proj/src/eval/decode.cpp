#include "ctxducer/eval/eval.hpp"

#include "ctxducer/loss/rnnt.hpp"
#include "ctxducer/numerics/ops.hpp"

namespace ctxducer {

std::vector<int> greedy_search(const TransducerModel& model, const Tensor& h, std::size_t max_symbols) {
    NoGradGuard no_grad;
    const std::size_t T = h.dim(0), D = h.dim(1);
    std::vector<int> hyp;
    Tensor f = model.predict(hyp);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor h_t = reshape(slice(h, 0, t, t + 1), {D});
        for (std::size_t emitted = 0; emitted < max_symbols; ++emitted) {
            Tensor logits = model.joint(h_t, f);
            const auto v = logits.values();
            std::size_t best = 0;
            for (std::size_t k = 1; k < v.size(); ++k) {
                if (v[k] > v[best]) {
                    best = k;
                }
            }
            if (best == static_cast<std::size_t>(kBlank)) {
                break;
            }
            hyp.push_back(static_cast<int>(best));
            f = model.predict(hyp);
        }
    }
    return hyp;
}

std::vector<int> greedy_decode(const TransducerModel& model, const Session& session, std::size_t pos,
                               ContextCache* cache, std::size_t max_symbols) {
    NoGradGuard no_grad;
    EncodeOptions opts;
    opts.cache = cache;
    EncoderOutput enc = encode_in_context(model, session, pos, opts);
    return greedy_search(model, enc.h, max_symbols);
}

} // namespace ctxducer
