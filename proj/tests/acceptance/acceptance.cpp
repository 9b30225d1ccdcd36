// One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "ctxducer/context/fusion.hpp"
#include "ctxducer/errors.hpp"
#include "ctxducer/eval/eval.hpp"
#include "ctxducer/harness/training.hpp"
#include "ctxducer/loss/rnnt.hpp"
#include "ctxducer/numerics/grad_check.hpp"
#include "ctxducer/numerics/ops.hpp"
#include "ctxducer/quantizer/codebook.hpp"

using namespace ctxducer;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// --- transducer instances ------------------------------------------------------

struct Instance {
    std::size_t T, U, C;
    std::vector<double> logits;
    std::vector<int> labels;
};

Instance random_instance(std::mt19937_64& rng, std::size_t T, std::size_t U, std::size_t V, double spread) {
    Instance in{T, U, V + 1, {}, {}};
    std::uniform_real_distribution<double> d(-spread, spread);
    in.logits.resize(T * (U + 1) * (V + 1));
    for (auto& x : in.logits) {
        x = d(rng);
    }
    for (std::size_t i = 0; i < U; ++i) {
        in.labels.push_back(1 + static_cast<int>(rng() % V));
    }
    return in;
}

// −log Σ over every enumerated path of Π cell probabilities, in extended precision.
double brute_force_nll(const Instance& in) {
    auto logp = [&](std::size_t t, std::size_t u, std::size_t k) {
        const double* z = &in.logits[(t * (in.U + 1) + u) * in.C];
        long double m = z[0];
        for (std::size_t j = 1; j < in.C; ++j) {
            m = std::max<long double>(m, z[j]);
        }
        long double s = 0;
        for (std::size_t j = 0; j < in.C; ++j) {
            s += std::exp(static_cast<long double>(z[j]) - m);
        }
        return static_cast<long double>(z[k]) - m - std::log(s);
    };
    long double total = 0;
    for (const Alignment& path : enumerate_alignments(in.T, in.U)) {
        std::size_t t = 0, u = 0;
        long double lp = 0;
        for (std::uint8_t step : path) {
            if (step == 0) {
                lp += logp(t, u, 0);
                ++t;
            } else {
                lp += logp(t, u, static_cast<std::size_t>(in.labels[u]));
                ++u;
            }
        }
        total += std::exp(lp);
    }
    return static_cast<double>(-std::log(total));
}

// --- small models and corpora --------------------------------------------------

ModelConfig micro_model() {
    ModelConfig m;
    m.vocab_classes = 5;  // V = 4
    m.codebook_size = 6;
    m.token_embed_dim = 4;
    m.model_dim = 8;
    m.heads = 2;
    m.ff_dim = 8;
    m.downsample = {1};
    m.blocks_per_stack = 1;
    m.predictor_embed_dim = 3;
    m.predictor_dim = 5;
    m.joint_dim = 6;
    return m;
}

ExperimentConfig small_pipeline() {
    ExperimentConfig cfg = default_experiment_config();
    cfg.generator.num_sessions = 12;
    cfg.generator.utterances_per_session = 4;
    cfg.quantizer.K = 16;
    cfg.quantizer.max_iters = 10;
    cfg.training.epochs = 2;
    cfg.training.learning_rate = 0.002;
    cfg.training.dev_sessions = 3;
    resolve_derived(cfg);
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- criteria ---------------------------------------------------------------------

Outcome loss_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
        const std::size_t T = 1 + rng() % 4, U = rng() % 4, V = 1 + rng() % 5;
        const Instance in = random_instance(rng, T, U, V, 3.0);
        worst = std::max(worst, std::abs(rnnt_loss(in.logits, T, in.labels, in.C).nll - brute_force_nll(in)));
    }
    const double secs = since(t0);
    return {worst <= 1e-9 && secs < 5.0, fmt("max |dp - brute| = %.3g", worst) + fmt(", %.2f s", secs)};
}

Outcome gradient_audits() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(7);
    double loss_err = 0;
    for (int i = 0; i < 20; ++i) {
        const Instance in = random_instance(rng, 3, 2, 3, 2.0);
        const Tensor x = Tensor::from_values({3, 3, 4}, in.logits);
        loss_err = std::max(loss_err, grad_check([&](const Tensor& z) { return rnnt_loss(z, in.labels); }, x));
    }
    double model_err = 0;
    for (std::uint64_t seed : {1u, 2u}) {
        TransducerModel model(micro_model(), {}, seed);
        Utterance utt;
        utt.tokens = {0, 1, 5, 2, 3, 3, 4, 1, 0, 2, 5, 4};  // T = 6 after subsampling
        const std::vector<int> y = {2, 4, 1};                // U = 3
        auto loss = [&] {
            const Tensor h = model.encode(model.embed_input(utt)).h;
            return rnnt_loss(model.joint_lattice(h, model.predict_all(y)), y);
        };
        for (auto& [name, t] : model.parameters().entries()) {
            model_err = std::max(model_err, grad_check_leaf(loss, t));
        }
    }
    const double secs = since(t0);
    return {loss_err <= 1e-6 && model_err <= 1e-3 && secs < 60.0,
            fmt("loss grad rel err %.3g", loss_err) + fmt(", model grad rel err %.3g", model_err) +
                fmt(", %.2f s", secs)};
}

Outcome band_exactness() {
    std::mt19937_64 rng(99);
    std::size_t mismatches = 0, violations = 0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t T = 1 + rng() % 8, U = rng() % 6, V = 1 + rng() % 5;
        const Instance in = random_instance(rng, T, U, V, 3.0);
        const double exact = rnnt_loss(in.logits, T, in.labels, in.C).nll;
        for (std::size_t band = U + 1; band <= U + 3; ++band) {
            if (rnnt_loss_pruned(in.logits, T, in.labels, in.C, band).nll != exact) {
                ++mismatches;
            }
        }
        for (std::size_t band = 1; band <= U; ++band) {
            try {
                if (rnnt_loss_pruned(in.logits, T, in.labels, in.C, band).nll < exact) {
                    ++violations;
                }
            } catch (const NumericError&) {
                // The band left no complete alignment: the loss is +inf, not below exact.
            }
        }
    }
    return {mismatches == 0 && violations == 0,
            std::to_string(mismatches) + " bitwise mismatches, " + std::to_string(violations) + " pruned < exact"};
}

Outcome context_degeneracy() {
    ExperimentConfig cfg = small_pipeline();
    const Dataset data = prepare_dataset(cfg);
    // Single-utterance sessions: full scope, but every context is empty.
    ExperimentConfig lone_cfg = cfg;
    lone_cfg.generator.utterances_per_session = 1;
    lone_cfg.generator.num_sessions = 30;
    const Dataset lone = prepare_dataset(lone_cfg);

    auto step_losses = [&](const Dataset& d, FusionMode mode, std::size_t p, std::size_t f) {
        FusionConfig fusion;
        fusion.mode = mode;
        fusion.preceding = p;
        fusion.future = f;
        TransducerModel model(cfg.model, fusion, 31);
        Trainer trainer(model, cfg.training, cfg.augment);
        trainer.run(d.train, d.vocab, 2);
        return trainer.progress().step_losses;
    };
    double worst = 0;
    bool lengths_ok = true;
    for (const Dataset* d : {&data, &lone}) {
        const auto base = step_losses(*d, FusionMode::None, 0, 0);
        for (FusionMode mode : {FusionMode::InputConcat, FusionMode::EncoderConcat, FusionMode::CompactPool}) {
            const std::size_t scope = d == &lone ? 1 : 0;
            const auto got = step_losses(*d, mode, scope, scope);
            lengths_ok = lengths_ok && got.size() == base.size() && !base.empty();
            for (std::size_t i = 0; i < std::min(got.size(), base.size()); ++i) {
                worst = std::max(worst, std::abs(got[i] - base[i]));
            }
        }
    }
    return {lengths_ok && worst <= 1e-9, fmt("max per-step |loss - baseline| = %.3g", worst)};
}

Outcome compact_module() {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    const std::size_t L = FusionConfig{}.compact_length, D = 32;
    std::vector<double> qv(L * D);
    for (auto& v : qv) {
        v = nd(rng);
    }
    const Tensor q = Tensor::from_values({L, D}, qv);
    bool shapes = true;
    double row_err = 0;
    for (std::size_t Tc : {1u, 3u, 17u, 100u}) {
        std::vector<double> hv(Tc * D);
        for (auto& v : hv) {
            v = 2 * nd(rng);
        }
        const Tensor h = Tensor::from_values({Tc, D}, hv);
        shapes = shapes && compact_pool(h, q).shape() == Shape{L, D};
        const Tensor a = compact_attention(h, q);
        for (std::size_t i = 0; i < L; ++i) {
            double s = 0;
            for (std::size_t t = 0; t < Tc; ++t) {
                s += a.at(i, t);
            }
            row_err = std::max(row_err, std::abs(s - 1.0));
        }
    }
    const bool default_l = L == 32 && kReferenceCompactLength == 32 &&
                           default_experiment_config().fusion.compact_length == 32;
    return {shapes && row_err <= 1e-9 && default_l,
            "default L = " + std::to_string(L) + fmt(", max |row sum - 1| = %.3g", row_err)};
}

// Desk setup for the trend check: enough sessions and epochs for the
// cross-utterance edge words to be learnable within the time budget.
ExperimentConfig trend_config(std::uint64_t seed) {
    ExperimentConfig cfg = default_experiment_config();
    cfg.generator.num_sessions = 160;
    cfg.generator.context_strength = 0.8;
    cfg.generator.seed = seed;
    cfg.model.downsample = {1, 1};
    cfg.training.epochs = 30;
    cfg.training.learning_rate = 0.001;
    cfg.training.dev_sessions = 10;
    cfg.training.seed = seed;
    resolve_derived(cfg);
    return cfg;
}

Outcome context_helps() {
    const auto t0 = Clock::now();
    const std::pair<std::size_t, std::size_t> scopes[3] = {{0, 0}, {1, 0}, {1, 1}};
    double mean[3] = {0, 0, 0};
    std::string per_seed;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const ExperimentConfig base = trend_config(seed);
        const Dataset data = prepare_dataset(base);
        for (int i = 0; i < 3; ++i) {
            ExperimentConfig cfg = base;
            cfg.fusion.mode = i == 0 ? FusionMode::None : FusionMode::EncoderConcat;
            cfg.fusion.preceding = scopes[i].first;
            cfg.fusion.future = scopes[i].second;
            const double wer = run_training(cfg, data, RunOptions{}).dev_wer;
            mean[i] += wer / 3.0;
            per_seed += fmt(i == 0 ? " [%.3f" : " %.3f", wer) + (i == 2 ? "]" : "");
        }
    }
    const double secs = since(t0);
    const double gain10 = 1.0 - mean[1] / mean[0];
    const double gain11 = 1.0 - mean[2] / mean[0];
    return {gain11 >= 0.05 && gain11 >= gain10 && secs < 900.0,
            fmt("mean WER none %.4f", mean[0]) + fmt(", p1f0 %.4f", mean[1]) + fmt(", p1f1 %.4f", mean[2]) +
                fmt("; relative gain p1f0 %.1f%%", 100 * gain10) + fmt(", p1f1 %.1f%%", 100 * gain11) +
                "; per seed none/p1f0/p1f1" + per_seed + fmt("; %.0f s", secs)};
}

Outcome discrete_faster() {
    ExperimentConfig base = default_experiment_config();
    base.generator.num_sessions = 40;
    base.generator.feature_dim = 64;
    base.training.epochs = 3;
    base.training.dev_sessions = 5;
    resolve_derived(base);
    double seconds[2] = {0, 0};
    // Alternate the two cells and keep each one's best time to damp scheduler noise.
    for (int rep = 0; rep < 3; ++rep) {
        for (int i = 0; i < 2; ++i) {
            ExperimentConfig cfg = base;
            cfg.model.input_kind = i == 0 ? InputKind::DiscreteTokens : InputKind::ContinuousFeatures;
            const double s = run_training(cfg, RunOptions{}).timing["train_seconds"].get<double>();
            seconds[i] = rep == 0 ? s : std::min(seconds[i], s);
        }
    }
    const double ratio = seconds[0] / seconds[1];
    return {ratio <= 0.7, fmt("discrete %.3f s", seconds[0]) + fmt(", continuous %.3f s", seconds[1]) +
                              fmt(", ratio %.3f (need <= 0.7)", ratio)};
}

// Independently coded edit distance: lexicographic (errors, indels) minimum by
// a single scaled-cost DP, counts recovered arithmetically.
EditCounts oracle_counts(const std::vector<std::string>& r, const std::vector<std::string>& h) {
    const long E = 1000;
    std::vector<long> prev(h.size() + 1), cur(h.size() + 1);
    for (std::size_t j = 0; j <= h.size(); ++j) {
        prev[j] = static_cast<long>(j) * (E + 1);
    }
    for (std::size_t i = 1; i <= r.size(); ++i) {
        cur[0] = static_cast<long>(i) * (E + 1);
        for (std::size_t j = 1; j <= h.size(); ++j) {
            cur[j] = std::min({prev[j - 1] + (r[i - 1] == h[j - 1] ? 0 : E), prev[j] + E + 1, cur[j - 1] + E + 1});
        }
        std::swap(prev, cur);
    }
    const long total = prev[h.size()], errors = total / E, indels = total % E;
    const long diff = static_cast<long>(r.size()) - static_cast<long>(h.size());
    EditCounts c;
    c.ref_len = r.size();
    c.del = static_cast<std::size_t>((indels + diff) / 2);
    c.ins = static_cast<std::size_t>((indels - diff) / 2);
    c.sub = static_cast<std::size_t>(errors - indels);
    return c;
}

Outcome wer_oracle() {
    std::mt19937_64 rng(11);
    const std::vector<std::string> alphabet = {"a", "b", "c", "d", "e"};
    std::size_t mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<std::string> r(1 + rng() % 10), h(rng() % 11);
        for (auto& w : r) {
            w = alphabet[rng() % alphabet.size()];
        }
        for (auto& w : h) {
            w = alphabet[rng() % alphabet.size()];
        }
        const EditCounts a = align_words(r, h), b = oracle_counts(r, h);
        if (a.sub != b.sub || a.del != b.del || a.ins != b.ins || error_rate(a) != error_rate(b)) {
            ++mismatches;
        }
    }
    const std::vector<std::string> ref = split_words("a b c"), hyp = split_words("a x c d");
    const double hand = error_rate(align_words(ref, hyp));
    return {mismatches == 0 && hand == 2.0 / 3.0,
            std::to_string(mismatches) + " mismatches in 1000 pairs, hand case " + fmt("%.6f", hand)};
}

Outcome mapsswe_check() {
    const std::vector<double> a = {2, 0, 2, 0}, b = {0, 0, 0, 0};
    const MapssweResult r = mapsswe(a, b, 0.05);
    const MapssweResult s = mapsswe(b, a, 0.05);
    bool guards = true;
    for (const auto& [x, y] : {std::pair<std::vector<double>, std::vector<double>>{{1, 2, 3}, {0, 1, 2}},
                               {{1}, {0}}, {{1, 2}, {1, 2}}}) {
        try {
            mapsswe(x, y, 0.05);
            guards = false;
        } catch (const DataError&) {
        }
    }
    const bool ok = std::abs(r.w - 1.7321) <= 1e-3 && std::abs(r.p - 0.0833) <= 1e-3 && !r.significant &&
                    s.w == -r.w && s.p == r.p && guards;
    return {ok, fmt("W = %.4f", r.w) + fmt(", p = %.4f", r.p) + (r.significant ? ", significant" : ", not significant") +
                    fmt("; swapped W = %.4f", s.w) + (guards ? "; guards hold" : "; guard missing")};
}

Outcome quantizer_check() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::size_t increases = 0;
    for (int i = 0; i < 50; ++i) {
        const std::size_t N = 50 + rng() % 200, dim = 1 + rng() % 6, K = 1 + rng() % 10;
        std::vector<double> data(N * dim);
        for (auto& v : data) {
            v = nd(rng) * (1 + static_cast<double>(rng() % 3));
        }
        const Codebook cb = train_codebook(FrameView(data, N, dim), {K, 50, static_cast<std::uint64_t>(i)});
        for (std::size_t k = 1; k < cb.distortion_history.size(); ++k) {
            if (cb.distortion_history[k] > cb.distortion_history[k - 1]) {
                ++increases;
            }
        }
    }
    double lo = 1, hi = 0;
    for (int i = 0; i < 50; ++i) {
        std::vector<int> labels(200), tokens(200);
        for (std::size_t j = 0; j < 200; ++j) {
            labels[j] = static_cast<int>(rng() % 5);
            tokens[j] = static_cast<int>(rng() % 7);
        }
        labels[0] = 0;
        labels[1] = 1;
        const double v = pnmi(labels, tokens);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    // Deterministic label → token maps (injective, with unused tokens) give exactly 1.
    double det_err = 0;
    for (int i = 0; i < 10; ++i) {
        std::vector<int> perm = {3, 9, 0, 5, 7, 1};
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<int> labels(300), tokens(300);
        for (std::size_t j = 0; j < 300; ++j) {
            labels[j] = static_cast<int>(rng() % 6);
            tokens[j] = perm[static_cast<std::size_t>(labels[j])];
        }
        det_err = std::max(det_err, std::abs(pnmi(labels, tokens) - 1.0));
    }
    return {increases == 0 && lo >= 0 && hi <= 1 && det_err <= 1e-12,
            std::to_string(increases) + " distortion increases; random PNMI in " + fmt("[%.4f, ", lo) +
                fmt("%.4f]", hi) + fmt("; deterministic |PNMI - 1| = %.3g", det_err)};
}

Outcome determinism() {
    ExperimentConfig cfg = small_pipeline();
    cfg.fusion.mode = FusionMode::EncoderConcat;
    cfg.fusion.preceding = 1;
    cfg.fusion.future = 1;
    const fs::path root = fs::temp_directory_path() / "ctxducer_acceptance_determinism";
    fs::remove_all(root);
    run_training(cfg, RunOptions{root / "a", std::nullopt, 0, 1});
    run_training(cfg, RunOptions{root / "b", std::nullopt, 0, 1});
    std::size_t differing = 0, compared = 0;
    for (const char* f : {kReportFile, kModelFile, kStateFile, kCodebookFile, kDevHypFile, kDevScoreFile, kConfigFile}) {
        ++compared;
        const std::string x = slurp(root / "a" / f), y = slurp(root / "b" / f);
        if (x.empty() || x != y) {
            ++differing;
        }
    }
    fs::remove_all(root);
    return {differing == 0, std::to_string(compared - differing) + "/" + std::to_string(compared) +
                                " artifacts byte-identical"};
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"transducer loss equals alignment enumeration", loss_oracle},
        {"gradient audits", gradient_audits},
        {"pruned band exactness", band_exactness},
        {"context degeneracy", context_degeneracy},
        {"compact module", compact_module},
        {"context helps (trend)", context_helps},
        {"discrete input trains faster (trend)", discrete_faster},
        {"word error rate oracle", wer_oracle},
        {"matched-pairs significance test", mapsswe_check},
        {"quantizer", quantizer_check},
        {"determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
