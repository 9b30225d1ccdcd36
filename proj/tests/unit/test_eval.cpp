#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ctxducer/errors.hpp"
#include "ctxducer/eval/eval.hpp"
#include "ctxducer/numerics/ops.hpp"

using namespace ctxducer;

namespace {

ModelConfig small_config() {
    ModelConfig m;
    m.vocab_classes = 5;
    m.codebook_size = 6;
    m.token_embed_dim = 4;
    m.model_dim = 8;
    m.heads = 2;
    m.ff_dim = 8;
    m.downsample = {1};
    m.predictor_embed_dim = 3;
    m.predictor_dim = 5;
    m.joint_dim = 6;
    return m;
}

Tensor random_h(std::size_t T, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<double> v(T * 8);
    for (auto& x : v) {
        x = nd(rng);
    }
    return Tensor::from_values({T, 8}, v);
}

std::vector<std::string> random_words(std::mt19937_64& rng, std::size_t max_len) {
    static const std::vector<std::string> alphabet = {"a", "b", "c", "d"};
    std::vector<std::string> w(rng() % (max_len + 1));
    for (auto& x : w) {
        x = alphabet[rng() % alphabet.size()];
    }
    return w;
}

// Independent oracle: one DP over a scaled cost (1000 per error, +1 per
// insertion/deletion) so the minimum is lexicographic in (errors, indels).
EditCounts scaled_cost_oracle(const std::vector<std::string>& r, const std::vector<std::string>& h) {
    const long E = 1000;
    const std::size_t N = r.size(), M = h.size();
    std::vector<std::vector<long>> d(N + 1, std::vector<long>(M + 1));
    for (std::size_t i = 0; i <= N; ++i) {
        d[i][0] = static_cast<long>(i) * (E + 1);
    }
    for (std::size_t j = 0; j <= M; ++j) {
        d[0][j] = static_cast<long>(j) * (E + 1);
    }
    for (std::size_t i = 1; i <= N; ++i) {
        for (std::size_t j = 1; j <= M; ++j) {
            d[i][j] = std::min({d[i - 1][j - 1] + (r[i - 1] == h[j - 1] ? 0 : E), d[i - 1][j] + E + 1,
                                d[i][j - 1] + E + 1});
        }
    }
    const long errors = d[N][M] / E;  // indels < E
    const long indels = d[N][M] % E;
    EditCounts c;
    c.ref_len = N;
    // matches + sub + del = N, matches + sub + ins = M
    const long diff = static_cast<long>(N) - static_cast<long>(M);
    c.del = static_cast<std::size_t>((indels + diff) / 2);
    c.ins = static_cast<std::size_t>((indels - diff) / 2);
    c.sub = static_cast<std::size_t>(errors - indels);
    return c;
}

// Φ(x) = 1/2 + φ(x) Σ x^(2n+1) / (2n+1)!!
double normal_cdf_series(double xd) {
    const long double x = xd;
    long double term = x, sum = x;
    for (int n = 1; n < 400; ++n) {
        term *= x * x / (2 * n + 1);
        sum += term;
    }
    const long double pdf = std::exp(-x * x / 2) / std::sqrt(2 * 3.14159265358979323846264338327950288L);
    return static_cast<double>(0.5L + pdf * sum);
}

} // namespace

TEST(Greedy, ZeroOutputGivesEmptyHypothesis) {
    TransducerModel m(small_config(), {}, 1);
    for (double& v : m.parameters().get(TransducerModel::kOutputWeight).mutable_values()) {
        v = 0.0;
    }
    // All logits tie; ties go to blank.
    EXPECT_TRUE(greedy_search(m, random_h(7, 2)).empty());
}

TEST(Greedy, EmissionsPerFrameAreBounded) {
    TransducerModel m(small_config(), {}, 3);
    for (double& v : m.parameters().get("joint.enc.bias").mutable_values()) {
        v = 100.0;
    }
    Tensor& out = m.parameters().get(TransducerModel::kOutputWeight);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t k = 0; k < 5; ++k) {
            out.mutable_values()[i * 5 + k] = k == 2 ? 1.0 : 0.0;
        }
    }
    for (std::size_t T : {1u, 4u}) {
        for (std::size_t cap : {1u, 3u, 5u}) {
            const auto y = greedy_search(m, random_h(T, T), cap);
            EXPECT_EQ(y.size(), T * cap);
            for (int label : y) {
                EXPECT_EQ(label, 2);
            }
        }
    }
    TransducerModel r(small_config(), {}, 4);
    for (std::uint64_t s = 0; s < 20; ++s) {
        EXPECT_LE(greedy_search(r, random_h(6, s)).size(), 6 * kMaxSymbolsPerFrame);
    }
}

TEST(Greedy, SingleFrameMatchesManualUnroll) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TransducerModel m(small_config(), {}, 10 + seed);
        const Tensor h = random_h(1, seed);
        const Tensor h0 = reshape(h, {8});
        std::vector<int> expected;
        for (std::size_t n = 0; n < kMaxSymbolsPerFrame; ++n) {
            const Tensor logits = m.joint(h0, m.predict(expected));
            const auto v = logits.values();
            const int best = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
            if (best == 0) {
                break;
            }
            expected.push_back(best);
        }
        EXPECT_EQ(greedy_search(m, h), expected);
    }
}

TEST(Wer, HandCases) {
    const std::vector<std::string> ref = {"the", "cat", "sat"};
    const std::vector<std::string> hyp = {"the", "bat"};
    const EditCounts c = align_words(ref, hyp);
    EXPECT_EQ(c.sub, 1u);
    EXPECT_EQ(c.del, 1u);
    EXPECT_EQ(c.ins, 0u);
    EXPECT_NEAR(error_rate(c), 2.0 / 3.0, 1e-15);
    EXPECT_EQ(error_rate(align_words(ref, ref)), 0.0);
    const EditCounts d = align_words(split_words("a b c"), split_words("a x c d"));
    EXPECT_EQ(d.sub, 1u);
    EXPECT_EQ(d.ins, 1u);
    EXPECT_EQ(error_rate(d), 2.0 / 3.0);
    const std::vector<std::string> a = {"a"};
    const std::vector<std::string> none;
    EXPECT_EQ(error_rate(align_words(a, none)), 1.0);
    EXPECT_EQ(align_words(none, a).ins, 1u);
    EXPECT_THROW(error_rate(align_words(none, a)), DataError);
}

TEST(Wer, MatchesScaledCostOracle) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 1000; ++i) {
        const auto r = random_words(rng, 8);
        const auto h = random_words(rng, 8);
        const EditCounts got = align_words(r, h);
        const EditCounts want = scaled_cost_oracle(r, h);
        ASSERT_EQ(got.sub, want.sub) << i;
        ASSERT_EQ(got.del, want.del) << i;
        ASSERT_EQ(got.ins, want.ins) << i;
        ASSERT_EQ(got.ref_len, r.size());
        const EditCounts back = align_words(h, r);
        EXPECT_EQ(back.errors(), got.errors());
        EXPECT_EQ(back.sub, got.sub);
        EXPECT_EQ(back.del, got.ins);
        EXPECT_LE(got.errors(), std::max(r.size(), h.size()));
    }
}

TEST(Wer, ScoreCorpus) {
    Corpus refs(1);
    refs[0].session_id = "s";
    for (int i = 1; i <= 2; ++i) {
        Utterance u;
        u.session_id = "s";
        u.utterance_id = "s-" + std::to_string(i);
        u.index = static_cast<std::size_t>(i);
        u.transcript = {"x", "y"};
        refs[0].utterances.push_back(u);
    }
    const EvalReport r = score(refs, {{"s-2", {"x"}}, {"s-1", {"x", "y"}}});
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_EQ(r.rows[0].utterance_id, "s-1");
    EXPECT_DOUBLE_EQ(r.wer(), 0.25);
    EXPECT_THROW(score(refs, {{"s-1", {"x"}}}), DataError);
    EXPECT_THROW(score(refs, {{"s-1", {}}, {"s-2", {}}, {"s-9", {}}}), DataError);

    const EvalReport back = report_from_json(report_to_json(r));
    ASSERT_EQ(back.rows.size(), 2u);
    EXPECT_EQ(back.rows[1].hyp, r.rows[1].hyp);
    EXPECT_EQ(back.totals().errors(), r.totals().errors());
    const auto hyps = hypotheses_from_json(hypotheses_to_json({{"s-1", {"a", "b"}}}));
    ASSERT_EQ(hyps.size(), 1u);
    EXPECT_EQ(hyps[0].words, (std::vector<std::string>{"a", "b"}));
}

TEST(Words, SplitJoin) {
    EXPECT_EQ(split_words("  a  bc\td "), (std::vector<std::string>{"a", "bc", "d"}));
    EXPECT_TRUE(split_words("   ").empty());
    EXPECT_EQ(join_words({"a", "bc"}), "a bc");
}

TEST(Mapsswe, WorkedExample) {
    const std::vector<double> a = {2, 0, 2, 0}, b = {0, 0, 0, 0};
    const MapssweResult r = mapsswe(a, b);
    EXPECT_EQ(r.n, 4u);
    EXPECT_DOUBLE_EQ(r.mean, 1.0);
    EXPECT_NEAR(r.w, std::sqrt(3.0), 1e-12);
    EXPECT_NEAR(r.w, 1.7321, 5e-5);
    EXPECT_NEAR(r.p, 0.0833, 5e-5);
    EXPECT_FALSE(r.significant);
    EXPECT_TRUE(mapsswe(a, b, 0.1).significant);

    const MapssweResult s = mapsswe(b, a);
    EXPECT_DOUBLE_EQ(s.w, -r.w);
    EXPECT_DOUBLE_EQ(s.p, r.p);
}

TEST(Mapsswe, Degenerate) {
    const std::vector<double> a = {1, 2, 3}, same = {1, 2, 3}, shifted = {2, 3, 4};
    EXPECT_THROW(mapsswe(a, same), DataError);
    EXPECT_THROW(mapsswe(a, shifted), DataError);  // constant difference, s = 0
    const std::vector<double> one = {1}, other = {0};
    EXPECT_THROW(mapsswe(one, other), DataError);
    const std::vector<double> two = {1, 2};
    EXPECT_THROW(mapsswe(a, two), DataError);
    EXPECT_THROW(mapsswe(a, std::vector<double>{0, 5, 1}, 1.5), DataError);
}

TEST(NormalCdf, MatchesSeriesOracle) {
    for (double x = -6.0; x <= 6.0; x += 0.05) {
        EXPECT_NEAR(normal_cdf(x), normal_cdf_series(x), 1e-7) << x;
        EXPECT_NEAR(normal_cdf(x) + normal_cdf(-x), 1.0, 1e-15) << x;
    }
    EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
}
