#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "ctxducer/corpus/corpus.hpp"
#include "ctxducer/errors.hpp"
#include "ctxducer/loss/rnnt.hpp"
#include "ctxducer/model/model.hpp"
#include "ctxducer/numerics/grad_check.hpp"
#include "ctxducer/numerics/ops.hpp"

using namespace ctxducer;

namespace {

ModelConfig micro_config() {
    ModelConfig m;
    m.vocab_classes = 5;
    m.codebook_size = 6;
    m.token_embed_dim = 4;
    m.model_dim = 8;
    m.heads = 2;
    m.ff_dim = 8;
    m.downsample = {1};
    m.blocks_per_stack = 1;
    m.predictor_embed_dim = 3;
    m.context_order = 2;
    m.predictor_dim = 5;
    m.joint_dim = 6;
    return m;
}

Utterance token_utterance(std::vector<int> tokens) {
    Utterance u;
    u.session_id = "s";
    u.utterance_id = "s-1";
    u.tokens = std::move(tokens);
    return u;
}

void fill(Tensor& t, double v) {
    for (auto& x : t.mutable_values()) {
        x = v;
    }
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

} // namespace

TEST(ModelConfig, Validation) {
    ModelConfig m = micro_config();
    m.heads = 3;
    EXPECT_THROW(m.validate(), ConfigError);
    m = micro_config();
    m.downsample = {1, 0};
    EXPECT_THROW(m.validate(), ConfigError);
    m = micro_config();
    m.context_order = 0;
    EXPECT_THROW(m.validate(), ConfigError);
}

TEST(Embedding, LookupAndStrideLaw) {
    TransducerModel model(micro_config(), {}, 1);
    const Tensor e = model.embed_tokens(std::vector<int>{3, 3});
    const Tensor& table = model.parameters().get("input.embed");
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_EQ(e.at(0, j), table.at(3, j));
        EXPECT_EQ(e.at(1, j), table.at(3, j));
    }
    EXPECT_EQ(model.embed_input(token_utterance(std::vector<int>(10, 1))).dim(0), 5u);
    EXPECT_EQ(model.embed_input(token_utterance(std::vector<int>(11, 1))).dim(0), 6u);
    EXPECT_THROW(model.embed_tokens(std::vector<int>{6}), DataError);
}

TEST(Embedding, ContinuousIdentityProjectionPassesFramesThrough) {
    ModelConfig m = micro_config();
    m.input_kind = InputKind::ContinuousFeatures;
    m.feature_dim = 4;
    TransducerModel model(m, {}, 2);
    Tensor& w = model.parameters().get("input.proj.weight");
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            w.mutable_values()[i * 4 + j] = i == j ? 1.0 : 0.0;
        }
    }
    const std::vector<double> feats = {0.5, -1, 2, 3, 1, 1, 1, -7.25, 0, 0, 0, 4};
    const Tensor e = model.embed_features(feats, 3);
    EXPECT_TRUE(std::equal(e.values().begin(), e.values().end(), feats.begin()));
    EXPECT_THROW(model.embed_features(feats, 2), DimensionError);
}

TEST(Encoder, ZeroOutputProjectionsGiveResidualIdentity) {
    ModelConfig m = micro_config();
    m.downsample = {1, 2, 3};
    TransducerModel model(m, {}, 3);
    for (auto& [name, t] : model.parameters().entries()) {
        if (name.find("attn.wo") != std::string::npos || name.find("attn.bo") != std::string::npos ||
            name.find("ff.w2") != std::string::npos || name.find("ff.b2") != std::string::npos) {
            fill(t, 0.0);
        }
    }
    const Tensor x = model.embed_input(token_utterance({1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5}));
    const Tensor h = model.encode(x).h;
    const Tensor expected = add(x, sinusoidal_positions(x.dim(0), 8));
    ASSERT_EQ(h.shape(), expected.shape());
    for (std::size_t i = 0; i < h.numel(); ++i) {
        EXPECT_NEAR(h.at(i), expected.at(i), 1e-12);
    }
}

TEST(Encoder, OutputLengthIsPureFunctionOfInputLength) {
    ModelConfig m = micro_config();
    m.downsample = {1, 2, 4, 2};
    TransducerModel model(m, {}, 4);
    std::mt19937_64 rng(1);
    for (std::size_t T = 1; T <= 13; ++T) {
        std::vector<int> toks(T);
        for (auto& t : toks) {
            t = static_cast<int>(rng() % 6);
        }
        const Tensor x = model.embed_input(token_utterance(toks));
        const EncoderOutput out = model.encode(x);
        EXPECT_EQ(out.h.dim(0), x.dim(0));
        ASSERT_EQ(out.layer_states.size(), 4u);
        for (std::size_t l = 0; l < 4; ++l) {
            EXPECT_EQ(out.layer_states[l].dim(0), TransducerModel::pooled_length(x.dim(0), m.downsample[l]));
        }
    }
}

TEST(Encoder, AttentionRowsSumToOne) {
    TransducerModel model(micro_config(), {}, 5);
    const Tensor x = model.embed_input(token_utterance({1, 2, 3, 4, 5, 0, 2}));
    const EncoderOutput out = model.encode(x, nullptr, true);
    ASSERT_EQ(out.attention.size(), 1u);
    ASSERT_EQ(out.attention[0].size(), 2u);
    for (const auto& a : out.attention[0]) {
        for (std::size_t q = 0; q < a.dim(0); ++q) {
            double s = 0;
            for (std::size_t k = 0; k < a.dim(1); ++k) {
                s += a.at(q, k);
            }
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(Predictor, StatelessInLastContextLabels) {
    TransducerModel model(micro_config(), {}, 6);
    const Tensor a = model.predict(std::vector<int>{1, 4, 2, 3});
    const Tensor b = model.predict(std::vector<int>{3, 3, 2, 3});
    const Tensor c = model.predict(std::vector<int>{2, 3});
    EXPECT_TRUE(bit_equal(a, b));
    EXPECT_TRUE(bit_equal(a, c));
    EXPECT_TRUE(bit_equal(model.predict(std::vector<int>{}), model.predict(std::vector<int>{})));
    EXPECT_THROW(model.predict(std::vector<int>{5}), DataError);
    EXPECT_THROW(model.predict(std::vector<int>{0}), DataError);
    // Rows of predict_all are the per-prefix outputs.
    const std::vector<int> y = {4, 1, 2};
    const Tensor all = model.predict_all(y);
    for (std::size_t u = 0; u <= 3; ++u) {
        const Tensor p = model.predict(std::span<const int>(y).subspan(0, u));
        for (std::size_t j = 0; j < 5; ++j) {
            EXPECT_EQ(all.at(u, j), p.at(j));
        }
    }
}

TEST(Predictor, OrderOneIsAnEmbeddingMap) {
    ModelConfig m = micro_config();
    m.context_order = 1;
    TransducerModel model(m, {}, 7);
    const Tensor& E = model.parameters().get("predictor.embed");
    const Tensor& W = model.parameters().get("predictor.conv.weight");
    const Tensor& b = model.parameters().get("predictor.conv.bias");
    for (int last : {0, 1, 2, 3, 4}) {
        const std::vector<int> prefix = last == 0 ? std::vector<int>{} : std::vector<int>{2, last};
        const Tensor f = model.predict(prefix);
        for (std::size_t j = 0; j < 5; ++j) {
            double acc = b.at(j);
            for (std::size_t k = 0; k < 3; ++k) {
                acc += E.at(static_cast<std::size_t>(last), k) * W.at(k, j);
            }
            EXPECT_NEAR(f.at(j), std::max(acc, 0.0), 1e-12);
        }
    }
}

TEST(Joint, ZeroWeightsGiveUniformPosterior) {
    TransducerModel model(micro_config(), {}, 8);
    for (auto& [name, t] : model.parameters().entries()) {
        if (name.rfind("joint.", 0) == 0) {
            fill(t, 0.0);
        }
    }
    const Tensor logits = model.joint(Tensor::full({8}, 0.3), Tensor::full({5}, -1.0));
    ASSERT_EQ(logits.shape(), (Shape{5}));
    const Tensor p = softmax(logits);
    for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_DOUBLE_EQ(p.at(k), 0.2);
    }
}

TEST(Joint, LatticeMatchesPerCellRecompute) {
    TransducerModel model(micro_config(), {}, 9);
    const Tensor h = model.encode(model.embed_input(token_utterance({1, 2, 3, 4, 5, 1, 2, 3}))).h;
    const std::vector<int> y = {1, 4, 2};
    const Tensor f = model.predict_all(y);
    const Tensor lat = model.joint_lattice(h, f);
    ASSERT_EQ(lat.shape(), (Shape{4, 4, 5}));
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t u = 0; u <= 3; ++u) {
            const Tensor cell = model.joint(reshape(slice(h, 0, t, t + 1), {8}), reshape(slice(f, 0, u, u + 1), {5}));
            for (std::size_t k = 0; k < 5; ++k) {
                EXPECT_NEAR(lat.at((t * 4 + u) * 5 + k), cell.at(k), 1e-12);
            }
        }
    }
}

// Central differences on every parameter of the micro model through the full loss.
TEST(Model, EndToEndGradientsMatchFiniteDifferences) {
    for (const auto& downsample : {std::vector<std::size_t>{1}, std::vector<std::size_t>{1, 2}}) {
        ModelConfig m = micro_config();
        m.downsample = downsample;
        TransducerModel model(m, {}, 10);
        const Utterance utt = token_utterance({0, 1, 5, 2, 3, 3, 4, 1, 0, 2, 5});  // 6 frames after subsampling
        const std::vector<int> y = {2, 4, 1};
        auto loss = [&] {
            const Tensor h = model.encode(model.embed_input(utt)).h;
            return rnnt_loss(model.joint_lattice(h, model.predict_all(y)), y);
        };
        for (auto& [name, t] : model.parameters().entries()) {
            EXPECT_LE(grad_check_leaf(loss, t), 1e-3) << name;
        }
    }
}

TEST(Checkpoint, RoundTripBitExactAndStableOrder) {
    TransducerModel a(micro_config(), {}, 11);
    const auto path = std::filesystem::temp_directory_path() / "ctxducer_model_roundtrip.ckpt";
    save_checkpoint(path, a.parameters().entries());
    const auto back = load_checkpoint(path);
    const auto& entries = a.parameters().entries();
    ASSERT_EQ(back.size(), entries.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].first, entries[i].first);
        EXPECT_EQ(back[i].second.shape(), entries[i].second.shape());
        EXPECT_EQ(0, std::memcmp(back[i].second.values().data(), entries[i].second.values().data(),
                                 entries[i].second.numel() * sizeof(double)));
    }
    TransducerModel b(micro_config(), {}, 11);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        EXPECT_EQ(b.parameters().entries()[i].first, entries[i].first);
        EXPECT_TRUE(bit_equal(b.parameters().entries()[i].second, entries[i].second));
    }
    std::filesystem::resize_file(path, 30);
    EXPECT_THROW(load_checkpoint(path), FormatError);
    std::filesystem::remove(path);
}

TEST(Model, ReinitOutputTouchesOnlyOutputProjection) {
    TransducerModel model(micro_config(), {}, 12);
    const Parameters before = model.parameters().clone();
    model.reinit_output(99);
    for (std::size_t i = 0; i < before.entries().size(); ++i) {
        const auto& [name, t] = model.parameters().entries()[i];
        EXPECT_EQ(bit_equal(t, before.entries()[i].second), name != TransducerModel::kOutputWeight) << name;
    }
}
