#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "ctxducer/errors.hpp"
#include "ctxducer/harness/matrix.hpp"
#include "ctxducer/harness/optimizer.hpp"
#include "ctxducer/harness/training.hpp"

using namespace ctxducer;
namespace fs = std::filesystem;

namespace {

ExperimentConfig toy_config() {
    ExperimentConfig cfg = default_experiment_config();
    cfg.generator.num_sessions = 12;
    cfg.generator.utterances_per_session = 3;
    cfg.generator.feature_dim = 8;
    cfg.quantizer.K = 16;
    cfg.quantizer.max_iters = 8;
    cfg.model.token_embed_dim = 8;
    cfg.model.model_dim = 16;
    cfg.model.heads = 2;
    cfg.model.ff_dim = 16;
    cfg.model.predictor_embed_dim = 8;
    cfg.model.predictor_dim = 16;
    cfg.model.joint_dim = 16;
    cfg.training.epochs = 3;
    cfg.training.learning_rate = 0.003;
    cfg.training.dev_sessions = 2;
    resolve_derived(cfg);
    return cfg;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ctxducer_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class EnvGuard {
public:
    explicit EnvGuard(const char* name) : name_(name) {
        if (const char* v = std::getenv(name)) {
            saved_ = v;
        }
    }
    ~EnvGuard() {
        if (saved_) {
            setenv(name_, saved_->c_str(), 1);
        } else {
            unsetenv(name_);
        }
    }

private:
    const char* name_;
    std::optional<std::string> saved_;
};

} // namespace

TEST(Config, UnknownKeysAreRejected) {
    nlohmann::json j = config_to_json(toy_config());
    j["model"]["model_dimension"] = 3;
    try {
        config_from_json(j);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("model.model_dimension"), std::string::npos);
    }
    EXPECT_THROW(config_from_json({{"trainer", nlohmann::json::object()}}), ConfigError);
    EXPECT_THROW(config_from_json({{"training", {{"epochs", "many"}}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"fusion", {{"mode", "none"}, {"preceding", 1}}}}), ConfigError);
}

TEST(Config, JsonRoundTrip) {
    const ExperimentConfig cfg = toy_config();
    const nlohmann::json j = config_to_json(cfg);
    EXPECT_EQ(config_to_json(config_from_json(j)), j);
    // Missing keys keep their defaults.
    EXPECT_EQ(config_to_json(config_from_json(nlohmann::json::object())), config_to_json(default_experiment_config()));
}

TEST(Config, WorkerThreadsFromEnvironment) {
    EnvGuard guard("CTXDUCER_THREADS");
    unsetenv("CTXDUCER_THREADS");
    EXPECT_EQ(worker_threads(), 1u);
    setenv("CTXDUCER_THREADS", "3", 1);
    EXPECT_EQ(worker_threads(), 3u);
    setenv("CTXDUCER_THREADS", "0", 1);
    EXPECT_THROW(worker_threads(), ConfigError);
    setenv("CTXDUCER_THREADS", "2x", 1);
    EXPECT_THROW(worker_threads(), ConfigError);
}

TEST(Optimizer, FirstStepsMatchHandComputation) {
    Parameters p;
    Tensor& w = p.add("w", Tensor::from_values({2}, {1.0, -2.0}, true));
    const std::vector<double> g = {0.5, -3.0};
    Adam adam(0.1);
    std::copy(g.begin(), g.end(), w.mutable_grad().begin());
    adam.step(p);
    // Bias-corrected first step is lr · g / (|g| + eps).
    EXPECT_NEAR(w.at(0), 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
    EXPECT_NEAR(w.at(1), -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
    const std::uint64_t v = p.version();
    EXPECT_GT(v, 0u);

    // Second step with the same gradient: m̂ = g, v̂ = g², so the step repeats.
    std::copy(g.begin(), g.end(), w.mutable_grad().begin());
    adam.step(p);
    EXPECT_NEAR(w.at(0), 1.0 - 2 * 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);

    // State round trip reproduces the next update.
    Parameters q = p.clone();
    Adam restored(0.1);
    restored.load_state(adam.state());
    std::copy(g.begin(), g.end(), w.mutable_grad().begin());
    std::copy(g.begin(), g.end(), q.get("w").mutable_grad().begin());
    adam.step(p);
    restored.step(q);
    EXPECT_EQ(p.get("w").at(0), q.get("w").at(0));
    EXPECT_EQ(p.get("w").at(1), q.get("w").at(1));

    Parameters s;
    Tensor& x = s.add("x", Tensor::from_values({1}, {2.0}, true));
    x.mutable_grad()[0] = 4.0;
    Sgd(0.25).step(s);
    EXPECT_DOUBLE_EQ(x.at(0), 1.0);
}

TEST(Training, LossDecreasesOverFirstEpochs) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        ExperimentConfig cfg = toy_config();
        cfg.generator.seed = seed;
        cfg.training.seed = seed;
        const RunResult r = run_training(cfg, RunOptions{});
        const auto losses = r.report["train"]["epoch_losses"].get<std::vector<double>>();
        ASSERT_EQ(losses.size(), 3u);
        EXPECT_LT(losses[1], losses[0]) << "seed " << seed;
        EXPECT_LT(losses[2], losses[1]) << "seed " << seed;
        EXPECT_GE(r.dev_wer, 0.0);
    }
}

TEST(Training, EmptyScopeEncoderConcatEqualsBaselineStepByStep) {
    const ExperimentConfig cfg = toy_config();
    const Dataset data = prepare_dataset(cfg);
    std::vector<std::vector<double>> steps;
    for (FusionMode mode : {FusionMode::None, FusionMode::EncoderConcat, FusionMode::CompactPool}) {
        FusionConfig f;
        f.mode = mode;
        TransducerModel model(cfg.model, f, 42);
        Trainer trainer(model, cfg.training, cfg.augment);
        trainer.run(data.train, data.vocab, 2);
        steps.push_back(trainer.progress().step_losses);
    }
    ASSERT_FALSE(steps[0].empty());
    EXPECT_EQ(steps[1], steps[0]);
    EXPECT_EQ(steps[2], steps[0]);
}

TEST(Training, ResumeReproducesUninterruptedRun) {
    ExperimentConfig cfg = toy_config();
    cfg.fusion.mode = FusionMode::EncoderConcat;
    cfg.fusion.preceding = 1;
    const fs::path full = scratch("full"), part = scratch("part");
    const RunResult a = run_training(cfg, RunOptions{full, std::nullopt, 0, 1});

    RunOptions first{part, std::nullopt, 1, 1};
    run_training(cfg, first);
    const fs::path saved = scratch("saved_state.ckpt");
    fs::copy_file(part / kStateFile, saved);
    const RunResult b = run_training(cfg, RunOptions{part, saved, 0, 1});

    EXPECT_EQ(a.report, b.report);
    EXPECT_EQ(slurp(full / kModelFile), slurp(part / kModelFile));
    fs::remove_all(full);
    fs::remove_all(part);
    fs::remove(saved);
}

TEST(Training, RunsAreDeterministicAndDecodeThreadsAgree) {
    const ExperimentConfig cfg = toy_config();
    const fs::path d1 = scratch("det1"), d2 = scratch("det2");
    const RunResult a = run_training(cfg, RunOptions{d1, std::nullopt, 0, 1});
    const RunResult b = run_training(cfg, RunOptions{d2, std::nullopt, 0, 3});
    EXPECT_EQ(a.report, b.report);
    for (const char* f : {kModelFile, kReportFile, kDevHypFile, kDevScoreFile, kConfigFile, kCodebookFile}) {
        EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
    }
    EXPECT_EQ(a.report["code_version"], kCodeVersion);
    EXPECT_EQ(a.report["config"], config_to_json(cfg));

    const LoadedModel lm = load_run_model(d1 / kModelFile);
    const Dataset data = prepare_dataset(cfg);
    const DecodeResult one = decode_corpus(*lm.model, data.dev, data.vocab, 1);
    const DecodeResult many = decode_corpus(*lm.model, data.dev, data.vocab, 4);
    ASSERT_EQ(one.hyps.size(), many.hyps.size());
    for (std::size_t i = 0; i < one.hyps.size(); ++i) {
        EXPECT_EQ(one.hyps[i].utterance_id, many.hyps[i].utterance_id);
        EXPECT_EQ(one.hyps[i].words, many.hyps[i].words);
    }
    EXPECT_EQ(one.frames, many.frames);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST(Checkpoint, IncompatibleShapesAreRejected) {
    ExperimentConfig cfg = toy_config();
    TransducerModel a(cfg.model, {}, 1);
    cfg.model.model_dim = 8;
    TransducerModel b(cfg.model, {}, 1);
    EXPECT_THROW(load_parameters(b, a.parameters().entries()), DimensionError);
    auto missing = a.parameters().entries();
    missing.pop_back();
    TransducerModel c(toy_config().model, {}, 2);
    EXPECT_THROW(load_parameters(c, missing), FormatError);
}

// Pretrain on one acoustic domain, then adapt to another.
TEST(Finetune, ImprovesOnNewDomainAndKeepsScope) {
    ExperimentConfig src = toy_config();
    src.training.epochs = 6;
    const fs::path pre = scratch("pretrain");
    run_training(src, RunOptions{pre, std::nullopt, 0, 1});

    ExperimentConfig dst = src;
    dst.generator.acoustic_seed = 977;
    dst.generator.seed = 5;
    dst.training.epochs = 6;
    const RunResult ft = run_finetune(dst, pre / kModelFile, false, RunOptions{});
    ASSERT_TRUE(ft.report.contains("finetune"));
    const double zero_shot = ft.report["finetune"]["zero_shot_dev"]["wer"].get<double>();
    EXPECT_LT(ft.dev_wer, zero_shot);

    // Reinitialising the output layer changes only that tensor before training starts.
    ExperimentConfig none = dst;
    none.training.epochs = 0;
    const fs::path re = scratch("reinit");
    run_finetune(none, pre / kModelFile, true, RunOptions{re, std::nullopt, 0, 1});
    const auto before = load_checkpoint(pre / kModelFile);
    const auto after = load_checkpoint(re / kModelFile);
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        const auto bv = before[i].second.values();
        const auto av = after[i].second.values();
        const bool same = std::equal(bv.begin(), bv.end(), av.begin(), av.end());
        EXPECT_EQ(same, before[i].first != TransducerModel::kOutputWeight) << before[i].first;
    }
    fs::remove_all(pre);
    fs::remove_all(re);
}

TEST(Matrix, GridRowsEchoConfigAndBaselineMatchesStandalone) {
    nlohmann::json g;
    g["base"] = config_to_json(toy_config());
    g["base"]["training"]["epochs"] = 2;
    g["modes"] = {"none", "enc-concat"};
    g["scopes"] = {{1, 1}};
    g["input_kinds"] = {"discrete", "continuous"};
    const MatrixGrid grid = grid_from_json(g);
    ASSERT_EQ(grid.cells.size(), 4u);
    const nlohmann::json res = run_experiment_matrix(grid, {}, 1);
    ASSERT_EQ(res["rows"].size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& row = res["rows"][i];
        ASSERT_EQ(row["status"], "ok") << row.dump();
        EXPECT_EQ(row["report"]["config"], config_to_json(cell_config(grid.base, grid.cells[i])));
    }
    EXPECT_EQ(res["rows"][0]["name"], grid.cells[0].name());
    ASSERT_EQ(grid.cells[0].mode, FusionMode::None);
    const RunResult alone = run_training(cell_config(grid.base, grid.cells[0]), RunOptions{});
    EXPECT_EQ(res["rows"][0]["report"], alone.report);

    EXPECT_THROW(grid_from_json({{"base", g["base"]}, {"modes", {"sideways"}}}), ConfigError);
}
