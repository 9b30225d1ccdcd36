#include "ctxducer/harness/training.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <thread>

#include "ctxducer/errors.hpp"
#include "ctxducer/loss/rnnt.hpp"
#include "ctxducer/numerics/ops.hpp"
#include "ctxducer/rng.hpp"

namespace ctxducer {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kModelInitStream = 0x30de1;
constexpr std::uint64_t kAugmentStream = 0xa11;
constexpr std::uint64_t kReinitStream = 0xf17e;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

ModelConfig model_config_for(const ExperimentConfig& cfg, const Codebook* cb) {
    ModelConfig mc = cfg.model;
    if (cb) {
        mc.codebook_size = cb->K;
    }
    return mc;
}

json provenance(const ExperimentConfig& cfg) {
    return {{"code_version", kCodeVersion}, {"seed", cfg.training.seed}, {"config", config_to_json(cfg)}};
}

json counts_json(const EvalReport& r) {
    const EditCounts t = r.totals();
    return {{"wer", r.wer()},      {"errors", t.errors()}, {"sub", t.sub},
            {"del", t.del},        {"ins", t.ins},         {"ref_len", t.ref_len},
            {"utterances", r.rows.size()}};
}

std::size_t utterance_count(const Corpus& c) {
    std::size_t n = 0;
    for (const auto& s : c) {
        n += s.utterances.size();
    }
    return n;
}

} // namespace

Dataset prepare_dataset(const ExperimentConfig& cfg, const Codebook* fixed_codebook) {
    Corpus corpus = cfg.paths.corpus.empty() ? generate(cfg.generator) : read_manifest(cfg.paths.corpus, true);
    const std::size_t dev_n = cfg.training.dev_sessions;
    if (dev_n >= corpus.size()) {
        throw ConfigError("dev_sessions (" + std::to_string(dev_n) + ") leaves no training sessions out of " +
                          std::to_string(corpus.size()));
    }
    Dataset d;
    d.train.assign(corpus.begin(), corpus.end() - static_cast<long>(dev_n));
    d.dev.assign(corpus.end() - static_cast<long>(dev_n), corpus.end());
    d.vocab = Vocabulary::make(cfg.generator.phone_count, cfg.generator.homophones);
    if (cfg.model.input_kind != InputKind::DiscreteTokens) {
        return d;
    }
    if (fixed_codebook) {
        d.codebook = *fixed_codebook;
    } else if (!cfg.paths.codebook.empty()) {
        d.codebook = load_codebook(cfg.paths.codebook);
    } else {
        const StackedFrames frames = stack_frames(d.train);
        d.codebook = train_codebook(FrameView(frames.values, frames.rows(), frames.dim), cfg.quantizer);
    }
    for (Corpus* c : {&d.train, &d.dev}) {
        for (auto& s : *c) {
            if (!s.utterances.empty() && s.utterances.front().has_features()) {
                attach_tokens(s, *d.codebook);
            }
        }
    }
    const StackedFrames frames = stack_frames(d.train);
    if (frames.rows() > 0 && frames.labels.size() == frames.rows()) {
        const auto tokens = quantize(FrameView(frames.values, frames.rows(), frames.dim), *d.codebook);
        try {
            d.codebook_pnmi = pnmi(frames.labels, tokens);
        } catch (const DataError&) {
            d.codebook_pnmi = 0.0;
        }
    }
    return d;
}

std::vector<int> label_ids(const Utterance& u, const Vocabulary& vocab) { return vocab.encode(u.transcript); }

Tensor utterance_loss(const TransducerModel& model, const Session& session, std::size_t pos, const Vocabulary& vocab,
                      std::size_t band, const AugmentConfig* augment, std::uint64_t augment_seed) {
    EncodeOptions opts;
    opts.augment = augment;
    opts.augment_seed = augment_seed;
    EncoderOutput enc = encode_in_context(model, session, pos, opts);
    const std::vector<int> labels = label_ids(session.utterances[pos], vocab);
    Tensor logits = model.joint_lattice(enc.h, model.predict_all(labels));
    return rnnt_loss(logits, labels, band == 0 ? kFullBand : band);
}

Trainer::Trainer(TransducerModel& model, const TrainingConfig& training, const AugmentConfig& augment)
    : model_(model), training_(training), augment_(augment), optimizer_(make_optimizer(training)) {
    training_.validate();
    augment_.validate();
}

void Trainer::run(const Corpus& train, const Vocabulary& vocab, std::size_t until_epoch,
                  const std::function<void(const TrainProgress&)>& on_epoch) {
    Parameters& params = model_.parameters();
    const AugmentConfig* aug = augment_.enabled ? &augment_ : nullptr;
    const double inv_batch = 1.0 / static_cast<double>(training_.batch_size);
    for (std::size_t epoch = progress_.epoch; epoch < until_epoch; ++epoch) {
        const auto t0 = Clock::now();
        params.zero_grad();
        std::size_t pending = 0, count = 0;
        double total = 0.0;
        for (std::size_t si = 0; si < train.size(); ++si) {
            const Session& s = train[si];
            for (std::size_t pos = 0; pos < s.utterances.size(); ++pos) {
                const std::uint64_t seed = derive_seed(training_.seed, {kAugmentStream, epoch, si, pos});
                Tensor loss = utterance_loss(model_, s, pos, vocab, training_.band, aug, seed);
                const double value = loss.item();
                if (!std::isfinite(value)) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", utterance " +
                                       s.utterances[pos].utterance_id);
                }
                backward(training_.batch_size == 1 ? loss : scale(loss, inv_batch));
                progress_.step_losses.push_back(value);
                total += value;
                ++count;
                if (++pending == training_.batch_size) {
                    optimizer_->step(params);
                    params.zero_grad();
                    pending = 0;
                }
            }
        }
        if (pending > 0) {
            optimizer_->step(params);
            params.zero_grad();
        }
        if (count == 0) {
            throw DataError("training corpus has no utterances");
        }
        progress_.epoch_losses.push_back(total / static_cast<double>(count));
        progress_.epoch = epoch + 1;
        train_seconds_ += seconds_since(t0);
        if (on_epoch) {
            on_epoch(progress_);
        }
    }
}

void Trainer::save_state(const fs::path& path) const {
    std::vector<NamedTensor> tensors;
    for (const auto& e : model_.parameters().entries()) {
        tensors.push_back(e);
    }
    for (auto& e : optimizer_->state()) {
        tensors.push_back(std::move(e));
    }
    tensors.emplace_back("trainer.epoch", Tensor::scalar(static_cast<double>(progress_.epoch)));
    if (!progress_.epoch_losses.empty()) {
        tensors.emplace_back("trainer.epoch_losses",
                             Tensor::from_values({progress_.epoch_losses.size()}, progress_.epoch_losses));
    }
    if (!progress_.step_losses.empty()) {
        tensors.emplace_back("trainer.step_losses",
                             Tensor::from_values({progress_.step_losses.size()}, progress_.step_losses));
    }
    save_checkpoint(path, tensors);
}

void Trainer::load_state(const fs::path& path) {
    std::vector<NamedTensor> params, optim;
    TrainProgress progress;
    for (auto& [name, t] : load_checkpoint(path)) {
        if (name.rfind("adam.", 0) == 0) {
            optim.emplace_back(name, t);
        } else if (name == "trainer.epoch") {
            progress.epoch = static_cast<std::size_t>(t.item());
        } else if (name == "trainer.epoch_losses") {
            progress.epoch_losses.assign(t.values().begin(), t.values().end());
        } else if (name == "trainer.step_losses") {
            progress.step_losses.assign(t.values().begin(), t.values().end());
        } else {
            params.emplace_back(name, t);
        }
    }
    load_parameters(model_, params);
    optimizer_->load_state(optim);
    progress_ = std::move(progress);
}

void load_parameters(TransducerModel& model, const std::vector<NamedTensor>& tensors, bool allow_output_mismatch) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : tensors) {
        by_name[name] = &t;
    }
    Parameters& params = model.parameters();
    for (const auto& [name, t] : tensors) {
        if (!params.contains(name)) {
            throw FormatError("checkpoint tensor '" + name + "' does not exist in this model");
        }
    }
    for (auto& [name, p] : params.entries()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw FormatError("checkpoint lacks tensor '" + name + "'");
        }
        const Tensor& src = *it->second;
        if (src.shape() != p.shape()) {
            if (allow_output_mismatch && name == TransducerModel::kOutputWeight) {
                continue;
            }
            throw DimensionError("incompatible shapes for '" + name + "': checkpoint " + shape_str(src.shape()) +
                                 ", model " + shape_str(p.shape()));
        }
        auto dst = p.mutable_values();
        std::copy(src.values().begin(), src.values().end(), dst.begin());
    }
    params.bump_version();
}

DecodeResult decode_corpus(const TransducerModel& model, const Corpus& corpus, const Vocabulary& vocab,
                           std::size_t threads) {
    const auto t0 = Clock::now();
    std::vector<std::vector<Hypothesis>> per_session(corpus.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(std::max<std::size_t>(threads, 1));
    auto worker = [&](std::size_t w) {
        try {
            for (std::size_t si = next++; si < corpus.size(); si = next++) {
                const Session& s = corpus[si];
                ContextCache cache;
                for (std::size_t pos = 0; pos < s.utterances.size(); ++pos) {
                    const auto ids = greedy_decode(model, s, pos, &cache);
                    per_session[si].push_back({s.utterances[pos].utterance_id, vocab.decode(ids)});
                }
            }
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (threads <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w) {
            pool.emplace_back(worker, w);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    DecodeResult r;
    for (std::size_t si = 0; si < corpus.size(); ++si) {
        for (auto& h : per_session[si]) {
            r.hyps.push_back(std::move(h));
        }
        for (const auto& u : corpus[si].utterances) {
            r.frames += u.num_frames();
        }
    }
    r.seconds = seconds_since(t0);
    return r;
}

namespace {

RunResult train_and_report(const ExperimentConfig& cfg, const Dataset& data, TransducerModel& model,
                           const RunOptions& opts, json extra) {
    Trainer trainer(model, cfg.training, cfg.augment);
    if (opts.resume) {
        trainer.load_state(*opts.resume);
    }
    const bool write = !opts.out_dir.empty();
    if (write) {
        fs::create_directories(opts.out_dir);
        save_json(opts.out_dir / kConfigFile, config_to_json(cfg));
        if (data.codebook) {
            save_codebook(*data.codebook, opts.out_dir / kCodebookFile);
        }
    }
    const std::size_t until =
        opts.stop_after_epoch ? std::min(opts.stop_after_epoch, cfg.training.epochs) : cfg.training.epochs;
    try {
        trainer.run(data.train, data.vocab, until, [&](const TrainProgress&) {
            if (write) {
                trainer.save_state(opts.out_dir / kStateFile);
            }
        });
    } catch (const NumericError&) {
        if (write) {
            trainer.save_state(opts.out_dir / "divergence.ckpt");
        }
        throw;
    }
    if (write) {
        save_checkpoint(opts.out_dir / kModelFile, model.parameters().entries());
    }

    const DecodeResult dec = decode_corpus(model, data.dev, data.vocab, opts.threads);
    RunResult result;
    result.dev_score = score(data.dev, dec.hyps);
    result.dev_wer = result.dev_score.wer();

    const TrainProgress& prog = trainer.progress();
    json report = provenance(cfg);
    report["parameter_count"] = model.parameters().scalar_count();
    report["train"] = {{"sessions", data.train.size()},
                       {"utterances", utterance_count(data.train)},
                       {"epochs_completed", prog.epoch},
                       {"steps", prog.step_losses.size()},
                       {"epoch_losses", prog.epoch_losses}};
    if (data.codebook) {
        report["codebook"] = {{"k", data.codebook->K},
                              {"final_distortion", data.codebook->final_distortion},
                              {"pnmi", data.codebook_pnmi}};
    }
    report["dev"] = counts_json(result.dev_score);
    for (auto& [k, v] : extra.items()) {
        report[k] = v;
    }
    result.report = report;

    json timing = provenance(cfg);
    timing["threads"] = opts.threads;
    timing["train_seconds"] = trainer.train_seconds();
    timing["decode_seconds"] = dec.seconds;
    timing["decode_frames"] = dec.frames;
    timing["decode_frames_per_second"] = dec.seconds > 0 ? static_cast<double>(dec.frames) / dec.seconds : 0.0;
    result.timing = timing;

    if (write) {
        save_json(opts.out_dir / kReportFile, report);
        save_json(opts.out_dir / kTimingFile, timing);
        json hyp = hypotheses_to_json(dec.hyps);
        hyp.update(provenance(cfg));
        save_json(opts.out_dir / kDevHypFile, hyp);
        json sc = report_to_json(result.dev_score);
        sc.update(provenance(cfg));
        save_json(opts.out_dir / kDevScoreFile, sc);
    }
    return result;
}

} // namespace

RunResult run_training(const ExperimentConfig& cfg, const RunOptions& opts) {
    return run_training(cfg, prepare_dataset(cfg), opts);
}

RunResult run_training(const ExperimentConfig& cfg, const Dataset& data, const RunOptions& opts) {
    cfg.validate();
    TransducerModel model(model_config_for(cfg, data.codebook ? &*data.codebook : nullptr), cfg.fusion,
                          derive_seed(cfg.training.seed, {kModelInitStream}));
    return train_and_report(cfg, data, model, opts, json::object());
}

RunResult run_finetune(const ExperimentConfig& cfg, const fs::path& init_ckpt, bool reinit_output,
                       const RunOptions& opts) {
    cfg.validate();
    std::optional<Codebook> cb;
    if (cfg.model.input_kind == InputKind::DiscreteTokens) {
        cb = load_codebook(cfg.paths.codebook.empty() ? init_ckpt.parent_path() / kCodebookFile
                                                      : fs::path(cfg.paths.codebook));
    }
    const Dataset data = prepare_dataset(cfg, cb ? &*cb : nullptr);
    TransducerModel model(model_config_for(cfg, cb ? &*cb : nullptr), cfg.fusion,
                          derive_seed(cfg.training.seed, {kModelInitStream}));
    const auto tensors = load_checkpoint(init_ckpt);
    load_parameters(model, tensors, reinit_output);

    json extra;
    extra["finetune"] = {{"init_checkpoint", init_ckpt.filename().string()}, {"reinit_output", reinit_output}};
    bool output_loaded = true;
    for (const auto& [name, t] : tensors) {
        if (name == TransducerModel::kOutputWeight) {
            output_loaded = t.shape() == model.parameters().get(name).shape();
        }
    }
    if (output_loaded) {
        const DecodeResult zero_shot = decode_corpus(model, data.dev, data.vocab, opts.threads);
        extra["finetune"]["zero_shot_dev"] = counts_json(score(data.dev, zero_shot.hyps));
    }
    if (reinit_output) {
        model.reinit_output(derive_seed(cfg.training.seed, {kReinitStream}));
    }
    return train_and_report(cfg, data, model, opts, extra);
}

LoadedModel load_run_model(const fs::path& ckpt) {
    const fs::path dir = ckpt.parent_path();
    LoadedModel lm;
    lm.config = load_config(dir / kConfigFile);
    if (lm.config.model.input_kind == InputKind::DiscreteTokens) {
        const fs::path cb = dir / kCodebookFile;
        if (fs::exists(cb)) {
            lm.codebook = load_codebook(cb);
        } else if (!lm.config.paths.codebook.empty()) {
            lm.codebook = load_codebook(lm.config.paths.codebook);
        }
    }
    lm.vocab = Vocabulary::make(lm.config.generator.phone_count, lm.config.generator.homophones);
    lm.model = std::make_unique<TransducerModel>(model_config_for(lm.config, lm.codebook ? &*lm.codebook : nullptr),
                                                 lm.config.fusion,
                                                 derive_seed(lm.config.training.seed, {kModelInitStream}));
    load_parameters(*lm.model, load_checkpoint(ckpt));
    return lm;
}

} // namespace ctxducer
