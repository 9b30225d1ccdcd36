#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxducer/eval/eval.hpp"
#include "ctxducer/harness/config.hpp"
#include "ctxducer/harness/optimizer.hpp"

namespace ctxducer {

// Train/dev split with tokens attached (discrete input) and the vocabulary.
struct Dataset {
    Corpus train;
    Corpus dev;
    Vocabulary vocab;
    std::optional<Codebook> codebook;
    double codebook_pnmi = 0.0;  // on training frames, when phone labels exist
};

// Generates (or loads) the corpus, splits off the last dev_sessions sessions,
// and trains (or loads, or reuses `fixed_codebook`) the codebook for discrete input.
Dataset prepare_dataset(const ExperimentConfig& cfg, const Codebook* fixed_codebook = nullptr);

// Label ids of an utterance's transcript.
std::vector<int> label_ids(const Utterance& u, const Vocabulary& vocab);

// Negative log-likelihood of one utterance under the model (graph kept for backward).
Tensor utterance_loss(const TransducerModel& model, const Session& session, std::size_t pos,
                      const Vocabulary& vocab, std::size_t band, const AugmentConfig* augment = nullptr,
                      std::uint64_t augment_seed = 0);

struct TrainProgress {
    std::size_t epoch = 0;  // epochs completed
    std::vector<double> epoch_losses;
    std::vector<double> step_losses;  // per utterance
};

// Serialisable trainer: epoch loop over sessions in order, utterances in
// start-time order, batch_size utterances per optimizer step.
class Trainer {
public:
    Trainer(TransducerModel& model, const TrainingConfig& training, const AugmentConfig& augment);

    // Runs epochs until `until_epoch` (exclusive bound on epochs completed).
    // `on_epoch` is called after each epoch.
    void run(const Corpus& train, const Vocabulary& vocab, std::size_t until_epoch,
             const std::function<void(const TrainProgress&)>& on_epoch = {});

    const TrainProgress& progress() const { return progress_; }
    double train_seconds() const { return train_seconds_; }

    // Model parameters, optimizer state and progress in one CTXC file.
    void save_state(const std::filesystem::path& path) const;
    void load_state(const std::filesystem::path& path);

private:
    TransducerModel& model_;
    TrainingConfig training_;
    AugmentConfig augment_;
    std::unique_ptr<Optimizer> optimizer_;
    TrainProgress progress_;
    double train_seconds_ = 0.0;
};

// Copies checkpoint tensors into the model by name. Every model tensor must be
// present with the same shape, except the output projection when
// `allow_output_mismatch` is set (it then keeps its current values).
void load_parameters(TransducerModel& model, const std::vector<NamedTensor>& tensors,
                     bool allow_output_mismatch = false);

struct DecodeResult {
    std::vector<Hypothesis> hyps;
    std::size_t frames = 0;  // input frames decoded
    double seconds = 0.0;
};

// Greedy decoding of every utterance, CTXDUCER_THREADS-style worker count;
// output order is the corpus order regardless of threads.
DecodeResult decode_corpus(const TransducerModel& model, const Corpus& corpus, const Vocabulary& vocab,
                           std::size_t threads = 1);

// What a training run produced. `report` is reproducible bit-for-bit;
// wall-clock figures live in `timing`.
struct RunResult {
    nlohmann::json report;
    nlohmann::json timing;
    double dev_wer = 0.0;
    EvalReport dev_score;
};

struct RunOptions {
    std::filesystem::path out_dir;            // empty: write nothing
    std::optional<std::filesystem::path> resume;  // trainer state to continue from
    std::size_t stop_after_epoch = 0;         // nonzero: stop early (for resume tests)
    std::size_t threads = 1;
};

// Full pipeline: data, model, training, dev decoding and scoring.
RunResult run_training(const ExperimentConfig& cfg, const RunOptions& opts);
// Same, on prepared data (lets several runs share one corpus and codebook).
RunResult run_training(const ExperimentConfig& cfg, const Dataset& data, const RunOptions& opts);

// Loads a pretrained checkpoint (and the codebook saved beside it), optionally
// reinitialises the output projection, and trains on cfg's corpus. The report
// also holds the zero-shot dev score of the unmodified checkpoint.
RunResult run_finetune(const ExperimentConfig& cfg, const std::filesystem::path& init_ckpt, bool reinit_output,
                       const RunOptions& opts);

// File names used inside a run directory.
inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kModelFile = "model.ckpt";
inline constexpr const char* kStateFile = "state.ckpt";
inline constexpr const char* kCodebookFile = "codebook.ctxk";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kTimingFile = "timing.json";
inline constexpr const char* kDevHypFile = "dev_hyp.json";
inline constexpr const char* kDevScoreFile = "dev_score.json";

// Model described by the config.json beside a checkpoint, with its weights.
struct LoadedModel {
    ExperimentConfig config;
    std::unique_ptr<TransducerModel> model;
    std::optional<Codebook> codebook;
    Vocabulary vocab;
};
LoadedModel load_run_model(const std::filesystem::path& ckpt);

} // namespace ctxducer
