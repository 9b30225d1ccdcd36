#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "ctxducer/augment/augment.hpp"
#include "ctxducer/context/fusion_config.hpp"
#include "ctxducer/corpus/corpus.hpp"
#include "ctxducer/model/model.hpp"
#include "ctxducer/quantizer/codebook.hpp"

namespace ctxducer {

inline constexpr const char* kCodeVersion = "ctxducer 0.1.0";

enum class OptimizerKind { Adam, Sgd };

struct TrainingConfig {
    OptimizerKind optimizer = OptimizerKind::Adam;
    double learning_rate = 0.0002;
    std::size_t batch_size = 1;  // utterances per optimizer step
    std::size_t epochs = 30;
    std::uint64_t seed = 1;
    std::size_t dev_sessions = 10;  // taken from the end of the corpus
    std::size_t band = 4;           // pruning half-width; 0 = exact loss

    void validate() const;
};

struct PathsConfig {
    std::string corpus;    // manifest to load instead of generating
    std::string codebook;  // codebook to load instead of training
};

// Everything a run depends on. Vocabulary size, codebook size and input
// feature dim are derived from the generator/quantizer sections.
struct ExperimentConfig {
    GeneratorConfig generator;
    KMeansOptions quantizer;
    ModelConfig model;
    FusionConfig fusion;
    AugmentConfig augment;
    TrainingConfig training;
    PathsConfig paths;

    void validate() const;
};

// Fills the derived model fields (vocab_classes, codebook_size, feature_dim).
void resolve_derived(ExperimentConfig& cfg);

// Desk defaults with the model sized for the generator's vocabulary.
ExperimentConfig default_experiment_config();

// Missing keys keep their defaults; unknown keys are a ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json load_json(const std::filesystem::path& path);

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

// Worker count from CTXDUCER_THREADS (default 1).
std::size_t worker_threads();

} // namespace ctxducer
