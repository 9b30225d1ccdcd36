#include "ctxducer/harness/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "ctxducer/errors.hpp"

namespace ctxducer {

using nlohmann::json;

void TrainingConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw ConfigError("training: learning_rate must be > 0");
    }
    if (batch_size == 0) {
        throw ConfigError("training: batch_size must be >= 1");
    }
}

void ExperimentConfig::validate() const {
    generator.validate();
    if (quantizer.K == 0) {
        throw ConfigError("quantizer: k must be >= 1");
    }
    model.validate();
    fusion.validate();
    augment.validate();
    training.validate();
    if (training.dev_sessions >= generator.num_sessions && paths.corpus.empty()) {
        throw ConfigError("training: dev_sessions must leave at least one training session");
    }
}

void resolve_derived(ExperimentConfig& cfg) {
    cfg.model.vocab_classes = Vocabulary::make(cfg.generator.phone_count, cfg.generator.homophones).num_classes();
    cfg.model.codebook_size = cfg.quantizer.K;
    cfg.model.feature_dim = cfg.generator.feature_dim;
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig cfg;
    resolve_derived(cfg);
    return cfg;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "adam") {
        return OptimizerKind::Adam;
    }
    if (s == "sgd") {
        return OptimizerKind::Sgd;
    }
    throw ConfigError("unknown optimizer: " + s);
}

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) {
            throw ConfigError(name_ + ": expected a JSON object");
        }
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) {
            return;
        }
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(name_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) {
                throw ConfigError("unknown config key: " + (name_.empty() ? k : name_ + "." + k));
            }
        }
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

void read_generator(const json& j, GeneratorConfig& g) {
    Section s(j, "generator");
    s.get("num_sessions", g.num_sessions);
    s.get("utterances_per_session", g.utterances_per_session);
    s.get("phone_count", g.phone_count);
    s.get("feature_dim", g.feature_dim);
    s.get("emission_noise", g.emission_noise);
    s.get("mean_phone_duration", g.mean_phone_duration);
    s.get("context_strength", g.context_strength);
    s.get("seed", g.seed);
    s.get("acoustic_seed", g.acoustic_seed);
    s.get("min_words", g.min_words);
    s.get("max_words", g.max_words);
    s.get("homophones", g.homophones);
    s.finish();
}

void read_quantizer(const json& j, KMeansOptions& q) {
    Section s(j, "quantizer");
    s.get("k", q.K);
    s.get("iters", q.max_iters);
    s.get("seed", q.seed);
    s.finish();
}

void read_model(const json& j, ModelConfig& m) {
    Section s(j, "model");
    std::string kind = to_string(m.input_kind);
    s.get("input_kind", kind);
    m.input_kind = input_kind_from_string(kind);
    s.get("token_embed_dim", m.token_embed_dim);
    s.get("model_dim", m.model_dim);
    s.get("heads", m.heads);
    s.get("ff_dim", m.ff_dim);
    s.get("downsample", m.downsample);
    s.get("blocks_per_stack", m.blocks_per_stack);
    s.get("predictor_embed_dim", m.predictor_embed_dim);
    s.get("context_order", m.context_order);
    s.get("predictor_dim", m.predictor_dim);
    s.get("joint_dim", m.joint_dim);
    s.finish();
}

void read_fusion(const json& j, FusionConfig& f) {
    Section s(j, "fusion");
    std::string mode = to_string(f.mode);
    s.get("mode", mode);
    f.mode = fusion_mode_from_string(mode);
    s.get("preceding", f.preceding);
    s.get("future", f.future);
    s.get("detach_context", f.detach_context);
    s.get("compact_length", f.compact_length);
    s.get("final_layer_context", f.final_layer_context);
    s.finish();
}

void read_augment(const json& j, AugmentConfig& a) {
    Section s(j, "augment");
    s.get("enabled", a.enabled);
    s.get("warp_max_shift", a.warp_max_shift);
    s.get("time_mask_num", a.time_mask_num);
    s.get("time_mask_max_width", a.time_mask_max_width);
    s.get("embed_mask_num", a.embed_mask_num);
    s.get("embed_mask_max_width", a.embed_mask_max_width);
    s.get("noise_sigma", a.noise_sigma);
    s.finish();
}

void read_training(const json& j, TrainingConfig& t) {
    Section s(j, "training");
    std::string opt = to_string(t.optimizer);
    s.get("optimizer", opt);
    t.optimizer = optimizer_from_string(opt);
    s.get("learning_rate", t.learning_rate);
    s.get("batch_size", t.batch_size);
    s.get("epochs", t.epochs);
    s.get("seed", t.seed);
    s.get("dev_sessions", t.dev_sessions);
    s.get("band", t.band);
    s.finish();
}

void read_paths(const json& j, PathsConfig& p) {
    Section s(j, "paths");
    s.get("corpus", p.corpus);
    s.get("codebook", p.codebook);
    s.finish();
}

} // namespace

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    Section top(j, "");
    if (auto* c = top.child("generator")) {
        read_generator(*c, cfg.generator);
    }
    if (auto* c = top.child("quantizer")) {
        read_quantizer(*c, cfg.quantizer);
    }
    if (auto* c = top.child("model")) {
        read_model(*c, cfg.model);
    }
    if (auto* c = top.child("fusion")) {
        read_fusion(*c, cfg.fusion);
    }
    if (auto* c = top.child("augment")) {
        read_augment(*c, cfg.augment);
    }
    if (auto* c = top.child("training")) {
        read_training(*c, cfg.training);
    }
    if (auto* c = top.child("paths")) {
        read_paths(*c, cfg.paths);
    }
    top.finish();
    resolve_derived(cfg);
    cfg.validate();
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    const auto& g = cfg.generator;
    const auto& m = cfg.model;
    const auto& f = cfg.fusion;
    const auto& a = cfg.augment;
    const auto& t = cfg.training;
    json j;
    j["generator"] = {{"num_sessions", g.num_sessions},
                      {"utterances_per_session", g.utterances_per_session},
                      {"phone_count", g.phone_count},
                      {"feature_dim", g.feature_dim},
                      {"emission_noise", g.emission_noise},
                      {"mean_phone_duration", g.mean_phone_duration},
                      {"context_strength", g.context_strength},
                      {"seed", g.seed},
                      {"acoustic_seed", g.acoustic_seed},
                      {"min_words", g.min_words},
                      {"max_words", g.max_words},
                      {"homophones", g.homophones}};
    j["quantizer"] = {{"k", cfg.quantizer.K}, {"iters", cfg.quantizer.max_iters}, {"seed", cfg.quantizer.seed}};
    j["model"] = {{"input_kind", to_string(m.input_kind)},
                  {"token_embed_dim", m.token_embed_dim},
                  {"model_dim", m.model_dim},
                  {"heads", m.heads},
                  {"ff_dim", m.ff_dim},
                  {"downsample", m.downsample},
                  {"blocks_per_stack", m.blocks_per_stack},
                  {"predictor_embed_dim", m.predictor_embed_dim},
                  {"context_order", m.context_order},
                  {"predictor_dim", m.predictor_dim},
                  {"joint_dim", m.joint_dim}};
    j["fusion"] = {{"mode", to_string(f.mode)},
                   {"preceding", f.preceding},
                   {"future", f.future},
                   {"detach_context", f.detach_context},
                   {"compact_length", f.compact_length},
                   {"final_layer_context", f.final_layer_context}};
    j["augment"] = {{"enabled", a.enabled},
                    {"warp_max_shift", a.warp_max_shift},
                    {"time_mask_num", a.time_mask_num},
                    {"time_mask_max_width", a.time_mask_max_width},
                    {"embed_mask_num", a.embed_mask_num},
                    {"embed_mask_max_width", a.embed_mask_max_width},
                    {"noise_sigma", a.noise_sigma}};
    j["training"] = {{"optimizer", to_string(t.optimizer)},
                     {"learning_rate", t.learning_rate},
                     {"batch_size", t.batch_size},
                     {"epochs", t.epochs},
                     {"seed", t.seed},
                     {"dev_sessions", t.dev_sessions},
                     {"band", t.band}};
    j["paths"] = {{"corpus", cfg.paths.corpus}, {"codebook", cfg.paths.codebook}};
    return j;
}

json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) { return config_from_json(load_json(path)); }

void save_json(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

std::size_t worker_threads() {
    const char* v = std::getenv("CTXDUCER_THREADS");
    if (!v || !*v) {
        return 1;
    }
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) {
        throw ConfigError(std::string("CTXDUCER_THREADS must be a positive integer, got '") + v + "'");
    }
    return static_cast<std::size_t>(n);
}

} // namespace ctxducer
