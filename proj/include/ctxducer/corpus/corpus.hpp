#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ctxducer {

struct Codebook;

// One transcript-bearing segment. Features (T×F) and tokens (T) are each
// optional, but at least one is present.
struct Utterance {
    std::string session_id;
    std::string utterance_id;
    std::size_t index = 1;  // 1-based position within the session
    std::int64_t start_ms = 0;
    std::size_t feature_dim = 0;
    std::vector<double> features;
    std::vector<int> tokens;
    std::vector<std::string> transcript;
    std::vector<int> phone_labels;
    // Generator construction flags: edge words determined by the neighbour.
    bool first_word_from_prev = false;
    bool last_word_from_next = false;
    // Resolved location of the feature file, if one backs `features`.
    std::filesystem::path feature_path;

    bool has_features() const { return !features.empty(); }
    bool has_tokens() const { return !tokens.empty(); }
    std::size_t num_frames() const;
};

struct Session {
    std::string session_id;
    std::vector<Utterance> utterances;  // ascending start_ms
};

using Corpus = std::vector<Session>;

// Checks the per-session invariants (contiguous indices, strictly increasing
// start_ms, T >= 1). Throws FormatError.
void validate_session(const Session& s);

// Stable sort of each session by start time (the serialisation order), then reindexing.
void serialize_by_start_time(Session& s);

// --- vocabulary -----------------------------------------------------------

// Partition of the phone set: utterance-opening phones, utterance-closing
// phones and regular phones.
struct PhoneInventory {
    std::size_t phone_count = 0;
    std::vector<int> opening;
    std::vector<int> closing;
    std::vector<int> regular;

    static PhoneInventory make(std::size_t phone_count);
};

// Word ids: 0 is the blank symbol, words are 1..V.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> words);

    static Vocabulary make(std::size_t phone_count, std::size_t homophones);

    std::size_t num_words() const { return words_.size(); }
    std::size_t num_classes() const { return words_.size() + 1; }
    int id(const std::string& word) const;
    const std::string& word(int id) const;
    std::vector<int> encode(const std::vector<std::string>& words) const;
    std::vector<std::string> decode(const std::vector<int>& ids) const;

private:
    std::vector<std::string> words_;
};

std::string regular_word(int first_phone, int second_phone);
std::string opening_word(int phone, std::size_t identity);
std::string closing_word(int phone, std::size_t identity);

// --- generator ------------------------------------------------------------

struct GeneratorConfig {
    std::size_t num_sessions = 60;
    std::size_t utterances_per_session = 6;
    std::size_t phone_count = 8;
    std::size_t feature_dim = 16;
    double emission_noise = 0.8;
    double mean_phone_duration = 3.0;
    double context_strength = 0.8;
    std::uint64_t seed = 1;
    // Phone centroids are drawn from this stream; 0 means "same as seed".
    std::uint64_t acoustic_seed = 0;
    std::size_t min_words = 3;
    std::size_t max_words = 5;
    std::size_t homophones = 2;

    void validate() const;
};

// Deterministic in the config. With context_strength κ, the identity of an
// utterance's opening word is (with probability κ) fixed by the closing phone
// of the previous utterance, and its closing word by the opening phone of the
// next one; both words are homophones, so only the neighbour disambiguates them.
Corpus generate(const GeneratorConfig& cfg);

// Per-phone emission centroids (phone_count × feature_dim).
std::vector<double> phone_centroids(const GeneratorConfig& cfg);

// --- file formats ---------------------------------------------------------

struct FeatureMatrix {
    std::size_t frames = 0;
    std::size_t dim = 0;
    std::vector<double> values;
};

// "CTXF" v1: u32 T, u32 F, then T·F float32 little-endian. Values are stored as
// float32; writing a non-float-representable value loses precision.
void write_features(const std::filesystem::path& path, std::size_t frames, std::size_t dim,
                    const std::vector<double>& values);
FeatureMatrix read_features(const std::filesystem::path& path);

struct ManifestWriteOptions {
    // Write each utterance's features to <manifest dir>/<feature_subdir>/<utterance_id>.ctxf.
    bool write_features = true;
    std::string feature_subdir = "features";
};

// JSON lines, one utterance per line.
void write_manifest(const std::filesystem::path& path, const Corpus& corpus, const ManifestWriteOptions& opts = {});
Corpus read_manifest(const std::filesystem::path& path, bool load_features = true);

// Sets tokens = quantize(features) for every utterance.
void attach_tokens(Session& session, const Codebook& cb);
void attach_tokens(Corpus& corpus, const Codebook& cb);

// All feature frames of a corpus stacked row-wise, with the matching phone labels.
struct StackedFrames {
    std::size_t dim = 0;
    std::vector<double> values;
    std::vector<int> labels;
    std::size_t rows() const { return dim ? values.size() / dim : 0; }
};
StackedFrames stack_frames(const Corpus& corpus);

} // namespace ctxducer
