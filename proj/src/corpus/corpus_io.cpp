#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ctxducer/binary_io.hpp"
#include "ctxducer/corpus/corpus.hpp"
#include "ctxducer/errors.hpp"
#include "ctxducer/quantizer/codebook.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctxducer {

void write_features(const fs::path& path, std::size_t frames, std::size_t dim, const std::vector<double>& values) {
    if (frames * dim != values.size() || frames == 0 || dim == 0) {
        throw DimensionError("write_features: " + std::to_string(values.size()) + " values for " +
                             std::to_string(frames) + "×" + std::to_string(dim));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    binio::write_magic(os, "CTXF");
    binio::write_u32(os, 1);
    binio::write_u32(os, static_cast<std::uint32_t>(frames));
    binio::write_u32(os, static_cast<std::uint32_t>(dim));
    for (double v : values) {
        binio::write_f32(os, static_cast<float>(v));
    }
    if (!os) {
        throw FormatError("write failed: " + path.string());
    }
}

FeatureMatrix read_features(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("cannot open feature file " + path.string());
    }
    binio::expect_magic(is, "CTXF", "feature file");
    binio::expect_version(is, 1, "feature file");
    FeatureMatrix m;
    m.frames = binio::read_u32(is, "feature file");
    m.dim = binio::read_u32(is, "feature file");
    if (m.frames == 0 || m.dim == 0) {
        throw FormatError("feature file with zero extent: " + path.string());
    }
    m.values.resize(m.frames * m.dim);
    for (auto& v : m.values) {
        const float f = binio::read_f32(is, "feature file");
        if (!std::isfinite(f)) {
            throw FormatError("non-finite feature value in " + path.string());
        }
        v = f;
    }
    binio::expect_eof(is, "feature file");
    return m;
}

namespace {

std::string join_words(const std::vector<std::string>& words) {
    std::string s;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) {
            s += ' ';
        }
        s += words[i];
    }
    return s;
}

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string w; is >> w;) {
        out.push_back(w);
    }
    return out;
}

} // namespace

void write_manifest(const fs::path& path, const Corpus& corpus, const ManifestWriteOptions& opts) {
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    fs::create_directories(dir);
    if (opts.write_features) {
        fs::create_directories(dir / opts.feature_subdir);
    }
    std::ofstream os(path);
    if (!os) {
        throw FormatError("cannot open manifest " + path.string() + " for writing");
    }
    for (const auto& s : corpus) {
        validate_session(s);
        for (const auto& u : s.utterances) {
            json row;
            row["session_id"] = u.session_id;
            row["utterance_id"] = u.utterance_id;
            row["index"] = u.index;
            row["start_ms"] = u.start_ms;
            row["transcript"] = join_words(u.transcript);
            if (u.has_features() && opts.write_features) {
                const fs::path rel = fs::path(opts.feature_subdir) / (u.utterance_id + ".ctxf");
                write_features(dir / rel, u.features.size() / u.feature_dim, u.feature_dim, u.features);
                row["feature_file"] = rel.generic_string();
            } else if (!u.feature_path.empty()) {
                row["feature_file"] = fs::relative(fs::absolute(u.feature_path), fs::absolute(dir)).generic_string();
            }
            if (u.has_tokens()) {
                row["tokens"] = u.tokens;
            }
            if (!u.phone_labels.empty()) {
                row["phone_labels"] = u.phone_labels;
            }
            if (u.first_word_from_prev || u.last_word_from_next) {
                row["context_flags"] = {u.first_word_from_prev, u.last_word_from_next};
            }
            os << row.dump() << '\n';
        }
    }
    if (!os) {
        throw FormatError("write failed: " + path.string());
    }
}

Corpus read_manifest(const fs::path& path, bool load_features) {
    std::ifstream is(path);
    if (!is) {
        throw FormatError("cannot open manifest " + path.string());
    }
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    Corpus corpus;
    std::map<std::string, std::size_t> session_pos;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json row;
        try {
            row = json::parse(line);
            Utterance u;
            u.session_id = row.at("session_id").get<std::string>();
            u.utterance_id = row.at("utterance_id").get<std::string>();
            u.index = row.at("index").get<std::size_t>();
            u.start_ms = row.at("start_ms").get<std::int64_t>();
            u.transcript = split_words(row.at("transcript").get<std::string>());
            if (row.contains("tokens")) {
                u.tokens = row["tokens"].get<std::vector<int>>();
            }
            if (row.contains("phone_labels")) {
                u.phone_labels = row["phone_labels"].get<std::vector<int>>();
            }
            if (row.contains("context_flags")) {
                const auto flags = row["context_flags"].get<std::vector<bool>>();
                if (flags.size() != 2) {
                    throw FormatError("context_flags must have two entries");
                }
                u.first_word_from_prev = flags[0];
                u.last_word_from_next = flags[1];
            }
            if (row.contains("feature_file")) {
                u.feature_path = dir / row["feature_file"].get<std::string>();
                if (load_features) {
                    auto m = read_features(u.feature_path);
                    u.feature_dim = m.dim;
                    u.features = std::move(m.values);
                }
            }
            auto [it, inserted] = session_pos.emplace(u.session_id, corpus.size());
            if (inserted) {
                corpus.push_back(Session{u.session_id, {}});
            }
            corpus[it->second].utterances.push_back(std::move(u));
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    for (const auto& s : corpus) {
        for (std::size_t i = 1; i < s.utterances.size(); ++i) {
            if (s.utterances[i].start_ms <= s.utterances[i - 1].start_ms) {
                throw FormatError("manifest " + path.string() + ": session " + s.session_id +
                                  " is not ordered by start_ms");
            }
        }
        if (load_features) {
            validate_session(s);
        }
    }
    return corpus;
}

void attach_tokens(Session& session, const Codebook& cb) {
    for (auto& u : session.utterances) {
        if (!u.has_features()) {
            throw DataError("attach_tokens: utterance " + u.utterance_id + " has no features");
        }
        u.tokens = quantize(FrameView(u.features, u.features.size() / u.feature_dim, u.feature_dim), cb);
    }
}

void attach_tokens(Corpus& corpus, const Codebook& cb) {
    for (auto& s : corpus) {
        attach_tokens(s, cb);
    }
}

} // namespace ctxducer
