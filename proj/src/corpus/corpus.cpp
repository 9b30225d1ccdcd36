#include "ctxducer/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "ctxducer/errors.hpp"
#include "ctxducer/rng.hpp"

namespace ctxducer {

std::size_t Utterance::num_frames() const {
    if (has_tokens()) {
        return tokens.size();
    }
    if (has_features() && feature_dim > 0) {
        return features.size() / feature_dim;
    }
    return phone_labels.size();
}

void validate_session(const Session& s) {
    for (std::size_t i = 0; i < s.utterances.size(); ++i) {
        const auto& u = s.utterances[i];
        if (u.session_id != s.session_id) {
            throw FormatError("utterance " + u.utterance_id + " filed under session " + s.session_id);
        }
        if (u.index != i + 1) {
            throw FormatError("session " + s.session_id + ": utterance indices not contiguous from 1");
        }
        if (i > 0 && u.start_ms <= s.utterances[i - 1].start_ms) {
            throw FormatError("session " + s.session_id + ": start_ms not strictly increasing at " + u.utterance_id);
        }
        if (!u.has_features() && !u.has_tokens()) {
            throw FormatError("utterance " + u.utterance_id + " has neither features nor tokens");
        }
        if (u.num_frames() == 0) {
            throw FormatError("utterance " + u.utterance_id + " has no frames");
        }
        if (u.has_features() && u.has_tokens() && u.tokens.size() * u.feature_dim != u.features.size()) {
            throw FormatError("utterance " + u.utterance_id + ": token and feature frame counts differ");
        }
    }
}

void serialize_by_start_time(Session& s) {
    std::stable_sort(s.utterances.begin(), s.utterances.end(),
                     [](const Utterance& a, const Utterance& b) { return a.start_ms < b.start_ms; });
    for (std::size_t i = 0; i < s.utterances.size(); ++i) {
        s.utterances[i].index = i + 1;
    }
}

PhoneInventory PhoneInventory::make(std::size_t phone_count) {
    if (phone_count < 4) {
        throw ConfigError("phone_count must be >= 4");
    }
    PhoneInventory inv;
    inv.phone_count = phone_count;
    const std::size_t edge = std::max<std::size_t>(1, phone_count / 4);
    for (std::size_t p = 0; p < phone_count; ++p) {
        const int id = static_cast<int>(p);
        if (p < edge) {
            inv.opening.push_back(id);
        } else if (p < 2 * edge) {
            inv.closing.push_back(id);
        } else {
            inv.regular.push_back(id);
        }
    }
    return inv;
}

std::string regular_word(int a, int b) { return "w" + std::to_string(a) + "_" + std::to_string(b); }
std::string opening_word(int phone, std::size_t h) { return "o" + std::to_string(phone) + "h" + std::to_string(h); }
std::string closing_word(int phone, std::size_t h) { return "c" + std::to_string(phone) + "h" + std::to_string(h); }

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {}

Vocabulary Vocabulary::make(std::size_t phone_count, std::size_t homophones) {
    const auto inv = PhoneInventory::make(phone_count);
    std::vector<std::string> words;
    for (int a : inv.regular) {
        for (int b : inv.regular) {
            if (a != b) {
                words.push_back(regular_word(a, b));
            }
        }
    }
    for (int o : inv.opening) {
        for (std::size_t h = 0; h < homophones; ++h) {
            words.push_back(opening_word(o, h));
        }
    }
    for (int c : inv.closing) {
        for (std::size_t h = 0; h < homophones; ++h) {
            words.push_back(closing_word(c, h));
        }
    }
    return Vocabulary(std::move(words));
}

int Vocabulary::id(const std::string& word) const {
    const auto it = std::find(words_.begin(), words_.end(), word);
    if (it == words_.end()) {
        throw DataError("word not in vocabulary: " + word);
    }
    return static_cast<int>(it - words_.begin()) + 1;
}

const std::string& Vocabulary::word(int id) const {
    if (id < 1 || static_cast<std::size_t>(id) > words_.size()) {
        throw DataError("word id out of range: " + std::to_string(id));
    }
    return words_[static_cast<std::size_t>(id) - 1];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) {
        ids.push_back(id(w));
    }
    return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) {
        out.push_back(word(i));
    }
    return out;
}

void GeneratorConfig::validate() const {
    if (num_sessions == 0 || utterances_per_session == 0) {
        throw ConfigError("generator: num_sessions and utterances_per_session must be >= 1");
    }
    if (phone_count < 4) {
        throw ConfigError("generator: phone_count must be >= 4");
    }
    if (feature_dim == 0) {
        throw ConfigError("generator: feature_dim must be >= 1");
    }
    if (!(emission_noise >= 0.0) || !std::isfinite(emission_noise)) {
        throw ConfigError("generator: emission_noise must be finite and >= 0");
    }
    if (!(mean_phone_duration >= 1.0) || !std::isfinite(mean_phone_duration)) {
        throw ConfigError("generator: mean_phone_duration must be >= 1");
    }
    if (!(context_strength >= 0.0 && context_strength <= 1.0)) {
        throw ConfigError("generator: context_strength must lie in [0, 1]");
    }
    if (min_words < 2 || max_words < min_words) {
        throw ConfigError("generator: need 2 <= min_words <= max_words");
    }
    if (homophones == 0) {
        throw ConfigError("generator: homophones must be >= 1");
    }
}

std::vector<double> phone_centroids(const GeneratorConfig& cfg) {
    Rng rng(derive_seed(cfg.acoustic_seed ? cfg.acoustic_seed : cfg.seed, {0xac0u}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> c(cfg.phone_count * cfg.feature_dim);
    for (auto& v : c) {
        v = normal(rng);
    }
    return c;
}

namespace {

struct Plan {
    int opening_phone = 0;
    int closing_phone = 0;
    std::vector<std::pair<int, int>> middle;
    std::size_t opening_identity = 0;
    std::size_t closing_identity = 0;
    bool from_prev = false;
    bool from_next = false;
};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[static_cast<std::size_t>(rng() % v.size())];
}

} // namespace

Corpus generate(const GeneratorConfig& cfg) {
    cfg.validate();
    const auto inv = PhoneInventory::make(cfg.phone_count);
    const auto centroids = phone_centroids(cfg);
    const std::size_t F = cfg.feature_dim;
    const auto max_duration = static_cast<std::size_t>(std::llround(2.0 * cfg.mean_phone_duration - 1.0));

    Corpus corpus;
    corpus.reserve(cfg.num_sessions);
    for (std::size_t s = 0; s < cfg.num_sessions; ++s) {
        Rng rng(derive_seed(cfg.seed, {0x5e55u, s}));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::normal_distribution<double> noise(0.0, cfg.emission_noise > 0.0 ? cfg.emission_noise : 1.0);

        // Pronunciations first; edge identities depend on neighbouring pronunciations.
        std::vector<Plan> plans(cfg.utterances_per_session);
        for (auto& p : plans) {
            const std::size_t words = cfg.min_words + static_cast<std::size_t>(rng() % (cfg.max_words - cfg.min_words + 1));
            p.opening_phone = pick(inv.opening, rng);
            p.closing_phone = pick(inv.closing, rng);
            int prev = p.opening_phone;
            for (std::size_t w = 0; w + 2 < words; ++w) {
                int a = pick(inv.regular, rng);
                while (a == prev) {
                    a = pick(inv.regular, rng);
                }
                int b = pick(inv.regular, rng);
                while (b == a) {
                    b = pick(inv.regular, rng);
                }
                p.middle.emplace_back(a, b);
                prev = b;
            }
        }
        const std::size_t H = cfg.homophones;
        for (std::size_t i = 0; i < plans.size(); ++i) {
            auto& p = plans[i];
            const bool link_prev = unit(rng) < cfg.context_strength;
            const std::size_t random_open = static_cast<std::size_t>(rng() % H);
            if (i > 0 && link_prev) {
                p.opening_identity = static_cast<std::size_t>(plans[i - 1].closing_phone) % H;
                p.from_prev = true;
            } else {
                p.opening_identity = random_open;
            }
            const bool link_next = unit(rng) < cfg.context_strength;
            const std::size_t random_close = static_cast<std::size_t>(rng() % H);
            if (i + 1 < plans.size() && link_next) {
                p.closing_identity = static_cast<std::size_t>(plans[i + 1].opening_phone) % H;
                p.from_next = true;
            } else {
                p.closing_identity = random_close;
            }
        }

        Session session;
        session.session_id = "s" + std::string(4 - std::min<std::size_t>(4, std::to_string(s).size()), '0') +
                             std::to_string(s);
        std::int64_t clock = 1 + static_cast<std::int64_t>(rng() % 500);
        for (std::size_t i = 0; i < plans.size(); ++i) {
            const auto& p = plans[i];
            Utterance u;
            u.session_id = session.session_id;
            u.index = i + 1;
            u.utterance_id = session.session_id + "-" + std::to_string(i + 1);
            u.start_ms = clock;
            u.feature_dim = F;
            u.first_word_from_prev = p.from_prev;
            u.last_word_from_next = p.from_next;

            std::vector<int> phones{p.opening_phone};
            u.transcript.push_back(opening_word(p.opening_phone, p.opening_identity));
            for (const auto& [a, b] : p.middle) {
                phones.push_back(a);
                phones.push_back(b);
                u.transcript.push_back(regular_word(a, b));
            }
            phones.push_back(p.closing_phone);
            u.transcript.push_back(closing_word(p.closing_phone, p.closing_identity));

            for (int ph : phones) {
                const std::size_t d = 1 + static_cast<std::size_t>(rng() % max_duration);
                for (std::size_t k = 0; k < d; ++k) {
                    u.phone_labels.push_back(ph);
                    for (std::size_t f = 0; f < F; ++f) {
                        const double e = cfg.emission_noise > 0.0 ? noise(rng) : 0.0;
                        // Stored as float32 on disk, so keep values float-representable.
                        u.features.push_back(static_cast<float>(centroids[static_cast<std::size_t>(ph) * F + f] + e));
                    }
                }
            }
            clock += static_cast<std::int64_t>(u.phone_labels.size()) * 10 + 1 + static_cast<std::int64_t>(rng() % 500);
            session.utterances.push_back(std::move(u));
        }
        corpus.push_back(std::move(session));
    }
    return corpus;
}

StackedFrames stack_frames(const Corpus& corpus) {
    StackedFrames out;
    for (const auto& s : corpus) {
        for (const auto& u : s.utterances) {
            if (!u.has_features()) {
                throw DataError("stack_frames: utterance " + u.utterance_id + " has no features");
            }
            if (out.dim == 0) {
                out.dim = u.feature_dim;
            } else if (out.dim != u.feature_dim) {
                throw DimensionError("stack_frames: mixed feature dims");
            }
            out.values.insert(out.values.end(), u.features.begin(), u.features.end());
            out.labels.insert(out.labels.end(), u.phone_labels.begin(), u.phone_labels.end());
        }
    }
    return out;
}

} // namespace ctxducer
