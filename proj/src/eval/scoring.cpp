#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "ctxducer/errors.hpp"
#include "ctxducer/eval/eval.hpp"

namespace ctxducer {

EditCounts& EditCounts::operator+=(const EditCounts& o) {
    sub += o.sub;
    del += o.del;
    ins += o.ins;
    ref_len += o.ref_len;
    return *this;
}

namespace {

// Cell cost ordered by (errors, insertions + deletions).
struct Cost {
    std::size_t errors = 0;
    std::size_t indels = 0;
    bool operator<(const Cost& o) const { return errors != o.errors ? errors < o.errors : indels < o.indels; }
};

} // namespace

EditCounts align_words(std::span<const std::string> ref, std::span<const std::string> hyp) {
    const std::size_t R = ref.size(), H = hyp.size();
    std::vector<Cost> d((R + 1) * (H + 1));
    auto at = [&](std::size_t i, std::size_t j) -> Cost& { return d[i * (H + 1) + j]; };
    for (std::size_t i = 0; i <= R; ++i) {
        at(i, 0) = {i, i};
    }
    for (std::size_t j = 0; j <= H; ++j) {
        at(0, j) = {j, j};
    }
    for (std::size_t i = 1; i <= R; ++i) {
        for (std::size_t j = 1; j <= H; ++j) {
            const bool match = ref[i - 1] == hyp[j - 1];
            Cost diag = at(i - 1, j - 1);
            diag.errors += match ? 0 : 1;
            Cost up = at(i - 1, j);
            ++up.errors;
            ++up.indels;
            Cost left = at(i, j - 1);
            ++left.errors;
            ++left.indels;
            at(i, j) = std::min({diag, up, left});
        }
    }
    // Backtrace, preferring the diagonal on ties.
    EditCounts c;
    c.ref_len = R;
    std::size_t i = R, j = H;
    while (i > 0 || j > 0) {
        const Cost here = at(i, j);
        if (i > 0 && j > 0) {
            const bool match = ref[i - 1] == hyp[j - 1];
            Cost diag = at(i - 1, j - 1);
            diag.errors += match ? 0 : 1;
            if (!(here < diag) && !(diag < here)) {
                c.sub += match ? 0 : 1;
                --i;
                --j;
                continue;
            }
        }
        if (i > 0) {
            Cost up = at(i - 1, j);
            ++up.errors;
            ++up.indels;
            if (!(here < up) && !(up < here)) {
                ++c.del;
                --i;
                continue;
            }
        }
        ++c.ins;
        --j;
    }
    return c;
}

double error_rate(const EditCounts& c) {
    if (c.ref_len == 0) {
        throw DataError("error rate undefined for an empty reference");
    }
    return static_cast<double>(c.errors()) / static_cast<double>(c.ref_len);
}

EditCounts EvalReport::totals() const {
    EditCounts t;
    for (const auto& r : rows) {
        t += r.counts;
    }
    return t;
}

EvalReport score(const Corpus& refs, const std::vector<Hypothesis>& hyps) {
    std::map<std::string, const Hypothesis*> by_id;
    for (const auto& h : hyps) {
        if (!by_id.emplace(h.utterance_id, &h).second) {
            throw DataError("duplicate hypothesis for " + h.utterance_id);
        }
    }
    EvalReport report;
    for (const auto& s : refs) {
        for (const auto& u : s.utterances) {
            auto it = by_id.find(u.utterance_id);
            if (it == by_id.end()) {
                throw DataError("no hypothesis for " + u.utterance_id);
            }
            UtteranceScore row{u.utterance_id, u.transcript, it->second->words, {}};
            row.counts = align_words(row.ref, row.hyp);
            report.rows.push_back(std::move(row));
            by_id.erase(it);
        }
    }
    if (!by_id.empty()) {
        throw DataError("hypothesis for unknown utterance " + by_id.begin()->first);
    }
    return report;
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) {
        out.push_back(w);
    }
    return out;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        out += (i ? " " : "") + words[i];
    }
    return out;
}

nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"utterance_id", row.utterance_id},
                        {"ref", join_words(row.ref)},
                        {"hyp", join_words(row.hyp)},
                        {"sub", row.counts.sub},
                        {"del", row.counts.del},
                        {"ins", row.counts.ins},
                        {"ref_len", row.counts.ref_len},
                        {"errors", row.counts.errors()}});
    }
    const EditCounts t = r.totals();
    nlohmann::json agg = {{"sub", t.sub}, {"del", t.del}, {"ins", t.ins}, {"ref_len", t.ref_len},
                          {"errors", t.errors()}};
    agg["wer"] = t.ref_len ? nlohmann::json(error_rate(t)) : nlohmann::json(nullptr);
    return {{"utterances", rows}, {"aggregate", agg}};
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        for (const auto& row : j.at("utterances")) {
            UtteranceScore s;
            s.utterance_id = row.at("utterance_id").get<std::string>();
            s.ref = split_words(row.at("ref").get<std::string>());
            s.hyp = split_words(row.at("hyp").get<std::string>());
            s.counts.sub = row.at("sub").get<std::size_t>();
            s.counts.del = row.at("del").get<std::size_t>();
            s.counts.ins = row.at("ins").get<std::size_t>();
            s.counts.ref_len = row.at("ref_len").get<std::size_t>();
            if (row.contains("errors") && row.at("errors").get<std::size_t>() != s.counts.errors()) {
                throw FormatError("report row " + s.utterance_id + ": errors != sub + del + ins");
            }
            r.rows.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed score report: ") + e.what());
    }
    return r;
}

nlohmann::json hypotheses_to_json(const std::vector<Hypothesis>& hyps) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& h : hyps) {
        rows.push_back({{"utterance_id", h.utterance_id}, {"hyp", join_words(h.words)}});
    }
    return {{"utterances", rows}};
}

std::vector<Hypothesis> hypotheses_from_json(const nlohmann::json& j) {
    std::vector<Hypothesis> out;
    try {
        for (const auto& row : j.at("utterances")) {
            out.push_back({row.at("utterance_id").get<std::string>(), split_words(row.at("hyp").get<std::string>())});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed hypothesis file: ") + e.what());
    }
    return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

MapssweResult mapsswe(std::span<const double> errs_a, std::span<const double> errs_b, double alpha) {
    if (errs_a.size() != errs_b.size()) {
        throw DataError("mapsswe: paired lists differ in length");
    }
    const std::size_t n = errs_a.size();
    if (n < 2) {
        throw DataError("mapsswe: need at least two segments");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw DataError("mapsswe: alpha must lie in (0, 1)");
    }
    std::vector<double> z(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = errs_a[i] - errs_b[i];
        mean += z[i];
    }
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : z) {
        ss += (v - mean) * (v - mean);
    }
    const double s = std::sqrt(ss / static_cast<double>(n - 1));
    if (s == 0.0) {
        throw DataError("mapsswe: zero variance in paired differences, test is degenerate");
    }
    MapssweResult r;
    r.n = n;
    r.mean = mean;
    r.stddev = s;
    r.w = mean / (s / std::sqrt(static_cast<double>(n)));
    r.p = 2.0 * normal_cdf(-std::fabs(r.w));
    r.significant = r.p < alpha;
    return r;
}

MapssweResult mapsswe(const EvalReport& a, const EvalReport& b, double alpha) {
    std::map<std::string, double> errs_b;
    for (const auto& row : b.rows) {
        errs_b[row.utterance_id] = static_cast<double>(row.counts.errors());
    }
    if (errs_b.size() != a.rows.size()) {
        throw DataError("mapsswe: reports cover different utterance sets");
    }
    std::vector<double> xa, xb;
    for (const auto& row : a.rows) {
        auto it = errs_b.find(row.utterance_id);
        if (it == errs_b.end()) {
            throw DataError("mapsswe: " + row.utterance_id + " missing from second report");
        }
        xa.push_back(static_cast<double>(row.counts.errors()));
        xb.push_back(it->second);
    }
    return mapsswe(xa, xb, alpha);
}

} // namespace ctxducer
