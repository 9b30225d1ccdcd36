#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxducer/context/fusion.hpp"
#include "ctxducer/corpus/corpus.hpp"
#include "ctxducer/model/model.hpp"

namespace ctxducer {

// --- decoding ---------------------------------------------------------------

inline constexpr std::size_t kMaxSymbolsPerFrame = 5;

// Greedy transducer search over encoder output h (T×D): per frame, emit the
// argmax label while it is non-blank (at most max_symbols times), then advance.
// Argmax ties go to the lowest index.
std::vector<int> greedy_search(const TransducerModel& model, const Tensor& h,
                               std::size_t max_symbols = kMaxSymbolsPerFrame);

// Encode session.utterances[pos] with the model's fusion config and decode it.
std::vector<int> greedy_decode(const TransducerModel& model, const Session& session, std::size_t pos,
                               ContextCache* cache = nullptr, std::size_t max_symbols = kMaxSymbolsPerFrame);

// --- word error rate --------------------------------------------------------

struct EditCounts {
    std::size_t sub = 0;
    std::size_t del = 0;
    std::size_t ins = 0;
    std::size_t ref_len = 0;

    std::size_t errors() const { return sub + del + ins; }
    EditCounts& operator+=(const EditCounts& o);
};

// Minimal unit-cost edit alignment; among minimal alignments, the one with the
// most substitutions (fewest insertions + deletions).
EditCounts align_words(std::span<const std::string> ref, std::span<const std::string> hyp);
// errors / ref_len; an empty reference has no defined rate.
double error_rate(const EditCounts& c);

struct UtteranceScore {
    std::string utterance_id;
    std::vector<std::string> ref;
    std::vector<std::string> hyp;
    EditCounts counts;
};

struct EvalReport {
    std::vector<UtteranceScore> rows;

    EditCounts totals() const;
    double wer() const { return error_rate(totals()); }
};

struct Hypothesis {
    std::string utterance_id;
    std::vector<std::string> words;
};

// Rows follow the reference order; every reference needs exactly one hypothesis.
EvalReport score(const Corpus& refs, const std::vector<Hypothesis>& hyps);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
nlohmann::json hypotheses_to_json(const std::vector<Hypothesis>& hyps);
std::vector<Hypothesis> hypotheses_from_json(const nlohmann::json& j);

// --- significance -------------------------------------------------------------

double normal_cdf(double x);

struct MapssweResult {
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double w = 0.0;
    double p = 1.0;
    bool significant = false;
};

// Matched-pairs test on per-segment error counts: Z = a - b,
// W = mean(Z) / (s / sqrt(n)), two-tailed normal p-value.
MapssweResult mapsswe(std::span<const double> errs_a, std::span<const double> errs_b, double alpha = 0.05);
// Pairs two reports by utterance_id (one segment per utterance).
MapssweResult mapsswe(const EvalReport& a, const EvalReport& b, double alpha = 0.05);

std::vector<std::string> split_words(const std::string& text);
std::string join_words(const std::vector<std::string>& words);

} // namespace ctxducer
