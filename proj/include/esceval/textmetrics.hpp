#pragma once

#include "esceval/util.hpp"

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace esceval::sim {
struct Transcript;
}

namespace esceval::metrics {

struct TokenSequence {
    std::vector<std::string> tokens;
    Lang lang = Lang::en;

    std::size_t size() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }
};

// en: lowercase, punctuation split off, whitespace-delimited.
// zh: one token per non-ASCII code point; ASCII letter/digit runs kept whole.
TokenSequence tokenize(std::string_view text, Lang lang);

// Smoothing constant substituted for a zero clipped n-gram count.
inline constexpr double kBleuEpsilon = 1e-9;

// Sentence BLEU with uniform weights over orders 1..n. Orders for which the
// candidate has no n-grams at all are left out of the geometric mean.
// The brevity penalty uses the reference length closest to the candidate.
double bleu_n(const TokenSequence &candidate, std::span<const TokenSequence> references, int n);
double bleu_n(const TokenSequence &candidate, const TokenSequence &reference, int n);

// Unique n-grams over total n-grams; n-grams never span two sequences.
double distinct_n(std::span<const TokenSequence> texts, int n);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
double rouge_l(const TokenSequence &candidate, const TokenSequence &reference);

// Exact-match METEOR: greedy leftmost unigram alignment, harmonic mean with
// recall weighted 9:1, fragmentation penalty 0.5 * (chunks / matches)^3.
double meteor(const TokenSequence &candidate, const TokenSequence &reference);

struct MetricVector {
    double bleu1 = 0;
    double bleu2 = 0;
    double bleu4 = 0;
    double distinct1 = 0;
    double distinct2 = 0;
    double rougeL = 0;
    double meteor = 0;

    bool operator==(const MetricVector &) const = default;
};

// Row labels in report order.
inline constexpr std::string_view kMetricNames[] = {"Bleu-1",     "Bleu-2",  "Bleu-4", "Distinct-1",
                                                     "Distinct-2", "Rouge-L", "Meteor"};
double metric_value(const MetricVector &v, std::string_view name);

struct MetricRecord {
    std::string transcript_id;
    std::string card_id;
    std::string model;
    MetricVector values;

    bool operator==(const MetricRecord &) const = default;
};

struct ReferenceSet {
    std::string card_id;
    Lang lang = Lang::en;
    std::vector<std::string> turns;

    bool operator==(const ReferenceSet &) const = default;
};

struct CorpusDistinct {
    double distinct1 = 0;
    double distinct2 = 0;
};

struct ScoringResult {
    std::vector<MetricRecord> records;
    std::map<std::string, CorpusDistinct> corpus; // by model alias
    std::vector<std::string> warnings;
};

struct ScoringOptions {
    bool include_aborted = false;
};

// Supporter turn i is compared with reference turn i; surplus turns on either
// side are ignored. Distinct is reported per transcript in each record and at
// corpus level per model.
ScoringResult score_transcripts(std::span<const sim::Transcript> transcripts,
                                const std::map<std::string, ReferenceSet> &references,
                                ScoringOptions options = {});

} // namespace esceval::metrics
