#include "esceval/textmetrics.hpp"

#include "esceval/error.hpp"
#include "esceval/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <unordered_map>
#include <unordered_set>

namespace esceval::metrics {

namespace {

bool is_ascii_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_punct(char c) {
    auto u = static_cast<unsigned char>(c);
    return u < 0x80 && std::ispunct(u);
}

using NgramCounts = std::unordered_map<std::string, int>;

std::string ngram_key(std::span<const std::string> tokens, std::size_t start, int n) {
    std::string key;
    for (int k = 0; k < n; ++k) {
        if (k)
            key.push_back('\x1f');
        key += tokens[start + k];
    }
    return key;
}

NgramCounts count_ngrams(std::span<const std::string> tokens, int n) {
    NgramCounts counts;
    if (tokens.size() < static_cast<std::size_t>(n))
        return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[ngram_key(tokens, i, n)];
    return counts;
}

void check_order(int n, std::string_view what) {
    if (n < 1)
        throw ValidationError("textmetrics", std::string(what) + ": n-gram order must be positive", "n");
}

} // namespace

TokenSequence tokenize(std::string_view text, Lang lang) {
    TokenSequence out;
    out.lang = lang;
    std::string word;
    auto flush = [&] {
        if (!word.empty())
            out.tokens.push_back(std::move(word));
        word.clear();
    };
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (is_ascii_space(c)) {
            flush();
            ++i;
        } else if (is_ascii_punct(c)) {
            flush();
            out.tokens.emplace_back(1, c);
            ++i;
        } else if (static_cast<unsigned char>(c) < 0x80) {
            word.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
            ++i;
        } else {
            auto len = utf8_length(text, i);
            if (lang == Lang::zh) {
                flush();
                out.tokens.emplace_back(text.substr(i, len));
            } else {
                word.append(text.substr(i, len));
            }
            i += len;
        }
    }
    flush();
    return out;
}

double bleu_n(const TokenSequence &candidate, std::span<const TokenSequence> references, int n) {
    check_order(n, "bleu");
    if (references.empty())
        throw ValidationError("textmetrics", "bleu needs at least one reference", "references");
    if (candidate.empty())
        return 0.0;

    const auto c = candidate.size();
    double log_sum = 0.0;
    int orders = 0;
    for (int k = 1; k <= n; ++k) {
        if (c < static_cast<std::size_t>(k))
            break;
        auto cand_counts = count_ngrams(candidate.tokens, k);
        NgramCounts max_ref;
        for (const auto &ref : references)
            for (const auto &[g, cnt] : count_ngrams(ref.tokens, k))
                max_ref[g] = std::max(max_ref[g], cnt);
        long clipped = 0;
        for (const auto &[g, cnt] : cand_counts) {
            auto it = max_ref.find(g);
            if (it != max_ref.end())
                clipped += std::min(cnt, it->second);
        }
        const double total = static_cast<double>(c - k + 1);
        const double numerator = clipped == 0 ? kBleuEpsilon : static_cast<double>(clipped);
        log_sum += std::log(numerator / total);
        ++orders;
    }

    // closest reference length, shorter one on ties
    std::size_t r = references.front().size();
    for (const auto &ref : references) {
        auto d = std::abs(static_cast<long>(ref.size()) - static_cast<long>(c));
        auto best = std::abs(static_cast<long>(r) - static_cast<long>(c));
        if (d < best || (d == best && ref.size() < r))
            r = ref.size();
    }
    const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
    return std::clamp(bp * std::exp(log_sum / orders), 0.0, 1.0);
}

double bleu_n(const TokenSequence &candidate, const TokenSequence &reference, int n) {
    return bleu_n(candidate, std::span<const TokenSequence>(&reference, 1), n);
}

double distinct_n(std::span<const TokenSequence> texts, int n) {
    check_order(n, "distinct");
    std::unordered_set<std::string> unique;
    std::size_t total = 0;
    for (const auto &t : texts) {
        if (t.size() < static_cast<std::size_t>(n))
            continue;
        for (std::size_t i = 0; i + n <= t.size(); ++i) {
            unique.insert(ngram_key(t.tokens, i, n));
            ++total;
        }
    }
    if (total == 0)
        return 0.0;
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(const TokenSequence &candidate, const TokenSequence &reference) {
    if (candidate.empty() || reference.empty())
        return 0.0;
    const double lcs = static_cast<double>(lcs_length(candidate.tokens, reference.tokens));
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(reference.size());
    if (p + r == 0.0)
        return 0.0;
    return 2.0 * p * r / (p + r);
}

double meteor(const TokenSequence &candidate, const TokenSequence &reference) {
    if (candidate.empty() || reference.empty())
        return 0.0;
    std::vector<bool> used(reference.size(), false);
    // alignment[i] = matched reference index for candidate token i, or -1
    std::vector<long> alignment(candidate.size(), -1);
    std::size_t matches = 0;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        for (std::size_t j = 0; j < reference.size(); ++j) {
            if (!used[j] && candidate.tokens[i] == reference.tokens[j]) {
                used[j] = true;
                alignment[i] = static_cast<long>(j);
                ++matches;
                break;
            }
        }
    }
    if (matches == 0)
        return 0.0;

    std::size_t chunks = 0;
    long prev_ref = -2;
    bool prev_matched = false;
    for (auto j : alignment) {
        if (j < 0) {
            prev_matched = false;
            continue;
        }
        if (!prev_matched || j != prev_ref + 1)
            ++chunks;
        prev_ref = j;
        prev_matched = true;
    }

    const double m = static_cast<double>(matches);
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(reference.size());
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / m;
    const double penalty = 0.5 * frag * frag * frag;
    return fmean * (1.0 - penalty);
}

double metric_value(const MetricVector &v, std::string_view name) {
    if (name == "Bleu-1")
        return v.bleu1;
    if (name == "Bleu-2")
        return v.bleu2;
    if (name == "Bleu-4")
        return v.bleu4;
    if (name == "Distinct-1")
        return v.distinct1;
    if (name == "Distinct-2")
        return v.distinct2;
    if (name == "Rouge-L")
        return v.rougeL;
    if (name == "Meteor")
        return v.meteor;
    throw ValidationError("textmetrics", "unknown metric '" + std::string(name) + "'", "metric");
}

ScoringResult score_transcripts(std::span<const sim::Transcript> transcripts,
                                const std::map<std::string, ReferenceSet> &references, ScoringOptions options) {
    ScoringResult result;
    std::map<std::string, std::vector<TokenSequence>> corpus_tokens;

    for (const auto &t : transcripts) {
        if (t.status == sim::TranscriptStatus::aborted && !options.include_aborted)
            continue;
        auto ref_it = references.find(t.card_id);
        if (ref_it == references.end() || ref_it->second.turns.empty()) {
            result.warnings.push_back("no reference turns for card " + t.card_id + " (transcript " + t.id + ")");
            continue;
        }
        const auto &ref = ref_it->second;

        std::vector<TokenSequence> supporter;
        for (const auto &turn : t.turns)
            if (turn.speaker == sim::Speaker::supporter)
                supporter.push_back(tokenize(turn.text, ref.lang));

        const std::size_t aligned = std::min(supporter.size(), ref.turns.size());
        if (aligned == 0) {
            result.warnings.push_back("transcript " + t.id + " has no supporter turns to score");
            continue;
        }

        MetricVector v;
        std::size_t scored = 0;
        for (std::size_t i = 0; i < aligned; ++i) {
            const auto &cand = supporter[i];
            auto reference = tokenize(ref.turns[i], ref.lang);
            if (reference.empty())
                continue;
            v.bleu1 += bleu_n(cand, reference, 1);
            v.bleu2 += bleu_n(cand, reference, 2);
            v.bleu4 += bleu_n(cand, reference, 4);
            v.rougeL += rouge_l(cand, reference);
            v.meteor += meteor(cand, reference);
            ++scored;
        }
        if (scored == 0) {
            result.warnings.push_back("transcript " + t.id + " has only empty reference turns");
            continue;
        }
        const double denom = static_cast<double>(scored);
        v.bleu1 /= denom;
        v.bleu2 /= denom;
        v.bleu4 /= denom;
        v.rougeL /= denom;
        v.meteor /= denom;
        v.distinct1 = distinct_n(supporter, 1);
        v.distinct2 = distinct_n(supporter, 2);

        auto &bucket = corpus_tokens[t.target_alias];
        bucket.insert(bucket.end(), supporter.begin(), supporter.end());
        result.records.push_back({t.id, t.card_id, t.target_alias, v});
    }

    for (const auto &[model, seqs] : corpus_tokens)
        result.corpus[model] = {distinct_n(seqs, 1), distinct_n(seqs, 2)};
    return result;
}

} // namespace esceval::metrics
