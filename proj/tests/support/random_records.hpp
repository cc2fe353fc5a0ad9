#pragma once

#include "esceval/records.hpp"

#include <random>

namespace gen {

using namespace esceval;

inline std::string text(std::mt19937 &rng, int max_words = 8) {
    static const char *words[] = {"sad", "work", "家人", "sleep", "\"quoted\"", "tab\there", "line\nbreak",
                                  "朋友", "ok", "ünïcode", "back\\slash", "😀"};
    std::uniform_int_distribution<int> n(1, max_words), w(0, 11);
    std::string out;
    for (int i = n(rng); i > 0; --i)
        out += std::string(out.empty() ? "" : " ") + words[w(rng)];
    return out;
}

inline std::string id(std::mt19937 &rng, const char *prefix) {
    return std::string(prefix) + "-" + std::to_string(rng() % 100000);
}

inline rolecards::RoleCard card(std::mt19937 &rng) {
    rolecards::RoleCard c;
    c.id = id(rng, "card");
    c.lang = rng() % 2 ? Lang::en : Lang::zh;
    c.age = text(rng, 1);
    c.gender = text(rng, 1);
    c.occupation = text(rng, 2);
    c.problem = text(rng);
    if (rng() % 2) {
        c.quality = rng() % 2 ? rolecards::Quality::high : rolecards::Quality::middle;
        c.category = rolecards::TaxonomyPath{text(rng, 2), text(rng, 2), text(rng, 3)};
        c.pipeline_stage = rolecards::PipelineStage::finalized;
    }
    c.source = {id(rng, "ds"), std::to_string(rng() % 5000)};
    return c;
}

inline sim::Transcript transcript(std::mt19937 &rng) {
    sim::Transcript t;
    t.card_id = id(rng, "card");
    t.target_alias = id(rng, "model");
    t.id = sim::transcript_id(t.card_id, t.target_alias);
    t.seeker_alias = "seeker";
    t.prompt_variant = static_cast<sim::VariantKind>(rng() % 4);
    t.temperature = (rng() % 10) / 10.0;
    int n = rng() % 11;
    for (int i = 0; i < n; ++i)
        t.turns.push_back({i % 2 ? sim::Speaker::supporter : sim::Speaker::seeker, text(rng),
                           "2024-01-01T00:00:0" + std::to_string(i % 10) + ".000Z"});
    for (int i = 1; i < n; i += 2)
        if (rng() % 4 == 0)
            t.refusal_flags.push_back(i);
    if (n < 10) {
        t.status = sim::TranscriptStatus::aborted;
        t.error = text(rng);
    }
    return t;
}

inline rubric::AnnotationRecord annotation(std::mt19937 &rng) {
    rubric::AnnotationRecord r;
    r.id = id(rng, "ann");
    r.transcript_id = id(rng, "t");
    r.annotator_id = id(rng, "who");
    r.rubric = rng() % 2 ? rubric::RubricKind::eval7 : rubric::RubricKind::roleplay6;
    r.stage = rng() % 2 ? rubric::Stage::first : rubric::Stage::review;
    const auto &s = rubric::spec(r.rubric);
    for (const auto &d : s.dimensions)
        r.scores[d.name] = int(rng() % (s.scale_max + 1));
    r.timestamp = "2024-03-0" + std::to_string(1 + rng() % 9) + "T12:00:00.000Z";
    return r;
}

inline rubric::PairwiseJudgment pairwise(std::mt19937 &rng) {
    rubric::PairwiseJudgment p;
    p.id = id(rng, "pw");
    p.left_transcript_id = id(rng, "l");
    p.right_transcript_id = id(rng, "r");
    p.annotator_id = id(rng, "who");
    p.choice = rng() % 2 ? rubric::Side::left : rubric::Side::right;
    p.criterion = std::string(rubric::kPairwiseCriterion);
    return p;
}

inline double unit(std::mt19937 &rng) { return std::uniform_real_distribution<double>(0, 1)(rng); }

inline metrics::MetricRecord metric(std::mt19937 &rng) {
    metrics::MetricRecord m;
    m.card_id = id(rng, "card");
    m.model = id(rng, "model");
    m.transcript_id = m.card_id + "@" + m.model;
    m.values = {unit(rng), unit(rng), unit(rng), unit(rng), unit(rng), unit(rng), unit(rng)};
    return m;
}

inline stats::CorrelationRecord correlation(std::mt19937 &rng) {
    stats::CorrelationRecord c;
    c.metric = text(rng, 1);
    c.dimension = "fluency";
    c.level = rng() % 2 ? stats::Level::sample : stats::Level::dataset;
    if (rng() % 3)
        c.spearman = unit(rng) * 2 - 1;
    if (rng() % 3)
        c.pearson = unit(rng) * 2 - 1;
    if (rng() % 3)
        c.kendall = unit(rng) * 2 - 1;
    c.n = rng() % 300;
    return c;
}

} // namespace gen
