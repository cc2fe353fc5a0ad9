#include "esceval/rubric.hpp"

#include "esceval/error.hpp"

#include <algorithm>
#include <cmath>

namespace esceval::rubric {

using nlohmann::json;

namespace {

constexpr const char *kModule = "rubric";

RubricSpec make_eval7() {
    return {RubricKind::eval7,
            4,
            100.0,
            {
                {"fluency",
                 "Fluency",
                 {"dialogue cannot be understood", "understandable but logic and wording have problems",
                  "readable, but either logic or wording has problems", "readable with no obvious problems",
                  "readable, coherent throughout and well expressed"}},
                {"expression",
                 "Expression",
                 {"rigid, content not digested", "monotonous form and little substance",
                  "monotonous form or little substance", "readable with no obvious problems",
                  "varied form and rich content"}},
                {"empathy",
                 "Empathy",
                 {"ignores or worsens the user's feelings", "neither understands nor analyses the user's emotions",
                  "either understands or analyses the user's emotions, not both",
                  "understands and analyses the user's emotions",
                  "understands the emotions and untangles their underlying logic"}},
                {"information",
                 "Information",
                 {"only harmful or useless suggestions", "no suggestions, or only ineffective ones",
                  "few suggestions, partly effective", "several effective suggestions",
                  "many effective suggestions reaching the root of the problem"}},
                {"skillful",
                 "Skillful",
                 {"one of five support skills shown", "two of five", "three of five", "four of five",
                  "all five support skills shown"}},
                {"humanoid",
                 "Humanoid",
                 {"rigid, content not digested", "structured or openly robot-like replies",
                  "more than two traces of a language model", "one or two traces of a language model",
                  "indistinguishable from a human friend"}},
                {"overall",
                 "Overall",
                 {"would not use it", "no particular feeling", "might consider using it", "would use it",
                  "would use it and recommend it"}},
            }};
}

RubricSpec make_roleplay6() {
    return {RubricKind::roleplay6,
            2,
            10.0,
            {
                {"coherence", "Coherence", {"contradicts earlier turns", "minor lapses", "consistent throughout"}},
                {"fluency", "Fluency", {"hard to follow", "fluent but written, not spoken", "natural spoken style"}},
                {"thematic_consistency",
                 "Thematic consistency",
                 {"drifts away from the card's problem", "partly on topic", "stays on the card's problem"}},
                {"completeness",
                 "Completeness",
                 {"card details mostly missing", "some card details conveyed", "all card details conveyed"}},
                {"emotional_congruence",
                 "Emotional congruence",
                 {"emotions do not fit the situation", "partly fitting", "emotions fit the situation"}},
                {"humanoid", "Humanoid", {"obviously a machine", "occasional machine traces", "reads as a person"}},
            }};
}

std::string require_string(const json &j, const char *key, const char *what) {
    if (!j.contains(key) || !j.at(key).is_string())
        throw ValidationError(kModule, std::string(what) + ": field '" + key + "' must be a string", key);
    return j.at(key).get<std::string>();
}

void reject_unknown(const json &j, std::initializer_list<const char *> allowed, const char *what) {
    if (!j.is_object())
        throw ValidationError(kModule, std::string(what) + " must be an object");
    for (const auto &[k, v] : j.items()) {
        bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char *a) { return k == a; });
        if (!ok)
            throw ValidationError(kModule, std::string(what) + ": unknown field '" + k + "'", k);
    }
}

std::map<std::string, int> scores_from_json(const json &j, const char *what) {
    if (!j.is_object())
        throw ValidationError(kModule, std::string(what) + ": scores must be an object", "scores");
    std::map<std::string, int> out;
    for (const auto &[k, v] : j.items()) {
        if (!v.is_number_integer())
            throw ValidationError(kModule, std::string(what) + ": score '" + k + "' must be an integer", k);
        out[k] = v.get<int>();
    }
    return out;
}

void check_lengths(std::span<const int> pred, std::span<const int> gold) {
    if (pred.size() != gold.size())
        throw ValidationError(kModule,
                              "prediction and gold lengths differ (" + std::to_string(pred.size()) + " vs " +
                                  std::to_string(gold.size()) + ")",
                              "pred");
    if (pred.empty())
        throw ValidationError(kModule, "accuracy needs at least one prediction", "pred");
}

} // namespace

std::string to_string(RubricKind kind) { return kind == RubricKind::eval7 ? "eval7" : "roleplay6"; }

RubricKind parse_rubric(std::string_view text) {
    if (text == "eval7")
        return RubricKind::eval7;
    if (text == "roleplay6")
        return RubricKind::roleplay6;
    throw ValidationError(kModule, "unknown rubric '" + std::string(text) + "'", "rubric");
}

std::string to_string(Stage stage) { return stage == Stage::first ? "first" : "review"; }

Stage parse_stage(std::string_view text) {
    if (text == "first")
        return Stage::first;
    if (text == "review")
        return Stage::review;
    throw ValidationError(kModule, "unknown stage '" + std::string(text) + "'", "stage");
}

const RubricSpec &spec(RubricKind kind) {
    static const RubricSpec eval7 = make_eval7();
    static const RubricSpec roleplay6 = make_roleplay6();
    return kind == RubricKind::eval7 ? eval7 : roleplay6;
}

std::vector<std::string> dimension_names(RubricKind kind) {
    std::vector<std::string> out;
    for (const auto &d : spec(kind).dimensions)
        out.push_back(d.name);
    return out;
}

json spec_to_json(const RubricSpec &s) {
    json dims = json::array();
    for (const auto &d : s.dimensions)
        dims.push_back({{"name", d.name}, {"display", d.display}, {"levels", d.levels}});
    return {{"rubric", to_string(s.kind)}, {"scale_max", s.scale_max}, {"dimensions", std::move(dims)}};
}

// ---------------------------------------------------------------------------

json to_json(const AnnotationRecord &r) {
    return {{"id", r.id},
            {"transcript_id", r.transcript_id},
            {"annotator_id", r.annotator_id},
            {"rubric", to_string(r.rubric)},
            {"stage", to_string(r.stage)},
            {"scores", r.scores},
            {"timestamp", r.timestamp}};
}

AnnotationRecord annotation_from_json(const json &j) {
    reject_unknown(j, {"id", "transcript_id", "annotator_id", "rubric", "stage", "scores", "timestamp"},
                   "annotation");
    AnnotationRecord r;
    r.id = require_string(j, "id", "annotation");
    r.transcript_id = require_string(j, "transcript_id", "annotation");
    r.annotator_id = require_string(j, "annotator_id", "annotation");
    r.rubric = parse_rubric(require_string(j, "rubric", "annotation"));
    r.stage = parse_stage(require_string(j, "stage", "annotation"));
    if (!j.contains("scores"))
        throw ValidationError(kModule, "annotation: missing scores", "scores");
    r.scores = scores_from_json(j.at("scores"), "annotation");
    r.timestamp = require_string(j, "timestamp", "annotation");
    return r;
}

const AnnotationRecord &validate_annotation(const AnnotationRecord &r, const std::set<std::string> *known_transcripts) {
    if (r.id.empty())
        throw ValidationError(kModule, "annotation id is empty", "id");
    if (r.transcript_id.empty())
        throw ValidationError(kModule, "annotation " + r.id + ": transcript_id is empty", "transcript_id");
    if (known_transcripts && !known_transcripts->count(r.transcript_id))
        throw ValidationError(kModule, "annotation " + r.id + ": unknown transcript " + r.transcript_id,
                              "transcript_id");
    if (r.annotator_id.empty())
        throw ValidationError(kModule, "annotation " + r.id + ": annotator_id is empty", "annotator_id");
    const auto &s = spec(r.rubric);
    for (const auto &d : s.dimensions) {
        auto it = r.scores.find(d.name);
        if (it == r.scores.end())
            throw ValidationError(kModule, "annotation " + r.id + ": missing dimension " + d.name, d.name);
        if (it->second < 0 || it->second > s.scale_max)
            throw ValidationError(kModule,
                                  "annotation " + r.id + ": " + d.name + "=" + std::to_string(it->second) +
                                      " outside [0," + std::to_string(s.scale_max) + "]",
                                  d.name);
    }
    if (r.scores.size() != s.dimensions.size()) {
        for (const auto &[k, v] : r.scores) {
            bool known = std::any_of(s.dimensions.begin(), s.dimensions.end(),
                                     [&](const Dimension &d) { return d.name == k; });
            if (!known)
                throw ValidationError(kModule,
                                      "annotation " + r.id + ": '" + k + "' is not a " + to_string(r.rubric) +
                                          " dimension",
                                      k);
        }
    }
    return r;
}

std::string to_string(Side s) { return s == Side::left ? "left" : "right"; }

Side parse_side(std::string_view text) {
    if (text == "left")
        return Side::left;
    if (text == "right")
        return Side::right;
    throw ValidationError(kModule, "choice must be 'left' or 'right', got '" + std::string(text) + "'", "choice");
}

json to_json(const PairwiseJudgment &p) {
    return {{"id", p.id},
            {"left_transcript_id", p.left_transcript_id},
            {"right_transcript_id", p.right_transcript_id},
            {"annotator_id", p.annotator_id},
            {"choice", to_string(p.choice)},
            {"criterion", p.criterion}};
}

PairwiseJudgment pairwise_from_json(const json &j) {
    reject_unknown(j, {"id", "left_transcript_id", "right_transcript_id", "annotator_id", "choice", "criterion"},
                   "pairwise judgment");
    PairwiseJudgment p;
    p.id = require_string(j, "id", "pairwise judgment");
    p.left_transcript_id = require_string(j, "left_transcript_id", "pairwise judgment");
    p.right_transcript_id = require_string(j, "right_transcript_id", "pairwise judgment");
    p.annotator_id = require_string(j, "annotator_id", "pairwise judgment");
    p.choice = parse_side(require_string(j, "choice", "pairwise judgment"));
    p.criterion = require_string(j, "criterion", "pairwise judgment");
    return p;
}

void validate_pairwise(const PairwiseJudgment &p) {
    if (p.id.empty())
        throw ValidationError(kModule, "pairwise judgment id is empty", "id");
    if (p.left_transcript_id.empty() || p.right_transcript_id.empty())
        throw ValidationError(kModule, "pairwise judgment " + p.id + ": missing transcript id", "left_transcript_id");
    if (p.left_transcript_id == p.right_transcript_id)
        throw ValidationError(kModule, "pairwise judgment " + p.id + ": left and right are the same transcript",
                              "right_transcript_id");
    if (p.annotator_id.empty())
        throw ValidationError(kModule, "pairwise judgment " + p.id + ": annotator_id is empty", "annotator_id");
}

json to_json(const ScorerPrediction &p) {
    return {{"transcript_id", p.transcript_id}, {"scorer", p.scorer}, {"scores", p.scores}};
}

ScorerPrediction prediction_from_json(const json &j) {
    reject_unknown(j, {"transcript_id", "scorer", "scores"}, "scorer prediction");
    ScorerPrediction p;
    p.transcript_id = require_string(j, "transcript_id", "scorer prediction");
    p.scorer = require_string(j, "scorer", "scorer prediction");
    if (!j.contains("scores"))
        throw ValidationError(kModule, "scorer prediction: missing scores", "scores");
    p.scores = scores_from_json(j.at("scores"), "scorer prediction");
    return p;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::map<std::string, int>> final_scores(std::span<const AnnotationRecord> annotations,
                                                               RubricKind kind) {
    std::map<std::string, const AnnotationRecord *> first, review;
    for (const auto &r : annotations) {
        if (r.rubric != kind)
            continue;
        auto &slot = (r.stage == Stage::first ? first : review)[r.transcript_id];
        if (slot)
            throw DataError(kModule, "transcript " + r.transcript_id + " has two " + to_string(r.stage) +
                                         "-stage " + to_string(kind) + " records (" + slot->id + ", " + r.id + ")");
        slot = &r;
    }
    std::map<std::string, std::map<std::string, int>> out;
    for (const auto &[tid, r] : first)
        out[tid] = r->scores;
    for (const auto &[tid, r] : review)
        for (const auto &[dim, score] : r->scores)
            out[tid][dim] = score;
    return out;
}

AggregateResult aggregate_scores(std::span<const AnnotationRecord> annotations,
                                 const std::map<std::string, std::string> &transcript_model, RubricKind kind,
                                 std::span<const std::string> models) {
    const auto &s = spec(kind);
    for (const auto &r : annotations)
        if (r.rubric == kind && !transcript_model.count(r.transcript_id))
            throw DataError(kModule, "annotation " + r.id + " refers to unknown transcript " + r.transcript_id);

    const auto finals = final_scores(annotations, kind);

    // model -> transcript id -> scores
    std::map<std::string, std::map<std::string, const std::map<std::string, int> *>> by_model;
    for (const auto &[tid, scores] : finals)
        by_model[transcript_model.at(tid)][tid] = &scores;

    std::set<std::string> expected(models.begin(), models.end());
    for (const auto &[tid, model] : transcript_model)
        expected.insert(model);

    AggregateResult result;
    result.table.rubric = kind;
    for (const auto &d : s.dimensions)
        result.table.columns.push_back(d.display);
    result.table.normalization = "mean/" + std::to_string(s.scale_max) + "*" +
                                 std::to_string(static_cast<int>(s.normalize_to));

    for (const auto &model : expected) {
        auto it = by_model.find(model);
        if (it == by_model.end()) {
            result.warnings.push_back("model " + model + " has no annotated transcripts; excluded");
            continue;
        }
        ScoreRow row;
        row.model = model;
        row.transcripts = it->second.size();
        double total = 0;
        for (const auto &d : s.dimensions) {
            double sum = 0;
            for (const auto &[tid, scores] : it->second)
                sum += scores->at(d.name);
            const double mean = sum / static_cast<double>(row.transcripts);
            const double value = mean / s.scale_max * s.normalize_to;
            row.values.push_back(value);
            total += value;
        }
        row.average = total / static_cast<double>(s.dimensions.size());
        result.table.rows.push_back(std::move(row));
    }
    return result;
}

// ---------------------------------------------------------------------------

double acc(std::span<const int> pred, std::span<const int> gold) {
    check_lengths(pred, gold);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        hit += pred[i] == gold[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double acc_soft(std::span<const int> pred, std::span<const int> gold, int tolerance) {
    check_lengths(pred, gold);
    if (tolerance < 0)
        throw ValidationError(kModule, "tolerance must be >= 0", "tolerance");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        hit += std::abs(pred[i] - gold[i]) <= tolerance;
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

std::vector<DimensionAccuracy> accuracy_by_dimension(std::span<const ScorerPrediction> predictions,
                                                     std::span<const AnnotationRecord> gold, int tolerance,
                                                     RubricKind kind) {
    const auto finals = final_scores(gold, kind);
    const auto &s = spec(kind);
    std::map<std::string, const ScorerPrediction *> by_transcript;
    for (const auto &p : predictions) {
        if (!by_transcript.emplace(p.transcript_id, &p).second)
            throw DataError(kModule, "two predictions for transcript " + p.transcript_id);
    }

    std::vector<DimensionAccuracy> out;
    std::vector<int> all_pred, all_gold;
    for (const auto &d : s.dimensions) {
        std::vector<int> pv, gv;
        for (const auto &[tid, p] : by_transcript) {
            auto g = finals.find(tid);
            if (g == finals.end())
                continue;
            auto ps = p->scores.find(d.name);
            auto gs = g->second.find(d.name);
            if (ps == p->scores.end() || gs == g->second.end())
                continue;
            pv.push_back(ps->second);
            gv.push_back(gs->second);
        }
        if (pv.empty())
            continue;
        out.push_back({d.name, pv.size(), acc(pv, gv), acc_soft(pv, gv, tolerance)});
        all_pred.insert(all_pred.end(), pv.begin(), pv.end());
        all_gold.insert(all_gold.end(), gv.begin(), gv.end());
    }
    if (all_pred.empty())
        throw ValidationError(kModule, "no prediction joins a gold annotation", "pred");
    out.push_back({"all", all_pred.size(), acc(all_pred, all_gold), acc_soft(all_pred, all_gold, tolerance)});
    return out;
}

// ---------------------------------------------------------------------------

std::map<std::string, WinStat> win_rate(std::span<const PairwiseJudgment> judgments,
                                        const std::map<std::string, std::string> &transcript_source) {
    if (judgments.empty())
        throw ValidationError(kModule, "win rate needs at least one judgment", "judgments");
    auto source_of = [&](const std::string &tid, const PairwiseJudgment &j) -> const std::string & {
        auto it = transcript_source.find(tid);
        if (it == transcript_source.end())
            throw DataError(kModule, "judgment " + j.id + " refers to unknown transcript " + tid);
        return it->second;
    };
    std::map<std::string, WinStat> out;
    for (const auto &j : judgments) {
        const auto &left = source_of(j.left_transcript_id, j);
        const auto &right = source_of(j.right_transcript_id, j);
        ++out[left].appearances;
        ++out[right].appearances;
        ++out[j.choice == Side::left ? left : right].wins;
    }
    for (auto &[name, stat] : out)
        stat.rate = static_cast<double>(stat.wins) / static_cast<double>(stat.appearances);
    return out;
}

} // namespace esceval::rubric
