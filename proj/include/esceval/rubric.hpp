#pragma once

#include "json.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace esceval::rubric {

enum class RubricKind { eval7, roleplay6 };
enum class Stage { first, review };

std::string to_string(RubricKind kind);
RubricKind parse_rubric(std::string_view text);
std::string to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct Dimension {
    std::string name;    // canonical key, e.g. "skillful"
    std::string display; // column header, e.g. "Skillful"
    // Help text per score level, index = score.
    std::vector<std::string> levels;
};

struct RubricSpec {
    RubricKind kind;
    int scale_max;
    double normalize_to; // table value = mean / scale_max * normalize_to
    std::vector<Dimension> dimensions; // table column order
};

const RubricSpec &spec(RubricKind kind);
std::vector<std::string> dimension_names(RubricKind kind);
nlohmann::json spec_to_json(const RubricSpec &s);

struct AnnotationRecord {
    std::string id;
    std::string transcript_id;
    std::string annotator_id;
    RubricKind rubric = RubricKind::eval7;
    Stage stage = Stage::first;
    std::map<std::string, int> scores;
    std::string timestamp;

    bool operator==(const AnnotationRecord &) const = default;
};

nlohmann::json to_json(const AnnotationRecord &r);
AnnotationRecord annotation_from_json(const nlohmann::json &j);

// Throws ValidationError whose field() names the first violation: an empty
// id field, then the dimensions in rubric order (missing or out of range),
// then any key the rubric does not define. With `known_transcripts`, an
// unknown transcript id is rejected as field "transcript_id".
const AnnotationRecord &validate_annotation(const AnnotationRecord &r,
                                            const std::set<std::string> *known_transcripts = nullptr);

enum class Side { left, right };
std::string to_string(Side s);
Side parse_side(std::string_view text);

inline constexpr std::string_view kPairwiseCriterion =
    "Which dialogue resembles a human-human conversation more closely?";

struct PairwiseJudgment {
    std::string id;
    std::string left_transcript_id;
    std::string right_transcript_id;
    std::string annotator_id;
    Side choice = Side::left;
    std::string criterion{kPairwiseCriterion};

    bool operator==(const PairwiseJudgment &) const = default;
};

nlohmann::json to_json(const PairwiseJudgment &p);
PairwiseJudgment pairwise_from_json(const nlohmann::json &j);
void validate_pairwise(const PairwiseJudgment &p);

// Automatic scorer output, one per transcript.
struct ScorerPrediction {
    std::string transcript_id;
    std::string scorer;
    std::map<std::string, int> scores;

    bool operator==(const ScorerPrediction &) const = default;
};

nlohmann::json to_json(const ScorerPrediction &p);
ScorerPrediction prediction_from_json(const nlohmann::json &j);

// ---------------------------------------------------------------------------
// Aggregation

// Final per-transcript scores for one rubric: the review record wins over the
// first-stage record. Two records for the same (transcript, stage) are a
// DataError. Records of other rubrics are ignored.
std::map<std::string, std::map<std::string, int>> final_scores(std::span<const AnnotationRecord> annotations,
                                                               RubricKind kind);

struct ScoreRow {
    std::string model;
    std::size_t transcripts = 0;
    std::vector<double> values; // normalized, one per dimension, unrounded
    double average = 0;
};

struct ScoreTable {
    RubricKind rubric = RubricKind::eval7;
    std::vector<std::string> columns; // display names, without Average
    std::vector<ScoreRow> rows;       // sorted by model alias
    std::string normalization;        // label for exports
};

struct AggregateResult {
    ScoreTable table;
    std::vector<std::string> warnings;
};

// `transcript_model` maps transcript id -> model alias; an annotation naming
// a transcript missing from it is a DataError. Models listed in `models` (or
// appearing in the map) without any annotated transcript are left out with a
// warning.
AggregateResult aggregate_scores(std::span<const AnnotationRecord> annotations,
                                 const std::map<std::string, std::string> &transcript_model,
                                 RubricKind kind = RubricKind::eval7, std::span<const std::string> models = {});

// ---------------------------------------------------------------------------
// Scorer accuracy

double acc(std::span<const int> pred, std::span<const int> gold);
double acc_soft(std::span<const int> pred, std::span<const int> gold, int tolerance = 1);

struct DimensionAccuracy {
    std::string dimension;
    std::size_t n = 0;
    double acc = 0;
    double acc_soft = 0;
};

// Predictions are joined with final gold scores on transcript id. The last
// row ("all") pools every dimension.
std::vector<DimensionAccuracy> accuracy_by_dimension(std::span<const ScorerPrediction> predictions,
                                                     std::span<const AnnotationRecord> gold, int tolerance = 1,
                                                     RubricKind kind = RubricKind::eval7);

// ---------------------------------------------------------------------------
// Win rate

struct WinStat {
    std::size_t wins = 0;
    std::size_t appearances = 0;
    double rate = 0;

    bool operator==(const WinStat &) const = default;
};

// `transcript_source` maps transcript id -> contestant (model alias or
// "source"). Throws DataError for unknown transcripts, ValidationError for an
// empty judgment list.
std::map<std::string, WinStat> win_rate(std::span<const PairwiseJudgment> judgments,
                                        const std::map<std::string, std::string> &transcript_source);

} // namespace esceval::rubric
