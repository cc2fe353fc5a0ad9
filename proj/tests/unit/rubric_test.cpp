#include "esceval/records.hpp"
#include "esceval/rubric.hpp"
#include "esceval/store.hpp"

#include "../support/paths.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>

using namespace esceval;
using namespace esceval::rubric;

namespace {

AnnotationRecord record(std::string tid, int v, Stage stage = Stage::first, std::string who = "ann1") {
    AnnotationRecord r;
    r.id = tid + "-" + to_string(stage);
    r.transcript_id = std::move(tid);
    r.annotator_id = std::move(who);
    r.stage = stage;
    for (const auto &d : dimension_names(RubricKind::eval7))
        r.scores[d] = v;
    r.timestamp = "2024-01-01T00:00:00.000Z";
    return r;
}

std::string field_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const ValidationError &ex) {
        return ex.field();
    }
    return "<none>";
}

} // namespace

TEST(Spec, Eval7AndRoleplay6) {
    const auto &e = spec(RubricKind::eval7);
    EXPECT_EQ(e.scale_max, 4);
    EXPECT_EQ(dimension_names(RubricKind::eval7),
              (std::vector<std::string>{"fluency", "expression", "empathy", "information", "skillful", "humanoid",
                                        "overall"}));
    const auto &r = spec(RubricKind::roleplay6);
    EXPECT_EQ(r.scale_max, 2);
    EXPECT_EQ(r.dimensions.size(), 6u);
    for (const auto &d : e.dimensions)
        EXPECT_EQ(d.levels.size(), 5u);
}

TEST(ValidateAnnotation, RangeAndMissing) {
    auto ok = record("t1", 4);
    EXPECT_NO_THROW(validate_annotation(ok));
    auto high = ok;
    high.scores["fluency"] = 5;
    EXPECT_EQ(field_of([&] { validate_annotation(high); }), "fluency");
    auto missing = ok;
    missing.scores.erase("overall");
    EXPECT_EQ(field_of([&] { validate_annotation(missing); }), "overall");
    auto extra = ok;
    extra.scores["diversity"] = 1;
    EXPECT_THROW(validate_annotation(extra), ValidationError);
    std::set<std::string> known{"t2"};
    EXPECT_THROW(validate_annotation(ok, &known), ValidationError);
}

TEST(AnnotationJson, RoundTripAndStrictKeys) {
    auto r = record("t1", 2, Stage::review);
    EXPECT_EQ(annotation_from_json(to_json(r)), r);
    auto j = to_json(r);
    j["extra"] = 1;
    EXPECT_THROW(annotation_from_json(j), ValidationError);
}

TEST(Aggregate, WorkedExamples) {
    std::vector<AnnotationRecord> all4{record("a1", 4), record("a2", 4)};
    std::map<std::string, std::string> models{{"a1", "m"}, {"a2", "m"}};
    auto t = aggregate_scores(all4, models).table;
    ASSERT_EQ(t.rows.size(), 1u);
    for (double v : t.rows[0].values)
        EXPECT_DOUBLE_EQ(v, 100.0);
    EXPECT_DOUBLE_EQ(t.rows[0].average, 100.0);

    std::vector<AnnotationRecord> mixed{record("a1", 4), record("a2", 2)};
    EXPECT_DOUBLE_EQ(aggregate_scores(mixed, models).table.rows[0].values[0], 75.0);
}

TEST(Aggregate, ReviewSupersedesOnlyItsCells) {
    std::vector<AnnotationRecord> base{record("a1", 2), record("a2", 2), record("b1", 3)};
    std::map<std::string, std::string> models{{"a1", "m"}, {"a2", "m"}, {"b1", "n"}};
    auto before = aggregate_scores(base, models).table;
    auto review = record("a1", 2, Stage::review, "ann2");
    review.scores["empathy"] = 4;
    base.push_back(review);
    auto after = aggregate_scores(base, models).table;
    EXPECT_EQ(after.rows[1].values, before.rows[1].values);
    for (std::size_t i = 0; i < 7; ++i)
        EXPECT_DOUBLE_EQ(after.rows[0].values[i], i == 2 ? 75.0 : before.rows[0].values[i]);
}

TEST(Aggregate, OrderInvariantAndExcludesUnrated) {
    std::vector<AnnotationRecord> rows{record("a1", 1), record("a2", 3), record("b1", 0, Stage::first),
                                       record("b1", 4, Stage::review, "ann2")};
    std::map<std::string, std::string> models{{"a1", "m"}, {"a2", "m"}, {"b1", "n"}, {"c1", "z"}};
    auto first = aggregate_scores(rows, models);
    EXPECT_EQ(first.table.rows.size(), 2u);
    EXPECT_EQ(first.warnings.size(), 1u);
    std::mt19937 rng(1);
    for (int i = 0; i < 10; ++i) {
        std::shuffle(rows.begin(), rows.end(), rng);
        auto again = aggregate_scores(rows, models).table;
        for (std::size_t r = 0; r < again.rows.size(); ++r)
            EXPECT_EQ(again.rows[r].values, first.table.rows[r].values);
    }
}

TEST(Aggregate, UnknownTranscriptIsDataError) {
    std::vector<AnnotationRecord> rows{record("zz", 1)};
    EXPECT_THROW(aggregate_scores(rows, {}), DataError);
}

TEST(Aggregate, DuplicateStageIsDataError) {
    std::vector<AnnotationRecord> rows{record("a1", 1), record("a1", 2)};
    EXPECT_THROW(aggregate_scores(rows, {{"a1", "m"}}), DataError);
}

TEST(Aggregate, FixtureMatchesOracleTable) {
    auto annotations = store::load<AnnotationRecord>(testpaths::fixture("aggregate/annotations.jsonl"));
    std::ifstream tm(testpaths::fixture("aggregate/transcript_models.json"));
    auto models = nlohmann::json::parse(tm).get<std::map<std::string, std::string>>();
    std::ifstream ex(testpaths::fixture("aggregate/expected.json"));
    auto expected = nlohmann::json::parse(ex);
    auto result = aggregate_scores(annotations, models);
    ASSERT_EQ(result.table.rows.size(), expected["rows"].size());
    for (std::size_t i = 0; i < result.table.rows.size(); ++i) {
        const auto &row = result.table.rows[i];
        const auto &e = expected["rows"][i];
        EXPECT_EQ(row.model, e["model"]);
        EXPECT_EQ(row.transcripts, e["transcripts"].get<std::size_t>());
        for (std::size_t d = 0; d < row.values.size(); ++d)
            EXPECT_NEAR(row.values[d], e["values"][expected["columns"][d].get<std::string>()].get<double>(), 1e-9);
        EXPECT_NEAR(row.average, e["average"].get<double>(), 1e-9);
        double mean = 0;
        for (double v : row.values)
            mean += v / 7;
        EXPECT_NEAR(row.average, mean, 1e-9);
    }
    EXPECT_EQ(result.warnings.size(), 1u);
}

TEST(Accuracy, WorkedExamples) {
    std::vector<int> p{3, 1, 0}, g{4, 1, 2};
    EXPECT_DOUBLE_EQ(acc(p, g), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(acc_soft(p, g), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(acc(g, g), 1.0);
    EXPECT_DOUBLE_EQ(acc_soft(g, g), 1.0);
    std::vector<int> a{0, 4}, b{4, 0};
    EXPECT_EQ(acc(a, b), 0.0);
    EXPECT_EQ(acc_soft(a, b), 0.0);
    std::vector<int> shorter{1};
    EXPECT_THROW(acc(shorter, g), ValidationError);
    EXPECT_THROW(acc_soft(p, g, -1), ValidationError);
}

TEST(Accuracy, SoftDominatesAndZeroToleranceIsExact) {
    std::mt19937 rng(12);
    std::uniform_int_distribution<int> v(0, 4), len(1, 30), tol(0, 4);
    for (int i = 0; i < 500; ++i) {
        int n = len(rng);
        std::vector<int> p(n), g(n);
        for (int k = 0; k < n; ++k) {
            p[k] = v(rng);
            g[k] = v(rng);
        }
        EXPECT_GE(acc_soft(p, g, tol(rng)), acc(p, g));
        EXPECT_EQ(acc_soft(p, g, 0), acc(p, g));
    }
}

TEST(Accuracy, ByDimensionJoinsOnFinalScores) {
    std::vector<AnnotationRecord> gold{record("t1", 2), record("t2", 4)};
    std::vector<ScorerPrediction> preds{{"t1", "scorer-x", gold[0].scores}, {"t2", "scorer-x", gold[0].scores}};
    auto rows = accuracy_by_dimension(preds, gold, 1);
    ASSERT_EQ(rows.size(), 8u);
    EXPECT_EQ(rows[0].dimension, "fluency");
    EXPECT_EQ(rows[0].n, 2u);
    EXPECT_DOUBLE_EQ(rows[0].acc, 0.5);
    EXPECT_DOUBLE_EQ(rows[0].acc_soft, 0.5);
    EXPECT_EQ(rows.back().dimension, "all");
    EXPECT_EQ(rows.back().n, 14u);
}

TEST(WinRate, CountsPerAppearance) {
    std::map<std::string, std::string> source{{"a1", "A"}, {"a2", "A"}, {"b1", "B"}, {"s1", "source"}};
    std::vector<PairwiseJudgment> j{{"1", "a1", "b1", "x", Side::left, std::string(kPairwiseCriterion)},
                                    {"2", "b1", "a2", "x", Side::right, std::string(kPairwiseCriterion)},
                                    {"3", "a1", "s1", "x", Side::left, std::string(kPairwiseCriterion)},
                                    {"4", "s1", "a2", "x", Side::left, std::string(kPairwiseCriterion)}};
    auto w = win_rate(j, source);
    EXPECT_EQ(w.at("A").wins, 3u);
    EXPECT_EQ(w.at("A").appearances, 4u);
    EXPECT_DOUBLE_EQ(w.at("A").rate, 0.75);
    EXPECT_EQ(w.count("C"), 0u);
    EXPECT_THROW(win_rate(std::vector<PairwiseJudgment>{}, source), ValidationError);
    std::vector<PairwiseJudgment> bad{{"5", "a1", "zz", "x", Side::left, std::string(kPairwiseCriterion)}};
    EXPECT_THROW(win_rate(bad, source), DataError);
}

TEST(WinRate, SymmetricFixtureIsHalf) {
    std::vector<std::string> ids{"a", "b", "c", "d"};
    std::map<std::string, std::string> source{{"a", "A"}, {"b", "B"}, {"c", "C"}, {"d", "source"}};
    std::vector<PairwiseJudgment> j;
    int n = 0;
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t k = i + 1; k < ids.size(); ++k) {
            j.push_back({std::to_string(n++), ids[i], ids[k], "x", Side::left, std::string(kPairwiseCriterion)});
            j.push_back({std::to_string(n++), ids[k], ids[i], "x", Side::right, std::string(kPairwiseCriterion)});
        }
    // each pair judged in both directions, picking opposite contestants
    for (std::size_t i = 1; i < j.size(); i += 2)
        j[i].choice = Side::left;
    for (const auto &[name, s] : win_rate(j, source))
        EXPECT_DOUBLE_EQ(s.rate, 0.5) << name;
}

TEST(Pairwise, ValidateAndRoundTrip) {
    PairwiseJudgment p{"p1", "a", "b", "ann", Side::right, std::string(kPairwiseCriterion)};
    EXPECT_EQ(pairwise_from_json(to_json(p)), p);
    p.right_transcript_id = "a";
    EXPECT_THROW(validate_pairwise(p), ValidationError);
}
