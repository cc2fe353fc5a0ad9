#include "esceval/cli.hpp"
#include "esceval/records.hpp"
#include "esceval/report.hpp"
#include "esceval/store.hpp"

#include "../support/agents.hpp"
#include "../support/paths.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace esceval;
using testpaths::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run esceval_cli(const TempDir &ws, std::vector<std::string> args) {
    args.insert(args.begin(), {"--workspace", ws.str()});
    std::ostringstream out, err;
    Run r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write(const std::string &path, const std::string &text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream(path, std::ios::binary) << text;
}

std::vector<fs::path> manifests(const TempDir &ws) {
    std::vector<fs::path> out;
    if (fs::exists(ws / "manifests"))
        for (const auto &e : fs::directory_iterator(ws / "manifests"))
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

sim::Transcript transcript(const std::string &id, const std::string &model) {
    sim::Transcript t;
    t.id = id;
    t.card_id = id.substr(0, id.find('@'));
    t.seeker_alias = "seeker";
    t.target_alias = model;
    for (int i = 0; i < 10; ++i)
        t.turns.push_back({i % 2 ? sim::Speaker::supporter : sim::Speaker::seeker, "turn " + std::to_string(i),
                           "2024-01-01T00:00:00.000Z"});
    return t;
}

// Simulation config with scripted seeker and targets.
nlohmann::json sim_config() {
    return {{"seeker", {{"endpoint", "seeker"}, {"variant", "zero_shot"}}},
            {"targets", nlohmann::json::array({{{"endpoint", "alpha"}}, {{"endpoint", "beta"}}})},
            {"dialogue", {{"turns", 5}}},
            {"scripted",
             {{"seeker", {{"fallback", "seeker line {n}"}}},
              {"alpha", {{"fallback", "alpha reply {n}"}}},
              {"beta", {{"replies", {{"seeker line 1", "beta opens"}}}, {"fallback", "beta reply {n}"}}}}}};
}

} // namespace

TEST(Cli, PipelineReplayMatchesAccounting) {
    TempDir ws;
    const auto pipeline = testpaths::data("fixtures/pipeline");
    auto r = esceval_cli(ws, {"extract", "--datasets", pipeline + "/datasets.json", "--replay",
                              pipeline + "/extraction.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = esceval_cli(ws, {"filter", "--replay", pipeline + "/filter.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = esceval_cli(ws, {"correct", "--decisions", pipeline + "/corrections.jsonl", "--taxonomy",
                         testpaths::data("taxonomy.tsv")});
    ASSERT_EQ(r.code, 0) << r.err;
    r = esceval_cli(ws, {"report", "--kind", "accounting", "--format", "csv"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(ws / "reports/accounting.csv");
    for (const char *n : {"3673", "2792", "1708", "2023", "1566", "1093", "2801"})
        EXPECT_NE(csv.find(n), std::string::npos) << n;
    EXPECT_EQ(store::load<rolecards::RoleCard>(ws / "cards/final.jsonl").size(), 2801u);

    r = esceval_cli(ws, {"select", "--quality", "high", "--lang", "zh"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(store::load<rolecards::RoleCard>(ws / "cards/eval.jsonl").size(), 324u);
    EXPECT_EQ(manifests(ws).size(), 5u);
}

TEST(Cli, TaxonomyLeafCountIsChecked) {
    TempDir ws;
    write(ws / "cards/filtered.jsonl", "");
    write(ws / "decisions.jsonl", "");
    auto r = esceval_cli(ws, {"correct", "--decisions", "decisions.jsonl", "--taxonomy",
                              testpaths::data("taxonomy.tsv"), "--expected-leaves", "37"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("35"), std::string::npos) << r.err;
}

TEST(Cli, SimulateResumesAndDryRunWritesNothing) {
    TempDir ws;
    std::vector<rolecards::RoleCard> cards;
    for (int i = 0; i < 3; ++i)
        cards.push_back(agents::card("c" + std::to_string(i)));
    store::save(cards, ws / "cards/eval.jsonl");
    write(ws / "sim.json", sim_config().dump(2));

    auto r = esceval_cli(ws, {"--dry-run", "--config", "sim.json", "simulate"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("6 dialogue(s) pending"), std::string::npos) << r.out;
    EXPECT_FALSE(fs::exists(ws / "transcripts"));
    EXPECT_FALSE(fs::exists(ws / "manifests"));

    r = esceval_cli(ws, {"--config", "sim.json", "simulate", "--max-new", "2", "--parallelism", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("ran 2 dialogue(s)"), std::string::npos) << r.out;
    r = esceval_cli(ws, {"--config", "sim.json", "simulate"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("ran 4 dialogue(s) (0 aborted), skipped 2"), std::string::npos) << r.out;

    auto beta = store::load<sim::Transcript>(ws / "transcripts/beta/transcripts.jsonl");
    ASSERT_EQ(beta.size(), 3u);
    for (const auto &t : beta) {
        EXPECT_NO_THROW(sim::validate_transcript(t));
        EXPECT_EQ(t.turns[0].text, "seeker line 1");
        EXPECT_EQ(t.turns[1].text, "beta opens");
        EXPECT_EQ(t.turns[9].text, "beta reply 5");
    }
    r = esceval_cli(ws, {"--dry-run", "--config", "sim.json", "simulate"});
    EXPECT_NE(r.out.find("0 dialogue(s) pending, 6 already stored"), std::string::npos) << r.out;
}

TEST(Cli, SimulateNeedsKnownEndpoints) {
    TempDir ws;
    store::save(std::vector<rolecards::RoleCard>{agents::card("c0")}, ws / "cards/eval.jsonl");
    auto cfg = sim_config();
    cfg["targets"].push_back({{"endpoint", "ghost"}});
    write(ws / "sim.json", cfg.dump());
    auto r = esceval_cli(ws, {"--config", "sim.json", "simulate"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("ghost"), std::string::npos);
    EXPECT_EQ(esceval_cli(ws, {"simulate"}).code, 2);
}

TEST(Cli, MetricsFromFixtures) {
    TempDir ws;
    const auto dir = testpaths::fixture("metrics");
    auto r = esceval_cli(ws, {"metrics", "--transcripts", dir + "/transcripts.jsonl", "--references",
                              dir + "/references.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto recs = store::load<metrics::MetricRecord>(ws / "metrics/metrics.jsonl");
    ASSERT_EQ(recs.size(), 3u);
    for (const auto &m : recs)
        if (m.transcript_id == "card-en-1@alpha") {
            EXPECT_DOUBLE_EQ(m.values.bleu4, 1.0);
            EXPECT_DOUBLE_EQ(m.values.rougeL, 1.0);
        }
}

TEST(Cli, AggregateMatchesPrecomputedTable) {
    TempDir ws;
    const auto dir = testpaths::fixture("aggregate");
    std::vector<sim::Transcript> ts;
    const auto models = nlohmann::json::parse(slurp(dir + "/transcript_models.json"));
    for (const auto &[id, model] : models.items())
        ts.push_back(transcript(id, model.get<std::string>()));
    store::save(ts, ws / "transcripts/all.jsonl");
    auto r = esceval_cli(ws, {"aggregate", "--annotations", dir + "/annotations.jsonl", "--format", "csv"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(ws / "reports/scores-eval7.csv");
    auto expected = nlohmann::json::parse(slurp(dir + "/expected.json"));
    for (const auto &row : expected["rows"]) {
        std::string line = ",," + row["model"].get<std::string>() + "," + std::to_string(row["transcripts"].get<int>());
        for (const auto &cell : row["display"])
            line += "," + cell.get<std::string>();
        EXPECT_NE(csv.find(line), std::string::npos) << line << "\n" << csv;
    }
    EXPECT_EQ(csv.find("unrated"), std::string::npos);
}

TEST(Cli, AccuracyReport) {
    TempDir ws;
    std::vector<rubric::AnnotationRecord> gold;
    std::vector<rubric::ScorerPrediction> pred;
    const int p[] = {3, 1, 0}, g[] = {4, 1, 2};
    for (int i = 0; i < 3; ++i) {
        rubric::AnnotationRecord a;
        a.id = "g" + std::to_string(i);
        a.transcript_id = "t" + std::to_string(i);
        a.annotator_id = "ann1";
        a.timestamp = "2024-01-01T00:00:00.000Z";
        rubric::ScorerPrediction s{a.transcript_id, "scorer", {}};
        for (const auto &d : rubric::dimension_names(rubric::RubricKind::eval7)) {
            a.scores[d] = g[i];
            s.scores[d] = p[i];
        }
        gold.push_back(a);
        pred.push_back(s);
    }
    store::save(gold, ws / "annotations/annotations.jsonl");
    store::save(pred, ws / "pred.jsonl");
    auto r = esceval_cli(ws, {"accuracy", "--pred", "pred.jsonl", "--format", "csv", "--out", "acc.csv"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(slurp(ws / "acc.csv").find("empathy,3,33.33,66.67"), std::string::npos) << slurp(ws / "acc.csv");
    r = esceval_cli(ws, {"accuracy", "--pred", "pred.jsonl", "--soft", "0", "--format", "csv", "--out", "hard.csv"});
    EXPECT_NE(slurp(ws / "hard.csv").find("empathy,3,33.33,33.33"), std::string::npos);
}

TEST(Cli, CorrelateAndWinrate) {
    TempDir ws;
    std::vector<sim::Transcript> ts;
    std::vector<metrics::MetricRecord> ms;
    std::vector<rubric::AnnotationRecord> anns;
    for (int i = 0; i < 6; ++i) {
        const auto model = i % 2 ? "beta" : "alpha";
        auto t = transcript("c" + std::to_string(i) + "@" + model, model);
        ts.push_back(t);
        metrics::MetricVector v{0.1 * i, 0.05 * i, 0.01 * i, 0.5, 0.6, 0.2 + 0.1 * (i % 3), 0.3};
        ms.push_back({t.id, t.card_id, model, v});
        rubric::AnnotationRecord a{"a" + std::to_string(i), t.id, "ann1", rubric::RubricKind::eval7,
                                   rubric::Stage::first, {}, "2024-01-01T00:00:00.000Z"};
        for (const auto &d : rubric::dimension_names(rubric::RubricKind::eval7))
            a.scores[d] = i % 5;
        anns.push_back(a);
    }
    store::save(ts, ws / "transcripts/all.jsonl");
    store::save(ms, ws / "metrics/metrics.jsonl");
    store::save(anns, ws / "annotations/annotations.jsonl");

    auto r = esceval_cli(ws, {"correlate", "--level", "sample"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto recs = store::load<stats::CorrelationRecord>(ws / "reports/correlation-sample.jsonl");
    EXPECT_EQ(recs.size(), 7u * report::default_correlation_columns().size());
    // Distinct-1 is constant, so undefined coefficients are warned about and stored as null
    EXPECT_NE(r.err.find("Distinct-1"), std::string::npos);
    for (const auto &c : recs)
        if (c.metric == "Distinct-1")
            EXPECT_FALSE(c.spearman);
    EXPECT_TRUE(fs::exists(ws / "reports/correlation-sample.md"));

    std::vector<rubric::PairwiseJudgment> js;
    for (int i = 0; i < 3; ++i)
        js.push_back({"j" + std::to_string(i), ts[2 * i].id, ts[2 * i + 1].id, "ann1",
                      i == 0 ? rubric::Side::right : rubric::Side::left});
    store::save(js, ws / "annotations/pairwise.jsonl");
    r = esceval_cli(ws, {"winrate", "--format", "csv", "--out", "win.csv"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto win = slurp(ws / "win.csv");
    EXPECT_NE(win.find("alpha,2,3,66.67"), std::string::npos) << win;
    EXPECT_NE(win.find("beta,1,3,33.33"), std::string::npos) << win;
}

TEST(Cli, ExitCodes) {
    TempDir ws;
    EXPECT_EQ(esceval_cli(ws, {}).code, 1);
    EXPECT_EQ(esceval_cli(ws, {"frobnicate"}).code, 1);
    EXPECT_EQ(esceval_cli(ws, {"aggregate", "--rubric", "eval9"}).code, 1);
    EXPECT_EQ(esceval_cli(ws, {"--help"}).code, 0);

    auto r = esceval_cli(ws, {"metrics", "--references", "missing.jsonl"});
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.err.find("error [cli]"), std::string::npos);

    write(ws / "annotations/annotations.jsonl",
          "{\"schema\":\"annotation\",\"version\":1}\n"
          "{\"id\":\"a\",\"transcript_id\":\"t@m\",\"annotator_id\":\"x\",\"rubric\":\"eval7\",\"stage\":\"first\","
          "\"timestamp\":\"2024-01-01T00:00:00.000Z\",\"scores\":{\"fluency\":9}}\n");
    store::save(std::vector<sim::Transcript>{transcript("t@m", "m")}, ws / "transcripts/all.jsonl");
    r = esceval_cli(ws, {"aggregate"});
    EXPECT_EQ(r.code, 2) << r.err;

    write(ws / "bad.json", "{not json");
    EXPECT_EQ(esceval_cli(ws, {"--config", "bad.json", "simulate"}).code, 2);
}

TEST(Cli, ManifestRecordsInputsAndOutputs) {
    TempDir ws;
    const auto dir = testpaths::fixture("metrics");
    fs::copy(dir + "/transcripts.jsonl", ws / "t.jsonl");
    fs::copy(dir + "/references.jsonl", ws / "r.jsonl");
    auto r = esceval_cli(ws, {"--deterministic-clock", "metrics", "--transcripts", "t.jsonl", "--references",
                              "r.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto files = manifests(ws);
    ASSERT_EQ(files.size(), 1u);
    EXPECT_EQ(files[0].filename(), "metrics-2024-01-01T00-00-00-000Z.json");
    auto m = nlohmann::json::parse(slurp(files[0].string()));
    EXPECT_EQ(m["command"], "metrics");
    EXPECT_EQ(m["exit_code"], 0);
    EXPECT_EQ(m["inputs"]["t.jsonl"], sha256_file(ws / "t.jsonl"));
    EXPECT_EQ(m["outputs"]["metrics/metrics.jsonl"], sha256_file(ws / "metrics/metrics.jsonl"));
    EXPECT_EQ(m["tool_version"], cli::kToolVersion);

    TempDir failed;
    esceval_cli(failed, {"--deterministic-clock", "metrics", "--references", "nope.jsonl"});
    auto fm = nlohmann::json::parse(slurp(manifests(failed).at(0).string()));
    EXPECT_EQ(fm["exit_code"], 4);
    EXPECT_NE(fm["error"].get<std::string>().find("input not found"), std::string::npos);
}

TEST(Cli, DeterministicReportsAreByteIdentical) {
    const auto dir = testpaths::fixture("metrics");
    std::vector<std::string> outputs;
    for (int i = 0; i < 2; ++i) {
        TempDir ws;
        fs::copy(dir + "/transcripts.jsonl", ws / "t.jsonl");
        fs::copy(dir + "/references.jsonl", ws / "r.jsonl");
        ASSERT_EQ(esceval_cli(ws, {"--deterministic-clock", "metrics", "--transcripts", "t.jsonl", "--references",
                                   "r.jsonl"})
                      .code,
                  0);
        auto manifest = nlohmann::json::parse(slurp(manifests(ws).at(0).string()));
        manifest.erase("args"); // holds the scratch path
        outputs.push_back(slurp(ws / "metrics/metrics.jsonl") + manifest.dump());
    }
    EXPECT_EQ(outputs[0], outputs[1]);
}
