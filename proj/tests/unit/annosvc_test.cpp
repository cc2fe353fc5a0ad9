#include "esceval/annosvc.hpp"
#include "esceval/records.hpp"
#include "esceval/store.hpp"

#include "../support/paths.hpp"

#include "httplib.h"

#include <gtest/gtest.h>

using namespace esceval;
using namespace esceval::annosvc;
using rubric::RubricKind;
using rubric::Stage;
using testpaths::TempDir;

namespace {

sim::Transcript transcript(const std::string &card, const std::string &model) {
    sim::Transcript t;
    t.id = sim::transcript_id(card, model);
    t.card_id = card;
    t.seeker_alias = "seeker";
    t.target_alias = model;
    for (int i = 0; i < 10; ++i)
        t.turns.push_back({i % 2 ? sim::Speaker::supporter : sim::Speaker::seeker,
                           (i % 2 ? "reply " : "line ") + std::to_string(i), "2024-01-01T00:00:00.000Z"});
    return t;
}

std::vector<sim::Transcript> corpus(int n) {
    std::vector<sim::Transcript> out;
    for (int i = 0; i < n; ++i)
        out.push_back(transcript("card-" + std::to_string(i), i % 2 ? "beta" : "alpha"));
    return out;
}

struct ManualClock {
    std::shared_ptr<TimePoint> now = std::make_shared<TimePoint>(parse_utc("2024-03-01T09:00:00.000Z"));
    Clock fn() const {
        return [p = now] { return *p; };
    }
    void advance(std::chrono::milliseconds d) { *now += d; }
};

CoordinatorConfig config(const ManualClock &clock, std::string workspace = {}) {
    CoordinatorConfig c;
    c.annotators = {"ann1", "ann2", "ann3"};
    c.clock = clock.fn();
    c.seed = 5;
    c.workspace = std::move(workspace);
    return c;
}

rubric::AnnotationRecord scores_for(const TaskLease &lease, int value = 3) {
    rubric::AnnotationRecord r;
    r.rubric = lease.rubric;
    r.stage = lease.stage;
    for (const auto &name : rubric::dimension_names(lease.rubric))
        r.scores[name] = value;
    return r;
}

int status_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const ServiceError &ex) {
        return ex.status();
    }
    return 0;
}

std::string field_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const ServiceError &ex) {
        return ex.field();
    }
    return {};
}

} // namespace

TEST(Coordinator, LeasesOldestTaskFirst) {
    ManualClock clock;
    Coordinator c(config(clock), corpus(3));
    auto a = c.next_task("ann1", RubricKind::eval7);
    ASSERT_TRUE(a);
    EXPECT_EQ(a->transcript_id, "card-0@alpha");
    EXPECT_EQ(a->stage, Stage::first);
    EXPECT_FALSE(a->first_stage_scores);
    auto b = c.next_task("ann2", RubricKind::eval7);
    EXPECT_EQ(b->transcript_id, "card-1@beta");
    // same annotator asking again gets its open lease back
    EXPECT_EQ(c.next_task("ann1", RubricKind::eval7)->lease_id, a->lease_id);
}

TEST(Coordinator, ReviewGoesToADifferentAnnotator) {
    ManualClock clock;
    Coordinator c(config(clock), corpus(1));
    auto first = c.next_task("ann1", RubricKind::eval7);
    c.submit_rating(first->lease_id, scores_for(*first, 2));
    EXPECT_FALSE(c.next_task("ann1", RubricKind::eval7));
    auto review = c.next_task("ann2", RubricKind::eval7);
    ASSERT_TRUE(review);
    EXPECT_EQ(review->stage, Stage::review);
    ASSERT_TRUE(review->first_stage_scores);
    EXPECT_EQ(review->first_stage_scores->at("empathy"), 2);
    c.submit_rating(review->lease_id, scores_for(*review, 3));
    EXPECT_FALSE(c.next_task("ann3", RubricKind::eval7));
    auto p = c.progress();
    EXPECT_EQ(p.first_stage_done, 1u);
    EXPECT_EQ(p.review_done, 1u);
    EXPECT_EQ(p.by_annotator["ann1"].first, 1u);
    EXPECT_EQ(p.by_annotator["ann2"].review, 1u);
    EXPECT_EQ(p.by_model["alpha"].review, 1u);
}

TEST(Coordinator, ExpiredLeaseIsRequeued) {
    ManualClock clock;
    Coordinator c(config(clock), corpus(1));
    auto a = c.next_task("ann1", RubricKind::eval7);
    EXPECT_FALSE(c.next_task("ann2", RubricKind::eval7));
    EXPECT_EQ(c.progress().leased, 1u);
    clock.advance(std::chrono::minutes(30));
    EXPECT_EQ(c.progress().leased, 0u);
    auto b = c.next_task("ann2", RubricKind::eval7);
    ASSERT_TRUE(b);
    EXPECT_EQ(b->transcript_id, a->transcript_id);
    EXPECT_NE(b->lease_id, a->lease_id);
    EXPECT_EQ(status_of([&] { c.submit_rating(a->lease_id, scores_for(*a)); }), 409);
    EXPECT_EQ(c.submit_rating(b->lease_id, scores_for(*b)).duplicate, false);
}

TEST(Coordinator, ResubmitIsIdempotent) {
    ManualClock clock;
    Coordinator c(config(clock), corpus(2));
    auto a = c.next_task("ann1", RubricKind::eval7);
    auto first = c.submit_rating(a->lease_id, scores_for(*a, 3));
    EXPECT_FALSE(first.duplicate);
    EXPECT_EQ(first.record_id, "ann-" + a->lease_id);
    auto again = c.submit_rating(a->lease_id, scores_for(*a, 3));
    EXPECT_TRUE(again.duplicate);
    EXPECT_EQ(again.record_id, first.record_id);
    EXPECT_EQ(status_of([&] { c.submit_rating(a->lease_id, scores_for(*a, 1)); }), 409);
    EXPECT_EQ(c.annotations().size(), 1u);
}

TEST(Coordinator, RejectsBadSubmissions) {
    ManualClock clock;
    Coordinator c(config(clock), corpus(1));
    auto a = c.next_task("ann1", RubricKind::eval7);
    auto bad = scores_for(*a);
    bad.scores["empathy"] = 7;
    EXPECT_EQ(status_of([&] { c.submit_rating(a->lease_id, bad); }), 422);
    EXPECT_EQ(field_of([&] { c.submit_rating(a->lease_id, bad); }), "empathy");
    auto wrong_stage = scores_for(*a);
    wrong_stage.stage = Stage::review;
    EXPECT_EQ(field_of([&] { c.submit_rating(a->lease_id, wrong_stage); }), "stage");
    EXPECT_EQ(status_of([&] { c.submit_rating("L999", scores_for(*a)); }), 404);
    EXPECT_EQ(status_of([&] { c.next_task("mallory", RubricKind::eval7); }), 403);
    // the lease survives a rejected submission
    EXPECT_FALSE(c.submit_rating(a->lease_id, scores_for(*a)).duplicate);
}

TEST(Coordinator, RubricsAreSeparateQueues) {
    ManualClock clock;
    Coordinator c(config(clock), corpus(1), {RubricKind::eval7, RubricKind::roleplay6});
    auto a = c.next_task("ann1", RubricKind::eval7);
    auto b = c.next_task("ann1", RubricKind::roleplay6);
    ASSERT_TRUE(a && b);
    EXPECT_NE(a->lease_id, b->lease_id);
    EXPECT_EQ(b->rubric, RubricKind::roleplay6);
    EXPECT_EQ(c.progress().tasks, 2u);
}

TEST(Coordinator, PairSidesResolveToTrueContestants) {
    ManualClock clock;
    auto ts = corpus(2);
    std::vector<PairTask> pairs;
    for (int i = 0; i < 16; ++i) {
        ts.push_back(transcript("pc" + std::to_string(i), "left-model"));
        ts.push_back(transcript("pc" + std::to_string(i), "right-model"));
        pairs.push_back({"pair" + std::to_string(i), ts[ts.size() - 2].id, ts.back().id});
    }
    auto cfg = config(clock);
    for (int i = 0; i < 16; ++i)
        cfg.annotators.insert("p" + std::to_string(i));
    Coordinator c(cfg, ts, {RubricKind::eval7}, pairs);
    int swapped = 0;
    for (int i = 0; i < 16; ++i) {
        const auto who = "p" + std::to_string(i);
        auto lease = c.next_pair(who);
        ASSERT_TRUE(lease);
        swapped += lease->swapped;
        // always pick whatever shows on the left
        c.submit_pairwise(lease->lease_id, who, rubric::Side::left);
        const auto j = c.judgments().back();
        EXPECT_EQ(j.left_transcript_id.find("left-model") != std::string::npos, true);
        const auto &chosen = j.choice == rubric::Side::left ? j.left_transcript_id : j.right_transcript_id;
        EXPECT_EQ(chosen, lease->display_left);
    }
    EXPECT_GT(swapped, 0);
    EXPECT_LT(swapped, 16);
    EXPECT_FALSE(c.next_pair("p0"));
    EXPECT_EQ(c.progress().pairwise_done, 16u);
    EXPECT_EQ(status_of([&] { c.submit_pairwise("P9999", "p0", rubric::Side::left); }), 404);
}

TEST(Coordinator, PairResubmitAndWrongAnnotator) {
    ManualClock clock;
    auto ts = corpus(2);
    Coordinator c(config(clock), ts, {RubricKind::eval7}, {{"x", ts[0].id, ts[1].id}});
    auto lease = c.next_pair("ann1");
    EXPECT_EQ(status_of([&] { c.submit_pairwise(lease->lease_id, "ann2", rubric::Side::left); }), 422);
    EXPECT_FALSE(c.submit_pairwise(lease->lease_id, "ann1", rubric::Side::right).duplicate);
    EXPECT_TRUE(c.submit_pairwise(lease->lease_id, "ann1", rubric::Side::right).duplicate);
    EXPECT_EQ(status_of([&] { c.submit_pairwise(lease->lease_id, "ann1", rubric::Side::left); }), 409);
}

TEST(Coordinator, RestoresFromWorkspace) {
    TempDir dir;
    ManualClock clock;
    auto ts = corpus(2);
    {
        Coordinator c(config(clock, dir.str()), ts, {RubricKind::eval7}, {{"x", ts[0].id, ts[1].id}});
        auto a = c.next_task("ann1", RubricKind::eval7);
        c.submit_rating(a->lease_id, scores_for(*a));
        auto p = c.next_pair("ann2");
        c.submit_pairwise(p->lease_id, "ann2", rubric::Side::left);
    }
    Coordinator again(config(clock, dir.str()), ts, {RubricKind::eval7}, {{"x", ts[0].id, ts[1].id}});
    auto p = again.progress();
    EXPECT_EQ(p.first_stage_done, 1u);
    EXPECT_EQ(p.pairwise_done, 1u);
    EXPECT_FALSE(again.next_pair("ann1"));
    // ann1 already rated card-0, so gets card-1 first stage
    auto next = again.next_task("ann1", RubricKind::eval7);
    EXPECT_EQ(next->transcript_id, "card-1@beta");
    EXPECT_EQ(next->stage, Stage::first);
    EXPECT_EQ(store::load<rubric::AnnotationRecord>(dir / "annotations/annotations.jsonl").size(), 1u);
}

TEST(Coordinator, RejectsBadConstruction) {
    ManualClock clock;
    auto ts = corpus(2);
    ts.push_back(ts.front());
    EXPECT_THROW(Coordinator(config(clock), ts), DataError);
    EXPECT_THROW(Coordinator(config(clock), corpus(1), {RubricKind::eval7}, {{"x", "card-0@alpha", "nope"}}),
                 DataError);
    auto cfg = config(clock);
    cfg.lease_duration = std::chrono::milliseconds(0);
    EXPECT_THROW(Coordinator(cfg, corpus(1)), ValidationError);
}

class AnnoHttp : public ::testing::Test {
  protected:
    void SetUp() override {
        ts = corpus(2);
        coord = std::make_unique<Coordinator>(config(clock), ts, std::vector<RubricKind>{RubricKind::eval7},
                                              std::vector<PairTask>{{"x", ts[0].id, ts[1].id}});
        ServerConfig sc;
        sc.cors_origin = "http://ui.local";
        server = std::make_unique<Server>(*coord, sc);
        port = server->start();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
    }
    void TearDown() override { server->stop(); }

    ManualClock clock;
    std::vector<sim::Transcript> ts;
    std::unique_ptr<Coordinator> coord;
    std::unique_ptr<Server> server;
    std::unique_ptr<httplib::Client> client;
    int port = 0;
};

TEST_F(AnnoHttp, RatingRoundTrip) {
    auto res = client->Get("/tasks/next?annotator=ann1&rubric=eval7");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://ui.local");
    auto lease = nlohmann::json::parse(res->body);
    EXPECT_EQ(lease["transcript_id"], "card-0@alpha");
    EXPECT_EQ(lease["transcript"]["turns"].size(), 10u);
    EXPECT_EQ(lease["rubric_spec"]["dimensions"].size(), 7u);

    nlohmann::json scores;
    for (const auto &d : rubric::dimension_names(RubricKind::eval7))
        scores[d] = 2;
    nlohmann::json body = {{"lease_id", lease["lease_id"]},
                           {"record", {{"rubric", "eval7"}, {"stage", "first"}, {"scores", scores}}}};
    auto posted = client->Post("/ratings", body.dump(), "application/json");
    ASSERT_EQ(posted->status, 200);
    EXPECT_EQ(nlohmann::json::parse(posted->body)["status"], "stored");
    posted = client->Post("/ratings", body.dump(), "application/json");
    EXPECT_EQ(nlohmann::json::parse(posted->body)["status"], "duplicate");

    body["record"]["scores"]["empathy"] = 7;
    posted = client->Post("/ratings", body.dump(), "application/json");
    EXPECT_EQ(posted->status, 409);

    auto prog = nlohmann::json::parse(client->Get("/progress")->body);
    EXPECT_EQ(prog["first_stage_done"], 1);
    EXPECT_EQ(prog["review_done"], 0);
}

TEST_F(AnnoHttp, ValidationErrorsNameTheField) {
    auto lease = nlohmann::json::parse(client->Get("/tasks/next?annotator=ann1")->body);
    nlohmann::json body = {{"lease_id", lease["lease_id"]},
                           {"record", {{"rubric", "eval7"}, {"stage", "first"}, {"scores", {{"empathy", 7}}}}}};
    auto res = client->Post("/ratings", body.dump(), "application/json");
    EXPECT_EQ(res->status, 422);
    EXPECT_EQ(nlohmann::json::parse(res->body)["field"], "fluency");
    EXPECT_EQ(client->Post("/ratings", "not json", "application/json")->status, 400);
    EXPECT_EQ(client->Get("/tasks/next")->status, 400);
    EXPECT_EQ(client->Get("/tasks/next?annotator=mallory")->status, 403);
}

TEST_F(AnnoHttp, EmptyQueueAnswers204) {
    for (const char *who : {"ann1", "ann2"}) {
        auto lease = nlohmann::json::parse(client->Get(std::string("/tasks/next?annotator=") + who)->body);
        EXPECT_EQ(lease["stage"], "first");
    }
    EXPECT_EQ(client->Get("/tasks/next?annotator=ann3")->status, 204);
}

TEST_F(AnnoHttp, PairwiseHidesIdentities) {
    auto res = client->Get("/pairs/next?annotator=ann2");
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(res->body.find("alpha"), std::string::npos);
    EXPECT_EQ(res->body.find("beta"), std::string::npos);
    auto lease = nlohmann::json::parse(res->body);
    EXPECT_EQ(lease["left"]["turns"].size(), 10u);
    nlohmann::json body = {{"lease_id", lease["lease_id"]}, {"annotator_id", "ann2"}, {"choice", "right"}};
    auto posted = client->Post("/pairwise", body.dump(), "application/json");
    ASSERT_EQ(posted->status, 200);
    EXPECT_EQ(coord->judgments().size(), 1u);
    EXPECT_EQ(client->Get("/pairs/next?annotator=ann2")->status, 204);
}

TEST_F(AnnoHttp, TranscriptsRubricsAndPreflight) {
    auto res = client->Get("/transcripts/card-1@beta");
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(nlohmann::json::parse(res->body)["target_alias"], "beta");
    EXPECT_EQ(client->Get("/transcripts/none")->status, 404);
    auto rubrics = nlohmann::json::parse(client->Get("/rubrics")->body);
    ASSERT_EQ(rubrics.size(), 2u);
    EXPECT_EQ(rubrics[1]["dimensions"].size(), 6u);
    auto pre = client->Options("/ratings");
    ASSERT_TRUE(pre);
    EXPECT_EQ(pre->status, 204);
    EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Methods"), "GET, POST, OPTIONS");
}
