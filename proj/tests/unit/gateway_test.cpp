#include "esceval/error.hpp"
#include "esceval/llm_gateway.hpp"

#include "httplib.h"

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

using namespace esceval;
using namespace esceval::gateway;

namespace {

ChatRequest hello(std::string text = "hello") {
    ChatRequest r;
    r.messages = {{Role::system, "be kind"}, {Role::user, std::move(text)}};
    return r;
}

RetryPolicy recording(std::vector<long> &sleeps, int retries = 3) {
    RetryPolicy p;
    p.retries = retries;
    p.base_delay = std::chrono::milliseconds(100);
    p.sleep = [&sleeps](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
    return p;
}

} // namespace

TEST(Request, Validation) {
    EXPECT_NO_THROW(validate(hello()));
    ChatRequest empty;
    EXPECT_THROW(validate(empty), ValidationError);
    auto late = hello();
    late.messages.push_back({Role::system, "again"});
    EXPECT_THROW(validate(late), ValidationError);
    auto blank = hello("");
    EXPECT_THROW(validate(blank), ValidationError);
}

TEST(Request, DigestIsStableAndSensitive) {
    EXPECT_EQ(request_digest(hello()), request_digest(hello()));
    EXPECT_NE(request_digest(hello()), request_digest(hello("hi")));
    auto warm = hello();
    warm.temperature = 0.7;
    EXPECT_NE(request_digest(hello()), request_digest(warm));
    EXPECT_EQ(request_digest(hello()).size(), 64u);
}

TEST(Scripted, OrderedAndKeyed) {
    auto ordered = make_scripted_provider(std::vector<ScriptedProvider::Entry>{"one", "two"});
    EXPECT_EQ(ordered->send(hello()).response.content, "one");
    EXPECT_EQ(ordered->send(hello()).response.content, "two");
    EXPECT_EQ(ordered->send(hello()).status, Attempt::Status::fatal);
    EXPECT_EQ(ordered->calls(), 3u);

    auto keyed = make_scripted_provider(std::map<std::string, std::string>{{"hello", "hi there"}}, "fallback");
    EXPECT_EQ(keyed->send(hello()).response.content, "hi there");
    EXPECT_EQ(keyed->send(hello("other")).response.content, "fallback");
    EXPECT_THROW(make_scripted_provider(std::vector<ScriptedProvider::Entry>{}), ValidationError);
}

TEST(Complete, RetriesTransientWithBackoff) {
    std::vector<long> sleeps;
    auto provider = make_scripted_provider(std::vector<ScriptedProvider::Entry>{
        ScriptedProvider::Failure{}, ScriptedProvider::Failure{}, std::string("finally")});
    Endpoint ep({"m", "", "", "", 2, std::chrono::seconds(1)}, provider, recording(sleeps));
    RequestLog log;
    auto r = complete(ep, hello(), &log);
    EXPECT_EQ(r.content, "finally");
    EXPECT_EQ(r.finish_reason, FinishReason::stop);
    EXPECT_EQ(r.attempts, 3);
    EXPECT_EQ(sleeps, (std::vector<long>{100, 200}));
    ASSERT_EQ(log.size(), 1u);
    EXPECT_EQ(log.entries()[0].response, "finally");
    EXPECT_EQ(log.entries()[0].request_digest, request_digest(hello()));
}

TEST(Complete, GivesUpAndReportsError) {
    std::vector<long> sleeps;
    auto provider = make_scripted_provider(std::vector<ScriptedProvider::Entry>(
        5, ScriptedProvider::Failure{true, "503"}));
    Endpoint ep({"m", "", "", "", 1, std::chrono::seconds(1)}, provider, recording(sleeps, 2));
    RequestLog log;
    auto r = complete(ep, hello(), &log);
    EXPECT_EQ(r.finish_reason, FinishReason::error);
    EXPECT_FALSE(r.error.empty());
    EXPECT_EQ(r.attempts, 3);
    EXPECT_EQ(log.entries()[0].finish_reason, FinishReason::error);
}

TEST(Complete, FatalIsNotRetried) {
    std::vector<long> sleeps;
    auto provider = make_scripted_provider(std::vector<ScriptedProvider::Entry>{
        ScriptedProvider::Failure{false, "bad"}, std::string("never")});
    Endpoint ep({"m", "", "", "", 1, std::chrono::seconds(1)}, provider, recording(sleeps));
    auto r = complete(ep, hello());
    EXPECT_EQ(r.finish_reason, FinishReason::error);
    EXPECT_TRUE(sleeps.empty());
    EXPECT_EQ(provider->remaining(), 1u);
}

TEST(Complete, InvalidRequestThrows) {
    auto ep = make_scripted_endpoint("m", make_scripted_provider(std::vector<ScriptedProvider::Entry>{"x"}));
    ChatRequest empty;
    EXPECT_THROW(complete(*ep, empty), ValidationError);
}

TEST(Complete, RequestCapBoundsConcurrency) {
    std::atomic<int> in_flight{0}, peak{0};
    auto provider = std::make_shared<FunctionProvider>([&](const ChatRequest &) {
        int now = ++in_flight;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        --in_flight;
        return Attempt::success("ok");
    });
    Endpoint ep({"m", "", "", "", 2, std::chrono::seconds(1)}, provider);
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i)
        threads.emplace_back([&] { complete(ep, hello()); });
    for (auto &t : threads)
        t.join();
    EXPECT_LE(peak.load(), 2);
}

TEST(ChatCompletion, Parsing) {
    auto ok = parse_chat_completion(R"({"choices":[{"message":{"role":"assistant","content":"hey"},"finish_reason":"stop"}]})");
    EXPECT_EQ(ok.status, Attempt::Status::ok);
    EXPECT_EQ(ok.response.content, "hey");
    auto len = parse_chat_completion(R"({"choices":[{"message":{"content":"cut"},"finish_reason":"length"}]})");
    EXPECT_EQ(len.response.finish_reason, FinishReason::length);
    auto refusal = parse_chat_completion(R"({"choices":[{"message":{"content":null,"refusal":"I can't"}}]})");
    EXPECT_EQ(refusal.response.finish_reason, FinishReason::refusal);
    EXPECT_EQ(refusal.response.content, "I can't");
    auto null_reason = parse_chat_completion(R"({"choices":[{"message":{"content":"x"},"finish_reason":null}]})");
    EXPECT_EQ(null_reason.response.finish_reason, FinishReason::stop);
    EXPECT_EQ(parse_chat_completion("not json").status, Attempt::Status::fatal);
    EXPECT_EQ(parse_chat_completion(R"({"choices":[]})").status, Attempt::Status::fatal);
}

TEST(EndpointConfigs, Parse) {
    auto cfg = parse_endpoint_configs(nlohmann::json::parse(
        R"({"gpt":{"base_url":"https://api.example.com/v1","model_id":"gpt-4","credential_env":"KEY","timeout_s":5}})"));
    EXPECT_EQ(cfg.at("gpt").model_id, "gpt-4");
    EXPECT_EQ(cfg.at("gpt").timeout, std::chrono::seconds(5));
    EXPECT_THROW(parse_endpoint_configs(nlohmann::json::parse(R"({"x":{"model_id":"m"}})")), ValidationError);
    EXPECT_THROW(parse_endpoint_configs(nlohmann::json::parse(
                     R"({"x":{"base_url":"http://a","model_id":"m","request_cap":0}})")),
                 ValidationError);
}

TEST(Http, ChatCompletionsRoundTripAndRetry) {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::string seen_auth, seen_model;
    server.Post("/v1/chat/completions", [&](const httplib::Request &req, httplib::Response &res) {
        if (hits++ == 0) {
            res.status = 429;
            return;
        }
        seen_auth = req.get_header_value("Authorization");
        auto body = nlohmann::json::parse(req.body);
        seen_model = body["model"];
        auto last = body["messages"].back()["content"].get<std::string>();
        res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", "echo: " + last}}}, {"finish_reason", "stop"}}}}}
                            .dump(),
                        "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ::setenv("ESCEVAL_TEST_KEY", "secret", 1);
    RetryPolicy fast;
    fast.base_delay = std::chrono::milliseconds(1);
    auto ep = make_http_endpoint(
        {"live", "http://127.0.0.1:" + std::to_string(port) + "/v1", "test-model", "ESCEVAL_TEST_KEY", 1,
         std::chrono::seconds(5)},
        fast);
    auto r = complete(*ep, hello());
    server.stop();
    t.join();
    EXPECT_EQ(r.content, "echo: hello");
    EXPECT_EQ(r.attempts, 2);
    EXPECT_EQ(seen_auth, "Bearer secret");
    EXPECT_EQ(seen_model, "test-model");
}

TEST(Http, UnreachableIsErrorNotThrow) {
    RetryPolicy none;
    none.retries = 0;
    auto ep = make_http_endpoint({"dead", "http://127.0.0.1:1/v1", "m", "", 1, std::chrono::milliseconds(200)}, none);
    auto r = complete(*ep, hello());
    EXPECT_EQ(r.finish_reason, FinishReason::error);
}
