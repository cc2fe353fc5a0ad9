#include "esceval/llm_gateway.hpp"
#include "esceval/store.hpp"

#include "esceval/error.hpp"

#include "httplib.h"

#include <cstdlib>
#include <fstream>
#include <thread>

namespace esceval::gateway {

using nlohmann::json;

std::string to_string(Role role) {
    switch (role) {
    case Role::system:
        return "system";
    case Role::user:
        return "user";
    case Role::assistant:
        return "assistant";
    }
    return "user";
}

Role parse_role(std::string_view text) {
    if (text == "system")
        return Role::system;
    if (text == "user")
        return Role::user;
    if (text == "assistant")
        return Role::assistant;
    throw ValidationError("llm_gateway", "unknown role '" + std::string(text) + "'", "role");
}

std::string to_string(FinishReason reason) {
    switch (reason) {
    case FinishReason::stop:
        return "stop";
    case FinishReason::length:
        return "length";
    case FinishReason::refusal:
        return "refusal";
    case FinishReason::error:
        return "error";
    }
    return "error";
}

FinishReason parse_finish_reason(std::string_view text) {
    if (text == "stop")
        return FinishReason::stop;
    if (text == "length")
        return FinishReason::length;
    if (text == "refusal")
        return FinishReason::refusal;
    if (text == "error")
        return FinishReason::error;
    throw ValidationError("llm_gateway", "unknown finish_reason '" + std::string(text) + "'", "finish_reason");
}

void validate(const ChatRequest &request) {
    if (request.messages.empty())
        throw ValidationError("llm_gateway", "request has no messages", "messages");
    for (std::size_t i = 0; i < request.messages.size(); ++i) {
        const auto &m = request.messages[i];
        if (m.content.empty())
            throw ValidationError("llm_gateway", "message " + std::to_string(i) + " has empty content", "content");
        if (m.role == Role::system && i != 0)
            throw ValidationError("llm_gateway", "system message only allowed at position 0", "messages");
    }
    if (request.temperature < 0.0)
        throw ValidationError("llm_gateway", "temperature must be >= 0", "temperature");
    if (request.max_turn_tokens <= 0)
        throw ValidationError("llm_gateway", "max_turn_tokens must be positive", "max_turn_tokens");
}

json request_json(const ChatRequest &request) {
    json messages = json::array();
    for (const auto &m : request.messages)
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    return {{"model", request.model_id},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_turn_tokens}};
}

std::string request_digest(const ChatRequest &request) { return sha256_hex(request_json(request).dump()); }

Attempt Attempt::success(std::string content, FinishReason reason, json raw) {
    Attempt a;
    a.status = Status::ok;
    a.response.content = std::move(content);
    a.response.finish_reason = reason;
    a.response.raw = std::move(raw);
    return a;
}

Attempt Attempt::transient_failure(std::string detail, json raw) {
    Attempt a;
    a.status = Status::transient;
    a.detail = std::move(detail);
    a.response.raw = std::move(raw);
    return a;
}

Attempt Attempt::fatal_failure(std::string detail, json raw) {
    Attempt a;
    a.status = Status::fatal;
    a.detail = std::move(detail);
    a.response.raw = std::move(raw);
    return a;
}

// --- scripted ---------------------------------------------------------------

Attempt ScriptedProvider::send(const ChatRequest &request) {
    std::lock_guard lock(mutex_);
    ++calls_;
    if (is_keyed_) {
        std::string key;
        for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
            if (it->role == Role::user) {
                key = it->content;
                break;
            }
        }
        if (auto found = keyed_.find(key); found != keyed_.end())
            return Attempt::success(found->second);
        if (keyed_fallback_)
            return Attempt::success(*keyed_fallback_);
        return Attempt::fatal_failure("no scripted response for key '" + key + "'");
    }
    if (ordered_.empty())
        return Attempt::fatal_failure("script exhausted");
    auto entry = std::move(ordered_.front());
    ordered_.pop_front();
    if (auto *text = std::get_if<std::string>(&entry))
        return Attempt::success(std::move(*text));
    const auto &failure = std::get<Failure>(entry);
    return failure.transient ? Attempt::transient_failure(failure.detail) : Attempt::fatal_failure(failure.detail);
}

std::size_t ScriptedProvider::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::size_t ScriptedProvider::remaining() const {
    std::lock_guard lock(mutex_);
    return ordered_.size();
}

std::shared_ptr<ScriptedProvider> make_scripted_provider(std::vector<ScriptedProvider::Entry> script) {
    if (script.empty())
        throw ValidationError("llm_gateway", "scripted provider needs a nonempty script", "script");
    auto p = std::make_shared<ScriptedProvider>();
    p->ordered_.assign(std::make_move_iterator(script.begin()), std::make_move_iterator(script.end()));
    return p;
}

std::shared_ptr<ScriptedProvider> make_scripted_provider(std::map<std::string, std::string> keyed,
                                                         std::optional<std::string> fallback) {
    if (keyed.empty() && !fallback)
        throw ValidationError("llm_gateway", "scripted provider needs a nonempty script", "script");
    auto p = std::make_shared<ScriptedProvider>();
    p->keyed_ = std::move(keyed);
    p->keyed_fallback_ = std::move(fallback);
    p->is_keyed_ = true;
    return p;
}

// --- configuration ----------------------------------------------------------

std::map<std::string, EndpointConfig> parse_endpoint_configs(const json &doc) {
    if (!doc.is_object())
        throw ValidationError("llm_gateway", "endpoint config must be an object keyed by alias");
    std::map<std::string, EndpointConfig> out;
    for (const auto &[alias, e] : doc.items()) {
        EndpointConfig c;
        c.alias = alias;
        try {
            c.base_url = e.at("base_url").get<std::string>();
            c.model_id = e.at("model_id").get<std::string>();
            c.credential_env = e.value("credential_env", "");
            c.request_cap = e.value("request_cap", 4);
            c.timeout = std::chrono::milliseconds(
                static_cast<long>(e.value("timeout_s", 60.0) * 1000.0));
        } catch (const json::exception &ex) {
            throw ValidationError("llm_gateway", "endpoint '" + alias + "': " + ex.what(), alias);
        }
        if (c.request_cap < 1)
            throw ValidationError("llm_gateway", "endpoint '" + alias + "': request_cap must be >= 1", alias);
        out.emplace(alias, std::move(c));
    }
    return out;
}

std::map<std::string, EndpointConfig> load_endpoint_configs(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("llm_gateway", "cannot read endpoint config " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception &ex) {
        throw ValidationError("llm_gateway", path + ": " + ex.what());
    }
    return parse_endpoint_configs(doc);
}

// --- http -------------------------------------------------------------------

HttpChatProvider::HttpChatProvider(EndpointConfig config) : config_(std::move(config)) {
    const auto &url = config_.base_url;
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ValidationError("llm_gateway", "base_url needs a scheme: " + url, "base_url");
    auto path_start = url.find('/', scheme_end + 3);
    scheme_host_port_ = url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/')
        path_prefix_.pop_back();
}

Attempt parse_chat_completion(const std::string &body) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::exception &) {
        return Attempt::fatal_failure("malformed provider payload (not JSON)", json(body));
    }
    try {
        const auto &choice = doc.at("choices").at(0);
        const auto &message = choice.at("message");
        std::string content = message.value("content", json(nullptr)).is_string()
                                  ? message.at("content").get<std::string>()
                                  : std::string{};
        std::string reason = "stop";
        if (choice.contains("finish_reason") && choice.at("finish_reason").is_string())
            reason = choice.at("finish_reason").get<std::string>();
        FinishReason fr = FinishReason::stop;
        if (reason == "length")
            fr = FinishReason::length;
        else if (reason == "content_filter" || reason == "refusal" ||
                 (message.contains("refusal") && message.at("refusal").is_string()))
            fr = FinishReason::refusal;
        if (fr == FinishReason::refusal && content.empty() && message.contains("refusal") &&
            message.at("refusal").is_string())
            content = message.at("refusal").get<std::string>();
        return Attempt::success(std::move(content), fr, std::move(doc));
    } catch (const json::exception &) {
        return Attempt::fatal_failure("malformed provider payload (missing choices[0].message)", std::move(doc));
    }
}

Attempt HttpChatProvider::send(const ChatRequest &request) {
    httplib::Client client(scheme_host_port_);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(request.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!config_.credential_env.empty()) {
        if (const char *key = std::getenv(config_.credential_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto body = request_json(request);
    if (body["model"].get<std::string>().empty())
        body["model"] = config_.model_id;

    auto res = client.Post(path_prefix_ + "/chat/completions", headers, body.dump(), "application/json");
    if (!res)
        return Attempt::transient_failure("transport error: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
        return Attempt::transient_failure("HTTP " + std::to_string(res->status), json(res->body));
    if (res->status != 200)
        return Attempt::fatal_failure("HTTP " + std::to_string(res->status), json(res->body));
    return parse_chat_completion(res->body);
}

// --- log --------------------------------------------------------------------

json to_json(const LogEntry &e) {
    return {{"timestamp", e.timestamp},
            {"alias", e.alias},
            {"request_digest", e.request_digest},
            {"request", e.request},
            {"response", e.response},
            {"finish_reason", to_string(e.finish_reason)},
            {"latency_ms", e.latency_ms},
            {"error", e.error}};
}

LogEntry log_entry_from_json(const json &j) {
    LogEntry e;
    e.timestamp = j.at("timestamp").get<std::string>();
    e.alias = j.at("alias").get<std::string>();
    e.request_digest = j.at("request_digest").get<std::string>();
    e.request = j.at("request");
    e.response = j.at("response").get<std::string>();
    e.finish_reason = parse_finish_reason(j.at("finish_reason").get<std::string>());
    e.latency_ms = j.at("latency_ms").get<long>();
    e.error = j.value("error", "");
    return e;
}

RequestLog::RequestLog(std::string path) : path_(std::move(path)) {}

void RequestLog::append(LogEntry entry) {
    std::lock_guard lock(mutex_);
    if (!path_.empty()) {
        store::append_json(path_, {"request_log", 1}, to_json(entry));
    }
    entries_.push_back(std::move(entry));
}

std::vector<LogEntry> RequestLog::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

std::size_t RequestLog::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

// --- endpoint ---------------------------------------------------------------

Endpoint::Endpoint(EndpointConfig config, std::shared_ptr<ChatProvider> provider, RetryPolicy retry)
    : config_(std::move(config)), provider_(std::move(provider)), retry_(std::move(retry)),
      slots_(std::make_unique<std::counting_semaphore<>>(std::max(1, config_.request_cap))) {
    if (!provider_)
        throw ValidationError("llm_gateway", "endpoint '" + config_.alias + "' has no provider");
    if (!retry_.sleep)
        retry_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::shared_ptr<Endpoint> make_scripted_endpoint(std::string alias, std::shared_ptr<ChatProvider> provider,
                                                 int retries) {
    EndpointConfig cfg;
    cfg.alias = alias;
    cfg.model_id = std::move(alias);
    cfg.base_url = "scripted://";
    RetryPolicy retry;
    retry.retries = retries;
    retry.base_delay = std::chrono::milliseconds{0};
    retry.sleep = [](std::chrono::milliseconds) {};
    return std::make_shared<Endpoint>(std::move(cfg), std::move(provider), std::move(retry));
}

std::shared_ptr<Endpoint> make_http_endpoint(EndpointConfig config, RetryPolicy retry) {
    auto provider = std::make_shared<HttpChatProvider>(config);
    return std::make_shared<Endpoint>(std::move(config), std::move(provider), std::move(retry));
}

ChatResponse complete(Endpoint &endpoint, const ChatRequest &request, RequestLog *log, const Clock &clock) {
    validate(request);
    ChatRequest effective = request;
    if (effective.model_id.empty())
        effective.model_id = endpoint.config().model_id;

    const auto &retry = endpoint.retry();
    const auto wall_start = std::chrono::steady_clock::now();
    const auto wall_budget = effective.timeout * (retry.retries + 1);
    const auto started = clock();

    ChatResponse result;
    std::string last_detail;
    json last_raw;
    int attempts = 0;
    bool done = false;
    {
        endpoint.slots_->acquire();
        struct Release {
            std::counting_semaphore<> &s;
            ~Release() { s.release(); }
        } release{*endpoint.slots_};

        auto delay = retry.base_delay;
        for (int attempt = 0; attempt <= retry.retries; ++attempt) {
            ++attempts;
            Attempt a = endpoint.provider().send(effective);
            if (a.status == Attempt::Status::ok) {
                result = std::move(a.response);
                done = true;
                break;
            }
            last_detail = std::move(a.detail);
            last_raw = std::move(a.response.raw);
            if (a.status == Attempt::Status::fatal || attempt == retry.retries)
                break;
            auto elapsed = std::chrono::steady_clock::now() - wall_start;
            if (elapsed + delay >= wall_budget)
                break;
            retry.sleep(delay);
            delay = std::chrono::milliseconds(static_cast<long>(static_cast<double>(delay.count()) * retry.multiplier));
        }
    }
    if (!done) {
        result = ChatResponse{};
        result.finish_reason = FinishReason::error;
        result.error = last_detail.empty() ? "provider failure" : last_detail;
        result.raw = std::move(last_raw);
    }
    result.attempts = attempts;
    const auto finished = clock();
    result.latency = std::chrono::duration_cast<std::chrono::milliseconds>(finished - started);

    if (log) {
        LogEntry e;
        e.timestamp = format_utc(started);
        e.alias = endpoint.alias();
        e.request_digest = request_digest(effective);
        e.request = request_json(effective);
        e.response = result.content;
        e.finish_reason = result.finish_reason;
        e.latency_ms = static_cast<long>(result.latency.count());
        e.error = result.error;
        log->append(std::move(e));
    }
    return result;
}

} // namespace esceval::gateway
