#pragma once

#include "esceval/util.hpp"

#include "json.hpp"

#include <chrono>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <variant>
#include <vector>

namespace esceval::gateway {

enum class Role { system, user, assistant };

std::string to_string(Role role);
Role parse_role(std::string_view text);

struct ChatMessage {
    Role role = Role::user;
    std::string content;

    bool operator==(const ChatMessage &) const = default;
};

struct ChatRequest {
    std::string model_id;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_turn_tokens = 512;
    std::chrono::milliseconds timeout{60'000};
};

// Throws ValidationError: empty message list, empty content, or a system
// message anywhere but position 0.
void validate(const ChatRequest &request);

// Canonical JSON of the parts of a request that determine the reply.
nlohmann::json request_json(const ChatRequest &request);
std::string request_digest(const ChatRequest &request);

enum class FinishReason { stop, length, refusal, error };

std::string to_string(FinishReason reason);
FinishReason parse_finish_reason(std::string_view text);

struct ChatResponse {
    std::string content;
    FinishReason finish_reason = FinishReason::stop;
    std::chrono::milliseconds latency{0};
    nlohmann::json raw;
    std::string error; // set iff finish_reason == error
    int attempts = 0;
};

// One provider call. `transient` failures are retried by the gateway;
// `fatal` ones (malformed payload, exhausted script) are not.
struct Attempt {
    enum class Status { ok, transient, fatal };
    Status status = Status::ok;
    ChatResponse response;
    std::string detail;

    static Attempt success(std::string content, FinishReason reason = FinishReason::stop, nlohmann::json raw = {});
    static Attempt transient_failure(std::string detail, nlohmann::json raw = {});
    static Attempt fatal_failure(std::string detail, nlohmann::json raw = {});
};

class ChatProvider {
  public:
    virtual ~ChatProvider() = default;
    virtual Attempt send(const ChatRequest &request) = 0;
};

// Deterministic provider for tests and replays. Ordered scripts are consumed
// front to back; keyed scripts answer by exact match on the last user message.
class ScriptedProvider final : public ChatProvider {
  public:
    struct Failure {
        bool transient = true;
        std::string detail = "scripted failure";
    };
    using Entry = std::variant<std::string, Failure>;

    Attempt send(const ChatRequest &request) override;

    std::size_t calls() const;
    std::size_t remaining() const;

  private:
    friend std::shared_ptr<ScriptedProvider> make_scripted_provider(std::vector<Entry>);
    friend std::shared_ptr<ScriptedProvider> make_scripted_provider(std::map<std::string, std::string>,
                                                                    std::optional<std::string>);

    mutable std::mutex mutex_;
    std::deque<Entry> ordered_;
    std::map<std::string, std::string> keyed_;
    std::optional<std::string> keyed_fallback_;
    bool is_keyed_ = false;
    std::size_t calls_ = 0;
};

// Throws ValidationError on an empty script.
std::shared_ptr<ScriptedProvider> make_scripted_provider(std::vector<ScriptedProvider::Entry> script);
std::shared_ptr<ScriptedProvider> make_scripted_provider(std::map<std::string, std::string> keyed,
                                                         std::optional<std::string> fallback = std::nullopt);

// Wraps a callable; handy for simulated agents whose reply depends on history.
class FunctionProvider final : public ChatProvider {
  public:
    using Fn = std::function<Attempt(const ChatRequest &)>;
    explicit FunctionProvider(Fn fn) : fn_(std::move(fn)) {}
    Attempt send(const ChatRequest &request) override { return fn_(request); }

  private:
    Fn fn_;
};

struct EndpointConfig {
    std::string alias;
    std::string base_url; // e.g. http://127.0.0.1:8000/v1
    std::string model_id;
    std::string credential_env; // name of the env var holding the API key
    int request_cap = 4;
    std::chrono::milliseconds timeout{60'000};
};

std::map<std::string, EndpointConfig> load_endpoint_configs(const std::string &path);
std::map<std::string, EndpointConfig> parse_endpoint_configs(const nlohmann::json &doc);

// Chat-completions over HTTP(S). 429/5xx and transport errors are transient.
class HttpChatProvider final : public ChatProvider {
  public:
    explicit HttpChatProvider(EndpointConfig config);
    Attempt send(const ChatRequest &request) override;

  private:
    EndpointConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

// Parses a chat-completions response body; exposed for tests.
Attempt parse_chat_completion(const std::string &body);

struct RetryPolicy {
    int retries = 3;
    std::chrono::milliseconds base_delay{500};
    double multiplier = 2.0;
    std::function<void(std::chrono::milliseconds)> sleep;
};

struct LogEntry {
    std::string timestamp;
    std::string alias;
    std::string request_digest;
    nlohmann::json request;
    std::string response;
    FinishReason finish_reason = FinishReason::stop;
    long latency_ms = 0;
    std::string error;
};

nlohmann::json to_json(const LogEntry &entry);
LogEntry log_entry_from_json(const nlohmann::json &j);

// Append-only request log. With a path, every entry is also appended to the
// file as one JSON line.
class RequestLog {
  public:
    RequestLog() = default;
    explicit RequestLog(std::string path);

    void append(LogEntry entry);
    std::vector<LogEntry> entries() const;
    std::size_t size() const;

  private:
    mutable std::mutex mutex_;
    std::vector<LogEntry> entries_;
    std::string path_;
};

// A provider plus its configuration: the handle callers pass to complete().
// Shareable across threads; at most `request_cap` calls are in flight.
class Endpoint {
  public:
    Endpoint(EndpointConfig config, std::shared_ptr<ChatProvider> provider, RetryPolicy retry = {});

    const EndpointConfig &config() const { return config_; }
    const std::string &alias() const { return config_.alias; }
    ChatProvider &provider() { return *provider_; }
    const RetryPolicy &retry() const { return retry_; }

  private:
    friend ChatResponse complete(Endpoint &, const ChatRequest &, RequestLog *, const Clock &);

    EndpointConfig config_;
    std::shared_ptr<ChatProvider> provider_;
    RetryPolicy retry_;
    std::unique_ptr<std::counting_semaphore<>> slots_;
};

// Scripted endpoint with zero backoff, for tests and dry runs.
std::shared_ptr<Endpoint> make_scripted_endpoint(std::string alias, std::shared_ptr<ChatProvider> provider,
                                                 int retries = 0);
std::shared_ptr<Endpoint> make_http_endpoint(EndpointConfig config, RetryPolicy retry = {});

// Sends the request, retrying transient failures with exponential backoff.
// Never throws for provider failures: those come back as finish_reason=error.
// Appends exactly one entry to `log` when given.
ChatResponse complete(Endpoint &endpoint, const ChatRequest &request, RequestLog *log = nullptr,
                      const Clock &clock = system_clock());

} // namespace esceval::gateway
