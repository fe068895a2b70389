#pragma once

// Text-generation gateway. Every model call goes through TextGen; scripted and
// replay backends are pure functions of the request, the live backend speaks
// the chat-completion wire format.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "codriver/util.hpp"

namespace codriver {

enum class RoleTag { Driver, Evaluator, Reflector, Communicator };
enum class BackendKind { Live, Scripted, Replay };

std::string to_string(RoleTag role);
RoleTag role_from_string(std::string_view s);
std::string to_string(BackendKind kind);

double default_temperature(RoleTag role);

inline constexpr const char* kDefaultModel = "gpt-3.5-turbo";

struct GenRequest {
    RoleTag role = RoleTag::Driver;
    std::string prompt;
    double temperature = 0.0;
    int max_tokens = 512;
    std::string model_name = kDefaultModel;
};

GenRequest make_request(RoleTag role, std::string prompt, std::string model = kDefaultModel);
void validate(const GenRequest& request);

struct GenResponse {
    std::string text;
    BackendKind backend = BackendKind::Scripted;
    bool cached = false;
    std::int64_t latency_ms = 0;
};

class BackendError : public Error {
public:
    using Error::Error;
};

class CacheMiss : public BackendError {
public:
    explicit CacheMiss(const std::string& key) : BackendError("replay cache miss: " + key), key_(key) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

class TextGen {
public:
    virtual ~TextGen() = default;
    virtual GenResponse generate(const GenRequest& request) = 0;
    virtual BackendKind kind() const = 0;
};

// Hex FNV-1a over (role, model, temperature, prompt); ignores max_tokens.
std::string cache_key(const GenRequest& request);

// ---- Scripted ----

struct ScriptRule {
    enum class Match { Substring, Regex };

    Match match = Match::Substring;
    std::string pattern;
    std::optional<RoleTag> role;
    std::string response;
    int priority = 0;
    // Extra substrings that must all be present in the window.
    std::vector<std::string> require;
    // Optional window: matching only sees the prompt text after the first
    // `after` marker and before the next `before` marker.
    std::string after;
    std::string before;
    bool fail = false;  // raise a BackendError instead of answering
    std::size_t index = 0;  // definition order, 0-based
    std::shared_ptr<const std::regex> compiled;

    // Returns the response text if this rule fires.
    std::optional<std::string> apply(const GenRequest& request) const;
};

struct Script {
    std::vector<ScriptRule> rules;  // priority desc, then definition order
    std::string default_response;
};

// JSON list of rules, or {"default": ..., "rules": [...]}. An empty file is an empty script.
Script load_script(const std::string& path);
Script parse_script(const nlohmann::json& j, std::string_view origin = "script");

class ScriptedBackend : public TextGen {
public:
    explicit ScriptedBackend(Script script) : script_(std::move(script)) {}
    ScriptedBackend(std::vector<ScriptRule> rules, std::string default_response);

    GenResponse generate(const GenRequest& request) override;
    BackendKind kind() const override { return BackendKind::Scripted; }
    const Script& script() const { return script_; }

private:
    Script script_;
};

// ---- Replay ----

class ReplayBackend : public TextGen {
public:
    enum class Mode { Record, Strict };

    // Record mode delegates misses to `delegate` and stores the reply.
    ReplayBackend(std::string cache_dir, Mode mode, std::shared_ptr<TextGen> delegate = nullptr);

    GenResponse generate(const GenRequest& request) override;
    BackendKind kind() const override { return BackendKind::Replay; }
    std::string entry_path(const std::string& key) const;
    void store(const GenRequest& request, const std::string& text) const;

private:
    std::string dir_;
    Mode mode_;
    std::shared_ptr<TextGen> delegate_;
};

// ---- Live ----

struct RetryPolicy {
    int max_attempts = 5;
    double base_delay_s = 1.0;
    double factor = 2.0;
};

struct LiveConfig {
    std::string base_url;  // e.g. https://api.openai.com/v1
    std::string api_key;
    RetryPolicy retry;
    int max_in_flight = 4;
    int requests_per_minute = 60;
    double timeout_s = 60.0;
    std::string system_message;  // optional system turn

    // CODRIVER_BASE_URL (default https://api.openai.com/v1), CODRIVER_API_KEY or OPENAI_API_KEY.
    static LiveConfig from_env();
};

class LiveBackend : public TextGen {
public:
    using Sleeper = std::function<void(std::chrono::duration<double>)>;

    explicit LiveBackend(LiveConfig config, Sleeper sleeper = nullptr);

    GenResponse generate(const GenRequest& request) override;
    BackendKind kind() const override { return BackendKind::Live; }

    static nlohmann::json request_body(const GenRequest& request, const std::string& system_message);
    static std::string extract_content(const std::string& body);
    static bool retryable_status(int status) { return status == 429 || status >= 500; }

private:
    void acquire();
    void release();

    LiveConfig config_;
    Sleeper sleep_;
    std::mutex mutex_;
    std::condition_variable cv_;
    int in_flight_ = 0;
    std::deque<std::chrono::steady_clock::time_point> recent_;
};

struct Exchange {
    RoleTag role = RoleTag::Driver;
    std::string key;
    std::string text;
};

// Thread-safe sink shared by several recorders so exchanges keep call order.
class ExchangeLog {
public:
    void push(Exchange e);
    std::vector<Exchange> take();

private:
    std::mutex mutex_;
    std::vector<Exchange> items_;
};

// Wraps a backend and records every successful exchange.
class RecordingTextGen : public TextGen {
public:
    RecordingTextGen(std::shared_ptr<TextGen> inner, std::shared_ptr<ExchangeLog> sink)
        : inner_(std::move(inner)), sink_(std::move(sink)) {}

    GenResponse generate(const GenRequest& request) override;
    BackendKind kind() const override { return inner_->kind(); }

private:
    std::shared_ptr<TextGen> inner_;
    std::shared_ptr<ExchangeLog> sink_;
};

// One backend per role; unbound roles fall back to the default.
class BackendSet {
public:
    BackendSet() = default;
    explicit BackendSet(std::shared_ptr<TextGen> fallback) : default_(std::move(fallback)) {}

    void bind(RoleTag role, std::shared_ptr<TextGen> backend) { by_role_[role] = std::move(backend); }
    void set_default(std::shared_ptr<TextGen> backend) { default_ = std::move(backend); }
    TextGen& for_role(RoleTag role) const;
    std::shared_ptr<TextGen> shared_for_role(RoleTag role) const;
    std::string model = kDefaultModel;

private:
    std::map<RoleTag, std::shared_ptr<TextGen>> by_role_;
    std::shared_ptr<TextGen> default_;
};

}  // namespace codriver
