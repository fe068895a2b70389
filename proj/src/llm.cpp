#include "codriver/llm.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <httplib.h>

namespace codriver {

using nlohmann::json;

std::string to_string(RoleTag role) {
    switch (role) {
        case RoleTag::Driver: return "driver";
        case RoleTag::Evaluator: return "evaluator";
        case RoleTag::Reflector: return "reflector";
        case RoleTag::Communicator: return "communicator";
    }
    return "driver";
}

RoleTag role_from_string(std::string_view s) {
    for (RoleTag r : {RoleTag::Driver, RoleTag::Evaluator, RoleTag::Reflector, RoleTag::Communicator})
        if (iequals(s, to_string(r))) return r;
    throw ConfigError(fmt::format("unknown role '{}'", s));
}

std::string to_string(BackendKind kind) {
    switch (kind) {
        case BackendKind::Live: return "live";
        case BackendKind::Scripted: return "scripted";
        case BackendKind::Replay: return "replay";
    }
    return "scripted";
}

double default_temperature(RoleTag role) { return role == RoleTag::Communicator ? 0.7 : 0.0; }

GenRequest make_request(RoleTag role, std::string prompt, std::string model) {
    GenRequest r;
    r.role = role;
    r.prompt = std::move(prompt);
    r.temperature = default_temperature(role);
    r.model_name = std::move(model);
    return r;
}

void validate(const GenRequest& request) {
    if (request.prompt.empty()) throw ValidationError("empty prompt");
    if (!(request.temperature >= 0.0 && request.temperature <= 2.0))
        throw ValidationError(fmt::format("temperature {} outside [0, 2]", request.temperature));
}

std::string cache_key(const GenRequest& r) {
    std::string key = to_string(r.role);
    key += '\x1f';
    key += r.model_name;
    key += '\x1f';
    key += fmt::format("{:.6f}", r.temperature);
    key += '\x1f';
    key += r.prompt;
    return to_hex(fnv1a64(key));
}

// ---- Scripted ----

std::optional<std::string> ScriptRule::apply(const GenRequest& request) const {
    if (role && *role != request.role) return std::nullopt;
    std::string_view window = request.prompt;
    if (!after.empty()) {
        const auto pos = window.find(after);
        if (pos == std::string_view::npos) return std::nullopt;
        window = window.substr(pos + after.size());
    }
    if (!before.empty()) {
        const auto pos = window.find(before);
        if (pos != std::string_view::npos) window = window.substr(0, pos);
    }
    for (const auto& r : require)
        if (window.find(r) == std::string_view::npos) return std::nullopt;
    if (match == Match::Substring) {
        if (window.find(pattern) == std::string_view::npos) return std::nullopt;
        return response;
    }
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(window.begin(), window.end(), m, *compiled)) return std::nullopt;
    return m.format(response);
}

namespace {

void order_rules(std::vector<ScriptRule>& rules) {
    std::stable_sort(rules.begin(), rules.end(), [](const ScriptRule& a, const ScriptRule& b) {
        if (a.priority != b.priority) return a.priority > b.priority;
        return a.index < b.index;
    });
}

ScriptRule parse_rule(const json& j, std::size_t index, std::string_view origin) {
    const auto where = fmt::format("{}: rule {}", origin, index + 1);
    if (!j.is_object()) throw ConfigError(where + ": not an object");
    ScriptRule rule;
    rule.index = index;
    try {
        if (j.contains("regex")) {
            rule.match = ScriptRule::Match::Regex;
            rule.pattern = j.at("regex").get<std::string>();
        } else {
            rule.pattern = j.value("match", std::string());
            const std::string type = j.value("type", std::string("substring"));
            if (type == "regex")
                rule.match = ScriptRule::Match::Regex;
            else if (type != "substring")
                throw ConfigError(fmt::format("unknown match type '{}'", type));
        }
        if (j.contains("role") && !j["role"].is_null()) rule.role = role_from_string(j["role"].get<std::string>());
        rule.fail = j.value("fail", false);
        if (!rule.fail) rule.response = j.at("response").get<std::string>();
        rule.priority = j.value("priority", 0);
        if (j.contains("require")) rule.require = j["require"].get<std::vector<std::string>>();
        rule.after = j.value("after", std::string());
        rule.before = j.value("before", std::string());
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    } catch (const std::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
    if (rule.match == ScriptRule::Match::Regex) {
        try {
            rule.compiled = std::make_shared<const std::regex>(rule.pattern, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            throw ConfigError(fmt::format("{}: invalid regex '{}': {}", where, rule.pattern, e.what()));
        }
    }
    return rule;
}

}  // namespace

Script parse_script(const json& j, std::string_view origin) {
    Script script;
    const json* rules = &j;
    if (j.is_object()) {
        script.default_response = j.value("default", std::string());
        if (!j.contains("rules")) throw ConfigError(fmt::format("{}: missing 'rules'", origin));
        rules = &j["rules"];
    }
    if (!rules->is_array()) throw ConfigError(fmt::format("{}: rules must be a list", origin));
    for (std::size_t i = 0; i < rules->size(); ++i) script.rules.push_back(parse_rule((*rules)[i], i, origin));
    order_rules(script.rules);
    return script;
}

Script load_script(const std::string& path) {
    const std::string body = read_file(path);
    if (trim(body).empty()) return {};
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path, e.what()));
    }
    return parse_script(j, path);
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptRule> rules, std::string default_response) {
    for (std::size_t i = 0; i < rules.size(); ++i) {
        rules[i].index = i;
        if (rules[i].match == ScriptRule::Match::Regex && !rules[i].compiled)
            rules[i].compiled = std::make_shared<const std::regex>(rules[i].pattern, std::regex::ECMAScript);
    }
    order_rules(rules);
    script_.rules = std::move(rules);
    script_.default_response = std::move(default_response);
}

GenResponse ScriptedBackend::generate(const GenRequest& request) {
    validate(request);
    for (const auto& rule : script_.rules) {
        if (auto text = rule.apply(request)) {
            if (rule.fail) throw BackendError(fmt::format("scripted failure (rule {})", rule.index + 1));
            return {std::move(*text), BackendKind::Scripted, false, 0};
        }
    }
    return {script_.default_response, BackendKind::Scripted, false, 0};
}

// ---- Replay ----

ReplayBackend::ReplayBackend(std::string cache_dir, Mode mode, std::shared_ptr<TextGen> delegate)
    : dir_(std::move(cache_dir)), mode_(mode), delegate_(std::move(delegate)) {
    if (mode_ == Mode::Record && !delegate_) throw ConfigError("record mode needs a delegate backend");
    std::filesystem::create_directories(dir_);
}

std::string ReplayBackend::entry_path(const std::string& key) const {
    return (std::filesystem::path(dir_) / (key + ".json")).string();
}

void ReplayBackend::store(const GenRequest& request, const std::string& text) const {
    const std::string key = cache_key(request);
    const json entry{{"key", key},
                     {"role", to_string(request.role)},
                     {"model", request.model_name},
                     {"temperature", request.temperature},
                     {"prompt", request.prompt},
                     {"text", text}};
    write_file_atomic(entry_path(key), entry.dump(2) + "\n");
}

GenResponse ReplayBackend::generate(const GenRequest& request) {
    validate(request);
    const std::string key = cache_key(request);
    const std::string path = entry_path(key);
    if (std::filesystem::exists(path)) {
        const json entry = json::parse(read_file(path));
        return {entry.at("text").get<std::string>(), BackendKind::Replay, true, 0};
    }
    if (mode_ == Mode::Strict) throw CacheMiss(key);
    GenResponse inner = delegate_->generate(request);
    store(request, inner.text);
    return {inner.text, BackendKind::Replay, false, inner.latency_ms};
}

// ---- Live ----

LiveConfig LiveConfig::from_env() {
    LiveConfig c;
    const char* base = std::getenv("CODRIVER_BASE_URL");
    c.base_url = base != nullptr ? base : "https://api.openai.com/v1";
    if (const char* key = std::getenv("CODRIVER_API_KEY"))
        c.api_key = key;
    else if (const char* key2 = std::getenv("OPENAI_API_KEY"))
        c.api_key = key2;
    return c;
}

LiveBackend::LiveBackend(LiveConfig config, Sleeper sleeper) : config_(std::move(config)), sleep_(std::move(sleeper)) {
    if (!sleep_) sleep_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
    if (config_.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
    if (config_.retry.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
}

json LiveBackend::request_body(const GenRequest& request, const std::string& system_message) {
    json messages = json::array();
    if (!system_message.empty()) messages.push_back({{"role", "system"}, {"content", system_message}});
    messages.push_back({{"role", "user"}, {"content", request.prompt}});
    return json{{"model", request.model_name},
                {"messages", messages},
                {"temperature", request.temperature},
                {"max_tokens", request.max_tokens}};
}

std::string LiveBackend::extract_content(const std::string& body) {
    try {
        const json j = json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
        throw BackendError(std::string("malformed chat-completion response: ") + e.what());
    }
}

void LiveBackend::acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
    ++in_flight_;
    if (config_.requests_per_minute > 0) {
        for (;;) {
            const auto now = std::chrono::steady_clock::now();
            while (!recent_.empty() && now - recent_.front() >= std::chrono::minutes(1)) recent_.pop_front();
            if (static_cast<int>(recent_.size()) < config_.requests_per_minute) {
                recent_.push_back(now);
                break;
            }
            const auto wait = recent_.front() + std::chrono::minutes(1) - now;
            lock.unlock();
            sleep_(std::chrono::duration<double>(wait));
            lock.lock();
        }
    }
}

void LiveBackend::release() {
    {
        std::lock_guard lock(mutex_);
        --in_flight_;
    }
    cv_.notify_one();
}

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base URL needs a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    SplitUrl s;
    s.origin = url.substr(0, path_start);
    s.path = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!s.path.empty() && s.path.back() == '/') s.path.pop_back();
    return s;
}

}  // namespace

GenResponse LiveBackend::generate(const GenRequest& request) {
    validate(request);
    const auto url = split_url(config_.base_url);
    const std::string body = request_body(request, config_.system_message).dump();
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    const auto start = std::chrono::steady_clock::now();
    std::string last_error;
    double delay = config_.retry.base_delay_s;
    for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
        acquire();
        httplib::Client client(url.origin);
        const auto secs = static_cast<time_t>(config_.timeout_s);
        client.set_connection_timeout(secs, 0);
        client.set_read_timeout(secs, 0);
        auto res = client.Post(url.path + "/chat/completions", headers, body, "application/json");
        release();

        bool retry = false;
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            retry = true;
        } else if (res->status >= 200 && res->status < 300) {
            GenResponse out;
            out.text = extract_content(res->body);
            out.backend = BackendKind::Live;
            out.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - start)
                                 .count();
            return out;
        } else {
            last_error = fmt::format("HTTP {}", res->status);
            retry = retryable_status(res->status);
        }
        if (!retry) throw BackendError(last_error);
        if (attempt < config_.retry.max_attempts) {
            spdlog::warn("live backend attempt {} failed ({}), retrying in {:.2f}s", attempt, last_error, delay);
            sleep_(std::chrono::duration<double>(delay));
            delay *= config_.retry.factor;
        }
    }
    throw BackendError(fmt::format("live backend failed after {} attempts: {}", config_.retry.max_attempts,
                                   last_error));
}

// ---- Recording / sets ----

void ExchangeLog::push(Exchange e) {
    std::lock_guard lock(mutex_);
    items_.push_back(std::move(e));
}

std::vector<Exchange> ExchangeLog::take() {
    std::lock_guard lock(mutex_);
    return std::exchange(items_, {});
}

GenResponse RecordingTextGen::generate(const GenRequest& request) {
    GenResponse r = inner_->generate(request);
    sink_->push({request.role, cache_key(request), r.text});
    return r;
}

TextGen& BackendSet::for_role(RoleTag role) const { return *shared_for_role(role); }

std::shared_ptr<TextGen> BackendSet::shared_for_role(RoleTag role) const {
    if (auto it = by_role_.find(role); it != by_role_.end() && it->second) return it->second;
    if (!default_) throw ConfigError("no backend bound for role " + to_string(role));
    return default_;
}

}  // namespace codriver
