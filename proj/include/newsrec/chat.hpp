#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "newsrec/digest.hpp"
#include "newsrec/error.hpp"
#include "newsrec/reranker.hpp"

namespace newsrec {

struct ChatSettings {
    std::string url;
    std::string api_key;
    std::string model = "gpt-3.5-turbo";
    double temperature = 0.0;
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::seconds timeout{60};

    /// Endpoint and key come from NEWSREC_ENDPOINT_URL / NEWSREC_API_KEY;
    /// NEWSREC_MODEL optionally overrides the model name.
    static ChatSettings from_environment() {
        ChatSettings s;
        if (const char* v = std::getenv("NEWSREC_ENDPOINT_URL")) s.url = v;
        if (const char* v = std::getenv("NEWSREC_API_KEY")) s.api_key = v;
        if (const char* v = std::getenv("NEWSREC_MODEL")) s.model = v;
        return s;
    }
};

/// Chat-completions request body for a single user message.
inline nlohmann::json chat_request_body(const ChatSettings& s, const std::string& prompt) {
    return {{"model", s.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", s.temperature}};
}

/// Extracts choices[0].message.content; throws on any other shape.
inline std::string chat_response_content(const nlohmann::json& response) {
    try {
        return response.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::endpoint, std::string("unexpected chat response shape: ") + e.what());
    }
}

class Transport {
  public:
    virtual ~Transport() = default;
    /// POSTs a JSON body and returns the JSON reply; throws Error(endpoint).
    virtual nlohmann::json post(const nlohmann::json& body) = 0;
};

class HttpTransport final : public Transport {
  public:
    explicit HttpTransport(ChatSettings settings) : m_settings(std::move(settings)) {
        if (m_settings.url.empty()) {
            fail_user("chat endpoint URL is not set (NEWSREC_ENDPOINT_URL)");
        }
        if (m_settings.api_key.empty()) {
            fail_user("chat endpoint API key is not set (NEWSREC_API_KEY)");
        }
        const auto scheme_end = m_settings.url.find("://");
        const auto path_start =
            m_settings.url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
        m_host = m_settings.url.substr(0, path_start);
        m_path = path_start == std::string::npos ? "/" : m_settings.url.substr(path_start);
    }

    nlohmann::json post(const nlohmann::json& body) override {
        httplib::Client client(m_host);
        client.set_read_timeout(m_settings.timeout);
        client.set_connection_timeout(m_settings.timeout);
        const httplib::Headers headers = {{"Authorization", "Bearer " + m_settings.api_key}};
        auto res = client.Post(m_path, headers, body.dump(), "application/json");
        if (!res) {
            throw Error(ErrorKind::endpoint, "request failed: " + httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            throw Error(ErrorKind::endpoint, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
        }
        auto j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded()) {
            throw Error(ErrorKind::endpoint, "endpoint returned invalid JSON");
        }
        return j;
    }

  private:
    ChatSettings m_settings;
    std::string m_host;
    std::string m_path;
};

/// Request/response pairs as JSON lines, keyed by the SHA-256 of the request
/// body. Thread-safe.
class ReplayLog {
  public:
    ReplayLog() = default;
    explicit ReplayLog(std::string path) : m_path(std::move(path)) {
        if (!std::filesystem::exists(m_path)) {
            return;
        }
        std::ifstream in(m_path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) {
                continue;
            }
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("key") || !j.contains("response")) {
                fail_user(m_path + ":" + std::to_string(line_no) + ": malformed replay record");
            }
            m_entries.emplace(j.at("key").get<std::string>(), j.at("response"));
        }
    }

    static std::string key(const nlohmann::json& request) { return sha256_hex(request.dump()); }

    [[nodiscard]] std::optional<nlohmann::json> find(const nlohmann::json& request) const {
        std::lock_guard lock(m_mutex);
        auto it = m_entries.find(key(request));
        if (it == m_entries.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    void record(const nlohmann::json& request, const nlohmann::json& response) {
        std::lock_guard lock(m_mutex);
        const auto k = key(request);
        if (!m_entries.emplace(k, response).second || m_path.empty()) {
            return;
        }
        std::ofstream out(m_path, std::ios::app | std::ios::binary);
        out << nlohmann::json{{"key", k}, {"request", request}, {"response", response}}.dump() << '\n';
    }

    [[nodiscard]] std::size_t size() const {
        std::lock_guard lock(m_mutex);
        return m_entries.size();
    }

  private:
    std::string m_path;
    mutable std::mutex m_mutex;
    std::map<std::string, nlohmann::json> m_entries;
};

enum class ReplayMode {
    off,     ///< always call the endpoint
    record,  ///< answer from the log when possible, else call and append
    strict,  ///< answer from the log only; a miss is an endpoint failure
};

/// Chat client with bounded retry and exponential backoff.
class ChatClient {
  public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    ChatClient(ChatSettings settings, std::shared_ptr<Transport> transport, std::shared_ptr<ReplayLog> replay = {},
               ReplayMode mode = ReplayMode::off,
               Sleeper sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })
        : m_settings(std::move(settings)),
          m_transport(std::move(transport)),
          m_replay(std::move(replay)),
          m_mode(mode),
          m_sleep(std::move(sleeper)) {}

    [[nodiscard]] std::string complete(const std::string& prompt) const {
        const auto body = chat_request_body(m_settings, prompt);
        if (m_replay && m_mode != ReplayMode::off) {
            if (auto hit = m_replay->find(body)) {
                return chat_response_content(*hit);
            }
            if (m_mode == ReplayMode::strict) {
                throw Error(ErrorKind::endpoint, "no replay record for request " + ReplayLog::key(body).substr(0, 16));
            }
        }
        if (!m_transport) {
            throw Error(ErrorKind::endpoint, "no chat transport configured");
        }
        std::vector<std::string> attempts;
        auto backoff = m_settings.initial_backoff;
        for (int attempt = 1; attempt <= m_settings.max_attempts; ++attempt) {
            try {
                auto response = m_transport->post(body);
                auto content = chat_response_content(response);
                if (m_replay && m_mode == ReplayMode::record) {
                    m_replay->record(body, response);
                }
                return content;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::endpoint) {
                    throw;
                }
                attempts.push_back("attempt " + std::to_string(attempt) + ": " + e.what());
            }
            if (attempt < m_settings.max_attempts) {
                m_sleep(backoff);
                backoff *= 2;
            }
        }
        std::string log;
        for (const auto& a : attempts) {
            log += "\n  " + a;
        }
        throw Error(ErrorKind::endpoint, "chat endpoint failed after " + std::to_string(attempts.size()) +
                                             " attempts:" + log);
    }

  private:
    ChatSettings m_settings;
    std::shared_ptr<Transport> m_transport;
    std::shared_ptr<ReplayLog> m_replay;
    ReplayMode m_mode;
    Sleeper m_sleep;
};

/// Prompt-driven listwise ranker over a chat-completions endpoint.
class ChatEndpointRanker final : public Ranker {
  public:
    explicit ChatEndpointRanker(std::shared_ptr<const ChatClient> client, PromptOptions prompt = {})
        : m_client(std::move(client)), m_prompt(prompt) {}

    [[nodiscard]] RerankResponse rerank(const RerankRequest& request) const override {
        return parse_ranking(m_client->complete(build_prompt(request, m_prompt)), request);
    }
    [[nodiscard]] std::string name() const override { return "endpoint"; }

  private:
    std::shared_ptr<const ChatClient> m_client;
    PromptOptions m_prompt;
};

}  // namespace newsrec
