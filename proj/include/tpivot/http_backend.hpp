#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tpivot/backend.hpp"

namespace tpivot {

struct HttpResponse {
    int status = 0;  // 0 when the transport itself failed
    std::string body;
    std::string error;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;
using HttpTransport =
    std::function<HttpResponse(const std::string& url, const std::string& body, const HttpHeaders& headers, double timeout_s)>;

// cpp-httplib based POST, with TLS for https:// endpoints.
HttpTransport make_httplib_transport();

// Caps in-flight requests and the number of requests started per budget window.
class RateLimiter {
public:
    // requests_per_window == 0 disables the budget.
    RateLimiter(int max_concurrency, int requests_per_window,
                std::chrono::milliseconds window = std::chrono::minutes(1));

    class Permit {
    public:
        explicit Permit(RateLimiter* owner) : owner_(owner) {}
        Permit(Permit&& other) noexcept : owner_(std::exchange(other.owner_, nullptr)) {}
        Permit(const Permit&) = delete;
        Permit& operator=(const Permit&) = delete;
        Permit& operator=(Permit&&) = delete;
        ~Permit() {
            if (owner_) owner_->release();
        }

    private:
        RateLimiter* owner_;
    };

    // Blocks until both a concurrency slot and budget are available.
    Permit acquire();
    int in_flight() const;

private:
    void release();

    const int max_concurrency_;
    const int requests_per_window_;
    const std::chrono::milliseconds window_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    int in_flight_ = 0;
    std::deque<std::chrono::steady_clock::time_point> started_;
};

struct ChatConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-4o";
    std::string api_key_env = "OPENAI_API_KEY";  // empty: no Authorization header
    double timeout_s = 60.0;
    int max_retries = 2;
    int max_concurrency = 4;
    int requests_per_minute = 0;
    bool fallback_to_center = true;
    int jpeg_quality = 90;
    double retry_backoff_s = 1.0;  // doubled after each failed attempt
    std::filesystem::path record_path;  // append {request_hash, response_text} lines when set

    void validate() const;
};

// OpenAI-style chat request: one user message, the text block first, then the
// images in badge order as base64 JPEG data URLs.
nlohmann::json build_chat_request(const ChatConfig& config, const PromptImage& image, const std::string& prompt_text);

std::string sha256_hex(std::string_view data);

// Hex SHA-256 of the serialized request body.
std::string request_hash(const nlohmann::json& body);

// choices[0].message.content; throws std::runtime_error when absent.
std::string extract_reply_text(const std::string& response_body);

std::string base64_encode(const std::vector<unsigned char>& bytes);

// Shared retry-then-fallback policy for backends that talk in chat requests.
class ChatBackend : public VlmBackend {
public:
    explicit ChatBackend(ChatConfig config);

    VlmAnswer query(const QueryRequest& request) override;
    const ChatConfig& config() const { return config_; }

protected:
    // Returns the model's reply text for one attempt. Throws TransportFailure
    // for retryable errors and BackendError for unrecoverable ones.
    virtual std::string fetch(const nlohmann::json& body, const std::string& hash, int attempt) = 0;

    struct TransportFailure : std::runtime_error {
        using std::runtime_error::runtime_error;
    };

    ChatConfig config_;
};

class HttpBackend final : public ChatBackend {
public:
    HttpBackend(ChatConfig config, HttpTransport transport = make_httplib_transport());

    std::string name() const override { return "openai_http"; }

protected:
    std::string fetch(const nlohmann::json& body, const std::string& hash, int attempt) override;

private:
    void record(const std::string& hash, const std::string& text);

    HttpTransport transport_;
    std::string api_key_;
    RateLimiter limiter_;
    std::mutex record_mu_;
};

// Serves recorded replies by request hash. Repeated hashes replay their
// recorded replies in order, the last one repeating.
class ReplayBackend final : public ChatBackend {
public:
    ReplayBackend(ChatConfig config, const std::filesystem::path& transcript);

    std::string name() const override { return "replay"; }
    std::size_t size() const { return replies_.size(); }

protected:
    std::string fetch(const nlohmann::json& body, const std::string& hash, int attempt) override;

private:
    std::map<std::string, std::vector<std::string>> replies_;
};

}  // namespace tpivot
