#include "tpivot/http_backend.hpp"

#include <cstdlib>
#include <iomanip>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "tpivot/errors.hpp"

namespace tpivot {
namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an http(s) URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpTransport make_httplib_transport() {
    return [](const std::string& url, const std::string& body, const HttpHeaders& headers, double timeout_s) {
        HttpResponse out;
        try {
            const auto parts = split_url(url);
            httplib::Client client(parts.origin);
            const auto secs = static_cast<time_t>(timeout_s);
            const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
            client.set_connection_timeout(secs, usecs);
            client.set_read_timeout(secs, usecs);
            client.set_write_timeout(secs, usecs);
            httplib::Headers h;
            for (const auto& [k, v] : headers) h.emplace(k, v);
            auto res = client.Post(parts.path, h, body, "application/json");
            if (!res) {
                out.error = httplib::to_string(res.error());
                return out;
            }
            out.status = res->status;
            out.body = res->body;
        } catch (const std::exception& e) {
            out.error = e.what();
        }
        return out;
    };
}

RateLimiter::RateLimiter(int max_concurrency, int requests_per_window, std::chrono::milliseconds window)
    : max_concurrency_(std::max(1, max_concurrency)), requests_per_window_(std::max(0, requests_per_window)), window_(window) {}

RateLimiter::Permit RateLimiter::acquire() {
    std::unique_lock lock(mu_);
    for (;;) {
        const auto now = std::chrono::steady_clock::now();
        while (!started_.empty() && now - started_.front() >= window_) started_.pop_front();
        const bool slot = in_flight_ < max_concurrency_;
        const bool budget = requests_per_window_ == 0 || static_cast<int>(started_.size()) < requests_per_window_;
        if (slot && budget) break;
        if (!budget) {
            cv_.wait_until(lock, started_.front() + window_);
        } else {
            cv_.wait(lock);
        }
    }
    ++in_flight_;
    if (requests_per_window_ > 0) started_.push_back(std::chrono::steady_clock::now());
    return Permit(this);
}

void RateLimiter::release() {
    {
        std::lock_guard lock(mu_);
        --in_flight_;
    }
    cv_.notify_all();
}

int RateLimiter::in_flight() const {
    std::lock_guard lock(mu_);
    return in_flight_;
}

void ChatConfig::validate() const {
    split_url(endpoint);
    if (model.empty()) throw ConfigError("model name is empty");
    if (!(timeout_s > 0.0)) throw ConfigError("timeout must be positive");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
    if (requests_per_minute < 0) throw ConfigError("requests_per_minute must be >= 0");
    if (jpeg_quality < 1 || jpeg_quality > 100) throw ConfigError("jpeg quality must be in [1, 100]");
}

std::string base64_encode(const std::vector<unsigned char>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

nlohmann::json build_chat_request(const ChatConfig& config, const PromptImage& image, const std::string& prompt_text) {
    if (image.images.empty()) throw ConfigError("prompt image is empty");
    nlohmann::json content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", prompt_text}});
    for (const auto& img : image.images) {
        const std::string url = "data:image/jpeg;base64," + base64_encode(encode_jpeg(img, config.jpeg_quality));
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
    }
    return {{"model", config.model},
            {"temperature", 0},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", std::move(content)}}})}};
}

std::string request_hash(const nlohmann::json& body) { return sha256_hex(body.dump()); }

std::string sha256_hex(std::string_view text) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 failed");
    }
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return hex.str();
}

std::string extract_reply_text(const std::string& response_body) {
    const auto j = nlohmann::json::parse(response_body, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("response is not JSON");
    const auto ptr = nlohmann::json::json_pointer("/choices/0/message/content");
    if (!j.contains(ptr) || !j[ptr].is_string()) throw std::runtime_error("response has no choices[0].message.content");
    return j[ptr].get<std::string>();
}

ChatBackend::ChatBackend(ChatConfig config) : config_(std::move(config)) { config_.validate(); }

VlmAnswer ChatBackend::query(const QueryRequest& request) {
    const int n = request.image.badge_count();
    if (n < 1) throw ConfigError("query needs at least one badge");
    const auto body = build_chat_request(config_, request.image, request.prompt_text);
    const auto hash = request_hash(body);

    std::string transcript;
    const int attempts = config_.max_retries + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0 && config_.retry_backoff_s > 0.0) {
            std::this_thread::sleep_for(std::chrono::duration<double>(config_.retry_backoff_s * (1 << (attempt - 1))));
        }
        std::string text;
        try {
            text = fetch(body, hash, attempt);
        } catch (const TransportFailure& e) {
            transcript += "[attempt " + std::to_string(attempt + 1) + "] transport: " + e.what() + "\n";
            continue;
        }
        try {
            auto ans = parse_answer(text, n, request.ctx.allow_none);
            ans.attempts = attempt + 1;
            return ans;
        } catch (const AnswerParseError& e) {
            transcript += "[attempt " + std::to_string(attempt + 1) + "] " + to_string(e.code()) + ": " + e.what() +
                          "\n" + text + "\n";
        }
    }
    if (!config_.fallback_to_center) {
        throw BackendError("no usable answer after " + std::to_string(attempts) + " attempts", transcript);
    }
    spdlog::warn("{}: no usable answer after {} attempts for '{}' ({}), falling back to badge {}", name(), attempts,
                 request.ctx.focused_label(), to_string(request.ctx.boundary), center_badge(n));
    VlmAnswer ans;
    ans.selected_index = center_badge(n);
    ans.raw_text = transcript;
    ans.fallback = true;
    ans.attempts = attempts;
    return ans;
}

HttpBackend::HttpBackend(ChatConfig config, HttpTransport transport)
    : ChatBackend(std::move(config)),
      transport_(std::move(transport)),
      limiter_(config_.max_concurrency, config_.requests_per_minute) {
    if (!config_.api_key_env.empty()) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (!key || !*key) throw ConfigError("environment variable " + config_.api_key_env + " is not set");
        api_key_ = key;
    }
}

std::string HttpBackend::fetch(const nlohmann::json& body, const std::string& hash, int /*attempt*/) {
    HttpHeaders headers;
    if (!api_key_.empty()) headers.emplace_back("Authorization", "Bearer " + api_key_);
    HttpResponse res;
    {
        auto permit = limiter_.acquire();
        res = transport_(config_.endpoint, body.dump(), headers, config_.timeout_s);
    }
    if (res.status == 0) throw TransportFailure(res.error.empty() ? "no response" : res.error);
    if (res.status != 200) {
        throw TransportFailure("HTTP " + std::to_string(res.status) + ": " + res.body.substr(0, 200));
    }
    std::string text;
    try {
        text = extract_reply_text(res.body);
    } catch (const std::exception& e) {
        throw TransportFailure(e.what());
    }
    record(hash, text);
    return text;
}

void HttpBackend::record(const std::string& hash, const std::string& text) {
    if (config_.record_path.empty()) return;
    std::lock_guard lock(record_mu_);
    std::ofstream out(config_.record_path, std::ios::app);
    if (!out) throw IoError("cannot append to transcript " + config_.record_path.string());
    out << nlohmann::json{{"request_hash", hash}, {"response_text", text}}.dump() << '\n';
}

ReplayBackend::ReplayBackend(ChatConfig config, const std::filesystem::path& transcript)
    : ChatBackend(std::move(config)) {
    std::ifstream in(transcript);
    if (!in) throw IoError("cannot open transcript " + transcript.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("request_hash") || !j.contains("response_text") ||
            !j["request_hash"].is_string() || !j["response_text"].is_string()) {
            throw FormatError(transcript.string() + ":" + std::to_string(lineno) + ": expected {request_hash, response_text}");
        }
        replies_[j["request_hash"].get<std::string>()].push_back(j["response_text"].get<std::string>());
    }
}

std::string ReplayBackend::fetch(const nlohmann::json& /*body*/, const std::string& hash, int attempt) {
    const auto it = replies_.find(hash);
    if (it == replies_.end()) throw BackendError("transcript has no reply for request " + hash);
    const auto& replies = it->second;
    return replies[std::min(static_cast<std::size_t>(attempt), replies.size() - 1)];
}

}  // namespace tpivot
