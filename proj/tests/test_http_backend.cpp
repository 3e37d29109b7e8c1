#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "tempdir.hpp"
#include "tpivot/errors.hpp"
#include "tpivot/http_backend.hpp"

using namespace tpivot;
using nlohmann::json;

namespace {

PromptImage small_image(int n_side = 5, GridStyle style = GridStyle::tiled_corner) {
    static const auto src = FrameSource::synthetic(10, 600);
    GridSpec g;
    g.rows = g.cols = n_side;
    g.cell_px = 32;
    g.style = style;
    return compose(sample_frames(src, {30, 60}, g.frame_count()), g);
}

ChatConfig offline_config() {
    ChatConfig c;
    c.endpoint = "http://127.0.0.1:9/v1/chat/completions";
    c.api_key_env = "";
    c.retry_backoff_s = 0.0;
    return c;
}

std::string reply(const std::string& content) {
    return json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})}}.dump();
}

const PromptContext kCtx{{"pour", "stir"}, 2, Boundary::start, false};

VlmAnswer ask(VlmBackend& backend, const PromptImage& image, const PromptContext& ctx = kCtx) {
    return backend.query({image, build_prompt(ctx), ctx, 1, {30, 60}});
}

}  // namespace

TEST_CASE("chat request layout") {
    const auto image = small_image(2, GridStyle::stacked);
    const auto body = build_chat_request(offline_config(), image, "hello");
    CHECK(body["model"] == "gpt-4o");
    CHECK(body["temperature"] == 0);
    const auto& content = body["messages"][0]["content"];
    REQUIRE(content.size() == 5);
    CHECK(content[0]["type"] == "text");
    CHECK(content[0]["text"] == "hello");
    for (int i = 1; i <= 4; ++i) {
        CHECK(content[i]["type"] == "image_url");
        CHECK(content[i]["image_url"]["url"].get<std::string>().rfind("data:image/jpeg;base64,/9j/", 0) == 0);
    }
    CHECK(request_hash(body) == request_hash(build_chat_request(offline_config(), image, "hello")));
    CHECK(request_hash(body) != request_hash(build_chat_request(offline_config(), image, "hello!")));
}

TEST_CASE("hash and base64 helpers") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(base64_encode({'M', 'a', 'n'}) == "TWFu");
    CHECK(base64_encode({'M', 'a'}) == "TWE=");
    CHECK(base64_encode({}).empty());
    CHECK(extract_reply_text(reply("x")) == "x");
    CHECK_THROWS(extract_reply_text("{}"));
}

TEST_CASE("reply parsed from the transport") {
    std::string seen_url;
    HttpHeaders seen_headers;
    HttpBackend backend(offline_config(), [&](const std::string& url, const std::string& body, const HttpHeaders& h, double) {
        seen_url = url;
        seen_headers = h;
        CHECK(json::parse(body)["model"] == "gpt-4o");
        return HttpResponse{200, reply("The pouring starts here. {\"points\": [3]}"), ""};
    });
    const auto a = ask(backend, small_image());
    CHECK(*a.selected_index == 3);
    CHECK(a.attempts == 1);
    CHECK_FALSE(a.fallback);
    CHECK(seen_url == offline_config().endpoint);
    CHECK(seen_headers.empty());
}

TEST_CASE("malformed replies fall back to the center badge") {
    int calls = 0;
    HttpBackend backend(offline_config(), [&](auto&&...) {
        ++calls;
        return HttpResponse{200, reply("I cannot tell."), ""};
    });
    const auto a = ask(backend, small_image());
    CHECK(calls == 3);
    CHECK(*a.selected_index == 13);
    CHECK(a.fallback);
    CHECK(a.attempts == 3);
}

TEST_CASE("retries recover from transport errors") {
    int calls = 0;
    HttpBackend backend(offline_config(), [&](auto&&...) {
        ++calls;
        if (calls == 1) return HttpResponse{0, "", "connection refused"};
        if (calls == 2) return HttpResponse{429, "slow down", ""};
        return HttpResponse{200, reply("{\"points\": [20]}"), ""};
    });
    const auto a = ask(backend, small_image());
    CHECK(*a.selected_index == 20);
    CHECK(a.attempts == 3);
}

TEST_CASE("without fallback the failure carries a transcript") {
    auto cfg = offline_config();
    cfg.fallback_to_center = false;
    cfg.max_retries = 1;
    HttpBackend backend(cfg, [&](auto&&...) { return HttpResponse{200, reply("{\"points\": [0]}"), ""}; });
    try {
        ask(backend, small_image());
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(std::string(e.transcript()).find("out_of_range") != std::string::npos);
        CHECK(std::string(e.transcript()).find("[attempt 2]") != std::string::npos);
    }
}

TEST_CASE("never returns an index outside the badge range") {
    const std::vector<std::string> replies = {"{\"points\": [-1]}", "{\"points\": [26]}", "{\"points\": []}",
                                              "{\"points\": [\"x\"]}", "", "{\"points\": [25]}", "{\"points\": [1, 99]}"};
    const auto image = small_image();
    for (const auto& r : replies) {
        HttpBackend backend(offline_config(), [&](auto&&...) { return HttpResponse{200, reply(r), ""}; });
        const auto a = ask(backend, image);
        REQUIRE(a.selected_index);
        CHECK(*a.selected_index >= 1);
        CHECK(*a.selected_index <= 25);
    }
}

TEST_CASE("missing api key is a configuration error") {
    auto cfg = offline_config();
    cfg.api_key_env = "TPIVOT_TEST_KEY_THAT_IS_NOT_SET";
    CHECK_THROWS_AS(HttpBackend(cfg, [](auto&&...) { return HttpResponse{}; }), ConfigError);
    ::setenv("TPIVOT_TEST_KEY", "sk-test", 1);
    cfg.api_key_env = "TPIVOT_TEST_KEY";
    HttpHeaders seen;
    HttpBackend backend(cfg, [&](const std::string&, const std::string&, const HttpHeaders& h, double) {
        seen = h;
        return HttpResponse{200, reply("{\"points\": [1]}"), ""};
    });
    ask(backend, small_image());
    REQUIRE(seen.size() == 1);
    CHECK(seen[0].second == "Bearer sk-test");
}

TEST_CASE("recorded transcript replays the same answers") {
    testutil::TempDir dir;
    auto cfg = offline_config();
    cfg.record_path = dir / "t.jsonl";
    const auto image = small_image();
    PromptContext end_ctx = kCtx;
    end_ctx.boundary = Boundary::end;
    {
        HttpBackend live(cfg, [&](const std::string&, const std::string& body, auto&&...) {
            const bool is_end = body.find("has ended") != std::string::npos;
            return HttpResponse{200, reply(is_end ? "{\"points\": [21]}" : "{\"points\": [4]}"), ""};
        });
        CHECK(*ask(live, image).selected_index == 4);
        CHECK(*ask(live, image, end_ctx).selected_index == 21);
    }
    ReplayBackend replay(offline_config(), cfg.record_path);
    CHECK(replay.size() == 2);
    CHECK(*ask(replay, image).selected_index == 4);
    CHECK(*ask(replay, image, end_ctx).selected_index == 21);
    PromptContext other{{"pour", "stir"}, 1, Boundary::start, false};
    CHECK_THROWS_AS(ask(replay, image, other), BackendError);
}

TEST_CASE("replay fixture and malformed transcript") {
    testutil::TempDir dir;
    const auto image = small_image();
    const auto hash = request_hash(build_chat_request(offline_config(), image, build_prompt(kCtx)));
    const auto fixture = dir.write("fixture.jsonl", json{{"request_hash", hash}, {"response_text", "{\"points\": [3]}"}}.dump() + "\n");
    ReplayBackend replay(offline_config(), fixture);
    CHECK(*ask(replay, image).selected_index == 3);

    const auto bad = dir.write("bad.jsonl", "{\"request_hash\": 1}\n");
    CHECK_THROWS_AS(ReplayBackend(offline_config(), bad), FormatError);
    CHECK_THROWS_AS(ReplayBackend(offline_config(), dir / "missing.jsonl"), IoError);
}

TEST_CASE("replay walks repeated replies in order") {
    testutil::TempDir dir;
    const auto image = small_image();
    const auto hash = request_hash(build_chat_request(offline_config(), image, build_prompt(kCtx)));
    std::string lines;
    for (const char* r : {"garbage", "{\"points\": [7]}"}) lines += json{{"request_hash", hash}, {"response_text", r}}.dump() + "\n";
    ReplayBackend replay(offline_config(), dir.write("t.jsonl", lines));
    const auto a = ask(replay, image);
    CHECK(*a.selected_index == 7);
    CHECK(a.attempts == 2);
}

TEST_CASE("loopback server through the httplib transport") {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::string auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        auth = req.get_header_value("Authorization");
        const auto body = json::parse(req.body);
        const bool ok = body["messages"][0]["content"].size() == 2;
        res.set_content(reply(ok ? "{\"points\": [9]}" : "no"), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ::setenv("TPIVOT_LOOPBACK_KEY", "abc", 1);
    auto cfg = offline_config();
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.api_key_env = "TPIVOT_LOOPBACK_KEY";
    cfg.timeout_s = 5;
    HttpBackend backend(cfg);
    const auto a = ask(backend, small_image());
    server.stop();
    th.join();
    CHECK(hits == 1);
    CHECK(auth == "Bearer abc");
    CHECK(*a.selected_index == 9);
}

TEST_CASE("unreachable endpoint reports a transport failure") {
    const auto transport = make_httplib_transport();
    const auto res = transport("http://127.0.0.1:1/x", "{}", {}, 0.5);
    CHECK(res.status == 0);
    CHECK_FALSE(res.error.empty());
    CHECK(transport("not a url", "{}", {}, 0.5).status == 0);
}

TEST_CASE("rate limiter caps concurrency") {
    RateLimiter limiter(2, 0);
    std::atomic<int> peak{0};
    std::atomic<int> current{0};
    std::vector<std::jthread> threads;
    for (int i = 0; i < 8; ++i) {
        threads.emplace_back([&] {
            auto permit = limiter.acquire();
            const int now = ++current;
            int p = peak.load();
            while (now > p && !peak.compare_exchange_weak(p, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
            --current;
        });
    }
    threads.clear();
    CHECK(peak.load() <= 2);
    CHECK(peak.load() >= 1);
    CHECK(limiter.in_flight() == 0);
}

TEST_CASE("rate limiter enforces the request budget") {
    RateLimiter limiter(8, 3, std::chrono::milliseconds(200));
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 6; ++i) limiter.acquire();
    const auto elapsed = std::chrono::steady_clock::now() - t0;
    CHECK(elapsed >= std::chrono::milliseconds(190));
    CHECK(elapsed < std::chrono::milliseconds(2000));
}

TEST_CASE("chat config validation") {
    auto cfg = offline_config();
    cfg.endpoint = "api.example.com";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = offline_config();
    cfg.max_retries = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = offline_config();
    cfg.jpeg_quality = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
