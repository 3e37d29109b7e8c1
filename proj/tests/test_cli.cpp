#include <doctest.h>

#include <sstream>
#include <sys/wait.h>
#include <thread>

#include <httplib.h>
#include <opencv2/imgcodecs.hpp>

#include "tempdir.hpp"
#include "tpivot/cli.hpp"
#include "tpivot/http_backend.hpp"
#include "tpivot/metrics.hpp"
#include "tpivot/timeline.hpp"

using namespace tpivot;
using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "tpivot");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

struct Fixture {
    testutil::TempDir dir;
    std::string gt;
    std::string labels;

    Fixture() {
        gt = dir.write("gt.json", R"({"duration": 30, "segments": [
            {"label": "pick up", "start": 0, "end": 10},
            {"label": "move", "start": 10, "end": 25},
            {"label": "put", "start": 25, "end": 30}]})").string();
        labels = dir.write("labels.txt", "pick up\nmove\nput\n").string();
    }

    std::vector<std::string> oracle_args(const std::string& verb) const {
        return {verb, "--synthetic", "--fps", "10", "--gt", gt, "--cell-px", "32"};
    }
};

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_CASE("localize with the oracle") {
    Fixture f;
    const auto r = run(f.oracle_args("localize") + std::vector<std::string>{"--query", "move", "--grid", "5x5", "--iters", "4"});
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    REQUIRE(j["segments"].size() == 1);
    CHECK(std::abs(j["segments"][0]["start"].get<double>() - 10) <= 0.32);
    CHECK(std::abs(j["segments"][0]["end"].get<double>() - 25) <= 0.32);
    CHECK(j["config_echo"]["grid"] == "5x5");
    CHECK(j["input_hash"].get<std::string>().size() == 64);
    CHECK(j["per_iteration_trace"].size() == 8);
}

TEST_CASE("localize against a frame directory") {
    Fixture f;
    std::filesystem::create_directories(f.dir / "frames");
    cv::Mat img(12, 16, CV_8UC3, cv::Scalar(40, 80, 120));
    for (int i = 0; i < 300; ++i) cv::imwrite((f.dir / "frames" / format_frame_name(kDefaultFramePattern, i)).string(), img);
    const auto r = run({"localize", "--frames", (f.dir / "frames").string(), "--fps", "10", "--query", "put", "--gt", f.gt,
                        "--cell-px", "32"});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["duration"] == 30.0);
}

TEST_CASE("missing fps is a usage error") {
    Fixture f;
    const auto r = run({"localize", "--synthetic", "--gt", f.gt, "--query", "move"});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("--fps") != std::string::npos);
    CHECK(r.err.find("Usage") != std::string::npos);
}

TEST_CASE("exit codes separate failure kinds") {
    Fixture f;
    CHECK(run(f.oracle_args("localize") + std::vector<std::string>{"--query", "dance"}).code == kExitConfig);
    CHECK(run(f.oracle_args("localize") + std::vector<std::string>{"--query", "move", "--grid", "1x1"}).code == kExitConfig);
    CHECK(run({"localize", "--frames", (f.dir / "nope").string(), "--fps", "10", "--query", "move", "--gt", f.gt}).code ==
          kExitIo);
    const auto bad = f.dir.write("bad.json", "{\"duration\": 5, \"segments\": [{\"label\": \"a\", \"start\": 3, \"end\": 1}]}");
    CHECK(run({"localize", "--synthetic", "--fps", "10", "--gt", bad.string(), "--query", "a"}).code == kExitConfig);
    const auto empty_transcript = f.dir.write("empty.jsonl", "");
    const auto backend = run(f.oracle_args("localize") +
                             std::vector<std::string>{"--query", "move", "--backend", "replay", "--transcript",
                                                      empty_transcript.string(), "--no-fallback"});
    CHECK(backend.code == kExitBackend);
    CHECK(run({"frobnicate"}).code == kExitConfig);
}

TEST_CASE("transitions output and validation") {
    Fixture f;
    const auto out = (f.dir / "t.json").string();
    const auto r = run(f.oracle_args("transitions") + std::vector<std::string>{"--labels", f.labels, "--out", out});
    REQUIRE(r.code == 0);
    const auto j = json::parse(testutil::read_file(out));
    REQUIRE(j["transitions"].size() == 2);
    CHECK(std::abs(j["transitions"][0].get<double>() - 10) <= 0.32);
    CHECK(std::abs(j["transitions"][1].get<double>() - 25) <= 0.32);
    CHECK(j["segments"].size() == 3);
    CHECK(run({"validate", "--timeline", out, "--gapless"}).code == 0);
}

TEST_CASE("transitions need two labels") {
    Fixture f;
    const auto one = f.dir.write("one.txt", "move\n").string();
    const auto r = run(f.oracle_args("transitions") + std::vector<std::string>{"--labels", one});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("need >= 2 labels") != std::string::npos);
}

TEST_CASE("transitions are identical across concurrency levels") {
    Fixture f;
    std::vector<std::string> outputs;
    for (const char* c : {"1", "4", "16"}) {
        const auto r = run(f.oracle_args("transitions") +
                           std::vector<std::string>{"--labels", f.labels, "--noise", "0.3", "--seed", "5", "--concurrency", c});
        REQUIRE(r.code == 0);
        outputs.push_back(r.out);
    }
    CHECK(outputs[0] == outputs[1]);
    CHECK(outputs[0] == outputs[2]);
}

TEST_CASE("recorded http run replays offline") {
    Fixture f;
    httplib::Server server;
    int hits = 0;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        const bool end = req.body.find("has ended") != std::string::npos;
        const std::string content = end ? "It ends. {\"points\": [18]}" : "It starts. {\"points\": [7]}";
        res.set_content(json{{"choices", {{{"message", {{"content", content}}}}}}}.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    ::setenv("TPIVOT_CLI_TEST_KEY", "k", 1);

    const auto transcript = (f.dir / "t.jsonl").string();
    const std::vector<std::string> common = {"--query", "move", "--iters", "2", "--api-key-env", "TPIVOT_CLI_TEST_KEY"};
    const auto live = run(f.oracle_args("localize") + common +
                          std::vector<std::string>{"--backend", "openai_http", "--endpoint",
                                                   "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions",
                                                   "--record", transcript});
    server.stop();
    th.join();
    REQUIRE(live.code == 0);
    CHECK(hits == 4);

    const auto replay = run(f.oracle_args("localize") + common +
                            std::vector<std::string>{"--backend", "replay", "--transcript", transcript, "--no-fallback"});
    REQUIRE(replay.code == 0);
    const auto a = json::parse(live.out), b = json::parse(replay.out);
    CHECK(a["segments"] == b["segments"]);
    CHECK(a["per_iteration_trace"] == b["per_iteration_trace"]);
    CHECK(run(f.oracle_args("localize") + common +
              std::vector<std::string>{"--backend", "replay", "--transcript", transcript, "--no-fallback"})
              .out == replay.out);
}

TEST_CASE("scan finds occurrences") {
    testutil::TempDir dir;
    const auto gt = dir.write("gt.json", R"({"duration": 40, "segments": [
        {"label": "jump", "start": 3, "end": 4}, {"label": "jump", "start": 6, "end": 7},
        {"label": "jump", "start": 30, "end": 33}]})");
    const auto r = run({"scan", "--synthetic", "--fps", "10", "--gt", gt.string(), "--query", "jump", "--cell-px", "32"});
    REQUIRE(r.code == 0);
    const auto segs = json::parse(r.out)["segments"];
    // The last action crosses a window edge and comes back as contiguous pieces.
    REQUIRE(segs.size() >= 3);
    CHECK(std::abs(segs[0]["start"].get<double>() - 3) <= 0.1);
    CHECK(std::abs(segs[1]["start"].get<double>() - 6) <= 0.1);
    CHECK(std::abs(segs[2]["start"].get<double>() - 30) <= 0.1);
    for (std::size_t i = 3; i < segs.size(); ++i) CHECK(segs[i]["start"] == segs[i - 1]["end"]);
    CHECK(std::abs(segs.back()["end"].get<double>() - 33) <= 0.1);
}

TEST_CASE("evaluate segmentation identity and csv") {
    Fixture f;
    const auto csv = (f.dir / "report.csv").string();
    const auto r = run({"evaluate", "--pred", f.gt, "--gt", f.gt, "--fps", "10", "--csv", csv, "--video", "v1"});
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    CHECK(j["report"]["mof"] == 1.0);
    CHECK(j["report"]["mean_iou"] == 1.0);
    CHECK(j["report"]["f1"] == 1.0);
    const auto text = testutil::read_file(csv);
    CHECK(text.rfind("# run_config=", 0) == 0);
    CHECK(text.find("video_id,mof,mean_iou,f1\nv1,1.000000,1.000000,1.000000\n") != std::string::npos);
}

TEST_CASE("evaluate accepts transitions output") {
    Fixture f;
    const auto out = (f.dir / "t.json").string();
    REQUIRE(run(f.oracle_args("transitions") + std::vector<std::string>{"--labels", f.labels, "--out", out}).code == 0);
    const auto r = run({"evaluate", "--pred", out, "--gt", f.gt, "--fps", "10"});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["report"]["mof"].get<double>() >= 0.95);
}

TEST_CASE("evaluate detection") {
    testutil::TempDir dir;
    const auto gt = dir.write("gt.csv", "video_id,label,start,end\nv,golf_swing,4,10\n");
    const auto pred = dir.write("pred.json", R"({"predictions": [{"video": "v", "label": "golf_swing", "start": 5, "end": 10}]})");
    const auto csv = (dir / "map.csv").string();
    const auto r = run({"evaluate", "--mode", "detection", "--pred", pred.string(), "--gt", gt.string(), "--gt-format",
                        "thumos_csv", "--thresholds", "0.5", "0.9", "--csv", csv});
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    CHECK(j["report"]["ap_at"][0]["map"] == 1.0);
    CHECK(j["report"]["ap_at"][1]["map"] == 0.0);
    CHECK(testutil::read_file(csv).find("threshold,map\n0.500000,1.000000\n0.900000,0.000000\n") != std::string::npos);
}

TEST_CASE("evaluate schema mismatch") {
    Fixture f;
    const auto junk = f.dir.write("junk.json", R"({"hello": 1})");
    CHECK(run({"evaluate", "--pred", junk.string(), "--gt", f.gt, "--fps", "10"}).code == kExitConfig);
    CHECK(run({"evaluate", "--pred", f.gt, "--gt", f.gt}).code == kExitConfig);
    CHECK(run({"evaluate", "--pred", f.gt, "--gt", f.gt, "--fps", "10", "--mode", "boxes"}).code == kExitConfig);
}

TEST_CASE("validate rejects a broken timeline") {
    testutil::TempDir dir;
    const auto hole = dir.write("hole.json", R"({"duration": 10, "segments": [{"label": "a", "start": 0, "end": 4},
        {"label": "b", "start": 5, "end": 10}]})");
    CHECK(run({"validate", "--timeline", hole.string()}).code == 0);
    CHECK(run({"validate", "--timeline", hole.string(), "--gapless"}).code == kExitConfig);
}

TEST_CASE("sweep over grids and iterations") {
    testutil::TempDir dir;
    const auto spec = dir.write("sweep.json", R"({"mode": "transitions", "grids": ["2x2", "3x3"], "iterations": [1, 4],
        "synthetic": {"count": 5, "seed": 3, "min_tasks": 3, "max_tasks": 4, "min_len": 4, "max_len": 12, "fps": 5}})");
    const auto out = (dir / "sweep.csv").string();
    const auto r = run({"sweep", "--spec", spec.string(), "--out", out, "--cell-px", "32"});
    REQUIRE(r.code == 0);
    const auto text = testutil::read_file(out);
    std::istringstream lines(text);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(lines, line)) {
        if (line.rfind("#", 0) == 0 || line.rfind("grid,", 0) == 0) continue;
        rows.push_back(line);
    }
    REQUIRE(rows.size() == 4);
    for (const auto& row : rows) CHECK(row.find(",ok,") != std::string::npos);
}

TEST_CASE("interrupted sweep resumes without duplicates") {
    testutil::TempDir dir;
    const auto spec = dir.write("sweep.json", R"({"grids": ["2x2", "3x3"], "iterations": [1, 2], "styles": ["tiled_corner"],
        "synthetic": {"count": 2, "seed": 1, "fps": 5, "min_len": 3, "max_len": 8}})");
    const auto out = (dir / "s.csv").string();
    const auto first = run({"sweep", "--spec", spec.string(), "--out", out, "--cell-px", "32", "--max-cells", "3"});
    REQUIRE(first.code == 0);
    CHECK(first.out.find("rerun to resume") != std::string::npos);
    const auto second = run({"sweep", "--spec", spec.string(), "--out", out, "--cell-px", "32"});
    REQUIRE(second.code == 0);
    const auto ledger = testutil::read_file(out + ".ledger.jsonl");
    CHECK(std::count(ledger.begin(), ledger.end(), '\n') == 4);
    const auto csv = testutil::read_file(out);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("noise sweep lowers mean mof") {
    testutil::TempDir dir;
    const auto spec = dir.write("sweep.json", R"({"grids": ["3x3"], "iterations": [3], "noise": [0.0, 0.25, 0.5],
        "synthetic": {"count": 20, "seed": 2, "fps": 4, "min_len": 4, "max_len": 16}})");
    const auto out = (dir / "noise.csv").string();
    REQUIRE(run({"sweep", "--spec", spec.string(), "--out", out, "--cell-px", "32", "--seed", "3"}).code == 0);
    std::istringstream lines(testutil::read_file(out));
    std::string line;
    std::vector<double> mofs;
    while (std::getline(lines, line)) {
        if (line.rfind("3x3,", 0) != 0) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
        mofs.push_back(std::stod(cols[5]));
    }
    REQUIRE(mofs.size() == 3);
    CHECK(mofs[0] >= mofs[1]);
    CHECK(mofs[1] >= mofs[2]);
}

TEST_CASE("binary smoke test") {
    const std::string cmd = std::string(TPIVOT_CLI_PATH) + " localize --synthetic --query x > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 2);
    const int help = std::system((std::string(TPIVOT_CLI_PATH) + " --help > /dev/null").c_str());
    CHECK(WEXITSTATUS(help) == 0);
}
