#include "tpivot/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "tpivot/errors.hpp"
#include "tpivot/localizer.hpp"
#include "tpivot/metrics.hpp"
#include "tpivot/run_config.hpp"
#include "tpivot/synthetic.hpp"

namespace tpivot {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Raw option values; turned into a RunConfig once parsing succeeded.
struct RunOptions {
    RunConfig cfg;
    std::string grid = "5x5";
    std::string style = "tiled_corner";
    std::string backend = "oracle";
    std::string end_window = "full_video";
    fs::path out;

    RunConfig finish() {
        auto g = parse_grid(grid);
        g.style = parse_grid_style(style);
        g.cell_px = cfg.search.grid.cell_px;
        g.label_scale = cfg.search.grid.label_scale;
        cfg.search.grid = g;
        cfg.backend = parse_backend_kind(backend);
        cfg.search.end_window = parse_end_window_mode(end_window);
        cfg.chat.max_concurrency = std::max(cfg.chat.max_concurrency, 1);
        cfg.validate();
        return cfg;
    }
};

void add_source_options(CLI::App* cmd, RunOptions& o, bool fps_required) {
    cmd->add_option("--frames", o.cfg.frames_dir, "Directory of extracted frames");
    cmd->add_option("--pattern", o.cfg.frame_pattern, "Frame file name pattern")->capture_default_str();
    cmd->add_flag("--synthetic", o.cfg.synthetic_frames, "Render placeholder frames spanning the --gt duration");
    auto* fps = cmd->add_option("--fps", o.cfg.fps, "Frames per second of the frame directory");
    if (fps_required) fps->required();
    cmd->add_option("--gt", o.cfg.gt_path, "Ground-truth timeline (oracle backend, synthetic frames)");
    cmd->add_option("--gt-format", o.cfg.gt_format, "json | breakfast_txt | thumos_csv")->capture_default_str();
    cmd->add_flag("--zero-based", o.cfg.zero_based, "Breakfast frame numbers start at 0");
    cmd->add_option("--video", o.cfg.video_id, "Video id (filters thumos_csv rows, names outputs)");
}

void add_search_options(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("--grid", o.grid, "Grid size, e.g. 5x5")->capture_default_str();
    cmd->add_option("--iters", o.cfg.search.iterations, "Iterations per boundary search")->capture_default_str();
    cmd->add_option("--style", o.style, "tiled_corner | tiled_center | tiled_spacing | stacked")->capture_default_str();
    cmd->add_option("--cell-px", o.cfg.search.grid.cell_px, "Tile edge in pixels (0: fit 2048 px canvas)");
    cmd->add_option("--label-scale", o.cfg.search.grid.label_scale, "Badge diameter as a fraction of the tile")
        ->capture_default_str();
    cmd->add_option("--shrink", o.cfg.search.window_shrink, "Window scale per iteration")->capture_default_str();
    cmd->add_option("--min-window", o.cfg.search.min_window_s, "Smallest window in seconds (default 4 frames)");
    cmd->add_option("--end-window", o.end_window, "full_video | after_start")->capture_default_str();
    cmd->add_option("--concurrency", o.cfg.search.concurrency, "Parallel searches")->capture_default_str();
}

void add_backend_options(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("--backend", o.backend, "oracle | openai_http | replay")->capture_default_str();
    cmd->add_option("--seed", o.cfg.seed, "Oracle seed")->capture_default_str();
    cmd->add_option("--noise", o.cfg.noise_rate, "Oracle probability of a random answer")->capture_default_str();
    cmd->add_option("--transcript", o.cfg.transcript, "Replay transcript (JSON lines)");
    cmd->add_option("--record", o.cfg.chat.record_path, "Append HTTP replies to this transcript");
    cmd->add_option("--endpoint", o.cfg.chat.endpoint, "Chat completions URL")->envname("TPIVOT_ENDPOINT");
    cmd->add_option("--model", o.cfg.chat.model, "Model name")->capture_default_str();
    cmd->add_option("--api-key-env", o.cfg.chat.api_key_env, "Environment variable holding the API key")
        ->capture_default_str();
    cmd->add_option("--timeout", o.cfg.chat.timeout_s, "Request timeout in seconds")->capture_default_str();
    cmd->add_option("--retries", o.cfg.chat.max_retries, "Retries per query")->capture_default_str();
    cmd->add_option("--max-inflight", o.cfg.chat.max_concurrency, "Concurrent HTTP requests")->capture_default_str();
    cmd->add_option("--rpm", o.cfg.chat.requests_per_minute, "Request budget per minute (0: unlimited)");
    cmd->add_option("--jpeg-quality", o.cfg.chat.jpeg_quality, "JPEG quality for uploaded images")->capture_default_str();
    cmd->add_flag("!--no-fallback", o.cfg.chat.fallback_to_center, "Fail instead of answering the center badge");
}

void write_output(const fs::path& path, const std::string& text, std::ostream& out) {
    if (path.empty()) {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("write failed for " + path.string());
}

json segments_json(const std::vector<Segment>& segments) {
    json arr = json::array();
    for (const auto& s : segments) arr.push_back({{"label", s.label}, {"start", s.start_s}, {"end", s.end_s}});
    return arr;
}

std::string video_name(const RunConfig& cfg) {
    if (!cfg.video_id.empty()) return cfg.video_id;
    if (!cfg.frames_dir.empty()) return fs::absolute(cfg.frames_dir).lexically_normal().filename().string();
    return cfg.gt_path.stem().string();
}

struct Prepared {
    std::optional<Timeline> gt;
    FrameSource source;
    std::unique_ptr<VlmBackend> backend;
};

Prepared prepare(const RunConfig& cfg) {
    std::optional<Timeline> gt;
    if (!cfg.gt_path.empty()) gt = load_ground_truth(cfg);
    auto source = open_source(cfg, gt);
    auto backend = make_backend(cfg, gt);
    return {std::move(gt), std::move(source), std::move(backend)};
}

json base_output(const RunConfig& cfg, const FrameSource& source, const std::vector<fs::path>& inputs) {
    return {{"video", video_name(cfg)},
            {"duration", source.duration_s()},
            {"config_echo", cfg.to_json()},
            {"input_hash", hash_inputs(inputs)}};
}

int cmd_localize(RunOptions& o, const std::string& query, std::ostream& out) {
    if (query.empty()) throw ConfigError("--query must not be empty");
    const RunConfig cfg = o.finish();
    auto p = prepare(cfg);
    auto result = localize_action(p.source, *p.backend, query, cfg.search);
    json j = base_output(cfg, p.source, {cfg.gt_path, cfg.frames_dir, cfg.transcript});
    j["query"] = query;
    j["segments"] = segments_json({result.segment});
    j["transitions"] = json::array();
    j["per_iteration_trace"] = trace_to_json(result.trace);
    write_output(o.out, j.dump(2) + "\n", out);
    return kExitOk;
}

int cmd_transitions(RunOptions& o, const fs::path& labels_path, std::ostream& out) {
    const RunConfig cfg = o.finish();
    const auto labels = read_labels(labels_path);
    if (labels.size() < 2) throw ConfigError("need >= 2 labels for transition estimation");
    auto p = prepare(cfg);
    auto r = estimate_transitions(p.source, *p.backend, labels, cfg.search);
    const std::string gapless = gapless_violation(r.timeline);
    if (!gapless.empty()) throw std::logic_error("derived timeline is not gapless: " + gapless);

    json j = base_output(cfg, p.source, {cfg.gt_path, cfg.frames_dir, cfg.transcript, labels_path});
    j["labels"] = labels;
    j["segments"] = segments_json(r.timeline.segments);
    j["transitions"] = r.transitions;
    j["per_task_start"] = r.per_task_start;
    j["per_task_end"] = r.per_task_end;
    j["raw_start"] = r.raw_start;
    j["raw_end"] = r.raw_end;
    j["residual_end_violations"] = r.residual_end_violations;
    j["transition_repairs"] = r.transition_repairs;
    j["timeline"] = timeline_to_json(r.timeline);
    j["per_iteration_trace"] = trace_to_json(r.trace);
    if (!r.residual_end_violations.empty()) {
        spdlog::warn("end times still decrease after the clamp pass at {} position(s)", r.residual_end_violations.size());
    }
    write_output(o.out, j.dump(2) + "\n", out);
    return kExitOk;
}

int cmd_scan(RunOptions& o, std::vector<std::string> queries, const fs::path& labels_path, std::ostream& out) {
    const RunConfig cfg = o.finish();
    if (!labels_path.empty()) {
        const auto more = read_labels(labels_path);
        queries.insert(queries.end(), more.begin(), more.end());
    }
    if (queries.empty()) throw ConfigError("give --query or --labels");
    auto p = prepare(cfg);
    auto r = windowed_scan(p.source, *p.backend, queries, cfg.scan_window_s, cfg.search);
    json j = base_output(cfg, p.source, {cfg.gt_path, cfg.frames_dir, cfg.transcript, labels_path});
    j["labels"] = queries;
    j["segments"] = segments_json(r.segments);
    j["transitions"] = json::array();
    j["windows"] = r.windows;
    j["per_iteration_trace"] = trace_to_json(r.trace);
    write_output(o.out, j.dump(2) + "\n", out);
    return kExitOk;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw FormatError(path.string() + ": not valid JSON");
    return j;
}

// Prediction timeline from a transitions/localize/scan output or a bare timeline.
Timeline load_prediction_timeline(const fs::path& path) {
    const auto j = read_json_file(path);
    if (j.is_object() && j.contains("timeline")) return timeline_from_json(j["timeline"]);
    return timeline_from_json(j);
}

std::vector<Detection> load_detections(const fs::path& path, const std::string& default_video) {
    const auto j = read_json_file(path);
    std::vector<Detection> out;
    try {
        const bool listed = j.is_object() && j.contains("predictions");
        const json& items = listed ? j["predictions"] : j.at("segments");
        const std::string video = j.is_object() && j.contains("video") ? j["video"].get<std::string>() : default_video;
        for (const auto& d : items) {
            out.push_back({d.contains("video") ? d["video"].get<std::string>() : video, d.at("label").get<std::string>(),
                           d.at("start").get<double>(), d.at("end").get<double>(),
                           d.contains("score") ? d["score"].get<double>() : 1.0});
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad prediction file: " + e.what());
    }
    return out;
}

std::vector<GroundTruthInstance> load_gt_instances(const fs::path& path, const std::string& format,
                                                   const std::string& default_video) {
    std::vector<GroundTruthInstance> out;
    if (parse_timeline_format(format) == TimelineFormat::thumos_csv) {
        for (const auto& row : parse_thumos_rows(path)) {
            if (!default_video.empty() && row.video_id != default_video) continue;
            out.push_back({row.video_id, row.segment.label, row.segment.start_s, row.segment.end_s});
        }
        return out;
    }
    if (parse_timeline_format(format) != TimelineFormat::json) throw ConfigError("detection ground truth must be json or thumos_csv");
    const auto j = read_json_file(path);
    const auto tl = timeline_from_json(j);
    const std::string video = j.contains("video") && j["video"].is_string() ? j["video"].get<std::string>() : default_video;
    for (const auto& s : tl.segments) out.push_back({video, s.label, s.start_s, s.end_s});
    return out;
}

std::string csv_comment(const json& config, const std::string& input_hash) {
    return "# run_config=" + config.dump() + " input_hash=" + input_hash + "\n";
}

std::string fmt_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c == '\n' ? ' ' : c;
    }
    return q + "\"";
}

struct EvaluateOptions {
    fs::path pred;
    fs::path gt;
    std::string gt_format = "json";
    std::string mode = "segmentation";
    double fps = 0.0;
    bool zero_based = false;
    std::string video;
    std::vector<double> thresholds = kDefaultMapThresholds;
    fs::path out;
    fs::path csv;
};

int cmd_evaluate(const EvaluateOptions& e, std::ostream& out) {
    const std::string input_hash = hash_inputs({e.pred, e.gt});
    json config = {{"mode", e.mode}, {"gt_format", e.gt_format}};
    json report;
    std::string csv;
    if (e.mode == "segmentation") {
        if (!(e.fps > 0.0)) throw ConfigError("segmentation mode needs --fps");
        config["fps"] = e.fps;
        TimelineParseOptions opt;
        opt.fps = e.fps;
        opt.zero_based = e.zero_based;
        opt.video_id = e.video;
        const auto gt = parse_timeline(e.gt, parse_timeline_format(e.gt_format), opt);
        const auto pred = load_prediction_timeline(e.pred);
        const auto r = evaluate_segmentation(pred, gt, e.fps);
        const std::string vid = e.video.empty() ? e.gt.stem().string() : e.video;
        report = to_json(r);
        report["video_id"] = vid;
        csv = "video_id,mof,mean_iou,f1\n" + csv_field(vid) + "," + fmt_number(r.mof) + "," + fmt_number(r.mean_iou) + "," +
              fmt_number(r.f1) + "\n";
    } else if (e.mode == "detection") {
        config["thresholds"] = e.thresholds;
        const auto preds = load_detections(e.pred, e.video);
        const auto gt = load_gt_instances(e.gt, e.gt_format, e.video);
        const auto r = map_at(preds, gt, e.thresholds);
        report = to_json(r);
        csv = "threshold,map\n";
        for (double t : r.thresholds) csv += fmt_number(t) + "," + fmt_number(r.ap_at.at(t)) + "\n";
    } else {
        throw ConfigError("--mode must be segmentation or detection");
    }
    json j = {{"config_echo", config}, {"input_hash", input_hash}, {"report", report}};
    write_output(e.out, j.dump(2) + "\n", out);
    if (!e.csv.empty()) write_output(e.csv, csv_comment(config, input_hash) + csv, out);
    return kExitOk;
}

int cmd_validate(const fs::path& path, bool gapless, std::ostream& out) {
    const auto tl = load_prediction_timeline(path);
    validate_timeline(tl, gapless);
    out << path.string() << ": ok (" << tl.segments.size() << " segments" << (gapless ? ", gapless" : "") << ")\n";
    return kExitOk;
}

// ---- sweep -----------------------------------------------------------------

struct SweepVideo {
    std::string name;
    Timeline gt;
    double fps = 0.0;
    fs::path frames;
    std::vector<std::string> labels;
};

struct SweepSpec {
    std::string mode = "transitions";
    std::vector<std::string> grids;
    std::vector<int> iterations;
    std::vector<std::string> styles;
    std::vector<double> noise;
    std::vector<SweepVideo> videos;
};

SweepSpec load_sweep_spec(const fs::path& path) {
    const auto j = read_json_file(path);
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    SweepSpec s;
    try {
        s.mode = j.value("mode", "transitions");
        s.grids = j.value("grids", std::vector<std::string>{"5x5"});
        s.iterations = j.value("iterations", std::vector<int>{4});
        s.styles = j.value("styles", std::vector<std::string>{"tiled_corner"});
        s.noise = j.value("noise", std::vector<double>{0.0});
        for (const auto& v : j.value("videos", json::array())) {
            SweepVideo sv;
            sv.name = v.at("video").get<std::string>();
            sv.fps = v.at("fps").get<double>();
            TimelineParseOptions opt;
            opt.fps = sv.fps;
            opt.video_id = v.value("video_id", std::string{});
            opt.zero_based = v.value("zero_based", false);
            sv.gt = parse_timeline(resolve(v.at("gt").get<std::string>()),
                                   parse_timeline_format(v.value("gt_format", std::string("json"))), opt);
            if (v.contains("frames")) sv.frames = resolve(v["frames"].get<std::string>());
            sv.labels = v.value("labels", std::vector<std::string>{});
            s.videos.push_back(std::move(sv));
        }
        if (j.contains("synthetic")) {
            const auto& g = j["synthetic"];
            std::mt19937_64 rng(g.value("seed", 1ull));
            const int count = g.value("count", 5);
            const int min_tasks = g.value("min_tasks", 3), max_tasks = g.value("max_tasks", 6);
            const double min_len = g.value("min_len", 5.0), max_len = g.value("max_len", 20.0);
            for (int i = 0; i < count; ++i) {
                SweepVideo sv;
                char name[32];
                std::snprintf(name, sizeof name, "syn_%03d", i);
                sv.name = name;
                sv.fps = g.value("fps", 10.0);
                if (s.mode == "scan") {
                    const double duration = g.value("duration", 60.0);
                    sv.gt = random_detection_timeline(rng, duration, g.value("actions", 3),
                                                      g.value("labels", std::vector<std::string>{"action"}), min_len,
                                                      max_len);
                } else {
                    const int n = std::uniform_int_distribution<int>(min_tasks, max_tasks)(rng);
                    sv.gt = random_gapless_timeline(rng, n, min_len, max_len);
                }
                s.videos.push_back(std::move(sv));
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad sweep spec: " + e.what());
    }
    if (s.mode != "transitions" && s.mode != "scan") throw ConfigError("sweep mode must be transitions or scan");
    if (s.videos.empty()) throw ConfigError("sweep spec lists no videos");
    if (s.grids.empty() || s.iterations.empty() || s.styles.empty() || s.noise.empty()) {
        throw ConfigError("sweep axes must not be empty");
    }
    return s;
}

struct SweepCell {
    std::string grid;
    int iterations;
    std::string style;
    double noise;

    std::string key() const { return grid + "|" + std::to_string(iterations) + "|" + style + "|" + fmt_number(noise); }
};

struct VideoScore {
    double mof = 0.0, iou = 0.0, f1 = 0.0;
    std::vector<Detection> detections;
};

json run_sweep_cell(const SweepSpec& spec, const SweepCell& cell, const RunConfig& base, VlmBackend* shared_backend) {
    RunConfig cfg = base;
    auto grid = parse_grid(cell.grid);
    grid.style = parse_grid_style(cell.style);
    grid.cell_px = base.search.grid.cell_px;
    grid.label_scale = base.search.grid.label_scale;
    cfg.search.grid = grid;
    cfg.search.iterations = cell.iterations;
    cfg.noise_rate = cell.noise;
    cfg.search.validate();

    std::vector<VideoScore> scores(spec.videos.size());
    parallel_for(spec.videos.size(), cfg.search.concurrency, [&](std::size_t vi) {
        const auto& v = spec.videos[vi];
        const auto source = v.frames.empty()
                                ? FrameSource::synthetic(v.fps, static_cast<std::size_t>(std::max(1.0, std::round(v.gt.duration_s * v.fps))))
                                : open_frame_source(v.frames, v.fps, cfg.frame_pattern);
        std::unique_ptr<VlmBackend> own;
        VlmBackend* backend = shared_backend;
        if (!backend) {
            own = std::make_unique<OracleBackend>(OracleConfig{v.gt, cell.noise, cfg.seed + vi});
            backend = own.get();
        }
        SearchConfig search = cfg.search;
        search.concurrency = 1;
        const auto labels = v.labels.empty() ? ordered_labels(v.gt) : v.labels;
        auto& sc = scores[vi];
        if (spec.mode == "transitions") {
            auto r = estimate_transitions(source, *backend, labels, search);
            Timeline gt = v.gt;
            r.timeline.duration_s = gt.duration_s;
            if (!r.timeline.segments.empty()) r.timeline.segments.back().end_s = gt.duration_s;
            const auto rep = evaluate_segmentation(r.timeline, gt, v.fps);
            sc.mof = rep.mof;
            sc.iou = rep.mean_iou;
            sc.f1 = rep.f1;
        } else {
            auto r = windowed_scan(source, *backend, labels, cfg.scan_window_s, search);
            for (const auto& s : r.segments) sc.detections.push_back({v.name, s.label, s.start_s, s.end_s, 1.0});
        }
    });

    json row = {{"cell", cell.key()},      {"grid", cell.grid},   {"iterations", cell.iterations},
                {"style", cell.style},     {"noise", cell.noise}, {"videos", spec.videos.size()},
                {"status", "ok"},          {"error", ""}};
    const double n = static_cast<double>(scores.size());
    if (spec.mode == "transitions") {
        double mof_sum = 0, iou_sum = 0, f1_sum = 0;
        for (const auto& s : scores) {
            mof_sum += s.mof;
            iou_sum += s.iou;
            f1_sum += s.f1;
        }
        row["mean_mof"] = mof_sum / n;
        row["mean_iou"] = iou_sum / n;
        row["mean_f1"] = f1_sum / n;
    } else {
        std::vector<Detection> dets;
        std::vector<GroundTruthInstance> gts;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            dets.insert(dets.end(), scores[i].detections.begin(), scores[i].detections.end());
            for (const auto& s : spec.videos[i].gt.segments) gts.push_back({spec.videos[i].name, s.label, s.start_s, s.end_s});
        }
        row["avg_map"] = map_at(dets, gts).avg_map;
    }
    return row;
}

std::string sweep_csv_row(const json& r) {
    auto num = [&](const char* k) { return r.contains(k) ? fmt_number(r[k].get<double>()) : std::string(); };
    return csv_field(r["grid"].get<std::string>()) + "," + std::to_string(r["iterations"].get<int>()) + "," +
           r["style"].get<std::string>() + "," + fmt_number(r["noise"].get<double>()) + "," +
           std::to_string(r["videos"].get<std::size_t>()) + "," + num("mean_mof") + "," + num("mean_iou") + "," +
           num("mean_f1") + "," + num("avg_map") + "," + r["status"].get<std::string>() + "," +
           csv_field(r["error"].get<std::string>()) + "\n";
}

int cmd_sweep(RunOptions& o, const fs::path& spec_path, int max_cells, std::ostream& out) {
    // Frame and ground-truth inputs come from the spec, not the command line.
    o.cfg.synthetic_frames = true;
    if (o.cfg.fps <= 0.0) o.cfg.fps = 1.0;
    if (o.cfg.gt_path.empty()) o.cfg.gt_path = spec_path;
    const RunConfig cfg = o.finish();
    if (o.out.empty()) throw ConfigError("sweep needs --out for the CSV and its ledger");
    const auto spec = load_sweep_spec(spec_path);

    std::unique_ptr<VlmBackend> shared;
    if (cfg.backend != BackendKind::oracle) shared = make_backend(cfg, std::nullopt);

    const fs::path ledger_path = o.out.string() + ".ledger.jsonl";
    std::map<std::string, json> done;
    if (std::ifstream in(ledger_path); in) {
        std::string line;
        while (std::getline(in, line)) {
            const auto j = json::parse(line, nullptr, false);
            if (!j.is_discarded() && j.is_object() && j.contains("cell")) done[j["cell"].get<std::string>()] = j;
        }
    }

    std::vector<SweepCell> cells;
    for (const auto& g : spec.grids)
        for (int it : spec.iterations)
            for (const auto& st : spec.styles)
                for (double nz : spec.noise) cells.push_back({g, it, st, nz});

    int ran = 0;
    bool interrupted = false;
    for (const auto& cell : cells) {
        if (auto it = done.find(cell.key()); it != done.end() && it->second["status"] == "ok") continue;
        if (max_cells >= 0 && ran >= max_cells) {
            interrupted = true;
            break;
        }
        json row;
        try {
            row = run_sweep_cell(spec, cell, cfg, shared.get());
        } catch (const std::exception& e) {
            row = {{"cell", cell.key()}, {"grid", cell.grid},     {"iterations", cell.iterations}, {"style", cell.style},
                   {"noise", cell.noise}, {"videos", spec.videos.size()}, {"status", "error"}, {"error", e.what()}};
            spdlog::warn("sweep cell {} failed: {}", cell.key(), e.what());
        }
        std::ofstream ledger(ledger_path, std::ios::app);
        if (!ledger) throw IoError("cannot append to " + ledger_path.string());
        ledger << row.dump() << '\n';
        ledger.flush();
        done[cell.key()] = row;
        ++ran;
    }

    // Frame rate and ground truth are per video and live in the spec.
    json echo = cfg.to_json();
    for (const char* k : {"fps", "synthetic_frames", "frame_pattern", "gt_format", "zero_based"}) echo.erase(k);
    echo["sweep_spec"] = read_json_file(spec_path);
    std::string csv = csv_comment(echo, hash_inputs({spec_path}));
    csv += "grid,iterations,style,noise,videos,mean_mof,mean_iou,mean_f1,avg_map,status,error\n";
    for (const auto& cell : cells) {
        if (auto it = done.find(cell.key()); it != done.end()) csv += sweep_csv_row(it->second);
    }
    write_output(o.out, csv, out);
    if (interrupted) out << "sweep stopped after " << ran << " cell(s); rerun to resume\n";
    return kExitOk;
}

int classify(const std::exception& e, std::ostream& err) {
    err << "error: " << e.what() << "\n";
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitConfig;
    if (const auto* b = dynamic_cast<const BackendError*>(&e)) {
        if (!b->transcript().empty()) err << "transcript:\n" << b->transcript() << "\n";
        return kExitBackend;
    }
    if (dynamic_cast<const IoError*>(&e)) return kExitIo;
    return kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Training-free video action localization by iterative visual prompting", "tpivot"};
    app.require_subcommand(1);

    RunOptions opts;
    std::string query;
    std::vector<std::string> queries;
    fs::path labels_path;
    fs::path spec_path;
    int max_cells = -1;
    EvaluateOptions ev;
    fs::path validate_path;
    bool validate_gapless = false;
    fs::path video_path;
    fs::path extract_out;
    double extract_fps = 0.0;
    std::string ffmpeg = "ffmpeg";

    auto* localize = app.add_subcommand("localize", "Find the start and end of one action");
    add_source_options(localize, opts, true);
    add_search_options(localize, opts);
    add_backend_options(localize, opts);
    localize->add_option("--query", query, "Action to localize")->required();
    localize->add_option("--out", opts.out, "Output JSON (default stdout)");

    auto* transitions = app.add_subcommand("transitions", "Estimate transitions between ordered tasks");
    add_source_options(transitions, opts, true);
    add_search_options(transitions, opts);
    add_backend_options(transitions, opts);
    transitions->add_option("--labels", labels_path, "Ordered task labels, one per line")->required();
    transitions->add_option("--out", opts.out, "Output JSON (default stdout)");

    auto* scan = app.add_subcommand("scan", "Scan a long video in fixed windows");
    add_source_options(scan, opts, true);
    add_search_options(scan, opts);
    add_backend_options(scan, opts);
    scan->add_option("--query", queries, "Action to look for (repeatable)");
    scan->add_option("--labels", labels_path, "Actions to look for, one per line");
    scan->add_option("--scan-window", opts.cfg.scan_window_s, "Window length in seconds")->capture_default_str();
    scan->add_option("--out", opts.out, "Output JSON (default stdout)");

    auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
    evaluate->add_option("--pred", ev.pred, "Prediction file")->required();
    evaluate->add_option("--gt", ev.gt, "Ground-truth file")->required();
    evaluate->add_option("--gt-format", ev.gt_format, "json | breakfast_txt | thumos_csv")->capture_default_str();
    evaluate->add_option("--mode", ev.mode, "segmentation | detection")->capture_default_str();
    evaluate->add_option("--fps", ev.fps, "Frame rate for frame-level metrics");
    evaluate->add_flag("--zero-based", ev.zero_based, "Breakfast frame numbers start at 0");
    evaluate->add_option("--video", ev.video, "Video id");
    evaluate->add_option("--thresholds", ev.thresholds, "IoU thresholds for mAP");
    evaluate->add_option("--out", ev.out, "Report JSON (default stdout)");
    evaluate->add_option("--csv", ev.csv, "Also write a CSV report");

    auto* sweep = app.add_subcommand("sweep", "Run a grid of configurations over a set of videos");
    add_search_options(sweep, opts);
    add_backend_options(sweep, opts);
    sweep->add_option("--spec", spec_path, "Sweep specification (JSON)")->required();
    sweep->add_option("--scan-window", opts.cfg.scan_window_s, "Window length for scan mode")->capture_default_str();
    sweep->add_option("--out", opts.out, "Output CSV; the ledger is written next to it")->required();
    sweep->add_option("--max-cells", max_cells, "Stop after this many new cells");

    auto* validate = app.add_subcommand("validate", "Check a timeline or localization output");
    validate->add_option("--timeline", validate_path, "Timeline JSON or tool output")->required();
    validate->add_flag("--gapless", validate_gapless, "Require a gapless timeline");

    auto* extract = app.add_subcommand("extract", "Dump video frames with ffmpeg");
    extract->add_option("--video", video_path, "Input video")->required();
    extract->add_option("--out", extract_out, "Output frame directory")->required();
    extract->add_option("--fps", extract_fps, "Sampling rate")->required();
    extract->add_option("--ffmpeg", ffmpeg, "ffmpeg executable")->capture_default_str();

    std::vector<std::string> storage = args;
    if (storage.empty()) storage.emplace_back("tpivot");
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return kExitConfig;
    }

    try {
        if (localize->parsed()) return cmd_localize(opts, query, out);
        if (transitions->parsed()) return cmd_transitions(opts, labels_path, out);
        if (scan->parsed()) return cmd_scan(opts, queries, labels_path, out);
        if (evaluate->parsed()) return cmd_evaluate(ev, out);
        if (sweep->parsed()) return cmd_sweep(opts, spec_path, max_cells, out);
        if (validate->parsed()) return cmd_validate(validate_path, validate_gapless, out);
        if (extract->parsed()) {
            const auto n = extract_frames(video_path, extract_out, extract_fps, ffmpeg);
            out << "wrote " << n << " frames to " << extract_out.string() << "\n";
            return kExitOk;
        }
    } catch (const std::exception& e) {
        return classify(e, err);
    }
    return kExitConfig;
}

}  // namespace tpivot
