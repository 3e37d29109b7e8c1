#include "tpivot/run_config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tpivot/errors.hpp"

namespace tpivot {

BackendKind parse_backend_kind(const std::string& name) {
    if (name == "openai_http" || name == "http") return BackendKind::openai_http;
    if (name == "oracle") return BackendKind::oracle;
    if (name == "replay") return BackendKind::replay;
    throw ConfigError("unknown backend '" + name + "' (openai_http, oracle, replay)");
}

std::string to_string(BackendKind kind) {
    switch (kind) {
        case BackendKind::openai_http: return "openai_http";
        case BackendKind::oracle: return "oracle";
        case BackendKind::replay: return "replay";
    }
    return "unknown";
}

void RunConfig::validate() const {
    search.validate();
    if (!(fps > 0.0) || !std::isfinite(fps)) throw ConfigError("--fps must be positive");
    if (!(scan_window_s > 0.0)) throw ConfigError("scan window must be positive");
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw ConfigError("noise must be in [0, 1]");
    if (frames_dir.empty() && !synthetic_frames) throw ConfigError("give --frames DIR or --synthetic");
    if (synthetic_frames && gt_path.empty()) throw ConfigError("--synthetic needs --gt for the video duration");
    parse_timeline_format(gt_format);
    switch (backend) {
        case BackendKind::oracle:
            if (gt_path.empty()) throw ConfigError("the oracle backend needs --gt");
            break;
        case BackendKind::replay:
            if (transcript.empty()) throw ConfigError("the replay backend needs --transcript");
            chat.validate();
            break;
        case BackendKind::openai_http:
            chat.validate();
            break;
    }
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j = {
        {"backend", tpivot::to_string(backend)},
        {"grid", grid_name(search.grid)},
        {"style", tpivot::to_string(search.grid.style)},
        {"cell_px", search.grid.effective_cell_px()},
        {"label_scale", search.grid.label_scale},
        {"iterations", search.iterations},
        {"window_shrink", search.window_shrink},
        {"min_window_s", search.min_window_s},
        {"end_window", tpivot::to_string(search.end_window)},
        {"scan_window_s", scan_window_s},
        {"fps", fps},
        {"seed", seed},
        {"frame_pattern", frame_pattern},
        {"synthetic_frames", synthetic_frames},
        {"gt_format", gt_format},
        {"zero_based", zero_based},
    };
    if (backend == BackendKind::oracle) j["noise_rate"] = noise_rate;
    if (backend != BackendKind::oracle) {
        j["model"] = chat.model;
        j["endpoint"] = chat.endpoint;
        j["max_retries"] = chat.max_retries;
        j["fallback_to_center"] = chat.fallback_to_center;
        j["jpeg_quality"] = chat.jpeg_quality;
    }
    return j;
}

std::string hash_inputs(const std::vector<std::filesystem::path>& inputs) {
    std::string material;
    for (const auto& p : inputs) {
        if (p.empty()) continue;
        std::error_code ec;
        material += "path:" + p.filename().string() + "\n";
        if (std::filesystem::is_directory(p, ec)) {
            std::vector<std::string> entries;
            for (const auto& e : std::filesystem::directory_iterator(p)) {
                if (e.is_regular_file()) entries.push_back(e.path().filename().string() + ":" + std::to_string(e.file_size()));
            }
            std::sort(entries.begin(), entries.end());
            for (const auto& e : entries) material += e + "\n";
        } else {
            std::ifstream in(p, std::ios::binary);
            if (!in) throw IoError("cannot read " + p.string());
            std::ostringstream buf;
            buf << in.rdbuf();
            material += buf.str();
        }
    }
    return sha256_hex(material);
}

Timeline load_ground_truth(const RunConfig& config) {
    TimelineParseOptions opt;
    opt.fps = config.fps;
    opt.zero_based = config.zero_based;
    opt.video_id = config.video_id;
    return parse_timeline(config.gt_path, parse_timeline_format(config.gt_format), opt);
}

FrameSource open_source(const RunConfig& config, const std::optional<Timeline>& gt) {
    if (!config.frames_dir.empty()) return open_frame_source(config.frames_dir, config.fps, config.frame_pattern);
    if (!gt || !(gt->duration_s > 0.0)) throw ConfigError("synthetic frames need a ground truth with positive duration");
    const auto count = static_cast<std::size_t>(std::max(1.0, std::round(gt->duration_s * config.fps)));
    return FrameSource::synthetic(config.fps, count);
}

std::unique_ptr<VlmBackend> make_backend(const RunConfig& config, const std::optional<Timeline>& gt) {
    switch (config.backend) {
        case BackendKind::oracle:
            if (!gt) throw ConfigError("the oracle backend needs ground truth");
            return std::make_unique<OracleBackend>(OracleConfig{*gt, config.noise_rate, config.seed});
        case BackendKind::replay:
            return std::make_unique<ReplayBackend>(config.chat, config.transcript);
        case BackendKind::openai_http:
            return std::make_unique<HttpBackend>(config.chat);
    }
    throw ConfigError("unknown backend");
}

std::vector<std::string> read_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label list " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    std::vector<std::string> labels;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        const auto j = nlohmann::json::parse(text, nullptr, false);
        if (j.is_discarded() || !j.is_array()) throw FormatError(path.string() + ": bad JSON label list");
        for (const auto& v : j) {
            if (!v.is_string()) throw FormatError(path.string() + ": labels must be strings");
            labels.push_back(v.get<std::string>());
        }
    } else {
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            const auto b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            const auto e = line.find_last_not_of(" \t\r");
            labels.push_back(line.substr(b, e - b + 1));
        }
    }
    return labels;
}

}  // namespace tpivot
