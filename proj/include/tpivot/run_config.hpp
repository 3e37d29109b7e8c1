#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpivot/frame_source.hpp"
#include "tpivot/http_backend.hpp"
#include "tpivot/localizer.hpp"
#include "tpivot/timeline.hpp"

namespace tpivot {

enum class BackendKind { openai_http, oracle, replay };

BackendKind parse_backend_kind(const std::string& name);
std::string to_string(BackendKind kind);

// Everything a CLI run depends on. Validated before any frame is read or any
// request is sent.
struct RunConfig {
    BackendKind backend = BackendKind::oracle;
    SearchConfig search;
    double scan_window_s = kDefaultScanWindowS;
    double fps = 0.0;
    std::uint64_t seed = 0;
    double noise_rate = 0.0;

    std::filesystem::path frames_dir;
    std::string frame_pattern = kDefaultFramePattern;
    bool synthetic_frames = false;

    std::filesystem::path gt_path;
    std::string gt_format = "json";
    bool zero_based = false;
    std::string video_id;

    std::filesystem::path transcript;  // replay input
    ChatConfig chat;

    void validate() const;
    // Result-affecting settings only: the echo is identical for runs that must
    // produce identical output (worker counts and output paths are left out).
    nlohmann::json to_json() const;
};

// Hash over the contents of input files; directories contribute their file
// names and sizes.
std::string hash_inputs(const std::vector<std::filesystem::path>& inputs);

Timeline load_ground_truth(const RunConfig& config);

// Frame directory, or a synthetic source spanning the ground-truth duration.
FrameSource open_source(const RunConfig& config, const std::optional<Timeline>& gt);

std::unique_ptr<VlmBackend> make_backend(const RunConfig& config, const std::optional<Timeline>& gt);

// One label per line, or a JSON array of strings.
std::vector<std::string> read_labels(const std::filesystem::path& path);

}  // namespace tpivot
