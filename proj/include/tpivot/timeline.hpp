#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace tpivot {

struct Segment {
    std::string label;
    double start_s = 0.0;
    double end_s = 0.0;

    double length() const { return end_s - start_s; }
    bool operator==(const Segment&) const = default;
};

// An ordered list of labelled segments over [0, duration_s].
struct Timeline {
    double duration_s = 0.0;
    std::vector<Segment> segments;

    bool operator==(const Timeline&) const = default;
};

enum class TimelineFormat { json, breakfast_txt, thumos_csv };

TimelineFormat parse_timeline_format(const std::string& name);

struct TimelineParseOptions {
    // Required for breakfast_txt.
    double fps = 0.0;
    // Breakfast annotations count frames from 1 unless this is set.
    bool zero_based = false;
    // Reject overlaps and holes; the timeline must partition [0, duration].
    bool gapless = false;
    // thumos_csv: keep only rows for this video. Empty keeps all rows.
    std::string video_id;
    // thumos_csv: duration to report. Non-positive means "latest end time".
    double duration_s = 0.0;
};

Timeline parse_timeline(const std::filesystem::path& path, TimelineFormat format,
                        const TimelineParseOptions& options = {});

Timeline timeline_from_json(const nlohmann::json& j, bool gapless = false);
nlohmann::json timeline_to_json(const Timeline& timeline);

struct VideoSegment {
    std::string video_id;
    Segment segment;
};

// All rows of a thumos_csv file (`video_id,label,start_s,end_s`, header optional).
std::vector<VideoSegment> parse_thumos_rows(const std::filesystem::path& path);

// Throws FormatError naming the first violation found.
void validate_timeline(const Timeline& timeline, bool gapless);

// Returns a human-readable description of the first gapless violation, or an
// empty string when the timeline partitions [0, duration] within `tolerance`.
std::string gapless_violation(const Timeline& timeline, double tolerance = 1e-6);

// Labels in order of first appearance.
std::vector<std::string> ordered_labels(const Timeline& timeline);

}  // namespace tpivot
