#include "tpivot/timeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "tpivot/errors.hpp"

namespace tpivot {
namespace {

constexpr double kEps = 1e-9;

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

bool parse_double(const std::string& text, double& out) {
    std::string t = trim(text);
    if (t.empty()) return false;
    std::istringstream in(t);
    in.imbue(std::locale::classic());
    in >> out;
    return !in.fail() && in.eof() && std::isfinite(out);
}

bool parse_long(const std::string& text, long& out) {
    std::string t = trim(text);
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    return ec == std::errc{} && ptr == t.data() + t.size() && !t.empty();
}

std::ifstream open_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line) + ": ";
}

Timeline parse_breakfast(const std::filesystem::path& path, const TimelineParseOptions& opt) {
    if (!(opt.fps > 0.0)) throw ConfigError("breakfast_txt needs a positive fps");
    auto in = open_text(path);
    Timeline tl;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        // Accept both "s e label" and the dataset's native "s-e label".
        const auto first_ws = std::min(t.find_first_of(" \t"), t.size());
        std::replace(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(first_ws), '-', ' ');
        std::istringstream fields(t);
        std::string s_txt, e_txt, label;
        fields >> s_txt >> e_txt;
        std::getline(fields, label);
        label = trim(label);
        long s = 0, e = 0;
        if (!parse_long(s_txt, s) || !parse_long(e_txt, e) || label.empty()) {
            throw FormatError(where(path, lineno) + "expected 'start_frame end_frame label'");
        }
        if (e < s) throw FormatError(where(path, lineno) + "end frame before start frame");
        const long base = opt.zero_based ? 0 : 1;
        if (s < base) throw FormatError(where(path, lineno) + "frame index below first frame");
        // Inclusive frame range [s, e] covers [(s - base) / fps, (e - base + 1) / fps).
        Segment seg{label, static_cast<double>(s - base) / opt.fps,
                    static_cast<double>(e - base + 1) / opt.fps};
        tl.segments.push_back(std::move(seg));
    }
    for (const auto& s : tl.segments) tl.duration_s = std::max(tl.duration_s, s.end_s);
    return tl;
}

}  // namespace

std::vector<VideoSegment> parse_thumos_rows(const std::filesystem::path& path) {
    auto in = open_text(path);
    std::vector<VideoSegment> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> cols;
        std::stringstream ss(t);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(trim(col));
        if (cols.size() != 4) throw FormatError(where(path, lineno) + "expected 4 comma-separated columns");
        double s = 0, e = 0;
        if (!parse_double(cols[2], s) || !parse_double(cols[3], e)) {
            if (lineno == 1) continue;  // header
            throw FormatError(where(path, lineno) + "start/end are not numbers");
        }
        if (e < s) throw FormatError(where(path, lineno) + "end before start");
        if (s < 0) throw FormatError(where(path, lineno) + "negative start");
        rows.push_back({cols[0], {cols[1], s, e}});
    }
    return rows;
}

namespace {

Timeline parse_thumos(const std::filesystem::path& path, const TimelineParseOptions& opt) {
    Timeline tl;
    double latest = 0.0;
    for (auto& row : parse_thumos_rows(path)) {
        if (!opt.video_id.empty() && row.video_id != opt.video_id) continue;
        latest = std::max(latest, row.segment.end_s);
        tl.segments.push_back(std::move(row.segment));
    }
    std::stable_sort(tl.segments.begin(), tl.segments.end(),
                     [](const Segment& a, const Segment& b) { return a.start_s < b.start_s; });
    tl.duration_s = opt.duration_s > 0.0 ? opt.duration_s : latest;
    return tl;
}

}  // namespace

TimelineFormat parse_timeline_format(const std::string& name) {
    if (name == "json") return TimelineFormat::json;
    if (name == "breakfast_txt") return TimelineFormat::breakfast_txt;
    if (name == "thumos_csv") return TimelineFormat::thumos_csv;
    throw ConfigError("unknown timeline format '" + name + "' (json, breakfast_txt, thumos_csv)");
}

std::string gapless_violation(const Timeline& tl, double tolerance) {
    if (tl.segments.empty()) return "no segments";
    if (std::abs(tl.segments.front().start_s) > tolerance) return "first segment does not start at 0";
    for (std::size_t i = 0; i + 1 < tl.segments.size(); ++i) {
        const double gap = tl.segments[i + 1].start_s - tl.segments[i].end_s;
        if (std::abs(gap) > tolerance) {
            return (gap > 0 ? "gap" : "overlap") + std::string(" between segments ") + std::to_string(i) +
                   " and " + std::to_string(i + 1);
        }
    }
    if (std::abs(tl.segments.back().end_s - tl.duration_s) > tolerance) {
        return "last segment does not end at the duration";
    }
    return {};
}

void validate_timeline(const Timeline& tl, bool gapless) {
    if (!std::isfinite(tl.duration_s) || tl.duration_s < 0) throw FormatError("invalid duration");
    for (std::size_t i = 0; i < tl.segments.size(); ++i) {
        const auto& s = tl.segments[i];
        const std::string tag = "segment " + std::to_string(i) + " (" + s.label + "): ";
        if (!std::isfinite(s.start_s) || !std::isfinite(s.end_s)) throw FormatError(tag + "non-finite time");
        if (s.end_s < s.start_s) throw FormatError(tag + "end < start");
        if (s.start_s < -kEps || s.end_s > tl.duration_s + kEps) throw FormatError(tag + "outside [0, duration]");
        if (i > 0 && s.start_s < tl.segments[i - 1].start_s) throw FormatError(tag + "segments not sorted by start");
    }
    if (gapless) {
        if (auto why = gapless_violation(tl); !why.empty()) throw FormatError("timeline is not gapless: " + why);
        return;
    }
    // Detection style: gaps allowed, no overlap within a class.
    std::map<std::string, double> last_end;
    for (const auto& s : tl.segments) {
        auto it = last_end.find(s.label);
        if (it != last_end.end() && s.start_s < it->second - kEps) {
            throw FormatError("overlapping segments for class '" + s.label + "'");
        }
        last_end[s.label] = std::max(it == last_end.end() ? s.end_s : it->second, s.end_s);
    }
}

Timeline timeline_from_json(const nlohmann::json& j, bool gapless) {
    if (!j.is_object() || !j.contains("segments") || !j["segments"].is_array()) {
        throw FormatError("timeline JSON needs a 'segments' array");
    }
    Timeline tl;
    try {
        for (const auto& js : j["segments"]) {
            tl.segments.push_back({js.at("label").get<std::string>(), js.at("start").get<double>(),
                                   js.at("end").get<double>()});
        }
        if (j.contains("duration")) {
            tl.duration_s = j["duration"].get<double>();
        } else {
            for (const auto& s : tl.segments) tl.duration_s = std::max(tl.duration_s, s.end_s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad timeline JSON: ") + e.what());
    }
    validate_timeline(tl, gapless);
    return tl;
}

nlohmann::json timeline_to_json(const Timeline& tl) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : tl.segments) segs.push_back({{"label", s.label}, {"start", s.start_s}, {"end", s.end_s}});
    return {{"duration", tl.duration_s}, {"segments", std::move(segs)}};
}

Timeline parse_timeline(const std::filesystem::path& path, TimelineFormat format,
                        const TimelineParseOptions& options) {
    Timeline tl;
    switch (format) {
        case TimelineFormat::json: {
            auto in = open_text(path);
            nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
            if (j.is_discarded()) throw FormatError(path.string() + ": not valid JSON");
            return timeline_from_json(j, options.gapless);
        }
        case TimelineFormat::breakfast_txt:
            tl = parse_breakfast(path, options);
            break;
        case TimelineFormat::thumos_csv:
            tl = parse_thumos(path, options);
            break;
    }
    validate_timeline(tl, options.gapless);
    return tl;
}

std::vector<std::string> ordered_labels(const Timeline& tl) {
    std::vector<std::string> out;
    for (const auto& s : tl.segments) {
        if (std::find(out.begin(), out.end(), s.label) == out.end()) out.push_back(s.label);
    }
    return out;
}

}  // namespace tpivot
