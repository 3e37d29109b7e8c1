#include "tpivot/frame_source.hpp"

#include <spawn.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <regex>
#include <set>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tpivot/errors.hpp"

extern char** environ;

namespace tpivot {
namespace {

struct PatternParts {
    std::string prefix;
    std::string suffix;
    int width = 0;
    bool zero_pad = false;
};

PatternParts split_pattern(const std::string& pattern) {
    const auto pct = pattern.find('%');
    if (pct == std::string::npos || pattern.find('%', pct + 1) != std::string::npos) {
        throw ConfigError("frame pattern needs exactly one %d field: " + pattern);
    }
    PatternParts p;
    p.prefix = pattern.substr(0, pct);
    std::size_t i = pct + 1;
    if (i < pattern.size() && pattern[i] == '0') {
        p.zero_pad = true;
        ++i;
    }
    while (i < pattern.size() && std::isdigit(static_cast<unsigned char>(pattern[i]))) {
        p.width = p.width * 10 + (pattern[i] - '0');
        ++i;
    }
    if (i >= pattern.size() || pattern[i] != 'd') throw ConfigError("frame pattern field must be %d or %0Nd: " + pattern);
    p.suffix = pattern.substr(i + 1);
    return p;
}

std::string regex_escape(const std::string& s) {
    static const std::regex special(R"([.^$|()\[\]{}*+?\\])");
    return std::regex_replace(s, special, R"(\$&)");
}

}  // namespace

std::string format_frame_name(const std::string& pattern, std::size_t index) {
    const auto p = split_pattern(pattern);
    std::string digits = std::to_string(index);
    if (static_cast<int>(digits.size()) < p.width) {
        digits.insert(0, static_cast<std::size_t>(p.width) - digits.size(), p.zero_pad ? '0' : ' ');
    }
    return p.prefix + digits + p.suffix;
}

FrameSource FrameSource::open(const std::filesystem::path& dir, double fps, const std::string& pattern) {
    if (!(fps > 0.0) || !std::isfinite(fps)) throw ConfigError("fps must be positive");
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw IoError("frame directory not found: " + dir.string());

    const auto parts = split_pattern(pattern);
    const std::regex name_re(regex_escape(parts.prefix) + "\\s*(\\d+)" + regex_escape(parts.suffix));
    std::set<std::size_t> indices;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        std::smatch m;
        if (std::regex_match(name, m, name_re)) indices.insert(std::stoull(m[1].str()));
    }
    if (indices.empty()) throw IoError("no frames found in " + dir.string() + " matching " + pattern);
    std::size_t expected = 0;
    for (auto idx : indices) {
        if (idx != expected) {
            throw IoError("frame sequence in " + dir.string() + " is missing index " + std::to_string(expected));
        }
        ++expected;
    }

    FrameSource src;
    src.root_ = dir;
    src.pattern_ = pattern;
    src.fps_ = fps;
    src.frame_count_ = indices.size();
    return src;
}

FrameSource FrameSource::synthetic(double fps, std::size_t frame_count, cv::Size frame_size) {
    if (!(fps > 0.0) || !std::isfinite(fps)) throw ConfigError("fps must be positive");
    if (frame_count == 0) throw ConfigError("synthetic source needs at least one frame");
    FrameSource src;
    src.fps_ = fps;
    src.frame_count_ = frame_count;
    src.synthetic_ = true;
    src.synthetic_size_ = frame_size;
    src.pattern_ = "synthetic";
    return src;
}

std::size_t FrameSource::index_at(double t_s) const {
    const double raw = std::floor(t_s * fps_ + 0.5);
    if (!(raw > 0.0)) return 0;
    const double last = static_cast<double>(frame_count_ - 1);
    return static_cast<std::size_t>(std::min(raw, last));
}

std::filesystem::path FrameSource::path_of(std::size_t index) const {
    return root_ / format_frame_name(pattern_, index);
}

cv::Mat FrameSource::load(std::size_t index) const {
    if (synthetic_) {
        // Hue sweeps across the video; a bar encodes the position.
        cv::Mat img(synthetic_size_, CV_8UC3);
        const double pos = frame_count_ > 1 ? static_cast<double>(index) / static_cast<double>(frame_count_ - 1) : 0.0;
        img.setTo(cv::Scalar(255.0 * pos, 128.0, 255.0 * (1.0 - pos)));
        const int bar = static_cast<int>(std::lround(pos * synthetic_size_.width));
        cv::rectangle(img, {0, synthetic_size_.height - 6}, {bar, synthetic_size_.height - 1}, cv::Scalar(255, 255, 255),
                      cv::FILLED);
        return img;
    }
    const auto path = path_of(index);
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw IoError("cannot decode frame " + path.string());
    return img;
}

FrameSource open_frame_source(const std::filesystem::path& dir, double fps, const std::string& pattern) {
    return FrameSource::open(dir, fps, pattern);
}

Frame frame_at(const FrameSource& source, double t_s) {
    if (!std::isfinite(t_s)) throw ConfigError("frame time must be finite");
    const auto idx = source.index_at(t_s);
    return {source.load(idx), idx};
}

std::size_t extract_frames(const std::filesystem::path& video, const std::filesystem::path& out_dir, double fps,
                           const std::string& ffmpeg) {
    if (!(fps > 0.0)) throw ConfigError("fps must be positive");
    std::error_code ec;
    if (!std::filesystem::is_regular_file(video, ec)) throw IoError("video not found: " + video.string());
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    const std::string fps_filter = "fps=" + std::to_string(fps);
    const std::string output = (out_dir / kDefaultFramePattern).string();
    std::vector<std::string> args = {ffmpeg,      "-hide_banner", "-loglevel", "error", "-i",    video.string(),
                                     "-vf",       fps_filter,     "-start_number", "0",  "-y",   output};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);

    pid_t pid = 0;
    if (int rc = posix_spawnp(&pid, ffmpeg.c_str(), nullptr, nullptr, argv.data(), environ); rc != 0) {
        throw IoError("cannot start " + ffmpeg + ": " + std::strerror(rc));
    }
    int status = 0;
    if (waitpid(pid, &status, 0) < 0) throw IoError("waitpid failed for " + ffmpeg);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        throw IoError(ffmpeg + " failed on " + video.string() + " (status " + std::to_string(status) + ")");
    }
    return open_frame_source(out_dir, fps).frame_count();
}

}  // namespace tpivot
