#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include <opencv2/core.hpp>

namespace tpivot {

inline constexpr const char* kDefaultFramePattern = "frame_%06d.png";

// Timestamp-indexed, read-only access to the frames of one video.
//
// Directory sources read pre-extracted image files named by a printf-style
// pattern with a single integer field (0-based). Synthetic sources render a
// deterministic image per frame index and are used for offline runs where
// only the ground truth matters.
class FrameSource {
public:
    static FrameSource open(const std::filesystem::path& dir, double fps,
                            const std::string& pattern = kDefaultFramePattern);
    static FrameSource synthetic(double fps, std::size_t frame_count,
                                 cv::Size frame_size = {64, 48});

    double fps() const { return fps_; }
    std::size_t frame_count() const { return frame_count_; }
    double duration_s() const { return static_cast<double>(frame_count_) / fps_; }
    bool is_synthetic() const { return synthetic_; }
    const std::filesystem::path& root() const { return root_; }
    const std::string& pattern() const { return pattern_; }

    // round-half-up of t * fps, clamped to [0, frame_count - 1].
    std::size_t index_at(double t_s) const;
    std::filesystem::path path_of(std::size_t index) const;
    cv::Mat load(std::size_t index) const;

private:
    FrameSource() = default;

    std::filesystem::path root_;
    std::string pattern_;
    double fps_ = 1.0;
    std::size_t frame_count_ = 0;
    bool synthetic_ = false;
    cv::Size synthetic_size_{64, 48};
};

FrameSource open_frame_source(const std::filesystem::path& dir, double fps,
                              const std::string& pattern = kDefaultFramePattern);

struct Frame {
    cv::Mat image;
    std::size_t index = 0;
};

Frame frame_at(const FrameSource& source, double t_s);

// Formats `pattern` (one %d / %0Nd field) with `index`.
std::string format_frame_name(const std::string& pattern, std::size_t index);

// Runs ffmpeg as a subprocess to dump frames at `fps` into `out_dir` using
// the default pattern (converted to 0-based numbering afterwards).
// Returns the number of frames written.
std::size_t extract_frames(const std::filesystem::path& video, const std::filesystem::path& out_dir,
                           double fps, const std::string& ffmpeg = "ffmpeg");

}  // namespace tpivot
