#pragma once

#include <map>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "tpivot/frame_source.hpp"

namespace tpivot {

// Sampling interval [center - width/2, center + width/2], in seconds.
struct TimeWindow {
    double center_s = 0.0;
    double width_s = 0.0;

    static TimeWindow spanning(double start_s, double end_s) {
        return {0.5 * (start_s + end_s), end_s - start_s};
    }
    double lo() const { return center_s - 0.5 * width_s; }
    double hi() const { return center_s + 0.5 * width_s; }
};

struct ClampedRange {
    double lo = 0.0;
    double hi = 0.0;
};

// Truncates the window to [0, duration] without re-centering.
// Throws ConfigError when the window is invalid or does not intersect the video.
ClampedRange clamp_window(const TimeWindow& window, double duration_s);

enum class GridStyle { tiled_corner, tiled_center, tiled_spacing, stacked };

GridStyle parse_grid_style(const std::string& name);
std::string to_string(GridStyle style);

inline constexpr int kMinCellPx = 32;
inline constexpr int kMaxCanvasEdgePx = 2048;
inline constexpr int kMaxGridCells = 64;

struct GridSpec {
    int rows = 5;
    int cols = 5;
    int cell_px = 0;  // 0 selects default_cell_px()
    GridStyle style = GridStyle::tiled_corner;
    double label_scale = 0.18;

    int frame_count() const { return rows * cols; }
    // Background pixels between cells (tiled_spacing only).
    int gutter_px() const;
    int effective_cell_px() const;
    // Largest cell edge whose full canvas stays within kMaxCanvasEdgePx.
    int default_cell_px() const;
    // Throws ConfigError on an unusable spec.
    void validate() const;
};

// Parses "5x5" style grid sizes.
GridSpec parse_grid(const std::string& text);
std::string grid_name(const GridSpec& grid);

struct SampledFrame {
    int grid_index = 0;  // 1-based badge number
    double timestamp_s = 0.0;
    std::size_t frame_index = 0;
    cv::Mat image;
};

// Endpoint-inclusive uniform timestamps over the clamped window.
std::vector<double> sample_timestamps(const TimeWindow& window, double duration_s, int n);

// n evenly spaced instants from range.lo to range.hi inclusive.
std::vector<double> linspace(const ClampedRange& range, int n);

std::vector<SampledFrame> sample_frames(const FrameSource& source, const TimeWindow& window, int n);
std::vector<SampledFrame> sample_frames_at(const FrameSource& source, const std::vector<double>& timestamps);

struct PromptImage {
    std::vector<cv::Mat> images;  // one canvas for tiled styles, N frames for stacked
    std::map<int, double> index_to_time;

    int badge_count() const { return static_cast<int>(index_to_time.size()); }
};

PromptImage compose(const std::vector<SampledFrame>& frames, const GridSpec& grid);

// Draws a numbered badge centered at `center`.
void draw_badge(cv::Mat& canvas, cv::Point center, int diameter, int number);

std::vector<unsigned char> encode_png(const cv::Mat& image);
std::vector<unsigned char> encode_jpeg(const cv::Mat& image, int quality = 90);

}  // namespace tpivot
