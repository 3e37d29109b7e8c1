#include "tpivot/prompt_image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tpivot/errors.hpp"

namespace tpivot {
namespace {

const cv::Scalar kCanvasBackground(255, 255, 255);
const cv::Scalar kLetterbox(0, 0, 0);
const cv::Scalar kBadgeFill(0, 0, 200);
const cv::Scalar kBadgeText(255, 255, 255);
constexpr int kStackedDefaultCellPx = 512;

// Resizes `frame` into a cell_px square, preserving aspect ratio.
cv::Mat letterbox(const cv::Mat& frame, int cell_px) {
    cv::Mat cell(cell_px, cell_px, CV_8UC3, kLetterbox);
    if (frame.empty()) return cell;
    cv::Mat bgr;
    if (frame.channels() == 1) {
        cv::cvtColor(frame, bgr, cv::COLOR_GRAY2BGR);
    } else if (frame.channels() == 4) {
        cv::cvtColor(frame, bgr, cv::COLOR_BGRA2BGR);
    } else {
        bgr = frame;
    }
    const double scale = std::min(static_cast<double>(cell_px) / bgr.cols, static_cast<double>(cell_px) / bgr.rows);
    const int w = std::clamp(static_cast<int>(std::lround(bgr.cols * scale)), 1, cell_px);
    const int h = std::clamp(static_cast<int>(std::lround(bgr.rows * scale)), 1, cell_px);
    cv::Mat resized;
    cv::resize(bgr, resized, {w, h}, 0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
    resized.copyTo(cell(cv::Rect((cell_px - w) / 2, (cell_px - h) / 2, w, h)));
    return cell;
}

int badge_diameter(const GridSpec& grid, int cell_px) {
    return std::max(1, static_cast<int>(std::lround(grid.label_scale * cell_px)));
}

cv::Point badge_center(GridStyle style, cv::Rect cell, int diameter) {
    if (style == GridStyle::tiled_center) return {cell.x + cell.width / 2, cell.y + cell.height / 2};
    const int margin = std::max(2, diameter / 8);
    return {cell.x + margin + diameter / 2, cell.y + margin + diameter / 2};
}

}  // namespace

ClampedRange clamp_window(const TimeWindow& window, double duration_s) {
    if (!std::isfinite(window.center_s) || !std::isfinite(window.width_s) || !(window.width_s > 0.0)) {
        throw ConfigError("sampling window needs a finite center and positive width");
    }
    ClampedRange r{std::max(0.0, window.lo()), std::min(duration_s, window.hi())};
    if (r.lo > r.hi) throw ConfigError("sampling window does not intersect the video");
    return r;
}

GridStyle parse_grid_style(const std::string& name) {
    if (name == "tiled_corner" || name == "corner") return GridStyle::tiled_corner;
    if (name == "tiled_center" || name == "center") return GridStyle::tiled_center;
    if (name == "tiled_spacing" || name == "spacing") return GridStyle::tiled_spacing;
    if (name == "stacked") return GridStyle::stacked;
    throw ConfigError("unknown style '" + name + "' (tiled_corner, tiled_center, tiled_spacing, stacked)");
}

std::string to_string(GridStyle style) {
    switch (style) {
        case GridStyle::tiled_corner: return "tiled_corner";
        case GridStyle::tiled_center: return "tiled_center";
        case GridStyle::tiled_spacing: return "tiled_spacing";
        case GridStyle::stacked: return "stacked";
    }
    return "unknown";
}

int GridSpec::gutter_px() const {
    if (style != GridStyle::tiled_spacing) return 0;
    return static_cast<int>(std::lround(0.05 * effective_cell_px()));
}

int GridSpec::effective_cell_px() const { return cell_px > 0 ? cell_px : default_cell_px(); }

int GridSpec::default_cell_px() const {
    if (style == GridStyle::stacked) return kStackedDefaultCellPx;
    const int m = std::max({rows, cols, 1});
    const double per_cell = style == GridStyle::tiled_spacing ? m + 0.05 * (m - 1) : m;
    int cell = static_cast<int>(kMaxCanvasEdgePx / per_cell);
    auto edge = [&](int c) {
        const int g = style == GridStyle::tiled_spacing ? static_cast<int>(std::lround(0.05 * c)) : 0;
        return m * c + (m - 1) * g;
    };
    while (cell > 1 && edge(cell) > kMaxCanvasEdgePx) --cell;
    return cell;
}

void GridSpec::validate() const {
    if (rows < 1 || cols < 1) throw ConfigError("grid rows and cols must be >= 1");
    if (rows * cols < 2) throw ConfigError("grid needs at least 2 cells");
    if (rows * cols > kMaxGridCells) throw ConfigError("grid exceeds 64 cells");
    if (effective_cell_px() < kMinCellPx) throw ConfigError("cell_px below 32 cannot hold a legible badge");
    if (!(label_scale > 0.0) || label_scale > 1.0) throw ConfigError("label_scale must be in (0, 1]");
}

GridSpec parse_grid(const std::string& text) {
    const auto x = text.find_first_of("xX");
    GridSpec g;
    try {
        if (x == std::string::npos) throw std::invalid_argument(text);
        std::size_t used = 0;
        g.rows = std::stoi(text.substr(0, x), &used);
        if (used != x) throw std::invalid_argument(text);
        const std::string rest = text.substr(x + 1);
        g.cols = std::stoi(rest, &used);
        if (used != rest.size()) throw std::invalid_argument(text);
    } catch (const std::exception&) {
        throw ConfigError("grid must look like 5x5, got '" + text + "'");
    }
    g.validate();
    return g;
}

std::string grid_name(const GridSpec& grid) { return std::to_string(grid.rows) + "x" + std::to_string(grid.cols); }

std::vector<double> linspace(const ClampedRange& range, int n) {
    if (n < 2) throw ConfigError("need at least 2 samples per window");
    std::vector<double> ts(static_cast<std::size_t>(n));
    const double step = (range.hi - range.lo) / (n - 1);
    for (int j = 0; j < n; ++j) ts[static_cast<std::size_t>(j)] = range.lo + j * step;
    ts.back() = range.hi;
    return ts;
}

std::vector<double> sample_timestamps(const TimeWindow& window, double duration_s, int n) {
    if (n < 2) throw ConfigError("need at least 2 samples per window");
    return linspace(clamp_window(window, duration_s), n);
}

std::vector<SampledFrame> sample_frames_at(const FrameSource& source, const std::vector<double>& timestamps) {
    std::vector<SampledFrame> frames;
    frames.reserve(timestamps.size());
    for (std::size_t j = 0; j < timestamps.size(); ++j) {
        auto f = frame_at(source, timestamps[j]);
        frames.push_back({static_cast<int>(j) + 1, timestamps[j], f.index, std::move(f.image)});
    }
    return frames;
}

std::vector<SampledFrame> sample_frames(const FrameSource& source, const TimeWindow& window, int n) {
    return sample_frames_at(source, sample_timestamps(window, source.duration_s(), n));
}

void draw_badge(cv::Mat& canvas, cv::Point center, int diameter, int number) {
    const int radius = std::max(1, diameter / 2);
    cv::circle(canvas, center, radius, kBadgeFill, cv::FILLED, cv::LINE_AA);
    const std::string text = std::to_string(number);
    const int face = cv::FONT_HERSHEY_SIMPLEX;
    const int thickness = std::max(1, diameter / 16);
    int baseline = 0;
    const cv::Size unit = cv::getTextSize(text, face, 1.0, thickness, &baseline);
    const double scale = std::min(0.7 * diameter / unit.width, 0.55 * diameter / unit.height);
    const cv::Size sz = cv::getTextSize(text, face, scale, thickness, &baseline);
    const cv::Point origin(center.x - sz.width / 2, center.y + sz.height / 2);
    cv::putText(canvas, text, origin, face, scale, kBadgeText, thickness, cv::LINE_AA);
}

PromptImage compose(const std::vector<SampledFrame>& frames, const GridSpec& grid) {
    grid.validate();
    const bool stacked = grid.style == GridStyle::stacked;
    if (frames.empty()) throw ConfigError("no frames to compose");
    if (!stacked && static_cast<int>(frames.size()) != grid.frame_count()) {
        throw ConfigError("grid " + grid_name(grid) + " needs " + std::to_string(grid.frame_count()) + " frames, got " +
                          std::to_string(frames.size()));
    }
    PromptImage out;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i].grid_index != static_cast<int>(i) + 1) throw ConfigError("grid indices must run 1..N in order");
        out.index_to_time[frames[i].grid_index] = frames[i].timestamp_s;
    }

    const int cell = grid.effective_cell_px();
    const int diameter = badge_diameter(grid, cell);
    if (stacked) {
        for (const auto& f : frames) {
            cv::Mat img = letterbox(f.image, cell);
            draw_badge(img, badge_center(GridStyle::tiled_corner, {0, 0, cell, cell}, diameter), diameter, f.grid_index);
            out.images.push_back(std::move(img));
        }
        return out;
    }

    const int gutter = grid.gutter_px();
    const int width = grid.cols * cell + (grid.cols - 1) * gutter;
    const int height = grid.rows * cell + (grid.rows - 1) * gutter;
    cv::Mat canvas(height, width, CV_8UC3, kCanvasBackground);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const int r = static_cast<int>(i) / grid.cols;
        const int c = static_cast<int>(i) % grid.cols;
        const cv::Rect roi(c * (cell + gutter), r * (cell + gutter), cell, cell);
        letterbox(frames[i].image, cell).copyTo(canvas(roi));
        draw_badge(canvas, badge_center(grid.style, roi, diameter), diameter, frames[i].grid_index);
    }
    out.images.push_back(std::move(canvas));
    return out;
}

std::vector<unsigned char> encode_png(const cv::Mat& image) {
    std::vector<unsigned char> buf;
    if (!cv::imencode(".png", image, buf)) throw IoError("PNG encoding failed");
    return buf;
}

std::vector<unsigned char> encode_jpeg(const cv::Mat& image, int quality) {
    std::vector<unsigned char> buf;
    if (!cv::imencode(".jpg", image, buf, {cv::IMWRITE_JPEG_QUALITY, quality})) throw IoError("JPEG encoding failed");
    return buf;
}

}  // namespace tpivot
