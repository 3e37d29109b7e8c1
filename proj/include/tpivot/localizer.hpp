#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpivot/backend.hpp"
#include "tpivot/frame_source.hpp"
#include "tpivot/prompt_image.hpp"
#include "tpivot/timeline.hpp"

namespace tpivot {

// Where the end-boundary search of estimate_transitions starts.
enum class EndWindowMode { full_video, after_start };

EndWindowMode parse_end_window_mode(const std::string& name);
std::string to_string(EndWindowMode mode);

struct SearchConfig {
    GridSpec grid;
    int iterations = 4;
    double min_window_s = -1.0;  // negative: 4 frame intervals of the source
    double window_shrink = 0.5;
    EndWindowMode end_window = EndWindowMode::full_video;
    int concurrency = 1;  // parallel boundary searches

    void validate() const;
    double min_window_for(const FrameSource& source) const;
    int samples() const { return grid.frame_count(); }
};

inline constexpr int kMaxIterations = 12;

struct TraceEntry {
    std::string task;
    int task_index = 1;
    Boundary boundary = Boundary::start;
    int iteration = 1;
    double window_center = 0.0;
    double window_width = 0.0;
    int selected_index = 0;  // 0: model reported the action absent
    double selected_time = 0.0;
    bool fallback = false;
};

nlohmann::json trace_to_json(const std::vector<TraceEntry>& trace);

struct BoundaryResult {
    double time_s = 0.0;
    bool detected = true;  // false only when allow_none and the first answer was NONE
    std::vector<TraceEntry> trace;
};

// Sampling windows are truncated to [lo, hi] of this range (defaults to the
// whole video).
struct SearchBounds {
    double lo = 0.0;
    double hi = -1.0;  // negative: video duration
};

// Iterative boundary search: sample, compose, query, re-center on the chosen
// badge, shrink the window.
BoundaryResult localize_boundary(const FrameSource& source, VlmBackend& backend, const PromptContext& ctx,
                                 const SearchConfig& config, const TimeWindow& initial_window,
                                 const SearchBounds& bounds = {});

struct ActionResult {
    Segment segment;
    bool detected = true;
    std::vector<TraceEntry> trace;
};

// Start over [span_lo, span_hi], then end over [start, span_hi].
ActionResult localize_action_in(const FrameSource& source, VlmBackend& backend, const PromptContext& ctx,
                                const SearchConfig& config, double span_lo, double span_hi);

ActionResult localize_action(const FrameSource& source, VlmBackend& backend, const std::string& label,
                             const SearchConfig& config);

struct TransitionResult {
    std::vector<double> transitions;     // T(i -> i+1), N - 1 entries
    std::vector<double> per_task_start;  // after the forward clamp
    std::vector<double> per_task_end;    // after the forward clamp
    std::vector<double> raw_start;
    std::vector<double> raw_end;
    // i where per_task_end[i] > per_task_end[i + 1] survived the clamp pass.
    std::vector<std::size_t> residual_end_violations;
    // i where transition i had to be raised to transition i - 1 to keep the
    // derived timeline ordered.
    std::vector<std::size_t> transition_repairs;
    Timeline timeline;
    std::vector<TraceEntry> trace;
};

// Forward pass: a start earlier than its predecessor is raised to it.
void clamp_starts_forward(std::vector<double>& starts);
// Forward pass, applied literally: end i is lowered to end i+1 when larger.
// A later lowering can re-break an earlier pair; see end_order_violations.
void clamp_ends_forward(std::vector<double>& ends);
std::vector<std::size_t> end_order_violations(const std::vector<double>& ends);
// (end_i + start_{i+1}) / 2.
std::vector<double> midpoint_transitions(const std::vector<double>& starts, const std::vector<double>& ends);
// Gapless timeline from transitions; decreasing transitions are raised and
// reported through `repairs`.
Timeline timeline_from_transitions(const std::vector<std::string>& labels, const std::vector<double>& transitions,
                                   double duration_s, std::vector<std::size_t>* repairs = nullptr);

TransitionResult estimate_transitions(const FrameSource& source, VlmBackend& backend,
                                      const std::vector<std::string>& labels, const SearchConfig& config);

struct ScanResult {
    std::vector<Segment> segments;
    std::vector<TraceEntry> trace;
    std::vector<double> cursors;  // cursor at the top of every loop, per label in order
    int windows = 0;
};

inline constexpr double kDefaultScanWindowS = 5.0;

// Slides a fixed window over the video looking for each label; a detection
// moves the cursor to the localized end, otherwise it advances a full window.
ScanResult windowed_scan(const FrameSource& source, VlmBackend& backend, const std::vector<std::string>& labels,
                         double scan_window_s, const SearchConfig& config);

// Runs fn(0..n-1) on up to `workers` threads. Exceptions are rethrown (first
// by index) after all workers finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace tpivot
