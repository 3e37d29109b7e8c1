#include "tpivot/localizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "tpivot/errors.hpp"

namespace tpivot {

EndWindowMode parse_end_window_mode(const std::string& name) {
    if (name == "full_video") return EndWindowMode::full_video;
    if (name == "after_start") return EndWindowMode::after_start;
    throw ConfigError("unknown end window mode '" + name + "' (full_video, after_start)");
}

std::string to_string(EndWindowMode mode) { return mode == EndWindowMode::full_video ? "full_video" : "after_start"; }

void SearchConfig::validate() const {
    grid.validate();
    if (iterations < 1 || iterations > kMaxIterations) throw ConfigError("iterations must be in [1, 12]");
    if (!(window_shrink > 0.0 && window_shrink < 1.0)) throw ConfigError("window_shrink must be in (0, 1)");
    if (!std::isfinite(min_window_s)) throw ConfigError("min_window_s must be finite");
    if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
}

double SearchConfig::min_window_for(const FrameSource& source) const {
    return min_window_s < 0.0 ? 4.0 / source.fps() : min_window_s;
}

nlohmann::json trace_to_json(const std::vector<TraceEntry>& trace) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& t : trace) {
        out.push_back({{"task", t.task},
                       {"task_index", t.task_index},
                       {"boundary", to_string(t.boundary)},
                       {"iteration", t.iteration},
                       {"window_center", t.window_center},
                       {"window_width", t.window_width},
                       {"selected_index", t.selected_index},
                       {"selected_time", t.selected_time},
                       {"fallback", t.fallback}});
    }
    return out;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    {
        std::vector<std::jthread> pool;
        const auto count = std::min(n, static_cast<std::size_t>(workers));
        for (std::size_t w = 0; w < count; ++w) {
            pool.emplace_back([&] {
                for (auto i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

BoundaryResult localize_boundary(const FrameSource& source, VlmBackend& backend, const PromptContext& ctx,
                                 const SearchConfig& config, const TimeWindow& initial_window,
                                 const SearchBounds& bounds) {
    ctx.validate();
    config.validate();
    const double duration = source.duration_s();
    const double lo = std::max(0.0, bounds.lo);
    const double hi = bounds.hi < 0.0 ? duration : std::min(duration, bounds.hi);
    if (lo > hi) throw ConfigError("search bounds do not intersect the video");

    const int n = config.samples();
    const double min_width = config.min_window_for(source);
    const double frame_half = 0.5 / source.fps();
    const std::string prompt = build_prompt(ctx);

    BoundaryResult result;
    TimeWindow window = initial_window;
    clamp_window(window, duration);  // validates
    double center = window.center_s;

    for (int k = 1; k <= config.iterations; ++k) {
        // Once badges are closer than half a frame apart another round cannot
        // change the selected frame.
        if (k > 1 && window.width_s / (n - 1) < frame_half) break;

        const ClampedRange range{std::max(lo, window.lo()), std::min(hi, window.hi())};
        if (range.lo > range.hi) throw ConfigError("sampling window is empty");
        const auto frames = sample_frames_at(source, linspace(range, n));
        const PromptImage image = compose(frames, config.grid);

        const VlmAnswer ans = backend.query({image, prompt, ctx, k, window});
        if (ans.selected_index && (*ans.selected_index < 1 || *ans.selected_index > n)) {
            throw BackendError(backend.name() + " returned badge " + std::to_string(*ans.selected_index) +
                                   " outside [1, " + std::to_string(n) + "]",
                               ans.raw_text);
        }

        TraceEntry entry{ctx.focused_label(), ctx.focus_index, ctx.boundary, k, window.center_s, window.width_s, 0,
                         center, ans.fallback};
        if (ans.selected_index) {
            center = image.index_to_time.at(*ans.selected_index);
            entry.selected_index = *ans.selected_index;
            entry.selected_time = center;
        } else if (!ctx.allow_none) {
            throw BackendError(backend.name() + " returned no badge", ans.raw_text);
        }
        result.trace.push_back(std::move(entry));

        if (!ans.selected_index && k == 1) {
            result.detected = false;
            result.time_s = center;
            return result;
        }
        window = {center, std::max(window.width_s * config.window_shrink, min_width)};
    }
    result.time_s = center;
    return result;
}

ActionResult localize_action_in(const FrameSource& source, VlmBackend& backend, const PromptContext& ctx,
                                const SearchConfig& config, double span_lo, double span_hi) {
    const double duration = source.duration_s();
    span_lo = std::max(0.0, span_lo);
    span_hi = std::min(duration, span_hi);
    if (!(span_hi > span_lo)) throw ConfigError("action search span is empty");
    const SearchBounds bounds{span_lo, span_hi};

    ActionResult out;
    PromptContext start_ctx = ctx;
    start_ctx.boundary = Boundary::start;
    auto start = localize_boundary(source, backend, start_ctx, config, TimeWindow::spanning(span_lo, span_hi), bounds);
    out.trace = std::move(start.trace);
    out.detected = start.detected;
    out.segment.label = ctx.focused_label();
    if (!start.detected) return out;

    double end = start.time_s;
    if (span_hi > start.time_s) {
        // Presence was settled by the start search.
        PromptContext end_ctx = ctx;
        end_ctx.boundary = Boundary::end;
        end_ctx.allow_none = false;
        auto e = localize_boundary(source, backend, end_ctx, config, TimeWindow::spanning(start.time_s, span_hi), bounds);
        out.trace.insert(out.trace.end(), e.trace.begin(), e.trace.end());
        end = std::max(e.time_s, start.time_s);
    }
    out.segment.start_s = std::clamp(start.time_s, 0.0, duration);
    out.segment.end_s = std::clamp(end, out.segment.start_s, duration);
    return out;
}

ActionResult localize_action(const FrameSource& source, VlmBackend& backend, const std::string& label,
                             const SearchConfig& config) {
    if (label.empty()) throw ConfigError("query label is empty");
    const PromptContext ctx{{label}, 1, Boundary::start, false};
    return localize_action_in(source, backend, ctx, config, 0.0, source.duration_s());
}

void clamp_starts_forward(std::vector<double>& starts) {
    for (std::size_t i = 0; i + 1 < starts.size(); ++i) {
        if (starts[i + 1] < starts[i]) starts[i + 1] = starts[i];
    }
}

void clamp_ends_forward(std::vector<double>& ends) {
    for (std::size_t i = 0; i + 1 < ends.size(); ++i) {
        if (ends[i] > ends[i + 1]) ends[i] = ends[i + 1];
    }
}

std::vector<std::size_t> end_order_violations(const std::vector<double>& ends) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i + 1 < ends.size(); ++i) {
        if (ends[i] > ends[i + 1]) out.push_back(i);
    }
    return out;
}

std::vector<double> midpoint_transitions(const std::vector<double>& starts, const std::vector<double>& ends) {
    if (starts.size() != ends.size()) throw ConfigError("start and end lists differ in length");
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < starts.size(); ++i) out.push_back((ends[i] + starts[i + 1]) / 2.0);
    return out;
}

Timeline timeline_from_transitions(const std::vector<std::string>& labels, const std::vector<double>& transitions,
                                   double duration_s, std::vector<std::size_t>* repairs) {
    if (labels.size() != transitions.size() + 1) throw ConfigError("need one more label than transitions");
    Timeline tl;
    tl.duration_s = duration_s;
    double prev = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double next = duration_s;
        if (i < transitions.size()) {
            next = std::clamp(transitions[i], 0.0, duration_s);
            if (next < prev) {
                if (repairs) repairs->push_back(i);
                next = prev;
            }
        }
        tl.segments.push_back({labels[i], prev, next});
        prev = next;
    }
    return tl;
}

TransitionResult estimate_transitions(const FrameSource& source, VlmBackend& backend,
                                      const std::vector<std::string>& labels, const SearchConfig& config) {
    if (labels.size() < 2) throw ConfigError("need >= 2 labels for transition estimation");
    for (const auto& l : labels) {
        if (l.empty()) throw ConfigError("empty task label");
    }
    config.validate();
    const std::size_t n = labels.size();
    const double duration = source.duration_s();
    const TimeWindow full{duration / 2.0, duration};

    TransitionResult out;
    std::vector<std::vector<TraceEntry>> start_traces(n), end_traces(n);
    out.raw_start.assign(n, 0.0);
    out.raw_end.assign(n, 0.0);

    parallel_for(n, config.concurrency, [&](std::size_t i) {
        const PromptContext ctx{labels, static_cast<int>(i) + 1, Boundary::start, false};
        auto r = localize_boundary(source, backend, ctx, config, full);
        out.raw_start[i] = r.time_s;
        start_traces[i] = std::move(r.trace);
    });
    out.per_task_start = out.raw_start;
    clamp_starts_forward(out.per_task_start);

    parallel_for(n, config.concurrency, [&](std::size_t i) {
        const PromptContext ctx{labels, static_cast<int>(i) + 1, Boundary::end, false};
        TimeWindow initial = full;
        if (config.end_window == EndWindowMode::after_start) {
            const double s = out.per_task_start[i];
            if (!(duration > s)) {
                out.raw_end[i] = duration;
                return;
            }
            initial = TimeWindow::spanning(s, duration);
        }
        auto r = localize_boundary(source, backend, ctx, config, initial);
        out.raw_end[i] = r.time_s;
        end_traces[i] = std::move(r.trace);
    });
    out.per_task_end = out.raw_end;
    clamp_ends_forward(out.per_task_end);
    out.residual_end_violations = end_order_violations(out.per_task_end);

    out.transitions = midpoint_transitions(out.per_task_start, out.per_task_end);
    out.timeline = timeline_from_transitions(labels, out.transitions, duration, &out.transition_repairs);

    for (auto& t : start_traces) out.trace.insert(out.trace.end(), t.begin(), t.end());
    for (auto& t : end_traces) out.trace.insert(out.trace.end(), t.begin(), t.end());
    return out;
}

ScanResult windowed_scan(const FrameSource& source, VlmBackend& backend, const std::vector<std::string>& labels,
                         double scan_window_s, const SearchConfig& config) {
    if (!(scan_window_s > 0.0) || !std::isfinite(scan_window_s)) throw ConfigError("scan window must be positive");
    if (labels.empty()) throw ConfigError("no labels to scan for");
    config.validate();
    const double duration = source.duration_s();
    // Smallest cursor advance: one badge interval of a full scan window.
    const double min_step = scan_window_s / (config.samples() - 1);

    struct PerLabel {
        std::vector<Segment> segments;
        std::vector<TraceEntry> trace;
        std::vector<double> cursors;
        int windows = 0;
    };
    std::vector<PerLabel> per_label(labels.size());

    parallel_for(labels.size(), config.concurrency, [&](std::size_t li) {
        if (labels[li].empty()) throw ConfigError("empty task label");
        auto& acc = per_label[li];
        const PromptContext ctx{{labels[li]}, 1, Boundary::start, true};
        double cursor = 0.0;
        while (cursor < duration) {
            acc.cursors.push_back(cursor);
            ++acc.windows;
            const double window_end = std::min(cursor + scan_window_s, duration);
            auto found = localize_action_in(source, backend, ctx, config, cursor, window_end);
            acc.trace.insert(acc.trace.end(), found.trace.begin(), found.trace.end());
            if (!found.detected) {
                cursor += scan_window_s;
                continue;
            }
            if (found.segment.length() > 0.0) acc.segments.push_back(found.segment);
            cursor = std::max(found.segment.end_s, cursor + min_step);
        }
    });

    ScanResult out;
    for (auto& acc : per_label) {
        out.segments.insert(out.segments.end(), acc.segments.begin(), acc.segments.end());
        out.trace.insert(out.trace.end(), acc.trace.begin(), acc.trace.end());
        out.cursors.insert(out.cursors.end(), acc.cursors.begin(), acc.cursors.end());
        out.windows += acc.windows;
    }
    std::stable_sort(out.segments.begin(), out.segments.end(),
                     [](const Segment& a, const Segment& b) { return a.start_s < b.start_s; });
    return out;
}

}  // namespace tpivot
