#include "tpivot/backend.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <random>

#include "tpivot/errors.hpp"

namespace tpivot {
namespace {

struct Fnv1a {
    std::uint64_t h = 1469598103934665603ull;

    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double overlap(const Segment& s, double lo, double hi) { return std::max(0.0, std::min(s.end_s, hi) - std::max(s.start_s, lo)); }

double distance(const Segment& s, double lo, double hi) {
    if (s.end_s < lo) return lo - s.end_s;
    if (s.start_s > hi) return s.start_s - hi;
    return 0.0;
}

double min_spacing(const std::map<int, double>& index_to_time) {
    double best = std::numeric_limits<double>::infinity();
    for (auto it = index_to_time.begin(), next = std::next(it); next != index_to_time.end(); ++it, ++next) {
        best = std::min(best, next->second - it->second);
    }
    return std::isfinite(best) ? best : 0.0;
}

}  // namespace

void OracleConfig::validate() const {
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw ConfigError("noise_rate must be in [0, 1]");
}

std::uint64_t query_key(std::uint64_t seed, const PromptContext& ctx, int iteration, const TimeWindow& window) {
    Fnv1a f;
    f.u64(seed);
    f.u64(static_cast<std::uint64_t>(ctx.focus_index));
    f.str(ctx.focused_label());
    f.u64(ctx.boundary == Boundary::start ? 0 : 1);
    f.u64(static_cast<std::uint64_t>(iteration));
    f.f64(window.center_s);
    f.f64(window.width_s);
    return splitmix64(f.h);
}

int nearest_badge(const std::map<int, double>& index_to_time, double t) {
    if (index_to_time.empty()) throw ConfigError("no badges");
    int best = index_to_time.begin()->first;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [idx, ts] : index_to_time) {
        const double d = std::abs(ts - t);
        if (d < best_d) {
            best_d = d;
            best = idx;
        }
    }
    return best;
}

VlmAnswer oracle_answer(const OracleConfig& oracle, const std::map<int, double>& index_to_time,
                        const PromptContext& ctx, std::uint64_t call_key) {
    ctx.validate();
    if (index_to_time.empty()) throw ConfigError("oracle needs at least one badge");
    const std::string& label = ctx.focused_label();

    std::vector<const Segment*> occurrences;
    for (const auto& s : oracle.ground_truth.segments) {
        if (s.label == label) occurrences.push_back(&s);
    }
    if (occurrences.empty()) throw ConfigError("label '" + label + "' does not occur in the oracle ground truth");

    const double lo = index_to_time.begin()->second;
    const double hi = index_to_time.rbegin()->second;
    const auto repeats = std::count(ctx.task_sequence.begin(), ctx.task_sequence.end(), label);

    const Segment* target = nullptr;
    if (repeats > 1) {
        const auto ordinal = std::count(ctx.task_sequence.begin(), ctx.task_sequence.begin() + ctx.focus_index, label);
        target = occurrences[std::min(static_cast<std::size_t>(ordinal), occurrences.size()) - 1];
    } else {
        for (const auto* s : occurrences) {
            if (!target) {
                target = s;
                continue;
            }
            const double ov = overlap(*s, lo, hi), best_ov = overlap(*target, lo, hi);
            if (ov > best_ov || (ov == best_ov && best_ov == 0.0 && distance(*s, lo, hi) < distance(*target, lo, hi))) {
                target = s;
            }
        }
    }

    VlmAnswer ans;
    ans.raw_text = "oracle";
    std::mt19937_64 rng(call_key);
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const int n = static_cast<int>(index_to_time.size());

    if (ctx.allow_none) {
        // With a degenerate span (all badges at one instant) touching is enough.
        const double needed = min_spacing(index_to_time);
        const bool visible = needed > 0.0 ? overlap(*target, lo, hi) >= needed
                                          : target->start_s <= hi && target->end_s >= lo;
        if (!visible) {
            ans.analysis = "action not visible";
            return ans;
        }
    }
    if (u < oracle.noise_rate) {
        const int pick = std::uniform_int_distribution<int>(0, n - 1)(rng);
        ans.selected_index = std::next(index_to_time.begin(), pick)->first;
        ans.analysis = "noise";
        return ans;
    }
    const double t_star = ctx.boundary == Boundary::start ? target->start_s : target->end_s;
    ans.selected_index = nearest_badge(index_to_time, t_star);
    ans.analysis = "nearest to " + std::to_string(t_star);
    return ans;
}

OracleBackend::OracleBackend(OracleConfig config) : config_(std::move(config)) { config_.validate(); }

VlmAnswer OracleBackend::query(const QueryRequest& request) {
    const auto key = query_key(config_.rng_seed, request.ctx, request.iteration, request.window);
    return oracle_answer(config_, request.image.index_to_time, request.ctx, key);
}

}  // namespace tpivot
