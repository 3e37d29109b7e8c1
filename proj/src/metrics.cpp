#include "tpivot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tpivot/errors.hpp"

namespace tpivot {
namespace {

struct Interval {
    double lo;
    double hi;
};

void require_disjoint(const Timeline& tl, const char* which) {
    std::vector<Interval> iv;
    for (const auto& s : tl.segments) iv.push_back({s.start_s, s.end_s});
    std::sort(iv.begin(), iv.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
    for (std::size_t i = 1; i < iv.size(); ++i) {
        if (iv[i].lo < iv[i - 1].hi) throw FormatError(std::string(which) + " timeline has overlapping segments");
    }
}

// Frames k (0 <= k < total) with lo <= k / fps < hi.
long long frames_in(double lo, double hi, double fps, long long total) {
    if (!(hi > lo)) return 0;
    const long long a = std::clamp(first_frame_at_or_after(lo, fps), 0LL, total);
    const long long b = std::clamp(first_frame_at_or_after(hi, fps), 0LL, total);
    return std::max(0LL, b - a);
}

std::vector<Interval> merged(const Timeline& tl, const std::string& label) {
    std::vector<Interval> iv;
    for (const auto& s : tl.segments) {
        if (s.label == label) iv.push_back({s.start_s, s.end_s});
    }
    std::sort(iv.begin(), iv.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
    std::vector<Interval> out;
    for (const auto& i : iv) {
        if (!out.empty() && i.lo <= out.back().hi) {
            out.back().hi = std::max(out.back().hi, i.hi);
        } else {
            out.push_back(i);
        }
    }
    return out;
}

double total_length(const std::vector<Interval>& iv) {
    double t = 0.0;
    for (const auto& i : iv) t += i.hi - i.lo;
    return t;
}

double intersection_length(const std::vector<Interval>& a, const std::vector<Interval>& b) {
    double t = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        t += std::max(0.0, std::min(a[i].hi, b[j].hi) - std::max(a[i].lo, b[j].lo));
        if (a[i].hi < b[j].hi) {
            ++i;
        } else {
            ++j;
        }
    }
    return t;
}

std::set<std::string> classes_of(const Timeline& tl) {
    std::set<std::string> out;
    for (const auto& s : tl.segments) out.insert(s.label);
    return out;
}

long long checked_frame_total(const Timeline& pred, const Timeline& gt, double fps) {
    if (!(fps > 0.0) || !std::isfinite(fps)) throw ConfigError("fps must be positive");
    const long long total = frame_total(gt.duration_s, fps);
    if (std::llabs(frame_total(pred.duration_s, fps) - total) > 1) {
        throw FormatError("prediction and ground truth durations differ by more than one frame");
    }
    require_disjoint(pred, "prediction");
    require_disjoint(gt, "ground truth");
    return total;
}

}  // namespace

long long first_frame_at_or_after(double t, double fps) {
    if (!(t > 0.0)) return 0;
    auto k = static_cast<long long>(std::ceil(t * fps));
    while (k > 0 && static_cast<double>(k - 1) / fps >= t) --k;
    while (static_cast<double>(k) / fps < t) ++k;
    return k;
}

long long frame_total(double duration_s, double fps) { return first_frame_at_or_after(duration_s, fps); }

double mof(const Timeline& pred, const Timeline& gt, double fps) {
    const long long total = checked_frame_total(pred, gt, fps);
    if (total == 0) throw FormatError("timeline has no frames");
    long long same_label = 0, any_overlap = 0, pred_cover = 0, gt_cover = 0;
    for (const auto& p : pred.segments) pred_cover += frames_in(p.start_s, p.end_s, fps, total);
    for (const auto& g : gt.segments) gt_cover += frames_in(g.start_s, g.end_s, fps, total);
    for (const auto& p : pred.segments) {
        for (const auto& g : gt.segments) {
            const long long n = frames_in(std::max(p.start_s, g.start_s), std::min(p.end_s, g.end_s), fps, total);
            any_overlap += n;
            if (p.label == g.label) same_label += n;
        }
    }
    // Frames where both sides are background also agree.
    const long long both_background = total - (pred_cover + gt_cover - any_overlap);
    return static_cast<double>(same_label + both_background) / static_cast<double>(total);
}

IouReport iou_per_class(const Timeline& pred, const Timeline& gt) {
    IouReport out;
    auto classes = classes_of(gt);
    const auto gt_classes = classes;
    for (const auto& c : classes_of(pred)) classes.insert(c);
    const auto pred_classes = classes_of(pred);
    for (const auto& c : classes) {
        const auto p = merged(pred, c);
        const auto g = merged(gt, c);
        const double inter = intersection_length(p, g);
        const double uni = total_length(p) + total_length(g) - inter;
        double iou = 0.0;
        if (uni > 0.0) {
            iou = inter / uni;
        } else if (gt_classes.count(c) && pred_classes.count(c)) {
            iou = 1.0;  // both only have zero-length segments
        }
        out.per_class[c] = iou;
    }
    double sum = 0.0;
    for (const auto& c : gt_classes) sum += out.per_class[c];
    out.mean = gt_classes.empty() ? 0.0 : sum / static_cast<double>(gt_classes.size());
    return out;
}

F1Report frame_f1(const Timeline& pred, const Timeline& gt, double fps) {
    const long long total = checked_frame_total(pred, gt, fps);
    F1Report out;
    double sum = 0.0;
    for (const auto& c : classes_of(gt)) {
        long long tp = 0, pred_n = 0, gt_n = 0;
        for (const auto& p : pred.segments) {
            if (p.label == c) pred_n += frames_in(p.start_s, p.end_s, fps, total);
        }
        for (const auto& g : gt.segments) {
            if (g.label != c) continue;
            gt_n += frames_in(g.start_s, g.end_s, fps, total);
            for (const auto& p : pred.segments) {
                if (p.label == c) tp += frames_in(std::max(p.start_s, g.start_s), std::min(p.end_s, g.end_s), fps, total);
            }
        }
        ClassScore s;
        s.precision = pred_n > 0 ? static_cast<double>(tp) / static_cast<double>(pred_n) : 0.0;
        s.recall = gt_n > 0 ? static_cast<double>(tp) / static_cast<double>(gt_n) : 0.0;
        s.f1 = pred_n + gt_n > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(pred_n + gt_n) : 0.0;
        out.per_class[c] = s;
        sum += s.f1;
    }
    out.macro_f1 = out.per_class.empty() ? 0.0 : sum / static_cast<double>(out.per_class.size());
    return out;
}

double f1(const Timeline& pred, const Timeline& gt, double fps) { return frame_f1(pred, gt, fps).macro_f1; }

EvalReport evaluate_segmentation(const Timeline& pred, const Timeline& gt, double fps) {
    EvalReport r;
    r.mof = mof(pred, gt, fps);
    const auto iou = iou_per_class(pred, gt);
    r.mean_iou = iou.mean;
    const auto f = frame_f1(pred, gt, fps);
    r.f1 = f.macro_f1;
    r.per_class = f.per_class;
    for (auto& [c, s] : r.per_class) s.iou = iou.per_class.at(c);
    return r;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [c, s] : r.per_class) {
        per[c] = {{"iou", s.iou}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
    }
    return {{"mof", r.mof}, {"mean_iou", r.mean_iou}, {"f1", r.f1}, {"per_class", std::move(per)}};
}

double temporal_iou(double a_start, double a_end, double b_start, double b_end) {
    const double inter = std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
    const double uni = (a_end - a_start) + (b_end - b_start) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall) {
    if (precision.size() != recall.size()) throw ConfigError("precision/recall length mismatch");
    std::vector<double> mprec{0.0}, mrec{0.0};
    mprec.insert(mprec.end(), precision.begin(), precision.end());
    mrec.insert(mrec.end(), recall.begin(), recall.end());
    mprec.push_back(0.0);
    mrec.push_back(1.0);
    for (std::size_t i = mprec.size() - 1; i-- > 0;) mprec[i] = std::max(mprec[i], mprec[i + 1]);
    double ap = 0.0;
    for (std::size_t i = 1; i < mrec.size(); ++i) {
        if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mprec[i];
    }
    return ap;
}

MapReport map_at(const std::vector<Detection>& predictions, const std::vector<GroundTruthInstance>& gt,
                 const std::vector<double>& thresholds) {
    if (gt.empty()) throw FormatError("mAP is undefined without ground-truth instances");
    if (thresholds.empty()) throw ConfigError("no IoU thresholds");
    for (double t : thresholds) {
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("IoU thresholds must be in [0, 1]");
    }

    std::map<std::string, std::vector<const GroundTruthInstance*>> gt_by_class;
    for (const auto& g : gt) gt_by_class[g.label].push_back(&g);
    std::map<std::string, std::vector<const Detection*>> pred_by_class;
    for (const auto& p : predictions) pred_by_class[p.label].push_back(&p);
    for (auto& [label, preds] : pred_by_class) {
        std::stable_sort(preds.begin(), preds.end(), [](const Detection* a, const Detection* b) {
            if (a->score != b->score) return a->score > b->score;
            return a->start_s < b->start_s;
        });
    }

    MapReport out;
    out.thresholds = thresholds;
    for (double tau : thresholds) {
        double sum = 0.0;
        for (const auto& [label, instances] : gt_by_class) {
            double ap = 0.0;
            if (auto it = pred_by_class.find(label); it != pred_by_class.end()) {
                std::vector<bool> matched(instances.size(), false);
                std::vector<double> precision, recall;
                long long tp = 0;
                for (std::size_t i = 0; i < it->second.size(); ++i) {
                    const Detection& p = *it->second[i];
                    double best = -1.0;
                    std::size_t best_j = 0;
                    for (std::size_t j = 0; j < instances.size(); ++j) {
                        if (matched[j] || instances[j]->video_id != p.video_id) continue;
                        const double iou = temporal_iou(p.start_s, p.end_s, instances[j]->start_s, instances[j]->end_s);
                        if (iou >= tau && iou > best) {
                            best = iou;
                            best_j = j;
                        }
                    }
                    if (best >= 0.0) {
                        matched[best_j] = true;
                        ++tp;
                    }
                    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
                    recall.push_back(static_cast<double>(tp) / static_cast<double>(instances.size()));
                }
                ap = interpolated_ap(precision, recall);
            }
            out.per_class[label][tau] = ap;
            sum += ap;
        }
        out.ap_at[tau] = sum / static_cast<double>(gt_by_class.size());
    }
    double total = 0.0;
    for (double tau : thresholds) total += out.ap_at[tau];
    out.avg_map = total / static_cast<double>(thresholds.size());
    return out;
}

nlohmann::json to_json(const MapReport& r) {
    nlohmann::json ap = nlohmann::json::array();
    for (double t : r.thresholds) ap.push_back({{"threshold", t}, {"map", r.ap_at.at(t)}});
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [label, by_t] : r.per_class) {
        nlohmann::json row = nlohmann::json::array();
        for (double t : r.thresholds) row.push_back({{"threshold", t}, {"ap", by_t.at(t)}});
        per[label] = std::move(row);
    }
    return {{"thresholds", r.thresholds}, {"ap_at", std::move(ap)}, {"avg_map", r.avg_map}, {"per_class", std::move(per)}};
}

Timeline uniform_baseline(const std::vector<std::string>& labels, double duration_s) {
    if (labels.empty()) throw ConfigError("uniform baseline needs at least one label");
    if (!(duration_s > 0.0)) throw ConfigError("duration must be positive");
    Timeline tl;
    tl.duration_s = duration_s;
    const auto n = static_cast<double>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double lo = duration_s * static_cast<double>(i) / n;
        const double hi = i + 1 == labels.size() ? duration_s : duration_s * static_cast<double>(i + 1) / n;
        tl.segments.push_back({labels[i], lo, hi});
    }
    return tl;
}

}  // namespace tpivot
