#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpivot/timeline.hpp"

namespace tpivot {

// Frame-level metrics over timelines. Frames sit at t = k / fps for every k
// with t < duration; a frame belongs to the segment with start <= t < end, or
// to the background ("") when no segment covers it. Segments of one timeline
// must not overlap.

// Index of the first frame at or after t, i.e. min k with k / fps >= t.
long long first_frame_at_or_after(double t, double fps);
long long frame_total(double duration_s, double fps);

double mof(const Timeline& pred, const Timeline& gt, double fps);

struct ClassScore {
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct IouReport {
    std::map<std::string, double> per_class;  // every class in gt or pred
    double mean = 0.0;                        // over classes present in gt
};

// Per-class IoU of the unions of segments, measured in seconds.
IouReport iou_per_class(const Timeline& pred, const Timeline& gt);

struct F1Report {
    std::map<std::string, ClassScore> per_class;  // gt classes
    double macro_f1 = 0.0;
};

F1Report frame_f1(const Timeline& pred, const Timeline& gt, double fps);
double f1(const Timeline& pred, const Timeline& gt, double fps);

struct EvalReport {
    double mof = 0.0;
    double mean_iou = 0.0;
    double f1 = 0.0;
    std::map<std::string, ClassScore> per_class;
};

EvalReport evaluate_segmentation(const Timeline& pred, const Timeline& gt, double fps);
nlohmann::json to_json(const EvalReport& report);

struct Detection {
    std::string video_id;
    std::string label;
    double start_s = 0.0;
    double end_s = 0.0;
    double score = 1.0;
};

struct GroundTruthInstance {
    std::string video_id;
    std::string label;
    double start_s = 0.0;
    double end_s = 0.0;
};

inline const std::vector<double> kDefaultMapThresholds = {0.3, 0.4, 0.5, 0.6, 0.7};

struct MapReport {
    std::vector<double> thresholds;
    std::map<double, double> ap_at;                           // threshold -> mAP over classes
    std::map<std::string, std::map<double, double>> per_class;  // label -> threshold -> AP
    double avg_map = 0.0;
};

double temporal_iou(double a_start, double a_end, double b_start, double b_end);

// Area under the precision/recall curve with the monotone precision envelope
// (all-points interpolation). Inputs are cumulative points in ranking order.
double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall);

MapReport map_at(const std::vector<Detection>& predictions, const std::vector<GroundTruthInstance>& gt,
                 const std::vector<double>& thresholds = kDefaultMapThresholds);
nlohmann::json to_json(const MapReport& report);

// N equal-length segments in label order.
Timeline uniform_baseline(const std::vector<std::string>& labels, double duration_s);

}  // namespace tpivot
