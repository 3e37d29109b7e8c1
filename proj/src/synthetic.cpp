#include "tpivot/synthetic.hpp"

#include <algorithm>

#include "tpivot/errors.hpp"

namespace tpivot {

Timeline random_gapless_timeline(std::mt19937_64& rng, int n_tasks, double min_len, double max_len) {
    if (n_tasks < 1 || !(min_len > 0.0) || max_len < min_len) throw ConfigError("bad synthetic timeline parameters");
    std::uniform_real_distribution<double> len(min_len, max_len);
    Timeline tl;
    double t = 0.0;
    for (int i = 0; i < n_tasks; ++i) {
        const double next = t + len(rng);
        tl.segments.push_back({"task_" + std::to_string(i + 1), t, next});
        t = next;
    }
    tl.duration_s = t;
    return tl;
}

Timeline random_detection_timeline(std::mt19937_64& rng, double duration_s, int n_actions,
                                   const std::vector<std::string>& labels, double min_len, double max_len) {
    if (labels.empty() || n_actions < 0 || !(duration_s > 0.0) || !(min_len >= 0.0) || max_len < min_len) {
        throw ConfigError("bad synthetic timeline parameters");
    }
    Timeline tl;
    tl.duration_s = duration_s;
    // Split the video into equal slots and place one action inside each.
    const double slot = duration_s / std::max(1, n_actions);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < n_actions; ++i) {
        const double len = std::min(min_len + unit(rng) * (max_len - min_len), slot);
        const double start = i * slot + unit(rng) * (slot - len);
        tl.segments.push_back({labels[static_cast<std::size_t>(i) % labels.size()], start, std::min(start + len, duration_s)});
    }
    return tl;
}

}  // namespace tpivot
