#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tpivot/timeline.hpp"

namespace tpivot {

// Gapless timeline of `n_tasks` distinct labels ("task_1".."task_n") whose
// segment lengths are drawn uniformly from [min_len, max_len].
Timeline random_gapless_timeline(std::mt19937_64& rng, int n_tasks, double min_len, double max_len);

// Detection-style timeline: `n_actions` non-overlapping occurrences with gaps,
// labels cycling through `labels`.
Timeline random_detection_timeline(std::mt19937_64& rng, double duration_s, int n_actions,
                                   const std::vector<std::string>& labels, double min_len, double max_len);

}  // namespace tpivot
