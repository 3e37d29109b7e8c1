#pragma once

#include <cstdint>
#include <string>

#include "tpivot/prompt.hpp"
#include "tpivot/prompt_image.hpp"
#include "tpivot/timeline.hpp"

namespace tpivot {

// Everything a backend may look at for one boundary query.
struct QueryRequest {
    const PromptImage& image;
    std::string prompt_text;
    PromptContext ctx;
    int iteration = 1;   // 1-based position within the boundary search
    TimeWindow window;   // window the badges were sampled from
};

// A vision-language model that picks one badge. Implementations must accept
// concurrent calls.
class VlmBackend {
public:
    virtual ~VlmBackend() = default;

    // Returns a badge in [1, N], or no selection when ctx.allow_none permits it.
    virtual VlmAnswer query(const QueryRequest& request) = 0;
    virtual std::string name() const = 0;
};

struct OracleConfig {
    Timeline ground_truth;
    double noise_rate = 0.0;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

// Stable 64-bit key for a query, independent of call order.
std::uint64_t query_key(std::uint64_t seed, const PromptContext& ctx, int iteration, const TimeWindow& window);

// Simulated model answering from ground truth.
//
// The target boundary is taken from the focused occurrence of the label: the
// k-th occurrence when the label repeats in the task sequence, otherwise the
// occurrence overlapping the visible badges the most (ties to the earlier
// one). With noise probability a uniformly random badge is returned instead,
// else the badge nearest the boundary (ties to the lower index). In allow_none
// mode an occurrence counts as visible only if it overlaps the badge span by
// at least one badge interval.
VlmAnswer oracle_answer(const OracleConfig& oracle, const std::map<int, double>& index_to_time,
                        const PromptContext& ctx, std::uint64_t call_key);

class OracleBackend final : public VlmBackend {
public:
    explicit OracleBackend(OracleConfig config);

    VlmAnswer query(const QueryRequest& request) override;
    std::string name() const override { return "oracle"; }
    const OracleConfig& config() const { return config_; }

private:
    OracleConfig config_;
};

// Badge whose timestamp is nearest `t`, ties to the lower index.
int nearest_badge(const std::map<int, double>& index_to_time, double t);

inline int center_badge(int n_badges) { return (n_badges + 1) / 2; }

}  // namespace tpivot
