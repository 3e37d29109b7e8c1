#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tpivot {

enum class Boundary { start, end };

std::string to_string(Boundary b);

// Which task of an ordered sequence the model should look for, and which of
// its boundaries.
struct PromptContext {
    std::vector<std::string> task_sequence;
    int focus_index = 1;  // 1-based
    Boundary boundary = Boundary::start;
    bool allow_none = false;

    const std::string& focused_label() const { return task_sequence.at(static_cast<std::size_t>(focus_index - 1)); }
    // Throws ConfigError.
    void validate() const;
};

// Action-order aware prompt. The task list renders as "1. a, 2. b" and the
// focus as "k. label".
std::string build_prompt(const PromptContext& ctx);

inline constexpr std::string_view kNoneSentence =
    "If the action does not appear in any of the images, answer with {\"points\": []}.";

struct VlmAnswer {
    std::optional<int> selected_index;  // 1-based badge; empty means "not visible"
    std::string raw_text;
    std::string analysis;
    std::vector<int> extra_points;  // points after the first one, ignored
    bool fallback = false;          // filled in by the retry policy, not the model
    int attempts = 1;
};

enum class AnswerErrc { no_json, not_integer, out_of_range, empty_points };

std::string to_string(AnswerErrc code);

class AnswerParseError : public std::runtime_error {
public:
    AnswerParseError(AnswerErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    AnswerErrc code() const noexcept { return code_; }

private:
    AnswerErrc code_;
};

// Extracts the badge choice from a free-form model reply: the last JSON object
// with a "points" key wins, and the first point in it is the answer.
VlmAnswer parse_answer(std::string_view raw_text, int n_badges, bool allow_none = false);

}  // namespace tpivot
