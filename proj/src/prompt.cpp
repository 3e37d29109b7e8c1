#include "tpivot/prompt.hpp"

#include <cmath>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "tpivot/errors.hpp"

namespace tpivot {
namespace {

constexpr std::string_view kTemplate =
    "I will show an image sequence of human operation. It contains the following tasks: {task_sequence}. "
    "I have annotated the images with numbered circles. Choose the number that is closest to the moment when "
    "the ({task_focus}) has started. You are a five-time world champion in this game. Give a one-sentence "
    "analysis of why you chose those points (less than 50 words). Provide your answer at the end in a JSON "
    "file in this format: {\"points\": []}.";

void replace_once(std::string& s, std::string_view from, std::string_view to) {
    const auto pos = s.find(from);
    if (pos != std::string::npos) s.replace(pos, from.size(), to);
}

std::string normalize_quotes(std::string_view in) {
    // Curly double quotes (U+201C, U+201D) become ASCII quotes.
    std::string out;
    out.reserve(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (i + 2 < in.size() && static_cast<unsigned char>(in[i]) == 0xE2 &&
            static_cast<unsigned char>(in[i + 1]) == 0x80 &&
            (static_cast<unsigned char>(in[i + 2]) == 0x9C || static_cast<unsigned char>(in[i + 2]) == 0x9D)) {
            out.push_back('"');
            i += 2;
        } else {
            out.push_back(in[i]);
        }
    }
    return out;
}

// Position one past the brace matching text[open], or npos.
std::size_t match_brace(const std::string& text, std::size_t open) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (c == '\\') {
                ++i;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i + 1;
        }
    }
    return std::string::npos;
}

std::string clean_analysis(std::string s) {
    for (std::string_view fence : {"```json", "```JSON", "```"}) {
        for (auto pos = s.find(fence); pos != std::string::npos; pos = s.find(fence)) s.erase(pos, fence.size());
    }
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int point_value(const nlohmann::json& v) {
    if (v.is_number_integer()) {
        const auto x = v.get<long long>();
        if (x < INT32_MIN || x > INT32_MAX) throw AnswerParseError(AnswerErrc::out_of_range, "point out of range");
        return static_cast<int>(x);
    }
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 1e9) return static_cast<int>(d);
    }
    throw AnswerParseError(AnswerErrc::not_integer, "point is not an integer: " + v.dump());
}

}  // namespace

std::string to_string(Boundary b) { return b == Boundary::start ? "start" : "end"; }

std::string to_string(AnswerErrc code) {
    switch (code) {
        case AnswerErrc::no_json: return "no_json";
        case AnswerErrc::not_integer: return "not_integer";
        case AnswerErrc::out_of_range: return "out_of_range";
        case AnswerErrc::empty_points: return "empty_points";
    }
    return "unknown";
}

void PromptContext::validate() const {
    if (task_sequence.empty()) throw ConfigError("task sequence is empty");
    if (focus_index < 1 || focus_index > static_cast<int>(task_sequence.size())) {
        throw ConfigError("focus index " + std::to_string(focus_index) + " outside task sequence");
    }
}

std::string build_prompt(const PromptContext& ctx) {
    ctx.validate();
    std::string tasks;
    for (std::size_t i = 0; i < ctx.task_sequence.size(); ++i) {
        if (i) tasks += ", ";
        tasks += std::to_string(i + 1) + ". " + ctx.task_sequence[i];
    }
    const std::string focus = std::to_string(ctx.focus_index) + ". " + ctx.focused_label();

    std::string text(kTemplate);
    replace_once(text, "{task_sequence}", tasks);
    replace_once(text, "{task_focus}", focus);
    if (ctx.boundary == Boundary::end) replace_once(text, "has started", "has ended");
    if (ctx.allow_none) {
        text += ' ';
        text += kNoneSentence;
    }
    return text;
}

VlmAnswer parse_answer(std::string_view raw_text, int n_badges, bool allow_none) {
    if (n_badges < 1) throw ConfigError("parse_answer needs at least one badge");
    const std::string text = normalize_quotes(raw_text);

    nlohmann::json found;
    std::size_t found_at = std::string::npos;
    for (auto open = text.rfind('{'); open != std::string::npos; open = open == 0 ? std::string::npos : text.rfind('{', open - 1)) {
        const auto close = match_brace(text, open);
        if (close == std::string::npos) continue;
        auto j = nlohmann::json::parse(text.begin() + static_cast<std::ptrdiff_t>(open),
                                       text.begin() + static_cast<std::ptrdiff_t>(close), nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.contains("points")) {
            found = std::move(j);
            found_at = open;
            break;
        }
    }
    if (found_at == std::string::npos) throw AnswerParseError(AnswerErrc::no_json, "no JSON found with a \"points\" key");

    VlmAnswer ans;
    ans.raw_text = std::string(raw_text);
    ans.analysis = clean_analysis(text.substr(0, found_at));

    const auto& points = found["points"];
    std::vector<int> values;
    if (points.is_array()) {
        for (const auto& p : points) values.push_back(point_value(p));
    } else {
        values.push_back(point_value(points));
    }
    if (values.empty()) {
        if (!allow_none) throw AnswerParseError(AnswerErrc::empty_points, "empty points list");
        return ans;
    }
    if (values.front() < 1 || values.front() > n_badges) {
        throw AnswerParseError(AnswerErrc::out_of_range, "point " + std::to_string(values.front()) + " outside [1, " +
                                                             std::to_string(n_badges) + "]");
    }
    ans.selected_index = values.front();
    ans.extra_points.assign(values.begin() + 1, values.end());
    if (!ans.extra_points.empty()) {
        spdlog::debug("answer lists {} points; using the first ({})", values.size(), values.front());
    }
    return ans;
}

}  // namespace tpivot
