#pragma once

// Small string helpers and line-delimited JSON I/O used across modules.

#include <cctype>
#include <cstddef>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace crisp {

using json = nlohmann::ordered_json;

/// Half-open character range [begin, end) into some text.
struct CharSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    bool operator==(const CharSpan&) const = default;
};

inline bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline bool is_blank(std::string_view s) {
    for (char c : s) {
        if (!is_space(c)) return false;
    }
    return true;
}

inline std::string_view trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

/// Trims and collapses every whitespace run to one space.
inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : trim(s)) {
        if (is_space(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

/// Splits on every occurrence of `delim` (non-empty); keeps empty fragments.
inline std::vector<std::string> split(std::string_view s, std::string_view delim) {
    std::vector<std::string> parts;
    if (delim.empty()) {
        parts.emplace_back(s);
        return parts;
    }
    std::size_t pos = 0;
    while (true) {
        std::size_t hit = s.find(delim, pos);
        if (hit == std::string_view::npos) {
            parts.emplace_back(s.substr(pos));
            break;
        }
        parts.emplace_back(s.substr(pos, hit - pos));
        pos = hit + delim.size();
    }
    return parts;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view delim) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(delim);
        out.append(parts[i]);
    }
    return out;
}

/// Character spans of whitespace-delimited words.
inline std::vector<CharSpan> word_spans(std::string_view s) {
    std::vector<CharSpan> spans;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        if (i >= s.size()) break;
        std::size_t b = i;
        while (i < s.size() && !is_space(s[i])) ++i;
        spans.push_back({b, i});
    }
    return spans;
}

inline std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    for (const auto& sp : word_spans(s)) out.emplace_back(s.substr(sp.begin, sp.end - sp.begin));
    return out;
}

/// Lower-cases a word and strips surrounding punctuation so "Sum," matches "sum".
inline std::string normalize_word(std::string_view w) {
    constexpr std::string_view kPunct = ".,;:!?()[]{}$\"'`*";
    std::size_t b = 0, e = w.size();
    while (b < e && kPunct.find(w[b]) != std::string_view::npos) ++b;
    while (e > b && kPunct.find(w[e - 1]) != std::string_view::npos) --e;
    std::string out;
    out.reserve(e - b);
    for (std::size_t i = b; i < e; ++i) {
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(w[i]))));
    }
    return out;
}

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return 0;
    std::size_t n = 0;
    for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
         pos = haystack.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON
// ---------------------------------------------------------------------------

/// Calls `on_record(record, line_number)` for every non-blank line. Parse
/// failures surface as SchemaViolation with the 1-based line number.
inline void for_each_jsonl(const std::string& path,
                           const std::function<void(const json&, std::size_t)>& on_record) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::SchemaViolation, "cannot open " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(ErrorCode::SchemaViolation,
                 path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        on_record(record, line_no);
    }
}

inline void write_jsonl(const std::string& path, const std::vector<json>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::SchemaViolation, "cannot write " + path);
    for (const auto& r : records) out << r.dump() << '\n';
}

/// Fetches a required field, reporting SchemaViolation with context otherwise.
template <typename T>
T require_field(const json& record, const char* field, std::size_t line_no) {
    auto it = record.find(field);
    if (it == record.end()) {
        fail(ErrorCode::SchemaViolation,
             "line " + std::to_string(line_no) + ": missing field \"" + field + "\"");
    }
    try {
        return it->template get<T>();
    } catch (const json::exception& e) {
        fail(ErrorCode::SchemaViolation,
             "line " + std::to_string(line_no) + ": bad field \"" + field + "\": " + e.what());
    }
}

}  // namespace crisp
