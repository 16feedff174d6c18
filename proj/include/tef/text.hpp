#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tef::text {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

/// Treats bytes >= 0x80 as word characters so multi-byte UTF-8 sequences
/// stay intact.
inline bool is_word_char(char c) {
    auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || std::isalnum(u) != 0;
}

inline char to_lower(char c) {
    auto u = static_cast<unsigned char>(c);
    return u < 0x80 ? static_cast<char>(std::tolower(u)) : c;
}

/// Split on runs of whitespace. This is the token unit used for chunk
/// sizes, summary caps, and prompt length budgets.
inline std::vector<std::string_view> whitespace_tokens(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        std::size_t start = i;
        while (i < s.size() && !is_space(s[i])) ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

inline std::size_t token_count(std::string_view s) { return whitespace_tokens(s).size(); }

/// Indexing tokenizer: lowercase, split on non-word characters. No stemming,
/// no stopword removal, so scores are reproducible without language resources.
inline std::vector<std::string> index_terms(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (is_word_char(c)) {
            cur.push_back(to_lower(c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

/// Canonical form for string comparison: case-folded, whitespace runs
/// collapsed to single spaces, trimmed.
inline std::string canonical(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            if (!out.empty()) pending_space = true;
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(to_lower(c));
        }
    }
    return out;
}

inline bool canonical_equal(std::string_view a, std::string_view b) {
    return canonical(a) == canonical(b);
}

namespace detail {
inline bool boundary_ok(std::string_view hay, std::size_t pos, std::size_t len) {
    if (pos > 0 && is_word_char(hay[pos - 1]) && is_word_char(hay[pos])) return false;
    std::size_t end = pos + len;
    if (end < hay.size() && is_word_char(hay[end - 1]) && is_word_char(hay[end])) return false;
    return true;
}
}  // namespace detail

/// First occurrence of `needle` in `hay` at a word boundary, comparing
/// canonical forms. Positions refer to the canonical haystack.
inline std::optional<std::size_t> canonical_find(std::string_view hay, std::string_view needle) {
    std::string h = canonical(hay), n = canonical(needle);
    if (n.empty()) return std::nullopt;
    std::size_t pos = 0;
    while ((pos = h.find(n, pos)) != std::string::npos) {
        if (detail::boundary_ok(h, pos, n.size())) return pos;
        ++pos;
    }
    return std::nullopt;
}

/// Last boundary occurrence, or nullopt. Positions refer to the canonical
/// haystack.
inline std::optional<std::size_t> canonical_rfind(std::string_view hay, std::string_view needle) {
    std::string h = canonical(hay), n = canonical(needle);
    if (n.empty() || h.size() < n.size()) return std::nullopt;
    std::size_t pos = h.size() - n.size();
    while (true) {
        pos = h.rfind(n, pos);
        if (pos == std::string::npos) return std::nullopt;
        if (detail::boundary_ok(h, pos, n.size())) return pos;
        if (pos == 0) return std::nullopt;
        --pos;
    }
}

inline bool canonical_contains(std::string_view hay, std::string_view needle) {
    return canonical_find(hay, needle).has_value();
}

/// Naive sentence split on [.!?] followed by whitespace or end of text.
/// Keeps the terminator with the sentence.
inline std::vector<std::string> split_sentences(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if ((c == '.' || c == '!' || c == '?') &&
            (i + 1 == s.size() || is_space(s[i + 1]))) {
            std::size_t b = start;
            while (b < i && is_space(s[b])) ++b;
            if (b <= i) out.emplace_back(s.substr(b, i - b + 1));
            start = i + 1;
        }
    }
    std::size_t b = start;
    while (b < s.size() && is_space(s[b])) ++b;
    if (b < s.size()) out.emplace_back(s.substr(b));
    return out;
}

/// Keep at most `max_tokens` whitespace tokens, rejoined with single spaces.
inline std::string truncate_tokens(std::string_view s, std::size_t max_tokens) {
    auto toks = whitespace_tokens(s);
    std::size_t n = std::min(toks.size(), max_tokens);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out.push_back(' ');
        out.append(toks[i]);
    }
    return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace tef::text
