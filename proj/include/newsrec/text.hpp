#pragma once

#include <unicode/brkiter.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "newsrec/error.hpp"

namespace newsrec {

struct TokenizerConfig {
    bool remove_stopwords = false;
    bool stem = false;

    bool operator==(const TokenizerConfig&) const = default;
};

namespace detail {

inline icu::BreakIterator& word_breaker() {
    thread_local std::unique_ptr<icu::BreakIterator> it = [] {
        UErrorCode status = U_ZERO_ERROR;
        std::unique_ptr<icu::BreakIterator> bi(
            icu::BreakIterator::createWordInstance(icu::Locale::getRoot(), status));
        if (U_FAILURE(status)) {
            fail_internal(std::string("ICU word iterator: ") + u_errorName(status));
        }
        return bi;
    }();
    return *it;
}

/// Iterates code points of a UTF-8 string; invalid bytes yield U+FFFD.
template <typename Fn>
void for_each_code_point(std::string_view s, Fn&& fn) {
    std::int32_t i = 0;
    const auto n = static_cast<std::int32_t>(s.size());
    while (i < n) {
        const std::int32_t start = i;
        UChar32 c = 0;
        U8_NEXT(reinterpret_cast<const std::uint8_t*>(s.data()), i, n, c);
        if (c < 0) {
            c = 0xFFFD;
        }
        fn(c, static_cast<std::size_t>(start), static_cast<std::size_t>(i));
    }
}

}  // namespace detail

inline std::string case_fold(std::string_view text) {
    auto u = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<std::int32_t>(text.size())));
    u.foldCase();
    std::string out;
    u.toUTF8String(out);
    return out;
}

/// Splits on Unicode whitespace and rejoins with single spaces.
inline std::vector<std::string_view> split_whitespace(std::string_view text) {
    std::vector<std::string_view> parts;
    std::size_t begin = std::string_view::npos;
    detail::for_each_code_point(text, [&](UChar32 c, std::size_t start, std::size_t end) {
        if (u_isUWhiteSpace(c)) {
            if (begin != std::string_view::npos) {
                parts.push_back(text.substr(begin, start - begin));
                begin = std::string_view::npos;
            }
        } else if (begin == std::string_view::npos) {
            begin = start;
        }
        (void)end;
    });
    if (begin != std::string_view::npos) {
        parts.push_back(text.substr(begin));
    }
    return parts;
}

inline std::string collapse_whitespace(std::string_view text) {
    std::string out;
    for (auto part : split_whitespace(text)) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out.append(part);
    }
    return out;
}

/// Case-folded, whitespace-collapsed form used for name matching.
inline std::string normalize_name(std::string_view text) { return case_fold(collapse_whitespace(text)); }

/// Whitespace-delimited tokens with leading/trailing punctuation trimmed;
/// tokens that are pure punctuation do not count.
inline std::size_t word_count(std::string_view text) {
    std::size_t count = 0;
    for (auto part : split_whitespace(text)) {
        bool has_content = false;
        detail::for_each_code_point(part, [&](UChar32 c, std::size_t, std::size_t) {
            if (!u_ispunct(c)) {
                has_content = true;
            }
        });
        count += has_content ? 1 : 0;
    }
    return count;
}

inline const std::set<std::string, std::less<>>& english_stopwords() {
    static const std::set<std::string, std::less<>> words = {
        "a",     "about", "after", "all",   "also",  "an",    "and",   "are",   "as",    "at",
        "be",    "been",  "but",   "by",    "can",   "could", "did",   "do",    "does",  "for",
        "from",  "had",   "has",   "have",  "he",    "her",   "his",   "how",   "i",     "if",
        "in",    "into",  "is",    "it",    "its",   "more",  "most",  "no",    "not",   "of",
        "on",    "or",    "our",   "out",   "over",  "she",   "so",    "than",  "that",  "the",
        "their", "them",  "there", "these", "they",  "this",  "to",    "up",    "was",   "we",
        "were",  "what",  "when",  "which", "who",   "will",  "with",  "would", "you",   "your"};
    return words;
}

/// Harman's S-stemmer: strips English plural endings only.
inline std::string s_stem(std::string word) {
    auto ends_with = [&](std::string_view suffix) {
        return word.size() >= suffix.size() &&
               std::string_view(word).substr(word.size() - suffix.size()) == suffix;
    };
    if (ends_with("ies") && !ends_with("eies") && !ends_with("aies")) {
        word.replace(word.size() - 3, 3, "y");
    } else if (ends_with("es") && !ends_with("aes") && !ends_with("ees") && !ends_with("oes")) {
        word.pop_back();
    } else if (ends_with("s") && !ends_with("us") && !ends_with("ss") && word.size() > 1) {
        word.pop_back();
    }
    return word;
}

/// Unicode word segmentation (UAX #29 via ICU) keeping letter, number, kana
/// and ideographic segments; every token is case-folded.
inline std::vector<std::string> tokenize(std::string_view text, const TokenizerConfig& cfg = {}) {
    std::vector<std::string> tokens;
    if (text.empty()) {
        return tokens;
    }
    const auto u = icu::UnicodeString::fromUTF8(
        icu::StringPiece(text.data(), static_cast<std::int32_t>(text.size())));
    auto& bi = detail::word_breaker();
    bi.setText(u);
    std::int32_t start = bi.first();
    for (std::int32_t end = bi.next(); end != icu::BreakIterator::DONE; start = end, end = bi.next()) {
        if (bi.getRuleStatus() < UBRK_WORD_NONE_LIMIT) {
            continue;
        }
        icu::UnicodeString word(u, start, end - start);
        word.foldCase();
        std::string token;
        word.toUTF8String(token);
        if (cfg.remove_stopwords && english_stopwords().contains(token)) {
            continue;
        }
        tokens.push_back(cfg.stem ? s_stem(std::move(token)) : std::move(token));
    }
    return tokens;
}

}  // namespace newsrec
