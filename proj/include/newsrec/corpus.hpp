#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "newsrec/artifact.hpp"
#include "newsrec/error.hpp"
#include "newsrec/source_id.hpp"
#include "newsrec/text.hpp"
#include "newsrec/timestamp.hpp"

namespace newsrec {

enum class SpeakerType { person, organization, other };

inline std::string_view to_string(SpeakerType t) {
    switch (t) {
        case SpeakerType::person: return "person";
        case SpeakerType::organization: return "organization";
        case SpeakerType::other: return "other";
    }
    return "other";
}

inline std::optional<SpeakerType> speaker_type_from_string(std::string_view s) {
    if (s == "person") return SpeakerType::person;
    if (s == "organization" || s == "organisation") return SpeakerType::organization;
    if (s == "other") return SpeakerType::other;
    return std::nullopt;
}

/// One context/quote/speaker record. `published_at` keeps the original
/// RFC 3339 text so that serialization round-trips byte for byte.
struct Sample {
    std::string id;
    std::string context;
    std::string quote;
    std::string speaker_mention;
    std::optional<std::string> speaker_link;
    SpeakerType speaker_type = SpeakerType::other;
    std::string published_at;
    std::string title;
    std::string domain;
    std::vector<std::string> categories;
    std::vector<std::string> keywords;

    [[nodiscard]] Timestamp timestamp() const {
        auto t = parse_rfc3339(published_at);
        if (!t) {
            fail_user("sample " + id + ": bad timestamp '" + published_at + "'");
        }
        return *t;
    }

    [[nodiscard]] SourceId speaker() const { return resolve_source(speaker_mention, speaker_link); }

    bool operator==(const Sample&) const = default;
};

inline nlohmann::json to_json(const Sample& s) {
    nlohmann::json j;
    j["id"] = s.id;
    j["context"] = s.context;
    j["quote"] = s.quote;
    j["speaker_mention"] = s.speaker_mention;
    j["speaker_link"] = s.speaker_link ? nlohmann::json(*s.speaker_link) : nlohmann::json(nullptr);
    j["speaker_type"] = to_string(s.speaker_type);
    j["published_at"] = s.published_at;
    j["title"] = s.title;
    j["domain"] = s.domain;
    j["categories"] = s.categories;
    j["keywords"] = s.keywords;
    return j;
}

inline std::string serialize_sample(const Sample& s) { return to_json(s).dump(); }

namespace detail {

inline bool get_string(const nlohmann::json& j, const char* key, std::string& out, std::string& reason) {
    auto it = j.find(key);
    if (it == j.end()) {
        reason = std::string("missing-field:") + key;
        return false;
    }
    if (!it->is_string()) {
        reason = std::string("bad-type:") + key;
        return false;
    }
    out = it->get<std::string>();
    return true;
}

inline bool get_string_list(const nlohmann::json& j, const char* key, std::vector<std::string>& out,
                            std::string& reason) {
    auto it = j.find(key);
    if (it == j.end()) {
        reason = std::string("missing-field:") + key;
        return false;
    }
    if (!it->is_array()) {
        reason = std::string("bad-type:") + key;
        return false;
    }
    for (const auto& v : *it) {
        if (!v.is_string()) {
            reason = std::string("bad-type:") + key;
            return false;
        }
        out.push_back(v.get<std::string>());
    }
    return true;
}

}  // namespace detail

/// Validates one decoded record. On failure returns nullopt and sets
/// `reason` to a short machine-readable tag.
inline std::optional<Sample> sample_from_json(const nlohmann::json& j, std::string& reason) {
    if (!j.is_object()) {
        reason = "not-an-object";
        return std::nullopt;
    }
    Sample s;
    std::string type;
    if (!detail::get_string(j, "id", s.id, reason) || !detail::get_string(j, "context", s.context, reason) ||
        !detail::get_string(j, "quote", s.quote, reason) ||
        !detail::get_string(j, "speaker_mention", s.speaker_mention, reason) ||
        !detail::get_string(j, "speaker_type", type, reason) ||
        !detail::get_string(j, "published_at", s.published_at, reason) ||
        !detail::get_string(j, "title", s.title, reason) || !detail::get_string(j, "domain", s.domain, reason) ||
        !detail::get_string_list(j, "categories", s.categories, reason) ||
        !detail::get_string_list(j, "keywords", s.keywords, reason)) {
        return std::nullopt;
    }
    if (auto it = j.find("speaker_link"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) {
            reason = "bad-type:speaker_link";
            return std::nullopt;
        }
        s.speaker_link = it->get<std::string>();
    }
    auto st = speaker_type_from_string(type);
    if (!st) {
        reason = "bad-speaker-type";
        return std::nullopt;
    }
    s.speaker_type = *st;
    if (s.id.empty()) {
        reason = "empty-id";
        return std::nullopt;
    }
    if (normalize_name(s.speaker_mention).empty()) {
        reason = "empty-speaker";
        return std::nullopt;
    }
    if (s.quote.empty() || s.context.find(s.quote) == std::string::npos) {
        reason = "quote-not-in-context";
        return std::nullopt;
    }
    if (!parse_rfc3339(s.published_at)) {
        reason = "bad-timestamp";
        return std::nullopt;
    }
    return s;
}

struct IngestError {
    std::size_t line = 0;
    std::string reason;
};

struct IngestOptions {
    /// Fatal when more than this fraction of records is malformed...
    double max_malformed_fraction = 0.10;
    /// ...and the file holds at least this many records.
    std::size_t min_records_for_ratio = 10;
};

struct IngestResult {
    std::vector<Sample> samples;
    std::vector<IngestError> errors;
    std::optional<ArtifactMeta> meta;
};

inline IngestResult ingest_stream(std::istream& in, const std::string& name, const IngestOptions& opts = {}) {
    IngestResult result;
    std::set<std::string, std::less<>> ids;
    std::string line;
    std::size_t line_no = 0;
    std::size_t records = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_discarded()) {
            if (auto meta = meta_from_record(j)) {
                check_meta(*meta, name);
                result.meta = std::move(meta);
                continue;
            }
        }
        ++records;
        if (j.is_discarded()) {
            result.errors.push_back({line_no, "invalid-json"});
            continue;
        }
        std::string reason;
        auto sample = sample_from_json(j, reason);
        if (!sample) {
            result.errors.push_back({line_no, reason});
            continue;
        }
        if (!ids.insert(sample->id).second) {
            result.errors.push_back({line_no, "duplicate-id"});
            continue;
        }
        result.samples.push_back(std::move(*sample));
    }
    if (records >= opts.min_records_for_ratio &&
        static_cast<double>(result.errors.size()) > opts.max_malformed_fraction * static_cast<double>(records)) {
        fail_user(name + ": " + std::to_string(result.errors.size()) + " of " + std::to_string(records) +
                  " records are malformed (first at line " + std::to_string(result.errors.front().line) +
                  ": " + result.errors.front().reason + ")");
    }
    return result;
}

inline IngestResult ingest(const std::string& path, const IngestOptions& opts = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail_user("cannot read corpus file: " + path);
    }
    return ingest_stream(in, path, opts);
}

inline void write_samples(std::ostream& out, const std::vector<Sample>& samples,
                          const std::optional<ArtifactMeta>& meta = {}) {
    if (meta) {
        out << meta_line(*meta) << '\n';
    }
    for (const auto& s : samples) {
        out << serialize_sample(s) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Quote-candidate filtering

enum class QuoteType { direct, indirect, mixed };

inline std::string_view to_string(QuoteType t) {
    switch (t) {
        case QuoteType::direct: return "direct";
        case QuoteType::indirect: return "indirect";
        case QuoteType::mixed: return "mixed";
    }
    return "indirect";
}

struct SubjectEntity {
    std::string uri;
    std::optional<SpeakerType> type;
};

/// Predicate/subject/object extraction for one sentence, as produced by an
/// external semantic-role labeller.
struct SrlTuple {
    std::string sentence;
    std::string predicate;
    std::string subject_span;
    std::string object_span;
    std::optional<SubjectEntity> subject_entity;
};

using Lexicon = std::set<std::string, std::less<>>;

inline Lexicon default_lexicon() {
    static const char* const words[] = {
        "said",     "says",      "say",      "told",      "tells",    "added",     "adds",
        "stated",   "states",    "explained", "noted",    "warned",   "argued",    "claimed",
        "announced", "confirmed", "insisted", "suggested", "admitted", "acknowledged", "reported",
        "wrote",    "tweeted",   "posted",   "declared",  "stressed", "emphasized", "emphasised",
        "urged",    "predicted", "estimated", "believes", "believed", "thinks",   "according",
        "commented", "replied",  "responded", "concluded", "cautioned"};
    return Lexicon(std::begin(words), std::end(words));
}

/// One word per line; blank lines and '#' comments ignored; entries folded.
inline Lexicon parse_lexicon(std::istream& in) {
    Lexicon lex;
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        auto word = normalize_name(line);
        if (!word.empty()) {
            lex.insert(std::move(word));
        }
    }
    return lex;
}

inline Lexicon load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail_user("cannot read lexicon: " + path);
    }
    auto lex = parse_lexicon(in);
    if (lex.empty()) {
        fail_user("lexicon is empty: " + path);
    }
    return lex;
}

/// Byte ranges [begin, end) of quoted regions, quote marks included.
/// nullopt when the marks are not paired. Straight and curly double quotes
/// and guillemets delimit; single quotes never do.
inline std::optional<std::vector<std::pair<std::size_t, std::size_t>>> quote_regions(std::string_view sentence) {
    std::vector<std::pair<std::size_t, std::size_t>> regions;
    std::optional<std::size_t> open;
    bool ok = true;
    detail::for_each_code_point(sentence, [&](UChar32 c, std::size_t start, std::size_t end) {
        const bool opener = c == 0x201C || c == 0x00AB;
        const bool closer = c == 0x201D || c == 0x00BB;
        const bool straight = c == '"';
        if (!ok || !(opener || closer || straight)) {
            return;
        }
        if (open) {
            if (opener) {
                ok = false;
                return;
            }
            regions.emplace_back(*open, end);
            open.reset();
        } else {
            if (closer) {
                ok = false;
                return;
            }
            open = start;
        }
    });
    if (!ok || open) {
        return std::nullopt;
    }
    return regions;
}

inline bool quote_marks_paired(std::string_view sentence) { return quote_regions(sentence).has_value(); }

struct FilterVerdict {
    bool accepted = false;
    std::string reason;
};

/// Trigger-word, subject, object-length, quote-pairing and entity-type rules.
inline FilterVerdict filter_candidate(const SrlTuple& tuple, const Lexicon& lexicon) {
    if (lexicon.empty()) {
        fail_user("trigger lexicon is empty");
    }
    if (!lexicon.contains(normalize_name(tuple.predicate))) {
        return {false, "no-trigger-word"};
    }
    if (normalize_name(tuple.subject_span).empty()) {
        return {false, "missing-subject"};
    }
    if (word_count(tuple.object_span) <= 3) {
        return {false, "object-too-short"};
    }
    if (!quote_marks_paired(tuple.sentence)) {
        return {false, "unpaired-quote-marks"};
    }
    if (!tuple.subject_entity || !tuple.subject_entity->type) {
        return {false, "untyped-subject"};
    }
    if (*tuple.subject_entity->type == SpeakerType::other) {
        return {false, "subject-not-person-or-organization"};
    }
    return {true, "accepted"};
}

inline QuoteType classify_quote_type(std::string_view sentence, std::string_view object_span) {
    auto regions = quote_regions(sentence);
    if (!regions) {
        fail_user("cannot classify quote: unpaired quotation marks");
    }
    if (regions->empty()) {
        return QuoteType::indirect;
    }
    const auto pos = sentence.find(object_span);
    if (object_span.empty() || pos == std::string_view::npos) {
        fail_user("cannot classify quote: object span not found in sentence");
    }
    const auto begin = pos;
    const auto end = pos + object_span.size();
    bool intersects = false;
    for (auto [rb, re] : *regions) {
        if (rb <= begin && end <= re) {
            return QuoteType::direct;
        }
        intersects = intersects || (begin < re && rb < end);
    }
    return intersects ? QuoteType::mixed : QuoteType::indirect;
}

inline QuoteType classify_sample(const Sample& s) { return classify_quote_type(s.context, s.quote); }

/// Drops samples of sources seen fewer than `min_count` times, repeated
/// until nothing changes.
inline std::vector<Sample> enforce_min_frequency(std::vector<Sample> samples, std::size_t min_count = 2) {
    if (min_count < 1) {
        fail_user("min_count must be >= 1");
    }
    while (true) {
        std::map<SourceId, std::size_t> counts;
        for (const auto& s : samples) {
            ++counts[s.speaker()];
        }
        const auto before = samples.size();
        std::erase_if(samples, [&](const Sample& s) { return counts[s.speaker()] < min_count; });
        if (samples.size() == before) {
            return samples;
        }
    }
}

struct CorpusSplit {
    std::vector<Sample> train;
    std::vector<Sample> valid;
    std::vector<Sample> test;
};

/// Orders by (published_at, id) and cuts the newest `n_test` into test and
/// the next `n_valid` into valid.
inline CorpusSplit temporal_split(std::vector<Sample> samples, std::size_t n_test, std::size_t n_valid) {
    if (n_test + n_valid >= samples.size()) {
        fail_user("temporal split needs more than n_test + n_valid = " + std::to_string(n_test + n_valid) +
                  " samples, got " + std::to_string(samples.size()));
    }
    std::vector<std::pair<Timestamp, std::size_t>> order;
    order.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        order.emplace_back(samples[i].timestamp(), i);
    }
    std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) {
            return a.first < b.first;
        }
        return samples[a.second].id < samples[b.second].id;
    });
    CorpusSplit split;
    const std::size_t n_train = samples.size() - n_test - n_valid;
    for (std::size_t k = 0; k < order.size(); ++k) {
        auto& s = samples[order[k].second];
        if (k < n_train) {
            split.train.push_back(std::move(s));
        } else if (k < n_train + n_valid) {
            split.valid.push_back(std::move(s));
        } else {
            split.test.push_back(std::move(s));
        }
    }
    return split;
}

}  // namespace newsrec
