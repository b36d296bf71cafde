#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "newsrec/artifact.hpp"
#include "newsrec/corpus.hpp"
#include "newsrec/digest.hpp"
#include "newsrec/error.hpp"
#include "newsrec/source_id.hpp"
#include "newsrec/text.hpp"

namespace newsrec {

using TermCounts = std::vector<std::pair<std::string, std::uint32_t>>;

/// Sorted (term, count) pairs of a token sequence.
inline TermCounts count_terms(const std::vector<std::string>& tokens) {
    std::map<std::string, std::uint32_t, std::less<>> m;
    for (const auto& t : tokens) {
        ++m[t];
    }
    return {m.begin(), m.end()};
}

struct Document {
    std::string id;
    std::uint64_t length = 0;
    TermCounts terms;

    [[nodiscard]] std::uint32_t count(std::string_view term) const {
        auto it = std::lower_bound(terms.begin(), terms.end(), term,
                                   [](const auto& p, std::string_view t) { return p.first < t; });
        return (it != terms.end() && it->first == term) ? it->second : 0;
    }
};

/// A query title reduced to its term multiset.
struct Query {
    std::string raw;
    TermCounts terms;

    [[nodiscard]] std::size_t length() const {
        std::size_t n = 0;
        for (const auto& [t, c] : terms) {
            n += c;
        }
        return n;
    }
};

inline Query make_query(std::string raw, const TokenizerConfig& cfg = {}) {
    auto terms = count_terms(tokenize(raw, cfg));
    return {std::move(raw), std::move(terms)};
}

/// Immutable occurrence statistics over the training documents and the
/// Boolean document-source associations.
class Index {
  public:
    static Index build(std::span<const Sample> train, const TokenizerConfig& cfg = {}) {
        if (train.empty()) {
            fail_user("cannot build an index from an empty training set");
        }
        std::vector<const Sample*> order;
        order.reserve(train.size());
        for (const auto& s : train) {
            order.push_back(&s);
        }
        std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });

        Index index;
        index.m_tokenizer = cfg;
        std::map<SourceId, std::vector<std::uint32_t>> assoc;
        std::map<SourceId, std::map<std::string, std::size_t>> mentions;
        for (const auto* s : order) {
            Document doc;
            doc.id = s->id;
            const auto tokens = tokenize(s->context, cfg);
            if (tokens.empty()) {
                fail_user("sample " + s->id + ": context has no tokens");
            }
            doc.length = tokens.size();
            doc.terms = count_terms(tokens);
            const auto speaker = s->speaker();
            assoc[speaker].push_back(static_cast<std::uint32_t>(index.m_docs.size()));
            ++mentions[speaker][collapse_whitespace(s->speaker_mention)];
            index.m_docs.push_back(std::move(doc));
        }
        for (auto& [source, docs] : assoc) {
            const auto& names = mentions[source];
            auto best = std::max_element(names.begin(), names.end(), [](const auto& a, const auto& b) {
                return a.second < b.second || (a.second == b.second && a.first > b.first);
            });
            index.m_sources.push_back({source, best->first, std::move(docs), 0});
        }
        index.finish();
        return index;
    }

    [[nodiscard]] const std::vector<Document>& docs() const noexcept { return m_docs; }
    [[nodiscard]] std::size_t doc_count() const noexcept { return m_docs.size(); }

    [[nodiscard]] const Document& doc(std::size_t i) const {
        if (i >= m_docs.size()) {
            fail_user("unknown document index " + std::to_string(i));
        }
        return m_docs[i];
    }

    [[nodiscard]] std::size_t doc_index(std::string_view id) const {
        auto it = std::lower_bound(m_docs.begin(), m_docs.end(), id,
                                   [](const Document& d, std::string_view v) { return d.id < v; });
        if (it == m_docs.end() || it->id != id) {
            fail_user("unknown document '" + std::string(id) + "'");
        }
        return static_cast<std::size_t>(it - m_docs.begin());
    }

    /// n(t,C)
    [[nodiscard]] std::uint64_t collection_count(std::string_view term) const {
        auto it = m_collection.find(term);
        return it == m_collection.end() ? 0 : it->second;
    }
    [[nodiscard]] const std::map<std::string, std::uint64_t, std::less<>>& vocabulary() const noexcept {
        return m_collection;
    }
    [[nodiscard]] std::uint64_t total_tokens() const noexcept { return m_total_tokens; }

    /// |d̄| as the exact ratio total_tokens / doc_count.
    [[nodiscard]] std::pair<std::uint64_t, std::uint64_t> avg_doc_len_ratio() const noexcept {
        return {m_total_tokens, m_docs.size()};
    }
    [[nodiscard]] double avg_doc_len() const noexcept {
        return static_cast<double>(m_total_tokens) / static_cast<double>(m_docs.size());
    }

    /// |E|
    [[nodiscard]] std::size_t n_sources() const noexcept { return m_sources.size(); }
    [[nodiscard]] const SourceId& source(std::size_t i) const { return m_sources.at(i).id; }

    [[nodiscard]] std::optional<std::size_t> find_source(const SourceId& id) const {
        auto it = std::lower_bound(m_sources.begin(), m_sources.end(), id,
                                   [](const SourceEntry& e, const SourceId& v) { return e.id < v; });
        if (it == m_sources.end() || it->id != id) {
            return std::nullopt;
        }
        return static_cast<std::size_t>(it - m_sources.begin());
    }

    [[nodiscard]] std::size_t source_index(const SourceId& id) const {
        auto i = find_source(id);
        if (!i) {
            fail_user("unknown source '" + id.str() + "'");
        }
        return *i;
    }

    /// assoc(e), sorted document indices.
    [[nodiscard]] std::span<const std::uint32_t> associated_docs(std::size_t source) const {
        return m_sources.at(source).docs;
    }
    /// n(e)
    [[nodiscard]] std::uint64_t source_tokens(std::size_t source) const { return m_sources.at(source).tokens; }
    /// Most frequent surface mention in training data.
    [[nodiscard]] const std::string& display_name(std::size_t source) const { return m_sources.at(source).name; }
    /// Training-set occurrence count (one document per sample).
    [[nodiscard]] std::size_t popularity(std::size_t source) const { return m_sources.at(source).docs.size(); }

    /// Σ_e |assoc(e)|
    [[nodiscard]] std::uint64_t total_associations() const noexcept {
        std::uint64_t n = 0;
        for (const auto& s : m_sources) {
            n += s.docs.size();
        }
        return n;
    }

    [[nodiscard]] const TokenizerConfig& tokenizer() const noexcept { return m_tokenizer; }

    [[nodiscard]] Query query(std::string raw) const { return make_query(std::move(raw), m_tokenizer); }

    /// SHA-256 over the canonical payload; equal digests mean equal statistics.
    [[nodiscard]] std::string digest() const { return sha256_hex(payload()); }

    void save(std::ostream& out, ArtifactMeta meta) const {
        meta.artifact = "index";
        const auto meta_json = meta_to_json(meta).dump();
        const auto body = payload();
        out.write(kMagic, 4);
        put_u64(out, static_cast<std::uint64_t>(kFormatVersion));
        put_str(out, meta_json);
        put_str(out, body);
        put_str(out, sha256_hex(body));
        if (!out) {
            fail_user("failed writing index snapshot");
        }
    }

    void save(const std::string& path, const ArtifactMeta& meta) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            fail_user("cannot write index snapshot: " + path);
        }
        save(out, meta);
    }

    static Index load(std::istream& in, const std::string& name = "index", ArtifactMeta* meta_out = nullptr) {
        char magic[4] = {};
        in.read(magic, 4);
        if (!in || std::memcmp(magic, kMagic, 4) != 0) {
            fail_user(name + ": not an index snapshot");
        }
        const auto version = get_u64(in, name);
        if (version != static_cast<std::uint64_t>(kFormatVersion)) {
            fail_user(name + ": index snapshot format version " + std::to_string(version) + " (expected " +
                      std::to_string(kFormatVersion) + "); rebuild it with the 'index' stage");
        }
        const auto meta = meta_from_json(nlohmann::json::parse(get_str(in, name)));
        const auto body = get_str(in, name);
        const auto stored = get_str(in, name);
        Index index = from_payload(body, name);
        if (index.digest() != stored) {
            fail_user(name + ": index snapshot digest mismatch (corrupt file)");
        }
        if (meta_out) {
            *meta_out = meta;
        }
        return index;
    }

    static Index load(const std::string& path, ArtifactMeta* meta_out = nullptr) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            fail_user("cannot read index snapshot: " + path);
        }
        return load(in, path, meta_out);
    }

  private:
    struct SourceEntry {
        SourceId id;
        std::string name;
        std::vector<std::uint32_t> docs;
        std::uint64_t tokens = 0;
    };

    static constexpr char kMagic[4] = {'N', 'R', 'I', 'X'};

    void finish() {
        m_collection.clear();
        m_total_tokens = 0;
        for (const auto& d : m_docs) {
            m_total_tokens += d.length;
            for (const auto& [t, c] : d.terms) {
                m_collection[t] += c;
            }
        }
        for (auto& s : m_sources) {
            s.tokens = 0;
            for (auto d : s.docs) {
                s.tokens += m_docs[d].length;
            }
        }
    }

    [[nodiscard]] std::string payload() const {
        nlohmann::json j;
        j["tokenizer"] = {{"remove_stopwords", m_tokenizer.remove_stopwords}, {"stem", m_tokenizer.stem}};
        auto& docs = j["docs"] = nlohmann::json::array();
        for (const auto& d : m_docs) {
            nlohmann::json terms = nlohmann::json::array();
            for (const auto& [t, c] : d.terms) {
                terms.push_back({t, c});
            }
            docs.push_back({{"id", d.id}, {"length", d.length}, {"terms", std::move(terms)}});
        }
        auto& sources = j["sources"] = nlohmann::json::array();
        for (const auto& s : m_sources) {
            sources.push_back({{"id", s.id.str()}, {"name", s.name}, {"docs", s.docs}});
        }
        return j.dump();
    }

    static Index from_payload(const std::string& body, const std::string& name) {
        Index index;
        try {
            const auto j = nlohmann::json::parse(body);
            index.m_tokenizer.remove_stopwords = j.at("tokenizer").at("remove_stopwords").get<bool>();
            index.m_tokenizer.stem = j.at("tokenizer").at("stem").get<bool>();
            for (const auto& d : j.at("docs")) {
                Document doc;
                doc.id = d.at("id").get<std::string>();
                doc.length = d.at("length").get<std::uint64_t>();
                for (const auto& tc : d.at("terms")) {
                    doc.terms.emplace_back(tc.at(0).get<std::string>(), tc.at(1).get<std::uint32_t>());
                }
                index.m_docs.push_back(std::move(doc));
            }
            for (const auto& s : j.at("sources")) {
                index.m_sources.push_back({SourceId(s.at("id").get<std::string>()), s.at("name").get<std::string>(),
                                           s.at("docs").get<std::vector<std::uint32_t>>(), 0});
            }
        } catch (const nlohmann::json::exception& e) {
            fail_user(name + ": malformed index payload: " + e.what());
        }
        for (const auto& s : index.m_sources) {
            for (auto d : s.docs) {
                if (d >= index.m_docs.size()) {
                    fail_user(name + ": association points past the document table");
                }
            }
        }
        index.finish();
        return index;
    }

    static void put_u64(std::ostream& out, std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            out.put(static_cast<char>((v >> (8 * i)) & 0xffU));
        }
    }
    static void put_str(std::ostream& out, const std::string& s) {
        put_u64(out, s.size());
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static std::uint64_t get_u64(std::istream& in, const std::string& name) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            const int c = in.get();
            if (c == std::char_traits<char>::eof()) {
                fail_user(name + ": truncated index snapshot");
            }
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
        }
        return v;
    }
    static std::string get_str(std::istream& in, const std::string& name) {
        const auto n = get_u64(in, name);
        if (n > (std::uint64_t{1} << 34U)) {
            fail_user(name + ": implausible record length in index snapshot");
        }
        std::string s(n, '\0');
        in.read(s.data(), static_cast<std::streamsize>(n));
        if (!in) {
            fail_user(name + ": truncated index snapshot");
        }
        return s;
    }

    TokenizerConfig m_tokenizer;
    std::vector<Document> m_docs;
    std::vector<SourceEntry> m_sources;
    std::map<std::string, std::uint64_t, std::less<>> m_collection;
    std::uint64_t m_total_tokens = 0;
};

/// p(t|d) = n(t,d) / n(d)
template <typename Number = double>
Number term_prob_doc(const Index& index, std::string_view term, std::size_t doc) {
    const auto& d = index.doc(doc);
    return Number(d.count(term)) / Number(d.length);
}

/// p(t) = n(t,C) / Σ_d n(d)
template <typename Number = double>
Number term_prob_bg(const Index& index, std::string_view term) {
    return Number(index.collection_count(term)) / Number(index.total_tokens());
}

}  // namespace newsrec
