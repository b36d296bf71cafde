#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "newsrec/error.hpp"
#include "newsrec/rng.hpp"
#include "newsrec/source_id.hpp"
#include "newsrec/text.hpp"

namespace newsrec {

struct Candidate {
    SourceId id;
    std::string name;
};

/// The one-shot example shown to the ranker.
struct Exemplar {
    std::string query;
    std::vector<std::string> candidates;
    std::vector<std::string> reranked;
};

inline Exemplar default_exemplar() {
    return {"City council approves emergency budget for river flood defences",
            {"Royal Society of Chemistry", "Maria Lopez", "Environment Agency", "National Farmers Union",
             "John Carter", "Met Office", "Football Association", "Local Government Association",
             "Institution of Civil Engineers", "British Retail Consortium"},
            {"Environment Agency", "Local Government Association", "Institution of Civil Engineers", "Met Office",
             "National Farmers Union", "Maria Lopez", "John Carter", "British Retail Consortium",
             "Royal Society of Chemistry", "Football Association"}};
}

struct RerankRequest {
    /// Stable identifier used to key noise streams and replay records.
    std::string request_id;
    std::string query;
    std::vector<Candidate> candidates;
    Exemplar exemplar = default_exemplar();
};

inline void validate(const RerankRequest& request, std::size_t max_group = 10) {
    if (request.candidates.empty() || request.candidates.size() > max_group) {
        fail_user("rerank request needs 1.." + std::to_string(max_group) + " candidates, got " +
                  std::to_string(request.candidates.size()));
    }
    std::vector<std::string> names;
    std::vector<SourceId> ids;
    for (const auto& c : request.candidates) {
        names.push_back(normalize_name(c.name));
        ids.push_back(c.id);
    }
    std::sort(names.begin(), names.end());
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end() ||
        std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        fail_user("rerank request candidates must have unique names and ids");
    }
}

struct RerankResponse {
    std::vector<SourceId> ranking;
    std::string raw;
    bool repaired = false;
    std::vector<std::string> repair_notes;
};

/// ["A", "B", ...] with backslash escapes, a valid Python list literal.
inline std::string serialize_name_list(const std::vector<std::string>& names) {
    std::string out = "[";
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i > 0) {
            out += ", ";
        }
        out.push_back('"');
        for (char c : names[i]) {
            if (c == '"' || c == '\\') {
                out.push_back('\\');
            }
            out.push_back(c);
        }
        out.push_back('"');
    }
    out.push_back(']');
    return out;
}

struct PromptOptions {
    std::size_t token_budget = 8000;
};

/// Rough token estimate: one token per four code points.
inline std::size_t estimate_tokens(std::string_view text) {
    std::size_t cps = 0;
    detail::for_each_code_point(text, [&](UChar32, std::size_t, std::size_t) { ++cps; });
    return (cps + 3) / 4;
}

inline std::string build_prompt(const RerankRequest& request, const PromptOptions& opts = {}) {
    validate(request, std::max<std::size_t>(request.candidates.size(), 1));
    std::vector<std::string> names;
    for (const auto& c : request.candidates) {
        names.push_back(c.name);
    }
    const auto n = std::to_string(names.size());
    const auto& ex = request.exemplar;
    std::string prompt;
    prompt += "You are a knowledgeable referrer.\n";
    prompt += "Given a query and the " + n +
              " potential information sources (which may include both individuals and organizations) retrieved "
              "based on the query, you need to rank the " +
              n +
              " potential sources in order of relevance to the query, placing the source that is most likely to "
              "provide information relevant to the query at the top of the list.\n";
    prompt += "Return the new rank of sources only in the form of python list (exactly the same form of the given "
              "list, just rerank it), please do not provide other words except for the list.\n";
    prompt += "Here is an example:\n";
    prompt += "Query: " + ex.query + ".\n";
    prompt += std::to_string(ex.candidates.size()) + " potential sources are: " + serialize_name_list(ex.candidates) +
              ", and then the output should be: " + serialize_name_list(ex.reranked) + ".\n";
    prompt += "Now the query is: " + request.query +
              ". The source candidates are: " + serialize_name_list(names);
    if (estimate_tokens(prompt) > opts.token_budget) {
        fail_user("prompt for request '" + request.request_id + "' exceeds the token budget of " +
                  std::to_string(opts.token_budget));
    }
    return prompt;
}

namespace detail {

inline bool is_quote_open(UChar32 c) { return c == '"' || c == '\'' || c == 0x201C || c == 0x2018; }

inline UChar32 matching_close(UChar32 c) {
    if (c == 0x201C) return 0x201D;
    if (c == 0x2018) return 0x2019;
    return c;
}

/// Splits the body of a list literal into raw entries, honouring quotes and
/// backslash escapes. Never fails.
inline std::vector<std::string> split_list_entries(std::string_view body) {
    std::vector<std::string> entries;
    std::string current;
    std::optional<UChar32> close;
    bool quoted_entry = false;
    bool escape = false;
    for_each_code_point(body, [&](UChar32 c, std::size_t start, std::size_t end) {
        const auto bytes = body.substr(start, end - start);
        if (close) {
            if (escape) {
                current.append(bytes);
                escape = false;
            } else if (c == '\\') {
                escape = true;
            } else if (c == *close) {
                close.reset();
            } else {
                current.append(bytes);
            }
            return;
        }
        if (c == ',') {
            entries.push_back(std::move(current));
            current.clear();
            quoted_entry = false;
            return;
        }
        if (is_quote_open(c) && collapse_whitespace(current).empty() && !quoted_entry) {
            current.clear();
            close = matching_close(c);
            quoted_entry = true;
            return;
        }
        current.append(bytes);
    });
    entries.push_back(std::move(current));
    return entries;
}

/// Locates the first [...] span; the closing bracket is the first one outside
/// quotes, or failing that the first one at all.
inline std::optional<std::string_view> first_list_body(std::string_view raw) {
    const auto open = raw.find('[');
    if (open == std::string_view::npos) {
        return std::nullopt;
    }
    const auto rest = raw.substr(open + 1);
    std::optional<std::size_t> close_pos;
    std::optional<UChar32> quote;
    bool escape = false;
    bool at_entry_start = true;
    for_each_code_point(rest, [&](UChar32 c, std::size_t start, std::size_t) {
        if (close_pos) {
            return;
        }
        if (quote) {
            if (escape) {
                escape = false;
            } else if (c == '\\') {
                escape = true;
            } else if (c == *quote) {
                quote.reset();
            }
            return;
        }
        if (c == ']') {
            close_pos = start;
        } else if (at_entry_start && is_quote_open(c)) {
            quote = matching_close(c);
            at_entry_start = false;
        } else if (c == ',') {
            at_entry_start = true;
        } else if (!u_isUWhiteSpace(c)) {
            at_entry_start = false;
        }
    });
    if (!close_pos) {
        const auto naive = rest.find(']');
        if (naive == std::string_view::npos) {
            return std::nullopt;
        }
        close_pos = naive;
    }
    return rest.substr(0, *close_pos);
}

}  // namespace detail

/// Reads the first list literal in `raw` and maps its entries back to the
/// request's candidates (case-insensitive, whitespace-normalized). Unknown
/// and repeated entries are dropped, absent candidates are appended in
/// request order. Text without a list yields the request order.
inline RerankResponse parse_ranking(std::string_view raw, const RerankRequest& request) {
    RerankResponse response;
    response.raw = std::string(raw);
    std::map<std::string, std::size_t, std::less<>> by_name;
    for (std::size_t i = 0; i < request.candidates.size(); ++i) {
        by_name.emplace(normalize_name(request.candidates[i].name), i);
    }
    std::vector<bool> used(request.candidates.size(), false);
    const auto body = detail::first_list_body(raw);
    if (body) {
        auto entries = detail::split_list_entries(*body);
        if (entries.size() == 1 && collapse_whitespace(entries.front()).empty()) {
            entries.clear();
        }
        for (const auto& entry : entries) {
            const auto key = normalize_name(entry);
            auto it = by_name.find(key);
            if (it == by_name.end()) {
                response.repaired = true;
                response.repair_notes.push_back("hallucinated:" + entry);
                continue;
            }
            if (used[it->second]) {
                response.repaired = true;
                response.repair_notes.push_back("duplicate:" + entry);
                continue;
            }
            used[it->second] = true;
            response.ranking.push_back(request.candidates[it->second].id);
        }
    } else {
        response.repaired = true;
        response.repair_notes.emplace_back("no-list");
    }
    for (std::size_t i = 0; i < request.candidates.size(); ++i) {
        if (used[i]) {
            continue;
        }
        if (body) {
            response.repaired = true;
            response.repair_notes.push_back("missing:" + request.candidates[i].name);
        }
        response.ranking.push_back(request.candidates[i].id);
    }
    return response;
}

/// Listwise reranker. Implementations are stateless per call and safe to
/// invoke concurrently.
class Ranker {
  public:
    virtual ~Ranker() = default;
    [[nodiscard]] virtual RerankResponse rerank(const RerankRequest& request) const = 0;
    [[nodiscard]] virtual std::string name() const = 0;
};

class IdentityRanker final : public Ranker {
  public:
    [[nodiscard]] RerankResponse rerank(const RerankRequest& request) const override {
        RerankResponse r;
        for (const auto& c : request.candidates) {
            r.ranking.push_back(c.id);
        }
        return r;
    }
    [[nodiscard]] std::string name() const override { return "identity"; }
};

using RelevanceTable = std::unordered_map<SourceId, double>;

/// Stable sort by descending relevance; unknown candidates score 0.
class OracleRanker : public Ranker {
  public:
    explicit OracleRanker(RelevanceTable relevance) : m_relevance(std::move(relevance)) {}

    [[nodiscard]] RerankResponse rerank(const RerankRequest& request) const override {
        RerankResponse r;
        r.ranking = oracle_order(request);
        return r;
    }
    [[nodiscard]] std::string name() const override { return "oracle"; }

    [[nodiscard]] double relevance(const SourceId& id) const {
        auto it = m_relevance.find(id);
        return it == m_relevance.end() ? 0.0 : it->second;
    }

  protected:
    [[nodiscard]] std::vector<SourceId> oracle_order(const RerankRequest& request) const {
        std::vector<SourceId> order;
        for (const auto& c : request.candidates) {
            order.push_back(c.id);
        }
        std::stable_sort(order.begin(), order.end(),
                         [&](const SourceId& a, const SourceId& b) { return relevance(a) > relevance(b); });
        return order;
    }

  private:
    RelevanceTable m_relevance;
};

/// Oracle order perturbed by one bottom-up pass of adjacent swaps, each with
/// probability `error_rate`. With a popularity table and bias b in [0,1],
/// swaps that would push a more popular candidate below a less popular one
/// fire with probability error_rate·(1-b) instead.
class NoisyOracleRanker final : public OracleRanker {
  public:
    NoisyOracleRanker(RelevanceTable relevance, double error_rate, std::uint64_t seed,
                      std::unordered_map<SourceId, double> popularity = {}, double popularity_bias = 0.0)
        : OracleRanker(std::move(relevance)),
          m_error_rate(error_rate),
          m_seed(seed),
          m_popularity(std::move(popularity)),
          m_bias(popularity_bias) {
        if (!(error_rate >= 0.0 && error_rate <= 1.0) || !(popularity_bias >= 0.0 && popularity_bias <= 1.0)) {
            fail_user("noisy oracle: error rate and popularity bias must lie in [0, 1]");
        }
    }

    [[nodiscard]] RerankResponse rerank(const RerankRequest& request) const override {
        RerankResponse r;
        r.ranking = oracle_order(request);
        Rng rng(mix_seed(m_seed, stable_hash(request.request_id)));
        for (std::size_t i = r.ranking.size(); i > 1; --i) {
            const auto& upper = r.ranking[i - 2];
            const auto& lower = r.ranking[i - 1];
            double p = m_error_rate;
            if (popularity(upper) > popularity(lower)) {
                p *= 1.0 - m_bias;
            }
            if (rng.uniform() < p) {
                std::swap(r.ranking[i - 2], r.ranking[i - 1]);
            }
        }
        return r;
    }
    [[nodiscard]] std::string name() const override { return "noisy"; }

  private:
    [[nodiscard]] double popularity(const SourceId& id) const {
        auto it = m_popularity.find(id);
        return it == m_popularity.end() ? 0.0 : it->second;
    }

    double m_error_rate;
    std::uint64_t m_seed;
    std::unordered_map<SourceId, double> m_popularity;
    double m_bias;
};

}  // namespace newsrec
