#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "newsrec/error.hpp"
#include "newsrec/index.hpp"
#include "newsrec/source_id.hpp"

namespace newsrec {

enum class RetrievalModel { candidate_based, document_based };

inline std::string_view to_string(RetrievalModel m) {
    return m == RetrievalModel::candidate_based ? "cer" : "der";
}

inline RetrievalModel retrieval_model_from_string(std::string_view s) {
    if (s == "cer" || s == "candidate_based") return RetrievalModel::candidate_based;
    if (s == "der" || s == "document_based") return RetrievalModel::document_based;
    fail_user("unknown retrieval model '" + std::string(s) + "' (expected cer or der)");
}

/// How p(d|e) is read from the Boolean associations: uniform over assoc(e)
/// (1/|assoc(e)|), or the raw 0/1 indicator.
enum class Association { uniform, boolean };

struct RetrievalOptions {
    Association association = Association::uniform;
};

/// Log of zero probability. Ordered below every finite log score.
inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

struct RankedItem {
    SourceId source;
    std::optional<double> score;

    bool operator==(const RankedItem&) const = default;
};

/// Ordered sources; scores are present after retrieval and may be dropped by
/// reranking stages.
struct RankedList {
    std::vector<RankedItem> items;

    [[nodiscard]] std::size_t size() const noexcept { return items.size(); }
    [[nodiscard]] bool empty() const noexcept { return items.empty(); }

    [[nodiscard]] std::vector<SourceId> sources() const {
        std::vector<SourceId> out;
        out.reserve(items.size());
        for (const auto& i : items) {
            out.push_back(i.source);
        }
        return out;
    }

    static RankedList from_sources(const std::vector<SourceId>& sources) {
        RankedList list;
        for (const auto& s : sources) {
            list.items.push_back({s, std::nullopt});
        }
        return list;
    }

    bool operator==(const RankedList&) const = default;
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& xs) {
    double m = kLogZero;
    for (double x : xs) {
        m = std::max(m, x);
    }
    if (m == kLogZero) {
        return kLogZero;
    }
    double s = 0.0;
    for (double x : xs) {
        s += std::exp(x - m);
    }
    return m + std::log(s);
}

}  // namespace detail

/// Query-likelihood scoring of sources in log space. Holds the corpus-level
/// smoothing constants so that ranking a query touches each document once
/// per source association.
class Scorer {
  public:
    explicit Scorer(const Index& index, RetrievalOptions opts = {}) : m_index(index), m_opts(opts) {
        const double avg = index.avg_doc_len();
        m_cer_beta = avg * static_cast<double>(index.total_associations()) / static_cast<double>(index.n_sources());
        m_der_beta = avg;
    }

    /// β = |d̄| · Σ_e |assoc(e)| / |E|
    [[nodiscard]] double cer_beta() const noexcept { return m_cer_beta; }
    /// β = |d̄|
    [[nodiscard]] double der_beta() const noexcept { return m_der_beta; }

    /// log P(k|e), candidate model:
    /// Π_t {(1-λ) Σ_d p(t|d) p(d|e) + λ p(t)}^n(t,k), λ = β / (β + n(e)).
    [[nodiscard]] double cer(const Query& query, std::size_t source) const {
        const auto docs = m_index.associated_docs(source);
        const double lambda = m_cer_beta / (m_cer_beta + static_cast<double>(m_index.source_tokens(source)));
        const double p_de = doc_weight(docs.size());
        double log_p = 0.0;
        for (const auto& [term, n_tk] : query.terms) {
            double model = 0.0;
            for (auto d : docs) {
                model += term_prob_doc(m_index, term, d) * p_de;
            }
            const double mix = (1.0 - lambda) * model + lambda * term_prob_bg(m_index, term);
            if (mix <= 0.0) {
                return kLogZero;
            }
            log_p += static_cast<double>(n_tk) * std::log(mix);
        }
        return log_p;
    }

    /// log P(k|e), document model:
    /// Σ_d {Π_t ((1-λ) p(t|d) + λ p(t))^n(t,k)} p(d|e), λ = β / (β + n(d)).
    [[nodiscard]] double der(const Query& query, std::size_t source) const {
        const auto docs = m_index.associated_docs(source);
        const double log_p_de = std::log(doc_weight(docs.size()));
        std::vector<double> background;
        background.reserve(query.terms.size());
        for (const auto& [term, n_tk] : query.terms) {
            background.push_back(term_prob_bg(m_index, term));
        }
        std::vector<double> per_doc;
        per_doc.reserve(docs.size());
        for (auto d : docs) {
            const double n_d = static_cast<double>(m_index.doc(d).length);
            const double lambda = m_der_beta / (m_der_beta + n_d);
            double log_doc = log_p_de;
            for (std::size_t i = 0; i < query.terms.size(); ++i) {
                const auto& [term, n_tk] = query.terms[i];
                const double mix = (1.0 - lambda) * term_prob_doc(m_index, term, d) + lambda * background[i];
                if (mix <= 0.0) {
                    log_doc = kLogZero;
                    break;
                }
                log_doc += static_cast<double>(n_tk) * std::log(mix);
            }
            per_doc.push_back(log_doc);
        }
        return detail::log_sum_exp(per_doc);
    }

    [[nodiscard]] double score(RetrievalModel model, const Query& query, std::size_t source) const {
        return model == RetrievalModel::candidate_based ? cer(query, source) : der(query, source);
    }

    [[nodiscard]] const Index& index() const noexcept { return m_index; }

  private:
    [[nodiscard]] double doc_weight(std::size_t n_assoc) const {
        return m_opts.association == Association::uniform ? 1.0 / static_cast<double>(n_assoc) : 1.0;
    }

    const Index& m_index;
    RetrievalOptions m_opts;
    double m_cer_beta = 0.0;
    double m_der_beta = 0.0;
};

inline double cer_score(const Index& index, const Query& query, const SourceId& source, RetrievalOptions opts = {}) {
    return Scorer(index, opts).cer(query, index.source_index(source));
}

inline double der_score(const Index& index, const Query& query, const SourceId& source, RetrievalOptions opts = {}) {
    return Scorer(index, opts).der(query, index.source_index(source));
}

/// Scores every indexed source; returns the best `top_n` by descending log
/// score, ties broken by SourceId. Zero-probability sources sort last.
inline RankedList rank_sources(const Scorer& scorer, const Query& query, RetrievalModel model, std::size_t top_n) {
    if (top_n < 1) {
        fail_user("top_n must be >= 1");
    }
    const auto& index = scorer.index();
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(index.n_sources());
    for (std::size_t e = 0; e < index.n_sources(); ++e) {
        scored.emplace_back(scorer.score(model, query, e), e);
    }
    auto better = [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
    };
    const auto n = std::min(top_n, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
    RankedList list;
    list.items.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        list.items.push_back({index.source(scored[i].second), scored[i].first});
    }
    return list;
}

inline RankedList rank_sources(const Index& index, const Query& query, RetrievalModel model, std::size_t top_n,
                               RetrievalOptions opts = {}) {
    return rank_sources(Scorer(index, opts), query, model, top_n);
}

// ---------------------------------------------------------------------------
// Exact evaluation (rational arithmetic), same formulas without logs.

namespace detail {

template <typename Number>
Number power(Number base, std::uint32_t exp) {
    Number r(1);
    for (std::uint32_t i = 0; i < exp; ++i) {
        r *= base;
    }
    return r;
}

template <typename Number>
Number doc_weight_exact(std::size_t n_assoc, Association a) {
    return a == Association::uniform ? Number(1) / Number(static_cast<std::uint64_t>(n_assoc)) : Number(1);
}

}  // namespace detail

template <typename Number>
Number cer_probability(const Index& index, const Query& query, std::size_t source, RetrievalOptions opts = {}) {
    const auto [tokens, ndocs] = index.avg_doc_len_ratio();
    const Number beta = Number(tokens) / Number(ndocs) * Number(index.total_associations()) /
                        Number(static_cast<std::uint64_t>(index.n_sources()));
    const Number lambda = beta / (beta + Number(index.source_tokens(source)));
    const auto docs = index.associated_docs(source);
    const Number p_de = detail::doc_weight_exact<Number>(docs.size(), opts.association);
    Number p(1);
    for (const auto& [term, n_tk] : query.terms) {
        Number model(0);
        for (auto d : docs) {
            model += term_prob_doc<Number>(index, term, d) * p_de;
        }
        p *= detail::power<Number>((Number(1) - lambda) * model + lambda * term_prob_bg<Number>(index, term), n_tk);
    }
    return p;
}

template <typename Number>
Number der_probability(const Index& index, const Query& query, std::size_t source, RetrievalOptions opts = {}) {
    const auto [tokens, ndocs] = index.avg_doc_len_ratio();
    const Number beta = Number(tokens) / Number(ndocs);
    const auto docs = index.associated_docs(source);
    const Number p_de = detail::doc_weight_exact<Number>(docs.size(), opts.association);
    Number sum(0);
    for (auto d : docs) {
        const Number lambda = beta / (beta + Number(index.doc(d).length));
        Number prod(1);
        for (const auto& [term, n_tk] : query.terms) {
            prod *= detail::power<Number>(
                (Number(1) - lambda) * term_prob_doc<Number>(index, term, d) + lambda * term_prob_bg<Number>(index, term),
                n_tk);
        }
        sum += prod * p_de;
    }
    return sum;
}

}  // namespace newsrec
