#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "newsrec/artifact.hpp"
#include "newsrec/csv.hpp"
#include "newsrec/error.hpp"
#include "newsrec/source_id.hpp"

namespace newsrec {

using Gold = std::set<SourceId>;

// ---------------------------------------------------------------------------
// Per-list measures (binary relevance)

inline double recall_at_k(std::span<const SourceId> ranking, const Gold& gold, std::size_t k) {
    if (gold.empty()) {
        fail_user("recall: empty gold set");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranking.size() && i < k; ++i) {
        hits += gold.contains(ranking[i]) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

/// Mean of precision@i over relevant positions i; unretrieved relevant
/// items count in the denominator |gold|.
inline double average_precision(std::span<const SourceId> ranking, const Gold& gold) {
    if (gold.empty()) {
        fail_user("average precision: empty gold set");
    }
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < ranking.size(); ++i) {
        if (gold.contains(ranking[i])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return sum / static_cast<double>(gold.size());
}

/// Rank 1 undiscounted, rank i >= 2 discounted by 1/log2(i).
inline double rank_discount(std::size_t rank) {
    return rank <= 1 ? 1.0 : 1.0 / std::log2(static_cast<double>(rank));
}

inline double ndcg_at_k(std::span<const SourceId> ranking, const Gold& gold, std::size_t k) {
    if (gold.empty()) {
        fail_user("ndcg: empty gold set");
    }
    double dcg = 0.0;
    for (std::size_t i = 0; i < ranking.size() && i < k; ++i) {
        if (gold.contains(ranking[i])) {
            dcg += rank_discount(i + 1);
        }
    }
    // Ideal DCG over all |gold| items, not truncated at k, so NDCG@k is
    // non-decreasing in k.
    double ideal = 0.0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        ideal += rank_discount(i + 1);
    }
    return dcg / ideal;
}

// ---------------------------------------------------------------------------
// Embeddings, popularity, gold files

class EmbeddingTable {
  public:
    EmbeddingTable() = default;
    explicit EmbeddingTable(std::size_t dim) : m_dim(dim) {}

    void add(const SourceId& id, std::vector<double> v) {
        if (m_dim == 0) {
            m_dim = v.size();
        }
        if (v.size() != m_dim || m_dim == 0) {
            fail_user("embedding for '" + id.str() + "' has dimension " + std::to_string(v.size()) +
                      ", expected " + std::to_string(m_dim));
        }
        m_vectors[id] = std::move(v);
    }

    [[nodiscard]] const std::vector<double>* find(const SourceId& id) const {
        auto it = m_vectors.find(id);
        return it == m_vectors.end() ? nullptr : &it->second;
    }

    [[nodiscard]] std::size_t dim() const noexcept { return m_dim; }
    [[nodiscard]] std::size_t size() const noexcept { return m_vectors.size(); }
    [[nodiscard]] const std::map<SourceId, std::vector<double>>& vectors() const noexcept { return m_vectors; }

    /// word2vec text format: "count dim" header, then "token v1 ... vdim".
    /// Leading '#' lines are provenance comments.
    static EmbeddingTable parse(std::istream& in, const std::string& name = "embeddings") {
        std::string line;
        std::size_t line_no = 0;
        std::size_t count = 0;
        std::size_t dim = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') {
                continue;
            }
            std::istringstream header(line);
            if (!(header >> count >> dim) || dim == 0) {
                fail_user(name + ":" + std::to_string(line_no) + ": expected 'count dim' header");
            }
            break;
        }
        EmbeddingTable table(dim);
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) {
                continue;
            }
            std::istringstream row(line);
            std::string token;
            row >> token;
            std::vector<double> v;
            double x = 0.0;
            while (row >> x) {
                v.push_back(x);
            }
            if (v.size() != dim) {
                fail_user(name + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) + " values");
            }
            table.add(SourceId(token), std::move(v));
        }
        if (table.size() != count) {
            fail_user(name + ": header announces " + std::to_string(count) + " vectors, found " +
                      std::to_string(table.size()));
        }
        return table;
    }

    static EmbeddingTable load(const std::string& path) {
        std::ifstream in(path);
        if (!in) {
            fail_user("cannot read embeddings: " + path);
        }
        return parse(in, path);
    }

    void write(std::ostream& out) const {
        out << m_vectors.size() << ' ' << m_dim << '\n';
        char buf[32];
        for (const auto& [id, v] : m_vectors) {
            out << id.str();
            for (double x : v) {
                std::snprintf(buf, sizeof buf, " %.6f", x);
                out << buf;
            }
            out << '\n';
        }
    }

  private:
    std::size_t m_dim = 0;
    std::map<SourceId, std::vector<double>> m_vectors;
};

/// Training-set occurrence count per source.
using PopularityTable = std::map<SourceId, double>;

inline PopularityTable parse_popularity_csv(std::string_view text, const std::string& name = "popularity") {
    PopularityTable table;
    const auto rows = parse_csv(text);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.size() == 1 && row[0].empty()) {
            continue;
        }
        if (i == 0 && !row.empty() && row[0] == "source") {
            continue;
        }
        if (row.size() != 2) {
            fail_user(name + ": expected 'source,count' rows");
        }
        try {
            table[SourceId(row[0])] = std::stod(row[1]);
        } catch (const std::logic_error&) {
            fail_user(name + ": bad count '" + row[1] + "'");
        }
    }
    return table;
}

inline std::string popularity_csv(const PopularityTable& table) {
    std::string out = "source,count\n";
    char buf[32];
    for (const auto& [id, count] : table) {
        std::snprintf(buf, sizeof buf, "%.17g", count);
        out += csv_row({id.str(), buf}) + "\n";
    }
    return out;
}

struct GoldQuery {
    std::string query_id;
    std::string query;
    std::vector<SourceId> gold;
};

inline std::string gold_record(const GoldQuery& q) {
    nlohmann::json gold = nlohmann::json::array();
    for (const auto& g : q.gold) {
        gold.push_back(g.str());
    }
    return nlohmann::json{{"query_id", q.query_id}, {"query", q.query}, {"gold", gold}}.dump();
}

inline std::vector<GoldQuery> parse_gold(std::istream& in, const std::string& name, std::optional<ArtifactMeta>* meta = nullptr) {
    std::vector<GoldQuery> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            fail_user(name + ":" + std::to_string(line_no) + ": invalid JSON");
        }
        if (auto m = meta_from_record(j)) {
            check_meta(*m, name);
            if (meta) {
                *meta = m;
            }
            continue;
        }
        try {
            GoldQuery q;
            q.query_id = j.at("query_id").get<std::string>();
            q.query = j.value("query", std::string{});
            for (const auto& g : j.at("gold")) {
                q.gold.emplace_back(g.get<std::string>());
            }
            if (q.gold.empty()) {
                fail_user(name + ":" + std::to_string(line_no) + ": empty gold list");
            }
            out.push_back(std::move(q));
        } catch (const nlohmann::json::exception& e) {
            fail_user(name + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<GoldQuery> load_gold(const std::string& path, std::optional<ArtifactMeta>* meta = nullptr) {
    std::ifstream in(path);
    if (!in) {
        fail_user("cannot read gold file: " + path);
    }
    return parse_gold(in, path, meta);
}

// ---------------------------------------------------------------------------
// List-set measures

/// Mean Euclidean distance over unordered pairs of embedded items. Items
/// without an embedding are skipped and counted in `excluded`. nullopt when
/// fewer than two items are embedded.
inline std::optional<double> diversity(std::span<const SourceId> ranking, const EmbeddingTable& embeddings,
                                       std::size_t* excluded = nullptr) {
    std::vector<const std::vector<double>*> vs;
    std::size_t missing = 0;
    for (const auto& id : ranking) {
        if (const auto* v = embeddings.find(id)) {
            vs.push_back(v);
        } else {
            ++missing;
        }
    }
    if (excluded) {
        *excluded = missing;
    }
    if (vs.size() < 2) {
        return std::nullopt;
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < vs.size(); ++i) {
        for (std::size_t j = i + 1; j < vs.size(); ++j) {
            double sq = 0.0;
            for (std::size_t d = 0; d < vs[i]->size(); ++d) {
                const double diff = (*vs[i])[d] - (*vs[j])[d];
                sq += diff * diff;
            }
            sum += std::sqrt(sq);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

/// |∪ recommendations ∩ train| / |train|
inline double coverage(std::span<const std::vector<SourceId>> rankings, const std::set<SourceId>& train_sources) {
    if (train_sources.empty()) {
        return 0.0;
    }
    std::set<SourceId> seen;
    for (const auto& r : rankings) {
        for (const auto& id : r) {
            if (train_sources.contains(id)) {
                seen.insert(id);
            }
        }
    }
    return static_cast<double>(seen.size()) / static_cast<double>(train_sources.size());
}

inline std::optional<double> list_popularity(std::span<const SourceId> ranking, const PopularityTable& popularity) {
    if (ranking.empty()) {
        return std::nullopt;
    }
    double sum = 0.0;
    for (const auto& id : ranking) {
        auto it = popularity.find(id);
        sum += it == popularity.end() ? 0.0 : it->second;
    }
    return sum / static_cast<double>(ranking.size());
}

/// Mean over queries of the per-list mean popularity; empty lists skipped.
inline double arp(std::span<const std::vector<SourceId>> rankings, const PopularityTable& popularity) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rankings) {
        if (auto p = list_popularity(r, popularity)) {
            sum += *p;
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Reports

struct EvalConfig {
    std::vector<std::size_t> k_values = {10, 20};

    /// List length used for MAP, diversity, coverage and ARP.
    [[nodiscard]] std::size_t cutoff() const {
        return k_values.empty() ? 0 : *std::max_element(k_values.begin(), k_values.end());
    }
};

struct QueryMetrics {
    std::string query_id;
    std::map<std::size_t, double> recall;
    double ap = 0.0;
    std::map<std::size_t, double> ndcg;
    std::optional<double> diversity;
    std::size_t diversity_excluded = 0;
    std::optional<double> popularity;
    std::vector<SourceId> recommended;
};

struct SystemMetrics {
    std::string name;
    std::map<std::size_t, double> recall;
    double map = 0.0;
    std::map<std::size_t, double> ndcg;
    std::optional<double> diversity;
    std::size_t diversity_excluded = 0;
    double coverage = 0.0;
    double arp = 0.0;
    std::vector<QueryMetrics> per_query;
};

struct MetricsReport {
    std::vector<std::size_t> k_values;
    std::size_t cutoff = 0;
    std::size_t query_count = 0;
    std::vector<SystemMetrics> systems;
};

/// query_id -> ranked sources
using Run = std::map<std::string, std::vector<SourceId>>;

inline SystemMetrics aggregate_system(std::string name, std::vector<QueryMetrics> rows,
                                      const std::set<SourceId>& train_sources, const std::vector<std::size_t>& k_values) {
    SystemMetrics s;
    s.name = std::move(name);
    const double n = static_cast<double>(rows.size());
    std::vector<std::vector<SourceId>> lists;
    double div_sum = 0.0;
    std::size_t div_n = 0;
    double pop_sum = 0.0;
    std::size_t pop_n = 0;
    for (auto k : k_values) {
        s.recall[k] = 0.0;
        s.ndcg[k] = 0.0;
    }
    for (const auto& q : rows) {
        for (auto k : k_values) {
            s.recall[k] += q.recall.at(k) / n;
            s.ndcg[k] += q.ndcg.at(k) / n;
        }
        s.map += q.ap / n;
        if (q.diversity) {
            div_sum += *q.diversity;
            ++div_n;
        }
        s.diversity_excluded += q.diversity_excluded;
        if (q.popularity) {
            pop_sum += *q.popularity;
            ++pop_n;
        }
        lists.push_back(q.recommended);
    }
    if (div_n > 0) {
        s.diversity = div_sum / static_cast<double>(div_n);
    }
    s.arp = pop_n == 0 ? 0.0 : pop_sum / static_cast<double>(pop_n);
    s.coverage = coverage(lists, train_sources);
    s.per_query = std::move(rows);
    return s;
}

inline std::set<SourceId> train_sources_of(const PopularityTable& popularity) {
    std::set<SourceId> out;
    for (const auto& [id, count] : popularity) {
        out.insert(id);
    }
    return out;
}

/// One row per system, in the given order; every system is scored on every
/// gold query (a missing run entry counts as an empty list).
inline MetricsReport evaluate(const std::vector<std::pair<std::string, Run>>& systems,
                              const std::vector<GoldQuery>& gold, const EmbeddingTable* embeddings,
                              const PopularityTable& popularity, const EvalConfig& config = {}) {
    if (config.k_values.empty()) {
        fail_user("evaluate: no K values");
    }
    MetricsReport report;
    report.k_values = config.k_values;
    std::sort(report.k_values.begin(), report.k_values.end());
    report.k_values.erase(std::unique(report.k_values.begin(), report.k_values.end()), report.k_values.end());
    report.cutoff = config.cutoff();
    report.query_count = gold.size();
    const auto train = train_sources_of(popularity);
    for (const auto& [name, run] : systems) {
        std::vector<QueryMetrics> rows;
        for (const auto& gq : gold) {
            const Gold gset(gq.gold.begin(), gq.gold.end());
            QueryMetrics q;
            q.query_id = gq.query_id;
            if (auto it = run.find(gq.query_id); it != run.end()) {
                q.recommended.assign(it->second.begin(),
                                     it->second.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(report.cutoff, it->second.size())));
            }
            for (auto k : report.k_values) {
                q.recall[k] = recall_at_k(q.recommended, gset, k);
                q.ndcg[k] = ndcg_at_k(q.recommended, gset, k);
            }
            q.ap = average_precision(q.recommended, gset);
            if (embeddings) {
                q.diversity = diversity(q.recommended, *embeddings, &q.diversity_excluded);
            }
            q.popularity = list_popularity(q.recommended, popularity);
            rows.push_back(std::move(q));
        }
        report.systems.push_back(aggregate_system(name, std::move(rows), train, report.k_values));
    }
    return report;
}

namespace detail {

inline std::string fmt_double(double v, const char* spec = "%.17g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

}  // namespace detail

/// Aligned text table, one row per system.
inline std::string render_table(const MetricsReport& report) {
    std::vector<std::string> header = {"System"};
    for (auto k : report.k_values) header.push_back("Recall@" + std::to_string(k));
    header.push_back("MAP");
    for (auto k : report.k_values) header.push_back("NDCG@" + std::to_string(k));
    header.insert(header.end(), {"Diversity", "Coverage", "ARP"});
    std::vector<std::vector<std::string>> rows = {header};
    for (const auto& s : report.systems) {
        std::vector<std::string> row = {s.name};
        for (auto k : report.k_values) row.push_back(detail::fmt_double(s.recall.at(k), "%.4f"));
        row.push_back(detail::fmt_double(s.map, "%.4f"));
        for (auto k : report.k_values) row.push_back(detail::fmt_double(s.ndcg.at(k), "%.4f"));
        row.push_back(s.diversity ? detail::fmt_double(*s.diversity, "%.4f") : "n/a");
        row.push_back(detail::fmt_double(s.coverage, "%.4f"));
        row.push_back(detail::fmt_double(s.arp, "%.2f"));
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            widths[c] = std::max(widths[c], r[c].size());
        }
    }
    std::string out = "list cutoff K=" + std::to_string(report.cutoff) + ", queries=" +
                      std::to_string(report.query_count) + "\n";
    for (const auto& r : rows) {
        std::string line;
        for (std::size_t c = 0; c < r.size(); ++c) {
            const auto pad = widths[c] - r[c].size();
            line += c == 0 ? r[c] + std::string(pad, ' ') : std::string(pad + 2, ' ') + r[c];
        }
        out += line + "\n";
    }
    return out;
}

inline std::string render_csv(const MetricsReport& report) {
    std::vector<std::string> header = {"system", "cutoff", "queries"};
    for (auto k : report.k_values) header.push_back("recall@" + std::to_string(k));
    header.push_back("map");
    for (auto k : report.k_values) header.push_back("ndcg@" + std::to_string(k));
    header.insert(header.end(), {"diversity", "diversity_excluded", "coverage", "arp"});
    std::string out = csv_row(header) + "\n";
    for (const auto& s : report.systems) {
        std::vector<std::string> row = {s.name, std::to_string(report.cutoff), std::to_string(report.query_count)};
        for (auto k : report.k_values) row.push_back(detail::fmt_double(s.recall.at(k)));
        row.push_back(detail::fmt_double(s.map));
        for (auto k : report.k_values) row.push_back(detail::fmt_double(s.ndcg.at(k)));
        row.push_back(s.diversity ? detail::fmt_double(*s.diversity) : "");
        row.push_back(std::to_string(s.diversity_excluded));
        row.push_back(detail::fmt_double(s.coverage));
        row.push_back(detail::fmt_double(s.arp));
        out += csv_row(row) + "\n";
    }
    return out;
}

/// Per-query rows with full-precision values and the recommended list
/// ('|'-joined), enough to rebuild every aggregate.
inline std::string render_per_query_csv(const MetricsReport& report) {
    std::vector<std::string> header = {"system", "query_id"};
    for (auto k : report.k_values) header.push_back("recall@" + std::to_string(k));
    header.push_back("ap");
    for (auto k : report.k_values) header.push_back("ndcg@" + std::to_string(k));
    header.insert(header.end(), {"diversity", "diversity_excluded", "popularity", "recommended"});
    std::string out = csv_row(header) + "\n";
    for (const auto& s : report.systems) {
        for (const auto& q : s.per_query) {
            std::vector<std::string> row = {s.name, q.query_id};
            for (auto k : report.k_values) row.push_back(detail::fmt_double(q.recall.at(k)));
            row.push_back(detail::fmt_double(q.ap));
            for (auto k : report.k_values) row.push_back(detail::fmt_double(q.ndcg.at(k)));
            row.push_back(q.diversity ? detail::fmt_double(*q.diversity) : "");
            row.push_back(std::to_string(q.diversity_excluded));
            row.push_back(q.popularity ? detail::fmt_double(*q.popularity) : "");
            std::string rec;
            for (std::size_t i = 0; i < q.recommended.size(); ++i) {
                rec += (i ? "|" : "") + q.recommended[i].str();
            }
            row.push_back(rec);
            out += csv_row(row) + "\n";
        }
    }
    return out;
}

/// Rebuilds a report from render_per_query_csv output.
inline MetricsReport report_from_per_query_csv(std::string_view text, const PopularityTable& popularity) {
    const auto rows = parse_csv(text);
    if (rows.empty()) {
        fail_user("per-query CSV is empty");
    }
    const auto& header = rows.front();
    MetricsReport report;
    for (const auto& h : header) {
        if (h.rfind("recall@", 0) == 0) {
            report.k_values.push_back(std::stoul(h.substr(7)));
        }
    }
    report.cutoff = report.k_values.empty() ? 0 : report.k_values.back();
    std::vector<std::pair<std::string, std::vector<QueryMetrics>>> systems;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != header.size()) {
            fail_user("per-query CSV row " + std::to_string(r) + " has " + std::to_string(row.size()) + " fields");
        }
        QueryMetrics q;
        q.query_id = row[1];
        std::size_t c = 2;
        for (auto k : report.k_values) q.recall[k] = std::stod(row[c++]);
        q.ap = std::stod(row[c++]);
        for (auto k : report.k_values) q.ndcg[k] = std::stod(row[c++]);
        if (!row[c].empty()) q.diversity = std::stod(row[c]);
        ++c;
        q.diversity_excluded = std::stoul(row[c++]);
        if (!row[c].empty()) q.popularity = std::stod(row[c]);
        ++c;
        std::string_view rec = row[c];
        while (!rec.empty()) {
            const auto bar = rec.find('|');
            q.recommended.emplace_back(std::string(rec.substr(0, bar)));
            rec = bar == std::string_view::npos ? std::string_view{} : rec.substr(bar + 1);
        }
        if (systems.empty() || systems.back().first != row[0]) {
            systems.emplace_back(row[0], std::vector<QueryMetrics>{});
        }
        systems.back().second.push_back(std::move(q));
    }
    const auto train = train_sources_of(popularity);
    for (auto& [name, qs] : systems) {
        report.query_count = qs.size();
        report.systems.push_back(aggregate_system(name, std::move(qs), train, report.k_values));
    }
    return report;
}

}  // namespace newsrec
