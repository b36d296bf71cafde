#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "newsrec/metrics.hpp"
#include "support/fixtures.hpp"

using namespace newsrec;
using newsrec::testing::ids;

namespace {

constexpr double kTol = 1e-12;

Gold gold(std::initializer_list<const char*> names) {
    const auto v = ids(names);
    return {v.begin(), v.end()};
}

EmbeddingTable table(const std::vector<std::pair<const char*, std::vector<double>>>& rows) {
    EmbeddingTable t;
    for (const auto& [id, v] : rows) t.add(SourceId(id), v);
    return t;
}

}  // namespace

TEST(Recall, Examples) {
    EXPECT_NEAR(recall_at_k(ids({"A", "C"}), gold({"A", "B"}), 2), 0.5, kTol);
    EXPECT_NEAR(recall_at_k(ids({"B", "X", "A"}), gold({"A", "B"}), 3), 1.0, kTol);
    EXPECT_NEAR(recall_at_k(ids({"X", "Y"}), gold({"A"}), 2), 0.0, kTol);
    EXPECT_NEAR(recall_at_k(ids({"X", "A"}), gold({"A"}), 1), 0.0, kTol);
    EXPECT_THROW(recall_at_k(ids({"A"}), Gold{}, 1), Error);
}

TEST(AveragePrecision, Examples) {
    EXPECT_NEAR(average_precision(ids({"B", "A"}), gold({"A"})), 0.5, kTol);
    EXPECT_NEAR(average_precision(ids({"A", "B"}), gold({"A", "B"})), 1.0, kTol);
    // 5/6 from tests/oracle/derived_values.py.
    EXPECT_NEAR(average_precision(ids({"A", "X", "B", "Y"}), gold({"A", "B"})), 5.0 / 6.0, kTol);
    EXPECT_NEAR(average_precision(ids({"A"}), gold({"A", "B"})), 0.5, kTol);
}

TEST(AveragePrecision, IrrelevantTailPermutation) {
    EXPECT_EQ(average_precision(ids({"A", "X", "B", "Y", "Z"}), gold({"A", "B"})),
              average_precision(ids({"A", "X", "B", "Z", "Y"}), gold({"A", "B"})));
}

TEST(Ndcg, Examples) {
    EXPECT_NEAR(ndcg_at_k(ids({"A", "X"}), gold({"A"}), 10), 1.0, kTol);
    EXPECT_NEAR(ndcg_at_k(ids({"X", "Y", "A"}), gold({"A"}), 10), 1.0 / std::log2(3.0), kTol);
    EXPECT_NEAR(ndcg_at_k(ids({"X", "Y", "A"}), gold({"A"}), 10), 0.63092975357145753, kTol);
    EXPECT_NEAR(ndcg_at_k(ids({"X", "Y", "A"}), gold({"A"}), 2), 0.0, kTol);
    // Cut-off below |gold|: the ideal stays the full gold set.
    EXPECT_NEAR(ndcg_at_k(ids({"A", "X"}), gold({"A", "B"}), 1), 1.0 / (1.0 + 1.0), kTol);
}

TEST(Ndcg, IdealIsOneAndMonotoneInK) {
    std::mt19937_64 gen(17);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + gen() % 30;
        std::vector<SourceId> ranking;
        for (std::size_t i = 0; i < n; ++i) ranking.emplace_back("s" + std::to_string(i));
        std::shuffle(ranking.begin(), ranking.end(), gen);
        const std::size_t g = 1 + gen() % n;
        const Gold gs(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(g));
        for (std::size_t k = g; k <= n + 2; ++k) EXPECT_EQ(ndcg_at_k(ranking, gs, k), 1.0);
        if (g > 1) {
            EXPECT_LT(ndcg_at_k(ranking, gs, g - 1), 1.0);
        }

        std::shuffle(ranking.begin(), ranking.end(), gen);
        double prev_r = 0.0;
        double prev_n = 0.0;
        for (std::size_t k = 1; k <= n + 2; ++k) {
            const double r = recall_at_k(ranking, gs, k);
            const double nd = ndcg_at_k(ranking, gs, k);
            EXPECT_GE(r, prev_r);
            EXPECT_GE(nd + 1e-15, prev_n);
            EXPECT_LE(nd, 1.0 + 1e-15);
            prev_r = r;
            prev_n = nd;
        }
    }
}

TEST(Diversity, Examples) {
    const auto t = table({{"a", {0, 0}}, {"b", {3, 4}}, {"c", {1, 0}}, {"d", {0, 1}}, {"e", {0, 0}}});
    EXPECT_NEAR(*diversity(ids({"a", "b"}), t), 5.0, kTol);
    EXPECT_NEAR(*diversity(ids({"a", "e"}), t), 0.0, kTol);
    // (1 + 1 + sqrt 2) / 3, see tests/oracle/derived_values.py.
    EXPECT_NEAR(*diversity(ids({"a", "c", "d"}), t), (2.0 + std::sqrt(2.0)) / 3.0, kTol);
    EXPECT_NEAR(*diversity(ids({"a", "c", "d"}), t), 1.1380711874576983, kTol);
}

TEST(Diversity, MissingEmbeddingsExcluded) {
    const auto t = table({{"a", {0, 0}}, {"b", {3, 4}}});
    std::size_t excluded = 0;
    EXPECT_NEAR(*diversity(ids({"a", "zz", "b", "yy"}), t, &excluded), 5.0, kTol);
    EXPECT_EQ(excluded, 2U);
    EXPECT_FALSE(diversity(ids({"a", "zz"}), t, &excluded).has_value());
    EXPECT_EQ(excluded, 1U);
}

TEST(Diversity, TranslationAndScale) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int trial = 0; trial < 50; ++trial) {
        EmbeddingTable base;
        EmbeddingTable moved;
        EmbeddingTable scaled;
        std::vector<SourceId> ranking;
        const std::vector<double> shift = {u(gen), u(gen), u(gen)};
        const double factor = 0.5 + std::abs(u(gen));
        for (int i = 0; i < 6; ++i) {
            const SourceId id("s" + std::to_string(i));
            ranking.push_back(id);
            std::vector<double> v = {u(gen), u(gen), u(gen)};
            std::vector<double> m = v;
            std::vector<double> s = v;
            for (int d = 0; d < 3; ++d) {
                m[d] += shift[d];
                s[d] *= factor;
            }
            base.add(id, v);
            moved.add(id, m);
            scaled.add(id, s);
        }
        const double d0 = *diversity(ranking, base);
        EXPECT_NEAR(*diversity(ranking, moved), d0, 1e-9);
        EXPECT_NEAR(*diversity(ranking, scaled), factor * d0, 1e-9);
    }
}

TEST(Coverage, Examples) {
    const Gold train = gold({"A", "B", "C", "D"});
    const std::set<SourceId> t(train.begin(), train.end());
    const std::vector<std::vector<SourceId>> half = {ids({"A", "X"}), ids({"C"})};
    EXPECT_NEAR(coverage(half, t), 0.5, kTol);
    const std::vector<std::vector<SourceId>> all = {ids({"A", "B"}), ids({"C", "D"})};
    EXPECT_NEAR(coverage(all, t), 1.0, kTol);
    EXPECT_NEAR(coverage(std::vector<std::vector<SourceId>>{}, t), 0.0, kTol);
}

TEST(Arp, Examples) {
    const PopularityTable pop = {{SourceId("A"), 10}, {SourceId("B"), 2}, {SourceId("C"), 4}};
    const std::vector<std::vector<SourceId>> one = {ids({"A", "B"})};
    EXPECT_NEAR(arp(one, pop), 6.0, kTol);
    const std::vector<std::vector<SourceId>> two = {ids({"A", "B"}), ids({"C"})};
    EXPECT_NEAR(arp(two, pop), 5.0, kTol);
    const std::vector<std::vector<SourceId>> unseen = {ids({"X", "Y"})};
    EXPECT_NEAR(arp(unseen, pop), 0.0, kTol);
    const std::vector<std::vector<SourceId>> same = {ids({"C"}), ids({"C"}), ids({"C"})};
    EXPECT_EQ(arp(same, pop), 4.0);
}

TEST(Evaluate, Examples) {
    const std::vector<GoldQuery> g = {{"q1", "query", ids({"A"})}};
    newsrec::Run run = {{"q1", ids({"A", "B"})}};
    const PopularityTable pop = {{SourceId("A"), 3}, {SourceId("B"), 1}};
    const auto report = evaluate({{"S1", run}, {"S2", run}}, g, nullptr, pop);
    ASSERT_EQ(report.systems.size(), 2U);
    const auto& s = report.systems[0];
    EXPECT_EQ(s.recall.at(10), 1.0);
    EXPECT_EQ(s.map, 1.0);
    EXPECT_EQ(s.ndcg.at(10), 1.0);
    EXPECT_EQ(s.arp, 2.0);
    EXPECT_EQ(s.coverage, 1.0);
    EXPECT_FALSE(s.diversity.has_value());
    const auto& t = report.systems[1];
    EXPECT_EQ(s.recall, t.recall);
    EXPECT_EQ(s.ndcg, t.ndcg);
    EXPECT_EQ(s.map, t.map);
    EXPECT_EQ(s.arp, t.arp);
    EXPECT_EQ(s.coverage, t.coverage);
}

TEST(Evaluate, MissingRunEntryScoresZero) {
    const std::vector<GoldQuery> g = {{"q1", "", ids({"A"})}, {"q2", "", ids({"B"})}};
    const newsrec::Run run = {{"q1", ids({"A"})}};
    const auto report = evaluate({{"S", run}}, g, nullptr, {});
    EXPECT_NEAR(report.systems[0].recall.at(20), 0.5, kTol);
    EXPECT_THROW(evaluate({{"S", run}}, g, nullptr, {}, EvalConfig{{}}), Error);
}

TEST(Evaluate, RegeneratedFromPerQueryCsv) {
    std::mt19937_64 gen(3);
    std::vector<GoldQuery> g;
    newsrec::Run a;
    newsrec::Run b;
    EmbeddingTable emb(4);
    PopularityTable pop;
    for (int s = 0; s < 40; ++s) {
        const SourceId id("src" + std::to_string(s));
        if (s % 3 != 0) emb.add(id, {double(gen() % 7), double(gen() % 5), double(gen() % 3), 0.25 * s});
        if (s % 4 != 0) pop[id] = static_cast<double>(gen() % 50);
    }
    for (int q = 0; q < 15; ++q) {
        const auto qid = "q" + std::to_string(q);
        g.push_back({qid, "", {SourceId("src" + std::to_string(gen() % 40)), SourceId("src" + std::to_string(q))}});
        std::vector<SourceId> la;
        std::vector<SourceId> lb;
        for (int i = 0; i < 25; ++i) {
            la.emplace_back("src" + std::to_string((q + i * 3) % 40));
            lb.emplace_back("src" + std::to_string((q * 7 + i) % 40));
        }
        a[qid] = la;
        b[qid] = lb;
    }
    const auto report = evaluate({{"A", a}, {"B", b}}, g, &emb, pop);
    const auto rebuilt = report_from_per_query_csv(render_per_query_csv(report), pop);
    ASSERT_EQ(rebuilt.systems.size(), report.systems.size());
    EXPECT_EQ(rebuilt.k_values, report.k_values);
    for (std::size_t i = 0; i < report.systems.size(); ++i) {
        const auto& x = report.systems[i];
        const auto& y = rebuilt.systems[i];
        EXPECT_EQ(x.name, y.name);
        for (auto k : report.k_values) {
            EXPECT_NEAR(x.recall.at(k), y.recall.at(k), kTol);
            EXPECT_NEAR(x.ndcg.at(k), y.ndcg.at(k), kTol);
        }
        EXPECT_NEAR(x.map, y.map, kTol);
        EXPECT_NEAR(*x.diversity, *y.diversity, kTol);
        EXPECT_EQ(x.diversity_excluded, y.diversity_excluded);
        EXPECT_NEAR(x.coverage, y.coverage, kTol);
        EXPECT_NEAR(x.arp, y.arp, kTol);
    }
    EXPECT_EQ(render_csv(rebuilt), render_csv(report));
}

TEST(Embeddings, ParseAndWrite) {
    std::istringstream in("# provenance\n2 3\nalice 1 2 3\nbob 0.5 0 -1\n");
    const auto t = EmbeddingTable::parse(in);
    EXPECT_EQ(t.size(), 2U);
    EXPECT_EQ(t.dim(), 3U);
    EXPECT_EQ(*t.find(SourceId("bob")), (std::vector<double>{0.5, 0, -1}));
    std::ostringstream out;
    t.write(out);
    std::istringstream again(out.str());
    EXPECT_EQ(EmbeddingTable::parse(again).vectors(), t.vectors());
}

TEST(Embeddings, ParseErrors) {
    for (const char* text : {"x y\n", "1 3\nalice 1 2\n", "2 2\nalice 1 2\n", "1 2\nalice 1 two\n"}) {
        std::istringstream in(text);
        EXPECT_THROW(EmbeddingTable::parse(in), Error) << text;
    }
    EmbeddingTable t;
    t.add(SourceId("a"), {1, 2});
    EXPECT_THROW(t.add(SourceId("b"), {1}), Error);
}

TEST(Popularity, CsvRoundTrip) {
    const PopularityTable pop = {{SourceId("a,b"), 3}, {SourceId("c"), 0.5}};
    EXPECT_EQ(parse_popularity_csv(popularity_csv(pop)), pop);
    EXPECT_THROW(parse_popularity_csv("source,count\nx,notanumber\n"), Error);
    EXPECT_THROW(parse_popularity_csv("x,1,2\n"), Error);
}

TEST(GoldFile, ParseRecords) {
    const GoldQuery q{"q7", "Flood \"barriers\"", ids({"a", "b"})};
    std::istringstream in(gold_record(q) + "\n\n");
    const auto back = parse_gold(in, "gold");
    ASSERT_EQ(back.size(), 1U);
    EXPECT_EQ(back[0].query_id, "q7");
    EXPECT_EQ(back[0].query, q.query);
    EXPECT_EQ(back[0].gold, q.gold);
    for (const char* bad : {"{", "{\"query_id\": \"q\", \"gold\": []}", "{\"gold\": [\"a\"]}"}) {
        std::istringstream b(bad);
        EXPECT_THROW(parse_gold(b, "gold"), Error) << bad;
    }
}
