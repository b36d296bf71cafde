#include <cmath>
#include <random>

#include <boost/multiprecision/cpp_int.hpp>
#include <gtest/gtest.h>

#include "newsrec/index.hpp"
#include "newsrec/retrieval.hpp"
#include "oracle/lm_oracle.hpp"
#include "support/fixtures.hpp"

using namespace newsrec;
using newsrec::testing::make_sample;
using Rational = boost::multiprecision::cpp_rational;

namespace {

Index two_doc_index() {
    const std::vector<Sample> docs = {make_sample("d1", "a b a", "X"), make_sample("d2", "c c", "Y")};
    return Index::build(docs);
}

}  // namespace

// Reference values from tests/oracle/derived_values.py (exact fractions).
TEST(Retrieval, TwoDocExampleMatchesOracle) {
    const auto idx = two_doc_index();
    const auto q = idx.query("a");
    const auto x = idx.source_index(SourceId("x"));
    const auto y = idx.source_index(SourceId("y"));
    EXPECT_EQ(cer_probability<Rational>(idx, q, x), Rational(6, 11));
    EXPECT_EQ(der_probability<Rational>(idx, q, x), Rational(6, 11));
    EXPECT_EQ(cer_probability<Rational>(idx, q, y), Rational(2, 9));
    EXPECT_EQ(der_probability<Rational>(idx, q, y), Rational(2, 9));
    EXPECT_NEAR(cer_score(idx, q, SourceId("x")), std::log(6.0 / 11.0), 1e-12);
    EXPECT_NEAR(der_score(idx, q, SourceId("x")), std::log(6.0 / 11.0), 1e-12);
    EXPECT_DOUBLE_EQ(Scorer(idx).cer_beta(), 2.5);
    EXPECT_DOUBLE_EQ(Scorer(idx).der_beta(), 2.5);
}

TEST(Retrieval, AbsentTermGivesZero) {
    const auto idx = two_doc_index();
    const auto q = idx.query("a zzz");
    EXPECT_EQ(cer_score(idx, q, SourceId("x")), kLogZero);
    EXPECT_EQ(der_score(idx, q, SourceId("x")), kLogZero);
    EXPECT_EQ(cer_probability<Rational>(idx, q, 0), Rational(0));
}

TEST(Retrieval, EmptyQueryIsEmptyProduct) {
    const auto idx = two_doc_index();
    const auto q = idx.query("");
    EXPECT_EQ(cer_score(idx, q, SourceId("x")), 0.0);
    EXPECT_EQ(der_score(idx, q, SourceId("x")), 0.0);
}

TEST(Retrieval, DocumentLackingQueryTermsStaysPositive) {
    const std::vector<Sample> docs = {make_sample("d1", "a b", "X"), make_sample("d2", "c d d", "Y")};
    const auto idx = Index::build(docs);
    const auto q = idx.query("a b");
    // 1/121 from tests/oracle/derived_values.py.
    EXPECT_EQ(der_probability<Rational>(idx, q, idx.source_index(SourceId("y"))), Rational(1, 121));
    EXPECT_NEAR(der_score(idx, q, SourceId("y")), std::log(1.0 / 121.0), 1e-12);
}

TEST(Retrieval, UnknownSourceIsError) {
    const auto idx = two_doc_index();
    EXPECT_THROW(cer_score(idx, idx.query("a"), SourceId("nobody")), Error);
}

TEST(RankSources, Examples) {
    const auto idx = two_doc_index();
    for (auto model : {RetrievalModel::candidate_based, RetrievalModel::document_based}) {
        const auto list = rank_sources(idx, idx.query("a"), model, 10);
        EXPECT_EQ(list.sources(), (std::vector<SourceId>{SourceId("x"), SourceId("y")}));
        // Truncation only, no padding.
        EXPECT_EQ(rank_sources(idx, idx.query("a"), model, 1).items.size(), 1U);
        // No indexed terms: everyone scores zero probability, tie-break by id.
        const auto none = rank_sources(idx, idx.query("qqq"), model, 10);
        EXPECT_EQ(none.sources(), (std::vector<SourceId>{SourceId("x"), SourceId("y")}));
    }
    EXPECT_THROW(rank_sources(idx, idx.query("a"), RetrievalModel::document_based, 0), Error);
}

TEST(RankSources, SingleDocExactContent) {
    const std::vector<Sample> docs = {make_sample("d1", "vaccine trial results", "Lab")};
    const auto idx = Index::build(docs);
    const auto list = rank_sources(idx, idx.query("vaccine trial results"), RetrievalModel::document_based, 5);
    ASSERT_EQ(list.items.size(), 1U);
    EXPECT_EQ(list.items[0].source, SourceId("lab"));
}

TEST(RankSources, ZeroProbabilityRanksLast) {
    const std::vector<Sample> docs = {make_sample("d1", "a b", "A"), make_sample("d2", "a c", "B"),
                                      make_sample("d3", "d d", "C")};
    const auto idx = Index::build(docs);
    const auto list = rank_sources(idx, idx.query("b"), RetrievalModel::document_based, 3);
    EXPECT_EQ(list.items[0].source, SourceId("a"));
    for (std::size_t i = 1; i < list.items.size(); ++i) {
        EXPECT_GE(*list.items[i - 1].score, *list.items[i].score);
    }
    // An OOV term zeroes every source.
    const auto zero = rank_sources(idx, idx.query("b zzz"), RetrievalModel::candidate_based, 3);
    for (const auto& item : zero.items) EXPECT_EQ(*item.score, kLogZero);
}

TEST(RankSources, DuplicatedTermRaisesPerTermPower) {
    const auto idx = two_doc_index();
    const double once = der_score(idx, idx.query("a"), SourceId("x"));
    const double twice = cer_score(idx, idx.query("a a"), SourceId("x"));
    EXPECT_NEAR(twice, 2.0 * cer_score(idx, idx.query("a"), SourceId("x")), 1e-12);
    // Replacing a matching term with an OOV term never increases the score.
    EXPECT_LE(der_score(idx, idx.query("zzz"), SourceId("x")), once);
}

TEST(Retrieval, BooleanAssociationSwitch) {
    const std::vector<Sample> docs = {make_sample("d1", "a b", "X"), make_sample("d2", "a c", "X"),
                                      make_sample("d3", "c c", "Y")};
    const auto idx = Index::build(docs);
    const auto q = idx.query("a");
    const RetrievalOptions boolean{Association::boolean};
    oracle::Corpus c{{{"a", "b"}, {"a", "c"}, {"c", "c"}}, {"X", "X", "Y"}};
    const auto u = oracle::evaluate(c, {"a"}, "X", true);
    const auto b = oracle::evaluate(c, {"a"}, "X", false);
    EXPECT_EQ(der_probability<Rational>(idx, q, 0), u.der);
    EXPECT_EQ(der_probability<Rational>(idx, q, 0, boolean), b.der);
    EXPECT_EQ(cer_probability<Rational>(idx, q, 0, boolean), b.cer);
    EXPECT_NEAR(der_score(idx, q, SourceId("x"), boolean), oracle::log_of(b.der), 1e-12);
}

// Property check against the raw-token brute-force oracle.
TEST(Retrieval, MatchesBruteForceOracle) {
    const std::vector<std::string> vocab = {"apple", "bread", "cheese", "dates", "eggs", "figs", "grapes", "honey"};
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 60; ++trial) {
        oracle::Corpus c;
        std::vector<Sample> samples;
        const int n_docs = 1 + static_cast<int>(gen() % 10);
        for (int d = 0; d < n_docs; ++d) {
            std::vector<std::string> toks;
            std::string ctx;
            const int len = 1 + static_cast<int>(gen() % 7);
            for (int k = 0; k < len; ++k) {
                toks.push_back(vocab[gen() % vocab.size()]);
                ctx += toks.back() + " ";
            }
            const std::string spk = std::string(1, static_cast<char>('p' + gen() % 4));
            c.docs.push_back(toks);
            c.speaker.push_back(spk);
            samples.push_back(make_sample("d" + std::to_string(d), ctx, spk));
        }
        const auto idx = Index::build(samples);
        std::vector<std::string> q;
        std::string qtext;
        const int qlen = static_cast<int>(gen() % 5);
        for (int k = 0; k < qlen; ++k) {
            q.push_back(gen() % 9 == 0 ? std::string("kiwi") : vocab[gen() % vocab.size()]);
            qtext += q.back() + " ";
        }
        const auto query = idx.query(qtext);
        for (std::size_t e = 0; e < idx.n_sources(); ++e) {
            const auto ref = oracle::evaluate(c, q, idx.source(e).str());
            EXPECT_EQ(cer_probability<Rational>(idx, query, e), ref.cer);
            EXPECT_EQ(der_probability<Rational>(idx, query, e), ref.der);
            const double cer = cer_score(idx, query, idx.source(e));
            const double der = der_score(idx, query, idx.source(e));
            if (ref.cer == 0) {
                EXPECT_EQ(cer, kLogZero);
            } else {
                EXPECT_NEAR(cer, oracle::log_of(ref.cer), 1e-9);
            }
            if (ref.der == 0) {
                EXPECT_EQ(der, kLogZero);
            } else {
                EXPECT_NEAR(der, oracle::log_of(ref.der), 1e-9);
            }
        }
    }
}

TEST(RankSources, DeterministicAndPermutation) {
    std::vector<Sample> docs;
    std::mt19937_64 gen(9);
    const std::vector<std::string> vocab = {"one", "two", "three", "four", "five"};
    for (int d = 0; d < 30; ++d) {
        std::string ctx;
        for (int k = 0; k < 6; ++k) ctx += vocab[gen() % vocab.size()] + " ";
        docs.push_back(make_sample("d" + std::to_string(d), ctx, "S" + std::to_string(gen() % 8)));
    }
    const auto idx = Index::build(docs);
    const auto a = rank_sources(idx, idx.query("one two"), RetrievalModel::candidate_based, 100);
    const auto b = rank_sources(idx, idx.query("one two"), RetrievalModel::candidate_based, 100);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.items.size(), idx.n_sources());
    auto sorted = a.sources();
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
}
