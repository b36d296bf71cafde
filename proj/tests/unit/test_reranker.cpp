#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "newsrec/chat.hpp"
#include "newsrec/reranker.hpp"
#include "support/fixtures.hpp"

using namespace newsrec;
using newsrec::testing::ids;
using newsrec::testing::TempDir;

namespace {

RerankRequest named_request(std::size_t n, std::string query = "Flood defences funding") {
    RerankRequest r;
    r.request_id = "req";
    r.query = std::move(query);
    for (std::size_t i = 0; i < n; ++i) {
        const auto name = "Source " + std::string(1, static_cast<char>('A' + i));
        r.candidates.push_back({SourceId("id" + std::to_string(i)), name});
    }
    return r;
}

std::vector<std::string> names_of(const RerankRequest& r) {
    std::vector<std::string> out;
    for (const auto& c : r.candidates) out.push_back(c.name);
    return out;
}

nlohmann::json reply(const std::string& content) {
    return {{"choices", nlohmann::json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})}};
}

/// Fails `failures` times, then answers with `content`.
class StubTransport final : public Transport {
  public:
    StubTransport(int failures, std::string content) : m_failures(failures), m_content(std::move(content)) {}
    nlohmann::json post(const nlohmann::json&) override {
        ++calls;
        if (calls <= m_failures) throw Error(ErrorKind::endpoint, "HTTP 503 #" + std::to_string(calls));
        return reply(m_content);
    }
    int calls = 0;

  private:
    int m_failures;
    std::string m_content;
};

bool is_permutation(const std::vector<SourceId>& got, const RerankRequest& r) {
    std::vector<SourceId> want;
    for (const auto& c : r.candidates) want.push_back(c.id);
    return got.size() == want.size() && std::is_permutation(got.begin(), got.end(), want.begin());
}

}  // namespace

TEST(BuildPrompt, TenCandidates) {
    const auto r = named_request(10);
    const auto p = build_prompt(r);
    EXPECT_NE(p.find("You are a knowledgeable referrer."), std::string::npos);
    EXPECT_NE(p.find("rank the 10 potential sources in order of relevance"), std::string::npos);
    EXPECT_NE(p.find(serialize_name_list(names_of(r))), std::string::npos);
    EXPECT_NE(p.find("Now the query is: Flood defences funding."), std::string::npos);
}

TEST(BuildPrompt, ExemplarListsVerbatim) {
    const auto r = named_request(10);
    const auto p = build_prompt(r);
    ASSERT_EQ(r.exemplar.candidates.size(), 10U);
    EXPECT_NE(p.find(serialize_name_list(r.exemplar.candidates)), std::string::npos);
    EXPECT_NE(p.find(serialize_name_list(r.exemplar.reranked)), std::string::npos);
    EXPECT_NE(p.find("Query: " + r.exemplar.query + "."), std::string::npos);
}

TEST(BuildPrompt, ThreeCandidates) {
    const auto p = build_prompt(named_request(3));
    EXPECT_NE(p.find("rank the 3 potential sources in order of relevance"), std::string::npos);
    EXPECT_NE(p.find(R"(["Source A", "Source B", "Source C"])"), std::string::npos);
}

TEST(BuildPrompt, TokenBudget) {
    EXPECT_THROW(build_prompt(named_request(10), PromptOptions{50}), Error);
    EXPECT_NO_THROW(build_prompt(named_request(10), PromptOptions{8000}));
}

TEST(BuildPrompt, QuotesEscaped) {
    EXPECT_EQ(serialize_name_list({"A \"B\"", "C\\D"}), R"(["A \"B\"", "C\\D"])");
}

TEST(RerankRequest, Validation) {
    auto r = named_request(11);
    EXPECT_THROW(validate(r), Error);
    r = named_request(2);
    r.candidates[1].name = "  source   a ";
    EXPECT_THROW(validate(r), Error);
    EXPECT_THROW(validate(named_request(0)), Error);
}

TEST(ParseRanking, CleanPermutation) {
    const auto r = named_request(10);
    auto names = names_of(r);
    std::reverse(names.begin(), names.end());
    const auto resp = parse_ranking("Here you go: " + serialize_name_list(names), r);
    EXPECT_FALSE(resp.repaired);
    ASSERT_EQ(resp.ranking.size(), 10U);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(resp.ranking[i], r.candidates[9 - i].id);
}

TEST(ParseRanking, MissingAndHallucinated) {
    const auto r = named_request(10);
    // Drop B and E, add an unknown name, keep the rest reversed.
    const std::string raw =
        R"(["source j", "SOURCE I", "Source H", "Someone Else", "Source G", "Source F", "Source D", "Source C", "Source A"])";
    const auto resp = parse_ranking(raw, r);
    EXPECT_TRUE(resp.repaired);
    const std::vector<std::size_t> order = {9, 8, 7, 6, 5, 3, 2, 0, 1, 4};
    ASSERT_EQ(resp.ranking.size(), order.size());
    for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(resp.ranking[i], r.candidates[order[i]].id) << i;
    EXPECT_NE(std::find(resp.repair_notes.begin(), resp.repair_notes.end(), "hallucinated:Someone Else"),
              resp.repair_notes.end());
}

TEST(ParseRanking, NoList) {
    const auto r = named_request(4);
    const auto resp = parse_ranking("I cannot help", r);
    EXPECT_TRUE(resp.repaired);
    EXPECT_EQ(resp.repair_notes, std::vector<std::string>{"no-list"});
    EXPECT_EQ(resp.ranking, ids({"id0", "id1", "id2", "id3"}));
}

TEST(ParseRanking, AwkwardInputsStayPermutations) {
    const auto r = named_request(3);
    for (const std::string raw :
         {"", "[", "]", "[]", "[,,,]", R"(["Source C", "Source C", "Source A"])", "['Source B', 'Source A']",
          "[Source C, Source B]", "[\"Source A\"", "\xe2\x80\x9cSource B\xe2\x80\x9d]", "[\"\xff\xfe\"]",
          "[\"Source \\\"A\"]", "prefix [\"Source B\"] and [\"Source C\"]"}) {
        const auto resp = parse_ranking(raw, r);
        EXPECT_TRUE(is_permutation(resp.ranking, r)) << raw;
    }
    // Unquoted and curly-quoted entries still match.
    EXPECT_EQ(parse_ranking("[Source C, Source B]", r).ranking, ids({"id2", "id1", "id0"}));
    EXPECT_EQ(parse_ranking("[\xe2\x80\x9cSource B\xe2\x80\x9d, 'Source C']", r).ranking, ids({"id1", "id2", "id0"}));
}

TEST(Rankers, Identity) {
    RerankRequest r;
    r.request_id = "x";
    for (const char* n : {"C", "A", "B"}) r.candidates.push_back({SourceId(n), n});
    EXPECT_EQ(IdentityRanker().rerank(r).ranking, ids({"C", "A", "B"}));
}

TEST(Rankers, Oracle) {
    RerankRequest r;
    r.request_id = "x";
    for (const char* n : {"C", "A", "B"}) r.candidates.push_back({SourceId(n), n});
    const RelevanceTable rel = {{SourceId("A"), 1.0}, {SourceId("B"), 0.0}, {SourceId("C"), 0.0}};
    EXPECT_EQ(OracleRanker(rel).rerank(r).ranking, ids({"A", "C", "B"}));
    EXPECT_EQ(NoisyOracleRanker(rel, 0.0, 99).rerank(r).ranking, ids({"A", "C", "B"}));
}

TEST(Rankers, NoisyOracleIsSeededAndBiased) {
    const auto r = named_request(10);
    RelevanceTable rel;
    for (std::size_t i = 0; i < 10; ++i) rel[r.candidates[i].id] = 10.0 - static_cast<double>(i);
    const NoisyOracleRanker a(rel, 0.5, 3);
    EXPECT_EQ(a.rerank(r).ranking, NoisyOracleRanker(rel, 0.5, 3).rerank(r).ranking);
    EXPECT_TRUE(is_permutation(a.rerank(r).ranking, r));
    // Rate 1 swaps every adjacent pair bottom-up: the last item bubbles to the top.
    const auto all = NoisyOracleRanker(rel, 1.0, 3).rerank(r).ranking;
    EXPECT_EQ(all.front(), r.candidates.back().id);
    // Full bias with popularity decreasing down the list blocks every swap.
    std::unordered_map<SourceId, double> pop;
    for (std::size_t i = 0; i < 10; ++i) pop[r.candidates[i].id] = 100.0 - static_cast<double>(i);
    EXPECT_EQ(NoisyOracleRanker(rel, 1.0, 3, pop, 1.0).rerank(r).ranking, OracleRanker(rel).rerank(r).ranking);
    EXPECT_THROW(NoisyOracleRanker(rel, 1.5, 3), Error);
}

TEST(ChatClient, RetriesWithBackoff) {
    auto transport = std::make_shared<StubTransport>(2, "[\"Source B\", \"Source A\"]");
    std::vector<std::chrono::milliseconds> sleeps;
    ChatSettings s;
    s.initial_backoff = std::chrono::milliseconds(100);
    ChatClient client(s, transport, {}, ReplayMode::off, [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
    EXPECT_EQ(client.complete("hi"), "[\"Source B\", \"Source A\"]");
    EXPECT_EQ(transport->calls, 3);
    EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100),
                                                                std::chrono::milliseconds(200)}));
}

TEST(ChatClient, ExhaustedRetriesCarryAttemptLog) {
    auto transport = std::make_shared<StubTransport>(5, "unused");
    ChatClient client(ChatSettings{}, transport, {}, ReplayMode::off, [](std::chrono::milliseconds) {});
    try {
        (void)client.complete("hi");
        FAIL() << "expected an endpoint error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::endpoint);
        const std::string what = e.what();
        EXPECT_NE(what.find("after 3 attempts"), std::string::npos);
        EXPECT_NE(what.find("attempt 1: HTTP 503 #1"), std::string::npos);
        EXPECT_NE(what.find("attempt 3: HTTP 503 #3"), std::string::npos);
    }
    EXPECT_EQ(transport->calls, 3);
}

TEST(ChatClient, RequestBodyShape) {
    ChatSettings s;
    s.model = "m1";
    const auto body = chat_request_body(s, "prompt");
    EXPECT_EQ(body.at("model"), "m1");
    EXPECT_EQ(body.at("temperature"), 0.0);
    EXPECT_EQ(body.at("messages").at(0).at("content"), "prompt");
    EXPECT_THROW(chat_response_content(nlohmann::json{{"error", "x"}}), Error);
}

TEST(ChatClient, SettingsFromEnvironment) {
    ::setenv("NEWSREC_ENDPOINT_URL", "https://example.invalid/v1/chat/completions", 1);
    ::setenv("NEWSREC_API_KEY", "k-test", 1);
    ::setenv("NEWSREC_MODEL", "model-x", 1);
    const auto s = ChatSettings::from_environment();
    EXPECT_EQ(s.url, "https://example.invalid/v1/chat/completions");
    EXPECT_EQ(s.api_key, "k-test");
    EXPECT_EQ(s.model, "model-x");
    ::unsetenv("NEWSREC_ENDPOINT_URL");
    ::unsetenv("NEWSREC_API_KEY");
    ::unsetenv("NEWSREC_MODEL");
}

TEST(ChatEndpointRanker, RecordThenReplay) {
    TempDir dir("replay");
    const auto path = dir.file("replay.jsonl");
    const auto r = named_request(4);
    auto transport = std::make_shared<StubTransport>(0, R"(["Source D", "Source B", "Source X"])");
    RerankResponse recorded;
    {
        auto log = std::make_shared<ReplayLog>(path);
        auto client = std::make_shared<ChatClient>(ChatSettings{}, transport, log, ReplayMode::record);
        recorded = ChatEndpointRanker(client).rerank(r);
        // A second call is served from the log.
        EXPECT_EQ(ChatEndpointRanker(client).rerank(r).ranking, recorded.ranking);
        EXPECT_EQ(transport->calls, 1);
    }
    EXPECT_EQ(recorded.ranking, ids({"id3", "id1", "id0", "id2"}));
    EXPECT_TRUE(recorded.repaired);

    auto log = std::make_shared<ReplayLog>(path);
    EXPECT_EQ(log->size(), 1U);
    auto strict = std::make_shared<ChatClient>(ChatSettings{}, nullptr, log, ReplayMode::strict);
    const auto replayed = ChatEndpointRanker(strict).rerank(r);
    EXPECT_EQ(replayed.ranking, recorded.ranking);
    EXPECT_EQ(replayed.raw, recorded.raw);

    auto other = r;
    other.query = "Something else";
    try {
        (void)ChatEndpointRanker(strict).rerank(other);
        FAIL() << "expected a replay miss";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::endpoint);
    }
}

TEST(ReplayLog, MalformedLineIsUserError) {
    TempDir dir("replay-bad");
    {
        std::ofstream out(dir.file("bad.jsonl"));
        out << "{\"key\": \"k\"}\n";
    }
    EXPECT_THROW(ReplayLog(dir.file("bad.jsonl")), Error);
}
