#pragma once

// File-based pipeline stages. Each stage reads artifacts from disk, writes
// versioned artifacts plus "<stage>.manifest.json" into the output
// directory, and never embeds wall-clock data, so reruns are byte-identical.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "newsrec/artifact.hpp"
#include "newsrec/chat.hpp"
#include "newsrec/corpus.hpp"
#include "newsrec/digest.hpp"
#include "newsrec/error.hpp"
#include "newsrec/index.hpp"
#include "newsrec/metrics.hpp"
#include "newsrec/mlrf.hpp"
#include "newsrec/reranker.hpp"
#include "newsrec/retrieval.hpp"
#include "newsrec/rng.hpp"
#include "newsrec/synth.hpp"

namespace newsrec {

namespace fs = std::filesystem;

enum class RankerKind { identity, oracle, noisy, endpoint };

inline std::string_view to_string(RankerKind k) {
    switch (k) {
        case RankerKind::identity: return "identity";
        case RankerKind::oracle: return "oracle";
        case RankerKind::noisy: return "noisy";
        case RankerKind::endpoint: return "endpoint";
    }
    return "identity";
}

inline RankerKind ranker_kind_from_string(std::string_view s) {
    if (s == "identity") return RankerKind::identity;
    if (s == "oracle") return RankerKind::oracle;
    if (s == "noisy") return RankerKind::noisy;
    if (s == "endpoint") return RankerKind::endpoint;
    fail_user("unknown ranker '" + std::string(s) + "' (expected endpoint, identity, oracle or noisy)");
}

/// Endpoint settings that may live in a config file. The API key is read
/// from the environment only.
struct EndpointConfig {
    std::string url;
    std::string model = "gpt-3.5-turbo";
    double temperature = 0.0;
    int max_attempts = 3;
    int initial_backoff_ms = 500;
    int timeout_s = 60;

    [[nodiscard]] ChatSettings settings() const {
        auto s = ChatSettings::from_environment();
        if (!url.empty() && std::getenv("NEWSREC_ENDPOINT_URL") == nullptr) {
            s.url = url;
        }
        if (std::getenv("NEWSREC_MODEL") == nullptr) {
            s.model = model;
        }
        s.temperature = temperature;
        s.max_attempts = max_attempts;
        s.initial_backoff = std::chrono::milliseconds(initial_backoff_ms);
        s.timeout = std::chrono::seconds(timeout_s);
        return s;
    }
};

struct PipelineConfig {
    std::string corpus;
    std::string lexicon;
    std::string srl;
    std::size_t min_count = 2;
    std::size_t n_test = 25;
    std::size_t n_valid = 5;
    TokenizerConfig tokenizer;
    RetrievalModel model = RetrievalModel::document_based;
    Association association = Association::uniform;
    std::size_t top_n = 100;
    FilterConfig filter;
    /// One extra layer-weighted run per entry, named MRF0, MRF1, ...
    std::vector<std::vector<double>> weight_sets = {{0.25, 0.75}, {0.5, 0.5}, {0.75, 0.25}};
    RankerKind ranker = RankerKind::identity;
    double error_rate = 0.2;
    double popularity_bias = 1.0;
    EndpointConfig endpoint;
    std::vector<std::size_t> k_values = {10, 20};
    std::uint64_t seed = 0;
    std::string out = "out";

    /// Referenced input files must exist.
    void validate() const {
        for (const auto* p : {&corpus, &lexicon, &srl}) {
            if (!p->empty() && !fs::exists(*p)) {
                fail_user("config references a missing file: " + *p);
            }
        }
        if (min_count < 1) fail_user("config: min_count must be >= 1");
        if (top_n < 1) fail_user("config: top_n must be >= 1");
        if (k_values.empty()) fail_user("config: k_values must not be empty");
        for (auto k : k_values) {
            if (k < 1) fail_user("config: K values must be >= 1");
        }
        if (!(error_rate >= 0.0 && error_rate <= 1.0) || !(popularity_bias >= 0.0 && popularity_bias <= 1.0)) {
            fail_user("config: error_rate and popularity_bias must lie in [0, 1]");
        }
        filter.validate();
        for (const auto& w : weight_sets) {
            FilterConfig::check_weights(w, filter.layers.size());
        }
    }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
    return {{"corpus", c.corpus},
            {"lexicon", c.lexicon},
            {"srl", c.srl},
            {"min_count", c.min_count},
            {"n_test", c.n_test},
            {"n_valid", c.n_valid},
            {"tokenizer", {{"remove_stopwords", c.tokenizer.remove_stopwords}, {"stem", c.tokenizer.stem}}},
            {"model", to_string(c.model)},
            {"association", c.association == Association::uniform ? "uniform" : "boolean"},
            {"top_n", c.top_n},
            {"filter", to_json(c.filter)},
            {"weight_sets", c.weight_sets},
            {"ranker", to_string(c.ranker)},
            {"error_rate", c.error_rate},
            {"popularity_bias", c.popularity_bias},
            {"endpoint",
             {{"url", c.endpoint.url},
              {"model", c.endpoint.model},
              {"temperature", c.endpoint.temperature},
              {"max_attempts", c.endpoint.max_attempts},
              {"initial_backoff_ms", c.endpoint.initial_backoff_ms},
              {"timeout_s", c.endpoint.timeout_s}}},
            {"k_values", c.k_values},
            {"seed", c.seed},
            {"out", c.out}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "corpus", "lexicon", "srl",    "min_count", "n_test",          "n_valid",  "tokenizer", "model",
        "association", "top_n", "filter", "weight_sets", "ranker", "error_rate", "popularity_bias", "endpoint",
        "k_values", "seed", "out"};
    if (!j.is_object()) {
        fail_user("config must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            fail_user("config: unknown key '" + key + "'");
        }
    }
    PipelineConfig c;
    try {
        c.corpus = j.value("corpus", c.corpus);
        c.lexicon = j.value("lexicon", c.lexicon);
        c.srl = j.value("srl", c.srl);
        c.min_count = j.value("min_count", c.min_count);
        c.n_test = j.value("n_test", c.n_test);
        c.n_valid = j.value("n_valid", c.n_valid);
        if (j.contains("tokenizer")) {
            const auto& t = j.at("tokenizer");
            c.tokenizer.remove_stopwords = t.value("remove_stopwords", false);
            c.tokenizer.stem = t.value("stem", false);
        }
        if (j.contains("model")) c.model = retrieval_model_from_string(j.at("model").get<std::string>());
        if (j.contains("association")) {
            const auto a = j.at("association").get<std::string>();
            if (a != "uniform" && a != "boolean") {
                fail_user("config: association must be uniform or boolean");
            }
            c.association = a == "uniform" ? Association::uniform : Association::boolean;
        }
        c.top_n = j.value("top_n", c.top_n);
        if (j.contains("filter")) c.filter = filter_config_from_json(j.at("filter"));
        c.weight_sets = j.value("weight_sets", c.weight_sets);
        if (j.contains("ranker")) c.ranker = ranker_kind_from_string(j.at("ranker").get<std::string>());
        c.error_rate = j.value("error_rate", c.error_rate);
        c.popularity_bias = j.value("popularity_bias", c.popularity_bias);
        if (j.contains("endpoint")) {
            const auto& e = j.at("endpoint");
            if (e.contains("api_key")) {
                fail_user("config: API keys are read from NEWSREC_API_KEY only, remove 'api_key' from the config");
            }
            c.endpoint.url = e.value("url", c.endpoint.url);
            c.endpoint.model = e.value("model", c.endpoint.model);
            c.endpoint.temperature = e.value("temperature", c.endpoint.temperature);
            c.endpoint.max_attempts = e.value("max_attempts", c.endpoint.max_attempts);
            c.endpoint.initial_backoff_ms = e.value("initial_backoff_ms", c.endpoint.initial_backoff_ms);
            c.endpoint.timeout_s = e.value("timeout_s", c.endpoint.timeout_s);
        }
        c.k_values = j.value("k_values", c.k_values);
        c.seed = j.value("seed", c.seed);
        c.out = j.value("out", c.out);
    } catch (const nlohmann::json::exception& e) {
        fail_user(std::string("malformed config: ") + e.what());
    }
    return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail_user("cannot read " + path);
    }
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        fail_user(path + ": invalid JSON");
    }
    return j;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    return pipeline_config_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// Small file helpers

namespace detail {

inline std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail_user("cannot write " + path.string());
    }
    return out;
}

inline void require_file(const std::string& path, const std::string& stage) {
    if (!fs::exists(path)) {
        fail_user("missing input " + path + "; run the '" + stage + "' stage first or pass the path explicitly");
    }
}

inline ArtifactMeta make_meta(std::string artifact, const nlohmann::json& config, std::uint64_t seed,
                              std::string queries_digest = {}) {
    ArtifactMeta m;
    m.artifact = std::move(artifact);
    m.config_digest = config_digest(config);
    m.seed = seed;
    m.queries_digest = std::move(queries_digest);
    return m;
}

inline std::vector<Sample> load_samples(const std::string& path) {
    auto r = ingest(path, {0.0, 0});
    if (!r.errors.empty()) {
        fail_user(path + ":" + std::to_string(r.errors.front().line) + ": " + r.errors.front().reason +
                  "; regenerate the file with the 'ingest' or 'split' stage");
    }
    return std::move(r.samples);
}

inline std::optional<SrlTuple> srl_from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        return std::nullopt;
    }
    SrlTuple t;
    t.sentence = j.value("sentence", std::string{});
    t.predicate = j.value("predicate", std::string{});
    t.subject_span = j.value("subject", std::string{});
    t.object_span = j.value("object", std::string{});
    if (auto it = j.find("entity"); it != j.end() && it->is_object()) {
        SubjectEntity e;
        e.uri = it->value("uri", std::string{});
        if (auto ty = it->find("type"); ty != it->end() && ty->is_string()) {
            e.type = speaker_type_from_string(ty->get<std::string>());
        }
        t.subject_entity = e;
    }
    return t;
}

}  // namespace detail

/// Digest of the (query_id, query) list a run answers.
inline std::string queries_digest(const std::vector<GoldQuery>& queries) {
    std::string canon;
    for (const auto& q : queries) {
        canon += q.query_id + '\t' + q.query + '\n';
    }
    return sha256_hex(canon).substr(0, 16);
}

// ---------------------------------------------------------------------------
// Run files: JSON lines, one record per (query, rank).

struct RunEntry {
    SourceId source;
    std::optional<double> score;
};

struct RunFile {
    ArtifactMeta meta;
    std::map<std::string, std::vector<RunEntry>> queries;
    std::map<std::string, std::string> query_text;

    [[nodiscard]] Run sources() const {
        Run run;
        for (const auto& [qid, entries] : queries) {
            auto& v = run[qid];
            for (const auto& e : entries) {
                v.push_back(e.source);
            }
        }
        return run;
    }
};

/// `score_field` is "log_score" for retrieval runs and "score" for filter runs.
inline void write_run(std::ostream& out, const ArtifactMeta& meta,
                      const std::vector<std::pair<std::string, RankedList>>& lists, const std::string& score_field,
                      const std::map<std::string, std::string>& query_text = {}) {
    out << meta_line(meta) << '\n';
    for (const auto& [qid, list] : lists) {
        for (std::size_t i = 0; i < list.items.size(); ++i) {
            const auto& item = list.items[i];
            nlohmann::json score = nullptr;
            if (item.score && std::isfinite(*item.score)) {
                score = *item.score;
            }
            nlohmann::json rec = {{"query_id", qid}, {"rank", i + 1}, {"source", item.source.str()}, {score_field, score}};
            if (auto it = query_text.find(qid); it != query_text.end()) {
                rec["query"] = it->second;
            }
            out << rec.dump() << '\n';
        }
    }
}

inline RunFile load_run(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail_user("cannot read run file: " + path);
    }
    RunFile run;
    bool have_meta = false;
    std::map<std::string, std::vector<std::pair<std::size_t, RunEntry>>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            fail_user(path + ":" + std::to_string(line_no) + ": invalid JSON");
        }
        if (auto m = meta_from_record(j)) {
            check_meta(*m, path);
            run.meta = *m;
            have_meta = true;
            continue;
        }
        try {
            RunEntry e{SourceId(j.at("source").get<std::string>()), std::nullopt};
            for (const char* field : {"log_score", "score"}) {
                if (j.contains(field) && j.at(field).is_number()) {
                    e.score = j.at(field).get<double>();
                }
            }
            const auto qid = j.at("query_id").get<std::string>();
            if (j.contains("query")) {
                run.query_text[qid] = j.at("query").get<std::string>();
            }
            rows[qid].emplace_back(j.at("rank").get<std::size_t>(), std::move(e));
        } catch (const nlohmann::json::exception& e) {
            fail_user(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!have_meta) {
        fail_user(path + ": run file has no _meta header; regenerate it with the 'retrieve' or 'rerank' stage");
    }
    for (auto& [qid, entries] : rows) {
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        auto& v = run.queries[qid];
        for (auto& [rank, e] : entries) {
            v.push_back(std::move(e));
        }
    }
    return run;
}

// ---------------------------------------------------------------------------
// Stages

/// Where each stage reads and writes by default, relative to the output dir.
struct Layout {
    fs::path out;

    [[nodiscard]] std::string at(const std::string& name) const { return (out / name).string(); }
    [[nodiscard]] std::string corpus() const { return at("corpus.jsonl"); }
    [[nodiscard]] std::string train() const { return at("train.jsonl"); }
    [[nodiscard]] std::string valid() const { return at("valid.jsonl"); }
    [[nodiscard]] std::string test() const { return at("test.jsonl"); }
    [[nodiscard]] std::string gold() const { return at("gold.jsonl"); }
    [[nodiscard]] std::string popularity() const { return at("popularity.csv"); }
    [[nodiscard]] std::string index() const { return at("index.bin"); }
    [[nodiscard]] std::string run(RetrievalModel m) const { return at("run_" + std::string(to_string(m)) + ".jsonl"); }
    [[nodiscard]] std::string mrf() const { return at("run_mrf.jsonl"); }
    [[nodiscard]] std::string mrf_weighted(std::size_t i) const { return at("run_mrf" + std::to_string(i) + ".jsonl"); }
    [[nodiscard]] std::string trace() const { return at("trace.jsonl"); }
    [[nodiscard]] std::string manifest(const std::string& stage) const { return at(stage + ".manifest.json"); }
};

struct IngestSummary {
    std::size_t accepted = 0;
    std::size_t malformed = 0;
    std::size_t dropped_rare = 0;
    std::size_t srl_accepted = 0;
    std::size_t srl_rejected = 0;
};

/// Validates the raw corpus, applies the minimum-frequency rule and, when an
/// SRL tuple file is configured, records a filter verdict per tuple.
inline IngestSummary stage_ingest(const PipelineConfig& cfg, const std::string& input = {}) {
    const std::string path = input.empty() ? cfg.corpus : input;
    if (path.empty()) {
        fail_user("ingest: no corpus file given (--corpus or config 'corpus')");
    }
    const Layout lay{cfg.out};
    const nlohmann::json stage_cfg = {{"min_count", cfg.min_count}, {"lexicon", cfg.lexicon}};
    auto result = ingest(path);
    IngestSummary summary;
    summary.malformed = result.errors.size();
    const auto before = result.samples.size();
    auto samples = enforce_min_frequency(std::move(result.samples), cfg.min_count);
    summary.accepted = samples.size();
    summary.dropped_rare = before - samples.size();

    std::vector<std::string> inputs = {path};
    std::vector<std::string> outputs = {lay.corpus(), lay.at("ingest_errors.jsonl")};
    {
        auto out = detail::open_out(lay.corpus());
        write_samples(out, samples, detail::make_meta("corpus", stage_cfg, cfg.seed));
    }
    {
        auto out = detail::open_out(lay.at("ingest_errors.jsonl"));
        out << meta_line(detail::make_meta("ingest_errors", stage_cfg, cfg.seed)) << '\n';
        for (const auto& e : result.errors) {
            out << nlohmann::json{{"line", e.line}, {"reason", e.reason}}.dump() << '\n';
        }
    }
    if (!cfg.srl.empty()) {
        const auto lexicon = cfg.lexicon.empty() ? default_lexicon() : load_lexicon(cfg.lexicon);
        if (!cfg.lexicon.empty()) {
            inputs.push_back(cfg.lexicon);
        }
        inputs.push_back(cfg.srl);
        std::ifstream in(cfg.srl, std::ios::binary);
        if (!in) {
            fail_user("cannot read SRL tuples: " + cfg.srl);
        }
        auto out = detail::open_out(lay.at("srl_verdicts.jsonl"));
        out << meta_line(detail::make_meta("srl_verdicts", stage_cfg, cfg.seed)) << '\n';
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            auto j = nlohmann::json::parse(line, nullptr, false);
            auto tuple = j.is_discarded() ? std::nullopt : detail::srl_from_json(j);
            nlohmann::json rec = {{"line", line_no}};
            if (!tuple) {
                rec["accepted"] = false;
                rec["reason"] = "invalid-json";
            } else {
                const auto verdict = filter_candidate(*tuple, lexicon);
                rec["accepted"] = verdict.accepted;
                rec["reason"] = verdict.reason;
                if (verdict.accepted) {
                    rec["quote_type"] = to_string(classify_quote_type(tuple->sentence, tuple->object_span));
                }
            }
            (rec["accepted"].get<bool>() ? summary.srl_accepted : summary.srl_rejected) += 1;
            out << rec.dump() << '\n';
        }
        outputs.push_back(lay.at("srl_verdicts.jsonl"));
    }
    write_manifest(lay.manifest("ingest"), "ingest", stage_cfg, cfg.seed, inputs, outputs);
    return summary;
}

/// Temporal split; the test part becomes gold queries grouped by title, the
/// train part defines source popularity.
inline CorpusSplit stage_split(const PipelineConfig& cfg, const std::string& input = {}) {
    const Layout lay{cfg.out};
    const std::string path = input.empty() ? lay.corpus() : input;
    detail::require_file(path, "ingest");
    const nlohmann::json stage_cfg = {{"n_test", cfg.n_test}, {"n_valid", cfg.n_valid}};
    auto split = temporal_split(detail::load_samples(path), cfg.n_test, cfg.n_valid);
    const auto gold = derive_gold(split.test);
    const auto qdigest = queries_digest(gold);

    auto write_part = [&](const std::string& file, const std::vector<Sample>& part, const char* name) {
        auto out = detail::open_out(file);
        write_samples(out, part, detail::make_meta(name, stage_cfg, cfg.seed));
    };
    write_part(lay.train(), split.train, "train");
    write_part(lay.valid(), split.valid, "valid");
    write_part(lay.test(), split.test, "test");
    {
        auto out = detail::open_out(lay.gold());
        out << meta_line(detail::make_meta("gold", stage_cfg, cfg.seed, qdigest)) << '\n';
        for (const auto& q : gold) {
            out << gold_record(q) << '\n';
        }
    }
    {
        auto out = detail::open_out(lay.popularity());
        out << meta_comment(detail::make_meta("popularity", stage_cfg, cfg.seed)) << '\n'
            << popularity_csv(popularity_of(split.train));
    }
    write_manifest(lay.manifest("split"), "split", stage_cfg, cfg.seed, {path},
                   {lay.train(), lay.valid(), lay.test(), lay.gold(), lay.popularity()});
    return split;
}

inline Index stage_index(const PipelineConfig& cfg, const std::string& input = {}) {
    const Layout lay{cfg.out};
    const std::string path = input.empty() ? lay.train() : input;
    detail::require_file(path, "split");
    const nlohmann::json stage_cfg = to_json(cfg)["tokenizer"];
    const auto train = detail::load_samples(path);
    auto index = Index::build(train, cfg.tokenizer);
    fs::create_directories(lay.out);
    index.save(lay.index(), detail::make_meta("index", stage_cfg, cfg.seed));
    write_manifest(lay.manifest("index"), "index", stage_cfg, cfg.seed, {path}, {lay.index()});
    return index;
}

struct RetrieveOptions {
    std::string index;
    /// Gold/query file; ignored when `query` is set.
    std::string queries;
    std::optional<std::string> query;
    std::string output;
};

/// Ranks sources for every query; returns the written run path.
inline std::string stage_retrieve(const PipelineConfig& cfg, const RetrieveOptions& opts = {}) {
    const Layout lay{cfg.out};
    const std::string index_path = opts.index.empty() ? lay.index() : opts.index;
    detail::require_file(index_path, "index");
    const auto index = Index::load(index_path);

    std::vector<GoldQuery> queries;
    std::vector<std::string> inputs = {index_path};
    if (opts.query) {
        queries.push_back({"q", *opts.query, {}});
    } else {
        const std::string qpath = opts.queries.empty() ? lay.gold() : opts.queries;
        detail::require_file(qpath, "split");
        queries = load_gold(qpath);
        inputs.push_back(qpath);
    }
    const nlohmann::json stage_cfg = {{"model", to_string(cfg.model)},
                                      {"top_n", cfg.top_n},
                                      {"association", cfg.association == Association::uniform ? "uniform" : "boolean"},
                                      {"index", index.digest().substr(0, 16)}};
    const Scorer scorer(index, {cfg.association});
    std::vector<std::pair<std::string, RankedList>> lists;
    std::map<std::string, std::string> text;
    for (const auto& q : queries) {
        lists.emplace_back(q.query_id, rank_sources(scorer, index.query(q.query), cfg.model, cfg.top_n));
        text[q.query_id] = q.query;
    }
    const std::string output = opts.output.empty() ? lay.run(cfg.model) : opts.output;
    {
        auto out = detail::open_out(output);
        write_run(out, detail::make_meta("run", stage_cfg, cfg.seed, queries_digest(queries)), lists, "log_score", text);
    }
    write_manifest(lay.manifest("retrieve"), "retrieve", stage_cfg, cfg.seed, inputs, {output});
    return output;
}

enum class ReplaySource { none, record, strict };

struct RerankOptions {
    std::string run;
    std::string index;
    std::string gold;
    std::string replay;
    ReplaySource replay_mode = ReplaySource::none;
    /// Test hook: replaces the HTTP transport of the endpoint ranker.
    std::shared_ptr<Transport> transport;
    std::size_t max_concurrency = 1;
};

struct RerankSummary {
    std::size_t queries = 0;
    std::size_t groups = 0;
    std::size_t repaired = 0;
    std::size_t fallbacks = 0;
    std::vector<std::string> outputs;
};

namespace detail {

inline std::unique_ptr<Ranker> make_ranker(const PipelineConfig& cfg, const std::vector<GoldQuery>* gold, const Index& index,
                                           const std::string& query_id) {
    auto relevance = [&] {
        RelevanceTable rel;
        if (!gold) {
            fail_user("the " + std::string(to_string(cfg.ranker)) + " ranker needs a gold file (--gold)");
        }
        for (const auto& q : *gold) {
            if (q.query_id == query_id) {
                for (const auto& g : q.gold) {
                    rel[g] = 1.0;
                }
            }
        }
        return rel;
    };
    switch (cfg.ranker) {
        case RankerKind::identity: return std::make_unique<IdentityRanker>();
        case RankerKind::oracle: return std::make_unique<OracleRanker>(relevance());
        case RankerKind::noisy: {
            std::unordered_map<SourceId, double> pop;
            for (std::size_t e = 0; e < index.n_sources(); ++e) {
                pop[index.source(e)] = static_cast<double>(index.popularity(e));
            }
            return std::make_unique<NoisyOracleRanker>(relevance(), cfg.error_rate, mix_seed(cfg.seed, 0x0a), pop,
                                                       cfg.popularity_bias);
        }
        case RankerKind::endpoint: break;
    }
    return nullptr;
}

}  // namespace detail

/// Runs the multi-layer filter over each query's retrieved candidates and
/// writes the most-frequent run, one layer-weighted run per weight set, and
/// the full trace.
inline RerankSummary stage_rerank(const PipelineConfig& cfg, const RerankOptions& opts = {}) {
    const Layout lay{cfg.out};
    const std::string run_path = opts.run.empty() ? lay.run(cfg.model) : opts.run;
    const std::string index_path = opts.index.empty() ? lay.index() : opts.index;
    detail::require_file(run_path, "retrieve");
    detail::require_file(index_path, "index");
    const auto run = load_run(run_path);
    const auto index = Index::load(index_path);
    std::vector<std::string> inputs = {run_path, index_path};

    std::optional<std::vector<GoldQuery>> gold;
    if (cfg.ranker == RankerKind::oracle || cfg.ranker == RankerKind::noisy) {
        const std::string gold_path = opts.gold.empty() ? lay.gold() : opts.gold;
        detail::require_file(gold_path, "split");
        gold = load_gold(gold_path);
        inputs.push_back(gold_path);
    }

    std::shared_ptr<const ChatClient> client;
    if (cfg.ranker == RankerKind::endpoint) {
        const auto settings = cfg.endpoint.settings();
        std::shared_ptr<ReplayLog> log;
        ReplayMode mode = ReplayMode::off;
        if (opts.replay_mode != ReplaySource::none) {
            if (opts.replay.empty()) {
                fail_user("replay needs a replay file (--replay)");
            }
            if (opts.replay_mode == ReplaySource::strict) {
                detail::require_file(opts.replay, "rerank --replay");
                inputs.push_back(opts.replay);
            }
            log = std::make_shared<ReplayLog>(opts.replay);
            mode = opts.replay_mode == ReplaySource::strict ? ReplayMode::strict : ReplayMode::record;
        }
        std::shared_ptr<Transport> transport = opts.transport;
        if (!transport && mode != ReplayMode::strict) {
            transport = std::make_shared<HttpTransport>(settings);
        }
        client = std::make_shared<ChatClient>(settings, transport, log, mode);
    }

    nlohmann::json stage_cfg = {{"filter", to_json(cfg.filter)},
                                {"weight_sets", cfg.weight_sets},
                                {"ranker", to_string(cfg.ranker)},
                                {"run", run.meta.config_digest}};
    if (cfg.ranker == RankerKind::noisy) {
        stage_cfg["error_rate"] = cfg.error_rate;
        stage_cfg["popularity_bias"] = cfg.popularity_bias;
    }
    if (cfg.ranker == RankerKind::endpoint) {
        stage_cfg["endpoint_model"] = cfg.endpoint.settings().model;
        stage_cfg["temperature"] = cfg.endpoint.temperature;
    }

    RerankSummary summary;
    std::vector<std::pair<std::string, RankedList>> most_frequent;
    std::vector<std::vector<std::pair<std::string, RankedList>>> weighted(cfg.weight_sets.size());
    auto trace_out = detail::open_out(lay.trace());
    trace_out << meta_line(detail::make_meta("trace", stage_cfg, cfg.seed, run.meta.queries_digest)) << '\n';
    for (const auto& [qid, entries] : run.queries) {
        std::vector<SourceId> candidates;
        for (const auto& e : entries) {
            candidates.push_back(e.source);
        }
        const auto text_it = run.query_text.find(qid);
        const std::string query_text = text_it == run.query_text.end() ? std::string{} : text_it->second;
        std::unique_ptr<Ranker> owned = detail::make_ranker(cfg, gold ? &*gold : nullptr, index, qid);
        std::unique_ptr<Ranker> endpoint;
        if (cfg.ranker == RankerKind::endpoint) {
            endpoint = std::make_unique<ChatEndpointRanker>(client);
        }
        const Ranker& ranker = owned ? *owned : *endpoint;

        RerankContext ctx;
        ctx.query = query_text;
        ctx.request_prefix = qid;
        ctx.display_name = [&index](const SourceId& id) {
            auto i = index.find_source(id);
            return i ? index.display_name(*i) : id.str();
        };
        auto fc = cfg.filter;
        fc.seed = mix_seed(cfg.seed, stable_hash(qid));
        const auto trace = run_filter(candidates, fc, ranker, ctx, opts.max_concurrency);
        for (const auto& rec : trace_records(trace, qid)) {
            ++summary.groups;
            summary.repaired += rec.at("repaired").get<bool>() ? 1 : 0;
            summary.fallbacks += rec.at("fallback").get<bool>() ? 1 : 0;
            trace_out << rec.dump() << '\n';
        }
        most_frequent.emplace_back(qid, aggregate_most_frequent(trace, fc.output_k));
        for (std::size_t i = 0; i < cfg.weight_sets.size(); ++i) {
            weighted[i].emplace_back(qid, aggregate_layer_weighted(trace, cfg.weight_sets[i], fc.output_k));
        }
        ++summary.queries;
    }
    trace_out.close();

    auto emit = [&](const std::string& path, const std::vector<std::pair<std::string, RankedList>>& lists,
                    nlohmann::json extra) {
        auto c = stage_cfg;
        c["aggregation"] = std::move(extra);
        auto out = detail::open_out(path);
        write_run(out, detail::make_meta("run", c, cfg.seed, run.meta.queries_digest), lists, "score", run.query_text);
        summary.outputs.push_back(path);
    };
    emit(lay.mrf(), most_frequent, "most_frequent");
    for (std::size_t i = 0; i < cfg.weight_sets.size(); ++i) {
        emit(lay.mrf_weighted(i), weighted[i], cfg.weight_sets[i]);
    }
    summary.outputs.push_back(lay.trace());
    if (cfg.ranker == RankerKind::endpoint && summary.groups > 0 &&
        (summary.fallbacks == summary.groups ||
         (opts.replay_mode == ReplaySource::strict && summary.fallbacks > 0))) {
        throw Error(ErrorKind::endpoint, std::to_string(summary.fallbacks) + " of " + std::to_string(summary.groups) +
                                             " rerank calls failed; see " + lay.trace());
    }
    write_manifest(lay.manifest("rerank"), "rerank", stage_cfg, cfg.seed, inputs, summary.outputs);
    return summary;
}

struct EvaluateOptions {
    std::vector<std::pair<std::string, std::string>> runs;
    std::string gold;
    std::string embeddings;
    std::string popularity;
    /// Derives popularity from an index snapshot when no CSV is given.
    std::string index;
    bool force = false;
};

inline MetricsReport stage_evaluate(const PipelineConfig& cfg, const EvaluateOptions& opts) {
    const Layout lay{cfg.out};
    if (opts.runs.empty()) {
        fail_user("evaluate: no runs given (--run NAME=PATH)");
    }
    const std::string gold_path = opts.gold.empty() ? lay.gold() : opts.gold;
    detail::require_file(gold_path, "split");
    std::optional<ArtifactMeta> gold_meta;
    const auto gold = load_gold(gold_path, &gold_meta);
    const auto qdigest = queries_digest(gold);
    std::vector<std::string> inputs = {gold_path};

    std::vector<std::pair<std::string, Run>> systems;
    for (const auto& [name, path] : opts.runs) {
        const auto run = load_run(path);
        if (run.meta.queries_digest != qdigest && !opts.force) {
            fail_user("run '" + name + "' (" + path + ") was produced for queries " +
                      (run.meta.queries_digest.empty() ? std::string("<none>") : run.meta.queries_digest) +
                      " but the gold file has " + qdigest + "; rerun retrieve/rerank or pass --force");
        }
        systems.emplace_back(name, run.sources());
        inputs.push_back(path);
    }

    PopularityTable popularity;
    std::string pop_path = opts.popularity;
    if (pop_path.empty() && opts.index.empty() && fs::exists(lay.popularity())) {
        pop_path = lay.popularity();
    }
    if (!pop_path.empty()) {
        popularity = parse_popularity_csv(read_file(pop_path), pop_path);
        inputs.push_back(pop_path);
    } else if (!opts.index.empty()) {
        const auto index = Index::load(opts.index);
        for (std::size_t e = 0; e < index.n_sources(); ++e) {
            popularity[index.source(e)] = static_cast<double>(index.popularity(e));
        }
        inputs.push_back(opts.index);
    } else {
        fail_user("evaluate needs popularity (--popularity CSV or --index snapshot)");
    }

    std::optional<EmbeddingTable> embeddings;
    if (!opts.embeddings.empty()) {
        embeddings = EmbeddingTable::load(opts.embeddings);
        inputs.push_back(opts.embeddings);
    }
    EvalConfig ec;
    ec.k_values = cfg.k_values;
    const auto report = evaluate(systems, gold, embeddings ? &*embeddings : nullptr, popularity, ec);

    nlohmann::json stage_cfg = {{"k_values", cfg.k_values}, {"force", opts.force}};
    const auto meta = detail::make_meta("report", stage_cfg, cfg.seed, qdigest);
    const std::vector<std::string> outputs = {lay.at("report.txt"), lay.at("report.csv"), lay.at("per_query.csv")};
    detail::open_out(outputs[0]) << render_table(report);
    detail::open_out(outputs[1]) << meta_comment(meta) << '\n' << render_csv(report);
    detail::open_out(outputs[2]) << meta_comment(meta) << '\n' << render_per_query_csv(report);
    write_manifest(lay.manifest("evaluate"), "evaluate", stage_cfg, cfg.seed, inputs, outputs);
    return report;
}

struct SynthOutputs {
    std::string corpus;
    std::string gold;
    std::string embeddings;
    std::string popularity;
    std::size_t n_test = 0;
    std::size_t n_valid = 0;
};

/// Writes a planted-relevance corpus with its gold queries, embeddings and
/// popularity table.
inline SynthOutputs stage_synth(const SyntheticSpec& spec, const fs::path& out_dir) {
    spec.validate();
    const auto data = generate_synthetic(spec);
    const Layout lay{out_dir};
    const auto spec_json = to_json(spec);
    SynthOutputs o{lay.at("synth_corpus.jsonl"), lay.at("synth_gold.jsonl"), lay.at("synth_embeddings.vec"),
                   lay.at("synth_popularity.csv"), data.n_test, data.n_valid};
    {
        auto out = detail::open_out(o.corpus);
        write_samples(out, data.samples, detail::make_meta("corpus", spec_json, spec.seed));
    }
    {
        auto out = detail::open_out(o.gold);
        out << meta_line(detail::make_meta("gold", spec_json, spec.seed, queries_digest(data.gold))) << '\n';
        for (const auto& q : data.gold) {
            out << gold_record(q) << '\n';
        }
    }
    {
        auto out = detail::open_out(o.embeddings);
        out << meta_comment(detail::make_meta("embeddings", spec_json, spec.seed)) << '\n';
        data.embeddings.write(out);
    }
    {
        auto out = detail::open_out(o.popularity);
        out << meta_comment(detail::make_meta("popularity", spec_json, spec.seed)) << '\n'
            << popularity_csv(data.popularity);
    }
    write_manifest(lay.manifest("synth"), "synth", spec_json, spec.seed, {},
                   {o.corpus, o.gold, o.embeddings, o.popularity});
    return o;
}

struct PipelineResult {
    IngestSummary ingest;
    RerankSummary rerank;
    MetricsReport report;
};

/// ingest → split → index → retrieve → rerank → evaluate with default paths.
/// Systems are the retrieval run, MRF and one MRF<i> per weight set.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& embeddings = {},
                                   const RerankOptions& rerank_opts = {}) {
    cfg.validate();
    const Layout lay{cfg.out};
    PipelineResult r;
    r.ingest = stage_ingest(cfg);
    stage_split(cfg);
    stage_index(cfg);
    stage_retrieve(cfg);
    r.rerank = stage_rerank(cfg, rerank_opts);
    EvaluateOptions eo;
    eo.runs.emplace_back(std::string(to_string(cfg.model) == "der" ? "DER" : "CER"), lay.run(cfg.model));
    eo.runs.emplace_back("MRF", lay.mrf());
    for (std::size_t i = 0; i < cfg.weight_sets.size(); ++i) {
        eo.runs.emplace_back("MRF" + std::to_string(i), lay.mrf_weighted(i));
    }
    eo.embeddings = embeddings;
    r.report = stage_evaluate(cfg, eo);
    return r;
}

}  // namespace newsrec
