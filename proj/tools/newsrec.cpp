// newsrec: command-line driver for the source recommendation pipeline.
//
// Exit codes: 0 ok, 1 user error, 2 internal error, 3 endpoint failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "newsrec/pipeline.hpp"

namespace {

using namespace newsrec;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

PipelineConfig base_config(const Globals& g) {
    PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_pipeline_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out.empty()) cfg.out = g.out;
    return cfg;
}

std::pair<std::string, std::string> split_run_arg(const std::string& arg) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
        fail_user("--run expects NAME=PATH, got '" + arg + "'");
    }
    return {arg.substr(0, eq), arg.substr(eq + 1)};
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::user: return 1;
        case ErrorKind::internal: return 2;
        case ErrorKind::endpoint: return 3;
    }
    return 2;
}

struct RerankFlags {
    std::string run, index, gold, replay, filter_config, ranker;
    std::optional<double> error_rate, popularity_bias;
    std::size_t threads = 1;
};

void add_rerank_flags(CLI::App* cmd, RerankFlags& f, bool replay_only) {
    cmd->add_option("--run", f.run, "retrieval run to filter (default <out>/run_<model>.jsonl)");
    cmd->add_option("--index", f.index, "index snapshot (default <out>/index.bin)");
    cmd->add_option("--gold", f.gold, "gold file for the oracle and noisy rankers");
    cmd->add_option("--filter-config", f.filter_config, "JSON file with layers, repetitions, strategy, ...");
    cmd->add_option("--threads", f.threads, "concurrent repetitions")->check(CLI::PositiveNumber);
    if (replay_only) {
        cmd->add_option("--replay", f.replay, "replay log to answer every rerank call from")->required();
        return;
    }
    cmd->add_option("--ranker", f.ranker, "endpoint, identity, oracle or noisy")
        ->check(CLI::IsMember({"endpoint", "identity", "oracle", "noisy"}));
    cmd->add_option("--replay", f.replay, "replay log; endpoint calls are answered from it and new ones appended");
    cmd->add_option("--error-rate", f.error_rate, "noisy ranker swap probability");
    cmd->add_option("--popularity-bias", f.popularity_bias, "noisy ranker bias toward popular candidates");
}

RerankSummary do_rerank(PipelineConfig cfg, const RerankFlags& f, bool strict) {
    if (!f.filter_config.empty()) cfg.filter = filter_config_from_json(read_json_file(f.filter_config));
    if (!f.ranker.empty()) cfg.ranker = ranker_kind_from_string(f.ranker);
    if (strict) cfg.ranker = RankerKind::endpoint;
    if (f.error_rate) cfg.error_rate = *f.error_rate;
    if (f.popularity_bias) cfg.popularity_bias = *f.popularity_bias;
    cfg.validate();
    RerankOptions o;
    o.run = f.run;
    o.index = f.index;
    o.gold = f.gold;
    o.replay = f.replay;
    o.max_concurrency = f.threads;
    if (!f.replay.empty()) o.replay_mode = strict ? ReplaySource::strict : ReplaySource::record;
    auto s = stage_rerank(cfg, o);
    std::fprintf(stderr, "rerank: %zu queries, %zu groups, %zu repaired, %zu fallbacks\n", s.queries, s.groups,
                 s.repaired, s.fallbacks);
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"News source recommendation: retrieval, multi-layer reranking filter and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "pipeline config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "seed recorded in every artifact");
    app.add_option("--out", g.out, "output directory");

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "validate a JSON-lines corpus and apply min-count");
    std::string corpus, lexicon, srl;
    std::optional<std::size_t> min_count;
    ingest_cmd->add_option("--corpus", corpus, "raw corpus (JSON lines)");
    ingest_cmd->add_option("--lexicon", lexicon, "trigger-word lexicon, one word per line");
    ingest_cmd->add_option("--srl", srl, "SRL tuples (JSON lines) to run through the candidate filter");
    ingest_cmd->add_option("--min-count", min_count, "drop sources with fewer samples");

    // split
    auto* split_cmd = app.add_subcommand("split", "temporal train/valid/test split and gold queries");
    std::string split_input;
    std::optional<std::size_t> n_test, n_valid;
    split_cmd->add_option("--input", split_input, "corpus (default <out>/corpus.jsonl)");
    split_cmd->add_option("--n-test", n_test, "newest samples kept for test");
    split_cmd->add_option("--n-valid", n_valid, "samples before test kept for validation");

    // index
    auto* index_cmd = app.add_subcommand("index", "build the index snapshot from training samples");
    std::string index_input;
    bool no_stop = false, stem = false;
    index_cmd->add_option("--input", index_input, "training samples (default <out>/train.jsonl)");
    index_cmd->add_flag("--remove-stopwords", no_stop, "drop English stopwords");
    index_cmd->add_flag("--stem", stem, "apply the S-stemmer");

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "rank sources for queries");
    std::string model, query, queries, retrieve_index, retrieve_output;
    std::optional<std::size_t> top;
    retrieve_cmd->add_option("--model", model, "cer or der")->check(CLI::IsMember({"cer", "der"}));
    retrieve_cmd->add_option("--top", top, "sources per query")->check(CLI::PositiveNumber);
    auto* query_opt = retrieve_cmd->add_option("--query", query, "single query text");
    retrieve_cmd->add_option("--queries", queries, "gold/query file (default <out>/gold.jsonl)")->excludes(query_opt);
    retrieve_cmd->add_option("--index", retrieve_index, "index snapshot (default <out>/index.bin)");
    retrieve_cmd->add_option("--output", retrieve_output, "run file (default <out>/run_<model>.jsonl)");

    // rerank / replay
    auto* rerank_cmd = app.add_subcommand("rerank", "multi-layer ranking-based filter over a retrieval run");
    RerankFlags rerank_flags;
    add_rerank_flags(rerank_cmd, rerank_flags, false);
    auto* replay_cmd = app.add_subcommand("replay", "rerun the filter answering every endpoint call from a replay log");
    RerankFlags replay_flags;
    add_rerank_flags(replay_cmd, replay_flags, true);

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score runs against gold sources");
    std::vector<std::string> runs;
    std::string gold, embeddings, popularity, eval_index;
    std::vector<std::size_t> k_values;
    bool force = false;
    eval_cmd->add_option("--run", runs, "NAME=PATH, repeatable")->required();
    eval_cmd->add_option("--gold", gold, "gold file (default <out>/gold.jsonl)");
    eval_cmd->add_option("--embeddings", embeddings, "word2vec-format source embeddings for diversity");
    eval_cmd->add_option("--popularity", popularity, "source,count CSV (default <out>/popularity.csv)");
    eval_cmd->add_option("--index", eval_index, "derive popularity from an index snapshot");
    eval_cmd->add_option("--k", k_values, "cutoffs, repeatable");
    eval_cmd->add_flag("--force", force, "accept runs produced for a different query set");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a planted-relevance synthetic corpus");
    std::string spec_path;
    SyntheticSpec spec;
    synth_cmd->add_option("--spec", spec_path, "JSON spec; flags override its fields")->check(CLI::ExistingFile);
    std::optional<std::size_t> n_sources, n_docs, vocab, n_queries, s_valid, topics;
    std::optional<double> skew;
    synth_cmd->add_option("--sources", n_sources);
    synth_cmd->add_option("--docs", n_docs);
    synth_cmd->add_option("--vocab", vocab);
    synth_cmd->add_option("--queries", n_queries);
    synth_cmd->add_option("--valid", s_valid);
    synth_cmd->add_option("--topics", topics);
    synth_cmd->add_option("--skew", skew);

    // pipeline
    auto* pipe_cmd = app.add_subcommand("pipeline", "run ingest through evaluate with default paths");
    std::string pipe_corpus, pipe_embeddings, pipe_ranker, pipe_replay;
    pipe_cmd->add_option("--corpus", pipe_corpus, "raw corpus (overrides config)");
    pipe_cmd->add_option("--embeddings", pipe_embeddings, "embeddings for the diversity column");
    pipe_cmd->add_option("--ranker", pipe_ranker)->check(CLI::IsMember({"endpoint", "identity", "oracle", "noisy"}));
    pipe_cmd->add_option("--replay", pipe_replay, "replay log for the endpoint ranker");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        auto cfg = base_config(g);
        if (*ingest_cmd) {
            if (!corpus.empty()) cfg.corpus = corpus;
            if (!lexicon.empty()) cfg.lexicon = lexicon;
            if (!srl.empty()) cfg.srl = srl;
            if (min_count) cfg.min_count = *min_count;
            cfg.validate();
            const auto s = stage_ingest(cfg);
            std::fprintf(stderr, "ingest: %zu samples kept, %zu malformed, %zu dropped by min-count\n", s.accepted,
                         s.malformed, s.dropped_rare);
            if (!cfg.srl.empty()) {
                std::fprintf(stderr, "ingest: %zu SRL tuples accepted, %zu rejected\n", s.srl_accepted, s.srl_rejected);
            }
        } else if (*split_cmd) {
            if (n_test) cfg.n_test = *n_test;
            if (n_valid) cfg.n_valid = *n_valid;
            const auto s = stage_split(cfg, split_input);
            std::fprintf(stderr, "split: %zu train, %zu valid, %zu test\n", s.train.size(), s.valid.size(),
                         s.test.size());
        } else if (*index_cmd) {
            if (no_stop) cfg.tokenizer.remove_stopwords = true;
            if (stem) cfg.tokenizer.stem = true;
            const auto index = stage_index(cfg, index_input);
            std::fprintf(stderr, "index: %zu documents, %zu sources, %zu terms\n", index.docs().size(),
                         index.n_sources(), index.vocabulary().size());
        } else if (*retrieve_cmd) {
            if (!model.empty()) cfg.model = retrieval_model_from_string(model);
            if (top) cfg.top_n = *top;
            RetrieveOptions o;
            o.index = retrieve_index;
            o.queries = queries;
            if (*query_opt) o.query = query;
            o.output = retrieve_output;
            const auto path = stage_retrieve(cfg, o);
            if (o.query) {
                std::cout << read_file(path);
            } else {
                std::fprintf(stderr, "retrieve: wrote %s\n", path.c_str());
            }
        } else if (*rerank_cmd) {
            do_rerank(cfg, rerank_flags, false);
        } else if (*replay_cmd) {
            do_rerank(cfg, replay_flags, true);
        } else if (*eval_cmd) {
            if (!k_values.empty()) cfg.k_values = k_values;
            EvaluateOptions o;
            for (const auto& r : runs) o.runs.push_back(split_run_arg(r));
            o.gold = gold;
            o.embeddings = embeddings;
            o.popularity = popularity;
            o.index = eval_index;
            o.force = force;
            std::cout << render_table(stage_evaluate(cfg, o));
        } else if (*synth_cmd) {
            if (!spec_path.empty()) spec = synthetic_spec_from_json(read_json_file(spec_path));
            if (n_sources) spec.n_sources = *n_sources;
            if (n_docs) spec.n_docs = *n_docs;
            if (vocab) spec.vocab_size = *vocab;
            if (n_queries) spec.n_queries = *n_queries;
            if (s_valid) spec.n_valid = *s_valid;
            if (topics) spec.n_topics = *topics;
            if (skew) spec.skew = *skew;
            if (g.seed) spec.seed = *g.seed;
            const auto o = stage_synth(spec, cfg.out);
            std::fprintf(stderr, "synth: wrote %s (n_test=%zu, n_valid=%zu)\n", o.corpus.c_str(), o.n_test,
                         o.n_valid);
        } else if (*pipe_cmd) {
            if (!pipe_corpus.empty()) cfg.corpus = pipe_corpus;
            if (!pipe_ranker.empty()) cfg.ranker = ranker_kind_from_string(pipe_ranker);
            RerankOptions ro;
            if (!pipe_replay.empty()) {
                ro.replay = pipe_replay;
                ro.replay_mode = ReplaySource::record;
            }
            std::cout << render_table(run_pipeline(cfg, pipe_embeddings, ro).report);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
    return 0;
}
