#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "newsrec/error.hpp"
#include "newsrec/reranker.hpp"
#include "newsrec/retrieval.hpp"
#include "newsrec/rng.hpp"
#include "newsrec/source_id.hpp"

namespace newsrec {

struct LayerSpec {
    std::size_t groups = 1;
    std::size_t keep_per_group = 1;

    bool operator==(const LayerSpec&) const = default;
};

enum class Strategy { most_frequent, layer_weighted };

inline std::string_view to_string(Strategy s) {
    return s == Strategy::most_frequent ? "most_frequent" : "layer_weighted";
}

inline Strategy strategy_from_string(std::string_view s) {
    if (s == "most_frequent") return Strategy::most_frequent;
    if (s == "layer_weighted") return Strategy::layer_weighted;
    fail_user("unknown filter strategy '" + std::string(s) + "' (expected most_frequent or layer_weighted)");
}

/// Sizes of `n` items split into `groups` contiguous chunks, larger first.
inline std::vector<std::size_t> chunk_sizes(std::size_t n, std::size_t groups) {
    std::vector<std::size_t> sizes(groups, n / groups);
    for (std::size_t g = 0; g < n % groups; ++g) {
        ++sizes[g];
    }
    return sizes;
}

struct FilterConfig {
    std::vector<LayerSpec> layers = {{10, 5}, {5, 2}};
    std::size_t repetitions = 20;
    Strategy strategy = Strategy::most_frequent;
    std::vector<double> layer_weights;
    std::size_t output_k = 20;
    std::uint64_t seed = 0;
    /// Largest candidate list handed to a single rerank call.
    std::size_t max_group_size = 10;

    void validate() const {
        if (layers.empty()) {
            fail_user("filter config needs at least one layer");
        }
        if (repetitions < 1) {
            fail_user("filter config: repetitions must be >= 1");
        }
        if (output_k < 1) {
            fail_user("filter config: output_k must be >= 1");
        }
        for (const auto& l : layers) {
            if (l.groups < 1 || l.keep_per_group < 1) {
                fail_user("filter config: groups and keep_per_group must be >= 1");
            }
        }
        if (strategy == Strategy::layer_weighted) {
            check_weights(layer_weights, layers.size());
        }
    }

    /// Checks the layer chain against a concrete input size.
    void validate(std::size_t input_size) const {
        validate();
        std::size_t n = input_size;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& spec = layers[l];
            const std::size_t widest = (n + spec.groups - 1) / spec.groups;
            if (n < spec.groups) {
                fail_user("filter layer " + std::to_string(l + 1) + ": " + std::to_string(n) +
                          " candidates cannot fill " + std::to_string(spec.groups) + " groups");
            }
            if (spec.keep_per_group > widest) {
                fail_user("filter layer " + std::to_string(l + 1) + ": keep_per_group " +
                          std::to_string(spec.keep_per_group) + " exceeds group size " + std::to_string(widest));
            }
            if (widest > max_group_size) {
                fail_user("filter layer " + std::to_string(l + 1) + ": groups of " + std::to_string(widest) +
                          " exceed the ranker group size " + std::to_string(max_group_size));
            }
            std::size_t next = 0;
            for (auto size : chunk_sizes(n, spec.groups)) {
                next += std::min(size, spec.keep_per_group);
            }
            n = next;
        }
    }

    static void check_weights(std::span<const double> weights, std::size_t n_layers) {
        if (weights.size() != n_layers) {
            fail_user("layer weights: expected " + std::to_string(n_layers) + " values, got " +
                      std::to_string(weights.size()));
        }
        double sum = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) {
                fail_user("layer weights must be finite and non-negative");
            }
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            fail_user("layer weights must sum to 1");
        }
    }
};

inline nlohmann::json to_json(const FilterConfig& c) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : c.layers) {
        layers.push_back({{"groups", l.groups}, {"keep_per_group", l.keep_per_group}});
    }
    return {{"layers", layers},
            {"repetitions", c.repetitions},
            {"strategy", to_string(c.strategy)},
            {"layer_weights", c.layer_weights},
            {"output_k", c.output_k},
            {"seed", c.seed},
            {"max_group_size", c.max_group_size}};
}

/// Missing keys keep their defaults.
inline FilterConfig filter_config_from_json(const nlohmann::json& j) {
    FilterConfig c;
    try {
        if (j.contains("layers")) {
            c.layers.clear();
            for (const auto& l : j.at("layers")) {
                c.layers.push_back({l.at("groups").get<std::size_t>(), l.at("keep_per_group").get<std::size_t>()});
            }
        }
        c.repetitions = j.value("repetitions", c.repetitions);
        if (j.contains("strategy")) {
            c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
        }
        c.layer_weights = j.value("layer_weights", c.layer_weights);
        c.output_k = j.value("output_k", c.output_k);
        c.seed = j.value("seed", c.seed);
        c.max_group_size = j.value("max_group_size", c.max_group_size);
    } catch (const nlohmann::json::exception& e) {
        fail_user(std::string("malformed filter config: ") + e.what());
    }
    c.validate();
    return c;
}

struct GroupTrace {
    std::vector<SourceId> input;
    std::vector<SourceId> reranked;
    bool repaired = false;
    /// The ranker failed; `reranked` is the input order.
    bool fallback = false;
    std::vector<std::string> notes;
};

struct LayerTrace {
    std::vector<GroupTrace> groups;
    std::vector<SourceId> retained;
};

struct RepetitionTrace {
    std::vector<LayerTrace> layers;
};

struct RunTrace {
    std::size_t layer_count = 0;
    std::vector<RepetitionTrace> repetitions;
};

/// What a layer needs to build rerank requests.
struct RerankContext {
    std::string query;
    std::function<std::string(const SourceId&)> display_name = [](const SourceId& id) { return id.str(); };
    Exemplar exemplar = default_exemplar();
    std::string request_prefix = "q";
};

namespace detail {

inline bool is_permutation_of(const std::vector<SourceId>& a, const std::vector<SourceId>& b) {
    return a.size() == b.size() && std::is_permutation(a.begin(), a.end(), b.begin());
}

}  // namespace detail

/// Shuffle, split into contiguous groups, rerank each group, keep each
/// group's head, concatenate in group order.
inline LayerTrace run_layer(std::span<const SourceId> candidates, const LayerSpec& spec, const Ranker& ranker,
                            Rng& rng, const RerankContext& ctx = {}, const std::string& tag = "l0") {
    if (candidates.empty()) {
        fail_user("run_layer: no candidates");
    }
    if (spec.groups < 1 || spec.keep_per_group < 1 || spec.groups > candidates.size()) {
        fail_user("run_layer: invalid layer spec for " + std::to_string(candidates.size()) + " candidates");
    }
    std::vector<SourceId> pool(candidates.begin(), candidates.end());
    fisher_yates(std::span<SourceId>(pool), rng);

    LayerTrace trace;
    std::size_t offset = 0;
    const auto sizes = chunk_sizes(pool.size(), spec.groups);
    for (std::size_t g = 0; g < sizes.size(); ++g) {
        GroupTrace group;
        group.input.assign(pool.begin() + static_cast<std::ptrdiff_t>(offset),
                           pool.begin() + static_cast<std::ptrdiff_t>(offset + sizes[g]));
        offset += sizes[g];

        RerankRequest request;
        request.request_id = ctx.request_prefix + "/" + tag + "/g" + std::to_string(g);
        request.query = ctx.query;
        request.exemplar = ctx.exemplar;
        for (const auto& id : group.input) {
            request.candidates.push_back({id, ctx.display_name(id)});
        }
        try {
            auto response = ranker.rerank(request);
            if (!detail::is_permutation_of(response.ranking, group.input)) {
                throw Error(ErrorKind::internal, "ranker returned a non-permutation");
            }
            group.reranked = std::move(response.ranking);
            group.repaired = response.repaired;
            group.notes = std::move(response.repair_notes);
        } catch (const std::exception& e) {
            group.reranked = group.input;
            group.fallback = true;
            group.notes = {std::string("ranker-failure: ") + e.what()};
        }
        const auto keep = std::min(spec.keep_per_group, group.reranked.size());
        trace.retained.insert(trace.retained.end(), group.reranked.begin(),
                              group.reranked.begin() + static_cast<std::ptrdiff_t>(keep));
        trace.groups.push_back(std::move(group));
    }
    return trace;
}

/// Repetition r runs all layers with its own generator seeded from
/// (config.seed, r), so repetitions are independent and can run in parallel.
inline RunTrace run_filter(const std::vector<SourceId>& candidates, const FilterConfig& config, const Ranker& ranker,
                           const RerankContext& ctx = {}, std::size_t max_concurrency = 1) {
    config.validate(candidates.size());
    {
        auto sorted = candidates;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            fail_user("run_filter: duplicate candidates");
        }
    }
    RunTrace trace;
    trace.layer_count = config.layers.size();
    trace.repetitions.resize(config.repetitions);
    auto run_one = [&](std::size_t r) {
        Rng rng(mix_seed(config.seed, r));
        std::vector<SourceId> current = candidates;
        auto& rep = trace.repetitions[r];
        for (std::size_t l = 0; l < config.layers.size(); ++l) {
            auto layer = run_layer(current, config.layers[l], ranker, rng, ctx,
                                   "r" + std::to_string(r) + "/l" + std::to_string(l));
            current = layer.retained;
            rep.layers.push_back(std::move(layer));
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(max_concurrency, 1, config.repetitions);
    if (workers == 1) {
        for (std::size_t r = 0; r < config.repetitions; ++r) {
            run_one(r);
        }
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t r = w; r < config.repetitions; r += workers) {
                    run_one(r);
                }
            });
        }
    }
    return trace;
}

namespace detail {

struct Tally {
    double score = 0.0;
    double position_sum = 0.0;
    std::size_t position_count = 0;

    [[nodiscard]] double mean_position() const {
        return position_count == 0 ? std::numeric_limits<double>::infinity()
                                   : position_sum / static_cast<double>(position_count);
    }
};

/// Mean position of each candidate inside the reranked groups of the last layer.
inline void add_final_positions(const RunTrace& trace, std::map<SourceId, Tally>& tallies) {
    for (const auto& rep : trace.repetitions) {
        if (rep.layers.empty()) {
            continue;
        }
        for (const auto& group : rep.layers.back().groups) {
            for (std::size_t i = 0; i < group.reranked.size(); ++i) {
                auto it = tallies.find(group.reranked[i]);
                if (it != tallies.end()) {
                    it->second.position_sum += static_cast<double>(i);
                    ++it->second.position_count;
                }
            }
        }
    }
}

inline RankedList rank_tallies(std::map<SourceId, Tally>& tallies, std::size_t output_k) {
    std::vector<std::pair<SourceId, Tally>> rows(tallies.begin(), tallies.end());
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.second.score != b.second.score) {
            return a.second.score > b.second.score;
        }
        const double pa = a.second.mean_position();
        const double pb = b.second.mean_position();
        if (pa != pb) {
            return pa < pb;
        }
        return a.first < b.first;
    });
    RankedList out;
    for (std::size_t i = 0; i < rows.size() && i < output_k; ++i) {
        out.items.push_back({rows[i].first, rows[i].second.score});
    }
    return out;
}

}  // namespace detail

/// Ranks candidates by how often they reach the last layer's retained set,
/// as a fraction of repetitions.
inline RankedList aggregate_most_frequent(const RunTrace& trace, std::size_t output_k) {
    if (trace.repetitions.empty()) {
        fail_user("aggregate: empty trace");
    }
    const double reps = static_cast<double>(trace.repetitions.size());
    std::map<SourceId, detail::Tally> tallies;
    for (const auto& rep : trace.repetitions) {
        for (const auto& id : rep.layers.back().retained) {
            tallies[id].score += 1.0 / reps;
        }
    }
    detail::add_final_positions(trace, tallies);
    return detail::rank_tallies(tallies, output_k);
}

/// Ranks candidates by Σ_l w_l · (retained count in layer l / repetitions).
/// Candidates with zero score are not returned.
inline RankedList aggregate_layer_weighted(const RunTrace& trace, std::span<const double> weights,
                                           std::size_t output_k) {
    if (trace.repetitions.empty()) {
        fail_user("aggregate: empty trace");
    }
    FilterConfig::check_weights(weights, trace.layer_count);
    const double reps = static_cast<double>(trace.repetitions.size());
    std::map<SourceId, detail::Tally> tallies;
    for (const auto& rep : trace.repetitions) {
        for (std::size_t l = 0; l < rep.layers.size(); ++l) {
            if (weights[l] == 0.0) {
                continue;
            }
            for (const auto& id : rep.layers[l].retained) {
                tallies[id].score += weights[l] / reps;
            }
        }
    }
    detail::add_final_positions(trace, tallies);
    return detail::rank_tallies(tallies, output_k);
}

inline RankedList aggregate(const RunTrace& trace, const FilterConfig& config) {
    return config.strategy == Strategy::most_frequent
               ? aggregate_most_frequent(trace, config.output_k)
               : aggregate_layer_weighted(trace, config.layer_weights, config.output_k);
}

/// One JSON record per (repetition, layer, group) for audit dumps.
inline std::vector<nlohmann::json> trace_records(const RunTrace& trace, const std::string& query_id) {
    auto ids = [](const std::vector<SourceId>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& s : v) {
            a.push_back(s.str());
        }
        return a;
    };
    std::vector<nlohmann::json> out;
    for (std::size_t r = 0; r < trace.repetitions.size(); ++r) {
        const auto& rep = trace.repetitions[r];
        for (std::size_t l = 0; l < rep.layers.size(); ++l) {
            for (std::size_t g = 0; g < rep.layers[l].groups.size(); ++g) {
                const auto& group = rep.layers[l].groups[g];
                out.push_back({{"query_id", query_id},
                               {"repetition", r},
                               {"layer", l},
                               {"group", g},
                               {"input", ids(group.input)},
                               {"reranked", ids(group.reranked)},
                               {"repaired", group.repaired},
                               {"fallback", group.fallback},
                               {"notes", group.notes}});
            }
        }
    }
    return out;
}

}  // namespace newsrec
