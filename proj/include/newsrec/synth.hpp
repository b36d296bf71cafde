#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "newsrec/corpus.hpp"
#include "newsrec/error.hpp"
#include "newsrec/metrics.hpp"
#include "newsrec/rng.hpp"
#include "newsrec/timestamp.hpp"

namespace newsrec {

/// Parameters of a planted-relevance corpus. Sources are grouped into
/// topics; each query names two words a gold source uses plus common general
/// words. Popular sources speak in general vocabulary, which is what makes
/// plain query-likelihood retrieval favour them.
struct SyntheticSpec {
    std::size_t n_sources = 50;
    std::size_t n_docs = 500;
    std::size_t vocab_size = 400;
    std::size_t n_queries = 50;
    std::size_t n_valid = 10;
    std::size_t n_topics = 5;
    /// Query terms drawn from the gold source's own documents (>= 2).
    std::size_t gold_terms = 2;
    std::size_t general_terms = 3;
    /// Probability that a query gets a second gold source from the same topic.
    double second_gold_rate = 0.05;
    /// Popularity weight of the i-th source is (i+1)^-skew.
    double skew = 1.0;
    std::size_t embedding_dim = 8;
    std::uint64_t seed = 7;

    void validate() const {
        if (n_sources < 1 || n_docs < 1 || vocab_size < 1 || n_queries < 1 || n_topics < 1) {
            fail_user("synthetic spec: counts must be >= 1");
        }
        if (n_docs < 2 * n_sources) {
            fail_user("synthetic spec: n_docs must be at least 2 * n_sources");
        }
        if (gold_terms < 2) {
            fail_user("synthetic spec: gold_terms must be >= 2");
        }
        if (vocab_size < 10 + 2 * n_topics) {
            fail_user("synthetic spec: vocabulary too small for the topic count");
        }
        if (n_topics > n_sources) {
            fail_user("synthetic spec: more topics than sources");
        }
        if (skew < 0.0 || second_gold_rate < 0.0 || second_gold_rate > 1.0) {
            fail_user("synthetic spec: skew must be >= 0 and second_gold_rate in [0, 1]");
        }
    }
};

inline nlohmann::json to_json(const SyntheticSpec& s) {
    return {{"n_sources", s.n_sources}, {"n_docs", s.n_docs},         {"vocab_size", s.vocab_size},
            {"n_queries", s.n_queries}, {"n_valid", s.n_valid},       {"n_topics", s.n_topics},
            {"gold_terms", s.gold_terms}, {"general_terms", s.general_terms},
            {"second_gold_rate", s.second_gold_rate}, {"skew", s.skew},
            {"embedding_dim", s.embedding_dim}, {"seed", s.seed}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.n_sources = j.value("n_sources", s.n_sources);
    s.n_docs = j.value("n_docs", s.n_docs);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.n_queries = j.value("n_queries", s.n_queries);
    s.n_valid = j.value("n_valid", s.n_valid);
    s.n_topics = j.value("n_topics", s.n_topics);
    s.gold_terms = j.value("gold_terms", s.gold_terms);
    s.general_terms = j.value("general_terms", s.general_terms);
    s.second_gold_rate = j.value("second_gold_rate", s.second_gold_rate);
    s.skew = j.value("skew", s.skew);
    s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
    s.seed = j.value("seed", s.seed);
    return s;
}

/// Groups test samples by title; query_id is the smallest sample id of the
/// group, gold is the set of resolved speakers.
inline std::vector<GoldQuery> derive_gold(const std::vector<Sample>& test) {
    std::map<std::string, std::vector<const Sample*>> by_title;
    for (const auto& s : test) {
        by_title[s.title].push_back(&s);
    }
    std::vector<GoldQuery> out;
    for (auto& [title, group] : by_title) {
        std::sort(group.begin(), group.end(), [](auto* a, auto* b) { return a->id < b->id; });
        GoldQuery q;
        q.query_id = group.front()->id;
        q.query = title;
        std::set<SourceId> seen;
        for (const auto* s : group) {
            auto id = s->speaker();
            if (seen.insert(id).second) {
                q.gold.push_back(std::move(id));
            }
        }
        out.push_back(std::move(q));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.query_id < b.query_id; });
    return out;
}

inline PopularityTable popularity_of(const std::vector<Sample>& train) {
    PopularityTable p;
    for (const auto& s : train) {
        p[s.speaker()] += 1.0;
    }
    return p;
}

struct SyntheticData {
    std::vector<Sample> samples;
    std::size_t n_train = 0;
    std::size_t n_valid = 0;
    std::size_t n_test = 0;
    std::vector<GoldQuery> gold;
    EmbeddingTable embeddings;
    PopularityTable popularity;
};

namespace detail {

/// Bijective index -> pronounceable three-syllable word.
inline std::string synth_word(std::uint64_t i) {
    static constexpr char consonants[] = "bdfgklmnprstvz";
    static constexpr char vowels[] = "aeiou";
    constexpr std::uint64_t syllables = 14 * 5;
    constexpr std::uint64_t space = syllables * syllables * syllables;
    std::uint64_t x = (i * 7919 + 104729) % space;
    std::string w;
    for (int s = 0; s < 3; ++s) {
        const auto syl = x % syllables;
        x /= syllables;
        w.push_back(consonants[syl / 5]);
        w.push_back(vowels[syl % 5]);
    }
    return w;
}

inline std::string capitalized(std::string w) {
    if (!w.empty()) {
        w[0] = static_cast<char>(w[0] - 'a' + 'A');
    }
    return w;
}

/// Samples an index from cumulative weights.
inline std::size_t draw(const std::vector<double>& cumulative, Rng& rng) {
    const double u = rng.uniform() * cumulative.back();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += w;
    }
    return out;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(mix_seed(spec.seed, 0x5eed));

    // Vocabulary: a general block with Zipfian use, then per-topic blocks.
    const std::size_t n_general = std::max<std::size_t>(10, spec.vocab_size / 5);
    const std::size_t per_topic = (spec.vocab_size - n_general) / spec.n_topics;
    std::vector<std::string> general;
    std::vector<double> general_cum;
    for (std::size_t i = 0; i < n_general; ++i) {
        general.push_back(detail::synth_word(i));
        general_cum.push_back((general_cum.empty() ? 0.0 : general_cum.back()) + 1.0 / static_cast<double>(i + 1));
    }
    std::vector<std::vector<std::string>> topic_words(spec.n_topics);
    for (std::size_t t = 0; t < spec.n_topics; ++t) {
        for (std::size_t k = 0; k < per_topic; ++k) {
            topic_words[t].push_back(detail::synth_word(n_general + t * per_topic + k));
        }
    }

    struct Source {
        std::string link;
        std::string mention;
        SpeakerType type;
        std::size_t topic;
        double generality;
        std::vector<std::string> words;
        std::size_t docs = 2;
    };
    std::vector<double> weight(spec.n_sources);
    for (std::size_t i = 0; i < spec.n_sources; ++i) {
        weight[i] = std::pow(static_cast<double>(i + 1), -spec.skew);
    }
    std::vector<Source> sources(spec.n_sources);
    for (std::size_t i = 0; i < spec.n_sources; ++i) {
        auto& s = sources[i];
        char link[32];
        std::snprintf(link, sizeof link, "synth:src%05zu", i);
        s.link = link;
        s.mention = detail::capitalized(detail::synth_word(100000 + i)) + " " +
                    detail::capitalized(detail::synth_word(200000 + i));
        s.type = i % 2 == 0 ? SpeakerType::person : SpeakerType::organization;
        s.topic = i % spec.n_topics;
        s.generality = 0.2 + 0.6 * std::sqrt(weight[i] / weight[0]);
        auto pool = topic_words[s.topic];
        fisher_yates(std::span<std::string>(pool), rng);
        pool.resize(std::max<std::size_t>(2, (pool.size() + 1) / 2));
        s.words = std::move(pool);
    }
    // Document counts: two each, the rest by largest remainder on weight.
    {
        const double total_w = [&] {
            double t = 0.0;
            for (double w : weight) t += w;
            return t;
        }();
        const std::size_t spare = spec.n_docs - 2 * spec.n_sources;
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t assigned = 0;
        for (std::size_t i = 0; i < spec.n_sources; ++i) {
            const double share = static_cast<double>(spare) * weight[i] / total_w;
            const auto whole = static_cast<std::size_t>(std::floor(share));
            sources[i].docs += whole;
            assigned += whole;
            remainders.emplace_back(share - static_cast<double>(whole), i);
        }
        std::sort(remainders.begin(), remainders.end(),
                  [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
        for (std::size_t k = 0; assigned < spare; ++k, ++assigned) {
            ++sources[remainders[k % remainders.size()].second].docs;
        }
    }

    auto sentence = [&](const Source& s, std::size_t len) {
        std::vector<std::string> words;
        for (std::size_t k = 0; k < len; ++k) {
            if (rng.uniform() < s.generality) {
                words.push_back(general[detail::draw(general_cum, rng)]);
            } else {
                words.push_back(s.words[rng.below(s.words.size())]);
            }
        }
        return words;
    };

    SyntheticData data;
    using namespace std::chrono;
    const Timestamp train_start = sys_days{year{2020} / 1 / 1};
    const Timestamp valid_start = sys_days{year{2020} / 6 / 1};
    const Timestamp test_start = sys_days{year{2020} / 7 / 1};
    std::size_t next_id = 0;
    auto make_id = [&] {
        char buf[32];
        std::snprintf(buf, sizeof buf, "s%07zu", next_id++);
        return std::string(buf);
    };
    auto make_sample = [&](const Source& s, const std::vector<std::string>& quote_words, const std::string& title,
                           Timestamp when) {
        Sample sample;
        sample.id = make_id();
        const auto quote = detail::join_words(quote_words);
        sample.context = detail::capitalized(detail::join_words(sentence(s, 8))) + ". " + s.mention + " said " +
                         quote + ". " + detail::capitalized(detail::join_words(sentence(s, 8))) + ".";
        sample.quote = quote;
        sample.speaker_mention = s.mention;
        sample.speaker_link = s.link;
        sample.speaker_type = s.type;
        sample.published_at = format_rfc3339(when);
        sample.title = title;
        sample.domain = "synthetic.example";
        sample.categories = {"topic-" + std::to_string(s.topic)};
        sample.keywords = {s.words.front()};
        return sample;
    };

    // Training documents, interleaved across sources in time.
    std::vector<std::size_t> schedule;
    for (std::size_t i = 0; i < spec.n_sources; ++i) {
        schedule.insert(schedule.end(), sources[i].docs, i);
    }
    fisher_yates(std::span<std::size_t>(schedule), rng);
    std::map<std::size_t, std::set<std::string>> used_words;
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        const auto& s = sources[schedule[k]];
        const auto quote = sentence(s, 8);
        auto sample = make_sample(s, quote, "Report " + std::to_string(k), train_start + minutes{37 * k});
        for (const auto& t : tokenize(sample.context)) {
            used_words[schedule[k]].insert(t);
        }
        data.samples.push_back(std::move(sample));
    }
    data.n_train = data.samples.size();

    // Held-out queries: words the gold source actually used, plus common
    // general words. Every query term occurs in the training documents.
    std::set<std::string> titles;
    auto make_query = [&](std::size_t gold) {
        const auto& g = sources[gold];
        std::vector<std::string> own;
        for (const auto& w : g.words) {
            if (used_words[gold].contains(w)) {
                own.push_back(w);
            }
        }
        if (own.size() < spec.gold_terms) {
            return std::string{};
        }
        fisher_yates(std::span<std::string>(own), rng);
        std::vector<std::string> terms(own.begin(), own.begin() + static_cast<std::ptrdiff_t>(spec.gold_terms));
        std::set<std::string> picked(terms.begin(), terms.end());
        for (std::size_t tries = 0; picked.size() < spec.gold_terms + spec.general_terms && tries < 1000; ++tries) {
            const auto& w = general[detail::draw(general_cum, rng)];
            if (picked.insert(w).second) {
                terms.push_back(w);
            }
        }
        fisher_yates(std::span<std::string>(terms), rng);
        return detail::capitalized(detail::join_words(terms));
    };
    const std::size_t total_queries = spec.n_valid + spec.n_queries;
    for (std::size_t q = 0; q < total_queries; ++q) {
        std::string title;
        std::size_t gold = 0;
        for (std::size_t tries = 0; tries < 1000 && (title.empty() || titles.contains(title)); ++tries) {
            gold = rng.below(spec.n_sources);
            title = make_query(gold);
        }
        if (title.empty() || titles.contains(title)) {
            fail_user("synthetic corpus: cannot plant enough distinct queries; enlarge the vocabulary");
        }
        titles.insert(title);
        const bool is_valid = q < spec.n_valid;
        const Timestamp base = is_valid ? valid_start + hours{q} : test_start + hours{q - spec.n_valid};
        std::vector<std::size_t> golds = {gold};
        if (rng.uniform() < spec.second_gold_rate) {
            const auto other = (gold + spec.n_topics * (1 + rng.below(std::max<std::size_t>(
                                                                1, spec.n_sources / spec.n_topics - 1)))) %
                               spec.n_sources;
            if (other != gold) {
                golds.push_back(other);
            }
        }
        for (std::size_t k = 0; k < golds.size(); ++k) {
            const auto& s = sources[golds[k]];
            auto quote = sentence(s, 6);
            data.samples.push_back(make_sample(s, quote, title, base + minutes{k}));
            (is_valid ? data.n_valid : data.n_test) += 1;
        }
    }

    const std::vector<Sample> train(data.samples.begin(), data.samples.begin() + static_cast<std::ptrdiff_t>(data.n_train));
    const std::vector<Sample> test(data.samples.end() - static_cast<std::ptrdiff_t>(data.n_test), data.samples.end());
    data.gold = derive_gold(test);
    data.popularity = popularity_of(train);

    // Embeddings: topic centroid plus per-source noise.
    std::vector<std::vector<double>> centroids(spec.n_topics, std::vector<double>(spec.embedding_dim));
    for (auto& c : centroids) {
        for (auto& x : c) {
            x = 3.0 * rng.normal();
        }
    }
    data.embeddings = EmbeddingTable(spec.embedding_dim);
    for (const auto& s : sources) {
        auto v = centroids[s.topic];
        for (auto& x : v) {
            x += rng.normal();
        }
        for (auto& x : v) {
            x = std::round(x * 1e6) / 1e6;
        }
        data.embeddings.add(SourceId(s.link), std::move(v));
    }
    return data;
}

}  // namespace newsrec
