#pragma once

// Brute-force exact evaluation of the candidate and document language-model
// scores, straight from raw token lists. Shares nothing with the index or
// retrieval code: counts are recomputed per call by scanning the documents.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace oracle {

using Rational = boost::multiprecision::cpp_rational;

struct Corpus {
    std::vector<std::vector<std::string>> docs;
    std::vector<std::string> speaker;
};

inline Rational count_in(const std::vector<std::string>& doc, const std::string& t) {
    return Rational(static_cast<long>(std::count(doc.begin(), doc.end(), t)));
}

inline Rational pow(Rational b, long n) {
    Rational r(1);
    while (n-- > 0) r *= b;
    return r;
}

struct Scores {
    Rational cer;
    Rational der;
};

/// `uniform` selects p(d|e) = 1/|assoc(e)|; otherwise p(d|e) = 1.
inline Scores evaluate(const Corpus& c, const std::vector<std::string>& query, const std::string& source,
                       bool uniform = true) {
    long total = 0;
    for (const auto& d : c.docs) total += static_cast<long>(d.size());
    const Rational avg = Rational(total) / Rational(static_cast<long>(c.docs.size()));

    std::set<std::string> sources(c.speaker.begin(), c.speaker.end());
    std::vector<std::size_t> mine;
    for (std::size_t i = 0; i < c.docs.size(); ++i) {
        if (c.speaker[i] == source) mine.push_back(i);
    }
    long assoc_total = 0;
    for (const auto& e : sources) {
        assoc_total += static_cast<long>(std::count(c.speaker.begin(), c.speaker.end(), e));
    }
    auto p_bg = [&](const std::string& t) {
        Rational n(0);
        for (const auto& d : c.docs) n += count_in(d, t);
        return n / Rational(total);
    };
    auto p_doc = [&](const std::string& t, std::size_t i) {
        return count_in(c.docs[i], t) / Rational(static_cast<long>(c.docs[i].size()));
    };
    const Rational p_de = uniform ? Rational(1) / Rational(static_cast<long>(mine.size())) : Rational(1);

    std::map<std::string, long> n_tk;
    for (const auto& t : query) ++n_tk[t];

    long n_e = 0;
    for (auto i : mine) n_e += static_cast<long>(c.docs[i].size());
    const Rational beta_c = avg * Rational(assoc_total) / Rational(static_cast<long>(sources.size()));
    const Rational lambda_c = beta_c / (beta_c + Rational(n_e));
    Scores s{Rational(1), Rational(0)};
    for (const auto& [t, n] : n_tk) {
        Rational model(0);
        for (auto i : mine) model += p_doc(t, i) * p_de;
        s.cer *= pow((1 - lambda_c) * model + lambda_c * p_bg(t), n);
    }
    const Rational beta_d = avg;
    for (auto i : mine) {
        const Rational lambda = beta_d / (beta_d + Rational(static_cast<long>(c.docs[i].size())));
        Rational prod(1);
        for (const auto& [t, n] : n_tk) {
            prod *= pow((1 - lambda) * p_doc(t, i) + lambda * p_bg(t), n);
        }
        s.der += prod * p_de;
    }
    return s;
}

/// Natural log of a non-negative rational; -inf for zero.
inline double log_of(const Rational& r) {
    if (r == 0) return -std::numeric_limits<double>::infinity();
    using boost::multiprecision::cpp_int;
    const cpp_int num = boost::multiprecision::numerator(r);
    const cpp_int den = boost::multiprecision::denominator(r);
    auto log_int = [](const cpp_int& v) {
        const auto bits = boost::multiprecision::msb(v);
        if (bits < 1000) return std::log(static_cast<double>(v));
        const auto shift = bits - 900;
        return std::log(static_cast<double>(cpp_int(v >> shift))) + static_cast<double>(shift) * std::log(2.0);
    };
    return log_int(num) - log_int(den);
}

}  // namespace oracle
