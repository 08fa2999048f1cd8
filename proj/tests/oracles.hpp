#pragma once

// Test-only reference implementations, kept independent of the library code
// paths they check: finite-difference gradients, brute-force mining
// enumerators, scalar metric recomputations, and a random-log generator.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "pssl/log.hpp"
#include "pssl/metrics.hpp"
#include "pssl/tensor.hpp"

namespace oracles {

// Central finite differences against the autodiff gradients of `leaves`.
// Returns the worst mixed relative error (denominator floors at 1e-4, which
// turns into an absolute tolerance for near-zero gradients).
inline double gradcheck(const std::function<pssl::Tensor()>& loss_builder,
                        const std::vector<pssl::Tensor>& leaves, double h = 1e-5) {
    for (const auto& leaf : leaves) const_cast<pssl::Tensor&>(leaf).zero_grad();
    pssl::Tensor loss = loss_builder();
    pssl::backward(loss);

    double worst = 0.0;
    for (const auto& leaf : leaves) {
        auto* node = leaf.raw();
        for (std::size_t i = 0; i < node->value.size(); ++i) {
            const double analytic = node->grad[i];
            const double saved = node->value[i];
            node->value[i] = saved + h;
            const double up = loss_builder().item();
            node->value[i] = saved - h;
            const double down = loss_builder().item();
            node->value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
            worst = std::max(worst, std::fabs(analytic - numeric) / denom);
        }
    }
    return worst;
}

// Plain triple-loop matmul.
inline std::vector<double> naive_matmul(const std::vector<double>& a,
                                        const std::vector<double>& b, int m, int k, int n) {
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int kk = 0; kk < k; ++kk)
                c[i * n + j] += a[i * k + kk] * b[kk * n + j];
    return c;
}

// Scalar BM25 with the same non-negative idf formulation, recomputed from
// raw corpus statistics.
inline double scalar_bm25(const std::vector<std::string>& query,
                          const std::vector<std::string>& doc_words,
                          const std::map<std::string, pssl::Document>& corpus, double k1 = 1.2,
                          double b = 0.75) {
    const double n_docs = static_cast<double>(corpus.size());
    double total_len = 0;
    for (const auto& [id, d] : corpus) total_len += static_cast<double>(d.words.size());
    const double avgdl = total_len / n_docs;
    std::set<std::string> terms(query.begin(), query.end());
    double score = 0.0;
    for (const auto& t : terms) {
        double tf = 0, df = 0;
        for (const auto& w : doc_words)
            if (w == t) ++tf;
        for (const auto& [id, d] : corpus) {
            if (std::find(d.words.begin(), d.words.end(), t) != d.words.end()) ++df;
        }
        if (tf == 0 || df == 0) continue;
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        score += idf * tf * (k1 + 1.0) /
                 (tf + k1 * (1.0 - b + b * static_cast<double>(doc_words.size()) / avgdl));
    }
    return score;
}

// Brute-force pair enumerations (independent of the miner's data walks).
using DpKey = std::tuple<std::string, std::string, std::string, std::string>;
using QpKey = std::tuple<std::string, std::string, std::string, std::string>;
using UpKey = std::tuple<std::string, std::string, std::string, std::string>;

inline std::multiset<DpKey> brute_force_dp(const pssl::Log& log) {
    std::multiset<DpKey> out;
    for (const auto& [user, evs] : log.events) {
        for (const auto& e : evs) {
            std::vector<std::string> clicked;
            for (const auto& c : e.candidates)
                if (c.clicked) clicked.push_back(c.doc_id);
            for (std::size_t i = 0; i < clicked.size(); ++i)
                for (std::size_t j = 0; j < clicked.size(); ++j)
                    if (i < j) {
                        std::string a = clicked[i], b = clicked[j];
                        if (a > b) std::swap(a, b);
                        out.insert({user, e.query, a, b});
                    }
        }
    }
    return out;
}

inline std::set<QpKey> brute_force_qp(const pssl::Log& log) {
    std::set<QpKey> out;
    for (const auto& [user, evs] : log.events) {
        for (const auto& e1 : evs) {
            for (const auto& e2 : evs) {
                if (e1.query >= e2.query) continue;
                for (const auto& c1 : e1.candidates) {
                    if (!c1.clicked) continue;
                    for (const auto& c2 : e2.candidates) {
                        if (!c2.clicked || c1.doc_id != c2.doc_id) continue;
                        out.insert({user, e1.query, e2.query, c1.doc_id});
                    }
                }
            }
        }
    }
    return out;
}

inline double brute_force_entropy(const pssl::Log& log, const std::string& query) {
    std::map<std::string, double> counts;
    double total = 0;
    for (const auto& [user, evs] : log.events)
        for (const auto& e : evs) {
            if (e.query != query) continue;
            for (const auto& c : e.candidates)
                if (c.clicked) {
                    counts[c.doc_id] += 1;
                    total += 1;
                }
        }
    double h = 0;
    for (const auto& [d, n] : counts) h -= (n / total) * std::log2(n / total);
    return h;
}

inline std::set<UpKey> brute_force_up(const pssl::Log& log, double threshold) {
    std::set<UpKey> out;
    std::set<std::tuple<std::string, std::string, std::string>> user_q_d;
    for (const auto& [user, evs] : log.events)
        for (const auto& e : evs)
            for (const auto& c : e.candidates)
                if (c.clicked) user_q_d.insert({user, e.query, c.doc_id});
    for (const auto& [u1, q1, d1] : user_q_d) {
        for (const auto& [u2, q2, d2] : user_q_d) {
            if (u1 >= u2 || q1 != q2 || d1 != d2) continue;
            if (brute_force_entropy(log, q1) > threshold) out.insert({u1, u2, q1, d1});
        }
    }
    return out;
}

// Scalar metric re-implementations working on (new_rank, relevant) pairs.
inline double scalar_ap(std::vector<std::pair<int, bool>> ranked) {
    std::sort(ranked.begin(), ranked.end());
    double ap = 0;
    int rel = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (ranked[i].second) {
            ++rel;
            ap += static_cast<double>(rel) / static_cast<double>(i + 1);
        }
    }
    return rel == 0 ? 0.0 : ap / rel;
}

inline double scalar_rr(std::vector<std::pair<int, bool>> ranked) {
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t i = 0; i < ranked.size(); ++i)
        if (ranked[i].second) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

inline double scalar_p1(std::vector<std::pair<int, bool>> ranked) {
    std::sort(ranked.begin(), ranked.end());
    return !ranked.empty() && ranked[0].second ? 1.0 : 0.0;
}

// Pooled inverse-pair counter over (orig_rank, new_rank, relevant) triples.
inline double scalar_p_improve(
    const std::vector<std::vector<std::tuple<int, int, bool>>>& lists) {
    long corrected = 0, broken = 0, total = 0;
    for (const auto& list : lists) {
        for (const auto& [ro, rn, rrel] : list) {
            if (!rrel) continue;
            for (const auto& [no, nn, nrel] : list) {
                if (nrel) continue;
                ++total;
                if (ro > no && rn < nn) ++corrected;
                if (ro < no && rn > nn) ++broken;
            }
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(corrected - broken) / total;
}

// Small random log for the mining equivalence tests: a handful of users,
// queries drawn from a tiny pool so entropies and shared clicks happen.
inline pssl::Log random_log(std::uint64_t seed, std::size_t n_events_max = 500) {
    pssl::Rng rng(seed);
    pssl::Log log;
    const std::size_t n_docs = 12 + rng.next_below(20);
    std::vector<std::string> doc_ids;
    for (std::size_t i = 0; i < n_docs; ++i) {
        pssl::Document d;
        d.doc_id = "d" + std::to_string(i);
        const std::size_t len = 2 + rng.next_below(5);
        for (std::size_t w = 0; w < len; ++w) {
            d.words.push_back("w" + std::to_string(rng.next_below(25)));
        }
        doc_ids.push_back(d.doc_id);
        log.corpus.emplace(d.doc_id, std::move(d));
    }
    const std::size_t n_users = 3 + rng.next_below(6);
    const std::size_t n_query_pool = 4 + rng.next_below(6);
    std::vector<std::string> queries;
    for (std::size_t i = 0; i < n_query_pool; ++i) {
        std::string q = "w" + std::to_string(rng.next_below(25));
        if (rng.bernoulli(0.5)) q += " w" + std::to_string(rng.next_below(25));
        queries.push_back(q);
    }
    const std::size_t n_events = 20 + rng.next_below(n_events_max - 20);
    for (std::size_t i = 0; i < n_events; ++i) {
        const std::string user = "u" + std::to_string(rng.next_below(n_users));
        pssl::QueryEvent e;
        e.user_id = user;
        e.timestamp = 1000 + static_cast<std::int64_t>(rng.next_below(100000)) * 60;
        e.query = queries[rng.next_below(queries.size())];
        e.query_words = pssl::split_words(e.query);
        const std::size_t k = 2 + rng.next_below(4);
        std::vector<std::size_t> picks = rng.sample_indices(doc_ids.size(), k);
        std::size_t n_clicks = 1 + rng.next_below(std::min<std::size_t>(k, 3));
        for (std::size_t c = 0; c < picks.size(); ++c) {
            pssl::Candidate cand;
            cand.doc_id = doc_ids[picks[c]];
            cand.orig_rank = static_cast<int>(c) + 1;
            cand.clicked = c < n_clicks;
            e.candidates.push_back(std::move(cand));
        }
        log.events[user].push_back(std::move(e));
    }
    for (auto& [user, evs] : log.events) {
        std::stable_sort(evs.begin(), evs.end(),
                         [](const pssl::QueryEvent& a, const pssl::QueryEvent& b) {
                             return a.timestamp < b.timestamp;
                         });
        log.report.n_events += static_cast<std::int64_t>(evs.size());
    }
    log.report.n_documents = static_cast<std::int64_t>(log.corpus.size());
    return log;
}

}  // namespace oracles
