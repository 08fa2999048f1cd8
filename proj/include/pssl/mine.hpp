#pragma once

// Self-supervised training-pair extraction from a preprocessed log:
// document pairs (DP), query pairs (QP), sequence augmentation instances
// (SAP), user pairs (UP), plus batching with in-batch negatives.

#include <cstdint>
#include <string>
#include <vector>

#include "pssl/log.hpp"

namespace pssl {

struct DocPair {
    std::string user_id;
    std::string query;
    std::string doc_i;
    std::string doc_j;
};

struct QueryPair {
    std::string user_id;
    std::string query_i;
    std::string query_j;
    std::string shared_doc;
};

enum class AugmentStrategy : int { BehaviorDelete = 0, BehaviorReorder = 1, SessionDelete = 2 };

const char* augment_strategy_name(AugmentStrategy s);
AugmentStrategy augment_strategy_from_name(const std::string& name);

struct SapInstance {
    std::string user_id;
    AugmentStrategy strategy_i;
    AugmentStrategy strategy_j;
    std::uint64_t seed_i = 0;
    std::uint64_t seed_j = 0;
};

struct UserPair {
    std::string user_i;
    std::string user_j;
    std::string query;       // normalized string, entropy above threshold
    std::string shared_doc;
    HistoryView history_i;   // strictly before each user's anchoring event
    HistoryView history_j;
    std::vector<std::string> query_words;
};

// One DocPair per unordered pair of clicked docs within a single query
// event, in (user, event, rank) order.
std::vector<DocPair> mine_document_pairs(const Log& log);

// For each user and document, every unordered pair of distinct query
// strings whose events click that document.
std::vector<QueryPair> mine_query_pairs(const Log& log);

// Users pairs anchored on ambiguous queries (click entropy strictly above
// the threshold, computed over `log`); at most one pair per
// (user_i, user_j, query, doc) tuple; histories end before the anchor.
std::vector<UserPair> mine_user_pairs(const Log& log, double entropy_threshold = 1.0,
                                      std::size_t max_long = 50, std::size_t max_short = 20);

// instances_per_user SAP instances for every user with a non-empty history.
std::vector<SapInstance> mine_sap_instances(const Log& log, std::size_t instances_per_user,
                                            std::uint64_t seed);

// Stochastic sequence edits; deterministic given the seed, never invents
// behaviors, always keeps at least one.
UserHistory augment_sequence(const UserHistory& history, AugmentStrategy strategy, double ratio,
                             std::uint64_t seed);

// Deterministic shuffle + chunk into batches of n; the final short chunk is
// dropped. Returns an empty stream when fewer than n items exist.
template <typename T>
std::vector<std::vector<T>> build_batches(std::vector<T> items, std::size_t n,
                                          std::uint64_t seed) {
    std::vector<std::vector<T>> out;
    if (n < 2) throw UsageError("batch size must be at least 2");
    if (items.size() < n) return out;
    Rng rng(seed);
    rng.shuffle(items);
    const std::size_t n_batches = items.size() / n;
    out.reserve(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) {
        out.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(b * n),
                         items.begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
    }
    return out;
}

struct PairFiles {
    std::string dp, qp, sap, up;
};

void save_doc_pairs(const std::vector<DocPair>& pairs, const std::string& path);
void save_query_pairs(const std::vector<QueryPair>& pairs, const std::string& path);
void save_sap_instances(const std::vector<SapInstance>& xs, const std::string& path);
void save_user_pairs(const std::vector<UserPair>& pairs, const std::string& path);

std::vector<DocPair> load_doc_pairs(const std::string& path);
std::vector<QueryPair> load_query_pairs(const std::string& path);
std::vector<SapInstance> load_sap_instances(const std::string& path);
// User-pair views are reconstructed from the log (anchor = first event of
// the user that issues the query and clicks the doc).
std::vector<UserPair> load_user_pairs(const std::string& path, const Log& log,
                                      std::size_t max_long = 50, std::size_t max_short = 20);

}  // namespace pssl
