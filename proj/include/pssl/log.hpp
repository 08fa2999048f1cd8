#pragma once

// Canonical in-memory and on-disk query-log representation plus the
// preprocessing passes: sessionization, click entropy, temporal splitting,
// vocabulary, statistics, history views.
//
// Events file (UTF-8 TSV), one row per (event, candidate):
//   user_id  timestamp  query  doc_id  orig_rank  clicked{0,1}  dwell_secs(-1 if absent)
// Documents file: doc_id  text

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pssl/common.hpp"

namespace pssl {

struct Document {
    std::string doc_id;
    std::vector<std::string> words;       // normalized
    std::vector<std::int32_t> token_ids;  // filled by tokenize_with
};

struct Candidate {
    std::string doc_id;
    int orig_rank = 0;  // 1-based position in the original ranking
    bool clicked = false;
    int dwell_secs = -1;  // -1 when not recorded
};

struct QueryEvent {
    std::string user_id;
    std::int64_t timestamp = 0;
    std::string query;                    // normalized string
    std::vector<std::string> query_words;
    std::vector<std::int32_t> query_ids;  // filled by tokenize_with
    int session_id = -1;                  // assigned by sessionize
    std::vector<Candidate> candidates;    // sorted by orig_rank

    std::vector<const Candidate*> clicks() const;
    bool relevant(const Candidate& c) const {
        return c.clicked && (c.dwell_secs < 0 || c.dwell_secs >= 30);
    }
};

enum class BehaviorKind { Query, ClickedDoc };

struct Behavior {
    BehaviorKind kind;
    std::string text_key;  // query string, or doc_id
    int session_id = -1;
};

struct UserHistory {
    std::string user_id;
    std::vector<Behavior> behaviors;             // timestamp order
    std::vector<std::size_t> session_boundaries;  // index where a new session starts

    static UserHistory from_events(const std::string& user_id,
                                   const std::vector<const QueryEvent*>& events);
};

struct HistoryView {
    std::vector<Behavior> long_term;   // behaviors before the current session
    std::vector<Behavior> short_term;  // same-session behaviors before the query
};

struct Vocabulary {
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kUnk = 1;
    static constexpr std::int32_t kUser = 2;

    std::unordered_map<std::string, std::int32_t> token_to_id;
    std::vector<std::string> id_to_token;  // reserved slots hold sentinels
    std::vector<std::int64_t> counts;      // build-time frequencies, aligned to ids

    std::int32_t lookup(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnk : it->second;
    }
    std::int64_t size() const { return static_cast<std::int64_t>(id_to_token.size()); }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);
};

struct DatasetStats {
    std::int64_t n_users = 0;
    std::int64_t n_queries = 0;
    std::int64_t n_sessions = 0;
    double avg_query_length = 0.0;
    double avg_clicks_per_query = 0.0;
};

struct IngestReport {
    std::int64_t n_events = 0;
    std::int64_t n_documents = 0;
    std::int64_t n_dropped_lines = 0;
    std::int64_t n_dropped_events = 0;
    std::int64_t n_dropped_documents = 0;  // empty after normalization
};

// The whole log: deduplicated corpus plus per-user event lists sorted by
// (user_id, timestamp, input order). Read-only after construction.
struct Log {
    std::map<std::string, Document> corpus;
    std::map<std::string, std::vector<QueryEvent>> events;  // per user, sorted
    IngestReport report;

    std::vector<const QueryEvent*> all_events() const;  // (user, time) order
    std::int64_t min_timestamp() const;
    std::int64_t max_timestamp() const;
    const Document& doc(const std::string& doc_id) const;
};

Log ingest_log(const std::string& events_path, const std::string& docs_path);
void emit_log(const Log& log, const std::string& events_path, const std::string& docs_path);

// Consecutive queries of a user share a session iff word-set Jaccard
// similarity >= sim_threshold (and, when max_gap_secs > 0, the time gap is
// also <= max_gap_secs). Session ids start at 0 per user.
void sessionize(Log& log, double sim_threshold = 0.5, std::int64_t max_gap_secs = 0);

double jaccard_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Entropy in bits of the click distribution over documents for an exact
// normalized query string. Empty optional when the query has no clicks.
std::optional<double> click_entropy(const std::string& query, const Log& log);

// All click entropies of the log in one pass, keyed by query string.
std::map<std::string, double> all_click_entropies(const Log& log);

struct SplitResult {
    Log background, train, valid, test;
    std::int64_t removed_users = 0;
    // Boundary timestamps (events with t < cut go left).
    double cut_background = 0, cut_train = 0, cut_valid = 0;
};

// Earliest 5/13 of the time span becomes background; the rest splits 4:1:1
// by time. Users with an empty background or train split are dropped.
SplitResult temporal_split(const Log& log);

Vocabulary build_vocab(const Log& background, const Log& train, std::int64_t min_count = 1);

// Fill query_ids / token_ids everywhere using the vocabulary.
void tokenize_with(Log& log, const Vocabulary& vocab);

// Views of a user's behaviors strictly before events[event_idx], split at
// the current session; keeps the most recent max_long / max_short items.
HistoryView history_views(const std::vector<QueryEvent>& user_events, std::size_t event_idx,
                          std::size_t max_long = 50, std::size_t max_short = 20);

DatasetStats log_stats(const Log& log);

// Merge several logs into one (shared corpus; events re-sorted per user).
Log merge_logs(const std::vector<const Log*>& parts);

}  // namespace pssl
