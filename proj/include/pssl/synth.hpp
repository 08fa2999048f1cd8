#pragma once

// Deterministic synthetic query-log generator with planted user-intent
// structure: topic-worded documents, re-finding, multi-click events, and
// ambiguous queries whose candidates tie on BM25 across two intents while
// user groups click their own side.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pssl/log.hpp"

namespace pssl {

struct SynthConfig {
    std::int64_t n_users = 120;
    std::int64_t n_topics = 2;
    std::int64_t words_per_topic = 30;
    std::int64_t docs_per_topic = 30;
    std::int64_t queries_per_user = 40;
    double ambiguous_fraction = 0.3;
    std::int64_t n_ambiguous_queries = 6;
    std::int64_t amb_docs_early = 8;  // per (query, intent), pre-test pool
    std::int64_t amb_docs_late = 4;   // per (query, intent), test-period pool
    std::int64_t amb_doc_len = 10;
    std::int64_t doc_len_min = 6;
    std::int64_t doc_len_max = 12;
    double refind_rate = 0.15;
    double multi_click_rate = 0.3;
    double offtopic_session_rate = 0.1;
    double noise_click_rate = 0.0;  // capped so per-user consistency stays >= 95%
    double position_bias = 0.0;
    std::int64_t candidates_k = 6;
    std::int64_t span_weeks = 13;
    std::string dwell_mode = "absent";  // or "timed"
    double dwell_unsat_rate = 0.1;      // only for timed mode
    std::uint64_t seed = 42;

    void validate() const;
};

struct PlantedTruth {
    // user -> (ambiguous query -> preferred intent topic)
    std::map<std::string, std::map<std::string, std::int64_t>> user_intent;
    std::map<std::string, std::vector<std::int64_t>> query_intents;
    std::map<std::string, std::int64_t> doc_topic;

    void save(const std::string& path) const;
    static PlantedTruth load(const std::string& path);
};

struct SynthStats {
    std::int64_t n_events = 0;
    std::int64_t n_ambiguous_events = 0;
    std::int64_t n_multi_click_events = 0;
    std::int64_t n_refind_events = 0;
    std::int64_t n_noise_clicks = 0;
};

struct SynthOutput {
    Log log;
    PlantedTruth truth;
    SynthStats stats;
};

SynthOutput generate_synthetic_log(const SynthConfig& cfg);

// Convenience wrapper: generate and write events.tsv / docs.tsv / truth.tsv.
SynthStats generate_to_files(const SynthConfig& cfg, const std::string& events_path,
                             const std::string& docs_path, const std::string& truth_path);

}  // namespace pssl
