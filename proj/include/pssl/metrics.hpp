#pragma once

// Ranking metrics (MAP, MRR, P@1), net inverse-pair correction (P-improve),
// click-entropy bucket reports, and representation dumps.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pssl/ranker.hpp"

namespace pssl {

struct MetricsSummary {
    double map = 0.0;
    double mrr = 0.0;
    double p_at_1 = 0.0;
    std::int64_t n_evaluated = 0;  // lists with at least one relevant candidate
    std::int64_t n_skipped = 0;    // lists without any relevant candidate
};

// Metrics consume new_rank and the relevance flags; candidate storage order
// does not matter. Lists without a relevant item are skipped and counted.
MetricsSummary compute_ranking_metrics(const std::vector<RankedList>& lists);

double average_precision(const RankedList& list);

// Metrics of the original ranking (new_rank := orig_rank).
MetricsSummary original_ranking_metrics(const std::vector<RankedList>& lists);

// Net corrected fraction over all (relevant, non-relevant) candidate pairs,
// pooled across lists: (inverse pairs fixed - correct pairs broken) / pairs.
// Empty optional when there are no such pairs.
std::optional<double> p_improve(const std::vector<RankedList>& lists);

struct EntropyBucket {
    std::int64_t n_lists = 0;
    double map_reranked = 0.0;
    double map_original = 0.0;
    double delta_map = 0.0;
};

struct EntropySplitReport {
    double threshold = 1.0;
    std::optional<EntropyBucket> low;   // entropy <= threshold (navigational-like)
    std::optional<EntropyBucket> high;  // entropy > threshold (informational-like)
};

EntropySplitReport entropy_split_report(const std::vector<RankedList>& lists,
                                        const std::map<std::string, double>& entropies,
                                        double threshold = 1.0);

// Pairwise-cosine histogram over [-1, 1] with 0.025-wide bins (80 bins);
// values at exactly +1 land in the last bin.
std::vector<std::int64_t> cosine_histogram(const std::vector<std::vector<double>>& vectors);
double plain_cosine(const std::vector<double>& a, const std::vector<double>& b);

// TREC-style run file: qid doc_id rank score tag.
void write_run_file(const std::vector<RankedList>& lists, const std::string& path,
                    const std::string& tag, bool use_original_ranks = false);
void write_qrels(const std::vector<RankedList>& lists, const std::string& path);
void write_queries_file(const std::vector<RankedList>& lists, const std::string& path);

// Rebuilds ranked lists from a run file plus qrels (and optionally the
// original-ranking run for orig_rank; otherwise orig_rank := run order).
std::vector<RankedList> load_run_with_qrels(const std::string& run_path,
                                            const std::string& qrels_path,
                                            const std::string& baseline_run_path = "");

std::map<std::string, std::string> load_queries_file(const std::string& path);  // qid -> query

}  // namespace pssl
