#pragma once

// Stage two: per-candidate scoring (personalized cosine + feature-backed
// ad-hoc score, fused by an MLP), pairwise ranking loss, fine-tuning, and
// re-ranking.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pssl/bm25.hpp"
#include "pssl/model.hpp"

namespace pssl {

// Raw (pre-standardization) feature vector for a (query, doc) pair; all
// counts use the user's behaviors strictly before the scored event.
//   0 historical clicks on the doc under any query
//   1 historical clicks on the doc under this exact query string
//   2 occurrences of this query string in the history
//   3 BM25 score of the doc for the query
//   4 reciprocal of the original rank
//   5 max word-embedding cosine between query and doc tokens
//   6 mean word-embedding cosine
//   7 fraction of the query's distinct terms present in the doc
inline constexpr std::size_t kNumFeatures = 8;

class FeatureExtractor {
public:
    FeatureExtractor(const Log& full_log, const Bm25Index& index, const Vocabulary& vocab);

    std::vector<double> extract(const Model& model, const std::string& user_id,
                                std::size_t event_idx, const Candidate& candidate) const;

    const std::vector<QueryEvent>& user_events(const std::string& user_id) const;
    const Log& log() const { return *log_; }

private:
    const Log* log_;
    const Bm25Index* index_;
    const Vocabulary* vocab_;
};

// Mean/std per feature over all (event, candidate) pairs of the given
// events; a std below 1e-6 is replaced by 1 so constant features map to ~0.
void fit_feature_standardization(Model& model, const FeatureExtractor& extractor,
                                 const std::vector<std::pair<std::string, std::size_t>>& events);

std::vector<double> standardize_features(const Model& model, const std::vector<double>& raw);

struct CandidateScore {
    double p_score = 0.0;  // cosine(user representation, doc)
    double a_score = 0.0;  // feature/similarity MLP
    double final_score = 0.0;
};

struct ScoreGraph {
    Tensor p_score;
    Tensor a_score;
    Tensor final_score;
};

// Differentiable scoring of one candidate given precomputed query/user
// encodings and a constant standardized feature row {1, n_features}.
ScoreGraph score_candidate(Model& model, const Tensor& query_vec, const Tensor& user_vec,
                           const Tensor& doc_vec, const Tensor& features);

// -log sigmoid(score_rel - score_non); exact ln 2 at zero margin and a
// function of the margin only.
Tensor pairwise_rank_loss(const Tensor& score_relevant, const Tensor& score_non_relevant);
double pairwise_rank_loss_value(double margin);

struct RankedCandidate {
    std::string doc_id;
    int orig_rank = 0;
    double score = 0.0;
    bool relevant = false;
    int new_rank = 0;
};

struct RankedList {
    std::string qid;
    std::string user_id;
    std::int64_t timestamp = 0;
    std::string query;
    std::vector<RankedCandidate> candidates;
};

// Scores every candidate of user_events[event_idx] and re-ranks by
// descending score, ties by ascending original rank.
RankedList rerank_event(Model& model, const FeatureExtractor& extractor,
                        const Vocabulary& vocab, const std::string& user_id,
                        std::size_t event_idx, const std::string& qid);

// Assigns new ranks from scores (descending, ties by ascending orig_rank).
void assign_new_ranks(RankedList& list);

struct FinetuneConfig {
    double lr = 3e-4;
    std::int64_t steps = 500;
    std::int64_t events_per_step = 4;
    std::int64_t max_pairs_per_event = 10;
    std::int64_t val_every = 100;   // 0: no validation
    std::int64_t val_sample = 200;  // 0: all validation events
    std::uint64_t seed = 11;

    void validate() const;
};

struct FinetunePoint {
    std::int64_t step;
    double train_loss;
    double valid_map;  // NaN when not evaluated at this step
};

struct FinetuneResult {
    std::vector<FinetunePoint> curve;
    double best_valid_map = 0.0;
    std::int64_t best_step = 0;
    std::int64_t n_train_events = 0;
};

// Fine-tunes on (relevant, non-relevant) pairs from the train events;
// embeddings unfreeze; the best-validation checkpoint is kept at
// best_checkpoint_path when validation events exist.
FinetuneResult finetune_run(Model& model, const FeatureExtractor& extractor,
                            const Vocabulary& vocab,
                            const std::vector<std::pair<std::string, std::size_t>>& train_events,
                            const std::vector<std::pair<std::string, std::size_t>>& valid_events,
                            const FinetuneConfig& cfg, const std::string& best_checkpoint_path);

}  // namespace pssl
