#pragma once

// Stage one: the four contrastive tasks over mined pairs, combined per step
// as a weighted sum, optimized with Adam while word embeddings stay frozen.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pssl/mine.hpp"
#include "pssl/model.hpp"

namespace pssl {

struct PretrainConfig {
    std::int64_t batch_size = 8;  // pairs per task batch, >= 2
    double w_dp = 0.5;
    double w_qp = 0.5;
    double w_sap = 1.0;
    double w_up = 0.2;
    double lr = 1e-3;
    std::int64_t steps = 300;
    double tau = 1.0;
    std::uint64_t seed = 7;
    std::int64_t checkpoint_every = 0;  // 0: only at the end
    bool symmetric = false;             // also average the reversed direction
    std::string up_negatives = "both";  // "both": 2(N-1), "one": N-1
    double aug_ratio = 0.5;

    void validate() const;
};

// logits[0] is the positive; the rest are negatives (already divided by the
// temperature). Returns -log softmax(logits)[0].
Tensor info_nce_from_logits(const Tensor& logits);

// Cosine-similarity InfoNCE. Exact 0 with no negatives; ln 2 with a single
// equal-similarity negative.
Tensor info_nce(const Tensor& anchor, const Tensor& positive,
                const std::vector<Tensor>& negatives, double tau = 1.0);

struct EncodedPair {
    Tensor first;
    Tensor second;
};

// Mean InfoNCE over the batch anchors (pair.first unless symmetric); the
// negative pool for an anchor is every member of the other pairs
// ("both"), or only the other pairs' first members ("one").
Tensor batch_contrastive_loss(const std::vector<EncodedPair>& pairs, double tau, bool symmetric,
                              bool one_sided_negatives = false);

struct PretrainData {
    const Log* log = nullptr;  // background+train, tokenized
    const Vocabulary* vocab = nullptr;
    std::vector<DocPair> dp;
    std::vector<QueryPair> qp;
    std::vector<SapInstance> sap;
    std::vector<UserPair> up;
};

// Encoders for one batch of each task.
std::vector<EncodedPair> encode_dp_batch(Model& model, const PretrainData& data,
                                         const std::vector<DocPair>& batch);
std::vector<EncodedPair> encode_qp_batch(Model& model, const PretrainData& data,
                                         const std::vector<QueryPair>& batch);
std::vector<EncodedPair> encode_sap_batch(Model& model, const PretrainData& data,
                                          const std::vector<SapInstance>& batch,
                                          double aug_ratio);
std::vector<EncodedPair> encode_up_batch(Model& model, const PretrainData& data,
                                         const std::vector<UserPair>& batch);

// Splits an augmented behavior sequence at its final session and encodes it
// without a current query.
Tensor encode_augmented_history(Model& model, const PretrainData& data,
                                const UserHistory& history);

struct LossCurvePoint {
    std::int64_t step;
    std::string task;
    double loss;
    double total;
};

struct PretrainResult {
    std::vector<LossCurvePoint> curve;
    std::vector<std::string> warnings;
    std::int64_t steps_run = 0;
};

// checkpoint_path may be empty (no checkpoints written, e.g. under test).
PretrainResult pretrain_run(Model& model, const PretrainData& data, const PretrainConfig& cfg,
                            const std::string& checkpoint_path);

void write_loss_curve(const std::vector<LossCurvePoint>& curve, const std::string& path);

}  // namespace pssl
