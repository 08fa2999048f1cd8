#include "pssl/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pssl/metrics.hpp"

namespace pssl {

FeatureExtractor::FeatureExtractor(const Log& full_log, const Bm25Index& index,
                                   const Vocabulary& vocab)
    : log_(&full_log), index_(&index), vocab_(&vocab) {}

const std::vector<QueryEvent>& FeatureExtractor::user_events(const std::string& user_id) const {
    auto it = log_->events.find(user_id);
    if (it == log_->events.end()) throw DataError("unknown user: " + user_id);
    return it->second;
}

namespace {

double safe_cosine_rows(const std::vector<double>& values, std::int64_t d, std::int32_t a,
                        std::int32_t b) {
    const double* ra = values.data() + static_cast<std::int64_t>(a) * d;
    const double* rb = values.data() + static_cast<std::int64_t>(b) * d;
    double dot = 0, na = 0, nb = 0;
    for (std::int64_t j = 0; j < d; ++j) {
        dot += ra[j] * rb[j];
        na += ra[j] * ra[j];
        nb += rb[j] * rb[j];
    }
    if (na < 1e-24 || nb < 1e-24) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::vector<double> FeatureExtractor::extract(const Model& model, const std::string& user_id,
                                              std::size_t event_idx,
                                              const Candidate& candidate) const {
    const auto& events = user_events(user_id);
    if (event_idx >= events.size()) throw InternalError("extract: event index out of range");
    const QueryEvent& event = events[event_idx];

    double clicks_doc = 0, clicks_doc_same_query = 0, query_count = 0;
    for (std::size_t i = 0; i < event_idx; ++i) {
        const QueryEvent& past = events[i];
        const bool same_query = past.query == event.query;
        if (same_query) ++query_count;
        for (const Candidate* c : past.clicks()) {
            if (c->doc_id != candidate.doc_id) continue;
            ++clicks_doc;
            if (same_query) ++clicks_doc_same_query;
        }
    }

    const Document& doc = log_->doc(candidate.doc_id);
    const double bm25 = index_->score(event.query_words, candidate.doc_id);
    const double inv_rank = 1.0 / static_cast<double>(candidate.orig_rank);

    double max_cos = 0.0, mean_cos = 0.0;
    {
        const Tensor m = model.embedding_matrix();
        const auto& values = m.values();
        const std::int64_t d = model.cfg.d_embed;
        std::size_t n_pairs = 0;
        double sum = 0.0, best = 0.0;
        bool any = false;
        for (std::int32_t qid : event.query_ids) {
            if (qid == Vocabulary::kPad) continue;
            for (std::int32_t did : doc.token_ids) {
                if (did == Vocabulary::kPad) continue;
                const double c = safe_cosine_rows(values, d, qid, did);
                sum += c;
                ++n_pairs;
                if (!any || c > best) {
                    best = c;
                    any = true;
                }
            }
        }
        if (n_pairs > 0) {
            max_cos = best;
            mean_cos = sum / static_cast<double>(n_pairs);
        }
    }

    double term_overlap = 0.0;
    {
        std::set<std::string> q_terms(event.query_words.begin(), event.query_words.end());
        if (!q_terms.empty()) {
            std::set<std::string> d_terms(doc.words.begin(), doc.words.end());
            std::size_t hit = 0;
            for (const auto& t : q_terms) hit += d_terms.count(t);
            term_overlap = static_cast<double>(hit) / static_cast<double>(q_terms.size());
        }
    }

    return {clicks_doc, clicks_doc_same_query, query_count, bm25,
            inv_rank,   max_cos,               mean_cos,    term_overlap};
}

void fit_feature_standardization(Model& model, const FeatureExtractor& extractor,
                                 const std::vector<std::pair<std::string, std::size_t>>& events) {
    std::vector<double> sum(kNumFeatures, 0.0), sum_sq(kNumFeatures, 0.0);
    std::int64_t n = 0;
    for (const auto& [user, idx] : events) {
        const QueryEvent& e = extractor.user_events(user)[idx];
        for (const auto& c : e.candidates) {
            const auto f = extractor.extract(model, user, idx, c);
            for (std::size_t k = 0; k < kNumFeatures; ++k) {
                sum[k] += f[k];
                sum_sq[k] += f[k] * f[k];
            }
            ++n;
        }
    }
    if (n == 0) throw DataError("feature standardization: no (event, candidate) pairs");
    Tensor mean_t = model.store.get("rank.feat_mean");
    Tensor std_t = model.store.get("rank.feat_std");
    for (std::size_t k = 0; k < kNumFeatures; ++k) {
        const double mean = sum[k] / static_cast<double>(n);
        const double var = std::max(0.0, sum_sq[k] / static_cast<double>(n) - mean * mean);
        // A (near-)constant feature standardizes to ~0 instead of exploding.
        const double sigma = std::sqrt(var);
        mean_t.values_mut()[k] = model.store.round_to_f32(mean);
        std_t.values_mut()[k] = model.store.round_to_f32(sigma < 1e-6 ? 1.0 : sigma);
    }
}

std::vector<double> standardize_features(const Model& model, const std::vector<double>& raw) {
    const auto& mean = model.store.get("rank.feat_mean").values();
    const auto& stdev = model.store.get("rank.feat_std").values();
    std::vector<double> out(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) out[k] = (raw[k] - mean[k]) / stdev[k];
    return out;
}

ScoreGraph score_candidate(Model& model, const Tensor& query_vec, const Tensor& user_vec,
                           const Tensor& doc_vec, const Tensor& features) {
    ScoreGraph g;
    g.p_score = cosine_similarity(user_vec, doc_vec);

    Tensor feat_out = mlp2(features, model.store.get("rank.feat.w1"),
                           model.store.get("rank.feat.b1"), model.store.get("rank.feat.w2"),
                           model.store.get("rank.feat.b2"));
    Tensor sim_qd = reshape(cosine_similarity(query_vec, doc_vec), {1, 1});
    Tensor a_in = concat_cols({sim_qd, feat_out});
    Tensor a_out = mlp2(a_in, model.store.get("rank.adhoc.w1"), model.store.get("rank.adhoc.b1"),
                        model.store.get("rank.adhoc.w2"), model.store.get("rank.adhoc.b2"));
    g.a_score = reshape(a_out, {});

    Tensor fuse_in = concat_cols({reshape(g.p_score, {1, 1}), a_out});
    Tensor fused = mlp2(fuse_in, model.store.get("rank.fuse.w1"), model.store.get("rank.fuse.b1"),
                        model.store.get("rank.fuse.w2"), model.store.get("rank.fuse.b2"));
    g.final_score = reshape(fused, {});
    return g;
}

Tensor pairwise_rank_loss(const Tensor& score_relevant, const Tensor& score_non_relevant) {
    // -log sigmoid(margin) written as softplus(-margin); depends on the
    // margin only, so shifting both scores cancels exactly.
    return softplus(sub(score_non_relevant, score_relevant));
}

double pairwise_rank_loss_value(double margin) {
    const double x = -margin;
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

void assign_new_ranks(RankedList& list) {
    std::vector<std::size_t> order(list.candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ca = list.candidates[a];
        const auto& cb = list.candidates[b];
        if (ca.score != cb.score) return ca.score > cb.score;
        return ca.orig_rank < cb.orig_rank;
    });
    for (std::size_t r = 0; r < order.size(); ++r) {
        list.candidates[order[r]].new_rank = static_cast<int>(r) + 1;
    }
}

namespace {

struct EventEncodings {
    Tensor query_vec;
    Tensor user_vec;
};

EventEncodings encode_event_context(Model& model, const FeatureExtractor& extractor,
                                    const Vocabulary& vocab, const std::string& user_id,
                                    std::size_t event_idx) {
    const auto& events = extractor.user_events(user_id);
    const QueryEvent& e = events[event_idx];
    EventEncodings enc;
    enc.query_vec = model.sentence_encode(e.query_ids);
    const HistoryView view =
        history_views(events, event_idx, static_cast<std::size_t>(model.cfg.max_long),
                      static_cast<std::size_t>(model.cfg.max_short));
    TokenizedView tokens = tokenize_view(view, extractor.log(), vocab);
    enc.user_vec = model.sequence_encode(tokens, &e.query_ids);
    return enc;
}

Tensor feature_tensor(Model& model, const FeatureExtractor& extractor,
                      const std::string& user_id, std::size_t event_idx, const Candidate& c) {
    const auto raw = extractor.extract(model, user_id, event_idx, c);
    return Tensor::from_values({1, static_cast<std::int64_t>(kNumFeatures)},
                               standardize_features(model, raw));
}

}  // namespace

RankedList rerank_event(Model& model, const FeatureExtractor& extractor, const Vocabulary& vocab,
                        const std::string& user_id, std::size_t event_idx,
                        const std::string& qid) {
    const auto& events = extractor.user_events(user_id);
    const QueryEvent& e = events[event_idx];
    if (e.candidates.empty()) throw DataError("rerank: event has no candidates");

    const EventEncodings enc = encode_event_context(model, extractor, vocab, user_id, event_idx);
    RankedList list;
    list.qid = qid;
    list.user_id = user_id;
    list.timestamp = e.timestamp;
    list.query = e.query;
    for (const auto& c : e.candidates) {
        Tensor doc_vec = model.sentence_encode(extractor.log().doc(c.doc_id).token_ids);
        Tensor features = feature_tensor(model, extractor, user_id, event_idx, c);
        ScoreGraph g = score_candidate(model, enc.query_vec, enc.user_vec, doc_vec, features);
        RankedCandidate rc;
        rc.doc_id = c.doc_id;
        rc.orig_rank = c.orig_rank;
        rc.score = g.final_score.item();
        rc.relevant = e.relevant(c);
        list.candidates.push_back(std::move(rc));
    }
    assign_new_ranks(list);
    return list;
}

void FinetuneConfig::validate() const {
    if (steps < 0 || events_per_step < 1 || max_pairs_per_event < 1) {
        throw UsageError("finetune config: counts must be positive");
    }
}

FinetuneResult finetune_run(Model& model, const FeatureExtractor& extractor,
                            const Vocabulary& vocab,
                            const std::vector<std::pair<std::string, std::size_t>>& train_events,
                            const std::vector<std::pair<std::string, std::size_t>>& valid_events,
                            const FinetuneConfig& cfg, const std::string& best_checkpoint_path) {
    cfg.validate();
    model.set_embeddings_trainable(true);

    std::vector<std::pair<std::string, std::size_t>> trainable;
    for (const auto& ev : train_events) {
        const QueryEvent& e = extractor.user_events(ev.first)[ev.second];
        bool has_rel = false, has_non = false;
        for (const auto& c : e.candidates) (e.relevant(c) ? has_rel : has_non) = true;
        if (has_rel && has_non) trainable.push_back(ev);
    }
    if (trainable.empty()) {
        throw DataError("finetune: no event has both a relevant and a non-relevant candidate");
    }

    std::vector<std::pair<std::string, std::size_t>> val_subset = valid_events;
    {
        Rng val_rng(cfg.seed ^ 0xA5A5A5A5ull);
        if (cfg.val_sample > 0 &&
            val_subset.size() > static_cast<std::size_t>(cfg.val_sample)) {
            val_rng.shuffle(val_subset);
            val_subset.resize(static_cast<std::size_t>(cfg.val_sample));
            std::sort(val_subset.begin(), val_subset.end());
        }
    }

    auto validation_map = [&]() {
        std::vector<RankedList> lists;
        lists.reserve(val_subset.size());
        for (std::size_t i = 0; i < val_subset.size(); ++i) {
            lists.push_back(rerank_event(model, extractor, vocab, val_subset[i].first,
                                         val_subset[i].second, "v" + std::to_string(i)));
        }
        return compute_ranking_metrics(lists).map;
    };

    FinetuneResult result;
    result.n_train_events = static_cast<std::int64_t>(trainable.size());
    AdamConfig adam;
    adam.lr = cfg.lr;

    Rng rng(cfg.seed);
    std::vector<std::pair<std::string, std::size_t>> order = trainable;
    rng.shuffle(order);
    std::size_t cursor = 0;

    for (std::int64_t step = 1; step <= cfg.steps; ++step) {
        std::vector<Tensor> losses;
        for (std::int64_t k = 0; k < cfg.events_per_step; ++k) {
            if (cursor >= order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const auto [user, idx] = order[cursor++];
            const QueryEvent& e = extractor.user_events(user)[idx];

            std::vector<const Candidate*> rel, non;
            for (const auto& c : e.candidates) (e.relevant(c) ? rel : non).push_back(&c);

            std::vector<std::pair<const Candidate*, const Candidate*>> pairs;
            for (const auto* r : rel)
                for (const auto* nn : non) pairs.emplace_back(r, nn);
            if (pairs.size() > static_cast<std::size_t>(cfg.max_pairs_per_event)) {
                rng.shuffle(pairs);
                pairs.resize(static_cast<std::size_t>(cfg.max_pairs_per_event));
            }

            const EventEncodings enc = encode_event_context(model, extractor, vocab, user, idx);
            std::map<std::string, Tensor> doc_vecs, feats;
            for (const auto& [r, nn] : pairs) {
                for (const Candidate* c : {r, nn}) {
                    if (!doc_vecs.count(c->doc_id)) {
                        doc_vecs.emplace(c->doc_id, model.sentence_encode(
                                                        extractor.log().doc(c->doc_id).token_ids));
                        feats.emplace(c->doc_id, feature_tensor(model, extractor, user, idx, *c));
                    }
                }
                ScoreGraph gr = score_candidate(model, enc.query_vec, enc.user_vec,
                                                doc_vecs.at(r->doc_id), feats.at(r->doc_id));
                ScoreGraph gn = score_candidate(model, enc.query_vec, enc.user_vec,
                                                doc_vecs.at(nn->doc_id), feats.at(nn->doc_id));
                losses.push_back(pairwise_rank_loss(gr.final_score, gn.final_score));
            }
        }
        Tensor loss = mean_all(stack_scalars(losses));
        const double loss_value = loss.item();
        backward(loss);
        model.store.adam_step(adam);

        double vmap = std::numeric_limits<double>::quiet_NaN();
        const bool validate_now =
            !val_subset.empty() && cfg.val_every > 0 &&
            (step % cfg.val_every == 0 || step == cfg.steps);
        if (validate_now) {
            vmap = validation_map();
            if (vmap > result.best_valid_map || result.best_step == 0) {
                result.best_valid_map = vmap;
                result.best_step = step;
                if (!best_checkpoint_path.empty()) model.save_checkpoint(best_checkpoint_path);
            }
        }
        result.curve.push_back({step, loss_value, vmap});
    }
    return result;
}

}  // namespace pssl
