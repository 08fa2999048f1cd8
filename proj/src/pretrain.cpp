#include "pssl/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pssl {

void PretrainConfig::validate() const {
    if (batch_size < 2) throw UsageError("pretrain batch size must be >= 2");
    if (w_dp < 0 || w_qp < 0 || w_sap < 0 || w_up < 0) {
        throw UsageError("loss weights must be non-negative");
    }
    if (tau <= 0) throw UsageError("temperature must be positive");
    if (up_negatives != "both" && up_negatives != "one") {
        throw UsageError("up_negatives must be 'both' or 'one'");
    }
}

Tensor info_nce_from_logits(const Tensor& logits) {
    const std::int64_t n = logits.size();
    if (logits.shape().size() != 1 || n < 1) {
        throw InternalError("info_nce_from_logits: need a non-empty vector");
    }
    // Shift by the max logit (a constant) so the exponentials stay tame; the
    // zero-negative case then reduces to exactly 0.
    double m = logits.values()[0];
    for (double v : logits.values()) m = std::max(m, v);
    Tensor shifted = add_scalar(logits, -m);
    Tensor denom = log(sum_all(exp(shifted)));
    Tensor pos = reshape(slice_rows(reshape(shifted, {n, 1}), 0, 1), {});
    return sub(denom, pos);
}

Tensor info_nce(const Tensor& anchor, const Tensor& positive,
                const std::vector<Tensor>& negatives, double tau) {
    if (tau <= 0) throw UsageError("info_nce: temperature must be positive");
    std::vector<Tensor> logits;
    logits.reserve(negatives.size() + 1);
    logits.push_back(scale(cosine_similarity(anchor, positive), 1.0 / tau));
    for (const auto& n : negatives) {
        logits.push_back(scale(cosine_similarity(anchor, n), 1.0 / tau));
    }
    return info_nce_from_logits(stack_scalars(logits));
}

Tensor batch_contrastive_loss(const std::vector<EncodedPair>& pairs, double tau, bool symmetric,
                              bool one_sided_negatives) {
    if (pairs.size() < 2) throw InternalError("batch_contrastive_loss: need at least 2 pairs");
    std::vector<Tensor> losses;
    const auto add_direction = [&](bool reversed) {
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const Tensor& anchor = reversed ? pairs[i].second : pairs[i].first;
            const Tensor& positive = reversed ? pairs[i].first : pairs[i].second;
            std::vector<Tensor> negatives;
            negatives.reserve(2 * (pairs.size() - 1));
            for (std::size_t j = 0; j < pairs.size(); ++j) {
                if (j == i) continue;  // a pair's own positive never joins its negatives
                negatives.push_back(pairs[j].first);
                if (!one_sided_negatives) negatives.push_back(pairs[j].second);
            }
            losses.push_back(info_nce(anchor, positive, negatives, tau));
        }
    };
    add_direction(false);
    if (symmetric) add_direction(true);
    return mean_all(stack_scalars(losses));
}

std::vector<EncodedPair> encode_dp_batch(Model& model, const PretrainData& data,
                                         const std::vector<DocPair>& batch) {
    std::vector<EncodedPair> out;
    out.reserve(batch.size());
    for (const auto& p : batch) {
        out.push_back({model.sentence_encode(data.log->doc(p.doc_i).token_ids),
                       model.sentence_encode(data.log->doc(p.doc_j).token_ids)});
    }
    return out;
}

namespace {

std::vector<std::int32_t> query_ids(const PretrainData& data, const std::string& query) {
    std::vector<std::int32_t> ids;
    for (const auto& w : split_words(query)) ids.push_back(data.vocab->lookup(w));
    return ids;
}

}  // namespace

std::vector<EncodedPair> encode_qp_batch(Model& model, const PretrainData& data,
                                         const std::vector<QueryPair>& batch) {
    std::vector<EncodedPair> out;
    out.reserve(batch.size());
    for (const auto& p : batch) {
        out.push_back({model.sentence_encode(query_ids(data, p.query_i)),
                       model.sentence_encode(query_ids(data, p.query_j))});
    }
    return out;
}

Tensor encode_augmented_history(Model& model, const PretrainData& data,
                                const UserHistory& history) {
    // The trailing session plays the short-term role; everything earlier is
    // long-term. No current query for augmented sequences.
    HistoryView view;
    if (!history.behaviors.empty()) {
        const int last_session = history.behaviors.back().session_id;
        std::size_t split = history.behaviors.size();
        while (split > 0 && history.behaviors[split - 1].session_id == last_session) --split;
        view.long_term.assign(history.behaviors.begin(),
                              history.behaviors.begin() + static_cast<std::ptrdiff_t>(split));
        view.short_term.assign(history.behaviors.begin() + static_cast<std::ptrdiff_t>(split),
                               history.behaviors.end());
    }
    TokenizedView tokens = tokenize_view(view, *data.log, *data.vocab);
    return model.sequence_encode(tokens, nullptr);
}

std::vector<EncodedPair> encode_sap_batch(Model& model, const PretrainData& data,
                                          const std::vector<SapInstance>& batch,
                                          double aug_ratio) {
    std::vector<EncodedPair> out;
    out.reserve(batch.size());
    for (const auto& inst : batch) {
        auto it = data.log->events.find(inst.user_id);
        if (it == data.log->events.end()) throw DataError("sap: unknown user " + inst.user_id);
        std::vector<const QueryEvent*> evs;
        for (const auto& e : it->second) evs.push_back(&e);
        const UserHistory base = UserHistory::from_events(inst.user_id, evs);
        const UserHistory a = augment_sequence(base, inst.strategy_i, aug_ratio, inst.seed_i);
        const UserHistory b = augment_sequence(base, inst.strategy_j, aug_ratio, inst.seed_j);
        out.push_back({encode_augmented_history(model, data, a),
                       encode_augmented_history(model, data, b)});
    }
    return out;
}

std::vector<EncodedPair> encode_up_batch(Model& model, const PretrainData& data,
                                         const std::vector<UserPair>& batch) {
    std::vector<EncodedPair> out;
    out.reserve(batch.size());
    for (const auto& p : batch) {
        std::vector<std::int32_t> q_ids = query_ids(data, p.query);
        TokenizedView vi = tokenize_view(p.history_i, *data.log, *data.vocab);
        TokenizedView vj = tokenize_view(p.history_j, *data.log, *data.vocab);
        out.push_back({model.sequence_encode(vi, &q_ids), model.sequence_encode(vj, &q_ids)});
    }
    return out;
}

namespace {

struct TaskStream {
    std::string name;
    double weight = 0.0;
    std::size_t n_items = 0;
    std::size_t epoch = 0;
    std::size_t cursor = 0;
    std::function<std::size_t(std::uint64_t epoch_seed)> reshuffle;  // returns batch count
    std::function<Tensor(std::size_t batch_idx)> loss_of;
};

}  // namespace

PretrainResult pretrain_run(Model& model, const PretrainData& data, const PretrainConfig& cfg,
                            const std::string& checkpoint_path) {
    cfg.validate();
    PretrainResult result;
    model.set_embeddings_trainable(false);

    const std::size_t n = static_cast<std::size_t>(cfg.batch_size);
    std::vector<TaskStream> tasks;

    // Each task keeps its own shuffled batch stream and recycles with a new
    // epoch seed once exhausted.
    auto add_task = [&](const std::string& name, double weight, std::size_t count, auto& batches,
                        auto make_batches, auto loss_fn) {
        if (weight <= 0.0) return;
        if (count < n) {
            if (count > 0 || weight > 0.0) {
                result.warnings.push_back("task " + name + " skipped: " + std::to_string(count) +
                                          " instances < batch size " + std::to_string(n));
            }
            return;
        }
        TaskStream t;
        t.name = name;
        t.weight = weight;
        t.n_items = count;
        t.reshuffle = [&batches, make_batches](std::uint64_t epoch_seed) {
            batches = make_batches(epoch_seed);
            return batches.size();
        };
        t.loss_of = loss_fn;
        tasks.push_back(std::move(t));
    };

    std::vector<std::vector<DocPair>> dp_batches;
    std::vector<std::vector<QueryPair>> qp_batches;
    std::vector<std::vector<SapInstance>> sap_batches;
    std::vector<std::vector<UserPair>> up_batches;

    add_task("dp", cfg.w_dp, data.dp.size(), dp_batches,
             [&](std::uint64_t s) { return build_batches(data.dp, n, s); },
             [&](std::size_t b) {
                 return batch_contrastive_loss(encode_dp_batch(model, data, dp_batches[b]),
                                               cfg.tau, cfg.symmetric);
             });
    add_task("qp", cfg.w_qp, data.qp.size(), qp_batches,
             [&](std::uint64_t s) { return build_batches(data.qp, n, s); },
             [&](std::size_t b) {
                 return batch_contrastive_loss(encode_qp_batch(model, data, qp_batches[b]),
                                               cfg.tau, cfg.symmetric);
             });
    add_task("sap", cfg.w_sap, data.sap.size(), sap_batches,
             [&](std::uint64_t s) { return build_batches(data.sap, n, s); },
             [&](std::size_t b) {
                 return batch_contrastive_loss(
                     encode_sap_batch(model, data, sap_batches[b], cfg.aug_ratio), cfg.tau,
                     cfg.symmetric);
             });
    add_task("up", cfg.w_up, data.up.size(), up_batches,
             [&](std::uint64_t s) { return build_batches(data.up, n, s); },
             [&](std::size_t b) {
                 return batch_contrastive_loss(encode_up_batch(model, data, up_batches[b]),
                                               cfg.tau, cfg.symmetric,
                                               cfg.up_negatives == "one");
             });

    const bool all_weights_zero =
        cfg.w_dp <= 0.0 && cfg.w_qp <= 0.0 && cfg.w_sap <= 0.0 && cfg.w_up <= 0.0;
    if (tasks.empty() && !all_weights_zero) {
        throw DataError("pretrain: no enabled task has at least one full batch");
    }

    std::vector<std::size_t> batch_counts(tasks.size(), 0);
    AdamConfig adam;
    adam.lr = cfg.lr;

    for (std::int64_t step = 1; step <= cfg.steps; ++step) {
        std::vector<Tensor> weighted;
        std::vector<std::pair<std::string, double>> task_losses;
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
            TaskStream& t = tasks[ti];
            if (t.cursor >= batch_counts[ti]) {
                const std::uint64_t epoch_seed =
                    cfg.seed ^ (0x9E3779B97F4A7C15ull * (ti + 1)) ^ (t.epoch * 0x100000001B3ull);
                batch_counts[ti] = t.reshuffle(epoch_seed);
                t.cursor = 0;
                ++t.epoch;
            }
            Tensor loss = t.loss_of(t.cursor);
            ++t.cursor;
            task_losses.emplace_back(t.name, loss.item());
            weighted.push_back(scale(loss, t.weight));
        }
        double total_value = 0.0;
        if (!weighted.empty()) {
            Tensor total = weighted.size() == 1 ? weighted[0] : sum_all(stack_scalars(weighted));
            total_value = total.item();
            backward(total);
            model.store.adam_step(adam);
        }
        for (const auto& [name, value] : task_losses) {
            result.curve.push_back({step, name, value, total_value});
        }
        if (!checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
            step % cfg.checkpoint_every == 0) {
            model.save_checkpoint(checkpoint_path);
        }
        result.steps_run = step;
    }
    if (!checkpoint_path.empty()) model.save_checkpoint(checkpoint_path);
    return result;
}

void write_loss_curve(const std::vector<LossCurvePoint>& curve, const std::string& path) {
    std::ostringstream out;
    out << "step,task,loss,total\n";
    out.precision(17);
    for (const auto& p : curve) {
        out << p.step << ',' << p.task << ',' << p.loss << ',' << p.total << '\n';
    }
    write_file(path, out.str());
}

}  // namespace pssl
