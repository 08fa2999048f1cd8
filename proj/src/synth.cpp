#include "pssl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "pssl/bm25.hpp"

namespace pssl {

void SynthConfig::validate() const {
    for (auto v : {n_users, n_topics, words_per_topic, docs_per_topic, queries_per_user,
                   amb_doc_len, doc_len_min, doc_len_max, candidates_k, span_weeks}) {
        if (v < 1) throw UsageError("synth config: counts must be >= 1");
    }
    for (double f : {ambiguous_fraction, refind_rate, multi_click_rate, offtopic_session_rate,
                     noise_click_rate, position_bias, dwell_unsat_rate}) {
        if (f < 0.0 || f > 1.0) throw UsageError("synth config: fractions must be in [0, 1]");
    }
    if (ambiguous_fraction > 0.0 || n_ambiguous_queries > 0) {
        if (n_topics < 2) {
            throw UsageError("synth config: ambiguous queries need at least 2 topics");
        }
    }
    if (n_ambiguous_queries > 0) {
        const std::int64_t per_side = candidates_k / 2;
        if (per_side < 1 || amb_docs_early < per_side || amb_docs_late < per_side) {
            throw UsageError("synth config: ambiguous pools smaller than candidates_k/2");
        }
        if (amb_doc_len < 3) throw UsageError("synth config: amb_doc_len must be >= 3");
    }
    if (doc_len_max < doc_len_min) throw UsageError("synth config: doc_len_max < doc_len_min");
    if (dwell_mode != "absent" && dwell_mode != "timed") {
        throw UsageError("synth config: dwell_mode must be 'absent' or 'timed'");
    }
}

void PlantedTruth::save(const std::string& path) const {
    std::ostringstream out;
    for (const auto& [user, prefs] : user_intent) {
        for (const auto& [query, topic] : prefs) {
            out << "user\t" << user << '\t' << query << '\t' << topic << '\n';
        }
    }
    for (const auto& [query, intents] : query_intents) {
        out << "query\t" << query << '\t';
        for (std::size_t i = 0; i < intents.size(); ++i) out << (i ? "," : "") << intents[i];
        out << '\n';
    }
    for (const auto& [doc, topic] : doc_topic) {
        out << "doc\t" << doc << '\t' << topic << '\n';
    }
    write_file(path, out.str());
}

PlantedTruth PlantedTruth::load(const std::string& path) {
    PlantedTruth t;
    std::istringstream in(read_file(path));
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_tsv_line(line);
        if (f[0] == "user" && f.size() == 4) {
            t.user_intent[f[1]][f[2]] = std::stoll(f[3]);
        } else if (f[0] == "query" && f.size() == 3) {
            std::vector<std::int64_t> intents;
            std::istringstream ss(f[2]);
            std::string part;
            while (std::getline(ss, part, ',')) intents.push_back(std::stoll(part));
            t.query_intents[f[1]] = std::move(intents);
        } else if (f[0] == "doc" && f.size() == 3) {
            t.doc_topic[f[1]] = std::stoll(f[2]);
        } else {
            throw DataError(path + ": malformed truth line " + std::to_string(line_no));
        }
    }
    return t;
}

namespace {

struct AmbPools {
    std::vector<std::string> early[2];
    std::vector<std::string> late[2];
    std::int64_t intents[2];
};

std::string topic_word(std::int64_t topic, std::int64_t i) {
    return "t" + std::to_string(topic) + "w" + std::to_string(i);
}

// Zipf-ish draw over the topic word pool.
std::string draw_topic_word(Rng& rng, std::int64_t topic, std::int64_t pool,
                            const std::vector<double>& cumulative) {
    const double u = rng.next_double() * cumulative.back();
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    std::int64_t idx = it - cumulative.begin();
    if (idx >= pool) idx = pool - 1;
    return topic_word(topic, idx);
}

std::string pad_num(std::int64_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

SynthOutput generate_synthetic_log(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    SynthOutput out;
    Log& log = out.log;
    PlantedTruth& truth = out.truth;

    std::vector<double> zipf_cum(static_cast<std::size_t>(cfg.words_per_topic));
    {
        double acc = 0.0;
        for (std::int64_t i = 0; i < cfg.words_per_topic; ++i) {
            acc += 1.0 / (1.0 + static_cast<double>(i));
            zipf_cum[static_cast<std::size_t>(i)] = acc;
        }
    }

    std::int64_t unique_seq = 0;
    const auto add_doc = [&](const std::string& id, std::vector<std::string> words,
                             std::int64_t topic) {
        Document d;
        d.doc_id = id;
        d.words = std::move(words);
        log.corpus.emplace(id, std::move(d));
        truth.doc_topic[id] = topic;
    };

    // Topical documents: topic words plus one unique "handle" word that makes
    // re-finding queries retrievable.
    std::map<std::string, std::string> doc_handle;
    for (std::int64_t t = 0; t < cfg.n_topics; ++t) {
        for (std::int64_t k = 0; k < cfg.docs_per_topic; ++k) {
            const std::string id = "dt" + std::to_string(t) + "k" + pad_num(k, 3);
            const std::int64_t len =
                cfg.doc_len_min + static_cast<std::int64_t>(rng.next_below(
                                      static_cast<std::uint64_t>(cfg.doc_len_max -
                                                                 cfg.doc_len_min + 1)));
            std::vector<std::string> words;
            for (std::int64_t i = 0; i + 1 < len; ++i) {
                words.push_back(draw_topic_word(rng, t, cfg.words_per_topic, zipf_cum));
            }
            const std::string handle = "uq" + std::to_string(unique_seq++);
            words.push_back(handle);
            doc_handle[id] = handle;
            add_doc(id, std::move(words), t);
        }
    }

    // Ambiguous documents: equal length, the ambiguous word exactly once, so
    // BM25 ties across both intents.
    std::vector<AmbPools> amb(static_cast<std::size_t>(cfg.n_ambiguous_queries));
    std::set<std::string> late_docs;
    for (std::int64_t j = 0; j < cfg.n_ambiguous_queries; ++j) {
        AmbPools& pools = amb[static_cast<std::size_t>(j)];
        pools.intents[0] = j % cfg.n_topics;
        pools.intents[1] = (j + 1) % cfg.n_topics;
        const std::string amb_word = "amb" + std::to_string(j);
        truth.query_intents[amb_word] = {pools.intents[0], pools.intents[1]};
        for (int side = 0; side < 2; ++side) {
            const std::int64_t topic = pools.intents[side];
            for (const auto& [tag, count, bucket] :
                 {std::tuple{"e", cfg.amb_docs_early, &pools.early[side]},
                  std::tuple{"l", cfg.amb_docs_late, &pools.late[side]}}) {
                for (std::int64_t k = 0; k < count; ++k) {
                    const std::string id = "da" + std::to_string(j) + "s" +
                                           std::to_string(side) + tag + pad_num(k, 2);
                    std::vector<std::string> words;
                    for (std::int64_t i = 0; i + 2 < cfg.amb_doc_len; ++i) {
                        words.push_back(draw_topic_word(rng, topic, cfg.words_per_topic,
                                                        zipf_cum));
                    }
                    words.push_back(amb_word);
                    words.push_back("uq" + std::to_string(unique_seq++));
                    add_doc(id, std::move(words), topic);
                    bucket->push_back(id);
                    if (tag[0] == 'l') late_docs.insert(id);
                }
            }
        }
    }

    Bm25Index index(log.corpus);

    const std::int64_t span_secs = cfg.span_weeks * 7 * 86400;
    const std::int64_t t_base = 1000000;
    const double late_cut = 31.0 / 39.0 + 0.001;  // past the train boundary, with margin

    struct UserState {
        std::int64_t topic = 0;
        std::int64_t amb_cursor = 0;
        std::vector<std::string> clicked_topical;
        std::int64_t amb_clicks = 0;
        std::int64_t amb_clicks_off = 0;
    };

    for (std::int64_t u = 0; u < cfg.n_users; ++u) {
        const std::string user_id = "u" + pad_num(u, 3);
        UserState state;
        state.topic = u % cfg.n_topics;
        for (std::int64_t j = 0; j < cfg.n_ambiguous_queries; ++j) {
            const AmbPools& pools = amb[static_cast<std::size_t>(j)];
            std::int64_t pref;
            if (state.topic == pools.intents[0]) pref = pools.intents[0];
            else if (state.topic == pools.intents[1]) pref = pools.intents[1];
            else pref = pools.intents[(u + j) % 2];
            truth.user_intent[user_id]["amb" + std::to_string(j)] = pref;
        }

        std::int64_t session_left = 0;
        std::int64_t session_topic = state.topic;
        std::vector<QueryEvent>& events = log.events[user_id];

        for (std::int64_t e = 0; e < cfg.queries_per_user; ++e) {
            double f = (static_cast<double>(e) + 0.05 + 0.9 * rng.next_double()) /
                       static_cast<double>(cfg.queries_per_user);
            if (u == 0 && e == 0) f = 0.0;  // pin the realized span to the plan
            if (u == cfg.n_users - 1 && e == cfg.queries_per_user - 1) f = 1.0;

            if (session_left == 0) {
                session_left = 2 + static_cast<std::int64_t>(rng.next_below(3));
                session_topic = rng.bernoulli(cfg.offtopic_session_rate) && cfg.n_topics > 1
                                    ? (state.topic + 1 +
                                       static_cast<std::int64_t>(
                                           rng.next_below(static_cast<std::uint64_t>(
                                               cfg.n_topics - 1)))) %
                                          cfg.n_topics
                                    : state.topic;
            }
            --session_left;

            QueryEvent ev;
            ev.user_id = user_id;
            ev.timestamp = t_base + static_cast<std::int64_t>(
                                        std::floor(f * static_cast<double>(span_secs)));

            const bool ambiguous = cfg.n_ambiguous_queries > 0 &&
                                   rng.bernoulli(cfg.ambiguous_fraction);
            std::vector<std::string> clicked;

            if (ambiguous) {
                const std::int64_t j = state.amb_cursor++ % cfg.n_ambiguous_queries;
                const AmbPools& pools = amb[static_cast<std::size_t>(j)];
                const std::string amb_word = "amb" + std::to_string(j);
                ev.query = amb_word;
                ev.query_words = {amb_word};

                const bool late = f >= late_cut;
                const std::int64_t per_side = cfg.candidates_k / 2;
                std::vector<std::string> side_docs[2];
                for (int side = 0; side < 2; ++side) {
                    const auto& pool = late ? pools.late[side] : pools.early[side];
                    for (std::size_t pick :
                         rng.sample_indices(pool.size(), static_cast<std::size_t>(per_side))) {
                        side_docs[side].push_back(pool[pick]);
                    }
                }
                const int first_side = rng.bernoulli(0.5) ? 0 : 1;
                std::vector<std::string> ordered;
                for (std::int64_t k = 0; k < per_side; ++k) {
                    ordered.push_back(side_docs[first_side][static_cast<std::size_t>(k)]);
                    ordered.push_back(side_docs[1 - first_side][static_cast<std::size_t>(k)]);
                }

                const std::int64_t pref = truth.user_intent[user_id][amb_word];
                std::int64_t click_topic = pref;
                if (cfg.noise_click_rate > 0.0 && rng.bernoulli(cfg.noise_click_rate)) {
                    // Noise stays capped so each user keeps >= 95% of
                    // ambiguous clicks on the preferred intent.
                    const double off_after = static_cast<double>(state.amb_clicks_off + 1) /
                                             static_cast<double>(state.amb_clicks + 1);
                    if (off_after <= 0.05) {
                        click_topic = pref == pools.intents[0] ? pools.intents[1]
                                                               : pools.intents[0];
                        ++out.stats.n_noise_clicks;
                    }
                }
                const bool multi = rng.bernoulli(cfg.multi_click_rate);
                std::int64_t found = 0;
                for (const auto& id : ordered) {
                    if (truth.doc_topic[id] != click_topic) continue;
                    clicked.push_back(id);
                    ++found;
                    if (found >= (multi ? 2 : 1)) break;
                }
                if (cfg.position_bias > 0.0 && rng.bernoulli(cfg.position_bias)) {
                    clicked.assign(1, ordered.front());
                }
                for (const auto& id : clicked) {
                    ++state.amb_clicks;
                    if (truth.doc_topic[id] != pref) ++state.amb_clicks_off;
                }
                for (std::size_t r = 0; r < ordered.size(); ++r) {
                    Candidate c;
                    c.doc_id = ordered[r];
                    c.orig_rank = static_cast<int>(r) + 1;
                    ev.candidates.push_back(std::move(c));
                }
                ++out.stats.n_ambiguous_events;
            } else {
                // Topical event, possibly a re-find of an earlier clicked doc.
                bool refind = rng.bernoulli(cfg.refind_rate) && !state.clicked_topical.empty();
                std::string target;
                std::vector<std::string> qwords;
                if (refind) {
                    target = state.clicked_topical[rng.next_below(state.clicked_topical.size())];
                    qwords.push_back(doc_handle.at(target));
                    if (rng.bernoulli(0.7)) {
                        const auto& dwords = log.corpus.at(target).words;
                        qwords.push_back(dwords[rng.next_below(dwords.size() - 1)]);
                    }
                } else {
                    const std::int64_t n_words = 1 + static_cast<std::int64_t>(rng.next_below(3));
                    std::set<std::string> seen;
                    for (std::int64_t i = 0; i < n_words; ++i) {
                        seen.insert(draw_topic_word(rng, session_topic, cfg.words_per_topic,
                                                    zipf_cum));
                    }
                    qwords.assign(seen.begin(), seen.end());
                }
                ev.query_words = qwords;
                ev.query = join_words(qwords);

                auto scored = index.top_k(qwords, static_cast<std::size_t>(cfg.candidates_k) +
                                                      late_docs.size());
                std::vector<std::string> cands;
                for (const auto& sd : scored) {
                    if (late_docs.count(sd.doc_id)) continue;  // test pool never surfaces here
                    cands.push_back(sd.doc_id);
                    if (cands.size() == static_cast<std::size_t>(cfg.candidates_k)) break;
                }
                if (cands.empty()) continue;  // cannot happen with pool-drawn words

                if (refind) {
                    if (std::find(cands.begin(), cands.end(), target) == cands.end()) {
                        refind = false;  // fall back to a plain topical click
                    }
                }
                if (refind) {
                    clicked.push_back(target);
                    ++out.stats.n_refind_events;
                } else {
                    const bool multi = rng.bernoulli(cfg.multi_click_rate);
                    for (const auto& id : cands) {
                        if (truth.doc_topic[id] != session_topic) continue;
                        clicked.push_back(id);
                        if (clicked.size() == (multi ? 2u : 1u)) break;
                    }
                    if (clicked.empty()) clicked.push_back(cands.front());
                    for (const auto& id : clicked) {
                        if (doc_handle.count(id)) state.clicked_topical.push_back(id);
                    }
                }
                for (std::size_t r = 0; r < cands.size(); ++r) {
                    Candidate c;
                    c.doc_id = cands[r];
                    c.orig_rank = static_cast<int>(r) + 1;
                    ev.candidates.push_back(std::move(c));
                }
            }

            for (auto& c : ev.candidates) {
                if (std::find(clicked.begin(), clicked.end(), c.doc_id) == clicked.end()) {
                    continue;
                }
                c.clicked = true;
                if (cfg.dwell_mode == "timed") {
                    c.dwell_secs = rng.bernoulli(cfg.dwell_unsat_rate)
                                       ? static_cast<int>(rng.next_below(30))
                                       : 30 + static_cast<int>(rng.next_below(270));
                }
            }
            if (clicked.size() > 1) ++out.stats.n_multi_click_events;
            ++out.stats.n_events;
            events.push_back(std::move(ev));
        }
    }

    log.report.n_events = out.stats.n_events;
    log.report.n_documents = static_cast<std::int64_t>(log.corpus.size());
    return out;
}

SynthStats generate_to_files(const SynthConfig& cfg, const std::string& events_path,
                             const std::string& docs_path, const std::string& truth_path) {
    SynthOutput out = generate_synthetic_log(cfg);
    emit_log(out.log, events_path, docs_path);
    out.truth.save(truth_path);
    return out.stats;
}

}  // namespace pssl
