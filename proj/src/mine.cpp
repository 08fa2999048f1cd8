#include "pssl/mine.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace pssl {

const char* augment_strategy_name(AugmentStrategy s) {
    switch (s) {
        case AugmentStrategy::BehaviorDelete: return "behavior-delete";
        case AugmentStrategy::BehaviorReorder: return "behavior-reorder";
        case AugmentStrategy::SessionDelete: return "session-delete";
    }
    throw InternalError("unknown augmentation strategy");
}

AugmentStrategy augment_strategy_from_name(const std::string& name) {
    if (name == "behavior-delete") return AugmentStrategy::BehaviorDelete;
    if (name == "behavior-reorder") return AugmentStrategy::BehaviorReorder;
    if (name == "session-delete") return AugmentStrategy::SessionDelete;
    throw UsageError("unknown augmentation strategy: " + name);
}

std::vector<DocPair> mine_document_pairs(const Log& log) {
    std::vector<DocPair> out;
    for (const auto& [user, evs] : log.events) {
        for (const auto& e : evs) {
            const auto clicked = e.clicks();
            for (std::size_t i = 0; i < clicked.size(); ++i) {
                for (std::size_t j = i + 1; j < clicked.size(); ++j) {
                    out.push_back({user, e.query, clicked[i]->doc_id, clicked[j]->doc_id});
                }
            }
        }
    }
    return out;
}

std::vector<QueryPair> mine_query_pairs(const Log& log) {
    std::vector<QueryPair> out;
    for (const auto& [user, evs] : log.events) {
        // doc -> ordered set of distinct query strings that clicked it
        std::map<std::string, std::set<std::string>> by_doc;
        for (const auto& e : evs) {
            for (const Candidate* c : e.clicks()) by_doc[c->doc_id].insert(e.query);
        }
        for (const auto& [doc, queries] : by_doc) {
            if (queries.size() < 2) continue;
            std::vector<std::string> qs(queries.begin(), queries.end());
            for (std::size_t i = 0; i < qs.size(); ++i) {
                for (std::size_t j = i + 1; j < qs.size(); ++j) {
                    out.push_back({user, qs[i], qs[j], doc});
                }
            }
        }
    }
    return out;
}

std::vector<UserPair> mine_user_pairs(const Log& log, double entropy_threshold,
                                      std::size_t max_long, std::size_t max_short) {
    const auto entropies = all_click_entropies(log);

    // (query, doc) -> users who clicked doc under query, with the index of
    // the first such event.
    std::map<std::pair<std::string, std::string>, std::map<std::string, std::size_t>> anchors;
    for (const auto& [user, evs] : log.events) {
        for (std::size_t i = 0; i < evs.size(); ++i) {
            for (const Candidate* c : evs[i].clicks()) {
                auto& users = anchors[{evs[i].query, c->doc_id}];
                users.emplace(user, i);  // keeps the earliest event
            }
        }
    }

    std::vector<UserPair> out;
    for (const auto& [key, users] : anchors) {
        const auto& [query, doc] = key;
        auto hit = entropies.find(query);
        if (hit == entropies.end() || !(hit->second > entropy_threshold)) continue;
        if (users.size() < 2) continue;
        std::vector<std::pair<std::string, std::size_t>> us(users.begin(), users.end());
        for (std::size_t a = 0; a < us.size(); ++a) {
            for (std::size_t b = a + 1; b < us.size(); ++b) {
                UserPair p;
                p.user_i = us[a].first;
                p.user_j = us[b].first;
                p.query = query;
                p.shared_doc = doc;
                p.query_words = split_words(query);
                p.history_i = history_views(log.events.at(p.user_i), us[a].second, max_long,
                                            max_short);
                p.history_j = history_views(log.events.at(p.user_j), us[b].second, max_long,
                                            max_short);
                out.push_back(std::move(p));
            }
        }
    }
    return out;
}

std::vector<SapInstance> mine_sap_instances(const Log& log, std::size_t instances_per_user,
                                            std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SapInstance> out;
    for (const auto& [user, evs] : log.events) {
        if (evs.empty()) continue;
        for (std::size_t k = 0; k < instances_per_user; ++k) {
            SapInstance inst;
            inst.user_id = user;
            inst.strategy_i = static_cast<AugmentStrategy>(rng.next_below(3));
            inst.strategy_j = static_cast<AugmentStrategy>(rng.next_below(3));
            inst.seed_i = rng.fork();
            inst.seed_j = rng.fork();
            out.push_back(std::move(inst));
        }
    }
    return out;
}

namespace {

std::vector<std::vector<std::size_t>> session_groups(const UserHistory& h) {
    std::vector<std::vector<std::size_t>> groups;
    int prev = std::numeric_limits<int>::min();
    for (std::size_t i = 0; i < h.behaviors.size(); ++i) {
        if (groups.empty() || h.behaviors[i].session_id != prev) {
            groups.emplace_back();
            prev = h.behaviors[i].session_id;
        }
        groups.back().push_back(i);
    }
    return groups;
}

UserHistory rebuild(const UserHistory& base, const std::vector<Behavior>& behaviors) {
    UserHistory out;
    out.user_id = base.user_id;
    out.behaviors = behaviors;
    int prev = std::numeric_limits<int>::min();
    for (std::size_t i = 0; i < out.behaviors.size(); ++i) {
        if (out.behaviors[i].session_id != prev) {
            out.session_boundaries.push_back(i);
            prev = out.behaviors[i].session_id;
        }
    }
    return out;
}

}  // namespace

UserHistory augment_sequence(const UserHistory& history, AugmentStrategy strategy, double ratio,
                             std::uint64_t seed) {
    const std::size_t n = history.behaviors.size();
    if (n == 0) throw DataError("augment_sequence: empty history");
    Rng rng(seed);

    switch (strategy) {
        case AugmentStrategy::BehaviorDelete: {
            std::size_t k = static_cast<std::size_t>(ratio * static_cast<double>(n));
            if (k >= n) k = n - 1;  // always keep at least one behavior
            const auto removed = rng.sample_indices(n, k);
            std::vector<Behavior> kept;
            kept.reserve(n - k);
            std::size_t r = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (r < removed.size() && removed[r] == i) {
                    ++r;
                    continue;
                }
                kept.push_back(history.behaviors[i]);
            }
            return rebuild(history, kept);
        }
        case AugmentStrategy::BehaviorReorder: {
            const std::size_t k = static_cast<std::size_t>(ratio * static_cast<double>(n));
            std::vector<Behavior> behaviors = history.behaviors;
            if (k >= 2) {
                const auto positions = rng.sample_indices(n, k);
                std::vector<std::size_t> perm(positions.size());
                for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
                rng.shuffle(perm);
                std::vector<Behavior> selected(positions.size());
                for (std::size_t i = 0; i < positions.size(); ++i)
                    selected[i] = history.behaviors[positions[i]];
                for (std::size_t i = 0; i < positions.size(); ++i)
                    behaviors[positions[i]] = selected[perm[i]];
            }
            return rebuild(history, behaviors);
        }
        case AugmentStrategy::SessionDelete: {
            auto groups = session_groups(history);
            std::vector<bool> removed(groups.size(), false);
            std::size_t n_removed_sessions = 0, n_removed_behaviors = 0;
            while (groups.size() - n_removed_sessions > 1 &&
                   static_cast<double>(n_removed_behaviors) < ratio * static_cast<double>(n)) {
                std::size_t pick = rng.next_below(groups.size() - n_removed_sessions);
                std::size_t gi = 0;
                for (;; ++gi) {
                    if (removed[gi]) continue;
                    if (pick == 0) break;
                    --pick;
                }
                removed[gi] = true;
                ++n_removed_sessions;
                n_removed_behaviors += groups[gi].size();
            }
            std::vector<Behavior> kept;
            for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                if (removed[gi]) continue;
                for (std::size_t idx : groups[gi]) kept.push_back(history.behaviors[idx]);
            }
            return rebuild(history, kept);
        }
    }
    throw InternalError("unknown augmentation strategy");
}

namespace {

std::string escape_field(const std::string& s) { return s; }  // normalized text has no tabs

}  // namespace

void save_doc_pairs(const std::vector<DocPair>& pairs, const std::string& path) {
    std::ostringstream out;
    for (const auto& p : pairs) {
        out << p.user_id << '\t' << escape_field(p.query) << '\t' << p.doc_i << '\t' << p.doc_j
            << '\n';
    }
    write_file(path, out.str());
}

void save_query_pairs(const std::vector<QueryPair>& pairs, const std::string& path) {
    std::ostringstream out;
    for (const auto& p : pairs) {
        out << p.user_id << '\t' << escape_field(p.query_i) << '\t' << escape_field(p.query_j)
            << '\t' << p.shared_doc << '\n';
    }
    write_file(path, out.str());
}

void save_sap_instances(const std::vector<SapInstance>& xs, const std::string& path) {
    std::ostringstream out;
    for (const auto& x : xs) {
        out << x.user_id << '\t' << augment_strategy_name(x.strategy_i) << '\t' << x.seed_i << '\t'
            << augment_strategy_name(x.strategy_j) << '\t' << x.seed_j << '\n';
    }
    write_file(path, out.str());
}

void save_user_pairs(const std::vector<UserPair>& pairs, const std::string& path) {
    std::ostringstream out;
    for (const auto& p : pairs) {
        out << p.user_i << '\t' << p.user_j << '\t' << escape_field(p.query) << '\t'
            << p.shared_doc << '\n';
    }
    write_file(path, out.str());
}

namespace {

std::vector<std::vector<std::string>> read_tsv(const std::string& path, std::size_t n_fields) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(read_file(path));
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_tsv_line(line);
        if (fields.size() != n_fields) {
            throw DataError(path + ": expected " + std::to_string(n_fields) + " fields at line " +
                            std::to_string(line_no));
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace

std::vector<DocPair> load_doc_pairs(const std::string& path) {
    std::vector<DocPair> out;
    for (auto& f : read_tsv(path, 4)) out.push_back({f[0], f[1], f[2], f[3]});
    return out;
}

std::vector<QueryPair> load_query_pairs(const std::string& path) {
    std::vector<QueryPair> out;
    for (auto& f : read_tsv(path, 4)) out.push_back({f[0], f[1], f[2], f[3]});
    return out;
}

std::vector<SapInstance> load_sap_instances(const std::string& path) {
    std::vector<SapInstance> out;
    for (auto& f : read_tsv(path, 5)) {
        SapInstance x;
        x.user_id = f[0];
        x.strategy_i = augment_strategy_from_name(f[1]);
        x.seed_i = std::stoull(f[2]);
        x.strategy_j = augment_strategy_from_name(f[3]);
        x.seed_j = std::stoull(f[4]);
        out.push_back(std::move(x));
    }
    return out;
}

std::vector<UserPair> load_user_pairs(const std::string& path, const Log& log,
                                      std::size_t max_long, std::size_t max_short) {
    std::vector<UserPair> out;
    for (auto& f : read_tsv(path, 4)) {
        UserPair p;
        p.user_i = f[0];
        p.user_j = f[1];
        p.query = f[2];
        p.shared_doc = f[3];
        p.query_words = split_words(p.query);
        for (std::string UserPair::*member : {&UserPair::user_i, &UserPair::user_j}) {
            const std::string& user = p.*member;
            auto uit = log.events.find(user);
            if (uit == log.events.end()) throw DataError(path + ": unknown user " + user);
            std::size_t anchor = uit->second.size();
            for (std::size_t i = 0; i < uit->second.size(); ++i) {
                const QueryEvent& e = uit->second[i];
                if (e.query != p.query) continue;
                bool clicked = false;
                for (const Candidate* c : e.clicks())
                    if (c->doc_id == p.shared_doc) clicked = true;
                if (clicked) {
                    anchor = i;
                    break;
                }
            }
            if (anchor == uit->second.size()) {
                throw DataError(path + ": no anchoring event for user " + user + " query '" +
                                p.query + "'");
            }
            auto view = history_views(uit->second, anchor, max_long, max_short);
            if (member == &UserPair::user_i) p.history_i = std::move(view);
            else p.history_j = std::move(view);
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace pssl
