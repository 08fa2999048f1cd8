#include "pssl/log.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace pssl {

std::vector<const Candidate*> QueryEvent::clicks() const {
    std::vector<const Candidate*> out;
    for (const auto& c : candidates)
        if (c.clicked) out.push_back(&c);
    return out;
}

UserHistory UserHistory::from_events(const std::string& user_id,
                                     const std::vector<const QueryEvent*>& events) {
    UserHistory h;
    h.user_id = user_id;
    int prev_session = -1;
    for (const QueryEvent* e : events) {
        if (e->session_id != prev_session) {
            h.session_boundaries.push_back(h.behaviors.size());
            prev_session = e->session_id;
        }
        h.behaviors.push_back({BehaviorKind::Query, e->query, e->session_id});
        for (const Candidate* c : e->clicks()) {
            h.behaviors.push_back({BehaviorKind::ClickedDoc, c->doc_id, e->session_id});
        }
    }
    return h;
}

void Vocabulary::save(const std::string& path) const {
    std::ostringstream out;
    for (std::size_t i = 3; i < id_to_token.size(); ++i) {
        out << id_to_token[i] << '\t' << i << '\t' << counts[i] << '\n';
    }
    write_file(path, out.str());
}

Vocabulary Vocabulary::load(const std::string& path) {
    Vocabulary v;
    v.id_to_token = {"<pad>", "<unk>", "<user>"};
    v.counts = {0, 0, 0};
    std::istringstream in(read_file(path));
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_tsv_line(line);
        if (fields.size() != 3) {
            throw DataError("vocab file " + path + ": malformed line " + std::to_string(line_no));
        }
        const auto id = static_cast<std::int32_t>(std::stol(fields[1]));
        if (id != static_cast<std::int32_t>(v.id_to_token.size())) {
            throw DataError("vocab file " + path + ": non-contiguous id at line " +
                            std::to_string(line_no));
        }
        v.token_to_id[fields[0]] = id;
        v.id_to_token.push_back(fields[0]);
        v.counts.push_back(std::stoll(fields[2]));
    }
    return v;
}

std::vector<const QueryEvent*> Log::all_events() const {
    std::vector<const QueryEvent*> out;
    for (const auto& [user, evs] : events)
        for (const auto& e : evs) out.push_back(&e);
    return out;
}

std::int64_t Log::min_timestamp() const {
    std::int64_t m = std::numeric_limits<std::int64_t>::max();
    for (const auto& [user, evs] : events)
        for (const auto& e : evs) m = std::min(m, e.timestamp);
    return m;
}

std::int64_t Log::max_timestamp() const {
    std::int64_t m = std::numeric_limits<std::int64_t>::min();
    for (const auto& [user, evs] : events)
        for (const auto& e : evs) m = std::max(m, e.timestamp);
    return m;
}

const Document& Log::doc(const std::string& doc_id) const {
    auto it = corpus.find(doc_id);
    if (it == corpus.end()) throw DataError("unknown doc_id: " + doc_id);
    return it->second;
}

namespace {

struct RawRow {
    std::string user_id;
    std::int64_t timestamp;
    std::string query;
    Candidate candidate;
    std::int64_t line_no;
};

bool parse_int64(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stoll(s, &pos);
    } catch (...) {
        return false;
    }
    return pos == s.size();
}

// Validates candidate set: ranks are a permutation of 1..n, clicks land on
// candidates, doc ids are known. Returns false to drop the event.
bool finalize_event(QueryEvent& e, const std::map<std::string, Document>& corpus) {
    if (e.candidates.empty() || e.query_words.empty()) return false;
    std::sort(e.candidates.begin(), e.candidates.end(),
              [](const Candidate& a, const Candidate& b) { return a.orig_rank < b.orig_rank; });
    std::set<std::string> seen;
    for (std::size_t i = 0; i < e.candidates.size(); ++i) {
        const Candidate& c = e.candidates[i];
        if (c.orig_rank != static_cast<int>(i) + 1) return false;
        if (!corpus.count(c.doc_id)) return false;
        if (!seen.insert(c.doc_id).second) return false;
    }
    return true;
}

}  // namespace

Log ingest_log(const std::string& events_path, const std::string& docs_path) {
    Log log;

    {
        std::istringstream in(read_file(docs_path));
        std::string line;
        std::int64_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            auto fields = split_tsv_line(line);
            if (fields.size() != 2 || fields[0].empty()) {
                throw DataError("docs file " + docs_path + ": malformed line " +
                                std::to_string(line_no));
            }
            Document d;
            d.doc_id = fields[0];
            d.words = split_words(normalize_text(fields[1]));
            if (d.words.empty()) {
                ++log.report.n_dropped_documents;
                continue;
            }
            auto it = log.corpus.find(d.doc_id);
            if (it != log.corpus.end()) {
                if (it->second.words != d.words) {
                    throw DataError("docs file " + docs_path + ": duplicate doc_id '" + d.doc_id +
                                    "' with conflicting text at line " + std::to_string(line_no));
                }
                continue;
            }
            log.corpus.emplace(d.doc_id, std::move(d));
        }
        log.report.n_documents = static_cast<std::int64_t>(log.corpus.size());
    }

    std::vector<RawRow> rows;
    {
        std::istringstream in(read_file(events_path));
        std::string line;
        std::int64_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            auto fields = split_tsv_line(line);
            std::int64_t ts, rank, clicked, dwell;
            if (fields.size() != 7 || fields[0].empty() || !parse_int64(fields[1], ts) ||
                !parse_int64(fields[4], rank) || !parse_int64(fields[5], clicked) ||
                !parse_int64(fields[6], dwell) || (clicked != 0 && clicked != 1) || rank < 1) {
                ++log.report.n_dropped_lines;
                continue;
            }
            RawRow r;
            r.user_id = fields[0];
            r.timestamp = ts;
            r.query = normalize_text(fields[2]);
            r.candidate.doc_id = fields[3];
            r.candidate.orig_rank = static_cast<int>(rank);
            r.candidate.clicked = clicked == 1;
            r.candidate.dwell_secs = static_cast<int>(dwell);
            r.line_no = line_no;
            rows.push_back(std::move(r));
        }
    }

    // Group rows into events by (user, timestamp, query); stable sort keeps
    // input order as the final tiebreak so ingest(emit(.)) is a fixed point.
    std::stable_sort(rows.begin(), rows.end(), [](const RawRow& a, const RawRow& b) {
        if (a.user_id != b.user_id) return a.user_id < b.user_id;
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        return a.query < b.query;
    });

    std::size_t i = 0;
    while (i < rows.size()) {
        std::size_t j = i;
        QueryEvent e;
        e.user_id = rows[i].user_id;
        e.timestamp = rows[i].timestamp;
        e.query = rows[i].query;
        e.query_words = split_words(e.query);
        while (j < rows.size() && rows[j].user_id == e.user_id &&
               rows[j].timestamp == e.timestamp && rows[j].query == e.query) {
            e.candidates.push_back(rows[j].candidate);
            ++j;
        }
        // A click on a doc outside the candidate set cannot happen with this
        // row schema; the invariant trap here is rank permutations and
        // unknown documents.
        if (finalize_event(e, log.corpus)) {
            log.events[e.user_id].push_back(std::move(e));
            ++log.report.n_events;
        } else {
            ++log.report.n_dropped_events;
        }
        i = j;
    }

    return log;
}

void emit_log(const Log& log, const std::string& events_path, const std::string& docs_path) {
    {
        std::ostringstream out;
        for (const auto& [id, d] : log.corpus) {
            out << id << '\t' << join_words(d.words) << '\n';
        }
        write_file(docs_path, out.str());
    }
    {
        std::ostringstream out;
        for (const auto& [user, evs] : log.events) {
            for (const auto& e : evs) {
                for (const auto& c : e.candidates) {
                    out << user << '\t' << e.timestamp << '\t' << e.query << '\t' << c.doc_id
                        << '\t' << c.orig_rank << '\t' << (c.clicked ? 1 : 0) << '\t'
                        << c.dwell_secs << '\n';
                }
            }
        }
        write_file(events_path, out.str());
    }
}

double jaccard_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::set<std::string> sa(a.begin(), a.end());
    std::set<std::string> sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& w : sa) inter += sb.count(w);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void sessionize(Log& log, double sim_threshold, std::int64_t max_gap_secs) {
    for (auto& [user, evs] : log.events) {
        int session = -1;
        for (std::size_t i = 0; i < evs.size(); ++i) {
            bool same = false;
            if (i > 0) {
                same = jaccard_similarity(evs[i - 1].query_words, evs[i].query_words) >=
                       sim_threshold;
                if (same && max_gap_secs > 0) {
                    same = evs[i].timestamp - evs[i - 1].timestamp <= max_gap_secs;
                }
            }
            if (!same) ++session;
            evs[i].session_id = session;
        }
    }
}

std::optional<double> click_entropy(const std::string& query, const Log& log) {
    std::map<std::string, std::int64_t> click_counts;
    std::int64_t total = 0;
    for (const auto& [user, evs] : log.events) {
        for (const auto& e : evs) {
            if (e.query != query) continue;
            for (const Candidate* c : e.clicks()) {
                ++click_counts[c->doc_id];
                ++total;
            }
        }
    }
    if (total == 0) return std::nullopt;
    double h = 0.0;
    for (const auto& [doc, n] : click_counts) {
        const double p = static_cast<double>(n) / static_cast<double>(total);
        h -= p * std::log2(p);
    }
    return h < 0.0 ? 0.0 : h;
}

std::map<std::string, double> all_click_entropies(const Log& log) {
    std::map<std::string, std::map<std::string, std::int64_t>> counts;
    for (const auto& [user, evs] : log.events) {
        for (const auto& e : evs) {
            for (const Candidate* c : e.clicks()) ++counts[e.query][c->doc_id];
        }
    }
    std::map<std::string, double> out;
    for (const auto& [q, docs] : counts) {
        std::int64_t total = 0;
        for (const auto& [d, n] : docs) total += n;
        double h = 0.0;
        for (const auto& [d, n] : docs) {
            const double p = static_cast<double>(n) / static_cast<double>(total);
            h -= p * std::log2(p);
        }
        out[q] = h < 0.0 ? 0.0 : h;
    }
    return out;
}

SplitResult temporal_split(const Log& log) {
    if (log.report.n_events == 0 && log.events.empty()) {
        throw DataError("temporal_split: empty log");
    }
    constexpr std::int64_t kWeek = 7 * 86400;
    const std::int64_t t0 = log.min_timestamp();
    const std::int64_t t1 = log.max_timestamp();
    const std::int64_t span = t1 - t0;
    if ((t1 / kWeek) - (t0 / kWeek) < 1) {
        throw DataError("temporal_split: time span too short (needs at least two week buckets)");
    }

    SplitResult r;
    const double s = static_cast<double>(span);
    r.cut_background = static_cast<double>(t0) + s * (5.0 / 13.0);
    r.cut_train = static_cast<double>(t0) + s * (31.0 / 39.0);
    r.cut_valid = static_cast<double>(t0) + s * (35.0 / 39.0);

    for (const auto& [user, evs] : log.events) {
        std::vector<QueryEvent> bg, tr, va, te;
        for (const auto& e : evs) {
            const double t = static_cast<double>(e.timestamp);
            if (t < r.cut_background) bg.push_back(e);
            else if (t < r.cut_train) tr.push_back(e);
            else if (t < r.cut_valid) va.push_back(e);
            else te.push_back(e);
        }
        if (bg.empty() || tr.empty()) {
            ++r.removed_users;
            continue;
        }
        r.background.events[user] = std::move(bg);
        r.train.events[user] = std::move(tr);
        if (!va.empty()) r.valid.events[user] = std::move(va);
        if (!te.empty()) r.test.events[user] = std::move(te);
    }
    r.background.corpus = log.corpus;
    r.train.corpus = log.corpus;
    r.valid.corpus = log.corpus;
    r.test.corpus = log.corpus;
    for (Log* part : {&r.background, &r.train, &r.valid, &r.test}) {
        part->report.n_events = 0;
        for (const auto& [u, evs] : part->events)
            part->report.n_events += static_cast<std::int64_t>(evs.size());
        part->report.n_documents = static_cast<std::int64_t>(part->corpus.size());
    }
    if (r.background.report.n_events == 0 || r.train.report.n_events == 0) {
        throw DataError("temporal_split: no user has both background and train events");
    }
    return r;
}

Vocabulary build_vocab(const Log& background, const Log& train, std::int64_t min_count) {
    std::map<std::string, std::int64_t> freq;
    std::set<std::string> used_docs;
    for (const Log* part : {&background, &train}) {
        for (const auto& [user, evs] : part->events) {
            for (const auto& e : evs) {
                for (const auto& w : e.query_words) ++freq[w];
                for (const auto& c : e.candidates) used_docs.insert(c.doc_id);
            }
        }
    }
    // Each referenced document's text counts once, however many impressions
    // point at it.
    for (const auto& doc_id : used_docs) {
        auto it = background.corpus.find(doc_id);
        if (it == background.corpus.end()) it = train.corpus.find(doc_id);
        if (it == train.corpus.end()) continue;
        for (const auto& w : it->second.words) ++freq[w];
    }

    std::vector<std::pair<std::string, std::int64_t>> kept;
    for (const auto& [w, n] : freq)
        if (n >= min_count) kept.emplace_back(w, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    v.id_to_token = {"<pad>", "<unk>", "<user>"};
    v.counts = {0, 0, 0};
    for (const auto& [w, n] : kept) {
        v.token_to_id[w] = static_cast<std::int32_t>(v.id_to_token.size());
        v.id_to_token.push_back(w);
        v.counts.push_back(n);
    }
    return v;
}

void tokenize_with(Log& log, const Vocabulary& vocab) {
    for (auto& [id, d] : log.corpus) {
        d.token_ids.clear();
        d.token_ids.reserve(d.words.size());
        for (const auto& w : d.words) d.token_ids.push_back(vocab.lookup(w));
    }
    for (auto& [user, evs] : log.events) {
        for (auto& e : evs) {
            e.query_ids.clear();
            e.query_ids.reserve(e.query_words.size());
            for (const auto& w : e.query_words) e.query_ids.push_back(vocab.lookup(w));
        }
    }
}

HistoryView history_views(const std::vector<QueryEvent>& user_events, std::size_t event_idx,
                          std::size_t max_long, std::size_t max_short) {
    if (event_idx >= user_events.size()) throw InternalError("history_views: index out of range");
    const int current_session = user_events[event_idx].session_id;
    HistoryView view;
    for (std::size_t i = 0; i < event_idx; ++i) {
        const QueryEvent& e = user_events[i];
        auto& dst = e.session_id == current_session ? view.short_term : view.long_term;
        dst.push_back({BehaviorKind::Query, e.query, e.session_id});
        for (const Candidate* c : e.clicks()) {
            dst.push_back({BehaviorKind::ClickedDoc, c->doc_id, e.session_id});
        }
    }
    if (view.long_term.size() > max_long) {
        view.long_term.erase(view.long_term.begin(),
                             view.long_term.end() - static_cast<std::ptrdiff_t>(max_long));
    }
    if (view.short_term.size() > max_short) {
        view.short_term.erase(view.short_term.begin(),
                              view.short_term.end() - static_cast<std::ptrdiff_t>(max_short));
    }
    return view;
}

DatasetStats log_stats(const Log& log) {
    DatasetStats s;
    std::int64_t token_sum = 0, click_sum = 0;
    for (const auto& [user, evs] : log.events) {
        if (evs.empty()) continue;
        ++s.n_users;
        std::set<int> sessions;
        for (const auto& e : evs) {
            ++s.n_queries;
            sessions.insert(e.session_id);
            token_sum += static_cast<std::int64_t>(e.query_words.size());
            click_sum += static_cast<std::int64_t>(e.clicks().size());
        }
        s.n_sessions += static_cast<std::int64_t>(sessions.size());
    }
    if (s.n_queries > 0) {
        s.avg_query_length = static_cast<double>(token_sum) / static_cast<double>(s.n_queries);
        s.avg_clicks_per_query = static_cast<double>(click_sum) / static_cast<double>(s.n_queries);
    }
    return s;
}

Log merge_logs(const std::vector<const Log*>& parts) {
    Log out;
    for (const Log* p : parts) {
        for (const auto& [id, d] : p->corpus) out.corpus.emplace(id, d);
        for (const auto& [user, evs] : p->events) {
            auto& dst = out.events[user];
            dst.insert(dst.end(), evs.begin(), evs.end());
        }
    }
    for (auto& [user, evs] : out.events) {
        std::stable_sort(evs.begin(), evs.end(), [](const QueryEvent& a, const QueryEvent& b) {
            return a.timestamp < b.timestamp;
        });
    }
    out.report.n_documents = static_cast<std::int64_t>(out.corpus.size());
    for (const auto& [user, evs] : out.events)
        out.report.n_events += static_cast<std::int64_t>(evs.size());
    return out;
}

}  // namespace pssl
