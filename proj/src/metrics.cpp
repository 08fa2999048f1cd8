#include "pssl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pssl {

namespace {

std::vector<const RankedCandidate*> by_new_rank(const RankedList& list) {
    std::vector<const RankedCandidate*> out;
    out.reserve(list.candidates.size());
    for (const auto& c : list.candidates) out.push_back(&c);
    std::sort(out.begin(), out.end(),
              [](const RankedCandidate* a, const RankedCandidate* b) {
                  return a->new_rank < b->new_rank;
              });
    return out;
}

bool has_relevant(const RankedList& list) {
    for (const auto& c : list.candidates)
        if (c.relevant) return true;
    return false;
}

}  // namespace

double average_precision(const RankedList& list) {
    const auto ordered = by_new_rank(list);
    double ap = 0.0;
    std::int64_t n_rel = 0;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        if (ordered[i]->relevant) {
            ++n_rel;
            ap += static_cast<double>(n_rel) / static_cast<double>(i + 1);
        }
    }
    return n_rel > 0 ? ap / static_cast<double>(n_rel) : 0.0;
}

MetricsSummary compute_ranking_metrics(const std::vector<RankedList>& lists) {
    MetricsSummary s;
    double map_sum = 0.0, mrr_sum = 0.0, p1_sum = 0.0;
    for (const auto& list : lists) {
        if (!has_relevant(list)) {
            ++s.n_skipped;
            continue;
        }
        ++s.n_evaluated;
        map_sum += average_precision(list);
        const auto ordered = by_new_rank(list);
        for (std::size_t i = 0; i < ordered.size(); ++i) {
            if (ordered[i]->relevant) {
                mrr_sum += 1.0 / static_cast<double>(i + 1);
                break;
            }
        }
        if (!ordered.empty() && ordered[0]->relevant) p1_sum += 1.0;
    }
    if (s.n_evaluated > 0) {
        s.map = map_sum / static_cast<double>(s.n_evaluated);
        s.mrr = mrr_sum / static_cast<double>(s.n_evaluated);
        s.p_at_1 = p1_sum / static_cast<double>(s.n_evaluated);
    }
    return s;
}

MetricsSummary original_ranking_metrics(const std::vector<RankedList>& lists) {
    std::vector<RankedList> as_original = lists;
    for (auto& list : as_original) {
        for (auto& c : list.candidates) c.new_rank = c.orig_rank;
    }
    return compute_ranking_metrics(as_original);
}

std::optional<double> p_improve(const std::vector<RankedList>& lists) {
    std::int64_t corrected = 0, broken = 0, total = 0;
    for (const auto& list : lists) {
        for (const auto& r : list.candidates) {
            if (!r.relevant) continue;
            for (const auto& n : list.candidates) {
                if (n.relevant) continue;
                ++total;
                const bool orig_wrong = r.orig_rank > n.orig_rank;
                const bool new_wrong = r.new_rank > n.new_rank;
                if (orig_wrong && !new_wrong) ++corrected;
                if (!orig_wrong && new_wrong) ++broken;
            }
        }
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(corrected - broken) / static_cast<double>(total);
}

EntropySplitReport entropy_split_report(const std::vector<RankedList>& lists,
                                        const std::map<std::string, double>& entropies,
                                        double threshold) {
    EntropySplitReport report;
    report.threshold = threshold;
    std::vector<RankedList> low, high;
    for (const auto& list : lists) {
        auto it = entropies.find(list.query);
        const double h = it == entropies.end() ? 0.0 : it->second;
        (h > threshold ? high : low).push_back(list);
    }
    const auto fill = [](const std::vector<RankedList>& ls) -> std::optional<EntropyBucket> {
        if (ls.empty()) return std::nullopt;
        EntropyBucket b;
        b.n_lists = static_cast<std::int64_t>(ls.size());
        b.map_reranked = compute_ranking_metrics(ls).map;
        b.map_original = original_ranking_metrics(ls).map;
        b.delta_map = b.map_reranked - b.map_original;
        return b;
    };
    report.low = fill(low);
    report.high = fill(high);
    return report;
}

double plain_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb) + 1e-12;
    return dot / denom;
}

std::vector<std::int64_t> cosine_histogram(const std::vector<std::vector<double>>& vectors) {
    std::vector<std::int64_t> bins(80, 0);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        for (std::size_t j = i + 1; j < vectors.size(); ++j) {
            const double c = plain_cosine(vectors[i], vectors[j]);
            int bin = static_cast<int>(std::floor((c + 1.0) / 0.025));
            if (bin < 0) bin = 0;
            if (bin > 79) bin = 79;
            ++bins[static_cast<std::size_t>(bin)];
        }
    }
    return bins;
}

void write_run_file(const std::vector<RankedList>& lists, const std::string& path,
                    const std::string& tag, bool use_original_ranks) {
    std::ostringstream out;
    out.precision(17);
    for (const auto& list : lists) {
        auto ordered = by_new_rank(list);
        if (use_original_ranks) {
            std::sort(ordered.begin(), ordered.end(),
                      [](const RankedCandidate* a, const RankedCandidate* b) {
                          return a->orig_rank < b->orig_rank;
                      });
        }
        for (std::size_t i = 0; i < ordered.size(); ++i) {
            const double score = use_original_ranks
                                     ? 1.0 / static_cast<double>(ordered[i]->orig_rank)
                                     : ordered[i]->score;
            out << list.qid << '\t' << ordered[i]->doc_id << '\t' << (i + 1) << '\t' << score
                << '\t' << tag << '\n';
        }
    }
    write_file(path, out.str());
}

void write_qrels(const std::vector<RankedList>& lists, const std::string& path) {
    std::ostringstream out;
    for (const auto& list : lists) {
        for (const auto& c : list.candidates) {
            out << list.qid << '\t' << c.doc_id << '\t' << (c.relevant ? 1 : 0) << '\n';
        }
    }
    write_file(path, out.str());
}

void write_queries_file(const std::vector<RankedList>& lists, const std::string& path) {
    std::ostringstream out;
    for (const auto& list : lists) {
        out << list.qid << '\t' << list.user_id << '\t' << list.timestamp << '\t' << list.query
            << '\n';
    }
    write_file(path, out.str());
}

namespace {

struct RunRow {
    std::string qid, doc_id;
    int rank;
    double score;
};

std::vector<RunRow> load_run(const std::string& path) {
    std::vector<RunRow> rows;
    std::istringstream in(read_file(path));
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_tsv_line(line);
        if (f.size() != 5) {
            throw DataError(path + ": run line " + std::to_string(line_no) + " needs 5 fields");
        }
        rows.push_back({f[0], f[1], std::stoi(f[2]), std::stod(f[3])});
    }
    return rows;
}

}  // namespace

std::vector<RankedList> load_run_with_qrels(const std::string& run_path,
                                            const std::string& qrels_path,
                                            const std::string& baseline_run_path) {
    std::map<std::string, std::map<std::string, bool>> rel;
    {
        std::istringstream in(read_file(qrels_path));
        std::string line;
        std::int64_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            auto f = split_tsv_line(line);
            if (f.size() != 3) {
                throw DataError(qrels_path + ": qrels line " + std::to_string(line_no) +
                                " needs 3 fields");
            }
            rel[f[0]][f[1]] = f[2] != "0";
        }
    }
    std::map<std::string, std::map<std::string, int>> orig_ranks;
    if (!baseline_run_path.empty()) {
        for (const auto& r : load_run(baseline_run_path)) orig_ranks[r.qid][r.doc_id] = r.rank;
    }

    std::map<std::string, RankedList> lists;
    for (const auto& r : load_run(run_path)) {
        RankedList& list = lists[r.qid];
        list.qid = r.qid;
        RankedCandidate c;
        c.doc_id = r.doc_id;
        c.new_rank = r.rank;
        c.score = r.score;
        auto qit = rel.find(r.qid);
        c.relevant = qit != rel.end() && qit->second.count(r.doc_id) &&
                     qit->second.at(r.doc_id);
        if (!baseline_run_path.empty()) {
            auto oit = orig_ranks.find(r.qid);
            if (oit == orig_ranks.end() || !oit->second.count(r.doc_id)) {
                throw DataError("baseline run misses qid " + r.qid + " doc " + r.doc_id);
            }
            c.orig_rank = oit->second.at(r.doc_id);
        } else {
            c.orig_rank = r.rank;
        }
        list.candidates.push_back(std::move(c));
    }
    std::vector<RankedList> out;
    out.reserve(lists.size());
    for (auto& [qid, list] : lists) out.push_back(std::move(list));
    return out;
}

std::map<std::string, std::string> load_queries_file(const std::string& path) {
    std::map<std::string, std::string> out;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_tsv_line(line);
        if (f.size() != 4) throw DataError(path + ": queries file needs 4 fields per line");
        out[f[0]] = f[3];
    }
    return out;
}

}  // namespace pssl
