#include "pssl/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace pssl {

Bm25Index::Bm25Index(const std::map<std::string, Document>& corpus, Bm25Params params)
    : params_(params) {
    doc_ids_.reserve(corpus.size());
    for (const auto& [id, d] : corpus) {
        doc_pos_[id] = static_cast<std::int32_t>(doc_ids_.size());
        doc_ids_.push_back(id);
        doc_len_.push_back(static_cast<double>(d.words.size()));
    }
    double total = 0.0;
    for (double l : doc_len_) total += l;
    avg_len_ = doc_len_.empty() ? 0.0 : total / static_cast<double>(doc_len_.size());

    std::int32_t idx = 0;
    for (const auto& [id, d] : corpus) {
        std::map<std::string, std::int32_t> tf;
        for (const auto& w : d.words) ++tf[w];
        for (const auto& [w, n] : tf) postings_[w].push_back({idx, n});
        ++idx;
    }
}

double Bm25Index::idf(std::size_t df) const {
    const double n = static_cast<double>(doc_ids_.size());
    const double d = static_cast<double>(df);
    // Non-negative variant: ln(1 + (N - df + 0.5) / (df + 0.5)).
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

double Bm25Index::term_doc_score(double idf_v, double tf, double dlen) const {
    const double norm = params_.k1 * (1.0 - params_.b + params_.b * dlen / avg_len_);
    return idf_v * (tf * (params_.k1 + 1.0)) / (tf + norm);
}

std::vector<ScoredDoc> Bm25Index::top_k(const std::vector<std::string>& query_words,
                                        std::size_t k) const {
    if (query_words.empty()) throw DataError("bm25: empty query");
    std::set<std::string> terms(query_words.begin(), query_words.end());
    std::unordered_map<std::int32_t, double> acc;
    for (const auto& t : terms) {
        auto it = postings_.find(t);
        if (it == postings_.end()) continue;
        const double w = idf(it->second.size());
        for (const Posting& p : it->second) {
            acc[p.doc] += term_doc_score(w, static_cast<double>(p.tf),
                                         doc_len_[static_cast<std::size_t>(p.doc)]);
        }
    }
    std::vector<ScoredDoc> out;
    out.reserve(acc.size());
    for (const auto& [doc, s] : acc) {
        out.push_back({doc_ids_[static_cast<std::size_t>(doc)], s, 0});
    }
    std::sort(out.begin(), out.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
    if (out.size() > k) out.resize(k);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].orig_rank = static_cast<int>(i) + 1;
    return out;
}

double Bm25Index::score(const std::vector<std::string>& query_words,
                        const std::string& doc_id) const {
    auto it = doc_pos_.find(doc_id);
    if (it == doc_pos_.end()) return 0.0;
    const std::int32_t pos = it->second;
    std::set<std::string> terms(query_words.begin(), query_words.end());
    double s = 0.0;
    for (const auto& t : terms) {
        auto pit = postings_.find(t);
        if (pit == postings_.end()) continue;
        for (const Posting& p : pit->second) {
            if (p.doc == pos) {
                s += term_doc_score(idf(pit->second.size()), static_cast<double>(p.tf),
                                    doc_len_[static_cast<std::size_t>(pos)]);
                break;
            }
        }
    }
    return s;
}

}  // namespace pssl
