#pragma once

// Okapi BM25 over normalized word terms, with an inverted index for
// candidate retrieval. Deterministic: ties break by ascending doc_id.

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "pssl/log.hpp"

namespace pssl {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
    int orig_rank = 0;  // 1-based after ranking
};

class Bm25Index {
public:
    Bm25Index() = default;
    explicit Bm25Index(const std::map<std::string, Document>& corpus, Bm25Params params = {});

    // Top-k by score, ties by doc_id. Empty query after filtering unknown
    // terms yields an empty list; an empty token list is an error.
    std::vector<ScoredDoc> top_k(const std::vector<std::string>& query_words, std::size_t k) const;

    double score(const std::vector<std::string>& query_words, const std::string& doc_id) const;

    std::size_t n_docs() const { return doc_ids_.size(); }
    double avg_doc_len() const { return avg_len_; }

private:
    struct Posting {
        std::int32_t doc;  // index into doc_ids_
        std::int32_t tf;
    };
    Bm25Params params_;
    std::vector<std::string> doc_ids_;                       // sorted
    std::vector<double> doc_len_;
    std::unordered_map<std::string, std::int32_t> doc_pos_;  // doc_id -> index
    std::map<std::string, std::vector<Posting>> postings_;   // term -> docs
    double avg_len_ = 0.0;

    double idf(std::size_t df) const;
    double term_doc_score(double idf_v, double tf, double dlen) const;
};

}  // namespace pssl
