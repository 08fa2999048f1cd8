#pragma once

// The two encoders: a word-level sentence encoder with sum pooling, and a
// hierarchical long/short-term sequence encoder that appends a learned
// summary token to the short-term stream. Plus ranking heads, parameter
// initialization, and binary checkpoints.

#include <optional>
#include <string>
#include <vector>

#include "pssl/log.hpp"
#include "pssl/params.hpp"
#include "pssl/tensor.hpp"

namespace pssl {

struct ModelConfig {
    std::string preset = "desk";
    std::int64_t d_embed = 32;
    std::int64_t d_hidden = 64;
    std::int64_t n_heads = 2;
    std::int64_t n_layers = 2;
    std::int64_t mlp_units = 32;
    std::int64_t max_sent_tokens = 16;
    std::int64_t max_short = 20;
    std::int64_t max_long = 50;
    std::int64_t vocab_size = 0;
    std::int64_t n_features = 8;

    static ModelConfig desk();
    static ModelConfig paper();
    static ModelConfig from_preset(const std::string& name);
    void validate() const;
};

struct BlockParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gain, ln1_bias;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ln2_gain, ln2_bias;
};

// Multi-head self-attention + residual + layer norm, then a two-layer tanh
// feed-forward + residual + layer norm. mask (when given) marks valid
// positions; masked keys get ~0 attention weight.
Tensor attention_block(const Tensor& x, const BlockParams& p, std::int64_t n_heads,
                       const std::vector<std::uint8_t>* mask = nullptr);

// One-hidden-layer tanh MLP: {1,in} -> scalar.
Tensor mlp2(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
            const Tensor& b2);

// Token-id lists for the behaviors of a history view.
struct TokenizedView {
    std::vector<std::vector<std::int32_t>> long_term;
    std::vector<std::vector<std::int32_t>> short_term;
};

std::vector<std::int32_t> behavior_tokens(const Behavior& b, const Log& log,
                                          const Vocabulary& vocab);
TokenizedView tokenize_view(const HistoryView& view, const Log& log, const Vocabulary& vocab);

class Model {
public:
    ModelConfig cfg;
    ParamStore store;

    static Model init(const ModelConfig& cfg, std::uint64_t seed);

    // Queries and documents: embeddings (+ positions) through the word-level
    // stack, summed over non-PAD positions. All-PAD input yields a zero
    // vector and sets *empty.
    Tensor sentence_encode(const std::vector<std::int32_t>& ids, bool* empty = nullptr);

    // Hierarchical encoding: short-term stream is [behaviors..., query?,
    // summary token], its last position feeds the long-term stream
    // [behaviors..., short_out], whose last position is the result.
    Tensor sequence_encode(const TokenizedView& view,
                           const std::vector<std::int32_t>* query_ids);

    Tensor embedding_matrix() const { return store.get("embed.words"); }
    void set_embeddings_trainable(bool trainable);

    void save_checkpoint(const std::string& path) const;
    static Model load_checkpoint(const std::string& path);
    // Shape-checks against an expected configuration before loading.
    static Model load_checkpoint(const std::string& path, const ModelConfig& expected);

    // Optional word-vector warm start: lines of `token<TAB>v1 v2 ... vd`.
    // Returns the number of vocabulary rows that were filled.
    std::int64_t load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab);

    const BlockParams& block(const std::string& stack, std::int64_t layer) const;

private:
    std::vector<BlockParams> sent_blocks_, short_blocks_, long_blocks_;
    void build_block_cache();
    Tensor encode_rows(std::vector<Tensor> rows, const std::string& pos_table,
                       const std::vector<BlockParams>& blocks);
};

}  // namespace pssl
