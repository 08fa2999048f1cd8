#include "pssl/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pssl {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
    ModelConfig c;
    c.preset = "paper";
    c.d_embed = 100;
    c.d_hidden = 512;
    c.n_heads = 6;
    c.n_layers = 6;
    c.mlp_units = 128;
    return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw UsageError("unknown model preset: " + name + " (expected desk or paper)");
}

void ModelConfig::validate() const {
    if (d_hidden % n_heads != 0) {
        throw UsageError("hidden size " + std::to_string(d_hidden) +
                         " not divisible by heads " + std::to_string(n_heads));
    }
    if (vocab_size < 3) throw UsageError("vocab_size must include the reserved ids");
    for (auto v : {d_embed, d_hidden, n_heads, n_layers, mlp_units, max_sent_tokens, max_short,
                   max_long}) {
        if (v < 1) throw UsageError("model config fields must be positive");
    }
}

Tensor attention_block(const Tensor& x, const BlockParams& p, std::int64_t n_heads,
                       const std::vector<std::uint8_t>* mask) {
    const std::int64_t seq = x.shape()[0];
    const std::int64_t d = x.shape()[1];
    if (d % n_heads != 0) throw InternalError("attention_block: d % n_heads != 0");
    const std::int64_t dk = d / n_heads;

    Tensor q = add_rowvec(matmul(x, p.wq), p.bq);
    Tensor k = add_rowvec(matmul(x, p.wk), p.bk);
    Tensor v = add_rowvec(matmul(x, p.wv), p.bv);

    Tensor mask_row;
    if (mask != nullptr) {
        if (static_cast<std::int64_t>(mask->size()) != seq) {
            throw InternalError("attention_block: mask length mismatch");
        }
        std::vector<double> mv(mask->size());
        for (std::size_t i = 0; i < mask->size(); ++i) mv[i] = (*mask)[i] ? 0.0 : -1e9;
        mask_row = Tensor::from_values({seq}, std::move(mv));
    }

    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::int64_t h = 0; h < n_heads; ++h) {
        Tensor qh = slice_cols(q, h * dk, dk);
        Tensor kh = slice_cols(k, h * dk, dk);
        Tensor vh = slice_cols(v, h * dk, dk);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
        if (mask_row.defined()) scores = add_rowvec(scores, mask_row);
        Tensor attn = softmax_rows(scores);
        heads.push_back(matmul(attn, vh));
    }
    Tensor merged = n_heads == 1 ? heads[0] : concat_cols(heads);
    Tensor attended = add_rowvec(matmul(merged, p.wo), p.bo);

    Tensor h1 = layer_norm_rows(add(x, attended));
    h1 = add_rowvec(mul_rowvec(h1, p.ln1_gain), p.ln1_bias);

    Tensor ff = add_rowvec(matmul(tanh(add_rowvec(matmul(h1, p.ffn_w1), p.ffn_b1)), p.ffn_w2),
                           p.ffn_b2);
    Tensor h2 = layer_norm_rows(add(h1, ff));
    return add_rowvec(mul_rowvec(h2, p.ln2_gain), p.ln2_bias);
}

Tensor mlp2(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
            const Tensor& b2) {
    Tensor h = tanh(add_rowvec(matmul(x, w1), b1));
    return add_rowvec(matmul(h, w2), b2);
}

std::vector<std::int32_t> behavior_tokens(const Behavior& b, const Log& log,
                                          const Vocabulary& vocab) {
    std::vector<std::int32_t> ids;
    if (b.kind == BehaviorKind::Query) {
        for (const auto& w : split_words(b.text_key)) ids.push_back(vocab.lookup(w));
    } else {
        auto it = log.corpus.find(b.text_key);
        if (it != log.corpus.end()) {
            if (!it->second.token_ids.empty()) {
                ids = it->second.token_ids;
            } else {
                for (const auto& w : it->second.words) ids.push_back(vocab.lookup(w));
            }
        }
    }
    return ids;
}

TokenizedView tokenize_view(const HistoryView& view, const Log& log, const Vocabulary& vocab) {
    TokenizedView out;
    out.long_term.reserve(view.long_term.size());
    out.short_term.reserve(view.short_term.size());
    for (const auto& b : view.long_term) out.long_term.push_back(behavior_tokens(b, log, vocab));
    for (const auto& b : view.short_term) out.short_term.push_back(behavior_tokens(b, log, vocab));
    return out;
}

namespace {

void create_block(ParamStore& store, Rng& rng, const std::string& prefix, std::int64_t d) {
    const std::int64_t ffn = 2 * d;
    for (const char* n : {"wq", "wk", "wv", "wo"}) {
        store.create(prefix + ".attn." + n, {d, d}, init_xavier(rng, d, d));
    }
    for (const char* n : {"bq", "bk", "bv", "bo"}) {
        store.create(prefix + ".attn." + n, {d}, std::vector<double>(d, 0.0));
    }
    store.create(prefix + ".ln1.g", {d}, std::vector<double>(d, 1.0));
    store.create(prefix + ".ln1.b", {d}, std::vector<double>(d, 0.0));
    store.create(prefix + ".ffn.w1", {d, ffn}, init_xavier(rng, d, ffn));
    store.create(prefix + ".ffn.b1", {ffn}, std::vector<double>(ffn, 0.0));
    store.create(prefix + ".ffn.w2", {ffn, d}, init_xavier(rng, ffn, d));
    store.create(prefix + ".ffn.b2", {d}, std::vector<double>(d, 0.0));
    store.create(prefix + ".ln2.g", {d}, std::vector<double>(d, 1.0));
    store.create(prefix + ".ln2.b", {d}, std::vector<double>(d, 0.0));
}

BlockParams fetch_block(const ParamStore& store, const std::string& prefix) {
    BlockParams p;
    p.wq = store.get(prefix + ".attn.wq");
    p.bq = store.get(prefix + ".attn.bq");
    p.wk = store.get(prefix + ".attn.wk");
    p.bk = store.get(prefix + ".attn.bk");
    p.wv = store.get(prefix + ".attn.wv");
    p.bv = store.get(prefix + ".attn.bv");
    p.wo = store.get(prefix + ".attn.wo");
    p.bo = store.get(prefix + ".attn.bo");
    p.ln1_gain = store.get(prefix + ".ln1.g");
    p.ln1_bias = store.get(prefix + ".ln1.b");
    p.ffn_w1 = store.get(prefix + ".ffn.w1");
    p.ffn_b1 = store.get(prefix + ".ffn.b1");
    p.ffn_w2 = store.get(prefix + ".ffn.w2");
    p.ffn_b2 = store.get(prefix + ".ffn.b2");
    p.ln2_gain = store.get(prefix + ".ln2.g");
    p.ln2_bias = store.get(prefix + ".ln2.b");
    return p;
}

void create_head(ParamStore& store, Rng& rng, const std::string& prefix, std::int64_t in,
                 std::int64_t units) {
    store.create(prefix + ".w1", {in, units}, init_xavier(rng, in, units));
    store.create(prefix + ".b1", {units}, std::vector<double>(units, 0.0));
    store.create(prefix + ".w2", {units, 1}, init_xavier(rng, units, 1));
    store.create(prefix + ".b2", {1}, std::vector<double>(1, 0.0));
}

}  // namespace

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(seed);
    const std::int64_t d = cfg.d_embed, h = cfg.d_hidden;

    auto embed = init_uniform(rng, cfg.vocab_size * d, -0.05, 0.05);
    std::fill(embed.begin(), embed.begin() + d, 0.0);  // PAD row stays zero
    m.store.create("embed.words", {cfg.vocab_size, d}, std::move(embed));
    if (d != h) {
        m.store.create("embed.proj.w", {d, h}, init_xavier(rng, d, h));
        m.store.create("embed.proj.b", {h}, std::vector<double>(h, 0.0));
    }
    m.store.create("embed.pos_sent", {cfg.max_sent_tokens, h},
                   init_uniform(rng, cfg.max_sent_tokens * h, -0.05, 0.05));
    m.store.create("embed.pos_short", {cfg.max_short + 2, h},
                   init_uniform(rng, (cfg.max_short + 2) * h, -0.05, 0.05));
    m.store.create("embed.pos_long", {cfg.max_long + 1, h},
                   init_uniform(rng, (cfg.max_long + 1) * h, -0.05, 0.05));
    m.store.create("user_token", {h}, init_uniform(rng, h, -0.05, 0.05));

    for (const char* stack : {"sent", "short", "long"}) {
        for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
            create_block(m.store, rng, std::string(stack) + "." + std::to_string(l), h);
        }
    }

    create_head(m.store, rng, "rank.feat", cfg.n_features, cfg.mlp_units);
    create_head(m.store, rng, "rank.adhoc", 2, cfg.mlp_units);
    create_head(m.store, rng, "rank.fuse", 2, cfg.mlp_units);
    m.store.create("rank.feat_mean", {cfg.n_features},
                   std::vector<double>(cfg.n_features, 0.0), /*trainable=*/false);
    m.store.create("rank.feat_std", {cfg.n_features}, std::vector<double>(cfg.n_features, 1.0),
                   /*trainable=*/false);

    m.build_block_cache();
    return m;
}

void Model::build_block_cache() {
    sent_blocks_.clear();
    short_blocks_.clear();
    long_blocks_.clear();
    for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
        sent_blocks_.push_back(fetch_block(store, "sent." + std::to_string(l)));
        short_blocks_.push_back(fetch_block(store, "short." + std::to_string(l)));
        long_blocks_.push_back(fetch_block(store, "long." + std::to_string(l)));
    }
}

const BlockParams& Model::block(const std::string& stack, std::int64_t layer) const {
    const auto& v = stack == "sent" ? sent_blocks_ : stack == "short" ? short_blocks_
                                                                      : long_blocks_;
    return v.at(static_cast<std::size_t>(layer));
}

void Model::set_embeddings_trainable(bool trainable) {
    store.set_trainable("embed.words", trainable);
}

Tensor Model::sentence_encode(const std::vector<std::int32_t>& ids, bool* empty) {
    std::vector<std::int32_t> kept;
    kept.reserve(ids.size());
    for (std::int32_t id : ids) {
        if (id != Vocabulary::kPad) kept.push_back(id);
        if (static_cast<std::int64_t>(kept.size()) == cfg.max_sent_tokens) break;
    }
    if (empty != nullptr) *empty = kept.empty();
    if (kept.empty()) return Tensor::zeros({cfg.d_hidden});

    Tensor x = embedding_lookup(store.get("embed.words"), kept);
    if (cfg.d_embed != cfg.d_hidden) {
        x = add_rowvec(matmul(x, store.get("embed.proj.w")), store.get("embed.proj.b"));
    }
    const std::int64_t n = static_cast<std::int64_t>(kept.size());
    x = add(x, slice_rows(store.get("embed.pos_sent"), 0, n));
    for (const auto& blk : sent_blocks_) x = attention_block(x, blk, cfg.n_heads);
    return sum_axis0(x);
}

Tensor Model::encode_rows(std::vector<Tensor> rows, const std::string& pos_table,
                          const std::vector<BlockParams>& blocks) {
    std::vector<Tensor> as_rows;
    as_rows.reserve(rows.size());
    for (auto& r : rows) as_rows.push_back(reshape(r, {1, cfg.d_hidden}));
    Tensor x = as_rows.size() == 1 ? as_rows[0] : concat_rows(as_rows);
    const std::int64_t n = x.shape()[0];
    x = add(x, slice_rows(store.get(pos_table), 0, n));
    for (const auto& blk : blocks) x = attention_block(x, blk, cfg.n_heads);
    return reshape(slice_rows(x, n - 1, 1), {cfg.d_hidden});
}

Tensor Model::sequence_encode(const TokenizedView& view,
                              const std::vector<std::int32_t>* query_ids) {
    const bool has_query = query_ids != nullptr;
    if (view.long_term.empty() && view.short_term.empty() && !has_query) {
        throw DataError("sequence_encode: empty history and no query");
    }

    std::vector<Tensor> short_rows;
    const std::size_t short_start =
        view.short_term.size() > static_cast<std::size_t>(cfg.max_short)
            ? view.short_term.size() - static_cast<std::size_t>(cfg.max_short)
            : 0;
    for (std::size_t i = short_start; i < view.short_term.size(); ++i) {
        short_rows.push_back(sentence_encode(view.short_term[i]));
    }
    if (has_query) short_rows.push_back(sentence_encode(*query_ids));
    short_rows.push_back(store.get("user_token"));
    Tensor short_out = encode_rows(std::move(short_rows), "embed.pos_short", short_blocks_);

    std::vector<Tensor> long_rows;
    const std::size_t long_start =
        view.long_term.size() > static_cast<std::size_t>(cfg.max_long)
            ? view.long_term.size() - static_cast<std::size_t>(cfg.max_long)
            : 0;
    for (std::size_t i = long_start; i < view.long_term.size(); ++i) {
        long_rows.push_back(sentence_encode(view.long_term[i]));
    }
    long_rows.push_back(short_out);
    return encode_rows(std::move(long_rows), "embed.pos_long", long_blocks_);
}

// Checkpoint layout: "PSSL", u32 version, u32 header length, JSON header,
// u32 tensor count, manifest of (name, dtype, shape), raw little-endian f32
// data in manifest order, trailing CRC32 of everything before it.
namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size()) throw DataError("checkpoint truncated");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"preset", c.preset},
                          {"d_embed", c.d_embed},
                          {"d_hidden", c.d_hidden},
                          {"n_heads", c.n_heads},
                          {"n_layers", c.n_layers},
                          {"mlp_units", c.mlp_units},
                          {"max_sent_tokens", c.max_sent_tokens},
                          {"max_short", c.max_short},
                          {"max_long", c.max_long},
                          {"vocab_size", c.vocab_size},
                          {"n_features", c.n_features}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.preset = j.at("preset").get<std::string>();
    c.d_embed = j.at("d_embed").get<std::int64_t>();
    c.d_hidden = j.at("d_hidden").get<std::int64_t>();
    c.n_heads = j.at("n_heads").get<std::int64_t>();
    c.n_layers = j.at("n_layers").get<std::int64_t>();
    c.mlp_units = j.at("mlp_units").get<std::int64_t>();
    c.max_sent_tokens = j.at("max_sent_tokens").get<std::int64_t>();
    c.max_short = j.at("max_short").get<std::int64_t>();
    c.max_long = j.at("max_long").get<std::int64_t>();
    c.vocab_size = j.at("vocab_size").get<std::int64_t>();
    c.n_features = j.at("n_features").get<std::int64_t>();
    return c;
}

}  // namespace

void Model::save_checkpoint(const std::string& path) const {
    std::string buf;
    buf.append("PSSL", 4);
    put<std::uint32_t>(buf, kCheckpointVersion);
    const std::string header = config_to_json(cfg).dump();
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(header.size()));
    buf.append(header);

    const auto names = store.names();
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(names.size()));
    for (const auto& name : names) {
        const Tensor t = store.get(name);
        put<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
        buf.append(name);
        put<std::uint8_t>(buf, 0);  // dtype: f32
        put<std::uint8_t>(buf, static_cast<std::uint8_t>(t.shape().size()));
        for (auto dim : t.shape()) put<std::uint64_t>(buf, static_cast<std::uint64_t>(dim));
    }
    for (const auto& name : names) {
        const Tensor t = store.get(name);
        for (double v : t.values()) put<float>(buf, static_cast<float>(v));
    }
    put<std::uint32_t>(buf, crc32(buf.data(), buf.size()));
    write_file(path, buf);
}

Model Model::load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 16 || buf.compare(0, 4, "PSSL") != 0) {
        throw DataError("checkpoint " + path + ": bad magic");
    }
    const std::uint32_t stored_crc =
        [&] {
            std::size_t off = buf.size() - 4;
            return take<std::uint32_t>(buf, off);
        }();
    if (crc32(buf.data(), buf.size() - 4) != stored_crc) {
        throw DataError("checkpoint " + path + ": checksum mismatch (corrupt file)");
    }
    std::size_t off = 4;
    const auto version = take<std::uint32_t>(buf, off);
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint " + path + ": unsupported version " +
                        std::to_string(version));
    }
    const auto header_len = take<std::uint32_t>(buf, off);
    if (off + header_len > buf.size()) throw DataError("checkpoint truncated");
    const std::string header = buf.substr(off, header_len);
    off += header_len;
    ModelConfig cfg;
    try {
        cfg = config_from_json(nlohmann::json::parse(header));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path + ": bad header: " + e.what());
    }
    cfg.validate();

    Model m;
    m.cfg = cfg;
    struct Entry {
        std::string name;
        Shape shape;
    };
    std::vector<Entry> manifest;
    const auto n_tensors = take<std::uint32_t>(buf, off);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const auto name_len = take<std::uint16_t>(buf, off);
        if (off + name_len > buf.size()) throw DataError("checkpoint truncated");
        std::string name = buf.substr(off, name_len);
        off += name_len;
        const auto dtype = take<std::uint8_t>(buf, off);
        if (dtype != 0) throw DataError("checkpoint " + path + ": unsupported dtype");
        const auto rank = take<std::uint8_t>(buf, off);
        Shape shape;
        for (std::uint8_t r = 0; r < rank; ++r) {
            shape.push_back(static_cast<std::int64_t>(take<std::uint64_t>(buf, off)));
        }
        manifest.push_back({std::move(name), std::move(shape)});
    }
    for (const auto& e : manifest) {
        const std::int64_t n = shape_size(e.shape);
        std::vector<double> values(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            values[static_cast<std::size_t>(i)] = static_cast<double>(take<float>(buf, off));
        }
        const bool trainable = e.name != "rank.feat_mean" && e.name != "rank.feat_std";
        m.store.create(e.name, e.shape, std::move(values), trainable);
    }

    // The parameter set must be exactly what the header config implies.
    Model ref_shapes = Model::init(cfg, 0);
    for (const auto& name : ref_shapes.store.names()) {
        if (!m.store.has(name)) {
            throw DataError("checkpoint " + path + ": missing tensor " + name);
        }
        if (m.store.get(name).shape() != ref_shapes.store.get(name).shape()) {
            throw DataError("checkpoint " + path + ": tensor " + name + " has shape " +
                            shape_str(m.store.get(name).shape()) + ", expected " +
                            shape_str(ref_shapes.store.get(name).shape()));
        }
    }
    m.build_block_cache();
    return m;
}

Model Model::load_checkpoint(const std::string& path, const ModelConfig& expected) {
    Model m = load_checkpoint(path);
    Model ref = Model::init(expected, 0);
    for (const auto& name : ref.store.names()) {
        if (!m.store.has(name)) {
            throw DataError("checkpoint " + path + ": missing tensor " + name);
        }
        if (m.store.get(name).shape() != ref.store.get(name).shape()) {
            throw DataError("checkpoint " + path + ": tensor " + name + " has shape " +
                            shape_str(m.store.get(name).shape()) + ", expected " +
                            shape_str(ref.store.get(name).shape()));
        }
    }
    return m;
}

std::int64_t Model::load_pretrained_embeddings(const std::string& path,
                                               const Vocabulary& vocab) {
    Tensor m = store.get("embed.words");
    auto& values = m.values_mut();
    const std::int64_t d = cfg.d_embed;
    std::istringstream in(read_file(path));
    std::string line;
    std::int64_t filled = 0, line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_tsv_line(line);
        std::vector<std::string> nums;
        if (fields.size() == 2) {
            nums = split_words(fields[1]);
        } else if (fields.size() == static_cast<std::size_t>(d) + 1) {
            nums.assign(fields.begin() + 1, fields.end());
        } else {
            throw DataError(path + ": line " + std::to_string(line_no) +
                            " does not hold a token and " + std::to_string(d) + " values");
        }
        if (nums.size() != static_cast<std::size_t>(d)) {
            throw DataError(path + ": line " + std::to_string(line_no) + " has " +
                            std::to_string(nums.size()) + " values, expected " +
                            std::to_string(d));
        }
        const std::int32_t id = vocab.lookup(fields[0]);
        if (id == Vocabulary::kUnk && fields[0] != "<unk>") continue;
        for (std::int64_t j = 0; j < d; ++j) {
            values[static_cast<std::size_t>(id * d + j)] = store.round_to_f32(
                std::stod(nums[static_cast<std::size_t>(j)]));
        }
        ++filled;
    }
    return filled;
}

}  // namespace pssl
