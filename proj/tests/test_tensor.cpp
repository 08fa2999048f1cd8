#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "reference_encoder.hpp"
#include "pssl/model.hpp"
#include "pssl/params.hpp"
#include "pssl/tensor.hpp"

using namespace pssl;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = true) {
    std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
    Tensor x = Tensor::from_values({1, 2}, {0.0, 0.0});
    Tensor y = softmax_rows(x);
    CHECK(y.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.values()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor(rng, {4, 7}, false);
        Tensor y = softmax_rows(x);
        for (int i = 0; i < 4; ++i) {
            double s = 0;
            for (int j = 0; j < 7; ++j) s += y.values()[i * 7 + j];
            CHECK(std::fabs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("cosine of a vector with itself is 1") {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor(rng, {6}, false);
        CHECK(cosine_similarity(x, x).item() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("cosine zero-vector guard keeps values and gradients finite") {
    Tensor z = Tensor::zeros({4}, true);
    Tensor y = Tensor::from_values({4}, {1, 2, 3, 4}, true);
    Tensor c = cosine_similarity(z, y);
    CHECK(c.item() == 0.0);
    backward(c);
    for (double g : z.grad()) CHECK(g == 0.0);
}

TEST_CASE("matmul matches the naive triple loop") {
    Rng rng(5);
    Tensor a = random_tensor(rng, {5, 4}, false);
    Tensor b = random_tensor(rng, {4, 3}, false);
    Tensor c = matmul(a, b);
    const auto ref = oracles::naive_matmul(a.values(), b.values(), 5, 4, 3);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(std::fabs(c.values()[i] - ref[i]) < 1e-12);
    }
}

TEST_CASE("layer norm rows have zero mean, unit variance") {
    Rng rng(6);
    Tensor x = random_tensor(rng, {3, 8}, false);
    Tensor y = layer_norm_rows(x);
    for (int i = 0; i < 3; ++i) {
        double mean = 0, var = 0;
        for (int j = 0; j < 8; ++j) mean += y.values()[i * 8 + j];
        mean /= 8;
        for (int j = 0; j < 8; ++j) {
            var += (y.values()[i * 8 + j] - mean) * (y.values()[i * 8 + j] - mean);
        }
        var /= 8;
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(var - 1.0) < 1e-4);  // epsilon-regularized
    }
}

TEST_CASE("backward of sum gives ones") {
    Rng rng(7);
    Tensor x = random_tensor(rng, {3, 4});
    backward(sum_all(x));
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradient accumulates across repeated uses") {
    Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
    Tensor loss = sum_all(add(x, x));
    backward(loss);
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(add(x, x)), InternalError);
}

TEST_CASE("non-finite results are trapped") {
    Tensor x = Tensor::from_values({1}, {-1.0});
    CHECK_THROWS_AS(log(x), InternalError);
}

TEST_CASE("finite differences confirm every kernel gradient") {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        Tensor a = random_tensor(rng, {3, 4});
        Tensor b = random_tensor(rng, {4, 5});
        Tensor c = random_tensor(rng, {3, 4});
        Tensor v = random_tensor(rng, {4});
        Tensor u = random_tensor(rng, {5});
        Tensor w = random_tensor(rng, {5});
        Tensor table = random_tensor(rng, {6, 3});
        Tensor probe43 = random_tensor(rng, {4, 3});
        const std::vector<std::int32_t> ids = {1, 4, 2, 1};

        const std::vector<std::pair<std::function<Tensor()>, std::vector<Tensor>>> cases = {
            {[&] { return sum_all(matmul(a, b)); }, {a, b}},
            {[&] { return sum_all(transpose(a)); }, {a}},
            {[&] { return sum_all(mul(a, c)); }, {a, c}},
            {[&] { return sum_all(add(a, c)); }, {a, c}},
            {[&] { return sum_all(sub(a, c)); }, {a, c}},
            {[&] { return sum_all(add_rowvec(a, v)); }, {a, v}},
            {[&] { return sum_all(mul_rowvec(a, v)); }, {a, v}},
            {[&] { return sum_all(scale(a, -1.7)); }, {a}},
            {[&] { return sum_all(tanh(a)); }, {a}},
            {[&] { return sum_all(sigmoid(a)); }, {a}},
            {[&] { return sum_all(softplus(a)); }, {a}},
            {[&] { return sum_all(exp(a)); }, {a}},
            {[&] { return sum_all(log(add_scalar(mul(a, a), 0.5))); }, {a}},
            {[&] { return sum_all(mul(softmax_rows(a), c)); }, {a, c}},
            {[&] { return sum_all(mul(layer_norm_rows(a), c)); }, {a, c}},
            {[&] { return sum_all(mul(embedding_lookup(table, ids), probe43)); },
             {table, probe43}},
            {[&] { return sum_all(concat_rows({a, c})); }, {a, c}},
            {[&] { return sum_all(mul(concat_cols({a, c}), concat_cols({c, a}))); }, {a, c}},
            {[&] { return sum_all(slice_rows(a, 1, 2)); }, {a}},
            {[&] { return sum_all(slice_cols(a, 1, 2)); }, {a}},
            {[&] { return sum_all(mul(sum_axis0(a), v)); }, {a, v}},
            {[&] { return sum_all(mul(mean_axis0(a), v)); }, {a, v}},
            {[&] { return mean_all(a); }, {a}},
            {[&] { return sum_all(reshape(a, {12})); }, {a}},
            {[&] { return cosine_similarity(u, w); }, {u, w}},
            {[&] {
                 return sum_all(stack_scalars({cosine_similarity(u, w), sum_all(v)}));
             },
             {u, w, v}},
        };
        for (const auto& [builder, leaves] : cases) {
            worst = std::max(worst, oracles::gradcheck(builder, leaves));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("attention block matches a standalone re-implementation") {
    // Two-token toy on a one-layer block with hand-rolled loops.
    ModelConfig cfg;
    cfg.d_embed = 4;
    cfg.d_hidden = 4;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.mlp_units = 4;
    cfg.vocab_size = 8;
    cfg.max_sent_tokens = 4;
    cfg.max_short = 4;
    cfg.max_long = 4;
    Model model = Model::init(cfg, 99);

    Rng rng(100);
    std::vector<double> xv(8);
    for (double& v : xv) v = rng.uniform(-1, 1);
    Tensor x = Tensor::from_values({2, 4}, xv);
    Tensor out = attention_block(x, model.block("sent", 0), 2);

    refimpl::Mat ref_x = {{xv[0], xv[1], xv[2], xv[3]}, {xv[4], xv[5], xv[6], xv[7]}};
    refimpl::Mat ref = refimpl::ref_attention_block(ref_x, model.store, "sent.0", 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(out.values()[i * 4 + j] == doctest::Approx(ref[i][j]).epsilon(1e-10));
}

TEST_CASE("attention with a single position puts full weight on itself") {
    // With one key, softmax is exactly 1, so attended output equals the
    // value projection.
    ModelConfig cfg;
    cfg.d_embed = 4;
    cfg.d_hidden = 4;
    cfg.n_heads = 1;
    cfg.n_layers = 1;
    cfg.mlp_units = 4;
    cfg.vocab_size = 8;
    Model model = Model::init(cfg, 7);
    Tensor x = Tensor::from_values({1, 4}, {0.3, -0.2, 0.8, 0.1});
    const BlockParams& p = model.block("sent", 0);
    Tensor attended = matmul(softmax_rows(scale(
                                 matmul(add_rowvec(matmul(x, p.wq), p.bq),
                                        transpose(add_rowvec(matmul(x, p.wk), p.bk))),
                                 0.5)),
                             add_rowvec(matmul(x, p.wv), p.bv));
    Tensor direct = add_rowvec(matmul(x, p.wv), p.bv);
    for (int j = 0; j < 4; ++j) {
        CHECK(attended.values()[j] == doctest::Approx(direct.values()[j]).epsilon(1e-12));
    }
}

TEST_CASE("fully masked attention stays finite") {
    ModelConfig cfg;
    cfg.d_embed = 4;
    cfg.d_hidden = 4;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.mlp_units = 4;
    cfg.vocab_size = 8;
    Model model = Model::init(cfg, 13);
    Tensor x = Tensor::zeros({3, 4});
    const std::vector<std::uint8_t> mask = {0, 0, 0};
    Tensor out = attention_block(x, model.block("sent", 0), 2, &mask);
    for (double v : out.values()) CHECK(std::isfinite(v));
}

TEST_CASE("masked positions get ~0 attention weight") {
    Rng rng(21);
    Tensor scores = random_tensor(rng, {3, 3}, false);
    Tensor mask_row = Tensor::from_values({3}, {0.0, -1e9, 0.0});
    Tensor attn = softmax_rows(add_rowvec(scores, mask_row));
    for (int i = 0; i < 3; ++i) {
        CHECK(attn.values()[i * 3 + 1] < 1e-30);
        double s = 0;
        for (int j = 0; j < 3; ++j) s += attn.values()[i * 3 + j];
        CHECK(std::fabs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("attention block gradients pass finite differences") {
    ModelConfig cfg;
    cfg.d_embed = 4;
    cfg.d_hidden = 4;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.mlp_units = 4;
    cfg.vocab_size = 8;
    Model model = Model::init(cfg, 31);
    Rng rng(32);
    Tensor x = random_tensor(rng, {3, 4});
    Tensor probe = random_tensor(rng, {3, 4}, false);
    const BlockParams& p = model.block("sent", 0);
    const auto builder = [&] { return sum_all(mul(attention_block(x, p, 2), probe)); };
    const double worst = oracles::gradcheck(
        builder, {x, p.wq, p.bq, p.wk, p.wv, p.wo, p.ln1_gain, p.ln1_bias, p.ffn_w1, p.ffn_w2,
                  p.ln2_gain});
    CHECK(worst < 1e-4);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    ParamStore store;
    Tensor p = store.create("p", {3}, {1.0, -2.0, 3.0});
    store.adam_step({});
    CHECK(p.values()[0] == 1.0);
    CHECK(p.values()[1] == -2.0);
    CHECK(p.values()[2] == 3.0);
    CHECK(store.step_count() == 1);
}

TEST_CASE("adam single step matches the closed-form update") {
    // g=1 with fresh moments: mhat=1, vhat=1, so p moves by lr/(1+eps).
    ParamStore store;
    Tensor p = store.create("p", {1}, {1.0});
    p.raw()->grad.assign(1, 1.0);
    AdamConfig cfg;
    cfg.lr = 0.1;
    store.adam_step(cfg);
    const double expected =
        static_cast<double>(static_cast<float>(1.0 - 0.1 / (1.0 + 1e-8)));
    CHECK(p.values()[0] == expected);
}

TEST_CASE("adam raises on a missing gradient buffer") {
    ParamStore store;
    Tensor p = store.create("p", {2}, {1.0, 2.0});
    p.raw()->grad.clear();
    CHECK_THROWS_AS(store.adam_step({}), InternalError);
}

TEST_CASE("identical seeds give bit-identical optimization traces") {
    const auto run = [] {
        ParamStore store;
        Rng rng(77);
        Tensor w = store.create("w", {4}, init_uniform(rng, 4, -0.5, 0.5));
        Tensor target = Tensor::from_values({4}, {0.3, -0.1, 0.9, 0.0});
        for (int step = 0; step < 25; ++step) {
            Tensor diff = sub(w, target);
            backward(sum_all(mul(diff, diff)));
            store.adam_step({});
        }
        return w.values();
    };
    const auto a = run();
    const auto b = run();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("parameters stay f32-representable after updates") {
    ParamStore store;
    Rng rng(5);
    Tensor w = store.create("w", {8}, init_uniform(rng, 8, -0.5, 0.5));
    for (int step = 0; step < 5; ++step) {
        backward(sum_all(mul(w, w)));
        store.adam_step({});
    }
    for (double v : w.values()) {
        CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }
}
