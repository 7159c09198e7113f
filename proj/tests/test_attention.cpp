#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mtn/attention.hpp"
#include "testutil.hpp"

using mtn::AttentionMask;
using mtn::Shape;
using DTensor = mtn::TensorT<double>;

TEST_CASE("causal mask structure") {
    auto m = mtn::causal_mask(3);
    const bool expected[3][3] = {{1, 0, 0}, {1, 1, 0}, {1, 1, 1}};
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j) CHECK(m.at(i, j) == expected[i][j]);
    for (int64_t i = 0; i < 3; ++i) {
        int64_t attendable = 0;
        for (int64_t j = 0; j < 3; ++j) attendable += m.at(i, j);
        CHECK(attendable == i + 1);
    }
    auto single = mtn::causal_mask(1);
    CHECK(single.at(0, 0));
    CHECK_THROWS_AS(mtn::causal_mask(0), mtn::ContractError);
}

TEST_CASE("single-key attention returns the value row with weight one") {
    std::mt19937 rng(51);
    auto q = testutil::random_tensor({4, 3}, rng);
    auto k = testutil::random_tensor({1, 3}, rng);
    auto v = testutil::random_tensor({1, 5}, rng);
    auto [out, weights] = mtn::scaled_dot_attention(q, k, v);
    CHECK(out.shape() == Shape{4, 5});
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(weights.at({i, 0}) == 1.0);
        for (int64_t j = 0; j < 5; ++j) CHECK(out.at({i, j}) == v.at({0, j}));
    }
}

TEST_CASE("identical keys average the value rows uniformly") {
    std::mt19937 rng(52);
    auto q = testutil::random_tensor({2, 4}, rng);
    auto key_row = testutil::random_tensor({1, 4}, rng);
    std::vector<double> key_data;
    for (int r = 0; r < 3; ++r)
        key_data.insert(key_data.end(), key_row.value().begin(), key_row.value().end());
    auto k = DTensor::from_data({3, 4}, key_data);
    auto v = testutil::random_tensor({3, 4}, rng);
    auto [out, weights] = mtn::scaled_dot_attention(q, k, v);
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 4; ++j) {
            const double mean = (v.at({0, j}) + v.at({1, j}) + v.at({2, j})) / 3.0;
            CHECK(out.at({i, j}) == doctest::Approx(mean).epsilon(1e-12));
        }
}

TEST_CASE("masked positions receive vanishing weight and rows sum to one") {
    std::mt19937 rng(53);
    auto q = testutil::random_tensor({5, 4}, rng);
    auto k = testutil::random_tensor({5, 4}, rng);
    auto v = testutil::random_tensor({5, 4}, rng);
    auto mask = mtn::causal_mask(5);
    auto [out, weights] = mtn::scaled_dot_attention(q, k, v, &mask);
    for (int64_t i = 0; i < 5; ++i) {
        double sum = 0;
        for (int64_t j = 0; j < 5; ++j) {
            if (j > i) CHECK(weights.at({i, j}) < 1e-9);
            sum += weights.at({i, j});
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("a fully masked query row is rejected") {
    AttentionMask mask{2, 2, {1, 0, 0, 0}};
    std::mt19937 rng(54);
    auto q = testutil::random_tensor({2, 3}, rng);
    auto k = testutil::random_tensor({2, 3}, rng);
    auto v = testutil::random_tensor({2, 3}, rng);
    CHECK_THROWS_AS(mtn::scaled_dot_attention(q, k, v, &mask), mtn::ContractError);
}

TEST_CASE("multi_head output shape is query-length by width") {
    std::mt19937 rng(55);
    mtn::MultiHeadAttentionT<double> mha(8, 2, rng);
    auto x = testutil::random_tensor({3, 8}, rng);
    for (int64_t lk : {1, 4, 9}) {
        auto kv = testutil::random_tensor({lk, 8}, rng);
        CHECK(mha.forward(x, kv).shape() == Shape{3, 8});
    }
    CHECK_THROWS_AS(mha.forward(testutil::random_tensor({3, 4}, rng), x), mtn::ShapeError);
    CHECK_THROWS_AS(mtn::MultiHeadAttentionT<double>(8, 3, rng), mtn::ContractError);
}

TEST_CASE("single-head identity projections reduce to scaled dot attention") {
    std::mt19937 rng(56);
    mtn::MultiHeadAttentionT<double> mha(4, 1, rng);
    auto eye = DTensor::zeros({4, 4});
    for (int i = 0; i < 4; ++i) eye.data()[i * 4 + i] = 1.0;
    mha.wq.w = eye.clone().set_requires_grad(true);
    mha.wk.w = eye.clone().set_requires_grad(true);
    mha.wv.w = eye.clone().set_requires_grad(true);
    mha.wo.w = eye.clone().set_requires_grad(true);
    auto q = testutil::random_tensor({3, 4}, rng);
    auto kv = testutil::random_tensor({5, 4}, rng);
    auto direct = mtn::scaled_dot_attention(q, kv, kv).first;
    auto via_mha = mha.forward(q, kv);
    for (int64_t i = 0; i < direct.numel(); ++i)
        CHECK(via_mha.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-12));
}

TEST_CASE("multi_head matches an independent per-head loop oracle") {
    std::mt19937 rng(57);
    const int64_t d = 4, heads = 2, dk = d / heads;
    mtn::MultiHeadAttentionT<double> mha(d, heads, rng);
    auto q_in = testutil::random_tensor({3, d}, rng);
    auto kv_in = testutil::random_tensor({5, d}, rng);
    auto out = mha.forward(q_in, kv_in);

    // oracle: raw double loops over explicit per-head column blocks
    auto project = [&](const DTensor& x, const DTensor& w, int64_t head) {
        std::vector<std::vector<double>> y(static_cast<size_t>(x.dim(0)),
                                           std::vector<double>(static_cast<size_t>(dk), 0));
        for (int64_t r = 0; r < x.dim(0); ++r)
            for (int64_t c = 0; c < dk; ++c)
                for (int64_t l = 0; l < d; ++l)
                    y[static_cast<size_t>(r)][static_cast<size_t>(c)] +=
                        x.at({r, l}) * w.at({l, head * dk + c});
        return y;
    };
    std::vector<std::vector<double>> concat(3, std::vector<double>(static_cast<size_t>(d), 0));
    for (int64_t h = 0; h < heads; ++h) {
        auto qh = project(q_in, mha.wq.w, h);
        auto kh = project(kv_in, mha.wk.w, h);
        auto vh = project(kv_in, mha.wv.w, h);
        for (int64_t i = 0; i < 3; ++i) {
            std::vector<double> scores(5, 0);
            double mx = -1e300;
            for (int64_t j = 0; j < 5; ++j) {
                for (int64_t c = 0; c < dk; ++c)
                    scores[static_cast<size_t>(j)] += qh[static_cast<size_t>(i)][static_cast<size_t>(c)] *
                                                      kh[static_cast<size_t>(j)][static_cast<size_t>(c)];
                scores[static_cast<size_t>(j)] /= std::sqrt(static_cast<double>(dk));
                mx = std::max(mx, scores[static_cast<size_t>(j)]);
            }
            double z = 0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                z += s;
            }
            for (int64_t c = 0; c < dk; ++c) {
                double acc = 0;
                for (int64_t j = 0; j < 5; ++j)
                    acc += scores[static_cast<size_t>(j)] / z *
                           vh[static_cast<size_t>(j)][static_cast<size_t>(c)];
                concat[static_cast<size_t>(i)][static_cast<size_t>(h * dk + c)] = acc;
            }
        }
    }
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t c = 0; c < d; ++c) {
            double acc = 0;
            for (int64_t l = 0; l < d; ++l)
                acc += concat[static_cast<size_t>(i)][static_cast<size_t>(l)] * mha.wo.w.at({l, c});
            CHECK(std::fabs(out.at({i, c}) - acc) < 1e-12);
        }
}

TEST_CASE("multi_head never depends on values at masked key positions") {
    std::mt19937 rng(58);
    mtn::MultiHeadAttentionT<double> mha(6, 2, rng);
    auto x = testutil::random_tensor({4, 6}, rng);
    auto mask = mtn::causal_mask(4);
    auto base = mha.forward(x, x, &mask);
    auto perturbed_in = x.clone();
    for (int64_t c = 0; c < 6; ++c) perturbed_in.data()[3 * 6 + c] += 10.0;  // last key row
    auto perturbed = mha.forward(x, perturbed_in, &mask);
    // rows 0..2 cannot attend to key row 3
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t c = 0; c < 6; ++c)
            CHECK(std::fabs(base.at({i, c}) - perturbed.at({i, c})) <= 1e-9);
}

TEST_CASE("causal self-attention localizes perturbations to later rows") {
    std::mt19937 rng(59);
    mtn::MultiHeadAttentionT<double> mha(6, 3, rng);
    auto x = testutil::random_tensor({5, 6}, rng);
    auto mask = mtn::causal_mask(5);
    auto base = mha.forward(x, x, &mask);
    const int64_t j = 2;
    auto perturbed_x = x.clone();
    perturbed_x.data()[j * 6 + 1] += 0.5;
    auto out = mha.forward(perturbed_x, perturbed_x, &mask);
    for (int64_t i = 0; i < j; ++i)
        for (int64_t c = 0; c < 6; ++c) CHECK(std::fabs(base.at({i, c}) - out.at({i, c})) <= 1e-9);
    double moved = 0;
    for (int64_t c = 0; c < 6; ++c) moved += std::fabs(base.at({j, c}) - out.at({j, c}));
    CHECK(moved > 1e-6);
}

TEST_CASE("positional encoding values and determinism") {
    mtn::PositionalTableT<double> table(16, 8);
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(table.table[static_cast<size_t>(2 * i)] == 0.0);        // sin at pos 0
        CHECK(table.table[static_cast<size_t>(2 * i + 1)] == 1.0);    // cos at pos 0
    }
    CHECK(table.table[static_cast<size_t>(8)] == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
    CHECK(std::fabs(table.table[8] - 0.841471) < 1e-6);
    for (double v : table.table) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    mtn::PositionalTableT<double> again(16, 8);
    for (size_t i = 0; i < table.table.size(); ++i) CHECK(table.table[i] == again.table[i]);
    CHECK_THROWS_AS(mtn::PositionalTableT<double>(16, 7), mtn::ContractError);

    // regrowth keeps earlier rows identical
    auto prefix = table.prefix(32);
    CHECK(prefix.shape() == Shape{32, 8});
    for (int64_t i = 0; i < 16 * 8; ++i) CHECK(prefix.data()[i] == again.table[static_cast<size_t>(i)]);
}

TEST_CASE("feed_forward zero weights produce zero output") {
    std::mt19937 rng(60);
    mtn::FeedForwardT<double> ff(4, 8, rng);
    ff.w1.w = DTensor::zeros({4, 8}).set_requires_grad(true);
    ff.w1.b = DTensor::zeros({8}).set_requires_grad(true);
    ff.w2.w = DTensor::zeros({8, 4}).set_requires_grad(true);
    ff.w2.b = DTensor::zeros({4}).set_requires_grad(true);
    auto y = ff.forward(testutil::random_tensor({3, 4}, rng));
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("feed_forward commutes with row permutations") {
    std::mt19937 rng(61);
    mtn::FeedForwardT<double> ff(5, 9, rng);
    auto x = testutil::random_tensor({4, 5}, rng);
    const int64_t perm[4] = {2, 0, 3, 1};
    std::vector<double> permuted(static_cast<size_t>(4 * 5));
    for (int64_t r = 0; r < 4; ++r)
        for (int64_t c = 0; c < 5; ++c)
            permuted[static_cast<size_t>(r * 5 + c)] = x.at({perm[r], c});
    auto y = ff.forward(x);
    auto yp = ff.forward(DTensor::from_data({4, 5}, permuted));
    for (int64_t r = 0; r < 4; ++r)
        for (int64_t c = 0; c < 5; ++c)
            CHECK(yp.at({r, c}) == doctest::Approx(y.at({perm[r], c})).epsilon(1e-12));
}

TEST_CASE("feed_forward matches a hand-computed example") {
    std::mt19937 rng(62);
    mtn::FeedForwardT<double> ff(2, 2, rng);
    ff.w1.w = DTensor::from_data({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
    ff.w1.b = DTensor::from_data({2}, {0.5, -0.5}).set_requires_grad(true);
    ff.w2.w = DTensor::from_data({2, 2}, {1, -1, 0.5, 0.25}).set_requires_grad(true);
    ff.w2.b = DTensor::from_data({2}, {0.25, 0.75}).set_requires_grad(true);
    // x W1 + b1 = [3, 3.5]; relu keeps both; W2 path gives [4.75, -2.125]
    auto y = ff.forward(DTensor::from_data({1, 2}, {1.0, 0.5}));
    CHECK(y.at({0, 0}) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(y.at({0, 1}) == doctest::Approx(-1.375).epsilon(1e-12));
}

TEST_CASE("sublayer wrapper: zero inner function in eval mode is layer_norm") {
    std::mt19937 rng(63);
    mtn::LayerNormT<double> norm(6);
    auto x = testutil::random_tensor({3, 6}, rng);
    auto wrapped = mtn::sublayer<double>(
        x, [](const DTensor& in) { return DTensor::zeros(in.shape()); }, norm, {});
    auto direct = norm.forward(x);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(wrapped.data()[i] == direct.data()[i]);

    CHECK(wrapped.shape() == x.shape());
    CHECK_THROWS_AS(mtn::sublayer<double>(
                        x, [](const DTensor& in) { return DTensor::zeros({1, 2}); }, norm, {}),
                    mtn::ShapeError);
}

TEST_CASE("sublayer dropout p=0 in training equals eval mode") {
    std::mt19937 rng(64), drop_rng(65);
    mtn::LayerNormT<double> norm(4);
    auto x = testutil::random_tensor({2, 4}, rng);
    auto inner = [](const DTensor& in) { return mtn::relu(in); };
    auto train_out =
        mtn::sublayer<double>(x, inner, norm, mtn::SublayerCtx{0.0, true, &drop_rng});
    auto eval_out = mtn::sublayer<double>(x, inner, norm, {});
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(train_out.data()[i] == eval_out.data()[i]);
}

TEST_CASE("attention sublayer gradients pass finite differences") {
    std::mt19937 rng(66);
    mtn::AttentionSubLayerT<double> block(4, 2, 6, rng);
    auto x = testutil::random_tensor({3, 4}, rng);
    auto kv = testutil::random_tensor({2, 4}, rng);
    auto loss_fn = [&]() {
        auto y = block.forward(x, kv);
        return mtn::mean_all(mtn::mul(y, y));
    };
    std::vector<mtn::TensorT<double>*> inputs{&x, &kv, &block.attn.wq.w, &block.attn.wo.w,
                                              &block.ff.w1.w, &block.norm_attn.gain};
    CHECK(testutil::max_grad_error(inputs, loss_fn) < 1e-4);
}
