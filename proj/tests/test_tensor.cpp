#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mtn/loss.hpp"
#include "mtn/tensor.hpp"
#include "testutil.hpp"

using mtn::Shape;
using DTensor = mtn::TensorT<double>;

TEST_CASE("tensor invariants") {
    auto t = DTensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6);
    CHECK_THROWS_AS(DTensor::from_data({2, 2}, {1, 2, 3}), mtn::ShapeError);
    CHECK_THROWS_AS(DTensor::zeros({0, 3}), mtn::ShapeError);
    auto bad = DTensor::from_data({2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(bad.assert_finite("bad"), mtn::NumericError);
}

TEST_CASE("matmul identity and zero cases") {
    std::mt19937 rng(11);
    auto a = testutil::random_tensor({3, 3}, rng);
    auto eye = DTensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
    auto prod = mtn::matmul(a, eye);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(prod.data()[i] == doctest::Approx(a.data()[i]).epsilon(1e-15));

    auto z = DTensor::zeros({2, 3});
    auto x = testutil::random_tensor({3, 4}, rng);
    auto zx = mtn::matmul(z, x);
    CHECK(zx.shape() == Shape{2, 4});
    for (int64_t i = 0; i < zx.numel(); ++i) CHECK(zx.data()[i] == 0.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    std::mt19937 rng(12);
    auto a = testutil::random_tensor({3, 3}, rng);
    auto b = testutil::random_tensor({3, 3}, rng);
    auto c = mtn::matmul(a, b);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int l = 0; l < 3; ++l) acc += a.at({i, l}) * b.at({l, j});
            CHECK(std::fabs(c.at({i, j}) - acc) < 1e-12);
        }
}

TEST_CASE("matmul shape errors report both shapes") {
    auto a = DTensor::zeros({2, 3});
    auto b = DTensor::zeros({4, 5});
    CHECK_THROWS_WITH_AS(mtn::matmul(a, b), doctest::Contains("[2x3]"), mtn::ShapeError);
    CHECK_THROWS_WITH_AS(mtn::matmul(a, b), doctest::Contains("[4x5]"), mtn::ShapeError);
}

TEST_CASE("batched matmul equals the per-item loop") {
    std::mt19937 rng(13);
    auto a = testutil::random_tensor({2, 3, 4}, rng);
    auto b = testutil::random_tensor({2, 4, 5}, rng);
    auto c = mtn::matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 5});
    for (int64_t i = 0; i < 2; ++i) {
        auto ai = DTensor::from_data({3, 4}, std::vector<double>(a.data() + i * 12, a.data() + (i + 1) * 12));
        auto bi = DTensor::from_data({4, 5}, std::vector<double>(b.data() + i * 20, b.data() + (i + 1) * 20));
        auto ci = mtn::matmul(ai, bi);
        for (int64_t j = 0; j < 15; ++j) CHECK(c.data()[i * 15 + j] == doctest::Approx(ci.data()[j]).epsilon(1e-15));
    }
}

TEST_CASE("softmax basics") {
    auto constant = DTensor::from_data({1, 4}, {2.5, 2.5, 2.5, 2.5});
    auto s = mtn::softmax(constant, -1);
    for (int64_t i = 0; i < 4; ++i) CHECK(s.data()[i] == doctest::Approx(0.25).epsilon(1e-12));

    // frozen: e^0 = 1, e^(ln 3) = 3 -> [1/4, 3/4]
    auto x = DTensor::from_data({1, 2}, {0.0, std::log(3.0)});
    auto sx = mtn::softmax(x, -1);
    CHECK(sx.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(sx.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and normalization properties") {
    std::mt19937 rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = testutil::random_tensor({3, 5}, rng, -4, 4);
        auto shifted = mtn::add(x, DTensor::full({1}, 1.75));
        auto s0 = mtn::softmax(x, -1);
        auto s1 = mtn::softmax(shifted, -1);
        for (int64_t i = 0; i < x.numel(); ++i)
            CHECK(std::fabs(s0.data()[i] - s1.data()[i]) < 1e-12);
        for (int64_t r = 0; r < 3; ++r) {
            double sum = 0;
            for (int64_t j = 0; j < 5; ++j) {
                CHECK(s0.at({r, j}) > 0.0);
                sum += s0.at({r, j});
            }
            CHECK(std::fabs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("softmax over a non-terminal axis") {
    std::mt19937 rng(15);
    auto x = testutil::random_tensor({2, 3, 2}, rng);
    auto s = mtn::softmax(x, 1);
    for (int64_t o = 0; o < 2; ++o)
        for (int64_t in = 0; in < 2; ++in) {
            double sum = 0;
            for (int64_t l = 0; l < 3; ++l) sum += s.at({o, l, in});
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    CHECK_THROWS_AS(mtn::softmax(x, 3), mtn::ShapeError);
}

TEST_CASE("layer_norm constant input maps to bias under unit gain") {
    auto x = DTensor::full({2, 4}, 3.25);
    auto gain = DTensor::ones({4});
    auto bias = DTensor::zeros({4});
    auto y = mtn::layer_norm(x, gain, bias);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(y.data()[i]) < 1e-9);
}

TEST_CASE("layer_norm output is standardized") {
    std::mt19937 rng(16);
    auto x = testutil::random_tensor({5, 32}, rng, -3, 3);
    auto y = mtn::layer_norm(x, DTensor::ones({32}), DTensor::zeros({32}));
    for (int64_t r = 0; r < 5; ++r) {
        double mean = 0, var = 0;
        for (int64_t j = 0; j < 32; ++j) mean += y.at({r, j});
        mean /= 32;
        for (int64_t j = 0; j < 32; ++j) var += (y.at({r, j}) - mean) * (y.at({r, j}) - mean);
        var /= 32;
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("backward on sum and quadratic forms") {
    std::mt19937 rng(17);
    auto x = testutil::random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    auto loss = mtn::sum_all(x);
    loss.backward();
    for (auto g : x.grad()) CHECK(g == 1.0);

    auto y = testutil::random_tensor({6}, rng);
    y.set_requires_grad(true);
    auto half = mtn::scale(mtn::sum_all(mtn::mul(y, y)), 0.5);
    half.backward();
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(y.grad()[static_cast<size_t>(i)] == doctest::Approx(y.data()[i]).epsilon(1e-12));

    CHECK_THROWS_AS(x.backward(), mtn::ContractError);  // non-scalar
}

TEST_CASE("composite graph matches finite differences") {
    std::mt19937 rng(18);
    auto x = testutil::random_tensor({2, 3}, rng);
    auto w = testutil::random_tensor({3, 4}, rng);
    auto b = testutil::random_tensor({4}, rng);
    std::vector<int32_t> targets{1, 3};
    auto loss_fn = [&]() {
        auto logits = mtn::add(mtn::matmul(x, w), b);
        return mtn::label_smoothed_nll(logits, targets, 0.0, 0);
    };
    CHECK(testutil::max_grad_error({&x, &w, &b}, loss_fn) < 1e-4);
}

TEST_CASE("randomized gradient checks across every differentiable op") {
    std::mt19937 rng(19);
    std::uniform_int_distribution<int64_t> dim(1, 5);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t m = dim(rng), k = dim(rng), n = dim(rng);
        auto a = testutil::random_tensor({m, k}, rng);
        auto b = testutil::random_tensor({k, n}, rng);
        auto bias = testutil::random_tensor({n}, rng);
        auto gain = testutil::random_tensor({n}, rng, 0.5, 1.5);
        auto loss_fn = [&]() {
            auto y = mtn::matmul(a, b);                      // matmul
            y = mtn::add(y, bias);                           // broadcast add
            y = mtn::relu(y);                                // relu
            y = mtn::add(y, DTensor::full({1}, 0.1));        // scalar broadcast
            auto s = mtn::softmax(y, -1);                    // softmax
            auto ln = mtn::layer_norm(mtn::matmul_nt(s, b), gain,
                                      DTensor::zeros({k}).set_requires_grad(false));
            return mtn::mean_all(mtn::mul(ln, ln));
        };
        // gain feeds layer_norm over width k; regenerate when widths differ
        if (gain.numel() != k) {
            gain = testutil::random_tensor({k}, rng, 0.5, 1.5);
        }
        CHECK(testutil::max_grad_error({&a, &b, &bias, &gain}, loss_fn) < 1e-4);
    }
}

TEST_CASE("slice, concat, reshape and stack gradients") {
    std::mt19937 rng(20);
    auto x = testutil::random_tensor({3, 6}, rng);
    auto y = testutil::random_tensor({2, 4}, rng);
    auto z = testutil::random_tensor({4, 4}, rng);
    auto loss_fn = [&]() {
        auto left = mtn::slice_lastdim(x, 0, 3);
        auto right = mtn::slice_lastdim(x, 3, 6);
        auto cat = mtn::concat_lastdim<double>({left, right, mtn::scale(x, 0.5)});
        auto flat = mtn::reshape(cat, {9, 4});
        auto stacked = mtn::stack_rows_padded<double>({y, z, flat});
        auto rows = mtn::concat_rows<double>({y, z});
        return mtn::add(mtn::mean_all(mtn::mul(stacked, stacked)), mtn::mean_all(rows));
    };
    CHECK(testutil::max_grad_error({&x, &y, &z}, loss_fn) < 1e-4);
}

TEST_CASE("embedding gathers rows and scatters gradients") {
    std::mt19937 rng(21);
    auto weight = testutil::random_tensor({7, 3}, rng);
    std::vector<int32_t> ids{2, 2, 5, 0};
    auto out = mtn::embedding(weight, ids);
    CHECK(out.shape() == Shape{4, 3});
    for (int64_t j = 0; j < 3; ++j) CHECK(out.at({0, j}) == weight.at({2, j}));
    CHECK_THROWS_AS(mtn::embedding(weight, std::vector<int32_t>{7}), mtn::ContractError);
    CHECK_THROWS_AS(mtn::embedding(weight, std::vector<int32_t>{-1}), mtn::ContractError);

    auto loss_fn = [&]() { return mtn::mean_all(mtn::mul(mtn::embedding(weight, ids), mtn::embedding(weight, ids))); };
    CHECK(testutil::max_grad_error({&weight}, loss_fn) < 1e-4);
}

TEST_CASE("broadcast add reduces gradients to each operand shape") {
    std::mt19937 rng(22);
    auto a = testutil::random_tensor({2, 3, 4}, rng);
    auto b = testutil::random_tensor({3, 1}, rng);
    auto loss_fn = [&]() { return mtn::mean_all(mtn::mul(mtn::add(a, b), mtn::add(a, b))); };
    CHECK(testutil::max_grad_error({&a, &b}, loss_fn) < 1e-4);
    CHECK_THROWS_AS(mtn::add(DTensor::zeros({2, 3}), DTensor::zeros({2, 4})), mtn::ShapeError);
}

TEST_CASE("dropout scales kept values and is seed-deterministic") {
    auto x = DTensor::ones({1000});
    std::mt19937 rng_a(7), rng_b(7);
    auto a = mtn::dropout(x, 0.4, true, rng_a);
    auto b = mtn::dropout(x, 0.4, true, rng_b);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
    int64_t kept = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double v = a.data()[i];
        CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.6).epsilon(1e-12)));
        kept += v != 0.0;
    }
    CHECK(kept > 480);
    CHECK(kept < 720);

    std::mt19937 rng_c(9);
    auto eval_out = mtn::dropout(x, 0.4, false, rng_c);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(eval_out.data()[i] == 1.0);
}

TEST_CASE("gradients of unreachable tensors stay absent") {
    auto x = DTensor::ones({2}).set_requires_grad(true);
    auto unused = DTensor::ones({2}).set_requires_grad(true);
    auto loss = mtn::sum_all(x);
    loss.backward();
    CHECK(x.has_grad());
    CHECK_FALSE(unused.has_grad());
}
