#include "doctest.h"

#include <cmath>
#include <string>

#include "gradcheck.hpp"
#include "microforge/autodiff/adam.hpp"
#include "microforge/autodiff/ops.hpp"

using namespace mf;
using namespace mf::ad;
using mf::testing::grad_check;
using mf::testing::random_tensor;

namespace {

// Weighted sum with fixed random weights so every output element matters.
Tensor probe_loss(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

Tensor fixed_like(const Tensor& t, Rng& rng) { return random_tensor(t.shape(), rng, 1.0, false); }

void check_op(const char* name, const std::function<Tensor()>& build_out, std::vector<Tensor> inputs,
              std::uint64_t seed, int probes = 60) {
    Rng rng(seed);
    const Tensor w = fixed_like(build_out(), rng);
    auto r = grad_check([&] { return probe_loss(build_out(), w); }, inputs, probes, 1e-4, seed + 1);
    INFO(name << " worst rel " << r.worst_rel);
    CHECK(r.failures == 0);
}

}  // namespace

TEST_CASE("matmul with identity returns the operand") {
    Rng rng(1);
    Tensor a = random_tensor({3, 5}, rng, 1.0, false);
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor out = matmul(eye, a);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(out.values()[i] == a.values()[i]);
}

TEST_CASE("matmul agrees with a naive triple loop") {
    Rng rng(2);
    Tensor a = random_tensor({5, 7}, rng, 1.0, false);
    Tensor b = random_tensor({7, 4}, rng, 1.0, false);
    Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < 7; ++p) s += a.at(i, p) * b.at(p, j);
            CHECK(std::abs(c.at(i, j) - s) <= 1e-12);
        }
    }
}

TEST_CASE("softmax of equal logits is uniform and rows sum to one") {
    Tensor s = softmax(Tensor::from({1, 3}, {0, 0, 0}));
    for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    Rng rng(3);
    Tensor x = random_tensor({20, 11}, rng, 30.0, false);
    Tensor y = softmax(x);
    for (std::size_t i = 0; i < 20; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 11; ++j) row += y.at(i, j);
        CHECK(std::abs(row - 1.0) <= 1e-12);
    }
}

TEST_CASE("layer norm rows are standardized before scale and shift") {
    Rng rng(4);
    Tensor x = random_tensor({30, 64}, rng, 3.0, false);
    Tensor y = layer_norm(x, Tensor::full({1, 64}, 1.0), Tensor::zeros({1, 64}));
    for (std::size_t i = 0; i < 30; ++i) {
        double mu = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 64; ++j) mu += y.at(i, j);
        mu /= 64;
        for (std::size_t j = 0; j < 64; ++j) var += (y.at(i, j) - mu) * (y.at(i, j) - mu);
        var /= 64;
        CHECK(std::abs(mu) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-8);
    }
}

TEST_CASE("gradients of every op kind match central differences") {
    Rng rng(10);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({4, 6}, rng);
    Tensor m = random_tensor({6, 3}, rng);
    Tensor row = random_tensor({1, 6}, rng);
    Tensor bias = random_tensor({1, 3}, rng);

    check_op("add", [&] { return add(a, b); }, {a, b}, 100);
    check_op("subtract", [&] { return sub(a, b); }, {a, b}, 101);
    check_op("multiply", [&] { return mul(a, b); }, {a, b}, 102);
    check_op("scale", [&] { return scale(a, -1.7); }, {a}, 103);
    check_op("square", [&] { return square(a); }, {a}, 104);
    check_op("gelu", [&] { return gelu(a); }, {a}, 105);
    check_op("add_row", [&] { return add_row(a, row); }, {a, row}, 106);
    check_op("matmul", [&] { return matmul(a, m); }, {a, m}, 107);
    check_op("linear", [&] { return linear(a, m, bias); }, {a, m, bias}, 108);
    check_op("transpose", [&] { return transpose(a); }, {a}, 109);
    check_op("reshape", [&] { return reshape(a, {3, 8}); }, {a}, 110);
    const std::vector<std::size_t> idx{3, 0, 3, 1, 3};
    check_op("gather_rows", [&] { return gather_rows(a, idx); }, {a}, 111);
    check_op("concat", [&] { return concat_rows({a, row, b}); }, {a, row, b}, 112);
    check_op("softmax", [&] { return softmax(a); }, {a}, 113);
    check_op("mean", [&] { return reshape(mean(square(a)), {1, 1}); }, {a}, 114);
    check_op("sum", [&] { return reshape(sum(mul(a, b)), {1, 1}); }, {a, b}, 115);
    check_op("mse", [&] { return reshape(mse(a, b), {1, 1}); }, {a, b}, 116);
}

TEST_CASE("layer norm gradient passes 100 finite-difference probes") {
    Rng rng(11);
    Tensor x = random_tensor({7, 9}, rng, 2.0);
    Tensor g = random_tensor({1, 9}, rng);
    Tensor bt = random_tensor({1, 9}, rng);
    Tensor w = random_tensor({7, 9}, rng, 1.0, false);
    auto r = grad_check([&] { return sum(mul(layer_norm(x, g, bt), w)); }, {x, g, bt}, 100, 1e-4, 12);
    INFO("worst rel " << r.worst_rel);
    CHECK(r.probes == 100);
    CHECK(r.failures == 0);
}

TEST_CASE("fused attention matches composed primitives and finite differences") {
    Rng rng(20);
    const std::size_t batch = 2, T = 5, heads = 2, hd = 3, dim = heads * hd;
    Tensor qkv = random_tensor({batch * T, 3 * dim}, rng);
    Tensor fused = self_attention(qkv, T, heads);

    // Column slices built from transpose + gather_rows.
    auto cols = [](const Tensor& t, std::size_t start, std::size_t n) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
        return transpose(gather_rows(transpose(t), idx));
    };
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<std::size_t> rows(T);
        for (std::size_t i = 0; i < T; ++i) rows[i] = b * T + i;
        Tensor seq = gather_rows(qkv, rows);
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor q = cols(seq, h * hd, hd), k = cols(seq, dim + h * hd, hd), v = cols(seq, 2 * dim + h * hd, hd);
            Tensor o = matmul(softmax(scale(matmul(q, transpose(k)), sc)), v);
            for (std::size_t i = 0; i < T; ++i)
                for (std::size_t d = 0; d < hd; ++d) CHECK(std::abs(o.at(i, d) - fused.at(b * T + i, h * hd + d)) < 1e-12);
        }
    }
    check_op("attention", [&] { return self_attention(qkv, T, heads); }, {qkv}, 21, 100);
}

TEST_CASE("backward of a linear function yields the fixed operand exactly") {
    Rng rng(30);
    Tensor w = random_tensor({3, 4}, rng);
    Tensor x = random_tensor({3, 4}, rng, 1.0, false);
    backward(sum(mul(w, x)));
    REQUIRE(w.has_grad());
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w.grad()[i] == x.values()[i]);
}

TEST_CASE("fan-out accumulates gradient additively") {
    Tensor x = Tensor::from({1, 2}, {1.5, -2.0}, true);
    backward(sum(add(x, mul(x, x))));
    CHECK(x.grad()[0] == doctest::Approx(1.0 + 3.0));
    CHECK(x.grad()[1] == doctest::Approx(1.0 - 4.0));
}

TEST_CASE("backward rejects non-scalar losses and a second pass") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    CHECK_THROWS_AS(backward(square(x)), ShapeError);
    Tensor loss = sum(square(x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), std::logic_error);
}

TEST_CASE("tape lists each op once with inputs preceding outputs") {
    Rng rng(31);
    Tensor x = random_tensor({3, 3}, rng);
    Tensor h = gelu(matmul(x, x));
    Tensor loss = mean(add(h, h));
    Tape tape(loss);
    CHECK(tape.size() == 4);
    const auto& ops = tape.ops();
    for (std::size_t i = 0; i < ops.size(); ++i) {
        for (const auto& in : ops[i]->inputs) {
            if (in->is_leaf()) continue;
            auto it = std::find(ops.begin(), ops.end(), in);
            REQUIRE(it != ops.end());
            CHECK(static_cast<std::size_t>(it - ops.begin()) < i);
        }
    }
    tape.backward();
    CHECK_THROWS_AS(tape.backward(), std::logic_error);
}

TEST_CASE("shape mismatch names the op and the extents") {
    Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4, 5});
    try {
        (void)matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("(2x3)") != std::string::npos);
        CHECK(msg.find("(4x5)") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2})), ShapeError);
    CHECK_THROWS_AS(layer_norm(a, Tensor::zeros({1, 2}), Tensor::zeros({1, 3})), ShapeError);
}

TEST_CASE("non-finite outputs raise a validity error") {
    Tensor big = Tensor::from({1, 1}, {1e300});
    CHECK_THROWS_AS(square(big), NonFiniteError);
}

TEST_CASE("no-grad mode records nothing") {
    Tensor w = Tensor::from({1, 1}, {2.0}, true);
    NoGradGuard ng;
    Tensor y = square(w);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->inputs.empty());
}

TEST_CASE("identical seeds give bitwise identical values and gradients") {
    auto run = [] {
        Rng rng(77);
        Tensor x = random_tensor({6, 8}, rng);
        Tensor w = random_tensor({8, 8}, rng);
        Tensor g = Tensor::full({1, 8}, 1.0, true), bta = Tensor::zeros({1, 8}, true);
        Tensor loss = mean(gelu(layer_norm(matmul(x, w), g, bta)));
        backward(loss);
        std::vector<double> out{loss.item()};
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("adam descends on w^2") {
    Tensor w = Tensor::from({1}, {1.0}, true);
    Adam opt({w}, {.lr = 0.1});
    backward(square(w));
    opt.step();
    CHECK(w.values()[0] < 1.0);
    CHECK_FALSE(w.has_grad());
}

TEST_CASE("adam leaves parameters unchanged under zero gradient") {
    Tensor w = Tensor::from({2}, {0.3, -0.7}, true);
    Adam opt({w});
    w.mutable_grad();  // explicit zero gradient
    opt.step();
    CHECK(w.values()[0] == 0.3);
    CHECK(w.values()[1] == -0.7);
}

TEST_CASE("adam solves a two-parameter quadratic within 200 steps") {
    // f(w) = 3 w0^2 + 0.5 w1^2, minimum 0 at the origin.
    Tensor w = Tensor::from({2}, {1.0, -2.0}, true);
    Tensor coeff = Tensor::from({2}, {3.0, 0.5});
    Adam opt({w}, {.lr = 0.1});
    double loss = 0.0;
    for (int i = 0; i < 200; ++i) {
        Tensor l = sum(mul(coeff, square(w)));
        loss = l.item();
        backward(l);
        opt.step();
        opt.set_lr(0.1 * (1.0 - (i + 1) / 200.0) + 1e-4);
    }
    loss = 3.0 * w.values()[0] * w.values()[0] + 0.5 * w.values()[1] * w.values()[1];
    CHECK(loss < 1e-6);
}

TEST_CASE("adam refuses a step when a parameter has no gradient") {
    Tensor a = Tensor::from({1}, {1.0}, true), b = Tensor::from({1}, {1.0}, true);
    Adam opt({a, b});
    backward(square(a));
    CHECK_THROWS_AS(opt.step(), std::logic_error);
}
