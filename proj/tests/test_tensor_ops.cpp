#include <doctest.h>

#include <cmath>
#include <random>

#include "adcsl/errors.hpp"
#include "adcsl/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace adcsl;
using oracle::gradcheck;
using oracle::uniform_tensor;

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr int kSeeds = 20;

// Runs gradcheck over kSeeds random draws of the given input shapes.
double worst_over_seeds(const std::vector<Shape>& shapes, const oracle::Builder& f) {
    double worst = 0.0;
    for (int s = 0; s < kSeeds; ++s) {
        std::mt19937_64 rng(1000 + s);
        std::vector<Tensor> inputs;
        for (const auto& shape : shapes) inputs.push_back(uniform_tensor(shape, rng));
        worst = std::max(worst, gradcheck(inputs, f, 77 + s));
    }
    return worst;
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.dim(-1) == 3);
    CHECK(t.at({1, 2}) == 6);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    CHECK(t.reshaped({3, 2}).at({2, 1}) == 6);
    CHECK_THROWS(t.reshaped({4, 2}));
    CHECK(max_abs_diff(t, t) == 0.0);
    CHECK(relative_error(Tensor::zeros({3}), Tensor::zeros({3})) == 0.0);
}

TEST_CASE("matmul examples") {
    Tape tape;
    Var id = tape.constant(Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}));
    Var b = tape.constant(Tensor({2, 2}, std::vector<double>{3, 4, 5, 6}));
    CHECK(matmul(id, b).value() == b.value());

    Var row = tape.constant(Tensor({1, 2}, std::vector<double>{1, 2}));
    Var col = tape.constant(Tensor({2, 1}, std::vector<double>{3, 4}));
    CHECK(matmul(row, col).value().item() == 11.0);

    CHECK_THROWS_AS(matmul(row, row), DimensionError);
}

TEST_CASE("matmul gradient of sum equals ones times b transposed") {
    std::mt19937_64 rng(5);
    const Tensor a = uniform_tensor({3, 4}, rng), b = uniform_tensor({4, 2}, rng);
    Tape tape;
    Var va = tape.leaf(a);
    Var y = sum(matmul(va, tape.constant(b)));
    tape.backward(y);
    const Tensor expected({3, 4}, oracle::naive_matmul(Tensor::ones({3, 2}).data().data(),
                                                        kernel::transpose(b).data().data(), 3, 2, 4));
    CHECK(max_abs_diff(va.grad(), expected) < 1e-14);

    auto f = [&](const Tensor& x) { return adcsl::sum(kernel::matmul(x, b)); };
    CHECK(relative_error(oracle::finite_difference(f, a), va.grad()) < kOpTolerance);
}

TEST_CASE("matmul kernel matches triple loop") {
    std::mt19937_64 rng(9);
    const Tensor a = uniform_tensor({5, 7}, rng), b = uniform_tensor({7, 3}, rng);
    const Tensor c = kernel::matmul(a, b);
    const auto ref = oracle::naive_matmul(a.data().data(), b.data().data(), 5, 7, 3);
    CHECK(max_abs_diff(c, Tensor({5, 3}, ref)) < 1e-13);
}

TEST_CASE("softmax rows") {
    Tape tape;
    auto sm = [&](std::vector<double> v) {
        const std::size_t n = v.size();
        return softmax_rows(tape.constant(Tensor({1, n}, std::move(v)))).value();
    };
    CHECK(sm({0, 0}) == Tensor({1, 2}, std::vector<double>{0.5, 0.5}));
    CHECK(sm({1000, 1000}) == Tensor({1, 2}, std::vector<double>{0.5, 0.5}));

    // exp-normalise in long double
    const Tensor r = sm({1, 2, 3});
    long double z = expl(1.0L) + expl(2.0L) + expl(3.0L);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(r[i] - static_cast<double>(expl(i + 1.0L) / z)) < 1e-15);

    std::mt19937_64 rng(3);
    const Tensor big = uniform_tensor({6, 11}, rng, -50, 50);
    const Tensor s = softmax_rows(tape.constant(big)).value();
    for (std::size_t i = 0; i < 6; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 11; ++j) {
            CHECK(s[i * 11 + j] >= 0.0);
            row += s[i * 11 + j];
        }
        CHECK(std::abs(row - 1.0) < 1e-12);
    }
}

TEST_CASE("layernorm examples") {
    Tape tape;
    Var ones = tape.constant(Tensor::ones({2})), zeros = tape.constant(Tensor::zeros({2}));
    const Tensor c = layernorm(tape.constant(Tensor({1, 2}, std::vector<double>{4, 4})), ones, zeros).value();
    CHECK(c[0] == 0.0);
    CHECK(c[1] == 0.0);
    const Tensor r = layernorm(tape.constant(Tensor({1, 2}, std::vector<double>{1, 3})), ones, zeros).value();
    CHECK(std::abs(r[0] + 1.0) < 1e-4);
    CHECK(std::abs(r[1] - 1.0) < 1e-4);

    std::mt19937_64 rng(4);
    const Tensor x = uniform_tensor({3, 8}, rng), g = uniform_tensor({8}, rng), b = uniform_tensor({8}, rng);
    const Tensor y = layernorm(tape.constant(x), tape.constant(g), tape.constant(b)).value();
    const auto ref = oracle::naive_layernorm(x.buffer(), g.buffer(), b.buffer());
    CHECK(max_abs_diff(y, Tensor({3, 8}, ref)) < 1e-13);
}

TEST_CASE("gelu and transpose examples") {
    Tape tape;
    CHECK(gelu(tape.constant(Tensor::scalar(0.0))).value().item() == 0.0);
    std::mt19937_64 rng(8);
    const Tensor x = uniform_tensor({2, 3, 4}, rng, -3, 3);
    CHECK(transpose(transpose(tape.constant(x))).value() == x);
    const Tensor g = gelu(tape.constant(x)).value();
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(g[i] - oracle::naive_gelu(x[i])) < 1e-15);
}

TEST_CASE("backward contract") {
    Tape tape;
    std::mt19937_64 rng(2);
    const Tensor x = uniform_tensor({4, 3}, rng);
    Var v = tape.leaf(x);
    tape.backward(sum(v));
    CHECK(v.grad() == Tensor::ones({4, 3}));
    tape.backward(sum(mul(v, v)));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(v.grad()[i] == doctest::Approx(2 * x[i]).epsilon(1e-15));
    CHECK_THROWS_AS(tape.backward(v), ContractError);
}

TEST_CASE("forward determinism") {
    std::mt19937_64 rng(12);
    const Tensor x = uniform_tensor({2, 5, 6}, rng), w = uniform_tensor({6, 6}, rng);
    auto run = [&] {
        Tape tape;
        return gelu(softmax_rows(matmul(tape.constant(x), tape.constant(w)))).value();
    };
    CHECK(run() == run());
}

TEST_CASE("finite-difference gradients of every op") {
    using V = std::vector<Var>;
    SUBCASE("matmul 2d") {
        CHECK(worst_over_seeds({{3, 4}, {4, 2}}, [](Tape&, const V& v) { return matmul(v[0], v[1]); }) < kOpTolerance);
    }
    SUBCASE("matmul batched by shared") {
        CHECK(worst_over_seeds({{2, 3, 4}, {4, 5}}, [](Tape&, const V& v) { return matmul(v[0], v[1]); }) <
              kOpTolerance);
    }
    SUBCASE("matmul batched by batched") {
        CHECK(worst_over_seeds({{2, 3, 4}, {2, 4, 3}}, [](Tape&, const V& v) { return matmul(v[0], v[1]); }) <
              kOpTolerance);
    }
    SUBCASE("add sub mul") {
        CHECK(worst_over_seeds({{3, 4}, {3, 4}}, [](Tape&, const V& v) { return add(v[0], v[1]); }) < kOpTolerance);
        CHECK(worst_over_seeds({{3, 4}, {3, 4}}, [](Tape&, const V& v) { return sub(v[0], v[1]); }) < kOpTolerance);
        CHECK(worst_over_seeds({{3, 4}, {3, 4}}, [](Tape&, const V& v) { return mul(v[0], v[1]); }) < kOpTolerance);
    }
    SUBCASE("scale") {
        CHECK(worst_over_seeds({{5}}, [](Tape&, const V& v) { return scale(v[0], -1.7); }) < kOpTolerance);
    }
    SUBCASE("add_bias") {
        CHECK(worst_over_seeds({{2, 3, 4}, {4}}, [](Tape&, const V& v) { return add_bias(v[0], v[1]); }) <
              kOpTolerance);
    }
    SUBCASE("embedding_add") {
        CHECK(worst_over_seeds({{2, 3, 4}, {3, 4}}, [](Tape&, const V& v) { return embedding_add(v[0], v[1]); }) <
              kOpTolerance);
    }
    SUBCASE("transpose and reshape") {
        CHECK(worst_over_seeds({{2, 3, 4}}, [](Tape&, const V& v) { return transpose(v[0]); }) < kOpTolerance);
        CHECK(worst_over_seeds({{2, 3, 4}}, [](Tape&, const V& v) { return reshape(v[0], {6, 4}); }) < kOpTolerance);
    }
    SUBCASE("concat and slice") {
        CHECK(worst_over_seeds({{2, 3}, {2, 5}}, [](Tape&, const V& v) { return concat_last_dim({v[0], v[1]}); }) <
              kOpTolerance);
        CHECK(worst_over_seeds({{2, 7}}, [](Tape&, const V& v) { return slice_last_dim(v[0], 2, 3); }) <
              kOpTolerance);
    }
    SUBCASE("gather_rows") {
        CHECK(worst_over_seeds({{2, 5, 3}}, [](Tape&, const V& v) {
                  return gather_rows(v[0], std::vector<std::vector<std::size_t>>{{0, 2, 2}, {4, 1, 0}});
              }) < kOpTolerance);
        CHECK(worst_over_seeds({{2, 5, 3}}, [](Tape&, const V& v) {
                  return gather_rows(v[0], std::vector<std::size_t>{0, 3});
              }) < kOpTolerance);
    }
    SUBCASE("mean_rows and prepend_row") {
        CHECK(worst_over_seeds({{2, 5, 3}}, [](Tape&, const V& v) { return mean_rows(v[0]); }) < kOpTolerance);
        CHECK(worst_over_seeds({{2, 4, 3}, {3}}, [](Tape&, const V& v) { return prepend_row(v[0], v[1]); }) <
              kOpTolerance);
    }
    SUBCASE("segment_mean") {
        CHECK(worst_over_seeds({{5, 2, 3}}, [](Tape&, const V& v) {
                  return segment_mean(v[0], {1, 0, 1, 2, 1}, 3);
              }) < kOpTolerance);
    }
    SUBCASE("softmax and log_softmax") {
        CHECK(worst_over_seeds({{3, 6}}, [](Tape&, const V& v) { return softmax_rows(v[0]); }) < kOpTolerance);
        CHECK(worst_over_seeds({{2, 3, 6}}, [](Tape&, const V& v) { return log_softmax_rows(v[0]); }) <
              kOpTolerance);
    }
    SUBCASE("layernorm") {
        CHECK(worst_over_seeds({{2, 8}, {8}, {8}}, [](Tape&, const V& v) { return layernorm(v[0], v[1], v[2]); }) <
              kOpTolerance);
    }
    SUBCASE("gelu and sum") {
        CHECK(worst_over_seeds({{4, 5}}, [](Tape&, const V& v) { return gelu(v[0]); }) < kOpTolerance);
        CHECK(worst_over_seeds({{4, 5}}, [](Tape&, const V& v) { return sum(v[0]); }) < kOpTolerance);
    }
}

TEST_CASE("shape errors") {
    Tape tape;
    Var a = tape.constant(Tensor::zeros({2, 3})), b = tape.constant(Tensor::zeros({3, 2}));
    CHECK_THROWS_AS(add(a, b), DimensionError);
    CHECK_THROWS_AS(add_bias(a, tape.constant(Tensor::zeros({2}))), DimensionError);
    CHECK_THROWS_AS(slice_last_dim(a, 2, 2), DimensionError);
    CHECK_THROWS_AS(segment_mean(a, {0, 0}, 2), ContractError);
}
