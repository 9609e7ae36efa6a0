#include "doctest.h"

#include "polynet/random.hpp"
#include "polynet/tensor.hpp"

#include <cmath>

using namespace polynet;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor out({a.extent(0), b.extent(1)});
    for (std::size_t i = 0; i < a.extent(0); ++i)
        for (std::size_t j = 0; j < b.extent(1); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.extent(1); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

// Full contraction of w against v along every mode, by explicit multi-index sum.
double brute_force_contract(const Tensor& w, const Tensor& v) {
    double total = 0.0;
    std::vector<std::size_t> idx(w.rank(), 0);
    for (std::size_t flat = 0; flat < w.size(); ++flat) {
        double term = w.at(idx);
        for (auto i : idx) term *= v[i];
        total += term;
        for (std::size_t a = w.rank(); a-- > 0;) {
            if (++idx[a] < w.extent(a)) break;
            idx[a] = 0;
        }
    }
    return total;
}

Tensor naive_conv(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2), co = k.extent(0), ks = k.extent(2);
    const std::size_t oh = (h + 2 * pad - ks) / stride + 1, ow = (w + 2 * pad - ks) / stride + 1;
    Tensor out({co, oh, ow});
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double s = 0.0;
                for (std::size_t ci = 0; ci < c; ++ci)
                    for (std::size_t a = 0; a < ks; ++a)
                        for (std::size_t b = 0; b < ks; ++b) {
                            const long ii = long(i * stride + a) - long(pad), jj = long(j * stride + b) - long(pad);
                            if (ii < 0 || jj < 0 || ii >= long(h) || jj >= long(w)) continue;
                            s += x[(ci * h + ii) * w + jj] * k[((o * c + ci) * ks + a) * ks + b];
                        }
                out[(o * oh + i) * ow + j] = s;
            }
    return out;
}

}  // namespace

TEST_CASE("tensor construction enforces the shape invariant") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("matmul") {
    const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
    CHECK(matmul(a, Tensor::identity(2)) == a);
    CHECK(matmul(a, Tensor::from_rows({{5}, {6}})) == Tensor::from_rows({{17}, {39}}));
    CHECK(max_abs(matmul(a, Tensor::zeros({2, 3}))) == 0.0);
    CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 1})), ShapeError);

    Rng rng(7);
    const Tensor x = rng.normal_tensor({4, 5}, 1.0), y = rng.normal_tensor({5, 3}, 1.0);
    CHECK(max_abs_diff(matmul(x, y), naive_matmul(x, y)) < 1e-12);
}

TEST_CASE("matmul is associative on random triples") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = rng.uniform_tensor({3, 4}, -1, 1), b = rng.uniform_tensor({4, 5}, -1, 1),
                     c = rng.uniform_tensor({5, 2}, -1, 1);
        CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-10);
    }
}

TEST_CASE("hadamard") {
    const Tensor a = Tensor::vector({1, 2, 3});
    CHECK(hadamard(a, Tensor::ones({3})) == a);
    CHECK(hadamard(a, Tensor::vector({4, 5, 6})) == Tensor::vector({4, 10, 18}));
    CHECK(max_abs(hadamard(a, Tensor::zeros({3}))) == 0.0);
    CHECK_THROWS_AS(hadamard(a, Tensor::zeros({2})), ShapeError);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = rng.normal_tensor({3, 3}, 1), y = rng.normal_tensor({3, 3}, 1), z = rng.normal_tensor({3, 3}, 1);
        CHECK(hadamard(x, y) == hadamard(y, x));
        CHECK(max_abs_diff(hadamard(x, y + z), hadamard(x, y) + hadamard(x, z)) < 1e-12);
    }
}

TEST_CASE("mode-n vector product") {
    Rng rng(5);
    const Tensor w = rng.normal_tensor({3, 4}, 1.0), v = rng.normal_tensor({4}, 1.0);
    const Tensor wv = matmul(w, v.reshaped({4, 1}));
    CHECK(max_abs_diff(mode_n_vector_product(w, v, 2), wv.reshaped({3})) < 1e-14);

    const Tensor ones3 = Tensor::ones({2, 2, 2});
    CHECK(mode_n_vector_product(ones3, Tensor::vector({1, 1}), 3) == Tensor::filled({2, 2}, 2.0));

    SUBCASE("unit vector selects a slice") {
        const Tensor t = rng.normal_tensor({2, 3, 4}, 1.0);
        const Tensor e1 = Tensor::vector({0, 1, 0});
        const Tensor slice = mode_n_vector_product(t, e1, 2);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t k = 0; k < 4; ++k) CHECK(slice(i, k) == t[(i * 3 + 1) * 4 + k]);
    }

    SUBCASE("successive contraction equals the brute-force multi-index sum") {
        for (std::size_t r = 1; r <= 4; ++r) {
            const std::size_t n = 2 + r % 4;  // extents <= 5
            Shape shape(r, n);
            const Tensor t = rng.normal_tensor(shape, 1.0), u = rng.normal_tensor({n}, 1.0);
            Tensor acc = t;
            while (acc.rank() > 1) acc = mode_n_vector_product(acc, u, acc.rank());
            const double direct = dot(acc, u);
            CHECK(std::abs(direct - brute_force_contract(t, u)) < 1e-10);
        }
    }

    CHECK_THROWS_AS(mode_n_vector_product(w, v, 3), ShapeError);
    CHECK_THROWS_AS(mode_n_vector_product(w, v, 1), ShapeError);
}

TEST_CASE("softmax_rows") {
    CHECK(softmax_rows(Tensor::from_rows({{0, 0}})) == Tensor::from_rows({{0.5, 0.5}}));
    for (double c : {-50.0, 0.0, 3.0, 700.0}) {
        const Tensor s = softmax_rows(Tensor::from_rows({{c, c, c}}));
        for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(s(0, j) - 1.0 / 3.0) < 1e-15);
    }
    const Tensor s = softmax_rows(Tensor::from_rows({{0.0, std::log(3.0)}}));
    CHECK(std::abs(s(0, 0) - 0.25) < 1e-15);
    CHECK(std::abs(s(0, 1) - 0.75) < 1e-15);

    Rng rng(9);
    const Tensor a = rng.normal_tensor({5, 7}, 3.0);
    const Tensor sa = softmax_rows(a);
    Tensor shifted = a;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 7; ++j) shifted(i, j) += double(i) * 10.0 - 4.0;
    CHECK(max_abs_diff(sa, softmax_rows(shifted)) < 1e-12);
    for (std::size_t i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            CHECK(sa(i, j) >= 0.0);
            sum += sa(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("global pooling and replication") {
    CHECK(global_avg_pool(Tensor::from_rows({{1, 2}, {3, 4}})) == Tensor::from_rows({{2, 3}}));
    const Tensor row = Tensor::from_rows({{1.5, -2.0, 7.0}});
    CHECK(global_avg_pool(row) == row);
    CHECK(global_avg_pool(Tensor::filled({4, 3}, 2.5)) == Tensor::filled({1, 3}, 2.5));

    CHECK(replicate_rows(row, 1) == row);
    CHECK(replicate_rows(Tensor::from_rows({{1, 2}}), 3) == Tensor::from_rows({{1, 2}, {1, 2}, {1, 2}}));
    const Tensor constant = Tensor::filled({6, 2}, -1.25);
    CHECK(replicate_rows(global_avg_pool(constant), 6) == constant);
    CHECK_THROWS_AS(replicate_rows(row, 0), ShapeError);
    CHECK_THROWS_AS(replicate_rows(constant, 2), ShapeError);
}

TEST_CASE("superdiag_mode3 is diag(v) and reproduces the channel-gating identity") {
    CHECK(superdiag_mode3(Tensor::ones({3})) == Tensor::identity(3));
    CHECK(superdiag_mode3(Tensor::vector({2, 3})) == Tensor::from_rows({{2, 0}, {0, 3}}));

    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t hw = 5, c = 4;
        const Tensor x = rng.normal_tensor({hw, c}, 1.0), v = rng.normal_tensor({c}, 1.0);
        const Tensor lhs = matmul(x, superdiag_mode3(v));
        const Tensor rhs = hadamard(x, replicate_rows(v.reshaped({1, c}), hw));
        CHECK(max_abs_diff(lhs, rhs) < 1e-12);
    }
}

TEST_CASE("conv2d") {
    const Tensor x = Tensor::from_rows({{1, 2}, {3, 4}}).reshaped({1, 2, 2});
    CHECK(conv2d(x, Tensor::ones({1, 1, 2, 2}), 1, 0) == Tensor({1, 1, 1}, {10.0}));

    Rng rng(2);
    const Tensor img = rng.normal_tensor({3, 5, 6}, 1.0);

    SUBCASE("1x1 kernel is a per-pixel channel matmul") {
        const Tensor k = rng.normal_tensor({4, 3, 1, 1}, 1.0);
        const Tensor y = conv2d(img, k, 1, 0);
        const Tensor expect = matmul(k.reshaped({4, 3}), img.reshaped({3, 30})).reshaped({4, 5, 6});
        CHECK(max_abs_diff(y, expect) < 1e-12);
    }
    SUBCASE("delta kernel is the identity") {
        Tensor k({3, 3, 3, 3});
        for (std::size_t c = 0; c < 3; ++c) k[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
        CHECK(conv2d(img, k, 1, 1) == img);
    }
    SUBCASE("matches a direct loop for strides and padding") {
        for (std::size_t stride : {1u, 2u})
            for (std::size_t pad : {0u, 1u}) {
                const Tensor k = rng.normal_tensor({2, 3, 3, 3}, 1.0);
                CHECK(max_abs_diff(conv2d(img, k, stride, pad), naive_conv(img, k, stride, pad)) < 1e-12);
            }
    }
    SUBCASE("adjoints satisfy <conv(x), g> = <x, conv^T(g)>") {
        const Tensor k = rng.normal_tensor({2, 3, 3, 3}, 1.0);
        const Tensor y = conv2d(img, k, 2, 1);
        const Tensor g = rng.normal_tensor(y.shape(), 1.0);
        CHECK(std::abs(dot(y, g) - dot(img, conv2d_input_grad(g, k, img.shape(), 2, 1))) < 1e-10);
        CHECK(std::abs(dot(y, g) - dot(k, conv2d_kernel_grad(g, img, k.shape(), 2, 1))) < 1e-10);
    }
    CHECK_THROWS_AS(conv2d(img, Tensor::ones({1, 2, 3, 3}), 1, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(img, Tensor::ones({1, 3, 3, 3}), 0, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(img, Tensor::ones({1, 3, 9, 9}), 1, 1), ShapeError);
}

TEST_CASE("reshape and transpose") {
    const Tensor a = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
    const Tensor r = reshape(a, {3, 2});
    CHECK(std::equal(r.values().begin(), r.values().end(), a.values().begin()));
    CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);

    CHECK(transpose(Tensor::from_rows({{1, 2}, {3, 4}})) == Tensor::from_rows({{1, 3}, {2, 4}}));
    CHECK(transpose(transpose(a)) == a);

    Rng rng(4);
    const Tensor t = rng.normal_tensor({2, 3, 4}, 1.0);
    const Tensor p = permute(t, {2, 0, 1});
    CHECK(p.shape() == Shape{4, 2, 3});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 4; ++k) CHECK(p[(k * 2 + i) * 3 + j] == t[(i * 3 + j) * 4 + k]);
    CHECK(permute(permute(t, {2, 0, 1}), {1, 2, 0}) == t);
    CHECK(permute(a, {1, 0}) == transpose(a));
    CHECK_THROWS_AS(permute(t, {0, 0, 1}), ShapeError);
}

TEST_CASE("float tensors use the same kernels") {
    const BasicTensor<float> a = BasicTensor<float>::from_rows({{1, 2}, {3, 4}});
    CHECK(matmul(a, BasicTensor<float>::identity(2)) == a);
    CHECK(softmax_rows(BasicTensor<float>::from_rows({{0, 0}}))(0, 1) == doctest::Approx(0.5f));
}
