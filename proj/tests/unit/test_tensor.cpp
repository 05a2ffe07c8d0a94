#include <cmath>
#include <sstream>

#include "doctest.h"
#include "ofakd/gradcheck.hpp"
#include "ofakd/ops.hpp"
#include "ofakd/serialize.hpp"
#include "support.hpp"

using namespace ofakd;
using testing::random_tensor;

namespace {

using TD = Tensor<double>;

TD make(Shape shape, std::vector<double> v) { return TD(std::move(shape), std::move(v)); }

std::vector<double> naive_matmul(const TD& a, const TD& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a.at(i * k + p) * b.at(p * n + j);
    return out;
}

std::vector<double> naive_conv(const TD& x, const TD& w, std::size_t stride, std::size_t pad) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t oh = (H + 2 * pad - kh) / stride + 1, ow = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> out(B * O * oh * ow, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v) {
                                const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                                const long z = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                                if (y < 0 || z < 0 || y >= static_cast<long>(H) || z >= static_cast<long>(W)) continue;
                                acc += x.at(((b * C + c) * H + static_cast<std::size_t>(y)) * W +
                                            static_cast<std::size_t>(z)) *
                                       w.at(((o * C + c) * kh + u) * kw + v);
                            }
                    out[((b * O + o) * oh + i) * ow + j] = acc;
                }
    return out;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("tensor rejects a data length that disagrees with the shape") {
    CHECK_THROWS_AS(TD({2, 3}, std::vector<double>(5)), DimensionError);
    CHECK_THROWS_AS(TD({0, 3}, {}), DimensionError);
}

TEST_CASE("matmul identity and small product") {
    const auto eye = make({2, 2}, {1, 0, 0, 1});
    const auto r = matmul(eye, eye);
    CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{1, 0, 0, 1});
    const auto p = matmul(make({2, 2}, {1, 2, 3, 4}), make({2, 1}, {0, 1}));
    CHECK(p.shape() == Shape{2, 1});
    CHECK(p.at(0) == 2.0);
    CHECK(p.at(1) == 4.0);
}

TEST_CASE("matmul matches a triple-loop oracle") {
    Rng rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        const auto a = random_tensor({5, 7}, rng);
        const auto b = random_tensor({7, 3}, rng);
        const auto c = matmul(a, b);
        const auto oracle = naive_matmul(a, b);
        CHECK(testing::max_abs_diff(c.data(), oracle) <= 1e-12);
    }
    // Larger sizes cross the blocked path.
    const auto a = random_tensor({33, 70}, rng);
    const auto b = random_tensor({70, 41}, rng);
    CHECK(testing::max_rel_diff(matmul(a, b).data(), naive_matmul(a, b)) <= 1e-10);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    try {
        (void)matmul(TD::zeros({2, 3}), TD::zeros({4, 5}));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("bmm agrees with per-batch matmul") {
    Rng rng(3);
    const auto a = random_tensor({3, 4, 5}, rng);
    const auto b = random_tensor({3, 5, 2}, rng);
    const auto c = bmm(a, b);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto ak = reshape(narrow(a, 0, k, 1), {4, 5});
        const auto bk = reshape(narrow(b, 0, k, 1), {5, 2});
        const auto ref = naive_matmul(ak, bk);
        for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(c.at(k * 8 + i) - ref[i]) <= 1e-12);
    }
}

TEST_CASE("elementwise examples") {
    const auto r = relu(make({3}, {-1, 0, 2}));
    CHECK(r.at(0) == 0.0);
    CHECK(r.at(1) == 0.0);
    CHECK(r.at(2) == 2.0);

    Rng rng(5);
    const auto x = random_tensor({4, 3}, rng);
    const auto y = add(x, TD::zeros({4, 3}));
    CHECK(testing::max_abs_diff(x.data(), y.data()) == 0.0);

    const double oracle = 0.5 * 1.0 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(std::abs(gelu(TD::scalar(1.0)).item() - oracle) <= 1e-6);
    for (double v : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
        const double o = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        CHECK(std::abs(gelu(TD::scalar(v)).item() - o) <= 1e-12);
    }
}

TEST_CASE("bias-style broadcast and its limits") {
    const auto m = make({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto s = add(m, make({3}, {10, 20, 30}));
    CHECK(s.at(4) == 25.0);
    CHECK_THROWS_AS(add(m, make({2}, {1, 2})), DimensionError);
    CHECK_THROWS_AS(add(make({3}, {1, 2, 3}), m), DimensionError);
}

TEST_CASE("log of a non-positive value is a domain error") {
    CHECK_THROWS_AS(ofakd::log(make({2}, {1.0, 0.0})), DomainError);
    CHECK_THROWS_AS(ofakd::log(make({1}, {-2.0})), DomainError);
}

TEST_CASE("non-finite results fail fast naming the op") {
    try {
        (void)ofakd::exp(make({1}, {1000.0}));
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(std::string(e.what()).find("exp") != std::string::npos);
    }
    CHECK_THROWS_AS(TD({1}, {std::nan("")}), NonFiniteError);
}

TEST_CASE("softmax examples") {
    const auto s = softmax(make({1, 2}, {0, 0}));
    CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.at(1) == doctest::Approx(0.5).epsilon(1e-15));

    const auto big = softmax(make({1, 2}, {1000, 0}));
    CHECK(big.at(0) == 1.0);
    CHECK(big.at(1) >= 0.0);
    CHECK(big.at(1) < 1e-300);

    const auto t = softmax(make({1, 3}, {1, 2, 3}), 2.0);
    const double z = std::exp(0.5) + std::exp(1.0) + std::exp(1.5);
    CHECK(std::abs(t.at(0) - std::exp(0.5) / z) <= 1e-12);
    CHECK(std::abs(t.at(1) - std::exp(1.0) / z) <= 1e-12);
    CHECK(std::abs(t.at(2) - std::exp(1.5) / z) <= 1e-12);

    CHECK_THROWS_AS(softmax(make({1, 2}, {0, 1}), 0.0), DomainError);
    CHECK_THROWS_AS(softmax(make({1, 2}, {0, 1}), -1.0), DomainError);
    CHECK_THROWS_AS(softmax(make({2, 1}, {0, 1})), DimensionError);
}

TEST_CASE("softmax rows are distributions (property)") {
    Rng rng(21);
    for (int rep = 0; rep < 50; ++rep) {
        const auto x = random_tensor({6, 9}, rng, -30, 30);
        const auto s = softmax(x, rng.uniform(0.2, 5.0));
        for (std::size_t i = 0; i < 6; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < 9; ++j) {
                const double v = s.at(i * 9 + j);
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                total += v;
            }
            CHECK(std::abs(total - 1.0) <= 1e-6);
        }
        const auto ls = log_softmax(x);
        const auto ps = softmax(x);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            if (ps.at(i) > 1e-300) CHECK(std::abs(ls.at(i) - std::log(ps.at(i))) <= 1e-9);
        }
    }
}

TEST_CASE("reduce examples") {
    CHECK(l2_norm(make({2}, {3, 4})).item() == 5.0);
    const auto m = mean(make({2, 2}, {1, 3, 3, 5}), 0);
    CHECK(m.shape() == Shape{2});
    CHECK(m.at(0) == 2.0);
    CHECK(m.at(1) == 4.0);
    CHECK_THROWS_AS(sum(make({2, 2}, {1, 2, 3, 4}), 2), DimensionError);

    Rng rng(8);
    const auto x = random_tensor({1000}, rng, -1e3, 1e3);
    double s = 0.0, c = 0.0;  // Kahan
    for (const double v : x.data()) {
        const double y = v - c;
        const double t = s + y;
        c = (t - s) - y;
        s = t;
    }
    CHECK(std::abs(sum(x).item() - s) <= 1e-9);
}

TEST_CASE("conv2d examples") {
    const auto ones = conv2d(TD::full({1, 1, 3, 3}, 1.0), TD::full({1, 1, 3, 3}, 1.0), TD{});
    CHECK(ones.shape() == Shape{1, 1, 1, 1});
    CHECK(ones.item() == 9.0);

    Rng rng(4);
    const auto x = random_tensor({2, 1, 5, 5}, rng);
    const auto id = conv2d(x, TD::full({1, 1, 1, 1}, 1.0), TD{});
    CHECK(testing::max_abs_diff(x.data(), id.data()) == 0.0);
}

TEST_CASE("conv2d matches a six-loop oracle") {
    Rng rng(17);
    const auto x = random_tensor({2, 3, 8, 8}, rng);
    const auto w = random_tensor({4, 3, 3, 3}, rng);
    for (const auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
        const auto y = conv2d(x, w, TD{}, {stride, pad, 1});
        const auto oracle = naive_conv(x, w, stride, pad);
        const std::size_t oh = (8 + 2 * pad - 3) / stride + 1;
        CHECK(y.shape() == Shape{2, 4, oh, oh});
        CHECK(testing::max_rel_diff(y.data(), oracle) <= 1e-10);
    }
}

TEST_CASE("grouped conv2d equals per-group convolutions") {
    Rng rng(18);
    const auto x = random_tensor({1, 4, 6, 6}, rng);
    const auto w = random_tensor({4, 1, 3, 3}, rng);  // depthwise
    const auto y = conv2d(x, w, TD{}, {1, 1, 4});
    for (std::size_t c = 0; c < 4; ++c) {
        const auto xc = narrow(x, 1, c, 1);
        const auto wc = narrow(w, 0, c, 1);
        const auto ref = naive_conv(xc, wc, 1, 1);
        for (std::size_t i = 0; i < 36; ++i) CHECK(std::abs(y.at(c * 36 + i) - ref[i]) <= 1e-12);
    }
}

TEST_CASE("conv2d rejects incompatible geometry") {
    CHECK_THROWS_AS(conv2d(TD::zeros({1, 1, 2, 2}), TD::zeros({1, 1, 3, 3}), TD{}), DimensionError);
    CHECK_THROWS_AS(conv2d(TD::zeros({1, 2, 4, 4}), TD::zeros({1, 3, 3, 3}), TD{}), DimensionError);
}

TEST_CASE("layernorm examples") {
    const auto g = TD::full({4}, 1.0), b = TD::zeros({4});
    const auto z = layernorm(TD::full({4}, 3.0), g, b, 1e-5);
    for (const double v : z.data()) CHECK(v == 0.0);

    const auto u = layernorm(make({2}, {1, -1}), TD::full({2}, 1.0), TD::zeros({2}), 1e-14);
    CHECK(std::abs(u.at(0) - 1.0) <= 1e-12);
    CHECK(std::abs(u.at(1) + 1.0) <= 1e-12);

    Rng rng(9);
    const auto x = random_tensor({16}, rng, -4, 7);
    const auto y = layernorm(x, TD::full({16}, 1.0), TD::zeros({16}), 1e-5);
    double m = 0.0, var = 0.0;
    for (const double v : y.data()) m += v / 16.0;
    for (const double v : y.data()) var += (v - m) * (v - m) / 16.0;
    CHECK(std::abs(m) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-4);

    CHECK_THROWS_AS(layernorm(x, TD::full({3}, 1.0), TD::zeros({3}), 1e-5), DimensionError);
}

TEST_CASE("backward examples") {
    auto x = make({3}, {1, 2, 3});
    x.set_requires_grad();
    {
        GradTape<double> tape;
        TapeScope<double> scope(&tape);
        tape.backward(sum(x));
    }
    for (const double g : x.grad()) CHECK(g == 1.0);

    auto y = make({2}, {1, 2});
    y.set_requires_grad();
    GradTape<double> tape;
    TapeScope<double> scope(&tape);
    const auto loss = sum(mul(y, y));
    tape.backward(loss);
    CHECK(y.grad()[0] == 2.0);
    CHECK(y.grad()[1] == 4.0);
    // The tape is consumed.
    CHECK_THROWS_AS(tape.backward(loss), TapeError);
}

TEST_CASE("backward rejects non-scalar losses") {
    auto x = make({2}, {1, 2});
    x.set_requires_grad();
    GradTape<double> tape;
    TapeScope<double> scope(&tape);
    CHECK_THROWS_AS(tape.backward(mul(x, x)), TapeError);
}

TEST_CASE("leaf gradients accumulate and every input gets exactly one contribution per call") {
    auto x = make({2}, {1, 2});
    x.set_requires_grad();
    GradTape<double> tape;
    TapeScope<double> scope(&tape);
    tape.backward(sum(add(x, x)));
    CHECK(x.grad()[0] == 2.0);
    tape.backward(sum(x));
    CHECK(x.grad()[0] == 3.0);
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no-grad scope records nothing") {
    auto x = make({2}, {1, 2});
    x.set_requires_grad();
    GradTape<double> tape;
    TapeScope<double> scope(&tape);
    Tensor<double> y;
    {
        NoGradScope<double> off;
        y = mul(x, x);
    }
    CHECK(tape.empty());
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad_check examples") {
    Rng rng(2);
    const auto x = random_tensor({3, 4}, rng);
    const auto r = grad_check([](const TD& t) { return sum(t); }, x);
    CHECK(r.passed);
    // Exact in exact arithmetic; only rounding of the difference quotient remains.
    CHECK(r.max_rel_error <= 1e-9);

    const auto first = grad_check(
        [](const TD& t) {
            const std::vector<std::size_t> idx{0};
            return sum(pick(softmax(reshape(t, {1, 2})), idx));
        },
        make({2}, {0.3, -0.2}));
    CHECK(first.passed);
}

TEST_CASE("grad_check reports a wrong gradient and non-finite values as failures") {
    // relu at exactly 0 has a kink: central differences disagree with the one-sided adjoint.
    const auto kink = grad_check([](const TD& t) { return sum(relu(t)); }, make({1}, {0.0}));
    CHECK_FALSE(kink.passed);
    const auto bad = grad_check([](const TD& t) { return sum(ofakd::log(t)); }, make({1}, {1e-7}), 1e-5);
    CHECK_FALSE(bad.passed);
}

TEST_CASE("operations are deterministic") {
    Rng a(99), b(99);
    const auto x1 = random_tensor({4, 6}, a), x2 = random_tensor({4, 6}, b);
    const auto w1 = random_tensor({6, 5}, a), w2 = random_tensor({6, 5}, b);
    const auto y1 = softmax(matmul(x1, w1)), y2 = softmax(matmul(x2, w2));
    CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}

TEST_CASE("OFAT serialization round-trips and rejects bad input") {
    Rng rng(1);
    const auto t = random_tensor({2, 3, 4}, rng);
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "OFAT");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // f64
    CHECK(static_cast<unsigned char>(bytes[5]) == 3);  // rank
    CHECK(bytes.size() == 4 + 1 + 1 + 3 * 4 + 24 * 8);

    std::stringstream in(bytes);
    const auto back = read_tensor<double>(in);
    CHECK(back.shape() == t.shape());
    CHECK(std::equal(back.data().begin(), back.data().end(), t.data().begin()));

    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_tensor<double>(truncated), FormatError);
    std::stringstream wrong("XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(read_tensor<double>(wrong), FormatError);

    // f32 files widen on load.
    std::stringstream f;
    write_tensor(f, t.cast<float>());
    const auto widened = read_tensor<double>(f);
    CHECK(widened.at(5) == static_cast<double>(static_cast<float>(t.at(5))));
}

}  // TEST_SUITE
