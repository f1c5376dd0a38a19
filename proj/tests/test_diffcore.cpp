#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "hypercut/diffcore/adam.hpp"
#include "hypercut/diffcore/checkpoint.hpp"
#include "hypercut/diffcore/gradcheck.hpp"
#include "hypercut/diffcore/graph.hpp"
#include "hypercut/diffcore/kernels.hpp"
#include "hypercut/diffcore/layers.hpp"

using namespace hypercut;
using diff::Shape;
using DTensor = diff::BasicTensor<double>;

namespace {

DTensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  DTensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

}  // namespace

TEST_SUITE("diffcore") {
  TEST_CASE("tensor shape and element count agree") {
    diff::Tensor t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(diff::shape_size({2, 3, 4}) == 24);
    CHECK_THROWS_AS(diff::Tensor({2, 2}, std::vector<float>(3)), diff::ShapeError);
    t.reshape({6, 4});
    CHECK(t.dim(0) == 6);
    CHECK_THROWS(t.reshape({5, 5}));
  }

  TEST_CASE("softplus at zero is ln 2 with gradient 1/2") {
    diff::BasicGraph<double> g;
    auto t = g.input("t", {1}, true);
    auto y = g.softplus(t);
    g.evaluate({{"t", DTensor({1}, {0.0})}});
    CHECK(g.value(y).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    g.backward(y);
    CHECK(g.grad(t)[0] == doctest::Approx(0.5));
  }

  TEST_CASE("identity graph returns its input") {
    diff::Graph g;
    auto x = g.input("x", {2, 2});
    auto y = g.reshape(x, {2, 2});
    diff::Tensor v({2, 2}, {1, -2, 3, 4.5f});
    g.evaluate({{"x", v}});
    CHECK(g.value(y) == v);
  }

  TEST_CASE("w.w has gradient 2w") {
    diff::BasicParameterSet<double> ps;
    auto& w = ps.add("w", {2});
    w.value = DTensor({2}, {1.0, 2.0});
    diff::BasicGraph<double> g;
    auto wv = g.parameter(w);
    auto loss = g.sum(g.mul(wv, wv));
    g.forward();
    g.backward(loss);
    CHECK(w.grad[0] == doctest::Approx(2.0));
    CHECK(w.grad[1] == doctest::Approx(4.0));
  }

  TEST_CASE("two-layer perceptron matches a hand-written forward pass") {
    std::mt19937_64 rng(0);
    diff::BasicParameterSet<double> ps;
    diff::add_linear_params(ps, "l1", 4, 5, rng);
    diff::add_linear_params(ps, "l2", 5, 1, rng);
    DTensor x = random_tensor({3, 4}, rng);
    diff::BasicGraph<double> g;
    auto in = g.input("x", {-1, 4});
    auto h = g.leaky_relu(diff::linear_layer(g, ps, "l1", in), 0.1);
    auto out = diff::linear_layer(g, ps, "l2", h);
    g.evaluate({{"x", x}});
    const auto& w1 = ps.at("l1.w").value;
    const auto& b1 = ps.at("l1.b").value;
    const auto& w2 = ps.at("l2.w").value;
    const auto& b2 = ps.at("l2.b").value;
    for (int r = 0; r < 3; ++r) {
      double o = b2[0];
      for (int j = 0; j < 5; ++j) {
        double a = b1[j];
        for (int i = 0; i < 4; ++i) a += x[r * 4 + i] * w1[i * 5 + j];
        o += (a > 0 ? a : 0.1 * a) * w2[j];
      }
      CHECK(g.value(out)[r] == doctest::Approx(o).epsilon(1e-12));
    }
  }

  TEST_CASE("gradcheck passes on a random two-layer network at eps 1e-3") {
    std::mt19937_64 rng(11);
    diff::BasicParameterSet<double> ps;
    diff::add_linear_params(ps, "l1", 6, 8, rng);
    diff::add_linear_params(ps, "l2", 8, 3, rng);
    diff::BasicGraph<double> g;
    auto in = g.input("x", {-1, 6}, true);
    auto h = g.softplus(diff::linear_layer(g, ps, "l1", in));
    auto loss = g.mean(g.square(diff::linear_layer(g, ps, "l2", h)));
    const auto report = diff::gradcheck(g, loss, {{"x", random_tensor({4, 6}, rng)}}, 1e-4);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
  }

  TEST_CASE("gradcheck covers every smooth op") {
    std::mt19937_64 rng(5);
    diff::BasicParameterSet<double> ps;
    diff::add_conv_params(ps, "c", 2, 3, 3, rng);
    diff::add_conv_transpose_params(ps, "t", 3, 2, 3, rng);
    diff::add_linear_params(ps, "f", 2, 4, rng);
    diff::BasicGraph<double> g;
    auto x = g.input("x", {-1, 2, 6, 6}, true);
    auto c = g.sigmoid(diff::conv_layer(g, ps, "c", x, 2, 1));
    auto t = diff::conv_transpose_layer(g, ps, "t", c, 2, 1, 1);
    auto cat = g.concat({t, g.scale(x, 0.5)}, 1);
    auto part = g.slice(cat, 1, 1, 2);
    auto pooled = g.global_avg_pool(g.sub(part, g.square(x)));
    auto e = g.l2_normalize_rows(diff::linear_layer(g, ps, "f", pooled));
    auto n = g.norm_rows(g.add(e, g.constant(DTensor({2, 4}, {0.1, 0.2, 0.3, 0.4, -0.4, 0.3, -0.2, 0.1}))));
    auto loss = g.add(g.mean(g.softplus(n)), g.sum(g.sum_rows(g.reshape(pooled, {-1, 2}))));
    const auto report = diff::gradcheck(g, loss, {{"x", random_tensor({2, 2, 6, 6}, rng)}}, 1e-4, {1e-5, 0, true});
    CHECK(report.passed);
  }

  TEST_CASE("gradcheck flags a corrupted adjoint") {
    diff::BasicGraph<double> g;
    auto x = g.input("x", {3}, true);
    auto y = g.custom(
        x, [](const DTensor& a, DTensor& b) {
          b = a;
          for (std::size_t i = 0; i < b.size(); ++i) b[i] = a[i] * a[i];
        },
        [](const DTensor& a, const DTensor&, const DTensor& gy, DTensor& gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 3.0 * a[i] * gy[i];  // should be 2
        },
        "bad_square");
    auto loss = g.sum(y);
    const auto report = diff::gradcheck(g, loss, {{"x", DTensor({3}, {0.5, -1.0, 2.0})}}, 1e-4);
    CHECK_FALSE(report.passed);
  }

  TEST_CASE("constant graph has zero gradients and passes") {
    diff::BasicGraph<double> g;
    auto x = g.input("x", {2}, true);
    auto loss = g.sum(g.constant(DTensor({2}, {1.0, 2.0})));
    (void)x;
    const auto report = diff::gradcheck(g, loss, {{"x", DTensor({2}, {1.0, 1.0})}}, 1e-4);
    CHECK(report.passed);
  }

  TEST_CASE("frozen parameters pass gradient through but keep none") {
    std::mt19937_64 rng(2);
    diff::ParameterSet ps;
    diff::add_linear_params(ps, "f", 3, 2, rng);
    ps.set_trainable(false);
    diff::Graph g;
    auto x = g.input("x", {1, 3}, true);
    auto loss = g.sum(diff::linear_layer(g, ps, "f", x));
    g.evaluate({{"x", diff::Tensor({1, 3}, {1, 2, 3})}});
    ps.zero_grad();
    g.backward(loss);
    const auto& w = ps.at("f.w").value;
    for (int i = 0; i < 3; ++i) CHECK(g.grad(x)[i] == doctest::Approx(w[i * 2] + w[i * 2 + 1]));
    for (float v : ps.at("f.w").grad.values()) CHECK(v == 0.0f);
  }

  TEST_CASE("adam: zero gradient or zero learning rate leaves parameters alone") {
    diff::ParameterSet ps;
    auto& p = ps.add("p", {3});
    p.value = diff::Tensor({3}, {1, 2, 3});
    const diff::Tensor before = p.value;
    auto state = diff::make_adam_state(ps);
    ps.zero_grad();
    diff::adam_update(ps, state);
    CHECK(p.value == before);
    CHECK(state.step == 1);

    diff::AdamConfig zero;
    zero.learning_rate = 0.0;
    auto frozen = diff::make_adam_state(ps, zero);
    p.grad = diff::Tensor({3}, {1, -1, 5});
    diff::adam_update(ps, frozen);
    CHECK(p.value == before);
  }

  TEST_CASE("adam: first step is lr * g / (|g| + eps)") {
    diff::ParameterSet ps;
    auto& p = ps.add("p", {3});
    p.value = diff::Tensor({3}, {0.5f, 0.5f, 0.5f});
    p.grad = diff::Tensor({3}, {2.0f, -0.25f, 1e-3f});
    auto state = diff::make_adam_state(ps);
    diff::adam_update(ps, state);
    for (int i = 0; i < 3; ++i) {
      const double g = p.grad[i];
      // m_hat = g, v_hat = g^2 after bias correction.
      const double step = -1e-3 * g / (std::abs(g) + 1e-8);
      CHECK(p.value[i] == doctest::Approx(0.5 + step).epsilon(1e-6));
      CHECK(std::abs(step + 1e-3 * (g > 0 ? 1 : -1)) < 1e-7);
    }
    CHECK(state.first_moment[0].shape() == p.value.shape());
  }

  TEST_CASE("adam refuses non-finite gradients") {
    diff::ParameterSet ps;
    auto& p = ps.add("p", {1});
    p.grad = diff::Tensor({1}, {std::nanf("")});
    auto state = diff::make_adam_state(ps);
    CHECK_THROWS(diff::adam_update(ps, state));
    CHECK(state.step == 0);
  }

  TEST_CASE("checkpoint byte layout and round trip") {
    diff::ParameterSet ps;
    ps.add("ab", {2}).value = diff::Tensor({2}, {1.0f, -2.0f});
    ps.add("c", {1, 1}).value = diff::Tensor({1, 1}, {0.5f});
    std::ostringstream os;
    diff::write_checkpoint(os, ps);
    const std::string bytes = os.str();
    // magic 6 + count 4 + (2 + 2 + 1 + 4 + 8) + (2 + 1 + 1 + 8 + 4)
    CHECK(bytes.size() == 6 + 4 + 17 + 16);
    CHECK(bytes.substr(0, 6) == "HCKPT1");
    CHECK(static_cast<unsigned char>(bytes[6]) == 2);
    CHECK(static_cast<unsigned char>(bytes[10]) == 2);  // name length
    CHECK(bytes.substr(12, 2) == "ab");
    CHECK(static_cast<unsigned char>(bytes[14]) == 1);  // rank
    float f = 0;
    std::memcpy(&f, bytes.data() + 19, 4);
    CHECK(f == 1.0f);
    std::istringstream is(bytes);
    CHECK(diff::read_checkpoint(is) == ps);
    std::istringstream bad("HCKPT0");
    CHECK_THROWS(diff::read_checkpoint(bad));
  }

  TEST_CASE("assign_parameters requires matching names and shapes") {
    diff::ParameterSet a, b;
    a.add("x", {2}).value = diff::Tensor({2}, {3, 4});
    b.add("x", {2});
    diff::assign_parameters(b, a);
    CHECK(b.at("x").value == a.at("x").value);
    diff::ParameterSet c;
    c.add("x", {3});
    CHECK_THROWS(diff::assign_parameters(c, a));
  }

  TEST_CASE("derive_seed gives distinct streams") {
    CHECK(diff::derive_seed(7, 1) != diff::derive_seed(7, 2));
    CHECK(diff::derive_seed(7, 1) == diff::derive_seed(7, 1));
    CHECK(diff::derive_seed(7, 1) != diff::derive_seed(8, 1));
  }
}

TEST_SUITE("kernels") {
  TEST_CASE("parallel gemm equals the serial reference for every transpose combination") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto [m, n, k] : std::vector<std::array<int, 3>>{{1, 1, 1}, {7, 33, 5}, {64, 300, 70}, {5, 513, 257}}) {
      std::vector<float> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n);
      for (auto& v : a) v = u(rng);
      for (auto& v : b) v = u(rng);
      for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
          std::vector<float> c1(static_cast<std::size_t>(m) * n, 0.25f), c2 = c1;
          kernels::gemm(ta, tb, m, n, k, a.data(), b.data(), c1.data(), true);
          kernels::reference::gemm(ta, tb, m, n, k, a.data(), b.data(), c2.data(), true);
          double worst = 0;
          for (std::size_t i = 0; i < c1.size(); ++i) worst = std::max(worst, double(std::abs(c1[i] - c2[i])));
          CHECK(worst < 1e-4);
        }
      }
    }
  }

  TEST_CASE("gemm output does not depend on the thread count") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> u(-1, 1);
    const int m = 37, n = 411, k = 129;
    std::vector<float> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const int saved = kernels::max_threads();
    std::vector<float> c1(static_cast<std::size_t>(m) * n), c4(c1.size());
    kernels::set_threads(1);
    kernels::gemm(false, true, m, n / 3, k, a.data(), b.data(), c1.data(), false);
    kernels::set_threads(4);
    kernels::gemm(false, true, m, n / 3, k, a.data(), b.data(), c4.data(), false);
    kernels::set_threads(saved);
    CHECK(c1 == c4);
  }

  TEST_CASE("graph convolutions match direct loop nests") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto [stride, pad] : std::vector<std::array<int, 2>>{{1, 1}, {2, 1}, {2, 0}}) {
      diff::ParameterSet ps;
      diff::add_conv_params(ps, "c", 3, 4, 3, rng);
      for (auto& v : ps.at("c.b").value.values()) v = u(rng);
      diff::Tensor x({2, 3, 9, 8});
      for (auto& v : x.values()) v = u(rng);
      diff::Graph g;
      auto in = g.input("x", {-1, 3, 9, 8});
      auto y = diff::conv_layer(g, ps, "c", in, stride, pad);
      g.evaluate({{"x", x}});
      const auto geo = kernels::conv_geometry(3, 9, 8, 3, stride, pad);
      std::vector<float> ref(static_cast<std::size_t>(2) * 4 * geo.positions());
      kernels::reference::conv2d(geo, 2, 4, x.data(), ps.at("c.w").value.data(), ps.at("c.b").value.data(), ref.data());
      REQUIRE(g.value(y).size() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(g.value(y)[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    }
    diff::ParameterSet ps;
    diff::add_conv_transpose_params(ps, "t", 4, 2, 3, rng);
    for (auto& v : ps.at("t.b").value.values()) v = u(rng);
    diff::Tensor x({2, 4, 4, 5});
    for (auto& v : x.values()) v = u(rng);
    diff::Graph g;
    auto in = g.input("x", {-1, 4, 4, 5});
    auto y = diff::conv_transpose_layer(g, ps, "t", in, 2, 1, 1);
    g.evaluate({{"x", x}});
    const auto geo = kernels::conv_geometry(2, 8, 10, 3, 2, 1);
    REQUIRE(geo.out_height == 4);
    std::vector<float> ref(static_cast<std::size_t>(2) * 2 * 8 * 10);
    kernels::reference::conv_transpose2d(geo, 2, 4, x.data(), ps.at("t.w").value.data(), ps.at("t.b").value.data(),
                                         ref.data());
    REQUIRE(g.value(y).size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(g.value(y)[i] == doctest::Approx(ref[i]).epsilon(1e-5));
  }
}
