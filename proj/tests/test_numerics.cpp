#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "support.hpp"

using namespace nur;
using namespace nur::testing;
using Catch::Approx;

namespace {

Mask full_mask(std::size_t r, std::size_t c) { return Mask(r, c, true); }

}  // namespace

TEST_CASE("masked softmax examples") {
  Tape t;
  auto s = ad::masked_softmax(t.constant(Tensor({1, 3}, {5, 5, 5})), full_mask(1, 3));
  for (int j = 0; j < 3; ++j) CHECK(s.value()[j] == Approx(1.0 / 3).margin(1e-15));

  Mask m(1, 2);
  m.set(0, 0);
  auto s2 = ad::masked_softmax(t.constant(Tensor({1, 2}, {0, 99})), m);
  CHECK(s2.value()[0] == 1.0);
  CHECK(s2.value()[1] == 0.0);
}

TEST_CASE("masked softmax matches a direct exp/normalize oracle") {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_matrix(4, 4, rng, -5, 5);
    Mask m(4, 4);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 4; ++c) m.set(r, c, coin(rng));
      m.set(r, rng() % 4);
    }
    Tape t;
    auto y = ad::masked_softmax(t.constant(x), m).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double z = 0.0, sum = 0.0;
      for (std::size_t c = 0; c < 4; ++c) z += m(r, c) ? std::exp(x.at(r, c)) : 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        const double want = m(r, c) ? std::exp(x.at(r, c)) / z : 0.0;
        CHECK(std::abs(y.at(r, c) - want) < 1e-12);
        if (!m(r, c)) CHECK(y.at(r, c) == 0.0);
        sum += y.at(r, c);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("fully masked softmax row is a contract violation") {
  Tape t;
  Mask m(2, 2, true);
  m.set(1, 0, false);
  m.set(1, 1, false);
  CHECK_THROWS_AS(ad::masked_softmax(t.constant(Tensor::matrix(2, 2)), m), ContractViolation);
}

TEST_CASE("layer norm examples and scalar oracle") {
  Tape t;
  Var g1 = t.constant(Tensor({3}, 1.0));
  Var b0 = t.constant(Tensor({3}, 0.0));
  auto y = ad::layer_norm(t.constant(Tensor({1, 3}, {7, 7, 7})), g1, b0, 1e-5).value();
  for (double v : y.values()) CHECK(v == 0.0);

  Var g = t.constant(Tensor({3}, {2, 3, 4}));
  Var b = t.constant(Tensor({3}, {0.5, -1, 2}));
  auto y2 = ad::layer_norm(t.constant(Tensor({1, 3}, {-2, -2, -2})), g, b, 1e-5).value();
  CHECK(y2.values() == std::vector<double>{0.5, -1, 2});

  std::mt19937_64 rng(5);
  Tensor x = random_matrix(3, 6, rng);
  Tensor gain = random_matrix(1, 6, rng), bias = random_matrix(1, 6, rng);
  auto y3 = ad::layer_norm(t.constant(x), t.constant(Tensor({6}, gain.values())), t.constant(Tensor({6}, bias.values())),
                           1e-5)
                .value();
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 6; ++c) mean += x.at(r, c) / 6.0;
    for (std::size_t c = 0; c < 6; ++c) var += (x.at(r, c) - mean) * (x.at(r, c) - mean) / 6.0;
    for (std::size_t c = 0; c < 6; ++c) {
      const double want = (x.at(r, c) - mean) / std::sqrt(var + 1e-5) * gain[c] + bias[c];
      CHECK(std::abs(y3.at(r, c) - want) < 1e-12);
    }
  }
}

TEST_CASE("matmul variants match naive loops") {
  std::mt19937_64 rng(9);
  Tensor a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng), c = random_matrix(5, 4, rng);
  Tape t;
  auto ab = ad::matmul(t.constant(a), t.constant(b)).value();
  auto act = ad::matmul_nt(t.constant(a), t.constant(c)).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        s1 += a.at(i, k) * b.at(k, j);
        s2 += a.at(i, k) * c.at(j, k);
      }
      CHECK(std::abs(ab.at(i, j) - s1) < 1e-14);
      CHECK(std::abs(act.at(i, j) - s2) < 1e-14);
    }
  }
}

TEST_CASE("backward examples") {
  ParamSet ps;
  auto& p = ps.add("p", Tensor({3}, {0.3, -1, 2}));
  {
    Tape t;
    t.backward(ad::sum(t.param(p)));
  }
  CHECK(p.grad.values() == std::vector<double>{1, 1, 1});

  auto& q = ps.add("q", Tensor({2}, {1, 2}));
  ps.zero_grads();
  {
    Tape t;
    t.backward(ad::dot(t.param(q), t.param(q)));
  }
  CHECK(q.grad.values() == std::vector<double>{2, 4});
  CHECK(p.grad.values() == std::vector<double>{0, 0, 0});  // unreachable

  // A second backward without zero_grads accumulates.
  {
    Tape t;
    t.backward(ad::dot(t.param(q), t.param(q)));
  }
  CHECK(q.grad.values() == std::vector<double>{4, 8});
  ps.zero_grads();
  for (const auto& par : ps)
    for (double g : par.grad.values()) CHECK(g == 0.0);
}

TEST_CASE("backward visits ops in reverse order") {
  std::vector<int> order;
  ParamSet ps;
  auto& p = ps.add("p", Tensor::scalar(1.0));
  Tape t;
  Var x = t.param(p);
  std::vector<Var> chain{x};
  for (int i = 0; i < 4; ++i) {
    Var prev = chain.back();
    chain.push_back(t.record(prev.value(), {prev}, [prev, i, &order](Tape& tape, const Tensor& g) {
      order.push_back(i);
      tape.grad(prev)[0] += g[0];
    }));
  }
  t.backward(chain.back());
  CHECK(order == std::vector<int>{3, 2, 1, 0});
  CHECK(p.grad[0] == 1.0);
}

TEST_CASE("grad_check passes on composites of every op") {
  std::mt19937_64 rng(21);
  ParamSet ps;
  auto& a = ps.add("a", random_matrix(3, 4, rng));
  auto& b = ps.add("b", random_matrix(4, 5, rng));
  auto& g = ps.add("g", Tensor({5}, {1.1, 0.9, 1.2, 0.8, 1.0}));
  auto& bias = ps.add("bias", random_matrix(1, 5, rng));
  auto& c = ps.add("c", random_matrix(3, 5, rng));
  Mask m(3, 3, true);
  m.set(0, 2, false);
  auto fn = [&](Tape& t) {
    Var h = ad::matmul(t.param(a), t.param(b));
    h = ad::add_rowvec(h, t.param(bias));
    h = ad::layer_norm(h, t.param(g), t.constant(Tensor({5}, 0.1)), 1e-5);
    h = ad::gelu(h);
    Var att = ad::masked_softmax(ad::scale(ad::matmul_nt(h, t.param(c)), 0.7), m);
    Var o = ad::matmul(att, ad::slice_cols(h, 1, 3));
    Var r = ad::concat_rows(
        std::vector<Var>{ad::slice_rows(o, 0, 2), ad::slice_cols(ad::gather_rows(t.param(c), {2, 0}), 0, 3)});
    Var w = ad::concat_cols(std::vector<Var>{r, r});
    Var terms[] = {ad::sum_squares(ad::sub(w, ad::mul(w, w))), ad::sum(r)};
    double ws[] = {0.5, 2.0};
    return ad::weighted_sum(terms, ws);
  };
  auto rep = grad_check(fn, ps, {1e-5, 1e-6, {}});
  INFO("max rel error " << rep.max_rel_error());
  CHECK(rep.passed());
  CHECK(rep.coords_checked == ps.num_values());
}

TEST_CASE("grad_check on sum of squares") {
  ParamSet ps;
  ps.add("p", Tensor({4}, {0.5, -3, 7, 1e-3}));
  auto rep = grad_check([&](Tape& t) { return ad::sum_squares(t.param(ps.get("p"))); }, ps, {1e-5, 1e-6, {}});
  CHECK(rep.passed());
}

TEST_CASE("stop_gradient blocks one product path") {
  ParamSet ps;
  auto& p = ps.add("p", Tensor::scalar(3.0));
  auto fn = [&](Tape& t) {
    Var x = t.param(p);
    return ad::mul(ad::stop_gradient(x), x);
  };
  auto rep = grad_check(fn, ps);
  CHECK(p.grad[0] == 3.0);
  REQUIRE(rep.failures.size() == 1);
  CHECK(rep.failures[0].numeric == Approx(6.0));
  CHECK(grad_check(fn, ps, {1e-5, 1e-4, {"p"}}).passed());

  // sg(x) and a constant copy of x give bit-identical gradients.
  ps.zero_grads();
  {
    Tape t;
    t.backward(ad::mul(t.constant(p.value), t.param(p)));
  }
  CHECK(p.grad[0] == 3.0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamSet ps;
  auto& p = ps.add("p", Tensor({3}, {1, 2, 3}));
  Adam opt;
  for (int i = 0; i < 5; ++i) opt.step(ps);
  CHECK(p.value.values() == std::vector<double>{1, 2, 3});
  CHECK(opt.steps() == 5);
}

TEST_CASE("adam: first step has magnitude close to lr") {
  for (double g : {0.37, -12.0, 1e-3}) {
    ParamSet ps;
    auto& p = ps.add("p", Tensor::scalar(0.0));
    p.grad[0] = g;
    Adam opt;
    opt.step(ps);
    // Bias-corrected first step: lr * g / (|g| + eps).
    CHECK(p.value[0] == Approx(-1e-3 * g / (std::abs(g) + 1e-8)).epsilon(1e-12));
  }
}

TEST_CASE("adam: 100 steps on (p-5)^2 match the scalar recurrence") {
  ParamSet ps;
  auto& p = ps.add("p", Tensor::scalar(0.0));
  Adam opt({0.1, 0.9, 0.999, 1e-8});
  double x = 0.0, m = 0.0, v = 0.0;
  for (int step = 1; step <= 100; ++step) {
    ps.zero_grads();
    {
      Tape t;
      Var d = ad::add(t.param(p), t.constant(Tensor::scalar(-5.0)));
      t.backward(ad::mul(d, d));
    }
    opt.step(ps);
    const double g = 2.0 * (x - 5.0);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.1 * (m / (1 - std::pow(0.9, step))) / (std::sqrt(v / (1 - std::pow(0.999, step))) + 1e-8);
  }
  CHECK(p.value[0] == Approx(x).epsilon(1e-12));
  CHECK(std::abs(p.value[0] - 5.0) < 0.5);
}

TEST_CASE("parameter snapshot round trip is byte exact") {
  auto model = make_model(tiny_config());
  std::ostringstream a;
  save_params(model->params(), a);
  const std::string bytes = a.str();
  REQUIRE(bytes.starts_with("NUR-PARAMS v1\n"));

  auto other = make_model([] {
    auto c = tiny_config();
    c.init_seed = 99;
    return c;
  }());
  std::istringstream in(bytes);
  load_params(other->params(), in);
  std::ostringstream b;
  save_params(other->params(), b);
  CHECK(b.str() == bytes);
  auto it = other->params().begin();
  for (const auto& p : model->params()) CHECK((it++)->value == p.value);
}

TEST_CASE("parameter snapshot errors are distinct") {
  auto model = make_model(tiny_config());
  std::ostringstream os;
  save_params(model->params(), os);
  const std::string bytes = os.str();

  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_params(model->params(), truncated), TruncatedFileError);

  std::string wrong_version = bytes;
  wrong_version.replace(0, 13, "NUR-PARAMS v9");
  std::istringstream v(wrong_version);
  CHECK_THROWS_AS(load_params(model->params(), v), VersionMismatchError);

  std::istringstream junk("GARBAGE\n");
  CHECK_THROWS_AS(load_params(model->params(), junk), BadMagicError);
}

TEST_CASE("identical seeds give bit-identical values and gradients") {
  auto run = [] {
    auto model = make_model(tiny_config());
    Tape t;
    auto loss = batch_loss(*model, t, grad_check_batch());
    t.backward(loss.total);
    std::vector<double> out{loss.total.value()[0]};
    for (const auto& p : model->params()) out.insert(out.end(), p.grad.values().begin(), p.grad.values().end());
    return out;
  };
  CHECK(run() == run());
}
