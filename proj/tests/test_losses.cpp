#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "support.hpp"

using namespace nur;
using namespace nur::testing;

namespace {

double aux_oracle(const Tensor& gen, const Tensor& tgt) {
  double s = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) s += (tgt[i] - gen[i]) * (tgt[i] - gen[i]);
  return s;
}

double value(Var v) { return v.value()[0]; }

}  // namespace

TEST_CASE("contrastive: uniform logits over two candidates") {
  Tape t;
  Var z = t.constant(Tensor::matrix(2, 3));
  std::vector<int> r{1, 1};
  CHECK(std::abs(value(contrastive_loss(z, z, r, 1.0)) - 2.0 * std::log(2.0)) < 1e-12);
}

TEST_CASE("contrastive: uniform logits give B ln B") {
  for (std::size_t B : {2u, 3u, 8u, 17u}) {
    Tape t;
    Var g = t.constant(Tensor::matrix(B, 4, 0.5));
    Var u = t.constant(Tensor::matrix(B, 4, -0.25));
    std::vector<int> r(B, 1);
    CHECK(std::abs(value(contrastive_loss(g, u, r, 0.07)) - static_cast<double>(B) * std::log(static_cast<double>(B))) <
          1e-10);
  }
}

TEST_CASE("contrastive: saturated softmax") {
  // f(u_i, g_i) = 20, cross terms -20.
  Tape t;
  Var g = t.constant(Tensor({2, 2}, {20, 0, 0, 20}));
  Var u = t.constant(Tensor({2, 2}, {1, -1, -1, 1}));
  std::vector<int> r{1, 1};
  CHECK(value(contrastive_loss(g, u, r, 1.0)) < 1e-8);
}

TEST_CASE("contrastive and CE match scalar-loop oracles") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor G = random_matrix(6, 5, rng), U = random_matrix(6, 5, rng);
    std::vector<int> r{1, 0, 1, 1, 0, trial % 2};
    Tape t;
    Var g = t.constant(G), u = t.constant(U);
    CHECK(std::abs(value(contrastive_loss(g, u, r, 0.1)) - contrastive_oracle(G, U, r, 0.1)) < 1e-10);
    CHECK(std::abs(value(ce_loss(g, u, r)) - ce_oracle(G, U, r)) < 1e-12);
  }
}

TEST_CASE("contrastive with B = 1 and an interacted sample is a contract violation") {
  Tape t;
  Var z = t.constant(Tensor::matrix(1, 3));
  std::vector<int> r1{1}, r0{0};
  CHECK_THROWS_AS(contrastive_loss(z, z, r1, 1.0), ContractViolation);
  CHECK(value(contrastive_loss(z, z, r0, 1.0)) == 0.0);
}

TEST_CASE("CE examples") {
  Tape t;
  Var z = t.constant(Tensor::matrix(1, 2));
  std::vector<int> r1{1}, r0{0};
  CHECK(std::abs(value(ce_loss(z, z, r1)) - std::log(2.0)) < 1e-12);

  Var g = t.constant(Tensor({1, 1}, {-50}));
  Var u = t.constant(Tensor({1, 1}, {1}));
  CHECK(value(ce_loss(g, u, r0)) < 1e-8);

  // Stable for |f| up to 1e4.
  Var big = t.constant(Tensor({1, 1}, {1e4}));
  CHECK(std::isfinite(value(ce_loss(big, u, r0))));
  CHECK(value(ce_loss(big, u, r0)) == Catch::Approx(1e4));
  CHECK(value(ce_loss(big, u, r1)) == 0.0);
}

TEST_CASE("CE decomposes over the R = 1 and R = 0 subsets") {
  std::mt19937_64 rng(2);
  Tensor G = random_matrix(5, 3, rng), U = random_matrix(5, 3, rng);
  std::vector<int> r{1, 0, 0, 1, 1};
  auto subset = [&](int want) {
    std::vector<double> g, u;
    std::vector<int> rr;
    for (std::size_t i = 0; i < 5; ++i) {
      if (r[i] != want) continue;
      g.insert(g.end(), G.row(i).begin(), G.row(i).end());
      u.insert(u.end(), U.row(i).begin(), U.row(i).end());
      rr.push_back(want);
    }
    Tape t;
    return value(ce_loss(t.constant(Tensor({rr.size(), 3}, g)), t.constant(Tensor({rr.size(), 3}, u)), rr));
  };
  Tape t;
  CHECK(value(ce_loss(t.constant(G), t.constant(U), r)) == Catch::Approx(subset(1) + subset(0)).epsilon(1e-14));
}

TEST_CASE("losses are invariant to batch order") {
  std::mt19937_64 rng(4);
  Tensor G = random_matrix(4, 3, rng), U = random_matrix(4, 3, rng);
  std::vector<int> r{1, 0, 1, 1};
  std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor G2 = G, U2 = U;
  std::vector<int> r2(4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      G2.at(i, c) = G.at(perm[i], c);
      U2.at(i, c) = U.at(perm[i], c);
    }
    r2[i] = r[perm[i]];
  }
  Tape t;
  CHECK(value(contrastive_loss(t.constant(G), t.constant(U), r, 0.5)) ==
        Catch::Approx(value(contrastive_loss(t.constant(G2), t.constant(U2), r2, 0.5))).epsilon(1e-13));
  CHECK(value(ce_loss(t.constant(G), t.constant(U), r)) ==
        Catch::Approx(value(ce_loss(t.constant(G2), t.constant(U2), r2))).epsilon(1e-13));
}

TEST_CASE("raising a positive's similarity lowers its CE term") {
  std::mt19937_64 rng(12);
  Tensor G = random_matrix(3, 4, rng), U = random_matrix(3, 4, rng);
  std::vector<int> r{1, 1, 0};
  const double before = ce_oracle(G, U, r);
  for (std::size_t c = 0; c < 4; ++c) G.at(0, c) += 0.1 * U.at(0, c);
  Tape t;
  CHECK(value(ce_loss(t.constant(G), t.constant(U), r)) < before);
}

TEST_CASE("auxiliary examples") {
  Tape t;
  Tensor x({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  AuxiliaryPair same{t.constant(x), ad::stop_gradient(t.constant(x))};
  CHECK(value(auxiliary_loss(t, std::span(&same, 1))) == 0.0);

  AuxiliaryPair one{t.constant(Tensor({1, 4}, {1, 1, 1, 1})), t.constant(Tensor({1, 4}, 0.0))};
  CHECK(value(auxiliary_loss(t, std::span(&one, 1))) == 4.0);

  CHECK(value(auxiliary_loss(t, {})) == 0.0);
}

TEST_CASE("auxiliary gradients with stop-gradient equal those with constant targets") {
  auto model = make_model(tiny_config());
  auto batch = grad_check_batch();
  const auto frozen = current_targets(*model, batch);
  auto aux_only = [&](bool use_constants) {
    model->params().zero_grads();
    Tape t;
    std::vector<AuxiliaryPair> pairs;
    std::size_t k = 0;
    for (const auto& s : batch.samples) {
      if (s.interacted != 1) continue;
      auto out = model->generate(t, item_state(s));
      Var tgt = use_constants ? t.constant(frozen[k++])
                              : model->auxiliary_targets(t, item_state(s), s.label_user, out.first);
      pairs.push_back({out.generated, tgt});
    }
    Var loss = auxiliary_loss(t, pairs);
    t.backward(loss);
    std::vector<double> g;
    for (const auto& p : model->params()) g.insert(g.end(), p.grad.values().begin(), p.grad.values().end());
    return std::pair{value(loss), g};
  };
  auto a = aux_only(false);
  auto b = aux_only(true);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);  // bit-exact
  // seq_uid_table still gets gradient, but only through the encoder inputs.
  double s = 0.0;
  for (double g : model->params().get("seq_uid_table").grad.values()) s += std::abs(g);
  CHECK(s > 0.0);
}

TEST_CASE("auxiliary loss matches a scalar oracle on model outputs") {
  auto model = make_model(tiny_config());
  auto s = sample("i1", "c1", {"u1", "u2", "u3"}, "u4", 1);
  Tape t;
  auto out = model->generate(t, item_state(s));
  Var tgt = model->auxiliary_targets(t, item_state(s), s.label_user, out.first);
  REQUIRE(tgt.value().rows() == 4);  // u_1..u_3 and the label user
  const auto& table = model->params().get("seq_uid_table").value;
  const char* ids[] = {"u1", "u2", "u3", "u4"};
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t c = 0; c < 8; ++c) CHECK(tgt.value().at(j, c) == table.at(hash_row(ids[j], 16), c));
  AuxiliaryPair p{out.generated, tgt};
  CHECK(std::abs(value(auxiliary_loss(t, std::span(&p, 1))) - aux_oracle(out.generated.value(), tgt.value())) < 1e-12);
}

TEST_CASE("combined loss weights") {
  auto batch = make_batch({sample("i1", "c1", {"u1"}, "u4", 1), sample("i2", "c2", {"u5", "u6"}, "u8", 0),
                           sample("i3", "c1", {}, "u2", 1), sample("i1", "c1", {"u1", "u4"}, "u9", 1)});
  struct Run {
    double total, contrastive, ce, auxiliary, grad_mass;
  };
  auto with = [&](double l1, double l2, double l3) {
    auto cfg = tiny_config();
    cfg.lambda1 = l1;
    cfg.lambda2 = l2;
    cfg.lambda3 = l3;
    auto m = make_model(cfg);
    m->params().zero_grads();
    Tape t;
    auto terms = batch_loss(*m, t, batch);
    t.backward(terms.total);
    double mass = 0.0;
    for (const auto& p : m->params())
      for (double g : p.grad.values()) mass += std::abs(g);
    return Run{value(terms.total), value(terms.contrastive), value(terms.ce), value(terms.auxiliary), mass};
  };
  auto only_contrastive = with(1, 0, 0);
  CHECK(only_contrastive.total == only_contrastive.contrastive);
  CHECK(only_contrastive.grad_mass > 0.0);
  auto none = with(0, 0, 0);
  CHECK(none.total == 0.0);
  CHECK(none.grad_mass == 0.0);
  auto all = with(1, 1, 1);
  CHECK(std::abs(all.total - (all.contrastive + all.ce + all.auxiliary)) < 1e-10);
  auto mixed = with(1, 0.5, 0.1);
  CHECK(std::abs(mixed.total - (mixed.contrastive + 0.5 * mixed.ce + 0.1 * mixed.auxiliary)) < 1e-10);
}

TEST_CASE("combined loss on a 4-sample batch equals the sum of oracle values") {
  auto cfg = tiny_config();
  cfg.lambda1 = cfg.lambda2 = cfg.lambda3 = 1.0;
  auto model = make_model(cfg);
  std::vector<TrainingSample> members{sample("i1", "c1", {"u1"}, "u4", 1), sample("i2", "c2", {"u5", "u6"}, "u8", 0),
                                      sample("i3", "c1", {}, "u2", 1), sample("i1", "c1", {"u1", "u4"}, "u9", 1)};
  auto batch = make_batch(members);
  Tape t;
  auto terms = batch_loss(*model, t, batch);

  // Oracle: recompute every ingredient from scratch with plain loops.
  Tensor G = Tensor::matrix(4, 8), U = Tensor::matrix(4, 8);
  std::vector<int> r;
  double aux = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = members[i];
    auto next = model->item_embedding(item_state(s));
    auto user = model->user_embedding({s.label_user, s.label_context});
    for (std::size_t c = 0; c < 8; ++c) {
      G.at(i, c) = next[c];
      U.at(i, c) = user[c];
    }
    r.push_back(s.interacted);
    if (s.interacted == 1) {
      Tape tt(false);
      auto out = model->generate(tt, item_state(s));
      const auto& table = model->params().get("seq_uid_table").value;
      for (std::size_t j = 1; j <= s.sequence.size() + 1; ++j) {
        const auto& id = j <= s.sequence.size() ? s.sequence[j - 1] : s.label_user;
        for (std::size_t c = 0; c < 8; ++c) {
          const double diff = table.at(hash_row(id, 16), c) - out.generated.value().at(j - 1, c);
          aux += diff * diff;
        }
      }
    }
  }
  const double want = contrastive_oracle(G, U, r, cfg.tau) + ce_oracle(G, U, r) + aux;
  CHECK(std::abs(value(terms.total) - want) < 1e-10 * std::max(1.0, std::abs(want)));
}
