#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "nur/autodiff.hpp"

namespace nur {

namespace detail {

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// In-batch contrastive loss, summed over interacted samples:
//   -log( exp(<u_i, g_i>/tau) / sum_j exp(<u_j, g_i>/tau) )
// where g = generated next-user rows [B x d] and u = requesting users [B x d].
inline Var contrastive_loss(Var generated, Var users, std::span<const int> interacted, double tau) {
  const auto& G = generated.value();
  const auto& U = users.value();
  const std::size_t B = G.rows(), d = G.cols();
  require(U.rows() == B && U.cols() == d && interacted.size() == B, "contrastive_loss: shape mismatch");
  require(tau > 0.0, "contrastive_loss: tau must be > 0");
  bool any = false;
  for (int r : interacted) any = any || r == 1;
  if (any) require(B >= 2, "contrastive_loss: needs at least one in-batch negative (B >= 2)");

  Tensor logits = Tensor::matrix(B, B);
  ad::detail::gemm_nt(G.data(), U.data(), logits.data(), B, d, B);
  Tensor probs = Tensor::matrix(B, B);
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    if (interacted[i] != 1) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < B; ++j) mx = std::max(mx, logits.at(i, j) / tau);
    double z = 0.0;
    for (std::size_t j = 0; j < B; ++j) z += std::exp(logits.at(i, j) / tau - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < B; ++j) probs.at(i, j) = std::exp(logits.at(i, j) / tau - lse);
    total += lse - logits.at(i, i) / tau;
  }
  std::vector<int> r(interacted.begin(), interacted.end());
  return generated.tape()->record(
      Tensor::scalar(total), {generated, users},
      [generated, users, B, d, tau, r = std::move(r), probs = std::move(probs)](Tape& t, const Tensor& g) {
        Tensor dlogits = Tensor::matrix(B, B);
        for (std::size_t i = 0; i < B; ++i) {
          if (r[i] != 1) continue;
          for (std::size_t j = 0; j < B; ++j) {
            dlogits.at(i, j) = g[0] * (probs.at(i, j) - (i == j ? 1.0 : 0.0)) / tau;
          }
        }
        if (t.needs_grad(generated)) {
          ad::detail::gemm_nn(dlogits.data(), t.value(users.id()).data(), t.grad(generated).data(), B, B, d);
        }
        if (t.needs_grad(users)) {
          ad::detail::gemm_tn(dlogits.data(), t.value(generated.id()).data(), t.grad(users).data(), B, B, d);
        }
      });
}

// Exposure-aware binary cross-entropy on f_i = <u_i, g_i>:
//   -sum_{R=1} log sigma(f_i) - sum_{R=0} log(1 - sigma(f_i))
inline Var ce_loss(Var generated, Var users, std::span<const int> interacted) {
  const auto& G = generated.value();
  const auto& U = users.value();
  const std::size_t B = G.rows(), d = G.cols();
  require(U.rows() == B && U.cols() == d && interacted.size() == B, "ce_loss: shape mismatch");
  std::vector<double> dfs(B);
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double f = 0.0;
    for (std::size_t c = 0; c < d; ++c) f += G.at(i, c) * U.at(i, c);
    if (interacted[i] == 1) {
      total += detail::softplus(-f);
      dfs[i] = -detail::sigmoid(-f);
    } else {
      total += detail::softplus(f);
      dfs[i] = detail::sigmoid(f);
    }
  }
  return generated.tape()->record(
      Tensor::scalar(total), {generated, users}, [generated, users, B, d, dfs = std::move(dfs)](Tape& t, const Tensor& g) {
        const auto& G = t.value(generated.id());
        const auto& U = t.value(users.id());
        const bool gg = t.needs_grad(generated), gu = t.needs_grad(users);
        for (std::size_t i = 0; i < B; ++i) {
          const double s = g[0] * dfs[i];
          for (std::size_t c = 0; c < d; ++c) {
            if (gg) t.grad(generated).at(i, c) += s * U.at(i, c);
            if (gu) t.grad(users).at(i, c) += s * G.at(i, c);
          }
        }
      });
}

// One interacted sample's contribution to the auxiliary loss: generated rows
// u-hat_first..u-hat_{n+1} against their (stop-gradient) targets.
struct AuxiliaryPair {
  Var generated;
  Var targets;
};

// sum over pairs of ||target - generated||^2. Targets are expected to be
// wrapped in stop_gradient by the caller.
inline Var auxiliary_loss(Tape& tape, std::span<const AuxiliaryPair> pairs) {
  std::vector<Var> terms;
  for (const auto& p : pairs) {
    if (!p.generated.valid()) continue;
    require(p.generated.value().rows() == p.targets.value().rows(), "auxiliary_loss: row count mismatch");
    terms.push_back(ad::sum_squares(ad::sub(p.targets, p.generated)));
  }
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  if (terms.size() == 1) return terms[0];
  std::vector<double> ones(terms.size(), 1.0);
  return ad::weighted_sum(terms, ones);
}

struct LossWeights {
  double contrastive = 1.0;
  double ce = 0.5;
  double auxiliary = 0.1;
};

struct LossTerms {
  Var total;
  Var contrastive;
  Var ce;
  Var auxiliary;
};

inline LossTerms combined_loss(Var contrastive, Var ce, Var auxiliary, const LossWeights& w) {
  require(w.contrastive >= 0 && w.ce >= 0 && w.auxiliary >= 0, "loss weights must be >= 0");
  std::vector<Var> terms{contrastive, ce, auxiliary};
  std::vector<double> ws{w.contrastive, w.ce, w.auxiliary};
  return {ad::weighted_sum(terms, ws), contrastive, ce, auxiliary};
}

}  // namespace nur
