#pragma once

#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "nur/autodiff.hpp"

namespace nur {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Moments are allocated lazily per parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return t_; }

  void step(ParamSet& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : params) {
      if (!p.trainable) continue;
      auto& st = state_[p.name];
      if (st.m.empty()) {
        st.m.assign(p.value.size(), 0.0);
        st.v.assign(p.value.size(), 0.0);
      }
      require(st.m.size() == p.value.size(), "adam state shape mismatch for " + p.name);
      double* w = p.value.data();
      const double* g = p.grad.data();
      for (std::size_t i = 0; i < st.m.size(); ++i) {
        // v == 0 means every past gradient was 0, so m == 0 and the update is exactly 0.
        if (g[i] == 0.0 && st.v[i] == 0.0) continue;
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

inline double grad_norm(const ParamSet& params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    for (double g : p.grad.values()) s += g * g;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient check.

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  struct PerParam {
    std::string name;
    std::size_t coords = 0;
    double max_rel_error = 0.0;
  };
  std::vector<PerParam> params;
  std::vector<GradCheckEntry> failures;
  std::size_t coords_checked = 0;

  bool passed() const noexcept { return failures.empty(); }
  double max_rel_error() const noexcept {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
  }
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  std::set<std::string> excluded;  // parameters whose numeric gradient is expected to differ
};

// `loss_fn` builds the scalar loss on the tape it is given; it must be a
// deterministic function of the parameter values.
inline GradCheckReport grad_check(const std::function<Var(Tape&)>& loss_fn, ParamSet& params,
                                  const GradCheckOptions& opt = {}) {
  params.zero_grads();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape tape(false);
    return loss_fn(tape).value()[0];
  };

  GradCheckReport report;
  for (auto& p : params) {
    if (!p.trainable || opt.excluded.contains(p.name)) continue;
    GradCheckReport::PerParam pp{p.name, p.value.size(), 0.0};
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + opt.step;
      const double fp = eval();
      p.value[i] = orig - opt.step;
      const double fm = eval();
      p.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double analytic = p.grad[i];
      const double rel =
          std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
      pp.max_rel_error = std::max(pp.max_rel_error, rel);
      if (rel > opt.tol) report.failures.push_back({p.name, i, analytic, numeric, rel});
      ++report.coords_checked;
    }
    report.params.push_back(pp);
  }
  return report;
}

}  // namespace nur
