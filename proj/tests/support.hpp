#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nur/nur.hpp"

namespace nur::testing {

// Small enough that a finite-difference sweep touches every coordinate.
inline ModelConfig tiny_config(std::size_t max_seq_len = 4) {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.enc_layers = 2;
  c.dec_layers = 1;
  c.prefix_tokens = 2;
  c.max_seq_len = max_seq_len;
  c.ffn_mult = 2;
  c.user_vocab = 16;
  c.item_vocab = 8;
  c.category_vocab = 4;
  c.feature_vocab = 8;
  c.init_seed = 11;
  return c;
}

inline TrainingSample sample(std::string item, std::string cat, std::vector<std::string> seq, std::string label,
                             int r, ContextFeatures ctx = {{"segment", "s1"}, {"region", "r0"}}) {
  TrainingSample s;
  s.item_id = std::move(item);
  s.category_id = std::move(cat);
  s.sequence = std::move(seq);
  s.label_user = std::move(label);
  s.label_context = std::move(ctx);
  s.interacted = r;
  return s;
}

// The 2-sample batch used for gradient checks: n = 3 on both members.
inline Batch grad_check_batch() {
  return make_batch({sample("i1", "c1", {"u1", "u2", "u3"}, "u4", 1),
                     sample("i2", "c2", {"u5", "u6", "u7"}, "u8", 0, {{"segment", "s2"}, {"region", "r1"}})});
}

// The combined loss with the auxiliary targets supplied as constants. The
// stop-gradient wrapper passes no gradient, so analytic gradients are
// identical to batch_loss; finite differences then see fixed targets too.
inline Var loss_with_frozen_targets(Model& model, Tape& t, const Batch& batch,
                                    const std::vector<Tensor>& targets) {
  std::vector<Var> nexts;
  std::vector<AuxiliaryPair> aux;
  std::vector<UserQuery> users;
  std::vector<int> flags;
  std::size_t next_target = 0;
  for (const auto& s : batch.samples) {
    auto out = model.generate(t, item_state(s));
    nexts.push_back(out.next);
    users.push_back({s.label_user, s.label_context});
    flags.push_back(s.interacted);
    if (s.interacted == 1 && model.has_auxiliary() && out.generated.valid()) {
      aux.push_back({out.generated, t.constant(targets.at(next_target++))});
    }
  }
  Var g = ad::concat_rows(nexts);
  Var u = model.embed_users(t, users);
  const auto& c = model.config();
  // Same recording order as batch_loss, so gradients agree bit for bit.
  Var con = contrastive_loss(g, u, flags, c.tau);
  Var ce = ce_loss(g, u, flags);
  Var ax = auxiliary_loss(t, aux);
  return combined_loss(con, ce, ax, loss_weights(c)).total;
}

inline std::vector<Tensor> current_targets(Model& model, const Batch& batch) {
  std::vector<Tensor> out;
  for (const auto& s : batch.samples) {
    if (s.interacted != 1 || !model.has_auxiliary()) continue;
    Tape t(false);
    auto o = model.generate(t, item_state(s));
    if (!o.generated.valid()) continue;
    out.push_back(model.auxiliary_targets(t, item_state(s), s.label_user, o.first).value());
  }
  return out;
}

inline Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nur_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace nur::testing
