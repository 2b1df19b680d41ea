#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nur/config.hpp"
#include "nur/events.hpp"
#include "nur/losses.hpp"
#include "nur/model.hpp"
#include "nur/optim.hpp"

namespace nur {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t steps = 1000;
  AdamConfig adam{};
  std::uint64_t shuffle_seed = 1;

  static TrainConfig from(const KeyValueConfig& kv) {
    TrainConfig c;
    c.batch_size = kv.get_num("train.batch_size", c.batch_size);
    c.steps = kv.get_num("train.steps", c.steps);
    c.adam.lr = kv.get_num("train.lr", c.adam.lr);
    c.adam.beta1 = kv.get_num("train.beta1", c.adam.beta1);
    c.adam.beta2 = kv.get_num("train.beta2", c.adam.beta2);
    c.adam.eps = kv.get_num("train.eps", c.adam.eps);
    c.shuffle_seed = kv.get_num("train.shuffle_seed", c.shuffle_seed);
    if (c.batch_size < 2) throw UsageError("train.batch_size must be >= 2");
    return c;
  }

  void write_to(KeyValueConfig& kv) const {
    kv.set("train.batch_size", std::to_string(batch_size));
    kv.set("train.steps", std::to_string(steps));
    kv.set("train.lr", format_double(adam.lr));
    kv.set("train.beta1", format_double(adam.beta1));
    kv.set("train.beta2", format_double(adam.beta2));
    kv.set("train.eps", format_double(adam.eps));
    kv.set("train.shuffle_seed", std::to_string(shuffle_seed));
  }
};

inline ItemState item_state(const TrainingSample& s) {
  return {s.item_id, s.category_id, s.sequence, {}};
}

// Member i of a batch in its padded form: sequence slots beyond the sample's
// own length carry the padding mask.
inline ItemState padded_item_state(const Batch& b, std::size_t i) {
  ItemState st = item_state(b.samples[i]);
  st.sequence.resize(b.padded_len);
  st.valid.resize(b.padded_len);
  for (std::size_t j = 0; j < b.padded_len; ++j) {
    st.valid[j] = b.padding(i, j);
    if (!st.valid[j]) st.sequence[j] = "<pad>";
  }
  return st;
}

inline LossWeights loss_weights(const ModelConfig& cfg) { return {cfg.lambda1, cfg.lambda2, cfg.lambda3}; }

// Builds the combined loss for one batch on `t`. With `padded`, each member
// runs through its padded form (used to check padding is inert).
inline LossTerms batch_loss(Model& model, Tape& t, const Batch& batch, bool padded = false) {
  const std::size_t B = batch.size();
  require(B >= 1, "batch_loss: empty batch");
  std::vector<Var> nexts;
  std::vector<AuxiliaryPair> aux;
  std::vector<UserQuery> users;
  std::vector<int> flags;
  nexts.reserve(B);
  users.reserve(B);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& s = batch.samples[i];
    const ItemState st = padded ? padded_item_state(batch, i) : item_state(s);
    auto out = model.generate(t, st);
    nexts.push_back(out.next);
    users.push_back({s.label_user, s.label_context});
    flags.push_back(s.interacted);
    // Only rows first..n+1 of the real sequence are supervised.
    const std::size_t rows = s.sequence.size() + 2 - out.first;
    if (s.interacted == 1 && model.has_auxiliary() && rows > 0) {
      Var generated = out.generated;
      if (padded) generated = ad::slice_rows(generated, 0, rows);
      aux.push_back({generated, model.auxiliary_targets(t, item_state(s), s.label_user, out.first)});
    }
  }
  Var generated = B == 1 ? nexts[0] : ad::concat_rows(nexts);
  Var user_emb = model.embed_users(t, users);
  const auto& cfg = model.config();
  Var con = contrastive_loss(generated, user_emb, flags, cfg.tau);
  Var ce = ce_loss(generated, user_emb, flags);
  Var ax = auxiliary_loss(t, aux);
  return combined_loss(con, ce, ax, loss_weights(cfg));
}

struct StepStats {
  std::size_t step = 0;
  double total = 0.0;
  double contrastive = 0.0;
  double ce = 0.0;
  double auxiliary = 0.0;
  double grad_norm = 0.0;
};

inline constexpr std::string_view kTrainLogHeader = "step,loss_total,loss_con,loss_ce,loss_aux,grad_norm";

inline std::string format_step(const StepStats& s) {
  return std::to_string(s.step) + "," + format_double(s.total) + "," + format_double(s.contrastive) + "," +
         format_double(s.ce) + "," + format_double(s.auxiliary) + "," + format_double(s.grad_norm);
}

class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg) : model_(model), cfg_(cfg), adam_(cfg.adam) {}

  StepStats step(const Batch& batch) {
    auto& params = model_.params();
    params.zero_grads();
    Tape t;
    auto loss = batch_loss(model_, t, batch);
    t.backward(loss.total);
    StepStats s;
    s.step = ++steps_;
    s.total = loss.total.value()[0];
    s.contrastive = loss.contrastive.value()[0];
    s.ce = loss.ce.value()[0];
    s.auxiliary = loss.auxiliary.value()[0];
    s.grad_norm = grad_norm(params);
    adam_.step(params);
    return s;
  }

  // Runs cfg.steps optimizer steps over reshuffled epochs of `samples`,
  // writing one CSV line per step to `log` when given.
  std::vector<StepStats> fit(std::span<const TrainingSample> samples, std::ostream* log = nullptr) {
    std::vector<StepStats> out;
    if (log) *log << kTrainLogHeader << '\n';
    if (cfg_.steps == 0) return out;
    if (samples.size() < 2) throw DataError("need at least 2 training samples");
    std::uint64_t epoch = 0;
    while (out.size() < cfg_.steps) {
      auto batches = batch_samples(samples, cfg_.batch_size, {true, splitmix64(cfg_.shuffle_seed + epoch++)});
      for (const auto& b : batches) {
        if (out.size() >= cfg_.steps) break;
        out.push_back(step(b));
        if (log) *log << format_step(out.back()) << '\n';
      }
    }
    return out;
  }

 private:
  Model& model_;
  TrainConfig cfg_;
  Adam adam_;
  std::size_t steps_ = 0;
};

}  // namespace nur
