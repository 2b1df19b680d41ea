#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nur/config.hpp"
#include "nur/events.hpp"
#include "nur/hnsw.hpp"
#include "nur/model.hpp"
#include "nur/train.hpp"
#include "nur/world.hpp"

namespace nur {

struct HoldoutSplit {
  std::vector<InteractionEvent> train;
  std::vector<InteractionEvent> heldout;
};

// The last floor(fraction * count) events of each item's timeline are held
// out. Both halves keep the global chronological order.
inline HoldoutSplit split_holdout(std::span<const InteractionEvent> events, double fraction = 0.1) {
  if (fraction < 0.0 || fraction >= 1.0) throw UsageError("holdout fraction must lie in [0, 1)");
  std::unordered_map<std::string, std::size_t> total, seen;
  for (const auto& ev : events) ++total[ev.item_id];
  HoldoutSplit out;
  for (const auto& ev : events) {
    const std::size_t n = total[ev.item_id];
    const auto held = static_cast<std::size_t>(fraction * static_cast<double>(n));
    if (seen[ev.item_id]++ >= n - held) {
      out.heldout.push_back(ev);
    } else {
      out.train.push_back(ev);
    }
  }
  return out;
}

struct HeldoutPositive {
  UserQuery user;
  std::string item_id;
};

inline std::vector<HeldoutPositive> heldout_positives(std::span<const InteractionEvent> heldout) {
  std::vector<HeldoutPositive> out;
  for (const auto& ev : heldout) {
    if (is_positive(ev.action)) out.push_back({{ev.user_id, ev.context}, ev.item_id});
  }
  return out;
}

// Next-user embeddings for every registered item, from the store's current state.
inline EmbeddingStore item_embeddings(const Model& model, const ItemSequenceStore& store) {
  EmbeddingStore out;
  out.dim = model.config().d;
  for (const auto& id : store.items()) {
    out.add(id, model.item_embedding({id, store.category(id), store.sequence(id), {}}));
  }
  return out;
}

inline HnswIndex build_index(const EmbeddingStore& emb, const HnswParams& params = {}) {
  HnswIndex index(emb.dim, params);
  for (std::size_t i = 0; i < emb.size(); ++i) index.insert(emb.ids[i], emb.row(i));
  return index;
}

// Retrieves the top-`max_k` list for every held-out positive once, so recall at
// any K <= max_k is a prefix count.
class RecallEvaluator {
 public:
  RecallEvaluator(const Model& model, std::span<const HeldoutPositive> positives, std::size_t max_k)
      : model_(model), positives_(positives.begin(), positives.end()), max_k_(max_k) {
    if (positives_.empty()) throw DataError("recall: empty held-out set");
  }

  // rank_[i] = position of the true item in the retrieved list, or max_k if absent.
  void retrieve_brute_force(const EmbeddingStore& pool) {
    run([&](std::span<const double> q) { return brute_force_topk(pool, q, max_k_); });
  }

  void retrieve_hnsw(const HnswIndex& index, std::size_t ef) {
    run([&](std::span<const double> q) { return index.search(q, max_k_, ef); });
  }

  double recall(std::size_t k) const {
    require(k <= max_k_, "recall: K exceeds the retrieved depth");
    require(!ranks_.empty(), "recall: nothing retrieved yet");
    std::size_t hits = 0;
    for (auto r : ranks_) hits += r < k ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(ranks_.size());
  }

  std::size_t size() const noexcept { return positives_.size(); }

 private:
  template <typename Retrieve>
  void run(Retrieve retrieve) {
    ranks_.assign(positives_.size(), max_k_);
    for (std::size_t i = 0; i < positives_.size(); ++i) {
      const auto& q = user_vector(positives_[i].user);
      auto hits = retrieve(std::span<const double>(q));
      for (std::size_t r = 0; r < hits.size(); ++r) {
        if (hits[r].item_id == positives_[i].item_id) {
          ranks_[i] = r;
          break;
        }
      }
    }
  }

  const std::vector<double>& user_vector(const UserQuery& u) {
    std::string key = u.user_id + "|" + format_context(u.context);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, model_.user_embedding(u)).first;
    return it->second;
  }

  const Model& model_;
  std::vector<HeldoutPositive> positives_;
  std::size_t max_k_;
  std::vector<std::size_t> ranks_;
  std::unordered_map<std::string, std::vector<double>> cache_;
};

// One-shot recall@K over a flat pool (brute force) or an index.
inline double recall_at_k(const Model& model, const EmbeddingStore& pool, std::span<const HeldoutPositive> positives,
                          std::size_t k) {
  RecallEvaluator ev(model, positives, k);
  ev.retrieve_brute_force(pool);
  return ev.recall(k);
}

inline double recall_at_k(const Model& model, const HnswIndex& index, std::span<const HeldoutPositive> positives,
                          std::size_t k, std::size_t ef) {
  RecallEvaluator ev(model, positives, k);
  ev.retrieve_hnsw(index, ef);
  return ev.recall(k);
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationConfig {
  WorldConfig world{};
  ModelConfig model{};
  TrainConfig train{};
  HnswParams hnsw{};
  double holdout = 0.1;
  bool use_hnsw = true;
  std::uint64_t seed = 1;

  static AblationConfig from(const KeyValueConfig& kv) {
    AblationConfig c;
    c.world = WorldConfig::from(kv);
    c.model = ModelConfig::from(kv);
    c.train = TrainConfig::from(kv);
    c.hnsw.M = kv.get_num("index.M", c.hnsw.M);
    c.hnsw.ef_construction = kv.get_num("index.ef_construction", c.hnsw.ef_construction);
    c.hnsw.ef_search = kv.get_num("index.ef_search", c.hnsw.ef_search);
    c.hnsw.seed = kv.get_num("index.seed", c.hnsw.seed);
    c.holdout = kv.get_num("eval.holdout", c.holdout);
    c.use_hnsw = kv.get_bool("eval.use_hnsw", c.use_hnsw);
    c.seed = kv.get_num("seed", c.seed);
    return c;
  }

  void write_to(KeyValueConfig& kv) const {
    world.write_to(kv);
    model.write_to(kv);
    train.write_to(kv);
    kv.set("index.M", std::to_string(hnsw.M));
    kv.set("index.ef_construction", std::to_string(hnsw.ef_construction));
    kv.set("index.ef_search", std::to_string(hnsw.ef_search));
    kv.set("index.seed", std::to_string(hnsw.seed));
    kv.set("eval.holdout", format_double(holdout));
    kv.set("eval.use_hnsw", use_hnsw ? "true" : "false");
    kv.set("seed", std::to_string(seed));
  }

  // One seed drives the world, initialization, shuffling and index levels.
  AblationConfig seeded(std::uint64_t s) const {
    AblationConfig c = *this;
    c.seed = s;
    c.world.seed = s;
    c.model.init_seed = s;
    c.train.shuffle_seed = s;
    c.hnsw.seed = s;
    return c;
  }
};

struct EvalRow {
  int variant = 0;
  std::string name;
  double recall20 = 0.0;
  double recall50 = 0.0;
  double rel20 = 0.0;
  double rel50 = 0.0;
  std::uint64_t seed = 0;
  std::size_t train_samples = 0;
  std::size_t heldout_positives = 0;
  std::uint64_t data_hash = 0;  // fingerprint of the event stream
  double seconds = 0.0;
  double final_loss = 0.0;
};

inline std::uint64_t stream_hash(std::span<const InteractionEvent> events) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& ev : events) h = splitmix64(h ^ fnv1a64(format_event(ev)));
  return h;
}

// Shared data for all variants of one seed.
struct AblationData {
  std::vector<CatalogEntry> catalog;
  HoldoutSplit split;
  std::vector<HeldoutPositive> positives;
  std::uint64_t hash = 0;
};

inline AblationData make_ablation_data(const AblationConfig& cfg) {
  SyntheticWorld world(cfg.world);
  AblationData d;
  d.catalog = world.catalog();
  auto events = world.generate();
  d.hash = stream_hash(events);
  d.split = split_holdout(events, cfg.holdout);
  d.positives = heldout_positives(d.split.heldout);
  return d;
}

// Trains one variant on the training split and scores it on the held-out positives.
inline EvalRow run_variant(int variant, const AblationConfig& cfg, const AblationData& data,
                           std::ostream* log = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig mc = variant_config(cfg.model, variant);
  auto model = make_model(mc);
  ItemSequenceStore store(mc.max_seq_len);
  store.register_catalog(data.catalog);
  auto samples = ingest_all(store, data.split.train);
  Trainer trainer(*model, cfg.train);
  auto stats = trainer.fit(samples, log);

  auto pool = item_embeddings(*model, store);
  RecallEvaluator ev(*model, data.positives, 50);
  if (cfg.use_hnsw) {
    ev.retrieve_hnsw(build_index(pool, cfg.hnsw), cfg.hnsw.ef_search);
  } else {
    ev.retrieve_brute_force(pool);
  }
  EvalRow row;
  row.variant = variant;
  row.name = variant_name(variant);
  row.recall20 = ev.recall(20);
  row.recall50 = ev.recall(50);
  row.seed = cfg.seed;
  row.train_samples = samples.size();
  row.heldout_positives = data.positives.size();
  row.data_hash = data.hash;
  row.final_loss = stats.empty() ? 0.0 : stats.back().total;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

inline double relative_difference(double r, double base) { return base == 0.0 ? 0.0 : (r - base) / base; }

// Runs the requested variants; variant 0 is always trained as the baseline
// for the relative differences but only reported when requested.
inline std::vector<EvalRow> run_ablation(std::span<const int> variants, const AblationConfig& cfg,
                                         std::ostream* progress = nullptr) {
  for (int v : variants) variant_config(cfg.model, v);
  const auto data = make_ablation_data(cfg);
  if (data.positives.empty()) throw DataError("recall: empty held-out set");
  std::map<int, EvalRow> done;
  auto run = [&](int v) -> const EvalRow& {
    auto it = done.find(v);
    if (it != done.end()) return it->second;
    auto row = run_variant(v, cfg, data);
    if (progress) {
      *progress << "variant " << v << " (" << row.name << "): recall@20=" << format_double(row.recall20)
                << " recall@50=" << format_double(row.recall50) << " in " << row.seconds << "s\n";
    }
    return done.emplace(v, row).first->second;
  };
  const EvalRow base = run(0);
  std::vector<EvalRow> out;
  for (int v : variants) {
    EvalRow row = run(v);
    row.rel20 = v == 0 ? 0.0 : relative_difference(row.recall20, base.recall20);
    row.rel50 = v == 0 ? 0.0 : relative_difference(row.recall50, base.recall50);
    out.push_back(row);
  }
  return out;
}

inline constexpr std::string_view kReportHeader = "variant,recall20,recall50,rel20,rel50,seed";

inline void write_report_csv(std::ostream& os, std::span<const EvalRow> rows) {
  os << kReportHeader << '\n';
  for (const auto& r : rows) {
    os << r.variant << ',' << format_double(r.recall20) << ',' << format_double(r.recall50) << ','
       << format_double(r.rel20) << ',' << format_double(r.rel50) << ',' << r.seed << '\n';
  }
}

inline void write_report_summary(std::ostream& os, std::span<const EvalRow> rows) {
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-26s recall@20 %.4f (%+.2f%%)  recall@50 %.4f (%+.2f%%)  seed %llu\n",
                  r.name.c_str(), r.recall20, 100.0 * r.rel20, r.recall50, 100.0 * r.rel50,
                  static_cast<unsigned long long>(r.seed));
    os << buf;
  }
  if (!rows.empty()) {
    os << "train samples " << rows.front().train_samples << ", held-out positives " << rows.front().heldout_positives
       << ", data hash " << std::hex << rows.front().data_hash << std::dec << '\n';
  }
}

}  // namespace nur
