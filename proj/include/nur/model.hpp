#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nur/autodiff.hpp"
#include "nur/config.hpp"
#include "nur/events.hpp"
#include "nur/masks.hpp"

namespace nur {

enum class Architecture { kNextUser, kLookalike };

struct ModelConfig {
  Architecture architecture = Architecture::kNextUser;
  std::size_t d = 32;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 1;
  std::size_t heads = 4;
  std::size_t prefix_tokens = 2;  // 1 = item id, 2 = item id + category
  std::size_t max_seq_len = 50;
  std::size_t ffn_mult = 4;
  std::size_t user_vocab = std::size_t{1} << 17;
  std::size_t item_vocab = std::size_t{1} << 15;
  std::size_t category_vocab = std::size_t{1} << 10;
  std::size_t feature_vocab = std::size_t{1} << 10;
  std::vector<std::string> context_features{"segment", "region"};
  double tau = 0.07;
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  double lambda3 = 0.001;
  // Ablation switches; all true for the full model.
  bool use_prefix = true;
  bool use_cls = true;
  bool causal = true;
  bool positional = true;
  bool zero_init_tower = false;
  std::uint64_t init_seed = 1;

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) throw UsageError("model: d must be a positive multiple of heads");
    if (prefix_tokens < 1 || prefix_tokens > 2) throw UsageError("model: prefix_tokens must be 1 or 2");
    if (max_seq_len < 1) throw UsageError("model: max_seq_len must be >= 1");
    if (!(tau > 0.0)) throw UsageError("model: tau must be > 0");
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw UsageError("model: lambdas must be >= 0");
    if (!use_prefix && !use_cls) throw UsageError("model: need prefix tokens or a CLS token");
    if (user_vocab == 0 || item_vocab == 0 || category_vocab == 0 || feature_vocab == 0) {
      throw UsageError("model: vocabulary sizes must be positive");
    }
  }

  static ModelConfig from(const KeyValueConfig& kv) {
    ModelConfig c;
    const auto arch = kv.get("model.architecture", "next_user");
    if (arch == "next_user") {
      c.architecture = Architecture::kNextUser;
    } else if (arch == "lookalike") {
      c.architecture = Architecture::kLookalike;
    } else {
      throw UsageError("model.architecture must be next_user or lookalike");
    }
    c.d = kv.get_num("model.d", c.d);
    c.enc_layers = kv.get_num("model.enc_layers", c.enc_layers);
    c.dec_layers = kv.get_num("model.dec_layers", c.dec_layers);
    c.heads = kv.get_num("model.heads", c.heads);
    c.prefix_tokens = kv.get_num("model.prefix_tokens", c.prefix_tokens);
    c.max_seq_len = kv.get_num("model.max_seq_len", c.max_seq_len);
    c.ffn_mult = kv.get_num("model.ffn_mult", c.ffn_mult);
    c.user_vocab = kv.get_num("model.user_vocab", c.user_vocab);
    c.item_vocab = kv.get_num("model.item_vocab", c.item_vocab);
    c.category_vocab = kv.get_num("model.category_vocab", c.category_vocab);
    c.feature_vocab = kv.get_num("model.feature_vocab", c.feature_vocab);
    c.context_features = kv.get_list("model.context_features", c.context_features);
    c.tau = kv.get_num("model.tau", c.tau);
    c.lambda1 = kv.get_num("model.lambda1", c.lambda1);
    c.lambda2 = kv.get_num("model.lambda2", c.lambda2);
    c.lambda3 = kv.get_num("model.lambda3", c.lambda3);
    c.use_prefix = kv.get_bool("model.use_prefix", c.use_prefix);
    c.use_cls = kv.get_bool("model.use_cls", c.use_cls);
    c.causal = kv.get_bool("model.causal", c.causal);
    c.positional = kv.get_bool("model.positional", c.positional);
    c.zero_init_tower = kv.get_bool("model.zero_init_tower", c.zero_init_tower);
    c.init_seed = kv.get_num("model.init_seed", c.init_seed);
    c.validate();
    return c;
  }

  void write_to(KeyValueConfig& kv) const {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    kv.set("model.architecture", architecture == Architecture::kNextUser ? "next_user" : "lookalike");
    kv.set("model.d", std::to_string(d));
    kv.set("model.enc_layers", std::to_string(enc_layers));
    kv.set("model.dec_layers", std::to_string(dec_layers));
    kv.set("model.heads", std::to_string(heads));
    kv.set("model.prefix_tokens", std::to_string(prefix_tokens));
    kv.set("model.max_seq_len", std::to_string(max_seq_len));
    kv.set("model.ffn_mult", std::to_string(ffn_mult));
    kv.set("model.user_vocab", std::to_string(user_vocab));
    kv.set("model.item_vocab", std::to_string(item_vocab));
    kv.set("model.category_vocab", std::to_string(category_vocab));
    kv.set("model.feature_vocab", std::to_string(feature_vocab));
    kv.set("model.context_features", join(context_features));
    kv.set("model.tau", format_double(tau));
    kv.set("model.lambda1", format_double(lambda1));
    kv.set("model.lambda2", format_double(lambda2));
    kv.set("model.lambda3", format_double(lambda3));
    kv.set("model.use_prefix", b(use_prefix));
    kv.set("model.use_cls", b(use_cls));
    kv.set("model.causal", b(causal));
    kv.set("model.positional", b(positional));
    kv.set("model.zero_init_tower", b(zero_init_tower));
    kv.set("model.init_seed", std::to_string(init_seed));
  }
};

// The six offline variants: 0 full model, 1 traditional lookalike, 2 prefix
// prompts masked, 3 half sequence length, 4 without CLS, 5 without causal mask.
inline ModelConfig variant_config(ModelConfig base, int variant) {
  switch (variant) {
    case 0: break;
    case 1: base.architecture = Architecture::kLookalike; break;
    case 2: base.use_prefix = false; break;
    case 3: base.max_seq_len = std::max<std::size_t>(1, base.max_seq_len / 2); break;
    case 4: base.use_cls = false; break;
    case 5: base.causal = false; break;
    default: throw UsageError("unknown variant id " + std::to_string(variant) + " (expected 0..5)");
  }
  base.validate();
  return base;
}

inline const char* variant_name(int variant) {
  switch (variant) {
    case 0: return "Next-User Retrieval";
    case 1: return "Traditional Lookalike";
    case 2: return "Mask Prefix Prompt";
    case 3: return "Half the Sequence Length";
    case 4: return "w/o CLS Token";
    case 5: return "w/o causal Attention";
    default: return "unknown";
  }
}

// Raw (unhashed) item state: static features plus its interacted users.
struct ItemState {
  std::string item_id;
  std::string category_id;
  std::vector<std::string> sequence;
  std::vector<bool> valid;  // optional padding flags, one per sequence slot
};

struct UserQuery {
  std::string user_id;
  ContextFeatures context;
};

struct ItemOutput {
  Var next;       // u-hat_next [1 x d]
  Var generated;  // u-hat_first..u-hat_{n+1}; invalid Var when absent
  std::size_t first = 1;  // 1-based index of the first generated row
};

// ---------------------------------------------------------------------------
// Building blocks

namespace nn {

struct Linear {
  Parameter* w = nullptr;  // [in x out]
  Parameter* b = nullptr;  // [out], may be null

  static Linear make(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out, bool bias,
                     std::mt19937_64& rng) {
    Linear l;
    Tensor w = Tensor::matrix(in, out);
    init_uniform(w, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    l.w = &ps.add(name + ".w", std::move(w));
    if (bias) l.b = &ps.add(name + ".b", Tensor({out}, 0.0));
    return l;
  }

  Var operator()(Tape& t, Var x) const {
    Var y = ad::matmul(x, t.param(*w));
    return b ? ad::add_rowvec(y, t.param(*b)) : y;
  }
};

struct LayerNorm {
  Parameter* g = nullptr;
  Parameter* b = nullptr;

  static LayerNorm make(ParamSet& ps, const std::string& name, std::size_t d) {
    return {&ps.add(name + ".g", Tensor({d}, 1.0)), &ps.add(name + ".b", Tensor({d}, 0.0))};
  }

  Var operator()(Tape& t, Var x) const { return ad::layer_norm(x, t.param(*g), t.param(*b), 1e-5); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention make(ParamSet& ps, const std::string& name, std::size_t d, std::size_t heads,
                                 std::mt19937_64& rng) {
    return {Linear::make(ps, name + ".wq", d, d, false, rng), Linear::make(ps, name + ".wk", d, d, false, rng),
            Linear::make(ps, name + ".wv", d, d, false, rng), Linear::make(ps, name + ".wo", d, d, false, rng),
            heads};
  }

  // Queries from `xq`, keys/values from `xkv`; mask is [rows(xq) x rows(xkv)].
  Var operator()(Tape& t, Var xq, Var xkv, const Mask& mask) const {
    Var Q = q(t, xq);
    Var K = k(t, xkv);
    Var V = v(t, xkv);
    const std::size_t d = Q.value().cols();
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = heads == 1 ? Q : ad::slice_cols(Q, h * dh, dh);
      Var kh = heads == 1 ? K : ad::slice_cols(K, h * dh, dh);
      Var vh = heads == 1 ? V : ad::slice_cols(V, h * dh, dh);
      Var probs = ad::masked_softmax(ad::scale(ad::matmul_nt(qh, kh), scale), mask);
      outs.push_back(ad::matmul(probs, vh));
    }
    Var cat = heads == 1 ? outs[0] : ad::concat_cols(outs);
    return o(t, cat);
  }
};

struct FeedForward {
  Linear up, down;

  static FeedForward make(ParamSet& ps, const std::string& name, std::size_t d, std::size_t hidden,
                          std::mt19937_64& rng) {
    return {Linear::make(ps, name + ".w1", d, hidden, true, rng), Linear::make(ps, name + ".w2", hidden, d, true, rng)};
  }

  Var operator()(Tape& t, Var x) const { return down(t, ad::gelu(up(t, x))); }
};

inline Tensor uniform_table(std::size_t rows, std::size_t d, std::mt19937_64& rng) {
  Tensor t = Tensor::matrix(rows, d);
  init_uniform(t, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  return t;
}

}  // namespace nn

// Requesting-user tower: sum of the UID embedding and one embedding per
// context feature, then a two-layer feed-forward projection.
class UserTower {
 public:
  UserTower() = default;
  UserTower(ParamSet& ps, const ModelConfig& cfg, std::mt19937_64& rng) : features_(cfg.context_features) {
    user_vocab_ = cfg.user_vocab;
    feature_vocab_ = cfg.feature_vocab;
    auto table = [&](std::size_t rows) {
      return cfg.zero_init_tower ? Tensor::matrix(rows, cfg.d) : nn::uniform_table(rows, cfg.d, rng);
    };
    uid_ = &ps.add("tower.uid_table", table(cfg.user_vocab));
    for (const auto& f : features_) feats_.push_back(&ps.add("tower.feat." + f, table(cfg.feature_vocab)));
    hidden_ = nn::Linear::make(ps, "tower.w1", cfg.d, 2 * cfg.d, true, rng);
    out_ = nn::Linear::make(ps, "tower.w2", 2 * cfg.d, cfg.d, true, rng);
    if (cfg.zero_init_tower) {
      hidden_.w->value.fill(0.0);
      out_.w->value.fill(0.0);
      hidden_.b->value.fill(0.1);
      out_.b->value.fill(0.1);
    }
  }

  // [B x d], one row per user.
  Var embed(Tape& t, std::span<const UserQuery> users) const {
    require(!users.empty(), "user tower: empty batch");
    std::vector<std::size_t> uid_rows;
    uid_rows.reserve(users.size());
    for (const auto& u : users) {
      for (const auto& [name, value] : u.context) {
        if (std::find(features_.begin(), features_.end(), name) == features_.end()) {
          throw DataError("unknown context feature '" + name + "'");
        }
      }
      uid_rows.push_back(hash_row(u.user_id, user_vocab_));
    }
    Var x = ad::gather_rows(t.param(*uid_), std::move(uid_rows));
    for (std::size_t f = 0; f < features_.size(); ++f) {
      std::vector<std::size_t> rows;
      Tensor present = Tensor::matrix(users.size(), 1);
      bool any = false;
      for (std::size_t i = 0; i < users.size(); ++i) {
        auto it = users[i].context.find(features_[f]);
        if (it != users[i].context.end()) {
          rows.push_back(hash_row(it->second, feature_vocab_));
          any = true;
        } else {
          rows.push_back(0);
        }
      }
      if (!any) continue;
      Var e = ad::gather_rows(t.param(*feats_[f]), std::move(rows));
      bool all = true;
      for (const auto& u : users) all = all && u.context.contains(features_[f]);
      if (!all) {
        // Zero out rows of users lacking this feature.
        Tensor m = Tensor::matrix(users.size(), e.value().cols());
        for (std::size_t i = 0; i < users.size(); ++i) {
          if (!users[i].context.contains(features_[f])) continue;
          for (std::size_t j = 0; j < m.cols(); ++j) m.at(i, j) = 1.0;
        }
        e = ad::mul(e, t.constant(std::move(m)));
      }
      x = ad::add(x, e);
    }
    return out_(t, ad::gelu(hidden_(t, x)));
  }

 private:
  std::vector<std::string> features_;
  std::size_t user_vocab_ = 1;
  std::size_t feature_vocab_ = 1;
  Parameter* uid_ = nullptr;
  std::vector<Parameter*> feats_;
  nn::Linear hidden_, out_;
};

// ---------------------------------------------------------------------------

class Model {
 public:
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

  // Full forward pass for one item on `t`.
  virtual ItemOutput generate(Tape& t, const ItemState& item) = 0;

  // Stop-gradient targets for generated rows first..n+1: the sequence UID
  // embeddings of u_first..u_n, then the label user. Invalid Var if none.
  virtual Var auxiliary_targets(Tape& t, const ItemState& item, const std::string& label_user,
                                std::size_t first) = 0;

  virtual bool has_auxiliary() const noexcept = 0;

  Var embed_users(Tape& t, std::span<const UserQuery> users) { return tower_.embed(t, users); }

  // u-hat_next for serving; read-only over parameters.
  std::vector<double> item_embedding(const ItemState& item) const {
    Tape t(false);
    auto out = const_cast<Model*>(this)->generate(t, item);
    return out.next.value().values();
  }

  std::vector<double> user_embedding(const UserQuery& user) const {
    Tape t(false);
    Var u = const_cast<Model*>(this)->embed_users(t, std::span<const UserQuery>(&user, 1));
    return u.value().values();
  }

 protected:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg), rng_(cfg.init_seed) { cfg_.validate(); }

  void build_tower() { tower_ = UserTower(params_, cfg_, rng_); }

  ModelConfig cfg_;
  ParamSet params_;
  std::mt19937_64 rng_;
  UserTower tower_;
};

// Transformer encoder-decoder generating the next-user embedding.
class NextUserModel final : public Model {
 public:
  explicit NextUserModel(const ModelConfig& cfg) : Model(cfg) {
    require(cfg.architecture == Architecture::kNextUser, "NextUserModel needs the next_user architecture");
    const std::size_t d = cfg_.d;
    seq_uid_ = &params_.add("seq_uid_table", nn::uniform_table(cfg_.user_vocab, d, rng_));
    item_table_ = &params_.add("item_table", nn::uniform_table(cfg_.item_vocab, d, rng_));
    if (cfg_.prefix_tokens >= 2) {
      category_table_ = &params_.add("category_table", nn::uniform_table(cfg_.category_vocab, d, rng_));
    }
    prefix_type_ = &params_.add("prefix_type", nn::uniform_table(cfg_.prefix_tokens, d, rng_));
    if (cfg_.positional) pos_table_ = &params_.add("pos_table", nn::uniform_table(cfg_.max_seq_len, d, rng_));
    if (cfg_.use_cls) cls_ = &params_.add("cls_token", nn::uniform_table(1, d, rng_));
    queries_ = &params_.add("dec_queries", nn::uniform_table(cfg_.max_seq_len + 2, d, rng_));

    const std::size_t hidden = cfg_.ffn_mult * d;
    for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
      const auto p = "enc." + std::to_string(l);
      enc_.push_back({nn::LayerNorm::make(params_, p + ".ln1", d),
                      nn::MultiHeadAttention::make(params_, p + ".attn", d, cfg_.heads, rng_),
                      nn::LayerNorm::make(params_, p + ".ln2", d),
                      nn::FeedForward::make(params_, p + ".ffn", d, hidden, rng_)});
    }
    if (cfg_.enc_layers > 0) enc_norm_ = nn::LayerNorm::make(params_, "enc.ln_f", d);
    for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
      const auto p = "dec." + std::to_string(l);
      dec_.push_back({nn::LayerNorm::make(params_, p + ".ln1", d),
                      nn::MultiHeadAttention::make(params_, p + ".self", d, cfg_.heads, rng_),
                      nn::LayerNorm::make(params_, p + ".ln2", d),
                      nn::MultiHeadAttention::make(params_, p + ".cross", d, cfg_.heads, rng_),
                      nn::LayerNorm::make(params_, p + ".ln3", d),
                      nn::FeedForward::make(params_, p + ".ffn", d, hidden, rng_)});
    }
    dec_norm_ = nn::LayerNorm::make(params_, "dec.ln_f", d);
    dec_out_ = nn::Linear::make(params_, "dec.out", d, d, true, rng_);
    build_tower();
  }

  bool has_auxiliary() const noexcept override { return true; }

  MaskLayout layout(const ItemState& item) const {
    MaskLayout l;
    l.k = cfg_.use_prefix ? cfg_.prefix_tokens : 0;
    l.n = item.sequence.size();
    l.cls = cfg_.use_cls;
    l.causal = cfg_.causal;
    l.valid = item.valid;
    return l;
  }

  // Input token embeddings in encoder order: prefixes, UIDs (+ positions), [CLS].
  Var embed_tokens(Tape& t, const ItemState& item) {
    require(item.sequence.size() <= cfg_.max_seq_len, "sequence longer than max_seq_len");
    std::vector<Var> parts;
    if (cfg_.use_prefix) {
      Var item_row = ad::gather_rows(t.param(*item_table_), {hash_row(item.item_id, cfg_.item_vocab)});
      Var prefix = item_row;
      if (category_table_ != nullptr) {
        Var cat_row = ad::gather_rows(t.param(*category_table_), {hash_row(item.category_id, cfg_.category_vocab)});
        std::vector<Var> rows{item_row, cat_row};
        prefix = ad::concat_rows(rows);
      }
      parts.push_back(ad::add(prefix, t.param(*prefix_type_)));
    }
    const std::size_t n = item.sequence.size();
    if (n > 0) {
      std::vector<std::size_t> rows(n);
      for (std::size_t i = 0; i < n; ++i) rows[i] = hash_row(item.sequence[i], cfg_.user_vocab);
      Var u = ad::gather_rows(t.param(*seq_uid_), std::move(rows));
      if (pos_table_ != nullptr) {
        std::vector<std::size_t> pos(n);
        std::iota(pos.begin(), pos.end(), std::size_t{0});
        u = ad::add(u, ad::gather_rows(t.param(*pos_table_), std::move(pos)));
      }
      parts.push_back(u);
    }
    if (cls_ != nullptr) parts.push_back(t.param(*cls_));
    return parts.size() == 1 ? parts[0] : ad::concat_rows(parts);
  }

  // Pre-norm self-attention stack; outputs align 1:1 with input tokens.
  Var encode(Tape& t, Var tokens, const Mask& enc_mask) {
    Var x = tokens;
    for (const auto& layer : enc_) {
      Var h = layer.ln1(t, x);
      x = ad::add(x, layer.attn(t, h, h, enc_mask));
      x = ad::add(x, layer.ffn(t, layer.ln2(t, x)));
    }
    return cfg_.enc_layers > 0 ? enc_norm_(t, x) : x;
  }

  // Learnable queries for u-hat_first..u-hat_{n+1} and u-hat_next,
  // cross-attending to encoder outputs. Returns [queries x d].
  Var decode(Tape& t, Var enc_out, const AttentionMaskPair& masks, std::size_t n) {
    std::vector<std::size_t> rows;
    for (std::size_t i = masks.first_query; i <= n + 1; ++i) rows.push_back(i - 1);
    rows.push_back(cfg_.max_seq_len + 1);
    Var q = ad::gather_rows(t.param(*queries_), std::move(rows));
    for (const auto& layer : dec_) {
      Var h = layer.ln1(t, q);
      q = ad::add(q, layer.self_attn(t, h, h, masks.queries));
      q = ad::add(q, layer.cross_attn(t, layer.ln2(t, q), enc_out, masks.dec));
      q = ad::add(q, layer.ffn(t, layer.ln3(t, q)));
    }
    return dec_out_(t, dec_norm_(t, q));
  }

  ItemOutput generate(Tape& t, const ItemState& item) override {
    const auto l = layout(item);
    const auto masks = build_masks(l);
    Var tokens = embed_tokens(t, item);
    Var enc = encode(t, tokens, masks.enc);
    Var dec = decode(t, enc, masks, l.n);
    const std::size_t q = dec.value().rows();
    ItemOutput out;
    out.first = masks.first_query;
    out.next = ad::slice_rows(dec, q - 1, 1);
    if (q > 1) out.generated = ad::slice_rows(dec, 0, q - 1);
    return out;
  }

  Var auxiliary_targets(Tape& t, const ItemState& item, const std::string& label_user, std::size_t first) override {
    const std::size_t n = item.sequence.size();
    std::vector<std::size_t> rows;
    for (std::size_t j = first; j <= n + 1; ++j) {
      rows.push_back(hash_row(j <= n ? item.sequence[j - 1] : label_user, cfg_.user_vocab));
    }
    if (rows.empty()) return {};
    return ad::stop_gradient(ad::gather_rows(t.param(*seq_uid_), std::move(rows)));
  }

 private:
  struct EncoderLayer {
    nn::LayerNorm ln1;
    nn::MultiHeadAttention attn;
    nn::LayerNorm ln2;
    nn::FeedForward ffn;
  };
  struct DecoderLayer {
    nn::LayerNorm ln1;
    nn::MultiHeadAttention self_attn;
    nn::LayerNorm ln2;
    nn::MultiHeadAttention cross_attn;
    nn::LayerNorm ln3;
    nn::FeedForward ffn;
  };

  Parameter* seq_uid_ = nullptr;
  Parameter* item_table_ = nullptr;
  Parameter* category_table_ = nullptr;
  Parameter* prefix_type_ = nullptr;
  Parameter* pos_table_ = nullptr;
  Parameter* cls_ = nullptr;
  Parameter* queries_ = nullptr;
  std::vector<EncoderLayer> enc_;
  nn::LayerNorm enc_norm_;
  std::vector<DecoderLayer> dec_;
  nn::LayerNorm dec_norm_;
  nn::Linear dec_out_;
};

// Sum-pooled (mean) sequence UID embeddings projected to d: the classic
// lookalike baseline. No prefix features, no decoder, no auxiliary loss.
class LookalikeModel final : public Model {
 public:
  explicit LookalikeModel(const ModelConfig& cfg) : Model(cfg) {
    require(cfg.architecture == Architecture::kLookalike, "LookalikeModel needs the lookalike architecture");
    seq_uid_ = &params_.add("seq_uid_table", nn::uniform_table(cfg_.user_vocab, cfg_.d, rng_));
    proj_ = nn::Linear::make(params_, "pool.proj", cfg_.d, cfg_.d, true, rng_);
    build_tower();
  }

  bool has_auxiliary() const noexcept override { return false; }

  ItemOutput generate(Tape& t, const ItemState& item) override {
    require(item.sequence.size() <= cfg_.max_seq_len, "sequence longer than max_seq_len");
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < item.sequence.size(); ++i) {
      if (!item.valid.empty() && !item.valid[i]) continue;
      rows.push_back(hash_row(item.sequence[i], cfg_.user_vocab));
    }
    Var pooled;
    if (rows.empty()) {
      pooled = t.constant(Tensor::matrix(1, cfg_.d));
    } else {
      const double inv = 1.0 / static_cast<double>(rows.size());
      Tensor w = Tensor::matrix(1, rows.size(), inv);
      pooled = ad::matmul(t.constant(std::move(w)), ad::gather_rows(t.param(*seq_uid_), std::move(rows)));
    }
    ItemOutput out;
    out.next = proj_(t, pooled);
    return out;
  }

  Var auxiliary_targets(Tape&, const ItemState&, const std::string&, std::size_t) override {
    throw ContractViolation("lookalike model has no auxiliary targets");
  }

 private:
  Parameter* seq_uid_ = nullptr;
  nn::Linear proj_;
};

inline std::unique_ptr<Model> make_model(const ModelConfig& cfg) {
  if (cfg.architecture == Architecture::kLookalike) return std::make_unique<LookalikeModel>(cfg);
  return std::make_unique<NextUserModel>(cfg);
}

}  // namespace nur
