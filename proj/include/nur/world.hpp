#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nur/config.hpp"
#include "nur/events.hpp"

namespace nur {

struct WorldConfig {
  std::size_t users = 5000;
  std::size_t items = 2000;
  std::size_t latent_dim = 16;
  std::size_t clusters = 20;       // shared by item categories and user segments
  std::size_t regions = 8;         // uninformative context feature
  std::size_t candidates = 50;     // per-user top-affinity exposure list
  double exploration = 0.2;        // share of uniformly random exposures
  double cluster_weight = 0.8;     // latent = scale * (w * center + sqrt(1 - w^2) * noise)
  double latent_scale = 0.5;
  double bias_mean = -0.25;
  double bias_std = 0.25;
  double comment_share = 0.3;      // positives recorded as comments instead of likes
  std::size_t num_events = 200000;
  std::uint64_t seed = 7;
  std::optional<double> affinity_override;  // test hook: constant affinity

  static WorldConfig from(const KeyValueConfig& kv) {
    WorldConfig c;
    c.users = kv.get_num("world.users", c.users);
    c.items = kv.get_num("world.items", c.items);
    c.latent_dim = kv.get_num("world.latent_dim", c.latent_dim);
    c.clusters = kv.get_num("world.clusters", c.clusters);
    c.regions = kv.get_num("world.regions", c.regions);
    c.candidates = kv.get_num("world.candidates", c.candidates);
    c.exploration = kv.get_num("world.exploration", c.exploration);
    c.cluster_weight = kv.get_num("world.cluster_weight", c.cluster_weight);
    c.latent_scale = kv.get_num("world.latent_scale", c.latent_scale);
    c.bias_mean = kv.get_num("world.bias_mean", c.bias_mean);
    c.bias_std = kv.get_num("world.bias_std", c.bias_std);
    c.comment_share = kv.get_num("world.comment_share", c.comment_share);
    c.num_events = kv.get_num("world.num_events", c.num_events);
    c.seed = kv.get_num("world.seed", c.seed);
    if (kv.has("world.affinity_override")) c.affinity_override = kv.get_num("world.affinity_override", 0.0);
    c.validate();
    return c;
  }

  void write_to(KeyValueConfig& kv) const {
    kv.set("world.users", std::to_string(users));
    kv.set("world.items", std::to_string(items));
    kv.set("world.latent_dim", std::to_string(latent_dim));
    kv.set("world.clusters", std::to_string(clusters));
    kv.set("world.regions", std::to_string(regions));
    kv.set("world.candidates", std::to_string(candidates));
    kv.set("world.exploration", format_double(exploration));
    kv.set("world.cluster_weight", format_double(cluster_weight));
    kv.set("world.latent_scale", format_double(latent_scale));
    kv.set("world.bias_mean", format_double(bias_mean));
    kv.set("world.bias_std", format_double(bias_std));
    kv.set("world.comment_share", format_double(comment_share));
    kv.set("world.num_events", std::to_string(num_events));
    kv.set("world.seed", std::to_string(seed));
    if (affinity_override) kv.set("world.affinity_override", format_double(*affinity_override));
  }

  void validate() const {
    if (users == 0 || items == 0 || latent_dim == 0 || clusters == 0 || regions == 0) {
      throw UsageError("world: sizes must be positive");
    }
    if (exploration < 0.0 || exploration > 1.0) throw UsageError("world.exploration must lie in [0, 1]");
    if (cluster_weight < 0.0 || cluster_weight > 1.0) throw UsageError("world.cluster_weight must lie in [0, 1]");
    if (!(latent_scale >= 0.0)) throw UsageError("world.latent_scale must be >= 0");
    if (affinity_override && (*affinity_override < 0.0 || *affinity_override > 1.0)) {
      throw UsageError("world.affinity_override must lie in [0, 1]");
    }
  }
};

// Latent-factor ground truth. Users and items share cluster centers: an item's
// category and a user's "segment" feature name the center they were drawn
// around, so both carry signal. Exposures mix each user's top-affinity
// candidates with uniform exploration; an exposure turns into a positive with
// probability sigma(z_u . z_v / sqrt(d_lat) + b_v).
class SyntheticWorld {
 public:
  explicit SyntheticWorld(WorldConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t d = cfg_.latent_dim;
    std::vector<double> centers(cfg_.clusters * d);
    for (auto& c : centers) c = normal(rng);
    const double w = cfg_.latent_scale * cfg_.cluster_weight;
    const double noise = cfg_.latent_scale * std::sqrt(1.0 - cfg_.cluster_weight * cfg_.cluster_weight);
    auto draw = [&](std::vector<double>& out, std::size_t cluster) {
      for (std::size_t j = 0; j < d; ++j) out.push_back(w * centers[cluster * d + j] + noise * normal(rng));
    };
    std::uniform_int_distribution<std::size_t> pick_cluster(0, cfg_.clusters - 1);
    std::uniform_int_distribution<std::size_t> pick_region(0, cfg_.regions - 1);
    for (std::size_t v = 0; v < cfg_.items; ++v) {
      item_cluster_.push_back(pick_cluster(rng));
      draw(item_z_, item_cluster_.back());
      item_bias_.push_back(cfg_.bias_mean + cfg_.bias_std * normal(rng));
    }
    for (std::size_t u = 0; u < cfg_.users; ++u) {
      user_cluster_.push_back(pick_cluster(rng));
      user_region_.push_back(pick_region(rng));
      draw(user_z_, user_cluster_.back());
    }
    // Top-affinity candidate list per user.
    const std::size_t c = std::min(cfg_.candidates, cfg_.items);
    candidates_.resize(cfg_.users * c);
    std::vector<std::pair<double, std::size_t>> scored(cfg_.items);
    for (std::size_t u = 0; u < cfg_.users; ++u) {
      for (std::size_t v = 0; v < cfg_.items; ++v) scored[v] = {-affinity(u, v), v};
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(c), scored.end());
      for (std::size_t i = 0; i < c; ++i) candidates_[u * c + i] = scored[i].second;
    }
    num_candidates_ = c;
  }

  const WorldConfig& config() const noexcept { return cfg_; }

  static std::string user_id(std::size_t u) { return "u" + std::to_string(u); }
  static std::string item_id(std::size_t v) { return "i" + std::to_string(v); }
  static std::string category_id(std::size_t k) { return "c" + std::to_string(k); }

  ContextFeatures context(std::size_t u) const {
    return {{"region", "r" + std::to_string(user_region_[u])}, {"segment", "s" + std::to_string(user_cluster_[u])}};
  }

  std::vector<CatalogEntry> catalog() const {
    std::vector<CatalogEntry> out;
    out.reserve(cfg_.items);
    for (std::size_t v = 0; v < cfg_.items; ++v) out.push_back({item_id(v), category_id(item_cluster_[v])});
    return out;
  }

  double affinity(std::size_t u, std::size_t v) const {
    if (cfg_.affinity_override) return *cfg_.affinity_override;
    const std::size_t d = cfg_.latent_dim;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += user_z_[u * d + j] * item_z_[v * d + j];
    const double x = s / std::sqrt(static_cast<double>(d)) + item_bias_[v];
    return 1.0 / (1.0 + std::exp(-x));
  }

  std::span<const std::size_t> candidates(std::size_t u) const {
    return {candidates_.data() + u * num_candidates_, num_candidates_};
  }

  // Chronological exposure stream; timestamps are the event index.
  std::vector<InteractionEvent> generate(std::size_t num_events) const {
    std::mt19937_64 rng(splitmix64(cfg_.seed ^ 0x5eed5eedULL));
    std::uniform_int_distribution<std::size_t> pick_user(0, cfg_.users - 1);
    std::uniform_int_distribution<std::size_t> pick_item(0, cfg_.items - 1);
    std::uniform_int_distribution<std::size_t> pick_cand(0, num_candidates_ - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<InteractionEvent> out;
    out.reserve(num_events);
    for (std::size_t t = 0; t < num_events; ++t) {
      const std::size_t u = pick_user(rng);
      const bool explore = unit(rng) < cfg_.exploration;
      const std::size_t v = explore ? pick_item(rng) : candidates(u)[pick_cand(rng)];
      const bool positive = unit(rng) < affinity(u, v);
      Action a = Action::kExposeOnly;
      if (positive) a = unit(rng) < cfg_.comment_share ? Action::kComment : Action::kLike;
      out.push_back({static_cast<std::int64_t>(t), item_id(v), user_id(u), a, context(u)});
    }
    return out;
  }

  std::vector<InteractionEvent> generate() const { return generate(cfg_.num_events); }

  // Marginal probability that one generated exposure is positive.
  double expected_positive_rate() const {
    double total = 0.0;
    for (std::size_t u = 0; u < cfg_.users; ++u) {
      double exploit = 0.0;
      for (auto v : candidates(u)) exploit += affinity(u, v);
      exploit /= static_cast<double>(num_candidates_);
      double explore = 0.0;
      for (std::size_t v = 0; v < cfg_.items; ++v) explore += affinity(u, v);
      explore /= static_cast<double>(cfg_.items);
      total += (1.0 - cfg_.exploration) * exploit + cfg_.exploration * explore;
    }
    return total / static_cast<double>(cfg_.users);
  }

 private:
  WorldConfig cfg_;
  std::vector<double> item_z_, user_z_, item_bias_;
  std::vector<std::size_t> item_cluster_, user_cluster_, user_region_;
  std::vector<std::size_t> candidates_;
  std::size_t num_candidates_ = 0;
};

}  // namespace nur
