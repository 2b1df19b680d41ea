#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <queue>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nur/common.hpp"
#include "nur/tensor.hpp"

namespace nur {

struct HnswParams {
  std::size_t M = 16;
  std::size_t ef_construction = 200;
  std::size_t ef_search = 64;
  std::uint64_t seed = 42;
};

struct SearchHit {
  std::string item_id;
  double score = 0.0;
  friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

// Descending score, ties by ascending item id.
inline bool hit_before(const SearchHit& a, const SearchHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.item_id < b.item_id;
}

inline double inner_product(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
  return s;
}

// Flat store of (item_id, embedding) records; the exact-search oracle.
struct EmbeddingStore {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<double> data;

  std::size_t size() const noexcept { return ids.size(); }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }

  void add(const std::string& id, std::span<const double> v) {
    if (v.size() != dim) throw DataError("embedding for '" + id + "' has dimension " + std::to_string(v.size()) +
                                         ", expected " + std::to_string(dim));
    ids.push_back(id);
    data.insert(data.end(), v.begin(), v.end());
  }
};

inline std::vector<SearchHit> brute_force_topk(const EmbeddingStore& store, std::span<const double> query,
                                               std::size_t k) {
  require(query.size() == store.dim, "brute_force_topk: query dimension mismatch");
  std::vector<SearchHit> all;
  all.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    all.push_back({store.ids[i], inner_product(store.row(i).data(), query.data(), store.dim)});
  }
  const std::size_t n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), hit_before);
  all.resize(n);
  return all;
}

// Embeddings file: header "NUR-EMB v1,<dim>", then "item_id,v1,...,vd" per line.
inline constexpr std::string_view kEmbeddingsMagic = "NUR-EMB v1";

inline void write_embeddings(const std::string& path, const EmbeddingStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << kEmbeddingsMagic << ',' << store.dim << '\n';
  char buf[64];
  for (std::size_t i = 0; i < store.size(); ++i) {
    os << store.ids[i];
    for (double v : store.row(i)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      os << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    os << '\n';
  }
}

inline EmbeddingStore read_embeddings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path);
  std::string line;
  if (!std::getline(is, line) || !line.starts_with(std::string(kEmbeddingsMagic) + ",")) {
    throw BadMagicError("embeddings file " + path + " lacks header " + std::string(kEmbeddingsMagic));
  }
  EmbeddingStore store;
  store.dim = std::stoul(line.substr(kEmbeddingsMagic.size() + 1));
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> v;
    std::size_t pos = line.find(',');
    if (pos == std::string::npos) throw DataError("embeddings line " + std::to_string(lineno) + ": no values");
    std::string id = line.substr(0, pos);
    while (pos != std::string::npos) {
      const std::size_t next = line.find(',', pos + 1);
      const std::string_view tok(line.data() + pos + 1, (next == std::string::npos ? line.size() : next) - pos - 1);
      double x = 0.0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
      if (ec != std::errc() || p != tok.data() + tok.size()) {
        throw DataError("embeddings line " + std::to_string(lineno) + ": bad number");
      }
      v.push_back(x);
      pos = next;
    }
    store.add(id, v);
  }
  return store;
}

// Hierarchical navigable small-world graph under raw inner-product
// similarity. Greedy routing assumes metric-like structure which the inner
// product lacks; recall is measured, not assumed.
//
// Deleting or re-inserting an item tombstones the old node: it still routes
// searches but never appears in results. No graph repair.
class HnswIndex {
 public:
  HnswIndex(std::size_t dim, HnswParams params = {})
      : dim_(dim), params_(params), level_mult_(1.0 / std::log(static_cast<double>(std::max<std::size_t>(params.M, 2)))) {
    if (dim == 0) throw UsageError("hnsw: dimension must be positive");
    if (params.M < 2) throw UsageError("hnsw: M must be >= 2");
  }

  std::size_t dim() const noexcept { return dim_; }
  const HnswParams& params() const noexcept { return params_; }
  std::size_t size() const noexcept { return live_.size(); }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return live_.empty(); }
  int max_level() const noexcept { return max_level_; }
  bool contains(const std::string& id) const { return live_.contains(id); }

  void insert(const std::string& item_id, std::span<const double> embedding) {
    if (embedding.size() != dim_) {
      throw DataError("hnsw: embedding dimension " + std::to_string(embedding.size()) + " != index dimension " +
                      std::to_string(dim_));
    }
    if (auto it = live_.find(item_id); it != live_.end()) nodes_[it->second].deleted = true;

    const auto id = static_cast<std::uint32_t>(nodes_.size());
    const int level = draw_level();
    nodes_.push_back({item_id, level, false, std::vector<std::vector<std::uint32_t>>(level + 1)});
    vectors_.insert(vectors_.end(), embedding.begin(), embedding.end());
    live_[item_id] = id;

    if (entry_ < 0) {
      entry_ = id;
      max_level_ = level;
      return;
    }

    const double* q = vec(id);
    auto ep = static_cast<std::uint32_t>(entry_);
    for (int l = max_level_; l > level; --l) ep = greedy_closest(q, ep, l);

    std::vector<std::uint32_t> entry_points{ep};
    for (int l = std::min(level, max_level_); l >= 0; --l) {
      auto found = search_layer(q, entry_points, params_.ef_construction, l);
      auto chosen = select_neighbors(found, params_.M);
      nodes_[id].links[l].clear();
      for (const auto& c : chosen) nodes_[id].links[l].push_back(c.second);
      for (const auto& c : chosen) link_back(c.second, id, l);
      entry_points.clear();
      for (const auto& f : found) entry_points.push_back(f.second);
    }

    if (level > max_level_) {
      max_level_ = level;
      entry_ = id;
    }
  }

  bool remove(const std::string& item_id) {
    auto it = live_.find(item_id);
    if (it == live_.end()) return false;
    nodes_[it->second].deleted = true;
    live_.erase(it);
    return true;
  }

  std::vector<SearchHit> search(std::span<const double> query, std::size_t k, std::size_t ef) const {
    require(query.size() == dim_, "hnsw: query dimension mismatch");
    if (live_.empty() || k == 0) return {};
    ef = std::max(ef, k);
    auto ep = static_cast<std::uint32_t>(entry_);
    for (int l = max_level_; l > 0; --l) ep = greedy_closest(query.data(), ep, l);
    std::vector<std::uint32_t> eps{ep};
    auto found = search_layer(query.data(), eps, ef, 0);
    std::vector<SearchHit> hits;
    hits.reserve(found.size());
    for (const auto& [score, node] : found) {
      if (!nodes_[node].deleted) hits.push_back({nodes_[node].item_id, score});
    }
    std::sort(hits.begin(), hits.end(), hit_before);
    if (hits.size() > k) hits.resize(k);
    return hits;
  }

  std::vector<SearchHit> search(std::span<const double> query, std::size_t k) const {
    return search(query, k, params_.ef_search);
  }

  // Live (non-tombstoned) embeddings, in insertion order.
  EmbeddingStore live_store() const {
    EmbeddingStore s;
    s.dim = dim_;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].deleted) s.add(nodes_[i].item_id, {vec(i), dim_});
    }
    return s;
  }

  // --- structural introspection (tests) ---
  int node_level(std::uint32_t node) const { return nodes_[node].level; }
  bool node_deleted(std::uint32_t node) const { return nodes_[node].deleted; }
  const std::vector<std::uint32_t>& neighbors(std::uint32_t node, int layer) const { return nodes_[node].links[layer]; }
  std::size_t max_degree(int layer) const { return layer == 0 ? 2 * params_.M : params_.M; }

  // Number of nodes reachable from the entry point at layer 0.
  std::size_t reachable_at_layer0() const {
    if (entry_ < 0) return 0;
    std::vector<std::uint8_t> seen(nodes_.size(), 0);
    std::vector<std::uint32_t> stack{static_cast<std::uint32_t>(entry_)};
    seen[entry_] = 1;
    std::size_t count = 0;
    while (!stack.empty()) {
      auto n = stack.back();
      stack.pop_back();
      ++count;
      for (auto m : nodes_[n].links[0]) {
        if (!seen[m]) {
          seen[m] = 1;
          stack.push_back(m);
        }
      }
    }
    return count;
  }

  // --- snapshot: "NUR-HNSW v1\n", params, node table, adjacency payload ---
  static constexpr std::string_view kMagic = "NUR-HNSW v1";

  void save(std::ostream& os) const {
    os << kMagic << '\n';
    io::write_le<std::uint64_t>(os, dim_);
    io::write_le<std::uint64_t>(os, params_.M);
    io::write_le<std::uint64_t>(os, params_.ef_construction);
    io::write_le<std::uint64_t>(os, params_.ef_search);
    io::write_le<std::uint64_t>(os, params_.seed);
    io::write_le<std::uint64_t>(os, level_draws_);
    io::write_le<std::int64_t>(os, entry_);
    io::write_le<std::int32_t>(os, max_level_);
    io::write_le<std::uint64_t>(os, nodes_.size());
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
      io::write_string(os, nodes_[i].item_id);
      io::write_le<std::uint8_t>(os, nodes_[i].deleted ? 1 : 0);
      io::write_le<std::int32_t>(os, nodes_[i].level);
      for (std::size_t j = 0; j < dim_; ++j) io::write_le<double>(os, vec(i)[j]);
    }
    for (const auto& n : nodes_) {
      for (const auto& layer : n.links) {
        io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(layer.size()));
        for (auto m : layer) io::write_le<std::uint32_t>(os, m);
      }
    }
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path);
    save(os);
  }

  // Either returns a complete index or throws; never a partial one.
  static HnswIndex load(std::istream& is) {
    io::expect_magic(is, kMagic, "NUR-HNSW");
    const auto dim = io::read_le<std::uint64_t>(is, "hnsw dim");
    HnswParams p;
    p.M = io::read_le<std::uint64_t>(is, "hnsw M");
    p.ef_construction = io::read_le<std::uint64_t>(is, "hnsw ef_construction");
    p.ef_search = io::read_le<std::uint64_t>(is, "hnsw ef_search");
    p.seed = io::read_le<std::uint64_t>(is, "hnsw seed");
    if (dim == 0 || dim > (1u << 20) || p.M < 2) throw DataError("hnsw snapshot: implausible parameters");
    HnswIndex idx(dim, p);
    idx.level_draws_ = io::read_le<std::uint64_t>(is, "hnsw level counter");
    idx.entry_ = io::read_le<std::int64_t>(is, "hnsw entry point");
    idx.max_level_ = io::read_le<std::int32_t>(is, "hnsw max level");
    const auto count = io::read_le<std::uint64_t>(is, "hnsw node count");
    if (count > (1ull << 32)) throw DataError("hnsw snapshot: implausible node count");
    if (idx.entry_ >= static_cast<std::int64_t>(count) || (count > 0) != (idx.entry_ >= 0)) {
      throw DataError("hnsw snapshot: bad entry point");
    }
    for (std::uint64_t i = 0; i < count; ++i) {
      Node n;
      n.item_id = io::read_string(is, "hnsw item id");
      n.deleted = io::read_le<std::uint8_t>(is, "hnsw tombstone") != 0;
      n.level = io::read_le<std::int32_t>(is, "hnsw level");
      if (n.level < 0 || n.level > 64) throw DataError("hnsw snapshot: bad node level");
      n.links.resize(n.level + 1);
      for (std::size_t j = 0; j < dim; ++j) idx.vectors_.push_back(io::read_le<double>(is, "hnsw embedding"));
      if (!n.deleted) idx.live_[n.item_id] = static_cast<std::uint32_t>(i);
      idx.nodes_.push_back(std::move(n));
    }
    for (auto& n : idx.nodes_) {
      for (auto& layer : n.links) {
        const auto deg = io::read_le<std::uint32_t>(is, "hnsw degree");
        if (deg > count) throw DataError("hnsw snapshot: bad degree");
        layer.resize(deg);
        for (auto& m : layer) {
          m = io::read_le<std::uint32_t>(is, "hnsw adjacency");
          if (m >= count) throw DataError("hnsw snapshot: neighbor out of range");
        }
      }
    }
    return idx;
  }

  static HnswIndex load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read " + path);
    return load(is);
  }

 private:
  struct Node {
    std::string item_id;
    int level = 0;
    bool deleted = false;
    std::vector<std::vector<std::uint32_t>> links;
  };

  using Scored = std::pair<double, std::uint32_t>;  // (similarity, node)

  const double* vec(std::uint32_t node) const { return vectors_.data() + static_cast<std::size_t>(node) * dim_; }
  double sim(const double* q, std::uint32_t node) const { return inner_product(q, vec(node), dim_); }

  // Level ~ floor(-ln(U) / ln(M)), U drawn from a counter-based hash so the
  // sequence is reproducible and resumable after a snapshot load.
  int draw_level() {
    const std::uint64_t bits = splitmix64(params_.seed ^ splitmix64(level_draws_++));
    const double u = (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    return static_cast<int>(std::floor(-std::log(u) * level_mult_));
  }

  std::uint32_t greedy_closest(const double* q, std::uint32_t ep, int layer) const {
    double best = sim(q, ep);
    bool changed = true;
    while (changed) {
      changed = false;
      for (auto m : nodes_[ep].links[layer]) {
        const double s = sim(q, m);
        if (s > best || (s == best && m < ep)) {
          best = s;
          ep = m;
          changed = true;
        }
      }
    }
    return ep;
  }

  // Beam search; returns up to ef nodes sorted by descending similarity.
  std::vector<Scored> search_layer(const double* q, const std::vector<std::uint32_t>& eps, std::size_t ef,
                                   int layer) const {
    auto worse = [](const Scored& a, const Scored& b) {  // min-heap on similarity
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    };
    auto better = [](const Scored& a, const Scored& b) {  // max-heap on similarity
      return a.first < b.first || (a.first == b.first && a.second > b.second);
    };
    std::vector<std::uint8_t> visited(nodes_.size(), 0);
    std::priority_queue<Scored, std::vector<Scored>, decltype(better)> candidates(better);
    std::priority_queue<Scored, std::vector<Scored>, decltype(worse)> results(worse);
    for (auto e : eps) {
      if (visited[e]) continue;
      visited[e] = 1;
      const Scored s{sim(q, e), e};
      candidates.push(s);
      results.push(s);
      if (results.size() > ef) results.pop();
    }
    while (!candidates.empty()) {
      const auto cur = candidates.top();
      if (results.size() >= ef && cur.first < results.top().first) break;
      candidates.pop();
      for (auto m : nodes_[cur.second].links[layer]) {
        if (visited[m]) continue;
        visited[m] = 1;
        const double s = sim(q, m);
        if (results.size() < ef || s > results.top().first) {
          candidates.push({s, m});
          results.push({s, m});
          if (results.size() > ef) results.pop();
        }
      }
    }
    std::vector<Scored> out;
    out.reserve(results.size());
    while (!results.empty()) {
      out.push_back(results.top());
      results.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  // Neighbor-selection heuristic over candidates scored against a base point:
  // keep a candidate only if it is more similar to the base point than to every already-kept neighbor; top up with the
  // best discarded candidates so the degree budget is used.
  std::vector<Scored> select_neighbors(std::vector<Scored> cands, std::size_t m) const {
    std::sort(cands.begin(), cands.end(), [](const Scored& a, const Scored& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    std::vector<Scored> kept, pruned;
    for (const auto& c : cands) {
      if (kept.size() >= m) break;
      bool good = true;
      for (const auto& r : kept) {
        if (inner_product(vec(c.second), vec(r.second), dim_) > c.first) {
          good = false;
          break;
        }
      }
      (good ? kept : pruned).push_back(c);
    }
    for (const auto& c : pruned) {
      if (kept.size() >= m) break;
      kept.push_back(c);
    }
    return kept;
  }

  void link_back(std::uint32_t from, std::uint32_t to, int layer) {
    auto& links = nodes_[from].links[layer];
    links.push_back(to);
    const std::size_t cap = max_degree(layer);
    if (links.size() <= cap) return;
    std::vector<Scored> cands;
    cands.reserve(links.size());
    const double* base = vec(from);
    for (auto n : links) cands.push_back({inner_product(base, vec(n), dim_), n});
    auto chosen = select_neighbors(std::move(cands), cap);
    links.clear();
    for (const auto& c : chosen) links.push_back(c.second);
  }

  std::size_t dim_;
  HnswParams params_;
  double level_mult_;
  std::vector<Node> nodes_;
  std::vector<double> vectors_;
  std::unordered_map<std::string, std::uint32_t> live_;
  std::int64_t entry_ = -1;
  int max_level_ = -1;
  std::uint64_t level_draws_ = 0;
};

}  // namespace nur
