#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nur/autodiff.hpp"
#include "nur/common.hpp"

namespace nur {

enum class Action : std::uint8_t { kLike, kComment, kExposeOnly };

inline bool is_positive(Action a) noexcept { return a != Action::kExposeOnly; }

inline std::string_view to_string(Action a) noexcept {
  switch (a) {
    case Action::kLike: return "like";
    case Action::kComment: return "comment";
    case Action::kExposeOnly: return "expose_only";
  }
  return "?";
}

inline Action parse_action(std::string_view s) {
  if (s == "like") return Action::kLike;
  if (s == "comment") return Action::kComment;
  if (s == "expose_only") return Action::kExposeOnly;
  throw DataError("unknown action '" + std::string(s) + "'");
}

// Requesting-user contextual features, keyed by feature name.
using ContextFeatures = std::map<std::string, std::string>;

struct InteractionEvent {
  std::int64_t timestamp = 0;
  std::string item_id;
  std::string user_id;
  Action action = Action::kExposeOnly;
  ContextFeatures context;

  friend bool operator==(const InteractionEvent&, const InteractionEvent&) = default;
};

struct UnknownItemError : DataError {
  explicit UnknownItemError(const std::string& item)
      : DataError("event references unknown item '" + item + "' (not in catalog)"), item_id(item) {}
  std::string item_id;
};

// ---------------------------------------------------------------------------
// Text formats

inline constexpr std::string_view kEventsMagic = "NUR-EVENTS v1";
inline constexpr std::string_view kItemsMagic = "NUR-ITEMS v1";

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool valid_token(std::string_view s) {
  return !s.empty() && s.find_first_of(",;=\n\r") == std::string_view::npos;
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace detail

inline std::string format_context(const ContextFeatures& ctx) {
  std::string out;
  for (const auto& [k, v] : ctx) {
    if (!out.empty()) out += ';';
    out += k;
    out += '=';
    out += v;
  }
  return out;
}

inline ContextFeatures parse_context(std::string_view field) {
  ContextFeatures ctx;
  if (field.empty()) return ctx;
  for (auto kv : detail::split(field, ';')) {
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw DataError("context feature '" + std::string(kv) + "' lacks '='");
    auto key = kv.substr(0, eq);
    auto val = kv.substr(eq + 1);
    if (!detail::valid_token(key) || !detail::valid_token(val)) {
      throw DataError("malformed context feature '" + std::string(kv) + "'");
    }
    if (!ctx.emplace(std::string(key), std::string(val)).second) {
      throw DataError("duplicate context feature '" + std::string(key) + "'");
    }
  }
  return ctx;
}

inline InteractionEvent parse_event_line(std::string_view line) {
  auto f = detail::split(line, ',');
  if (f.size() != 5) throw DataError("expected 5 comma-separated fields, got " + std::to_string(f.size()));
  InteractionEvent ev;
  try {
    std::size_t used = 0;
    ev.timestamp = std::stoll(std::string(f[0]), &used);
    if (used != f[0].size()) throw DataError("bad timestamp");
  } catch (const std::logic_error&) {
    throw DataError("bad timestamp '" + std::string(f[0]) + "'");
  }
  if (!detail::valid_token(f[1])) throw DataError("empty or malformed item_id");
  if (!detail::valid_token(f[2])) throw DataError("empty or malformed user_id");
  ev.item_id = std::string(f[1]);
  ev.user_id = std::string(f[2]);
  ev.action = parse_action(f[3]);
  ev.context = parse_context(f[4]);
  return ev;
}

inline std::string format_event(const InteractionEvent& ev) {
  std::string out = std::to_string(ev.timestamp);
  out += ',';
  out += ev.item_id;
  out += ',';
  out += ev.user_id;
  out += ',';
  out += to_string(ev.action);
  out += ',';
  out += format_context(ev.context);
  return out;
}

inline void write_events(std::ostream& os, std::span<const InteractionEvent> events) {
  os << kEventsMagic << '\n';
  for (const auto& ev : events) os << format_event(ev) << '\n';
}

// Parses a whole event stream. Errors carry the 1-based line number.
inline std::vector<InteractionEvent> read_events(std::istream& is) {
  io::expect_magic(is, kEventsMagic, "NUR-EVENTS");
  std::vector<InteractionEvent> out;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::strip_cr(std::move(line));
    if (line.empty()) continue;
    try {
      auto ev = parse_event_line(line);
      if (!out.empty() && ev.timestamp < out.back().timestamp) throw DataError("timestamp decreases");
      out.push_back(std::move(ev));
    } catch (const DataError& e) {
      throw DataError("event line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<InteractionEvent> read_events(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path);
  return read_events(is);
}

inline void write_events(const std::string& path, std::span<const InteractionEvent> events) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_events(os, events);
}

// Item catalog: static item features (item id, category id), in file order.
struct CatalogEntry {
  std::string item_id;
  std::string category_id;
  friend bool operator==(const CatalogEntry&, const CatalogEntry&) = default;
};

inline void write_catalog(std::ostream& os, std::span<const CatalogEntry> items) {
  os << kItemsMagic << '\n';
  for (const auto& it : items) os << it.item_id << ',' << it.category_id << '\n';
}

inline void write_catalog(const std::string& path, std::span<const CatalogEntry> items) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_catalog(os, items);
}

inline std::vector<CatalogEntry> read_catalog(std::istream& is) {
  io::expect_magic(is, kItemsMagic, "NUR-ITEMS");
  std::vector<CatalogEntry> out;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::strip_cr(std::move(line));
    if (line.empty()) continue;
    auto f = detail::split(line, ',');
    if (f.size() != 2 || !detail::valid_token(f[0]) || !detail::valid_token(f[1])) {
      throw DataError("catalog line " + std::to_string(lineno) + ": expected item_id,category_id");
    }
    out.push_back({std::string(f[0]), std::string(f[1])});
  }
  return out;
}

inline std::vector<CatalogEntry> read_catalog(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path);
  return read_catalog(is);
}

// ---------------------------------------------------------------------------
// Per-item sequences and training samples

struct TrainingSample {
  std::string item_id;
  std::string category_id;
  std::vector<std::string> sequence;  // u_1..u_n, oldest first
  std::string label_user;
  ContextFeatures label_context;
  int interacted = 0;  // R flag
  std::int64_t timestamp = 0;

  friend bool operator==(const TrainingSample&, const TrainingSample&) = default;
};

// Chronological interacted-user sequences per item, capped at max_seq_len.
// When full, the oldest user is evicted.
class ItemSequenceStore {
 public:
  explicit ItemSequenceStore(std::size_t max_seq_len = 50) : max_len_(max_seq_len) {
    require(max_seq_len >= 1, "max_seq_len must be >= 1");
  }

  std::size_t max_seq_len() const noexcept { return max_len_; }
  std::size_t num_items() const noexcept { return items_.size(); }

  void register_item(const std::string& item_id, const std::string& category_id) {
    auto [it, inserted] = items_.try_emplace(item_id);
    it->second.category = category_id;
    if (inserted) order_.push_back(item_id);
  }

  void register_catalog(std::span<const CatalogEntry> catalog) {
    for (const auto& c : catalog) register_item(c.item_id, c.category_id);
  }

  bool contains(const std::string& item_id) const { return items_.contains(item_id); }

  const std::string& category(const std::string& item_id) const { return entry(item_id).category; }

  std::vector<std::string> sequence(const std::string& item_id) const {
    const auto& seq = entry(item_id).seq;
    return {seq.begin(), seq.end()};
  }

  // Items in registration order.
  const std::vector<std::string>& items() const noexcept { return order_; }

  // Emits the sample for the pre-event state, then appends positives.
  TrainingSample ingest(const InteractionEvent& ev) {
    auto it = items_.find(ev.item_id);
    if (it == items_.end()) throw UnknownItemError(ev.item_id);
    auto& e = it->second;
    TrainingSample s;
    s.item_id = ev.item_id;
    s.category_id = e.category;
    s.sequence.assign(e.seq.begin(), e.seq.end());
    s.label_user = ev.user_id;
    s.label_context = ev.context;
    s.interacted = is_positive(ev.action) ? 1 : 0;
    s.timestamp = ev.timestamp;
    if (is_positive(ev.action)) {
      e.seq.push_back(ev.user_id);
      if (e.seq.size() > max_len_) e.seq.pop_front();
    }
    return s;
  }

  friend bool operator==(const ItemSequenceStore& a, const ItemSequenceStore& b) {
    if (a.max_len_ != b.max_len_ || a.order_ != b.order_) return false;
    for (const auto& [k, v] : a.items_) {
      auto it = b.items_.find(k);
      if (it == b.items_.end() || it->second.category != v.category || it->second.seq != v.seq) return false;
    }
    return true;
  }

 private:
  struct Entry {
    std::string category;
    std::deque<std::string> seq;
  };

  const Entry& entry(const std::string& item_id) const {
    auto it = items_.find(item_id);
    if (it == items_.end()) throw UnknownItemError(item_id);
    return it->second;
  }

  std::size_t max_len_;
  std::unordered_map<std::string, Entry> items_;
  std::vector<std::string> order_;
};

inline std::vector<TrainingSample> ingest_all(ItemSequenceStore& store, std::span<const InteractionEvent> events) {
  std::vector<TrainingSample> out;
  out.reserve(events.size());
  for (const auto& ev : events) out.push_back(store.ingest(ev));
  return out;
}

// ---------------------------------------------------------------------------
// Batching

struct MixPolicy {
  bool shuffle = false;
  std::uint64_t seed = 0;
};

struct Batch {
  std::vector<TrainingSample> samples;
  std::size_t padded_len = 0;
  Mask padding;                          // [B x padded_len], true = real token
  std::vector<std::size_t> contrastive;  // members with R = 1
  std::vector<std::size_t> ce;           // every member

  std::size_t size() const noexcept { return samples.size(); }
};

inline Batch make_batch(std::vector<TrainingSample> members) {
  Batch b;
  b.samples = std::move(members);
  for (const auto& s : b.samples) b.padded_len = std::max(b.padded_len, s.sequence.size());
  b.padding = Mask(b.samples.size(), b.padded_len, false);
  for (std::size_t i = 0; i < b.samples.size(); ++i) {
    for (std::size_t j = 0; j < b.samples[i].sequence.size(); ++j) b.padding.set(i, j);
    if (b.samples[i].interacted == 1) b.contrastive.push_back(i);
    b.ce.push_back(i);
  }
  return b;
}

// Splits a sample stream into batches of batch_size. A trailing remainder of
// one sample is dropped: the contrastive term needs an in-batch negative.
inline std::vector<Batch> batch_samples(std::span<const TrainingSample> samples, std::size_t batch_size,
                                        const MixPolicy& policy = {}) {
  require(batch_size >= 2, "batch_size must be >= 2");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (policy.shuffle) {
    std::mt19937_64 rng(policy.seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < 2) break;
    std::vector<TrainingSample> members;
    members.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) members.push_back(samples[order[i]]);
    out.push_back(make_batch(std::move(members)));
  }
  return out;
}

}  // namespace nur
