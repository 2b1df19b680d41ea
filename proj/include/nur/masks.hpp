#pragma once

#include <vector>

#include "nur/autodiff.hpp"

namespace nur {

// Encoder token order: p_1..p_k, u_1..u_n, [CLS].
// Decoder query order: q_first..q_{n+1}, q_next.
struct MaskLayout {
  std::size_t k = 2;             // prefix tokens; 0 when prefixes are masked out entirely
  std::size_t n = 0;             // sequence slots, including padding
  bool cls = true;               // whether a [CLS] token is appended
  bool causal = true;            // false: every encoder row sees every valid column
  std::vector<bool> valid;       // per sequence slot; empty = all valid

  bool slot_valid(std::size_t i) const { return valid.empty() || valid[i]; }
  std::size_t tokens() const { return k + n + (cls ? 1 : 0); }
  // Without prefixes, the first query would have nothing to condition on.
  std::size_t first_query() const { return k == 0 ? 2 : 1; }
  std::size_t queries() const { return n + 1 - (first_query() - 1) + 1; }
};

struct AttentionMaskPair {
  Mask enc;      // [tokens x tokens]
  Mask dec;      // [queries x tokens], decoder cross-attention
  Mask queries;  // [queries x queries], decoder self-attention among queries
  std::size_t first_query = 1;
};

namespace detail {

inline bool column_valid(const MaskLayout& l, std::size_t col) {
  if (col < l.k) return true;
  if (col < l.k + l.n) return l.slot_valid(col - l.k);
  return true;  // CLS
}

}  // namespace detail

inline Mask build_encoder_mask(const MaskLayout& l) {
  const std::size_t T = l.tokens();
  Mask m(T, T);
  for (std::size_t r = 0; r < T; ++r) {
    const bool is_prefix = r < l.k;
    const bool is_seq = r >= l.k && r < l.k + l.n;
    if (is_seq && !l.slot_valid(r - l.k)) {
      m.set(r, r);  // padding attends only to itself and is never attended
      continue;
    }
    for (std::size_t c = 0; c < T; ++c) {
      if (!detail::column_valid(l, c)) continue;
      bool allowed;
      if (!l.causal) {
        allowed = true;
      } else if (is_prefix) {
        allowed = c < l.k;
      } else if (is_seq) {
        allowed = c <= r;  // prefix columns plus u_1..u_i
      } else {
        allowed = true;  // CLS sees everything
      }
      m.set(r, c, allowed);
    }
  }
  return m;
}

inline Mask build_decoder_masks(const MaskLayout& l) {
  const std::size_t T = l.tokens();
  const std::size_t Q = l.queries();
  Mask m(Q, T);
  for (std::size_t q = 0; q < Q; ++q) {
    const bool is_next = q + 1 == Q;
    const std::size_t i = l.first_query() + q;  // 1-based index of u-hat_i
    const bool padded = !is_next && i >= 2 && !l.slot_valid(i - 2);
    for (std::size_t c = 0; c < T; ++c) {
      if (!detail::column_valid(l, c)) continue;
      bool allowed;
      if (is_next || padded) {
        allowed = true;
      } else if (c < l.k) {
        allowed = true;
      } else if (c < l.k + l.n) {
        allowed = c - l.k + 1 < i;  // u_1..u_{i-1}
      } else {
        allowed = false;  // CLS is reserved for the next-user query
      }
      m.set(q, c, allowed);
    }
  }
  return m;
}

inline Mask build_query_mask(const MaskLayout& l) {
  const std::size_t Q = l.queries();
  auto query_valid = [&](std::size_t q) {
    if (q + 1 == Q) return true;
    const std::size_t i = l.first_query() + q;
    return i < 2 || l.slot_valid(i - 2);
  };
  Mask m(Q, Q);
  for (std::size_t a = 0; a < Q; ++a) {
    if (!query_valid(a)) {
      m.set(a, a);
      continue;
    }
    for (std::size_t b = 0; b < Q; ++b) {
      if (query_valid(b) && (b <= a || a + 1 == Q)) m.set(a, b);
    }
  }
  return m;
}

inline AttentionMaskPair build_masks(const MaskLayout& l) {
  require(l.valid.empty() || l.valid.size() == l.n, "padding mask length must equal sequence slots");
  require(l.k > 0 || l.cls, "layout needs prefix tokens or a CLS token");
  return {build_encoder_mask(l), build_decoder_masks(l), build_query_mask(l), l.first_query()};
}

// Default layout: k prefix tokens, n real UIDs, causal, with [CLS].
inline Mask build_encoder_mask(std::size_t k, std::size_t n) {
  require(k >= 1, "k must be >= 1");
  return build_encoder_mask(MaskLayout{k, n, true, true, {}});
}

inline Mask build_decoder_masks(std::size_t k, std::size_t n) {
  require(k >= 1, "k must be >= 1");
  return build_decoder_masks(MaskLayout{k, n, true, true, {}});
}

}  // namespace nur
