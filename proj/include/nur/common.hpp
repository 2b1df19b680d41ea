#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nur {

// Error taxonomy. The CLI maps these onto exit codes 1/2/3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (bad event line, unknown item, corrupt file).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Snapshot/file header problems, kept distinct so callers can tell them apart.
struct BadMagicError : DataError {
  using DataError::DataError;
};
struct VersionMismatchError : DataError {
  using DataError::DataError;
};
struct TruncatedFileError : DataError {
  using DataError::DataError;
};

// An internal precondition was broken, e.g. a fully-masked attention row.
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

// FNV-1a. Stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Maps an opaque id onto a row of a fixed-size vocabulary table.
inline std::size_t hash_row(std::string_view id, std::size_t vocab) noexcept {
  return static_cast<std::size_t>(fnv1a64(id) % vocab);
}

}  // namespace nur
