#pragma once

// Crash-stack records: frame grammar, record digests, dedup, temporal split,
// and the record-per-line corpus file format.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace crashloc {

/// Malformed input data (corpus lines, model files, configs).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMaxStackDepth = 255;

/// One symbolized frame: "binary!namespace::method+0xOFF".
struct Frame {
  std::string binary;
  std::string name_space;  // "::"-joined, possibly empty
  std::string method;      // possibly empty or the literal "unknown"
  std::optional<std::uint64_t> offset;
  std::string raw;
  bool has_symbol = false;  // a '!' separator was present
  bool unknown_binary = false;
  bool unknown_method = false;

  /// "namespace::method" (or just method when the namespace is empty).
  std::string symbol() const;
  /// Identity used by blame statistics and the blame table: binary!symbol, offset ignored.
  std::string method_key() const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

Frame parse_frame(std::string_view text);
std::string format_frame(const Frame& frame);

struct CrashRecord {
  std::vector<Frame> stack;  // index 0 = top
  std::optional<std::size_t> blame_index;
  std::string problem_class;
  std::string app;
  std::int64_t timestamp = 0;

  std::size_t depth() const { return stack.size(); }

  friend bool operator==(const CrashRecord&, const CrashRecord&) = default;
};

/// Throws DataError when a CrashRecord invariant is broken.
void validate_record(const CrashRecord& record);

/// FNV-1a 64 over the length-prefixed frame raw texts, blame index, problem class
/// and app. Timestamps are excluded.
std::uint64_t record_hash(const CrashRecord& record);

struct Corpus {
  std::vector<CrashRecord> records;
  std::string source;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

/// Keeps the first occurrence of each record digest, preserving order.
Corpus dedup(const Corpus& corpus);

inline constexpr double kDefaultTrainFraction = 11.0 / 14.0;

/// Stable-sorts by timestamp; the earliest round(fraction * N) records (clamped to
/// [1, N-1]) form the training part.
std::pair<Corpus, Corpus> temporal_split(const Corpus& corpus,
                                         double train_fraction = kDefaultTrainFraction);

/// Order-sensitive digest of a whole corpus (records' digests and timestamps).
std::uint64_t corpus_digest(const Corpus& corpus);

std::string record_to_line(const CrashRecord& record);
/// `line_no` is only used in error messages.
CrashRecord record_from_line(std::string_view line, std::size_t line_no = 1);

Corpus load_corpus(const std::filesystem::path& path);
/// Writes through a temporary file renamed into place on success.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

// 64-bit FNV-1a helpers shared by record, model and report digests.
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
  for (int i = 0; i < 8; ++i) {
    h ^= static_cast<unsigned char>(v >> (8 * i));
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(std::uint64_t v);

/// Writes `contents` to `path` via a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace crashloc
