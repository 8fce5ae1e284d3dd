#pragma once

// Corpus measurements: stack depth, distinct binaries per stack, problem-class
// frequencies, normalized blame location and per-method blame ratio.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "crashloc/corpus.hpp"

namespace crashloc {

struct DepthStats {
  std::map<std::size_t, std::size_t> histogram;
  double mean = 0.0;
  double median = 0.0;
};

struct BinaryStats {
  std::map<std::size_t, std::size_t> histogram;  // distinct binaries -> stacks
  double mean = 0.0;
};

struct BlameRatio {
  std::size_t blamed = 0;
  std::size_t appearances = 0;
  double ratio() const { return appearances ? static_cast<double>(blamed) / static_cast<double>(appearances) : 0.0; }
};

struct ClassFrequencies {
  std::vector<std::pair<std::string, std::size_t>> ranked;  // descending count, then name
  double memory_related_share = 0.0;
};

inline const std::set<std::string>& default_memory_related_classes() {
  static const std::set<std::string> s = {"INVALID_POINTER_READ", "NULL_POINTER_READ",
                                          "HEAP_CORRUPTION", "NULL_CLASS_PTR_READ",
                                          "INVALID_POINTER_WRITE"};
  return s;
}

inline constexpr std::size_t kBlameLocationBuckets = 20;

struct CorpusStats {
  DepthStats depth;
  BinaryStats binaries;
  ClassFrequencies classes;
  std::vector<std::size_t> blame_location_histogram;  // kBlameLocationBuckets over [0, 1]
  std::map<std::string, BlameRatio> blame_ratio_table;
  std::size_t labeled_records = 0;
  double top_frame_blame_share = 0.0;
  double bottom_half_blame_share = 0.0;
};

/// Throws DataError on an empty corpus.
DepthStats depth_distribution(const Corpus& corpus);
BinaryStats distinct_binaries_per_stack(const Corpus& corpus);
std::size_t distinct_binaries(const CrashRecord& record);

/// blame_index / (depth - 1); 0 for depth-1 stacks. Throws DataError without a label.
double normalized_blame_location(const CrashRecord& record);

/// Unlabeled records are ignored. Method identity is Frame::method_key().
std::map<std::string, BlameRatio> blame_ratio(const Corpus& corpus);

ClassFrequencies problem_class_frequencies(
    const Corpus& corpus,
    const std::set<std::string>& memory_related = default_memory_related_classes());

CorpusStats compute_stats(const Corpus& corpus,
                          const std::set<std::string>& memory_related = default_memory_related_classes());

/// One CSV per statistic plus summary.csv, written into `dir` (created if missing).
void write_stats_csv(const CorpusStats& stats, const std::filesystem::path& dir);

/// Minimal CSV field quoting.
std::string csv_field(const std::string& s);

}  // namespace crashloc
