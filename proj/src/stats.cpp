#include "crashloc/stats.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace crashloc {

namespace {

void require_nonempty(const Corpus& corpus) {
  if (corpus.empty()) throw DataError("statistics need a non-empty corpus");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

DepthStats depth_distribution(const Corpus& corpus) {
  require_nonempty(corpus);
  DepthStats s;
  std::vector<std::size_t> depths;
  depths.reserve(corpus.size());
  double sum = 0.0;
  for (const auto& r : corpus.records) {
    depths.push_back(r.depth());
    ++s.histogram[r.depth()];
    sum += static_cast<double>(r.depth());
  }
  s.mean = sum / static_cast<double>(depths.size());
  std::sort(depths.begin(), depths.end());
  const std::size_t n = depths.size();
  s.median = n % 2 ? static_cast<double>(depths[n / 2])
                   : 0.5 * static_cast<double>(depths[n / 2 - 1] + depths[n / 2]);
  return s;
}

std::size_t distinct_binaries(const CrashRecord& record) {
  std::unordered_set<std::string> names;
  for (const auto& f : record.stack)
    if (!f.binary.empty()) names.insert(f.binary);
  return names.size();
}

BinaryStats distinct_binaries_per_stack(const Corpus& corpus) {
  require_nonempty(corpus);
  BinaryStats s;
  double sum = 0.0;
  for (const auto& r : corpus.records) {
    const auto n = distinct_binaries(r);
    ++s.histogram[n];
    sum += static_cast<double>(n);
  }
  s.mean = sum / static_cast<double>(corpus.size());
  return s;
}

double normalized_blame_location(const CrashRecord& record) {
  if (!record.blame_index) throw DataError("record has no blame_index");
  if (record.depth() <= 1) return 0.0;
  return static_cast<double>(*record.blame_index) / static_cast<double>(record.depth() - 1);
}

std::map<std::string, BlameRatio> blame_ratio(const Corpus& corpus) {
  std::unordered_map<std::string, BlameRatio> table;
  for (const auto& r : corpus.records) {
    if (!r.blame_index) continue;
    std::unordered_set<std::string> present;
    for (const auto& f : r.stack) present.insert(f.method_key());
    for (const auto& k : present) ++table[k].appearances;
    ++table[r.stack[*r.blame_index].method_key()].blamed;
  }
  return {table.begin(), table.end()};
}

ClassFrequencies problem_class_frequencies(const Corpus& corpus,
                                           const std::set<std::string>& memory_related) {
  require_nonempty(corpus);
  std::map<std::string, std::size_t> counts;
  std::size_t memory = 0;
  for (const auto& r : corpus.records) {
    ++counts[r.problem_class];
    if (memory_related.count(r.problem_class)) ++memory;
  }
  ClassFrequencies f;
  f.ranked.assign(counts.begin(), counts.end());
  std::stable_sort(f.ranked.begin(), f.ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  f.memory_related_share = static_cast<double>(memory) / static_cast<double>(corpus.size());
  return f;
}

CorpusStats compute_stats(const Corpus& corpus, const std::set<std::string>& memory_related) {
  CorpusStats s;
  s.depth = depth_distribution(corpus);
  s.binaries = distinct_binaries_per_stack(corpus);
  s.classes = problem_class_frequencies(corpus, memory_related);
  s.blame_location_histogram.assign(kBlameLocationBuckets, 0);
  std::size_t top = 0;
  std::size_t bottom = 0;
  for (const auto& r : corpus.records) {
    if (!r.blame_index) continue;
    ++s.labeled_records;
    const double loc = normalized_blame_location(r);
    auto bucket = static_cast<std::size_t>(loc * static_cast<double>(kBlameLocationBuckets));
    bucket = std::min(bucket, kBlameLocationBuckets - 1);
    ++s.blame_location_histogram[bucket];
    if (*r.blame_index == 0) ++top;
    if (loc > 0.5) ++bottom;
  }
  if (s.labeled_records) {
    s.top_frame_blame_share = static_cast<double>(top) / static_cast<double>(s.labeled_records);
    s.bottom_half_blame_share = static_cast<double>(bottom) / static_cast<double>(s.labeled_records);
  }
  s.blame_ratio_table = blame_ratio(corpus);
  return s;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_stats_csv(const CorpusStats& stats, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream o;
    o << "depth,count\n";
    for (const auto& [d, c] : stats.depth.histogram) o << d << ',' << c << '\n';
    write_file_atomic(dir / "depth.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "distinct_binaries,count\n";
    for (const auto& [d, c] : stats.binaries.histogram) o << d << ',' << c << '\n';
    write_file_atomic(dir / "binaries_per_stack.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "problem_class,count\n";
    for (const auto& [name, c] : stats.classes.ranked) o << csv_field(name) << ',' << c << '\n';
    write_file_atomic(dir / "problem_classes.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "bucket_lo,bucket_hi,count\n";
    const double w = 1.0 / static_cast<double>(kBlameLocationBuckets);
    for (std::size_t i = 0; i < stats.blame_location_histogram.size(); ++i)
      o << fmt_double(w * static_cast<double>(i)) << ',' << fmt_double(w * static_cast<double>(i + 1))
        << ',' << stats.blame_location_histogram[i] << '\n';
    write_file_atomic(dir / "blame_location.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "method,blamed_count,appearance_count,ratio\n";
    for (const auto& [m, r] : stats.blame_ratio_table)
      o << csv_field(m) << ',' << r.blamed << ',' << r.appearances << ',' << fmt_double(r.ratio()) << '\n';
    write_file_atomic(dir / "blame_ratio.csv", o.str());
  }
  {
    std::size_t records = 0;
    for (const auto& [d, c] : stats.depth.histogram) records += c;
    std::ostringstream o;
    o << "statistic,value\n";
    o << "records," << records << '\n';
    o << "labeled_records," << stats.labeled_records << '\n';
    o << "depth_mean," << fmt_double(stats.depth.mean) << '\n';
    o << "depth_median," << fmt_double(stats.depth.median) << '\n';
    o << "distinct_binaries_mean," << fmt_double(stats.binaries.mean) << '\n';
    o << "memory_related_share," << fmt_double(stats.classes.memory_related_share) << '\n';
    o << "top_frame_blame_share," << fmt_double(stats.top_frame_blame_share) << '\n';
    o << "bottom_half_blame_share," << fmt_double(stats.bottom_half_blame_share) << '\n';
    write_file_atomic(dir / "summary.csv", o.str());
  }
}

}  // namespace crashloc
