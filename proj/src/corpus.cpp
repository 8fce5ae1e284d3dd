#include "crashloc/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace crashloc {

namespace {

std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  }
  return true;
}

// Strips a trailing "+0x<hex>" from `s`; returns the offset when present.
std::optional<std::uint64_t> strip_offset(std::string_view& s) {
  const auto pos = s.rfind("+0x");
  if (pos == std::string_view::npos) return std::nullopt;
  const auto digits = s.substr(pos + 3);
  if (digits.empty() || digits.size() > 16) return std::nullopt;
  std::uint64_t value = 0;
  for (char c : digits) {
    int d;
    if (c >= '0' && c <= '9') {
      d = c - '0';
    } else if (c >= 'a' && c <= 'f') {
      d = c - 'a' + 10;
    } else if (c >= 'A' && c <= 'F') {
      d = c - 'A' + 10;
    } else {
      return std::nullopt;
    }
    value = (value << 4) | static_cast<std::uint64_t>(d);
  }
  s = s.substr(0, pos);
  return value;
}

// Position of the last "::" outside <>, [] and () nesting.
std::size_t last_top_level_scope(std::string_view s) {
  std::size_t found = std::string_view::npos;
  int depth = 0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    const char c = s[i];
    if (c == '<' || c == '[' || c == '(') {
      ++depth;
    } else if ((c == '>' || c == ']' || c == ')') && depth > 0) {
      --depth;
    } else if (depth == 0 && c == ':' && s[i + 1] == ':') {
      found = i;
      ++i;
    }
  }
  return found;
}

std::string frame_text(const Frame& f) { return f.raw.empty() ? format_frame(f) : f.raw; }

void mix_string(std::uint64_t& h, std::string_view s) {
  h = fnv1a_u64(s.size(), h);
  h = fnv1a(s, h);
}

}  // namespace

std::string Frame::symbol() const {
  if (name_space.empty()) return method;
  return name_space + "::" + method;
}

std::string Frame::method_key() const { return binary + "!" + symbol(); }

Frame parse_frame(std::string_view text) {
  Frame f;
  const auto body = trim(text);
  f.raw = std::string(body);

  const auto bang = body.find('!');
  if (bang == std::string_view::npos) {
    // "binary+0xOFF" without a symbol is still a located frame.
    auto rest = body;
    auto off = strip_offset(rest);
    if (off && !rest.empty() && rest.find_first_of(" \t:") == std::string_view::npos) {
      f.binary = std::string(rest);
      f.offset = off;
      f.unknown_binary = iequals(f.binary, "unknown");
    } else {
      f.unknown_binary = true;
    }
    f.unknown_method = true;
    return f;
  }

  f.has_symbol = true;
  f.binary = std::string(body.substr(0, bang));
  auto symbol = body.substr(bang + 1);
  f.offset = strip_offset(symbol);
  const auto scope = last_top_level_scope(symbol);
  if (scope == std::string_view::npos) {
    f.method = std::string(symbol);
  } else {
    f.name_space = std::string(symbol.substr(0, scope));
    f.method = std::string(symbol.substr(scope + 2));
  }
  f.unknown_binary = f.binary.empty() || iequals(f.binary, "unknown");
  f.unknown_method = f.method.empty() || iequals(f.method, "unknown");
  return f;
}

std::string format_frame(const Frame& frame) {
  const bool symbol = frame.has_symbol || !frame.name_space.empty() || !frame.method.empty();
  if (frame.binary.empty() && !symbol && !frame.offset) return frame.raw;
  std::string out = frame.binary;
  if (symbol) {
    out += '!';
    out += frame.symbol();
  }
  if (frame.offset) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "+0x%llx", static_cast<unsigned long long>(*frame.offset));
    out += buf;
  }
  return out;
}

void validate_record(const CrashRecord& record) {
  if (record.stack.empty()) throw DataError("stack is empty");
  if (record.stack.size() > kMaxStackDepth)
    throw DataError("stack depth " + std::to_string(record.stack.size()) + " exceeds " +
                    std::to_string(kMaxStackDepth));
  if (record.blame_index && *record.blame_index >= record.stack.size())
    throw DataError("blame_index " + std::to_string(*record.blame_index) +
                    " out of range for stack depth " + std::to_string(record.stack.size()));
}

std::uint64_t record_hash(const CrashRecord& record) {
  std::uint64_t h = kFnvOffset;
  h = fnv1a_u64(record.stack.size(), h);
  for (const auto& f : record.stack) mix_string(h, frame_text(f));
  h = fnv1a_u64(record.blame_index ? 1 : 0, h);
  h = fnv1a_u64(record.blame_index.value_or(0), h);
  mix_string(h, record.problem_class);
  mix_string(h, record.app);
  return h;
}

Corpus dedup(const Corpus& corpus) {
  Corpus out;
  out.source = corpus.source;
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(corpus.records.size());
  for (const auto& r : corpus.records) {
    if (seen.insert(record_hash(r)).second) out.records.push_back(r);
  }
  return out;
}

std::pair<Corpus, Corpus> temporal_split(const Corpus& corpus, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must lie in (0, 1)");
  const std::size_t n = corpus.records.size();
  if (n < 2) throw DataError("temporal_split needs at least 2 records");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> hashes(n);
  for (std::size_t i = 0; i < n; ++i) hashes[i] = record_hash(corpus.records[i]);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ta = corpus.records[a].timestamp;
    const auto tb = corpus.records[b].timestamp;
    if (ta != tb) return ta < tb;
    return hashes[a] < hashes[b];
  });

  auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  cut = std::clamp<std::size_t>(cut, 1, n - 1);

  std::pair<Corpus, Corpus> out;
  out.first.source = corpus.source + "#train";
  out.second.source = corpus.source + "#test";
  out.first.records.reserve(cut);
  out.second.records.reserve(n - cut);
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < cut ? out.first.records : out.second.records;
    dst.push_back(corpus.records[order[i]]);
  }
  return out;
}

std::uint64_t corpus_digest(const Corpus& corpus) {
  std::uint64_t h = fnv1a_u64(corpus.records.size());
  for (const auto& r : corpus.records) {
    h = fnv1a_u64(record_hash(r), h);
    h = fnv1a_u64(static_cast<std::uint64_t>(r.timestamp), h);
  }
  return h;
}

std::string record_to_line(const CrashRecord& record) {
  using nlohmann::json;
  std::string out = "{\"stack\":[";
  for (std::size_t i = 0; i < record.stack.size(); ++i) {
    if (i) out += ',';
    out += json(frame_text(record.stack[i])).dump();
  }
  out += ']';
  if (record.blame_index) out += ",\"blame_index\":" + std::to_string(*record.blame_index);
  out += ",\"problem_class\":" + json(record.problem_class).dump();
  out += ",\"app\":" + json(record.app).dump();
  out += ",\"ts\":" + std::to_string(record.timestamp);
  out += '}';
  return out;
}

CrashRecord record_from_line(std::string_view line, std::size_t line_no) {
  using nlohmann::json;
  const auto where = "line " + std::to_string(line_no) + ": ";
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(where + "malformed record: " + e.what());
  }
  if (!j.is_object()) throw DataError(where + "record is not a map");

  for (const auto& [key, _] : j.items()) {
    if (key != "stack" && key != "blame_index" && key != "problem_class" && key != "app" &&
        key != "ts")
      throw DataError(where + "unknown field '" + key + "'");
  }
  auto require = [&](const char* key) -> const json& {
    auto it = j.find(key);
    if (it == j.end()) throw DataError(where + "missing required field '" + key + "'");
    return *it;
  };

  CrashRecord r;
  const auto& stack = require("stack");
  if (!stack.is_array()) throw DataError(where + "field 'stack' must be an array");
  for (const auto& f : stack) {
    if (!f.is_string()) throw DataError(where + "field 'stack' must hold strings");
    const auto& text = f.get_ref<const std::string&>();
    if (trim(text).empty()) throw DataError(where + "empty frame in 'stack'");
    r.stack.push_back(parse_frame(text));
  }
  if (auto it = j.find("blame_index"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer() || it->get<long long>() < 0)
      throw DataError(where + "field 'blame_index' must be a non-negative integer");
    r.blame_index = it->get<std::size_t>();
  }
  const auto& pc = require("problem_class");
  if (!pc.is_string()) throw DataError(where + "field 'problem_class' must be a string");
  r.problem_class = pc.get<std::string>();
  const auto& app = require("app");
  if (!app.is_string()) throw DataError(where + "field 'app' must be a string");
  r.app = app.get<std::string>();
  const auto& ts = require("ts");
  if (!ts.is_number_integer()) throw DataError(where + "field 'ts' must be an integer");
  r.timestamp = ts.get<std::int64_t>();

  try {
    validate_record(r);
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  }
  return r;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  Corpus corpus;
  corpus.source = path.string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      corpus.records.push_back(record_from_line(line, line_no));
    } catch (const DataError& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : corpus.records) {
    out += record_to_line(r);
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw DataError("failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace crashloc
