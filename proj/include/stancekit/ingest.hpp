#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stancekit/core.hpp"
#include "stancekit/detail/util.hpp"
#include "stancekit/errors.hpp"

namespace stancekit {

// ---------------------------------------------------------------------------
// Source descriptors
// ---------------------------------------------------------------------------

enum class SourceKind { Semeval2016, Vast, Pstance, CanonicalJsonl };

inline std::string_view to_string(SourceKind k) {
  switch (k) {
    case SourceKind::Semeval2016: return "semeval2016";
    case SourceKind::Vast: return "vast";
    case SourceKind::Pstance: return "pstance";
    case SourceKind::CanonicalJsonl: return "canonical_jsonl";
  }
  return "";
}

inline SourceKind parse_source_kind(std::string_view s) {
  std::string lower = detail::ascii_lower(detail::trim(s));
  if (lower == "semeval2016") return SourceKind::Semeval2016;
  if (lower == "vast") return SourceKind::Vast;
  if (lower == "pstance") return SourceKind::Pstance;
  if (lower == "canonical_jsonl" || lower == "canonical") {
    return SourceKind::CanonicalJsonl;
  }
  throw UsageError(ErrorKind::InvalidConfig,
                   "unknown source kind '" + std::string(s) + "'");
}

struct SourceSpec {
  SourceKind kind = SourceKind::CanonicalJsonl;
  std::filesystem::path path;
  Split split = Split::Test;
};

enum class StratifyBy { None, Target, Gold, TargetAndGold };

inline std::string_view to_string(StratifyBy s) {
  switch (s) {
    case StratifyBy::None: return "none";
    case StratifyBy::Target: return "target";
    case StratifyBy::Gold: return "gold";
    case StratifyBy::TargetAndGold: return "target_and_gold";
  }
  return "";
}

inline StratifyBy parse_stratify_by(std::string_view s) {
  std::string lower = detail::ascii_lower(detail::trim(s));
  if (lower == "none") return StratifyBy::None;
  if (lower == "target") return StratifyBy::Target;
  if (lower == "gold") return StratifyBy::Gold;
  if (lower == "target_and_gold") return StratifyBy::TargetAndGold;
  throw UsageError(ErrorKind::InvalidConfig,
                   "unknown stratify_by '" + std::string(s) + "'");
}

struct SubsetSpec {
  std::size_t n = 1;
  std::uint64_t seed = 0;
  StratifyBy stratify_by = StratifyBy::None;
};

namespace detail {

// xorshift64* with the standard constants (shifts 12/25/27, multiplier
// 0x2545F4914F6CDD1D). Chosen over std::mt19937 so that subsets are
// bit-identical across platforms and standard library versions. A zero seed
// is remapped to the golden-ratio constant since the state must be nonzero.
class Xorshift64Star {
 public:
  explicit Xorshift64Star(std::uint64_t seed)
      : state_(seed ? seed : 0x9E3779B97F4A7C15ULL) {}

  std::uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  // Bounded draw by modulo; the tiny bias is irrelevant here and the
  // arithmetic is platform-independent.
  std::uint64_t next_below(std::uint64_t bound) { return next() % bound; }

 private:
  std::uint64_t state_;
};

// RFC 4180-style reader: quoted fields, "" escapes, embedded separators and
// newlines inside quotes. CRLF line endings are normalized.
class DelimitedReader {
 public:
  DelimitedReader(std::istream& in, char sep) : in_(in), sep_(sep) {}

  // Returns false at EOF. line_no is the 1-based line the row started on.
  bool next_row(std::vector<std::string>& fields, std::size_t& line_no) {
    fields.clear();
    int c = in_.get();
    if (c == EOF) return false;
    line_no = line_ + 1;
    std::string field;
    bool in_quotes = false;
    bool row_done = false;
    while (!row_done) {
      if (c == EOF) {
        if (in_quotes) {
          throw DataError(ErrorKind::MalformedRow,
                          "line " + std::to_string(line_no) +
                              ": unterminated quoted field");
        }
        fields.push_back(std::move(field));
        break;
      }
      char ch = static_cast<char>(c);
      if (ch == '\n') ++line_;
      if (in_quotes) {
        if (ch == '"') {
          if (in_.peek() == '"') {
            field.push_back('"');
            in_.get();
          } else {
            in_quotes = false;
          }
        } else {
          field.push_back(ch);
        }
      } else if (ch == '"' && field.empty()) {
        in_quotes = true;
      } else if (ch == sep_) {
        fields.push_back(std::move(field));
        field.clear();
      } else if (ch == '\n') {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        fields.push_back(std::move(field));
        row_done = true;
        break;
      } else {
        field.push_back(ch);
      }
      c = in_.get();
    }
    return true;
  }

 private:
  std::istream& in_;
  char sep_;
  std::size_t line_ = 0;
};

inline void skip_bom(std::istream& in) {
  if (in.peek() == 0xEF) {
    char bom[3];
    in.read(bom, 3);
    if (in.gcount() != 3 || bom[1] != char(0xBB) || bom[2] != char(0xBF)) {
      in.seekg(0);
    }
  }
}

inline std::size_t find_column(const std::vector<std::string>& header,
                               std::initializer_list<std::string_view> names,
                               const std::string& what) {
  for (std::string_view name : names) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (ascii_lower(trim(header[i])) == name) return i;
    }
  }
  throw DataError(ErrorKind::MalformedRow,
                  "header is missing a " + what + " column");
}

inline std::ifstream open_source(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path) ||
      !std::filesystem::is_regular_file(path)) {
    throw DataError(ErrorKind::FileMissing, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(ErrorKind::IoError, "cannot open " + path.string());
  return in;
}

[[noreturn]] inline void malformed(std::size_t line_no, const std::string& reason) {
  throw DataError(ErrorKind::MalformedRow,
                  "line " + std::to_string(line_no) + ": " + reason);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Canonical JSONL
//
// One instance per line, UTF-8, LF endings, keys in exactly this order:
//   {"id":...,"text":...,"target":...,"gold":...,"dataset":...,"split":...}
// gold is the lowercase label name or null. Writing the same dataset twice
// yields byte-identical files.
// ---------------------------------------------------------------------------

inline std::string canonical_line(const Instance& inst) {
  nlohmann::ordered_json j;
  j["id"] = inst.id;
  j["text"] = inst.text;
  j["target"] = inst.target;
  if (inst.gold) {
    j["gold"] = std::string(to_string(*inst.gold));
  } else {
    j["gold"] = nullptr;
  }
  j["dataset"] = inst.dataset;
  j["split"] = std::string(to_string(inst.split));
  return j.dump();
}

inline Instance parse_canonical_line(const std::string& line,
                                     std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    detail::malformed(line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || j.size() != 6) {
    detail::malformed(line_no, "record must have exactly the canonical keys");
  }
  for (const char* key : {"id", "text", "target", "gold", "dataset", "split"}) {
    if (!j.contains(key)) {
      detail::malformed(line_no, std::string("missing key '") + key + "'");
    }
  }
  Instance inst;
  try {
    inst.id = j.at("id").get<std::string>();
    inst.text = j.at("text").get<std::string>();
    inst.target = j.at("target").get<std::string>();
    if (!j.at("gold").is_null()) {
      inst.gold = parse_label(j.at("gold").get<std::string>());
    }
    inst.dataset = j.at("dataset").get<std::string>();
    inst.split = parse_split(j.at("split").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    detail::malformed(line_no, std::string("bad field type: ") + e.what());
  } catch (const DataError& e) {
    detail::malformed(line_no, e.what());
  }
  return inst;
}

// Writes the canonical JSONL form. An empty dataset produces a zero-byte
// file. load() on the result reproduces the dataset exactly.
inline void write_canonical(const Dataset& d,
                            const std::filesystem::path& path) {
  std::string out;
  for (const Instance& inst : d.instances) {
    out += canonical_line(inst);
    out += '\n';
  }
  detail::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Loaders
// ---------------------------------------------------------------------------

namespace detail {

inline Dataset load_semeval(std::ifstream& in, Split split) {
  skip_bom(in);
  std::vector<Instance> instances;
  std::string line;
  std::size_t line_no = 0;
  std::size_t id_col = 0, target_col = 0, tweet_col = 0, stance_col = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = stancekit::detail::split(line, '\t');
    if (!have_header) {
      id_col = find_column(fields, {"id"}, "ID");
      target_col = find_column(fields, {"target"}, "Target");
      tweet_col = find_column(fields, {"tweet"}, "Tweet");
      stance_col = find_column(fields, {"stance"}, "Stance");
      have_header = true;
      continue;
    }
    std::size_t needed =
        std::max({id_col, target_col, tweet_col, stance_col}) + 1;
    if (fields.size() < needed) {
      malformed(line_no, "expected at least " + std::to_string(needed) +
                             " tab-separated fields, got " +
                             std::to_string(fields.size()));
    }
    Instance inst;
    inst.dataset = "semeval2016";
    inst.split = split;
    inst.id = "semeval2016:" + std::string(to_string(split)) + ":" +
              std::string(trim(fields[id_col]));
    inst.target = std::string(trim(fields[target_col]));
    inst.text = fields[tweet_col];
    try {
      inst.gold = parse_label(fields[stance_col]);
    } catch (const DataError& e) {
      malformed(line_no, e.what());
    }
    instances.push_back(std::move(inst));
  }
  if (!have_header) {
    throw DataError(ErrorKind::MalformedRow, "file has no header row");
  }
  return Dataset::make("semeval2016", LabelScheme::three_class(),
                       std::move(instances));
}

inline Dataset load_vast(std::ifstream& in, Split split) {
  skip_bom(in);
  DelimitedReader reader(in, ',');
  std::vector<std::string> fields;
  std::size_t line_no = 0;
  if (!reader.next_row(fields, line_no)) {
    throw DataError(ErrorKind::MalformedRow, "file has no header row");
  }
  std::size_t text_col = find_column(fields, {"post", "text"}, "post text");
  std::size_t topic_col =
      find_column(fields, {"topic_str", "new_topic", "topic"}, "topic");
  std::size_t label_col = find_column(fields, {"label"}, "label");
  std::vector<Instance> instances;
  std::size_t row_index = 0;
  while (reader.next_row(fields, line_no)) {
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;
    std::size_t needed = std::max({text_col, topic_col, label_col}) + 1;
    if (fields.size() < needed) {
      malformed(line_no, "expected at least " + std::to_string(needed) +
                             " comma-separated fields, got " +
                             std::to_string(fields.size()));
    }
    Instance inst;
    inst.dataset = "vast";
    inst.split = split;
    inst.id = "vast:" + std::string(to_string(split)) + ":" +
              std::to_string(row_index);
    inst.text = fields[text_col];
    inst.target = std::string(trim(fields[topic_col]));
    std::string label = std::string(trim(fields[label_col]));
    if (label == "0") {
      inst.gold = StanceLabel::Against;
    } else if (label == "1") {
      inst.gold = StanceLabel::Favor;
    } else if (label == "2") {
      inst.gold = StanceLabel::Neutral;
    } else {
      malformed(line_no, "label must be 0 (against), 1 (favor) or 2 "
                         "(neutral), got '" + label + "'");
    }
    instances.push_back(std::move(inst));
    ++row_index;
  }
  return Dataset::make("vast", LabelScheme::three_class(),
                       std::move(instances));
}

inline Dataset load_pstance(std::ifstream& in, Split split) {
  skip_bom(in);
  DelimitedReader reader(in, ',');
  std::vector<std::string> fields;
  std::size_t line_no = 0;
  if (!reader.next_row(fields, line_no)) {
    throw DataError(ErrorKind::MalformedRow, "file has no header row");
  }
  std::size_t tweet_col = find_column(fields, {"tweet"}, "Tweet");
  std::size_t target_col = find_column(fields, {"target"}, "Target");
  std::size_t stance_col = find_column(fields, {"stance"}, "Stance");
  std::vector<Instance> instances;
  std::size_t row_index = 0;
  while (reader.next_row(fields, line_no)) {
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;
    std::size_t needed = std::max({tweet_col, target_col, stance_col}) + 1;
    if (fields.size() < needed) {
      malformed(line_no, "expected at least " + std::to_string(needed) +
                             " comma-separated fields, got " +
                             std::to_string(fields.size()));
    }
    Instance inst;
    inst.dataset = "pstance";
    inst.split = split;
    inst.id = "pstance:" + std::string(to_string(split)) + ":" +
              std::to_string(row_index);
    inst.text = fields[tweet_col];
    inst.target = std::string(trim(fields[target_col]));
    StanceLabel gold;
    try {
      gold = parse_label(fields[stance_col]);
    } catch (const DataError& e) {
      malformed(line_no, e.what());
    }
    if (gold == StanceLabel::Neutral) {
      malformed(line_no, "stance '" + fields[stance_col] +
                             "' is not in the two-class scheme");
    }
    inst.gold = gold;
    instances.push_back(std::move(inst));
    ++row_index;
  }
  return Dataset::make("pstance", LabelScheme::two_class(),
                       std::move(instances));
}

// The canonical record set carries no explicit scheme, so it is inferred:
// any neutral gold makes the set three-class; a fully labeled set with only
// polar golds is two-class; anything else defaults to three-class. See
// docs/formats.md.
inline Dataset load_canonical(std::ifstream& in) {
  std::vector<Instance> instances;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    instances.push_back(parse_canonical_line(line, line_no));
  }
  std::string name;
  bool saw_neutral = false;
  bool all_polar_gold = !instances.empty();
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (i == 0) {
      name = instances[i].dataset;
    } else if (instances[i].dataset != name) {
      throw DataError(ErrorKind::MalformedRow,
                      "records name two datasets: '" + name + "' and '" +
                          instances[i].dataset + "'");
    }
    const auto& gold = instances[i].gold;
    if (gold && *gold == StanceLabel::Neutral) saw_neutral = true;
    if (!gold || *gold == StanceLabel::Neutral) all_polar_gold = false;
  }
  LabelScheme scheme = (!saw_neutral && all_polar_gold)
                           ? LabelScheme::two_class()
                           : LabelScheme::three_class();
  return Dataset::make(std::move(name), scheme, std::move(instances));
}

}  // namespace detail

// Parses a source file into a validated Dataset. Rows with unknown labels
// abort the load; silent skips would corrupt every downstream metric.
inline Dataset load(const SourceSpec& spec) {
  std::ifstream in = detail::open_source(spec.path);
  Dataset d;
  switch (spec.kind) {
    case SourceKind::Semeval2016:
      d = detail::load_semeval(in, spec.split);
      break;
    case SourceKind::Vast:
      d = detail::load_vast(in, spec.split);
      break;
    case SourceKind::Pstance:
      d = detail::load_pstance(in, spec.split);
      break;
    case SourceKind::CanonicalJsonl:
      d = detail::load_canonical(in);
      break;
  }
  require_valid(d);
  return d;
}

// ---------------------------------------------------------------------------
// Subsetting
// ---------------------------------------------------------------------------

namespace detail {

inline std::string stratum_key(const Instance& inst, StratifyBy by) {
  switch (by) {
    case StratifyBy::None: return "";
    case StratifyBy::Target: return inst.target;
    case StratifyBy::Gold:
      return inst.gold ? std::string(to_string(*inst.gold)) : "(unlabeled)";
    case StratifyBy::TargetAndGold:
      return inst.target + "\x1f" +
             (inst.gold ? std::string(to_string(*inst.gold)) : "(unlabeled)");
  }
  return "";
}

// Largest-remainder (Hamilton) apportionment of n over strata, computed in
// integer arithmetic. Ties on the remainder break toward the earlier key in
// sorted order.
inline std::map<std::string, std::size_t> apportion(
    const std::map<std::string, std::size_t>& stratum_sizes, std::size_t n,
    std::size_t total) {
  std::map<std::string, std::size_t> alloc;
  std::vector<std::pair<std::uint64_t, std::string>> remainders;
  std::size_t assigned = 0;
  for (const auto& [key, size] : stratum_sizes) {
    std::uint64_t product = static_cast<std::uint64_t>(n) * size;
    alloc[key] = static_cast<std::size_t>(product / total);
    assigned += alloc[key];
    remainders.push_back({product % total, key});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) {
                     if (a.first != b.first) return a.first > b.first;
                     return a.second < b.second;
                   });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) {
    alloc[remainders[i % remainders.size()].second] += 1;
  }
  return alloc;
}

// Draws k distinct elements from indices by partial Fisher-Yates.
inline std::vector<std::size_t> draw(std::vector<std::size_t>& indices,
                                     std::size_t k, Xorshift64Star& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(
                            rng.next_below(indices.size() - i));
    std::swap(indices[i], indices[j]);
  }
  return std::vector<std::size_t>(indices.begin(), indices.begin() + k);
}

}  // namespace detail

// Deterministic sample of s.n instances. Stratified modes preserve stratum
// proportions by largest-remainder rounding. Output instances are sorted by
// id. A pure function of (d, s): the seed changes membership but never the
// sample size or the per-stratum allocation.
inline Dataset subset(const Dataset& d, const SubsetSpec& s) {
  if (s.n > d.size()) {
    throw DataError(ErrorKind::InsufficientInstances,
                    "requested " + std::to_string(s.n) + " instances from a "
                    "dataset of " + std::to_string(d.size()));
  }
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < d.instances.size(); ++i) {
    strata[detail::stratum_key(d.instances[i], s.stratify_by)].push_back(i);
  }
  std::map<std::string, std::size_t> sizes;
  for (const auto& [key, members] : strata) sizes[key] = members.size();
  std::map<std::string, std::size_t> alloc =
      detail::apportion(sizes, s.n, d.size());
  detail::Xorshift64Star rng(s.seed);
  std::vector<Instance> sampled;
  for (auto& [key, members] : strata) {
    std::size_t want = alloc[key];
    if (want > members.size()) {
      throw DataError(ErrorKind::InsufficientInstances,
                      "stratum '" + key + "' has " +
                          std::to_string(members.size()) + " instances, " +
                          std::to_string(want) + " required");
    }
    for (std::size_t idx : detail::draw(members, want, rng)) {
      sampled.push_back(d.instances[idx]);
    }
  }
  std::sort(sampled.begin(), sampled.end(),
            [](const Instance& a, const Instance& b) { return a.id < b.id; });
  Dataset out = Dataset::make(d.name, d.scheme, std::move(sampled));
  return out;
}

}  // namespace stancekit
