#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "stancekit/detail/util.hpp"
#include "stancekit/errors.hpp"

namespace stancekit {

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

enum class StanceLabel { Favor, Against, Neutral };

inline constexpr std::array<StanceLabel, 3> kAllLabels = {
    StanceLabel::Favor, StanceLabel::Against, StanceLabel::Neutral};

inline constexpr int label_index(StanceLabel l) {
  return static_cast<int>(l);
}

inline std::string_view to_string(StanceLabel l) {
  switch (l) {
    case StanceLabel::Favor: return "favor";
    case StanceLabel::Against: return "against";
    case StanceLabel::Neutral: return "neutral";
  }
  return "";
}

// Case-insensitive match on the canonical names. "none" is accepted as an
// alias for neutral (common in gold files for the unexpressed class).
inline StanceLabel parse_label(std::string_view s) {
  std::string lower = detail::ascii_lower(detail::trim(s));
  if (lower == "favor") return StanceLabel::Favor;
  if (lower == "against") return StanceLabel::Against;
  if (lower == "neutral" || lower == "none") return StanceLabel::Neutral;
  throw DataError(ErrorKind::UnknownLabel, "'" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Label scheme: either the full three-way space or the two polar classes.
// Class order is fixed: favor, against, neutral.
// ---------------------------------------------------------------------------

class LabelScheme {
 public:
  static LabelScheme two_class() { return LabelScheme(2); }
  static LabelScheme three_class() { return LabelScheme(3); }

  static LabelScheme parse(std::string_view s) {
    std::string lower = detail::ascii_lower(detail::trim(s));
    if (lower == "two") return two_class();
    if (lower == "three") return three_class();
    throw UsageError(ErrorKind::InvalidConfig,
                     "label scheme must be 'two' or 'three', got '" +
                         std::string(s) + "'");
  }

  std::string_view name() const { return size_ == 2 ? "two" : "three"; }

  const std::vector<StanceLabel>& classes() const {
    static const std::vector<StanceLabel> two = {StanceLabel::Favor,
                                                 StanceLabel::Against};
    static const std::vector<StanceLabel> three = {
        StanceLabel::Favor, StanceLabel::Against, StanceLabel::Neutral};
    return size_ == 2 ? two : three;
  }

  bool contains(StanceLabel l) const {
    return size_ == 3 || l != StanceLabel::Neutral;
  }

  std::size_t size() const { return size_; }

  bool operator==(const LabelScheme& other) const = default;

 private:
  explicit LabelScheme(std::size_t n) : size_(n) {}
  std::size_t size_ = 3;
};

// ---------------------------------------------------------------------------
// Instances and datasets
// ---------------------------------------------------------------------------

enum class Split { Train, Dev, Test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "";
}

inline Split parse_split(std::string_view s) {
  std::string lower = detail::ascii_lower(detail::trim(s));
  if (lower == "train") return Split::Train;
  if (lower == "dev") return Split::Dev;
  if (lower == "test") return Split::Test;
  throw DataError(ErrorKind::MalformedRow,
                  "split must be train/dev/test, got '" + std::string(s) + "'");
}

struct Instance {
  std::string id;
  std::string text;
  std::string target;
  std::optional<StanceLabel> gold;
  std::string dataset;
  Split split = Split::Test;

  bool operator==(const Instance&) const = default;
};

enum class QapStyle { WordLevel, SemanticLevel };

inline std::string_view to_string(QapStyle s) {
  return s == QapStyle::WordLevel ? "word_level" : "semantic_level";
}

inline QapStyle parse_qap_style(std::string_view s) {
  std::string lower = detail::ascii_lower(detail::trim(s));
  if (lower == "word_level") return QapStyle::WordLevel;
  if (lower == "semantic_level") return QapStyle::SemanticLevel;
  throw DataError(ErrorKind::MalformedRow,
                  "style must be word_level or semantic_level, got '" +
                      std::string(s) + "'");
}

// A worked exemplar: the question asked about a labeled instance, its gold
// stance, and an explanation of the reasoning.
struct Qap {
  std::string id;
  std::string question;
  StanceLabel answer_label = StanceLabel::Neutral;
  std::string explanation;
  QapStyle style = QapStyle::SemanticLevel;
  std::string target;

  bool operator==(const Qap&) const = default;
};

struct Prediction {
  std::string instance_id;
  std::optional<StanceLabel> label;  // absent = abstain / unparseable
  std::string raw_output;
  std::string prompt_digest;  // 64 lowercase hex chars
  std::string backend_id;
  std::uint64_t latency_ms = 0;

  bool operator==(const Prediction&) const = default;
};

struct Dataset {
  std::string name;
  LabelScheme scheme = LabelScheme::three_class();
  std::vector<std::string> targets;
  std::vector<Instance> instances;

  // Builds a dataset with targets normalized to the sorted distinct targets
  // of the given instances.
  static Dataset make(std::string name, LabelScheme scheme,
                      std::vector<Instance> instances) {
    Dataset d;
    d.name = std::move(name);
    d.scheme = scheme;
    d.instances = std::move(instances);
    for (const Instance& inst : d.instances) d.targets.push_back(inst.target);
    std::sort(d.targets.begin(), d.targets.end());
    d.targets.erase(std::unique(d.targets.begin(), d.targets.end()),
                    d.targets.end());
    return d;
  }

  std::size_t size() const { return instances.size(); }

  bool operator==(const Dataset&) const = default;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct Violation {
  std::string instance_id;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

// Returns the empty list iff every dataset and instance invariant holds.
// Violations are data, not failures: callers decide whether to abort.
inline std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  std::unordered_set<std::string_view> seen_ids;
  std::unordered_set<std::string_view> target_set(d.targets.begin(),
                                                  d.targets.end());
  for (const Instance& inst : d.instances) {
    if (!seen_ids.insert(inst.id).second) {
      out.push_back({inst.id, "duplicate instance id"});
    }
    if (detail::trim(inst.text).empty()) {
      out.push_back({inst.id, "text is empty after trimming"});
    }
    if (detail::trim(inst.target).empty()) {
      out.push_back({inst.id, "target is empty after trimming"});
    } else if (!target_set.count(inst.target)) {
      out.push_back({inst.id, "target '" + inst.target +
                                  "' not in dataset target list"});
    }
    if (inst.gold && !d.scheme.contains(*inst.gold)) {
      out.push_back({inst.id, "gold label '" +
                                  std::string(to_string(*inst.gold)) +
                                  "' not in " + std::string(d.scheme.name()) +
                                  "-class scheme"});
    }
    if (inst.dataset != d.name) {
      out.push_back({inst.id, "instance dataset '" + inst.dataset +
                                  "' does not match dataset name '" + d.name +
                                  "'"});
    }
  }
  return out;
}

// Validates and throws on the first problem; loaders call this so that no
// malformed dataset ever reaches downstream modules.
inline void require_valid(const Dataset& d) {
  std::vector<Violation> v = validate_dataset(d);
  if (!v.empty()) {
    throw DataError(ErrorKind::ValidationFailed,
                    "dataset '" + d.name + "': instance '" +
                        v.front().instance_id + "': " + v.front().detail +
                        (v.size() > 1
                             ? " (+" + std::to_string(v.size() - 1) + " more)"
                             : ""));
  }
}

}  // namespace stancekit
