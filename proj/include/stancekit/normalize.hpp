#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stancekit/core.hpp"
#include "stancekit/detail/util.hpp"

namespace stancekit {

enum class NormalizeResult { Label, Ambiguous, Unparseable, OutOfScheme };
enum class NormalizeTier { FirstSentence, FullText };

inline std::string_view to_string(NormalizeResult r) {
  switch (r) {
    case NormalizeResult::Label: return "label";
    case NormalizeResult::Ambiguous: return "ambiguous";
    case NormalizeResult::Unparseable: return "unparseable";
    case NormalizeResult::OutOfScheme: return "out_of_scheme";
  }
  return "unparseable";
}

inline std::string_view to_string(NormalizeTier t) {
  return t == NormalizeTier::FirstSentence ? "first_sentence" : "full_text";
}

struct ByteSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const ByteSpan&) const = default;
};

struct NormalizerOutcome {
  NormalizeResult result = NormalizeResult::Unparseable;
  std::optional<StanceLabel> label;      // set iff result == Label
  std::optional<ByteSpan> matched_span;  // set iff result == Label
  NormalizeTier tier = NormalizeTier::FullText;
};

namespace detail {

struct WordToken {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string_view text;
};

inline std::vector<WordToken> tokenize_offsets(std::string_view text) {
  std::vector<WordToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_char(text[i])) {
      ++i;
      continue;
    }
    std::size_t begin = i;
    while (i < text.size() && is_word_char(text[i])) ++i;
    out.push_back({begin, i, text.substr(begin, i - begin)});
  }
  return out;
}

// The synonym lists are frozen; growing them must come with matching
// regression corpus entries, otherwise every metric shifts silently.
inline std::optional<StanceLabel> synonym_class(std::string_view token) {
  if (token == "favor" || token == "favour" || token == "favorable" ||
      token == "support" || token == "supports" || token == "supportive" ||
      token == "positive") {
    return StanceLabel::Favor;
  }
  if (token == "against" || token == "oppose" || token == "opposes" ||
      token == "opposed" || token == "negative") {
    return StanceLabel::Against;
  }
  if (token == "neutral" || token == "none" || token == "neither") {
    return StanceLabel::Neutral;
  }
  return std::nullopt;
}

// "not" survives tokenization as-is; "n't" splits into a lone "t" token whose
// two preceding bytes are n and the apostrophe.
inline bool is_negation_token(std::string_view lower, const WordToken& tok) {
  if (tok.text == "not") return true;
  if (tok.text == "t" && tok.begin >= 2 && lower[tok.begin - 1] == '\'' &&
      lower[tok.begin - 2] == 'n') {
    return true;
  }
  return false;
}

inline StanceLabel apply_negation(const std::vector<WordToken>& tokens,
                                  std::size_t index, StanceLabel label,
                                  std::string_view lower) {
  if (label == StanceLabel::Neutral) return label;
  std::size_t lookback = std::min<std::size_t>(index, 2);
  for (std::size_t back = 1; back <= lookback; ++back) {
    if (is_negation_token(lower, tokens[index - back])) {
      return label == StanceLabel::Favor ? StanceLabel::Against
                                         : StanceLabel::Favor;
    }
  }
  return label;
}

}  // namespace detail

// Maps a free-text reply to a stance label under a fixed rule set. Total:
// every input yields an outcome, never an exception. Scans the first
// sentence before falling back to the whole text because replies tend to
// state the verdict up front and hedge afterwards.
inline NormalizerOutcome normalize(const std::string& raw,
                                   const LabelScheme& scheme) {
  std::string lower = detail::ascii_lower(raw);
  std::vector<detail::WordToken> tokens = detail::tokenize_offsets(lower);

  std::size_t first_sentence_end = lower.size();
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (lower[i] == '.' || lower[i] == '!' || lower[i] == '?') {
      first_sentence_end = i + 1;
      break;
    }
  }

  auto scan = [&](std::size_t byte_limit)
      -> std::optional<std::pair<std::size_t, StanceLabel>> {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].begin >= byte_limit) break;
      if (std::optional<StanceLabel> cls =
              detail::synonym_class(tokens[i].text)) {
        return std::make_pair(i, detail::apply_negation(tokens, i, *cls, lower));
      }
    }
    return std::nullopt;
  };

  NormalizeTier tier = NormalizeTier::FirstSentence;
  std::optional<std::pair<std::size_t, StanceLabel>> hit =
      scan(first_sentence_end);
  if (!hit) {
    tier = NormalizeTier::FullText;
    hit = scan(lower.size());
  }

  NormalizerOutcome out;
  out.tier = tier;
  if (!hit) {
    out.result = NormalizeResult::Unparseable;
    return out;
  }
  const detail::WordToken& tok = tokens[hit->first];
  if (!scheme.contains(hit->second)) {
    out.result = NormalizeResult::OutOfScheme;
    return out;
  }
  out.result = NormalizeResult::Label;
  out.label = hit->second;
  out.matched_span = ByteSpan{tok.begin, tok.end};
  return out;
}

}  // namespace stancekit
