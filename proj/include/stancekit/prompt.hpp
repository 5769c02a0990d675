#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "stancekit/core.hpp"
#include "stancekit/detail/util.hpp"
#include "stancekit/errors.hpp"

namespace stancekit {

// Bumped whenever any template below changes; recorded in every run
// manifest so that cached outputs can be traced to the prompt revision.
inline constexpr std::string_view kPromptTemplateVersion = "stance-prompts/v1";

// The sentence appended to a direct question when inducing an explanation
// for exemplar construction. Fixed wording; see docs/prompts.md.
inline constexpr std::string_view kThoughtDirective =
    "Please state the stance and explain the reason for your prediction.";

enum class Role { System, User, Assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "";
}

struct Message {
  Role role = Role::User;
  std::string content;

  bool operator==(const Message&) const = default;
};

// An ordered list of role-tagged messages. Every builder in this module is a
// pure function: equal inputs produce byte-equal specs.
struct PromptSpec {
  std::vector<Message> messages;

  const std::string& final_user_content() const {
    return messages.back().content;
  }

  bool operator==(const PromptSpec&) const = default;
};

struct StsqaConfig {
  int k = 1;
  std::vector<std::string> qap_ids;  // empty = select from the library
  std::optional<QapStyle> style;     // restricts library selection when set
};

// The direct question asked about one instance. Text and target are
// substituted verbatim; no escaping, no trimming.
inline std::string dqa_question(const Instance& inst) {
  std::string q;
  q.reserve(inst.text.size() + inst.target.size() + 96);
  q += "What is the attitude of the sentence: \"";
  q += inst.text;
  q += "\" to the target \"";
  q += inst.target;
  q += "\" select from \"favor, against or neutral\".";
  return q;
}

inline PromptSpec build_dqa(const Instance& inst) {
  return PromptSpec{{{Role::User, dqa_question(inst)}}};
}

// Stage-1 prompt: the direct question plus a directive to explain the
// reasoning. Only labeled instances qualify since the reply becomes an
// exemplar whose answer is the gold label.
inline PromptSpec build_thought_inducing(const Instance& inst) {
  if (!inst.gold) {
    throw DataError(ErrorKind::MissingGold,
                    "instance '" + inst.id + "' has no gold label");
  }
  std::string content = dqa_question(inst);
  content += ' ';
  content += kThoughtDirective;
  return PromptSpec{{{Role::User, std::move(content)}}};
}

inline Qap assemble_qap(const Instance& inst, std::string explanation,
                        QapStyle style) {
  if (!inst.gold) {
    throw DataError(ErrorKind::MissingGold,
                    "instance '" + inst.id + "' has no gold label");
  }
  if (detail::trim(explanation).empty()) {
    throw DataError(ErrorKind::EmptyExplanation,
                    "explanation for instance '" + inst.id + "' is empty");
  }
  Qap qap;
  qap.id = "qap:" + inst.id;
  qap.question = dqa_question(inst);
  qap.answer_label = *inst.gold;
  qap.explanation = std::move(explanation);
  qap.style = style;
  qap.target = inst.target;
  return qap;
}

inline constexpr std::size_t kMaxQaps = 8;

// Stage-2 prompt: one user message holding each exemplar as a
// Question/Answer block, then the direct question for the instance under
// prediction. The final question is byte-identical to build_dqa's content.
inline PromptSpec build_stsqa(const Instance& inst,
                              std::span<const Qap> qaps) {
  if (qaps.empty()) {
    throw UsageError(ErrorKind::EmptyQapList, "at least one QAP is required");
  }
  if (qaps.size() > kMaxQaps) {
    throw UsageError(ErrorKind::TooManyQaps,
                     std::to_string(qaps.size()) + " QAPs given, at most " +
                         std::to_string(kMaxQaps) + " supported");
  }
  std::string content;
  for (const Qap& qap : qaps) {
    content += "Question: ";
    content += qap.question;
    content += "\nAnswer: ";
    content += to_string(qap.answer_label);
    content += ". ";
    content += qap.explanation;
    content += "\n\n";
  }
  content += "Question: ";
  content += dqa_question(inst);
  content += "\nAnswer:";
  return PromptSpec{{{Role::User, std::move(content)}}};
}

// ---------------------------------------------------------------------------
// QAP library
//
// JSONL, one exemplar per line:
//   {"id":...,"question":...,"answer_label":...,"explanation":...,
//    "style":"word_level"|"semantic_level","target":...}
// ---------------------------------------------------------------------------

inline std::vector<Qap> load_qap_library(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw DataError(ErrorKind::FileMissing, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<Qap> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(ErrorKind::MalformedRow,
                      "line " + std::to_string(line_no) + ": invalid JSON: " +
                          e.what());
    }
    Qap qap;
    try {
      qap.id = j.at("id").get<std::string>();
      qap.question = j.at("question").get<std::string>();
      qap.answer_label = parse_label(j.at("answer_label").get<std::string>());
      qap.explanation = j.at("explanation").get<std::string>();
      qap.style = parse_qap_style(j.at("style").get<std::string>());
      qap.target = j.at("target").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(ErrorKind::MalformedRow,
                      "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(ErrorKind::MalformedRow,
                      "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (detail::trim(qap.question).empty() ||
        detail::trim(qap.explanation).empty()) {
      throw DataError(ErrorKind::MalformedRow,
                      "line " + std::to_string(line_no) +
                          ": question and explanation must be non-empty");
    }
    if (!seen.insert(qap.id).second) {
      throw DataError(ErrorKind::MalformedRow,
                      "line " + std::to_string(line_no) +
                          ": duplicate QAP id '" + qap.id + "'");
    }
    out.push_back(std::move(qap));
  }
  return out;
}

}  // namespace stancekit
