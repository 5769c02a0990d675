#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stancekit/core.hpp"
#include "stancekit/detail/util.hpp"
#include "stancekit/errors.hpp"

namespace stancekit {

// ---------------------------------------------------------------------------
// Confusion counting
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
  // counts[gold][pred]; abstentions are tracked per gold class and never
  // enter counts, so they are false negatives for the gold class and false
  // positives for nothing.
  std::array<std::array<std::uint64_t, 3>, 3> counts{};
  std::array<std::uint64_t, 3> abstain{};

  void add(StanceLabel gold, std::optional<StanceLabel> pred) {
    if (pred) {
      ++counts[label_index(gold)][label_index(*pred)];
    } else {
      ++abstain[label_index(gold)];
    }
  }

  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (const auto& row : counts) {
      for (std::uint64_t c : row) sum += c;
    }
    for (std::uint64_t a : abstain) sum += a;
    return sum;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(
    const std::vector<StanceLabel>& golds,
    const std::vector<std::optional<StanceLabel>>& preds) {
  if (golds.size() != preds.size()) {
    throw UsageError(ErrorKind::LengthMismatch,
                     "golds has " + std::to_string(golds.size()) +
                         " entries, preds has " + std::to_string(preds.size()));
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < golds.size(); ++i) cm.add(golds[i], preds[i]);
  return cm;
}

// ---------------------------------------------------------------------------
// Per-class precision / recall / F1
// ---------------------------------------------------------------------------

struct ClassPRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool operator==(const ClassPRF&) const = default;
};

namespace detail {
inline double safe_div(double num, double den) {
  return den > 0.0 ? num / den : 0.0;
}
}  // namespace detail

inline ClassPRF prf(const ConfusionMatrix& cm, StanceLabel c) {
  std::size_t ci = label_index(c);
  double tp = static_cast<double>(cm.counts[ci][ci]);
  double fp = 0.0;
  double fn = 0.0;
  for (std::size_t g = 0; g < 3; ++g) {
    if (g != ci) fp += static_cast<double>(cm.counts[g][ci]);
  }
  for (std::size_t p = 0; p < 3; ++p) {
    if (p != ci) fn += static_cast<double>(cm.counts[ci][p]);
  }
  ClassPRF out;
  out.precision = detail::safe_div(tp, tp + fp);
  out.recall =
      detail::safe_div(tp, tp + fn + static_cast<double>(cm.abstain[ci]));
  double pr = out.precision + out.recall;
  out.f1 = pr > 0.0 ? 2.0 * out.precision * out.recall / pr : 0.0;
  return out;
}

// SemEval-2016 Task 6 official metric: neutral never enters.
inline double f_avg(const ConfusionMatrix& cm) {
  return (prf(cm, StanceLabel::Favor).f1 + prf(cm, StanceLabel::Against).f1) /
         2.0;
}

inline double f_macro(const ConfusionMatrix& cm, const LabelScheme& scheme) {
  double sum = 0.0;
  for (StanceLabel c : scheme.classes()) sum += prf(cm, c).f1;
  return sum / static_cast<double>(scheme.size());
}

// ---------------------------------------------------------------------------
// Stance-bias skew
// ---------------------------------------------------------------------------

struct DominantShift {
  StanceLabel from = StanceLabel::Favor;
  StanceLabel to = StanceLabel::Favor;
  double delta = 0.0;  // cell count / scored instances
  bool operator==(const DominantShift&) const = default;
};

struct BiasScore {
  std::array<double, 3> gold_marginal{};  // over all scored instances
  std::array<double, 3> pred_marginal{};  // abstentions excluded, renormalized
  double tv_distance = 0.0;
  std::optional<DominantShift> dominant_shift;
  bool operator==(const BiasScore&) const = default;
};

inline BiasScore bias_skew(
    const std::vector<StanceLabel>& golds,
    const std::vector<std::optional<StanceLabel>>& preds) {
  if (golds.size() != preds.size()) {
    throw UsageError(ErrorKind::LengthMismatch,
                     "golds has " + std::to_string(golds.size()) +
                         " entries, preds has " + std::to_string(preds.size()));
  }
  std::uint64_t answered = 0;
  for (const auto& p : preds) {
    if (p) ++answered;
  }
  if (answered == 0) {
    throw DataError(ErrorKind::AllAbstained,
                    "every prediction abstained, bias is undefined");
  }

  BiasScore out;
  ConfusionMatrix cm = confusion(golds, preds);
  double n = static_cast<double>(golds.size());
  for (std::size_t i = 0; i < golds.size(); ++i) {
    out.gold_marginal[label_index(golds[i])] += 1.0 / n;
    if (preds[i]) {
      out.pred_marginal[label_index(*preds[i])] +=
          1.0 / static_cast<double>(answered);
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    out.tv_distance +=
        std::abs(out.pred_marginal[i] - out.gold_marginal[i]) / 2.0;
  }

  std::uint64_t best = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    for (std::size_t p = 0; p < 3; ++p) {
      if (g == p || cm.counts[g][p] <= best) continue;  // ties keep first
      best = cm.counts[g][p];
      out.dominant_shift = DominantShift{kAllLabels[g], kAllLabels[p],
                                         static_cast<double>(best) / n};
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report aggregation
// ---------------------------------------------------------------------------

struct TargetMetrics {
  std::uint64_t n = 0;
  double f_avg = 0.0;
  double f_m = 0.0;
  std::array<ClassPRF, 3> per_class{};
  ConfusionMatrix confusion;
  std::optional<BiasScore> bias;  // absent when nothing was answered
};

inline TargetMetrics target_metrics(
    const std::vector<StanceLabel>& golds,
    const std::vector<std::optional<StanceLabel>>& preds,
    const LabelScheme& scheme) {
  TargetMetrics tm;
  tm.confusion = confusion(golds, preds);
  tm.n = tm.confusion.total();
  for (std::size_t i = 0; i < 3; ++i) {
    tm.per_class[i] = prf(tm.confusion, kAllLabels[i]);
  }
  tm.f_avg = f_avg(tm.confusion);
  tm.f_m = f_macro(tm.confusion, scheme);
  bool any_answered = false;
  for (const auto& p : preds) {
    if (p) {
      any_answered = true;
      break;
    }
  }
  if (any_answered) tm.bias = bias_skew(golds, preds);
  return tm;
}

struct EvalReport {
  std::string dataset;
  LabelScheme scheme = LabelScheme::three_class();
  std::string manifest;  // relative reference, e.g. "manifest.json"
  TargetMetrics overall;
  std::map<std::string, TargetMetrics> per_target;
};

// Instances without a gold label are predicted but never scored.
inline EvalReport build_report(const std::string& dataset,
                               const LabelScheme& scheme,
                               const std::string& manifest_ref,
                               const std::vector<Instance>& instances,
                               const std::vector<Prediction>& preds) {
  if (instances.size() != preds.size()) {
    throw UsageError(ErrorKind::LengthMismatch,
                     "instances has " + std::to_string(instances.size()) +
                         " entries, predictions has " +
                         std::to_string(preds.size()));
  }
  struct Pairs {
    std::vector<StanceLabel> golds;
    std::vector<std::optional<StanceLabel>> preds;
  };
  Pairs overall;
  std::map<std::string, Pairs> by_target;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!instances[i].gold) continue;
    overall.golds.push_back(*instances[i].gold);
    overall.preds.push_back(preds[i].label);
    Pairs& t = by_target[instances[i].target];
    t.golds.push_back(*instances[i].gold);
    t.preds.push_back(preds[i].label);
  }
  EvalReport report;
  report.dataset = dataset;
  report.scheme = scheme;
  report.manifest = manifest_ref;
  report.overall = target_metrics(overall.golds, overall.preds, scheme);
  for (const auto& [target, pairs] : by_target) {
    report.per_target.emplace(target,
                              target_metrics(pairs.golds, pairs.preds, scheme));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json prf_to_json(const ClassPRF& p) {
  nlohmann::ordered_json j;
  j["precision"] = p.precision;
  j["recall"] = p.recall;
  j["f1"] = p.f1;
  return j;
}

inline nlohmann::ordered_json target_metrics_to_json(const TargetMetrics& tm,
                                                     const LabelScheme& scheme) {
  nlohmann::ordered_json j;
  j["n"] = tm.n;
  j["f_avg"] = tm.f_avg;
  j["f_m"] = tm.f_m;
  nlohmann::ordered_json per_class;
  for (StanceLabel c : scheme.classes()) {
    per_class[std::string(to_string(c))] =
        prf_to_json(tm.per_class[label_index(c)]);
  }
  j["per_class"] = std::move(per_class);
  nlohmann::ordered_json counts;
  for (StanceLabel g : scheme.classes()) {
    nlohmann::ordered_json row;
    for (StanceLabel p : scheme.classes()) {
      row[std::string(to_string(p))] =
          tm.confusion.counts[label_index(g)][label_index(p)];
    }
    counts[std::string(to_string(g))] = std::move(row);
  }
  nlohmann::ordered_json abstain;
  for (StanceLabel g : scheme.classes()) {
    abstain[std::string(to_string(g))] = tm.confusion.abstain[label_index(g)];
  }
  j["confusion"] = {{"counts", std::move(counts)},
                    {"abstain", std::move(abstain)}};
  if (tm.bias) {
    nlohmann::ordered_json b;
    nlohmann::ordered_json gm;
    nlohmann::ordered_json pm;
    for (StanceLabel c : scheme.classes()) {
      gm[std::string(to_string(c))] = tm.bias->gold_marginal[label_index(c)];
      pm[std::string(to_string(c))] = tm.bias->pred_marginal[label_index(c)];
    }
    b["gold_marginal"] = std::move(gm);
    b["pred_marginal"] = std::move(pm);
    b["tv_distance"] = tm.bias->tv_distance;
    if (tm.bias->dominant_shift) {
      b["dominant_shift"] = {
          {"from", std::string(to_string(tm.bias->dominant_shift->from))},
          {"to", std::string(to_string(tm.bias->dominant_shift->to))},
          {"delta", tm.bias->dominant_shift->delta}};
    } else {
      b["dominant_shift"] = nullptr;
    }
    j["bias"] = std::move(b);
  } else {
    j["bias"] = nullptr;
  }
  return j;
}

inline TargetMetrics target_metrics_from_json(const nlohmann::json& j,
                                              const LabelScheme& scheme) {
  TargetMetrics tm;
  tm.n = j.at("n").get<std::uint64_t>();
  tm.f_avg = j.at("f_avg").get<double>();
  tm.f_m = j.at("f_m").get<double>();
  for (StanceLabel c : scheme.classes()) {
    const nlohmann::json& p = j.at("per_class").at(std::string(to_string(c)));
    ClassPRF& out = tm.per_class[label_index(c)];
    out.precision = p.at("precision").get<double>();
    out.recall = p.at("recall").get<double>();
    out.f1 = p.at("f1").get<double>();
  }
  for (StanceLabel g : scheme.classes()) {
    const nlohmann::json& row =
        j.at("confusion").at("counts").at(std::string(to_string(g)));
    for (StanceLabel p : scheme.classes()) {
      tm.confusion.counts[label_index(g)][label_index(p)] =
          row.at(std::string(to_string(p))).get<std::uint64_t>();
    }
    tm.confusion.abstain[label_index(g)] = j.at("confusion")
                                               .at("abstain")
                                               .at(std::string(to_string(g)))
                                               .get<std::uint64_t>();
  }
  if (!j.at("bias").is_null()) {
    const nlohmann::json& b = j.at("bias");
    BiasScore bias;
    for (StanceLabel c : scheme.classes()) {
      bias.gold_marginal[label_index(c)] =
          b.at("gold_marginal").at(std::string(to_string(c))).get<double>();
      bias.pred_marginal[label_index(c)] =
          b.at("pred_marginal").at(std::string(to_string(c))).get<double>();
    }
    bias.tv_distance = b.at("tv_distance").get<double>();
    if (!b.at("dominant_shift").is_null()) {
      const nlohmann::json& d = b.at("dominant_shift");
      bias.dominant_shift = DominantShift{
          parse_label(d.at("from").get<std::string>()),
          parse_label(d.at("to").get<std::string>()),
          d.at("delta").get<double>()};
    }
    tm.bias = std::move(bias);
  }
  return tm;
}

}  // namespace detail

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["scheme"] = r.scheme.name();
  j["manifest"] = r.manifest;
  j["overall"] = detail::target_metrics_to_json(r.overall, r.scheme);
  nlohmann::ordered_json per_target = nlohmann::ordered_json::object();
  for (const auto& [target, tm] : r.per_target) {
    per_target[target] = detail::target_metrics_to_json(tm, r.scheme);
  }
  j["per_target"] = std::move(per_target);
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.dataset = j.at("dataset").get<std::string>();
    r.scheme = LabelScheme::parse(j.at("scheme").get<std::string>());
    r.manifest = j.at("manifest").get<std::string>();
    r.overall = detail::target_metrics_from_json(j.at("overall"), r.scheme);
    for (const auto& [target, tm] : j.at("per_target").items()) {
      r.per_target.emplace(target,
                           detail::target_metrics_from_json(tm, r.scheme));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(ErrorKind::MalformedRow,
                    std::string("report JSON: ") + e.what());
  }
  return r;
}

inline std::string report_to_csv(const EvalReport& r) {
  std::string out =
      "target,n,f_favor,f_against,f_neutral,f_avg,f_m,tv_distance\n";
  for (const auto& [target, tm] : r.per_target) {
    out += target;
    out += ',' + std::to_string(tm.n);
    out += ',' + detail::format_fixed(
                     tm.per_class[label_index(StanceLabel::Favor)].f1, 6);
    out += ',' + detail::format_fixed(
                     tm.per_class[label_index(StanceLabel::Against)].f1, 6);
    out += ',' + detail::format_fixed(
                     tm.per_class[label_index(StanceLabel::Neutral)].f1, 6);
    out += ',' + detail::format_fixed(tm.f_avg, 6);
    out += ',' + detail::format_fixed(tm.f_m, 6);
    out += ',';
    if (tm.bias) out += detail::format_fixed(tm.bias->tv_distance, 6);
    out += '\n';
  }
  return out;
}

// One table per report: targets as columns, F_avg and F_m as rows.
inline std::string report_to_markdown(const EvalReport& r) {
  std::string out = "# Evaluation report\n\n";
  out += "Dataset: " + r.dataset + " (" + std::string(r.scheme.name()) +
         "-class)\n\n";
  std::string header = "| metric |";
  std::string rule = "| --- |";
  std::string favg_row = "| F_avg |";
  std::string fm_row = "| F_m |";
  for (const auto& [target, tm] : r.per_target) {
    header += ' ' + target + " |";
    rule += " --- |";
    favg_row += ' ' + detail::format_fixed(tm.f_avg, 4) + " |";
    fm_row += ' ' + detail::format_fixed(tm.f_m, 4) + " |";
  }
  out += header + '\n' + rule + '\n';
  if (!r.per_target.empty()) {
    out += favg_row + '\n' + fm_row + '\n';
  }
  out += "\nOverall: F_avg " + detail::format_fixed(r.overall.f_avg, 4) +
         ", F_m " + detail::format_fixed(r.overall.f_m, 4) + " (n=" +
         std::to_string(r.overall.n) + ")\n";
  return out;
}

}  // namespace stancekit
