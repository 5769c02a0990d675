#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stancekit/config.hpp"
#include "stancekit/core.hpp"
#include "stancekit/detail/util.hpp"
#include "stancekit/errors.hpp"
#include "stancekit/gateway.hpp"
#include "stancekit/ingest.hpp"
#include "stancekit/metrics.hpp"
#include "stancekit/normalize.hpp"
#include "stancekit/prompt.hpp"

namespace stancekit {

struct RunManifest {
  std::string prompt_template_version{kPromptTemplateVersion};
  std::string backend_id;
  std::string started_at;
  std::string finished_at;
  std::uint64_t instance_count = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t backend_failures = 0;
  nlohmann::ordered_json config;  // snapshot; never holds the API key value
};

struct RunResult {
  EvalReport report;
  RunManifest manifest;
  std::filesystem::path run_dir;
  std::filesystem::path predictions_path;
};

struct SweepResult {
  std::vector<std::pair<int, EvalReport>> rows;  // k strictly increasing
  std::filesystem::path csv_path;
};

struct StyleCompareResult {
  EvalReport word_level;
  EvalReport semantic_level;
  std::filesystem::path csv_path;
};

// ---------------------------------------------------------------------------
// Config snapshot and manifest serialization
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json backend_snapshot(const BackendConfig& b) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(b.kind));
  if (!b.endpoint_url.empty()) j["endpoint_url"] = b.endpoint_url;
  j["model_name"] = b.model_name;
  j["temperature"] = b.temperature;
  j["max_tokens"] = b.max_tokens;
  j["timeout_ms"] = b.timeout_ms;
  j["max_retries"] = b.max_retries;
  j["max_requests_per_second"] = b.max_requests_per_second;
  j["api_key_env_var"] = b.api_key_env_var;  // the name, never the value
  if (b.kind == BackendKind::Mock) {
    nlohmann::ordered_json m;
    nlohmann::ordered_json lex = nlohmann::ordered_json::object();
    for (const auto& [token, entry] : b.mock.lexicon) {
      lex[token] = {std::string(to_string(entry.first)), entry.second};
    }
    m["lexicon"] = std::move(lex);
    m["default_label"] = std::string(to_string(b.mock.default_label));
    nlohmann::ordered_json bias = nlohmann::ordered_json::object();
    for (const auto& [target, w] : b.mock.bias_overrides) {
      bias[target] = {w[0], w[1], w[2]};
    }
    m["bias_overrides"] = std::move(bias);
    j["mock"] = std::move(m);
  }
  return j;
}

inline nlohmann::ordered_json config_snapshot(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json src;
  src["kind"] = std::string(to_string(cfg.source.kind));
  src["path"] = cfg.source.path.string();
  src["split"] = std::string(to_string(cfg.source.split));
  j["source"] = std::move(src);
  if (cfg.targets_filter) j["targets_filter"] = *cfg.targets_filter;
  j["method"] = std::string(to_string(cfg.method));
  if (cfg.stsqa) {
    nlohmann::ordered_json s;
    s["k"] = cfg.stsqa->k;
    if (!cfg.stsqa->qap_ids.empty()) s["qap_ids"] = cfg.stsqa->qap_ids;
    if (cfg.stsqa->style) s["style"] = std::string(to_string(*cfg.stsqa->style));
    j["stsqa"] = std::move(s);
  }
  if (!cfg.qap_library.empty()) j["qap_library"] = cfg.qap_library.string();
  j["backend"] = backend_snapshot(cfg.backend);
  if (cfg.subset) {
    nlohmann::ordered_json s;
    s["n"] = cfg.subset->n;
    s["seed"] = cfg.subset->seed;
    s["stratify_by"] = std::string(to_string(cfg.subset->stratify_by));
    j["subset"] = std::move(s);
  }
  j["cache_dir"] = cfg.cache_dir.string();
  j["output_dir"] = cfg.output_dir.string();
  j["concurrency"] = cfg.concurrency;
  j["seed"] = cfg.seed;
  return j;
}

}  // namespace detail

inline nlohmann::ordered_json manifest_to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["prompt_template_version"] = m.prompt_template_version;
  j["backend_id"] = m.backend_id;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["instance_count"] = m.instance_count;
  j["cache_hits"] = m.cache_hits;
  j["cache_misses"] = m.cache_misses;
  j["backend_failures"] = m.backend_failures;
  j["config"] = m.config;
  return j;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

enum class ReportFormat { Json, Csv, Markdown };

inline ReportFormat parse_report_format(std::string_view s) {
  std::string lower = detail::ascii_lower(detail::trim(s));
  if (lower == "json") return ReportFormat::Json;
  if (lower == "csv") return ReportFormat::Csv;
  if (lower == "markdown" || lower == "md") return ReportFormat::Markdown;
  throw UsageError(ErrorKind::InvalidConfig,
                   "report format must be json, csv or markdown, got '" +
                       std::string(s) + "'");
}

inline std::vector<std::filesystem::path> emit_report(
    const EvalReport& report, const std::set<ReportFormat>& formats,
    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  if (formats.count(ReportFormat::Json)) {
    std::filesystem::path p = dir / "report.json";
    detail::write_file(p, report_to_json(report).dump(2) + "\n");
    written.push_back(p);
  }
  if (formats.count(ReportFormat::Csv)) {
    std::filesystem::path p = dir / "report.csv";
    detail::write_file(p, report_to_csv(report));
    written.push_back(p);
  }
  if (formats.count(ReportFormat::Markdown)) {
    std::filesystem::path p = dir / "report.md";
    detail::write_file(p, report_to_markdown(report));
    written.push_back(p);
  }
  return written;
}

// ---------------------------------------------------------------------------
// QAP selection
// ---------------------------------------------------------------------------

namespace detail {

// Explicit ids pin the exemplars for every instance. Otherwise each instance
// takes the first k library entries for its own target, in library order,
// optionally restricted to one style. Library order is the selection rule,
// so curators control exemplar priority by file order.
inline std::vector<Qap> resolve_qaps(
    const Instance& inst, const StsqaConfig& cfg,
    const std::vector<Qap>& library,
    const std::unordered_map<std::string, std::size_t>& by_id) {
  std::vector<Qap> out;
  if (!cfg.qap_ids.empty()) {
    for (const std::string& id : cfg.qap_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw UsageError(ErrorKind::QapNotFound,
                         "qap id '" + id + "' not found in the library");
      }
      out.push_back(library[it->second]);
    }
    return out;
  }
  bool style_seen = false;
  for (const Qap& q : library) {
    if (q.target != inst.target) continue;
    if (cfg.style && q.style != *cfg.style) continue;
    style_seen = true;
    if (static_cast<int>(out.size()) < cfg.k) out.push_back(q);
  }
  if (cfg.style && !style_seen) {
    throw DataError(ErrorKind::MissingStyle,
                    "library has no " + std::string(to_string(*cfg.style)) +
                        " QAPs for target '" + inst.target + "'");
  }
  if (static_cast<int>(out.size()) < cfg.k) {
    throw DataError(ErrorKind::InsufficientQaps,
                    "target '" + inst.target + "' has " +
                        std::to_string(out.size()) + " matching QAPs, " +
                        std::to_string(cfg.k) + " requested");
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Evaluation runs
// ---------------------------------------------------------------------------

namespace detail {

inline Dataset load_run_dataset(const RunConfig& cfg) {
  Dataset d = stancekit::load(cfg.source);
  if (cfg.targets_filter) {
    std::unordered_set<std::string> keep(cfg.targets_filter->begin(),
                                         cfg.targets_filter->end());
    std::vector<Instance> kept;
    for (const Instance& inst : d.instances) {
      if (keep.count(inst.target)) kept.push_back(inst);
    }
    if (kept.empty()) {
      throw DataError(ErrorKind::InsufficientInstances,
                      "targets_filter matched no instances");
    }
    d = Dataset::make(d.name, d.scheme, std::move(kept));
  }
  if (cfg.subset) d = subset(d, *cfg.subset);
  return d;
}

inline std::string predictions_jsonl(const std::vector<Prediction>& preds) {
  std::string out;
  for (const Prediction& p : preds) {
    nlohmann::ordered_json j;
    j["id"] = p.instance_id;
    if (p.label) {
      j["label"] = std::string(to_string(*p.label));
    } else {
      j["label"] = nullptr;
    }
    j["raw_output"] = p.raw_output;
    j["prompt_digest"] = p.prompt_digest;
    j["backend_id"] = p.backend_id;
    j["latency_ms"] = p.latency_ms;
    out += j.dump();
    out += '\n';
  }
  return out;
}

// True for failures that consume the per-run failure budget. Configuration
// problems like a missing API key abort immediately instead, since they
// would doom every instance anyway.
inline bool budgeted_failure(const BackendError& e) {
  switch (e.kind()) {
    case ErrorKind::Timeout:
    case ErrorKind::HttpStatus:
    case ErrorKind::MalformedResponse:
    case ErrorKind::RetriesExhausted:
      return true;
    default:
      return false;
  }
}

}  // namespace detail

// Runs one evaluation pass with a caller-owned gateway so that sweeps and
// style comparisons share the cache and the call counter.
inline RunResult run_eval_with(const RunConfig& cfg, Gateway& gateway) {
  validate(cfg);
  Dataset d = detail::load_run_dataset(cfg);

  std::vector<Instance> instances = d.instances;
  std::sort(instances.begin(), instances.end(),
            [](const Instance& a, const Instance& b) { return a.id < b.id; });

  std::vector<Qap> library;
  std::unordered_map<std::string, std::size_t> qap_index;
  if (cfg.method == Method::Stsqa) {
    library = load_qap_library(cfg.qap_library);
    for (std::size_t i = 0; i < library.size(); ++i) {
      qap_index.emplace(library[i].id, i);
    }
  }

  std::vector<PromptSpec> prompts;
  prompts.reserve(instances.size());
  for (const Instance& inst : instances) {
    if (cfg.method == Method::Dqa) {
      prompts.push_back(build_dqa(inst));
    } else {
      std::vector<Qap> qaps =
          detail::resolve_qaps(inst, *cfg.stsqa, library, qap_index);
      prompts.push_back(build_stsqa(inst, qaps));
    }
  }

  RunManifest manifest;
  manifest.backend_id = cfg.backend.kind == BackendKind::Mock
                            ? "mock"
                            : cfg.backend.model_name;
  manifest.instance_count = instances.size();
  manifest.config = detail::config_snapshot(cfg);
  manifest.started_at = detail::iso8601_utc(std::chrono::system_clock::now());

  const std::size_t n = instances.size();
  std::vector<Prediction> preds(n);
  std::atomic<std::size_t> next{0};
  std::atomic<std::uint64_t> hits{0}, misses{0}, failures{0};
  std::atomic<bool> bail{false};
  std::mutex fatal_mu;
  std::exception_ptr fatal;
  const bool mock = cfg.backend.kind == BackendKind::Mock;

  auto worker = [&]() {
    while (!bail.load()) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      Prediction& p = preds[i];
      p.instance_id = instances[i].id;
      p.prompt_digest = request_digest(prompts[i], cfg.backend);
      try {
        auto t0 = std::chrono::steady_clock::now();
        Gateway::CachedResult got =
            gateway.cached_complete(prompts[i], cfg.cache_dir);
        auto t1 = std::chrono::steady_clock::now();
        p.raw_output = got.text;
        p.backend_id = got.backend_id;
        p.latency_ms =
            mock ? 0
                 : static_cast<std::uint64_t>(
                       std::chrono::duration_cast<std::chrono::milliseconds>(
                           t1 - t0)
                           .count());
        NormalizerOutcome norm = normalize(got.text, d.scheme);
        if (norm.result == NormalizeResult::Label) p.label = norm.label;
        (got.hit ? hits : misses).fetch_add(1);
      } catch (const BackendError& e) {
        if (!detail::budgeted_failure(e)) {
          std::lock_guard<std::mutex> lock(fatal_mu);
          if (!fatal) fatal = std::current_exception();
          bail.store(true);
          return;
        }
        failures.fetch_add(1);
        p.raw_output.clear();
        p.backend_id.clear();
        p.latency_ms = 0;
      } catch (...) {
        std::lock_guard<std::mutex> lock(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        bail.store(true);
        return;
      }
    }
  };

  std::size_t pool = std::min<std::size_t>(cfg.concurrency, std::max<std::size_t>(n, 1));
  std::vector<std::thread> threads;
  threads.reserve(pool);
  for (std::size_t t = 0; t < pool; ++t) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();
  if (fatal) std::rethrow_exception(fatal);

  manifest.finished_at = detail::iso8601_utc(std::chrono::system_clock::now());
  manifest.cache_hits = hits.load();
  manifest.cache_misses = misses.load();
  manifest.backend_failures = failures.load();

  if (failures.load() * 10 > n) {
    throw PartialRunError(
        n - failures.load(),
        std::to_string(failures.load()) + " of " + std::to_string(n) +
            " instances failed, exceeding the 10% failure budget");
  }

  std::filesystem::create_directories(cfg.output_dir);
  detail::write_file(cfg.output_dir / "manifest.json",
                     manifest_to_json(manifest).dump(2) + "\n");
  std::filesystem::path preds_path = cfg.output_dir / "predictions.jsonl";
  detail::write_file(preds_path, detail::predictions_jsonl(preds));

  EvalReport report =
      build_report(d.name, d.scheme, "manifest.json", instances, preds);
  emit_report(report,
              {ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown},
              cfg.output_dir);

  return RunResult{std::move(report), std::move(manifest), cfg.output_dir,
                   std::move(preds_path)};
}

inline RunResult run_eval(const RunConfig& cfg) {
  Gateway gateway(cfg.backend);
  return run_eval_with(cfg, gateway);
}

// ---------------------------------------------------------------------------
// QAP-count sweep
// ---------------------------------------------------------------------------

inline SweepResult run_qap_sweep(const RunConfig& cfg,
                                 const std::vector<int>& ks) {
  validate(cfg);
  if (cfg.method != Method::Stsqa) {
    throw UsageError(ErrorKind::InvalidConfig,
                     "sweep requires method 'stsqa'");
  }
  if (ks.empty()) {
    throw UsageError(ErrorKind::InvalidConfig, "sweep needs at least one k");
  }
  std::vector<int> sorted = ks;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (int k : sorted) {
    if (k < 1 || k > static_cast<int>(kMaxQaps)) {
      throw UsageError(ErrorKind::InvalidConfig,
                       "sweep k values must be in [1, " +
                           std::to_string(kMaxQaps) + "], got " +
                           std::to_string(k));
    }
  }

  Gateway gateway(cfg.backend);
  SweepResult result;
  for (int k : sorted) {
    RunConfig per_k = cfg;
    per_k.stsqa->k = k;
    per_k.stsqa->qap_ids.clear();  // sweep always selects by library prefix
    per_k.output_dir = cfg.output_dir / ("k" + std::to_string(k));
    RunResult run = run_eval_with(per_k, gateway);
    result.rows.emplace_back(k, std::move(run.report));
  }

  std::string csv = "k,f_avg,f_m\n";
  for (const auto& [k, report] : result.rows) {
    csv += std::to_string(k);
    csv += ',' + detail::format_fixed(report.overall.f_avg, 6);
    csv += ',' + detail::format_fixed(report.overall.f_m, 6);
    csv += '\n';
  }
  std::filesystem::create_directories(cfg.output_dir);
  result.csv_path = cfg.output_dir / "sweep.csv";
  detail::write_file(result.csv_path, csv);
  return result;
}

// ---------------------------------------------------------------------------
// QAP style comparison
// ---------------------------------------------------------------------------

inline StyleCompareResult run_style_compare(const RunConfig& cfg) {
  validate(cfg);
  if (cfg.method != Method::Stsqa) {
    throw UsageError(ErrorKind::InvalidConfig,
                     "compare-styles requires method 'stsqa'");
  }
  Gateway gateway(cfg.backend);
  auto run_style = [&](QapStyle style) {
    RunConfig per_style = cfg;
    per_style.stsqa->style = style;
    per_style.stsqa->qap_ids.clear();
    per_style.output_dir = cfg.output_dir / std::string(to_string(style));
    return run_eval_with(per_style, gateway);
  };
  StyleCompareResult result;
  result.word_level = run_style(QapStyle::WordLevel).report;
  result.semantic_level = run_style(QapStyle::SemanticLevel).report;

  std::string csv = "style,f_avg,f_m\n";
  csv += "word_level," +
         detail::format_fixed(result.word_level.overall.f_avg, 6) + ',' +
         detail::format_fixed(result.word_level.overall.f_m, 6) + '\n';
  csv += "semantic_level," +
         detail::format_fixed(result.semantic_level.overall.f_avg, 6) + ',' +
         detail::format_fixed(result.semantic_level.overall.f_m, 6) + '\n';
  std::filesystem::create_directories(cfg.output_dir);
  result.csv_path = cfg.output_dir / "style_compare.csv";
  detail::write_file(result.csv_path, csv);
  return result;
}

}  // namespace stancekit
