#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stancekit/detail/util.hpp"
#include "stancekit/errors.hpp"
#include "stancekit/gateway.hpp"
#include "stancekit/ingest.hpp"
#include "stancekit/prompt.hpp"

namespace stancekit {

enum class Method { Dqa, Stsqa };

inline std::string_view to_string(Method m) {
  return m == Method::Dqa ? "dqa" : "stsqa";
}

inline Method parse_method(std::string_view s) {
  std::string lower = detail::ascii_lower(detail::trim(s));
  if (lower == "dqa") return Method::Dqa;
  if (lower == "stsqa") return Method::Stsqa;
  throw UsageError(ErrorKind::InvalidConfig,
                   "method must be 'dqa' or 'stsqa', got '" + std::string(s) +
                       "'");
}

struct RunConfig {
  SourceSpec source;
  std::optional<std::vector<std::string>> targets_filter;
  Method method = Method::Dqa;
  std::optional<StsqaConfig> stsqa;
  std::filesystem::path qap_library;  // required when method is stsqa
  BackendConfig backend;
  std::optional<SubsetSpec> subset;
  std::filesystem::path cache_dir;
  std::filesystem::path output_dir;
  std::uint32_t concurrency = 4;
  std::uint64_t seed = 0;
};

inline void validate(const RunConfig& cfg) {
  if (cfg.concurrency < 1) {
    throw UsageError(ErrorKind::InvalidConfig, "concurrency must be >= 1");
  }
  if (cfg.method == Method::Stsqa) {
    if (!cfg.stsqa) {
      throw UsageError(ErrorKind::InvalidConfig,
                       "method 'stsqa' requires an stsqa section");
    }
    if (cfg.qap_library.empty()) {
      throw UsageError(ErrorKind::InvalidConfig,
                       "method 'stsqa' requires qap_library");
    }
  }
  if (cfg.stsqa &&
      (cfg.stsqa->k < 1 || cfg.stsqa->k > static_cast<int>(kMaxQaps))) {
    throw UsageError(ErrorKind::InvalidConfig,
                     "stsqa.k must be in [1, " + std::to_string(kMaxQaps) +
                         "]");
  }
  if (cfg.subset && cfg.subset->n < 1) {
    throw UsageError(ErrorKind::InvalidConfig, "subset.n must be >= 1");
  }
  if (cfg.cache_dir.empty()) {
    throw UsageError(ErrorKind::InvalidConfig, "cache_dir is required");
  }
  if (cfg.output_dir.empty()) {
    throw UsageError(ErrorKind::InvalidConfig, "output_dir is required");
  }
  if (cfg.source.path.empty()) {
    throw UsageError(ErrorKind::InvalidConfig, "source.path is required");
  }
  validate(cfg.backend);
}

namespace detail {

inline std::filesystem::path resolve_path(const std::filesystem::path& base,
                                          const std::string& p) {
  std::filesystem::path out(p);
  if (out.is_absolute() || base.empty()) return out;
  return base / out;
}

// Typo'd keys silently changing a run is worse than a hard error.
inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<std::string_view> known,
                                const char* section) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (std::string_view k : known) {
      if (key == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw UsageError(ErrorKind::InvalidConfig,
                       std::string("unknown key '") + key + "' in " + section);
    }
  }
}

inline std::string get_string(const nlohmann::json& j, const char* key,
                              const char* section) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw UsageError(ErrorKind::InvalidConfig,
                     std::string(section) + "." + key +
                         " must be present and a string");
  }
  return j[key].get<std::string>();
}

}  // namespace detail

inline MockRules parse_mock_rules(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"lexicon", "default_label", "bias_overrides"},
                              "backend.mock");
  MockRules rules;
  if (j.contains("lexicon")) {
    if (!j["lexicon"].is_object()) {
      throw UsageError(ErrorKind::InvalidConfig,
                       "backend.mock.lexicon must be an object");
    }
    for (const auto& [token, entry] : j["lexicon"].items()) {
      if (!entry.is_array() || entry.size() != 2 || !entry[0].is_string() ||
          !entry[1].is_number_integer()) {
        throw UsageError(ErrorKind::InvalidConfig,
                         "backend.mock.lexicon entries must be [label, weight]");
      }
      rules.lexicon[detail::ascii_lower(token)] = {
          parse_label(entry[0].get<std::string>()), entry[1].get<int>()};
    }
  }
  if (j.contains("default_label")) {
    rules.default_label = parse_label(j["default_label"].get<std::string>());
  }
  if (j.contains("bias_overrides")) {
    if (!j["bias_overrides"].is_object()) {
      throw UsageError(ErrorKind::InvalidConfig,
                       "backend.mock.bias_overrides must be an object");
    }
    for (const auto& [target, arr] : j["bias_overrides"].items()) {
      if (!arr.is_array() || arr.size() != 3) {
        throw UsageError(
            ErrorKind::InvalidConfig,
            "backend.mock.bias_overrides entries must be [favor, against, "
            "neutral] weights");
      }
      rules.bias_overrides[target] = {arr[0].get<double>(),
                                      arr[1].get<double>(),
                                      arr[2].get<double>()};
    }
  }
  return rules;
}

inline BackendConfig parse_backend_config(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"kind", "endpoint_url", "model_name", "temperature", "max_tokens",
       "timeout_ms", "max_retries", "max_requests_per_second",
       "api_key_env_var", "mock"},
      "backend");
  BackendConfig c;
  c.kind = parse_backend_kind(detail::get_string(j, "kind", "backend"));
  if (j.contains("endpoint_url")) {
    c.endpoint_url = j["endpoint_url"].get<std::string>();
  }
  if (j.contains("model_name")) {
    c.model_name = j["model_name"].get<std::string>();
  } else if (c.kind == BackendKind::Mock) {
    c.model_name = "mock";
  }
  if (j.contains("temperature")) c.temperature = j["temperature"].get<double>();
  if (j.contains("max_tokens")) {
    c.max_tokens = j["max_tokens"].get<std::uint32_t>();
  }
  if (j.contains("timeout_ms")) {
    c.timeout_ms = j["timeout_ms"].get<std::uint32_t>();
  }
  if (j.contains("max_retries")) {
    c.max_retries = j["max_retries"].get<std::uint32_t>();
  }
  if (j.contains("max_requests_per_second")) {
    c.max_requests_per_second = j["max_requests_per_second"].get<double>();
  }
  if (j.contains("api_key_env_var")) {
    c.api_key_env_var = j["api_key_env_var"].get<std::string>();
  }
  if (j.contains("mock")) c.mock = parse_mock_rules(j["mock"]);
  return c;
}

inline StsqaConfig parse_stsqa_config(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"k", "qap_ids", "style"}, "stsqa");
  StsqaConfig s;
  if (j.contains("k")) s.k = j["k"].get<int>();
  if (j.contains("qap_ids")) {
    for (const auto& id : j["qap_ids"]) {
      s.qap_ids.push_back(id.get<std::string>());
    }
  }
  if (j.contains("style")) {
    s.style = parse_qap_style(j["style"].get<std::string>());
  }
  return s;
}

// Relative paths in the file resolve against the file's own directory, so a
// config checked into a repo works from any working directory.
inline RunConfig parse_run_config(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir) {
  detail::reject_unknown_keys(
      j,
      {"source", "targets_filter", "method", "stsqa", "qap_library", "backend",
       "subset", "cache_dir", "output_dir", "concurrency", "seed"},
      "config");
  RunConfig cfg;
  try {
    if (!j.contains("source") || !j["source"].is_object()) {
      throw UsageError(ErrorKind::InvalidConfig,
                       "config.source must be an object");
    }
    const nlohmann::json& src = j["source"];
    detail::reject_unknown_keys(src, {"kind", "path", "split"}, "source");
    cfg.source.kind =
        parse_source_kind(detail::get_string(src, "kind", "source"));
    cfg.source.path =
        detail::resolve_path(base_dir, detail::get_string(src, "path", "source"));
    if (src.contains("split")) {
      cfg.source.split = parse_split(src["split"].get<std::string>());
    }

    if (j.contains("targets_filter")) {
      std::vector<std::string> filter;
      for (const auto& t : j["targets_filter"]) {
        filter.push_back(t.get<std::string>());
      }
      cfg.targets_filter = std::move(filter);
    }
    cfg.method = parse_method(detail::get_string(j, "method", "config"));
    if (j.contains("stsqa")) cfg.stsqa = parse_stsqa_config(j["stsqa"]);
    if (j.contains("qap_library")) {
      cfg.qap_library = detail::resolve_path(
          base_dir, j["qap_library"].get<std::string>());
    }
    if (!j.contains("backend")) {
      throw UsageError(ErrorKind::InvalidConfig, "config.backend is required");
    }
    cfg.backend = parse_backend_config(j["backend"]);
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("subset")) {
      const nlohmann::json& sub = j["subset"];
      detail::reject_unknown_keys(sub, {"n", "seed", "stratify_by"}, "subset");
      SubsetSpec spec;
      spec.n = sub.at("n").get<std::size_t>();
      spec.seed = sub.contains("seed") ? sub["seed"].get<std::uint64_t>()
                                       : cfg.seed;
      if (sub.contains("stratify_by")) {
        spec.stratify_by =
            parse_stratify_by(sub["stratify_by"].get<std::string>());
      }
      cfg.subset = spec;
    }
    cfg.cache_dir = detail::resolve_path(
        base_dir, detail::get_string(j, "cache_dir", "config"));
    cfg.output_dir = detail::resolve_path(
        base_dir, detail::get_string(j, "output_dir", "config"));
    if (j.contains("concurrency")) {
      cfg.concurrency = j["concurrency"].get<std::uint32_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(ErrorKind::InvalidConfig,
                     std::string("config: ") + e.what());
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const Error&) {
    throw UsageError(ErrorKind::FileMissing,
                     "config file not readable: " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(ErrorKind::InvalidConfig,
                     path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig cfg = parse_run_config(j, path.parent_path());
  validate(cfg);
  return cfg;
}

}  // namespace stancekit
