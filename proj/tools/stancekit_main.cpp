#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stancekit/stancekit.hpp"

namespace fs = std::filesystem;

namespace {

struct IngestArgs {
  std::string kind;
  std::string path;
  std::string out;
  std::string split = "test";
};

struct RunArgs {
  std::string config;
  std::string method;
  int k = 0;
  std::uint64_t subset_n = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

struct SweepArgs {
  std::string config;
  std::vector<int> ks;
};

struct ReportArgs {
  std::string run_dir;
  std::vector<std::string> formats{"json", "csv", "markdown"};
};

stancekit::RunConfig load_with_overrides(const RunArgs& args) {
  stancekit::RunConfig cfg = stancekit::load_run_config(args.config);
  if (!args.method.empty()) cfg.method = stancekit::parse_method(args.method);
  if (args.k > 0) {
    if (!cfg.stsqa) cfg.stsqa = stancekit::StsqaConfig{};
    cfg.stsqa->k = args.k;
  }
  if (args.seed_set) {
    cfg.seed = args.seed;
    if (cfg.subset) cfg.subset->seed = args.seed;
  }
  if (args.subset_n > 0) {
    if (cfg.subset) {
      cfg.subset->n = args.subset_n;
    } else {
      cfg.subset = stancekit::SubsetSpec{args.subset_n, cfg.seed,
                                         stancekit::StratifyBy::None};
    }
  }
  stancekit::validate(cfg);
  return cfg;
}

int do_ingest(const IngestArgs& args) {
  stancekit::SourceSpec spec;
  spec.kind = stancekit::parse_source_kind(args.kind);
  spec.path = args.path;
  spec.split = stancekit::parse_split(args.split);
  stancekit::Dataset d = stancekit::load(spec);
  stancekit::write_canonical(d, args.out);
  std::cout << "wrote " << d.instances.size() << " instances ("
            << d.scheme.name() << "-class, " << d.targets.size()
            << " targets) to " << args.out << "\n";
  return 0;
}

int do_run(const RunArgs& args) {
  stancekit::RunConfig cfg = load_with_overrides(args);
  stancekit::RunResult result = stancekit::run_eval(cfg);
  std::cout << "run dir: " << result.run_dir.string() << "\n"
            << "instances: " << result.report.overall.n << "\n"
            << "overall F_avg: "
            << stancekit::detail::format_fixed(result.report.overall.f_avg, 4)
            << "  F_m: "
            << stancekit::detail::format_fixed(result.report.overall.f_m, 4)
            << "\n"
            << "cache hits/misses: " << result.manifest.cache_hits << "/"
            << result.manifest.cache_misses << "\n";
  return 0;
}

int do_sweep(const SweepArgs& args) {
  stancekit::RunConfig cfg = stancekit::load_run_config(args.config);
  stancekit::SweepResult result = stancekit::run_qap_sweep(cfg, args.ks);
  std::cout << "sweep csv: " << result.csv_path.string() << "\n";
  for (const auto& [k, report] : result.rows) {
    std::cout << "k=" << k << "  F_avg "
              << stancekit::detail::format_fixed(report.overall.f_avg, 4)
              << "  F_m "
              << stancekit::detail::format_fixed(report.overall.f_m, 4)
              << "\n";
  }
  return 0;
}

int do_compare_styles(const std::string& config) {
  stancekit::RunConfig cfg = stancekit::load_run_config(config);
  stancekit::StyleCompareResult result = stancekit::run_style_compare(cfg);
  std::cout << "compare csv: " << result.csv_path.string() << "\n"
            << "word_level      F_avg "
            << stancekit::detail::format_fixed(
                   result.word_level.overall.f_avg, 4)
            << "  F_m "
            << stancekit::detail::format_fixed(result.word_level.overall.f_m, 4)
            << "\n"
            << "semantic_level  F_avg "
            << stancekit::detail::format_fixed(
                   result.semantic_level.overall.f_avg, 4)
            << "  F_m "
            << stancekit::detail::format_fixed(
                   result.semantic_level.overall.f_m, 4)
            << "\n";
  return 0;
}

int do_report(const ReportArgs& args) {
  fs::path dir(args.run_dir);
  fs::path report_path = dir / "report.json";
  if (!fs::exists(report_path)) {
    throw stancekit::DataError(stancekit::ErrorKind::FileMissing,
                               report_path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(stancekit::detail::read_file(report_path));
  } catch (const nlohmann::json::exception& e) {
    throw stancekit::DataError(stancekit::ErrorKind::MalformedRow,
                               report_path.string() + ": " + e.what());
  }
  stancekit::EvalReport report = stancekit::report_from_json(j);
  std::set<stancekit::ReportFormat> formats;
  for (const std::string& f : args.formats) {
    formats.insert(stancekit::parse_report_format(f));
  }
  for (const fs::path& p : stancekit::emit_report(report, formats, dir)) {
    std::cout << "wrote " << p.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"batch stance-detection evaluation harness"};
  app.require_subcommand(1);

  IngestArgs ingest_args;
  CLI::App* ingest =
      app.add_subcommand("ingest", "convert a raw dataset to canonical JSONL");
  ingest->add_option("kind", ingest_args.kind,
                     "semeval2016 | vast | pstance | canonical_jsonl")
      ->required();
  ingest->add_option("path", ingest_args.path, "input file")->required();
  ingest->add_option("--out", ingest_args.out, "output JSONL path")
      ->required();
  ingest->add_option("--split", ingest_args.split, "train | dev | test");

  RunArgs run_args;
  CLI::App* run = app.add_subcommand("run", "run one evaluation");
  run->add_option("--config", run_args.config, "run config JSON")->required();
  run->add_option("--method", run_args.method, "override: dqa | stsqa");
  run->add_option("--k", run_args.k, "override: exemplar count for stsqa");
  run->add_option("--subset", run_args.subset_n, "override: subset size");
  run->add_option("--seed", run_args.seed, "override: sampling seed")
      ->each([&](const std::string&) { run_args.seed_set = true; });

  SweepArgs sweep_args;
  CLI::App* sweep =
      app.add_subcommand("sweep", "run the exemplar-count sweep");
  sweep->add_option("--config", sweep_args.config, "run config JSON")
      ->required();
  sweep->add_option("--ks", sweep_args.ks, "comma-separated k values")
      ->required()
      ->delimiter(',');

  std::string compare_config;
  CLI::App* compare = app.add_subcommand(
      "compare-styles", "run word-level vs semantic-level exemplars");
  compare->add_option("--config", compare_config, "run config JSON")
      ->required();

  ReportArgs report_args;
  CLI::App* report =
      app.add_subcommand("report", "re-emit report files for a finished run");
  report->add_option("run_dir", report_args.run_dir, "run output directory")
      ->required();
  report->add_option("--format", report_args.formats,
                     "any of json,csv,markdown")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (ingest->parsed()) return do_ingest(ingest_args);
    if (run->parsed()) return do_run(run_args);
    if (sweep->parsed()) return do_sweep(sweep_args);
    if (compare->parsed()) return do_compare_styles(compare_config);
    if (report->parsed()) return do_report(report_args);
  } catch (const stancekit::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return stancekit::exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
