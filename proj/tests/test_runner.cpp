#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "stancekit/runner.hpp"
#include "support/test_util.hpp"

using namespace stancekit;
using testsupport::TempDir;

namespace {

BackendConfig lexicon_backend() {
  BackendConfig b;
  b.kind = BackendKind::Mock;
  b.model_name = "lexicon-mock";
  b.mock.lexicon["wonderful"] = {StanceLabel::Favor, 2};
  b.mock.lexicon["terrible"] = {StanceLabel::Against, 2};
  b.mock.default_label = StanceLabel::Neutral;
  return b;
}

RunConfig base_config(const TempDir& tmp, const std::string& fixture_name,
                      const std::string& run_name = "run") {
  RunConfig cfg;
  cfg.source.kind = SourceKind::CanonicalJsonl;
  cfg.source.path = testsupport::fixture(fixture_name);
  cfg.backend = lexicon_backend();
  cfg.cache_dir = tmp / ("cache-" + run_name);
  cfg.output_dir = tmp / run_name;
  cfg.concurrency = 4;
  return cfg;
}

RunConfig stsqa_config(const TempDir& tmp, const std::string& fixture_name,
                       int k, const std::string& run_name = "run") {
  RunConfig cfg = base_config(tmp, fixture_name, run_name);
  cfg.method = Method::Stsqa;
  cfg.stsqa = StsqaConfig{};
  cfg.stsqa->k = k;
  cfg.qap_library = testsupport::data_file("qap_library.jsonl");
  return cfg;
}

std::vector<nlohmann::json> parse_predictions(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<nlohmann::json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
  }
  return rows;
}

nlohmann::json read_manifest(const std::filesystem::path& run_dir) {
  return nlohmann::json::parse(testsupport::slurp(run_dir / "manifest.json"));
}

const Qap& qap_by_id(const std::vector<Qap>& lib, const std::string& id) {
  for (const Qap& q : lib) {
    if (q.id == id) return q;
  }
  FAIL("missing qap " + id);
  return lib.front();
}

const Instance& instance_by_id(const Dataset& d, const std::string& id) {
  for (const Instance& inst : d.instances) {
    if (inst.id == id) return inst;
  }
  FAIL("missing instance " + id);
  return d.instances.front();
}

std::size_t count_cache_entries(const std::filesystem::path& dir) {
  std::size_t n = 0;
  if (!std::filesystem::exists(dir)) return 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") ++n;
  }
  return n;
}

struct EnvVar {
  std::string name;
  EnvVar(std::string n, const char* value) : name(std::move(n)) {
    if (value) {
      setenv(name.c_str(), value, 1);
    } else {
      unsetenv(name.c_str());
    }
  }
  ~EnvVar() { unsetenv(name.c_str()); }
};

struct LocalServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  explicit LocalServer(
      std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server.Post("/v1/chat/completions", std::move(handler));
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~LocalServer() {
    server.stop();
    thread.join();
  }

  std::string url() const {
    return "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  }
};

std::string stance_body(const std::string& label) {
  nlohmann::json message;
  message["role"] = "assistant";
  message["content"] = "The attitude is " + label + " because of the wording.";
  nlohmann::json choice;
  choice["message"] = message;
  nlohmann::json j;
  j["choices"] = nlohmann::json::array({choice});
  j["model"] = "local-test";
  return j.dump();
}

void reply_by_lexicon(const httplib::Request& req, httplib::Response& res) {
  // substrings dodge the capitalized variants in the fixture
  if (req.body.find("onderful") != std::string::npos) {
    res.set_content(stance_body("favor"), "application/json");
  } else if (req.body.find("errible") != std::string::npos) {
    res.set_content(stance_body("against"), "application/json");
  } else {
    res.set_content(stance_body("neutral"), "application/json");
  }
}

BackendConfig local_http_backend(const LocalServer& server) {
  BackendConfig b;
  b.kind = BackendKind::Http;
  b.endpoint_url = server.url();
  b.model_name = "local-test";
  b.max_retries = 0;
  b.max_requests_per_second = 1000.0;
  b.api_key_env_var = "STANCEKIT_TEST_API_KEY";
  return b;
}

}  // namespace

TEST_CASE("a dqa mock run scores the bundled fixture perfectly", "[runner]") {
  TempDir tmp;
  RunConfig cfg = base_config(tmp, "e2e20.jsonl");
  RunResult run = run_eval(cfg);

  CHECK(run.report.dataset == "mini-stance");
  CHECK(run.report.scheme == LabelScheme::three_class());
  CHECK(run.report.overall.n == 20);
  CHECK(run.report.overall.f_avg == 1.0);
  CHECK(run.report.overall.f_m == 1.0);
  REQUIRE(run.report.per_target.size() == 3);
  CHECK(run.report.per_target.at("Hillary Clinton").n == 8);
  CHECK(run.report.per_target.at("Feminist Movement").n == 6);
  CHECK(run.report.per_target.at("Legalization of Abortion").n == 6);

  CHECK(run.manifest.prompt_template_version == "stance-prompts/v1");
  CHECK(run.manifest.backend_id == "mock");
  CHECK(run.manifest.instance_count == 20);
  CHECK(run.manifest.cache_hits == 0);
  CHECK(run.manifest.cache_misses == 20);
  CHECK(run.manifest.backend_failures == 0);
  CHECK(run.run_dir == cfg.output_dir);

  for (const char* name : {"manifest.json", "predictions.jsonl", "report.json",
                           "report.csv", "report.md"}) {
    INFO(name);
    CHECK(std::filesystem::exists(cfg.output_dir / name));
  }
  CHECK(run.predictions_path == cfg.output_dir / "predictions.jsonl");

  // the emitted report re-parses into the returned one
  EvalReport reread = report_from_json(
      nlohmann::json::parse(testsupport::slurp(cfg.output_dir / "report.json")));
  CHECK(reread.overall.f_avg == run.report.overall.f_avg);
  CHECK(reread.manifest == "manifest.json");

  nlohmann::json manifest = read_manifest(cfg.output_dir);
  CHECK(manifest.at("config").at("method") == "dqa");
  CHECK(manifest.at("config").at("concurrency") == 4);
  CHECK(manifest.at("config").at("backend").at("kind") == "mock");
}

TEST_CASE("predictions are sorted by id with correct labels", "[runner]") {
  TempDir tmp;
  RunConfig cfg = base_config(tmp, "e2e20.jsonl");
  RunResult run = run_eval(cfg);

  Dataset d = load(cfg.source);
  std::map<std::string, std::string> gold_by_id;
  for (const Instance& inst : d.instances) {
    gold_by_id[inst.id] = std::string(to_string(*inst.gold));
  }

  std::vector<nlohmann::json> rows = parse_predictions(run.predictions_path);
  REQUIRE(rows.size() == 20);
  std::string prev;
  for (const nlohmann::json& row : rows) {
    std::string id = row.at("id").get<std::string>();
    CHECK(prev < id);
    prev = id;
    CHECK(row.at("label").get<std::string>() == gold_by_id.at(id));
    CHECK(row.at("raw_output").get<std::string>().find("The attitude is") == 0);
    CHECK(row.at("prompt_digest").get<std::string>().size() == 64);
    CHECK(row.at("backend_id") == "mock");
    CHECK(row.at("latency_ms") == 0);
  }
}

TEST_CASE("mock runs are byte-deterministic across repeats and concurrency",
          "[runner]") {
  TempDir tmp;
  RunConfig a = base_config(tmp, "e2e20.jsonl", "a");
  RunConfig b = base_config(tmp, "e2e20.jsonl", "b");
  RunConfig serial = base_config(tmp, "e2e20.jsonl", "serial");
  serial.concurrency = 1;
  RunConfig wide = base_config(tmp, "e2e20.jsonl", "wide");
  wide.concurrency = 8;

  run_eval(a);
  run_eval(b);
  run_eval(serial);
  run_eval(wide);

  for (const char* name :
       {"predictions.jsonl", "report.json", "report.csv", "report.md"}) {
    INFO(name);
    std::string first = testsupport::slurp(a.output_dir / name);
    CHECK_FALSE(first.empty());
    CHECK(testsupport::slurp(b.output_dir / name) == first);
    CHECK(testsupport::slurp(serial.output_dir / name) == first);
    CHECK(testsupport::slurp(wide.output_dir / name) == first);
  }
}

TEST_CASE("a warm cache replays a run without backend traffic", "[runner]") {
  TempDir tmp;
  RunConfig cfg = base_config(tmp, "e2e20.jsonl", "cold");
  run_eval(cfg);

  RunConfig warm = cfg;
  warm.output_dir = tmp / "warm";
  Gateway gateway(warm.backend);
  RunResult second = run_eval_with(warm, gateway);

  CHECK(gateway.backend_calls() == 0);
  CHECK(second.manifest.cache_hits == 20);
  CHECK(second.manifest.cache_misses == 0);
  CHECK(testsupport::slurp(warm.output_dir / "predictions.jsonl") ==
        testsupport::slurp(cfg.output_dir / "predictions.jsonl"));
}

TEST_CASE("per-target numbers land on the worked fractions", "[runner]") {
  TempDir tmp;
  RunConfig cfg = base_config(tmp, "hc4.jsonl");
  RunResult run = run_eval(cfg);

  // instance 002 praises her while quoting critics, so the lexicon misreads it
  REQUIRE(run.report.per_target.count("Hillary Clinton") == 1);
  const TargetMetrics& hc = run.report.per_target.at("Hillary Clinton");
  CHECK(hc.n == 4);
  CHECK(hc.f_avg == 2.0 / 3.0);
  CHECK(std::abs(hc.f_m - 7.0 / 9.0) <= 1e-15);
  CHECK(hc.per_class[label_index(StanceLabel::Favor)].precision == 1.0);
  CHECK(hc.per_class[label_index(StanceLabel::Favor)].recall == 0.5);
  CHECK(hc.per_class[label_index(StanceLabel::Against)].precision == 0.5);
  CHECK(hc.per_class[label_index(StanceLabel::Against)].recall == 1.0);
  CHECK(hc.confusion.counts[0][1] == 1);  // the favor instance read as against

  REQUIRE(hc.bias.has_value());
  CHECK(hc.bias->tv_distance == 0.25);
  REQUIRE(hc.bias->dominant_shift.has_value());
  CHECK(hc.bias->dominant_shift->from == StanceLabel::Favor);
  CHECK(hc.bias->dominant_shift->to == StanceLabel::Against);
  CHECK(hc.bias->dominant_shift->delta == 0.25);

  // single-target dataset: the overall pool is the same set of pairs
  CHECK(run.report.overall.f_avg == hc.f_avg);
  CHECK(run.report.overall.confusion == hc.confusion);
}

TEST_CASE("target bias overrides surface in the bias report", "[runner]") {
  TempDir tmp;
  RunConfig cfg = base_config(tmp, "labias.jsonl");
  cfg.backend.mock.lexicon["balanced"] = {StanceLabel::Neutral, 3};
  cfg.backend.mock.bias_overrides["Legalization of Abortion"] = {2.0, 0.0, 0.0};
  RunResult run = run_eval(cfg);

  const TargetMetrics& la = run.report.per_target.at("Legalization of Abortion");
  CHECK(la.n == 4);
  REQUIRE(la.bias.has_value());
  CHECK(la.bias->gold_marginal == std::array<double, 3>{0.0, 0.0, 1.0});
  CHECK(la.bias->pred_marginal[label_index(StanceLabel::Favor)] == 0.75);
  CHECK(la.bias->tv_distance == 0.75);
  REQUIRE(la.bias->dominant_shift.has_value());
  CHECK(la.bias->dominant_shift->from == StanceLabel::Neutral);
  CHECK(la.bias->dominant_shift->to == StanceLabel::Favor);
  CHECK(la.bias->dominant_shift->delta == 0.75);
}

TEST_CASE("stsqa runs pick the per-target library prefix", "[runner]") {
  TempDir tmp;
  RunConfig cfg = stsqa_config(tmp, "e2e20.jsonl", 1);
  RunResult run = run_eval(cfg);

  CHECK(run.report.overall.f_avg == 1.0);
  CHECK(run.report.overall.f_m == 1.0);
  CHECK(run.manifest.instance_count == 20);

  // the recorded digest matches a hand-assembled k=1 prompt
  std::vector<Qap> lib =
      load_qap_library(testsupport::data_file("qap_library.jsonl"));
  Dataset d = load(cfg.source);
  const Instance& inst001 = instance_by_id(d, "mini-stance:test:001");
  std::vector<Qap> expected_qaps = {qap_by_id(lib, "hc-word-1")};
  std::string expected_digest =
      request_digest(build_stsqa(inst001, expected_qaps), cfg.backend);

  std::vector<nlohmann::json> rows = parse_predictions(run.predictions_path);
  CHECK(rows[0].at("id") == "mini-stance:test:001");
  CHECK(rows[0].at("prompt_digest") == expected_digest);

  nlohmann::json manifest = read_manifest(cfg.output_dir);
  CHECK(manifest.at("config").at("method") == "stsqa");
  CHECK(manifest.at("config").at("stsqa").at("k") == 1);
}

TEST_CASE("dqa and stsqa prompts never share cache keys", "[runner]") {
  TempDir tmp;
  RunConfig dqa = base_config(tmp, "e2e20.jsonl", "dqa");
  RunConfig stsqa = stsqa_config(tmp, "e2e20.jsonl", 1, "stsqa");
  RunResult dqa_run = run_eval(dqa);
  RunResult stsqa_run = run_eval(stsqa);

  std::vector<nlohmann::json> d_rows = parse_predictions(dqa_run.predictions_path);
  std::vector<nlohmann::json> s_rows =
      parse_predictions(stsqa_run.predictions_path);
  REQUIRE(d_rows.size() == s_rows.size());
  for (std::size_t i = 0; i < d_rows.size(); ++i) {
    CHECK(d_rows[i].at("id") == s_rows[i].at("id"));
    CHECK(d_rows[i].at("prompt_digest") != s_rows[i].at("prompt_digest"));
  }
}

TEST_CASE("explicit qap ids pin the exemplars for every instance",
          "[runner]") {
  TempDir tmp;
  RunConfig cfg = stsqa_config(tmp, "hc4.jsonl", 1);
  cfg.stsqa->qap_ids = {"dt-sem-3", "hc-word-2"};
  RunResult run = run_eval(cfg);

  std::vector<Qap> lib =
      load_qap_library(testsupport::data_file("qap_library.jsonl"));
  Dataset d = load(cfg.source);
  std::vector<Qap> pinned = {qap_by_id(lib, "dt-sem-3"),
                             qap_by_id(lib, "hc-word-2")};
  std::vector<nlohmann::json> rows = parse_predictions(run.predictions_path);
  REQUIRE(rows.size() == 4);
  for (const nlohmann::json& row : rows) {
    const Instance& inst = instance_by_id(d, row.at("id").get<std::string>());
    CHECK(row.at("prompt_digest") ==
          request_digest(build_stsqa(inst, pinned), cfg.backend));
  }
}

TEST_CASE("unknown qap ids fail as usage errors", "[runner]") {
  TempDir tmp;
  RunConfig cfg = stsqa_config(tmp, "hc4.jsonl", 1);
  cfg.stsqa->qap_ids = {"no-such-qap"};
  try {
    run_eval(cfg);
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(e.kind() == ErrorKind::QapNotFound);
  }
}

TEST_CASE("style filters restrict the exemplar pool", "[runner]") {
  TempDir tmp;
  RunConfig cfg = stsqa_config(tmp, "hc4.jsonl", 2);
  cfg.stsqa->style = QapStyle::WordLevel;
  RunResult run = run_eval(cfg);

  std::vector<Qap> lib =
      load_qap_library(testsupport::data_file("qap_library.jsonl"));
  Dataset d = load(cfg.source);
  std::vector<Qap> expected = {qap_by_id(lib, "hc-word-1"),
                               qap_by_id(lib, "hc-word-2")};
  std::vector<nlohmann::json> rows = parse_predictions(run.predictions_path);
  const Instance& inst = instance_by_id(d, rows[0].at("id").get<std::string>());
  CHECK(rows[0].at("prompt_digest") ==
        request_digest(build_stsqa(inst, expected), cfg.backend));
}

TEST_CASE("a style with no library entries is a data error", "[runner]") {
  TempDir tmp;
  std::filesystem::path lib_path = tmp / "word_only.jsonl";
  testsupport::spit(
      lib_path,
      R"({"id":"w1","question":"q1","answer_label":"favor","explanation":"e1","style":"word_level","target":"Hillary Clinton"})"
      "\n");
  RunConfig cfg = stsqa_config(tmp, "hc4.jsonl", 1);
  cfg.qap_library = lib_path;
  cfg.stsqa->style = QapStyle::SemanticLevel;
  try {
    run_eval(cfg);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.kind() == ErrorKind::MissingStyle);
  }
}

TEST_CASE("asking for more exemplars than the library holds fails",
          "[runner]") {
  TempDir tmp;
  RunConfig cfg = stsqa_config(tmp, "hc4.jsonl", 7);
  try {
    run_eval(cfg);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.kind() == ErrorKind::InsufficientQaps);
  }
}

TEST_CASE("the qap-count sweep writes one run per k and a summary",
          "[runner][sweep]") {
  TempDir tmp;
  RunConfig cfg = stsqa_config(tmp, "e2e20.jsonl", 1, "sweep");
  SweepResult sweep = run_qap_sweep(cfg, {1, 2, 3, 4, 5});

  REQUIRE(sweep.rows.size() == 5);
  for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
    CHECK(sweep.rows[i].first == static_cast<int>(i) + 1);
    CHECK(sweep.rows[i].second.overall.f_avg == 1.0);
    std::filesystem::path k_dir =
        cfg.output_dir / ("k" + std::to_string(i + 1));
    CHECK(std::filesystem::exists(k_dir / "predictions.jsonl"));
    CHECK(std::filesystem::exists(k_dir / "report.json"));
    nlohmann::json manifest = read_manifest(k_dir);
    CHECK(manifest.at("config").at("stsqa").at("k") == static_cast<int>(i) + 1);
  }

  CHECK(sweep.csv_path == cfg.output_dir / "sweep.csv");
  CHECK(testsupport::slurp(sweep.csv_path) ==
        "k,f_avg,f_m\n"
        "1,1.000000,1.000000\n"
        "2,1.000000,1.000000\n"
        "3,1.000000,1.000000\n"
        "4,1.000000,1.000000\n"
        "5,1.000000,1.000000\n");

  // five k values times twenty instances, all distinct prompts
  CHECK(count_cache_entries(cfg.cache_dir) == 100);

  // a repeat sweep is served from cache alone
  SweepResult again = run_qap_sweep(cfg, {1, 2, 3, 4, 5});
  REQUIRE(again.rows.size() == 5);
  for (int k = 1; k <= 5; ++k) {
    nlohmann::json manifest =
        read_manifest(cfg.output_dir / ("k" + std::to_string(k)));
    CHECK(manifest.at("cache_hits") == 20);
    CHECK(manifest.at("cache_misses") == 0);
  }
  CHECK(count_cache_entries(cfg.cache_dir) == 100);
}

TEST_CASE("sweep input hygiene", "[runner][sweep]") {
  TempDir tmp;
  RunConfig cfg = stsqa_config(tmp, "hc4.jsonl", 1, "sweep");

  SweepResult unordered = run_qap_sweep(cfg, {3, 1, 2, 2});
  REQUIRE(unordered.rows.size() == 3);
  CHECK(unordered.rows[0].first == 1);
  CHECK(unordered.rows[1].first == 2);
  CHECK(unordered.rows[2].first == 3);

  CHECK_THROWS_AS(run_qap_sweep(cfg, {}), UsageError);
  CHECK_THROWS_AS(run_qap_sweep(cfg, {0}), UsageError);
  CHECK_THROWS_AS(run_qap_sweep(cfg, {9}), UsageError);

  RunConfig dqa = base_config(tmp, "hc4.jsonl", "dqa");
  CHECK_THROWS_AS(run_qap_sweep(dqa, {1}), UsageError);
}

TEST_CASE("style comparison runs both styles over one cache",
          "[runner][style]") {
  TempDir tmp;
  RunConfig cfg = stsqa_config(tmp, "e2e20.jsonl", 1, "styles");
  StyleCompareResult styles = run_style_compare(cfg);

  CHECK(styles.word_level.overall.n == styles.semantic_level.overall.n);
  CHECK(styles.word_level.overall.n == 20);

  // the mock only reads the final question, so styles cannot disagree
  CHECK(styles.word_level.overall.f_avg ==
        styles.semantic_level.overall.f_avg);
  CHECK(styles.word_level.overall.f_m == styles.semantic_level.overall.f_m);
  CHECK(styles.word_level.overall.f_avg == 1.0);

  CHECK(std::filesystem::exists(cfg.output_dir / "word_level" /
                                "predictions.jsonl"));
  CHECK(std::filesystem::exists(cfg.output_dir / "semantic_level" /
                                "predictions.jsonl"));
  CHECK(testsupport::slurp(styles.csv_path) ==
        "style,f_avg,f_m\n"
        "word_level,1.000000,1.000000\n"
        "semantic_level,1.000000,1.000000\n");

  RunConfig dqa = base_config(tmp, "hc4.jsonl", "dqa");
  CHECK_THROWS_AS(run_style_compare(dqa), UsageError);
}

TEST_CASE("targets_filter narrows the run", "[runner]") {
  TempDir tmp;
  RunConfig cfg = base_config(tmp, "e2e20.jsonl");
  cfg.targets_filter = std::vector<std::string>{"Hillary Clinton"};
  RunResult run = run_eval(cfg);
  CHECK(run.report.overall.n == 8);
  CHECK(run.report.per_target.size() == 1);
  CHECK(run.manifest.instance_count == 8);

  RunConfig none = base_config(tmp, "e2e20.jsonl", "none");
  none.targets_filter = std::vector<std::string>{"Nobody"};
  try {
    run_eval(none);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.kind() == ErrorKind::InsufficientInstances);
  }
}

TEST_CASE("subsets run stratified slices", "[runner]") {
  TempDir tmp;
  RunConfig cfg = base_config(tmp, "e2e20.jsonl");
  cfg.subset = SubsetSpec{};
  cfg.subset->n = 10;
  cfg.subset->seed = 3;
  cfg.subset->stratify_by = StratifyBy::Target;
  RunResult run = run_eval(cfg);

  CHECK(run.manifest.instance_count == 10);
  CHECK(run.report.overall.n == 10);
  CHECK(run.report.per_target.at("Hillary Clinton").n == 4);
  CHECK(run.report.per_target.at("Feminist Movement").n == 3);
  CHECK(run.report.per_target.at("Legalization of Abortion").n == 3);
}

TEST_CASE("failures beyond the budget abort without output",
          "[runner][http]") {
  EnvVar key("STANCEKIT_TEST_API_KEY", "sk-local-test-1");
  LocalServer server([](const httplib::Request& req, httplib::Response& res) {
    if (req.body.find("errible") != std::string::npos) {
      res.status = 500;
      res.set_content("boom", "text/plain");
      return;
    }
    reply_by_lexicon(req, res);
  });

  TempDir tmp;
  RunConfig cfg = base_config(tmp, "e2e20.jsonl");
  cfg.backend = local_http_backend(server);  // seven instances say terrible
  try {
    run_eval(cfg);
    FAIL("expected PartialRunError");
  } catch (const PartialRunError& e) {
    CHECK(e.completed() == 13);
    CHECK(exit_code(e) == 4);
    CHECK(std::string(e.what()).find("budget") != std::string::npos);
  }
  CHECK_FALSE(std::filesystem::exists(cfg.output_dir / "manifest.json"));
  CHECK_FALSE(std::filesystem::exists(cfg.output_dir / "report.json"));
}

TEST_CASE("failures inside the budget become abstentions", "[runner][http]") {
  EnvVar key("STANCEKIT_TEST_API_KEY", "sk-local-test-1");
  LocalServer server([](const httplib::Request& req, httplib::Response& res) {
    if (req.body.find("Iowa") != std::string::npos ||
        req.body.find("Transcript") != std::string::npos) {
      res.status = 500;
      res.set_content("boom", "text/plain");
      return;
    }
    reply_by_lexicon(req, res);
  });

  TempDir tmp;
  RunConfig cfg = base_config(tmp, "e2e20.jsonl");
  cfg.backend = local_http_backend(server);  // exactly two marked instances
  RunResult run = run_eval(cfg);

  CHECK(run.manifest.backend_failures == 2);
  CHECK(run.manifest.cache_misses == 18);
  CHECK(run.manifest.cache_hits == 0);
  CHECK(run.report.overall.n == 20);
  CHECK(run.report.overall.f_avg == 1.0);
  CHECK(run.report.overall.confusion.abstain[label_index(StanceLabel::Neutral)] ==
        2);

  std::vector<nlohmann::json> rows = parse_predictions(run.predictions_path);
  std::size_t abstained = 0;
  for (const nlohmann::json& row : rows) {
    if (row.at("label").is_null()) {
      ++abstained;
      CHECK(row.at("raw_output") == "");
      CHECK(row.at("backend_id") == "");
      CHECK(row.at("prompt_digest").get<std::string>().size() == 64);
    }
  }
  CHECK(abstained == 2);
}

TEST_CASE("a missing API key is fatal, not budgeted", "[runner][http]") {
  EnvVar key("STANCEKIT_TEST_API_KEY", nullptr);
  LocalServer server(reply_by_lexicon);
  TempDir tmp;
  RunConfig cfg = base_config(tmp, "hc4.jsonl");
  cfg.backend = local_http_backend(server);
  try {
    run_eval(cfg);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.kind() == ErrorKind::MissingApiKey);
  }
  CHECK_FALSE(std::filesystem::exists(cfg.output_dir / "manifest.json"));
}

TEST_CASE("no emitted file ever contains the API key value",
          "[runner][http][security]") {
  const std::string secret = "sk-test-secret-123";
  EnvVar key("STANCEKIT_TEST_API_KEY", secret.c_str());
  LocalServer server(reply_by_lexicon);
  TempDir tmp;
  RunConfig cfg = base_config(tmp, "e2e20.jsonl");
  cfg.backend = local_http_backend(server);
  RunResult run = run_eval(cfg);
  CHECK(run.report.overall.n == 20);

  // the manifest records the variable's name and nothing more
  nlohmann::json manifest = read_manifest(cfg.output_dir);
  CHECK(manifest.at("config").at("backend").at("api_key_env_var") ==
        "STANCEKIT_TEST_API_KEY");

  std::size_t scanned = 0;
  for (const auto& dir : {cfg.output_dir, cfg.cache_dir}) {
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      ++scanned;
      INFO(e.path().string());
      CHECK(testsupport::slurp(e.path()).find(secret) == std::string::npos);
    }
  }
  CHECK(scanned >= 25);  // five run files plus twenty cache entries
}

TEST_CASE("run config files load with relative paths resolved", "[config]") {
  RunConfig cfg =
      load_run_config(testsupport::source_dir() / "configs" / "mock_e2e20.json");
  CHECK(cfg.method == Method::Dqa);
  CHECK(std::filesystem::weakly_canonical(cfg.source.path) ==
        std::filesystem::weakly_canonical(
            testsupport::fixture("e2e20.jsonl")));
  CHECK(cfg.backend.kind == BackendKind::Mock);
  CHECK(cfg.backend.model_name == "lexicon-mock");
  CHECK(cfg.backend.mock.lexicon.at("wonderful") ==
        std::make_pair(StanceLabel::Favor, 2));
  CHECK(cfg.backend.mock.default_label == StanceLabel::Neutral);
  CHECK(cfg.concurrency == 4);
  CHECK(cfg.seed == 42);

  RunConfig stsqa =
      load_run_config(testsupport::source_dir() / "configs" / "mock_stsqa.json");
  CHECK(stsqa.method == Method::Stsqa);
  REQUIRE(stsqa.stsqa.has_value());
  CHECK(stsqa.stsqa->k == 1);
  CHECK(std::filesystem::weakly_canonical(stsqa.qap_library) ==
        std::filesystem::weakly_canonical(
            testsupport::data_file("qap_library.jsonl")));

  RunConfig http =
      load_run_config(testsupport::source_dir() / "configs" / "http_example.json");
  CHECK(http.backend.kind == BackendKind::Http);
  CHECK(http.backend.api_key_env_var == "STANCE_HARNESS_API_KEY");
  CHECK(http.backend.endpoint_url ==
        "https://api.openai.com/v1/chat/completions");
  REQUIRE(http.subset.has_value());
  CHECK(http.subset->n == 2);
  CHECK(http.subset->seed == 7);  // inherits the top-level seed
  CHECK(http.subset->stratify_by == StratifyBy::Gold);
  REQUIRE(http.targets_filter.has_value());
  CHECK(http.targets_filter->at(0) == "Hillary Clinton");
}

TEST_CASE("config parsing rejects typos and bad files", "[config]") {
  TempDir tmp;

  testsupport::spit(tmp / "typo.json", R"({
    "source": {"kind": "canonical_jsonl", "path": "x.jsonl"},
    "method": "dqa",
    "backend": {"kind": "mock"},
    "cache_dir": "c", "output_dir": "o",
    "concurency": 4
  })");
  try {
    load_run_config(tmp / "typo.json");
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfig);
    CHECK(std::string(e.what()).find("concurency") != std::string::npos);
  }

  testsupport::spit(tmp / "bad.json", "{ not json");
  try {
    load_run_config(tmp / "bad.json");
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfig);
  }

  try {
    load_run_config(tmp / "absent.json");
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(e.kind() == ErrorKind::FileMissing);
  }
}

TEST_CASE("run config validation catches bad combinations", "[config]") {
  TempDir tmp;
  RunConfig cfg = base_config(tmp, "hc4.jsonl");
  CHECK_NOTHROW(validate(cfg));

  RunConfig bad = cfg;
  bad.concurrency = 0;
  CHECK_THROWS_AS(validate(bad), UsageError);

  bad = cfg;
  bad.method = Method::Stsqa;  // no stsqa section, no library
  CHECK_THROWS_AS(validate(bad), UsageError);

  bad = stsqa_config(tmp, "hc4.jsonl", 9);
  CHECK_THROWS_AS(validate(bad), UsageError);

  bad = cfg;
  bad.subset = SubsetSpec{};
  bad.subset->n = 0;
  CHECK_THROWS_AS(validate(bad), UsageError);

  bad = cfg;
  bad.cache_dir.clear();
  CHECK_THROWS_AS(validate(bad), UsageError);

  bad = cfg;
  bad.source.path.clear();
  CHECK_THROWS_AS(validate(bad), UsageError);
}

TEST_CASE("report format parsing and emission", "[runner]") {
  CHECK(parse_report_format("json") == ReportFormat::Json);
  CHECK(parse_report_format("CSV") == ReportFormat::Csv);
  CHECK(parse_report_format("markdown") == ReportFormat::Markdown);
  CHECK(parse_report_format("md") == ReportFormat::Markdown);
  CHECK_THROWS_AS(parse_report_format("yaml"), UsageError);

  TempDir tmp;
  EvalReport r;
  r.dataset = "d";
  std::vector<std::filesystem::path> written =
      emit_report(r, {ReportFormat::Json, ReportFormat::Markdown}, tmp.path());
  REQUIRE(written.size() == 2);
  CHECK(std::filesystem::exists(tmp / "report.json"));
  CHECK(std::filesystem::exists(tmp / "report.md"));
  CHECK_FALSE(std::filesystem::exists(tmp / "report.csv"));
}
