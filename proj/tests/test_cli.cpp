// End-to-end tests for the refalign binary. The path of the binary under
// test arrives as the first positional argument (see tests/CMakeLists.txt),
// so this suite carries its own doctest main instead of the shared one.
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "refalign/refalign.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using testutil::TempDir;

namespace {

std::string g_cli_path;

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (const char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += '\'';
  return out;
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const TempDir& dir, const std::vector<std::string>& args) {
  static int counter = 0;
  const std::string out_path = dir.file(".stdout." + std::to_string(counter));
  const std::string err_path = dir.file(".stderr." + std::to_string(counter));
  ++counter;

  std::string cmd = shell_quote(g_cli_path);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " >" + shell_quote(out_path) + " 2>" + shell_quote(err_path);

  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  CliResult r;
  if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
  r.out = testutil::read_file(out_path);
  r.err = testutil::read_file(err_path);
  return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

refalign::FeatureMatrix make_features(int rows, int cols, float base) {
  refalign::FeatureMatrix fm;
  fm.rows = static_cast<std::uint32_t>(rows);
  fm.cols = static_cast<std::uint32_t>(cols);
  fm.data.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < fm.data.size(); ++i) {
    fm.data[i] = base + 0.25f * static_cast<float>(i % 7) - 0.5f * static_cast<float>(i % 3);
  }
  return fm;
}

// Minimal two-image training directory: three targeted queries (one via a
// ground-truth mask) plus one ride-along without supervision.
void write_dataset(const fs::path& root) {
  fs::create_directories(root / "scenes");
  fs::create_directories(root / "features");
  fs::create_directories(root / "deps");
  fs::create_directories(root / "embeddings");

  auto scene_a = testutil::make_scene(3, {{0, 1}, {1, 2}}, {"person", "cup", "table"}, "img-a");
  refalign::save_scene_graph(scene_a, (root / "scenes" / "img-a.json").string());
  refalign::save_features(make_features(3, 3, 0.5f), (root / "features" / "img-a.dgf").string());

  auto scene_b = testutil::make_scene(2, {{0, 1}}, {"dog", "sofa"}, "img-b");
  refalign::save_scene_graph(scene_b, (root / "scenes" / "img-b.json").string());
  refalign::save_features(make_features(2, 3, -0.25f), (root / "features" / "img-b.dgf").string());

  const auto add_query = [&root](const std::string& qid, const std::vector<int>& heads) {
    refalign::save_dependency_graph(testutil::make_dep(heads, qid),
                                    (root / "deps" / (qid + ".json")).string());
    refalign::save_features(make_features(static_cast<int>(heads.size()), 2, 1.0f),
                            (root / "embeddings" / (qid + ".dgf")).string());
  };
  add_query("q-a1", {-1, 0});
  add_query("q-a2", {-1, 0, 0});
  add_query("q-b1", {-1});
  add_query("q-b2", {-1, 0});

  std::vector<refalign::QueryRecord> queries(4);
  queries[0] = {"q-a1", "img-a", "the cup", 1, std::nullopt};
  queries[1] = {"q-a2", "img-a", "the table next to the cup", std::nullopt,
                testutil::stripe_mask(16, 16, 2)};
  queries[2] = {"q-b1", "img-b", "the dog", 0, std::nullopt};
  queries[3] = {"q-b2", "img-b", "unlabeled extra", std::nullopt, std::nullopt};
  refalign::save_queries(queries, (root / "queries.jsonl").string());
}

void write_mask_line(std::ostream& out, const std::string& id, const refalign::Mask& m) {
  json j = refalign::mask_to_json(m);
  j["query_id"] = id;
  out << j.dump() << '\n';
}

// Two scenes with degree-2 candidates: an ambiguous chair pair plus the
// person/cup/wall arrangement used across the corpus tests.
void write_corpus_scenes(const fs::path& dir) {
  fs::create_directories(dir);
  auto people = testutil::make_scene(4, {}, {"person", "person", "cup", "wall"}, "img-7");
  people.relations = {{0, 2, "holding"}, {0, 3, "leaning on"}, {1, 3, "touching"}};
  refalign::save_scene_graph(people, (dir / "img-7.json").string());

  auto chairs = testutil::make_scene(3, {}, {"chair", "chair", "table"}, "img-8");
  chairs.relations = {{0, 2, "next to"}, {1, 2, "next to"}, {0, 2, "near"}, {1, 2, "near"}};
  refalign::save_scene_graph(chairs, (dir / "img-8.json").string());
}

}  // namespace

TEST_CASE("version, help and selftest") {
  TempDir dir;

  SUBCASE("--version prints the release string") {
    const auto r = run_cli(dir, {"--version"});
    CHECK(r.code == 0);
    CHECK(contains(r.out, "refalign 0.1.0"));
  }

  SUBCASE("--help exits cleanly and lists the subcommands") {
    const auto r = run_cli(dir, {"--help"});
    CHECK(r.code == 0);
    for (const char* cmd : {"align", "train", "infer", "eval", "corpus", "selftest"}) {
      CHECK(contains(r.out, cmd));
    }
  }

  SUBCASE("selftest passes every embedded check") {
    const auto r = run_cli(dir, {"selftest"});
    CHECK(r.code == 0);
    CHECK(contains(r.out, "selftest: 8/8 checks passed"));
    CHECK(!contains(r.out, "FAIL"));
    CHECK(contains(r.err, "refalign 0.1.0 (seed 42)"));
  }

  SUBCASE("--quiet silences the log stream") {
    const auto r = run_cli(dir, {"--quiet", "selftest"});
    CHECK(r.code == 0);
    CHECK(r.err.empty());
    CHECK(contains(r.out, "selftest: 8/8 checks passed"));
  }
}

TEST_CASE("argument errors exit with code 1") {
  TempDir dir;

  SUBCASE("no subcommand") {
    const auto r = run_cli(dir, {});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "error:"));
  }

  SUBCASE("unknown subcommand") {
    const auto r = run_cli(dir, {"frobnicate"});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "error:"));
  }

  SUBCASE("unknown flag") {
    const auto r = run_cli(dir, {"selftest", "--bogus"});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "error:"));
  }

  SUBCASE("missing required option") {
    const auto r = run_cli(dir, {"align", "--scene", dir.file("s.json")});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "error:"));
    CHECK(contains(r.err, "--dep"));
  }
}

TEST_CASE("align subcommand") {
  TempDir dir;
  const auto scene = testutil::make_scene(3, {{0, 1}, {1, 2}}, {"person", "cup", "table"});
  refalign::save_scene_graph(scene, dir.file("scene.json"));
  refalign::save_dependency_graph(testutil::make_dep({-1, 0, 0}, "q-7"), dir.file("dep.json"));

  SUBCASE("writes an alignment report") {
    const auto r = run_cli(dir, {"align", "--scene", dir.file("scene.json"), "--dep",
                                 dir.file("dep.json"), "--out", dir.file("align.json")});
    CHECK(r.code == 0);
    CHECK(contains(r.err, "aligned 3 objects with 3 words"));

    const json doc = json::parse(testutil::read_file(dir.file("align.json")));
    CHECK(doc["query_id"] == "q-7");
    REQUIRE(doc["alpha"].size() == 3);
    for (const auto& row : doc["alpha"]) {
      REQUIRE(row.size() == 3);
      for (const auto& v : row) {
        const double a = v.get<double>();
        CHECK(a > 0.0);
        CHECK(a <= 1.0);
      }
    }
    REQUIRE(doc["matches"].size() == 3);
    for (const auto& m : doc["matches"]) {
      REQUIRE(m.size() == 2);
      CHECK(m[0].get<int>() >= 0);
      CHECK(m[0].get<int>() < 3);
      CHECK(m[1].get<int>() >= 0);
      CHECK(m[1].get<int>() < 3);
    }
  }

  SUBCASE("defaults to stdout") {
    const auto r = run_cli(dir, {"--quiet", "align", "--scene", dir.file("scene.json"), "--dep",
                                 dir.file("dep.json")});
    CHECK(r.code == 0);
    CHECK(r.err.empty());
    const json doc = json::parse(r.out);
    CHECK(doc.contains("alpha"));
  }

  SUBCASE("same seed, same bytes") {
    const std::vector<std::string> args{"align",  "--scene", dir.file("scene.json"),
                                        "--dep",  dir.file("dep.json"),
                                        "--out",  dir.file("a.json")};
    CHECK(run_cli(dir, args).code == 0);
    const std::string first = testutil::read_file(dir.file("a.json"));
    CHECK(run_cli(dir, args).code == 0);
    CHECK(testutil::read_file(dir.file("a.json")) == first);
  }

  SUBCASE("explicit landmark count") {
    const auto r = run_cli(dir, {"align", "--scene", dir.file("scene.json"), "--dep",
                                 dir.file("dep.json"), "--landmarks", "2", "--out",
                                 dir.file("lm.json")});
    CHECK(r.code == 0);
  }

  SUBCASE("missing input file is a data error") {
    const auto r = run_cli(dir, {"align", "--scene", dir.file("absent.json"), "--dep",
                                 dir.file("dep.json")});
    CHECK(r.code == 2);
    CHECK(contains(r.err, "error:"));
  }

  SUBCASE("invalid signature configuration is an internal error") {
    const auto r = run_cli(dir, {"align", "--scene", dir.file("scene.json"), "--dep",
                                 dir.file("dep.json"), "--hops", "0"});
    CHECK(r.code == 3);
    CHECK(contains(r.err, "error: SignatureConfig: hops must be >= 1"));
  }
}

TEST_CASE("train subcommand") {
  TempDir dir;
  const fs::path data = dir.path() / "data";
  write_dataset(data);

  const std::vector<std::string> base{"train",        "--data",  data.string(),
                                      "--params-out", dir.file("model.dgp"),
                                      "--epochs",     "2",
                                      "--batch",      "2",
                                      "--hidden",     "4",
                                      "--patience",   "0"};

  SUBCASE("produces a loadable checkpoint and a loss history") {
    const auto r = run_cli(dir, base);
    CHECK(r.code == 0);
    CHECK(contains(r.err, "dataset: 4 examples (3 trainable)"));
    CHECK(contains(r.err, "trained 2 epochs"));

    const auto params = refalign::feat::load_checkpoint(dir.file("model.dgp"));
    CHECK(params.visual_dim() == 3);
    CHECK(params.text_dim() == 2);
    CHECK(params.hidden_dim() == 4);

    const std::string csv = testutil::read_file(dir.file("model.dgp.loss.csv"));
    CHECK(csv.rfind("epoch,mean_loss\n1,", 0) == 0);
    CHECK(contains(csv, "\n2,"));
  }

  SUBCASE("loss history can be redirected") {
    auto args = base;
    args.insert(args.end(), {"--loss-out", dir.file("history.csv")});
    CHECK(run_cli(dir, args).code == 0);
    CHECK(fs::exists(dir.file("history.csv")));
    CHECK(!fs::exists(dir.file("model.dgp.loss.csv")));
  }

  SUBCASE("same seed reproduces the checkpoint bit for bit") {
    CHECK(run_cli(dir, base).code == 0);
    const std::string first = testutil::read_file(dir.file("model.dgp"));
    const std::string first_csv = testutil::read_file(dir.file("model.dgp.loss.csv"));
    CHECK(run_cli(dir, base).code == 0);
    CHECK(testutil::read_file(dir.file("model.dgp")) == first);
    CHECK(testutil::read_file(dir.file("model.dgp.loss.csv")) == first_csv);
  }

  SUBCASE("resume continues from a compatible checkpoint") {
    CHECK(run_cli(dir, base).code == 0);
    auto args = base;
    args.insert(args.end(), {"--resume", dir.file("model.dgp")});
    CHECK(run_cli(dir, args).code == 0);
  }

  SUBCASE("resume rejects mismatched dimensions") {
    refalign::feat::save_checkpoint(refalign::feat::init_params(5, 2, 4, 1), dir.file("wide.dgp"));
    auto args = base;
    args.insert(args.end(), {"--resume", dir.file("wide.dgp")});
    const auto r = run_cli(dir, args);
    CHECK(r.code == 2);
    CHECK(contains(r.err, "checkpoint dimensions do not match the dataset"));
  }

  SUBCASE("missing dataset directory is a data error") {
    const auto r = run_cli(dir, {"train", "--data", dir.file("nowhere"), "--params-out",
                                 dir.file("m.dgp")});
    CHECK(r.code == 2);
    CHECK(contains(r.err, "error:"));
  }

  SUBCASE("out-of-range explicit target is a data error") {
    const fs::path bad = dir.path() / "bad";
    write_dataset(bad);
    std::vector<refalign::QueryRecord> queries{
        {"q-a1", "img-a", "the cup", 9, std::nullopt}};
    refalign::save_queries(queries, (bad / "queries.jsonl").string());
    const auto r = run_cli(dir, {"train", "--data", bad.string(), "--params-out",
                                 dir.file("m.dgp")});
    CHECK(r.code == 2);
    CHECK(contains(r.err, "q-a1: target_object_id 9 is out of range"));
  }
}

TEST_CASE("infer subcommand") {
  TempDir dir;
  const fs::path data = dir.path() / "data";
  write_dataset(data);
  refalign::feat::save_checkpoint(refalign::feat::init_params(3, 2, 4, 7), dir.file("model.dgp"));

  const std::vector<std::string> args{"infer",
                                      "--scene", (data / "scenes" / "img-a.json").string(),
                                      "--dep", (data / "deps" / "q-a1.json").string(),
                                      "--features", (data / "features" / "img-a.dgf").string(),
                                      "--embeddings", (data / "embeddings" / "q-a1.dgf").string(),
                                      "--params", dir.file("model.dgp")};

  SUBCASE("emits scores and the winning mask") {
    auto with_out = args;
    with_out.insert(with_out.end(), {"--out", dir.file("pred.json")});
    const auto r = run_cli(dir, with_out);
    CHECK(r.code == 0);
    CHECK(contains(r.err, "selected object "));

    const json doc = json::parse(testutil::read_file(dir.file("pred.json")));
    CHECK(doc["query_id"] == "q-a1");
    const int selected = doc["selected"].get<int>();
    REQUIRE(selected >= 0);
    REQUIRE(selected < 3);
    REQUIRE(doc["scores"].size() == 3);
    for (const auto& s : doc["scores"]) {
      const double v = s.get<double>();
      CHECK(v >= 1e-7);
      CHECK(v <= 1.0 - 1e-7);
    }

    // The reported mask is the stored mask of the winning candidate.
    const auto expected = testutil::stripe_mask(16, 16, selected);
    CHECK(doc["h"].get<int>() == expected.height);
    CHECK(doc["w"].get<int>() == expected.width);
    CHECK(doc["rle"].get<std::vector<std::int64_t>>() == expected.counts);
  }

  SUBCASE("defaults to stdout") {
    auto quiet = args;
    quiet.insert(quiet.begin(), "--quiet");
    const auto r = run_cli(dir, quiet);
    CHECK(r.code == 0);
    CHECK(r.err.empty());
    const json doc = json::parse(r.out);
    CHECK(doc.contains("selected"));
  }

  SUBCASE("corrupt checkpoint is a data error") {
    testutil::write_file(dir.file("junk.dgp"), "XXXX not a checkpoint");
    auto bad = args;
    bad[bad.size() - 1] = dir.file("junk.dgp");
    const auto r = run_cli(dir, bad);
    CHECK(r.code == 2);
    CHECK(contains(r.err, "error:"));
  }
}

TEST_CASE("eval subcommand") {
  TempDir dir;
  const refalign::Mask row0{4, 4, {0, 4, 12}};
  const refalign::Mask rows01{4, 4, {0, 8, 8}};
  const refalign::Mask rows12{4, 4, {4, 8, 4}};
  const refalign::Mask row3{4, 4, {12, 4}};

  {
    std::ofstream pred(dir.file("pred.jsonl"));
    write_mask_line(pred, "q1", row0);
    write_mask_line(pred, "q2", rows01);
    write_mask_line(pred, "q3", row0);
  }
  {
    std::ofstream gt(dir.file("gt.jsonl"));
    write_mask_line(gt, "q1", row0);
    write_mask_line(gt, "q2", rows12);
    write_mask_line(gt, "q3", row3);
  }

  SUBCASE("reports mIoU and precision") {
    const auto r = run_cli(dir, {"eval", "--pred", dir.file("pred.jsonl"), "--gt",
                                 dir.file("gt.jsonl"), "--out", dir.file("report.json")});
    CHECK(r.code == 0);
    // The human-readable table goes to the log stream.
    CHECK(contains(r.err, "queries   3"));
    CHECK(contains(r.err, "mIoU"));

    const json doc = json::parse(testutil::read_file(dir.file("report.json")));
    CHECK(doc["queries"] == 3);
    CHECK(doc["miou"].get<double>() == doctest::Approx(4.0 / 9.0).epsilon(1e-12));
    CHECK(doc["p@0.3"].get<double>() == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(doc["p@0.4"].get<double>() == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(doc["p@0.7"].get<double>() == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(!doc.contains("global_iou"));
  }

  SUBCASE("--global adds the cumulative ratio") {
    const auto r = run_cli(dir, {"--quiet", "eval", "--pred", dir.file("pred.jsonl"), "--gt",
                                 dir.file("gt.jsonl"), "--global", "--out", dir.file("g.json")});
    CHECK(r.code == 0);
    CHECK(r.err.empty());
    const json doc = json::parse(testutil::read_file(dir.file("g.json")));
    CHECK(doc["global_iou"].get<double>() == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }

  SUBCASE("missing ground truth is a data error") {
    {
      std::ofstream pred(dir.file("extra.jsonl"), std::ios::app);
      pred << testutil::read_file(dir.file("pred.jsonl"));
      write_mask_line(pred, "q4", row0);
    }
    const auto r = run_cli(dir, {"eval", "--pred", dir.file("extra.jsonl"), "--gt",
                                 dir.file("gt.jsonl")});
    CHECK(r.code == 2);
    CHECK(contains(r.err, "error: predictions: no ground truth for query_id q4"));
  }

  SUBCASE("empty prediction file is a data error") {
    testutil::write_file(dir.file("empty.jsonl"), "\n");
    const auto r = run_cli(dir, {"eval", "--pred", dir.file("empty.jsonl"), "--gt",
                                 dir.file("gt.jsonl")});
    CHECK(r.code == 2);
    CHECK(contains(r.err, "no prediction records"));
  }
}

TEST_CASE("corpus subcommands") {
  TempDir dir;
  const fs::path scenes = dir.path() / "scenes";
  write_corpus_scenes(scenes);

  SUBCASE("offline build generates the full candidate set") {
    const auto r = run_cli(dir, {"corpus", "build", "--scenes", scenes.string(), "--offline",
                                 "--out", dir.file("queries.jsonl"), "--review",
                                 dir.file("review.json")});
    CHECK(r.code == 0);
    CHECK(contains(r.err, "generated 5 queries from 2 scenes (2 flagged for review)"));

    const auto queries = refalign::corpus::load_generated(dir.file("queries.jsonl"));
    REQUIRE(queries.size() == 5);
    const std::vector<std::string> ids{"img-7:00", "img-7:03", "img-8:00", "img-8:01",
                                       "img-8:02"};
    const std::vector<int> targets{0, 3, 0, 1, 2};
    for (std::size_t i = 0; i < queries.size(); ++i) {
      CHECK(queries[i].query_id == ids[i]);
      CHECK(queries[i].target_object_id == targets[i]);
      CHECK(!queries[i].final.empty());
    }
    // The twin chairs are indistinguishable by their relations.
    CHECK(queries[2].flagged_for_review);
    CHECK(queries[3].flagged_for_review);
    CHECK(!queries[4].flagged_for_review);

    const std::string review = testutil::read_file(dir.file("review.json"));
    CHECK(contains(review, "img-7:00"));

    SUBCASE("stats summarize the build") {
      const auto s = run_cli(dir, {"corpus", "stats", "--queries", dir.file("queries.jsonl"),
                                   "--scenes", scenes.string(), "--out", dir.file("stats.json")});
      CHECK(s.code == 0);
      const json doc = json::parse(testutil::read_file(dir.file("stats.json")));
      CHECK(doc["query_count"] == 5);
      CHECK(doc["image_count"] == 2);
      CHECK(doc["avg_query_length"].get<double>() > 0.0);
      CHECK(doc["avg_objects_per_query"].get<double>() > 0.0);
    }
  }

  SUBCASE("offline build is deterministic") {
    const std::vector<std::string> args{"corpus", "build", "--scenes", scenes.string(),
                                        "--offline", "--out", dir.file("q.jsonl")};
    CHECK(run_cli(dir, args).code == 0);
    const std::string first = testutil::read_file(dir.file("q.jsonl"));
    CHECK(run_cli(dir, args).code == 0);
    CHECK(testutil::read_file(dir.file("q.jsonl")) == first);
  }

  SUBCASE("an endpoint is required unless offline") {
    const auto r = run_cli(dir, {"corpus", "build", "--scenes", scenes.string()});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "--endpoint is required unless --offline is set"));
  }

  SUBCASE("endpoint and offline are mutually exclusive") {
    const auto r = run_cli(dir, {"corpus", "build", "--scenes", scenes.string(), "--offline",
                                 "--endpoint", "http://localhost:1"});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "error:"));
  }

  SUBCASE("stats on a missing file is a data error") {
    const auto r = run_cli(dir, {"corpus", "stats", "--queries", dir.file("absent.jsonl"),
                                 "--scenes", scenes.string()});
    CHECK(r.code == 2);
    CHECK(contains(r.err, "error:"));
  }
}

TEST_CASE("config file") {
  TempDir dir;
  const auto scene = testutil::make_scene(2, {{0, 1}});
  refalign::save_scene_graph(scene, dir.file("scene.json"));
  refalign::save_dependency_graph(testutil::make_dep({-1, 0}), dir.file("dep.json"));

  SUBCASE("sections feed subcommand options") {
    testutil::write_file(dir.file("cfg.ini"), "seed=7\n\n[align]\nscene=" + dir.file("scene.json") +
                                                  "\ndep=" + dir.file("dep.json") +
                                                  "\nout=" + dir.file("from-config.json") + "\n");
    const auto r = run_cli(dir, {"--config", dir.file("cfg.ini"), "align"});
    CHECK(r.code == 0);
    CHECK(contains(r.err, "(seed 7)"));
    const json doc = json::parse(testutil::read_file(dir.file("from-config.json")));
    CHECK(doc.contains("matches"));
  }

  SUBCASE("command line wins over the config") {
    testutil::write_file(dir.file("cfg.ini"), "[align]\nscene=" + dir.file("absent.json") +
                                                  "\ndep=" + dir.file("dep.json") + "\n");
    const auto r = run_cli(dir, {"--config", dir.file("cfg.ini"), "align", "--scene",
                                 dir.file("scene.json"), "--out", dir.file("cli-wins.json")});
    CHECK(r.code == 0);
    CHECK(fs::exists(dir.file("cli-wins.json")));
  }

  SUBCASE("unknown keys are rejected") {
    testutil::write_file(dir.file("cfg.ini"), "[align]\nscene=" + dir.file("scene.json") +
                                                  "\ndep=" + dir.file("dep.json") +
                                                  "\nbogus=1\n");
    const auto r = run_cli(dir, {"--config", dir.file("cfg.ini"), "align"});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "error:"));
  }

  SUBCASE("missing config file is a parse error") {
    const auto r = run_cli(dir, {"--config", dir.file("absent.ini"), "selftest"});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "error:"));
  }
}

int main(int argc, char** argv) {
  std::vector<char*> doctest_args;
  doctest_args.push_back(argv[0]);
  for (int i = 1; i < argc; ++i) {
    if (g_cli_path.empty() && argv[i][0] != '-') {
      g_cli_path = argv[i];
    } else {
      doctest_args.push_back(argv[i]);
    }
  }
  if (g_cli_path.empty()) {
    std::fprintf(stderr, "usage: test_cli <refalign-binary> [doctest options]\n");
    return 1;
  }
  doctest::Context ctx;
  ctx.applyCommandLine(static_cast<int>(doctest_args.size()), doctest_args.data());
  return ctx.run();
}
