#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "refalign/http_transport.hpp"
#include "refalign/refalign.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 42;
  bool quiet = false;
};

// Log stream is stderr so results stay pipeable on stdout.
void echo(const GlobalOpts& g, const std::string& line) {
  if (!g.quiet) std::cerr << line << '\n';
}

void write_text(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::cout << content;
    return;
  }
  std::ofstream out(out_path, std::ios::trunc | std::ios::binary);
  if (!out) throw refalign::DataError(out_path + ": cannot open file for writing");
  out << content;
  if (!out) throw refalign::DataError(out_path + ": write failed");
}

std::string format_double(double v, const char* spec = "%.12g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Path components derived from ids must stay inside the dataset tree.
void check_id_is_path_safe(const std::string& id, const std::string& what) {
  if (id.empty() || id.find('/') != std::string::npos || id.find('\\') != std::string::npos ||
      id.find("..") != std::string::npos) {
    throw refalign::DataError(what + " \"" + id + "\" is not usable as a file name");
  }
}

// ---- shared option groups ------------------------------------------

struct SignatureOpts {
  int hops = 2;
  int bins = 6;
  double discount = 0.5;
  double gamma = 1.0;
  int landmarks = 0;  // non-positive -> module default

  refalign::structal::SignatureConfig config() const {
    refalign::structal::SignatureConfig cfg;
    cfg.hops = hops;
    cfg.bins = bins;
    cfg.discount = discount;
    cfg.gamma = gamma;
    cfg.validate();
    return cfg;
  }
};

void add_signature_flags(CLI::App* cmd, SignatureOpts& o) {
  cmd->add_option("--hops", o.hops, "structural signature neighborhood depth")
      ->capture_default_str();
  cmd->add_option("--bins", o.bins, "log2 degree bins per histogram")->capture_default_str();
  cmd->add_option("--discount", o.discount, "per-hop signature discount")->capture_default_str();
  cmd->add_option("--gamma", o.gamma, "Gaussian kernel scale")->capture_default_str();
  cmd->add_option("--landmarks", o.landmarks,
                  "landmark count for the kernel factorization (0 = auto)")
      ->capture_default_str();
}

// ---- align -----------------------------------------------------------

struct AlignOpts {
  std::string scene_path;
  std::string dep_path;
  std::string out_path;
  SignatureOpts sig;
};

int run_align(const AlignOpts& o, const GlobalOpts& g) {
  const auto scene = refalign::load_scene_graph(o.scene_path);
  const auto dep = refalign::load_dependency_graph(o.dep_path);
  const auto map = refalign::structal::align_graphs(scene, dep, o.sig.config(), o.sig.landmarks,
                                                    g.seed);
  const auto matches = refalign::structal::greedy_match(map);

  json alpha = json::array();
  for (Eigen::Index j = 0; j < map.alpha.rows(); ++j) {
    json row = json::array();
    for (Eigen::Index i = 0; i < map.alpha.cols(); ++i) row.push_back(map.alpha(j, i));
    alpha.push_back(std::move(row));
  }
  json match_list = json::array();
  for (const auto& [obj, word] : matches) match_list.push_back(json::array({obj, word}));

  const json out{{"query_id", dep.query_id}, {"alpha", alpha}, {"matches", match_list}};
  write_text(o.out_path, out.dump(2) + "\n");
  echo(g, "aligned " + std::to_string(map.objects()) + " objects with " +
              std::to_string(map.words()) + " words");
  return 0;
}

// ---- train -----------------------------------------------------------

struct TrainOpts {
  std::string data_dir;
  std::string params_out;
  std::string loss_out;  // default: <params-out>.loss.csv
  std::string resume;
  double lr = refalign::train::kDefaultLearningRate;
  int batch = refalign::train::kDefaultBatchSize;
  int epochs = 200;
  int hidden = refalign::feat::kDefaultHiddenDim;
  double weight_decay = refalign::train::kDefaultWeightDecay;
  int patience = 20;
  double min_delta = 1e-5;
  SignatureOpts sig;
};

struct Dataset {
  std::vector<refalign::train::TrainExample> examples;
  int visual_dim = 0;
  int text_dim = 0;
};

Dataset load_dataset(const std::string& dir, const SignatureOpts& sig, std::uint64_t seed) {
  const fs::path root(dir);
  const auto queries = refalign::load_queries((root / "queries.jsonl").string());
  if (queries.empty()) throw refalign::DataError(dir + ": queries.jsonl holds no records");

  std::map<std::string, refalign::SceneGraph> scenes;
  Dataset ds;
  for (const auto& q : queries) {
    check_id_is_path_safe(q.query_id, "query_id");
    check_id_is_path_safe(q.image_id, "image_id");
    auto [it, fresh] = scenes.try_emplace(q.image_id);
    if (fresh) {
      it->second = refalign::load_scene_graph((root / "scenes" / (q.image_id + ".json")).string());
      const auto fm = refalign::load_features((root / "features" / (q.image_id + ".dgf")).string());
      refalign::attach_object_features(it->second, fm);
    }
    const refalign::SceneGraph& scene = it->second;

    auto dep = refalign::load_dependency_graph((root / "deps" / (q.query_id + ".json")).string());
    const auto emb = refalign::load_features((root / "embeddings" / (q.query_id + ".dgf")).string());
    refalign::attach_token_embeddings(dep, emb);

    refalign::train::TrainExample ex;
    ex.query_id = q.query_id;
    ex.object_features = refalign::feat::object_feature_matrix(scene);
    ex.token_embeddings = refalign::feat::token_embedding_matrix(dep);
    ex.alpha = refalign::structal::align_graphs(scene, dep, sig.config(), sig.landmarks, seed).alpha;
    ex.valid.assign(scene.objects.size(), true);
    if (q.gt_mask) {
      std::vector<refalign::Mask> candidates;
      candidates.reserve(scene.objects.size());
      for (const auto& obj : scene.objects) candidates.push_back(obj.mask);
      ex.target = refalign::train::assign_target(candidates, *q.gt_mask);
    } else if (q.target_object_id) {
      const int t = *q.target_object_id;
      if (t < 0 || t >= scene.object_count()) {
        throw refalign::DataError(q.query_id + ": target_object_id " + std::to_string(t) +
                                  " is out of range");
      }
      ex.target = t;
    }

    if (ds.visual_dim == 0) {
      ds.visual_dim = static_cast<int>(ex.object_features.cols());
      ds.text_dim = static_cast<int>(ex.token_embeddings.cols());
    } else if (ds.visual_dim != ex.object_features.cols() ||
               ds.text_dim != ex.token_embeddings.cols()) {
      throw refalign::DataError(q.query_id + ": feature dimensions disagree with earlier records");
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

int run_train(const TrainOpts& o, const GlobalOpts& g) {
  const Dataset ds = load_dataset(o.data_dir, o.sig, g.seed);

  refalign::feat::ModelParams params;
  if (!o.resume.empty()) {
    params = refalign::feat::load_checkpoint(o.resume);
    if (params.visual_dim() != ds.visual_dim || params.text_dim() != ds.text_dim) {
      throw refalign::DataError(o.resume + ": checkpoint dimensions do not match the dataset");
    }
  } else {
    params = refalign::feat::init_params(ds.visual_dim, ds.text_dim, o.hidden, g.seed);
  }

  refalign::train::Optimizer opt;
  opt.lr = o.lr;
  opt.weight_decay = o.weight_decay;

  refalign::train::TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.seed = g.seed;
  cfg.patience = o.patience;
  cfg.min_delta = o.min_delta;

  std::size_t trainable = 0;
  for (const auto& ex : ds.examples) {
    if (ex.target) ++trainable;
  }
  echo(g, "dataset: " + std::to_string(ds.examples.size()) + " examples (" +
              std::to_string(trainable) + " trainable)");

  const auto result = refalign::train::fit(ds.examples, std::move(params), opt, cfg);

  refalign::feat::save_checkpoint(result.params, o.params_out);
  const std::string loss_path = o.loss_out.empty() ? o.params_out + ".loss.csv" : o.loss_out;
  std::ostringstream csv;
  csv << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    csv << (e + 1) << ',' << format_double(result.epoch_losses[e]) << '\n';
  }
  write_text(loss_path, csv.str());

  echo(g, "trained " + std::to_string(result.epochs_run) + " epochs" +
              (result.stopped_early ? " (stopped early)" : "") + ", final loss " +
              format_double(result.epoch_losses.back()));
  return 0;
}

// ---- infer -----------------------------------------------------------

struct InferOpts {
  std::string scene_path;
  std::string dep_path;
  std::string features_path;
  std::string embeddings_path;
  std::string params_path;
  std::string out_path;
  SignatureOpts sig;
};

int run_infer(const InferOpts& o, const GlobalOpts& g) {
  auto scene = refalign::load_scene_graph(o.scene_path);
  refalign::attach_object_features(scene, refalign::load_features(o.features_path));
  auto dep = refalign::load_dependency_graph(o.dep_path);
  refalign::attach_token_embeddings(dep, refalign::load_features(o.embeddings_path));
  const auto params = refalign::feat::load_checkpoint(o.params_path);

  const auto map = refalign::structal::align_graphs(scene, dep, o.sig.config(), o.sig.landmarks,
                                                    g.seed);
  const auto pred = refalign::feat::predict(scene, dep, map, params);

  json scores = json::array();
  for (Eigen::Index j = 0; j < pred.scores.scores.size(); ++j) {
    scores.push_back(pred.scores.scores[j]);
  }
  const json out{{"query_id", dep.query_id},
                 {"selected", pred.selected},
                 {"scores", scores},
                 {"h", pred.mask.height},
                 {"w", pred.mask.width},
                 {"rle", pred.mask.counts}};
  write_text(o.out_path, out.dump() + "\n");
  echo(g, "selected object " + std::to_string(pred.selected) + " with score " +
              format_double(pred.scores.scores[pred.selected]));
  return 0;
}

// ---- eval ------------------------------------------------------------

struct EvalOpts {
  std::string pred_path;
  std::string gt_path;
  std::string out_path;
  bool global_iou = false;
};

std::vector<std::pair<std::string, refalign::Mask>> load_mask_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw refalign::DataError(path + ": cannot open file");
  std::vector<std::pair<std::string, refalign::Mask>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    bool blank = true;
    for (const char c : line) {
      if (!std::isspace(static_cast<unsigned char>(c))) {
        blank = false;
        break;
      }
    }
    if (blank) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const json j = refalign::detail::parse_line(line, where);
    out.emplace_back(refalign::detail::string_field(j, "query_id", where),
                     refalign::mask_from_json(j, where));
  }
  return out;
}

int run_eval(const EvalOpts& o, const GlobalOpts& g) {
  std::vector<refalign::metrics::PredictionRecord> preds;
  for (auto& [id, mask] : load_mask_lines(o.pred_path)) {
    preds.push_back(refalign::metrics::PredictionRecord{id, std::move(mask), -1});
  }
  std::vector<refalign::metrics::GroundTruthRecord> gts;
  for (auto& [id, mask] : load_mask_lines(o.gt_path)) {
    gts.push_back(refalign::metrics::GroundTruthRecord{id, std::move(mask)});
  }
  if (preds.empty()) throw refalign::DataError(o.pred_path + ": no prediction records");

  const auto results = refalign::metrics::evaluate(preds, gts);
  const auto rep = refalign::metrics::report(results);

  json out{{"queries", rep.count}, {"miou", rep.miou}};
  for (std::size_t t = 0; t < refalign::metrics::kPrecisionThresholds.size(); ++t) {
    out["p@" + format_double(refalign::metrics::kPrecisionThresholds[t], "%.1f")] =
        rep.precision[t];
  }
  if (o.global_iou) out["global_iou"] = refalign::metrics::global_iou(preds, gts);

  write_text(o.out_path, out.dump(2) + "\n");
  if (!g.quiet) std::cerr << refalign::metrics::format_report(rep);
  return 0;
}

// ---- corpus ----------------------------------------------------------

struct CorpusBuildOpts {
  std::string scenes_path;
  std::string out_path;
  std::string review_path;
  std::string lexicon_path;
  bool offline = false;
  std::string endpoint;
  std::string model = "gpt-3.5-turbo";
  int max_words = 20;
  int min_relations = 2;
  int concurrency = 4;
};

std::map<std::string, refalign::SceneGraph> load_scene_collection(const std::string& path) {
  std::map<std::string, refalign::SceneGraph> scenes;
  const auto add = [&scenes](const std::string& file) {
    refalign::SceneGraph scene = refalign::load_scene_graph(file);
    const std::string id = scene.image_id;
    if (!scenes.emplace(id, std::move(scene)).second) {
      throw refalign::DataError(file + ": duplicate image_id " + id);
    }
  };
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") {
        files.push_back(entry.path().string());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw refalign::DataError(path + ": no .json scene files found");
    for (const auto& f : files) add(f);
  } else {
    add(path);
  }
  return scenes;
}

int run_corpus_build(const CorpusBuildOpts& o, const GlobalOpts& g) {
  const auto scenes = load_scene_collection(o.scenes_path);
  const refalign::corpus::Lexicon lexicon = o.lexicon_path.empty()
                                                ? refalign::corpus::Lexicon::defaults()
                                                : refalign::corpus::load_lexicon(o.lexicon_path);

  std::unique_ptr<refalign::llm::LlmClient> client;
  if (o.offline) {
    client = std::make_unique<refalign::corpus::OfflineClient>();
  } else {
    if (o.endpoint.empty()) {
      throw CLI::ValidationError("corpus build", "--endpoint is required unless --offline is set");
    }
    refalign::llm::HttpOptions http;
    http.model = o.model;
    client = refalign::llm::make_http_client(o.endpoint, std::move(http));
  }

  refalign::corpus::BuildOptions build;
  build.min_relations = o.min_relations;
  build.max_words = o.max_words;
  build.concurrency = o.concurrency;

  const auto queries = refalign::corpus::build_corpus(scenes, lexicon, *client, build);

  std::ostringstream lines;
  refalign::corpus::save_generated(queries, lines);
  write_text(o.out_path, lines.str());
  if (!o.review_path.empty()) refalign::corpus::export_review(queries, o.review_path);

  std::size_t flagged = 0;
  for (const auto& q : queries) {
    if (q.flagged_for_review) ++flagged;
  }
  echo(g, "generated " + std::to_string(queries.size()) + " queries from " +
              std::to_string(scenes.size()) + " scenes (" + std::to_string(flagged) +
              " flagged for review)");
  return 0;
}

struct CorpusStatsOpts {
  std::string queries_path;
  std::string scenes_path;
  std::string out_path;
};

int run_corpus_stats(const CorpusStatsOpts& o, const GlobalOpts& g) {
  const auto queries = refalign::corpus::load_generated(o.queries_path);
  const auto scenes = load_scene_collection(o.scenes_path);
  const auto stats = refalign::corpus::corpus_stats(queries, scenes);
  write_text(o.out_path, refalign::corpus::stats_to_json(stats).dump(2) + "\n");
  echo(g, "stats over " + std::to_string(stats.query_count) + " queries");
  return 0;
}

// ---- selftest ----------------------------------------------------------

int run_selftest(const GlobalOpts& g) {
  int failures = 0;
  int total = 0;
  const auto check = [&](const char* name, bool ok) {
    ++total;
    if (!ok) ++failures;
    std::cout << (ok ? "ok" : "FAIL") << " " << name << "\n";
  };

  using namespace refalign;

  check("rle round-trip", [] {
    rng::Engine eng(9);
    for (int trial = 0; trial < 25; ++trial) {
      Bitmap bm;
      bm.height = 1 + static_cast<int>(rng::bounded(eng, 8));
      bm.width = 1 + static_cast<int>(rng::bounded(eng, 8));
      bm.data.assign(static_cast<std::size_t>(bm.height * bm.width), 0);
      for (auto& px : bm.data) px = static_cast<std::uint8_t>(rng::bounded(eng, 2));
      if (!(mask_decode(mask_encode(bm)) == bm)) return false;
    }
    return true;
  }());

  check("suffix rewrite", corpus::rewrite_suffixes("person1 is next to person2") ==
                              "the person is next to another person" &&
                          corpus::rewrite_suffixes(
                              "the floor has person1, person2, and person3 standing on it") ==
                              "the floor has multiple people standing on it");

  check("offline generator", [] {
    corpus::PromptBundle b;
    b.opening = corpus::default_opening();
    b.target = "person";
    b.sentences = {"the person is holding the cup", "the person is leaning on the wall",
                   "the table is next to the person"};
    corpus::OfflineClient off;
    return off.complete(corpus::build_prompt(b)) ==
           "the person is next to the table, holding the cup and leaning on the wall.";
  }());

  check("attention fixture", [] {
    Eigen::MatrixXd fi(1, 1), fl(2, 1), wq(1, 1);
    fi << 2.0;
    fl << 0.0, 1.0;
    wq << 1.0;
    const auto r = feat::cross_attention(fi, fl, wq);
    return std::abs(r(0, 0) - 0.8807970779778823) < 1e-15;
  }());

  check("kernel factorization", [] {
    SceneGraph scene;
    scene.image_id = "img";
    scene.width = 4;
    scene.height = 4;
    for (int i = 0; i < 4; ++i) {
      ObjectNode o;
      o.id = i;
      o.label = "obj";
      o.bbox = {0, 0, 1, 1};
      o.mask = Mask{4, 4, {i, 1, 15 - i}};
      scene.objects.push_back(o);
    }
    scene.relations.push_back({0, 1, "next to"});
    scene.relations.push_back({1, 2, "holding"});
    scene.relations.push_back({3, 1, "near"});
    DependencyGraph dep;
    dep.query_id = "q";
    dep.tokens = {{0, "the", 1, "det"}, {1, "person", -1, "root"}, {2, "waves", 1, "dep"}};
    const auto ug = structal::make_union_graph(scene, dep);
    structal::SignatureConfig cfg;
    const auto sigs = structal::all_signatures(ug, cfg);
    const auto s = structal::similarity_matrix(sigs, cfg.gamma);
    const auto emb = structal::landmark_embed(sigs, ug.size(), 7, cfg.gamma);
    return ((emb * emb.transpose()) - s).cwiseAbs().maxCoeff() < 1e-9;
  }());

  check("mask iou fixture", [] {
    // 3x3 squares on a 4x4 grid offset by (1,1): 4 / 14
    Bitmap a{4, 4, std::vector<std::uint8_t>(16, 0)};
    Bitmap b{4, 4, std::vector<std::uint8_t>(16, 0)};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        a.data[static_cast<std::size_t>(r * 4 + c)] = 1;
        b.data[static_cast<std::size_t>((r + 1) * 4 + (c + 1))] = 1;
      }
    }
    return std::abs(metrics::mask_iou(mask_encode(a), mask_encode(b)) - 4.0 / 14.0) < 1e-12;
  }());

  check("bce fixture", [] {
    feat::ScoreVector sv;
    sv.scores = Eigen::VectorXd::Constant(2, 0.5);
    sv.valid = {true, true};
    sv.selected = 0;
    return std::abs(train::bce_loss(sv, 0) - 2.0 * std::log(2.0)) < 1e-12;
  }());

  check("report fixture", [] {
    std::vector<metrics::EvalResult> rs{{"a", 0, 0.8}, {"b", 0, 0.4}, {"c", 0, 0.2}};
    const auto rep = metrics::report(rs);
    return std::abs(rep.miou - 0.4666666666666667) < 1e-12 &&
           std::abs(rep.precision[0] - 2.0 / 3.0) < 1e-12 &&
           std::abs(rep.precision[4] - 1.0 / 3.0) < 1e-12;
  }());

  std::cout << "selftest: " << (total - failures) << "/" << total << " checks passed\n";
  if (failures > 0) return 3;
  echo(g, "selftest clean");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-modality graph alignment toolkit for referring image segmentation"};
  app.set_version_flag("--version", std::string(refalign::kProgramName) + " " + refalign::kVersion);
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a config file (INI sections per subcommand)");
  app.allow_config_extras(false);

  GlobalOpts global;
  app.add_option("--seed", global.seed, "seed for every random choice")->capture_default_str();
  app.add_flag("--quiet", global.quiet, "suppress the log stream");

  // align
  AlignOpts align;
  CLI::App* align_cmd = app.add_subcommand("align", "structurally align a scene graph with a parse");
  align_cmd->add_option("--scene", align.scene_path, "scene graph JSON")->required();
  align_cmd->add_option("--dep", align.dep_path, "dependency parse JSON")->required();
  align_cmd->add_option("--out", align.out_path, "output path (default stdout)");
  add_signature_flags(align_cmd, align.sig);

  // train
  TrainOpts train;
  CLI::App* train_cmd = app.add_subcommand("train", "fit the scoring head on a dataset directory");
  train_cmd->add_option("--data", train.data_dir, "dataset directory")->required();
  train_cmd->add_option("--params-out", train.params_out, "checkpoint output path")->required();
  train_cmd->add_option("--loss-out", train.loss_out,
                        "loss history CSV path (default <params-out>.loss.csv)");
  train_cmd->add_option("--resume", train.resume, "checkpoint to continue from");
  train_cmd->add_option("--lr", train.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--batch", train.batch, "batch size")->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs, "epoch budget")->capture_default_str();
  train_cmd->add_option("--hidden", train.hidden, "hidden width of the scoring MLP")
      ->capture_default_str();
  train_cmd->add_option("--weight-decay", train.weight_decay, "decoupled weight decay")
      ->capture_default_str();
  train_cmd->add_option("--patience", train.patience, "early-stop patience in epochs (0 = off)")
      ->capture_default_str();
  train_cmd->add_option("--min-delta", train.min_delta, "loss improvement that resets patience")
      ->capture_default_str();
  add_signature_flags(train_cmd, train.sig);

  // infer
  InferOpts infer;
  CLI::App* infer_cmd = app.add_subcommand("infer", "score candidates for one scene/query pair");
  infer_cmd->add_option("--scene", infer.scene_path, "scene graph JSON")->required();
  infer_cmd->add_option("--dep", infer.dep_path, "dependency parse JSON")->required();
  infer_cmd->add_option("--features", infer.features_path, "object feature file")->required();
  infer_cmd->add_option("--embeddings", infer.embeddings_path, "token embedding file")->required();
  infer_cmd->add_option("--params", infer.params_path, "model checkpoint")->required();
  infer_cmd->add_option("--out", infer.out_path, "output path (default stdout)");
  add_signature_flags(infer_cmd, infer.sig);

  // eval
  EvalOpts eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  eval_cmd->add_option("--pred", eval.pred_path, "predictions JSONL {query_id, rle, h, w}")
      ->required();
  eval_cmd->add_option("--gt", eval.gt_path, "ground-truth JSONL {query_id, rle, h, w}")
      ->required();
  eval_cmd->add_option("--out", eval.out_path, "report path (default stdout)");
  eval_cmd->add_flag("--global", eval.global_iou,
                     "also report cumulative intersection-over-union");

  // corpus
  CLI::App* corpus_cmd = app.add_subcommand("corpus", "complex-query dataset tooling");
  corpus_cmd->require_subcommand(1);

  CorpusBuildOpts cbuild;
  CLI::App* cbuild_cmd = corpus_cmd->add_subcommand("build", "generate queries from scene graphs");
  cbuild_cmd->add_option("--scenes", cbuild.scenes_path, "scene JSON file or directory")
      ->required();
  cbuild_cmd->add_option("--out", cbuild.out_path, "queries JSONL path (default stdout)");
  cbuild_cmd->add_option("--review", cbuild.review_path, "also write a review export here");
  cbuild_cmd->add_option("--lexicon", cbuild.lexicon_path, "predicate lexicon file");
  CLI::Option* offline_flag =
      cbuild_cmd->add_flag("--offline", cbuild.offline, "use the deterministic local generator");
  cbuild_cmd->add_option("--endpoint", cbuild.endpoint, "chat-completion endpoint URL")
      ->excludes(offline_flag);
  cbuild_cmd->add_option("--model", cbuild.model, "model name sent to the endpoint")
      ->capture_default_str();
  cbuild_cmd->add_option("--max-words", cbuild.max_words, "review flag threshold, in words")
      ->capture_default_str();
  cbuild_cmd->add_option("--min-relations", cbuild.min_relations,
                         "minimum relation degree for a candidate")
      ->capture_default_str();
  cbuild_cmd->add_option("--concurrency", cbuild.concurrency, "parallel generation requests")
      ->capture_default_str();

  CorpusStatsOpts cstats;
  CLI::App* cstats_cmd = corpus_cmd->add_subcommand("stats", "dataset statistics");
  cstats_cmd->add_option("--queries", cstats.queries_path, "generated queries JSONL")->required();
  cstats_cmd->add_option("--scenes", cstats.scenes_path, "scene JSON file or directory")
      ->required();
  cstats_cmd->add_option("--out", cstats.out_path, "stats JSON path (default stdout)");

  // selftest
  CLI::App* selftest_cmd = app.add_subcommand("selftest", "run the embedded invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << "\n";
    std::cerr << app.help() << std::flush;
    return 1;
  }

  try {
    echo(global, std::string(refalign::kProgramName) + " " + refalign::kVersion + " (seed " +
                     std::to_string(global.seed) + ")");
    if (align_cmd->parsed()) return run_align(align, global);
    if (train_cmd->parsed()) return run_train(train, global);
    if (infer_cmd->parsed()) return run_infer(infer, global);
    if (eval_cmd->parsed()) return run_eval(eval, global);
    if (corpus_cmd->parsed()) {
      if (cbuild_cmd->parsed()) return run_corpus_build(cbuild, global);
      if (cstats_cmd->parsed()) return run_corpus_stats(cstats, global);
    }
    if (selftest_cmd->parsed()) return run_selftest(global);
    std::cerr << "error: no subcommand selected\n";
    return 1;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const refalign::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
