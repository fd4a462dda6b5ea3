// octcoda: dataset generation, teacher pretraining, student distillation,
// evaluation, concept selection, ablation sweeps and manifest replay.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "octcoda/commands.hpp"
#include "octcoda/error.hpp"
#include "octcoda/hash.hpp"

namespace {

using namespace octcoda;
using namespace octcoda::cli;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file; flags override its values")
      ->envname("OCTCODA_CONFIG")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed for every stochastic choice")->envname("OCTCODA_SEED");
  cmd->add_option("--out", c.out, "Output directory")->required()->envname("OCTCODA_OUT");
}

RunConfig base_config(const Common& c) {
  return c.config.empty() ? run_config_from_json(nlohmann::json::object()) : load_run_config(c.config);
}

std::string default_pool(const std::string& pool, const std::string& data) {
  return pool.empty() ? (fs::path(data) / kPoolFile).string() : pool;
}

nlohmann::json parse_json_file(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

void progress_line(const std::string& line) { std::cerr << line << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept-decoupled classification with cross-modal distillation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kToolVersion);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress lines on stderr");

  // gen-data
  Common gen;
  std::optional<double> noise_sigma, dominance;
  std::optional<int> pool_k;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate an unpaired two-modality synthetic dataset");
  add_common(gen_cmd, gen);
  gen_cmd->add_option("--noise-sigma", noise_sigma, "Feature noise standard deviation");
  gen_cmd->add_option("--teacher-dominance", dominance, "Fraction of teacher-dominant concepts per class");
  gen_cmd->add_option("--concepts-per-class", pool_k, "Pool concepts per class");

  // pretrain / distill share training flags
  struct TrainFlags {
    std::string data, pool;
    std::optional<int> epochs, batch_size;
    std::optional<double> lr;
  };
  auto add_train = [](CLI::App* cmd, TrainFlags& t) {
    cmd->add_option("--data", t.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--pool", t.pool, "Concept pool file (default: <data>/pool.json)");
    cmd->add_option("--epochs", t.epochs, "Training epochs");
    cmd->add_option("--lr", t.lr, "Peak learning rate");
    cmd->add_option("--batch-size", t.batch_size, "Batch size per modality");
  };
  auto apply_train = [](TrainConfig& cfg, const TrainFlags& t, const Common& c) {
    if (t.epochs) cfg.epochs = *t.epochs;
    if (t.lr) cfg.learning_rate = *t.lr;
    if (t.batch_size) cfg.batch_size = *t.batch_size;
    if (c.seed) cfg.seed = *c.seed;
  };

  Common pre;
  TrainFlags pre_t;
  auto* pre_cmd = app.add_subcommand("pretrain", "Pretrain the teacher (OCT) model and freeze it");
  add_common(pre_cmd, pre);
  add_train(pre_cmd, pre_t);

  Common dis;
  TrainFlags dis_t;
  std::string teacher_ckpt;
  std::optional<double> alpha, beta, tau;
  auto* dis_cmd = app.add_subcommand("distill", "Train the student (fundus) model against a frozen teacher");
  add_common(dis_cmd, dis);
  add_train(dis_cmd, dis_t);
  dis_cmd->add_option("--teacher", teacher_ckpt, "Frozen teacher checkpoint")->required();
  dis_cmd->add_option("--alpha", alpha, "Weight of the prototype distillation term");
  dis_cmd->add_option("--beta", beta, "Weight of the contrastive distillation term");
  dis_cmd->add_option("--tau", tau, "Contrastive temperature");

  // eval
  Common ev;
  std::string ev_data, ev_pool, ev_ckpt, ev_teacher, ev_split = "test";
  bool fuse = false;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint, or fuse student and teacher scores");
  add_common(ev_cmd, ev);
  ev_cmd->add_option("--data", ev_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev_cmd->add_option("--pool", ev_pool, "Concept pool file (default: <data>/pool.json)");
  ev_cmd->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--teacher", ev_teacher, "Teacher checkpoint for --fuse")->check(CLI::ExistingFile);
  ev_cmd->add_option("--split", ev_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev_cmd->add_flag("--fuse", fuse, "Average student and teacher probabilities on paired records");

  // select-concepts
  Common sel;
  std::string sel_pool, sel_method, sel_features, sel_data, sel_ckpt;
  std::optional<std::size_t> sel_k;
  std::optional<double> lambda_div, lambda_disc;
  auto* sel_cmd = app.add_subcommand("select-concepts", "Filter a concept pool");
  add_common(sel_cmd, sel);
  sel_cmd->add_option("--pool", sel_pool, "Input concept pool")->required()->check(CLI::ExistingFile);
  sel_cmd->add_option("--method", sel_method, "none, random, svd, kmeans, similarity or submodular");
  sel_cmd->add_option("--k", sel_k, "Concepts kept per class");
  sel_cmd->add_option("--features", sel_features, "Image embeddings JSON {\"embeddings\": [[...]]}")
      ->check(CLI::ExistingFile);
  sel_cmd->add_option("--data", sel_data, "Dataset whose training split is encoded for image embeddings");
  sel_cmd->add_option("--checkpoint", sel_ckpt, "Checkpoint used to encode --data");
  sel_cmd->add_option("--lambda-div", lambda_div, "Submodular coverage weight");
  sel_cmd->add_option("--lambda-disc", lambda_disc, "Submodular discriminability weight");

  // ablate
  Common abl;
  std::string spec_path;
  std::optional<int> workers;
  auto* abl_cmd = app.add_subcommand("ablate", "Run a parameter sweep and tabulate macro metrics");
  add_common(abl_cmd, abl);
  abl_cmd->add_option("--spec", spec_path, "Sweep spec JSON")->required()->check(CLI::ExistingFile);
  abl_cmd->add_option("--workers", workers, "Parallel worker threads")->envname("OCTCODA_WORKERS");

  // replay
  std::string manifest, replay_out;
  auto* rep_cmd = app.add_subcommand("replay", "Re-run a command from its manifest and compare outputs");
  rep_cmd->add_option("--manifest", manifest, "manifest.json of a finished run")->required()->check(CLI::ExistingFile);
  rep_cmd->add_option("--out", replay_out, "Output directory for the rerun")->required();

  CLI11_PARSE(app, argc, argv);
  const Progress progress = quiet ? Progress{} : Progress{progress_line};

  try {
    if (gen_cmd->parsed()) {
      RunConfig cfg = base_config(gen);
      if (gen.seed) cfg.generator.seed = *gen.seed;
      if (noise_sigma) cfg.generator.noise_sigma = *noise_sigma;
      if (dominance) cfg.generator.teacher_dominance = *dominance;
      if (pool_k) cfg.generator.pool_concepts_per_class = *pool_k;
      cmd_gen_data(cfg.generator, gen.out, progress);
    } else if (pre_cmd->parsed()) {
      RunConfig cfg = base_config(pre);
      apply_train(cfg.teacher, pre_t, pre);
      cmd_pretrain(cfg.teacher, pre_t.data, default_pool(pre_t.pool, pre_t.data), pre.out, progress);
    } else if (dis_cmd->parsed()) {
      RunConfig cfg = base_config(dis);
      apply_train(cfg.student, dis_t, dis);
      if (alpha) cfg.student.distill.alpha = *alpha;
      if (beta) cfg.student.distill.beta = *beta;
      if (tau) cfg.student.distill.tau = *tau;
      cmd_distill(cfg.student, dis_t.data, default_pool(dis_t.pool, dis_t.data), teacher_ckpt, dis.out,
                  progress);
    } else if (ev_cmd->parsed()) {
      base_config(ev);
      EvalOptions opts;
      opts.split = parse_split(ev_split);
      opts.fuse = fuse;
      std::optional<fs::path> teacher;
      if (!ev_teacher.empty()) teacher = ev_teacher;
      std::cout << cmd_eval(opts, ev_data, default_pool(ev_pool, ev_data), ev_ckpt, teacher, ev.out);
    } else if (sel_cmd->parsed()) {
      RunConfig cfg = base_config(sel);
      SelectionOptions& opts = cfg.selection;
      if (sel.seed) opts.seed = *sel.seed;
      if (!sel_method.empty()) opts.method = parse_selection_method(sel_method);
      if (sel_k) opts.k_per_class = *sel_k;
      if (lambda_div) opts.weights.lambda_div = *lambda_div;
      if (lambda_disc) opts.weights.lambda_disc = *lambda_disc;
      SelectInputs inputs;
      if (!sel_features.empty()) inputs.features = sel_features;
      if (!sel_data.empty()) inputs.data = sel_data;
      if (!sel_ckpt.empty()) inputs.checkpoint = sel_ckpt;
      cmd_select_concepts(opts, sel_pool, inputs, sel.out);
    } else if (abl_cmd->parsed()) {
      nlohmann::json spec = parse_json_file(spec_path);
      if (!abl.config.empty()) spec["config"] = parse_json_file(abl.config);
      if (abl.seed) spec["seeds"] = {*abl.seed};
      std::cout << cmd_ablate(spec, spec_path, abl.out, workers, progress);
    } else if (rep_cmd->parsed()) {
      const ReplayResult r = cmd_replay(manifest, replay_out, progress);
      for (const auto& name : r.matched) std::cout << "identical  " << name << "\n";
      for (const auto& name : r.mismatched) std::cout << "DIFFERENT  " << name << "\n";
      if (!r.mismatched.empty()) {
        std::cerr << "error: " << r.mismatched.size() << " output(s) differ from the manifest\n";
        return 3;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
