#include "octcoda/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "octcoda/hash.hpp"
#include "octcoda/json_fields.hpp"
#include "octcoda/model.hpp"

namespace octcoda::cli {

namespace {

using nlohmann::json;

void say(const Progress& progress, const std::string& line) {
  if (progress) progress(line);
}

std::string absolute_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

// Refuses to write into a directory that is (or contains) one of the inputs.
void check_out_dir(const fs::path& out, const std::vector<fs::path>& inputs) {
  const fs::path o = fs::absolute(out).lexically_normal();
  for (const auto& in : inputs) {
    const fs::path i = fs::absolute(in).lexically_normal();
    auto rel = i.lexically_relative(o);
    if (i == o || (!rel.empty() && *rel.begin() != "..")) {
      throw Error(ErrorCode::InvalidArgument,
                  "output directory " + o.string() + " overlaps input " + i.string());
    }
  }
}

std::vector<fs::path> dataset_files(const fs::path& dir) {
  return {dir / "meta.json", dir / "train.jsonl", dir / "val.jsonl", dir / "test.jsonl"};
}

// Records inputs, config and planned outputs before the command runs, then
// the output hashes once it has finished.
class Manifest {
 public:
  Manifest(std::string command, json config, json seed, const fs::path& out)
      : out_(out) {
    doc_["tool_version"] = kToolVersion;
    doc_["command"] = std::move(command);
    doc_["seed"] = std::move(seed);
    doc_["config"] = std::move(config);
    doc_["inputs"] = json::object();
    doc_["options"] = json::object();
    doc_["outputs"] = json::object();
  }

  void input(const std::string& role, const fs::path& path) {
    doc_["inputs"][role] = {{"path", absolute_string(path)}, {"sha256", sha256_file(path)}};
  }
  void input_dataset(const fs::path& dir) {
    json files = json::object();
    for (const auto& f : dataset_files(dir)) files[f.filename().string()] = sha256_file(f);
    doc_["inputs"]["dataset"] = {{"path", absolute_string(dir)}, {"sha256", files}};
  }
  void option(const std::string& key, json value) { doc_["options"][key] = std::move(value); }

  void begin(const std::vector<std::string>& outputs) {
    doc_["status"] = "running";
    for (const auto& o : outputs) doc_["outputs"][o] = nullptr;
    write();
  }
  void finish() {
    for (auto& [name, hash] : doc_["outputs"].items()) hash = sha256_file(out_ / name);
    doc_["status"] = "complete";
    write();
  }

 private:
  void write() const { write_text_file(out_ / kManifestFile, doc_.dump(2) + "\n"); }

  fs::path out_;
  json doc_;
};

void write_log(const fs::path& path, const std::vector<json>& log) {
  std::string text;
  for (const auto& rec : log) text += rec.dump() + "\n";
  write_text_file(path, text);
}

TrainOptions epoch_progress(const Progress& progress, const std::string& tag) {
  TrainOptions opts;
  if (progress) {
    opts.on_log = [progress, tag](const json& rec) {
      if (!rec.contains("epoch")) return;
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%s epoch %d  val macro P-R F1 %.2f%s", tag.c_str(),
                    rec["epoch"].get<int>(), 100.0 * rec["val_macro_prf1"].get<double>(),
                    rec["selected"].get<bool>() ? "  *" : "");
      progress(buf);
    };
  }
  return opts;
}

Matrix read_embeddings(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("embeddings") || !doc["embeddings"].is_array() ||
      doc["embeddings"].empty()) {
    throw Error(ErrorCode::SchemaViolation, path.string() + ": expected {\"embeddings\": [[...], ...]}");
  }
  const auto& rows = doc["embeddings"];
  const std::size_t cols = rows[0].size();
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].is_array() || rows[r].size() != cols) {
      throw Error(ErrorCode::SchemaViolation,
                  path.string() + ": embedding row " + std::to_string(r) + " has the wrong length");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!rows[r][c].is_number()) {
        throw Error(ErrorCode::SchemaViolation, path.string() + ": non-numeric embedding entry");
      }
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
    }
  }
  return out;
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TrainConfig teacher_preset() {
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.epochs = 30;
  c.classifier_prior = 4.0;
  c.distill.alpha = 0.0;
  c.distill.beta = 0.0;
  return c;
}

TrainConfig student_preset() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 60;
  c.classifier_prior = 4.0;
  return c;
}

json to_json(const SelectionOptions& opts) {
  return {{"method", to_string(opts.method)},
          {"k_per_class", opts.k_per_class},
          {"seed", opts.seed},
          {"kmeans_max_iters", opts.kmeans_max_iters},
          {"lambda_disc", opts.weights.lambda_disc},
          {"lambda_div", opts.weights.lambda_div}};
}

SelectionOptions selection_from_json(const json& j, SelectionOptions base) {
  FieldReader r(j, "selection");
  if (r.has("method")) {
    std::string name;
    r.read("method", name);
    try {
      base.method = parse_selection_method(name);
    } catch (const Error& e) {
      r.fail("method", e.what());
    }
  }
  r.read("k_per_class", base.k_per_class);
  r.read("seed", base.seed);
  r.read("kmeans_max_iters", base.kmeans_max_iters);
  r.read("lambda_disc", base.weights.lambda_disc);
  r.read("lambda_div", base.weights.lambda_div);
  r.reject_unknown();
  if (base.k_per_class < 1) r.fail("k_per_class", "must be >= 1");
  return base;
}

RunConfig run_config_from_json(const json& j, RunConfig base) {
  FieldReader r(j, "");
  if (r.has("generator")) base.generator = generator_config_from_json(r.raw("generator"), base.generator);
  if (r.has("teacher")) base.teacher = train_config_from_json(r.raw("teacher"), base.teacher, "teacher");
  if (r.has("student")) base.student = train_config_from_json(r.raw("student"), base.student, "student");
  if (r.has("selection")) base.selection = selection_from_json(r.raw("selection"), base.selection);
  r.reject_unknown();
  base.generator.validate();
  base.teacher.validate("teacher");
  base.student.validate("student");
  return base;
}

RunConfig load_run_config(const fs::path& path) {
  return run_config_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// Single commands

void cmd_gen_data(const GeneratorConfig& cfg, const fs::path& out, const Progress& progress) {
  cfg.validate();
  Manifest m("gen-data", {{"generator", to_json(cfg)}}, cfg.seed, out);
  m.begin({"meta.json", "train.jsonl", "val.jsonl", "test.jsonl", kPoolFile});
  say(progress, "generating dataset (seed " + std::to_string(cfg.seed) + ")");
  auto [ds, pool] = generate(cfg);
  write_dataset(ds, out);
  save_pool(pool, out / kPoolFile);
  m.finish();
}

void cmd_pretrain(const TrainConfig& cfg, const fs::path& data, const fs::path& pool_path,
                  const fs::path& out, const Progress& progress) {
  cfg.validate("teacher");
  check_out_dir(out, {data, pool_path});
  Manifest m("pretrain", {{"teacher", to_json(cfg)}}, cfg.seed, out);
  m.input_dataset(data);
  m.input("pool", pool_path);
  m.begin({kTeacherFile, kLogFile});
  const SyntheticDataset ds = read_dataset(data);
  const ConceptPool pool = load_pool(pool_path);
  const TrainResult r = pretrain_teacher(cfg, ds, pool, epoch_progress(progress, "teacher"));
  save_checkpoint(r.params, out / kTeacherFile);
  write_log(out / kLogFile, r.log);
  m.finish();
}

void cmd_distill(const TrainConfig& cfg, const fs::path& data, const fs::path& pool_path,
                 const fs::path& teacher_path, const fs::path& out, const Progress& progress) {
  cfg.validate("student");
  check_out_dir(out, {data, pool_path, teacher_path});
  if (!fs::exists(teacher_path)) {
    throw Error(ErrorCode::MissingFile, "teacher checkpoint not found: " + teacher_path.string());
  }
  Manifest m("distill", {{"student", to_json(cfg)}}, cfg.seed, out);
  m.input_dataset(data);
  m.input("pool", pool_path);
  m.input("teacher", teacher_path);
  m.begin({kStudentFile, kLogFile});
  const SyntheticDataset ds = read_dataset(data);
  const ConceptPool pool = load_pool(pool_path);
  const ModelParams teacher = load_checkpoint(teacher_path);
  if (teacher.modality != Modality::Teacher) {
    throw Error(ErrorCode::InvalidArgument, teacher_path.string() + " is not a teacher checkpoint");
  }
  require_pool_match(teacher, pool);
  const TrainResult r = distill_student(cfg, teacher, ds, pool, epoch_progress(progress, "student"));
  save_checkpoint(r.params, out / kStudentFile);
  write_log(out / kLogFile, r.log);
  m.finish();
}

std::string cmd_eval(const EvalOptions& opts, const fs::path& data, const fs::path& pool_path,
                     const fs::path& checkpoint, const std::optional<fs::path>& teacher_path,
                     const fs::path& out) {
  check_out_dir(out, {data, pool_path, checkpoint});
  if (opts.fuse && !teacher_path) {
    throw Error(ErrorCode::InvalidArgument, "--fuse needs a teacher checkpoint");
  }
  Manifest m("eval", json::object(), nullptr, out);
  m.option("split", to_string(opts.split));
  m.option("fuse", opts.fuse);
  m.input_dataset(data);
  m.input("pool", pool_path);
  m.input("checkpoint", checkpoint);
  if (opts.fuse) m.input("teacher", *teacher_path);
  m.begin({kReportFile, kReportTextFile});

  const SyntheticDataset ds = read_dataset(data);
  const ConceptPool pool = load_pool(pool_path);
  const ModelParams params = load_checkpoint(checkpoint);
  require_pool_match(params, pool);

  nlohmann::ordered_json doc;
  MetricsReport report;
  doc["split"] = to_string(opts.split);
  if (opts.fuse) {
    const ModelParams teacher = load_checkpoint(*teacher_path);
    require_pool_match(teacher, pool);
    if (params.modality == teacher.modality) {
      throw Error(ErrorCode::InvalidArgument, "--fuse needs one student and one teacher checkpoint");
    }
    const ModelParams& student = params.modality == Modality::Student ? params : teacher;
    const ModelParams& oct = params.modality == Modality::Student ? teacher : params;
    const auto [sset, tset] = paired_sets(ds, opts.split);
    if (sset.size() == 0) throw Error(ErrorCode::EmptySplit, "no pairable records in the split");
    report = evaluate_fused(student, oct, sset, tset, pool, ds.class_names);
    doc["mode"] = "fused";
    doc["models"] = {display_name(Modality::Student), display_name(Modality::Teacher)};
  } else {
    report = evaluate(params, ds, pool, opts.split);
    doc["mode"] = "single";
    doc["models"] = {display_name(params.modality)};
  }
  doc["metrics"] = report.to_json();
  const std::string table = report.render_table();
  write_text_file(out / kReportFile, doc.dump(2) + "\n");
  write_text_file(out / kReportTextFile, table);
  m.finish();
  return table;
}

void cmd_select_concepts(const SelectionOptions& opts, const fs::path& pool_path,
                         const SelectInputs& inputs, const fs::path& out) {
  check_out_dir(out, {pool_path});
  Manifest m("select-concepts", {{"selection", to_json(opts)}}, opts.seed, out);
  m.input("pool", pool_path);
  const bool needs_images =
      opts.method == SelectionMethod::Similarity || opts.method == SelectionMethod::Submodular;
  if (needs_images) {
    if (inputs.features) {
      m.input("features", *inputs.features);
    } else if (inputs.data && inputs.checkpoint) {
      m.input_dataset(*inputs.data);
      m.input("checkpoint", *inputs.checkpoint);
    } else {
      throw Error(ErrorCode::InvalidArgument,
                  "method '" + to_string(opts.method) +
                      "' needs image embeddings: pass --features or --data with --checkpoint");
    }
  }
  m.begin({kPoolFile});
  const ConceptPool pool = load_pool(pool_path);
  Matrix images;
  if (needs_images) {
    if (inputs.features) {
      images = read_embeddings(*inputs.features);
    } else {
      const SyntheticDataset ds = read_dataset(*inputs.data);
      const ModelParams params = load_checkpoint(*inputs.checkpoint);
      require_pool_match(params, pool);
      images = encode(params, ds.select(params.modality, Split::Train).features);
    }
  }
  const ConceptPool selected = select_concepts(pool, opts, needs_images ? &images : nullptr);
  save_pool(selected, out / kPoolFile);
  m.finish();
}

// ---------------------------------------------------------------------------
// Ablation

namespace {

// Runs `tasks` on up to `workers` threads; rethrows the first failure.
void run_parallel(const std::vector<std::function<void()>>& tasks, int workers) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        tasks[i]();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(tasks.size())));
  std::vector<std::thread> threads;
  for (int t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string short_hash(const json& j) { return sha256_hex(j.dump()).substr(0, 12); }

const std::vector<std::string>& axis_names() {
  static const std::vector<std::string> names = {"alpha", "beta", "gpd", "lcd",
                                                 "concepts_per_class", "selection", "batch_size"};
  return names;
}

struct GridPoint {
  std::vector<std::pair<std::string, json>> values;  // axis -> value, in axis order
  std::string key() const {
    std::string k;
    for (const auto& [axis, v] : values) k += (k.empty() ? "" : ",") + axis + "=" + v.dump();
    return k.empty() ? "base" : k;
  }
};

struct Job {
  RunConfig cfg;
  std::uint64_t seed = 0;
  fs::path data, pool, pilot, teacher, student_dir, eval_dir, fused_dir;
};

RunConfig apply_point(RunConfig cfg, const GridPoint& p) {
  for (const auto& [axis, v] : p.values) {
    auto fail = [&](const std::string& why) {
      throw Error(ErrorCode::InvalidConfig, "field 'axes." + axis + "': " + why);
    };
    try {
      if (axis == "alpha") cfg.student.distill.alpha = v.get<double>();
      else if (axis == "beta") cfg.student.distill.beta = v.get<double>();
      else if (axis == "gpd") { if (!v.get<bool>()) cfg.student.distill.alpha = 0.0; }
      else if (axis == "lcd") { if (!v.get<bool>()) cfg.student.distill.beta = 0.0; }
      else if (axis == "concepts_per_class") cfg.generator.pool_concepts_per_class = v.get<int>();
      else if (axis == "selection") cfg.selection.method = parse_selection_method(v.get<std::string>());
      else if (axis == "batch_size") cfg.student.batch_size = cfg.teacher.batch_size = v.get<int>();
    } catch (const json::exception& e) {
      fail(std::string("bad value ") + v.dump() + " (" + e.what() + ")");
    } catch (const Error& e) {
      fail(e.what());
    }
  }
  cfg.student.distill.validate();
  cfg.generator.validate();
  return cfg;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

std::string cmd_ablate(const json& spec, const fs::path& spec_path, const fs::path& out,
                       std::optional<int> workers_flag, const Progress& progress) {
  FieldReader r(spec, "");
  RunConfig base;
  if (r.has("config")) base = run_config_from_json(r.raw("config"));
  std::vector<std::uint64_t> seeds{0};
  r.read("seeds", seeds);
  if (seeds.empty()) r.fail("seeds", "needs at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw Error(ErrorCode::InvalidConfig, "field 'seeds': duplicate seeds give overlapping output directories");
  }
  bool fuse = false;
  r.read("fuse", fuse);
  int workers = 1;
  r.read("workers", workers);
  if (workers_flag) workers = *workers_flag;
  if (workers < 1) throw Error(ErrorCode::InvalidConfig, "field 'workers': must be >= 1");

  std::vector<std::pair<std::string, std::vector<json>>> axes;
  if (r.has("axes")) {
    FieldReader a(r.raw("axes"), "axes");
    for (const auto& name : axis_names()) {
      if (!a.has(name)) continue;
      const json& vals = a.raw(name);
      if (!vals.is_array() || vals.empty()) a.fail(name, "expected a non-empty array");
      std::set<std::string> seen;
      for (const auto& v : vals) {
        if (!seen.insert(v.dump()).second) {
          a.fail(name, "duplicate value " + v.dump() + " gives overlapping output directories");
        }
      }
      axes.emplace_back(name, std::vector<json>(vals.begin(), vals.end()));
    }
    a.reject_unknown();
  }
  r.reject_unknown();

  // Cross-product in axis order, last axis fastest.
  std::vector<GridPoint> grid(1);
  for (const auto& [name, vals] : axes) {
    std::vector<GridPoint> next;
    for (const auto& p : grid) {
      for (const auto& v : vals) {
        GridPoint q = p;
        q.values.emplace_back(name, v);
        next.push_back(std::move(q));
      }
    }
    grid = std::move(next);
  }

  check_out_dir(out, {spec_path});
  Manifest m("ablate", spec, seeds, out);
  m.input("spec", spec_path);
  m.option("workers", workers);
  m.begin({"ablation.json", "ablation.txt"});

  const fs::path work = out / "work";
  // Runs are keyed by content so identical datasets and teachers are built once.
  std::map<fs::path, std::function<void()>> gen_tasks, pilot_tasks, select_tasks, teacher_tasks;
  std::vector<std::function<void()>> student_tasks;
  std::vector<std::vector<Job>> jobs(grid.size());

  for (std::size_t g = 0; g < grid.size(); ++g) {
    const RunConfig point_cfg = apply_point(base, grid[g]);
    for (std::uint64_t seed : seeds) {
      Job job;
      job.cfg = point_cfg;
      job.seed = seed;
      job.cfg.generator.seed = seed;
      job.cfg.teacher.seed = seed;
      job.cfg.student.seed = seed;
      job.cfg.selection.seed = seed;

      const json gen_json = to_json(job.cfg.generator);
      job.data = work / "data" / short_hash(gen_json);
      gen_tasks.emplace(job.data, [cfg = job.cfg.generator, dir = job.data] { cmd_gen_data(cfg, dir); });
      fs::path pool = job.data / kPoolFile;

      const json teacher_json = to_json(job.cfg.teacher);
      const SelectionMethod method = job.cfg.selection.method;
      if (method != SelectionMethod::None) {
        const bool needs_images =
            method == SelectionMethod::Similarity || method == SelectionMethod::Submodular;
        SelectInputs inputs;
        if (needs_images) {
          // A pilot teacher trained on the full pool supplies image embeddings.
          job.pilot = work / "pilot" / short_hash({gen_json, teacher_json});
          pilot_tasks.emplace(job.pilot, [cfg = job.cfg.teacher, data = job.data, pool, dir = job.pilot] {
            cmd_pretrain(cfg, data, pool, dir);
          });
          inputs.data = job.data;
          inputs.checkpoint = job.pilot / kTeacherFile;
        }
        const fs::path sel_dir =
            work / "pools" / short_hash({gen_json, teacher_json, to_json(job.cfg.selection)});
        select_tasks.emplace(sel_dir, [opts = job.cfg.selection, pool, inputs, sel_dir] {
          cmd_select_concepts(opts, pool, inputs, sel_dir);
        });
        pool = sel_dir / kPoolFile;
      }
      job.pool = pool;
      job.teacher = work / "teachers" /
                    short_hash({gen_json, teacher_json, to_json(job.cfg.selection),
                                          pool.lexically_relative(work).generic_string()});
      teacher_tasks.emplace(job.teacher, [cfg = job.cfg.teacher, data = job.data, pool, dir = job.teacher] {
        cmd_pretrain(cfg, data, pool, dir);
      });

      char name[32];
      std::snprintf(name, sizeof(name), "point-%03zu", g);
      const fs::path run = work / "runs" / name / ("seed-" + std::to_string(seed));
      job.student_dir = run / "student";
      job.eval_dir = run / "eval";
      if (fuse) job.fused_dir = run / "eval-fused";
      student_tasks.push_back([job, fuse] {
        cmd_distill(job.cfg.student, job.data, job.pool, job.teacher / kTeacherFile, job.student_dir);
        cmd_eval({Split::Test, false}, job.data, job.pool, job.student_dir / kStudentFile, std::nullopt,
                 job.eval_dir);
        if (fuse) {
          cmd_eval({Split::Test, true}, job.data, job.pool, job.student_dir / kStudentFile,
                   job.teacher / kTeacherFile, job.fused_dir);
        }
      });
      jobs[g].push_back(std::move(job));
    }
  }

  auto phase = [&](const char* label, const std::map<fs::path, std::function<void()>>& tasks) {
    if (tasks.empty()) return;
    say(progress, std::string(label) + ": " + std::to_string(tasks.size()) + " run(s)");
    std::vector<std::function<void()>> list;
    for (const auto& [dir, fn] : tasks) list.push_back(fn);
    run_parallel(list, workers);
  };
  phase("datasets", gen_tasks);
  phase("pilot teachers", pilot_tasks);
  phase("concept selection", select_tasks);
  phase("teachers", teacher_tasks);
  say(progress, "students: " + std::to_string(student_tasks.size()) + " run(s)");
  run_parallel(student_tasks, workers);

  // Collect.
  static const std::vector<std::pair<std::string, std::string>> metric_keys = {
      {"precision", "Precision"}, {"recall", "Recall"}, {"specificity", "Specificity"},
      {"pr_f1", "P-R F1"},        {"ss_f1", "S-S F1"},  {"map", "mAP"},
      {"accuracy", "Accuracy"},   {"kappa", "Kappa"}};
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::ostringstream text;
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  text << "point\tP-R F1 (mean +- sd)\tS-S F1\tmAP\tAccuracy\tKappa";
  if (fuse) text << "\tfused P-R F1";
  text << "\n";
  for (std::size_t g = 0; g < grid.size(); ++g) {
    nlohmann::ordered_json row;
    nlohmann::ordered_json axis_values = nlohmann::ordered_json::object();
    for (const auto& [axis, v] : grid[g].values) axis_values[axis] = v;
    row["point"] = grid[g].key();
    row["axes"] = axis_values;
    std::map<std::string, std::vector<double>> values;
    std::vector<double> fused_prf1;
    nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
    for (const Job& job : jobs[g]) {
      const json report = read_json_file(job.eval_dir / kReportFile);
      const json& macro = report["metrics"]["macro"];
      nlohmann::ordered_json seed_row;
      seed_row["seed"] = job.seed;
      for (const auto& [key, label] : metric_keys) {
        const double v = macro[key].is_null() ? 0.0 : 100.0 * macro[key].get<double>();
        values[key].push_back(v);
        seed_row[key] = v;
      }
      if (fuse) {
        const json fr = read_json_file(job.fused_dir / kReportFile);
        const double v = 100.0 * fr["metrics"]["macro"]["pr_f1"].get<double>();
        fused_prf1.push_back(v);
        seed_row["fused_pr_f1"] = v;
      }
      per_seed.push_back(seed_row);
    }
    nlohmann::ordered_json mean = nlohmann::ordered_json::object();
    nlohmann::ordered_json sd = nlohmann::ordered_json::object();
    for (const auto& [key, label] : metric_keys) {
      mean[key] = mean_of(values[key]);
      sd[key] = sd_of(values[key]);
    }
    if (fuse) {
      mean["fused_pr_f1"] = mean_of(fused_prf1);
      sd["fused_pr_f1"] = sd_of(fused_prf1);
    }
    row["mean"] = mean;
    row["sd"] = sd;
    row["per_seed"] = per_seed;
    row["runs"] = jobs[g].front().student_dir.parent_path().parent_path().lexically_relative(out).string();
    text << grid[g].key() << "\t" << num(mean["pr_f1"]) << " +- " << num(sd["pr_f1"]) << "\t"
         << num(mean["ss_f1"]) << "\t" << num(mean["map"]) << "\t" << num(mean["accuracy"]) << "\t"
         << num(mean["kappa"]);
    if (fuse) text << "\t" << num(mean["fused_pr_f1"]);
    text << "\n";
    rows.push_back(std::move(row));
  }
  nlohmann::ordered_json doc;
  doc["seeds"] = seeds;
  doc["metrics_unit"] = "percent";
  doc["rows"] = std::move(rows);
  write_text_file(out / "ablation.json", doc.dump(2) + "\n");
  write_text_file(out / "ablation.txt", text.str());
  m.finish();
  return text.str();
}

// ---------------------------------------------------------------------------
// Replay

std::vector<std::pair<std::string, std::string>> output_hashes(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() == kManifestFile) continue;
    out.emplace_back(entry.path().lexically_relative(dir).generic_string(), sha256_file(entry.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

ReplayResult cmd_replay(const fs::path& manifest_path, const fs::path& out, const Progress& progress) {
  const json doc = read_json_file(manifest_path);
  auto need = [&](const char* key) -> const json& {
    if (!doc.contains(key)) {
      throw Error(ErrorCode::SchemaViolation, manifest_path.string() + ": missing '" + key + "'");
    }
    return doc.at(key);
  };
  const std::string command = need("command").get<std::string>();
  if (need("status") != "complete") {
    throw Error(ErrorCode::InvalidArgument, manifest_path.string() + ": recorded run did not complete");
  }
  const json& config = need("config");
  const json& inputs = need("inputs");
  const json& options = need("options");

  // Inputs must be byte-identical to what the original run consumed.
  for (const auto& [role, rec] : inputs.items()) {
    const fs::path path = rec.at("path").get<std::string>();
    if (rec.at("sha256").is_object()) {
      for (const auto& [file, hash] : rec.at("sha256").items()) {
        if (sha256_file(path / file) != hash.get<std::string>()) {
          throw Error(ErrorCode::FingerprintMismatch, "input " + role + " changed: " + (path / file).string());
        }
      }
    } else if (sha256_file(path) != rec.at("sha256").get<std::string>()) {
      throw Error(ErrorCode::FingerprintMismatch, "input " + role + " changed: " + path.string());
    }
  }
  auto input = [&](const char* role) { return fs::path(inputs.at(role).at("path").get<std::string>()); };
  auto optional_input = [&](const char* role) -> std::optional<fs::path> {
    if (!inputs.contains(role)) return std::nullopt;
    return input(role);
  };

  say(progress, "replaying " + command + " into " + out.string());
  if (command == "gen-data") {
    cmd_gen_data(generator_config_from_json(config.at("generator")), out, progress);
  } else if (command == "pretrain") {
    cmd_pretrain(train_config_from_json(config.at("teacher"), TrainConfig{}, "teacher"), input("dataset"),
                 input("pool"), out, progress);
  } else if (command == "distill") {
    cmd_distill(train_config_from_json(config.at("student"), TrainConfig{}, "student"), input("dataset"),
                input("pool"), input("teacher"), out, progress);
  } else if (command == "eval") {
    EvalOptions opts;
    opts.split = parse_split(options.at("split").get<std::string>());
    opts.fuse = options.at("fuse").get<bool>();
    cmd_eval(opts, input("dataset"), input("pool"), input("checkpoint"), optional_input("teacher"), out);
  } else if (command == "select-concepts") {
    SelectInputs in;
    in.features = optional_input("features");
    in.data = optional_input("dataset");
    in.checkpoint = optional_input("checkpoint");
    cmd_select_concepts(selection_from_json(config.at("selection")), input("pool"), in, out);
  } else if (command == "ablate") {
    cmd_ablate(config, input("spec"), out, options.at("workers").get<int>(), progress);
  } else {
    throw Error(ErrorCode::SchemaViolation, manifest_path.string() + ": unknown command '" + command + "'");
  }

  ReplayResult result;
  for (const auto& [name, hash] : doc.at("outputs").items()) {
    const fs::path produced = out / name;
    const bool same = fs::exists(produced) && sha256_file(produced) == hash.get<std::string>();
    (same ? result.matched : result.mismatched).push_back(name);
  }
  return result;
}

}  // namespace octcoda::cli
