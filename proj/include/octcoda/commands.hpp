#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "octcoda/concept_pool.hpp"
#include "octcoda/synthdata.hpp"
#include "octcoda/training.hpp"

// Library side of the octcoda command-line tool. Every command writes a
// manifest into its output directory before doing any work; `replay` reruns a
// command from that manifest alone.
namespace octcoda::cli {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "octcoda 0.1.0";

/// Teacher recipe for the synthetic benchmark.
TrainConfig teacher_preset();
/// Student recipe for the synthetic benchmark (alpha 0.6, beta 0.05, tau 10).
TrainConfig student_preset();

/// Contents of a --config file. Every section is optional.
struct RunConfig {
  GeneratorConfig generator = GeneratorConfig::defaults();
  TrainConfig teacher = teacher_preset();
  TrainConfig student = student_preset();
  SelectionOptions selection{};
};

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const fs::path& path);
nlohmann::json to_json(const SelectionOptions& opts);
SelectionOptions selection_from_json(const nlohmann::json& j, SelectionOptions base = {});

// File names inside command output directories.
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kPoolFile = "pool.json";
inline constexpr const char* kTeacherFile = "teacher.json";
inline constexpr const char* kStudentFile = "student.json";
inline constexpr const char* kLogFile = "train_log.jsonl";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kReportTextFile = "report.txt";

/// Progress lines go here (the CLI points it at stderr); may be empty.
using Progress = std::function<void(const std::string&)>;

void cmd_gen_data(const GeneratorConfig& cfg, const fs::path& out, const Progress& progress = {});

void cmd_pretrain(const TrainConfig& cfg, const fs::path& data, const fs::path& pool,
                  const fs::path& out, const Progress& progress = {});

void cmd_distill(const TrainConfig& cfg, const fs::path& data, const fs::path& pool,
                 const fs::path& teacher, const fs::path& out, const Progress& progress = {});

struct EvalOptions {
  Split split = Split::Test;
  bool fuse = false;  // average with the teacher checkpoint on paired test records
};

/// Returns the rendered metrics table.
std::string cmd_eval(const EvalOptions& opts, const fs::path& data, const fs::path& pool,
                     const fs::path& checkpoint, const std::optional<fs::path>& teacher,
                     const fs::path& out);

/// Image embeddings come from `features` (JSON {"embeddings": [[...], ...]})
/// or, failing that, from encoding `data`'s training split with `checkpoint`.
struct SelectInputs {
  std::optional<fs::path> features;
  std::optional<fs::path> data;
  std::optional<fs::path> checkpoint;
};

void cmd_select_concepts(const SelectionOptions& opts, const fs::path& pool,
                         const SelectInputs& inputs, const fs::path& out);

/// Sweep spec:
///   {"config": {...RunConfig...}, "axes": {"alpha": [..], "beta": [..],
///    "gpd": [true, false], "lcd": [..], "concepts_per_class": [..],
///    "selection": ["none", ..], "batch_size": [..]},
///    "seeds": [0, 1, ..], "fuse": false, "workers": 1}
/// Returns the rendered sweep table.
std::string cmd_ablate(const nlohmann::json& spec, const fs::path& spec_path, const fs::path& out,
                       std::optional<int> workers, const Progress& progress = {});

struct ReplayResult {
  std::vector<std::string> matched;
  std::vector<std::string> mismatched;
};

/// Re-executes the command recorded in `manifest` into `out` after checking
/// that every recorded input still hashes the same, then compares outputs.
ReplayResult cmd_replay(const fs::path& manifest, const fs::path& out,
                        const Progress& progress = {});

/// sha256 of every regular file under `dir` (relative path -> hash),
/// excluding manifests.
std::vector<std::pair<std::string, std::string>> output_hashes(const fs::path& dir);

}  // namespace octcoda::cli
