#pragma once

// Experimental pipeline: pretrain a base model, run the post-training stages,
// evaluate every checkpoint, measure rollout-state drift against the base and
// write the report. All artifacts live under one work directory:
//
//   <workdir>/<run>/checkpoint.ssl    parameters + optimizer state
//   <workdir>/<run>/train_log.jsonl   per-step training log
//   <workdir>/<run>/states.jsonl      drift state sample
//   <workdir>/<run>/scores.json       exact-match scores per task
//   <workdir>/report.csv, report.json

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslab/drift.hpp"
#include "sslab/tasks.hpp"
#include "sslab/trainers.hpp"

namespace sslab {

inline constexpr const char* kBaseRun = "base";

struct PretrainSpec {
  MixtureWeights weights;       // defaults to pretrain_mixture()
  std::size_t max_steps = 6000;  // one pass over max_steps * batch_size examples
  std::size_t batch_size = 32;
  double lr = 1e-2;
  double final_lr_fraction = 0.1;
  std::size_t eval_every = 500;
  double copy_threshold = 0.8;
};

// Pretraining mixture: copy, reverse and count at 0.3 each, chain_arith at 0.3.
MixtureWeights pretrain_mixture();

struct EvalSpec {
  std::size_t examples = 500;  // per task
};

struct DriftSpec {
  std::size_t prompts = 200;
  std::size_t states = 2000;
  double temperature = 1.0;
  std::size_t projections = 64;
  FeaturizerSpec featurizer;
};

struct StageSpec {
  std::string name;
  TrainerConfig trainer;
  std::optional<std::string> teacher_stage;  // an earlier stage supplies the teacher
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path workdir = "work";
  PretrainSpec pretrain;
  std::vector<StageSpec> stages;
  EvalSpec eval;
  DriftSpec drift;

  // Default stages, in order: sft_mild, sft_stress, opd_cont_mild,
  // opd_cont_stress, opd_onestep_stress, rl_grpo, dagger.
  static RunConfig defaults();
  void validate() const;
  const StageSpec* find_stage(const std::string& name) const;
  std::filesystem::path run_dir(const std::string& run) const { return workdir / run; }
};

nlohmann::json to_json(const RunConfig& config);
// Keys absent from `j` keep their defaults; "stages", when present, replaces
// the whole stage list. Unknown keys raise misconfiguration.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

using Scores = std::map<TaskKind, double>;
nlohmann::json scores_to_json(const Scores& scores);
Scores scores_from_json(const nlohmann::json& j);

// Exact-match scores on the eval split of every task, greedy decoding.
Scores evaluate_policy(const TokenPolicy& policy, const RunConfig& config);

using ProgressFn = std::function<void(const std::string& line)>;

struct PretrainResult {
  std::filesystem::path checkpoint;
  Scores scores;
  std::size_t steps = 0;  // 0 when the checkpoint already existed
};

// Trains the base model on the pretraining mixture, checking the copy score
// every eval_every steps and stopping once it reaches the threshold. Raises
// pretrain-failure with the final scores when the step cap comes first.
PretrainResult run_pretrain(const RunConfig& config, const ProgressFn& progress = {});

// The drift prompt set: target-task eval-split prompts shared by every model
// of one report.
std::vector<Example> drift_prompts(const RunConfig& config);

// One sampled rollout per prompt; every visited prefix state is pooled and the
// pool is subsampled to n_states.
std::vector<StateRecord> collect_states(const TokenPolicy& policy, const std::string& model_id,
                                        std::span<const Example> prompts, std::size_t n_states,
                                        double temperature, std::uint64_t seed);

struct ReportRow {
  std::string run;
  Scores scores;
  std::optional<double> mmd;
  std::optional<DriftReport> drift;
  std::optional<RetentionReport> retention;
  std::string status = "ok";  // "ok" or "failed"
  std::string error;
};

struct Report {
  std::vector<ReportRow> rows;
  nlohmann::json config;
};

std::string report_csv(const Report& report);
nlohmann::json report_json(const Report& report);

struct StageOutcome {
  std::string name;
  bool trained = false;  // false when resumed from an existing checkpoint
  std::size_t steps = 0;
  std::string error;
};

struct ReplicateResult {
  Report report;
  std::vector<StageOutcome> stages;
  std::size_t training_steps = 0;  // across pretraining and all stages
  std::filesystem::path csv;
  std::filesystem::path json;
};

// Trains one stage from the base checkpoint (and its teacher stage), writing
// checkpoint.ssl and train_log.jsonl. Skipped when the checkpoint exists.
StageOutcome run_stage(const RunConfig& config, const StageSpec& stage, const ProgressFn& progress = {});

// Builds the report from the artifacts in the work directory. Missing scores
// and state samples are computed from the checkpoints and cached; nothing is
// retrained. Stages without a checkpoint appear as failed rows.
Report build_report(const RunConfig& config, const ProgressFn& progress = {});
void write_report(const RunConfig& config, const Report& report);

// Pretrain, every stage in order, then the report. Completed stages are
// detected by checkpoint presence and skipped; a failing stage is recorded and
// the stages that do not depend on it still run.
ReplicateResult replicate_pipeline(const RunConfig& config, const ProgressFn& progress = {});

// Exclusive hold on a work directory via an O_EXCL lockfile.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& workdir);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace sslab
