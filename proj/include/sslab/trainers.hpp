#pragma once

// Post-training as state-conditioned supervision. Every trainer repeats
//
//   states  <- sample_states(state source)
//   signals <- make_signal(signal source, state)   for each state
//   params  <- unified_step(params, states, signals, loss)
//
// and the presets differ only in which sources and loss they plug in.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sslab/policy.hpp"
#include "sslab/tasks.hpp"

namespace sslab {

enum class StateSourceKind { kDatasetStates, kStudentRolloutStates, kTeacherRolloutStates };

enum class PrefixRule {
  kAllPrefixes,  // every generation step of every rollout, then subsampled
  kPromptOnly,   // only the initial state; the signal source rolls out from it
};

struct StateSource {
  StateSourceKind kind = StateSourceKind::kDatasetStates;
  std::size_t prompts_per_step = 16;
  std::size_t states_per_step = 64;
  double temperature = 1.0;
  PrefixRule prefix_rule = PrefixRule::kAllPrefixes;
};

enum class SignalKind { kGoldTokens, kTeacherLogits, kTeacherContinuation, kExpertContinuation, kReward };

struct SignalSource {
  SignalKind kind = SignalKind::kGoldTokens;
  std::size_t continuation_length = 8;  // L, teacher continuations
  std::size_t group_size = 4;           // G, reward groups
};

enum class Preset { kSft, kOfflineKd, kOpdOneStep, kOpdContinuation, kRlGrpo, kDagger };

const char* to_string(StateSourceKind kind);
const char* to_string(SignalKind kind);
const char* to_string(Preset preset);
const char* to_string(LossKind kind);
Preset parse_preset(std::string_view name);

struct OptimizerSettings {
  double lr = 1e-3;
  std::size_t steps = 200;       // ignored by dataset-driven presets, which use passes
  std::size_t batch_size = 16;   // examples per step for dataset states
  std::size_t passes = 1;
  double final_lr_fraction = 1.0;  // linear decay to lr * fraction at the last step
};

struct TrainerConfig {
  std::string name;
  Preset preset = Preset::kSft;
  StateSource state_source;
  SignalSource signal_source;
  LossKind loss = LossKind::kCrossEntropy;
  OptimizerSettings optimizer;
  std::uint64_t seed = 0;
  std::optional<std::string> teacher;  // checkpoint path, when the signal needs one
  TaskKind task = kTargetTask;
  std::size_t dataset_size = 2000;
  std::size_t max_generation = kMaxGeneration;

  // Rejects any (state source, signal source, loss) pairing that does not
  // match the preset's row, plus out-of-range hyperparameters.
  void validate() const;
  bool needs_teacher() const;
  std::size_t total_steps(std::size_t dataset_examples) const;

  static TrainerConfig for_preset(Preset preset);
  // Named configurations: sft_mild, sft_stress, offline_kd, opd_onestep,
  // opd_continuation, rl_grpo, dagger.
  static TrainerConfig named(std::string_view name);
};

nlohmann::json to_json(const TrainerConfig& config);
// Keys absent from `j` keep the values of the named/preset defaults. Unknown
// keys and inconsistent pairings raise misconfiguration.
TrainerConfig trainer_config_from_json(const nlohmann::json& j);
TrainerConfig load_trainer_config(const std::filesystem::path& path);

enum class StateOrigin { kDataset, kStudentRollout, kTeacherRollout };
const char* to_string(StateOrigin origin);

struct SampledState {
  State state;
  StateOrigin origin = StateOrigin::kDataset;
  std::size_t prompt_index = 0;      // index into the prompt pool / dataset
  std::optional<Token> gold_next;    // dataset states only
};

struct StateInputs {
  const TokenPolicy* student = nullptr;
  const TokenPolicy* teacher = nullptr;
  std::span<const Example> dataset;  // dataset states: the batch; rollouts: the prompt pool
  std::size_t max_generation = kMaxGeneration;
};

// Indices kept when thinning `total` enumerated states down to `n`, ascending.
std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t n, Rng& rng);

// DatasetStates expands every example of `in.dataset` into all of its gold
// prefixes. Rollout variants draw `prompts_per_step` prompts from the pool,
// roll out the generating policy, and keep `n` of the visited states.
std::vector<SampledState> sample_states(const StateSource& source, const StateInputs& in, std::size_t n,
                                        Rng& rng);

struct TargetToken {
  Token token;
};
struct TeacherDistribution {
  std::vector<double> probs;
};
struct TokenContinuation {
  std::vector<Token> tokens;
};
struct RewardGroup {
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

using SupervisionObject = std::variant<TargetToken, TeacherDistribution, TokenContinuation, RewardGroup>;

using RewardFn = std::function<double(std::span<const Token> prompt, std::span<const Token> completion)>;

struct SignalInputs {
  const TokenPolicy* teacher = nullptr;
  const TokenPolicy* learner = nullptr;  // generates reward groups
  RewardFn reward;
  std::size_t max_generation = kMaxGeneration;
  double temperature = 1.0;  // reward-group sampling
};

SupervisionObject make_signal(const SignalSource& source, const SampledState& state, const SignalInputs& in,
                              Rng& rng);

// Replays a continuation from `state`: one (state, next token) pair per token.
std::vector<LabeledState> expand_continuation(const State& state, std::span<const Token> tokens);

// Group-normalized advantages, population std, epsilon 1e-4; all-equal
// rewards give all-zero advantages.
std::vector<double> compute_group_advantages(std::span<const double> rewards);

// One gradient step of `loss` on the aligned (state, signal) pairs. Returns
// the step loss; a step whose signals expand to nothing leaves everything
// untouched and returns 0.
double unified_step(PolicyParams& params, OptimizerState& opt, std::span<const SampledState> states,
                    std::span<const SupervisionObject> signals, LossKind loss);

struct StepRecord {
  std::size_t step = 0;
  std::string preset;
  std::string state_source;
  std::string signal_source;
  double loss = 0.0;
  std::optional<double> mean_reward;
  std::uint64_t seed = 0;
  std::size_t states = 0;
  std::vector<StateOrigin> origins;  // distinct origins of the step's states, not serialized
};

nlohmann::json to_json(const StepRecord& record);
void write_training_log(const std::filesystem::path& path, std::span<const StepRecord> log);
std::vector<StepRecord> read_training_log(const std::filesystem::path& path);

struct TrainInputs {
  const PolicyParams* init = nullptr;
  const PolicyParams* teacher = nullptr;
  // Training examples (dataset states) or prompt pool (rollout states). When
  // empty, `dataset_size` examples of `task` are generated from the seed.
  std::vector<Example> dataset;
  RewardFn reward;  // defaults to verify_answer
  // Called after every step; returning false stops training early.
  std::function<bool(std::size_t step, const PolicyParams& params)> on_step;
};

struct TrainOutcome {
  PolicyParams params;
  OptimizerState optimizer;
  std::vector<StepRecord> log;
};

TrainOutcome run_trainer(const TrainerConfig& config, const TrainInputs& inputs);

TrainOutcome train_sft(const TrainerConfig& config, const TrainInputs& inputs);
TrainOutcome train_offline_kd(const TrainerConfig& config, const TrainInputs& inputs);
TrainOutcome train_opd_onestep(const TrainerConfig& config, const TrainInputs& inputs);
TrainOutcome train_opd_continuation(const TrainerConfig& config, const TrainInputs& inputs);
TrainOutcome train_rl_grpo(const TrainerConfig& config, const TrainInputs& inputs);
TrainOutcome train_dagger(const TrainerConfig& config, const TrainInputs& inputs);

struct TrainArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::size_t steps = 0;
};

// Loads init (and teacher) checkpoints, trains, and writes checkpoint.ssl and
// train_log.jsonl under `out_dir`.
TrainArtifacts train_to_directory(const TrainerConfig& config, const std::filesystem::path& init_checkpoint,
                                  const std::filesystem::path& out_dir);

}  // namespace sslab
