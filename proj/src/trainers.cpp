#include "sslab/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "sslab/checkpoint.hpp"
#include "sslab/error.hpp"

namespace sslab {

using nlohmann::json;

namespace {

[[noreturn]] void misconfigured(const std::string& what) { throw Error(ErrorCode::kMisconfiguration, what); }

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view name, const std::array<Enum, N>& all, const char* what) {
  for (Enum e : all)
    if (name == to_string(e)) return e;
  misconfigured(std::string("unknown ") + what + " '" + std::string(name) + "'");
}

constexpr std::array kStateKinds = {StateSourceKind::kDatasetStates, StateSourceKind::kStudentRolloutStates,
                                    StateSourceKind::kTeacherRolloutStates};
constexpr std::array kSignalKinds = {SignalKind::kGoldTokens, SignalKind::kTeacherLogits,
                                     SignalKind::kTeacherContinuation, SignalKind::kExpertContinuation,
                                     SignalKind::kReward};
constexpr std::array kPresets = {Preset::kSft,           Preset::kOfflineKd, Preset::kOpdOneStep,
                                 Preset::kOpdContinuation, Preset::kRlGrpo,  Preset::kDagger};
constexpr std::array kLosses = {LossKind::kCrossEntropy, LossKind::kKl, LossKind::kPolicyGradient};

const char* to_string(PrefixRule rule) {
  return rule == PrefixRule::kAllPrefixes ? "all_prefixes" : "prompt_only";
}

struct Row {
  Preset preset;
  StateSourceKind state;
  SignalKind signal;
  LossKind loss;
};

// One row per method: which states, which signal, which loss.
constexpr std::array<Row, 6> kMethodTable = {{
    {Preset::kSft, StateSourceKind::kDatasetStates, SignalKind::kGoldTokens, LossKind::kCrossEntropy},
    {Preset::kOfflineKd, StateSourceKind::kTeacherRolloutStates, SignalKind::kTeacherLogits, LossKind::kKl},
    {Preset::kOpdOneStep, StateSourceKind::kStudentRolloutStates, SignalKind::kTeacherLogits, LossKind::kKl},
    {Preset::kOpdContinuation, StateSourceKind::kStudentRolloutStates, SignalKind::kTeacherContinuation,
     LossKind::kCrossEntropy},
    {Preset::kRlGrpo, StateSourceKind::kStudentRolloutStates, SignalKind::kReward, LossKind::kPolicyGradient},
    {Preset::kDagger, StateSourceKind::kStudentRolloutStates, SignalKind::kExpertContinuation,
     LossKind::kCrossEntropy},
}};

const Row& row_of(Preset p) {
  for (const Row& r : kMethodTable)
    if (r.preset == p) return r;
  misconfigured("preset without a method row");
}

}  // namespace

const char* to_string(StateSourceKind kind) {
  switch (kind) {
    case StateSourceKind::kDatasetStates: return "dataset";
    case StateSourceKind::kStudentRolloutStates: return "student_rollouts";
    case StateSourceKind::kTeacherRolloutStates: return "teacher_rollouts";
  }
  return "?";
}

const char* to_string(SignalKind kind) {
  switch (kind) {
    case SignalKind::kGoldTokens: return "gold_tokens";
    case SignalKind::kTeacherLogits: return "teacher_logits";
    case SignalKind::kTeacherContinuation: return "teacher_continuation";
    case SignalKind::kExpertContinuation: return "expert_continuation";
    case SignalKind::kReward: return "reward";
  }
  return "?";
}

const char* to_string(Preset preset) {
  switch (preset) {
    case Preset::kSft: return "sft";
    case Preset::kOfflineKd: return "offline_kd";
    case Preset::kOpdOneStep: return "opd_onestep";
    case Preset::kOpdContinuation: return "opd_continuation";
    case Preset::kRlGrpo: return "rl_grpo";
    case Preset::kDagger: return "dagger";
  }
  return "?";
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kCrossEntropy: return "ce";
    case LossKind::kKl: return "kl";
    case LossKind::kPolicyGradient: return "pg";
  }
  return "?";
}

const char* to_string(StateOrigin origin) {
  switch (origin) {
    case StateOrigin::kDataset: return "dataset";
    case StateOrigin::kStudentRollout: return "student_rollout";
    case StateOrigin::kTeacherRollout: return "teacher_rollout";
  }
  return "?";
}

Preset parse_preset(std::string_view name) { return parse_enum(name, kPresets, "preset"); }

// ---------------------------------------------------------------------------
// Configuration

void TrainerConfig::validate() const {
  const Row& row = row_of(preset);
  if (state_source.kind != row.state || signal_source.kind != row.signal || loss != row.loss)
    misconfigured(std::string("preset ") + to_string(preset) + " requires (" + to_string(row.state) + ", " +
                  to_string(row.signal) + ", " + to_string(row.loss) + ") but config has (" +
                  to_string(state_source.kind) + ", " + to_string(signal_source.kind) + ", " + to_string(loss) +
                  ")");
  if ((preset == Preset::kRlGrpo) != (state_source.prefix_rule == PrefixRule::kPromptOnly))
    misconfigured("prompt_only prefix rule is used by rl_grpo and only by rl_grpo");
  const auto& o = optimizer;
  if (!(o.lr > 0.0) || !std::isfinite(o.lr)) misconfigured("optimizer.lr must be positive");
  if (!(o.final_lr_fraction > 0.0 && o.final_lr_fraction <= 1.0))
    misconfigured("optimizer.final_lr_fraction must be in (0, 1]");
  if (o.batch_size < 1 || o.passes < 1 || o.steps < 1) misconfigured("optimizer sizes must be >= 1");
  if (signal_source.continuation_length < 1) misconfigured("continuation_length must be >= 1");
  if (signal_source.group_size < 2) misconfigured("group_size must be >= 2");
  if (state_source.prompts_per_step < 1 || state_source.states_per_step < 1)
    misconfigured("state source sizes must be >= 1");
  if (!(state_source.temperature >= 0.0) || !std::isfinite(state_source.temperature))
    misconfigured("temperature must be >= 0");
  if (preset == Preset::kRlGrpo && state_source.temperature == 0.0)
    misconfigured("reward groups need a positive sampling temperature");
  if (dataset_size < 1 || max_generation < 1) misconfigured("dataset_size and max_generation must be >= 1");
}

bool TrainerConfig::needs_teacher() const {
  return signal_source.kind == SignalKind::kTeacherLogits ||
         signal_source.kind == SignalKind::kTeacherContinuation ||
         state_source.kind == StateSourceKind::kTeacherRolloutStates;
}

std::size_t TrainerConfig::total_steps(std::size_t dataset_examples) const {
  if (state_source.kind == StateSourceKind::kDatasetStates) {
    const std::size_t per_pass = (dataset_examples + optimizer.batch_size - 1) / optimizer.batch_size;
    return per_pass * optimizer.passes;
  }
  return optimizer.steps;
}

TrainerConfig TrainerConfig::for_preset(Preset preset) {
  const Row& row = row_of(preset);
  TrainerConfig c;
  c.name = to_string(preset);
  c.preset = preset;
  c.state_source.kind = row.state;
  c.signal_source.kind = row.signal;
  c.loss = row.loss;
  switch (preset) {
    case Preset::kSft:
      c.optimizer = {1e-3, 1, 16, 1, 1.0};
      break;
    case Preset::kOfflineKd:
    case Preset::kDagger:
      c.optimizer = {1e-3, 200, 16, 1, 1.0};
      break;
    case Preset::kOpdOneStep:
    case Preset::kOpdContinuation:
      c.optimizer = {2e-3, 600, 16, 1, 1.0};
      break;
    case Preset::kRlGrpo:
      c.optimizer = {1e-3, 200, 16, 1, 1.0};
      c.state_source.prefix_rule = PrefixRule::kPromptOnly;
      c.state_source.prompts_per_step = 8;
      c.signal_source.group_size = 4;
      break;
  }
  return c;
}

TrainerConfig TrainerConfig::named(std::string_view name) {
  if (name == "sft_mild") {
    TrainerConfig c = for_preset(Preset::kSft);
    c.name = "sft_mild";
    c.optimizer.lr = 1e-3;
    c.optimizer.passes = 1;
    return c;
  }
  if (name == "sft_stress") {
    TrainerConfig c = for_preset(Preset::kSft);
    c.name = "sft_stress";
    c.optimizer.lr = 1e-2;
    c.optimizer.passes = 5;
    return c;
  }
  return for_preset(parse_preset(name));
}

json to_json(const TrainerConfig& c) {
  json j{
      {"name", c.name},
      {"preset", to_string(c.preset)},
      {"state_source",
       {{"kind", to_string(c.state_source.kind)},
        {"prompts_per_step", c.state_source.prompts_per_step},
        {"states_per_step", c.state_source.states_per_step},
        {"temperature", c.state_source.temperature},
        {"prefix_rule", to_string(c.state_source.prefix_rule)}}},
      {"signal_source",
       {{"kind", to_string(c.signal_source.kind)},
        {"continuation_length", c.signal_source.continuation_length},
        {"group_size", c.signal_source.group_size},
        {"kl_direction", "forward"},
        {"continuation_decoding", "greedy"}}},
      {"loss", to_string(c.loss)},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"steps", c.optimizer.steps},
        {"batch_size", c.optimizer.batch_size},
        {"passes", c.optimizer.passes},
        {"final_lr_fraction", c.optimizer.final_lr_fraction}}},
      {"seed", c.seed},
      {"task", task_name(c.task)},
      {"dataset_size", c.dataset_size},
      {"max_generation", c.max_generation},
  };
  j["teacher"] = c.teacher ? json(*c.teacher) : json(nullptr);
  return j;
}

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
  if (!j.is_object()) misconfigured(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      misconfigured("unknown key '" + key + "' in " + where);
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    misconfigured(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

TrainerConfig trainer_config_from_json(const json& j) {
  reject_unknown(j,
                 {"name", "preset", "state_source", "signal_source", "loss", "optimizer", "seed", "teacher", "task",
                  "dataset_size", "max_generation"},
                 "trainer config");
  std::string name;
  std::string preset;
  take(j, "name", name);
  take(j, "preset", preset);
  if (name.empty() && preset.empty()) misconfigured("trainer config needs a preset or a name");
  TrainerConfig c;
  if (!name.empty() && (name == "sft_mild" || name == "sft_stress")) {
    c = TrainerConfig::named(name);
    if (!preset.empty() && parse_preset(preset) != c.preset) misconfigured("name/preset mismatch");
  } else {
    c = TrainerConfig::for_preset(parse_preset(preset.empty() ? name : preset));
    if (!name.empty()) c.name = name;
  }
  if (j.contains("state_source")) {
    const json& s = j["state_source"];
    reject_unknown(s, {"kind", "prompts_per_step", "states_per_step", "temperature", "prefix_rule"}, "state_source");
    std::string kind;
    take(s, "kind", kind);
    if (!kind.empty()) c.state_source.kind = parse_enum(kind, kStateKinds, "state source");
    take(s, "prompts_per_step", c.state_source.prompts_per_step);
    take(s, "states_per_step", c.state_source.states_per_step);
    take(s, "temperature", c.state_source.temperature);
    std::string rule;
    take(s, "prefix_rule", rule);
    if (!rule.empty()) {
      if (rule == "all_prefixes") c.state_source.prefix_rule = PrefixRule::kAllPrefixes;
      else if (rule == "prompt_only") c.state_source.prefix_rule = PrefixRule::kPromptOnly;
      else misconfigured("unknown prefix_rule '" + rule + "'");
    }
  }
  if (j.contains("signal_source")) {
    const json& s = j["signal_source"];
    reject_unknown(s, {"kind", "continuation_length", "group_size", "kl_direction", "continuation_decoding"},
                   "signal_source");
    std::string kind;
    take(s, "kind", kind);
    if (!kind.empty()) c.signal_source.kind = parse_enum(kind, kSignalKinds, "signal source");
    take(s, "continuation_length", c.signal_source.continuation_length);
    take(s, "group_size", c.signal_source.group_size);
    std::string direction = "forward";
    std::string decoding = "greedy";
    take(s, "kl_direction", direction);
    take(s, "continuation_decoding", decoding);
    if (direction != "forward") misconfigured("only forward KL is implemented");
    if (decoding != "greedy") misconfigured("only greedy teacher continuations are implemented");
  }
  if (j.contains("loss")) {
    std::string loss;
    take(j, "loss", loss);
    c.loss = parse_enum(loss, kLosses, "loss");
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    reject_unknown(o, {"lr", "steps", "batch_size", "passes", "final_lr_fraction"}, "optimizer");
    take(o, "lr", c.optimizer.lr);
    take(o, "steps", c.optimizer.steps);
    take(o, "batch_size", c.optimizer.batch_size);
    take(o, "passes", c.optimizer.passes);
    take(o, "final_lr_fraction", c.optimizer.final_lr_fraction);
  }
  take(j, "seed", c.seed);
  if (j.contains("teacher") && !j["teacher"].is_null()) {
    std::string t;
    take(j, "teacher", t);
    c.teacher = t;
  }
  if (j.contains("task")) {
    std::string t;
    take(j, "task", t);
    try {
      c.task = parse_task(t);
    } catch (const Error& e) {
      misconfigured(e.what());
    }
  }
  take(j, "dataset_size", c.dataset_size);
  take(j, "max_generation", c.max_generation);
  c.validate();
  return c;
}

TrainerConfig load_trainer_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) misconfigured("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    misconfigured("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return trainer_config_from_json(j);
}

// ---------------------------------------------------------------------------
// State and signal sources

std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n >= total) return idx;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<SampledState> sample_states(const StateSource& source, const StateInputs& in, std::size_t n,
                                        Rng& rng) {
  std::vector<SampledState> out;
  if (source.kind == StateSourceKind::kDatasetStates) {
    if (in.dataset.empty()) misconfigured("dataset states requested without a dataset");
    for (std::size_t e = 0; e < in.dataset.size(); ++e) {
      const Example& ex = in.dataset[e];
      for (std::size_t t = 0; t < ex.gold.size(); ++t) {
        SampledState s;
        s.state = State{ex.prompt, std::vector<Token>(ex.gold.begin(), ex.gold.begin() + static_cast<std::ptrdiff_t>(t))};
        s.origin = StateOrigin::kDataset;
        s.prompt_index = e;
        s.gold_next = ex.gold[t];
        out.push_back(std::move(s));
      }
    }
    return out;
  }

  const bool by_teacher = source.kind == StateSourceKind::kTeacherRolloutStates;
  const TokenPolicy* generator = by_teacher ? in.teacher : in.student;
  if (generator == nullptr)
    misconfigured(std::string(to_string(source.kind)) + " requires a generating policy");
  if (in.dataset.empty()) misconfigured("rollout states requested without a prompt pool");
  const StateOrigin origin = by_teacher ? StateOrigin::kTeacherRollout : StateOrigin::kStudentRollout;

  std::vector<std::size_t> prompts(source.prompts_per_step);
  for (auto& p : prompts) p = static_cast<std::size_t>(rng.below(in.dataset.size()));

  if (source.prefix_rule == PrefixRule::kPromptOnly) {
    for (std::size_t p : prompts) out.push_back(SampledState{State{in.dataset[p].prompt, {}}, origin, p, std::nullopt});
    return out;
  }

  std::vector<SampledState> all;
  for (std::size_t p : prompts) {
    const Trajectory traj =
        rollout(*generator, in.dataset[p].prompt, in.max_generation, Decoding{source.temperature}, rng);
    for (std::size_t t = 0; t < traj.horizon(); ++t)
      all.push_back(SampledState{traj.state_at(t), origin, p, std::nullopt});
  }
  for (std::size_t i : subsample_indices(all.size(), n, rng)) out.push_back(std::move(all[i]));
  return out;
}

std::vector<double> compute_group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw Error(ErrorCode::kInvalidArgument, "group advantages need G >= 2");
  const double g = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= g;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / g);
  std::vector<double> adv(rewards.size(), 0.0);
  if (sd == 0.0) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / (sd + 1e-4);
  return adv;
}

SupervisionObject make_signal(const SignalSource& source, const SampledState& sampled, const SignalInputs& in,
                              Rng& rng) {
  const State& s = sampled.state;
  const std::size_t room = in.max_generation > s.prefix.size() ? in.max_generation - s.prefix.size() : 0;
  switch (source.kind) {
    case SignalKind::kGoldTokens:
      if (!sampled.gold_next)
        throw Error(ErrorCode::kInvalidPairing, "gold tokens exist only at dataset states");
      return TargetToken{*sampled.gold_next};
    case SignalKind::kTeacherLogits: {
      if (!in.teacher) misconfigured("teacher logits requested without a teacher");
      std::vector<double> z(static_cast<std::size_t>(in.teacher->vocab_size()));
      in.teacher->logits(s, z);
      std::vector<double> p(z.size());
      softmax(z, p);
      return TeacherDistribution{std::move(p)};
    }
    case SignalKind::kTeacherContinuation: {
      if (!in.teacher) misconfigured("teacher continuation requested without a teacher");
      const std::size_t len = std::min(source.continuation_length, room);
      if (len == 0) return TokenContinuation{};
      return TokenContinuation{continue_from(*in.teacher, s, len, Decoding::greedy(), rng)};
    }
    case SignalKind::kExpertContinuation:
      return TokenContinuation{expert_continuation(s.prompt, s.prefix)};
    case SignalKind::kReward: {
      if (!in.learner) misconfigured("reward groups need the learner policy");
      if (!s.prefix.empty()) throw Error(ErrorCode::kInvalidPairing, "reward groups start from prompt states");
      RewardGroup group;
      for (std::size_t g = 0; g < source.group_size; ++g) {
        Trajectory traj = rollout(*in.learner, s.prompt, in.max_generation, Decoding{in.temperature}, rng);
        group.rewards.push_back(in.reward ? in.reward(traj.prompt, traj.actions)
                                          : static_cast<double>(verify_answer(traj.prompt, traj.actions)));
        group.trajectories.push_back(std::move(traj));
      }
      group.advantages = compute_group_advantages(group.rewards);
      return group;
    }
  }
  misconfigured("unknown signal kind");
}

std::vector<LabeledState> expand_continuation(const State& state, std::span<const Token> tokens) {
  std::vector<LabeledState> out;
  out.reserve(tokens.size());
  State cur = state;
  for (Token t : tokens) {
    out.push_back(LabeledState{cur, t});
    cur.prefix.push_back(t);
  }
  return out;
}

double unified_step(PolicyParams& params, OptimizerState& opt, std::span<const SampledState> states,
                    std::span<const SupervisionObject> signals, LossKind loss) {
  if (states.size() != signals.size())
    throw Error(ErrorCode::kInvalidArgument, "states and signals are not aligned");
  LossBatch batch;
  switch (loss) {
    case LossKind::kCrossEntropy: {
      std::vector<LabeledState> items;
      for (std::size_t i = 0; i < states.size(); ++i) {
        if (const auto* t = std::get_if<TargetToken>(&signals[i])) {
          items.push_back(LabeledState{states[i].state, t->token});
        } else if (const auto* c = std::get_if<TokenContinuation>(&signals[i])) {
          auto expanded = expand_continuation(states[i].state, c->tokens);
          std::move(expanded.begin(), expanded.end(), std::back_inserter(items));
        } else {
          misconfigured("cross-entropy needs token or continuation signals");
        }
      }
      if (items.empty()) return 0.0;
      batch = std::move(items);
      break;
    }
    case LossKind::kKl: {
      std::vector<SoftTarget> items;
      for (std::size_t i = 0; i < states.size(); ++i) {
        const auto* d = std::get_if<TeacherDistribution>(&signals[i]);
        if (!d) misconfigured("KL needs teacher distribution signals");
        items.push_back(SoftTarget{states[i].state, d->probs});
      }
      if (items.empty()) return 0.0;
      batch = std::move(items);
      break;
    }
    case LossKind::kPolicyGradient: {
      PgBatch pg;
      for (const auto& sig : signals) {
        const auto* g = std::get_if<RewardGroup>(&sig);
        if (!g) misconfigured("policy gradient needs reward-group signals");
        pg.trajectories.insert(pg.trajectories.end(), g->trajectories.begin(), g->trajectories.end());
        pg.advantages.insert(pg.advantages.end(), g->advantages.begin(), g->advantages.end());
      }
      if (pg.trajectories.empty()) return 0.0;
      batch = std::move(pg);
      break;
    }
  }
  const GradBundle grads = loss_and_grad(params, batch);
  adam_step(params, grads, opt);
  return grads.loss;
}

// ---------------------------------------------------------------------------
// Training log

json to_json(const StepRecord& r) {
  json j{{"step", r.step},
         {"preset", r.preset},
         {"state_source", r.state_source},
         {"signal_source", r.signal_source},
         {"loss", r.loss}};
  if (r.mean_reward) j["mean_reward"] = *r.mean_reward;
  j["seed"] = r.seed;
  return j;
}

void write_training_log(const std::filesystem::path& path, std::span<const StepRecord> log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& r : log) f << to_json(r).dump() << '\n';
}

std::vector<StepRecord> read_training_log(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<StepRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    StepRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.preset = j.at("preset").get<std::string>();
    r.state_source = j.at("state_source").get<std::string>();
    r.signal_source = j.at("signal_source").get<std::string>();
    r.loss = j.at("loss").get<double>();
    if (j.contains("mean_reward")) r.mean_reward = j["mean_reward"].get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

TrainOutcome run_trainer(const TrainerConfig& config, const TrainInputs& inputs) {
  config.validate();
  if (inputs.init == nullptr) misconfigured("trainer needs initial parameters");
  if (config.needs_teacher() && inputs.teacher == nullptr)
    misconfigured(std::string(to_string(config.preset)) + " needs a teacher");
  if (inputs.teacher && inputs.teacher->shape.vocab != inputs.init->shape.vocab)
    misconfigured("teacher and student vocabularies differ");

  TrainOutcome out{*inputs.init, OptimizerState::fresh(inputs.init->shape, AdamConfig{config.optimizer.lr}), {}};
  const std::vector<Example> dataset =
      !inputs.dataset.empty()
          ? inputs.dataset
          : gen_examples(TaskSpec::defaults(config.task), config.dataset_size, derive_seed(config.seed, "dataset"));

  const NeuralPolicy student(out.params);
  std::optional<NeuralPolicy> teacher;
  if (inputs.teacher) teacher.emplace(*inputs.teacher);

  Rng rng(derive_seed(config.seed, std::string("trainer/") + config.name));
  const std::size_t steps = config.total_steps(dataset.size());
  const bool from_dataset = config.state_source.kind == StateSourceKind::kDatasetStates;

  StateInputs state_in;
  state_in.student = &student;
  state_in.teacher = teacher ? &*teacher : nullptr;
  state_in.max_generation = config.max_generation;

  SignalInputs signal_in;
  signal_in.teacher = state_in.teacher;
  signal_in.learner = &student;
  signal_in.reward = inputs.reward;
  signal_in.max_generation = config.max_generation;
  signal_in.temperature = config.state_source.temperature;

  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();
  std::vector<Example> batch;

  for (std::size_t step = 1; step <= steps; ++step) {
    const double progress = steps > 1 ? static_cast<double>(step - 1) / static_cast<double>(steps - 1) : 0.0;
    out.optimizer.config.lr =
        config.optimizer.lr * (1.0 - (1.0 - config.optimizer.final_lr_fraction) * progress);

    if (from_dataset) {
      batch.clear();
      for (std::size_t b = 0; b < config.optimizer.batch_size; ++b) {
        if (cursor == order.size()) {
          std::iota(order.begin(), order.end(), std::size_t{0});
          for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
          cursor = 0;
          if (b > 0) break;  // a pass ends with a short batch
        }
        batch.push_back(dataset[order[cursor++]]);
      }
      state_in.dataset = batch;
    } else {
      state_in.dataset = dataset;
    }

    const auto states = sample_states(config.state_source, state_in, config.state_source.states_per_step, rng);
    std::vector<SupervisionObject> signals;
    signals.reserve(states.size());
    for (const auto& s : states) signals.push_back(make_signal(config.signal_source, s, signal_in, rng));

    StepRecord rec;
    rec.step = step;
    rec.preset = to_string(config.preset);
    rec.state_source = to_string(config.state_source.kind);
    rec.signal_source = to_string(config.signal_source.kind);
    rec.seed = config.seed;
    rec.states = states.size();
    std::set<StateOrigin> origins;
    for (const auto& s : states) origins.insert(s.origin);
    rec.origins.assign(origins.begin(), origins.end());
    if (config.signal_source.kind == SignalKind::kReward) {
      double total = 0.0;
      std::size_t count = 0;
      for (const auto& sig : signals)
        for (double r : std::get<RewardGroup>(sig).rewards) {
          total += r;
          ++count;
        }
      rec.mean_reward = count ? total / static_cast<double>(count) : 0.0;
    }
    rec.loss = unified_step(out.params, out.optimizer, states, signals, config.loss);
    out.log.push_back(std::move(rec));
    if (inputs.on_step && !inputs.on_step(step, out.params)) break;
  }
  out.optimizer.config.lr = config.optimizer.lr;
  return out;
}

namespace {

TrainOutcome run_checked(Preset expected, const TrainerConfig& config, const TrainInputs& inputs) {
  if (config.preset != expected)
    misconfigured(std::string("expected a ") + to_string(expected) + " config, got " + to_string(config.preset));
  return run_trainer(config, inputs);
}

}  // namespace

TrainOutcome train_sft(const TrainerConfig& c, const TrainInputs& in) { return run_checked(Preset::kSft, c, in); }
TrainOutcome train_offline_kd(const TrainerConfig& c, const TrainInputs& in) {
  return run_checked(Preset::kOfflineKd, c, in);
}
TrainOutcome train_opd_onestep(const TrainerConfig& c, const TrainInputs& in) {
  return run_checked(Preset::kOpdOneStep, c, in);
}
TrainOutcome train_opd_continuation(const TrainerConfig& c, const TrainInputs& in) {
  return run_checked(Preset::kOpdContinuation, c, in);
}
TrainOutcome train_rl_grpo(const TrainerConfig& c, const TrainInputs& in) {
  return run_checked(Preset::kRlGrpo, c, in);
}
TrainOutcome train_dagger(const TrainerConfig& c, const TrainInputs& in) {
  return run_checked(Preset::kDagger, c, in);
}

TrainArtifacts train_to_directory(const TrainerConfig& config, const std::filesystem::path& init_checkpoint,
                                  const std::filesystem::path& out_dir) {
  config.validate();
  if (config.needs_teacher() && !config.teacher) misconfigured(config.name + ": teacher checkpoint not set");
  const Checkpoint init = load_checkpoint(init_checkpoint);
  std::optional<Checkpoint> teacher;
  if (config.needs_teacher()) teacher = load_checkpoint(*config.teacher);
  TrainInputs in;
  in.init = &init.params;
  in.teacher = teacher ? &teacher->params : nullptr;
  const TrainOutcome outcome = run_trainer(config, in);
  TrainArtifacts art{out_dir / "checkpoint.ssl", out_dir / "train_log.jsonl", outcome.log.size()};
  std::filesystem::create_directories(out_dir);
  write_training_log(art.log, outcome.log);
  save_checkpoint(outcome.params, outcome.optimizer, art.checkpoint);
  return art;
}

}  // namespace sslab
