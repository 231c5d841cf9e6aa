#include "sslab/harness.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "sslab/checkpoint.hpp"
#include "sslab/error.hpp"

namespace sslab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void misconfigured(const std::string& what) { throw Error(ErrorCode::kMisconfiguration, what); }

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

TaskKind task_or_misconfigured(const std::string& name) {
  try {
    return parse_task(name);
  } catch (const Error& e) {
    misconfigured(e.what());
  }
}

void emit(const ProgressFn& progress, const std::string& line) {
  if (progress) progress(line);
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    f << text;
    if (!f) throw Error(ErrorCode::kIo, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::uint64_t eval_seed(const RunConfig& c) { return derive_seed(c.seed, "eval"); }

StageSpec default_stage(const std::string& name, const std::string& trainer, std::optional<std::string> teacher) {
  return StageSpec{name, TrainerConfig::named(trainer), std::move(teacher)};
}

bool safe_name(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s)
    if (!(std::islower(static_cast<unsigned char>(ch)) || std::isdigit(static_cast<unsigned char>(ch)) || ch == '_'))
      return false;
  return true;
}

fs::path checkpoint_path(const RunConfig& c, const std::string& run) { return c.run_dir(run) / "checkpoint.ssl"; }

}  // namespace

MixtureWeights pretrain_mixture() {
  return {{TaskKind::kCopy, 0.3}, {TaskKind::kReverse, 0.3}, {TaskKind::kCount, 0.3}, {TaskKind::kChainArith, 0.3}};
}

// Pipeline OPD stages run longer than the preset defaults, with full-length
// teacher continuations.
StageSpec opd_stage(std::string name, std::string trainer, std::string teacher) {
  StageSpec s = default_stage(std::move(name), std::move(trainer), std::move(teacher));
  s.trainer.optimizer.steps = 1200;
  if (s.trainer.preset == Preset::kOpdContinuation) s.trainer.signal_source.continuation_length = 32;
  return s;
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.pretrain.weights = pretrain_mixture();
  c.stages = {
      default_stage("sft_mild", "sft_mild", std::nullopt),
      default_stage("sft_stress", "sft_stress", std::nullopt),
      opd_stage("opd_cont_mild", "opd_continuation", "sft_mild"),
      opd_stage("opd_cont_stress", "opd_continuation", "sft_stress"),
      opd_stage("opd_onestep_stress", "opd_onestep", "sft_stress"),
      default_stage("rl_grpo", "rl_grpo", std::nullopt),
      default_stage("dagger", "dagger", std::nullopt),
  };
  return c;
}

void RunConfig::validate() const {
  if (workdir.empty()) misconfigured("workdir must be set");
  const auto& p = pretrain;
  if (p.weights.empty()) misconfigured("pretrain.weights must name at least one task");
  double total = 0.0;
  for (const auto& [k, w] : p.weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) misconfigured("pretrain.weights must be finite and non-negative");
    total += w;
  }
  if (!(total > 0.0)) misconfigured("pretrain.weights sum to zero");
  if (p.max_steps < 1 || p.batch_size < 1 || p.eval_every < 1) misconfigured("pretrain sizes must be >= 1");
  if (!(p.lr > 0.0) || !std::isfinite(p.lr)) misconfigured("pretrain.lr must be positive");
  if (!(p.final_lr_fraction > 0.0 && p.final_lr_fraction <= 1.0))
    misconfigured("pretrain.final_lr_fraction must be in (0, 1]");
  if (!(p.copy_threshold >= 0.0 && p.copy_threshold <= 1.0)) misconfigured("pretrain.copy_threshold must be in [0, 1]");
  if (eval.examples < 1) misconfigured("eval.examples must be >= 1");
  if (drift.prompts < 1) misconfigured("drift.prompts must be >= 1");
  if (drift.states < 2) misconfigured("drift.states must be >= 2");
  if (drift.projections < 1) misconfigured("drift.projections must be >= 1");
  if (drift.featurizer.features < 2) misconfigured("drift.features must be >= 2");
  if (!(drift.temperature >= 0.0) || !std::isfinite(drift.temperature)) misconfigured("drift.temperature must be >= 0");

  std::set<std::string> seen;
  for (const auto& s : stages) {
    if (!safe_name(s.name)) misconfigured("stage name '" + s.name + "' must be lowercase letters, digits or '_'");
    if (s.name == kBaseRun) misconfigured("stage name 'base' is reserved");
    if (!seen.insert(s.name).second) misconfigured("duplicate stage '" + s.name + "'");
    s.trainer.validate();
    if (s.trainer.needs_teacher() && !s.teacher_stage)
      misconfigured("stage " + s.name + " (" + to_string(s.trainer.preset) + ") needs a teacher_stage");
    if (!s.trainer.needs_teacher() && s.teacher_stage)
      misconfigured("stage " + s.name + " does not use a teacher");
    if (s.teacher_stage && (seen.count(*s.teacher_stage) == 0 || *s.teacher_stage == s.name))
      misconfigured("stage " + s.name + ": teacher_stage '" + *s.teacher_stage + "' is not an earlier stage");
  }
}

const StageSpec* RunConfig::find_stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return &s;
  return nullptr;
}

json to_json(const RunConfig& c) {
  json weights = json::object();
  for (const auto& [k, w] : c.pretrain.weights) weights[task_name(k)] = w;
  json stages = json::array();
  for (const auto& s : c.stages) {
    json t = to_json(s.trainer);
    t.erase("teacher");
    t.erase("seed");
    stages.push_back({{"name", s.name},
                      {"teacher_stage", s.teacher_stage ? json(*s.teacher_stage) : json(nullptr)},
                      {"trainer", t}});
  }
  return json{{"seed", c.seed},
              {"workdir", c.workdir.string()},
              {"pretrain",
               {{"weights", weights},
                {"max_steps", c.pretrain.max_steps},
                {"batch_size", c.pretrain.batch_size},
                {"lr", c.pretrain.lr},
                {"final_lr_fraction", c.pretrain.final_lr_fraction},
                {"eval_every", c.pretrain.eval_every},
                {"copy_threshold", c.pretrain.copy_threshold}}},
              {"eval", {{"examples", c.eval.examples}}},
              {"drift",
               {{"prompts", c.drift.prompts},
                {"states", c.drift.states},
                {"temperature", c.drift.temperature},
                {"projections", c.drift.projections},
                {"features", c.drift.featurizer.features},
                {"hash_seed", c.drift.featurizer.hash_seed}}},
              {"stages", stages}};
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"seed", "workdir", "pretrain", "eval", "drift", "stages"}, "run config");
  RunConfig c = RunConfig::defaults();
  take(j, "seed", c.seed);
  std::string workdir = c.workdir.string();
  take(j, "workdir", workdir);
  c.workdir = workdir;
  if (j.contains("pretrain")) {
    const json& p = j["pretrain"];
    reject_unknown(p, {"weights", "max_steps", "batch_size", "lr", "final_lr_fraction", "eval_every", "copy_threshold"},
                   "pretrain");
    if (p.contains("weights")) {
      if (!p["weights"].is_object()) misconfigured("pretrain.weights must be an object");
      c.pretrain.weights.clear();
      for (const auto& [name, w] : p["weights"].items()) {
        if (!w.is_number()) misconfigured("pretrain.weights." + name + " must be a number");
        c.pretrain.weights[task_or_misconfigured(name)] = w.get<double>();
      }
    }
    take(p, "max_steps", c.pretrain.max_steps);
    take(p, "batch_size", c.pretrain.batch_size);
    take(p, "lr", c.pretrain.lr);
    take(p, "final_lr_fraction", c.pretrain.final_lr_fraction);
    take(p, "eval_every", c.pretrain.eval_every);
    take(p, "copy_threshold", c.pretrain.copy_threshold);
  }
  if (j.contains("eval")) {
    reject_unknown(j["eval"], {"examples"}, "eval");
    take(j["eval"], "examples", c.eval.examples);
  }
  if (j.contains("drift")) {
    const json& d = j["drift"];
    reject_unknown(d, {"prompts", "states", "temperature", "projections", "features", "hash_seed"}, "drift");
    take(d, "prompts", c.drift.prompts);
    take(d, "states", c.drift.states);
    take(d, "temperature", c.drift.temperature);
    take(d, "projections", c.drift.projections);
    take(d, "features", c.drift.featurizer.features);
    take(d, "hash_seed", c.drift.featurizer.hash_seed);
  }
  if (j.contains("stages")) {
    if (!j["stages"].is_array()) misconfigured("stages must be an array");
    c.stages.clear();
    for (const json& s : j["stages"]) {
      reject_unknown(s, {"name", "teacher_stage", "trainer"}, "stage");
      StageSpec stage;
      take(s, "name", stage.name);
      if (s.contains("teacher_stage") && !s["teacher_stage"].is_null()) {
        std::string t;
        take(s, "teacher_stage", t);
        stage.teacher_stage = t;
      }
      if (!s.contains("trainer")) misconfigured("stage " + stage.name + " has no trainer");
      if (s["trainer"].contains("teacher")) misconfigured("stage trainers take teacher_stage, not teacher");
      if (s["trainer"].contains("seed")) misconfigured("stage trainers use the run seed; drop 'seed'");
      stage.trainer = trainer_config_from_json(s["trainer"]);
      c.stages.push_back(std::move(stage));
    }
  }
  for (auto& s : c.stages) s.trainer.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) misconfigured("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    misconfigured("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

json scores_to_json(const Scores& scores) {
  json j = json::object();
  for (const auto& [k, v] : scores) j[task_name(k)] = v;
  return j;
}

Scores scores_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "scores must be a JSON object");
  Scores s;
  for (const auto& [name, v] : j.items()) s[parse_task(name)] = v.get<double>();
  return s;
}

Scores evaluate_policy(const TokenPolicy& policy, const RunConfig& config) {
  Scores s;
  for (TaskKind k : kAllTasks)
    s[k] = score_exact_match(policy, TaskSpec::defaults(k), config.eval.examples, eval_seed(config)).score;
  return s;
}

PretrainResult run_pretrain(const RunConfig& config, const ProgressFn& progress) {
  config.validate();
  const fs::path ckpt = checkpoint_path(config, kBaseRun);
  const fs::path scores_file = config.run_dir(kBaseRun) / "scores.json";
  if (fs::exists(ckpt)) {
    emit(progress, "pretrain: reusing " + ckpt.string());
    PretrainResult r{ckpt, {}, 0};
    if (fs::exists(scores_file)) {
      r.scores = scores_from_json(json::parse(read_text(scores_file)));
    } else {
      const Checkpoint base = load_checkpoint(ckpt);
      r.scores = evaluate_policy(NeuralPolicy(base.params), config);
      write_text(scores_file, scores_to_json(r.scores).dump(2) + "\n");
    }
    return r;
  }

  const auto& p = config.pretrain;
  const PolicyParams init = PolicyParams::random(ModelShape{}, derive_seed(config.seed, "init"));
  TrainerConfig tc = TrainerConfig::for_preset(Preset::kSft);
  tc.name = "pretrain";
  tc.seed = config.seed;
  tc.optimizer = {p.lr, 1, p.batch_size, 1, p.final_lr_fraction};

  TrainInputs in;
  in.init = &init;
  in.dataset = gen_pretrain_mixture(p.weights, p.max_steps * p.batch_size, derive_seed(config.seed, "pretrain/mixture"));
  const TaskSpec copy = TaskSpec::defaults(TaskKind::kCopy);
  double copy_score = 0.0;
  std::size_t checked_at = 0;
  in.on_step = [&](std::size_t step, const PolicyParams& params) {
    if (step % p.eval_every != 0) return true;
    copy_score = score_exact_match(NeuralPolicy(params), copy, config.eval.examples, eval_seed(config)).score;
    checked_at = step;
    emit(progress, "pretrain: step " + std::to_string(step) + " copy " + fmt(copy_score));
    return copy_score < p.copy_threshold;
  };
  emit(progress, "pretrain: up to " + std::to_string(p.max_steps) + " steps");
  TrainOutcome out = run_trainer(tc, in);
  if (checked_at != out.log.size())
    copy_score = score_exact_match(NeuralPolicy(out.params), copy, config.eval.examples, eval_seed(config)).score;

  PretrainResult r{ckpt, evaluate_policy(NeuralPolicy(out.params), config), out.log.size()};
  if (copy_score < p.copy_threshold)
    throw Error(ErrorCode::kPretrainFailure, "copy score " + fmt(copy_score) + " below " + fmt(p.copy_threshold) +
                                                 " after " + std::to_string(out.log.size()) +
                                                 " steps; final scores " + scores_to_json(r.scores).dump());
  fs::create_directories(config.run_dir(kBaseRun));
  write_training_log(config.run_dir(kBaseRun) / "train_log.jsonl", out.log);
  write_text(scores_file, scores_to_json(r.scores).dump(2) + "\n");
  save_checkpoint(out.params, out.optimizer, ckpt);
  emit(progress, "pretrain: done after " + std::to_string(r.steps) + " steps, target " +
                     fmt(r.scores.at(kTargetTask)) + " copy " + fmt(r.scores.at(TaskKind::kCopy)));
  return r;
}

std::vector<Example> drift_prompts(const RunConfig& config) {
  return gen_examples(TaskSpec::defaults(kTargetTask), config.drift.prompts, derive_seed(config.seed, "drift/prompts"),
                      Split::kEval);
}

std::vector<StateRecord> collect_states(const TokenPolicy& policy, const std::string& model_id,
                                        std::span<const Example> prompts, std::size_t n_states, double temperature,
                                        std::uint64_t seed) {
  Rng rollouts(derive_seed(seed, "rollouts"));
  std::vector<StateRecord> all;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const Trajectory traj = rollout(policy, prompts[i].prompt, kMaxGeneration, Decoding{temperature}, rollouts);
    for (std::size_t t = 0; t < traj.horizon(); ++t) all.push_back(StateRecord{model_id, i, t, traj.state_at(t)});
  }
  Rng thin(derive_seed(seed, "subsample"));
  std::vector<StateRecord> out;
  for (std::size_t i : subsample_indices(all.size(), n_states, thin)) out.push_back(std::move(all[i]));
  return out;
}

StageOutcome run_stage(const RunConfig& config, const StageSpec& stage, const ProgressFn& progress) {
  StageOutcome o{stage.name, false, 0, {}};
  const fs::path ckpt = checkpoint_path(config, stage.name);
  if (fs::exists(ckpt)) {
    emit(progress, stage.name + ": reusing " + ckpt.string());
    return o;
  }
  const fs::path base = checkpoint_path(config, kBaseRun);
  if (!fs::exists(base)) throw Error(ErrorCode::kIo, "base checkpoint missing: " + base.string());
  TrainerConfig tc = stage.trainer;
  tc.seed = config.seed;
  if (stage.teacher_stage) {
    const fs::path teacher = checkpoint_path(config, *stage.teacher_stage);
    if (!fs::exists(teacher))
      throw Error(ErrorCode::kIo, "teacher stage " + *stage.teacher_stage + " has no checkpoint");
    tc.teacher = teacher.string();
  }
  emit(progress, stage.name + ": training " + to_string(tc.preset));
  const auto start = std::chrono::steady_clock::now();
  const TrainArtifacts art = train_to_directory(tc, base, config.run_dir(stage.name));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.trained = true;
  o.steps = art.steps;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1fs", secs);
  emit(progress, stage.name + ": " + std::to_string(art.steps) + " steps in " + buf);
  return o;
}

namespace {

// Scores and state sample of one run, computed once and cached beside the checkpoint.
struct RunArtifacts {
  Scores scores;
  StateSample sample;
};

RunArtifacts load_or_compute(const RunConfig& config, const std::string& run, std::span<const Example> prompts,
                             const ProgressFn& progress) {
  const fs::path dir = config.run_dir(run);
  const fs::path scores_file = dir / "scores.json";
  const fs::path states_file = dir / "states.jsonl";
  std::optional<Checkpoint> ckpt;
  auto params = [&]() -> const PolicyParams& {
    if (!ckpt) ckpt = load_checkpoint(dir / "checkpoint.ssl");
    return ckpt->params;
  };
  RunArtifacts a;
  if (fs::exists(scores_file)) {
    a.scores = scores_from_json(json::parse(read_text(scores_file)));
  } else {
    emit(progress, run + ": evaluating");
    a.scores = evaluate_policy(NeuralPolicy(params()), config);
    write_text(scores_file, scores_to_json(a.scores).dump(2) + "\n");
  }
  if (!fs::exists(states_file)) {
    emit(progress, run + ": collecting states");
    const auto records = collect_states(NeuralPolicy(params()), run, prompts, config.drift.states,
                                        config.drift.temperature, derive_seed(config.seed, "drift"));
    write_state_records(states_file.string() + ".tmp", records);
    fs::rename(states_file.string() + ".tmp", states_file);
  }
  SampleProvenance prov{"chain_arith/eval/" + std::to_string(config.drift.prompts) + "/" + std::to_string(config.seed),
                        derive_seed(config.seed, "drift"), 0};
  const auto records = read_state_records(states_file);
  std::vector<State> states;
  states.reserve(records.size());
  for (const auto& r : records) states.push_back(r.state);
  a.sample = make_state_sample(run, states, config.drift.featurizer, prov);
  return a;
}

}  // namespace

Report build_report(const RunConfig& config, const ProgressFn& progress) {
  config.validate();
  if (!fs::exists(checkpoint_path(config, kBaseRun)))
    throw Error(ErrorCode::kIo, "no base checkpoint in " + config.workdir.string());
  const auto prompts = drift_prompts(config);
  const RunArtifacts base = load_or_compute(config, kBaseRun, prompts, progress);

  Report report;
  report.config = to_json(config);
  report.rows.push_back(ReportRow{kBaseRun, base.scores, std::nullopt, std::nullopt, std::nullopt, "ok", {}});
  const std::uint64_t projection_seed = derive_seed(config.seed, "drift/projections");
  for (const auto& stage : config.stages) {
    ReportRow row;
    row.run = stage.name;
    if (!fs::exists(checkpoint_path(config, stage.name))) {
      row.status = "failed";
      row.error = "no checkpoint";
      report.rows.push_back(std::move(row));
      continue;
    }
    const RunArtifacts a = load_or_compute(config, stage.name, prompts, progress);
    row.scores = a.scores;
    row.drift = drift_report(base.sample, a.sample, config.drift.projections, projection_seed);
    row.mmd = row.drift->mmd;
    row.retention = retention_stats(base.scores, a.scores);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string report_csv(const Report& report) {
  std::string out = "run,target,copy,reverse,count,mmd,forgetting,retention\n";
  for (const auto& r : report.rows) {
    auto score = [&](TaskKind k) {
      const auto it = r.scores.find(k);
      return it == r.scores.end() ? std::string() : fmt(it->second);
    };
    out += r.run + "," + score(kTargetTask) + "," + score(TaskKind::kCopy) + "," + score(TaskKind::kReverse) + "," +
           score(TaskKind::kCount) + ",";
    out += r.mmd ? fmt(*r.mmd) : std::string();
    out += ",";
    out += r.retention ? fmt(r.retention->mean_forgetting) : std::string();
    out += ",";
    out += r.retention && std::isfinite(r.retention->mean_retention) ? fmt(r.retention->mean_retention) : std::string();
    out += "\n";
  }
  return out;
}

json report_json(const Report& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    json row{{"run", r.run}, {"status", r.status}};
    if (!r.error.empty()) row["error"] = r.error;
    if (!r.scores.empty()) {
      row["scores"] = scores_to_json(r.scores);
      row["target"] = r.scores.at(kTargetTask);
    }
    row["mmd"] = r.mmd ? json(*r.mmd) : json(nullptr);
    row["drift"] = r.drift ? to_json(*r.drift) : json(nullptr);
    row["retention"] = r.retention ? to_json(*r.retention) : json(nullptr);
    row["artifacts"] = {{"checkpoint", r.run + "/checkpoint.ssl"},
                        {"train_log", r.run + "/train_log.jsonl"},
                        {"states", r.run + "/states.jsonl"},
                        {"scores", r.run + "/scores.json"}};
    rows.push_back(std::move(row));
  }
  const json& c = report.config;
  json seeds{{"run", c.value("seed", 0)}};
  if (c.contains("seed")) {
    const auto s = c["seed"].get<std::uint64_t>();
    seeds["init"] = derive_seed(s, "init");
    seeds["pretrain_mixture"] = derive_seed(s, "pretrain/mixture");
    seeds["eval"] = derive_seed(s, "eval");
    seeds["drift_prompts"] = derive_seed(s, "drift/prompts");
    seeds["drift_rollouts"] = derive_seed(s, "drift");
    seeds["drift_projections"] = derive_seed(s, "drift/projections");
  }
  return json{{"columns", {"run", "target", "copy", "reverse", "count", "mmd", "forgetting", "retention"}},
              {"rows", rows},
              {"seeds", seeds},
              {"config", c}};
}

void write_report(const RunConfig& config, const Report& report) {
  write_text(config.workdir / "report.csv", report_csv(report));
  write_text(config.workdir / "report.json", report_json(report).dump(2) + "\n");
}

ReplicateResult replicate_pipeline(const RunConfig& config, const ProgressFn& progress) {
  config.validate();
  fs::create_directories(config.workdir);
  WorkdirLock lock(config.workdir);
  ReplicateResult result;
  result.training_steps += run_pretrain(config, progress).steps;
  for (const auto& stage : config.stages) {
    StageOutcome o;
    try {
      o = run_stage(config, stage, progress);
    } catch (const Error& e) {
      o = StageOutcome{stage.name, false, 0, std::string(to_string(e.code())) + ": " + e.what()};
      emit(progress, stage.name + ": failed, " + o.error);
    }
    result.training_steps += o.steps;
    result.stages.push_back(std::move(o));
  }
  result.report = build_report(config, progress);
  for (auto& row : result.report.rows)
    for (const auto& o : result.stages)
      if (o.name == row.run && !o.error.empty()) row.error = o.error;
  write_report(config, result.report);
  result.csv = config.workdir / "report.csv";
  result.json = config.workdir / "report.json";
  emit(progress, "report: " + result.csv.string());
  return result;
}

WorkdirLock::WorkdirLock(const fs::path& workdir) : path_(workdir / ".sslab.lock") {
  fs::create_directories(workdir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw Error(ErrorCode::kBusy, "work directory " + workdir.string() + " is in use (remove " + path_.string() +
                                        " if no other run is active)");
    throw Error(ErrorCode::kIo, "cannot create " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

WorkdirLock::~WorkdirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

}  // namespace sslab
