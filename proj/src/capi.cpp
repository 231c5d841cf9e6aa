#include "sslab/sslab.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <string>

#include "sslab/checkpoint.hpp"
#include "sslab/drift.hpp"
#include "sslab/error.hpp"
#include "sslab/harness.hpp"

struct sslab_run {
  sslab::RunConfig config;
  bool verbose = false;
};

struct sslab_policy {
  sslab::Checkpoint checkpoint;
};

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

thread_local std::string g_last_error;

sslab_status status_of(sslab::ErrorCode code) {
  using sslab::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument: return SSLAB_E_INVALID_ARGUMENT;
    case ErrorCode::kInvalidToken: return SSLAB_E_INVALID_TOKEN;
    case ErrorCode::kInvalidSignal: return SSLAB_E_INVALID_SIGNAL;
    case ErrorCode::kInvalidPairing: return SSLAB_E_INVALID_PAIRING;
    case ErrorCode::kNumericFault: return SSLAB_E_NUMERIC_FAULT;
    case ErrorCode::kCorruptCheckpoint: return SSLAB_E_CORRUPT_CHECKPOINT;
    case ErrorCode::kMisconfiguration: return SSLAB_E_MISCONFIGURATION;
    case ErrorCode::kIo: return SSLAB_E_IO;
    case ErrorCode::kPretrainFailure: return SSLAB_E_PRETRAIN_FAILURE;
    case ErrorCode::kRatioUndefined: return SSLAB_E_RATIO_UNDEFINED;
    case ErrorCode::kBusy: return SSLAB_E_BUSY;
  }
  return SSLAB_E_INTERNAL;
}

sslab_status fail(sslab_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

template <typename F>
sslab_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return SSLAB_OK;
  } catch (const sslab::Error& e) {
    return fail(status_of(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail(SSLAB_E_INVALID_ARGUMENT, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(SSLAB_E_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(SSLAB_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SSLAB_E_INTERNAL, e.what());
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_json(char** out, const json& j) {
  if (out != nullptr) *out = copy_string(j.dump(2));
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw sslab::Error(sslab::ErrorCode::kInvalidArgument, std::string(what) + " is NULL");
}

sslab::ProgressFn progress_of(const sslab_run* run) {
  if (!run->verbose) return {};
  return [](const std::string& line) { std::cerr << "[sslab] " << line << std::endl; };
}

}  // namespace

extern "C" {

const char* sslab_last_error(void) { return g_last_error.c_str(); }

const char* sslab_status_name(sslab_status status) {
  switch (status) {
    case SSLAB_OK: return "ok";
    case SSLAB_E_INVALID_ARGUMENT: return "invalid-argument";
    case SSLAB_E_INVALID_TOKEN: return "invalid-token";
    case SSLAB_E_INVALID_SIGNAL: return "invalid-signal";
    case SSLAB_E_INVALID_PAIRING: return "invalid-pairing";
    case SSLAB_E_NUMERIC_FAULT: return "numeric-fault";
    case SSLAB_E_CORRUPT_CHECKPOINT: return "corrupt-checkpoint";
    case SSLAB_E_MISCONFIGURATION: return "misconfiguration";
    case SSLAB_E_IO: return "io";
    case SSLAB_E_PRETRAIN_FAILURE: return "pretrain-failure";
    case SSLAB_E_RATIO_UNDEFINED: return "ratio-undefined";
    case SSLAB_E_BUSY: return "busy";
    case SSLAB_E_INTERNAL: return "internal";
  }
  return "unknown";
}

void sslab_string_free(char* s) { std::free(s); }

sslab_status sslab_run_create(const char* config_path, sslab_run** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    auto run = std::make_unique<sslab_run>();
    run->config = config_path ? sslab::load_run_config(config_path) : sslab::RunConfig::defaults();
    *out = run.release();
  });
}

void sslab_run_destroy(sslab_run* run) { delete run; }

sslab_status sslab_run_set_seed(sslab_run* run, uint64_t seed) {
  return guarded([&] {
    require(run, "run");
    run->config.seed = seed;
    for (auto& s : run->config.stages) s.trainer.seed = seed;
  });
}

sslab_status sslab_run_set_workdir(sslab_run* run, const char* workdir) {
  return guarded([&] {
    require(run, "run");
    require(workdir, "workdir");
    if (*workdir == '\0') throw sslab::Error(sslab::ErrorCode::kMisconfiguration, "workdir must be set");
    run->config.workdir = workdir;
  });
}

sslab_status sslab_run_set_verbose(sslab_run* run, int verbose) {
  return guarded([&] {
    require(run, "run");
    run->verbose = verbose != 0;
  });
}

sslab_status sslab_run_config_json(const sslab_run* run, char** out_json) {
  return guarded([&] {
    require(run, "run");
    require(out_json, "out_json");
    put_json(out_json, sslab::to_json(run->config));
  });
}

sslab_status sslab_run_pretrain(sslab_run* run, char** out_json) {
  return guarded([&] {
    require(run, "run");
    run->config.validate();
    sslab::WorkdirLock lock(run->config.workdir);
    const auto r = sslab::run_pretrain(run->config, progress_of(run));
    put_json(out_json, json{{"checkpoint", r.checkpoint.string()},
                            {"steps", r.steps},
                            {"scores", sslab::scores_to_json(r.scores)}});
  });
}

sslab_status sslab_run_train(sslab_run* run, const char* name, const char* init_ckpt, const char* teacher_ckpt,
                             const char* out_dir, char** out_json) {
  return guarded([&] {
    require(run, "run");
    require(name, "name");
    const auto& config = run->config;
    config.validate();
    sslab::TrainerConfig tc;
    std::optional<std::string> teacher_stage;
    if (const auto* stage = config.find_stage(name)) {
      tc = stage->trainer;
      teacher_stage = stage->teacher_stage;
    } else {
      tc = sslab::TrainerConfig::named(name);
    }
    tc.seed = config.seed;
    if (teacher_ckpt) {
      tc.teacher = teacher_ckpt;
    } else if (teacher_stage) {
      tc.teacher = (config.run_dir(*teacher_stage) / "checkpoint.ssl").string();
    }
    if (tc.needs_teacher() && !tc.teacher)
      throw sslab::Error(sslab::ErrorCode::kMisconfiguration,
                         std::string(name) + " needs a teacher checkpoint (--teacher)");
    const fs::path init = init_ckpt ? fs::path(init_ckpt) : config.run_dir(sslab::kBaseRun) / "checkpoint.ssl";
    const fs::path dir = out_dir ? fs::path(out_dir) : config.run_dir(name);
    sslab::WorkdirLock lock(config.workdir);
    if (auto p = progress_of(run)) p(std::string(name) + ": training " + sslab::to_string(tc.preset));
    const auto art = sslab::train_to_directory(tc, init, dir);
    put_json(out_json, json{{"checkpoint", art.checkpoint.string()}, {"log", art.log.string()}, {"steps", art.steps}});
  });
}

sslab_status sslab_run_eval(const sslab_run* run, const char* ckpt, char** out_json) {
  return guarded([&] {
    require(run, "run");
    require(ckpt, "ckpt");
    const auto c = sslab::load_checkpoint(ckpt);
    const auto scores = sslab::evaluate_policy(sslab::NeuralPolicy(c.params), run->config);
    put_json(out_json, json{{"checkpoint", ckpt},
                            {"examples", run->config.eval.examples},
                            {"scores", sslab::scores_to_json(scores)}});
  });
}

sslab_status sslab_run_report(sslab_run* run, char** out_json) {
  return guarded([&] {
    require(run, "run");
    run->config.validate();
    sslab::WorkdirLock lock(run->config.workdir);
    const auto report = sslab::build_report(run->config, progress_of(run));
    sslab::write_report(run->config, report);
    put_json(out_json, json{{"report_csv", (run->config.workdir / "report.csv").string()},
                            {"report_json", (run->config.workdir / "report.json").string()},
                            {"rows", report.rows.size()}});
  });
}

sslab_status sslab_run_replicate(sslab_run* run, char** out_json) {
  return guarded([&] {
    require(run, "run");
    const auto r = sslab::replicate_pipeline(run->config, progress_of(run));
    json stages = json::array();
    for (const auto& s : r.stages) {
      json j{{"name", s.name}, {"trained", s.trained}, {"steps", s.steps}};
      if (!s.error.empty()) j["error"] = s.error;
      stages.push_back(std::move(j));
    }
    put_json(out_json, json{{"report_csv", r.csv.string()},
                            {"report_json", r.json.string()},
                            {"training_steps", r.training_steps},
                            {"stages", stages}});
  });
}

sslab_status sslab_run_drift_files(const sslab_run* run, const char* a_path, const char* b_path, char** out_json) {
  return guarded([&] {
    require(run, "run");
    require(a_path, "a_path");
    require(b_path, "b_path");
    const auto& d = run->config.drift;
    const auto a = sslab::load_state_sample(a_path, d.featurizer);
    const auto b = sslab::load_state_sample(b_path, d.featurizer);
    const auto report = sslab::drift_report(a, b, d.projections, sslab::derive_seed(run->config.seed, "drift/projections"));
    json j = sslab::to_json(report);
    j["a"] = a_path;
    j["b"] = b_path;
    j["states_a"] = a.size();
    j["states_b"] = b.size();
    put_json(out_json, j);
  });
}

sslab_status sslab_policy_load(const char* ckpt, sslab_policy** out) {
  return guarded([&] {
    require(ckpt, "ckpt");
    require(out, "out");
    *out = nullptr;
    auto p = std::make_unique<sslab_policy>();
    p->checkpoint = sslab::load_checkpoint(ckpt);
    *out = p.release();
  });
}

void sslab_policy_destroy(sslab_policy* policy) { delete policy; }

sslab_status sslab_policy_param_count(const sslab_policy* policy, size_t* out) {
  return guarded([&] {
    require(policy, "policy");
    require(out, "out");
    *out = policy->checkpoint.params.shape.param_count();
  });
}

sslab_status sslab_policy_score(const sslab_policy* policy, const char* task, size_t n, uint64_t seed, double* out) {
  return guarded([&] {
    require(policy, "policy");
    require(task, "task");
    require(out, "out");
    if (n == 0) throw sslab::Error(sslab::ErrorCode::kInvalidArgument, "n must be >= 1");
    const sslab::NeuralPolicy pol(policy->checkpoint.params);
    *out = sslab::score_exact_match(pol, sslab::TaskSpec::defaults(sslab::parse_task(task)), n, seed).score;
  });
}

sslab_status sslab_policy_generate(const sslab_policy* policy, const char* prompt, char** out_text) {
  return guarded([&] {
    require(policy, "policy");
    require(prompt, "prompt");
    require(out_text, "out_text");
    const auto& vocab = sslab::Vocab::standard();
    if (policy->checkpoint.params.shape.vocab != static_cast<int>(vocab.size()))
      throw sslab::Error(sslab::ErrorCode::kInvalidArgument, "checkpoint vocabulary is not the standard one");
    const auto tokens = vocab.encode(prompt);
    sslab::Rng unused(0);
    const auto traj = sslab::rollout(sslab::NeuralPolicy(policy->checkpoint.params), tokens, sslab::kMaxGeneration,
                                     sslab::Decoding::greedy(), unused);
    *out_text = copy_string(vocab.decode(traj.actions));
  });
}

sslab_status sslab_retention(const double* base, const double* post, size_t n, double* mean_forgetting,
                             double* mean_retention) {
  bool undefined = false;
  const sslab_status st = guarded([&] {
    require(base, "base");
    require(post, "post");
    require(mean_forgetting, "mean_forgetting");
    require(mean_retention, "mean_retention");
    if (n == 0) throw sslab::Error(sslab::ErrorCode::kInvalidArgument, "n must be >= 1");
    double f = 0.0;
    double ratio = 0.0;
    std::size_t defined = 0;
    for (std::size_t i = 0; i < n; ++i) {
      f += base[i] - post[i];
      if (base[i] > 0.0) {
        ratio += post[i] / base[i];
        ++defined;
      }
    }
    *mean_forgetting = f / static_cast<double>(n);
    *mean_retention = defined ? ratio / static_cast<double>(defined) : std::nan("");
    undefined = defined < n;
  });
  if (st == SSLAB_OK && undefined)
    return fail(SSLAB_E_RATIO_UNDEFINED, "some base scores are 0; mean retention covers the defined ratios only");
  return st;
}

}  // extern "C"
