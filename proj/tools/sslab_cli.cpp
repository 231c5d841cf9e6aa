// sslab: command-line front end over the C API.
//
//   sslab [--config FILE] [--seed N] [--workdir DIR] <command> ...
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sslab/sslab.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

int exit_code(sslab_status st) {
  if (st == SSLAB_OK) return kExitOk;
  return st == SSLAB_E_MISCONFIGURATION ? kExitConfig : kExitRuntime;
}

int report_failure(const char* what, sslab_status st) {
  std::cerr << "sslab: " << what << " failed (" << sslab_status_name(st) << "): " << sslab_last_error() << "\n";
  return exit_code(st);
}

// Prints and frees a JSON string returned by the library.
void print_owned(char* text) {
  if (text == nullptr) return;
  std::cout << text << "\n";
  sslab_string_free(text);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct RunHandle {
  sslab_run* run = nullptr;
  ~RunHandle() { sslab_run_destroy(run); }
};

const char* opt_cstr(const std::optional<std::string>& s) { return s ? s->c_str() : nullptr; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-training state-source laboratory"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> workdir;
  bool quiet = false;
  app.add_option("--config", config_path, "Run configuration (JSON)");
  app.add_option("--seed", seed, "Global seed");
  app.add_option("--workdir", workdir, "Directory for every output file");
  app.add_flag("-q,--quiet", quiet, "No progress lines on stderr");

  auto* pretrain = app.add_subcommand("pretrain", "Train the base model");

  auto* train = app.add_subcommand("train", "Train one preset or configured stage from the base model");
  std::string preset;
  std::optional<std::string> init_ckpt;
  std::optional<std::string> teacher_ckpt;
  std::optional<std::string> out_dir;
  train->add_option("--preset", preset, "Stage or preset name")->required();
  train->add_option("--init", init_ckpt, "Initial checkpoint (default: <workdir>/base)");
  train->add_option("--teacher", teacher_ckpt, "Teacher checkpoint");
  train->add_option("--out", out_dir, "Output directory (default: <workdir>/<preset>)");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on every task");
  std::string eval_ckpt;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();

  auto* drift = app.add_subcommand("drift", "Drift between two state-sample files");
  std::string drift_a;
  std::string drift_b;
  drift->add_option("--a", drift_a, "First state sample (JSONL)")->required();
  drift->add_option("--b", drift_b, "Second state sample (JSONL)")->required();

  auto* report = app.add_subcommand("report", "Rebuild the report from the work directory");
  auto* replicate = app.add_subcommand("replicate", "Pretrain, run every stage and write the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  RunHandle h;
  if (sslab_status st = sslab_run_create(opt_cstr(config_path), &h.run); st != SSLAB_OK)
    return report_failure("loading configuration", st);
  if (seed) sslab_run_set_seed(h.run, *seed);
  if (workdir) {
    if (sslab_status st = sslab_run_set_workdir(h.run, workdir->c_str()); st != SSLAB_OK)
      return report_failure("setting workdir", st);
  }
  sslab_run_set_verbose(h.run, quiet ? 0 : 1);

  char* out = nullptr;
  sslab_status st = SSLAB_OK;
  if (pretrain->parsed()) {
    st = sslab_run_pretrain(h.run, &out);
  } else if (train->parsed()) {
    st = sslab_run_train(h.run, preset.c_str(), opt_cstr(init_ckpt), opt_cstr(teacher_ckpt), opt_cstr(out_dir), &out);
  } else if (eval->parsed()) {
    st = sslab_run_eval(h.run, eval_ckpt.c_str(), &out);
  } else if (drift->parsed()) {
    st = sslab_run_drift_files(h.run, drift_a.c_str(), drift_b.c_str(), &out);
  } else if (report->parsed() || replicate->parsed()) {
    st = report->parsed() ? sslab_run_report(h.run, &out) : sslab_run_replicate(h.run, &out);
    if (st == SSLAB_OK) {
      const auto summary = nlohmann::json::parse(out);
      sslab_string_free(out);
      out = nullptr;
      std::cout << read_file(summary.at("report_csv").get<std::string>());
    }
  }
  if (st != SSLAB_OK) {
    sslab_string_free(out);
    return report_failure(app.get_subcommands().front()->get_name().c_str(), st);
  }
  print_owned(out);
  return kExitOk;
}
