#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sslab/sslab.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sslab_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json take_json(char* s) {
  REQUIRE(s != nullptr);
  json j = json::parse(s);
  sslab_string_free(s);
  return j;
}

fs::path write_tiny_config(const fs::path& dir) {
  const json config{{"pretrain", {{"max_steps", 20}, {"batch_size", 8}, {"eval_every", 10}, {"copy_threshold", 0.0}}},
                    {"eval", {{"examples", 8}}},
                    {"drift", {{"prompts", 6}, {"states", 30}, {"projections", 4}, {"features", 32}}},
                    {"stages", json::array({{{"name", "sft_mild"}, {"trainer", {{"name", "sft_mild"}, {"dataset_size", 16}}}},
                                            {{"name", "opd"},
                                             {"teacher_stage", "sft_mild"},
                                             {"trainer", {{"preset", "opd_onestep"}, {"optimizer", {{"steps", 2}}}}}}})}};
  const fs::path p = dir / "config.json";
  std::ofstream(p) << config.dump(2);
  return p;
}

}  // namespace

TEST_CASE("status names and error reporting") {
  CHECK(std::string(sslab_status_name(SSLAB_OK)) == "ok");
  CHECK(std::string(sslab_status_name(SSLAB_E_BUSY)) == "busy");
  sslab_run* run = nullptr;
  CHECK(sslab_run_create("/nonexistent/config.json", &run) == SSLAB_E_MISCONFIGURATION);
  CHECK(run == nullptr);
  CHECK(std::string(sslab_last_error()).size() > 0);
  CHECK(sslab_run_create(nullptr, nullptr) == SSLAB_E_INVALID_ARGUMENT);
}

TEST_CASE("run handle configuration") {
  sslab_run* run = nullptr;
  REQUIRE(sslab_run_create(nullptr, &run) == SSLAB_OK);
  CHECK(sslab_run_set_seed(run, 17) == SSLAB_OK);
  CHECK(sslab_run_set_workdir(run, "somewhere") == SSLAB_OK);
  char* out = nullptr;
  REQUIRE(sslab_run_config_json(run, &out) == SSLAB_OK);
  const json j = take_json(out);
  CHECK(j["seed"] == 17);
  CHECK(j["workdir"] == "somewhere");
  CHECK(j["stages"].size() == 7);
  CHECK(sslab_run_train(run, "bogus", nullptr, nullptr, nullptr, &out) == SSLAB_E_MISCONFIGURATION);
  sslab_run_destroy(run);
}

TEST_CASE("pipeline, policy and drift through the C interface") {
  const fs::path dir = fresh_dir("capi");
  const auto config = write_tiny_config(dir);
  sslab_run* run = nullptr;
  REQUIRE(sslab_run_create(config.c_str(), &run) == SSLAB_OK);
  REQUIRE(sslab_run_set_workdir(run, (dir / "work").c_str()) == SSLAB_OK);

  char* out = nullptr;
  REQUIRE(sslab_run_replicate(run, &out) == SSLAB_OK);
  const json summary = take_json(out);
  CHECK(fs::exists(summary["report_csv"].get<std::string>()));
  CHECK(fs::exists(summary["report_json"].get<std::string>()));
  CHECK(summary["stages"].size() == 2);

  REQUIRE(sslab_run_report(run, &out) == SSLAB_OK);
  CHECK(take_json(out)["rows"] == 3);

  const std::string base = (dir / "work" / "base" / "checkpoint.ssl").string();
  REQUIRE(sslab_run_eval(run, base.c_str(), &out) == SSLAB_OK);
  const json scores = take_json(out);
  for (const char* task : {"chain_arith", "copy", "reverse", "count"}) CHECK(scores["scores"].contains(task));

  sslab_policy* pol = nullptr;
  REQUIRE(sslab_policy_load(base.c_str(), &pol) == SSLAB_OK);
  size_t params = 0;
  CHECK(sslab_policy_param_count(pol, &params) == SSLAB_OK);
  CHECK(params == 40 * 16 + 64 * 16 * 16 + 64 + 40 * 64 + 40);
  double score = -1.0;
  CHECK(sslab_policy_score(pol, "copy", 8, 1, &score) == SSLAB_OK);
  CHECK(score >= 0.0);
  CHECK(score <= 1.0);
  CHECK(sslab_policy_score(pol, "nope", 8, 1, &score) == SSLAB_E_INVALID_ARGUMENT);
  REQUIRE(sslab_policy_generate(pol, "Cab>", &out) == SSLAB_OK);
  sslab_string_free(out);
  CHECK(sslab_policy_generate(pol, "C?>", &out) == SSLAB_E_INVALID_TOKEN);
  sslab_policy_destroy(pol);
  CHECK(sslab_policy_load((dir / "missing.ssl").c_str(), &pol) == SSLAB_E_IO);

  const std::string states = (dir / "work" / "base" / "states.jsonl").string();
  REQUIRE(sslab_run_drift_files(run, states.c_str(), states.c_str(), &out) == SSLAB_OK);
  CHECK(take_json(out)["mmd"].get<double>() <= 1e-9);

  std::ofstream(dir / "work" / ".sslab.lock") << "";
  CHECK(sslab_run_replicate(run, &out) == SSLAB_E_BUSY);
  fs::remove(dir / "work" / ".sslab.lock");
  sslab_run_destroy(run);
}

TEST_CASE("retention through the C interface") {
  const double base[] = {0.300, 0.436}, stress[] = {0.245, 0.364};
  double f = 0.0, r = 0.0;
  REQUIRE(sslab_retention(base, stress, 2, &f, &r) == SSLAB_OK);
  CHECK(std::abs(f - 0.0635) <= 5e-4);
  CHECK(std::abs(r - 0.8258) <= 5e-4);
  const double zero[] = {0.0, 0.436};
  CHECK(sslab_retention(zero, stress, 2, &f, &r) == SSLAB_E_RATIO_UNDEFINED);
}
