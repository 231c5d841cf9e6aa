#pragma once

// Rollout-state drift between two models and retention statistics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslab/policy.hpp"
#include "sslab/tasks.hpp"

namespace sslab {

using FeatureVector = std::vector<double>;

// Hashed unigram + bigram counts of prompt ++ prefix, L2-normalized. Bucket of
// an n-gram = (FNV-1a-64 over its token ids, one byte each) xor hash_seed, mod F.
FeatureVector featurize_state(const State& state, std::size_t features, std::uint64_t hash_seed);

// n-gram type key: unigram (a) -> a + 1, bigram (a, b) -> (a + 1) << 32 | (b + 1).
std::set<std::uint64_t> ngram_types(const State& state);

struct SampleProvenance {
  std::string prompt_set;
  std::uint64_t rollout_seed = 0;
  std::size_t count = 0;
};

struct StateSample {
  std::string model_id;
  std::vector<FeatureVector> vectors;
  std::set<std::uint64_t> ngram_types;
  SampleProvenance provenance;

  std::size_t size() const { return vectors.size(); }
};

struct FeaturizerSpec {
  std::size_t features = 256;
  std::uint64_t hash_seed = 0x5eed;
};

StateSample make_state_sample(std::string model_id, std::span<const State> states, const FeaturizerSpec& spec,
                              SampleProvenance provenance = {});

// Median pairwise Euclidean distance (i < j) over the pooled sample, floored at 1e-6.
double median_heuristic_bandwidth(const StateSample& a, const StateSample& b);

// Square root of the biased (V-statistic) MMD^2 with an RBF kernel, clamped at
// zero. bandwidth <= 0 or nullopt selects the median heuristic.
double mmd_rbf(const StateSample& a, const StateSample& b, std::optional<double> bandwidth = std::nullopt);

// Mean 1D Wasserstein-1 over the given projection directions. The smaller
// sample is padded by seeded uniform resampling when sizes differ.
double sliced_wasserstein(const StateSample& a, const StateSample& b,
                          std::span<const std::vector<double>> directions, std::uint64_t seed);
// Random unit directions, Gaussian then normalized.
std::vector<std::vector<double>> random_directions(std::size_t dim, std::size_t count, std::uint64_t seed);
double sliced_wasserstein(const StateSample& a, const StateSample& b, std::size_t projections, std::uint64_t seed);

double centroid_distance(const StateSample& a, const StateSample& b);
double jaccard_distance(const StateSample& a, const StateSample& b);

struct DriftReport {
  double mmd = 0.0;
  double sliced_wasserstein = 0.0;
  double centroid = 0.0;
  double jaccard = 0.0;
  double bandwidth = 0.0;
  std::uint64_t projection_seed = 0;
  std::size_t projections = 0;
};

DriftReport drift_report(const StateSample& a, const StateSample& b, std::size_t projections,
                         std::uint64_t projection_seed);

nlohmann::json to_json(const DriftReport& r);
std::string drift_csv_header();
std::string to_csv_row(const DriftReport& r);

struct RetentionReport {
  std::map<TaskKind, double> forgetting;
  std::map<TaskKind, double> retention_ratio;  // only tasks with base > 0
  double mean_forgetting = 0.0;
  double mean_retention = 0.0;
  bool ratio_undefined = false;  // some task had base score 0
};

// Means run over `retention_tasks` only. A zero base score leaves that task's
// ratio undefined and sets the warning flag.
RetentionReport retention_stats(const std::map<TaskKind, double>& base, const std::map<TaskKind, double>& post,
                                std::span<const TaskKind> retention_tasks = kRetentionTasks);

nlohmann::json to_json(const RetentionReport& r);
std::string retention_csv_header();
std::string to_csv_row(const RetentionReport& r);

// StateSample files: JSON lines {model_id, prompt_id, step, state_tokens}.
struct StateRecord {
  std::string model_id;
  std::size_t prompt_id = 0;
  std::size_t step = 0;  // prefix length
  State state;
};

void write_state_records(const std::filesystem::path& path, std::span<const StateRecord> records);
std::vector<StateRecord> read_state_records(const std::filesystem::path& path);
StateSample load_state_sample(const std::filesystem::path& path, const FeaturizerSpec& spec);

}  // namespace sslab
