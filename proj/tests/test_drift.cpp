#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "sslab/drift.hpp"

using namespace sslab;
namespace fs = std::filesystem;

namespace {

StateSample sample_of(std::vector<FeatureVector> v) {
  StateSample s;
  s.vectors = std::move(v);
  return s;
}

StateSample types_of(std::set<std::uint64_t> t) {
  StateSample s;
  s.ngram_types = std::move(t);
  return s;
}

std::vector<FeatureVector> random_vectors(Rng& rng, std::size_t n, std::size_t dim) {
  std::vector<FeatureVector> out(n, FeatureVector(dim));
  for (auto& v : out)
    for (double& x : v) x = rng.normal();
  return out;
}

// FNV-1a-64, one byte per token id, written out step by step.
std::uint64_t fnv(std::initializer_list<int> bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (int b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

TEST_CASE("single-token state sets exactly one bucket") {
  const auto v = featurize_state(State{{7}, {}}, 256, 0x5eed);
  int nonzero = 0;
  double norm = 0.0;
  for (double x : v) {
    nonzero += x != 0.0;
    norm += x * x;
  }
  CHECK(nonzero == 1);
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(featurize_state(State{{7, 9}, {3}}, 64, 1) == featurize_state(State{{7, 9}, {3}}, 64, 1));
  CHECK(oracle::error_of([] { featurize_state(State{{7}, {}}, 1, 0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("hand-hashed 3-token state on 8 buckets") {
  const std::uint64_t seed = 12345;
  const State s{{5, 12}, {30}};
  std::vector<double> expect(8, 0.0);
  for (std::uint64_t h : {fnv({5}), fnv({12}), fnv({30}), fnv({5, 12}), fnv({12, 30})}) expect[(h ^ seed) % 8] += 1.0;
  double norm = 0.0;
  for (double x : expect) norm += x * x;
  for (double& x : expect) x /= std::sqrt(norm);
  const auto got = featurize_state(s, 8, seed);
  for (std::size_t i = 0; i < 8; ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("MMD four-term hand case and identity") {
  const auto a = sample_of({{1, 0}, {1, 0}});
  const auto b = sample_of({{0, 1}, {0, 1}});
  CHECK(mmd_rbf(a, b, 1.0) == doctest::Approx(std::sqrt(2.0 - 2.0 * std::exp(-1.0))).epsilon(1e-15));
  CHECK(mmd_rbf(a, a) <= 1e-9);
  CHECK(oracle::error_of([&] { mmd_rbf(sample_of({{1, 0}}), b); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("MMD matches the brute-force double sum") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 1 + rng.below(8);
    const auto va = random_vectors(rng, 2 + rng.below(9), dim);
    const auto vb = random_vectors(rng, 2 + rng.below(9), dim);
    std::vector<FeatureVector> pooled = va;
    pooled.insert(pooled.end(), vb.begin(), vb.end());
    const double sigma = oracle::median_distance(pooled);
    const auto a = sample_of(va), b = sample_of(vb);
    CHECK(median_heuristic_bandwidth(a, b) == doctest::Approx(sigma).epsilon(1e-12));
    CHECK(std::abs(mmd_rbf(a, b) - oracle::mmd(va, vb, sigma)) <= 1e-12);
    CHECK(mmd_rbf(a, a) <= 1e-9);
  }
}

TEST_CASE("MMD is symmetric and permutation invariant") {
  Rng rng(9);
  auto va = random_vectors(rng, 7, 5);
  const auto vb = random_vectors(rng, 6, 5);
  const double d = mmd_rbf(sample_of(va), sample_of(vb));
  CHECK(mmd_rbf(sample_of(vb), sample_of(va)) == doctest::Approx(d).epsilon(1e-12));
  std::reverse(va.begin(), va.end());
  CHECK(mmd_rbf(sample_of(va), sample_of(vb)) == doctest::Approx(d).epsilon(1e-12));
  CHECK(d >= 0.0);
}

TEST_CASE("sliced Wasserstein on axis-0 data") {
  const auto a = sample_of({{0, 0}, {1, 0}});
  const auto b = sample_of({{1, 0}, {2, 0}});
  const std::vector<std::vector<double>> axis = {{1.0, 0.0}};
  CHECK(sliced_wasserstein(a, b, axis, 0) == doctest::Approx(1.0).epsilon(1e-15));
  const auto dirs = random_directions(2, 16, 3);
  double mean_abs = 0.0;
  for (const auto& d : dirs) mean_abs += std::abs(d[0]);
  mean_abs /= 16.0;
  CHECK(sliced_wasserstein(a, b, dirs, 0) == doctest::Approx(mean_abs).epsilon(1e-12));
  CHECK(sliced_wasserstein(a, b, 16, 3) == doctest::Approx(mean_abs).epsilon(1e-12));
  CHECK(sliced_wasserstein(a, a, 16, 3) == 0.0);
  CHECK(sliced_wasserstein(b, a, 16, 3) == doctest::Approx(sliced_wasserstein(a, b, 16, 3)).epsilon(1e-12));
  CHECK(oracle::error_of([&] { sliced_wasserstein(sample_of({}), b, axis, 0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("sliced Wasserstein with one axis equals sorted 1D W1") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 1 + rng.below(8);
    const std::size_t n = 1 + rng.below(10);
    const auto va = random_vectors(rng, n, dim), vb = random_vectors(rng, n, dim);
    const std::size_t axis = rng.below(dim);
    std::vector<std::vector<double>> dir(1, std::vector<double>(dim, 0.0));
    dir[0][axis] = 1.0;
    std::vector<double> pa, pb;
    for (const auto& v : va) pa.push_back(v[axis]);
    for (const auto& v : vb) pb.push_back(v[axis]);
    CHECK(std::abs(sliced_wasserstein(sample_of(va), sample_of(vb), dir, 0) - oracle::w1_sorted(pa, pb)) <= 1e-9);
  }
}

TEST_CASE("random directions are unit vectors and seeded") {
  const auto d = random_directions(6, 10, 4);
  for (const auto& v : d) {
    double n = 0.0;
    for (double x : v) n += x * x;
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(random_directions(6, 10, 4) == d);
  CHECK(random_directions(6, 10, 5) != d);
}

TEST_CASE("centroid distance") {
  CHECK(centroid_distance(sample_of({{1, 0}}), sample_of({{0, 1}})) == doctest::Approx(std::sqrt(2.0)));
  // Means (1, 1, 0) and (0, 1, 2): difference (1, 0, -2).
  const auto a = sample_of({{2, 0, 0}, {0, 2, 0}});
  const auto b = sample_of({{0, 1, 2}});
  CHECK(centroid_distance(a, b) == doctest::Approx(std::sqrt(5.0)).epsilon(1e-15));
  CHECK(centroid_distance(a, a) == 0.0);
}

TEST_CASE("Jaccard distance over n-gram types") {
  CHECK(jaccard_distance(types_of({1, 2, 3}), types_of({2, 3, 4})) == doctest::Approx(0.5));
  CHECK(jaccard_distance(types_of({1, 2}), types_of({1, 2})) == 0.0);
  CHECK(jaccard_distance(types_of({1}), types_of({2})) == 1.0);
  CHECK(jaccard_distance(types_of({}), types_of({})) == 0.0);

  const std::vector<State> sa = {State{{5, 6}, {7}}, State{{8}, {}}};
  const std::vector<State> sb = {State{{5, 6}, {}}, State{{9, 9}, {}}};
  std::vector<State> da = sa, db = sb;
  da.insert(da.end(), sa.begin(), sa.end());
  db.insert(db.end(), sb.begin(), sb.end());
  const FeaturizerSpec spec;
  const double d = jaccard_distance(make_state_sample("a", sa, spec), make_state_sample("b", sb, spec));
  CHECK(jaccard_distance(make_state_sample("a", da, spec), make_state_sample("b", db, spec)) == d);
  // Types {5,6,7,8,56,67} vs {5,6,9,56,99}: 3 shared of 8.
  CHECK(d == doctest::Approx(1.0 - 3.0 / 8.0));
}

TEST_CASE("drift report distances are non-negative and zero on self") {
  Rng rng(4);
  std::vector<State> sa, sb;
  for (int i = 0; i < 30; ++i) {
    sa.push_back(oracle::random_state(ModelShape{}, rng));
    sb.push_back(oracle::random_state(ModelShape{}, rng));
  }
  const FeaturizerSpec spec{32, 7};
  const auto a = make_state_sample("a", sa, spec), b = make_state_sample("b", sb, spec);
  const auto self = drift_report(a, a, 8, 1);
  CHECK(self.mmd <= 1e-9);
  CHECK(self.sliced_wasserstein <= 1e-9);
  CHECK(self.centroid <= 1e-9);
  CHECK(self.jaccard == 0.0);
  const auto ab = drift_report(a, b, 8, 1), ba = drift_report(b, a, 8, 1);
  CHECK(ab.mmd > 0.0);
  CHECK(ab.mmd == doctest::Approx(ba.mmd).epsilon(1e-12));
  CHECK(ab.sliced_wasserstein == doctest::Approx(ba.sliced_wasserstein).epsilon(1e-12));
  CHECK(ab.centroid == doctest::Approx(ba.centroid).epsilon(1e-12));
  CHECK(ab.jaccard == ba.jaccard);
  CHECK(to_json(ab)["mmd"] == ab.mmd);
}

TEST_CASE("retention arithmetic on reference score rows") {
  // Two retention tasks standing in for TruthfulQA and MMLU.
  const std::vector<TaskKind> tasks = {TaskKind::kCopy, TaskKind::kReverse};
  const std::map<TaskKind, double> base = {{TaskKind::kCopy, 0.300}, {TaskKind::kReverse, 0.436}};
  struct Row {
    const char* run;
    double tqa, mmlu, forgetting, retention;
  };
  for (const Row& r : {Row{"mild sft", 0.295, 0.444, -0.0015, 1.0008}, Row{"stress sft", 0.245, 0.364, 0.0635, 0.8258},
                       Row{"opd from mild", 0.290, 0.434, 0.0060, 0.9810},
                       Row{"opd from stress", 0.275, 0.430, 0.0155, 0.9515},
                       Row{"on-policy rl", 0.290, 0.442, 0.0020, 0.9902}}) {
    CAPTURE(r.run);
    const auto s = retention_stats(base, {{TaskKind::kCopy, r.tqa}, {TaskKind::kReverse, r.mmlu}}, tasks);
    CHECK(std::abs(s.mean_forgetting - r.forgetting) <= 5e-4);
    CHECK(std::abs(s.mean_retention - r.retention) <= 5e-4);
    CHECK_FALSE(s.ratio_undefined);
  }
  const auto same = retention_stats(base, base, tasks);
  CHECK(same.mean_forgetting == 0.0);
  CHECK(same.mean_retention == 1.0);
}

TEST_CASE("retention excludes the target and flags zero base scores") {
  const std::map<TaskKind, double> base = {{TaskKind::kChainArith, 0.5},
                                           {TaskKind::kCopy, 0.8},
                                           {TaskKind::kReverse, 0.0},
                                           {TaskKind::kCount, 1.0}};
  const std::map<TaskKind, double> post = {{TaskKind::kChainArith, 0.0},
                                           {TaskKind::kCopy, 0.4},
                                           {TaskKind::kReverse, 0.1},
                                           {TaskKind::kCount, 1.0}};
  const auto s = retention_stats(base, post);
  CHECK(s.ratio_undefined);
  CHECK(s.retention_ratio.count(TaskKind::kReverse) == 0);
  CHECK(s.mean_retention == doctest::Approx(0.75));
  CHECK(s.mean_forgetting == doctest::Approx((0.4 - 0.1 + 0.0) / 3.0));
  CHECK(oracle::error_of([&] { retention_stats({{TaskKind::kCopy, 1.0}}, post); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("state record files round trip") {
  const fs::path dir = fs::temp_directory_path() / "sslab_tests";
  fs::create_directories(dir);
  const auto& V = Vocab::standard();
  const std::vector<StateRecord> recs = {{"base", 0, 0, State{V.encode("A3+5="), {}}},
                                         {"base", 3, 4, State{V.encode("Cabc>"), V.encode("abc$")}}};
  write_state_records(dir / "states.jsonl", recs);
  const auto back = read_state_records(dir / "states.jsonl");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].model_id == recs[i].model_id);
    CHECK(back[i].prompt_id == recs[i].prompt_id);
    CHECK(back[i].step == recs[i].step);
    CHECK(back[i].state == recs[i].state);
  }
  const FeaturizerSpec spec{16, 3};
  const auto s = load_state_sample(dir / "states.jsonl", spec);
  CHECK(s.size() == 2);
  CHECK(s.vectors[1] == featurize_state(recs[1].state, 16, 3));
}
