#include "sslab/drift.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "sslab/error.hpp"
#include "sslab/rng.hpp"

namespace sslab {

using nlohmann::json;

namespace {

std::vector<Token> concat(const State& s) {
  std::vector<Token> all = s.prompt;
  all.insert(all.end(), s.prefix.begin(), s.prefix.end());
  return all;
}

std::uint64_t bucket(std::span<const Token> gram, std::size_t features, std::uint64_t hash_seed) {
  std::uint8_t bytes[2];
  for (std::size_t i = 0; i < gram.size(); ++i) bytes[i] = static_cast<std::uint8_t>(gram[i]);
  return (fnv1a64(bytes, gram.size()) ^ hash_seed) % features;
}

// Nonzero coordinates in ascending order. Summing squared differences over
// the union of nonzeros in ascending order reproduces the dense sum exactly,
// since every skipped term is exactly zero.
struct Sparse {
  std::vector<std::uint32_t> index;
  std::vector<double> value;
};

Sparse to_sparse(const FeatureVector& v) {
  Sparse s;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] != 0.0) {
      s.index.push_back(static_cast<std::uint32_t>(i));
      s.value.push_back(v[i]);
    }
  return s;
}

double squared_distance(const Sparse& x, const Sparse& y) {
  double sum = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < x.index.size() || j < y.index.size()) {
    double d;
    if (j == y.index.size() || (i < x.index.size() && x.index[i] < y.index[j])) {
      d = x.value[i++];
    } else if (i == x.index.size() || y.index[j] < x.index[i]) {
      d = -y.value[j++];
    } else {
      d = x.value[i++] - y.value[j++];
    }
    sum += d * d;
  }
  return sum;
}

void check_dims(const StateSample& a, const StateSample& b) {
  const std::size_t dim = a.vectors.empty() ? 0 : a.vectors.front().size();
  for (const auto* s : {&a, &b})
    for (const auto& v : s->vectors)
      if (v.size() != dim) throw Error(ErrorCode::kInvalidArgument, "feature vectors differ in dimension");
}

// Condensed upper-triangular squared distances over the pooled sample.
class PooledDistances {
 public:
  PooledDistances(const StateSample& a, const StateSample& b) : n_(a.size() + b.size()) {
    std::vector<Sparse> pts;
    pts.reserve(n_);
    for (const auto& v : a.vectors) pts.push_back(to_sparse(v));
    for (const auto& v : b.vectors) pts.push_back(to_sparse(v));
    d2_.resize(n_ * (n_ - 1) / 2);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) d2_[k++] = squared_distance(pts[i], pts[j]);
  }

  double d2(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0;
    if (i > j) std::swap(i, j);
    return d2_[i * n_ - i * (i + 1) / 2 + (j - i - 1)];
  }

  double median_distance() const {
    std::vector<double> d(d2_.size());
    for (std::size_t k = 0; k < d2_.size(); ++k) d[k] = std::sqrt(d2_[k]);
    if (d.empty()) return 0.0;
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
    double med = d[mid];
    if (d.size() % 2 == 0) {
      const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
      med = 0.5 * (lower + med);
    }
    return med;
  }

 private:
  std::size_t n_;
  std::vector<double> d2_;
};

double bandwidth_floor(double sigma) { return std::max(sigma, 1e-6); }

std::string fmt(double x) {
  if (!std::isfinite(x)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

}  // namespace

FeatureVector featurize_state(const State& state, std::size_t features, std::uint64_t hash_seed) {
  if (features < 2) throw Error(ErrorCode::kInvalidArgument, "feature dimension must be >= 2");
  const auto all = concat(state);
  FeatureVector v(features, 0.0);
  for (std::size_t i = 0; i < all.size(); ++i) {
    v[bucket(std::span<const Token>(&all[i], 1), features, hash_seed)] += 1.0;
    if (i + 1 < all.size()) v[bucket(std::span<const Token>(&all[i], 2), features, hash_seed)] += 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

std::set<std::uint64_t> ngram_types(const State& state) {
  const auto all = concat(state);
  std::set<std::uint64_t> out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto a = static_cast<std::uint64_t>(all[i]) + 1;
    out.insert(a);
    if (i + 1 < all.size()) out.insert((a << 32) | (static_cast<std::uint64_t>(all[i + 1]) + 1));
  }
  return out;
}

StateSample make_state_sample(std::string model_id, std::span<const State> states, const FeaturizerSpec& spec,
                              SampleProvenance provenance) {
  StateSample s;
  s.model_id = std::move(model_id);
  s.vectors.reserve(states.size());
  for (const auto& st : states) {
    s.vectors.push_back(featurize_state(st, spec.features, spec.hash_seed));
    const auto types = ngram_types(st);
    s.ngram_types.insert(types.begin(), types.end());
  }
  s.provenance = std::move(provenance);
  s.provenance.count = states.size();
  return s;
}

double median_heuristic_bandwidth(const StateSample& a, const StateSample& b) {
  check_dims(a, b);
  return bandwidth_floor(PooledDistances(a, b).median_distance());
}

double mmd_rbf(const StateSample& a, const StateSample& b, std::optional<double> bandwidth) {
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::kInvalidArgument, "MMD needs at least 2 states per sample");
  check_dims(a, b);
  const PooledDistances dist(a, b);
  const double sigma =
      bandwidth && *bandwidth > 0.0 ? *bandwidth : bandwidth_floor(dist.median_distance());
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  auto block = [&](std::size_t r0, std::size_t rn, std::size_t c0, std::size_t cn) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rn; ++i)
      for (std::size_t j = 0; j < cn; ++j) sum += std::exp(-dist.d2(r0 + i, c0 + j) * inv);
    return sum / (static_cast<double>(rn) * static_cast<double>(cn));
  };
  const double mmd2 = block(0, na, 0, na) + block(na, nb, na, nb) - 2.0 * block(0, na, na, nb);
  return std::sqrt(std::max(0.0, mmd2));
}

std::vector<std::vector<double>> random_directions(std::size_t dim, std::size_t count, std::uint64_t seed) {
  if (dim == 0) throw Error(ErrorCode::kInvalidArgument, "projection dimension must be positive");
  Rng rng(derive_seed(seed, "projections"));
  std::vector<std::vector<double>> dirs(count, std::vector<double>(dim));
  for (auto& d : dirs) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& x : d) {
        x = rng.normal();
        norm += x * x;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& x : d) x /= norm;
  }
  return dirs;
}

double sliced_wasserstein(const StateSample& a, const StateSample& b,
                          std::span<const std::vector<double>> directions, std::uint64_t seed) {
  if (a.size() == 0 || b.size() == 0)
    throw Error(ErrorCode::kInvalidArgument, "sliced Wasserstein needs non-empty samples");
  if (directions.empty()) throw Error(ErrorCode::kInvalidArgument, "need at least one projection");
  check_dims(a, b);
  const std::size_t n = std::max(a.size(), b.size());
  Rng rng(derive_seed(seed, "resample"));
  auto padded = [&](const StateSample& s) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    while (idx.size() < n) idx.push_back(static_cast<std::size_t>(rng.below(s.size())));
    return idx;
  };
  const auto ia = padded(a);
  const auto ib = padded(b);
  std::vector<double> pa(n);
  std::vector<double> pb(n);
  double total = 0.0;
  for (const auto& dir : directions) {
    if (dir.size() != a.vectors.front().size())
      throw Error(ErrorCode::kInvalidArgument, "projection dimension mismatch");
    auto project = [&](const std::vector<double>& v) {
      double s = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) s += v[k] * dir[k];
      return s;
    };
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = project(a.vectors[ia[i]]);
      pb[i] = project(b.vectors[ib[i]]);
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) w += std::abs(pa[i] - pb[i]);
    total += w / static_cast<double>(n);
  }
  return total / static_cast<double>(directions.size());
}

double sliced_wasserstein(const StateSample& a, const StateSample& b, std::size_t projections, std::uint64_t seed) {
  if (a.size() == 0 || b.size() == 0)
    throw Error(ErrorCode::kInvalidArgument, "sliced Wasserstein needs non-empty samples");
  if (projections < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one projection");
  const auto dirs = random_directions(a.vectors.front().size(), projections, seed);
  return sliced_wasserstein(a, b, dirs, seed);
}

double centroid_distance(const StateSample& a, const StateSample& b) {
  if (a.size() == 0 || b.size() == 0) throw Error(ErrorCode::kInvalidArgument, "centroid needs non-empty samples");
  check_dims(a, b);
  const std::size_t dim = a.vectors.front().size();
  auto mean = [dim](const StateSample& s) {
    std::vector<double> m(dim, 0.0);
    for (const auto& v : s.vectors)
      for (std::size_t k = 0; k < dim; ++k) m[k] += v[k];
    for (double& x : m) x /= static_cast<double>(s.size());
    return m;
  };
  const auto ma = mean(a);
  const auto mb = mean(b);
  double d2 = 0.0;
  for (std::size_t k = 0; k < dim; ++k) d2 += (ma[k] - mb[k]) * (ma[k] - mb[k]);
  return std::sqrt(d2);
}

double jaccard_distance(const StateSample& a, const StateSample& b) {
  const auto& sa = a.ngram_types;
  const auto& sb = b.ngram_types;
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (auto x : sa) inter += sb.count(x);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

DriftReport drift_report(const StateSample& a, const StateSample& b, std::size_t projections,
                         std::uint64_t projection_seed) {
  DriftReport r;
  r.bandwidth = median_heuristic_bandwidth(a, b);
  r.mmd = mmd_rbf(a, b, r.bandwidth);
  r.sliced_wasserstein = sliced_wasserstein(a, b, projections, projection_seed);
  r.centroid = centroid_distance(a, b);
  r.jaccard = jaccard_distance(a, b);
  r.projection_seed = projection_seed;
  r.projections = projections;
  return r;
}

json to_json(const DriftReport& r) {
  return json{{"mmd", r.mmd},
              {"sliced_wasserstein", r.sliced_wasserstein},
              {"centroid", r.centroid},
              {"jaccard", r.jaccard},
              {"bandwidth", r.bandwidth},
              {"projection_seed", r.projection_seed},
              {"projections", r.projections}};
}

std::string drift_csv_header() { return "mmd,sliced_wasserstein,centroid,jaccard,bandwidth,projection_seed,projections"; }

std::string to_csv_row(const DriftReport& r) {
  return fmt(r.mmd) + "," + fmt(r.sliced_wasserstein) + "," + fmt(r.centroid) + "," + fmt(r.jaccard) + "," +
         fmt(r.bandwidth) + "," + std::to_string(r.projection_seed) + "," + std::to_string(r.projections);
}

RetentionReport retention_stats(const std::map<TaskKind, double>& base, const std::map<TaskKind, double>& post,
                                std::span<const TaskKind> retention_tasks) {
  if (retention_tasks.empty()) throw Error(ErrorCode::kInvalidArgument, "no retention tasks");
  RetentionReport r;
  double f_sum = 0.0;
  double ratio_sum = 0.0;
  std::size_t ratio_n = 0;
  for (TaskKind k : retention_tasks) {
    const auto b = base.find(k);
    const auto p = post.find(k);
    if (b == base.end() || p == post.end())
      throw Error(ErrorCode::kInvalidArgument, std::string("missing score for task ") + task_name(k));
    const double f = b->second - p->second;
    r.forgetting[k] = f;
    f_sum += f;
    if (b->second > 0.0) {
      const double ratio = p->second / b->second;
      r.retention_ratio[k] = ratio;
      ratio_sum += ratio;
      ++ratio_n;
    } else {
      r.ratio_undefined = true;
    }
  }
  r.mean_forgetting = f_sum / static_cast<double>(retention_tasks.size());
  r.mean_retention = ratio_n ? ratio_sum / static_cast<double>(ratio_n) : std::nan("");
  return r;
}

json to_json(const RetentionReport& r) {
  json j{{"mean_forgetting", r.mean_forgetting}, {"ratio_undefined", r.ratio_undefined}};
  j["mean_retention"] = std::isfinite(r.mean_retention) ? json(r.mean_retention) : json(nullptr);
  json forgetting = json::object();
  json ratio = json::object();
  for (const auto& [k, v] : r.forgetting) forgetting[task_name(k)] = v;
  for (const auto& [k, v] : r.retention_ratio) ratio[task_name(k)] = v;
  j["forgetting"] = forgetting;
  j["retention_ratio"] = ratio;
  return j;
}

std::string retention_csv_header() {
  std::string h = "mean_forgetting,mean_retention,ratio_undefined";
  for (TaskKind k : kRetentionTasks) h += std::string(",forgetting_") + task_name(k) + ",retention_" + task_name(k);
  return h;
}

std::string to_csv_row(const RetentionReport& r) {
  std::string row = fmt(r.mean_forgetting) + "," + fmt(r.mean_retention) + "," + (r.ratio_undefined ? "1" : "0");
  for (TaskKind k : kRetentionTasks) {
    const auto f = r.forgetting.find(k);
    const auto q = r.retention_ratio.find(k);
    row += "," + (f != r.forgetting.end() ? fmt(f->second) : std::string());
    row += "," + (q != r.retention_ratio.end() ? fmt(q->second) : std::string());
  }
  return row;
}

void write_state_records(const std::filesystem::path& path, std::span<const StateRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const Vocab& vocab = Vocab::standard();
  for (const auto& r : records) {
    json j{{"model_id", r.model_id},
           {"prompt_id", r.prompt_id},
           {"step", r.step},
           {"state_tokens", vocab.decode(concat(r.state))}};
    f << j.dump() << '\n';
  }
}

std::vector<StateRecord> read_state_records(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  const Vocab& vocab = Vocab::standard();
  std::vector<StateRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      StateRecord r;
      r.model_id = j.at("model_id").get<std::string>();
      r.prompt_id = j.at("prompt_id").get<std::size_t>();
      r.step = j.at("step").get<std::size_t>();
      const auto tokens = vocab.encode(j.at("state_tokens").get<std::string>());
      if (r.step >= tokens.size()) throw Error(ErrorCode::kInvalidArgument, "step exceeds state length");
      const auto split = tokens.begin() + static_cast<std::ptrdiff_t>(tokens.size() - r.step);
      r.state.prompt.assign(tokens.begin(), split);
      r.state.prefix.assign(split, tokens.end());
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

StateSample load_state_sample(const std::filesystem::path& path, const FeaturizerSpec& spec) {
  const auto records = read_state_records(path);
  std::vector<State> states;
  states.reserve(records.size());
  for (const auto& r : records) states.push_back(r.state);
  SampleProvenance prov;
  prov.prompt_set = path.string();
  return make_state_sample(records.empty() ? std::string() : records.front().model_id, states, spec, prov);
}

}  // namespace sslab
