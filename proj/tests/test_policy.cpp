#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "oracles.hpp"
#include "sslab/checkpoint.hpp"
#include "sslab/policy.hpp"

using namespace sslab;
namespace fs = std::filesystem;

namespace {

// Fixed logits regardless of state.
class FixedPolicy final : public TokenPolicy {
 public:
  explicit FixedPolicy(std::vector<double> logits) : logits_(std::move(logits)) {}
  int vocab_size() const override { return static_cast<int>(logits_.size()); }
  void logits(const State&, std::span<double> out) const override {
    std::copy(logits_.begin(), logits_.end(), out.begin());
  }

 private:
  std::vector<double> logits_;
};

State demo_state() { return State{{1, 20, 8, 15, 9}, {12, 14}}; }

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sslab_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("zero parameters give zero logits and a uniform softmax") {
  const auto p = PolicyParams::zeros(ModelShape{});
  const auto z = forward_logits(p, demo_state());
  REQUIRE(z.size() == 40);
  std::vector<double> prob(z.size());
  softmax(z, prob);
  for (std::size_t i = 0; i < z.size(); ++i) {
    CHECK(z[i] == 0.0);
    CHECK(prob[i] == doctest::Approx(1.0 / 40).epsilon(1e-12));
  }
}

TEST_CASE("forward pass matches the straight-line reference") {
  const auto p = PolicyParams::random(ModelShape{}, 7);
  for (const State& s : {demo_state(), State{{1}, {}}, State{std::vector<Token>(30, 17), {5, 6}}}) {
    const auto z = forward_logits(p, s);
    const auto ref = oracle::forward(p, s);
    REQUIRE(z.size() == ref.size());
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(z[i] - ref[i]) <= 1e-12);
  }
}

TEST_CASE("softmax and log-probabilities are normalized") {
  Rng rng(11);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = PolicyParams::random(ModelShape{}, seed);
    const State s = oracle::random_state(p.shape, rng);
    const auto z = forward_logits(p, s);
    std::vector<double> prob(z.size());
    softmax(z, prob);
    double sum = 0.0;
    for (double x : prob) sum += x;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    // log_prob refuses PAD, so its mass comes from log_softmax directly
    std::vector<double> ls(z.size());
    log_softmax(z, ls);
    double total = std::exp(ls[tok::kPad]);
    for (Token t = 1; t < p.shape.vocab; ++t) total += std::exp(log_prob(p, s, t));
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("log_prob under zero parameters is -ln V") {
  const auto p = PolicyParams::zeros(ModelShape{});
  for (Token t = 1; t < 40; ++t) CHECK(log_prob(p, demo_state(), t) == doctest::Approx(-std::log(40.0)).epsilon(1e-12));
  CHECK(log_prob(p, demo_state(), 3) == doctest::Approx(-3.68888).epsilon(1e-5));
}

TEST_CASE("log-softmax does not overflow on large logits") {
  const std::vector<double> z = {1000.0, 0.0, 0.0};
  std::vector<double> out(3);
  log_softmax(z, out);
  // exact: log(1 / (1 + 2 e^-1000)) rounds to -0 in double precision
  CHECK(std::isfinite(out[0]));
  CHECK(std::abs(out[0]) <= 1e-300);
  CHECK(out[1] == doctest::Approx(-1000.0).epsilon(1e-15));
  std::vector<double> prob(3);
  softmax(z, prob);
  CHECK(prob[0] == 1.0);
}

TEST_CASE("log_prob rejects PAD and out-of-range tokens") {
  const auto p = PolicyParams::zeros(ModelShape{});
  CHECK(oracle::error_of([&] { log_prob(p, demo_state(), tok::kPad); }) == ErrorCode::kInvalidToken);
  CHECK(oracle::error_of([&] { log_prob(p, demo_state(), 40); }) == ErrorCode::kInvalidToken);
}

TEST_CASE("forward_logits refuses non-finite parameters") {
  auto p = PolicyParams::random(oracle::small_shape(), 1);
  p.w2[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK(oracle::error_of([&] { forward_logits(p, State{{1, 2}, {}}); }) == ErrorCode::kNumericFault);
}

TEST_CASE("greedy decoding takes the argmax with lowest-id tie-break") {
  Rng rng(0);
  std::vector<double> z(12, 0.0);
  z[5] = 3.0;
  CHECK(sample_token(FixedPolicy(z), State{{1}, {}}, 0.0, rng) == 5);
  std::vector<double> tied(12, -1.0);
  tied[2] = tied[9] = 4.0;
  CHECK(sample_token(FixedPolicy(tied), State{{1}, {}}, 0.0, rng) == 2);
  std::vector<double> pad_max(12, 0.0);
  pad_max[0] = 50.0;
  pad_max[7] = 1.0;
  CHECK(sample_token(FixedPolicy(pad_max), State{{1}, {}}, 0.0, rng) == 7);
}

TEST_CASE("sampling frequencies match the softmax within 3 sigma") {
  // PAD (id 0) carries a large logit but is masked; the other three ids form
  // a known 3-way softmax.
  const std::vector<double> z = {5.0, 0.0, 1.0, 2.0};
  const double norm = std::exp(0.0) + std::exp(1.0) + std::exp(2.0);
  const double expected[3] = {std::exp(0.0) / norm, std::exp(1.0) / norm, std::exp(2.0) / norm};
  const FixedPolicy policy(z);
  Rng rng(2024);
  const int n = 10000;
  int counts[4] = {0, 0, 0, 0};
  for (int i = 0; i < n; ++i) ++counts[sample_token(policy, State{{1}, {}}, 1.0, rng)];
  CHECK(counts[0] == 0);
  for (int k = 0; k < 3; ++k) {
    const double mean = n * expected[k];
    const double sd = std::sqrt(n * expected[k] * (1.0 - expected[k]));
    CHECK(std::abs(counts[k + 1] - mean) <= 3.0 * sd);
  }
}

TEST_CASE("sampling is deterministic given the generator state") {
  const auto p = PolicyParams::random(ModelShape{}, 3);
  const NeuralPolicy pol(p);
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) CHECK(sample_token(pol, demo_state(), 1.0, a) == sample_token(pol, demo_state(), 1.0, b));
}

TEST_CASE("a policy that always emits EOS terminates after one step") {
  std::vector<double> z(40, 0.0);
  z[tok::kEos] = 10.0;
  Rng rng(0);
  const Trajectory t = rollout(FixedPolicy(z), std::vector<Token>{1, 20}, 16, Decoding::greedy(), rng);
  CHECK(t.horizon() == 1);
  CHECK(t.terminated);
  CHECK(t.actions[0] == tok::kEos);
  CHECK(t.state_at(0) == State{{1, 20}, {}});
}

TEST_CASE("rollouts are deterministic and their log-probs match re-scoring") {
  const auto p = PolicyParams::random(ModelShape{}, 4);
  const NeuralPolicy pol(p);
  const std::vector<Token> prompt = {1, 20, 8, 15};
  Rng r1(5), r2(5);
  const Trajectory g1 = rollout(pol, prompt, 20, Decoding::greedy(), r1);
  const Trajectory g2 = rollout(pol, prompt, 20, Decoding::greedy(), r2);
  CHECK(g1.actions == g2.actions);

  Rng rs(6);
  const Trajectory t = rollout(pol, prompt, 20, Decoding::sample(1.0), rs);
  REQUIRE(t.actions.size() == t.log_probs.size());
  CHECK(t.horizon() <= 20);
  double recorded = 0.0;
  double rescored = 0.0;
  for (std::size_t i = 0; i < t.horizon(); ++i) {
    CHECK(t.log_probs[i] <= 0.0);
    recorded += t.log_probs[i];
    rescored += oracle::log_prob(p, t.state_at(i), t.actions[i]);
  }
  CHECK(std::abs(recorded - rescored) <= 1e-9);
  if (t.terminated) CHECK(t.actions.back() == tok::kEos);
}

TEST_CASE("cross-entropy: uniform baseline, mean semantics, empty batch") {
  const auto shape = oracle::small_shape();
  Rng rng(1);
  auto batch = oracle::random_ce_batch(shape, rng);
  const auto zero = ce_loss_and_grad(PolicyParams::zeros(shape), batch);
  CHECK(zero.loss == doctest::Approx(std::log(12.0)).epsilon(1e-12));

  const auto p = PolicyParams::random(shape, 2);
  const auto g1 = ce_loss_and_grad(p, batch);
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  const auto g2 = ce_loss_and_grad(p, doubled);
  CHECK(g2.loss == doctest::Approx(g1.loss).epsilon(1e-12));
  const auto a1 = g1.grad.arrays();
  const auto a2 = g2.grad.arrays();
  for (std::size_t k = 0; k < a1.size(); ++k)
    for (std::size_t i = 0; i < a1[k].size(); ++i) CHECK(std::abs(a1[k][i] - a2[k][i]) <= 1e-12);

  CHECK(oracle::error_of([&] { ce_loss_and_grad(p, {}); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("KL against the student's own distribution is zero") {
  const auto shape = oracle::small_shape();
  const auto p = PolicyParams::random(shape, 8);
  Rng rng(3);
  std::vector<SoftTarget> items;
  for (int i = 0; i < 4; ++i) {
    const State s = oracle::random_state(shape, rng);
    std::vector<double> prob(shape.vocab);
    softmax(forward_logits(p, s), prob);
    items.push_back({s, prob});
  }
  const auto g = kl_loss_and_grad(p, items);
  CHECK(std::abs(g.loss) <= 1e-9);
  for (const auto& arr : g.grad.arrays())
    for (double x : arr) CHECK(std::abs(x) <= 1e-9);
  CHECK(grad_check(p, items) <= 1e-4);
}

TEST_CASE("one-hot KL equals cross-entropy") {
  const auto shape = oracle::small_shape();
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = PolicyParams::random(shape, 100 + trial);
    const auto ce = oracle::random_ce_batch(shape, rng, 3);
    std::vector<SoftTarget> kl;
    for (const auto& item : ce) {
      std::vector<double> onehot(shape.vocab, 0.0);
      onehot[item.target] = 1.0;
      kl.push_back({item.state, onehot});
    }
    const auto a = ce_loss_and_grad(p, ce);
    const auto b = kl_loss_and_grad(p, kl);
    CHECK(std::abs(a.loss - b.loss) <= 1e-9);
    const auto ga = a.grad.arrays();
    const auto gb = b.grad.arrays();
    for (std::size_t k = 0; k < ga.size(); ++k)
      for (std::size_t i = 0; i < ga[k].size(); ++i) CHECK(std::abs(ga[k][i] - gb[k][i]) <= 1e-9);
  }
}

TEST_CASE("KL rejects teacher vectors that are not distributions") {
  const auto shape = oracle::small_shape();
  const auto p = PolicyParams::random(shape, 1);
  const State s{{1, 2}, {}};
  std::vector<double> bad(shape.vocab, 0.1);
  CHECK(oracle::error_of([&] { kl_loss_and_grad(p, std::vector<SoftTarget>{{s, bad}}); }) ==
        ErrorCode::kInvalidSignal);
  std::vector<double> negative(shape.vocab, 0.0);
  negative[1] = 1.5;
  negative[2] = -0.5;
  CHECK(oracle::error_of([&] { kl_loss_and_grad(p, std::vector<SoftTarget>{{s, negative}}); }) ==
        ErrorCode::kInvalidSignal);
  CHECK(oracle::error_of([&] { kl_loss_and_grad(p, std::vector<SoftTarget>{{s, {1.0}}}); }) ==
        ErrorCode::kInvalidSignal);
}

TEST_CASE("policy gradient: null advantages, linearity, length mismatch") {
  const auto shape = oracle::small_shape();
  const auto p = PolicyParams::random(shape, 5);
  Rng rng(6);
  auto batch = oracle::random_pg_batch(shape, rng);
  std::vector<double> zeros(batch.advantages.size(), 0.0);
  const auto g0 = pg_loss_and_grad(p, batch.trajectories, zeros);
  for (const auto& arr : g0.grad.arrays())
    for (double x : arr) CHECK(x == 0.0);

  const auto gp = pg_loss_and_grad(p, batch.trajectories, batch.advantages);
  std::vector<double> neg = batch.advantages;
  for (double& a : neg) a = -a;
  const auto gn = pg_loss_and_grad(p, batch.trajectories, neg);
  const auto ap = gp.grad.arrays();
  const auto an = gn.grad.arrays();
  for (std::size_t k = 0; k < ap.size(); ++k)
    for (std::size_t i = 0; i < ap[k].size(); ++i) CHECK(ap[k][i] == -an[k][i]);

  std::vector<double> short_adv(batch.advantages.begin(), batch.advantages.end() - 1);
  CHECK(oracle::error_of([&] { pg_loss_and_grad(p, batch.trajectories, short_adv); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("grad_check on the documented seeds") {
  const auto shape = oracle::small_shape();
  {
    Rng rng(3);
    CHECK(grad_check(PolicyParams::random(shape, 3), oracle::random_ce_batch(shape, rng)) <= 1e-4);
  }
  {
    Rng rng(5);
    CHECK(grad_check(PolicyParams::random(shape, 5), oracle::random_pg_batch(shape, rng)) <= 1e-4);
  }
  CHECK(oracle::error_of([&] {
          Rng rng(0);
          grad_check(PolicyParams::random(ModelShape{}, 0), oracle::random_ce_batch(ModelShape{}, rng));
        }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("gradients match finite differences on 20 random configurations") {
  const auto shape = oracle::small_shape();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(derive_seed(seed, "gradcheck"));
    const auto p = PolicyParams::random(shape, seed);
    CHECK(grad_check(p, oracle::random_ce_batch(shape, rng)) <= 1e-4);
    CHECK(grad_check(p, oracle::random_kl_batch(shape, rng)) <= 1e-4);
    CHECK(grad_check(p, oracle::random_pg_batch(shape, rng)) <= 1e-4);
  }
}

TEST_CASE("Adam: zero gradient, hand-computed first step, determinism, refusal") {
  const auto shape = oracle::small_shape();
  const auto init = PolicyParams::random(shape, 9);

  auto p = init;
  auto opt = OptimizerState::fresh(shape, AdamConfig{0.01});
  adam_step(p, GradBundle{PolicyParams::zeros(shape), 0.0}, opt);
  CHECK(p == init);
  CHECK(opt.step == 1);

  auto q = init;
  auto opt2 = OptimizerState::fresh(shape, AdamConfig{0.01});
  GradBundle g{PolicyParams::zeros(shape), 0.0};
  g.grad.b2[3] = 1.0;
  adam_step(q, g, opt2);
  CHECK(q.b2[3] - init.b2[3] == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(q.w1 == init.w1);

  Rng rng(1);
  const auto batch = oracle::random_ce_batch(shape, rng);
  auto a = init, b = init;
  auto oa = OptimizerState::fresh(shape), ob = OptimizerState::fresh(shape);
  for (int i = 0; i < 5; ++i) {
    adam_step(a, ce_loss_and_grad(a, batch), oa);
    adam_step(b, ce_loss_and_grad(b, batch), ob);
  }
  CHECK(a == b);
  CHECK(oa.first_moment == ob.first_moment);
  CHECK(oa.second_moment == ob.second_moment);

  auto bad = g;
  bad.grad.w1[0] = std::numeric_limits<double>::infinity();
  auto before = a;
  auto before_opt = oa;
  CHECK(oracle::error_of([&] { adam_step(a, bad, oa); }) == ErrorCode::kNumericFault);
  CHECK(a == before);
  CHECK(oa.step == before_opt.step);
  CHECK(oa.first_moment == before_opt.first_moment);
}

TEST_CASE("checkpoint round trip is byte exact") {
  const auto p = PolicyParams::random(ModelShape{}, 0);
  auto opt = OptimizerState::fresh(p.shape);
  opt.step = 17;
  opt.first_moment.b1[2] = 0.25;
  opt.second_moment.w2[5] = 1e-7;
  const fs::path path = temp_path("roundtrip.ssl");
  save_checkpoint(p, opt, path);
  const Checkpoint c = load_checkpoint(path);
  CHECK(c.params == p);
  CHECK(c.optimizer.step == 17);
  CHECK(c.optimizer.first_moment == opt.first_moment);
  CHECK(c.optimizer.second_moment == opt.second_moment);
  CHECK(encode_checkpoint(c.params, c.optimizer) == encode_checkpoint(p, opt));

  const fs::path again = temp_path("roundtrip2.ssl");
  save_checkpoint(c.params, c.optimizer, again);
  std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {});
  const std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  CHECK(b1.substr(0, 4) == "SSL1");
  CHECK(b1.size() == 4 + 5 * 8 + 3 * 8 * p.size());
}

TEST_CASE("malformed checkpoints raise corrupt-checkpoint") {
  const auto p = PolicyParams::random(oracle::small_shape(), 0);
  const auto bytes = encode_checkpoint(p, OptimizerState::fresh(p.shape));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  CHECK(oracle::error_of([&] { decode_checkpoint(truncated); }) == ErrorCode::kCorruptCheckpoint);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK(oracle::error_of([&] { decode_checkpoint(magic); }) == ErrorCode::kCorruptCheckpoint);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(oracle::error_of([&] { decode_checkpoint(trailing); }) == ErrorCode::kCorruptCheckpoint);
  CHECK(oracle::error_of([&] { decode_checkpoint(std::span<const std::uint8_t>(bytes.data(), 3)); }) ==
        ErrorCode::kCorruptCheckpoint);
  try {
    decode_checkpoint(truncated);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  const fs::path path = temp_path("truncated.ssl");
  {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(truncated.data()), static_cast<std::streamsize>(truncated.size()));
  }
  CHECK(oracle::error_of([&] { load_checkpoint(path); }) == ErrorCode::kCorruptCheckpoint);
  CHECK(oracle::error_of([&] { load_checkpoint(temp_path("missing.ssl")); }) == ErrorCode::kIo);
}

TEST_CASE("a reloaded seed-0 init reproduces greedy rollouts") {
  const auto p = PolicyParams::random(ModelShape{}, 0);
  const fs::path path = temp_path("seed0.ssl");
  save_checkpoint(p, OptimizerState::fresh(p.shape), path);
  const Checkpoint c = load_checkpoint(path);
  for (const std::vector<Token>& prompt : {std::vector<Token>{1, 20}, std::vector<Token>{5, 9, 11, 12}}) {
    Rng r1(0), r2(0);
    CHECK(rollout(NeuralPolicy(p), prompt, 32, Decoding::greedy(), r1).actions ==
          rollout(NeuralPolicy(c.params), prompt, 32, Decoding::greedy(), r2).actions);
  }
}
