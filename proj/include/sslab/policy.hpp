#pragma once

// Fixed-window neural language model used as the autoregressive policy, its
// decoding routines, the three training losses with analytic gradients, and
// the Adam optimizer.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "sslab/rng.hpp"
#include "sslab/vocab.hpp"

namespace sslab {

struct ModelShape {
  int vocab = 40;
  int context = 16;  // k: tokens visible to the model
  int embed = 16;    // d_e
  int hidden = 64;   // h

  std::size_t input_width() const { return static_cast<std::size_t>(context) * embed; }
  std::size_t param_count() const;
  void validate() const;

  bool operator==(const ModelShape&) const = default;
};

// Conditioning context of the policy: prompt plus generated prefix.
struct State {
  std::vector<Token> prompt;
  std::vector<Token> prefix;

  std::size_t length() const { return prompt.size() + prefix.size(); }
  bool operator==(const State&) const = default;
};

struct Trajectory {
  std::vector<Token> prompt;
  std::vector<Token> actions;
  std::vector<double> log_probs;  // log pi(action_t | state_t) under the generating policy
  bool terminated = false;        // true when the last action is EOS

  std::size_t horizon() const { return actions.size(); }
  // State before action t, i.e. (prompt, actions[0..t)).
  State state_at(std::size_t t) const;
};

struct PolicyParams {
  ModelShape shape;
  std::vector<double> embedding;  // vocab x embed
  std::vector<double> w1;         // hidden x (context * embed)
  std::vector<double> b1;         // hidden
  std::vector<double> w2;         // vocab x hidden
  std::vector<double> b2;         // vocab

  static PolicyParams zeros(const ModelShape& shape);
  static PolicyParams random(const ModelShape& shape, std::uint64_t seed);

  // Field order is the serialization order.
  std::array<std::span<double>, 5> arrays();
  std::array<std::span<const double>, 5> arrays() const;
  std::size_t size() const;
  bool finite() const;

  bool operator==(const PolicyParams&) const = default;
};

struct GradBundle {
  PolicyParams grad;
  double loss = 0.0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  PolicyParams first_moment;
  PolicyParams second_moment;
  std::uint64_t step = 0;
  AdamConfig config;

  static OptimizerState fresh(const ModelShape& shape, AdamConfig config = {});
};

// Anything that maps a state to next-token logits. Training always goes
// through PolicyParams; rollouts and evaluation accept any TokenPolicy so that
// scripted probe policies can stand in for a network.
class TokenPolicy {
 public:
  virtual ~TokenPolicy() = default;
  virtual int vocab_size() const = 0;
  virtual void logits(const State& state, std::span<double> out) const = 0;
};

// Non-owning view of a parameter set.
class NeuralPolicy final : public TokenPolicy {
 public:
  explicit NeuralPolicy(const PolicyParams& params) : params_(&params) {}

  int vocab_size() const override { return params_->shape.vocab; }
  void logits(const State& state, std::span<double> out) const override;
  const PolicyParams& params() const { return *params_; }

 private:
  const PolicyParams* params_;
};

// Last `context` tokens of prompt ++ prefix, PAD-padded on the left.
void context_window(const State& state, int context, std::span<Token> out);

std::vector<double> forward_logits(const PolicyParams& params, const State& state);

// Stable log-softmax / softmax over the full vocabulary.
void log_softmax(std::span<const double> logits, std::span<double> out);
void softmax(std::span<const double> logits, std::span<double> out);

double log_prob(const PolicyParams& params, const State& state, Token token);
double log_prob(const TokenPolicy& policy, const State& state, Token token);

// temperature == 0 selects greedy argmax (lowest id wins ties). PAD is never
// produced in either mode.
Token sample_token(const TokenPolicy& policy, const State& state, double temperature,
                   Rng& rng);

struct Decoding {
  double temperature = 0.0;

  static Decoding greedy() { return {0.0}; }
  static Decoding sample(double temperature) { return {temperature}; }
};

Trajectory rollout(const TokenPolicy& policy, std::span<const Token> prompt,
                   std::size_t max_len, Decoding mode, Rng& rng);

// Generates at most max_len tokens after state.prefix; stops after EOS.
std::vector<Token> continue_from(const TokenPolicy& policy, const State& state,
                                 std::size_t max_len, Decoding mode, Rng& rng);

struct LabeledState {
  State state;
  Token target;
};

struct SoftTarget {
  State state;
  std::vector<double> probs;  // teacher distribution over the vocabulary
};

struct PgBatch {
  std::vector<Trajectory> trajectories;
  std::vector<double> advantages;
};

enum class LossKind { kCrossEntropy, kKl, kPolicyGradient };

using LossBatch = std::variant<std::vector<LabeledState>, std::vector<SoftTarget>, PgBatch>;

// Mean over the batch of -log pi(target | state).
GradBundle ce_loss_and_grad(const PolicyParams& params, std::span<const LabeledState> batch);

// Mean over items of KL(teacher || student); the gradient flows only through
// the student.
GradBundle kl_loss_and_grad(const PolicyParams& params, std::span<const SoftTarget> items);

// REINFORCE surrogate -(1/N) sum_i A_i sum_t log pi(y_it | s_it), re-scored
// under `params`.
GradBundle pg_loss_and_grad(const PolicyParams& params, std::span<const Trajectory> trajectories,
                            std::span<const double> advantages);

GradBundle loss_and_grad(const PolicyParams& params, const LossBatch& batch);
LossKind loss_kind(const LossBatch& batch);

// In-place Adam update with bias correction. Refuses (throws numeric-fault,
// leaving both arguments untouched) on a non-finite gradient.
void adam_step(PolicyParams& params, const GradBundle& grads, OptimizerState& opt);

// Maximum relative error between the analytic gradient and central finite
// differences over every coordinate. Pairs with both magnitudes below 1e-8
// count as agreeing.
double grad_check(const PolicyParams& params, const LossBatch& batch, double epsilon = 1e-4);

}  // namespace sslab
