#include "sslab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sslab/error.hpp"

namespace sslab {

std::size_t ModelShape::param_count() const {
  const auto v = static_cast<std::size_t>(vocab);
  const auto h = static_cast<std::size_t>(hidden);
  return v * static_cast<std::size_t>(embed) + h * input_width() + h + v * h + v;
}

void ModelShape::validate() const {
  if (vocab < 2 || context < 1 || embed < 1 || hidden < 1)
    throw Error(ErrorCode::kInvalidArgument,
                "invalid model shape V=" + std::to_string(vocab) + " k=" + std::to_string(context) +
                    " d_e=" + std::to_string(embed) + " h=" + std::to_string(hidden));
}

State Trajectory::state_at(std::size_t t) const {
  if (t > actions.size()) throw Error(ErrorCode::kInvalidArgument, "state index past horizon");
  return State{prompt, std::vector<Token>(actions.begin(), actions.begin() + static_cast<std::ptrdiff_t>(t))};
}

PolicyParams PolicyParams::zeros(const ModelShape& shape) {
  shape.validate();
  PolicyParams p;
  p.shape = shape;
  const auto v = static_cast<std::size_t>(shape.vocab);
  const auto h = static_cast<std::size_t>(shape.hidden);
  p.embedding.assign(v * static_cast<std::size_t>(shape.embed), 0.0);
  p.w1.assign(h * shape.input_width(), 0.0);
  p.b1.assign(h, 0.0);
  p.w2.assign(v * h, 0.0);
  p.b2.assign(v, 0.0);
  return p;
}

PolicyParams PolicyParams::random(const ModelShape& shape, std::uint64_t seed) {
  PolicyParams p = zeros(shape);
  Rng rng(seed);
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(shape.input_width()));
  for (double& x : p.embedding) x = 0.5 * rng.normal();
  for (double& x : p.w1) x = w1_scale * rng.normal();
  for (double& x : p.w2) x = 0.1 * rng.normal();
  return p;
}

std::array<std::span<double>, 5> PolicyParams::arrays() {
  return {std::span<double>(embedding), std::span<double>(w1), std::span<double>(b1),
          std::span<double>(w2), std::span<double>(b2)};
}

std::array<std::span<const double>, 5> PolicyParams::arrays() const {
  return {std::span<const double>(embedding), std::span<const double>(w1),
          std::span<const double>(b1), std::span<const double>(w2), std::span<const double>(b2)};
}

std::size_t PolicyParams::size() const {
  std::size_t n = 0;
  for (auto a : arrays()) n += a.size();
  return n;
}

bool PolicyParams::finite() const {
  for (auto a : arrays())
    for (double x : a)
      if (!std::isfinite(x)) return false;
  return true;
}

OptimizerState OptimizerState::fresh(const ModelShape& shape, AdamConfig config) {
  if (!(config.lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be positive");
  return OptimizerState{PolicyParams::zeros(shape), PolicyParams::zeros(shape), 0, config};
}

namespace {

struct Workspace {
  std::vector<Token> window;
  std::vector<double> input;
  std::vector<double> hidden;
  std::vector<double> logits;
  std::vector<double> logp;
  std::vector<double> dlogits;
  std::vector<double> dhidden;
  std::vector<double> dinput;

  explicit Workspace(const ModelShape& s)
      : window(static_cast<std::size_t>(s.context)),
        input(s.input_width()),
        hidden(static_cast<std::size_t>(s.hidden)),
        logits(static_cast<std::size_t>(s.vocab)),
        logp(static_cast<std::size_t>(s.vocab)),
        dlogits(static_cast<std::size_t>(s.vocab)),
        dhidden(static_cast<std::size_t>(s.hidden)),
        dinput(s.input_width()) {}
};

void check_state(const State& state) {
  if (state.prompt.empty()) throw Error(ErrorCode::kInvalidArgument, "state has an empty prompt");
}

void forward(const PolicyParams& p, const State& state, Workspace& ws) {
  const ModelShape& s = p.shape;
  const auto de = static_cast<std::size_t>(s.embed);
  const std::size_t width = s.input_width();
  context_window(state, s.context, ws.window);
  for (std::size_t j = 0; j < ws.window.size(); ++j) {
    const Token t = ws.window[j];
    if (t < 0 || t >= s.vocab)
      throw Error(ErrorCode::kInvalidToken, "token id " + std::to_string(t) + " outside vocabulary");
    const double* row = p.embedding.data() + static_cast<std::size_t>(t) * de;
    std::copy(row, row + de, ws.input.data() + j * de);
  }
  for (std::size_t i = 0; i < ws.hidden.size(); ++i) {
    const double* w = p.w1.data() + i * width;
    double a = p.b1[i];
    for (std::size_t c = 0; c < width; ++c) a += w[c] * ws.input[c];
    ws.hidden[i] = std::tanh(a);
  }
  const std::size_t h = ws.hidden.size();
  for (std::size_t v = 0; v < ws.logits.size(); ++v) {
    const double* w = p.w2.data() + v * h;
    double z = p.b2[v];
    for (std::size_t i = 0; i < h; ++i) z += w[i] * ws.hidden[i];
    if (!std::isfinite(z)) throw Error(ErrorCode::kNumericFault, "non-finite logit (parameters contain NaN/Inf)");
    ws.logits[v] = z;
  }
}

// Accumulates d(loss)/d(params) into grad given ws.dlogits from the last forward.
void backward(const PolicyParams& p, Workspace& ws, PolicyParams& grad) {
  const ModelShape& s = p.shape;
  const std::size_t h = ws.hidden.size();
  const std::size_t width = s.input_width();
  const auto de = static_cast<std::size_t>(s.embed);

  std::fill(ws.dhidden.begin(), ws.dhidden.end(), 0.0);
  for (std::size_t v = 0; v < ws.dlogits.size(); ++v) {
    const double g = ws.dlogits[v];
    if (g == 0.0) continue;
    grad.b2[v] += g;
    double* gw = grad.w2.data() + v * h;
    const double* w = p.w2.data() + v * h;
    for (std::size_t i = 0; i < h; ++i) {
      gw[i] += g * ws.hidden[i];
      ws.dhidden[i] += g * w[i];
    }
  }
  std::fill(ws.dinput.begin(), ws.dinput.end(), 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    const double da = ws.dhidden[i] * (1.0 - ws.hidden[i] * ws.hidden[i]);
    if (da == 0.0) continue;
    grad.b1[i] += da;
    double* gw = grad.w1.data() + i * width;
    const double* w = p.w1.data() + i * width;
    for (std::size_t c = 0; c < width; ++c) {
      gw[c] += da * ws.input[c];
      ws.dinput[c] += da * w[c];
    }
  }
  for (std::size_t j = 0; j < ws.window.size(); ++j) {
    double* ge = grad.embedding.data() + static_cast<std::size_t>(ws.window[j]) * de;
    const double* d = ws.dinput.data() + j * de;
    for (std::size_t e = 0; e < de; ++e) ge[e] += d[e];
  }
}

void check_token(Token token, int vocab) {
  if (token < 0 || token >= vocab)
    throw Error(ErrorCode::kInvalidToken, "token id " + std::to_string(token) + " outside vocabulary");
  if (token == tok::kPad) throw Error(ErrorCode::kInvalidToken, "PAD is not a valid target token");
}

void check_loss(double loss) {
  if (!std::isfinite(loss)) throw Error(ErrorCode::kNumericFault, "non-finite loss");
}

}  // namespace

void context_window(const State& state, int context, std::span<Token> out) {
  const std::size_t k = static_cast<std::size_t>(context);
  const std::size_t total = state.length();
  for (std::size_t j = 0; j < k; ++j) {
    // position of window slot j within prompt ++ prefix
    const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(total) - static_cast<std::ptrdiff_t>(k) +
                               static_cast<std::ptrdiff_t>(j);
    if (pos < 0) {
      out[j] = tok::kPad;
    } else if (static_cast<std::size_t>(pos) < state.prompt.size()) {
      out[j] = state.prompt[static_cast<std::size_t>(pos)];
    } else {
      out[j] = state.prefix[static_cast<std::size_t>(pos) - state.prompt.size()];
    }
  }
}

void NeuralPolicy::logits(const State& state, std::span<double> out) const {
  check_state(state);
  Workspace ws(params_->shape);
  forward(*params_, state, ws);
  std::copy(ws.logits.begin(), ws.logits.end(), out.begin());
}

std::vector<double> forward_logits(const PolicyParams& params, const State& state) {
  std::vector<double> out(static_cast<std::size_t>(params.shape.vocab));
  NeuralPolicy(params).logits(state, out);
  return out;
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double lse = m + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

void softmax(std::span<const double> logits, std::span<double> out) {
  log_softmax(logits, out);
  for (double& x : out) x = std::exp(x);
}

double log_prob(const TokenPolicy& policy, const State& state, Token token) {
  check_token(token, policy.vocab_size());
  std::vector<double> z(static_cast<std::size_t>(policy.vocab_size()));
  policy.logits(state, z);
  std::vector<double> lp(z.size());
  log_softmax(z, lp);
  return lp[static_cast<std::size_t>(token)];
}

double log_prob(const PolicyParams& params, const State& state, Token token) {
  return log_prob(NeuralPolicy(params), state, token);
}

namespace {

Token choose(std::span<const double> z, double temperature, Rng& rng) {
  if (temperature < 0.0 || !std::isfinite(temperature))
    throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
  if (z.size() < 2) throw Error(ErrorCode::kInvalidArgument, "vocabulary has no sampleable token");
  if (temperature == 0.0) {
    Token best = 1;
    for (std::size_t v = 2; v < z.size(); ++v)
      if (z[v] > z[static_cast<std::size_t>(best)]) best = static_cast<Token>(v);
    return best;
  }
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 1; v < z.size(); ++v) m = std::max(m, z[v] / temperature);
  std::vector<double> w(z.size(), 0.0);
  double total = 0.0;
  for (std::size_t v = 1; v < z.size(); ++v) {
    w[v] = std::exp(z[v] / temperature - m);
    total += w[v];
  }
  const double u = rng.uniform() * total;
  double cum = 0.0;
  Token last = 1;
  for (std::size_t v = 1; v < z.size(); ++v) {
    if (w[v] <= 0.0) continue;
    cum += w[v];
    last = static_cast<Token>(v);
    if (u < cum) return last;
  }
  return last;
}

// Extends `state.prefix` in place; returns (tokens, log-probs, terminated).
Trajectory generate(const TokenPolicy& policy, State state, std::size_t max_len, Decoding mode,
                    Rng& rng) {
  check_state(state);
  Trajectory out;
  std::vector<double> z(static_cast<std::size_t>(policy.vocab_size()));
  std::vector<double> lp(z.size());
  for (std::size_t t = 0; t < max_len; ++t) {
    policy.logits(state, z);
    const Token y = choose(z, mode.temperature, rng);
    log_softmax(z, lp);
    out.actions.push_back(y);
    out.log_probs.push_back(lp[static_cast<std::size_t>(y)]);
    state.prefix.push_back(y);
    if (y == tok::kEos) {
      out.terminated = true;
      break;
    }
  }
  return out;
}

}  // namespace

Token sample_token(const TokenPolicy& policy, const State& state, double temperature, Rng& rng) {
  std::vector<double> z(static_cast<std::size_t>(policy.vocab_size()));
  policy.logits(state, z);
  return choose(z, temperature, rng);
}

Trajectory rollout(const TokenPolicy& policy, std::span<const Token> prompt, std::size_t max_len,
                   Decoding mode, Rng& rng) {
  if (max_len < 1) throw Error(ErrorCode::kInvalidArgument, "rollout max_len must be >= 1");
  State start{std::vector<Token>(prompt.begin(), prompt.end()), {}};
  Trajectory traj = generate(policy, start, max_len, mode, rng);
  traj.prompt = std::move(start.prompt);
  return traj;
}

std::vector<Token> continue_from(const TokenPolicy& policy, const State& state, std::size_t max_len,
                                 Decoding mode, Rng& rng) {
  return generate(policy, state, max_len, mode, rng).actions;
}

GradBundle ce_loss_and_grad(const PolicyParams& params, std::span<const LabeledState> batch) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "cross-entropy batch is empty");
  GradBundle out{PolicyParams::zeros(params.shape), 0.0};
  Workspace ws(params.shape);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& item : batch) {
    check_token(item.target, params.shape.vocab);
    check_state(item.state);
    forward(params, item.state, ws);
    log_softmax(ws.logits, ws.logp);
    const auto y = static_cast<std::size_t>(item.target);
    out.loss -= scale * ws.logp[y];
    for (std::size_t v = 0; v < ws.dlogits.size(); ++v) ws.dlogits[v] = scale * std::exp(ws.logp[v]);
    ws.dlogits[y] -= scale;
    backward(params, ws, out.grad);
  }
  check_loss(out.loss);
  return out;
}

GradBundle kl_loss_and_grad(const PolicyParams& params, std::span<const SoftTarget> items) {
  if (items.empty()) throw Error(ErrorCode::kInvalidArgument, "distillation batch is empty");
  const auto vocab = static_cast<std::size_t>(params.shape.vocab);
  for (const auto& item : items) {
    if (item.probs.size() != vocab)
      throw Error(ErrorCode::kInvalidSignal, "teacher distribution has wrong length");
    double sum = 0.0;
    for (double q : item.probs) {
      if (!(q >= 0.0) || !std::isfinite(q))
        throw Error(ErrorCode::kInvalidSignal, "teacher distribution has a negative or non-finite entry");
      sum += q;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw Error(ErrorCode::kInvalidSignal, "teacher distribution sums to " + std::to_string(sum));
  }
  GradBundle out{PolicyParams::zeros(params.shape), 0.0};
  Workspace ws(params.shape);
  const double scale = 1.0 / static_cast<double>(items.size());
  for (const auto& item : items) {
    check_state(item.state);
    forward(params, item.state, ws);
    log_softmax(ws.logits, ws.logp);
    double kl = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      const double q = item.probs[v];
      if (q > 0.0) kl += q * (std::log(q) - ws.logp[v]);
      ws.dlogits[v] = scale * (std::exp(ws.logp[v]) - q);
    }
    out.loss += scale * kl;
    backward(params, ws, out.grad);
  }
  check_loss(out.loss);
  return out;
}

GradBundle pg_loss_and_grad(const PolicyParams& params, std::span<const Trajectory> trajectories,
                            std::span<const double> advantages) {
  if (trajectories.size() != advantages.size())
    throw Error(ErrorCode::kInvalidArgument, "advantage count does not match trajectory count");
  if (trajectories.empty()) throw Error(ErrorCode::kInvalidArgument, "policy-gradient batch is empty");
  GradBundle out{PolicyParams::zeros(params.shape), 0.0};
  Workspace ws(params.shape);
  const double n = static_cast<double>(trajectories.size());
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const double weight = advantages[i] / n;
    if (!std::isfinite(weight)) throw Error(ErrorCode::kNumericFault, "non-finite advantage");
    if (weight == 0.0) continue;
    const Trajectory& traj = trajectories[i];
    State state{traj.prompt, {}};
    check_state(state);
    for (Token y : traj.actions) {
      check_token(y, params.shape.vocab);
      forward(params, state, ws);
      log_softmax(ws.logits, ws.logp);
      const auto yi = static_cast<std::size_t>(y);
      out.loss -= weight * ws.logp[yi];
      for (std::size_t v = 0; v < ws.dlogits.size(); ++v) ws.dlogits[v] = weight * std::exp(ws.logp[v]);
      ws.dlogits[yi] -= weight;
      backward(params, ws, out.grad);
      state.prefix.push_back(y);
    }
  }
  check_loss(out.loss);
  return out;
}

GradBundle loss_and_grad(const PolicyParams& params, const LossBatch& batch) {
  return std::visit(
      [&](const auto& b) -> GradBundle {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, std::vector<LabeledState>>) {
          return ce_loss_and_grad(params, b);
        } else if constexpr (std::is_same_v<B, std::vector<SoftTarget>>) {
          return kl_loss_and_grad(params, b);
        } else {
          return pg_loss_and_grad(params, b.trajectories, b.advantages);
        }
      },
      batch);
}

LossKind loss_kind(const LossBatch& batch) {
  switch (batch.index()) {
    case 0: return LossKind::kCrossEntropy;
    case 1: return LossKind::kKl;
    default: return LossKind::kPolicyGradient;
  }
}

void adam_step(PolicyParams& params, const GradBundle& grads, OptimizerState& opt) {
  if (grads.grad.shape != params.shape || opt.first_moment.shape != params.shape ||
      opt.second_moment.shape != params.shape)
    throw Error(ErrorCode::kInvalidArgument, "optimizer/gradient shape mismatch");
  if (!grads.grad.finite() || !std::isfinite(grads.loss))
    throw Error(ErrorCode::kNumericFault, "non-finite gradient; update refused");

  const AdamConfig& c = opt.config;
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  auto theta = params.arrays();
  auto g = grads.grad.arrays();
  auto m = opt.first_moment.arrays();
  auto v = opt.second_moment.arrays();
  for (std::size_t a = 0; a < theta.size(); ++a) {
    for (std::size_t i = 0; i < theta[a].size(); ++i) {
      const double gi = g[a][i];
      m[a][i] = c.beta1 * m[a][i] + (1.0 - c.beta1) * gi;
      v[a][i] = c.beta2 * v[a][i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[a][i] / bc1;
      const double vhat = v[a][i] / bc2;
      theta[a][i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

double grad_check(const PolicyParams& params, const LossBatch& batch, double epsilon) {
  if (params.size() > 5000)
    throw Error(ErrorCode::kInvalidArgument, "grad_check is limited to <= 5000 parameters");
  const GradBundle analytic = loss_and_grad(params, batch);
  PolicyParams probe = params;
  auto coords = probe.arrays();
  auto ga = analytic.grad.arrays();
  double worst = 0.0;
  for (std::size_t a = 0; a < coords.size(); ++a) {
    for (std::size_t i = 0; i < coords[a].size(); ++i) {
      const double saved = coords[a][i];
      coords[a][i] = saved + epsilon;
      const double up = loss_and_grad(probe, batch).loss;
      coords[a][i] = saved - epsilon;
      const double down = loss_and_grad(probe, batch).loss;
      coords[a][i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double exact = ga[a][i];
      const double scale = std::max(std::abs(numeric), std::abs(exact));
      if (scale < 1e-8) continue;
      worst = std::max(worst, std::abs(numeric - exact) / scale);
    }
  }
  return worst;
}

}  // namespace sslab
