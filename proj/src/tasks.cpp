#include "sslab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sslab/error.hpp"
#include "sslab/rng.hpp"

namespace sslab {

namespace {

const Vocab& V() { return Vocab::standard(); }

constexpr int kLetterCount = 17;  // 'a'..'q'
constexpr std::uint64_t kEvalBuckets = 5;

std::vector<Token> digits_of(int value) {
  std::string s = std::to_string(value);
  return V().encode(s);
}

void append(std::vector<Token>& out, std::span<const Token> more) {
  out.insert(out.end(), more.begin(), more.end());
}

Token letter(int i) { return V().id(static_cast<char>('a' + i)); }

bool is_letter(Token t) {
  const char c = V().symbol(t);
  return c >= 'a' && c < 'a' + kLetterCount;
}

std::optional<int> digit_value(Token t) {
  if (t < 0 || t >= V().size()) return std::nullopt;
  const char c = V().symbol(t);
  if (c < '0' || c > '9') return std::nullopt;
  return c - '0';
}

std::vector<Token> random_prompt(const TaskSpec& spec, Rng& rng) {
  std::vector<Token> p{V().id(task_tag(spec.kind))};
  if (spec.kind == TaskKind::kChainArith) {
    const int count = spec.min_operands +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_operands - spec.min_operands + 1)));
    for (int i = 0; i < count; ++i) {
      if (i > 0) p.push_back(V().id('+'));
      const int d = spec.min_digit +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_digit - spec.min_digit + 1)));
      p.push_back(V().id(static_cast<char>('0' + d)));
    }
    p.push_back(V().id('='));
  } else {
    const int len = spec.min_length +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_length - spec.min_length + 1)));
    for (int i = 0; i < len; ++i) p.push_back(letter(static_cast<int>(rng.below(kLetterCount))));
    p.push_back(tok::kSep);
  }
  return p;
}

// Operands of a chain_arith prompt, or nullopt when malformed.
std::optional<std::vector<int>> parse_operands(std::span<const Token> prompt) {
  if (prompt.size() < 4 || prompt.back() != V().id('=')) return std::nullopt;
  std::vector<int> ops;
  for (std::size_t i = 1; i + 1 < prompt.size(); ++i) {
    if (i % 2 == 1) {
      auto d = digit_value(prompt[i]);
      if (!d) return std::nullopt;
      ops.push_back(*d);
    } else if (prompt[i] != V().id('+')) {
      return std::nullopt;
    }
  }
  if (ops.size() < 2 || prompt.size() != 2 * ops.size() + 1) return std::nullopt;
  return ops;
}

std::optional<std::vector<Token>> parse_letters(std::span<const Token> prompt) {
  if (prompt.size() < 3 || prompt.back() != tok::kSep) return std::nullopt;
  std::vector<Token> s(prompt.begin() + 1, prompt.end() - 1);
  for (Token t : s)
    if (!is_letter(t)) return std::nullopt;
  return s;
}

// Answer string compared by the verifier (no EOS).
std::optional<std::vector<Token>> gold_answer(std::span<const Token> prompt) {
  auto kind = task_of(prompt);
  if (!kind) return std::nullopt;
  if (*kind == TaskKind::kChainArith) {
    auto ops = parse_operands(prompt);
    if (!ops) return std::nullopt;
    int sum = 0;
    for (int x : *ops) sum += x;
    return digits_of(sum);
  }
  auto s = parse_letters(prompt);
  if (!s) return std::nullopt;
  switch (*kind) {
    case TaskKind::kCopy: return *s;
    case TaskKind::kReverse: return std::vector<Token>(s->rbegin(), s->rend());
    case TaskKind::kCount: return digits_of(static_cast<int>(s->size()));
    default: return std::nullopt;
  }
}

}  // namespace

const char* task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kChainArith: return "chain_arith";
    case TaskKind::kCopy: return "copy";
    case TaskKind::kReverse: return "reverse";
    case TaskKind::kCount: return "count";
  }
  return "?";
}

TaskKind parse_task(std::string_view name) {
  for (TaskKind k : kAllTasks)
    if (name == task_name(k)) return k;
  throw Error(ErrorCode::kInvalidArgument, "unknown task '" + std::string(name) + "'");
}

char task_tag(TaskKind kind) {
  switch (kind) {
    case TaskKind::kChainArith: return 'A';
    case TaskKind::kCopy: return 'C';
    case TaskKind::kReverse: return 'R';
    case TaskKind::kCount: return 'N';
  }
  return '?';
}

TaskSpec TaskSpec::defaults(TaskKind kind) {
  TaskSpec spec;
  spec.kind = kind;
  return spec;
}

void TaskSpec::validate() const {
  const bool ok = min_operands >= 2 && max_operands >= min_operands && max_operands <= 4 &&
                  min_digit >= 0 && max_digit >= min_digit && max_digit <= 9 && min_length >= 1 &&
                  max_length >= min_length && max_length <= 8;
  if (!ok) throw Error(ErrorCode::kInvalidArgument, std::string("invalid task spec for ") + task_name(kind));
}

Split split_of(std::span<const Token> prompt) {
  std::vector<std::uint8_t> bytes(prompt.begin(), prompt.end());
  return fnv1a64(bytes.data(), bytes.size()) % kEvalBuckets == 0 ? Split::kEval : Split::kTrain;
}

std::vector<Example> gen_examples(const TaskSpec& spec, std::size_t n, std::uint64_t seed, Split split) {
  spec.validate();
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "gen_examples needs n >= 1");
  Rng rng(derive_seed(seed, std::string(task_name(spec.kind)) + (split == Split::kEval ? "/eval" : "/train")));
  std::vector<Example> out;
  out.reserve(n);
  while (out.size() < n) {
    auto prompt = random_prompt(spec, rng);
    if (split_of(prompt) != split) continue;
    auto gold = gold_completion(prompt);
    out.push_back(Example{spec.kind, std::move(prompt), std::move(*gold)});
  }
  return out;
}

MixtureWeights default_mixture() {
  return {{TaskKind::kCopy, 0.3}, {TaskKind::kReverse, 0.3}, {TaskKind::kCount, 0.3}, {TaskKind::kChainArith, 0.1}};
}

std::vector<Example> gen_pretrain_mixture(const MixtureWeights& weights, std::size_t n_total,
                                          std::uint64_t seed, Split split) {
  double total = 0.0;
  for (const auto& [kind, w] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw Error(ErrorCode::kInvalidArgument, "mixture weights must be finite and non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kInvalidArgument, "mixture weights sum to zero");
  if (n_total == 0) throw Error(ErrorCode::kInvalidArgument, "mixture needs n_total >= 1");

  Rng rng(derive_seed(seed, "mixture"));
  std::vector<TaskKind> draws;
  draws.reserve(n_total);
  std::map<TaskKind, std::size_t> counts;
  for (std::size_t i = 0; i < n_total; ++i) {
    const double u = rng.uniform() * total;
    double cum = 0.0;
    TaskKind pick = weights.rbegin()->first;
    for (const auto& [kind, w] : weights) {
      if (w <= 0.0) continue;
      cum += w;
      pick = kind;
      if (u < cum) break;
    }
    draws.push_back(pick);
    ++counts[pick];
  }
  std::map<TaskKind, std::vector<Example>> pools;
  std::map<TaskKind, std::size_t> cursor;
  for (const auto& [kind, c] : counts)
    pools[kind] = gen_examples(TaskSpec::defaults(kind), c, derive_seed(seed, task_name(kind)), split);
  std::vector<Example> out;
  out.reserve(n_total);
  for (TaskKind k : draws) out.push_back(pools[k][cursor[k]++]);
  return out;
}

std::optional<TaskKind> task_of(std::span<const Token> prompt) {
  if (prompt.empty() || prompt.front() < 0 || prompt.front() >= V().size()) return std::nullopt;
  const char tag = V().symbol(prompt.front());
  for (TaskKind k : kAllTasks)
    if (task_tag(k) == tag) return k;
  return std::nullopt;
}

std::optional<std::vector<Token>> gold_completion(std::span<const Token> prompt) {
  auto kind = task_of(prompt);
  auto answer = gold_answer(prompt);
  if (!kind || !answer) return std::nullopt;
  std::vector<Token> gold;
  if (*kind == TaskKind::kChainArith) {
    auto ops = *parse_operands(prompt);
    int running = ops[0];
    for (std::size_t i = 1; i < ops.size(); ++i) {
      append(gold, digits_of(running));
      gold.push_back(V().id('+'));
      append(gold, digits_of(ops[i]));
      gold.push_back(V().id('='));
      running += ops[i];
      append(gold, digits_of(running));
      gold.push_back(V().id(';'));
    }
    gold.push_back(V().id('#'));
  }
  append(gold, *answer);
  gold.push_back(tok::kEos);
  return gold;
}

int verify_answer(std::span<const Token> prompt, std::span<const Token> completion) {
  auto kind = task_of(prompt);
  auto answer = gold_answer(prompt);
  if (!kind || !answer) return 0;
  auto begin = completion.begin();
  if (auto r = std::find(completion.rbegin(), completion.rend(), tok::kReset); r != completion.rend())
    begin = r.base();
  const auto end = std::find(begin, completion.end(), tok::kEos);
  std::span<const Token> body(begin, end);
  if (*kind == TaskKind::kChainArith) {
    const Token hash = V().id('#');
    auto h = std::find(body.rbegin(), body.rend(), hash);
    if (h == body.rend()) return 0;
    body = std::span<const Token>(h.base(), body.end());
  }
  return std::equal(body.begin(), body.end(), answer->begin(), answer->end()) ? 1 : 0;
}

std::vector<Token> expert_continuation(std::span<const Token> prompt, std::span<const Token> prefix) {
  auto gold = gold_completion(prompt);
  if (!gold) throw Error(ErrorCode::kInvalidArgument, "expert has no gold derivation for this prompt");
  auto start = prefix.begin();
  if (auto r = std::find(prefix.rbegin(), prefix.rend(), tok::kReset); r != prefix.rend()) start = r.base();
  std::span<const Token> effective(start, prefix.end());
  if (effective.size() < gold->size() &&
      std::equal(effective.begin(), effective.end(), gold->begin())) {
    return std::vector<Token>(gold->begin() + static_cast<std::ptrdiff_t>(effective.size()), gold->end());
  }
  if (effective.size() >= gold->size() && std::equal(gold->begin(), gold->end(), effective.begin()))
    return {tok::kEos};
  std::vector<Token> out{tok::kReset};
  append(out, *gold);
  return out;
}

EvalScore score_exact_match(const TokenPolicy& policy, const TaskSpec& spec, std::size_t n,
                            std::uint64_t seed) {
  const auto examples = gen_examples(spec, n, seed, Split::kEval);
  Rng unused(0);  // greedy decoding never draws
  std::size_t hits = 0;
  for (const auto& ex : examples) {
    auto traj = rollout(policy, ex.prompt, kMaxGeneration, Decoding::greedy(), unused);
    hits += static_cast<std::size_t>(verify_answer(ex.prompt, traj.actions));
  }
  return EvalScore{spec.kind, static_cast<double>(hits) / static_cast<double>(n), n};
}

void write_examples(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& ex : examples) {
    nlohmann::json j{{"task", task_name(ex.kind)}, {"prompt", V().decode(ex.prompt)}, {"gold", V().decode(ex.gold)}};
    f << j.dump() << '\n';
  }
}

std::vector<Example> read_examples(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back(Example{parse_task(j.at("task").get<std::string>()),
                            V().encode(j.at("prompt").get<std::string>()),
                            V().encode(j.at("gold").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace sslab
