#pragma once

// Synthetic tasks with verifiable answers. The target task is step-by-step
// chained addition; copy, reverse and count serve as retention tasks.
//
// Prompt formats (one char per token):
//   chain_arith  A3+5+2=    gold 3+5=8;8+2=10;#10$
//   copy         Cabc>      gold abc$
//   reverse      Rabc>      gold cba$
//   count        Nabcd>     gold 4$

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sslab/policy.hpp"
#include "sslab/vocab.hpp"

namespace sslab {

enum class TaskKind { kChainArith, kCopy, kReverse, kCount };

inline constexpr std::array<TaskKind, 4> kAllTasks = {TaskKind::kChainArith, TaskKind::kCopy,
                                                      TaskKind::kReverse, TaskKind::kCount};
inline constexpr std::array<TaskKind, 3> kRetentionTasks = {TaskKind::kCopy, TaskKind::kReverse,
                                                            TaskKind::kCount};
inline constexpr TaskKind kTargetTask = TaskKind::kChainArith;

// Longest completion any task needs, EOS included.
inline constexpr std::size_t kMaxGeneration = 32;

const char* task_name(TaskKind kind);
TaskKind parse_task(std::string_view name);
char task_tag(TaskKind kind);

enum class Split { kTrain, kEval };

struct TaskSpec {
  TaskKind kind = TaskKind::kChainArith;
  int min_operands = 2;
  int max_operands = 4;
  int min_digit = 0;
  int max_digit = 9;
  int min_length = 3;  // string tasks
  int max_length = 8;

  static TaskSpec defaults(TaskKind kind);
  void validate() const;
};

struct Example {
  TaskKind kind;
  std::vector<Token> prompt;
  std::vector<Token> gold;  // ends with EOS
};

// Which split a prompt belongs to. Decided by a hash of the prompt, so train
// and eval prompt sets never intersect.
Split split_of(std::span<const Token> prompt);

std::vector<Example> gen_examples(const TaskSpec& spec, std::size_t n, std::uint64_t seed,
                                  Split split = Split::kTrain);

using MixtureWeights = std::map<TaskKind, double>;
MixtureWeights default_mixture();

std::vector<Example> gen_pretrain_mixture(const MixtureWeights& weights, std::size_t n_total,
                                          std::uint64_t seed, Split split = Split::kTrain);

std::optional<TaskKind> task_of(std::span<const Token> prompt);

// Full gold completion (EOS-terminated) for a well-formed prompt.
std::optional<std::vector<Token>> gold_completion(std::span<const Token> prompt);

// Total: malformed prompts or completions score 0.
int verify_answer(std::span<const Token> prompt, std::span<const Token> completion);

// Recovery oracle: the gold remainder when `prefix` is still on the gold
// derivation, otherwise RESET followed by the full gold completion.
std::vector<Token> expert_continuation(std::span<const Token> prompt, std::span<const Token> prefix);

struct EvalScore {
  TaskKind kind;
  double score = 0.0;
  std::size_t n = 0;
};

EvalScore score_exact_match(const TokenPolicy& policy, const TaskSpec& spec, std::size_t n,
                            std::uint64_t seed);

void write_examples(const std::filesystem::path& path, std::span<const Example> examples);
std::vector<Example> read_examples(const std::filesystem::path& path);

}  // namespace sslab
