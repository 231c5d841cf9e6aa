#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sslab {

using Token = std::int32_t;

// Reserved ids, shared by every model shape (including tiny probe vocabularies).
namespace tok {
inline constexpr Token kPad = 0;
inline constexpr Token kBos = 1;
inline constexpr Token kEos = 2;
inline constexpr Token kSep = 3;
inline constexpr Token kReset = 4;
}  // namespace tok

// Fixed single-character symbol alphabet. Every symbol is one char so that
// token sequences serialize as space-free strings.
class Vocab {
 public:
  static const Vocab& standard();

  explicit Vocab(std::string_view symbols);

  int size() const { return static_cast<int>(symbols_.size()); }
  char symbol(Token id) const;
  Token id(char symbol) const;
  bool contains(char symbol) const;

  std::vector<Token> encode(std::string_view text) const;
  std::string decode(std::span<const Token> ids) const;

 private:
  std::string symbols_;
  std::array<Token, 256> lookup_{};
};

}  // namespace sslab
