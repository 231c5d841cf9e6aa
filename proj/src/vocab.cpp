#include "sslab/vocab.hpp"

#include "sslab/error.hpp"

namespace sslab {

namespace {
// PAD BOS EOS SEP RESET, digits, operators, task tags, letters.
constexpr std::string_view kStandardSymbols =
    "_^$>!0123456789+=;#ACRNabcdefghijklmnopq";
}  // namespace

const Vocab& Vocab::standard() {
  static const Vocab vocab(kStandardSymbols);
  return vocab;
}

Vocab::Vocab(std::string_view symbols) : symbols_(symbols) {
  if (symbols_.size() <= static_cast<std::size_t>(tok::kReset))
    throw Error(ErrorCode::kInvalidArgument, "vocabulary must cover the reserved ids");
  lookup_.fill(-1);
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    auto& slot = lookup_[static_cast<unsigned char>(symbols_[i])];
    if (slot != -1)
      throw Error(ErrorCode::kInvalidArgument,
                  std::string("duplicate vocabulary symbol '") + symbols_[i] + "'");
    slot = static_cast<Token>(i);
  }
}

char Vocab::symbol(Token id) const {
  if (id < 0 || id >= size())
    throw Error(ErrorCode::kInvalidToken, "token id " + std::to_string(id) + " out of range");
  return symbols_[static_cast<std::size_t>(id)];
}

Token Vocab::id(char symbol) const {
  const Token t = lookup_[static_cast<unsigned char>(symbol)];
  if (t < 0)
    throw Error(ErrorCode::kInvalidToken, std::string("unknown symbol '") + symbol + "'");
  return t;
}

bool Vocab::contains(char symbol) const {
  return lookup_[static_cast<unsigned char>(symbol)] >= 0;
}

std::vector<Token> Vocab::encode(std::string_view text) const {
  std::vector<Token> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(id(c));
  return out;
}

std::string Vocab::decode(std::span<const Token> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (Token t : ids) out.push_back(symbol(t));
  return out;
}

}  // namespace sslab
