#include "steersig/vocab.hpp"

#include <charconv>
#include <cstdio>

#include "steersig/error.hpp"
#include "steersig/hashing.hpp"

namespace steersig {

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string token_symbol(TokenId id) {
  if (id >= 32 && id <= 126) return std::string(1, static_cast<char>(id));
  char buf[32];
  if (id < 256) {
    std::snprintf(buf, sizeof buf, "<0x%02X>", static_cast<unsigned>(id));
  } else {
    std::snprintf(buf, sizeof buf, "<id:%u>", static_cast<unsigned>(id));
  }
  return buf;
}

std::string decode_tokens(std::span<const TokenId> tokens) {
  std::string out;
  for (TokenId id : tokens) out += token_symbol(id);
  return out;
}

std::vector<TokenId> encode_text(std::string_view text, std::size_t vocab_size) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) {
    if (c >= vocab_size) {
      throw InvalidArgument("byte " + std::to_string(c) + " does not fit a vocabulary of size " +
                            std::to_string(vocab_size));
    }
    ids.push_back(c);
  }
  return ids;
}

TokenId symbol_token(std::string_view symbol) {
  if (symbol.size() == 1) {
    const auto c = static_cast<unsigned char>(symbol[0]);
    if (c >= 32 && c <= 126) return c;
  }
  unsigned value = 0;
  auto parse = [&](std::string_view digits, int base) {
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value, base);
    return ec == std::errc() && ptr == digits.data() + digits.size();
  };
  if (symbol.starts_with("<0x") && symbol.ends_with(">") && symbol.size() == 6 &&
      parse(symbol.substr(3, 2), 16)) {
    return value;
  }
  if (symbol.starts_with("<id:") && symbol.ends_with(">") &&
      parse(symbol.substr(4, symbol.size() - 5), 10)) {
    return value;
  }
  throw InvalidArgument("unknown token symbol '" + std::string(symbol) + "'");
}

}  // namespace steersig
