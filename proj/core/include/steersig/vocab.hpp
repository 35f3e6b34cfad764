#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steersig/model.hpp"

namespace steersig {

// Byte-level vocabulary: ids 32..126 print as their ASCII character, other
// ids below 256 as <0xNN>, and anything larger as <id:N>.
std::string token_symbol(TokenId id);

std::string decode_tokens(std::span<const TokenId> tokens);

// Maps each byte of text to its id. Throws InvalidArgument when a byte does
// not fit in a vocabulary of the given size.
std::vector<TokenId> encode_text(std::string_view text, std::size_t vocab_size);

// Inverse of token_symbol. Throws InvalidArgument for unknown symbols.
TokenId symbol_token(std::string_view symbol);

}  // namespace steersig
