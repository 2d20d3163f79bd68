// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "addrtag/core.hpp"
#include "addrtag/embed.hpp"

namespace addrtag {

/// Template grammar over the eight non-EOS default tags. Addresses come out
/// mixed-case with commas, so the default preprocessor has real work to do;
/// gold tags line up with the preprocessed tokens.
struct SynthConfig {
  std::uint64_t seed = 42;
  double unit_rate = 0.25;
  double orientation_rate = 0.2;
  double general_delivery_rate = 0.08;
  /// Fraction of addresses whose postal-code segment is dropped.
  double missing_postal_rate = 0.0;
};

std::vector<DatasetRecord> synth_records(std::size_t n, const SynthConfig& config = {});
std::vector<std::string> synth_addresses(std::size_t n, const SynthConfig& config = {});

/// Whitespace-joined random tokens, both lexicon words and junk strings,
/// with a uniform token count in [min_tokens, max_tokens].
std::vector<std::string> random_addresses(std::size_t n, std::size_t min_tokens, std::size_t max_tokens,
                                          std::uint64_t seed);

/// Word vectors for every lexicon token the grammar can emit, clustered by
/// word category so that words of one kind lie near each other.
VectorTable synth_vector_table(std::size_t dim, std::uint64_t seed = 42);

/// Token frequencies of preprocessed addresses, the input learn_bpe expects.
std::map<std::string, std::size_t> token_counts(const std::vector<std::string>& addresses);

}  // namespace addrtag
