// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace addrtag::text {

/// Splits UTF-8 into code-point substrings. Invalid bytes come out as
/// single-byte pieces so the concatenation always equals the input.
std::vector<std::string> split_code_points(std::string_view s);

/// Simple case folding for ASCII, Latin-1, Latin Extended-A, Greek and
/// Cyrillic capitals. Other code points pass through unchanged.
std::string to_lower(std::string_view s);

bool is_space(char c);

/// Maximal runs of non-whitespace bytes.
std::vector<std::string> split_whitespace(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace addrtag::text
