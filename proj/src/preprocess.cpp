// SPDX-License-Identifier: Apache-2.0
#include "addrtag/preprocess.hpp"

#include "addrtag/text.hpp"

namespace addrtag {
namespace {

std::string strip_commas(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
    if (c != ',') out.push_back(c);
  }
  return out;
}

std::string collapse_whitespace(std::string_view s) {
  return text::join(text::split_whitespace(s), " ");
}

}  // namespace

Preprocessor::Step Preprocessor::builtin(const std::string& name) {
  if (name == "lowercase") return [](std::string_view s) { return text::to_lower(s); };
  if (name == "strip_commas") return strip_commas;
  if (name == "collapse_whitespace") return collapse_whitespace;
  throw InvalidConfig("unknown preprocessing step: " + name);
}

Preprocessor Preprocessor::default_pipeline() {
  return from_names({"strip_commas", "collapse_whitespace", "lowercase"});
}

Preprocessor Preprocessor::from_names(const std::vector<std::string>& names) {
  Preprocessor p;
  for (const auto& name : names) p.add(name, builtin(name));
  return p;
}

Preprocessor& Preprocessor::add(std::string name, Step step) {
  steps_.push_back({std::move(name), std::move(step)});
  return *this;
}

std::string Preprocessor::apply(std::string_view raw) const {
  std::string current(raw);
  for (const auto& step : steps_) current = step.fn(current);
  return current;
}

TokenizedAddress Preprocessor::prepare(std::string_view raw) const {
  TokenizedAddress address = tokenize(apply(raw));
  address.raw = std::string(raw);
  return address;
}

std::vector<std::string> Preprocessor::step_names() const {
  std::vector<std::string> names;
  names.reserve(steps_.size());
  for (const auto& step : steps_) names.push_back(step.name);
  return names;
}

std::string default_preprocess(std::string_view raw) {
  return text::to_lower(collapse_whitespace(strip_commas(raw)));
}

TokenizedAddress tokenize(std::string_view cleaned) {
  TokenizedAddress address;
  address.raw = std::string(cleaned);
  address.tokens = text::split_whitespace(cleaned);
  if (address.tokens.empty()) throw EmptyAddress();
  address.cleaned = text::join(address.tokens, " ");
  return address;
}

}  // namespace addrtag
