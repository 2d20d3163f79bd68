// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "addrtag/core.hpp"

namespace addrtag {

/// Ordered text->text cleaning steps. Each step carries a name so a model
/// checkpoint can record which pipeline it was trained with.
class Preprocessor {
 public:
  using Step = std::function<std::string(std::string_view)>;

  struct NamedStep {
    std::string name;
    Step fn;
  };

  Preprocessor() = default;
  explicit Preprocessor(std::vector<NamedStep> steps) : steps_(std::move(steps)) {}

  /// strip_commas, collapse_whitespace, lowercase.
  static Preprocessor default_pipeline();

  /// Rebuilds a pipeline from built-in step names; throws InvalidConfig on an
  /// unknown name.
  static Preprocessor from_names(const std::vector<std::string>& names);

  /// Built-in steps by name: lowercase, strip_commas, collapse_whitespace.
  static Step builtin(const std::string& name);

  Preprocessor& add(std::string name, Step step);

  std::string apply(std::string_view raw) const;

  /// apply + tokenize; throws EmptyAddress when nothing remains.
  TokenizedAddress prepare(std::string_view raw) const;

  std::vector<std::string> step_names() const;
  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<NamedStep> steps_;
};

/// Drop commas, collapse whitespace runs to one space, trim, lowercase.
std::string default_preprocess(std::string_view raw);

/// Whitespace split; throws EmptyAddress when there are no tokens.
TokenizedAddress tokenize(std::string_view cleaned);

}  // namespace addrtag
