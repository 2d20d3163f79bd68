// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "addrtag/tagger.hpp"

namespace addrtag {

std::vector<std::size_t> default_batch_sizes();

struct BenchConfig {
  /// One address per line; ignored when `corpus` is non-empty.
  std::filesystem::path corpus_path;
  std::vector<std::string> corpus;
  /// Checkpoints to load; each contributes one flavor.
  std::vector<std::filesystem::path> models;
  std::vector<std::size_t> batch_sizes = default_batch_sizes();
  /// The median repetition is reported.
  std::size_t repetitions = 3;
  /// Addresses parsed before each measured run.
  std::size_t warmup = 100;
  /// Parser threads inside the timed region.
  std::size_t threads = 1;

  /// Throws InvalidConfig.
  void validate() const;
};

struct BenchRow {
  std::string flavor;
  std::size_t batch_size = 0;
  std::size_t address_count = 0;
  double total_seconds = 0.0;
  double mean_seconds_per_address = 0.0;
  std::int64_t peak_ram_delta_bytes = 0;
  std::size_t threads = 1;

  bool operator==(const BenchRow&) const = default;
};

struct BenchReport {
  std::vector<BenchRow> rows;

  bool operator==(const BenchReport&) const = default;
};

/// Blank lines are skipped.
std::vector<std::string> load_corpus(const std::filesystem::path& path);

/// Loads every checkpoint (ModelLoadFailure) and benchmarks it.
BenchReport run_benchmark(const BenchConfig& config);

/// Benchmarks already-loaded parsers. For each parser and batch size: warm
/// up, then time `repetitions` full passes over the corpus while sampling
/// resident memory every 10 ms. Before any row is reported, every batch
/// size's outputs are checked against batch size 1 (or the smallest size):
/// identical tags, probabilities within 1e-5 relative, else
/// BatchInconsistency.
BenchReport run_benchmark(const BenchConfig& config, const std::vector<const AddressParser*>& parsers);

enum class ReportFormat { table, csv };

/// The table has one row per flavor: peak RAM, batch-1 mean time and the
/// best batched mean time. The CSV holds every measured row. Throws
/// EmptyInput for an empty report.
std::string render_report(const BenchReport& report, ReportFormat format);

/// Inverse of render_report(..., csv).
BenchReport parse_report_csv(const std::string& text);

/// Current resident set size in bytes (Linux /proc), 0 where unavailable.
std::int64_t resident_bytes();

}  // namespace addrtag
