// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "addrtag/bench.hpp"
#include "addrtag/io.hpp"
#include "fixtures.hpp"

using namespace addrtag;
using namespace fixtures;

namespace {

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

BenchConfig small_config() {
  BenchConfig c;
  c.corpus = synth_addresses(60);
  c.batch_sizes = {1, 4, 32};
  c.repetitions = 3;
  c.warmup = 10;
  return c;
}

}  // namespace

TEST_CASE("bench defaults") {
  CHECK(default_batch_sizes() == std::vector<std::size_t>{1, 2, 4, 8, 16, 32, 64, 128, 256, 512});
  const BenchConfig c;
  CHECK(c.repetitions == 3);
  CHECK(c.warmup == 100);
  CHECK(c.threads == 1);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("bench config validation") {
  BenchConfig c;
  c.batch_sizes = {1, 4, 4};
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c.batch_sizes = {0, 4};
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c.batch_sizes = {};
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c = BenchConfig{};
  c.repetitions = 0;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
}

TEST_CASE("mean time arithmetic") {
  BenchRow r;
  r.address_count = 1000;
  r.total_seconds = 2.6;
  r.mean_seconds_per_address = r.total_seconds / 1000.0;
  CHECK(r.mean_seconds_per_address == doctest::Approx(0.0026).epsilon(1e-12));
}

TEST_CASE("run_benchmark over every flavor") {
  std::vector<AddressParser> parsers;
  for (int f = 0; f < 4; ++f) parsers.push_back(any_parser(f));
  std::vector<const AddressParser*> ptrs;
  for (const auto& p : parsers) ptrs.push_back(&p);
  const BenchConfig c = small_config();
  const BenchReport r = run_benchmark(c, ptrs);
  REQUIRE(r.rows.size() == 12);
  for (const auto& row : r.rows) {
    CHECK(row.address_count == 60);
    CHECK(row.total_seconds > 0.0);
    CHECK(row.mean_seconds_per_address > 0.0);
    CHECK(std::abs(row.mean_seconds_per_address * 60.0 - row.total_seconds) <= 1e-9 * row.total_seconds);
    CHECK(row.peak_ram_delta_bytes >= 0);
  }
  CHECK(r.rows[0].flavor == "vector");
  CHECK(r.rows[11].flavor == "subword-attention");
  CHECK(r.rows[2].batch_size == 32);

  const std::string table = render_report(r, ReportFormat::table);
  CHECK(count_lines(table) == 2 + 4);
  CHECK(table.find("not batched") != std::string::npos);
  CHECK(parse_report_csv(render_report(r, ReportFormat::csv)) == r);

  BenchConfig empty = c;
  empty.corpus = {};
  empty.corpus_path = std::filesystem::temp_directory_path() / "addrtag_bench_empty.txt";
  { std::ofstream out(empty.corpus_path); out << "\n\n"; }
  CHECK_THROWS_AS(run_benchmark(empty, ptrs), CorpusEmpty);
  std::filesystem::remove(empty.corpus_path);
}

TEST_CASE("run_benchmark loads checkpoints from disk") {
  const auto path = std::filesystem::temp_directory_path() / "addrtag_bench_model.ckpt";
  save_checkpoint(vector_parser(true), path);
  BenchConfig c = small_config();
  c.models = {path};
  c.batch_sizes = {1, 8};
  const BenchReport r = run_benchmark(c);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].flavor == "vector-attention");
  c.models = {std::filesystem::temp_directory_path() / "addrtag_no_such_model.ckpt"};
  CHECK_THROWS_AS(run_benchmark(c), ModelLoadFailure);
  std::filesystem::remove(path);
}

TEST_CASE("report rendering") {
  BenchReport r;
  CHECK_THROWS_AS(render_report(r, ReportFormat::table), EmptyInput);
  CHECK_THROWS_AS(render_report(r, ReportFormat::csv), EmptyInput);
  r.rows.push_back({"vector", 1, 10, 0.1, 0.01, 1 << 20, 1});
  r.rows.push_back({"vector", 64, 10, 0.01, 0.001, 2 << 20, 1});
  const std::string table = render_report(r, ReportFormat::table);
  CHECK(count_lines(table) == 3);
  CHECK(table.find("0.010000") != std::string::npos);
  CHECK(table.find("0.001000") != std::string::npos);
  CHECK(table.find("2.0") != std::string::npos);
  CHECK_THROWS_AS(parse_report_csv("bogus\n"), ParseError);
}

TEST_CASE("property: CSV round trip") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    BenchReport r;
    const std::size_t n = 1 + rng.below(8);
    for (std::size_t i = 0; i < n; ++i) {
      BenchRow row;
      row.flavor = i % 2 ? "subword" : "vector-attention";
      row.batch_size = 1 + rng.below(512);
      row.address_count = 1 + rng.below(100000);
      row.total_seconds = rng.uniform(1e-6, 1e3);
      row.mean_seconds_per_address = row.total_seconds / static_cast<double>(row.address_count);
      row.peak_ram_delta_bytes = static_cast<std::int64_t>(rng.below(1u << 30));
      row.threads = 1 + rng.below(4);
      r.rows.push_back(row);
    }
    CHECK(parse_report_csv(render_report(r, ReportFormat::csv)) == r);
  }
}

TEST_CASE("resident set size is measurable") { CHECK(resident_bytes() > 0); }
