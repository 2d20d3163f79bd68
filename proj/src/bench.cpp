// SPDX-License-Identifier: Apache-2.0
#include "addrtag/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "addrtag/io.hpp"
#include "addrtag/text.hpp"

namespace addrtag {

std::vector<std::size_t> default_batch_sizes() {
  std::vector<std::size_t> out;
  for (std::size_t b = 1; b <= 512; b *= 2) out.push_back(b);
  return out;
}

void BenchConfig::validate() const {
  if (batch_sizes.empty()) throw InvalidConfig("batch_sizes is empty");
  for (std::size_t i = 0; i < batch_sizes.size(); ++i) {
    if (batch_sizes[i] == 0) throw InvalidConfig("batch sizes must be positive");
    if (i > 0 && batch_sizes[i] <= batch_sizes[i - 1]) throw InvalidConfig("batch sizes must be strictly increasing");
  }
  if (repetitions < 1) throw InvalidConfig("repetitions must be >= 1");
  if (threads < 1) throw InvalidConfig("threads must be >= 1");
}

std::vector<std::string> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::split_whitespace(line).empty()) continue;
    out.push_back(line);
  }
  return out;
}

std::int64_t resident_bytes() {
  std::ifstream statm("/proc/self/statm");
  long long size = 0;
  long long resident = 0;
  if (!(statm >> size >> resident)) return 0;
  return static_cast<std::int64_t>(resident) * static_cast<std::int64_t>(sysconf(_SC_PAGESIZE));
}

namespace {

class RssSampler {
 public:
  RssSampler() : baseline_(resident_bytes()), peak_(baseline_) {
    worker_ = std::thread([this] {
      while (!stop_.load()) {
        sample();
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
    });
  }
  ~RssSampler() { finish(); }

  std::int64_t finish() {
    if (worker_.joinable()) {
      stop_.store(true);
      worker_.join();
      sample();
    }
    return std::max<std::int64_t>(0, peak_.load() - baseline_);
  }

 private:
  void sample() {
    const std::int64_t now = resident_bytes();
    std::int64_t prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
  }

  std::int64_t baseline_;
  std::atomic<std::int64_t> peak_;
  std::atomic<bool> stop_{false};
  std::thread worker_;
};

void check_consistent(const std::string& flavor, std::size_t batch_size, const std::vector<ParsedAddress>& ref,
                      const std::vector<ParsedAddress>& got) {
  const std::string where = flavor + " batch " + std::to_string(batch_size);
  if (ref.size() != got.size()) throw BatchInconsistency(where + ": result count differs");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref[i].tags != got[i].tags) throw BatchInconsistency(where + ": tags differ at address " + std::to_string(i));
    for (std::size_t k = 0; k < ref[i].probabilities.size(); ++k) {
      const double a = ref[i].probabilities[k];
      const double b = got[i].probabilities[k];
      if (std::abs(a - b) > 1e-5 * std::max(std::abs(a), std::abs(b))) {
        throw BatchInconsistency(where + ": probabilities differ at address " + std::to_string(i));
      }
    }
  }
}

}  // namespace

BenchReport run_benchmark(const BenchConfig& config, const std::vector<const AddressParser*>& parsers) {
  config.validate();
  const std::vector<std::string> corpus = config.corpus.empty() ? load_corpus(config.corpus_path) : config.corpus;
  if (corpus.empty()) throw CorpusEmpty();
  const std::size_t n = corpus.size();
  const std::vector<std::string> warm(corpus.begin(),
                                      corpus.begin() + static_cast<std::ptrdiff_t>(std::min(config.warmup, n)));
  BenchReport report;
  for (const AddressParser* parser : parsers) {
    const std::string flavor = parser->flavor();
    std::vector<ParsedAddress> reference;
    std::vector<BenchRow> rows;
    for (const std::size_t bs : config.batch_sizes) {
      const ParseOptions options{bs, config.threads};
      if (!warm.empty()) parser->parse(warm, options);
      std::vector<double> totals;
      std::int64_t peak = 0;
      for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
        RssSampler sampler;
        const auto start = std::chrono::steady_clock::now();
        std::vector<ParsedAddress> parsed = parser->parse(corpus, options);
        const auto stop = std::chrono::steady_clock::now();
        peak = std::max(peak, sampler.finish());
        totals.push_back(std::chrono::duration<double>(stop - start).count());
        if (rep == 0) {
          if (reference.empty()) {
            reference = std::move(parsed);
          } else {
            check_consistent(flavor, bs, reference, parsed);
          }
        }
      }
      std::sort(totals.begin(), totals.end());
      BenchRow row;
      row.flavor = flavor;
      row.batch_size = bs;
      row.address_count = n;
      row.total_seconds = totals[totals.size() / 2];
      row.mean_seconds_per_address = row.total_seconds / static_cast<double>(n);
      row.peak_ram_delta_bytes = peak;
      row.threads = config.threads;
      rows.push_back(row);
    }
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  return report;
}

BenchReport run_benchmark(const BenchConfig& config) {
  config.validate();
  std::vector<AddressParser> loaded;
  loaded.reserve(config.models.size());
  for (const auto& path : config.models) {
    try {
      loaded.push_back(load_checkpoint(path));
    } catch (const Error& e) {
      throw ModelLoadFailure(path.string(), e.what());
    }
  }
  std::vector<const AddressParser*> ptrs;
  for (const auto& p : loaded) ptrs.push_back(&p);
  return run_benchmark(config, ptrs);
}

// ---- rendering ----------------------------------------------------------------

namespace {

std::string exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

const char* kCsvHeader = "flavor,batch_size,address_count,total_seconds,mean_seconds_per_address,peak_ram_delta_bytes,threads";

}  // namespace

std::string render_report(const BenchReport& report, ReportFormat format) {
  if (report.rows.empty()) throw EmptyInput();
  if (format == ReportFormat::csv) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : report.rows) {
      out += r.flavor + "," + std::to_string(r.batch_size) + "," + std::to_string(r.address_count) + "," +
             exact(r.total_seconds) + "," + exact(r.mean_seconds_per_address) + "," +
             std::to_string(r.peak_ram_delta_bytes) + "," + std::to_string(r.threads) + "\n";
    }
    return out;
  }

  struct Summary {
    std::int64_t ram = 0;
    std::optional<double> unbatched;
    double best = 0.0;
    std::size_t best_batch = 0;
    std::size_t n = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Summary> by_flavor;
  for (const auto& r : report.rows) {
    auto [it, fresh] = by_flavor.try_emplace(r.flavor);
    if (fresh) order.push_back(r.flavor);
    Summary& s = it->second;
    s.ram = std::max(s.ram, r.peak_ram_delta_bytes);
    s.n = r.address_count;
    if (r.batch_size == 1) s.unbatched = r.mean_seconds_per_address;
    if (s.best_batch == 0 || r.mean_seconds_per_address < s.best) {
      s.best = r.mean_seconds_per_address;
      s.best_batch = r.batch_size;
    }
  }
  const std::vector<std::string> head = {"flavor", "RAM (MiB)", "not batched (s/addr)", "batched (s/addr)",
                                         "best batch", "addresses"};
  std::vector<std::vector<std::string>> cells = {head};
  for (const auto& f : order) {
    const Summary& s = by_flavor[f];
    cells.push_back({f, fixed(static_cast<double>(s.ram) / (1024.0 * 1024.0), 1),
                     s.unbatched ? fixed(*s.unbatched, 6) : std::string("n/a"), fixed(s.best, 6),
                     std::to_string(s.best_batch), std::to_string(s.n)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c > 0) out += "  ";
      const std::string& v = cells[r][c];
      const std::string pad(width[c] - v.size(), ' ');
      out += c == 0 ? v + pad : pad + v;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (const auto w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    }
  }
  return out;
}

BenchReport parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  BenchReport report;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kCsvHeader) throw ParseError(1, "unexpected CSV header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw ParseError(line_no, "expected 7 fields");
    const auto num = [&](const std::string& s, auto& out) {
      const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError(line_no, "bad number: " + s);
    };
    BenchRow r;
    r.flavor = f[0];
    num(f[1], r.batch_size);
    num(f[2], r.address_count);
    num(f[3], r.total_seconds);
    num(f[4], r.mean_seconds_per_address);
    num(f[5], r.peak_ram_delta_bytes);
    num(f[6], r.threads);
    report.rows.push_back(r);
  }
  if (line_no == 0) throw ParseError(1, "empty CSV");
  return report;
}

}  // namespace addrtag
