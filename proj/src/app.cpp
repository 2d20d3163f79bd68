// SPDX-License-Identifier: Apache-2.0
#include "addrtag/app.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "addrtag/bench.hpp"
#include "addrtag/bpe.hpp"
#include "addrtag/io.hpp"
#include "addrtag/synth.hpp"
#include "addrtag/text.hpp"
#include "addrtag/train.hpp"

namespace addrtag {

using json = nlohmann::json;

namespace {

/// nullopt marks an address with no tokens after preprocessing.
std::vector<std::optional<ParsedAddress>> parse_items(const AddressParser& parser,
                                                      const std::vector<std::string>& addresses,
                                                      const ParseOptions& options) {
  std::vector<TokenizedAddress> prepared;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < addresses.size(); ++i) {
    try {
      prepared.push_back(parser.preprocessor().prepare(addresses[i]));
      where.push_back(i);
    } catch (const EmptyAddress&) {
    }
  }
  std::vector<std::optional<ParsedAddress>> out(addresses.size());
  if (prepared.empty()) return out;
  std::vector<ParsedAddress> parsed = parser.parse_tokenized(prepared, options);
  for (std::size_t k = 0; k < parsed.size(); ++k) out[where[k]] = std::move(parsed[k]);
  return out;
}

json item_json(const std::optional<ParsedAddress>& item) {
  if (!item) return json{{"error", "empty_address"}};
  return json{{"tokens", item->tokens}, {"tags", item->tags}, {"probabilities", item->probabilities}};
}

HttpReply error_reply(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

}  // namespace

// ---- service -------------------------------------------------------------------

void ParseService::Slots::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return free_ > 0; });
  --free_;
}

void ParseService::Slots::release() {
  {
    std::lock_guard lock(mu_);
    ++free_;
  }
  cv_.notify_one();
}

ParseService::ParseService(ServiceConfig config)
    : config_(config), slots_(std::max<std::size_t>(config.max_concurrent_batches, 1)) {
  if (config_.max_addresses == 0) throw InvalidConfig("max_addresses must be >= 1");
  if (config_.batch_size == 0) throw InvalidConfig("batch_size must be >= 1");
}

void ParseService::load(AddressParser parser) {
  if (ready_.load()) throw InvalidConfig("service already has a model");
  parser_ = std::make_shared<const AddressParser>(std::move(parser));
  ready_.store(true, std::memory_order_release);
}

bool ParseService::ready() const { return ready_.load(std::memory_order_acquire); }

std::string parse_response_json(const AddressParser& parser, const std::vector<std::string>& addresses,
                                std::size_t batch_size) {
  json results = json::array();
  for (const auto& item : parse_items(parser, addresses, ParseOptions{batch_size, 1})) {
    results.push_back(item_json(item));
  }
  return json{{"results", std::move(results)}}.dump();
}

HttpReply ParseService::health() const {
  if (!ready()) return {503, json{{"status", "loading"}}.dump()};
  return {200, json{{"status", "ok"}, {"model", parser_->flavor()}}.dump()};
}

HttpReply ParseService::parse(const std::string& body) const {
  if (!ready()) return error_reply(503, "model not loaded");
  const json request = json::parse(body, nullptr, false);
  if (request.is_discarded() || !request.is_object()) return error_reply(400, "body must be a JSON object");
  const auto it = request.find("addresses");
  if (it == request.end() || !it->is_array()) return error_reply(400, "\"addresses\" must be a list");
  if (it->empty()) return error_reply(400, "\"addresses\" is empty");
  if (it->size() > config_.max_addresses) {
    return error_reply(413, "at most " + std::to_string(config_.max_addresses) + " addresses per request");
  }
  if (const auto m = request.find("model"); m != request.end()) {
    if (!m->is_string() || m->get<std::string>() != parser_->flavor()) return error_reply(400, "unknown model");
  }
  std::vector<std::string> addresses;
  addresses.reserve(it->size());
  for (const auto& a : *it) {
    if (!a.is_string()) return error_reply(400, "every address must be a string");
    addresses.push_back(a.get<std::string>());
  }
  slots_.acquire();
  try {
    HttpReply reply{200, parse_response_json(*parser_, addresses, config_.batch_size)};
    slots_.release();
    return reply;
  } catch (...) {
    slots_.release();
    throw;
  }
}

HttpReply ParseService::handle(const std::string& method, const std::string& path, const std::string& body) const {
  if (path == "/health") {
    if (method != "GET") return error_reply(405, "method not allowed");
    return health();
  }
  if (path == "/parse") {
    if (method != "POST") return error_reply(405, "method not allowed");
    try {
      return parse(body);
    } catch (const Error& e) {
      return error_reply(400, e.what());
    } catch (const std::exception& e) {
      return error_reply(500, e.what());
    }
  }
  return error_reply(404, "not found");
}

// ---- HTTP server -------------------------------------------------------------

HttpServer::HttpServer(const ParseService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  const auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const HttpReply reply = service_.handle(req.method, req.path, req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  };
  server_->Get("/health", route);
  server_->Post("/parse", route);
  server_->Get(".*", route);
  server_->Post(".*", route);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void HttpServer::run(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  port_ = port;
  server_->listen_after_bind();
}

void HttpServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

// ---- CLI -----------------------------------------------------------------------

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::split_whitespace(line).empty()) continue;
    out.push_back(line);
  }
  return out;
}

std::string model_path_or_env(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("ADDRTAG_MODEL"); env != nullptr && *env != '\0') return env;
  throw UsageError("--model is required (or set ADDRTAG_MODEL)");
}

TagVocabulary read_tags(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tags file " + path);
  std::vector<std::string> names;
  for (const auto& line : read_lines(in)) {
    const auto words = text::split_whitespace(line);
    if (words.size() != 1) throw ParseError(names.size() + 1, "one tag per line");
    names.push_back(words[0]);
  }
  return TagVocabulary(std::move(names));
}

void write_output(const std::string& path, const std::string& contents, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << contents;
  } else {
    write_file_atomic(path, contents);
  }
}

bool on_off(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw UsageError("expected on or off, got " + v);
}

struct ModelSizes {
  std::optional<std::size_t> encoder_hidden;
  std::optional<std::size_t> decoder_hidden;
  std::optional<std::size_t> tag_embedding;
  std::string attention;
  std::optional<std::size_t> attention_size;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--encoder-hidden", encoder_hidden, "Encoder LSTM hidden size");
    cmd->add_option("--decoder-hidden", decoder_hidden, "Decoder LSTM hidden size");
    cmd->add_option("--tag-embedding", tag_embedding, "Tag embedding size");
    cmd->add_option("--attention", attention, "Additive attention: on or off");
    cmd->add_option("--attention-size", attention_size, "Attention projection size");
  }
  bool any() const {
    return encoder_hidden || decoder_hidden || tag_embedding || !attention.empty() || attention_size;
  }
  Seq2SeqOverrides overrides() const {
    Seq2SeqOverrides o;
    o.encoder_hidden_size = encoder_hidden;
    o.decoder_hidden_size = decoder_hidden;
    o.tag_embedding_size = tag_embedding;
    if (!attention.empty()) o.attention = on_off(attention);
    o.attention_size = attention_size;
    return o;
  }
};

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ShapeMismatch*>(&e) != nullptr || dynamic_cast<const NotScalarLoss*>(&e) != nullptr ||
      dynamic_cast<const IndexOutOfRange*>(&e) != nullptr ||
      dynamic_cast<const BatchInconsistency*>(&e) != nullptr) {
    return 2;
  }
  return dynamic_cast<const Error*>(&e) != nullptr ? 1 : 2;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural address tagging: parse, retrain, benchmark and serve", "addrtag"};
  app.require_subcommand(1);

  std::string model_flag;
  std::size_t batch_size = 32;
  std::size_t threads = 1;

  // parse
  auto* parse_cmd = app.add_subcommand("parse", "Tag addresses, one per input line");
  std::string parse_input = "-";
  std::string parse_output = "-";
  std::string parse_format = "json";
  parse_cmd->add_option("--model", model_flag, "Checkpoint (default: $ADDRTAG_MODEL)");
  parse_cmd->add_option("--batch-size", batch_size, "Addresses per batch")->check(CLI::PositiveNumber);
  parse_cmd->add_option("--threads", threads, "Parser threads")->check(CLI::PositiveNumber);
  parse_cmd->add_option("--input", parse_input, "Input file or - for stdin");
  parse_cmd->add_option("--output", parse_output, "Output file or - for stdout");
  parse_cmd->add_option("--format", parse_format, "json (one object per line) or tsv")
      ->check(CLI::IsMember({"json", "tsv"}));

  // retrain
  auto* retrain_cmd = app.add_subcommand("retrain", "Fine-tune or rebuild a model on a dataset");
  TrainingConfig tc;
  std::string dataset_path;
  std::string tags_path;
  std::string retrain_out;
  std::string retrain_report;
  std::string best_path;
  ModelSizes retrain_sizes;
  retrain_cmd->add_option("--model", model_flag, "Starting checkpoint (default: $ADDRTAG_MODEL)");
  retrain_cmd->add_option("--dataset", dataset_path, "JSON-lines dataset")->required();
  retrain_cmd->add_option("--train-ratio", tc.train_ratio, "Training share of the dataset");
  retrain_cmd->add_option("--epochs", tc.epochs, "Training epochs");
  retrain_cmd->add_option("--batch-size", tc.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
  retrain_cmd->add_option("--learning-rate", tc.learning_rate, "Adam learning rate");
  retrain_cmd->add_option("--teacher-forcing", tc.teacher_forcing_ratio, "Teacher forcing probability");
  retrain_cmd->add_option("--seed", tc.seed, "Shuffle, split and init seed");
  retrain_cmd->add_option("--tags", tags_path, "New tag vocabulary, one tag per line");
  retrain_cmd->add_flag("--train-with-eos", tc.train_with_eos, "Append a gold EOS step");
  retrain_cmd->add_option("--best", best_path, "Also keep the best-eval checkpoint here");
  retrain_cmd->add_option("--out", retrain_out, "Output checkpoint")->required();
  retrain_cmd->add_option("--report", retrain_report, "Write the epoch report (JSON lines) here");
  retrain_sizes.add_to(retrain_cmd);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Time parsing across batch sizes");
  BenchConfig bc;
  std::string bench_corpus;
  std::vector<std::string> bench_models;
  std::string bench_report;
  bench_cmd->add_option("--corpus", bench_corpus, "Addresses, one per line")->required();
  bench_cmd->add_option("--models", bench_models, "Comma separated checkpoints")->required()->delimiter(',');
  bench_cmd->add_option("--batch-sizes", bc.batch_sizes, "Comma separated batch sizes")->delimiter(',');
  bench_cmd->add_option("--repetitions", bc.repetitions, "Timed passes per batch size (median reported)");
  bench_cmd->add_option("--warmup", bc.warmup, "Warmup addresses");
  bench_cmd->add_option("--threads", bc.threads, "Parser threads in the timed region");
  bench_cmd->add_option("--report", bench_report, "CSV report path")->required();

  // bpe-learn
  auto* bpe_cmd = app.add_subcommand("bpe-learn", "Learn a subword merge table from addresses");
  std::string bpe_corpus;
  std::size_t bpe_merges = 0;
  std::string bpe_out;
  bpe_cmd->add_option("--corpus", bpe_corpus, "Addresses, one per line")->required();
  bpe_cmd->add_option("--merges", bpe_merges, "Number of merges")->required();
  bpe_cmd->add_option("--out", bpe_out, "Merge table path")->required();

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve POST /parse and GET /health");
  ServiceConfig sc;
  std::string host = "0.0.0.0";
  int port = 8080;
  serve_cmd->add_option("--model", model_flag, "Checkpoint (default: $ADDRTAG_MODEL)");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--max-addresses", sc.max_addresses, "Largest accepted request");
  serve_cmd->add_option("--max-concurrent", sc.max_concurrent_batches, "Parses running at once");
  serve_cmd->add_option("--batch-size", sc.batch_size, "Addresses per batch")->check(CLI::PositiveNumber);

  // init
  auto* init_cmd = app.add_subcommand("init", "Create an untrained checkpoint");
  std::string init_flavor = "vector";
  std::string init_vectors;
  std::string init_merges;
  std::string init_tags;
  std::string init_out;
  std::uint64_t init_seed = 0;
  ComposerConfig cc;
  ModelSizes init_sizes;
  init_cmd->add_option("--flavor", init_flavor, "vector or subword")->check(CLI::IsMember({"vector", "subword"}));
  init_cmd->add_option("--vectors", init_vectors, "Word vector file (vector flavor)");
  init_cmd->add_option("--merges", init_merges, "Merge table (subword flavor)");
  init_cmd->add_option("--composer-hidden", cc.hidden_size, "Composer BiLSTM hidden size per direction");
  init_cmd->add_option("--subword-embedding", cc.subword_embedding_size, "Subword embedding size");
  init_cmd->add_option("--tags", init_tags, "Tag vocabulary, one tag per line");
  init_cmd->add_option("--seed", init_seed, "Initialisation seed");
  init_cmd->add_option("--out", init_out, "Output checkpoint")->required();
  init_sizes.add_to(init_cmd);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic tagged addresses");
  SynthConfig syc;
  std::size_t synth_count = 500;
  std::string synth_out;
  std::string synth_corpus;
  std::string synth_vectors;
  std::size_t synth_dim = 300;
  synth_cmd->add_option("--count", synth_count, "Number of addresses");
  synth_cmd->add_option("--seed", syc.seed, "Generator seed");
  synth_cmd->add_option("--missing-postal-rate", syc.missing_postal_rate, "Share without a postal code")
      ->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--out", synth_out, "Dataset path (JSON lines)");
  synth_cmd->add_option("--corpus-out", synth_corpus, "Plain address list path");
  synth_cmd->add_option("--vectors-out", synth_vectors, "Word vectors covering the generator's lexicon");
  synth_cmd->add_option("--dim", synth_dim, "Vector width for --vectors-out")->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (parse_cmd->parsed()) {
      const AddressParser parser = load_checkpoint(model_path_or_env(model_flag));
      std::vector<std::string> addresses;
      if (parse_input == "-") {
        addresses = read_lines(in);
      } else {
        addresses = load_corpus(parse_input);
      }
      const auto items = parse_items(parser, addresses, ParseOptions{batch_size, threads});
      std::string text;
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (parse_format == "json") {
          json j = item_json(items[i]);
          j["address"] = addresses[i];
          text += j.dump() + "\n";
          continue;
        }
        if (!items[i]) {
          text += std::to_string(i) + "\t\t" + "empty_address" + "\t\n\n";
          continue;
        }
        for (std::size_t t = 0; t < items[i]->tokens.size(); ++t) {
          text += std::to_string(i) + "\t" + items[i]->tokens[t] + "\t" + items[i]->tags[t] + "\t" +
                  shortest(items[i]->probabilities[t]) + "\n";
        }
        text += "\n";
      }
      write_output(parse_output, text, out);
      return 0;
    }

    if (retrain_cmd->parsed()) {
      const AddressParser parser = load_checkpoint(model_path_or_env(model_flag));
      if (!tags_path.empty()) tc.prediction_tags = read_tags(tags_path);
      if (retrain_sizes.any()) tc.seq2seq_params = retrain_sizes.overrides();
      tc.checkpoint_path = best_path;
      const TagVocabulary& vocab = tc.prediction_tags ? *tc.prediction_tags : parser.model().tags;
      const auto dataset = load_dataset(dataset_path, &vocab, &parser.preprocessor());
      RetrainResult result = retrain(parser, dataset, tc);
      save_checkpoint(result.parser, retrain_out);
      write_output(retrain_report, result.report.to_jsonl(), out);
      return 0;
    }

    if (bench_cmd->parsed()) {
      bc.corpus_path = bench_corpus;
      for (const auto& m : bench_models) bc.models.emplace_back(m);
      const BenchReport report = run_benchmark(bc);
      write_file_atomic(bench_report, render_report(report, ReportFormat::csv));
      out << render_report(report, ReportFormat::table);
      return 0;
    }

    if (bpe_cmd->parsed()) {
      std::map<std::string, std::size_t> counts;
      for (const auto& [token, n] : token_counts(load_corpus(bpe_corpus))) counts[digits_to_zero(token)] += n;
      if (counts.empty()) throw EmptyCorpus();
      learn_bpe(counts, bpe_merges).save(bpe_out);
      return 0;
    }

    if (serve_cmd->parsed()) {
      const std::string path = model_path_or_env(model_flag);
      ParseService service(sc);
      HttpServer server(service);
      const int bound = server.start(host, port);
      err << "listening on " << host << ":" << bound << "\n";
      service.load(load_checkpoint(path));
      err << "model loaded: " << service.health().body << "\n";
      for (;;) std::this_thread::sleep_for(std::chrono::hours(1));
    }

    if (init_cmd->parsed()) {
      Rng rng(init_seed);
      const TagVocabulary tags = init_tags.empty() ? default_tag_vocabulary() : read_tags(init_tags);
      Seq2SeqConfig config = init_sizes.overrides().apply(Seq2SeqConfig{});
      EmbeddingProvider provider = [&] {
        if (init_flavor == "vector") {
          if (init_vectors.empty()) throw UsageError("--vectors is required for the vector flavor");
          return EmbeddingProvider::from_table(std::make_shared<VectorTable>(VectorTable::load(init_vectors)));
        }
        if (init_merges.empty()) throw UsageError("--merges is required for the subword flavor");
        auto merges = std::make_shared<MergeTable>(MergeTable::load(init_merges));
        return EmbeddingProvider::from_subwords(merges, SubwordComposer::create(merges->vocab_size(), cc, rng));
      }();
      config.input_size = provider.width();
      AddressParser parser(Preprocessor::default_pipeline(), std::move(provider), TaggerModel::create(config, tags, rng));
      save_checkpoint(parser, init_out);
      out << parser.flavor() << "\n";
      return 0;
    }

    if (synth_cmd->parsed()) {
      if (synth_out.empty() && synth_corpus.empty() && synth_vectors.empty()) {
        throw UsageError("nothing to write: give --out, --corpus-out or --vectors-out");
      }
      const auto records = synth_records(synth_count, syc);
      if (!synth_out.empty()) save_dataset(records, synth_out);
      if (!synth_corpus.empty()) {
        std::string text;
        for (const auto& r : records) text += r.address + "\n";
        write_file_atomic(synth_corpus, text);
      }
      if (!synth_vectors.empty()) synth_vector_table(synth_dim, syc.seed).save(synth_vectors);
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 2;
}

}  // namespace addrtag
