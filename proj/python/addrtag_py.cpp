// SPDX-License-Identifier: Apache-2.0
// Python bindings: loading, creating, parsing, retraining and evaluating
// address parsers.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "addrtag/app.hpp"
#include "addrtag/bpe.hpp"
#include "addrtag/io.hpp"
#include "addrtag/synth.hpp"
#include "addrtag/tagger.hpp"
#include "addrtag/train.hpp"

namespace py = pybind11;
using namespace addrtag;

namespace {

using Record = std::pair<std::string, std::vector<std::string>>;

std::vector<DatasetRecord> to_records(const std::vector<Record>& in) {
  std::vector<DatasetRecord> out;
  out.reserve(in.size());
  for (const auto& [address, tags] : in) out.push_back({address, tags});
  return out;
}

py::dict to_dict(const ParsedAddress& p) {
  py::dict d;
  d["tokens"] = p.tokens;
  d["tags"] = p.tags;
  d["probabilities"] = p.probabilities;
  return d;
}

py::dict to_dict(const CorpusMetrics& m) {
  py::dict d;
  d["mean_sequence_accuracy"] = m.mean_sequence_accuracy;
  d["full_parse_accuracy"] = m.full_parse_accuracy;
  return d;
}

py::dict to_dict(const EpochReport& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["train_loss"] = e.train_loss;
  d["train_sequence_accuracy"] = e.train_sequence_accuracy;
  d["train_full_parse_accuracy"] = e.train_full_parse_accuracy;
  d["eval_sequence_accuracy"] = e.eval_sequence_accuracy;
  d["eval_full_parse_accuracy"] = e.eval_full_parse_accuracy;
  d["seconds"] = e.seconds;
  return d;
}

AddressParser create(const std::string& flavor, const std::string& vectors, const std::string& merges,
                     std::size_t encoder_hidden, std::size_t decoder_hidden, std::size_t tag_embedding,
                     bool attention, std::uint64_t seed) {
  Rng rng(seed);
  Seq2SeqConfig config;
  config.encoder_hidden_size = encoder_hidden;
  config.decoder_hidden_size = decoder_hidden;
  config.tag_embedding_size = tag_embedding;
  config.attention = attention;
  EmbeddingProvider provider = [&] {
    if (flavor == "vector") {
      if (vectors.empty()) throw InvalidConfig("the vector flavor needs a vectors file");
      return EmbeddingProvider::from_table(std::make_shared<VectorTable>(VectorTable::load(vectors)));
    }
    if (flavor != "subword") throw InvalidConfig("flavor must be vector or subword, got " + flavor);
    if (merges.empty()) throw InvalidConfig("the subword flavor needs a merge table");
    auto table = std::make_shared<MergeTable>(MergeTable::load(merges));
    return EmbeddingProvider::from_subwords(table, SubwordComposer::create(table->vocab_size(), {}, rng));
  }();
  config.input_size = provider.width();
  return AddressParser(Preprocessor::default_pipeline(), std::move(provider),
                       TaggerModel::create(config, default_tag_vocabulary(), rng));
}

}  // namespace

PYBIND11_MODULE(_addrtag, m) {
  m.doc() = "Sequence-to-sequence address parsing";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<EmptyAddress>(m, "EmptyAddress", base.ptr());
  py::register_exception<InvalidConfig>(m, "InvalidConfig", base.ptr());
  py::register_exception<InvalidRatio>(m, "InvalidRatio", base.ptr());
  py::register_exception<UnknownTag>(m, "UnknownTag", base.ptr());
  py::register_exception<LengthMismatch>(m, "LengthMismatch", base.ptr());
  py::register_exception<EmptyDataset>(m, "EmptyDataset", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<VersionMismatch>(m, "VersionMismatch", base.ptr());
  py::register_exception<CorruptPayload>(m, "CorruptPayload", base.ptr());
  py::register_exception<TruncatedFile>(m, "TruncatedFile", base.ptr());

  py::class_<AddressParser>(m, "Parser")
      .def_property_readonly("flavor", &AddressParser::flavor)
      .def_property_readonly("tags", [](const AddressParser& p) { return p.model().tags.names(); })
      .def(
          "parse",
          [](const AddressParser& p, const std::vector<std::string>& addresses, std::size_t batch_size,
             std::size_t threads) {
            std::vector<ParsedAddress> parsed;
            {
              py::gil_scoped_release release;
              parsed = p.parse(addresses, {batch_size, threads});
            }
            py::list out;
            for (const auto& r : parsed) out.append(to_dict(r));
            return out;
          },
          py::arg("addresses"), py::arg("batch_size") = 32, py::arg("threads") = 1)
      .def("save", [](const AddressParser& p, const std::filesystem::path& path) { save_checkpoint(p, path); },
           py::arg("path"))
      .def("to_bytes", [](const AddressParser& p) { return py::bytes(serialize_checkpoint(p)); })
      .def_static(
          "from_bytes", [](const py::bytes& b) { return deserialize_checkpoint(std::string(b)); }, py::arg("data"))
      .def(
          "retrain",
          [](const AddressParser& p, const std::vector<Record>& records, double train_ratio, std::size_t epochs,
             std::size_t batch_size, double learning_rate, double teacher_forcing_ratio, std::uint64_t seed) {
            TrainingConfig c;
            c.train_ratio = train_ratio;
            c.epochs = epochs;
            c.batch_size = batch_size;
            c.learning_rate = learning_rate;
            c.teacher_forcing_ratio = teacher_forcing_ratio;
            c.seed = seed;
            const std::vector<DatasetRecord> data = to_records(records);
            std::unique_ptr<RetrainResult> r;
            {
              py::gil_scoped_release release;
              r = std::make_unique<RetrainResult>(retrain(p, data, c));
            }
            py::list report;
            for (const auto& e : r->report.epochs) report.append(to_dict(e));
            return py::make_tuple(std::move(r->parser), report);
          },
          py::arg("records"), py::arg("train_ratio") = 0.8, py::arg("epochs") = 5, py::arg("batch_size") = 32,
          py::arg("learning_rate") = 1e-3, py::arg("teacher_forcing_ratio") = 0.5, py::arg("seed") = 0,
          "Returns (new parser, list of per-epoch report dicts).")
      .def(
          "evaluate",
          [](const AddressParser& p, const std::vector<Record>& records, std::size_t batch_size) {
            return to_dict(evaluate(p, to_records(records), batch_size));
          },
          py::arg("records"), py::arg("batch_size") = 32);

  m.def(
      "load", [](const std::filesystem::path& path) { return load_checkpoint(path); }, py::arg("path"));
  m.def("create", &create, py::arg("flavor"), py::arg("vectors") = "", py::arg("merges") = "",
        py::arg("encoder_hidden") = 1024, py::arg("decoder_hidden") = 1024, py::arg("tag_embedding") = 300,
        py::arg("attention") = false, py::arg("seed") = 0, "Creates an untrained parser.");
  m.def(
      "preprocess",
      [](const std::string& address) { return Preprocessor::default_pipeline().prepare(address).tokens; },
      py::arg("address"));
  m.def(
      "synth_records",
      [](std::size_t n, std::uint64_t seed) {
        std::vector<Record> out;
        for (auto& r : synth_records(n, SynthConfig{seed})) out.emplace_back(std::move(r.address), std::move(r.gold_tags));
        return out;
      },
      py::arg("n"), py::arg("seed") = 42);
  m.def("sequence_accuracy", &sequence_accuracy, py::arg("predicted"), py::arg("gold"));
  m.def(
      "corpus_metrics",
      [](const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& pairs) {
        return to_dict(corpus_metrics(pairs));
      },
      py::arg("pairs"), "pairs: list of (predicted, gold) tag sequences.");
  m.def(
      "cli",
      [](const std::vector<std::string>& args, const std::string& stdin_text) {
        std::istringstream in(stdin_text);
        std::ostringstream out, err;
        const int code = cli_main(args, in, out, err);
        return std::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), py::arg("stdin") = "", "Runs the command-line tool in-process; returns (code, stdout, stderr).");
}
