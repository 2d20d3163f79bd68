// SPDX-License-Identifier: Apache-2.0
#include "addrtag/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace addrtag {

using nlohmann::json;

// ---- datasets ------------------------------------------------------------------

std::vector<DatasetRecord> read_dataset(std::istream& in, const TagVocabulary* vocab,
                                        const Preprocessor* preprocessor) {
  const Preprocessor fallback = Preprocessor::default_pipeline();
  const Preprocessor& pre = preprocessor ? *preprocessor : fallback;
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    DatasetRecord record;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw ParseError(line_no, "expected an object");
      if (!j.contains("address") || !j["address"].is_string()) throw ParseError(line_no, "missing string \"address\"");
      if (!j.contains("tags") || !j["tags"].is_array()) throw ParseError(line_no, "missing array \"tags\"");
      record.address = j["address"].get<std::string>();
      for (const auto& t : j["tags"]) {
        if (!t.is_string()) throw ParseError(line_no, "tags must be strings");
        record.gold_tags.push_back(t.get<std::string>());
      }
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    if (vocab) {
      try {
        validate_record(record, *vocab, pre);
      } catch (const Error& e) {
        throw ValidationError(line_no, e.what());
      }
    }
    out.push_back(std::move(record));
  }
  return out;
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, const TagVocabulary* vocab,
                                        const Preprocessor* preprocessor) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return read_dataset(in, vocab, preprocessor);
}

std::string dump_dataset(const std::vector<DatasetRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += json{{"address", r.address}, {"tags", r.gold_tags}}.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path) {
  write_file_atomic(path, dump_dataset(records));
}

// ---- files ---------------------------------------------------------------------

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- checkpoints ---------------------------------------------------------------

namespace {

void append_le(std::string& out, const std::vector<float>& values) {
  const std::size_t at = out.size();
  out.resize(at + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) {
      out[at + i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
  }
}

std::vector<float> read_le(const std::string& bytes, std::size_t offset, std::size_t count) {
  std::vector<float> out(count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

std::uint64_t checksum(const std::string& bytes, std::size_t offset, std::size_t length) {
  return fnv1a(std::string_view(bytes.data() + offset, length));
}

struct ArrayOut {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  const std::vector<float>* values;
};

json config_json(const Seq2SeqConfig& c) {
  return {{"input_size", c.input_size},
          {"encoder_hidden_size", c.encoder_hidden_size},
          {"decoder_hidden_size", c.decoder_hidden_size},
          {"tag_embedding_size", c.tag_embedding_size},
          {"attention", c.attention},
          {"attention_size", c.attention_size}};
}

Seq2SeqConfig config_from(const json& j) {
  Seq2SeqConfig c;
  c.input_size = j.at("input_size").get<std::size_t>();
  c.encoder_hidden_size = j.at("encoder_hidden_size").get<std::size_t>();
  c.decoder_hidden_size = j.at("decoder_hidden_size").get<std::size_t>();
  c.tag_embedding_size = j.at("tag_embedding_size").get<std::size_t>();
  c.attention = j.at("attention").get<bool>();
  c.attention_size = j.at("attention_size").get<std::size_t>();
  return c;
}

}  // namespace

std::string serialize_checkpoint(const AddressParser& parser) {
  const TaggerModel& model = parser.model();
  const EmbeddingProvider& provider = parser.provider();

  std::vector<ArrayOut> arrays;
  for (const auto& p : model.params.items()) arrays.push_back({p.name, p.rows, p.cols, &p.value});
  json embedding;
  if (provider.kind() == EmbeddingKind::vector_table) {
    const VectorTable& table = provider.table();
    embedding = {{"kind", "vector"},
                 {"dim", table.dim()},
                 {"oov_seed", table.oov_seed()},
                 {"words", table.words()}};
    arrays.push_back({"embedding.vectors", table.size(), table.dim(), &table.data()});
  } else {
    const SubwordComposer& comp = provider.composer();
    embedding = {{"kind", "subword"},
                 {"merges", provider.merges().serialize()},
                 {"vocab_size", comp.vocab_size},
                 {"subword_embedding_size", comp.config.subword_embedding_size},
                 {"hidden_size", comp.config.hidden_size},
                 {"output_size", comp.config.output_size}};
    for (const auto& p : comp.params.items()) arrays.push_back({p.name, p.rows, p.cols, &p.value});
  }

  std::string payload;
  json directory = json::array();
  for (const ArrayOut& a : arrays) {
    const std::size_t offset = payload.size();
    append_le(payload, *a.values);
    directory.push_back({{"name", a.name},
                         {"shape", {a.rows, a.cols}},
                         {"offset", offset},
                         {"count", a.values->size()},
                         {"fnv1a", checksum(payload, offset, payload.size() - offset)}});
  }

  json tags = json::array();
  for (const auto& n : model.tags.names()) tags.push_back(n);
  const json header = {{"format_version", kCheckpointVersion},
                       {"flavor", parser.flavor()},
                       {"config", config_json(model.config)},
                       {"tags", tags},
                       {"preprocess", parser.preprocessor().step_names()},
                       {"embedding", embedding},
                       {"payload_bytes", payload.size()},
                       {"arrays", directory}};
  const std::string text = header.dump();
  std::string out = std::string(kCheckpointMagic) + "\n" + std::to_string(text.size()) + "\n" + text;
  out += payload;
  return out;
}

namespace {

struct Reader {
  const std::string& bytes;
  std::size_t payload_start = 0;
  std::map<std::string, json> directory;

  std::vector<float> take(const std::string& name, std::size_t rows, std::size_t cols) const {
    const auto it = directory.find(name);
    if (it == directory.end()) throw CorruptPayload(name);
    const json& e = it->second;
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    const std::size_t count = e.at("count").get<std::size_t>();
    if (shape.size() != 2 || shape[0] != rows || shape[1] != cols || count != rows * cols) throw CorruptPayload(name);
    const std::size_t offset = payload_start + e.at("offset").get<std::size_t>();
    if (offset + count * 4 > bytes.size()) throw TruncatedFile("array " + name + " extends past end of file");
    if (checksum(bytes, offset, count * 4) != e.at("fnv1a").get<std::uint64_t>()) throw CorruptPayload(name);
    return read_le(bytes, offset, count);
  }
};

template <typename T>
void fill_params(nn::ParamSet<T>& params, const Reader& r) {
  for (auto& p : params.items()) p.value = r.take(p.name, p.rows, p.cols);
}

}  // namespace

AddressParser deserialize_checkpoint(const std::string& bytes) {
  const std::size_t nl1 = bytes.find('\n');
  if (nl1 == std::string::npos) throw TruncatedFile("missing checkpoint magic line");
  const std::string magic = bytes.substr(0, nl1);
  const std::string prefix = "addrtag-ckpt-";
  if (magic.rfind(prefix, 0) != 0) throw CorruptPayload("header");
  if (magic != kCheckpointMagic) throw VersionMismatch(magic.substr(prefix.size()));
  const std::size_t nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw TruncatedFile("missing header length");
  std::size_t header_len = 0;
  try {
    header_len = std::stoull(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  } catch (const std::exception&) {
    throw CorruptPayload("header");
  }
  if (nl2 + 1 + header_len > bytes.size()) throw TruncatedFile("header extends past end of file");

  json header;
  try {
    header = json::parse(bytes.substr(nl2 + 1, header_len));
  } catch (const json::exception&) {
    throw CorruptPayload("header");
  }
  try {
    const json& version = header.at("format_version");
    if (!version.is_number_integer() || version.get<int>() != kCheckpointVersion) throw VersionMismatch(version.dump());

    Reader reader{bytes, nl2 + 1 + header_len, {}};
    for (const auto& e : header.at("arrays")) reader.directory[e.at("name").get<std::string>()] = e;
    const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (reader.payload_start + payload_bytes > bytes.size()) {
      throw TruncatedFile("payload is " + std::to_string(bytes.size() - reader.payload_start) + " bytes, header claims " +
                          std::to_string(payload_bytes));
    }

    const Seq2SeqConfig config = config_from(header.at("config"));
    const TagVocabulary tags(header.at("tags").get<std::vector<std::string>>());
    Rng scratch(0);
    TaggerModel model = TaggerModel::create(config, tags, scratch);
    fill_params(model.params, reader);

    const json& emb = header.at("embedding");
    const std::string kind = emb.at("kind").get<std::string>();
    EmbeddingProvider provider = [&]() {
      if (kind == "vector") {
        const std::size_t dim = emb.at("dim").get<std::size_t>();
        const auto words = emb.at("words").get<std::vector<std::string>>();
        const std::vector<float> data = reader.take("embedding.vectors", words.size(), dim);
        auto table = std::make_shared<VectorTable>(dim, emb.at("oov_seed").get<std::uint64_t>());
        for (std::size_t i = 0; i < words.size(); ++i) {
          table->add(words[i], std::span<const float>(data.data() + i * dim, dim));
        }
        return EmbeddingProvider::from_table(std::move(table));
      }
      if (kind == "subword") {
        auto merges = std::make_shared<MergeTable>(MergeTable::deserialize(emb.at("merges").get<std::string>()));
        ComposerConfig cc;
        cc.subword_embedding_size = emb.at("subword_embedding_size").get<std::size_t>();
        cc.hidden_size = emb.at("hidden_size").get<std::size_t>();
        cc.output_size = emb.at("output_size").get<std::size_t>();
        const std::size_t vocab_size = emb.at("vocab_size").get<std::size_t>();
        if (vocab_size != merges->vocab_size()) throw CorruptPayload("embedding.merges");
        SubwordComposer composer = SubwordComposer::create(vocab_size, cc, scratch);
        fill_params(composer.params, reader);
        return EmbeddingProvider::from_subwords(std::move(merges), std::move(composer));
      }
      throw CorruptPayload("embedding");
    }();

    const Preprocessor pre = Preprocessor::from_names(header.at("preprocess").get<std::vector<std::string>>());
    return AddressParser(pre, std::move(provider), std::move(model));
  } catch (const json::exception& e) {
    throw CorruptPayload(std::string("header: ") + e.what());
  }
}

void save_checkpoint(const AddressParser& parser, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(parser));
}

AddressParser load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

std::string checkpoint_header(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::size_t nl1 = bytes.find('\n');
  const std::size_t nl2 = nl1 == std::string::npos ? nl1 : bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw TruncatedFile("missing header");
  const std::size_t len = std::stoull(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  if (nl2 + 1 + len > bytes.size()) throw TruncatedFile("header extends past end of file");
  return bytes.substr(nl2 + 1, len);
}

}  // namespace addrtag
