// SPDX-License-Identifier: Apache-2.0
#include "addrtag/synth.hpp"

#include <cctype>
#include <cmath>

#include "addrtag/preprocess.hpp"
#include "addrtag/random.hpp"
#include "addrtag/text.hpp"

namespace addrtag {

namespace {

const std::vector<std::string> kStreetNames = {
    "main",    "oak",     "maple",     "cedar",    "pine",     "elm",     "king",     "queen",
    "laurier", "lilas",   "erables",   "church",   "park",     "lake",    "hill",     "river",
    "mill",    "station", "college",   "bridge",   "peel",     "st-denis", "notre-dame", "saint-laurent",
    "yonge",   "bloor",   "dundas",    "granville", "portage", "jasper",  "water",    "george",
    "james",   "albert",  "champlain", "wellington", "frontenac", "cartier", "beaubien", "masson"};
const std::vector<std::string> kStreetTypes = {"st",  "street", "ave",   "avenue", "rd",       "road",
                                               "blvd", "dr",    "drive", "way",    "lane",     "crescent"};
const std::vector<std::string> kFrenchTypes = {"rue", "chemin", "boulevard", "avenue", "place"};
const std::vector<std::string> kParticles = {"des", "du", "de"};
const std::vector<std::string> kOrientations = {"n",     "s",     "e",    "w",   "north", "south", "east", "west",
                                                "nord",  "sud",   "est",  "ouest"};
const std::vector<std::string> kUnitWords = {"apt", "unit", "suite", "app"};
const std::vector<std::vector<std::string>> kMunicipalities = {
    {"montreal"}, {"laval"},   {"gatineau"},          {"toronto"},   {"ottawa"},     {"hamilton"},
    {"kingston"}, {"calgary"}, {"edmonton"},          {"winnipeg"},  {"regina"},     {"saskatoon"},
    {"halifax"},  {"moncton"}, {"fredericton"},       {"levis"},     {"longueuil"},  {"trois-rivieres"},
    {"thunder", "bay"},        {"red", "deer"},       {"saint", "john"},             {"la", "prairie"},
    {"mont", "tremblant"},     {"new", "westminster"}};
const std::vector<std::vector<std::string>> kProvinces = {
    {"qc"},      {"on"},      {"bc"},      {"ab"},       {"mb"}, {"sk"}, {"ns"}, {"nb"}, {"nl"}, {"pe"},
    {"ontario"}, {"alberta"}, {"manitoba"}, {"british", "columbia"}, {"nova", "scotia"}};
const std::vector<std::vector<std::string>> kDeliveryWords = {{"po", "box"}, {"cp"}, {"rr"}, {"general", "delivery"}};

constexpr std::size_t kMaxStreetNumber = 2000;
constexpr std::size_t kMaxUnitNumber = 300;
constexpr std::size_t kPostalPool = 200;

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[static_cast<std::size_t>(rng.below(v.size()))];
}

std::string number(Rng& rng, std::size_t max) { return std::to_string(1 + rng.below(max)); }

/// Fixed pools so the vector table can cover them; independent of any seed.
const std::vector<std::string>& postal_pool(bool first_half) {
  static const auto pools = [] {
    Rng rng(0x9057a1);
    std::pair<std::vector<std::string>, std::vector<std::string>> p;
    const std::string letters = "abceghjklmnprstvxy";
    for (std::size_t i = 0; i < kPostalPool; ++i) {
      std::string fsa{letters[rng.below(letters.size())], static_cast<char>('0' + rng.below(10)),
                      letters[rng.below(letters.size())]};
      std::string ldu{static_cast<char>('0' + rng.below(10)), letters[rng.below(letters.size())],
                      static_cast<char>('0' + rng.below(10))};
      p.first.push_back(fsa);
      p.second.push_back(ldu);
    }
    return p;
  }();
  return first_half ? pools.first : pools.second;
}

struct Builder {
  std::vector<std::string> words;
  std::vector<std::string> tags;
  std::vector<std::size_t> segment_ends;

  void add(const std::string& word, const char* tag) {
    words.push_back(word);
    tags.emplace_back(tag);
  }
  void add_all(const std::vector<std::string>& ws, const char* tag) {
    for (const auto& w : ws) add(w, tag);
  }
  void end_segment() {
    if (!words.empty()) segment_ends.push_back(words.size() - 1);
  }
};

void street(Builder& b, Rng& rng, const SynthConfig& cfg) {
  if (rng.bernoulli(cfg.unit_rate) && rng.bernoulli(0.4)) {
    b.add("#" + number(rng, kMaxUnitNumber), "Unit");
  }
  b.add(number(rng, kMaxStreetNumber), "StreetNumber");
  if (rng.bernoulli(0.35)) {
    b.add(pick(kFrenchTypes, rng), "StreetName");
    if (rng.bernoulli(0.4)) b.add(pick(kParticles, rng), "StreetName");
    b.add(pick(kStreetNames, rng), "StreetName");
  } else {
    b.add(pick(kStreetNames, rng), "StreetName");
    if (rng.bernoulli(0.25)) b.add(pick(kStreetNames, rng), "StreetName");
    b.add(pick(kStreetTypes, rng), "StreetName");
  }
  if (rng.bernoulli(cfg.orientation_rate)) b.add(pick(kOrientations, rng), "Orientation");
  if (rng.bernoulli(cfg.unit_rate)) {
    b.add(pick(kUnitWords, rng), "Unit");
    b.add(number(rng, kMaxUnitNumber), "Unit");
  }
}

void delivery(Builder& b, Rng& rng) {
  const auto& words = pick(kDeliveryWords, rng);
  b.add_all(words, "GeneralDelivery");
  if (words.size() == 1 || words[0] == "po") b.add(number(rng, kMaxStreetNumber), "GeneralDelivery");
}

std::string render(const Builder& b, Rng& rng) {
  std::string out;
  std::size_t seg = 0;
  for (std::size_t i = 0; i < b.words.size(); ++i) {
    std::string w = b.words[i];
    const bool postal = b.tags[i] == "PostalCode";
    if (postal ? rng.bernoulli(0.6) : rng.bernoulli(0.4)) {
      for (std::size_t c = 0; c < (postal ? w.size() : 1); ++c) {
        w[c] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[c])));
      }
    }
    if (!out.empty()) out += rng.bernoulli(0.05) ? "  " : " ";
    out += w;
    if (seg < b.segment_ends.size() && b.segment_ends[seg] == i) {
      if (i + 1 < b.words.size() && rng.bernoulli(0.6)) out += ",";
      ++seg;
    }
  }
  return out;
}

DatasetRecord one_record(Rng& rng, const SynthConfig& cfg) {
  Builder b;
  if (rng.bernoulli(cfg.general_delivery_rate)) {
    delivery(b, rng);
  } else {
    street(b, rng, cfg);
  }
  b.end_segment();
  b.add_all(pick(kMunicipalities, rng), "Municipality");
  b.end_segment();
  b.add_all(pick(kProvinces, rng), "Province");
  b.end_segment();
  if (!rng.bernoulli(cfg.missing_postal_rate)) {
    const std::size_t k = static_cast<std::size_t>(rng.below(kPostalPool));
    const std::size_t j = static_cast<std::size_t>(rng.below(kPostalPool));
    b.add(postal_pool(true)[k], "PostalCode");
    b.add(postal_pool(false)[j], "PostalCode");
  }
  return {render(b, rng), b.tags};
}

std::vector<std::string> lexicon_category(std::size_t c) {
  std::vector<std::string> out;
  const auto flat = [&](const std::vector<std::vector<std::string>>& groups) {
    for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  };
  switch (c) {
    case 0:
      out = kStreetNames;
      break;
    case 1:
      out = kStreetTypes;
      out.insert(out.end(), kFrenchTypes.begin(), kFrenchTypes.end());
      out.insert(out.end(), kParticles.begin(), kParticles.end());
      break;
    case 2:
      out = kOrientations;
      break;
    case 3:
      out = kUnitWords;
      for (std::size_t i = 1; i <= kMaxUnitNumber; ++i) out.push_back("#" + std::to_string(i));
      break;
    case 4:
      flat(kMunicipalities);
      break;
    case 5:
      flat(kProvinces);
      break;
    case 6:
      out = postal_pool(true);
      out.insert(out.end(), postal_pool(false).begin(), postal_pool(false).end());
      break;
    case 7:
      flat(kDeliveryWords);
      break;
    case 8:
      for (std::size_t i = 1; i <= kMaxStreetNumber; ++i) out.push_back(std::to_string(i));
      break;
    default:
      break;
  }
  return out;
}

constexpr std::size_t kCategories = 9;

}  // namespace

std::vector<DatasetRecord> synth_records(std::size_t n, const SynthConfig& config) {
  Rng rng(config.seed);
  std::vector<DatasetRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(one_record(rng, config));
  return out;
}

std::vector<std::string> synth_addresses(std::size_t n, const SynthConfig& config) {
  std::vector<std::string> out;
  for (auto& r : synth_records(n, config)) out.push_back(std::move(r.address));
  return out;
}

std::vector<std::string> random_addresses(std::size_t n, std::size_t min_tokens, std::size_t max_tokens,
                                          std::uint64_t seed) {
  if (min_tokens == 0 || max_tokens < min_tokens) throw InvalidConfig("random_addresses: bad token range");
  Rng rng(seed);
  std::vector<std::string> words;
  for (std::size_t c = 0; c < kCategories; ++c) {
    const auto cat = lexicon_category(c);
    words.insert(words.end(), cat.begin(), cat.end());
  }
  const std::string junk = "abcdefghijklmnopqrstuvwxyz0123456789-.#/'";
  const std::vector<std::string> wide = {"é", "ü", "ß", "ø", "ç", "ñ"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = min_tokens + static_cast<std::size_t>(rng.below(max_tokens - min_tokens + 1));
    std::string a;
    for (std::size_t t = 0; t < len; ++t) {
      std::string w;
      if (rng.bernoulli(0.7)) {
        w = pick(words, rng);
      } else {
        const std::size_t m = 1 + static_cast<std::size_t>(rng.below(8));
        for (std::size_t j = 0; j < m; ++j) {
          if (rng.bernoulli(0.1)) {
            w += pick(wide, rng);
          } else {
            w += junk[static_cast<std::size_t>(rng.below(junk.size()))];
          }
        }
      }
      if (!a.empty()) a += ' ';
      a += w;
    }
    out.push_back(std::move(a));
  }
  return out;
}

VectorTable synth_vector_table(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw InvalidConfig("vector dim must be >= 1");
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<std::vector<double>> centers(kCategories, std::vector<double>(dim));
  for (auto& c : centers) {
    for (auto& x : c) x = rng.normal() * s;
  }
  VectorTable table(dim, seed);
  std::vector<float> v(dim);
  for (std::size_t c = 0; c < kCategories; ++c) {
    for (const auto& w : lexicon_category(c)) {
      if (table.contains(w)) continue;
      for (std::size_t j = 0; j < dim; ++j) v[j] = static_cast<float>(centers[c][j] + 0.6 * rng.normal() * s);
      table.add(w, v);
    }
  }
  return table;
}

std::map<std::string, std::size_t> token_counts(const std::vector<std::string>& addresses) {
  std::map<std::string, std::size_t> counts;
  for (const auto& a : addresses) {
    for (const auto& t : text::split_whitespace(default_preprocess(a))) ++counts[t];
  }
  return counts;
}

}  // namespace addrtag
