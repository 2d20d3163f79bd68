// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "addrtag/core.hpp"
#include "addrtag/preprocess.hpp"
#include "addrtag/tagger.hpp"

namespace addrtag {

/// One JSON object per line: {"address": "...", "tags": ["...", ...]}.
/// Blank lines are skipped. When `vocab` is given every record is checked
/// with validate_record (using `preprocessor`, or the default pipeline) and
/// failures become ValidationError carrying the 1-based line number.
std::vector<DatasetRecord> read_dataset(std::istream& in, const TagVocabulary* vocab = nullptr,
                                        const Preprocessor* preprocessor = nullptr);
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, const TagVocabulary* vocab = nullptr,
                                        const Preprocessor* preprocessor = nullptr);
std::string dump_dataset(const std::vector<DatasetRecord>& records);
void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path);

inline constexpr const char* kCheckpointMagic = "addrtag-ckpt-v1";
inline constexpr int kCheckpointVersion = 1;

/// Layout:
///   addrtag-ckpt-v1\n
///   <header byte length>\n
///   <JSON header>
///   <float32 little-endian payload>
/// The header records the flavor, tagger configuration, tag vocabulary,
/// preprocessing step names, the embedding front end (vector-table words or
/// the BPE merge table and composer sizes) and an array directory with
/// name, shape, byte offset into the payload and an FNV-1a checksum.
std::string serialize_checkpoint(const AddressParser& parser);
AddressParser deserialize_checkpoint(const std::string& bytes);

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const AddressParser& parser, const std::filesystem::path& path);
AddressParser load_checkpoint(const std::filesystem::path& path);

/// The decoded JSON header of a checkpoint file, for inspection.
std::string checkpoint_header(const std::filesystem::path& path);

/// Writes `contents` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace addrtag
