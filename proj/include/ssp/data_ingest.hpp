#pragma once

// Loading the flattened benchmark container into typed protein records, plus
// the dataset hygiene audits: exact-duplicate grouping and split leakage.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ssp/errors.hpp"
#include "ssp/vocab.hpp"

namespace ssp {

// Half-open column interval [begin, end) within one residue row.
struct ColumnRange {
  int begin = 0;
  int end = 0;

  int width() const { return end - begin; }
  bool contains(int col) const { return col >= begin && col < end; }
  friend bool operator==(const ColumnRange&, const ColumnRange&) = default;
};

// Where each feature block lives inside a raw residue row.
struct RawLayout {
  ColumnRange residue_onehot_cols{0, 22};
  ColumnRange label_cols{22, 31};
  ColumnRange terminal_flag_cols{31, 33};
  ColumnRange profile_cols{35, 57};
  std::vector<ColumnRange> unused_cols{{33, 35}};
  int row_width = 57;
  int max_len = kMaxLen;
  // Terminal flags are always derived from the inferred length; when set, the
  // stored columns must agree with the derived ones.
  bool verify_terminal_flags = false;

  // Throws ConfigError unless ranges are disjoint, have the required widths,
  // and together with unused_cols tile [0, row_width).
  void validate() const;

  friend bool operator==(const RawLayout&, const RawLayout&) = default;
};

void to_json(nlohmann::json& j, const ColumnRange& r);
void from_json(const nlohmann::json& j, ColumnRange& r);
void to_json(nlohmann::json& j, const RawLayout& layout);
void from_json(const nlohmann::json& j, RawLayout& layout);

struct ProteinRecord {
  std::string id;
  int length = 0;
  int max_len = kMaxLen;
  std::vector<std::uint8_t> residues;        // max_len token indices into ResidueVocab
  std::vector<float> profile;                // max_len x 22, row-major
  std::vector<std::uint8_t> terminal_flags;  // max_len x 2: (first, last)
  std::vector<std::uint8_t> labels;          // max_len token indices into LabelVocab
  std::vector<std::uint8_t> mask;            // max_len, 1 for real residues

  float profile_at(int pos, int col) const {
    return profile[static_cast<std::size_t>(pos) * ResidueVocab::kSize + static_cast<std::size_t>(col)];
  }

  // Throws IntegrityError if any ProteinRecord invariant is violated.
  void validate() const;

  friend bool operator==(const ProteinRecord&, const ProteinRecord&) = default;
};

// Builds a record from a residue string and a label string of equal length.
// The profile defaults to zeros; terminal flags and mask are derived.
ProteinRecord make_record(std::string id, std::string_view sequence, std::string_view labels,
                          std::vector<float> profile = {}, int max_len = kMaxLen);

// Reads an (N, max_len * row_width) or (N, max_len, row_width) container.
// Record ids are "<dataset_name>#<row>"; dataset_name defaults to the file stem.
std::vector<ProteinRecord> load_raw(const std::filesystem::path& path, const RawLayout& layout,
                                    std::string dataset_name = {});

// Parses one raw row (max_len * row_width floats). Exposed for callers that
// stream rows themselves.
ProteinRecord parse_raw_row(std::span<const float> row, const RawLayout& layout, std::string id,
                            std::size_t record_index);

// Inverse of parse_raw_row; unused columns are written as zeros.
std::vector<float> encode_raw_row(const ProteinRecord& record, const RawLayout& layout);

// Writes records as an (N, max_len * row_width) float32 container.
void save_raw(const std::filesystem::path& path, const std::vector<ProteinRecord>& records,
              const RawLayout& layout);

std::string decode_sequence(const ProteinRecord& record);
std::string decode_labels(const ProteinRecord& record);

using DuplicateGroup = std::vector<std::size_t>;

// Groups of indices whose decoded sequences are identical. Groups are sorted
// by their first index, indices ascending within a group, singletons omitted.
std::vector<DuplicateGroup> find_duplicates(const std::vector<ProteinRecord>& records);

enum class SplitName { kTrain, kValidation, kTest };
std::string_view to_string(SplitName split);

struct SplitSpec {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;

  // Throws SpecError if an index is >= record_count, repeated, or in two sets.
  void validate(std::size_t record_count) const;

  // Contiguous blocks [0, n_train), [n_train, n_train + n_val), ...
  static SplitSpec contiguous(std::size_t n_train, std::size_t n_validation, std::size_t n_test);
};

void to_json(nlohmann::json& j, const SplitSpec& spec);
void from_json(const nlohmann::json& j, SplitSpec& spec);

struct LeakagePair {
  SplitName split_a;
  std::size_t index_a;
  SplitName split_b;
  std::size_t index_b;
  std::string sequence_hash;

  friend bool operator==(const LeakagePair&, const LeakagePair&) = default;
};

struct LeakageReport {
  std::vector<LeakagePair> pairs;

  bool clean() const { return pairs.empty(); }
};

// Every cross-split pair of records with identical decoded sequences. The
// spec is validated before any comparison.
LeakageReport check_disjoint(const std::vector<ProteinRecord>& records, const SplitSpec& spec);

// Human-readable lines and a tab-separated table with a header row.
void write_leakage_text(std::ostream& out, const LeakageReport& report,
                        const std::vector<ProteinRecord>& records);
void write_leakage_tsv(std::ostream& out, const LeakageReport& report,
                       const std::vector<ProteinRecord>& records);

class LeakageError : public std::runtime_error {
 public:
  explicit LeakageError(LeakageReport report);
  const LeakageReport& report() const { return report_; }

 private:
  LeakageReport report_;
};

struct SplitData {
  std::vector<ProteinRecord> train;
  std::vector<ProteinRecord> validation;
  std::vector<ProteinRecord> test;
  std::vector<std::string> warnings;
};

// Partitions records by the spec, preserving order. A leaky spec is refused
// with LeakageError unless allow_leakage is set, in which case the leakage is
// reported through `warnings`.
SplitData apply_split(const std::vector<ProteinRecord>& records, const SplitSpec& spec,
                      bool allow_leakage = false);

}  // namespace ssp
