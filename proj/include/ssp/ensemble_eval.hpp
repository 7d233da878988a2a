#pragma once

// Probability averaging across models and the Q8 evaluation metrics:
// accuracy, confusion matrix (rows = predicted, columns = truth) and
// per-class precision / recall / F-score.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ssp/data_ingest.hpp"

namespace ssp {

// n x max_len x 9 class probabilities.
struct ProbTensor {
  std::size_t n = 0;
  int max_len = kMaxLen;
  std::vector<float> values;

  std::span<const float> row(std::size_t record, int pos) const {
    return std::span<const float>(values).subspan(
        (record * static_cast<std::size_t>(max_len) + static_cast<std::size_t>(pos)) * LabelVocab::kSize,
        LabelVocab::kSize);
  }
};

// n x max_len label indices into LabelVocab.
struct LabelTensor {
  std::size_t n = 0;
  int max_len = kMaxLen;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(std::size_t record, int pos) const {
    return labels[record * static_cast<std::size_t>(max_len) + static_cast<std::size_t>(pos)];
  }
};

// Gold labels and masks gathered from records.
LabelTensor gold_labels(const std::vector<ProteinRecord>& records);
std::vector<std::uint8_t> gold_mask(const std::vector<ProteinRecord>& records);

// argmax_j (1/m) sum_i p_i[j] at every position, over all 9 classes. Ties go
// to the lowest class index. Throws ConfigError for an empty member list and
// ShapeError when members disagree in shape.
LabelTensor ensemble_argmax(std::span<const ProbTensor> members);

// Same rule restricted to the 8 real classes at masked positions; padding is
// labelled noSeq. This is what prediction files carry.
LabelTensor ensemble_predict(std::span<const ProbTensor> members, std::span<const std::uint8_t> mask);

using ConfusionMatrix = std::array<std::array<std::uint64_t, LabelVocab::kClasses>, LabelVocab::kClasses>;

// Residue-level (micro) accuracy. Throws ConfigError when nothing is masked.
double q8_accuracy(const LabelTensor& pred, const LabelTensor& gold, std::span<const std::uint8_t> mask);

// Mean of per-record accuracies, for comparison with the micro figure.
double q8_macro_accuracy(const LabelTensor& pred, const LabelTensor& gold, std::span<const std::uint8_t> mask);

// Entry (r, c) counts masked positions predicted r with truth c. A noSeq
// label at a masked position, in either tensor, is an IntegrityError.
ConfusionMatrix confusion_matrix(const LabelTensor& pred, const LabelTensor& gold,
                                 std::span<const std::uint8_t> mask);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  std::uint64_t support = 0;    // column sum: true residues of the class
  std::uint64_t predicted = 0;  // row sum
};

std::array<ClassScores, LabelVocab::kClasses> per_class_prf(const ConfusionMatrix& confusion);

std::uint64_t trace(const ConfusionMatrix& confusion);
std::uint64_t total(const ConfusionMatrix& confusion);

struct EvalReport {
  ConfusionMatrix confusion{};
  std::array<ClassScores, LabelVocab::kClasses> per_class{};
  double q8_accuracy = 0.0;
  std::optional<double> macro_accuracy;  // unknown when built from a bare matrix
  std::uint64_t residue_count = 0;
  std::size_t record_count = 0;

  // Recomputes trace/total from `confusion`; the accuracy the report carries
  // must equal it exactly.
  bool self_consistent() const;
};

// Builds the full report. Throws std::logic_error if the accuracy computed
// from predictions disagrees with trace/total of the confusion matrix.
EvalReport evaluate(const LabelTensor& pred, const LabelTensor& gold, std::span<const std::uint8_t> mask);

// Report derived only from a confusion matrix (no per-record information).
EvalReport report_from_confusion(const ConfusionMatrix& confusion);

enum class ReportFormat { kText, kCsv, kJson };
ReportFormat parse_report_format(const std::string& name);

std::string render_report(const EvalReport& report, ReportFormat format);
EvalReport parse_report(const std::string& document, ReportFormat format);

// Probability interchange: (N, max_len, 9) float32 .npy.
void save_probs(const std::filesystem::path& path, const ProbTensor& probs);
ProbTensor load_probs(const std::filesystem::path& path);

// Prediction interchange: one line per record, "<id>\t<labels>", the label
// string covering the record's real positions over the 8-letter alphabet.
struct PredictionEntry {
  std::string id;
  std::string labels;
};
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionEntry>& entries);
std::vector<PredictionEntry> read_predictions(const std::filesystem::path& path);

// Lines prediction entries up with gold records by id. Throws AlignmentError
// for missing or surplus ids and for length mismatches.
LabelTensor align_predictions(const std::vector<PredictionEntry>& entries, const std::vector<ProteinRecord>& gold);

}  // namespace ssp
