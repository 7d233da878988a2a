#pragma once

// Fitting a ModelHandle with masked cross-entropy, the per-model optimizer
// presets, inverse-time learning-rate decay and best-validation checkpointing.

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "ssp/archzoo.hpp"
#include "ssp/ensemble_eval.hpp"

namespace ssp {

enum class OptimizerName { kRmsprop, kNadam, kAdam };

std::string_view to_string(OptimizerName name);
OptimizerName parse_optimizer(std::string_view text);

struct TrainConfig {
  OptimizerName optimizer = OptimizerName::kAdam;
  double learning_rate = 0.001;
  double decay = 0.0;
  int epochs = 1;
  int batch_size = 16;
  std::uint64_t seed = 0;
  std::string checkpoint_policy = "best-validation-accuracy";

  // Published optimizer settings for each architecture.
  static TrainConfig preset(ModelId id);

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// learning_rate / (1 + decay * epoch).
double decayed_lr(int epoch, const TrainConfig& cfg);

// -sum(mask * log p[label]) / sum(mask). probs: (B, T, 9); labels: (B, T)
// int64; mask: (B, T). Throws ConfigError when the mask is all zero.
torch::Tensor masked_xent(const torch::Tensor& probs, const torch::Tensor& labels, const torch::Tensor& mask);

// Same loss from unnormalised scores, via log-softmax.
torch::Tensor masked_xent_from_logits(const torch::Tensor& logits, const torch::Tensor& labels,
                                      const torch::Tensor& mask);

// Labels of the given records as a (B, max_len) int64 tensor.
torch::Tensor label_tensor(const std::vector<ProteinRecord>& records, const std::vector<std::size_t>& indices);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(double learning_rate) = 0;
  virtual void zero_grad() = 0;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerName name, std::vector<torch::Tensor> parameters);

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  void write_tsv(std::ostream& out) const;
  static void write_tsv_header(std::ostream& out);
  static void write_tsv_row(std::ostream& out, const EpochRecord& record);
};

struct FitOptions {
  // Trim each batch to its longest protein (rounded up to 16 positions).
  bool crop_batches = true;
  bool deterministic = false;
  bool allow_leakage = false;
  // Rescale the global gradient norm to at most this value; 0 disables.
  double clip_grad_norm = 0.0;
  // Appended and flushed after every epoch when set.
  std::filesystem::path history_path;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  TrainHistory history;
  int best_epoch = -1;  // -1: initial weights kept
  double best_val_accuracy = 0.0;
  bool diverged = false;
  std::string message;
};

// Trains in place and leaves the best-validation weights loaded. An empty
// validation set selects on training accuracy. Throws LeakageError if a
// training sequence also occurs in validation, unless allowed.
FitResult fit(ModelHandle& model, const std::vector<ProteinRecord>& train, const std::vector<ProteinRecord>& validation,
              const TrainConfig& cfg, const FitOptions& options = {});

// Length the batch is trimmed to: the longest protein rounded up to 16.
std::int64_t crop_length(const std::vector<ProteinRecord>& records, const std::vector<std::size_t>& indices);

// Eval-mode probabilities for every record, (N, max_len, 9). Padding rows are
// the noSeq one-hot.
ProbTensor predict_probs(const ModelHandle& model, const std::vector<ProteinRecord>& records, int batch_size = 32);

// Masked mean loss and Q8 accuracy over a dataset, in eval mode.
struct DatasetScore {
  double loss = 0.0;
  double accuracy = 0.0;
};
DatasetScore score_dataset(const ModelHandle& model, const std::vector<ProteinRecord>& records, int batch_size = 32);

// Checkpoint directory layout: weights.pt (libtorch named-tensor archive) and
// manifest.json (model id, ArchConfig, seed, layer list, extra fields).
void save_checkpoint(const std::filesystem::path& dir, const ModelHandle& model, const nlohmann::json& extra = {});
// Rebuilds the model from the manifest and verifies the layer list before
// loading weights. Throws FormatError on a structural mismatch.
ModelHandle load_checkpoint(const std::filesystem::path& dir, nlohmann::json* manifest = nullptr);

nlohmann::json layer_manifest(const ModelHandle& model);

}  // namespace ssp
