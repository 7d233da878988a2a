#pragma once

// The six sequence-labelling architectures, built on libtorch. Every model
// maps a batch of encoded proteins to per-residue distributions over the
// nine label tokens.
//
// Models accept any sequence length T; padded positions are zeroed at the
// entry and after every position-mixing layer, and recurrent layers run on
// packed sequences, so predictions at real positions never depend on the
// content of padding.

#include <torch/torch.h>

#include <array>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ssp/data_ingest.hpp"
#include "ssp/featurize.hpp"

namespace ssp {

enum class ModelId { kA, kB, kC, kD, kE, kF };

inline constexpr std::array<ModelId, 6> kAllModels = {ModelId::kA, ModelId::kB, ModelId::kC,
                                                      ModelId::kD, ModelId::kE, ModelId::kF};

char model_letter(ModelId id);
std::string_view model_name(ModelId id);
ModelId parse_model_id(std::string_view text);  // "A".."F" or a model name

struct AttentionLstmParams {
  std::int64_t bilstm_units = 75;  // per direction
  std::int64_t lstm_units = 150;   // must equal 2 * bilstm_units
  std::int64_t lstm_layers = 4;
  std::int64_t fc_units = 128;
};

struct UNetParams {
  std::int64_t depth = 4;
  std::int64_t base_filters = 64;
  std::int64_t kernel = 3;
};

struct GruConvParams {
  std::vector<std::int64_t> kernels = {3, 5, 7};
  std::int64_t filters = 64;
  std::int64_t cascade = 3;
  std::int64_t cascade_kernel = 3;
  std::int64_t gru_units = 256;
  double dropout = 0.5;
  double recurrent_l2 = 1e-4;
  std::vector<std::int64_t> fc_units = {128, 64};
};

struct TcnParams {
  std::int64_t dense_units = 128;
  std::int64_t gru_units = 64;
  std::int64_t blocks = 6;  // dilations 1, 2, 4, ...
  std::int64_t kernel = 3;
  std::int64_t filters = 128;
  bool share_embeddings = false;
};

struct WindowMixParams {
  double decay = 0.5;
  std::int64_t dense_units = 128;
  std::vector<std::int64_t> kernels = {3, 7, 11};
  std::int64_t filters = 64;
  std::int64_t gru_units = 32;
  std::int64_t gru_layers = 3;
  std::int64_t fc_units = 128;
};

struct ConvBiLstmParams {
  std::int64_t filters = 64;
  std::vector<std::int64_t> first_kernels = {11, 7};
  std::vector<std::int64_t> second_kernels = {5, 3};
  std::int64_t lstm_units = 64;  // per direction; 128-wide output
};

struct ArchConfig {
  ModelId model_id = ModelId::kA;
  std::int64_t seed = 0;
  std::int64_t embedding_dim = 128;
  double dropout = 0.4;

  AttentionLstmParams attention;
  UNetParams unet;
  GruConvParams gru_conv;
  TcnParams tcn;
  WindowMixParams window_mix;
  ConvBiLstmParams conv_bilstm;

  static ArchConfig defaults(ModelId id);
  // Narrow widths for CPU smoke runs.
  static ArchConfig reduced(ModelId id);

  // Throws ConfigError for inconsistent structural constants.
  void validate() const;

  // "field: default -> value" for every structural constant of this model
  // that differs from the published defaults.
  std::vector<std::string> departures() const;
};

void to_json(nlohmann::json& j, const ArchConfig& cfg);
void from_json(const nlohmann::json& j, ArchConfig& cfg);

struct InputSignature {
  bool features = false;  // FeatureTensor (one-hot, profile, flags)
  bool bigrams = false;
  bool window_mix = false;
};

// One batch of encoded inputs. Unused encodings may be undefined tensors.
struct ModelInputs {
  torch::Tensor features;   // (B, T, 46) float
  torch::Tensor residues;   // (B, T) int64 residue tokens
  torch::Tensor bigrams;    // (B, T) int64
  torch::Tensor preceding;  // (B, T, 22) float
  torch::Tensor following;  // (B, T, 22) float
  torch::Tensor mask;       // (B, T) float
  torch::Tensor lengths;    // (B) int64

  std::int64_t batch() const { return mask.size(0); }
  std::int64_t steps() const { return mask.size(1); }

  ModelInputs to(torch::Dtype dtype) const;
  // Keeps the first `steps` positions.
  ModelInputs crop(std::int64_t steps) const;
};

// Encodes the selected records. Window-mix features are computed only when
// the signature asks for them.
ModelInputs make_inputs(const std::vector<ProteinRecord>& records, const std::vector<std::size_t>& indices,
                        const InputSignature& signature, double window_decay = 0.5);
ModelInputs make_inputs(const std::vector<ProteinRecord>& records, const InputSignature& signature,
                        double window_decay = 0.5);

class SequenceModel : public torch::nn::Module {
 public:
  // Unnormalised scores, (B, T, 9).
  virtual torch::Tensor logits(const ModelInputs& inputs) = 0;
  // Additive penalty folded into the training loss.
  virtual torch::Tensor regularization() const;
};

struct LayerInfo {
  std::string name;
  std::vector<std::int64_t> shape;
};

struct ModelHandle {
  std::shared_ptr<SequenceModel> module;
  ArchConfig config;
  InputSignature signature;

  // Class probabilities, (B, T, 9); every row is on the simplex.
  torch::Tensor forward(const ModelInputs& inputs) const;
  std::vector<LayerInfo> layers() const;
  std::int64_t parameter_count() const;
};

// Multiplicative (unscaled dot-product) attention. Keys with key_mask == 0
// receive zero weight.
struct AttentionResult {
  torch::Tensor context;  // (B, Tq, D)
  torch::Tensor weights;  // (B, Tq, Tk)
};
AttentionResult luong_attention(const torch::Tensor& queries, const torch::Tensor& keys, const torch::Tensor& values,
                                const torch::Tensor& key_mask);

// Residual stack of dilated non-causal convolutions used by Model D.
class TemporalBlockStackImpl : public torch::nn::Module {
 public:
  TemporalBlockStackImpl(std::int64_t channels, std::int64_t kernel, std::int64_t blocks, double dropout);

  // x: (B, T, C); mask: (B, T).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask);

  // 1 + sum over blocks of 2 * dilation * (kernel - 1).
  std::int64_t receptive_field() const;

  std::vector<torch::nn::Conv1d>& convs() { return convs_; }

 private:
  std::int64_t kernel_;
  std::int64_t blocks_;
  double dropout_;
  std::vector<torch::nn::Conv1d> convs_;
};
TORCH_MODULE(TemporalBlockStack);

ModelHandle build_attention_lstm(const ArchConfig& cfg);   // Model A
ModelHandle build_unet(const ArchConfig& cfg);             // Model B
ModelHandle build_gru_conv(const ArchConfig& cfg);         // Model C
ModelHandle build_tcn(const ArchConfig& cfg);              // Model D
ModelHandle build_bigru_windowmix(const ArchConfig& cfg);  // Model E
ModelHandle build_conv_bilstm(const ArchConfig& cfg);      // Model F

// Dispatches on cfg.model_id.
ModelHandle build_model(const ArchConfig& cfg);

// Access to Model D's residual stack and Model F's pre-recurrent features,
// for structural tests.
TemporalBlockStack tcn_stack(const ModelHandle& handle);
torch::Tensor conv_bilstm_concat(const ModelHandle& handle, const ModelInputs& inputs);
void set_conv_bilstm_skip_ablation(const ModelHandle& handle, bool ablate);

}  // namespace ssp
