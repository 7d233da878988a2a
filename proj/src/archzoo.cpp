#include "ssp/archzoo.hpp"

#include <algorithm>
#include <optional>

#include "ssp/errors.hpp"

namespace ssp {

namespace F = torch::nn::functional;
using torch::Tensor;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AttentionLstmParams, bilstm_units, lstm_units, lstm_layers, fc_units)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UNetParams, depth, base_filters, kernel)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GruConvParams, kernels, filters, cascade, cascade_kernel, gru_units,
                                                dropout, recurrent_l2, fc_units)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TcnParams, dense_units, gru_units, blocks, kernel, filters,
                                                share_embeddings)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(WindowMixParams, decay, dense_units, kernels, filters, gru_units,
                                                gru_layers, fc_units)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ConvBiLstmParams, filters, first_kernels, second_kernels, lstm_units)

namespace {

constexpr std::int64_t kClasses = LabelVocab::kSize;

const char* section_name(ModelId id) {
  switch (id) {
    case ModelId::kA: return "attention";
    case ModelId::kB: return "unet";
    case ModelId::kC: return "gru_conv";
    case ModelId::kD: return "tcn";
    case ModelId::kE: return "window_mix";
    case ModelId::kF: return "conv_bilstm";
  }
  return "";
}

void require_model(const ArchConfig& cfg, ModelId expected) {
  if (cfg.model_id != expected) {
    throw ConfigError(std::string("builder for model ") + model_letter(expected) + " received config for model " +
                      model_letter(cfg.model_id));
  }
  cfg.validate();
}

void require_positive(std::int64_t v, const char* what) {
  if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
}

void require_odd_kernel(std::int64_t k, const char* what) {
  if (k <= 0 || k % 2 == 0) throw ConfigError(std::string(what) + " kernels must be odd and positive");
}

Tensor masked(const Tensor& x, const Tensor& mask) { return x * mask.unsqueeze(-1); }

// Conv1d with symmetric "same" padding, applied to (B, T, C) tensors.
torch::nn::Conv1d same_conv(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t dilation = 1) {
  return torch::nn::Conv1d(
      torch::nn::Conv1dOptions(in, out, kernel).padding(dilation * (kernel - 1) / 2).dilation(dilation));
}

Tensor conv_time(torch::nn::Conv1d conv, const Tensor& x) {
  return conv->forward(x.transpose(1, 2)).transpose(1, 2);
}

Tensor bn_time(torch::nn::BatchNorm1d bn, const Tensor& x) {
  return bn->forward(x.transpose(1, 2)).transpose(1, 2);
}

Tensor profile_of(const ModelInputs& in) { return in.features.slice(2, kProfileOffset, kProfileOffset + 22); }
Tensor onehot_of(const ModelInputs& in) { return in.features.slice(2, 0, ResidueVocab::kSize); }

void check_steps(const ModelInputs& in, const Tensor& t, const char* what) {
  if (!t.defined()) throw ShapeError(std::string("model input '") + what + "' is missing");
  if (t.size(0) != in.batch() || t.size(1) != in.steps()) {
    throw ShapeError(std::string("model input '") + what + "' disagrees with the mask in batch or length");
  }
}

struct RecurrentOut {
  Tensor output;  // (B, T, H * directions), zero at padding
  Tensor h;       // (layers * directions, B, H) at each sequence's true end
  Tensor c;       // LSTM only
};

torch::nn::utils::rnn::PackedSequence pack(const Tensor& x, const Tensor& lengths) {
  return torch::nn::utils::rnn::pack_padded_sequence(x, lengths, /*batch_first=*/true, /*enforce_sorted=*/false);
}

Tensor unpack(const torch::nn::utils::rnn::PackedSequence& packed, std::int64_t steps) {
  return std::get<0>(torch::nn::utils::rnn::pad_packed_sequence(packed, /*batch_first=*/true, 0.0, steps));
}

RecurrentOut run_lstm(torch::nn::LSTM lstm, const Tensor& x, const Tensor& lengths,
                      std::optional<std::tuple<Tensor, Tensor>> init = std::nullopt) {
  auto [out, state] = lstm->forward_with_packed_input(pack(x, lengths), init);
  return {unpack(out, x.size(1)), std::get<0>(state), std::get<1>(state)};
}

RecurrentOut run_gru(torch::nn::GRU gru, const Tensor& x, const Tensor& lengths) {
  auto [out, h] = gru->forward_with_packed_input(pack(x, lengths));
  return {unpack(out, x.size(1)), h, {}};
}

torch::nn::LSTM make_lstm(std::int64_t in, std::int64_t hidden, bool bidirectional) {
  return torch::nn::LSTM(torch::nn::LSTMOptions(in, hidden).batch_first(true).bidirectional(bidirectional));
}

torch::nn::GRU make_gru(std::int64_t in, std::int64_t hidden) {
  return torch::nn::GRU(torch::nn::GRUOptions(in, hidden).batch_first(true).bidirectional(true));
}

// ---------------------------------------------------------------- Model A

class AttentionLstm : public SequenceModel {
 public:
  explicit AttentionLstm(const ArchConfig& cfg) : p_(cfg.attention) {
    embed_ = register_module("bigram_embedding", torch::nn::Embedding(kBigramVocab, cfg.embedding_dim));
    bilstm_ = register_module("bilstm", make_lstm(cfg.embedding_dim + 22, p_.bilstm_units, true));
    for (std::int64_t i = 0; i < p_.lstm_layers; ++i) {
      chain_.push_back(register_module("lstm" + std::to_string(i + 1), make_lstm(p_.lstm_units, p_.lstm_units, false)));
    }
    fc1_ = register_module("fc1", torch::nn::Linear(p_.lstm_units, p_.fc_units));
    fc2_ = register_module("fc2", torch::nn::Linear(p_.fc_units, kClasses));
    dropout_ = cfg.dropout;
  }

  Tensor logits(const ModelInputs& in) override {
    check_steps(in, in.features, "features");
    check_steps(in, in.bigrams, "bigrams");
    Tensor x = masked(torch::cat({embed_->forward(in.bigrams), profile_of(in)}, -1), in.mask);

    std::vector<Tensor> layers;
    RecurrentOut first = run_lstm(bilstm_, x, in.lengths);
    layers.push_back(first.output);
    // The forward and backward final states concatenate to the chain width.
    Tensor h = torch::cat({first.h[0], first.h[1]}, -1).unsqueeze(0);
    Tensor c = torch::cat({first.c[0], first.c[1]}, -1).unsqueeze(0);
    for (auto& lstm : chain_) {
      RecurrentOut next = run_lstm(lstm, layers.back(), in.lengths, std::make_tuple(h, c));
      layers.push_back(next.output);
      h = next.h;
      c = next.c;
    }

    Tensor summed = torch::zeros_like(layers.front());
    for (std::size_t earlier = 0; earlier < layers.size(); ++earlier) {
      for (std::size_t later = earlier + 1; later < layers.size(); ++later) {
        summed = summed + luong_attention(layers[later], layers[earlier], layers[earlier], in.mask).context;
      }
    }
    Tensor hidden = F::dropout(torch::relu(fc1_->forward(masked(summed, in.mask))),
                               F::DropoutFuncOptions().p(dropout_).training(is_training()));
    return fc2_->forward(hidden);
  }

 private:
  AttentionLstmParams p_;
  double dropout_;
  torch::nn::Embedding embed_{nullptr};
  torch::nn::LSTM bilstm_{nullptr};
  std::vector<torch::nn::LSTM> chain_;
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};

// ---------------------------------------------------------------- Model B

// conv -> BN -> ReLU, twice, then dropout; padding re-zeroed after each stage.
class UNetBlockImpl : public torch::nn::Module {
 public:
  UNetBlockImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, double dropout) : dropout_(dropout) {
    conv1_ = register_module("conv1", same_conv(in, out, kernel));
    bn1_ = register_module("bn1", torch::nn::BatchNorm1d(out));
    conv2_ = register_module("conv2", same_conv(out, out, kernel));
    bn2_ = register_module("bn2", torch::nn::BatchNorm1d(out));
  }

  Tensor forward(const Tensor& x, const Tensor& mask) {
    Tensor h = masked(torch::relu(bn_time(bn1_, conv_time(conv1_, x))), mask);
    h = masked(torch::relu(bn_time(bn2_, conv_time(conv2_, h))), mask);
    return F::dropout(h, F::DropoutFuncOptions().p(dropout_).training(is_training()));
  }

 private:
  double dropout_;
  torch::nn::Conv1d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::BatchNorm1d bn1_{nullptr}, bn2_{nullptr};
};
TORCH_MODULE(UNetBlock);

Tensor pool_time(const Tensor& x) {
  return F::max_pool1d(x.transpose(1, 2), F::MaxPool1dFuncOptions(2)).transpose(1, 2);
}

class UNet : public SequenceModel {
 public:
  explicit UNet(const ArchConfig& cfg) : p_(cfg.unet) {
    embed_ = register_module("residue_embedding", torch::nn::Embedding(ResidueVocab::kSize, cfg.embedding_dim));
    std::int64_t in = cfg.embedding_dim + 22;
    for (std::int64_t level = 0; level < p_.depth; ++level) {
      const std::int64_t width = p_.base_filters << level;
      down_.push_back(register_module("down" + std::to_string(level), UNetBlock(in, width, p_.kernel, cfg.dropout)));
      in = width;
    }
    bottom_ = register_module("bottom", UNetBlock(in, p_.base_filters << p_.depth, p_.kernel, cfg.dropout));
    in = p_.base_filters << p_.depth;
    for (std::int64_t level = p_.depth - 1; level >= 0; --level) {
      const std::int64_t width = p_.base_filters << level;
      up_.push_back(register_module("up" + std::to_string(level), UNetBlock(in + width, width, p_.kernel, cfg.dropout)));
      in = width;
    }
    head_ = register_module("head", torch::nn::Conv1d(torch::nn::Conv1dOptions(in, kClasses, 1)));
  }

  Tensor logits(const ModelInputs& in) override {
    check_steps(in, in.features, "features");
    check_steps(in, in.residues, "residues");
    const std::int64_t steps = in.steps();
    const std::int64_t multiple = std::int64_t{1} << p_.depth;
    const std::int64_t padded = (steps + multiple - 1) / multiple * multiple;

    Tensor mask = in.mask;
    Tensor x = masked(torch::cat({embed_->forward(in.residues), profile_of(in)}, -1), mask);
    if (padded != steps) {
      x = F::pad(x, F::PadFuncOptions({0, 0, 0, padded - steps}));
      mask = F::pad(mask, F::PadFuncOptions({0, padded - steps}));
    }

    std::vector<Tensor> skips;
    std::vector<Tensor> masks;
    for (auto& block : down_) {
      x = block->forward(x, mask);
      skips.push_back(x);
      masks.push_back(mask);
      x = pool_time(x);
      mask = pool_time(mask.unsqueeze(-1)).squeeze(-1);
    }
    x = bottom_->forward(x, mask);
    for (std::size_t i = 0; i < up_.size(); ++i) {
      const std::size_t level = skips.size() - 1 - i;
      x = x.repeat_interleave(2, 1);
      x = up_[i]->forward(torch::cat({x, skips[level]}, -1), masks[level]);
    }
    Tensor out = conv_time(head_, x);
    return out.slice(1, 0, steps);
  }

 private:
  UNetParams p_;
  torch::nn::Embedding embed_{nullptr};
  std::vector<UNetBlock> down_;
  UNetBlock bottom_{nullptr};
  std::vector<UNetBlock> up_;
  torch::nn::Conv1d head_{nullptr};
};

// ---------------------------------------------------------------- Model C

class GruConv : public SequenceModel {
 public:
  explicit GruConv(const ArchConfig& cfg) : p_(cfg.gru_conv) {
    embed_ = register_module("residue_embedding", torch::nn::Embedding(ResidueVocab::kSize, cfg.embedding_dim));
    const std::int64_t in = 22 + cfg.embedding_dim + 22;
    for (auto k : p_.kernels) {
      multiscale_.push_back(register_module("multiscale_k" + std::to_string(k), same_conv(in, p_.filters, k)));
    }
    std::int64_t cascade_in = p_.filters * static_cast<std::int64_t>(p_.kernels.size());
    for (std::int64_t i = 0; i < p_.cascade; ++i) {
      cascade_.push_back(register_module("cascade" + std::to_string(i), same_conv(cascade_in, p_.filters, p_.cascade_kernel)));
      cascade_bn_.push_back(register_module("cascade_bn" + std::to_string(i), torch::nn::BatchNorm1d(p_.filters)));
      cascade_in += p_.filters;
    }
    gru_ = register_module("bigru", make_gru(p_.filters * p_.cascade, p_.gru_units));
    std::int64_t width = 2 * p_.gru_units;
    for (std::size_t i = 0; i < p_.fc_units.size(); ++i) {
      fc_.push_back(register_module("fc" + std::to_string(i + 1), torch::nn::Linear(width, p_.fc_units[i])));
      width = p_.fc_units[i];
    }
    out_ = register_module("out", torch::nn::Linear(width, kClasses));
  }

  Tensor logits(const ModelInputs& in) override {
    check_steps(in, in.features, "features");
    check_steps(in, in.residues, "residues");
    Tensor x = masked(torch::cat({onehot_of(in), embed_->forward(in.residues), profile_of(in)}, -1), in.mask);

    std::vector<Tensor> scales;
    for (auto& conv : multiscale_) scales.push_back(masked(torch::relu(conv_time(conv, x)), in.mask));
    std::vector<Tensor> features = {torch::cat(scales, -1)};
    std::vector<Tensor> cascade_out;
    for (std::size_t i = 0; i < cascade_.size(); ++i) {
      Tensor h = torch::relu(conv_time(cascade_[i], torch::cat(features, -1)));
      h = masked(bn_time(cascade_bn_[i], h), in.mask);
      h = F::dropout(h, F::DropoutFuncOptions().p(p_.dropout).training(is_training()));
      features.push_back(h);
      cascade_out.push_back(h);
    }
    Tensor h = run_gru(gru_, torch::cat(cascade_out, -1), in.lengths).output;
    for (auto& fc : fc_) h = torch::relu(fc->forward(h));
    return out_->forward(h);
  }

  Tensor regularization() const override {
    Tensor penalty = torch::zeros({}, gru_->all_weights().front().options());
    if (p_.recurrent_l2 == 0.0) return penalty;
    for (const auto& item : gru_->named_parameters()) {
      if (item.key().starts_with("weight_hh")) penalty = penalty + item.value().pow(2).sum();
    }
    return p_.recurrent_l2 * penalty;
  }

 private:
  GruConvParams p_;
  torch::nn::Embedding embed_{nullptr};
  std::vector<torch::nn::Conv1d> multiscale_;
  std::vector<torch::nn::Conv1d> cascade_;
  std::vector<torch::nn::BatchNorm1d> cascade_bn_;
  torch::nn::GRU gru_{nullptr};
  std::vector<torch::nn::Linear> fc_;
  torch::nn::Linear out_{nullptr};
};

// ---------------------------------------------------------------- Model D

class Tcn : public SequenceModel {
 public:
  explicit Tcn(const ArchConfig& cfg) : p_(cfg.tcn), dropout_(cfg.dropout) {
    embed_dense_ = register_module("bigram_embedding_dense", torch::nn::Embedding(kBigramVocab, cfg.embedding_dim));
    if (!p_.share_embeddings) {
      embed_gru_ = register_module("bigram_embedding_gru", torch::nn::Embedding(kBigramVocab, cfg.embedding_dim));
    }
    const std::int64_t in = cfg.embedding_dim + 22;
    dense_branch_ = register_module("dense_branch", torch::nn::Linear(in, p_.dense_units));
    gru1_ = register_module("bigru1", make_gru(in, p_.gru_units));
    gru2_ = register_module("bigru2", make_gru(2 * p_.gru_units, p_.gru_units));
    merge_ = register_module("merge", torch::nn::Linear(p_.dense_units + 2 * p_.gru_units, p_.filters));
    stack_ = register_module("tcn", TemporalBlockStack(p_.filters, p_.kernel, p_.blocks, cfg.dropout));
    out_ = register_module("out", torch::nn::Linear(p_.filters, kClasses));
  }

  Tensor logits(const ModelInputs& in) override {
    check_steps(in, in.features, "features");
    check_steps(in, in.bigrams, "bigrams");
    const Tensor profile = profile_of(in);
    auto& second = p_.share_embeddings ? embed_dense_ : embed_gru_;
    Tensor x1 = masked(torch::cat({embed_dense_->forward(in.bigrams), profile}, -1), in.mask);
    Tensor x2 = masked(torch::cat({second->forward(in.bigrams), profile}, -1), in.mask);

    Tensor a = drop(torch::relu(dense_branch_->forward(x1)));
    Tensor b = run_gru(gru1_, x2, in.lengths).output;
    b = run_gru(gru2_, b, in.lengths).output;
    Tensor h = masked(drop(torch::relu(merge_->forward(torch::cat({a, b}, -1)))), in.mask);
    h = stack_->forward(h, in.mask);
    return out_->forward(h);
  }

  TemporalBlockStack stack() const { return stack_; }

 private:
  Tensor drop(const Tensor& x) { return F::dropout(x, F::DropoutFuncOptions().p(dropout_).training(is_training())); }

  TcnParams p_;
  double dropout_;
  torch::nn::Embedding embed_dense_{nullptr};
  torch::nn::Embedding embed_gru_{nullptr};
  torch::nn::Linear dense_branch_{nullptr};
  torch::nn::GRU gru1_{nullptr}, gru2_{nullptr};
  torch::nn::Linear merge_{nullptr};
  TemporalBlockStack stack_{nullptr};
  torch::nn::Linear out_{nullptr};
};

// ---------------------------------------------------------------- Model E

class BiGruWindowMix : public SequenceModel {
 public:
  explicit BiGruWindowMix(const ArchConfig& cfg) : p_(cfg.window_mix), dropout_(cfg.dropout) {
    dense_ = register_module("dense", torch::nn::Linear(4 * ResidueVocab::kSize, p_.dense_units));
    for (auto k : p_.kernels) {
      convs_.push_back(register_module("conv_k" + std::to_string(k), same_conv(p_.dense_units, p_.filters, k)));
      bns_.push_back(register_module("bn_k" + std::to_string(k), torch::nn::BatchNorm1d(p_.filters)));
    }
    const std::int64_t conv_width = p_.filters * static_cast<std::int64_t>(p_.kernels.size());
    std::int64_t in = conv_width;
    for (std::int64_t i = 0; i < p_.gru_layers; ++i) {
      grus_.push_back(register_module("bigru" + std::to_string(i + 1), make_gru(in, p_.gru_units)));
      in = 2 * p_.gru_units;
    }
    fc_ = register_module("fc", torch::nn::Linear(conv_width + p_.gru_layers * 2 * p_.gru_units, p_.fc_units));
    out_ = register_module("out", torch::nn::Linear(p_.fc_units, kClasses));
  }

  Tensor logits(const ModelInputs& in) override {
    check_steps(in, in.features, "features");
    check_steps(in, in.preceding, "preceding");
    check_steps(in, in.following, "following");
    Tensor x = torch::cat({in.preceding, in.following, onehot_of(in), profile_of(in)}, -1);
    x = masked(torch::relu(dense_->forward(masked(x, in.mask))), in.mask);

    std::vector<Tensor> conv_out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      conv_out.push_back(masked(bn_time(bns_[i], torch::relu(conv_time(convs_[i], x))), in.mask));
    }
    Tensor conv = torch::cat(conv_out, -1);
    std::vector<Tensor> parts;
    Tensor h = conv;
    for (auto& gru : grus_) {
      h = run_gru(gru, h, in.lengths).output;
      parts.push_back(h);
    }
    parts.push_back(conv);
    Tensor merged = F::dropout(torch::cat(parts, -1), F::DropoutFuncOptions().p(dropout_).training(is_training()));
    return out_->forward(torch::relu(fc_->forward(merged)));
  }

 private:
  WindowMixParams p_;
  double dropout_;
  torch::nn::Linear dense_{nullptr};
  std::vector<torch::nn::Conv1d> convs_;
  std::vector<torch::nn::BatchNorm1d> bns_;
  std::vector<torch::nn::GRU> grus_;
  torch::nn::Linear fc_{nullptr};
  torch::nn::Linear out_{nullptr};
};

// ---------------------------------------------------------------- Model F

class ConvBiLstm : public SequenceModel {
 public:
  explicit ConvBiLstm(const ArchConfig& cfg) : p_(cfg.conv_bilstm), dropout_(cfg.dropout) {
    std::int64_t width = kFeatureWidth;
    for (auto k : p_.first_kernels) {
      first_.push_back(register_module("conv_a_k" + std::to_string(k), same_conv(width, p_.filters, k)));
    }
    width += p_.filters * static_cast<std::int64_t>(p_.first_kernels.size());
    for (auto k : p_.second_kernels) {
      second_.push_back(register_module("conv_b_k" + std::to_string(k), same_conv(width, p_.filters, k)));
    }
    width += p_.filters * static_cast<std::int64_t>(p_.second_kernels.size());
    lstm_ = register_module("bilstm", make_lstm(width, p_.lstm_units, true));
    out_ = register_module("out", torch::nn::Linear(2 * p_.lstm_units, kClasses));
  }

  Tensor concat_features(const ModelInputs& in) {
    check_steps(in, in.features, "features");
    Tensor x = masked(in.features, in.mask);
    Tensor skip = ablate_ ? torch::zeros_like(x) : x;
    std::vector<Tensor> parts = {skip};
    for (auto& conv : first_) parts.push_back(masked(torch::relu(conv_time(conv, x)), in.mask));
    Tensor c1 = torch::cat(parts, -1);
    Tensor c1_skip = ablate_ ? torch::zeros_like(c1) : c1;
    parts = {c1_skip};
    for (auto& conv : second_) parts.push_back(masked(torch::relu(conv_time(conv, c1)), in.mask));
    return torch::cat(parts, -1);
  }

  Tensor logits(const ModelInputs& in) override {
    Tensor c2 = concat_features(in);
    Tensor h = run_lstm(lstm_, c2, in.lengths).output;
    h = F::dropout(h, F::DropoutFuncOptions().p(dropout_).training(is_training()));
    return out_->forward(h);
  }

  void set_ablation(bool ablate) { ablate_ = ablate; }

 private:
  ConvBiLstmParams p_;
  double dropout_;
  bool ablate_ = false;
  std::vector<torch::nn::Conv1d> first_;
  std::vector<torch::nn::Conv1d> second_;
  torch::nn::LSTM lstm_{nullptr};
  torch::nn::Linear out_{nullptr};
};

template <typename Model>
ModelHandle make_handle(const ArchConfig& cfg, InputSignature signature) {
  torch::manual_seed(static_cast<std::uint64_t>(cfg.seed));
  ModelHandle h;
  h.module = std::make_shared<Model>(cfg);
  h.config = cfg;
  h.signature = signature;
  h.module->eval();
  return h;
}

}  // namespace

// ---------------------------------------------------------------- config

char model_letter(ModelId id) { return static_cast<char>('A' + static_cast<int>(id)); }

std::string_view model_name(ModelId id) {
  switch (id) {
    case ModelId::kA: return "attention-lstm";
    case ModelId::kB: return "unet";
    case ModelId::kC: return "gru-conv";
    case ModelId::kD: return "tcn";
    case ModelId::kE: return "bigru-windowmix";
    case ModelId::kF: return "conv-bilstm";
  }
  return "";
}

ModelId parse_model_id(std::string_view text) {
  if (text.size() == 1) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    if (c >= 'A' && c <= 'F') return static_cast<ModelId>(c - 'A');
  }
  for (auto id : kAllModels) {
    if (model_name(id) == text) return id;
  }
  throw ConfigError("unknown model '" + std::string(text) + "' (expected A-F)");
}

ArchConfig ArchConfig::defaults(ModelId id) {
  ArchConfig cfg;
  cfg.model_id = id;
  return cfg;
}

ArchConfig ArchConfig::reduced(ModelId id) {
  ArchConfig cfg = defaults(id);
  cfg.embedding_dim = 16;
  cfg.attention = {16, 32, 4, 32};
  cfg.unet.base_filters = 8;
  cfg.gru_conv.filters = 16;
  cfg.gru_conv.gru_units = 32;
  cfg.gru_conv.fc_units = {32, 16};
  cfg.tcn.dense_units = 32;
  cfg.tcn.gru_units = 16;
  cfg.tcn.filters = 32;
  cfg.window_mix.dense_units = 32;
  cfg.window_mix.filters = 16;
  cfg.window_mix.gru_units = 16;
  cfg.window_mix.fc_units = 32;
  cfg.conv_bilstm.filters = 16;
  cfg.conv_bilstm.lstm_units = 32;
  return cfg;
}

void ArchConfig::validate() const {
  require_positive(embedding_dim, "embedding_dim");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  switch (model_id) {
    case ModelId::kA:
      require_positive(attention.bilstm_units, "attention.bilstm_units");
      require_positive(attention.lstm_layers, "attention.lstm_layers");
      require_positive(attention.fc_units, "attention.fc_units");
      if (attention.lstm_units != 2 * attention.bilstm_units) {
        throw ConfigError("attention.lstm_units must equal 2 * bilstm_units (its initial state is the bidirectional "
                          "layer's concatenated final state)");
      }
      break;
    case ModelId::kB:
      require_positive(unet.depth, "unet.depth");
      require_positive(unet.base_filters, "unet.base_filters");
      require_odd_kernel(unet.kernel, "unet");
      break;
    case ModelId::kC:
      if (gru_conv.kernels.empty()) throw ConfigError("gru_conv.kernels must not be empty");
      for (auto k : gru_conv.kernels) require_odd_kernel(k, "gru_conv");
      require_odd_kernel(gru_conv.cascade_kernel, "gru_conv cascade");
      require_positive(gru_conv.cascade, "gru_conv.cascade");
      require_positive(gru_conv.filters, "gru_conv.filters");
      require_positive(gru_conv.gru_units, "gru_conv.gru_units");
      if (gru_conv.recurrent_l2 < 0.0) throw ConfigError("gru_conv.recurrent_l2 must be non-negative");
      if (gru_conv.dropout < 0.0 || gru_conv.dropout >= 1.0) throw ConfigError("gru_conv.dropout must lie in [0, 1)");
      break;
    case ModelId::kD:
      require_odd_kernel(tcn.kernel, "tcn");
      require_positive(tcn.blocks, "tcn.blocks");
      require_positive(tcn.filters, "tcn.filters");
      require_positive(tcn.gru_units, "tcn.gru_units");
      require_positive(tcn.dense_units, "tcn.dense_units");
      break;
    case ModelId::kE:
      if (!(window_mix.decay > 0.0 && window_mix.decay <= 1.0)) throw ConfigError("window_mix.decay must lie in (0, 1]");
      if (window_mix.kernels.empty()) throw ConfigError("window_mix.kernels must not be empty");
      for (auto k : window_mix.kernels) require_odd_kernel(k, "window_mix");
      require_positive(window_mix.gru_layers, "window_mix.gru_layers");
      require_positive(window_mix.gru_units, "window_mix.gru_units");
      break;
    case ModelId::kF:
      for (auto k : conv_bilstm.first_kernels) require_odd_kernel(k, "conv_bilstm");
      for (auto k : conv_bilstm.second_kernels) require_odd_kernel(k, "conv_bilstm");
      require_positive(conv_bilstm.filters, "conv_bilstm.filters");
      require_positive(conv_bilstm.lstm_units, "conv_bilstm.lstm_units");
      break;
  }
}

std::vector<std::string> ArchConfig::departures() const {
  const nlohmann::json mine = *this;
  const nlohmann::json base = defaults(model_id);
  std::vector<std::string> out;
  for (const char* key : {"embedding_dim", "dropout"}) {
    if (mine[key] != base[key]) out.push_back(std::string(key) + ": " + base[key].dump() + " -> " + mine[key].dump());
  }
  const char* section = section_name(model_id);
  for (const auto& [key, value] : mine[section].items()) {
    if (value != base[section][key]) {
      out.push_back(std::string(section) + "." + key + ": " + base[section][key].dump() + " -> " + value.dump());
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const ArchConfig& cfg) {
  j = {{"model_id", std::string(1, model_letter(cfg.model_id))},
       {"seed", cfg.seed},
       {"embedding_dim", cfg.embedding_dim},
       {"dropout", cfg.dropout},
       {"attention", cfg.attention},
       {"unet", cfg.unet},
       {"gru_conv", cfg.gru_conv},
       {"tcn", cfg.tcn},
       {"window_mix", cfg.window_mix},
       {"conv_bilstm", cfg.conv_bilstm}};
}

void from_json(const nlohmann::json& j, ArchConfig& cfg) {
  cfg = ArchConfig::defaults(parse_model_id(j.at("model_id").get<std::string>()));
  cfg.seed = j.value("seed", cfg.seed);
  cfg.embedding_dim = j.value("embedding_dim", cfg.embedding_dim);
  cfg.dropout = j.value("dropout", cfg.dropout);
  cfg.attention = j.value("attention", cfg.attention);
  cfg.unet = j.value("unet", cfg.unet);
  cfg.gru_conv = j.value("gru_conv", cfg.gru_conv);
  cfg.tcn = j.value("tcn", cfg.tcn);
  cfg.window_mix = j.value("window_mix", cfg.window_mix);
  cfg.conv_bilstm = j.value("conv_bilstm", cfg.conv_bilstm);
}

// ---------------------------------------------------------------- inputs

ModelInputs ModelInputs::to(torch::Dtype dtype) const {
  ModelInputs out = *this;
  for (Tensor* t : {&out.features, &out.preceding, &out.following, &out.mask}) {
    if (t->defined()) *t = t->to(dtype);
  }
  return out;
}

ModelInputs ModelInputs::crop(std::int64_t steps) const {
  ModelInputs out = *this;
  for (Tensor* t : {&out.features, &out.residues, &out.bigrams, &out.preceding, &out.following, &out.mask}) {
    if (t->defined()) *t = t->slice(1, 0, steps);
  }
  return out;
}

ModelInputs make_inputs(const std::vector<ProteinRecord>& records, const std::vector<std::size_t>& indices,
                        const InputSignature& signature, double window_decay) {
  std::vector<ProteinRecord> batch;
  batch.reserve(indices.size());
  for (auto i : indices) batch.push_back(records.at(i));
  return make_inputs(batch, signature, window_decay);
}

ModelInputs make_inputs(const std::vector<ProteinRecord>& records, const InputSignature& signature,
                        double window_decay) {
  if (records.empty()) throw ShapeError("make_inputs: empty batch");
  const auto n = static_cast<std::int64_t>(records.size());
  const std::int64_t steps = records.front().max_len;
  ModelInputs in;

  // Features are cheap and carry the profile every model reads.
  FeatureTensor features = encode_features(records);
  in.features = torch::from_blob(features.values.data(), {n, steps, kFeatureWidth}, torch::kFloat32).clone();
  in.mask = torch::from_blob(features.mask.data(), {n, steps}, torch::kUInt8).to(torch::kFloat32);

  std::vector<std::int64_t> residues;
  std::vector<std::int64_t> lengths;
  residues.reserve(static_cast<std::size_t>(n * steps));
  for (const auto& r : records) {
    residues.insert(residues.end(), r.residues.begin(), r.residues.end());
    lengths.push_back(r.length);
  }
  in.residues = torch::tensor(residues, torch::kInt64).view({n, steps});
  in.lengths = torch::tensor(lengths, torch::kInt64);

  if (signature.bigrams) {
    BigramStream bigrams = make_bigrams(records);
    in.bigrams = torch::from_blob(bigrams.tokens.data(), {n, steps}, torch::kInt32).to(torch::kInt64);
  }
  if (signature.window_mix) {
    WindowMixFeatures mix = window_mix(records, window_decay);
    in.preceding = torch::from_blob(mix.preceding.data(), {n, steps, 22}, torch::kFloat32).clone();
    in.following = torch::from_blob(mix.following.data(), {n, steps, 22}, torch::kFloat32).clone();
  }
  return in;
}

// ---------------------------------------------------------------- handles

Tensor SequenceModel::regularization() const {
  auto params = parameters();
  return torch::zeros({}, params.empty() ? torch::TensorOptions() : params.front().options());
}

Tensor ModelHandle::forward(const ModelInputs& inputs) const {
  return torch::softmax(module->logits(inputs), -1);
}

std::vector<LayerInfo> ModelHandle::layers() const {
  std::vector<LayerInfo> out;
  for (const auto& item : module->named_parameters()) {
    out.push_back({item.key(), item.value().sizes().vec()});
  }
  for (const auto& item : module->named_buffers()) {
    out.push_back({item.key(), item.value().sizes().vec()});
  }
  return out;
}

std::int64_t ModelHandle::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& p : module->parameters()) total += p.numel();
  return total;
}

AttentionResult luong_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                                const Tensor& key_mask) {
  if (queries.size(-1) != keys.size(-1) || keys.size(1) != values.size(1)) {
    throw ShapeError("attention: query/key widths or key/value lengths disagree");
  }
  Tensor scores = torch::bmm(queries, keys.transpose(1, 2));
  scores = scores.masked_fill(key_mask.unsqueeze(1) == 0, -std::numeric_limits<double>::infinity());
  Tensor weights = torch::softmax(scores, -1);
  return {torch::bmm(weights, values), weights};
}

TemporalBlockStackImpl::TemporalBlockStackImpl(std::int64_t channels, std::int64_t kernel, std::int64_t blocks,
                                               double dropout)
    : kernel_(kernel), blocks_(blocks), dropout_(dropout) {
  for (std::int64_t b = 0; b < blocks; ++b) {
    const std::int64_t dilation = std::int64_t{1} << b;
    for (int half = 0; half < 2; ++half) {
      convs_.push_back(register_module("block" + std::to_string(b) + "_conv" + std::to_string(half + 1),
                                       same_conv(channels, channels, kernel, dilation)));
    }
  }
}

Tensor TemporalBlockStackImpl::forward(const Tensor& x, const Tensor& mask) {
  auto drop = [&](const Tensor& t) {
    return F::dropout(t, F::DropoutFuncOptions().p(dropout_).training(is_training()));
  };
  Tensor h = masked(x, mask);
  for (std::int64_t b = 0; b < blocks_; ++b) {
    Tensor y = masked(drop(torch::relu(conv_time(convs_[static_cast<std::size_t>(2 * b)], h))), mask);
    y = masked(drop(torch::relu(conv_time(convs_[static_cast<std::size_t>(2 * b + 1)], y))), mask);
    h = h + y;
  }
  return h;
}

std::int64_t TemporalBlockStackImpl::receptive_field() const {
  std::int64_t rf = 1;
  for (std::int64_t b = 0; b < blocks_; ++b) rf += 2 * (std::int64_t{1} << b) * (kernel_ - 1);
  return rf;
}

ModelHandle build_attention_lstm(const ArchConfig& cfg) {
  require_model(cfg, ModelId::kA);
  return make_handle<AttentionLstm>(cfg, {.features = true, .bigrams = true});
}

ModelHandle build_unet(const ArchConfig& cfg) {
  require_model(cfg, ModelId::kB);
  return make_handle<UNet>(cfg, {.features = true});
}

ModelHandle build_gru_conv(const ArchConfig& cfg) {
  require_model(cfg, ModelId::kC);
  return make_handle<GruConv>(cfg, {.features = true});
}

ModelHandle build_tcn(const ArchConfig& cfg) {
  require_model(cfg, ModelId::kD);
  return make_handle<Tcn>(cfg, {.features = true, .bigrams = true});
}

ModelHandle build_bigru_windowmix(const ArchConfig& cfg) {
  require_model(cfg, ModelId::kE);
  return make_handle<BiGruWindowMix>(cfg, {.features = true, .window_mix = true});
}

ModelHandle build_conv_bilstm(const ArchConfig& cfg) {
  require_model(cfg, ModelId::kF);
  return make_handle<ConvBiLstm>(cfg, {.features = true});
}

ModelHandle build_model(const ArchConfig& cfg) {
  switch (cfg.model_id) {
    case ModelId::kA: return build_attention_lstm(cfg);
    case ModelId::kB: return build_unet(cfg);
    case ModelId::kC: return build_gru_conv(cfg);
    case ModelId::kD: return build_tcn(cfg);
    case ModelId::kE: return build_bigru_windowmix(cfg);
    case ModelId::kF: return build_conv_bilstm(cfg);
  }
  throw ConfigError("unknown model id");
}

TemporalBlockStack tcn_stack(const ModelHandle& handle) {
  auto tcn = std::dynamic_pointer_cast<Tcn>(handle.module);
  if (!tcn) throw ConfigError("tcn_stack: handle is not Model D");
  return tcn->stack();
}

Tensor conv_bilstm_concat(const ModelHandle& handle, const ModelInputs& inputs) {
  auto model = std::dynamic_pointer_cast<ConvBiLstm>(handle.module);
  if (!model) throw ConfigError("conv_bilstm_concat: handle is not Model F");
  return model->concat_features(inputs);
}

void set_conv_bilstm_skip_ablation(const ModelHandle& handle, bool ablate) {
  auto model = std::dynamic_pointer_cast<ConvBiLstm>(handle.module);
  if (!model) throw ConfigError("set_conv_bilstm_skip_ablation: handle is not Model F");
  model->set_ablation(ablate);
}

}  // namespace ssp
