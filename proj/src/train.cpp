#include "ssp/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "ssp/errors.hpp"

namespace ssp {

using torch::Tensor;

namespace {

// Keras-style Nadam: Adam with Nesterov momentum and the momentum schedule
// mu_t = beta1 * (1 - 0.5 * 0.96^(t * schedule_decay)).
class Nadam : public Optimizer {
 public:
  explicit Nadam(std::vector<Tensor> params) : params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.push_back(torch::zeros_like(p));
      v_.push_back(torch::zeros_like(p));
    }
  }

  void step(double lr) override {
    torch::NoGradGuard no_grad;
    ++t_;
    const double mu_t = kBeta1 * (1.0 - 0.5 * std::pow(0.96, t_ * kScheduleDecay));
    const double mu_next = kBeta1 * (1.0 - 0.5 * std::pow(0.96, (t_ + 1) * kScheduleDecay));
    const double schedule_new = m_schedule_ * mu_t;
    const double schedule_next = schedule_new * mu_next;
    m_schedule_ = schedule_new;
    const double v_correction = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.grad().defined()) continue;
      const Tensor g = p.grad();
      m_[i].mul_(kBeta1).add_(g, 1.0 - kBeta1);
      v_[i].mul_(kBeta2).addcmul_(g, g, 1.0 - kBeta2);
      const Tensor g_prime = g / (1.0 - schedule_new);
      const Tensor m_prime = m_[i] / (1.0 - schedule_next);
      const Tensor v_prime = v_[i] / v_correction;
      const Tensor m_bar = (1.0 - mu_t) * g_prime + mu_next * m_prime;
      p.sub_(lr * m_bar / (v_prime.sqrt() + kEps));
    }
  }

  void zero_grad() override {
    for (auto& p : params_) {
      if (p.grad().defined()) p.grad().zero_();
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-7;
  static constexpr double kScheduleDecay = 0.004;

  std::vector<Tensor> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  double m_schedule_ = 1.0;
  std::int64_t t_ = 0;
};

// Adapts a libtorch optimizer to a per-step learning rate.
template <typename Torch>
class TorchOptimizer : public Optimizer {
 public:
  template <typename Options>
  TorchOptimizer(std::vector<Tensor> params, Options options) : impl_(std::move(params), options) {}

  void step(double lr) override {
    for (auto& group : impl_.param_groups()) group.options().set_lr(lr);
    impl_.step();
  }

  void zero_grad() override { impl_.zero_grad(); }

 private:
  Torch impl_;
};

struct Snapshot {
  std::vector<Tensor> tensors;

  static Snapshot take(const torch::nn::Module& m) {
    Snapshot s;
    for (const auto& p : m.parameters()) s.tensors.push_back(p.detach().clone());
    for (const auto& b : m.buffers()) s.tensors.push_back(b.detach().clone());
    return s;
  }

  void restore(torch::nn::Module& m) const {
    torch::NoGradGuard no_grad;
    std::size_t i = 0;
    for (auto& p : m.parameters()) p.copy_(tensors[i++]);
    for (auto& b : m.buffers()) b.copy_(tensors[i++]);
  }
};

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

double mask_count(const Tensor& mask) { return mask.sum().item<double>(); }

}  // namespace

std::string_view to_string(OptimizerName name) {
  switch (name) {
    case OptimizerName::kRmsprop: return "rmsprop";
    case OptimizerName::kNadam: return "nadam";
    case OptimizerName::kAdam: return "adam";
  }
  return "";
}

OptimizerName parse_optimizer(std::string_view text) {
  if (text == "rmsprop") return OptimizerName::kRmsprop;
  if (text == "nadam") return OptimizerName::kNadam;
  if (text == "adam") return OptimizerName::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected rmsprop, nadam or adam)");
}

TrainConfig TrainConfig::preset(ModelId id) {
  TrainConfig c;
  switch (id) {
    case ModelId::kB: c = {OptimizerName::kRmsprop, 0.002, 0.5, 80, 128}; break;
    case ModelId::kC: c = {OptimizerName::kNadam, 0.002, 0.004, 75, 128}; break;
    case ModelId::kD: c = {OptimizerName::kAdam, 0.001, 0.0001, 5, 16}; break;
    case ModelId::kE: c = {OptimizerName::kNadam, 0.002, 0.004, 10, 64}; break;
    case ModelId::kA: c = {OptimizerName::kRmsprop, 0.003, 0.5, 20, 64}; break;
    case ModelId::kF: c = {OptimizerName::kRmsprop, 0.001, 0.0, 30, 128}; break;
  }
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (decay < 0.0) throw ConfigError("decay must be non-negative");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (checkpoint_policy != "best-validation-accuracy") {
    throw ConfigError("unsupported checkpoint policy '" + checkpoint_policy + "'");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"optimizer", std::string(to_string(c.optimizer))},
       {"learning_rate", c.learning_rate},
       {"decay", c.decay},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"checkpoint_policy", c.checkpoint_policy}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.optimizer = parse_optimizer(j.value("optimizer", std::string(to_string(d.optimizer))));
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.decay = j.value("decay", d.decay);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_policy = j.value("checkpoint_policy", d.checkpoint_policy);
}

double decayed_lr(int epoch, const TrainConfig& cfg) {
  return cfg.learning_rate / (1.0 + cfg.decay * static_cast<double>(epoch));
}

Tensor masked_xent(const Tensor& probs, const Tensor& labels, const Tensor& mask) {
  if (probs.dim() != 3 || labels.sizes() != probs.sizes().slice(0, 2) || mask.sizes() != labels.sizes()) {
    throw ShapeError("masked_xent: expected probs (B, T, C), labels and mask (B, T)");
  }
  const Tensor denom = mask.sum();
  if (denom.item<double>() == 0.0) throw ConfigError("masked_xent: mask is all zero, mean is undefined");
  const Tensor picked = probs.gather(-1, labels.unsqueeze(-1)).squeeze(-1);
  // Unmasked positions must not reach log(); a zero probability there would
  // otherwise produce 0 * -inf.
  const Tensor safe = torch::where(mask > 0, picked, torch::ones_like(picked));
  return -(torch::log(safe) * mask).sum() / denom;
}

Tensor masked_xent_from_logits(const Tensor& logits, const Tensor& labels, const Tensor& mask) {
  if (logits.dim() != 3 || labels.sizes() != logits.sizes().slice(0, 2) || mask.sizes() != labels.sizes()) {
    throw ShapeError("masked_xent: expected logits (B, T, C), labels and mask (B, T)");
  }
  const Tensor denom = mask.sum();
  if (denom.item<double>() == 0.0) throw ConfigError("masked_xent: mask is all zero, mean is undefined");
  const Tensor logp = torch::log_softmax(logits, -1).gather(-1, labels.unsqueeze(-1)).squeeze(-1);
  return -(logp * mask).sum() / denom;
}

Tensor label_tensor(const std::vector<ProteinRecord>& records, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("label_tensor: empty batch");
  const std::int64_t steps = records.at(indices.front()).max_len;
  std::vector<std::int64_t> labels;
  labels.reserve(indices.size() * static_cast<std::size_t>(steps));
  for (auto i : indices) labels.insert(labels.end(), records.at(i).labels.begin(), records.at(i).labels.end());
  return torch::tensor(labels, torch::kInt64).view({static_cast<std::int64_t>(indices.size()), steps});
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerName name, std::vector<Tensor> parameters) {
  switch (name) {
    case OptimizerName::kRmsprop:
      return std::make_unique<TorchOptimizer<torch::optim::RMSprop>>(
          std::move(parameters), torch::optim::RMSpropOptions(1e-3).alpha(0.9).eps(1e-7));
    case OptimizerName::kAdam:
      return std::make_unique<TorchOptimizer<torch::optim::Adam>>(
          std::move(parameters), torch::optim::AdamOptions(1e-3).betas({0.9, 0.999}).eps(1e-7));
    case OptimizerName::kNadam:
      return std::make_unique<Nadam>(std::move(parameters));
  }
  throw ConfigError("unknown optimizer");
}

void TrainHistory::write_tsv_header(std::ostream& out) {
  out << "epoch\tlearning_rate\ttrain_loss\tval_loss\tval_accuracy\tseconds\n";
}

void TrainHistory::write_tsv_row(std::ostream& out, const EpochRecord& r) {
  out << r.epoch << '\t' << r.learning_rate << '\t' << r.train_loss << '\t' << r.val_loss << '\t' << r.val_accuracy
      << '\t' << r.seconds << '\n';
}

void TrainHistory::write_tsv(std::ostream& out) const {
  write_tsv_header(out);
  for (const auto& r : epochs) write_tsv_row(out, r);
}

std::int64_t crop_length(const std::vector<ProteinRecord>& records, const std::vector<std::size_t>& indices) {
  int longest = 1;
  int max_len = kMaxLen;
  for (auto i : indices) {
    longest = std::max(longest, records.at(i).length);
    max_len = records.at(i).max_len;
  }
  return std::min<std::int64_t>((longest + 15) / 16 * 16, max_len);
}

DatasetScore score_dataset(const ModelHandle& model, const std::vector<ProteinRecord>& records, int batch_size) {
  if (records.empty()) throw ConfigError("score_dataset: no records");
  torch::NoGradGuard no_grad;
  const bool was_training = model.module->is_training();
  model.module->eval();
  double loss_sum = 0.0;
  double correct = 0.0;
  double counted = 0.0;
  const auto all = iota_indices(records.size());
  for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> batch(all.begin() + static_cast<std::ptrdiff_t>(start),
                                   all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), start + static_cast<std::size_t>(batch_size))));
    const std::int64_t steps = crop_length(records, batch);
    ModelInputs in = make_inputs(records, batch, model.signature, model.config.window_mix.decay).crop(steps);
    Tensor labels = label_tensor(records, batch).slice(1, 0, steps);
    Tensor logits = model.module->logits(in);
    const double n = mask_count(in.mask);
    loss_sum += masked_xent_from_logits(logits, labels, in.mask).item<double>() * n;
    Tensor pred = logits.slice(2, 0, LabelVocab::kClasses).argmax(-1);
    correct += ((pred == labels).to(torch::kFloat32) * in.mask).sum().item<double>();
    counted += n;
  }
  if (was_training) model.module->train();
  return {loss_sum / counted, correct / counted};
}

ProbTensor predict_probs(const ModelHandle& model, const std::vector<ProteinRecord>& records, int batch_size) {
  torch::NoGradGuard no_grad;
  const bool was_training = model.module->is_training();
  model.module->eval();
  ProbTensor out;
  out.n = records.size();
  out.max_len = records.empty() ? kMaxLen : records.front().max_len;
  const auto L = static_cast<std::size_t>(out.max_len);
  out.values.assign(out.n * L * LabelVocab::kSize, 0.0f);
  for (std::size_t p = 0; p < out.n * L; ++p) out.values[p * LabelVocab::kSize + LabelVocab::kNoSeq] = 1.0f;

  const auto all = iota_indices(records.size());
  for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> batch(all.begin() + static_cast<std::ptrdiff_t>(start),
                                   all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), start + static_cast<std::size_t>(batch_size))));
    const std::int64_t steps = crop_length(records, batch);
    ModelInputs in = make_inputs(records, batch, model.signature, model.config.window_mix.decay).crop(steps);
    Tensor probs = model.forward(in).to(torch::kFloat32).contiguous();
    auto acc = probs.accessor<float, 3>();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& rec = records[batch[b]];
      for (int i = 0; i < rec.length; ++i) {
        float* row = out.values.data() + (batch[b] * L + static_cast<std::size_t>(i)) * LabelVocab::kSize;
        for (int c = 0; c < LabelVocab::kSize; ++c) row[c] = acc[static_cast<std::int64_t>(b)][i][c];
      }
    }
  }
  if (was_training) model.module->train();
  return out;
}

FitResult fit(ModelHandle& model, const std::vector<ProteinRecord>& train, const std::vector<ProteinRecord>& validation,
              const TrainConfig& cfg, const FitOptions& options) {
  cfg.validate();
  if (train.empty()) throw ConfigError("fit: empty training set");
  if (!options.allow_leakage && !validation.empty()) {
    std::vector<ProteinRecord> combined = train;
    combined.insert(combined.end(), validation.begin(), validation.end());
    LeakageReport report = check_disjoint(combined, SplitSpec::contiguous(train.size(), validation.size(), 0));
    if (!report.clean()) throw LeakageError(std::move(report));
  }
  if (options.deterministic) at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/false);

  FitResult result;
  const auto& selection = validation.empty() ? train : validation;
  std::ofstream history_file;
  if (!options.history_path.empty()) {
    history_file.open(options.history_path, std::ios::trunc);
    TrainHistory::write_tsv_header(history_file);
    history_file.flush();
  }
  if (cfg.epochs == 0) return result;

  torch::manual_seed(cfg.seed);
  auto optimizer = make_optimizer(cfg.optimizer, model.module->parameters());
  Snapshot best = Snapshot::take(*model.module);
  result.best_val_accuracy = -1.0;
  auto order = iota_indices(train.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::mt19937_64 shuffle_rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = decayed_lr(epoch, cfg);
    model.module->train();

    double loss_sum = 0.0;
    double weight_sum = 0.0;
    bool finite = true;
    for (std::size_t start = 0; start < order.size() && finite; start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size))));
      ModelInputs in = make_inputs(train, batch, model.signature, model.config.window_mix.decay);
      Tensor labels = label_tensor(train, batch);
      if (options.crop_batches) {
        const std::int64_t steps = crop_length(train, batch);
        in = in.crop(steps);
        labels = labels.slice(1, 0, steps);
      }
      optimizer->zero_grad();
      Tensor xent = masked_xent_from_logits(model.module->logits(in), labels, in.mask);
      Tensor loss = xent + model.module->regularization();
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        finite = false;
        break;
      }
      loss.backward();
      if (options.clip_grad_norm > 0.0) torch::nn::utils::clip_grad_norm_(model.module->parameters(), options.clip_grad_norm);
      optimizer->step(lr);
      const double n = mask_count(in.mask);
      loss_sum += xent.item<double>() * n;
      weight_sum += n;
    }
    if (!finite) {
      result.diverged = true;
      result.message = "non-finite loss in epoch " + std::to_string(epoch);
      break;
    }

    const DatasetScore score = score_dataset(model, selection);
    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = lr;
    record.train_loss = loss_sum / weight_sum;
    record.val_loss = score.loss;
    record.val_accuracy = score.accuracy;
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.epochs.push_back(record);
    if (history_file.is_open()) {
      TrainHistory::write_tsv_row(history_file, record);
      history_file.flush();
    }
    if (options.on_epoch) options.on_epoch(record);
    if (score.accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = score.accuracy;
      result.best_epoch = epoch;
      best = Snapshot::take(*model.module);
    }
  }

  best.restore(*model.module);
  model.module->eval();
  if (result.best_epoch < 0) result.best_val_accuracy = 0.0;
  return result;
}

nlohmann::json layer_manifest(const ModelHandle& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers()) layers.push_back({{"name", l.name}, {"shape", l.shape}});
  return layers;
}

void save_checkpoint(const std::filesystem::path& dir, const ModelHandle& model, const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  torch::serialize::OutputArchive archive;
  model.module->save(archive);
  archive.save_to((dir / "weights.pt").string());

  nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
  manifest["model_id"] = std::string(1, model_letter(model.config.model_id));
  manifest["model_name"] = std::string(model_name(model.config.model_id));
  manifest["arch_config"] = model.config;
  manifest["seed"] = model.config.seed;
  manifest["departures"] = model.config.departures();
  manifest["parameter_count"] = model.parameter_count();
  manifest["layers"] = layer_manifest(model);
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
}

ModelHandle load_checkpoint(const std::filesystem::path& dir, nlohmann::json* manifest_out) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint: missing " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  ModelHandle model = build_model(manifest.at("arch_config").get<ArchConfig>());
  if (layer_manifest(model) != manifest.at("layers")) {
    throw FormatError("checkpoint: layer list in " + dir.string() + " does not match the rebuilt architecture");
  }
  torch::serialize::InputArchive archive;
  archive.load_from((dir / "weights.pt").string());
  model.module->load(archive);
  model.module->eval();
  if (manifest_out != nullptr) *manifest_out = std::move(manifest);
  return model;
}

}  // namespace ssp
