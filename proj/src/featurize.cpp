#include "ssp/featurize.hpp"

#include <cmath>
#include <sstream>

#include "ssp/hashing.hpp"
#include "ssp/npy.hpp"

namespace ssp {
namespace {

int common_max_len(const std::vector<ProteinRecord>& records) {
  if (records.empty()) return kMaxLen;
  const int max_len = records.front().max_len;
  for (const auto& r : records) {
    if (r.max_len != max_len) throw ShapeError("records disagree on max_len");
  }
  return max_len;
}

// One direction of the window mix. `step` is +1 for preceding context (scan
// left to right) and -1 for following context.
void mix_direction(const ProteinRecord& r, double decay, int step, float* out) {
  constexpr int V = ResidueVocab::kSize;
  std::vector<double> acc(V, 0.0);
  double weight = 0.0;
  const int first = step > 0 ? 0 : r.length - 1;
  for (int i = first, visited = 0; visited < r.length; i += step, ++visited) {
    if (visited > 0) {
      const int prev = i - step;
      for (auto& a : acc) a *= decay;
      acc[r.residues[static_cast<std::size_t>(prev)]] += decay;
      weight = decay * (weight + 1.0);
    }
    float* row = out + static_cast<std::size_t>(i) * V;
    if (weight > 0.0) {
      for (int c = 0; c < V; ++c) row[c] = static_cast<float>(acc[static_cast<std::size_t>(c)] / weight);
    }
  }
}

}  // namespace

FeatureTensor encode_features(const std::vector<ProteinRecord>& records, const FeatureOptions& options) {
  FeatureTensor out;
  out.n = records.size();
  out.max_len = common_max_len(records);
  const auto L = static_cast<std::size_t>(out.max_len);
  out.values.assign(out.n * L * kFeatureWidth, 0.0f);
  out.mask.assign(out.n * L, 0);
  for (std::size_t r = 0; r < out.n; ++r) {
    const auto& rec = records[r];
    for (std::size_t i = 0; i < L; ++i) {
      float* row = out.values.data() + (r * L + i) * kFeatureWidth;
      row[rec.residues[i]] = 1.0f;
      const bool real = rec.mask[i] != 0;
      for (int c = 0; c < ResidueVocab::kSize; ++c) {
        float v = rec.profile[i * ResidueVocab::kSize + static_cast<std::size_t>(c)];
        if (options.squash_profile && real) v = 1.0f / (1.0f + std::exp(-v));
        row[kProfileOffset + c] = v;
      }
      row[kFlagOffset] = rec.terminal_flags[2 * i];
      row[kFlagOffset + 1] = rec.terminal_flags[2 * i + 1];
      out.mask[r * L + i] = rec.mask[i];
    }
  }
  return out;
}

BigramStream make_bigrams(const std::vector<ProteinRecord>& records) {
  BigramStream out;
  out.n = records.size();
  out.max_len = common_max_len(records);
  const auto L = static_cast<std::size_t>(out.max_len);
  out.tokens.assign(out.n * L, kBigramPad);
  for (std::size_t r = 0; r < out.n; ++r) {
    const auto& res = records[r].residues;
    for (std::size_t i = 0; i < L; ++i) {
      const int next = i + 1 < L ? res[i + 1] : ResidueVocab::kNoSeq;
      out.tokens[r * L + i] = ResidueVocab::kSize * res[i] + next;
    }
  }
  return out;
}

WindowMixFeatures window_mix(const std::vector<ProteinRecord>& records, double decay) {
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("window_mix: decay must lie in (0, 1]");
  WindowMixFeatures out;
  out.n = records.size();
  out.max_len = common_max_len(records);
  const std::size_t stride = static_cast<std::size_t>(out.max_len) * ResidueVocab::kSize;
  out.preceding.assign(out.n * stride, 0.0f);
  out.following.assign(out.n * stride, 0.0f);
  for (std::size_t r = 0; r < out.n; ++r) {
    mix_direction(records[r], decay, +1, out.preceding.data() + r * stride);
    mix_direction(records[r], decay, -1, out.following.data() + r * stride);
  }
  return out;
}

std::string cache_file_name(const std::string& dataset, const std::string& kind, const RawLayout& layout,
                            double decay, const std::string& dataset_hash) {
  std::ostringstream key;
  key << nlohmann::json(layout).dump() << '|' << decay << '|' << dataset_hash;
  return dataset + "." + kind + "." + short_hash(key.str()) + ".npy";
}

void save_features(const std::filesystem::path& path, const FeatureTensor& f) {
  const std::vector<std::int64_t> shape = {static_cast<std::int64_t>(f.n), f.max_len, kFeatureWidth};
  npy::write(path, shape, f.values);
}

FeatureTensor load_features(const std::filesystem::path& path) {
  auto arr = npy::read_floats(path);
  if (arr.shape.size() != 3 || arr.shape[2] != kFeatureWidth) {
    throw FormatError("load_features: expected (N, L, 46) in " + path.string());
  }
  FeatureTensor f;
  f.n = static_cast<std::size_t>(arr.shape[0]);
  f.max_len = static_cast<int>(arr.shape[1]);
  f.values = std::move(arr.data);
  // The mask is recoverable from the one-hot block: padding is the noSeq column.
  f.mask.resize(f.n * static_cast<std::size_t>(f.max_len));
  for (std::size_t k = 0; k < f.mask.size(); ++k) {
    f.mask[k] = f.values[k * kFeatureWidth + ResidueVocab::kNoSeq] == 1.0f ? 0 : 1;
  }
  return f;
}

void save_bigrams(const std::filesystem::path& path, const BigramStream& b) {
  const std::vector<std::int64_t> shape = {static_cast<std::int64_t>(b.n), b.max_len};
  npy::write(path, shape, b.tokens);
}

BigramStream load_bigrams(const std::filesystem::path& path) {
  auto arr = npy::read_ints(path);
  if (arr.shape.size() != 2) throw FormatError("load_bigrams: expected (N, L) in " + path.string());
  BigramStream b;
  b.n = static_cast<std::size_t>(arr.shape[0]);
  b.max_len = static_cast<int>(arr.shape[1]);
  b.tokens = std::move(arr.data);
  return b;
}

}  // namespace ssp
