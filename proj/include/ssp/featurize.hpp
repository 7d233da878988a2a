#pragma once

// Deterministic model-input encodings: the 46-column residue features, the
// bigram token stream and the directional window-mix features.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssp/data_ingest.hpp"

namespace ssp {

inline constexpr int kFeatureWidth = 46;
inline constexpr int kProfileOffset = 22;
inline constexpr int kFlagOffset = 44;
inline constexpr int kBigramVocab = ResidueVocab::kSize * ResidueVocab::kSize;
inline constexpr int kBigramPad = ResidueVocab::kNoSeq * ResidueVocab::kSize + ResidueVocab::kNoSeq;

// values is n x max_len x 46: [0,22) residue one-hot, [22,44) profile,
// [44,46) first/last position flags.
struct FeatureTensor {
  std::size_t n = 0;
  int max_len = kMaxLen;
  std::vector<float> values;
  std::vector<std::uint8_t> mask;  // n x max_len

  float at(std::size_t record, int pos, int col) const {
    return values[(record * static_cast<std::size_t>(max_len) + static_cast<std::size_t>(pos)) * kFeatureWidth +
                  static_cast<std::size_t>(col)];
  }
};

struct BigramStream {
  std::size_t n = 0;
  int max_len = kMaxLen;
  std::vector<std::int32_t> tokens;  // n x max_len, values in [0, 484)

  std::int32_t at(std::size_t record, int pos) const {
    return tokens[record * static_cast<std::size_t>(max_len) + static_cast<std::size_t>(pos)];
  }
};

struct WindowMixFeatures {
  std::size_t n = 0;
  int max_len = kMaxLen;
  std::vector<float> preceding;  // n x max_len x 22
  std::vector<float> following;  // n x max_len x 22

  float preceding_at(std::size_t record, int pos, int col) const { return preceding[offset(record, pos, col)]; }
  float following_at(std::size_t record, int pos, int col) const { return following[offset(record, pos, col)]; }

 private:
  std::size_t offset(std::size_t record, int pos, int col) const {
    return (record * static_cast<std::size_t>(max_len) + static_cast<std::size_t>(pos)) * ResidueVocab::kSize +
           static_cast<std::size_t>(col);
  }
};

struct FeatureOptions {
  // Applies 1 / (1 + exp(-x)) to profile values at real positions.
  bool squash_profile = false;
};

FeatureTensor encode_features(const std::vector<ProteinRecord>& records, const FeatureOptions& options = {});

// Token at i encodes (residues[i], residues[i+1]) as 22 * a + b; the last
// real position and all padding pair with noSeq.
BigramStream make_bigrams(const std::vector<ProteinRecord>& records);

// preceding[i] is the normalised sum over k >= 1 of decay^k * onehot(r[i-k]),
// following[i] its mirror image; only real positions contribute and padded
// rows are zero. Throws ConfigError unless decay is in (0, 1].
WindowMixFeatures window_mix(const std::vector<ProteinRecord>& records, double decay = 0.5);

// Cache file name "<dataset>.<kind>.<hash16>.npy" keyed on layout, decay and
// the dataset's content hash.
std::string cache_file_name(const std::string& dataset, const std::string& kind, const RawLayout& layout,
                            double decay, const std::string& dataset_hash);

void save_features(const std::filesystem::path& path, const FeatureTensor& features);
FeatureTensor load_features(const std::filesystem::path& path);
void save_bigrams(const std::filesystem::path& path, const BigramStream& bigrams);
BigramStream load_bigrams(const std::filesystem::path& path);

}  // namespace ssp
