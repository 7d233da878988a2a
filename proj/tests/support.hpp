#pragma once

// Shared fixtures: scratch directories, random records and the published
// evaluation tables used as oracles.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ssp/data_ingest.hpp"
#include "ssp/ensemble_eval.hpp"

namespace ssp::testing {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("ssp-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string random_sequence(std::mt19937_64& rng, int length) {
  std::uniform_int_distribution<int> pick(0, ResidueVocab::kSize - 2);
  std::string s;
  for (int i = 0; i < length; ++i) s += ResidueVocab::letter(pick(rng));
  return s;
}

inline std::string random_labels(std::mt19937_64& rng, int length) {
  std::uniform_int_distribution<int> pick(0, LabelVocab::kClasses - 1);
  std::string s;
  for (int i = 0; i < length; ++i) s += LabelVocab::letter(pick(rng));
  return s;
}

// Random record with a random profile; lengths uniform in [min_len, max_len_real].
inline ProteinRecord random_record(std::mt19937_64& rng, const std::string& id, int min_len, int max_len_real,
                                   int max_len = kMaxLen) {
  const int length = std::uniform_int_distribution<int>(min_len, max_len_real)(rng);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  std::vector<float> profile(static_cast<std::size_t>(max_len) * ResidueVocab::kSize, 0.0f);
  for (std::size_t i = 0; i < static_cast<std::size_t>(length) * ResidueVocab::kSize; ++i) profile[i] = noise(rng);
  return make_record(id, random_sequence(rng, length), random_labels(rng, length), std::move(profile), max_len);
}

inline std::vector<ProteinRecord> random_records(std::mt19937_64& rng, std::size_t n, int min_len, int max_len_real,
                                                 int max_len = kMaxLen) {
  std::vector<ProteinRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_record(rng, "r" + std::to_string(i), min_len, max_len_real, max_len));
  return out;
}

// Published ensemble confusion matrix on CB513 (rows predicted, columns truth,
// class order L B E G I H S T) and the per-class scores printed with it.
inline constexpr ConfusionMatrix kCb513Confusion = {{
    {11828, 618, 1880, 629, 4, 738, 3192, 1619},
    {7, 31, 6, 0, 0, 3, 4, 0},
    {3167, 316, 15419, 234, 2, 334, 997, 565},
    {134, 8, 24, 851, 0, 233, 109, 328},
    {0, 0, 0, 0, 0, 0, 0, 0},
    {762, 77, 216, 777, 22, 24126, 554, 1585},
    {871, 49, 201, 78, 0, 77, 2039, 502},
    {1151, 82, 270, 563, 2, 646, 1421, 5414},
}};

// precision, recall, f-score per class.
inline constexpr std::array<std::array<double, 3>, 8> kCb513Scores = {{
    {0.58, 0.66, 0.62},
    {0.61, 0.03, 0.05},
    {0.73, 0.86, 0.79},
    {0.50, 0.27, 0.35},
    {0.0, 0.0, 0.0},
    {0.86, 0.92, 0.89},
    {0.53, 0.25, 0.34},
    {0.57, 0.54, 0.55},
}};

// The same pair of tables for the CB6133 test split.
inline constexpr ConfusionMatrix kCb6133Confusion = {{
    {7218, 322, 1220, 373, 0, 389, 1855, 894},
    {3, 46, 17, 1, 0, 1, 1, 0},
    {1445, 142, 10344, 106, 0, 152, 395, 233},
    {146, 5, 28, 754, 0, 164, 77, 209},
    {0, 0, 0, 0, 0, 0, 0, 0},
    {591, 34, 251, 661, 0, 19085, 337, 1062},
    {406, 22, 104, 37, 0, 36, 1010, 165},
    {719, 55, 255, 370, 0, 394, 815, 3737},
}};

inline constexpr std::array<std::array<double, 3>, 8> kCb6133Scores = {{
    {0.58, 0.68, 0.63},
    {0.66, 0.07, 0.13},
    {0.80, 0.85, 0.83},
    {0.54, 0.33, 0.41},
    {0.0, 0.0, 0.0},
    {0.87, 0.94, 0.90},
    {0.59, 0.23, 0.32},
    {0.58, 0.59, 0.59},
}};

// Headline ensemble accuracy published for CB513.
inline constexpr double kCb513HeadlineAccuracy = 0.707;

}  // namespace ssp::testing
