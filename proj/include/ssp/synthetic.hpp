#pragma once

// Reproducible synthetic proteins in the benchmark record format. Labels come
// in DSSP-like segments and residues/profiles carry class propensities, so the
// corpus is learnable; it stands in for the real containers in tests.

#include <cstdint>
#include <vector>

#include "ssp/data_ingest.hpp"

namespace ssp {

struct SyntheticOptions {
  std::size_t count = 10;
  int min_length = 40;
  int max_length = 160;
  int max_len = kMaxLen;
  std::uint64_t seed = 1;
  std::string dataset_name = "synthetic";
};

std::vector<ProteinRecord> synthetic_records(const SyntheticOptions& options);

}  // namespace ssp
