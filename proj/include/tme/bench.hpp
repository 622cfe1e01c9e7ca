#pragma once

// Built-in synthetic multimodal benchmark. Labels depend jointly on one
// tabular feature and one image attribute, so unimodal models cap out at
// half the information and fused models can separate all classes.

#include "tme/data.hpp"

namespace tme::bench {

struct SyntheticSpec {
  long n = 2000;
  long d = 8;        // >= 3: signal column 0 plus two correlated echoes
  int side = 32;     // square images
  int classes = 4;   // 2 tabular-bit x 2 image-bit
  uint64_t seed = 0;

  void validate() const;
};

// Class = 2*tab_bit + img_bit. Column 0 carries tab_bit at +-1.5 with unit
// echo columns 1 and 2; the image carries img_bit as a bright or dim patch.
MultimodalDataset make_synthetic_multimodal(const SyntheticSpec& spec);

// Value-dependent missingness: hides `column` for the round(fraction * N)
// rows with the largest values in that column.
MultimodalDataset inject_mnar(const MultimodalDataset& ds, long column, double fraction);

}  // namespace tme::bench
