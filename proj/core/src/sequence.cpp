// SPDX-License-Identifier: Apache-2.0
#include "tagf/sequence.hpp"

#include <algorithm>

#include "tagf/error.hpp"

namespace tagf {

const char* to_string(Modality m) {
  return m == Modality::Audio ? "audio" : "visual";
}

FeatureSequence::FeatureSequence(Modality m, std::size_t len, std::size_t d)
    : modality(m), length(len), dim(d), values(len * d, 0.0), mask(len, 1) {}

std::size_t FeatureSequence::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
}

void FeatureSequence::validate() const {
  if (length < 1 || dim < 1) {
    throw ContractError(std::string(to_string(modality)) +
                        " sequence needs length >= 1 and dim >= 1");
  }
  if (values.size() != length * dim || mask.size() != length) {
    throw ContractError(std::string(to_string(modality)) +
                        " sequence buffers do not match length x dim");
  }
}

}  // namespace tagf
