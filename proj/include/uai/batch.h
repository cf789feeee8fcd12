#ifndef UAI_BATCH_H_
#define UAI_BATCH_H_

#include <cstddef>
#include <vector>

#include "uai/nn_core.h"

namespace uai {

// What a model is allowed to see of a dataset slice. Ground-truth anomaly
// flags are deliberately not representable here.
struct Batch {
  nn::Matrix features;      // D x B
  nn::Matrix class_onehot;  // C x B; empty when the dataset has no classes
  std::vector<std::size_t> indices;

  nn::Index size() const { return features.cols(); }
};

}  // namespace uai

#endif  // UAI_BATCH_H_
