#include "uai/label_store.h"

#include <string>

#include "uai/errors.h"

namespace uai {

void LabelStore::add(std::size_t index, int label) {
  if (label != 0 && label != 1) {
    throw UsageError("label for index " + std::to_string(index) +
                     " must be 0 or 1");
  }
  if (!labels_.emplace(index, label).second) {
    throw UsageError("index " + std::to_string(index) + " already audited");
  }
  order_.push_back(index);
  positives_ += static_cast<std::size_t>(label);
}

std::optional<int> LabelStore::get(std::size_t index) const {
  auto it = labels_.find(index);
  if (it == labels_.end()) return std::nullopt;
  return it->second;
}

std::vector<int> LabelStore::labels_in_order() const {
  std::vector<int> out;
  out.reserve(order_.size());
  for (std::size_t index : order_) out.push_back(labels_.at(index));
  return out;
}

}  // namespace uai
