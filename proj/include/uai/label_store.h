#ifndef UAI_LABEL_STORE_H_
#define UAI_LABEL_STORE_H_

#include <cstddef>
#include <optional>
#include <unordered_map>
#include <vector>

namespace uai {

// Expert-audited labels (0 normal, 1 anomaly) keyed by dataset index, in the
// order they were acquired. An index can be audited only once.
class LabelStore {
 public:
  // Throws UsageError on a repeated index or a label outside {0, 1}.
  void add(std::size_t index, int label);

  bool contains(std::size_t index) const { return labels_.contains(index); }
  std::optional<int> get(std::size_t index) const;

  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  std::size_t positives() const { return positives_; }

  const std::vector<std::size_t>& order() const { return order_; }
  // Labels aligned with order().
  std::vector<int> labels_in_order() const;

  friend bool operator==(const LabelStore& a, const LabelStore& b) {
    return a.order_ == b.order_ && a.labels_ == b.labels_;
  }

 private:
  std::unordered_map<std::size_t, int> labels_;
  std::vector<std::size_t> order_;
  std::size_t positives_ = 0;
};

}  // namespace uai

#endif  // UAI_LABEL_STORE_H_
