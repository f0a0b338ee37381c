#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/hash.hpp"

namespace ff {

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

// A single (features, label) pair; features are CHW in [0,1].
struct Sample {
  std::vector<float> features;
  int label = 0;
};

// Samples stored contiguously: sample i occupies
// features[i*shape.size(), (i+1)*shape.size()).
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::string name, int class_count, ImageShape shape)
      : name_(std::move(name)), class_count_(class_count), shape_(shape) {
    FF_EXPECT(class_count >= 2, ContractError, "class_count must be >= 2");
    FF_EXPECT(shape.size() > 0, ContractError, "empty image shape");
  }

  const std::string& name() const { return name_; }
  int class_count() const { return class_count_; }
  const ImageShape& shape() const { return shape_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

  std::span<const float> features(std::size_t i) const {
    return {features_.data() + i * shape_.size(), shape_.size()};
  }
  std::span<float> features(std::size_t i) {
    return {features_.data() + i * shape_.size(), shape_.size()};
  }
  int label(std::size_t i) const { return labels_.at(i); }
  void set_label(std::size_t i, int y) {
    FF_EXPECT(y >= 0 && y < class_count_, ContractError, "label out of range");
    labels_.at(i) = y;
  }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<float>& raw_features() const { return features_; }

  Sample sample(std::size_t i) const {
    auto f = features(i);
    return {{f.begin(), f.end()}, labels_.at(i)};
  }

  void push_back(std::span<const float> features, int label) {
    FF_EXPECT(features.size() == shape_.size(), ContractError,
              "sample size does not match dataset shape");
    FF_EXPECT(label >= 0 && label < class_count_, ContractError,
              "label " + std::to_string(label) + " outside [0, C)");
    features_.insert(features_.end(), features.begin(), features.end());
    labels_.push_back(label);
  }
  void push_back(const Sample& s) { push_back(s.features, s.label); }

  void reserve(std::size_t n) {
    features_.reserve(n * shape_.size());
    labels_.reserve(n);
  }

  LabeledDataset subset(std::span<const std::size_t> idx) const {
    LabeledDataset out(name_, class_count_, shape_);
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(features(i), labels_.at(i));
    return out;
  }

  // Samples whose label is (or is not) in `classes`.
  LabeledDataset filter_classes(std::span<const int> classes, bool keep) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i) {
      bool in = std::find(classes.begin(), classes.end(), labels_[i]) != classes.end();
      if (in == keep) idx.push_back(i);
    }
    return subset(idx);
  }

  void append(const LabeledDataset& other) {
    FF_EXPECT(other.shape_ == shape_ && other.class_count_ == class_count_,
              ContractError, "cannot concatenate datasets of different shape");
    features_.insert(features_.end(), other.features_.begin(), other.features_.end());
    labels_.insert(labels_.end(), other.labels_.begin(), other.labels_.end());
  }

  std::uint64_t content_hash() const {
    Fnv1a h;
    h.update_span(std::span<const float>(features_));
    h.update_span(std::span<const int>(labels_));
    return h.digest();
  }

  bool operator==(const LabeledDataset&) const = default;

 private:
  std::string name_;
  int class_count_ = 0;
  ImageShape shape_;
  std::vector<float> features_;
  std::vector<int> labels_;
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset test;
};

// One client's local data. `source_index` maps back into the training split
// the shard was carved from.
struct UserShard {
  int user_id = 0;
  LabeledDataset data;
  std::vector<std::size_t> source_index;
  std::vector<std::uint8_t> poison_mask;
  std::vector<std::uint8_t> forget_mask;

  std::size_t size() const { return data.size(); }
  std::size_t count_forget() const {
    return static_cast<std::size_t>(std::count(forget_mask.begin(), forget_mask.end(), 1));
  }
  std::size_t count_poison() const {
    return static_cast<std::size_t>(std::count(poison_mask.begin(), poison_mask.end(), 1));
  }
  void check() const {
    FF_EXPECT(poison_mask.size() == data.size() && forget_mask.size() == data.size(),
              ContractError, "shard masks must match sample count");
  }
};

// Square-patch backdoor trigger. Default: 3x3 white patch in the
// bottom-right corner, retargeting to class 0.
struct TriggerSpec {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 3;
  std::size_t width = 3;
  float pixel_value = 1.0f;
  int target_label = 0;

  static TriggerSpec bottom_right(const ImageShape& s, std::size_t size = 3,
                                  int target = 0) {
    return {s.height - size, s.width - size, size, size, 1.0f, target};
  }

  void validate(const ImageShape& s, int class_count) const {
    FF_EXPECT(height > 0 && width > 0 && row + height <= s.height &&
                  col + width <= s.width,
              ContractError, "trigger rectangle does not fit the image");
    FF_EXPECT(pixel_value >= 0.0f && pixel_value <= 1.0f, ContractError,
              "trigger pixel value must lie in [0,1]");
    FF_EXPECT(target_label >= 0 && target_label < class_count, ContractError,
              "trigger target label outside [0, C)");
  }

  // Writes the patch into every channel of a CHW image.
  void apply(std::span<float> image, const ImageShape& s) const {
    for (std::size_t c = 0; c < s.channels; ++c)
      for (std::size_t r = row; r < row + height; ++r)
        for (std::size_t q = col; q < col + width; ++q)
          image[(c * s.height + r) * s.width + q] = pixel_value;
  }
};

}  // namespace ff
