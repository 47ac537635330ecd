#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ddvkit/runtime.hpp"
#include "ddvkit/tensor.hpp"

namespace ddv {

enum class ShapeKind { rectangle = 0, disc = 1, cross = 2, ring = 3 };
inline constexpr std::size_t kShapeKinds = 4;
inline constexpr std::size_t kImageSize = 16;

/// Procedural grayscale shapes. Each task renders the four shapes in its own
/// style; taskB and taskC additionally split every shape by size or by
/// horizontal position, so their label spaces differ from taskA:
///
///   taskA  bright solid shapes on a dark background        4 classes (shape)
///   taskB  dimmer shapes over a striped texture            8 classes (shape x size)
///   taskC  blurred shapes on a horizontal gradient         8 classes (shape x side)
struct ShapesDataset {
  std::string task_id;
  std::uint64_t generator_seed = 0;
  std::size_t num_classes = 0;
  Tensor images;            // [n, 1, 16, 16], values in [0, 1]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  LabeledData labeled() const { return {images, labels}; }
  // First `train_fraction` of the (already shuffled) samples / the rest.
  std::pair<LabeledData, LabeledData> split(double train_fraction = 0.8) const;
};

bool is_known_task(const std::string& task_id);
std::size_t task_class_count(const std::string& task_id);

// n >= 200. Labels are exactly balanced (class counts differ by at most one).
ShapesDataset make_dataset(const std::string& task_id, std::uint64_t seed, std::size_t n);

// Uniform noise images in [0, 1]; used as out-of-distribution seeds.
Tensor noise_images(std::size_t n, std::uint64_t seed);

}  // namespace ddv
