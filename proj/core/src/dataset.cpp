#include "ddvkit/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "ddvkit/error.hpp"
#include "ddvkit/rng.hpp"

namespace ddv {
namespace {

struct ShapeSpec {
  ShapeKind kind;
  double cx, cy, r;
  double aspect_x = 1.0, aspect_y = 1.0;
};

bool covers(const ShapeSpec& s, double px, double py) {
  const double dx = px - s.cx;
  const double dy = py - s.cy;
  switch (s.kind) {
    case ShapeKind::rectangle:
      return std::abs(dx) <= s.r * s.aspect_x && std::abs(dy) <= s.r * s.aspect_y;
    case ShapeKind::disc: return dx * dx + dy * dy <= s.r * s.r;
    case ShapeKind::cross: {
      const double t = std::max(0.8, 0.3 * s.r);
      return (std::abs(dx) <= t && std::abs(dy) <= s.r) || (std::abs(dy) <= t && std::abs(dx) <= s.r);
    }
    case ShapeKind::ring: {
      const double d2 = dx * dx + dy * dy;
      const double inner = 0.55 * s.r;
      return d2 <= s.r * s.r && d2 >= inner * inner;
    }
  }
  return false;
}

// Fractional coverage of each pixel, 3x3 supersampled.
std::vector<double> coverage(const ShapeSpec& s) {
  std::vector<double> cov(kImageSize * kImageSize, 0.0);
  for (std::size_t y = 0; y < kImageSize; ++y) {
    for (std::size_t x = 0; x < kImageSize; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 3; ++sy) {
        for (int sx = 0; sx < 3; ++sx) {
          hits += covers(s, x + (sx + 0.5) / 3.0, y + (sy + 0.5) / 3.0);
        }
      }
      cov[y * kImageSize + x] = hits / 9.0;
    }
  }
  return cov;
}

ShapeSpec sample_spec(ShapeKind kind, double r_lo, double r_hi, double cx_lo, double cx_hi,
                      Rng& rng) {
  ShapeSpec s{kind, 0, 0, rng.uniform(r_lo, r_hi)};
  const double size = static_cast<double>(kImageSize);
  const double lo = s.r + 0.5;
  const double hi = size - s.r - 0.5;
  s.cx = rng.uniform(std::max(lo, cx_lo), std::min(hi, cx_hi));
  s.cy = rng.uniform(lo, hi);
  if (kind == ShapeKind::rectangle) {
    s.aspect_x = rng.uniform(0.6, 1.0);
    s.aspect_y = rng.uniform(0.6, 1.0);
  }
  return s;
}

float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void render_task_a(int label, Rng& rng, std::span<float> img) {
  const auto s = sample_spec(static_cast<ShapeKind>(label), 3.0, 6.5, 0.0, 16.0, rng);
  const auto cov = coverage(s);
  const double bg = rng.uniform(0.0, 0.15);
  const double fg = rng.uniform(0.75, 1.0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = clip01(bg + (fg - bg) * cov[i] + 0.03 * rng.normal());
  }
}

void render_task_b(int label, Rng& rng, std::span<float> img) {
  const auto kind = static_cast<ShapeKind>(label / 2);
  const bool large = label % 2 == 1;
  const auto s = large ? sample_spec(kind, 4.8, 6.5, 0.0, 16.0, rng)
                       : sample_spec(kind, 2.8, 4.0, 0.0, 16.0, rng);
  const auto cov = coverage(s);
  // dimmer shape over a diagonal stripe texture
  const double bg = rng.uniform(0.15, 0.35);
  const double fg = rng.uniform(0.6, 0.85);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  for (std::size_t y = 0; y < kImageSize; ++y) {
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const std::size_t i = y * kImageSize + x;
      const double texture = 0.08 * std::sin(0.9 * static_cast<double>(x + y) + phase);
      img[i] = clip01(bg + texture + (fg - bg - texture) * cov[i] + 0.05 * rng.normal());
    }
  }
}

void render_task_c(int label, Rng& rng, std::span<float> img) {
  const auto kind = static_cast<ShapeKind>(label / 2);
  const bool right = label % 2 == 1;
  const auto s = right ? sample_spec(kind, 3.0, 5.5, 8.5, 16.0, rng)
                       : sample_spec(kind, 3.0, 5.5, 0.0, 7.5, rng);
  auto cov = coverage(s);
  // 3x3 box blur
  std::vector<double> blurred(cov.size(), 0.0);
  const int n = static_cast<int>(kImageSize);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      int cnt = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= n || xx >= n) continue;
          acc += cov[static_cast<std::size_t>(yy * n + xx)];
          ++cnt;
        }
      }
      blurred[static_cast<std::size_t>(y * n + x)] = acc / cnt;
    }
  }
  const double g0 = rng.uniform(0.0, 0.3);
  const double g1 = rng.uniform(0.0, 0.3);
  const double fg = rng.uniform(0.8, 1.0);
  for (std::size_t y = 0; y < kImageSize; ++y) {
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const double bg = g0 + (g1 - g0) * x / (kImageSize - 1.0);
      const std::size_t i = y * kImageSize + x;
      img[i] = clip01(bg + (fg - bg) * blurred[i] + 0.03 * rng.normal());
    }
  }
}

}  // namespace

bool is_known_task(const std::string& task_id) {
  return task_id == "taskA" || task_id == "taskB" || task_id == "taskC";
}

std::size_t task_class_count(const std::string& task_id) {
  if (task_id == "taskA") return kShapeKinds;
  if (task_id == "taskB" || task_id == "taskC") return 2 * kShapeKinds;
  throw InvalidArgument("unknown task '" + task_id + "'");
}

ShapesDataset make_dataset(const std::string& task_id, std::uint64_t seed, std::size_t n) {
  if (n < 200) {
    throw InvalidArgument("dataset size " + std::to_string(n) +
                          " is below the minimum of 200 samples");
  }
  ShapesDataset d;
  d.task_id = task_id;
  d.generator_seed = seed;
  d.num_classes = task_class_count(task_id);
  Rng rng(derive_seed(seed, "dataset:" + task_id));
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % d.num_classes);
  rng.shuffle(d.labels);
  d.images = Tensor({n, 1, kImageSize, kImageSize});
  for (std::size_t i = 0; i < n; ++i) {
    auto img = d.images.row(i);
    if (task_id == "taskA") {
      render_task_a(d.labels[i], rng, img);
    } else if (task_id == "taskB") {
      render_task_b(d.labels[i], rng, img);
    } else {
      render_task_c(d.labels[i], rng, img);
    }
  }
  return d;
}

std::pair<LabeledData, LabeledData> ShapesDataset::split(double train_fraction) const {
  const std::size_t n = size();
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  std::vector<std::size_t> a(n_train), b(n - n_train);
  for (std::size_t i = 0; i < n_train; ++i) a[i] = i;
  for (std::size_t i = n_train; i < n; ++i) b[i - n_train] = i;
  LabeledData train{images.gather_rows(a), {labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_train)}};
  LabeledData test{images.gather_rows(b), {labels.begin() + static_cast<std::ptrdiff_t>(n_train), labels.end()}};
  return {std::move(train), std::move(test)};
}

Tensor noise_images(std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "noise"));
  Tensor t({n, 1, kImageSize, kImageSize});
  for (float& v : t.data()) v = static_cast<float>(rng.uniform());
  return t;
}

}  // namespace ddv
