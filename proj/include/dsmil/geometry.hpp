#pragma once

// Axis-aligned boxes in pixel coordinates. Boxes are real half-open
// rectangles: width = x2 - x1 with no +1 pixel convention.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace dsmil {

struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return x1 + 0.5 * width(); }
  double center_y() const { return y1 + 0.5 * height(); }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct ImageBounds {
  double width = 0.0;
  double height = 0.0;
};

struct RegressionTarget {
  double tx = 0.0, ty = 0.0, tw = 0.0, th = 0.0;
  friend bool operator==(const RegressionTarget&, const RegressionTarget&) = default;
};

struct ScoredBox {
  Box box;
  double score = 0.0;
};

// Throws ValidationError unless x2 > x1, y2 > y1 and all coordinates are finite.
void validate_box(const Box& b);

double iou(const Box& a, const Box& b);

// Greedy suppression in descending score order (ties: lower index first).
// A box is kept iff its IoU with every already-kept box is <= threshold.
std::vector<std::size_t> nms(std::span<const ScoredBox> boxes, double threshold);

// Center/size parameterization:
//   tx = (gx - px) / pw, ty = (gy - py) / ph, tw = ln(gw / pw), th = ln(gh / ph)
RegressionTarget encode_target(const Box& proposal, const Box& gt);
Box decode_target(const RegressionTarget& t, const Box& proposal,
                  std::optional<ImageBounds> bounds = std::nullopt);

double smooth_l1(double x);
double smooth_l1_derivative(double x);

// Log-size deltas beyond this are clipped before exp() when decoding.
inline constexpr double kMaxLogSizeDelta = 10.0;

}  // namespace dsmil
