#include "dsmil/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dsmil/error.hpp"

namespace dsmil {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x2 > x1 && y2 > y1;
}

void validate_box(const Box& b) {
  if (!b.valid()) {
    throw ValidationError("degenerate box [" + std::to_string(b.x1) + "," + std::to_string(b.y1) +
                          "," + std::to_string(b.x2) + "," + std::to_string(b.y2) + "]");
  }
}

double iou(const Box& a, const Box& b) {
  validate_box(a);
  validate_box(b);
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<std::size_t> nms(std::span<const ScoredBox> boxes, double threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].score > boxes[b].score;
  });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return iou(boxes[k].box, boxes[idx].box) > threshold;
    });
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

RegressionTarget encode_target(const Box& proposal, const Box& gt) {
  validate_box(proposal);
  validate_box(gt);
  const double pw = proposal.width(), ph = proposal.height();
  return RegressionTarget{(gt.center_x() - proposal.center_x()) / pw,
                          (gt.center_y() - proposal.center_y()) / ph,
                          std::log(gt.width() / pw), std::log(gt.height() / ph)};
}

Box decode_target(const RegressionTarget& t, const Box& proposal, std::optional<ImageBounds> bounds) {
  validate_box(proposal);
  const double pw = proposal.width(), ph = proposal.height();
  const double cx = proposal.center_x() + t.tx * pw;
  const double cy = proposal.center_y() + t.ty * ph;
  const double w = pw * std::exp(std::clamp(t.tw, -kMaxLogSizeDelta, kMaxLogSizeDelta));
  const double h = ph * std::exp(std::clamp(t.th, -kMaxLogSizeDelta, kMaxLogSizeDelta));
  Box out{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  if (bounds) {
    // Keep a sliver of extent so a box pushed fully outside stays valid.
    constexpr double kMinExtent = 1e-3;
    out.x1 = std::clamp(out.x1, 0.0, bounds->width - kMinExtent);
    out.y1 = std::clamp(out.y1, 0.0, bounds->height - kMinExtent);
    out.x2 = std::clamp(out.x2, out.x1 + kMinExtent, bounds->width);
    out.y2 = std::clamp(out.y2, out.y1 + kMinExtent, bounds->height);
  }
  return out;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_derivative(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0.0 ? 1.0 : -1.0;
}

}  // namespace dsmil
