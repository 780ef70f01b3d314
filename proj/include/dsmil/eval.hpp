#pragma once

// VOC-style detection metrics at the IoU > 0.5 operating point.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsmil/data.hpp"
#include "dsmil/detection.hpp"

namespace dsmil {

inline constexpr double kMatchIou = 0.5;  // strict: IoU must exceed this

struct ClassDetection {
  std::size_t image = 0;  // index into the per-image ground truth list
  Detection det;
};

struct PrCurve {
  std::vector<double> precision;
  std::vector<double> recall;
  double ap = 0.0;
};

// Detections are matched greedily in descending score order (stable on ties),
// each to the ground truth of its image with the highest IoU. It is a true
// positive iff that IoU is > 0.5 and the ground truth is still unclaimed. AP is the area under the precision envelope (all-point
// interpolation). Returns nullopt when there are no ground truths.
std::optional<PrCurve> average_precision(std::span<const ClassDetection> detections,
                                         std::span<const std::vector<Box>> gts_per_image);

// Unweighted mean over evaluated (non-null) classes; EvaluationError if none.
double mean_ap(std::span<const std::optional<double>> per_class_ap);

struct CorLocResult {
  double mean = 0.0;
  std::vector<std::optional<double>> per_class;
};

// Per class: fraction of images labelled with the class whose top detection
// for it has IoU > 0.5 with a ground truth of that class.
CorLocResult corloc(std::span<const DetectionResult> results, std::span<const ProposalBag> bags);

struct Metrics {
  double map = 0.0;
  std::vector<std::optional<double>> per_class_ap;
  double corloc = 0.0;
  std::vector<std::optional<double>> per_class_corloc;

  // {"map":..., "per_class_ap":{"0":...}, "corloc":..., "per_class_corloc":{...}}
  std::string to_json() const;
};

// results[i] must describe bags[i].
Metrics evaluate(std::span<const DetectionResult> results, std::span<const ProposalBag> bags);

}  // namespace dsmil
