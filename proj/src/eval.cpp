#include "dsmil/eval.hpp"

#include <algorithm>
#include <numeric>

#include "dsmil/error.hpp"
#include "json.hpp"

namespace dsmil {

std::optional<PrCurve> average_precision(std::span<const ClassDetection> detections,
                                         std::span<const std::vector<Box>> gts_per_image) {
  std::size_t total_gt = 0;
  for (const auto& g : gts_per_image) total_gt += g.size();
  if (total_gt == 0) return std::nullopt;

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].det.score > detections[b].det.score;
  });

  std::vector<std::vector<bool>> claimed(gts_per_image.size());
  for (std::size_t i = 0; i < gts_per_image.size(); ++i) claimed[i].assign(gts_per_image[i].size(), false);

  PrCurve curve;
  std::size_t tp = 0, fp = 0;
  for (std::size_t idx : order) {
    const ClassDetection& d = detections[idx];
    if (d.image >= gts_per_image.size()) {
      throw EvaluationError("detection refers to image " + std::to_string(d.image) + " of " +
                            std::to_string(gts_per_image.size()));
    }
    const auto& gts = gts_per_image[d.image];
    double best = 0.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(d.det.box, gts[g]);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size() && best > kMatchIou && !claimed[d.image][best_gt]) {
      claimed[d.image][best_gt] = true;
      ++tp;
    } else {
      ++fp;
    }
    curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    curve.recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }

  // Precision envelope, then sum rectangles at each recall change.
  std::vector<double> envelope = curve.precision;
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    if (curve.recall[i] > prev_recall) {
      curve.ap += (curve.recall[i] - prev_recall) * envelope[i];
      prev_recall = curve.recall[i];
    }
  }
  return curve;
}

double mean_ap(std::span<const std::optional<double>> per_class_ap) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ap : per_class_ap) {
    if (ap) {
      total += *ap;
      ++count;
    }
  }
  if (count == 0) throw EvaluationError("mean_ap: no class has ground truth");
  return total / static_cast<double>(count);
}

CorLocResult corloc(std::span<const DetectionResult> results, std::span<const ProposalBag> bags) {
  if (results.size() != bags.size()) {
    throw EvaluationError("corloc: " + std::to_string(results.size()) + " results for " +
                          std::to_string(bags.size()) + " images");
  }
  const std::size_t c = bags.empty() ? 0 : bags.front().labels.size();
  std::vector<std::size_t> hits(c, 0), positives(c, 0);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      if (bags[i].labels[k] == 0) continue;
      ++positives[k];
      if (k >= results[i].per_class.size()) continue;
      const auto& dets = results[i].per_class[k];
      if (dets.empty()) continue;
      const auto top = std::max_element(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        return a.score < b.score;
      });
      const bool hit = std::any_of(bags[i].gt.begin(), bags[i].gt.end(), [&](const GroundTruthObject& g) {
        return static_cast<std::size_t>(g.cls) == k && iou(top->box, g.box) > kMatchIou;
      });
      if (hit) ++hits[k];
    }
  }
  CorLocResult out;
  out.per_class.resize(c);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < c; ++k) {
    if (positives[k] == 0) continue;
    out.per_class[k] = static_cast<double>(hits[k]) / static_cast<double>(positives[k]);
    total += *out.per_class[k];
    ++count;
  }
  out.mean = count ? total / static_cast<double>(count) : 0.0;
  return out;
}

Metrics evaluate(std::span<const DetectionResult> results, std::span<const ProposalBag> bags) {
  if (results.size() != bags.size()) {
    throw EvaluationError("evaluate: " + std::to_string(results.size()) + " results for " +
                          std::to_string(bags.size()) + " images");
  }
  const std::size_t c = bags.empty() ? 0 : bags.front().labels.size();
  Metrics m;
  m.per_class_ap.resize(c);
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<ClassDetection> dets;
    std::vector<std::vector<Box>> gts(bags.size());
    for (std::size_t i = 0; i < bags.size(); ++i) {
      for (const GroundTruthObject& g : bags[i].gt) {
        if (static_cast<std::size_t>(g.cls) == k) gts[i].push_back(g.box);
      }
      if (k < results[i].per_class.size()) {
        for (const Detection& d : results[i].per_class[k]) dets.push_back(ClassDetection{i, d});
      }
    }
    if (auto curve = average_precision(dets, gts)) m.per_class_ap[k] = curve->ap;
  }
  m.map = mean_ap(m.per_class_ap);
  CorLocResult cl = corloc(results, bags);
  m.corloc = cl.mean;
  m.per_class_corloc = cl.per_class;
  return m;
}

std::string Metrics::to_json() const {
  using nlohmann::json;
  auto table = [](const std::vector<std::optional<double>>& v) {
    json j = json::object();
    for (std::size_t k = 0; k < v.size(); ++k) j[std::to_string(k)] = v[k] ? json(*v[k]) : json(nullptr);
    return j;
  };
  json j = {{"map", map}, {"per_class_ap", table(per_class_ap)}, {"corloc", corloc},
            {"per_class_corloc", table(per_class_corloc)}};
  return j.dump();
}

}  // namespace dsmil
