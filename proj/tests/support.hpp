#pragma once

// Independent oracles shared by the unit tests and the acceptance runner.
// None of them call back into the code they check beyond the public types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dsmil/geometry.hpp"
#include "dsmil/labels.hpp"
#include "dsmil/random.hpp"
#include "dsmil/tensor.hpp"

namespace dsmil::testing {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0,
                            bool param = true) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = u(rng);
  return param ? Tensor::parameter(rows, cols, std::move(v)) : Tensor(rows, cols, std::move(v));
}

// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over every
// entry of every input. `loss` must build a fresh graph on the tape it gets
// and read the inputs by reference, so perturbing their storage is visible.
using LossBuilder = std::function<Tensor(Tape&)>;

inline double gradient_error(const LossBuilder& loss, std::vector<Tensor> inputs, double h = 1e-6,
                             double floor = 1e-3) {
  for (Tensor& t : inputs) t.clear_grad();
  {
    Tape tape;
    Tensor l = loss(tape);
    tape.backward(l);
  }
  double worst = 0.0;
  for (Tensor& t : inputs) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::span<double> v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      Tape up;
      const double fp = loss(up).item();
      v[i] = saved - h;
      Tape down;
      const double fm = loss(down).item();
      v[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

// Area of intersection over union by counting unit cells of an integer grid.
inline double pixel_iou(const Box& a, const Box& b) {
  const int lo_x = static_cast<int>(std::floor(std::min(a.x1, b.x1)));
  const int hi_x = static_cast<int>(std::ceil(std::max(a.x2, b.x2)));
  const int lo_y = static_cast<int>(std::floor(std::min(a.y1, b.y1)));
  const int hi_y = static_cast<int>(std::ceil(std::max(a.y2, b.y2)));
  auto inside = [](const Box& r, double x, double y) { return x > r.x1 && x < r.x2 && y > r.y1 && y < r.y2; };
  long both = 0, either = 0;
  for (int y = lo_y; y < hi_y; ++y) {
    for (int x = lo_x; x < hi_x; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      const bool ia = inside(a, cx, cy), ib = inside(b, cx, cy);
      both += ia && ib;
      either += ia || ib;
    }
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

// Enumerates every h in {0,1}^N and keeps the first maximizer of
// sum_i h_i * (max over positive classes of p_ic - zeta), so an exact tie at
// zeta leaves the proposal unlabelled.
inline std::vector<int> brute_e_step(const std::vector<std::vector<double>>& p, const ClassLabels& y,
                                     double zeta) {
  const std::size_t n = p.size();
  std::vector<double> margin(n, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < y.size(); ++c) {
      if (y[c]) margin[i] = std::max(margin[i], p[i][c] - zeta);
    }
  }
  std::vector<int> best(n, 0);
  double best_value = 0.0;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    double value = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1u) value += margin[i];
    }
    if (value > best_value) {
      best_value = value;
      for (std::size_t i = 0; i < n; ++i) best[i] = static_cast<int>(mask >> i & 1u);
    }
  }
  return best;
}

// Enumerates every binary N x C matrix supported on the positive classes and
// keeps the first maximizer of sum_ic y_ic * (N q_i - sum_j q_j). Keyness is
// given in tenths so the objective is evaluated in exact integer arithmetic.
inline std::vector<std::vector<int>> brute_m_step(const std::vector<int>& q_tenths, const ClassLabels& y) {
  const std::size_t n = q_tenths.size(), c = y.size();
  long total = 0;
  for (int v : q_tenths) total += v;
  std::vector<std::vector<int>> best(n, std::vector<int>(c, 0));
  long best_value = 0;
  const std::size_t cells = n * c;
  for (unsigned long mask = 1; mask < (1ul << cells); ++mask) {
    long value = 0;
    bool allowed = true;
    for (std::size_t b = 0; b < cells && allowed; ++b) {
      if (!(mask >> b & 1ul)) continue;
      if (!y[b % c]) allowed = false;
      value += static_cast<long>(n) * q_tenths[b / c] - total;
    }
    if (allowed && value > best_value) {
      best_value = value;
      for (std::size_t b = 0; b < cells; ++b) best[b / c][b % c] = static_cast<int>(mask >> b & 1ul);
    }
  }
  return best;
}

struct BruteMining {
  std::vector<int> seeds;
  std::vector<double> seed_weights;
  std::vector<int> labels;
  std::vector<double> weights;
  std::vector<int> followed;
};

// Seeds by full scan, then for each proposal every (seed class) candidate is
// ranked by (IoU desc, class asc) and compared with the foreground threshold.
inline BruteMining brute_mine(const std::vector<std::vector<double>>& prev, const std::vector<double>& q,
                              const std::vector<Box>& boxes, const ClassLabels& y) {
  const std::size_t n = boxes.size(), c = y.size();
  BruteMining out;
  out.seeds.assign(c, -1);
  out.seed_weights.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    if (!y[k]) continue;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = q[i] * prev[i][k];
      if (s > best) {
        best = s;
        out.seeds[k] = static_cast<int>(i);
      }
    }
    out.seed_weights[k] = best;
  }
  out.labels.assign(n, static_cast<int>(c));
  out.weights.assign(n, 0.0);
  out.followed.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> candidates;
    for (std::size_t k = 0; k < c; ++k) {
      if (out.seeds[k] >= 0) {
        candidates.emplace_back(pixel_iou(boxes[i], boxes[static_cast<std::size_t>(out.seeds[k])]),
                                static_cast<int>(k));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const auto [best_iou, k] = candidates.front();
    out.followed[i] = k;
    out.weights[i] = out.seed_weights[static_cast<std::size_t>(k)];
    if (best_iou >= 0.5) out.labels[i] = k;
  }
  return out;
}

}  // namespace dsmil::testing
