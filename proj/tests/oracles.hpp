#pragma once

// Independent reference implementations used to cross-check the library.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

namespace oracle {

struct Rect {
  double x1, y1, x2, y2;
};

/// Counts raster cells of side `h` whose centers fall inside each rectangle.
struct RasterIou {
  long inter = 0;
  long uni = 0;
  double value() const { return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni); }
};

inline RasterIou raster_iou(const Rect& a, const Rect& b, double h) {
  const double x0 = std::min(a.x1, b.x1);
  const double y0 = std::min(a.y1, b.y1);
  const double x1 = std::max(a.x2, b.x2);
  const double y1 = std::max(a.y2, b.y2);
  const long nx = static_cast<long>(std::ceil((x1 - x0) / h));
  const long ny = static_cast<long>(std::ceil((y1 - y0) / h));
  auto inside = [](const Rect& r, double x, double y) { return x > r.x1 && x < r.x2 && y > r.y1 && y < r.y2; };
  RasterIou out;
  for (long j = 0; j < ny; ++j) {
    const double y = y0 + (j + 0.5) * h;
    for (long i = 0; i < nx; ++i) {
      const double x = x0 + (i + 0.5) * h;
      const bool ia = inside(a, x, y);
      const bool ib = inside(b, x, y);
      out.inter += (ia && ib) ? 1 : 0;
      out.uni += (ia || ib) ? 1 : 0;
    }
  }
  return out;
}

inline double rect_iou(const Rect& a, const Rect& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return inter / uni;
}

struct Det {
  Rect r;
  std::string cat;
  double conf;
};

struct Gt {
  Rect r;
  std::string cat;
};

/// True-positive flags in descending-confidence order via a plain greedy
/// pass over the sorted list.
inline std::vector<bool> greedy_flags(std::vector<Det> dets, const std::vector<Gt>& gts, double thresh) {
  std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.conf > b.conf; });
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> flags;
  for (const auto& d : dets) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].cat != d.cat) continue;
      const double o = rect_iou(d.r, gts[g].r);
      if (o > best_iou) {
        best_iou = o;
        best = static_cast<int>(g);
      }
    }
    const bool tp = best >= 0 && best_iou >= thresh;
    if (tp) used[static_cast<std::size_t>(best)] = true;
    flags.push_back(tp);
  }
  return flags;
}

/// AP by enumerating every prefix of the ranked list as a PR point and
/// integrating p_interp(r) = max{p_k : r_k >= r} over recall exactly.
inline double exhaustive_ap(const std::vector<Det>& dets, const std::vector<Gt>& gts, double thresh) {
  if (gts.empty()) return 0.0;
  const auto flags = greedy_flags(dets, gts, thresh);
  struct Pt {
    double r, p;
  };
  std::vector<Pt> pts;
  int tp = 0;
  for (std::size_t k = 0; k < flags.size(); ++k) {
    tp += flags[k] ? 1 : 0;
    pts.push_back({static_cast<double>(tp) / static_cast<double>(gts.size()),
                   static_cast<double>(tp) / static_cast<double>(k + 1)});
  }
  std::vector<double> levels{0.0};
  for (const auto& p : pts) levels.push_back(p.r);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  double ap = 0.0;
  for (std::size_t i = 1; i < levels.size(); ++i) {
    double pmax = 0.0;
    for (const auto& p : pts) {
      if (p.r >= levels[i]) pmax = std::max(pmax, p.p);
    }
    ap += (levels[i] - levels[i - 1]) * pmax;
  }
  return ap;
}

using Grid = std::vector<std::vector<double>>;
using CGrid = std::vector<std::vector<std::complex<double>>>;

/// Direct double sum, F(u,v) = sum f(x,y) exp(-2 pi i (ux + vy) / N).
inline CGrid direct_dft(const Grid& f) {
  const std::size_t n = f.size();
  CGrid out(n, std::vector<std::complex<double>>(n));
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t x = 0; x < n; ++x) {
        for (std::size_t y = 0; y < n; ++y) {
          const double ang = -2.0 * std::numbers::pi * static_cast<double>(u * x + v * y) / static_cast<double>(n);
          acc += f[x][y] * std::polar(1.0, ang);
        }
      }
      out[u][v] = acc;
    }
  }
  return out;
}

}  // namespace oracle
