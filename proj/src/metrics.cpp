#include "pass/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace pass {

Mask Mask::from_tensor(const Tensor& t, int sample, float threshold) {
  if (t.rank() != 4 || t.dim(3) != 1)
    throw ShapeError("Mask::from_tensor expects [N,H,W,1], got " + shape_str(t.shape()));
  Mask m;
  m.height = t.dim(1);
  m.width = t.dim(2);
  m.fg.resize((size_t)m.height * m.width);
  const int64_t off = (int64_t)sample * m.height * m.width;
  for (int64_t i = 0; i < (int64_t)m.fg.size(); ++i)
    m.fg[i] = t.data()[off + i] >= threshold ? 1 : 0;
  return m;
}

int64_t Mask::foreground() const {
  int64_t n = 0;
  for (uint8_t v : fg) n += v;
  return n;
}

double dice_score(const Mask& pred, const Mask& ref) {
  if (pred.height != ref.height || pred.width != ref.width)
    throw ShapeError("dice_score: mask extents differ");
  int64_t inter = 0, p = 0, r = 0;
  for (size_t i = 0; i < pred.fg.size(); ++i) {
    p += pred.fg[i];
    r += ref.fg[i];
    inter += pred.fg[i] & ref.fg[i];
  }
  if (p + r == 0) return 100.0;  // both empty
  return 100.0 * 2.0 * (double)inter / (double)(p + r);
}

namespace {

std::vector<std::pair<int, int>> foreground_points(const Mask& m) {
  std::vector<std::pair<int, int>> pts;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.fg[(size_t)y * m.width + x]) pts.emplace_back(y, x);
  return pts;
}

double directed_mean(const std::vector<std::pair<int, int>>& from,
                     const std::vector<std::pair<int, int>>& to) {
  double total = 0.0;
  for (const auto& [fy, fx] : from) {
    double best = std::numeric_limits<double>::max();
    for (const auto& [ty, tx] : to) {
      const double dy = fy - ty, dx = fx - tx;
      best = std::min(best, dy * dy + dx * dx);
      if (best == 0.0) break;
    }
    total += std::sqrt(best);
  }
  return total / (double)from.size();
}

}  // namespace

std::optional<double> avg_hausdorff(const Mask& pred, const Mask& ref) {
  if (pred.height != ref.height || pred.width != ref.width)
    throw ShapeError("avg_hausdorff: mask extents differ");
  auto p = foreground_points(pred);
  auto r = foreground_points(ref);
  if (p.empty() || r.empty()) return std::nullopt;
  return 0.5 * (directed_mean(p, r) + directed_mean(r, p));
}

double ssim(const std::vector<float>& pred, const std::vector<float>& ref,
            int height, int width) {
  if ((int64_t)pred.size() != (int64_t)height * width ||
      pred.size() != ref.size())
    throw ShapeError("ssim: buffer sizes do not match extents");
  const int win = std::min({11, height, width});
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int nw = win * win;

  // integral images for x, y, x^2, y^2, xy
  const int iw = width + 1;
  auto integral = [&](auto f) {
    std::vector<double> s((size_t)(height + 1) * iw, 0.0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        s[(size_t)(y + 1) * iw + x + 1] = f((size_t)y * width + x) +
                                          s[(size_t)y * iw + x + 1] +
                                          s[(size_t)(y + 1) * iw + x] -
                                          s[(size_t)y * iw + x];
    return s;
  };
  auto sx = integral([&](size_t i) { return (double)pred[i]; });
  auto sy = integral([&](size_t i) { return (double)ref[i]; });
  auto sxx = integral([&](size_t i) { return (double)pred[i] * pred[i]; });
  auto syy = integral([&](size_t i) { return (double)ref[i] * ref[i]; });
  auto sxy = integral([&](size_t i) { return (double)pred[i] * ref[i]; });
  auto box = [&](const std::vector<double>& s, int y, int x) {
    return s[(size_t)(y + win) * iw + x + win] - s[(size_t)y * iw + x + win] -
           s[(size_t)(y + win) * iw + x] + s[(size_t)y * iw + x];
  };

  double total = 0.0;
  int64_t count = 0;
  for (int y = 0; y + win <= height; ++y)
    for (int x = 0; x + win <= width; ++x) {
      const double mx = box(sx, y, x) / nw;
      const double my = box(sy, y, x) / nw;
      const double vx = box(sxx, y, x) / nw - mx * mx;
      const double vy = box(syy, y, x) / nw - my * my;
      const double cov = box(sxy, y, x) / nw - mx * my;
      const double v = ((2 * mx * my + c1) * (2 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
      total += v;
      ++count;
    }
  return total / (double)count;
}

EvalCell EvalMatrix::row_average(size_t train_idx) const {
  EvalCell avg;
  avg.present = false;
  int n = 0, nhd = 0;
  for (const auto& c : cells[train_idx]) {
    if (!c.present) continue;
    avg.mean.dice += c.mean.dice;
    avg.mean.ssim += c.mean.ssim;
    if (c.mean.hd_defined) {
      avg.mean.avg_hd += c.mean.avg_hd;
      ++nhd;
    }
    ++n;
  }
  if (n == 0) return avg;
  avg.present = true;
  avg.mean.dice /= n;
  avg.mean.ssim /= n;
  avg.mean.hd_defined = nhd > 0;
  if (nhd > 0) avg.mean.avg_hd /= nhd;
  avg.n_samples = n;
  return avg;
}

std::optional<double> EvalMatrix::domain_gap(size_t train_idx) const {
  double in = 0.0, cross = 0.0;
  int n_in = 0, n_cross = 0;
  for (const auto& c : cells[train_idx]) {
    if (!c.present) continue;
    if (c.in_domain) {
      in += c.mean.dice;
      ++n_in;
    } else {
      cross += c.mean.dice;
      ++n_cross;
    }
  }
  if (n_in == 0 || n_cross == 0) return std::nullopt;
  return in / n_in - cross / n_cross;
}

std::string EvalMatrix::to_csv() const {
  std::ostringstream os;
  os << "train_domain,test_domain,in_domain,present,n_samples,dice,ssim,avg_hd,n_hd\n";
  for (size_t i = 0; i < train_domains.size(); ++i)
    for (size_t j = 0; j < test_domains.size(); ++j) {
      const auto& c = cells[i][j];
      os << train_domains[i] << "," << test_domains[j] << "," << (c.in_domain ? 1 : 0)
         << "," << (c.present ? 1 : 0) << "," << c.n_samples << ",";
      if (c.present)
        os << c.mean.dice << "," << c.mean.ssim << ","
           << (c.mean.hd_defined ? std::to_string(c.mean.avg_hd) : "") << ","
           << c.n_hd;
      else
        os << ",,,0";
      os << "\n";
    }
  return os.str();
}

std::string EvalMatrix::to_text_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  auto block = [&](const std::string& title, auto value) {
    os << title << " (in-domain cells marked *)\n";
    os << std::setw(12) << "train\\test";
    for (const auto& d : test_domains) os << std::setw(10) << d;
    os << std::setw(10) << "Avg." << std::setw(10) << "Gap" << "\n";
    for (size_t i = 0; i < train_domains.size(); ++i) {
      os << std::setw(12) << train_domains[i];
      for (size_t j = 0; j < test_domains.size(); ++j) {
        const auto& c = cells[i][j];
        if (!c.present) {
          os << std::setw(10) << "--";
          continue;
        }
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << value(c.mean)
             << (c.in_domain ? "*" : "");
        os << std::setw(10) << cell.str();
      }
      auto avg = row_average(i);
      if (avg.present)
        os << std::setw(10) << value(avg.mean);
      else
        os << std::setw(10) << "--";
      auto gap = domain_gap(i);
      if (gap)
        os << std::setw(10) << *gap;
      else
        os << std::setw(10) << "--";
      os << "\n";
    }
    os << "\n";
  };
  block("Dice", [](const MetricTriple& m) { return m.dice; });
  block("SSIM", [](const MetricTriple& m) { return m.ssim; });
  block("Avg HD", [](const MetricTriple& m) { return m.avg_hd; });
  return os.str();
}

}  // namespace pass
