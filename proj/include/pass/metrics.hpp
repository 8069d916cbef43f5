#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pass/tensor.hpp"

namespace pass {

// Binary mask as a flat row-major H*W byte grid.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> fg;  // 0 or 1 per pixel

  static Mask from_tensor(const Tensor& t, int sample, float threshold = 0.5f);
  int64_t foreground() const;
};

struct MetricTriple {
  double dice = 0.0;    // [0,100]
  double ssim = 0.0;    // [-1,1]
  double avg_hd = 0.0;  // pixel units
  bool hd_defined = true;
};

// 100 * 2|P&R| / (|P|+|R|); both empty -> 100
double dice_score(const Mask& pred, const Mask& ref);

// Symmetric average directed distance between foreground pixel sets,
// Euclidean, halved. Empty foreground on either side -> nullopt.
std::optional<double> avg_hausdorff(const Mask& pred, const Mask& ref);

// Mean local SSIM, 11x11 uniform window over positions where the full
// window fits, C1=(0.01)^2, C2=(0.03)^2 (L=1). Inputs are soft maps in
// [0,1], flat row-major H*W.
double ssim(const std::vector<float>& pred, const std::vector<float>& ref,
            int height, int width);

struct EvalCell {
  MetricTriple mean;
  int n_samples = 0;
  int n_hd = 0;  // samples contributing to avg_hd
  bool present = true;
  bool in_domain = false;
};

// train-domain rows x test-domain columns, mirroring the paper-style
// cross-domain grid with a per-row average and domain gap.
struct EvalMatrix {
  std::vector<std::string> train_domains;
  std::vector<std::string> test_domains;
  std::vector<std::vector<EvalCell>> cells;  // [train][test]

  EvalCell row_average(size_t train_idx) const;
  // in-domain dice minus mean cross-domain dice
  std::optional<double> domain_gap(size_t train_idx) const;

  std::string to_csv() const;
  std::string to_text_table() const;
};

}  // namespace pass
