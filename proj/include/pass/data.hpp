#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pass/tensor.hpp"

namespace pass {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Sample {
  std::vector<float> image;  // H*W*C, values in [0,1]
  std::vector<float> mask;   // H*W, values in {0,1}
};

struct Dataset {
  std::string name;
  int resolution = 0;
  int channels = 1;
  std::vector<Sample> samples;
  std::vector<int> train_idx, val_idx, test_idx;

  Tensor image_batch(const std::vector<int>& indices) const;  // [N,H,W,C]
  Tensor mask_batch(const std::vector<int>& indices) const;   // [N,H,W,1]
  uint64_t fingerprint() const;  // FNV-1a over quantized sample bytes
};

enum class ShapeFamily { Lungs, Vessels };

struct DomainSpec {
  std::string name = "domain";
  ShapeFamily shape_family = ShapeFamily::Lungs;
  int resolution = 64;
  // intensity profile
  float background_level = 0.65f;
  float intensity_offset = 0.0f;   // what separates domains
  float foreground_contrast = -0.35f;  // fg relative to bg; negative = darker
  float texture_amplitude = 0.06f;
  float noise_level = 0.02f;
};

Dataset load_folder(const std::string& images_dir, const std::string& masks_dir,
                    int resolution, int channels);

// Seeded shuffle then contiguous partition; counts must cover the dataset.
void make_splits(Dataset& dataset, int train_n, int val_n, int test_n,
                 uint32_t seed);

// Mask geometry depends only on (family, resolution, n, seed), so domains
// built from the same seed share label geometry and differ in appearance.
Dataset generate_synthetic_domain(const DomainSpec& spec, int n, uint32_t seed);

// PNG export/import of a dataset in images/ masks/ layout.
void save_dataset(const Dataset& dataset, const std::string& out_dir);

DomainSpec parse_domain_spec(const std::string& path);

}  // namespace pass
