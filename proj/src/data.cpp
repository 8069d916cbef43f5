#include "pass/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pass/config.hpp"

namespace fs = std::filesystem;

namespace pass {

Tensor Dataset::image_batch(const std::vector<int>& indices) const {
  const int N = (int)indices.size();
  std::vector<float> buf((size_t)N * resolution * resolution * channels);
  for (int i = 0; i < N; ++i) {
    const auto& s = samples.at(indices[i]);
    std::copy(s.image.begin(), s.image.end(),
              buf.begin() + (size_t)i * s.image.size());
  }
  return Tensor({N, resolution, resolution, channels}, std::move(buf));
}

Tensor Dataset::mask_batch(const std::vector<int>& indices) const {
  const int N = (int)indices.size();
  std::vector<float> buf((size_t)N * resolution * resolution);
  for (int i = 0; i < N; ++i) {
    const auto& s = samples.at(indices[i]);
    std::copy(s.mask.begin(), s.mask.end(), buf.begin() + (size_t)i * s.mask.size());
  }
  return Tensor({N, resolution, resolution, 1}, std::move(buf));
}

uint64_t Dataset::fingerprint() const {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto eat = [&](const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  eat(&resolution, sizeof resolution);
  eat(&channels, sizeof channels);
  for (const auto& s : samples) {
    eat(s.image.data(), s.image.size() * sizeof(float));
    eat(s.mask.data(), s.mask.size() * sizeof(float));
  }
  return h;
}

// ---------------------------------------------------------------------------

Dataset load_folder(const std::string& images_dir, const std::string& masks_dir,
                    int resolution, int channels) {
  if (channels != 1 && channels != 3)
    throw ConfigError("load_folder supports 1 or 3 channels");
  if (!fs::is_directory(images_dir)) throw DataError("not a directory: " + images_dir);
  if (!fs::is_directory(masks_dir)) throw DataError("not a directory: " + masks_dir);

  std::map<std::string, fs::path> imgs, msks;
  auto collect = [](const std::string& dir, std::map<std::string, fs::path>& out) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      const auto ext = e.path().extension().string();
      if (ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".jpg")
        out[e.path().stem().string()] = e.path();
    }
  };
  collect(images_dir, imgs);
  collect(masks_dir, msks);

  std::vector<std::string> unmatched;
  for (const auto& [stem, p] : imgs)
    if (!msks.count(stem)) unmatched.push_back(stem + " (no mask)");
  for (const auto& [stem, p] : msks)
    if (!imgs.count(stem)) unmatched.push_back(stem + " (no image)");
  if (!unmatched.empty()) {
    std::ostringstream os;
    os << "unmatched filename stems:";
    for (const auto& u : unmatched) os << " " << u;
    throw DataError(os.str());
  }
  if (imgs.empty()) throw DataError("no images found in " + images_dir);

  Dataset ds;
  ds.resolution = resolution;
  ds.channels = channels;
  bool warned_nonbinary = false;
  for (const auto& [stem, path] : imgs) {
    cv::Mat img = cv::imread(path.string(),
                             channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    if (img.empty()) throw DataError("cannot read image: " + path.string());
    cv::Mat imr;
    cv::resize(img, imr, cv::Size(resolution, resolution), 0, 0, cv::INTER_LINEAR);

    cv::Mat msk = cv::imread(msks.at(stem).string(), cv::IMREAD_GRAYSCALE);
    if (msk.empty()) throw DataError("cannot read mask: " + msks.at(stem).string());
    cv::Mat mr;
    cv::resize(msk, mr, cv::Size(resolution, resolution), 0, 0, cv::INTER_NEAREST);

    Sample s;
    s.image.resize((size_t)resolution * resolution * channels);
    if (channels == 1) {
      for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x)
          s.image[(size_t)y * resolution + x] = imr.at<uint8_t>(y, x) / 255.0f;
    } else {
      for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
          const auto& px = imr.at<cv::Vec3b>(y, x);  // BGR
          const size_t o = ((size_t)y * resolution + x) * 3;
          s.image[o] = px[2] / 255.0f;
          s.image[o + 1] = px[1] / 255.0f;
          s.image[o + 2] = px[0] / 255.0f;
        }
    }
    s.mask.resize((size_t)resolution * resolution);
    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x) {
        const uint8_t v = mr.at<uint8_t>(y, x);
        if (v != 0 && v != 255 && !warned_nonbinary) {
          std::cerr << "warning: non-binary mask values in " << msks.at(stem)
                    << ", thresholding at 128\n";
          warned_nonbinary = true;
        }
        s.mask[(size_t)y * resolution + x] = v >= 128 ? 1.0f : 0.0f;
      }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void make_splits(Dataset& dataset, int train_n, int val_n, int test_n,
                 uint32_t seed) {
  const int total = (int)dataset.samples.size();
  if (train_n + val_n + test_n != total)
    throw ConfigError("split counts " + std::to_string(train_n) + "+" +
                      std::to_string(val_n) + "+" + std::to_string(test_n) +
                      " do not cover " + std::to_string(total) + " samples");
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  dataset.train_idx.assign(idx.begin(), idx.begin() + train_n);
  dataset.val_idx.assign(idx.begin() + train_n, idx.begin() + train_n + val_n);
  dataset.test_idx.assign(idx.begin() + train_n + val_n, idx.end());
}

// ---------------------------------------------------------------------------
// synthetic domains

namespace {

uint32_t mix(uint32_t a, uint32_t b) {
  uint64_t h = (uint64_t)a * 0x9E3779B97F4A7C15ull + b;
  h ^= h >> 29;
  h *= 0xBF58476D1CE4E5B9ull;
  h ^= h >> 32;
  return (uint32_t)h;
}

struct Ellipse {
  float cx, cy, a, b, tilt;
  float amp[3], phase[3];  // radial perturbation harmonics k=2..4
};

Ellipse draw_ellipse(std::mt19937& rng, float cx_lo, float cx_hi, int R) {
  auto u = [&](float lo, float hi) {
    return std::uniform_real_distribution<float>(lo, hi)(rng);
  };
  Ellipse e;
  e.cx = u(cx_lo, cx_hi) * R;
  e.cy = u(0.45f, 0.55f) * R;
  e.a = u(0.10f, 0.14f) * R;
  e.b = u(0.18f, 0.26f) * R;
  e.tilt = u(-0.15f, 0.15f);
  for (int k = 0; k < 3; ++k) {
    e.amp[k] = u(0.0f, 0.05f);
    e.phase[k] = u(0.0f, 6.2831853f);
  }
  return e;
}

bool inside(const Ellipse& e, float x, float y) {
  const float dx = x - e.cx, dy = y - e.cy;
  const float c = std::cos(e.tilt), s = std::sin(e.tilt);
  const float u = (dx * c + dy * s) / e.a;
  const float v = (-dx * s + dy * c) / e.b;
  const float rho = std::sqrt(u * u + v * v);
  const float theta = std::atan2(v, u);
  float bound = 1.0f;
  for (int k = 0; k < 3; ++k)
    bound += e.amp[k] * std::sin((float)(k + 2) * theta + e.phase[k]);
  return rho <= bound;
}

void lungs_mask(std::mt19937& rng, int R, std::vector<float>& mask) {
  // centers and radii keep the two components disjoint by construction
  const Ellipse left = draw_ellipse(rng, 0.25f, 0.30f, R);
  const Ellipse right = draw_ellipse(rng, 0.70f, 0.75f, R);
  for (int y = 0; y < R; ++y)
    for (int x = 0; x < R; ++x)
      mask[(size_t)y * R + x] =
          (inside(left, (float)x, (float)y) || inside(right, (float)x, (float)y))
              ? 1.0f
              : 0.0f;
}

void stamp(std::vector<float>& mask, int R, float x, float y, int width) {
  const float r = width * 0.5f;
  const int x0 = std::max(0, (int)std::floor(x - r)), x1 = std::min(R - 1, (int)std::ceil(x + r));
  const int y0 = std::max(0, (int)std::floor(y - r)), y1 = std::min(R - 1, (int)std::ceil(y + r));
  for (int yy = y0; yy <= y1; ++yy)
    for (int xx = x0; xx <= x1; ++xx) {
      const float dx = xx - x, dy = yy - y;
      if (dx * dx + dy * dy <= r * r + 0.25f) mask[(size_t)yy * R + xx] = 1.0f;
    }
}

void vessel_branch(std::mt19937& rng, int R, std::vector<float>& mask, float x,
                   float y, float angle, float length, int width, int depth) {
  if (depth <= 0 || length < 2.0f) return;
  auto u = [&](float lo, float hi) {
    return std::uniform_real_distribution<float>(lo, hi)(rng);
  };
  const int steps = std::max(2, (int)length);
  float cx = x, cy = y, a = angle;
  for (int i = 0; i < steps; ++i) {
    a += u(-0.12f, 0.12f);  // wander
    cx += std::cos(a);
    cy += std::sin(a);
    if (cx < 0 || cy < 0 || cx >= R || cy >= R) return;
    stamp(mask, R, cx, cy, width);
  }
  const int child_w = std::max(1, width - 1);
  vessel_branch(rng, R, mask, cx, cy, a + u(0.25f, 0.7f), length * u(0.6f, 0.8f),
                child_w, depth - 1);
  vessel_branch(rng, R, mask, cx, cy, a - u(0.25f, 0.7f), length * u(0.6f, 0.8f),
                child_w, depth - 1);
}

void vessels_mask(std::mt19937& rng, int R, std::vector<float>& mask) {
  auto u = [&](float lo, float hi) {
    return std::uniform_real_distribution<float>(lo, hi)(rng);
  };
  const int roots = 2;
  for (int i = 0; i < roots; ++i) {
    const float x0 = u(0.3f, 0.7f) * R;
    vessel_branch(rng, R, mask, x0, 1.0f, u(1.2f, 1.9f), R * u(0.35f, 0.5f), 3, 5);
  }
}

}  // namespace

Dataset generate_synthetic_domain(const DomainSpec& spec, int n, uint32_t seed) {
  if (n <= 0) throw ConfigError("generate_synthetic_domain: n must be positive");
  const int R = spec.resolution;
  Dataset ds;
  ds.name = spec.name;
  ds.resolution = R;
  ds.channels = 1;

  const uint32_t family_salt = spec.shape_family == ShapeFamily::Lungs ? 17u : 23u;
  for (int i = 0; i < n; ++i) {
    // geometry stream is independent of the intensity profile
    std::mt19937 rng_geom(mix(mix(seed, family_salt), (uint32_t)i));
    std::mt19937 rng_app(mix(mix(seed, 0x5bd1e995u), (uint32_t)i));
    auto ua = [&](float lo, float hi) {
      return std::uniform_real_distribution<float>(lo, hi)(rng_app);
    };

    Sample s;
    s.mask.assign((size_t)R * R, 0.0f);
    if (spec.shape_family == ShapeFamily::Lungs)
      lungs_mask(rng_geom, R, s.mask);
    else
      vessels_mask(rng_geom, R, s.mask);

    // low-frequency background texture
    const float f1x = ua(0.5f, 2.0f), f1y = ua(0.5f, 2.0f), p1 = ua(0.0f, 6.28f);
    const float f2x = ua(1.0f, 3.0f), f2y = ua(1.0f, 3.0f), p2 = ua(0.0f, 6.28f);
    std::normal_distribution<float> noise(0.0f, spec.noise_level);

    s.image.resize((size_t)R * R);
    for (int y = 0; y < R; ++y)
      for (int x = 0; x < R; ++x) {
        const size_t idx = (size_t)y * R + x;
        float v = spec.background_level + spec.intensity_offset;
        v += spec.texture_amplitude *
             0.5f *
             (std::sin(6.2831853f * (f1x * x + f1y * y) / R + p1) +
              std::sin(6.2831853f * (f2x * x + f2y * y) / R + p2));
        if (s.mask[idx] > 0.5f) v += spec.foreground_contrast;
        v += noise(rng_app);
        s.image[idx] = std::min(1.0f, std::max(0.0f, v));
      }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");
  const int R = dataset.resolution;
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", i);
    cv::Mat img(R, R, dataset.channels == 1 ? CV_8UC1 : CV_8UC3);
    for (int y = 0; y < R; ++y)
      for (int x = 0; x < R; ++x) {
        if (dataset.channels == 1) {
          img.at<uint8_t>(y, x) =
              (uint8_t)std::lround(s.image[(size_t)y * R + x] * 255.0f);
        } else {
          const size_t o = ((size_t)y * R + x) * 3;
          img.at<cv::Vec3b>(y, x) =
              cv::Vec3b((uint8_t)std::lround(s.image[o + 2] * 255.0f),
                        (uint8_t)std::lround(s.image[o + 1] * 255.0f),
                        (uint8_t)std::lround(s.image[o] * 255.0f));
        }
      }
    cv::imwrite((fs::path(out_dir) / "images" / name).string(), img);
    cv::Mat msk(R, R, CV_8UC1);
    for (int y = 0; y < R; ++y)
      for (int x = 0; x < R; ++x)
        msk.at<uint8_t>(y, x) = s.mask[(size_t)y * R + x] > 0.5f ? 255 : 0;
    cv::imwrite((fs::path(out_dir) / "masks" / name).string(), msk);
  }
}

DomainSpec parse_domain_spec(const std::string& path) {
  KeyValues kv = KeyValues::load(path);
  DomainSpec spec;
  spec.name = kv.get_str("name", "domain");
  const std::string family = kv.get_str("family", "lungs");
  if (family == "lungs")
    spec.shape_family = ShapeFamily::Lungs;
  else if (family == "vessels")
    spec.shape_family = ShapeFamily::Vessels;
  else
    throw ConfigError("unknown shape family: " + family);
  spec.resolution = kv.get_int("resolution", 64);
  spec.background_level = kv.get_float("background_level", 0.65f);
  spec.intensity_offset = kv.get_float("intensity_offset", 0.0f);
  spec.foreground_contrast = kv.get_float("foreground_contrast", -0.35f);
  spec.texture_amplitude = kv.get_float("texture_amplitude", 0.06f);
  spec.noise_level = kv.get_float("noise_level", 0.02f);
  const auto unread = kv.unread_keys();
  if (!unread.empty())
    throw ConfigError("unknown domain spec key: " + unread.front());
  return spec;
}

}  // namespace pass
