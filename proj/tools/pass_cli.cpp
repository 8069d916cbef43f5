// Command-line entry points: train / eval / gradcheck / synth.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pass/checkpoint.hpp"
#include "pass/config.hpp"
#include "pass/data.hpp"
#include "pass/gradcheck.hpp"
#include "pass/metrics.hpp"
#include "pass/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace pass;

namespace {

// distinct exit codes per failure class
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

// Relative output paths land under $PASS_OUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("PASS_OUT_ROOT");
  if (root && *root && fs::path(path).is_relative())
    return (fs::path(root) / path).string();
  return path;
}

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

json spec_to_json(const NetworkSpec& s) {
  return json{{"resolution", s.base_resolution},
              {"image_channels", s.image_channels},
              {"base_filters", s.base_filters},
              {"depth", s.depth},
              {"latent_dim", s.latent_dim},
              {"encoder_input",
               s.encoder_input == EncoderInput::Stacked ? "stacked" : "mask_only"}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec s;
  s.base_resolution = j.at("resolution").get<int>();
  s.image_channels = j.at("image_channels").get<int>();
  s.base_filters = j.at("base_filters").get<int>();
  s.depth = j.at("depth").get<int>();
  s.latent_dim = j.at("latent_dim").get<int>();
  s.encoder_input = j.at("encoder_input").get<std::string>() == "mask_only"
                        ? EncoderInput::MaskOnly
                        : EncoderInput::Stacked;
  s.validate();
  return s;
}

struct TrainSetup {
  NetworkSpec spec;
  TrainConfig train;
  Dataset dataset;
  std::string out_dir;
  json config_snapshot;
};

TrainSetup load_train_setup(const std::string& config_path,
                            const std::string& ablation, int seed_override) {
  KeyValues kv = KeyValues::load(config_path);
  TrainSetup s;
  s.out_dir = resolve_out(kv.require_str("out_dir"));

  s.spec.base_resolution = kv.get_int("resolution", 64);
  s.spec.image_channels = kv.get_int("channels", 1);
  s.spec.base_filters = kv.get_int("base_filters", 4);
  s.spec.depth = kv.get_int("depth", 4);
  s.spec.latent_dim = kv.get_int("latent_dim", 256);
  const std::string enc_in = kv.get_str("encoder_input", "stacked");
  if (enc_in == "stacked")
    s.spec.encoder_input = EncoderInput::Stacked;
  else if (enc_in == "mask_only")
    s.spec.encoder_input = EncoderInput::MaskOnly;
  else
    throw ConfigError("encoder_input must be stacked or mask_only, got " + enc_in);
  s.spec.validate();

  TrainConfig& t = s.train;
  t.epochs = kv.get_int("epochs", 30);
  t.batch_size = kv.get_int("batch_size", 4);
  t.lr_S = kv.get_float("lr_s", 0.01f);
  t.lr_D = kv.get_float("lr_d", 0.001f);
  t.lr_E = kv.get_float("lr_e", 0.001f);
  t.decay_factor = kv.get_float("decay_factor", 0.9f);
  t.decay_every = kv.get_int("decay_every", 5);
  t.lambda = kv.get_float("lambda", 0.3f);
  t.alpha = kv.get_float("alpha", 0.01f);
  t.beta = kv.get_float("beta", 1.0f);
  t.dice_eps = kv.get_float("dice_eps", 1.0f);
  t.kl_eps = kv.get_float("kl_eps", 1e-7f);
  const std::string klv = kv.get_str("kl_variant", "paper");
  if (klv == "paper")
    t.kl_variant = KlVariant::Paper;
  else if (klv == "standard")
    t.kl_variant = KlVariant::Standard;
  else
    throw ConfigError("kl_variant must be paper or standard, got " + klv);
  t.use_gx = kv.get_bool("use_gx", true);
  t.progressive = kv.get_bool("progressive", true);
  t.progress_interval = kv.get_int("progress_interval", 2);
  t.seed = (uint32_t)kv.get_int("seed", 1);

  if (ablation == "no-gx")
    t.use_gx = false;
  else if (ablation == "no-progressive")
    t.progressive = false;
  else if (!ablation.empty())
    throw ConfigError("unknown ablation: " + ablation);
  if (seed_override >= 0) t.seed = (uint32_t)seed_override;
  t.validate();

  const std::string data_dir = kv.get_str("data_dir", "");
  const std::string domain_spec = kv.get_str("domain_spec", "");
  if (data_dir.empty() == domain_spec.empty())
    throw ConfigError("config must set exactly one of data_dir, domain_spec");
  const int n_samples = kv.get_int("n_samples", 16);
  const uint32_t data_seed = (uint32_t)kv.get_int("data_seed", 100);
  if (!data_dir.empty()) {
    s.dataset = load_folder((fs::path(data_dir) / "images").string(),
                            (fs::path(data_dir) / "masks").string(),
                            s.spec.base_resolution, s.spec.image_channels);
    s.dataset.name = fs::path(data_dir).filename().string();
  } else {
    DomainSpec ds = parse_domain_spec(domain_spec);
    ds.resolution = s.spec.base_resolution;
    s.dataset = generate_synthetic_domain(ds, n_samples, data_seed);
  }
  const int n = (int)s.dataset.samples.size();
  const int train_n = kv.get_int("train_n", n);
  const int val_n = kv.get_int("val_n", n - train_n > 0 ? (n - train_n) / 2 : 0);
  const int test_n = kv.get_int("test_n", n - train_n - val_n);
  make_splits(s.dataset, train_n, val_n, test_n,
              (uint32_t)kv.get_int("split_seed", 7));

  const auto unread = kv.unread_keys();
  if (!unread.empty()) throw ConfigError("unknown config key: " + unread.front());

  for (const auto& [k, v] : kv.all()) s.config_snapshot[k] = v;
  return s;
}

void write_pred_png(const Tensor& probs, int sample, const std::string& path) {
  const int H = probs.dim(1), W = probs.dim(2);
  cv::Mat img(H, W, CV_8UC1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      img.at<uint8_t>(y, x) = (uint8_t)std::lround(
          255.0f * probs.data()[(((size_t)sample * H + y) * W + x)]);
  cv::imwrite(path, img);
}

int cmd_train(const std::string& config_path, const std::string& ablation,
              int seed_override) {
  TrainSetup s = load_train_setup(config_path, ablation, seed_override);
  fs::create_directories(s.out_dir);

  PassModel model = PassModel::build(s.spec, s.train.seed);
  Trainer trainer(std::move(model), s.train);
  const double best = trainer.train(s.dataset, s.out_dir);

  json manifest{{"command", "train"},
                {"version", 1},
                {"config_file", config_path},
                {"config", s.config_snapshot},
                {"ablation", ablation},
                {"seed", s.train.seed},
                {"network", spec_to_json(s.spec)},
                {"dataset",
                 {{"name", s.dataset.name},
                  {"n_samples", s.dataset.samples.size()},
                  {"fingerprint", hex64(s.dataset.fingerprint())}}},
                {"outputs",
                 {"loss_log.csv", "val_metrics.csv", "best.ckpt", "final.ckpt"}}};
  write_json(manifest, (fs::path(s.out_dir) / "manifest.json").string());

  std::cout << "train: done, best val dice " << best << "\n"
            << "outputs in " << s.out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_root, const std::string& data_root,
             const std::string& out_dir_in) {
  const std::string out_dir = resolve_out(out_dir_in);

  struct TrainRun {
    std::string name, ckpt;
    NetworkSpec spec;
  };
  std::vector<TrainRun> runs;
  std::vector<std::string> domains;  // test-domain dirs under data_root
  std::vector<std::string> missing;

  if (!fs::is_directory(ckpt_root)) missing.push_back(ckpt_root);
  if (!fs::is_directory(data_root)) missing.push_back(data_root);
  if (!missing.empty()) {
    std::string msg = "missing inputs:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
  for (const auto& e : fs::directory_iterator(ckpt_root)) {
    if (!e.is_directory()) continue;
    const auto manifest_path = e.path() / "manifest.json";
    const auto ckpt_path = e.path() / "best.ckpt";
    if (!fs::exists(manifest_path)) missing.push_back(manifest_path.string());
    if (!fs::exists(ckpt_path)) missing.push_back(ckpt_path.string());
    if (!fs::exists(manifest_path) || !fs::exists(ckpt_path)) continue;
    std::ifstream mf(manifest_path);
    json manifest = json::parse(mf);
    TrainRun run;
    run.name = manifest.value("/dataset/name"_json_pointer, e.path().filename().string());
    run.ckpt = ckpt_path.string();
    run.spec = spec_from_json(manifest.at("network"));
    runs.push_back(std::move(run));
  }
  for (const auto& e : fs::directory_iterator(data_root))
    if (e.is_directory() && fs::is_directory(e.path() / "images") &&
        fs::is_directory(e.path() / "masks"))
      domains.push_back(e.path().string());
  std::sort(runs.begin(), runs.end(),
            [](const TrainRun& a, const TrainRun& b) { return a.name < b.name; });
  std::sort(domains.begin(), domains.end());
  if (runs.empty()) missing.push_back(ckpt_root + " (no checkpoint runs)");
  if (domains.empty()) missing.push_back(data_root + " (no image/mask domains)");
  if (!missing.empty()) {
    std::string msg = "missing inputs:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }

  EvalMatrix matrix;
  for (const auto& r : runs) matrix.train_domains.push_back(r.name);
  for (const auto& d : domains)
    matrix.test_domains.push_back(fs::path(d).filename().string());
  matrix.cells.resize(runs.size());

  fs::create_directories(out_dir);
  for (size_t ti = 0; ti < runs.size(); ++ti) {
    const TrainRun& run = runs[ti];
    PassModel model = PassModel::build(run.spec, 0);
    load_model(model, run.ckpt);

    for (size_t di = 0; di < domains.size(); ++di) {
      Dataset ds = load_folder((fs::path(domains[di]) / "images").string(),
                               (fs::path(domains[di]) / "masks").string(),
                               run.spec.base_resolution, run.spec.image_channels);
      const fs::path pred_dir =
          fs::path(out_dir) / "predictions" / run.name / matrix.test_domains[di];
      fs::create_directories(pred_dir);

      EvalCell cell;
      cell.in_domain = (run.name == matrix.test_domains[di]);
      const int R = ds.resolution;
      const int batch = 4;
      int idx = 0;
      for (int start = 0; start < (int)ds.samples.size(); start += batch) {
        std::vector<int> chunk;
        for (int i = start; i < std::min((int)ds.samples.size(), start + batch); ++i)
          chunk.push_back(i);
        Tensor x = ds.image_batch(chunk);
        Tensor y = ds.mask_batch(chunk);
        SegmentorOutput out = forward_segmentor(model.S, run.spec, x, false);
        for (size_t i = 0; i < chunk.size(); ++i, ++idx) {
          char name[32];
          std::snprintf(name, sizeof name, "%04d.png", idx);
          write_pred_png(out.y1, (int)i, (pred_dir / name).string());

          Mask pred = Mask::from_tensor(out.y1, (int)i);
          Mask ref = Mask::from_tensor(y, (int)i);
          cell.mean.dice += dice_score(pred, ref);
          std::vector<float> soft((size_t)R * R);
          for (int p = 0; p < R * R; ++p)
            soft[(size_t)p] = out.y1.data()[(size_t)i * R * R + p];
          cell.mean.ssim += ssim(soft, ds.samples[chunk[i]].mask, R, R);
          if (auto hd = avg_hausdorff(pred, ref)) {
            cell.mean.avg_hd += *hd;
            cell.n_hd++;
          }
          cell.n_samples++;
        }
      }
      if (cell.n_samples) {
        cell.mean.dice /= cell.n_samples;
        cell.mean.ssim /= cell.n_samples;
      }
      if (cell.n_hd)
        cell.mean.avg_hd /= cell.n_hd;
      else
        cell.mean.hd_defined = false;
      matrix.cells[ti].push_back(cell);
    }
  }

  {
    std::ofstream csv(fs::path(out_dir) / "matrix.csv");
    csv << matrix.to_csv();
    std::ofstream txt(fs::path(out_dir) / "matrix.txt");
    txt << matrix.to_text_table();
  }
  json manifest{{"command", "eval"},
                {"version", 1},
                {"checkpoints", ckpt_root},
                {"data", data_root},
                {"train_domains", matrix.train_domains},
                {"test_domains", matrix.test_domains},
                {"outputs", {"matrix.csv", "matrix.txt", "predictions/"}}};
  write_json(manifest, (fs::path(out_dir) / "manifest.json").string());

  std::cout << matrix.to_text_table();
  std::cout << "outputs in " << out_dir << "\n";
  return 0;
}

int cmd_gradcheck(int seed) {
  GradCheckReport report = run_gradcheck((uint32_t)seed);
  std::cout << report.to_string();
  if (!report.all_passed()) {
    std::cerr << "gradcheck: FAILED\n";
    return 1;
  }
  std::cout << "gradcheck: all " << report.results.size() << " checks passed\n";
  return 0;
}

int cmd_synth(const std::string& spec_path, int n, const std::string& out_in,
              int seed) {
  const std::string out = resolve_out(out_in);
  DomainSpec spec = parse_domain_spec(spec_path);
  Dataset ds = generate_synthetic_domain(spec, n, (uint32_t)seed);
  save_dataset(ds, out);
  json manifest{{"command", "synth"},
                {"version", 1},
                {"spec_file", spec_path},
                {"domain", spec.name},
                {"n", n},
                {"seed", seed},
                {"fingerprint", hex64(ds.fingerprint())},
                {"outputs", {"images/", "masks/"}}};
  write_json(manifest, (fs::path(out) / "manifest.json").string());
  std::cout << "synth: wrote " << n << " samples of " << spec.name << " to " << out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PASS: progressive adversarial semantic segmentation"};
  app.require_subcommand(1);

  std::string config_path, ablation, ckpt_dir, data_dir, out_dir, spec_path;
  int seed = -1, synth_seed = 100, n = 16, gc_seed = 1;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "key=value config file")->required();
  train->add_option("--ablation", ablation, "no-gx or no-progressive");
  train->add_option("--seed", seed, "override the config seed");

  auto* eval = app.add_subcommand("eval", "cross-domain evaluation matrix");
  eval->add_option("--checkpoints", ckpt_dir, "directory of training run dirs")
      ->required();
  eval->add_option("--data", data_dir, "directory of test-domain dirs")->required();
  eval->add_option("--out", out_dir, "output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", gc_seed, "rng seed");

  auto* synth = app.add_subcommand("synth", "generate a synthetic domain");
  synth->add_option("--spec", spec_path, "domain spec file")->required();
  synth->add_option("--n", n, "number of samples")->required();
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--seed", synth_seed, "rng seed");

  try {
    app.parse(argc, argv);
    if (*train) return cmd_train(config_path, ablation, seed);
    if (*eval) return cmd_eval(ckpt_dir, data_dir, out_dir);
    if (*gradcheck) return cmd_gradcheck(gc_seed);
    if (*synth) return cmd_synth(spec_path, n, out_dir, synth_seed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SpecError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
