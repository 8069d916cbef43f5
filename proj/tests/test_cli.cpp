// End-to-end checks of the `pass` binary (path supplied via PASS_BIN).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string pass_bin() {
  const char* p = std::getenv("PASS_BIN");
  REQUIRE_MESSAGE(p != nullptr, "PASS_BIN must point at the pass executable");
  return p;
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "pass_cli_out.txt";
  const std::string cmd = pass_bin() + " " + args + " >" + log.string() + " 2>&1";
  const int ret = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(ret);
  std::ifstream f(log);
  std::stringstream ss;
  ss << f.rdbuf();
  r.output = ss.str();
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int count_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) return 0;
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) ++n;
  return n;
}

std::string tiny_train_config(const fs::path& out_dir, const fs::path& domain_spec) {
  std::ostringstream os;
  os << "out_dir = " << out_dir.string() << "\n"
     << "resolution = 32\nbase_filters = 2\ndepth = 4\nlatent_dim = 16\n"
     << "epochs = 2\nbatch_size = 2\nseed = 3\n"
     << "domain_spec = " << domain_spec.string() << "\n"
     << "n_samples = 6\ndata_seed = 20\n"
     << "train_n = 4\nval_n = 1\ntest_n = 1\nsplit_seed = 7\n";
  return os.str();
}

}  // namespace

TEST_CASE("gradcheck subcommand passes and is seed-stable") {
  RunResult r = run("gradcheck --seed 2");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("all") != std::string::npos);
  CHECK(r.output.find("FAIL") == std::string::npos);

  RunResult again = run("gradcheck --seed 2");
  CHECK(again.output == r.output);
}

TEST_CASE("synth writes a loadable dataset with a manifest") {
  TempDir tmp("pass_cli_synth");
  write_file(tmp.path / "domain.txt",
             "name = dom-a\nfamily = lungs\nintensity_offset = 0.1\n");
  RunResult r = run("synth --spec " + (tmp.path / "domain.txt").string() +
                    " --n 5 --out " + (tmp.path / "out").string() + " --seed 4");
  CHECK(r.exit_code == 0);
  CHECK(count_files(tmp.path / "out" / "images") == 5);
  CHECK(count_files(tmp.path / "out" / "masks") == 5);
  CHECK(fs::exists(tmp.path / "out" / "manifest.json"));

  SUBCASE("same seed reproduces identical bytes") {
    run("synth --spec " + (tmp.path / "domain.txt").string() + " --n 5 --out " +
        (tmp.path / "out2").string() + " --seed 4");
    CHECK(slurp(tmp.path / "out" / "images" / "0000.png") ==
          slurp(tmp.path / "out2" / "images" / "0000.png"));
  }
  SUBCASE("unknown spec key is a config error naming the key") {
    write_file(tmp.path / "bad.txt", "family = lungs\nnoise_lvl = 0.2\n");
    RunResult bad = run("synth --spec " + (tmp.path / "bad.txt").string() +
                        " --n 2 --out " + (tmp.path / "out3").string());
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("noise_lvl") != std::string::npos);
  }
}

TEST_CASE("train runs end to end and rejects unknown config keys") {
  TempDir tmp("pass_cli_train");
  write_file(tmp.path / "domain.txt", "name = dom-a\nfamily = lungs\n");
  write_file(tmp.path / "train.cfg",
             tiny_train_config(tmp.path / "run1", tmp.path / "domain.txt"));

  RunResult r = run("train --config " + (tmp.path / "train.cfg").string());
  CHECK(r.exit_code == 0);
  for (const char* f : {"loss_log.csv", "val_metrics.csv", "best.ckpt",
                        "final.ckpt", "manifest.json"})
    CHECK(fs::exists(tmp.path / "run1" / f));

  SUBCASE("identical config reruns to identical outputs") {
    write_file(tmp.path / "train2.cfg",
               tiny_train_config(tmp.path / "run2", tmp.path / "domain.txt"));
    RunResult r2 = run("train --config " + (tmp.path / "train2.cfg").string());
    CHECK(r2.exit_code == 0);
    CHECK(slurp(tmp.path / "run1" / "loss_log.csv") ==
          slurp(tmp.path / "run2" / "loss_log.csv"));
    CHECK(slurp(tmp.path / "run1" / "final.ckpt") ==
          slurp(tmp.path / "run2" / "final.ckpt"));
  }
  SUBCASE("the no-gx ablation zeroes the KL column") {
    write_file(tmp.path / "train3.cfg",
               tiny_train_config(tmp.path / "run3", tmp.path / "domain.txt"));
    RunResult r3 =
        run("train --config " + (tmp.path / "train3.cfg").string() + " --ablation no-gx");
    CHECK(r3.exit_code == 0);
    std::ifstream log(tmp.path / "run3" / "loss_log.csv");
    std::string line;
    std::getline(log, line);  // header
    int rows = 0;
    while (std::getline(log, line)) {
      std::stringstream ss(line);
      std::string cell;
      for (int c = 0; c <= 6; ++c) std::getline(ss, cell, ',');  // kl column
      CHECK(cell == "0");
      ++rows;
    }
    CHECK(rows > 0);
  }
  SUBCASE("unknown config key is a config error naming the key") {
    write_file(tmp.path / "bad.cfg",
               tiny_train_config(tmp.path / "run4", tmp.path / "domain.txt") +
                   "epochz = 9\n");
    RunResult bad = run("train --config " + (tmp.path / "bad.cfg").string());
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("epochz") != std::string::npos);
  }
}

TEST_CASE("eval produces the cross-domain matrix and per-sample predictions") {
  TempDir tmp("pass_cli_eval");
  // one trained run and two test domains
  write_file(tmp.path / "dom-a.txt",
             "name = dom-a\nfamily = lungs\nintensity_offset = 0.0\n");
  write_file(tmp.path / "dom-b.txt",
             "name = dom-b\nfamily = lungs\nintensity_offset = 0.25\n");
  fs::create_directories(tmp.path / "ckpts");
  write_file(tmp.path / "train.cfg",
             tiny_train_config(tmp.path / "ckpts" / "dom-a", tmp.path / "dom-a.txt"));
  REQUIRE(run("train --config " + (tmp.path / "train.cfg").string()).exit_code == 0);
  // resolution must match the training resolution for eval
  for (const char* d : {"dom-a", "dom-b"}) {
    std::string spec = (tmp.path / (std::string(d) + ".txt")).string();
    REQUIRE(run("synth --spec " + spec + " --n 3 --out " +
                (tmp.path / "data" / d).string() + " --seed 77")
                .exit_code == 0);
  }

  RunResult r = run("eval --checkpoints " + (tmp.path / "ckpts").string() +
                    " --data " + (tmp.path / "data").string() + " --out " +
                    (tmp.path / "report").string());
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(tmp.path / "report" / "matrix.csv"));
  CHECK(fs::exists(tmp.path / "report" / "matrix.txt"));
  // 1 train domain x 2 test domains x 3 samples
  CHECK(count_files(tmp.path / "report" / "predictions" / "dom-a" / "dom-a") == 3);
  CHECK(count_files(tmp.path / "report" / "predictions" / "dom-a" / "dom-b") == 3);
  const std::string csv = slurp(tmp.path / "report" / "matrix.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 cells

  SUBCASE("missing inputs are listed as a data error") {
    RunResult bad = run("eval --checkpoints " + (tmp.path / "nope").string() +
                        " --data " + (tmp.path / "data").string() + " --out " +
                        (tmp.path / "r2").string());
    CHECK(bad.exit_code == 3);
    CHECK(bad.output.find("nope") != std::string::npos);
  }
}

TEST_CASE("PASS_OUT_ROOT anchors relative output paths") {
  TempDir tmp("pass_cli_root");
  write_file(tmp.path / "domain.txt", "name = dom-a\nfamily = lungs\n");
  const std::string cmd = "PASS_OUT_ROOT=" + tmp.path.string() + " " + pass_bin() +
                          " synth --spec " + (tmp.path / "domain.txt").string() +
                          " --n 2 --out rooted >/dev/null 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  CHECK(count_files(tmp.path / "rooted" / "images") == 2);
}
