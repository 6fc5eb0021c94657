#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "cli_app.hpp"
#include "cvae/dists.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using cvae::testing::slurp;

namespace {

struct Result {
  int status;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int status = cvae::cli::run(args, out, err);
  return {status, out.str(), err.str()};
}

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::vector<std::string> small_train(const fs::path& data, const fs::path& out, const std::string& strategy) {
  return {"train", "--data", data.string(), "--out", out.string(), "--strategy", strategy, "--epsilon", "0.5",
          "--dz", "2", "--epochs", "5", "--seed", "3", "--hidden", "8,8", "--iters-per-epoch", "2",
          "--inner-iters", "2", "--batch-n", "16", "--batch-m", "16"};
}

}  // namespace

TEST_CASE("generate-data grid: sizes, sidecar files, determinism") {
  const auto dir = cvae::testing::scratch_dir("cli_gen");
  const Result r = cli({"generate-data", "--grid25", "--seed", "1", "--out", (dir / "d.csv").string()});
  REQUIRE(r.status == 0);
  CHECK(line_count(dir / "d.csv") == 7500);
  CHECK(line_count(dir / "d_means.csv") == 25);
  CHECK(line_count(dir / "d_labels.csv") == 7500);
  REQUIRE(cli({"generate-data", "--grid25", "--seed", "1", "--out", (dir / "e.csv").string()}).status == 0);
  CHECK(slurp(dir / "d.csv") == slurp(dir / "e.csv"));
}

TEST_CASE("missing inputs and unknown flags") {
  const auto dir = cvae::testing::scratch_dir("cli_err");
  const std::string idx = (dir / "nowhere.idx").string();
  const Result r = cli({"generate-data", "--idx", idx, "--out", (dir / "x.csv").string()});
  CHECK(r.status == 2);
  CHECK(r.err.find(idx) != std::string::npos);

  const std::string data = (dir / "absent.csv").string();
  const Result t = cli({"train", "--data", data, "--out", (dir / "run").string()});
  CHECK(t.status == 2);
  CHECK(t.err.find(data) != std::string::npos);

  CHECK(cli({"train", "--data", data, "--out", "x", "--no-such-flag", "1"}).status != 0);
  CHECK(cli({"frobnicate"}).status != 0);
  CHECK(cli({}).status != 0);
  CHECK(cli({"train", "--data", data, "--out", "x", "--strategy", "gibbs"}).status != 0);
}

TEST_CASE("train, sample, encode, evaluate, interpolate") {
  const auto dir = cvae::testing::scratch_dir("cli_run");
  const fs::path data = dir / "g.csv";
  REQUIRE(cli({"generate-data", "--grid25", "--per-component", "8", "--out", data.string()}).status == 0);

  const Result t = cli(small_train(data, dir / "dual", "dual"));
  REQUIRE(t.status == 0);
  CHECK(fs::exists(dir / "dual" / "checkpoint.txt"));
  CHECK(fs::exists(dir / "dual" / "config.txt"));
  CHECK(line_count(dir / "dual" / "diagnostics.csv") == 6);
  CHECK(slurp(dir / "dual" / "config.txt").find("epsilon 0.5") != std::string::npos);

  REQUIRE(cli(small_train(data, dir / "dual2", "dual")).status == 0);
  CHECK(slurp(dir / "dual" / "checkpoint.txt") == slurp(dir / "dual2" / "checkpoint.txt"));

  REQUIRE(cli(small_train(data, dir / "vae", "baseline-vae")).status == 0);
  CHECK(slurp(dir / "vae" / "checkpoint.txt").find("encoder 1") != std::string::npos);

  auto args = small_train(data, dir / "elsewhere", "dual");
  args.insert(args.end(), {"--checkpoint", (dir / "custom.txt").string()});
  REQUIRE(cli(args).status == 0);
  CHECK(fs::exists(dir / "custom.txt"));

  const std::string ckpt = (dir / "dual" / "checkpoint.txt").string();
  REQUIRE(cli({"sample", "--checkpoint", ckpt, "--n", "37", "--out", (dir / "s.csv").string()}).status == 0);
  CHECK(line_count(dir / "s.csv") == 37);

  REQUIRE(cli({"encode", "--checkpoint", ckpt, "--data", data.string(), "--out", (dir / "z.csv").string()}).status == 0);
  CHECK(line_count(dir / "z.csv") == 200);

  const Result e = cli({"evaluate", "--checkpoint", ckpt, "--data", data.string(), "--means",
                        (dir / "g_means.csv").string(), "--n-samples", "100", "--n-mmd", "100", "--out",
                        (dir / "m.json").string()});
  REQUIRE(e.status == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "m.json"));
  for (const char* key : {"high_density_ratio", "std_within_modes", "mmd", "mmd_bandwidth", "ess_min", "seed"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["mmd"].is_number());
  CHECK(e.out.find("mmd ") != std::string::npos);

  REQUIRE(cli({"interpolate", "--checkpoint", ckpt, "--from", "-1,0", "--to", "1,0", "--steps", "5", "--out",
               (dir / "i.csv").string()})
              .status == 0);
  CHECK(line_count(dir / "i.csv") == 5);
  CHECK(cli({"interpolate", "--checkpoint", ckpt, "--from", "1,2,3", "--to", "1,0", "--out",
             (dir / "i2.csv").string()})
            .status == 1);
}

TEST_CASE("evaluate on ground-truth mixture samples") {
  const auto dir = cvae::testing::scratch_dir("cli_gt");
  REQUIRE(cli({"generate-data", "--grid25", "--seed", "9", "--out", (dir / "g.csv").string()}).status == 0);
  const Result e = cli({"evaluate", "--samples", (dir / "g.csv").string(), "--means", (dir / "g_means.csv").string(),
                        "--out", (dir / "m.json").string()});
  REQUIRE(e.status == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "m.json"));
  CHECK(j["high_density_ratio"].get<double>() >= 0.999);
  CHECK(j["mmd"].is_null());
}

TEST_CASE("sweep writes one row per epsilon") {
  const auto dir = cvae::testing::scratch_dir("cli_sweep");
  const fs::path data = dir / "g.csv";
  REQUIRE(cli({"generate-data", "--grid25", "--per-component", "4", "--out", data.string()}).status == 0);
  const Result r = cli({"sweep", "--data", data.string(), "--out", (dir / "sw").string(), "--epsilons", "0.5,1",
                        "--epochs", "1", "--iters-per-epoch", "2", "--inner-iters", "2", "--batch-n", "16",
                        "--hidden", "8", "--means", (dir / "g_means.csv").string(), "--n-samples", "50",
                        "--n-mmd", "50"});
  REQUIRE(r.status == 0);
  CHECK(line_count(dir / "sw" / "sweep.csv") == 3);
  CHECK(fs::exists(dir / "sw" / "eps_0.5" / "metrics.json"));
  CHECK(fs::exists(dir / "sw" / "eps_1" / "checkpoint.txt"));
}

TEST_CASE("binarized IDX through the CLI") {
  const auto dir = cvae::testing::scratch_dir("cli_idx");
  std::ofstream f(dir / "a.idx", std::ios::binary);
  const unsigned char bytes[] = {0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 200, 128, 127, 255, 1};
  f.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  f.close();
  REQUIRE(cli({"generate-data", "--idx", (dir / "a.idx").string(), "--out", (dir / "x.csv").string()}).status == 0);
  const cvae::Tensor2 x = cvae::load_matrix_csv(dir / "x.csv");
  CHECK(x == cvae::Tensor2::from_rows({{0, 1}, {1, 0}, {1, 0}}));
  REQUIRE(cli({"generate-data", "--idx", (dir / "a.idx").string(), "--max-count", "2", "--binarize", "mean-scale",
               "--out", (dir / "y.csv").string()})
              .status == 0);
  CHECK(cvae::load_matrix_csv(dir / "y.csv").rows() == 2);
}
