#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stpred/checkpoint.hpp"
#include "stpred/plot.hpp"
#include "stpred/runconfig.hpp"
#include "stpred/stds_io.hpp"

namespace fs = std::filesystem;
using namespace stpred;

namespace {

fs::path test_root() {
  const fs::path root = fs::temp_directory_path() / "stpred_cli_tests";
  fs::create_directories(root);
  return root;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STPRED_CLI_PATH) + " " + args +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

std::string micro_config(const fs::path& root, const std::string& tag) {
  std::ostringstream cfg;
  cfg << "task = moving_blobs\n"
      << "data_dir = " << (root / (tag + "_data")).string() << "\n"
      << "out_dir = " << (root / (tag + "_out")).string() << "\n"
      << "grid_h = 32\ngrid_w = 32\nseq_in = 4\nseq_out = 3\n"
      << "n_train = 6\nn_val = 2\nn_test = 2\n"
      << "blob_count = 1\nblob_radius = 4\nblob_speed = 1.5\n"
      << "model_size = S\ncodebank_size = 128x32\n"
      << "decoder_form = dc\ndecoder_depth = 3\ndecoder_width = 6\n"
      << "n_crops = 2\ncrop_out = 16\nproj_channels = 6\nexpert_hidden = 6\n"
      << "epochs = 2\nbatch = 2\nseed = 3\n";
  const fs::path path = root / (tag + ".cfg");
  write_file(path, cfg.str());
  return path.string();
}

}  // namespace

TEST_CASE("run config parses defaults, values and comments") {
  const RunConfig def = parse_run_config_text("");
  CHECK(def.n_train == 1500);  // documented default split counts
  CHECK(def.n_val == 500);
  CHECK(def.n_test == 500);
  CHECK(def.lr == 0.01);
  CHECK(def.vq_beta == 0.99);
  CHECK(def.seq_in == 10);
  CHECK(def.seq_out == 10);

  const RunConfig rc = parse_run_config_text(
      "# comment\n"
      "task = gray_scott\n"
      "lr = 0.5   # trailing comment\n"
      "use_local = false\n");
  CHECK(rc.task == "gray_scott");
  CHECK(rc.lr == 0.5);
  CHECK_FALSE(rc.use_local);
}

TEST_CASE("run config rejects unknown keys and bad values") {
  CHECK_THROWS_WITH_AS(parse_run_config_text("nope = 1\n"),
                       doctest::Contains("line 1"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config_text("\n\nlr = abc\n"),
                       doctest::Contains("line 3"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("use_local = maybe\n"), ConfigError);
  CHECK_THROWS_AS(
      to_model_config(parse_run_config_text("codebank_size = 64x7\n")),
      ConfigError);
}

TEST_CASE("config digest tracks model shape, not bookkeeping") {
  const RunConfig a = parse_run_config_text("");
  RunConfig b = a;
  b.data_dir = "elsewhere";
  b.lr = 0.123;
  CHECK(config_digest(a) == config_digest(b));
  RunConfig c = a;
  c.model_size = "L";
  CHECK(config_digest(a) != config_digest(c));
  RunConfig d = a;
  d.codebank_size = "128x32";
  CHECK(config_digest(a) != config_digest(d));
}

TEST_CASE("checkpoint round-trip is byte exact") {
  const fs::path root = test_root();
  RunConfig rc = parse_run_config_text(
      "grid_h = 32\ngrid_w = 32\nseq_in = 3\nseq_out = 2\nmodel_size = S\n"
      "codebank_size = 128x32\nn_crops = 1\ncrop_out = 16\n"
      "decoder_width = 4\nproj_channels = 4\nexpert_hidden = 4\n");
  const ModelConfig cfg = to_model_config(rc);
  const ModelPlan plan = plan_model(cfg);
  auto params = make_model_params<float>(cfg, plan, 11);
  const std::uint64_t digest = config_digest(rc);

  const fs::path p1 = root / "ck1.stck";
  const fs::path p2 = root / "ck2.stck";
  save_checkpoint(p1.string(), digest, params, 7);

  auto loaded = make_model_params<float>(cfg, plan, 999);
  const int epoch = load_checkpoint(p1.string(), digest, loaded);
  CHECK(epoch == 7);
  save_checkpoint(p2.string(), digest, loaded, 7);
  CHECK(slurp(p1) == slurp(p2));

  SUBCASE("digest mismatch refuses to load") {
    auto fresh = make_model_params<float>(cfg, plan, 1);
    CHECK_THROWS_AS(load_checkpoint(p1.string(), digest + 1, fresh),
                    DigestMismatchError);
  }
  SUBCASE("corrupt magic is its own error") {
    const fs::path bad = root / "bad.stck";
    std::string bytes = slurp(p1);
    bytes[0] = 'X';
    std::ofstream f(bad, std::ios::binary);
    f << bytes;
    f.close();
    auto fresh = make_model_params<float>(cfg, plan, 1);
    CHECK_THROWS_AS(load_checkpoint(bad.string(), digest, fresh),
                    BadMagicError);
  }
  SUBCASE("truncated file is its own error") {
    const fs::path bad = root / "short.stck";
    std::string bytes = slurp(p1);
    bytes.resize(bytes.size() / 2);
    std::ofstream f(bad, std::ios::binary);
    f << bytes;
    f.close();
    auto fresh = make_model_params<float>(cfg, plan, 1);
    CHECK_THROWS_AS(load_checkpoint(bad.string(), digest, fresh),
                    TruncatedError);
  }
}

TEST_CASE("csv parsing reports the offending line") {
  const fs::path root = test_root();
  const fs::path csv = root / "t.csv";

  write_file(csv, "");
  CHECK_THROWS_WITH_AS(parse_csv(csv.string()), doctest::Contains("line 1"),
                       FormatError);
  write_file(csv, "a,b\n");
  CHECK_THROWS_WITH_AS(parse_csv(csv.string()), doctest::Contains("line 2"),
                       FormatError);
  write_file(csv, "a,b\n1,2\n3\n");
  CHECK_THROWS_WITH_AS(parse_csv(csv.string()), doctest::Contains("line 3"),
                       FormatError);
  write_file(csv, "a,b\n1,x\n");
  CHECK_THROWS_AS(parse_csv(csv.string()), FormatError);

  write_file(csv, "a,b\n1,2\n2,4\n");
  const CsvTable t = parse_csv(csv.string());
  CHECK(t.columns.size() == 2);
  CHECK(t.rows.size() == 2);
  CHECK(t.rows[1][1] == 4.0);
}

TEST_CASE("plot emits one deterministic curve file per column") {
  const fs::path root = test_root();
  const fs::path csv = root / "curves.csv";
  write_file(csv, "epoch,loss,acc\n0,3.5,0.1\n1,2.0,0.4\n2,1.2,0.7\n");
  const CsvTable t = parse_csv(csv.string());

  const fs::path out1 = root / "plots1";
  const fs::path out2 = root / "plots2";
  const auto files1 = write_curves(t, out1.string());
  const auto files2 = write_curves(t, out2.string());
  REQUIRE(files1.size() == 3);  // one per column
  for (std::size_t i = 0; i < files1.size(); ++i)
    CHECK(slurp(files1[i]) == slurp(files2[i]));
}

TEST_CASE("cli: generate is deterministic and respects counts") {
  const fs::path root = test_root();
  const std::string cfg = micro_config(root, "gen");
  REQUIRE(run_cli("generate --config " + cfg) == 0);
  const fs::path data = root / "gen_data";
  auto train = read_sequences((data / "train.stds").string());
  auto val = read_sequences((data / "val.stds").string());
  auto test = read_sequences((data / "test.stds").string());
  CHECK(train.size() == 6);
  CHECK(val.size() == 2);
  CHECK(test.size() == 2);
  CHECK(train.front().frames() == 7);  // seq_in + seq_out

  const std::string first = slurp(data / "train.stds");
  REQUIRE(run_cli("generate --config " + cfg) == 0);
  CHECK(slurp(data / "train.stds") == first);
}

TEST_CASE("cli: train, eval, predict round trip") {
  const fs::path root = test_root();
  const std::string cfg = micro_config(root, "flow");
  const fs::path out = root / "flow_out";
  REQUIRE(run_cli("generate --config " + cfg) == 0);
  REQUIRE(run_cli("train --config " + cfg) == 0);
  CHECK(fs::exists(out / "model.stck"));
  CHECK(fs::exists(out / "history.csv"));
  const CsvTable hist = parse_csv((out / "history.csv").string());
  CHECK(hist.rows.size() == 2);  // one row per epoch

  REQUIRE(run_cli("eval --config " + cfg + " --checkpoint " +
                  (out / "model.stck").string() + " --split test") == 0);
  CHECK(fs::exists(out / "metrics_test.csv"));

  SUBCASE("oracle injection pins the metric edge cases") {
    REQUIRE(run_cli("eval --config " + cfg + " --checkpoint " +
                    (out / "model.stck").string() +
                    " --split test --inject-oracle") == 0);
    const std::string metrics = slurp(out / "metrics_test.csv");
    CHECK(metrics.find("model,0,1,undefined") != std::string::npos);
  }

  SUBCASE("predictions round-trip through the sequence format") {
    REQUIRE(run_cli("predict --config " + cfg + " --checkpoint " +
                    (out / "model.stck").string() + " --input " +
                    (root / "flow_data" / "test.stds").string()) == 0);
    auto preds = read_sequences((out / "predictions.stds").string());
    REQUIRE(preds.size() == 2);
    CHECK(preds.front().frames() == 3);  // K frames
    for (const auto& seq : preds)
      for (std::size_t i = 0; i < seq.data.size(); ++i) {
        CHECK(seq.data[i] >= 0.0f);
        CHECK(seq.data[i] <= 1.0f);
      }
  }

  SUBCASE("checkpoint under a different config refuses to evaluate") {
    const std::string other = micro_config(root, "other");
    // other differs in out/data dirs only -> same digest; change the size.
    std::ofstream f(root / "other.cfg", std::ios::app);
    f << "model_size = B\ncodebank_size = 256x64\n";
    f.close();
    CHECK(run_cli("eval --config " + (root / "other.cfg").string() +
                  " --checkpoint " + (out / "model.stck").string() +
                  " --split test") == 1);
  }
}

TEST_CASE("cli: divergence exits with code 2 and leaves a partial csv") {
  const fs::path root = test_root();
  const std::string cfg = micro_config(root, "boom");
  std::ofstream f(root / "boom.cfg", std::ios::app);
  f << "lr = 1e30\nepochs = 8\n";
  f.close();
  REQUIRE(run_cli("generate --config " + cfg) == 0);
  CHECK(run_cli("train --config " + cfg) == 2);
  CHECK(fs::exists(root / "boom_out" / "history.csv"));
}

TEST_CASE("cli: unreadable config exits with a nonzero code") {
  CHECK(run_cli("train --config /nonexistent.cfg") == 1);
}
