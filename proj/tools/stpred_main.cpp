// stpred: generate synthetic dynamical-system datasets, train the
// predictor, evaluate it against the persistence baseline, run inference
// and plot training curves.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stpred/checkpoint.hpp"
#include "stpred/parallel.hpp"
#include "stpred/plot.hpp"
#include "stpred/runconfig.hpp"
#include "stpred/splits.hpp"
#include "stpred/stds_io.hpp"

namespace fs = std::filesystem;
using namespace stpred;

namespace {

FrameSequence generate_one(const RunConfig& rc, std::uint64_t index) {
  const int frames = rc.seq_in + rc.seq_out;
  const std::uint64_t seq_seed = mix_seed(rc.seed, 0x736571ULL, index);
  if (rc.task == "moving_blobs") {
    BlobSceneParams p;
    p.n_blobs = rc.blob_count;
    p.radius = rc.blob_radius;
    p.speed = rc.blob_speed;
    p.grid_h = rc.grid_h;
    p.grid_w = rc.grid_w;
    p.seed = seq_seed;
    return simulate_moving_blobs(p, frames);
  }
  if (rc.task == "gray_scott") {
    GrayScottParams p;
    p.du = rc.gs_du;
    p.dv = rc.gs_dv;
    p.feed = rc.gs_f;
    p.kill = rc.gs_k;
    p.dt = rc.gs_dt;
    p.steps_per_frame = rc.gs_steps_per_frame;
    p.grid_h = rc.grid_h;
    p.grid_w = rc.grid_w;
    return simulate_gray_scott(p, seq_seed, frames, rc.gs_warmup);
  }
  throw ConfigError("unknown task '" + rc.task + "'");
}

int cmd_generate(const RunConfig& rc) {
  const std::size_t pool =
      std::size_t(rc.n_train) + rc.n_val + rc.n_test;
  const SplitIds ids = make_splits(
      pool, {std::size_t(rc.n_train), std::size_t(rc.n_val),
             std::size_t(rc.n_test)});

  std::vector<FrameSequence> all(pool);
  parallel_for(pool, [&](std::size_t i) { all[i] = generate_one(rc, i); });

  fs::create_directories(rc.data_dir);
  auto save = [&](const char* name, const std::vector<std::size_t>& part) {
    std::vector<FrameSequence> out;
    out.reserve(part.size());
    for (std::size_t id : part) out.push_back(std::move(all[id]));
    const std::string path = (fs::path(rc.data_dir) / name).string();
    write_sequences(path, out);
    std::printf("wrote %zu sequences to %s\n", out.size(), path.c_str());
  };
  save("train.stds", ids.train);
  save("val.stds", ids.val);
  save("test.stds", ids.test);
  return 0;
}

std::vector<FrameSequence> load_split(const RunConfig& rc, const char* name) {
  const std::string path = (fs::path(rc.data_dir) / name).string();
  auto data = read_sequences(path);
  if (data.empty()) throw ConfigError("empty dataset: " + path);
  const ModelConfig cfg = to_model_config(rc);
  const auto& d = data.front().data;
  if (int(d.dim(0)) != rc.seq_in + rc.seq_out ||
      int(d.dim(1)) != cfg.channels || int(d.dim(2)) != cfg.height ||
      int(d.dim(3)) != cfg.width)
    throw ConfigError("dataset " + path + " has shape " +
                      shape_str(d.shape()) +
                      ", which does not match the configuration");
  return data;
}

int cmd_train(const RunConfig& rc, const std::string& resume) {
  const ModelConfig cfg = to_model_config(rc);
  const ModelPlan plan = plan_model(cfg);
  auto params = make_model_params<float>(cfg, plan, rc.seed);
  const std::uint64_t digest = config_digest(rc);

  int start_epoch = 0;
  if (!resume.empty()) {
    start_epoch = load_checkpoint(resume, digest, params);
    std::printf("resumed from %s at epoch %d\n", resume.c_str(), start_epoch);
  }

  auto train_data = load_split(rc, "train.stds");
  auto val_data = load_split(rc, "val.stds");

  fs::create_directories(rc.out_dir);
  const std::string csv_path =
      (fs::path(rc.out_dir) / "history.csv").string();
  std::ofstream csv(csv_path, start_epoch > 0 ? std::ios::app
                                              : std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path);
  if (start_epoch == 0) csv << "epoch,l_of,l_vq,l_mse,total,val_mse\n";

  const std::string ckpt_path =
      (fs::path(rc.out_dir) / "model.stck").string();
  TrainConfig tcfg = to_train_config(rc);
  tcfg.epochs = rc.epochs - start_epoch;
  if (tcfg.epochs <= 0) {
    std::printf("nothing to do: checkpoint already at epoch %d\n",
                start_epoch);
    return 0;
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    train(cfg, plan, params, train_data, val_data, tcfg, start_epoch,
          [&](const EpochRecord& r) {
            char line[256];
            std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g,%.9g",
                          r.epoch, r.l_of, r.l_vq, r.l_mse, r.total,
                          r.val_mse);
            csv << line << "\n";
            csv.flush();
            std::printf("epoch %3d  total %.6f  (of %.6f vq %.6f mse %.6f)  "
                        "val_mse %.6f\n",
                        r.epoch, r.total, r.l_of, r.l_vq, r.l_mse, r.val_mse);
            std::fflush(stdout);
            if (rc.checkpoint_every > 0 &&
                (r.epoch + 1) % rc.checkpoint_every == 0)
              save_checkpoint(ckpt_path, digest, params, r.epoch + 1);
          });
  } catch (const TrainingDivergedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  save_checkpoint(ckpt_path, digest, params, rc.epochs);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::printf("trained %d epochs in %.1fs; checkpoint: %s\n", tcfg.epochs,
              secs, ckpt_path.c_str());
  return 0;
}

void print_metrics_row(std::FILE* out, const char* name,
                       const EvalMetrics& m) {
  if (m.psnr_defined)
    std::fprintf(out, "%-12s  mse %.6f  ssim %.6f  psnr %.4f dB\n", name,
                 m.mse, m.ssim, m.psnr);
  else
    std::fprintf(out, "%-12s  mse %.6f  ssim %.6f  psnr undefined\n", name,
                 m.mse, m.ssim);
}

int cmd_eval(const RunConfig& rc, const std::string& checkpoint,
             const std::string& split, bool inject_oracle) {
  const ModelConfig cfg = to_model_config(rc);
  const ModelPlan plan = plan_model(cfg);
  auto params = make_model_params<float>(cfg, plan, rc.seed);
  load_checkpoint(checkpoint, config_digest(rc), params);

  auto data = load_split(rc, (split + ".stds").c_str());

  EvalMetrics m;
  if (inject_oracle) {
    // Oracle injection: score the targets against themselves.
    double acc_ssim = 0.0;
    for (const auto& seq : data) {
      auto [in, target] = split_sequence(seq, cfg.in_frames, cfg.out_frames);
      FrameSequence t(std::move(target));
      acc_ssim += ssim(t, t);
      m.mse += mse(t, t);
    }
    m.mse /= double(data.size());
    m.ssim = acc_ssim / double(data.size());
    m.psnr_defined = false;
  } else {
    m = evaluate(cfg, plan, params, data, mix_seed(rc.seed, 0x6576616cULL));
  }
  const EvalMetrics base = evaluate_baseline(cfg, data);

  print_metrics_row(stdout, "model", m);
  print_metrics_row(stdout, "persistence", base);

  fs::create_directories(rc.out_dir);
  const std::string path =
      (fs::path(rc.out_dir) / ("metrics_" + split + ".csv")).string();
  std::ofstream out(path);
  out << "row,mse,ssim,psnr\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "model,%.9g,%.9g,%s\n", m.mse, m.ssim,
                m.psnr_defined ? std::to_string(m.psnr).c_str()
                               : "undefined");
  out << buf;
  std::snprintf(buf, sizeof buf, "persistence,%.9g,%.9g,%s\n", base.mse,
                base.ssim,
                base.psnr_defined ? std::to_string(base.psnr).c_str()
                                  : "undefined");
  out << buf;
  std::printf("metrics written to %s\n", path.c_str());
  return 0;
}

int cmd_predict(const RunConfig& rc, const std::string& checkpoint,
                const std::string& input) {
  const ModelConfig cfg = to_model_config(rc);
  const ModelPlan plan = plan_model(cfg);
  auto params = make_model_params<float>(cfg, plan, rc.seed);
  load_checkpoint(checkpoint, config_digest(rc), params);

  auto sequences = read_sequences(input);
  if (sequences.empty()) throw ConfigError("empty input: " + input);
  if (int(sequences.front().frames()) < cfg.in_frames)
    throw ConfigError("input sequences are shorter than the required " +
                      std::to_string(cfg.in_frames) + "-frame context");

  Rng crop_rng(mix_seed(rc.seed, 0x70726564ULL));  // "pred"
  std::vector<FrameSequence> out;
  out.reserve(sequences.size());
  for (const auto& seq : sequences)
    out.push_back(predict_sequence(cfg, plan, params, seq, crop_rng));

  fs::create_directories(rc.out_dir);
  const std::string path =
      (fs::path(rc.out_dir) / "predictions.stds").string();
  write_sequences(path, out);
  std::printf("wrote %zu predicted sequences to %s\n", out.size(),
              path.c_str());
  return 0;
}

int cmd_plot(const std::string& input, const std::string& out_dir) {
  const CsvTable table = parse_csv(input);
  const auto files = write_curves(table, out_dir);
  for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatio-temporal sequence predictor"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, resume, input;
  std::string split = "test";
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool inject_oracle = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", config_path,
                                "run configuration file");
    if (needs_config) opt->required();
    cmd->add_option("--seed", seed, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
    cmd->add_option("--out", out_dir, "override the output directory");
  };

  auto* gen = app.add_subcommand("generate", "generate dataset files");
  add_common(gen);

  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr);
  tr->add_option("--resume", resume, "checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_option("--split", split, "train | val | test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_flag("--inject-oracle", inject_oracle,
               "score the targets against themselves (metric sanity mode)");

  auto* pr = app.add_subcommand("predict", "predict future frames");
  add_common(pr);
  pr->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  pr->add_option("--input", input, "input STDS file")->required();

  auto* pl = app.add_subcommand("plot", "render curves from a CSV");
  pl->add_option("--input", input, "CSV file")->required();
  pl->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (pl->parsed()) return cmd_plot(input, out_dir);

    RunConfig rc = parse_run_config(config_path);
    if (seed_set) rc.seed = seed;
    if (!out_dir.empty()) {
      rc.out_dir = out_dir;
      if (gen->parsed()) rc.data_dir = out_dir;
    }

    if (gen->parsed()) return cmd_generate(rc);
    if (tr->parsed()) return cmd_train(rc, resume);
    if (ev->parsed()) return cmd_eval(rc, checkpoint, split, inject_oracle);
    if (pr->parsed()) return cmd_predict(rc, checkpoint, input);
  } catch (const TrainingDivergedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
