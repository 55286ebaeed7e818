#pragma once

#include <cstdint>
#include <string>

#include "stpred/blobs.hpp"
#include "stpred/gray_scott.hpp"
#include "stpred/model.hpp"
#include "stpred/train.hpp"

namespace stpred {

// Flat key=value run configuration ('#' starts a comment, unknown keys are
// rejected). Defaults mirror the documented experiment settings.
struct RunConfig {
  // Task and paths.
  std::string task = "moving_blobs";  // moving_blobs | gray_scott
  std::string data_dir = "data";
  std::string out_dir = "out";

  // Sequence geometry.
  int grid_h = 64;
  int grid_w = 64;
  int seq_in = 10;
  int seq_out = 10;

  // Dataset counts.
  int n_train = 1500;
  int n_val = 500;
  int n_test = 500;

  // Generator parameters.
  int blob_count = 2;
  double blob_radius = 6.0;
  double blob_speed = 1.5;
  double gs_du = 0.16;
  double gs_dv = 0.08;
  double gs_f = 0.055;
  double gs_k = 0.062;
  double gs_dt = 1.0;
  int gs_steps_per_frame = 10;
  int gs_warmup = 200;

  // Model.
  std::string model_size = "B";         // S | B | L
  std::string codebank_size = "256x64"; // 128x32 | 256x64 | 512x128
  std::string decoder_form = "dc";      // dc | cl_dc | cl_dc_r
  int decoder_depth = 3;
  int decoder_width = 16;
  int n_crops = 3;
  int crop_out = 32;
  double max_area_fraction = 0.5;
  int proj_channels = 16;
  int expert_hidden = 16;
  bool use_local = true;
  bool use_codebank = true;
  bool use_flow_loss = true;
  bool of_on_decoded = false;

  // Training.
  double lr = 0.01;
  double sgd_momentum = 0.0;
  double vq_beta = 0.99;
  int epochs = 50;
  int batch = 16;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 = only at the end
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig parse_run_config(const std::string& path);

// FNV-1a over the canonical rendering of every model-shape-affecting key.
// Checkpoints carry this value and refuse to load under a different one.
std::uint64_t config_digest(const RunConfig& rc);

int task_channels(const RunConfig& rc);
ModelConfig to_model_config(const RunConfig& rc);
TrainConfig to_train_config(const RunConfig& rc);

}  // namespace stpred
