#include "stpred/runconfig.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "stpred/errors.hpp"

namespace stpred {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config line " + std::to_string(line) +
                    ": expected a boolean, got '" + v + "'");
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
  RunConfig rc;
  using Setter = std::function<void(const std::string&, int)>;
  const std::map<std::string, Setter> keys = {
      {"task", [&](const std::string& v, int) { rc.task = v; }},
      {"data_dir", [&](const std::string& v, int) { rc.data_dir = v; }},
      {"out_dir", [&](const std::string& v, int) { rc.out_dir = v; }},
      {"grid_h", [&](const std::string& v, int) { rc.grid_h = std::stoi(v); }},
      {"grid_w", [&](const std::string& v, int) { rc.grid_w = std::stoi(v); }},
      {"seq_in", [&](const std::string& v, int) { rc.seq_in = std::stoi(v); }},
      {"seq_out",
       [&](const std::string& v, int) { rc.seq_out = std::stoi(v); }},
      {"n_train",
       [&](const std::string& v, int) { rc.n_train = std::stoi(v); }},
      {"n_val", [&](const std::string& v, int) { rc.n_val = std::stoi(v); }},
      {"n_test", [&](const std::string& v, int) { rc.n_test = std::stoi(v); }},
      {"blob_count",
       [&](const std::string& v, int) { rc.blob_count = std::stoi(v); }},
      {"blob_radius",
       [&](const std::string& v, int) { rc.blob_radius = std::stod(v); }},
      {"blob_speed",
       [&](const std::string& v, int) { rc.blob_speed = std::stod(v); }},
      {"gs_du", [&](const std::string& v, int) { rc.gs_du = std::stod(v); }},
      {"gs_dv", [&](const std::string& v, int) { rc.gs_dv = std::stod(v); }},
      {"gs_f", [&](const std::string& v, int) { rc.gs_f = std::stod(v); }},
      {"gs_k", [&](const std::string& v, int) { rc.gs_k = std::stod(v); }},
      {"gs_dt", [&](const std::string& v, int) { rc.gs_dt = std::stod(v); }},
      {"gs_steps_per_frame",
       [&](const std::string& v, int) {
         rc.gs_steps_per_frame = std::stoi(v);
       }},
      {"gs_warmup",
       [&](const std::string& v, int) { rc.gs_warmup = std::stoi(v); }},
      {"model_size",
       [&](const std::string& v, int) { rc.model_size = v; }},
      {"codebank_size",
       [&](const std::string& v, int) { rc.codebank_size = v; }},
      {"decoder_form",
       [&](const std::string& v, int) { rc.decoder_form = v; }},
      {"decoder_depth",
       [&](const std::string& v, int) { rc.decoder_depth = std::stoi(v); }},
      {"decoder_width",
       [&](const std::string& v, int) { rc.decoder_width = std::stoi(v); }},
      {"n_crops",
       [&](const std::string& v, int) { rc.n_crops = std::stoi(v); }},
      {"crop_out",
       [&](const std::string& v, int) { rc.crop_out = std::stoi(v); }},
      {"max_area_fraction",
       [&](const std::string& v, int) {
         rc.max_area_fraction = std::stod(v);
       }},
      {"proj_channels",
       [&](const std::string& v, int) { rc.proj_channels = std::stoi(v); }},
      {"expert_hidden",
       [&](const std::string& v, int) { rc.expert_hidden = std::stoi(v); }},
      {"use_local",
       [&](const std::string& v, int l) { rc.use_local = parse_bool(v, l); }},
      {"use_codebank",
       [&](const std::string& v, int l) {
         rc.use_codebank = parse_bool(v, l);
       }},
      {"use_flow_loss",
       [&](const std::string& v, int l) {
         rc.use_flow_loss = parse_bool(v, l);
       }},
      {"of_on_decoded",
       [&](const std::string& v, int l) {
         rc.of_on_decoded = parse_bool(v, l);
       }},
      {"lr", [&](const std::string& v, int) { rc.lr = std::stod(v); }},
      {"sgd_momentum",
       [&](const std::string& v, int) { rc.sgd_momentum = std::stod(v); }},
      {"vq_beta",
       [&](const std::string& v, int) { rc.vq_beta = std::stod(v); }},
      {"epochs", [&](const std::string& v, int) { rc.epochs = std::stoi(v); }},
      {"batch", [&](const std::string& v, int) { rc.batch = std::stoi(v); }},
      {"seed", [&](const std::string& v, int) { rc.seed = std::stoull(v); }},
      {"checkpoint_every",
       [&](const std::string& v, int) {
         rc.checkpoint_every = std::stoi(v);
       }},
  };

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": unknown key '" + key + "'");
    try {
      it->second(value, lineno);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": bad value '" + value + "' for key '" + key + "'");
    }
  }
  return rc;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_run_config_text(buf.str());
}

int task_channels(const RunConfig& rc) {
  if (rc.task == "moving_blobs") return 1;
  if (rc.task == "gray_scott") return 2;
  throw ConfigError("unknown task '" + rc.task + "'");
}

namespace {

std::pair<std::size_t, std::size_t> parse_bank(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos)
    throw ConfigError("codebank_size must look like 256x64");
  const std::string a = s.substr(0, x), b = s.substr(x + 1);
  if (s != "128x32" && s != "256x64" && s != "512x128")
    throw ConfigError("codebank_size must be 128x32, 256x64 or 512x128");
  return {std::stoull(a), std::stoull(b)};
}

DecoderForm parse_form(const std::string& s) {
  if (s == "dc") return DecoderForm::kDC;
  if (s == "cl_dc") return DecoderForm::kCLDC;
  if (s == "cl_dc_r") return DecoderForm::kCLDCR;
  throw ConfigError("decoder_form must be dc, cl_dc or cl_dc_r");
}

}  // namespace

ModelConfig to_model_config(const RunConfig& rc) {
  ModelConfig cfg;
  cfg.in_frames = rc.seq_in;
  cfg.out_frames = rc.seq_out;
  cfg.channels = task_channels(rc);
  cfg.height = rc.grid_h;
  cfg.width = rc.grid_w;
  cfg.crops.n_crops = rc.n_crops;
  cfg.crops.crop_out = rc.crop_out;
  cfg.crops.max_area_fraction = rc.max_area_fraction;
  cfg.use_local = rc.use_local;
  std::tie(cfg.bank_entries, cfg.bank_dim) = parse_bank(rc.codebank_size);
  apply_model_preset(cfg, rc.model_size);
  cfg.use_codebank = rc.use_codebank;
  cfg.vq_beta = rc.vq_beta;
  cfg.proj_channels = rc.proj_channels;
  cfg.expert_hidden = rc.expert_hidden;
  cfg.use_flow_loss = rc.use_flow_loss;
  cfg.flow_loss_on_decoded = rc.of_on_decoded;
  cfg.decoder.form = parse_form(rc.decoder_form);
  cfg.decoder.depth = rc.decoder_depth;
  cfg.decoder.channels.assign(std::size_t(rc.decoder_depth),
                              rc.decoder_width);
  return cfg;
}

TrainConfig to_train_config(const RunConfig& rc) {
  TrainConfig t;
  t.lr = rc.lr;
  t.momentum = rc.sgd_momentum;
  t.epochs = rc.epochs;
  t.batch = rc.batch;
  t.seed = rc.seed;
  return t;
}

std::uint64_t config_digest(const RunConfig& rc) {
  std::ostringstream s;
  s << "task=" << rc.task << ";grid=" << rc.grid_h << "x" << rc.grid_w
    << ";seq=" << rc.seq_in << "/" << rc.seq_out
    << ";size=" << rc.model_size << ";bank=" << rc.codebank_size
    << ";dec=" << rc.decoder_form << "/" << rc.decoder_depth << "/"
    << rc.decoder_width << ";crops=" << rc.n_crops << "/" << rc.crop_out
    << "/" << rc.max_area_fraction << ";proj=" << rc.proj_channels
    << ";hidden=" << rc.expert_hidden << ";local=" << rc.use_local
    << ";bank_on=" << rc.use_codebank << ";of=" << rc.use_flow_loss
    << ";of_dec=" << rc.of_on_decoded;
  const std::string text = s.str();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace stpred
