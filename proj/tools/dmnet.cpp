// dmnet command-line tool: train, infer, eval, info, selfcheck.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dmnet/checkpoint.hpp"
#include "dmnet/dataset_io.hpp"
#include "dmnet/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace dmnet;

namespace {

struct Options {
  std::string config;
  std::string ckpt;
  std::string in;
  std::string out;
  std::optional<std::size_t> scale;
  std::optional<std::uint64_t> seed;
  bool bicubic = false;
  bool inject_fault = false;
};

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string ckpt_name(std::size_t iter) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "ckpt_%zu.dmn", iter);
  return buf;
}

RunConfig config_for_train(const Options& o) {
  if (o.config.empty()) throw CliError("train: --config is required");
  RunConfig rc = load_run_config(o.config);
  if (o.scale) rc.model.scale = *o.scale;
  if (o.seed) rc.train.seed = *o.seed;
  rc.validate();
  return rc;
}

int cmd_train(const Options& o) {
  const RunConfig rc = config_for_train(o);
  const Dataset data = load_dataset(rc.data_dir, rc.model.scale);
  fs::create_directories(rc.out_dir);
  const fs::path out_dir(rc.out_dir);
  std::ofstream log(out_dir / "loss.log", std::ios::trunc);
  if (!log) throw CliError("cannot write '" + (out_dir / "loss.log").string() + "'");

  std::printf("training x%zu on %zu images from %s, %zu iterations\n", rc.model.scale, data.size(),
              rc.data_dir.c_str(), rc.train.total_iters);
  TrainHooks hooks;
  hooks.on_log = [&](const LossRecord& r) {
    const std::string line = format_loss_record(r);
    log << line << '\n';
    log.flush();
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  };
  hooks.on_checkpoint = [&](std::size_t iter, DMNetWeights<float>& w, const AdamState& st) {
    const fs::path p = out_dir / ckpt_name(iter);
    save_checkpoint(p.string(), make_checkpoint(rc, w, &st));
    std::printf("wrote %s\n", p.string().c_str());
  };
  try {
    (void)train_loop(rc.model, rc.train, data, hooks);
  } catch (const NonFiniteLoss& e) {
    Checkpoint dump;
    dump.config = rc;
    dump.tensors.push_back(detail::to_array("batch.lr", e.batch().lr.shape(), e.batch().lr.data()));
    dump.tensors.push_back(detail::to_array("batch.hr", e.batch().hr.shape(), e.batch().hr.data()));
    const fs::path p = out_dir / "nonfinite_batch.dmn";
    save_checkpoint(p.string(), dump);
    std::fprintf(stderr, "error: %s\noffending batch written to %s\n", e.what(), p.string().c_str());
    return 3;
  }
  return 0;
}

struct LoadedModel {
  RunConfig config;
  DMNetWeights<float> weights;
};

LoadedModel load_model(const Options& o, const char* cmd) {
  if (o.ckpt.empty()) throw CliError(std::string(cmd) + ": --ckpt is required");
  const Checkpoint ck = load_checkpoint(o.ckpt);
  if (o.scale && *o.scale != ck.config.model.scale)
    throw CliError(std::string(cmd) + ": checkpoint '" + o.ckpt + "' is trained for x" +
                   std::to_string(ck.config.model.scale) + ", --scale " + std::to_string(*o.scale) +
                   " requested");
  auto w = DMNetWeights<float>::make(ck.config.model, 0);
  load_weights(ck, w);
  return {ck.config, std::move(w)};
}

int cmd_infer(const Options& o) {
  if (o.in.empty() || o.out.empty()) throw CliError("infer: --in and --out are required");
  auto m = load_model(o, "infer");
  const Tensor lr = read_png(o.in);
  const Tensor sr = upscale_any(m.config.model, m.weights, lr);
  write_png(o.out, quantize8(sr));
  std::printf("%s: %zux%zu -> %s: %zux%zu\n", o.in.c_str(), lr.shape().w, lr.shape().h, o.out.c_str(),
              sr.shape().w, sr.shape().h);
  return 0;
}

int cmd_eval(const Options& o) {
  if (o.in.empty()) throw CliError("eval: --in <dataset dir> is required");
  std::optional<LoadedModel> model;
  std::size_t scale = 0;
  if (o.bicubic) {
    if (!o.scale) throw CliError("eval: --bicubic needs --scale");
    scale = *o.scale;
  } else {
    model = load_model(o, "eval");
    scale = model->config.model.scale;
  }
  if (scale < 2 || scale > 4) throw CliError("eval: scale must be 2, 3 or 4");
  const Dataset data = load_dataset(o.in, scale);
  std::string name = fs::path(o.in).filename().string();
  if (name.empty()) name = fs::path(o.in).parent_path().filename().string();

  EvalReport rep;
  if (model) {
    rep = evaluate([&](const Tensor& lr) { return upscale_any(model->config.model, model->weights, lr); }, data,
                   scale, name);
  } else {
    rep = evaluate([&](const Tensor& lr) { return bicubic_resize(lr, double(scale)); }, data, scale, name);
  }
  const std::string table = format_report_table(rep);
  std::cout << table;
  const std::string prefix = o.out.empty() ? "eval_report" : o.out;
  std::ofstream(prefix + ".txt") << table;
  std::ofstream(prefix + ".kv") << format_report_kv(rep);
  if (rep.images.empty()) {
    std::fprintf(stderr, "error: no image could be evaluated\n");
    return 1;
  }
  return 0;
}

struct Reference {
  std::size_t scale;
  double params_k;
  double gflops;
};
constexpr Reference kReference[] = {{2, 572, 115.7}, {3, 578, 51.6}, {4, 587, 29.8}};

int cmd_info(const Options& o) {
  RunConfig rc;
  if (!o.config.empty()) rc = load_run_config(o.config);
  if (o.scale) rc.model.scale = *o.scale;
  rc.model.validate();
  const auto& m = rc.model;
  const auto layers = layer_costs(m, 1280, 720);
  std::printf("DMNet x%zu  C=%zu N1=%zu N2=%zu ffn_ratio=%g dynamic=%s domain=%s\n", m.scale, m.channels,
              m.n_groups, m.n_blocks, m.ffn_ratio, m.ablation.dynamic ? "on" : "off",
              m.ablation.domain == FreqDomain::wavelet ? "wavelet" : "fourier");
  std::printf("%-40s %10s %14s\n", "layer", "params", "FLOPs");
  std::uint64_t params = 0;
  double flops = 0;
  for (const auto& l : layers) {
    std::printf("%-40s %10llu %14.0f\n", l.name.c_str(), static_cast<unsigned long long>(l.params), l.flops);
    params += l.params;
    flops += l.flops;
  }
  std::printf("total params %llu (%.1fK)\n", static_cast<unsigned long long>(params), params / 1e3);
  std::printf("total FLOPs at 1280x720 output %.0f (%.2fG), multiply-accumulates %.2fG\n", flops, flops / 1e9,
              flops / 2e9);
  const DMNetConfig defaults;
  if (m.channels == 48 && m.n_groups == 3 && m.n_blocks == 3 && m.ffn_ratio == defaults.ffn_ratio &&
      m.ablation == defaults.ablation) {
    for (const auto& r : kReference)
      if (r.scale == m.scale)
        // The reference column counts multiply-accumulates.
        std::printf("reference x%zu: %.0fK params, %.1fG MACs | here: %.1fK (%+.1f%%), %.2fG MACs (%+.1f%%)\n",
                    r.scale, r.params_k, r.gflops, params / 1e3, 100.0 * (params / 1e3 - r.params_k) / r.params_k,
                    flops / 2e9, 100.0 * (flops / 2e9 - r.gflops) / r.gflops);
  }
  return 0;
}

int cmd_selfcheck(const Options& o) {
  testing::inject_haar_sign_fault = o.inject_fault;
  bool ok = true;
  for (const auto& r : run_selfcheck()) {
    std::printf("%s  %-24s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok = ok && r.pass;
  }
  std::printf("%s\n", ok ? "all checks passed" : "some checks FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DMNet image super-resolution"};
  app.require_subcommand(1);
  Options o;
  auto scale_check = CLI::IsMember({2, 3, 4});

  auto* train = app.add_subcommand("train", "Train from a key=value config");
  train->add_option("--config", o.config, "Run configuration file")->required();
  train->add_option("--scale", o.scale, "Override the scale factor")->check(scale_check);
  train->add_option("--seed", o.seed, "Override the seed");

  auto* infer = app.add_subcommand("infer", "Super-resolve one PNG");
  infer->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  infer->add_option("--in", o.in, "Input PNG")->required();
  infer->add_option("--out", o.out, "Output PNG")->required();
  infer->add_option("--scale", o.scale, "Expected scale factor")->check(scale_check);
  infer->add_option("--seed", o.seed, "Accepted for uniformity; inference is deterministic");

  auto* eval = app.add_subcommand("eval", "Y-channel PSNR/SSIM on a dataset directory");
  eval->add_option("--ckpt", o.ckpt, "Checkpoint");
  eval->add_option("--in", o.in, "Dataset directory (HR PNGs, or HR/ and LR/)")->required();
  eval->add_option("--out", o.out, "Report prefix; writes <prefix>.txt and <prefix>.kv");
  eval->add_option("--scale", o.scale, "Scale factor")->check(scale_check);
  eval->add_option("--seed", o.seed, "Accepted for uniformity; evaluation is deterministic");
  eval->add_flag("--bicubic", o.bicubic, "Score the bicubic baseline instead of a checkpoint");

  auto* info = app.add_subcommand("info", "Per-layer parameters and FLOPs at 1280x720 output");
  info->add_option("--config", o.config, "Run configuration file (defaults otherwise)");
  info->add_option("--scale", o.scale, "Override the scale factor")->check(scale_check);

  auto* self = app.add_subcommand("selfcheck", "Run the invariant suite");
  self->add_flag("--inject-haar-fault", o.inject_fault, "Flip a Haar sign to exercise the checks")
      ->group("");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(o);
    if (*infer) return cmd_infer(o);
    if (*eval) return cmd_eval(o);
    if (*info) return cmd_info(o);
    return cmd_selfcheck(o);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
