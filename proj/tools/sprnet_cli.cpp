#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sprnet/sprnet.hpp"

namespace {

using namespace sprnet;

struct SynthArgs {
  std::uint64_t seed = 7;
  std::size_t count = 0;
  std::uint64_t start = 0;
  std::string out;
  int image_size = 128;
};

struct TrainArgs {
  std::string data, config, out_ckpt, log;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> fusion, pyramid, shortcut;
  std::optional<double> mask_iou;
  std::vector<std::string> sets;
  int precision = 32;
};

struct InferArgs {
  std::string ckpt, data, out_json, config;
  bool force = false;
};

struct EvalArgs {
  std::string pred_json, ann_json, out, pr_csv;
};

struct GradArgs {
  std::string ops = "all";
  double tol = 1e-5;
  int trials = 100;
  double network_tol = 1e-4;
  bool network = true;
};

int run_synth(const SynthArgs& a) {
  SceneSpec spec;
  spec.seed = a.seed;
  spec.image_size = a.image_size;
  const auto ds = write_synthetic_dataset(spec, a.start, a.count, a.out);
  std::size_t instances = 0;
  for (const auto& im : ds.images) instances += im.instances.size();
  std::cerr << "wrote " << ds.images.size() << " images, " << instances << " instances to " << a.out << "\n";
  return 0;
}

template <class T>
int train_with(const RunConfig& cfg, const TrainArgs& a) {
  const Dataset ds = read_dataset(a.data);
  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log);
    if (!log_file) throw Error("cannot write " + a.log);
  }
  std::ostream& log = a.log.empty() ? std::cout : log_file;
  log << metrics_csv_header() << "\n";
  const int every = std::max(1, cfg.train.log_every);
  const auto t0 = std::chrono::steady_clock::now();
  const auto net = train_on_dataset<T>(cfg, ds, [&](const StepMetrics& m) {
    if (m.step % every == 0 || m.step == cfg.train.steps) log << metrics_csv_line(m) << "\n" << std::flush;
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(net.store(), a.out_ckpt, model_digest(cfg), to_text(cfg));
  std::cerr << "trained " << cfg.train.steps << " steps on " << ds.images.size() << " images in " << secs
            << " s; checkpoint " << a.out_ckpt << "\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? desk_preset() : load_config(a.config, desk_preset());
  if (a.steps) cfg.train.steps = *a.steps;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.fusion) cfg.model.fusion.kind = parse_fusion_kind(*a.fusion);
  if (a.pyramid) cfg.model.backbone.mode = parse_pyramid_mode(*a.pyramid);
  if (a.shortcut) cfg.model.decoder.shortcut = parse_switch(*a.shortcut);
  if (a.mask_iou) cfg.train.mask_sampling.iou_thresh = *a.mask_iou;
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  normalize(cfg.model);
  validate(cfg);
  return a.precision == 64 ? train_with<double>(cfg, a) : train_with<float>(cfg, a);
}

template <class T>
int infer_with(const RunConfig& cfg, const InferArgs& a) {
  SprNet<T> net(cfg.model, cfg.train.seed);
  load_checkpoint(net.store(), a.ckpt, model_digest(cfg), a.force);
  const Dataset ds = read_dataset(a.data);
  const auto p = predict_dataset(net, ds, cfg.infer);
  write_text_file(a.out_json, p.json.dump() + "\n");
  std::cerr << ds.images.size() << " images, " << p.json.size() << " detections, at most " << p.max_decoder_rows
            << " decoder rows per image\n";
  return 0;
}

int run_infer(const InferArgs& a) {
  const auto info = read_checkpoint_info(read_file_bytes(a.ckpt));
  // the checkpoint carries its own config; --config overrides it
  RunConfig cfg = a.config.empty() ? parse_config(info.config_text) : load_config(a.config);
  validate(cfg);
  return info.scalar_bytes == 8 ? infer_with<double>(cfg, a) : infer_with<float>(cfg, a);
}

int run_eval(const EvalArgs& a) {
  const Dataset ds = read_dataset(a.ann_json);
  const auto dets = parse_predictions(read_text_file(a.pred_json), ds);
  const auto r = summarize(dataset_gts(ds), dets);
  const std::string text = eval_result_json(r);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text_file(a.out, text);
  }
  if (!a.pr_csv.empty()) write_text_file(a.pr_csv, pr_curve_csv(r));
  std::cerr << "box AP " << r.box.ap << " AP50 " << r.box.ap50 << " | mask AP " << r.mask.ap << " AP50 " << r.mask.ap50
            << "\n";
  return 0;
}

int run_gradcheck(const GradArgs& a) {
  bool ok = true;
  bool found = false;
  std::printf("%-26s %7s %12s %s\n", "op", "trials", "max_rel_err", "result");
  for (const auto& op : gradcheck_ops()) {
    if (a.ops != "all" && a.ops != op.name) continue;
    found = true;
    const auto r = run_op_gradcheck(op, a.trials, a.tol);
    std::printf("%-26s %7d %12.3e %s\n", r.name.c_str(), r.trials, r.max_rel_error, r.passed ? "ok" : "FAIL");
    ok &= r.passed;
  }
  if (a.ops == "network" || (a.ops == "all" && a.network)) {
    found = true;
    // seed 2: a draw with no relu input inside the finite-difference step
    const auto r = network_gradcheck(2, 1e-6, a.network_tol);
    std::printf("%-26s %7zu %12.3e %s\n", "network(micro)", r.parameters, r.report.max_rel_error,
                r.report.passed ? "ok" : "FAIL");
    ok &= r.report.passed;
  }
  if (!found) throw Error("no op named '" + a.ops + "'");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sprnet: train and evaluate a small single-pixel-reconstruction instance segmenter"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "render a synthetic dataset");
  synth->add_option("--seed", sa.seed, "scene seed")->capture_default_str();
  synth->add_option("--count", sa.count, "number of images")->required();
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--start-index", sa.start, "index of the first scene")->capture_default_str();
  synth->add_option("--image-size", sa.image_size, "side length in pixels")->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train from scratch and write a checkpoint");
  tr->add_option("--data", ta.data, "dataset directory or annotations file")->required();
  tr->add_option("--config", ta.config, "key=value config file layered over the desk preset");
  tr->add_option("--steps", ta.steps, "training steps");
  tr->add_option("--out-ckpt", ta.out_ckpt, "checkpoint path")->required();
  tr->add_option("--fusion", ta.fusion, "dilated|consecutive|parallel1246");
  tr->add_option("--pyramid", ta.pyramid, "gfpn|fpn");
  tr->add_option("--shortcut", ta.shortcut, "on|off");
  tr->add_option("--mask-iou-thresh", ta.mask_iou, "anchor IoU needed for a mask sample");
  tr->add_option("--seed", ta.seed, "model init and sampling seed");
  tr->add_option("--log", ta.log, "metrics CSV path (default stdout)");
  tr->add_option("--set", ta.sets, "extra config override key=value (repeatable)");
  tr->add_option("--precision", ta.precision, "32 or 64 bit")->check(CLI::IsMember({32, 64}))->capture_default_str();

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "predict over a dataset");
  inf->add_option("--ckpt", ia.ckpt, "checkpoint")->required();
  inf->add_option("--data", ia.data, "dataset directory or annotations file")->required();
  inf->add_option("--out-json", ia.out_json, "predictions JSON")->required();
  inf->add_option("--config", ia.config, "config to use instead of the one stored in the checkpoint");
  inf->add_flag("--force", ia.force, "load even if the model digest differs");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "COCO-style box and mask metrics");
  ev->add_option("--pred-json", ea.pred_json, "predictions from infer")->required();
  ev->add_option("--ann-json", ea.ann_json, "dataset directory or annotations file")->required();
  ev->add_option("--out", ea.out, "EvalResult JSON path (default stdout)");
  ev->add_option("--pr-csv", ea.pr_csv, "also write the precision/recall curves");

  GradArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gc->add_option("--ops", ga.ops, "all, network, or one op name")->capture_default_str();
  gc->add_option("--tol", ga.tol, "per-op tolerance")->capture_default_str();
  gc->add_option("--trials", ga.trials, "random shapes per op")->capture_default_str();
  gc->add_option("--network-tol", ga.network_tol, "tolerance of the whole-network check")->capture_default_str();
  gc->add_flag("!--no-network", ga.network, "skip the whole-network check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*tr) return run_train(ta);
    if (*inf) return run_infer(ia);
    if (*ev) return run_eval(ea);
    return run_gradcheck(ga);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
