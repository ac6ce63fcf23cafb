// Command-line front end: model summary, gradient checking, training,
// evaluation, inference, and synthetic data generation.
//
// Exit codes: 0 success, 1 validation error (bad flags/sizes, failed
// gradient check), 2 runtime failure (non-finite loss, unreadable file).
// HSEG_THREADS caps kernel parallelism (0 or unset = single-threaded).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hseg/hseg.hpp"

namespace fs = std::filesystem;
using namespace hseg;

namespace {

// Flat key=value config support: when a subcommand carries --config FILE, the
// file's entries are injected as --key=value flags right after the subcommand
// name. Real command-line flags come later and win (take-last policy);
// unknown keys fail option parsing like any unknown flag.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty() || args.empty()) return args;

  std::ifstream f(config_path);
  if (!f) throw std::invalid_argument("cannot read config file: " + config_path);
  std::vector<std::string> injected;
  std::string line;
  while (std::getline(f, line)) {
    const size_t a = line.find_first_not_of(" \t");
    if (a == std::string::npos || line[a] == '#') continue;
    const size_t b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);
    const size_t eq = line.find('=');
    require(eq != std::string::npos && eq > 0,
            "config file: expected key=value, got '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    while (!value.empty() && (value.front() == ' ' || value.front() == '\t'))
      value.erase(value.begin());
    injected.push_back("--" + key + "=" + value);
  }
  std::vector<std::string> out;
  out.push_back(args[0]);  // subcommand name
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

std::pair<int, int> parse_size(const std::string& wxh) {
  const size_t x = wxh.find('x');
  require(x != std::string::npos && x > 0 && x + 1 < wxh.size(),
          "expected WxH, e.g. 512x512, got '" + wxh + "'");
  const int w = std::stoi(wxh.substr(0, x));
  const int h = std::stoi(wxh.substr(x + 1));
  require(w > 0 && h > 0, "size extents must be positive");
  return {w, h};
}

int round_to_16(int v) { return std::max(16, ((v + 8) / 16) * 16); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text;
}

int cmd_summary(const std::string& input_size) {
  const auto [w, h] = parse_size(input_size);
  require(w % 16 == 0 && h % 16 == 0,
          "input dims must be a multiple of 16, got " + input_size);
  auto model = Model<float>::build(EncoderSpec::table1(), 0);
  const uint64_t params = model.count_params();
  const MacsReport macs = model.count_macs(h, w);
  const uint64_t bytes = model.checkpoint_byte_size();
  std::printf("input            3x%dx%d\n", h, w);
  std::printf("parameters       %llu (%.3f M)\n", (unsigned long long)params, params / 1e6);
  std::printf("  encoder        %llu\n", (unsigned long long)model.count_params_encoder());
  std::printf("MACs             %llu (%.3f G)\n", (unsigned long long)macs.total(),
              macs.total() / 1e9);
  std::printf("  conv           %llu\n", (unsigned long long)macs.conv);
  std::printf("  dcn sampling   %llu\n", (unsigned long long)macs.dcn_sampling);
  std::printf("  se linear      %llu\n", (unsigned long long)macs.linear);
  std::printf("checkpoint size  %llu bytes (%.2f MB)\n", (unsigned long long)bytes,
              bytes / 1048576.0);
  return 0;
}

int cmd_gradcheck(double tol, uint64_t seed) {
  // every op over five seeds, then the tiny whole model (at 10x the op
  // tolerance: batch statistics over 2x2 maps leave it legitimately rougher)
  std::map<std::string, double> worst;
  for (uint64_t s = seed; s < seed + 5; ++s)
    for (const auto& r : gradcheck_suite<double>(s, tol))
      worst[r.op_name] = std::max(worst[r.op_name], r.max_rel_err);

  bool all_ok = true;
  std::printf("%-28s %-14s %s\n", "op", "max_rel_err", "status");
  for (const auto& [op, err] : worst) {
    const bool ok = err < tol;
    all_ok = all_ok && ok;
    std::printf("%-28s %-14.3e %s\n", op.c_str(), err, ok ? "pass" : "FAIL");
  }
  const GradCheckReport wm = gradcheck_whole_model<double>(seed, tol * 10.0);
  all_ok = all_ok && wm.passed;
  std::printf("%-28s %-14.3e %s\n", "whole_model", wm.max_rel_err,
              wm.passed ? "pass" : "FAIL");
  std::printf("%s\n", all_ok ? "gradcheck: all passed" : "gradcheck: FAILURES above");
  return all_ok ? 0 : 1;
}

struct TrainArgs {
  std::string data, dataset, out = ".";
  uint64_t seed = 0;
  double lr = 0.001, weight_decay = 0.0005, w = 0.5, threshold = 0.5, stop_dice = 0.0;
  int batch_size = 0;  // 0 = dataset default
  int max_epochs = 500, patience = 30;
  int synth_count = 4, size = 64;
  bool no_mixed_loss = false, no_augment = false;
};

int cmd_train(const TrainArgs& a) {
  const DatasetKind kind = dataset_from_name(a.dataset);
  Dataset train_set, val_set;
  if (kind == DatasetKind::synth && a.data.empty()) {
    train_set = synth_vessels(a.seed, a.size, a.synth_count);
    val_set = train_set;
  } else {
    require(!a.data.empty(), "--data is required for dataset '" + a.dataset +
                                 "' (expected <root>/images and <root>/masks)");
    SplitSpec split = make_splits(kind, a.data);
    train_set = load_split(kind, a.data, split.train_ids);
    val_set = load_split(kind, a.data, split.test_ids);
  }

  TrainConfig cfg;
  cfg.lr = a.lr;
  cfg.weight_decay = a.weight_decay;
  cfg.batch_size = a.batch_size > 0 ? a.batch_size : TrainConfig::default_batch_size(kind);
  cfg.max_epochs = a.max_epochs;
  cfg.patience = a.patience;
  cfg.mixed_loss_enabled = !a.no_mixed_loss;
  cfg.w = a.w;
  cfg.seed = a.seed;
  cfg.threshold = a.threshold;
  cfg.stop_dice = a.stop_dice;
  // the synthetic desk protocol is an overfit harness: augmentation defaults
  // off there, on for real fundus data
  if (a.no_augment || (kind == DatasetKind::synth && a.data.empty()))
    cfg.augment = AugmentConfig::none();

  auto model = Model<float>::build(EncoderSpec::table1(), a.seed);
  std::printf("training on %zu images, validating on %zu (%s loss, seed %llu)\n",
              train_set.size(), val_set.size(), cfg.mixed_loss_enabled ? "mixed" : "single",
              (unsigned long long)a.seed);
  TrainResult<float> res = train(model, train_set, val_set, cfg);

  fs::create_directories(a.out);
  const std::string ckpt = (fs::path(a.out) / "best.hseg").string();
  res.best_model.save_checkpoint(ckpt);
  write_text((fs::path(a.out) / "history.csv").string(),
             res.history_csv(cfg.mixed_loss_enabled));
  std::printf("epochs run       %zu\n", res.history.size());
  std::printf("best val dice    %.4f (epoch %d)\n", res.best_dice, res.best_epoch);
  std::printf("checkpoint       %s\n", ckpt.c_str());
  std::printf("history          %s\n", (fs::path(a.out) / "history.csv").string().c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& dataset,
             double threshold, const std::string& split, const std::string& out) {
  const DatasetKind kind = dataset_from_name(dataset);
  auto model = Model<float>::load_checkpoint(checkpoint);
  SplitSpec sp = make_splits(kind, data);
  std::vector<std::string> ids;
  if (split == "train") ids = sp.train_ids;
  else if (split == "test") ids = sp.test_ids;
  else {
    ids = sp.train_ids;
    for (const auto& id : sp.test_ids)
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  Dataset set = load_split(kind, data, ids);
  EvalResult<float> res = evaluate(model, set, threshold);
  const std::string csv = res.csv();
  if (out.empty()) std::fputs(csv.c_str(), stdout);
  else write_text(out, csv);
  std::fprintf(stderr, "mean dice %.4f acc %.4f auc %.4f over %zu images\n", res.mean.f1,
               res.mean.acc, res.mean.auc, res.per_image.size());
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& image,
              const std::string& out, const std::string& dataset) {
  auto model = Model<float>::load_checkpoint(checkpoint);
  const Image8 img = read_image_checked(image);
  Tensor<float> x = image_to_tensor(img);
  int th, tw;
  if (!dataset.empty()) {
    const auto target = dataset_target(dataset_from_name(dataset), img.h, img.w);
    th = target.first;
    tw = target.second;
  } else {
    th = round_to_16(img.h);
    tw = round_to_16(img.w);
  }
  require(th % 16 == 0 && tw % 16 == 0, "inference size must be a multiple of 16");
  x = resize_bilinear(x, th, tw);
  ForwardOut<float> f = model.forward(x, /*train=*/false);

  Image8 prob_map;
  prob_map.w = tw;
  prob_map.h = th;
  prob_map.channels = 1;
  prob_map.pix.resize(static_cast<size_t>(tw) * th);
  for (int y = 0; y < th; ++y)
    for (int px = 0; px < tw; ++px)
      prob_map.pix[static_cast<size_t>(y) * tw + px] =
          static_cast<uint8_t>(std::lround(f.prob.at(0, 0, y, px) * 255.0f));
  png_write(out, prob_map);
  std::printf("wrote %s (%dx%d)\n", out.c_str(), tw, th);
  return 0;
}

int cmd_synth(uint64_t seed, int size, int count, const std::string& out) {
  Dataset ds = synth_vessels(seed, size, count);
  write_dataset(ds, out);
  std::printf("wrote %d image/mask pairs under %s\n", count, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HybridNetSeg: retinal vessel segmentation from scratch"};
  app.require_subcommand(1);
  // command-line flags win over config values: the file's entries are injected
  // before the user's flags and every option takes the last occurrence
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;
  auto add_config = [&config_path](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "flat key=value config file; flags override it");
  };

  auto* summary = app.add_subcommand("summary", "parameter/MAC/size accounting");
  std::string input_size = "512x512";
  summary->add_option("--input-size", input_size, "input size as WxH (multiples of 16)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  double tol = 1e-4;
  uint64_t gc_seed = 1;
  gradcheck->add_option("--tol", tol, "op tolerance (whole model runs at 10x this)");
  gradcheck->add_option("--seed", gc_seed, "base seed; each op runs seeds seed..seed+4");

  auto* train_cmd = app.add_subcommand("train", "train a model");
  TrainArgs ta;
  train_cmd->add_option("--data", ta.data, "dataset root (<root>/images, <root>/masks)");
  train_cmd->add_option("--dataset", ta.dataset, "drive | chase_db1 | hrf | synth")
      ->required();
  train_cmd->add_option("--out", ta.out, "output directory");
  train_cmd->add_option("--seed", ta.seed, "run seed");
  train_cmd->add_option("--lr", ta.lr, "learning rate");
  train_cmd->add_option("--weight-decay", ta.weight_decay, "decoupled weight decay");
  train_cmd->add_option("--batch-size", ta.batch_size, "0 = dataset default (2, HRF 1)");
  train_cmd->add_option("--max-epochs", ta.max_epochs, "epoch cap");
  train_cmd->add_option("--patience", ta.patience, "early-stopping patience on val dice");
  train_cmd->add_option("--w", ta.w, "BCE weight in the combined loss");
  train_cmd->add_option("--threshold", ta.threshold, "binarization threshold for val metrics");
  train_cmd->add_option("--stop-dice", ta.stop_dice, "stop once val dice reaches this (0=off)");
  train_cmd->add_option("--synth-count", ta.synth_count, "synth: number of images");
  train_cmd->add_option("--size", ta.size, "synth: image size (multiple of 16)");
  train_cmd->add_flag("--no-mixed-loss", ta.no_mixed_loss,
                      "supervise only the final head (ablation arm)");
  train_cmd->add_flag("--no-augment", ta.no_augment, "disable training-time augmentation");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_dataset, ev_split = "test", ev_out;
  double ev_threshold = 0.5;
  eval_cmd->add_option("--checkpoint", ev_ckpt)->required();
  eval_cmd->add_option("--data", ev_data)->required();
  eval_cmd->add_option("--dataset", ev_dataset)->required();
  eval_cmd->add_option("--threshold", ev_threshold, "binarization threshold");
  eval_cmd->add_option("--split", ev_split, "train | test | all");
  eval_cmd->add_option("--out", ev_out, "CSV path (default: stdout)");

  auto* infer_cmd = app.add_subcommand("infer", "write a probability map for one image");
  std::string in_ckpt, in_image, in_out, in_dataset;
  infer_cmd->add_option("--checkpoint", in_ckpt)->required();
  infer_cmd->add_option("--image", in_image)->required();
  infer_cmd->add_option("--out", in_out)->required();
  infer_cmd->add_option("--dataset", in_dataset,
                        "apply this dataset's resize rule (default: nearest multiple of 16)");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic vessel dataset");
  uint64_t sy_seed = 0;
  int sy_size = 64, sy_count = 4;
  std::string sy_out;
  synth_cmd->add_option("--seed", sy_seed);
  synth_cmd->add_option("--size", sy_size, "image size (multiple of 16)");
  synth_cmd->add_option("--count", sy_count);
  synth_cmd->add_option("--out", sy_out)->required();

  for (auto* sub : {summary, gradcheck, train_cmd, eval_cmd, infer_cmd, synth_cmd})
    add_config(sub);

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());  // CLI11 parses the vector back to front
    app.parse(std::move(args));
    if (app.got_subcommand(summary)) return cmd_summary(input_size);
    if (app.got_subcommand(gradcheck)) return cmd_gradcheck(tol, gc_seed);
    if (app.got_subcommand(train_cmd)) return cmd_train(ta);
    if (app.got_subcommand(eval_cmd))
      return cmd_eval(ev_ckpt, ev_data, ev_dataset, ev_threshold, ev_split, ev_out);
    if (app.got_subcommand(infer_cmd)) return cmd_infer(in_ckpt, in_image, in_out, in_dataset);
    if (app.got_subcommand(synth_cmd)) return cmd_synth(sy_seed, sy_size, sy_count, sy_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
