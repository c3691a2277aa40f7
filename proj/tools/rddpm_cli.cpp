// rddpm: dataset building, training, segmentation, evaluation and sweeps.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "rddpm/corruption.hpp"
#include "rddpm/experiment.hpp"
#include "rddpm/image_io.hpp"
#include "rddpm/metrics.hpp"
#include "rddpm/segmentation.hpp"
#include "rddpm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rddpm;

namespace {

struct Common {
  std::string profile = "desk";
  std::string config;
  fs::path out = "out";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

// Config file layers over the preset; "plan" (sweep only) is split off.
json config_layer(const Common& c, json* plan = nullptr) {
  if (c.config.empty()) return json::object();
  json j = read_json(c.config);
  if (j.contains("plan")) {
    if (plan) *plan = j["plan"];
    j.erase("plan");
  }
  return j;
}

void write_manifest(const Common& c, const std::string& command, json body, const std::vector<fs::path>& files) {
  body["command"] = command;
  body["profile"] = c.profile;
  if (c.seed) body["seed"] = *c.seed;
  body["created_unix"] = static_cast<std::int64_t>(std::time(nullptr));
  body["files"] = describe_files(c.out, files);
  write_json(c.out / "manifest.json", body);
}

// Input | reconstruction | heatmap, one channel each, side by side.
ImageTensor side_by_side(const ImageTensor& input, const ImageTensor& recon, const Heatmap& heatmap) {
  const Shape& s = input.shape();
  const ImageTensor shown = normalize_for_display(heatmap_image(heatmap));
  ImageTensor panel(Shape{1, s.height, 3 * s.width + 4});
  for (float& v : panel.data()) v = 1.0f;
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      float a = 0, b = 0;
      for (int c = 0; c < s.channels; ++c) a += input.at(c, y, x), b += recon.at(c, y, x);
      panel.at(0, y, x) = a / s.channels;
      panel.at(0, y, s.width + 2 + x) = b / s.channels;
      panel.at(0, y, 2 * s.width + 4 + x) = shown.at(0, y, x);
    }
  }
  return panel;
}

// Dataset from a cache file, or the profile's synthetic benchmark.
std::vector<LabeledPatch> load_or_build(const fs::path& data, const ExperimentProfile& p, double contamination,
                                        std::uint64_t seed) {
  if (!data.empty()) return load_dataset(data).patches;
  return cell_dataset(p, CellSpec{Method::kDdpm, contamination, 0.0, seed});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust diffusion models for anomaly segmentation"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--profile", common.profile, "Preset: ci, desk, full")
        ->check(CLI::IsMember({"ci", "desk", "full"}));
    sub->add_option("--config", common.config, "JSON file layered over the preset");
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--seed", common.seed, "Seed");
    sub->add_option("--jobs", common.jobs, "Worker threads")->check(CLI::PositiveNumber);
  };

  // build-data
  auto* build = app.add_subcommand("build-data", "Generate or import a labelled patch dataset");
  add_common(build);
  std::optional<std::size_t> n_train, n_eval;
  std::optional<double> contamination, block_fraction, intensity;
  fs::path mvtec_root;
  MvtecOptions mvtec;
  build->add_flag("--synthetic", "Synthetic texture benchmark (default)");
  build->add_option("--n", n_train, "Training patches");
  build->add_option("--n-eval", n_eval, "Evaluation patches");
  build->add_option("--contamination", contamination, "Fraction of training patches corrupted")
      ->check(CLI::Range(0.0, 1.0));
  build->add_option("--block-fraction", block_fraction, "Fraction of 2x2 blocks altered per corrupted patch");
  build->add_option("--intensity-factor", intensity, "Intensity multiplier");
  build->add_option("--mvtec", mvtec_root, "MVTec-style dataset root");
  build->add_option("--category", mvtec.category, "MVTec category");
  build->add_option("--resolution", mvtec.resolution, "Resize MVTec images to this side");
  build->add_option("--contaminate-with-real", mvtec.contaminate_with_real,
                    "Move this fraction of real defective images into training");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a noise predictor");
  add_common(train_cmd);
  fs::path data_path;
  std::string loss_kind;
  std::optional<double> delta, lambda, lr;
  std::optional<int> epochs, batch;
  std::int64_t checkpoint_interval = 0;
  train_cmd->add_option("--data", data_path, "Dataset cache from build-data (default: synthetic benchmark)");
  train_cmd->add_option("--contamination", contamination, "Contamination when generating data");
  train_cmd->add_option("--loss", loss_kind, "l2, huber, l1 or lts")->check(CLI::IsMember({"l2", "huber", "l1", "lts"}));
  train_cmd->add_option("--delta", delta, "Huber threshold");
  train_cmd->add_option("--lambda", lambda, "LTS kept fraction");
  train_cmd->add_option("--epochs", epochs);
  train_cmd->add_option("--batch", batch);
  train_cmd->add_option("--lr", lr);
  train_cmd->add_option("--checkpoint-interval", checkpoint_interval, "Steps between checkpoints (0: final only)");

  // segment
  auto* seg = app.add_subcommand("segment", "Anomaly heatmaps for PNG images");
  add_common(seg);
  fs::path checkpoint;
  std::vector<fs::path> inputs;
  PatchingConfig patching;
  std::optional<double> fraction;
  int repeats = 1;
  seg->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  seg->add_option("inputs", inputs, "PNG images")->required();
  seg->add_option("--stride", patching.stride, "Tile stride");
  seg->add_option("--fraction", fraction, "Noising fraction of T");
  seg->add_option("--repeats", repeats, "Reconstructions averaged per tile");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Pixel metrics on the eval split");
  add_common(eval);
  bool per_image = false;
  std::size_t panels = 8;
  eval->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  eval->add_option("--data", data_path, "Dataset cache (default: synthetic benchmark)");
  eval->add_option("--contamination", contamination, "Contamination when generating data");
  eval->add_option("--fraction", fraction, "Noising fraction of T");
  eval->add_option("--repeats", repeats, "Reconstructions averaged per patch");
  eval->add_flag("--per-image", per_image, "Average per-image metrics instead of pooling pixels");
  eval->add_option("--panels", panels, "Input/reconstruction/heatmap panels to write");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate a grid of cells");
  add_common(sweep);
  std::vector<std::string> methods;
  std::vector<double> levels, deltas, lambdas;
  std::vector<std::uint64_t> seeds;
  sweep->add_option("--methods", methods, "ddpm, rddpm-huber, rddpm-lts")->delimiter(',');
  sweep->add_option("--contamination", levels, "Contamination levels")->delimiter(',');
  sweep->add_option("--deltas", deltas, "Huber deltas (0 = l1)")->delimiter(',');
  sweep->add_option("--lambdas", lambdas, "LTS kept fractions")->delimiter(',');
  sweep->add_option("--seeds", seeds, "Seeds")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(common.out);
    json plan_layer = json::object();
    const json config = config_layer(common, &plan_layer);

    // Flags that map onto profile fields; applied after the config file.
    json over = json::object();
    if (n_train) over["data"]["n_train"] = *n_train;
    if (n_eval) over["data"]["n_eval"] = *n_eval;
    if (contamination) over["data"]["train_corruption"]["contamination_ratio"] = *contamination;
    if (block_fraction) over["data"]["train_corruption"]["block_fraction"] = *block_fraction;
    if (intensity) over["data"]["train_corruption"]["intensity_factor"] = *intensity;
    if (common.seed) over["data"]["seed"] = *common.seed;
    if (epochs) over["train"]["epochs"] = *epochs;
    if (batch) over["train"]["batch_size"] = *batch;
    if (lr) over["train"]["learning_rate"] = *lr;
    if (fraction) over["eval"]["noising_fraction"] = *fraction;
    if (*eval || *seg) over["eval"]["repeats"] = repeats;
    if (per_image) over["eval"]["per_image_mean"] = true;
    ExperimentProfile profile = resolve_profile(common.profile, config, over);
    const std::uint64_t seed = common.seed.value_or(profile.data.seed);

    if (*build) {
      Dataset ds;
      if (!mvtec_root.empty()) {
        mvtec.seed = seed;
        ds.patches = load_mvtec_layout(mvtec_root, mvtec);
        ds.spec = {{"source", "mvtec"},         {"root", mvtec_root.string()},  {"category", mvtec.category},
                   {"resolution", mvtec.resolution}, {"contaminate_with_real", mvtec.contaminate_with_real},
                   {"seed", seed}};
      } else {
        ds.patches = build_synthetic_benchmark(profile.data);
        ds.spec = profile.data;
        ds.spec["source"] = "synthetic";
      }
      const fs::path file = common.out / "dataset.rdpd";
      save_dataset(file, ds);
      std::size_t train = 0, contaminated = 0, defective_eval = 0;
      for (const LabeledPatch& p : ds.patches) {
        if (p.split == Split::kTrain) {
          ++train;
          contaminated += p.contaminated;
        } else {
          defective_eval += p.contaminated;
        }
      }
      json body{{"spec", ds.spec},
                {"counts",
                 {{"total", ds.patches.size()},
                  {"train", train},
                  {"eval", ds.patches.size() - train},
                  {"contaminated", contaminated},
                  {"defective_eval", defective_eval}}}};
      write_manifest(common, "build-data", body, {file});
      std::printf("%zu train (%zu contaminated), %zu eval -> %s\n", train, contaminated, ds.patches.size() - train,
                  file.c_str());
    } else if (*train_cmd) {
      const std::vector<LabeledPatch> data =
          load_or_build(data_path, profile, profile.data.train_corruption.contamination_ratio, seed);
      TrainConfig tc = profile.train;
      tc.seed = seed;
      if (!loss_kind.empty()) {
        tc.loss.kind = loss_kind_from_string(loss_kind);
        if (delta) tc.loss.delta = *delta;
        if (lambda) tc.loss.lambda = *lambda;
        if (tc.loss.kind == LossKind::kL1) tc.loss.delta = 0.0;
        if (tc.loss.kind == LossKind::kLts && !lambda) tc.loss.lambda = 0.8;
      }
      tc.checkpoint_interval = checkpoint_interval;
      tc.checkpoint_dir = common.out / "checkpoints";
      ConvNetConfig mc = profile.model;
      mc.init_seed = seed;
      mc.steps = tc.schedule.steps;
      auto model = reference_net(mc);
      const auto t0 = std::chrono::steady_clock::now();
      const TrainResult result = train(data, tc, *model, [](const StepInfo& s) {
        if (s.step % 1000 == 0) std::fprintf(stderr, "step %lld loss %.5f\n", static_cast<long long>(s.step), s.loss.loss);
      });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      Checkpoint ck{model->describe(), tc, tc.epochs, result.history,
                    std::vector<float>(model->parameters().begin(), model->parameters().end())};
      const fs::path final_path = common.out / "checkpoints" / "final.rdpm";
      save_checkpoint(final_path, ck);
      const fs::path loss_path = common.out / "loss.csv";
      write_loss_csv(loss_path, result.history);
      std::vector<fs::path> files{final_path, loss_path};
      for (const auto& e : fs::directory_iterator(common.out / "checkpoints")) {
        if (e.path() != final_path) files.push_back(e.path());
      }
      json body{{"train", tc}, {"model", model->describe()}, {"steps", result.steps}, {"seconds", secs},
                {"parameter_checksum", parameter_checksum(model->parameters())}};
      if (!data_path.empty()) body["data"] = {{"path", data_path.string()}, {"git_sha1", git_blob_hash_file(data_path)}};
      else body["data"] = profile.data;
      write_manifest(common, "train", body, files);
      std::printf("%lld steps in %.1fs, final loss %.5f -> %s\n", static_cast<long long>(result.steps), secs,
                  result.history.empty() ? 0.0 : result.history.back().loss, final_path.c_str());
    } else if (*seg) {
      const Checkpoint ck = load_checkpoint(checkpoint);
      const auto model = restore_model(ck);
      const NoiseSchedule schedule = NoiseSchedule::from_params(ck.config.schedule);
      patching.patch = model->shape().height;
      std::vector<fs::path> files;
      Rng root = Rng(seed).split("segment");
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const ImageTensor image = read_png(inputs[i], model->shape().channels);
        Rng rng = root.split(static_cast<std::uint64_t>(i));
        Heatmap h = segment_image(image, *model, schedule, patching, profile.eval.noising_fraction, rng,
                                  profile.eval.repeats);
        h.source_id = inputs[i].string();
        const fs::path png = common.out / "heatmaps" / (inputs[i].stem().string() + ".png");
        const fs::path raw = common.out / "heatmaps" / (inputs[i].stem().string() + ".f32");
        write_heatmap_png(png, h);
        write_heatmap_raw(raw, h);
        files.push_back(png);
        files.push_back(raw);
      }
      json body{{"checkpoint", checkpoint.string()}, {"checkpoint_git_sha1", git_blob_hash_file(checkpoint)},
                {"stride", patching.stride}, {"noising_fraction", profile.eval.noising_fraction},
                {"repeats", profile.eval.repeats}};
      write_manifest(common, "segment", body, files);
      std::printf("%zu heatmaps -> %s\n", inputs.size(), (common.out / "heatmaps").c_str());
    } else if (*eval) {
      const Checkpoint ck = load_checkpoint(checkpoint);
      const auto model = restore_model(ck);
      const NoiseSchedule schedule = NoiseSchedule::from_params(ck.config.schedule);
      const std::vector<LabeledPatch> data =
          load_or_build(data_path, profile, profile.data.train_corruption.contamination_ratio, seed);
      EvalConfig ec = profile.eval;
      ec.seed = seed;
      const auto segmented = segment_eval_split(*model, data, schedule, ec);
      const EvalReport report = evaluate_segmented(data, segmented, ec.per_image_mean);

      std::vector<fs::path> files;
      const fs::path report_path = common.out / "report.json";
      write_json(report_path, report);
      files.push_back(report_path);
      CellResult row;
      row.cell.contamination = profile.data.train_corruption.contamination_ratio;
      row.cell.seed = seed;
      switch (ck.config.loss.kind) {
        case LossKind::kL2: row.cell.method = Method::kDdpm; break;
        case LossKind::kHuber: row.cell.method = Method::kHuber, row.cell.param = ck.config.loss.delta; break;
        case LossKind::kL1: row.cell.method = Method::kHuber, row.cell.param = 0.0; break;
        case LossKind::kLts: row.cell.method = Method::kLts, row.cell.param = ck.config.loss.lambda; break;
      }
      row.auroc = report.auroc, row.auprc = report.auprc, row.mse = report.masked_mse;
      const fs::path csv = common.out / "metrics.csv";
      write_metrics_csv(csv, std::span<const CellResult>(&row, 1));
      files.push_back(csv);
      // Panels: defective patches first, they are the interesting ones.
      std::vector<const SegmentedPatch*> order;
      for (const auto& sp : segmented) if (data[sp.index].contaminated) order.push_back(&sp);
      for (const auto& sp : segmented) if (!data[sp.index].contaminated) order.push_back(&sp);
      for (std::size_t k = 0; k < std::min(panels, order.size()); ++k) {
        const SegmentedPatch& sp = *order[k];
        const fs::path png = common.out / "heatmaps" / ("patch_" + std::to_string(sp.index) + ".png");
        write_png(png, side_by_side(data[sp.index].image, sp.reconstruction, sp.heatmap));
        files.push_back(png);
      }
      json body{{"checkpoint", checkpoint.string()}, {"checkpoint_git_sha1", git_blob_hash_file(checkpoint)},
                {"eval", ec}, {"auroc", report.auroc}, {"auprc", report.auprc}, {"masked_mse", report.masked_mse}};
      write_manifest(common, "evaluate", body, files);
      std::printf("auroc %.4f  auprc %.4f  mse %.5f  (%zu patches)\n", report.auroc, report.auprc,
                  report.masked_mse, segmented.size());
    } else if (*sweep) {
      ExperimentPlan plan = plan_layer.get<ExperimentPlan>();
      if (!methods.empty()) {
        plan.methods.clear();
        for (const auto& m : methods) plan.methods.push_back(method_from_string(m));
      }
      if (!levels.empty()) plan.contamination = levels;
      if (!deltas.empty()) plan.deltas = deltas;
      if (!lambdas.empty()) plan.lambdas = lambdas;
      if (!seeds.empty()) plan.seeds = seeds;
      else if (common.seed) plan.seeds = {*common.seed};
      const std::vector<CellSpec> cells = plan.expand();
      std::fprintf(stderr, "%zu cells on %d job(s)\n", cells.size(), common.jobs);
      const auto t0 = std::chrono::steady_clock::now();
      const auto results = run_cells(profile, cells, common.jobs, [](const CellResult& r, std::size_t done, std::size_t n) {
        std::fprintf(stderr, "[%zu/%zu] %s seed %llu: auroc %.4f auprc %.4f (%.0fs)\n", done, n,
                     r.cell.group_label().c_str(), static_cast<unsigned long long>(r.cell.seed), r.auroc, r.auprc,
                     r.train_seconds + r.eval_seconds);
      });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const auto rows = aggregate(results);
      const fs::path metrics = common.out / "metrics.csv";
      const fs::path agg = common.out / "aggregate.csv";
      write_metrics_csv(metrics, results);
      write_aggregate_csv(agg, rows);
      std::vector<fs::path> files{metrics, agg};
      for (const auto& p : write_sweep_plots(common.out / "plots", rows)) files.push_back(p);
      json body{{"plan", plan}, {"config", profile}, {"cells", cells.size()}, {"jobs", common.jobs},
                {"seconds", secs}};
      write_manifest(common, "sweep", body, files);
      for (const AggregateRow& r : rows) {
        std::printf("%-12s c=%.2f p=%-4g auroc %.4f±%.4f auprc %.4f±%.4f mse %.5f\n", to_string(r.method).c_str(),
                    r.contamination, r.param, r.auroc_mean, r.auroc_std, r.auprc_mean, r.auprc_std, r.mse_mean);
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
