#include "terracer/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "terracer/checkpoint.hpp"
#include "terracer/eval.hpp"
#include "terracer/threading.hpp"
#include "terracer/train.hpp"

namespace terracer::cli {

namespace {

namespace fs = std::filesystem;

int cmd_dataset_synth(uint64_t seed, int scenes, int size, int classes,
                      double clouds, double noise, const std::string& out) {
  std::cerr << "[dataset synth] seed=" << seed << " scenes=" << scenes
            << " size=" << size << " classes=" << classes
            << " clouds=" << clouds << " noise=" << noise << " out=" << out
            << "\n";
  SynthParams p;
  p.seed = seed;
  p.size_px = size;
  p.num_classes = classes;
  p.cloud_fraction = clouds;
  p.noise_sigma = noise;
  Manifest man = synthesize_dataset(seed, scenes, p, out);
  std::cerr << "[dataset synth] wrote " << man.scenes.size()
            << " scenes and manifest.json\n";
  return 0;
}

int cmd_dataset_validate(const std::string& manifest_path) {
  Manifest man = Manifest::load(manifest_path);
  const auto problems = validate_manifest(man);
  if (problems.empty()) {
    std::cerr << "[dataset validate] OK: " << man.scenes.size()
              << " scenes, " << man.classes.size() << " classes\n";
    return 0;
  }
  for (const auto& p : problems)
    std::cerr << "[dataset validate] problem: " << p << "\n";
  return 1;
}

int cmd_train(const std::string& config_path, const std::string& resume,
              int epochs, int steps, int batch, long long seed,
              const std::string& ckpt_dir) {
  TrainConfig cfg = TrainConfig::from_json_file(config_path);
  if (!resume.empty()) cfg.resume_checkpoint = resume;
  if (epochs > 0) cfg.epochs = epochs;
  if (steps > 0) cfg.steps_per_epoch = steps;
  if (batch > 0) cfg.batch_size = batch;
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  if (!ckpt_dir.empty()) cfg.checkpoint_dir = ckpt_dir;

  fs::create_directories(cfg.checkpoint_dir);
  cfg.save_json(fs::path(cfg.checkpoint_dir) / "resolved-config.json");
  std::cerr << "[train] preset=" << cfg.preset << " strategy=" << cfg.strategy
            << " seed=" << cfg.seed << " epochs=" << cfg.epochs
            << " batch=" << cfg.batch_size << " tile=" << cfg.tile_px
            << " optimizer=" << cfg.optim.kind << " lr=" << cfg.optim.lr
            << "\n";

  std::ofstream metrics(fs::path(cfg.checkpoint_dir) / "metrics.jsonl");
  TrainOutcome out = train(cfg, &metrics);
  if (!out.ok) {
    std::cerr << "[train] FAILED: " << out.error << "\n";
    return 1;
  }
  std::cerr << "[train] done: steps=" << out.steps
            << " final_loss=" << out.final_loss << " checkpoint="
            << out.final_checkpoint << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest_path,
             const std::string& split, double erode_m,
             const std::string& strategy, const std::string& report_path) {
  Model<float> model = load_model(ckpt);
  Manifest man = Manifest::load(manifest_path);
  std::cerr << "[eval] ckpt=" << ckpt << " split=" << split
            << " erode_m=" << erode_m << " strategy=" << strategy << "\n";
  EvalResult res = evaluate(model, man, split, erode_m, strategy);
  const std::string report = eval_report_json(res, man.classes);
  if (!report_path.empty()) {
    std::ofstream os(report_path);
    if (!os) throw DataError("eval: cannot write report " + report_path);
    os << report << "\n";
  }
  std::cerr << "[eval] oa=" << res.oa()
            << " excluded_fraction=" << res.excluded_fraction()
            << " evaluated=" << res.evaluated << "\n";
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& manifest_path,
                const std::string& scene_id, const std::string& out_path) {
  Model<float> model = load_model(ckpt);
  Manifest man = Manifest::load(manifest_path);
  Scene scene = load_scene(man, man.scene_ref(scene_id));
  const CheckpointMeta meta = read_checkpoint_meta(ckpt);
  std::cerr << "[predict] scene=" << scene_id << " strategy=" << meta.strategy
            << "\n";
  Tensor<uint16_t> ids =
      predict_map(model, scene, man.normalization, meta.strategy);
  // the raster payload carries legend codes, like the label files
  Tensor<uint16_t> codes(ids.shape());
  for (int64_t i = 0; i < ids.numel(); ++i)
    codes[i] = static_cast<uint16_t>(man.classes.code_from_id(ids[i]));
  write_erb1_u16(out_path, codes);
  fs::path ppm(out_path);
  ppm.replace_extension(".ppm");
  write_label_ppm(ppm, ids);
  std::cerr << "[predict] wrote " << out_path << " (" << ids.dim(1) << "x"
            << ids.dim(0) << ") and " << ppm.string() << "\n";
  return 0;
}

int cmd_params(const std::string& preset, int bands, int classes) {
  // validated before building so the usage error lists the presets
  const Model<float> m = build_preset<float>(preset, 1, bands, classes);
  std::cout << "preset " << m.preset_id << "  params " << m.param_count()
            << "  scales " << m.num_scales << "  bands " << m.input_bands
            << "  classes " << m.num_classes << "\n";
  if (auto cp = counterpart_2d(preset)) {
    const Model<float> ref = build_preset<float>(*cp, 1, -1, classes);
    const double red =
        100.0 * (1.0 - double(m.param_count()) / double(ref.param_count()));
    std::cout << "reduction vs " << *cp << ": " << red << "%\n";
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"land-cover segmentation workbench"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "cap worker threads (default: TERRACER_THREADS or all)");

  // dataset
  auto* dataset = app.add_subcommand("dataset", "synthesize or check datasets");
  dataset->require_subcommand(1);
  auto* synth = dataset->add_subcommand("synth", "generate a synthetic dataset");
  uint64_t s_seed = 1;
  int s_scenes = 10, s_size = 240, s_classes = 5;
  double s_clouds = 0.0, s_noise = 0.04;
  std::string s_out;
  synth->add_option("--seed", s_seed, "master seed");
  synth->add_option("--scenes", s_scenes, "number of scenes");
  synth->add_option("--size", s_size, "scene size in band pixels");
  synth->add_option("--classes", s_classes, "land-cover classes");
  synth->add_option("--clouds", s_clouds, "cloud cell fraction [0,1)");
  synth->add_option("--noise", s_noise, "band noise sigma");
  synth->add_option("--out", s_out, "output directory")->required();

  auto* validate = dataset->add_subcommand("validate", "check a manifest");
  std::string v_manifest;
  validate->add_option("manifest", v_manifest, "manifest path")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string t_config, t_resume, t_ckpt_dir;
  int t_epochs = 0, t_steps = 0, t_batch = 0;
  long long t_seed = -1;
  train_cmd->add_option("--config", t_config, "JSON training config")
      ->required();
  train_cmd->add_option("--resume", t_resume, "checkpoint to resume from");
  train_cmd->add_option("--epochs", t_epochs, "override epochs");
  train_cmd->add_option("--steps-per-epoch", t_steps,
                        "override steps per epoch");
  train_cmd->add_option("--batch-size", t_batch, "override batch size");
  train_cmd->add_option("--seed", t_seed, "override seed");
  train_cmd->add_option("--checkpoint-dir", t_ckpt_dir,
                        "override checkpoint directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_manifest, e_split = "test", e_strategy = "auto",
              e_report;
  double e_erode = 200.0;
  eval_cmd->add_option("--ckpt", e_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--manifest", e_manifest, "dataset manifest")
      ->required();
  eval_cmd->add_option("--split", e_split, "train|test");
  eval_cmd->add_option("--erode-m", e_erode,
                       "reference boundary erosion radius in meters");
  eval_cmd->add_option("--strategy", e_strategy, "fine|coarse|auto");
  eval_cmd->add_option("--report", e_report, "report JSON path");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "write a label map");
  std::string p_ckpt, p_manifest, p_scene, p_out;
  predict_cmd->add_option("--ckpt", p_ckpt, "checkpoint file")->required();
  predict_cmd->add_option("--manifest", p_manifest, "dataset manifest")
      ->required();
  predict_cmd->add_option("--scene", p_scene, "scene id")->required();
  predict_cmd->add_option("--out", p_out, "output raster (.erb1)")
      ->required();

  // params
  auto* params_cmd =
      app.add_subcommand("params", "architecture size and scale report");
  std::string m_preset;
  int m_bands = -1, m_classes = -1;
  params_cmd->add_option("preset", m_preset, "model preset id")->required();
  params_cmd->add_option("--bands", m_bands, "override input bands");
  params_cmd->add_option("--classes", m_classes, "override classes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  apply_thread_cap_from_env(threads);

  try {
    if (*synth)
      return cmd_dataset_synth(s_seed, s_scenes, s_size, s_classes, s_clouds,
                               s_noise, s_out);
    if (*validate) return cmd_dataset_validate(v_manifest);
    if (*train_cmd)
      return cmd_train(t_config, t_resume, t_epochs, t_steps, t_batch, t_seed,
                       t_ckpt_dir);
    if (*eval_cmd)
      return cmd_eval(e_ckpt, e_manifest, e_split, e_erode, e_strategy,
                      e_report);
    if (*predict_cmd) return cmd_predict(p_ckpt, p_manifest, p_scene, p_out);
    if (*params_cmd) {
      const auto& known = preset_ids();
      if (std::find(known.begin(), known.end(), m_preset) == known.end()) {
        std::cerr << "unknown preset '" << m_preset << "'; available:";
        for (const auto& id : known) std::cerr << " " << id;
        std::cerr << "\n";
        return 2;
      }
      return cmd_params(m_preset, m_bands, m_classes);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace terracer::cli
