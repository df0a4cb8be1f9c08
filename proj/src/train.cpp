#include "terracer/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <variant>

#include "json.hpp"
#include "terracer/checkpoint.hpp"
#include "terracer/optim.hpp"

namespace terracer {

using nlohmann::json;

// ---------------------------------------------------------------- config

TrainConfig TrainConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("train config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("train config: invalid JSON: " + std::string(e.what()));
  }
  TrainConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.manifest_path = j.at("manifest").get<std::string>();
  c.strategy = j.value("strategy", std::string("fine"));
  c.checkpoint_dir = j.value("checkpoint_dir", std::string("checkpoints"));
  c.epochs = j.value("epochs", 1);
  c.batch_size = j.value("batch_size", 2);
  c.tile_px = j.value("tile_px", 64);
  c.steps_per_epoch = j.value("steps_per_epoch", 0);
  c.bands = j.value("bands", -1);
  c.classes = j.value("classes", -1);
  c.seed = j.value("seed", uint64_t{1});
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    c.optim.kind = o.value("kind", std::string("adam"));
    c.optim.lr = o.value("lr", 1e-3);
    c.optim.momentum = o.value("momentum", 0.9);
    c.optim.beta1 = o.value("beta1", 0.9);
    c.optim.beta2 = o.value("beta2", 0.999);
    c.optim.eps = o.value("eps", 1e-8);
  }
  c.average_weight = j.value("average_weight", 1.0);
  c.head_weight = j.value("head_weight", 0.25);
  c.flips = j.value("flips", true);
  c.resume_checkpoint = j.value("resume", std::string());
  c.target_train_oa = j.value("target_train_oa", -1.0);
  c.eval_every = j.value("eval_every", 0);
  return c;
}

void TrainConfig::save_json(const std::filesystem::path& path) const {
  json j;
  j["preset"] = preset;
  j["manifest"] = manifest_path;
  j["strategy"] = strategy;
  j["checkpoint_dir"] = checkpoint_dir;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["tile_px"] = tile_px;
  j["steps_per_epoch"] = steps_per_epoch;
  j["bands"] = bands;
  j["classes"] = classes;
  j["seed"] = seed;
  j["optimizer"] = {{"kind", optim.kind},   {"lr", optim.lr},
                    {"momentum", optim.momentum}, {"beta1", optim.beta1},
                    {"beta2", optim.beta2}, {"eps", optim.eps}};
  j["average_weight"] = average_weight;
  j["head_weight"] = head_weight;
  j["flips"] = flips;
  if (!resume_checkpoint.empty()) j["resume"] = resume_checkpoint;
  j["target_train_oa"] = target_train_oa;
  j["eval_every"] = eval_every;
  std::ofstream os(path);
  if (!os) throw DataError("train config: cannot write " + path.string());
  os << j.dump(2) << "\n";
}

// ------------------------------------------------------- multiscale loss

MultiscaleLoss compute_multiscale_loss(const std::vector<Var<float>>& heads,
                                       const Tensor<uint16_t>& labels_coarse,
                                       int pool_factor, int th, int tw,
                                       float average_weight,
                                       float head_weight) {
  if (heads.empty()) throw ConfigError("multiscale loss: no heads");
  if (labels_coarse.rank() != 3)
    throw ConfigError("multiscale loss: labels must be [N,lt,lt]");
  const int lt_h = th / pool_factor, lt_w = tw / pool_factor;
  if (labels_coarse.dim(1) != lt_h || labels_coarse.dim(2) != lt_w)
    throw ConfigError(
        "multiscale loss: label grid " + shape_str(labels_coarse.shape()) +
        " does not match pooled logits " + std::to_string(lt_h) + "x" +
        std::to_string(lt_w));

  std::vector<Var<float>> full;
  full.reserve(heads.size());
  for (const auto& h : heads) {
    if (h->value.dim(2) == th && h->value.dim(3) == tw)
      full.push_back(h);
    else
      full.push_back(ops::upsample_bilinear(h, th, tw));
  }
  Var<float> acc = full[0];
  for (size_t i = 1; i < full.size(); ++i) acc = ops::add(acc, full[i]);
  Var<float> avg = ops::scale(acc, 1.0f / static_cast<float>(full.size()));
  Var<float> pooled_avg = ops::avgpool2d(avg, pool_factor);

  Var<float> total = ops::scale(
      ops::softmax_cross_entropy(pooled_avg, labels_coarse), average_weight);
  if (head_weight != 0.0f) {
    for (const auto& h : full) {
      Var<float> ph = ops::avgpool2d(h, pool_factor);
      total = ops::add(
          total,
          ops::scale(ops::softmax_cross_entropy(ph, labels_coarse),
                     head_weight));
    }
  }
  return {total, pooled_avg};
}

Var<float> loss_multiscale(const std::vector<Var<float>>& heads,
                           const Tensor<uint16_t>& labels_coarse,
                           int pool_factor, int th, int tw,
                           float average_weight, float head_weight) {
  return compute_multiscale_loss(heads, labels_coarse, pool_factor, th, tw,
                                 average_weight, head_weight)
      .total;
}

// ---------------------------------------------------------------- trainer

namespace {

struct Sample {
  size_t scene = 0;
  int y0 = 0, x0 = 0;
};

double argmax_oa(const Tensor<float>& logits, const Tensor<uint16_t>& labels) {
  const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2),
            w = logits.dim(3);
  int64_t hit = 0, tot = 0;
  const int64_t plane = (int64_t)h * w;
  for (int im = 0; im < n; ++im)
    for (int64_t i = 0; i < plane; ++i) {
      const uint16_t lab = labels[(int64_t)im * plane + i];
      if (lab == kNoDataLabel) continue;
      int best = 0;
      float bv = logits[((int64_t)im * c) * plane + i];
      for (int ch = 1; ch < c; ++ch) {
        const float v = logits[((int64_t)im * c + ch) * plane + i];
        if (v > bv) {
          bv = v;
          best = ch;
        }
      }
      if (best == lab) ++hit;
      ++tot;
    }
  return tot ? double(hit) / double(tot) : 0.0;
}

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg) : cfg_(cfg) {
    const PresetSpec spec = preset_spec(cfg.preset);
    const bool is_segnet = spec.is_segnet;
    if (cfg.strategy == "coarse" && !is_segnet)
      throw ConfigError("coarse training applies to the segnet preset only");
    if (cfg.strategy == "fine" && is_segnet)
      throw ConfigError("fine training applies to the dense-net presets only");
    if (cfg.strategy != "fine" && cfg.strategy != "coarse")
      throw ConfigError("strategy must be fine|coarse");

    manifest_ = Manifest::load(cfg.manifest_path);
    const int classes =
        cfg.classes > 0 ? cfg.classes : manifest_.classes.size();
    model_ = build_preset<float>(cfg.preset, mix_seed(cfg.seed, 1), cfg.bands,
                                 classes);
    if (!cfg.resume_checkpoint.empty())
      load_checkpoint(cfg.resume_checkpoint, model_);

    for (const SceneRef* r : manifest_.split_refs("train")) {
      Scene s = load_scene(manifest_, *r);
      if (model_.input_bands == 9 && s.band_count() != 9)
        s = band_subset(s, BandMode::kNineB1ToB8a);
      if (s.band_count() != model_.input_bands)
        throw ConfigError("scene " + s.id + " provides " +
                          std::to_string(s.band_count()) + " bands, model " +
                          "expects " + std::to_string(model_.input_bands));
      scenes_.push_back(std::move(s));
    }
    if (scenes_.empty())
      throw DataError("training split of " + cfg.manifest_path + " is empty");

    const bool aligned = cfg.strategy == "coarse";
    for (size_t si = 0; si < scenes_.size(); ++si) {
      // coarse pooling windows must coincide with label cells, so the
      // sampling lattice is the resolution ratio instead of the tile size
      const int stride =
          aligned ? (int)std::lround(scenes_[si].label_resolution_m /
                                     scenes_[si].resolution_m)
                  : cfg.tile_px;
      for (const auto& [y, x] :
           tile_offsets(scenes_[si], cfg.tile_px, stride, aligned)) {
        Tile t = cut_tile(scenes_[si], y, x, cfg.tile_px);
        bool any = false;
        for (int64_t i = 0; i < t.labels_fine.numel(); ++i)
          if (t.labels_fine[i] != kNoDataLabel) {
            any = true;
            break;
          }
        if (any) pool_.push_back({si, y, x});
      }
    }
    if (pool_.empty())
      throw DataError("no usable tiles: every candidate window is NO_DATA");

    if (cfg.optim.kind == "sgd")
      opt_.emplace<Sgd<float>>(static_cast<float>(cfg.optim.lr),
                               static_cast<float>(cfg.optim.momentum));
    else if (cfg.optim.kind == "adam")
      opt_.emplace<Adam<float>>(
          static_cast<float>(cfg.optim.lr), static_cast<float>(cfg.optim.beta1),
          static_cast<float>(cfg.optim.beta2),
          static_cast<float>(cfg.optim.eps));
    else
      throw ConfigError("optimizer kind must be adam|sgd");
  }

  TrainOutcome run(std::ostream* metrics) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.checkpoint_dir);
    TrainOutcome out;
    auto shuffle_rng = make_rng(mix_seed(cfg_.seed, 2));
    auto flip_rng = make_rng(mix_seed(cfg_.seed, 3));

    const int steps_per_epoch =
        cfg_.steps_per_epoch > 0
            ? cfg_.steps_per_epoch
            : std::max<int>(1, (static_cast<int>(pool_.size()) +
                                cfg_.batch_size - 1) /
                                   cfg_.batch_size);
    std::vector<size_t> order(pool_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // forces a shuffle on first use

    int step = 0;
    bool stop = false;
    const auto t0 = std::chrono::steady_clock::now();
    for (int epoch = 0; epoch < cfg_.epochs && !stop; ++epoch) {
      for (int es = 0; es < steps_per_epoch && !stop; ++es) {
        // batch assembly with per-epoch reshuffle
        std::vector<const Sample*> batch;
        for (int b = 0; b < cfg_.batch_size; ++b) {
          if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            cursor = 0;
          }
          batch.push_back(&pool_[order[cursor++]]);
        }
        const bool fv = cfg_.flips && flip_rng() % 2 == 0;
        const bool fh = cfg_.flips && flip_rng() % 2 == 0;

        double loss_v = 0, oa_v = 0;
        if (!train_step(batch, fv, fh, loss_v, oa_v)) {
          out.error = "loss diverged (non-finite) at step " +
                      std::to_string(step + 1) +
                      "; last checkpoint retained";
          out.steps = step;
          write_final(out);
          return out;  // ok stays false
        }
        ++step;
        const auto now = std::chrono::steady_clock::now();
        StepRecord rec{step, loss_v, current_lr(), oa_v,
                       std::chrono::duration_cast<std::chrono::milliseconds>(
                           now - t0)
                           .count()};
        out.records.push_back(rec);
        out.final_loss = loss_v;
        if (metrics) {
          json j = {{"step", rec.step},
                    {"loss", rec.loss},
                    {"lr", rec.lr},
                    {"train_oa", rec.train_oa},
                    {"wall_ms", rec.wall_ms}};
          (*metrics) << j.dump() << "\n";
          metrics->flush();
        }
        if (cfg_.eval_every > 0 && step % cfg_.eval_every == 0) {
          const double oa = pool_oa();
          out.best_eval_oa = std::max(out.best_eval_oa, oa);
          if (cfg_.target_train_oa > 0 && oa >= cfg_.target_train_oa) {
            out.steps_to_target = step;
            stop = true;
          }
        }
      }
      save_epoch(epoch);
    }
    out.steps = step;
    out.ok = true;
    write_final(out);
    return out;
  }

  double pool_oa() {
    NoGradGuard ng;
    int64_t hits = 0, total = 0;
    const size_t limit = std::min<size_t>(pool_.size(), 32);
    for (size_t i = 0; i < limit; i += cfg_.batch_size) {
      std::vector<const Sample*> batch;
      for (size_t b = i; b < std::min(limit, i + cfg_.batch_size); ++b)
        batch.push_back(&pool_[b]);
      Tensor<float> input;
      Tensor<uint16_t> fine, coarse;
      assemble(batch, input, fine, coarse);
      auto heads = model_.forward(make_leaf(std::move(input)), false);
      if (cfg_.strategy == "fine") {
        const double oa = argmax_oa(heads[0]->value, fine);
        const int64_t n = count_valid(fine);
        hits += llround(oa * double(n));
        total += n;
      } else {
        auto ms = compute_multiscale_loss(
            heads, coarse, pool_factor(), cfg_.tile_px, cfg_.tile_px,
            static_cast<float>(cfg_.average_weight),
            static_cast<float>(cfg_.head_weight));
        const double oa = argmax_oa(ms.pooled_average->value, coarse);
        const int64_t n = count_valid(coarse);
        hits += llround(oa * double(n));
        total += n;
      }
    }
    return total ? double(hits) / double(total) : 0.0;
  }

  Model<float>& model() { return model_; }

 private:
  static int64_t count_valid(const Tensor<uint16_t>& labels) {
    int64_t n = 0;
    for (int64_t i = 0; i < labels.numel(); ++i)
      if (labels[i] != kNoDataLabel) ++n;
    return n;
  }

  int pool_factor() const {
    return (int)std::lround(scenes_[0].label_resolution_m /
                            scenes_[0].resolution_m);
  }

  double current_lr() const { return cfg_.optim.lr; }

  void assemble(const std::vector<const Sample*>& batch, Tensor<float>& input,
                Tensor<uint16_t>& fine, Tensor<uint16_t>& coarse) {
    const int bn = static_cast<int>(batch.size());
    const int bands = model_.input_bands;
    const int t = cfg_.tile_px;
    input = Tensor<float>({bn, bands, t, t});
    fine = Tensor<uint16_t>({bn, t, t});
    Shape cshape;
    for (int b = 0; b < bn; ++b) {
      const Sample& smp = *batch[b];
      Tile tile = cut_tile(scenes_[smp.scene], smp.y0, smp.x0, t);
      manifest_.normalization.apply(tile.bands, scenes_[smp.scene].band_ids);
      std::copy(tile.bands.data(), tile.bands.data() + tile.bands.numel(),
                input.data() + (int64_t)b * bands * t * t);
      std::copy(tile.labels_fine.data(),
                tile.labels_fine.data() + tile.labels_fine.numel(),
                fine.data() + (int64_t)b * t * t);
      if (cfg_.strategy == "coarse") {
        if (b == 0) {
          cshape = {bn, tile.labels_coarse.dim(0), tile.labels_coarse.dim(1)};
          coarse = Tensor<uint16_t>(cshape);
        }
        if (tile.labels_coarse.shape() !=
            Shape{cshape[1], cshape[2]})
          throw ConfigError("coarse tiles must share one label grid");
        std::copy(tile.labels_coarse.data(),
                  tile.labels_coarse.data() + tile.labels_coarse.numel(),
                  coarse.data() + (int64_t)b * cshape[1] * cshape[2]);
      }
    }
  }

  bool train_step(const std::vector<const Sample*>& batch, bool fv, bool fh,
                  double& loss_v, double& oa_v) {
    Tensor<float> input;
    Tensor<uint16_t> fine, coarse;
    assemble(batch, input, fine, coarse);
    Var<float> x = make_leaf(std::move(input));
    if (fv || fh) x = ops::flip2d(x, fv, fh);
    auto heads = model_.forward(x, true);
    // flips are undone on the logits so labels and pooling stay on the
    // original grid
    if (fv || fh)
      for (auto& h : heads) h = ops::flip2d(h, fv, fh);

    Var<float> loss;
    if (cfg_.strategy == "fine") {
      loss = ops::softmax_cross_entropy(heads[0], fine);
      oa_v = argmax_oa(heads[0]->value, fine);
    } else {
      auto ms = compute_multiscale_loss(
          heads, coarse, pool_factor(), cfg_.tile_px, cfg_.tile_px,
          static_cast<float>(cfg_.average_weight),
          static_cast<float>(cfg_.head_weight));
      loss = ms.total;
      oa_v = argmax_oa(ms.pooled_average->value, coarse);
    }
    loss_v = loss->value[0];
    if (!std::isfinite(loss_v)) return false;

    zero_grads(model_.param_vars());
    backward(loss);
    std::visit(
        [&](auto& opt) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(opt)>,
                                        std::monostate>)
            opt.step(model_.param_vars());
        },
        opt_);
    return true;
  }

  void save_epoch(int epoch) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "ckpt-epoch-%03d.tckpt", epoch);
    const auto path = std::filesystem::path(cfg_.checkpoint_dir) / buf;
    save_checkpoint(path, model_);
    write_meta(path);
  }

  void write_final(TrainOutcome& out) {
    const auto path =
        std::filesystem::path(cfg_.checkpoint_dir) / "final.tckpt";
    save_checkpoint(path, model_);
    write_meta(path);
    out.final_checkpoint = path.string();
  }

  void write_meta(const std::filesystem::path& path) {
    CheckpointMeta meta;
    meta.preset = cfg_.preset;
    meta.bands = model_.input_bands;
    meta.classes = model_.num_classes;
    meta.strategy = cfg_.strategy;
    meta.seed = cfg_.seed;
    write_checkpoint_meta(path, meta);
  }

  TrainConfig cfg_;
  Manifest manifest_;
  Model<float> model_;
  std::vector<Scene> scenes_;
  std::vector<Sample> pool_;
  std::variant<std::monostate, Sgd<float>, Adam<float>> opt_;
};

}  // namespace

TrainOutcome train(const TrainConfig& cfg, std::ostream* metrics) {
  Trainer tr(cfg);
  return tr.run(metrics);
}

TrainOutcome train_fine(const TrainConfig& cfg, std::ostream* metrics) {
  if (cfg.strategy != "fine")
    throw ConfigError("train_fine called with strategy " + cfg.strategy);
  return train(cfg, metrics);
}

TrainOutcome train_coarse(const TrainConfig& cfg, std::ostream* metrics) {
  if (cfg.strategy != "coarse")
    throw ConfigError("train_coarse called with strategy " + cfg.strategy);
  return train(cfg, metrics);
}

}  // namespace terracer
