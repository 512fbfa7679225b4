#pragma once

// Command implementations shared by the command-line tool and the tests.
// Each command returns its JSON report; human-readable text goes to `out`.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cnnzoo/audit.hpp"
#include "cnnzoo/dataset.hpp"
#include "cnnzoo/errors.hpp"
#include "cnnzoo/gradcheck.hpp"
#include "cnnzoo/manifest.hpp"
#include "cnnzoo/metrics.hpp"
#include "cnnzoo/optim.hpp"
#include "cnnzoo/pnm.hpp"
#include "cnnzoo/tensor_file.hpp"
#include "cnnzoo/train.hpp"
#include "cnnzoo/zoo.hpp"

namespace cnnzoo::app {

using Json = nlohmann::ordered_json;

struct RunConfig {
  std::optional<std::string> model;
  std::optional<std::string> backbone;  // transfer_head only
  std::optional<std::size_t> classes;
  std::size_t feature_dim = 1280;
  std::optional<std::size_t> input;
  std::optional<double> width;
  std::string optimizer = "adam";
  std::optional<double> lr;
  std::size_t epochs = 1;
  std::optional<std::size_t> batch;
  std::uint64_t seed = 0;
  std::vector<std::string> freeze;
  std::string synthetic;
  std::string manifest;
  bool resize = false;
  std::string checkpoint_in;
  std::string checkpoint_out;
  std::string report;
  // gradcheck
  double eps = 1e-4;
  double threshold = 1e-5;
  std::string corrupt;
  // gendata
  std::string out_dir;
  std::string split = "train";
};

// ---------------------------------------------------------------------------
// Synthetic data specs: "key=value,key=value".

struct SyntheticSpec {
  bool detection = false;
  std::optional<std::size_t> classes;
  std::size_t per_class = 100;
  std::size_t eval_per_class = 50;
  std::size_t samples = 200;
  std::size_t eval_samples = 100;
  double background = 0.3;
  std::optional<std::size_t> resolution;
};

inline SyntheticSpec parse_synthetic(std::string_view text, bool detection_default) {
  SyntheticSpec s;
  s.detection = detection_default;
  if (detail::trim(text).empty()) return s;
  for (auto item : detail::split(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("synthetic spec: expected key=value, got '" + std::string(item) + "'");
    const std::string key(detail::trim(item.substr(0, eq)));
    const std::string_view val = detail::trim(item.substr(eq + 1));
    auto as_size = [&]() {
      std::size_t v = 0;
      const auto r = std::from_chars(val.data(), val.data() + val.size(), v);
      if (r.ec != std::errc{} || r.ptr != val.data() + val.size()) {
        throw ConfigError("synthetic spec: '" + key + "' needs a non-negative integer");
      }
      return v;
    };
    if (key == "kind") {
      if (val == "classification") s.detection = false;
      else if (val == "detection") s.detection = true;
      else throw ConfigError("synthetic spec: kind must be classification or detection");
    } else if (key == "classes") s.classes = as_size();
    else if (key == "per_class") s.per_class = as_size();
    else if (key == "eval_per_class") s.eval_per_class = as_size();
    else if (key == "samples") s.samples = as_size();
    else if (key == "eval_samples") s.eval_samples = as_size();
    else if (key == "resolution") s.resolution = as_size();
    else if (key == "background") {
      const auto r = std::from_chars(val.data(), val.data() + val.size(), s.background);
      if (r.ec != std::errc{} || r.ptr != val.data() + val.size()) throw ConfigError("synthetic spec: bad background fraction");
    } else {
      throw ConfigError("synthetic spec: unknown key '" + key + "'");
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Configuration resolution.

struct Resolved {
  ModelConfig model;
  std::optional<ModelKind> backbone;
  std::optional<SyntheticSpec> synthetic;
  Objective objective = Objective::classification;
};

inline ModelKind require_model(const std::string& name) {
  const auto k = parse_model(name);
  if (!k) {
    std::string list;
    for (auto n : kModelNames) list += (list.empty() ? "" : ", ") + std::string(n);
    throw ConfigError("unknown model '" + name + "' (expected one of: " + list + ")");
  }
  return *k;
}

inline Resolved resolve(const RunConfig& rc, const std::string& default_model = "evolved_baseline") {
  Resolved r;
  ModelConfig& mc = r.model;
  mc.kind = require_model(rc.model.value_or(default_model));
  if (rc.backbone) {
    if (mc.kind != ModelKind::transfer_head) throw ConfigError("--backbone applies to transfer_head only");
    r.backbone = require_model(*rc.backbone);
  }
  if (!rc.synthetic.empty()) r.synthetic = parse_synthetic(rc.synthetic, mc.kind == ModelKind::mini_yolo);

  std::size_t classes = rc.classes.value_or(2);
  if (r.synthetic && r.synthetic->classes) {
    if (rc.classes && *rc.classes != *r.synthetic->classes) {
      throw ConfigError("--classes " + std::to_string(*rc.classes) + " disagrees with synthetic classes=" +
                        std::to_string(*r.synthetic->classes));
    }
    classes = *r.synthetic->classes;
  }
  mc.classes = classes;
  mc.width = rc.width.value_or(1.0);
  mc.feature_dim = rc.feature_dim;

  std::size_t res = rc.input.value_or(r.synthetic ? r.synthetic->resolution.value_or(32) : 224);
  if (r.synthetic && r.synthetic->resolution && *r.synthetic->resolution != res) {
    throw ConfigError("--input " + std::to_string(res) + " disagrees with synthetic resolution=" +
                      std::to_string(*r.synthetic->resolution));
  }
  mc.input = InputSpec{3, res, res};
  mc.check();
  r.objective = mc.kind == ModelKind::mini_yolo ? Objective::detection : Objective::classification;
  return r;
}

template <typename T = float>
Graph<T> build(const Resolved& r) {
  if (r.model.kind == ModelKind::transfer_head) return build_transfer_head<T>(r.model, r.backbone);
  return build_model<T>(r.model);
}

/// Built, initialised, optionally restored from a checkpoint, then frozen.
inline Graph<float> prepare_graph(const RunConfig& rc, const Resolved& r) {
  Graph<float> g = build<float>(r);
  init_params(g, rc.seed);
  if (!rc.checkpoint_in.empty()) load_checkpoint(rc.checkpoint_in, g.params);
  for (const auto& p : rc.freeze) set_trainable(g.params, p, false);
  return g;
}

// ---------------------------------------------------------------------------
// Data sources.

struct LabeledData {
  Dataset data;
  std::vector<std::string> class_names;
};

inline std::vector<std::string> synthetic_class_names(bool detection, std::size_t classes) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < classes; ++k)
    names.push_back(detection ? (k == 0 ? std::string("background") : "object" + std::to_string(k))
                              : "class" + std::to_string(k));
  return names;
}

inline LabeledData synthetic_data(const SyntheticSpec& s, std::size_t classes, std::size_t resolution,
                                  std::uint64_t seed, Split split) {
  LabeledData out;
  const bool train = split == Split::train;
  if (s.detection) {
    out.data = gen_synthetic_detection(train ? s.samples : s.eval_samples, s.background, resolution, seed, classes, split);
  } else {
    out.data = gen_synthetic_classification(classes, train ? s.per_class : s.eval_per_class, resolution, seed, split);
  }
  out.class_names = synthetic_class_names(s.detection, classes);
  return out;
}

/// Images are resolved relative to the manifest's directory. Grey images are
/// replicated to three channels; sizes must match the model unless `resize`.
inline LabeledData manifest_data(const std::string& path, const InputSpec& input, bool resize) {
  const Manifest m = read_manifest(path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  LabeledData out;
  out.class_names = m.classes;
  Dataset& ds = out.data;
  ds.classes = m.classes.size();
  ds.channels = input.channels;
  ds.height = input.height;
  ds.width = input.width;
  std::vector<float> img(ds.image_size());
  for (const auto& rec : m.records) {
    const std::filesystem::path p = std::filesystem::path(rec.path).is_absolute() ? std::filesystem::path(rec.path) : base / rec.path;
    Tensor<float> t = read_image_pnm(p.string());
    const Shape s = t.shape();
    if (s.h != input.height || s.w != input.width) {
      if (!resize) {
        throw DataError("image '" + rec.path + "' is " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                        ", model expects " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                        " (pass --resize to rescale)");
      }
      t = resize_nearest(t, input.height, input.width);
    }
    const std::size_t plane = input.height * input.width;
    for (std::size_t c = 0; c < input.channels; ++c) {
      const std::size_t src = t.shape().c == 1 ? 0 : c;
      if (src >= t.shape().c) throw DataError("image '" + rec.path + "' has too few channels");
      std::copy_n(t.data() + src * plane, plane, img.data() + c * plane);
    }
    ds.push(img, DetectionTarget{rec.label, rec.box});
  }
  return out;
}

inline LabeledData load_data(const RunConfig& rc, const Resolved& r, Split split) {
  if (r.synthetic) return synthetic_data(*r.synthetic, r.model.classes, r.model.input.height, rc.seed, split);
  if (!rc.manifest.empty()) {
    LabeledData d = manifest_data(rc.manifest, r.model.input, rc.resize);
    if (d.data.classes != r.model.classes) {
      throw DataError("manifest declares " + std::to_string(d.data.classes) + " classes, model has " +
                      std::to_string(r.model.classes));
    }
    return d;
  }
  throw ConfigError("no data source: pass --synthetic <spec> or --manifest <path>");
}

// ---------------------------------------------------------------------------
// Reports.

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

inline Json shape_json(const Shape& s) { return Json::array({s.n, s.c, s.h, s.w}); }

inline Json audit_json(const AuditReport& a) {
  Json layers = Json::array();
  for (const auto& row : a.rows) {
    layers.push_back(Json{{"layer", row.layer},
                          {"kind", row.kind},
                          {"out_shape", shape_json(row.out_shape)},
                          {"params_trainable", row.params_trainable},
                          {"params_frozen", row.params_frozen},
                          {"buffers", row.buffers}});
  }
  return Json{{"model", a.model},
              {"layers", layers},
              {"params_trainable", a.params_trainable},
              {"params_frozen", a.params_frozen},
              {"buffers", a.buffers},
              {"mib_trainable", a.mib_trainable()},
              {"mib_frozen", a.mib_frozen()}};
}

inline Json classification_json(const ClassificationReport& r, const std::vector<std::string>& names) {
  Json per = Json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    per.push_back(Json{{"class", c < names.size() ? names[c] : std::to_string(c)},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"support", m.support}});
  }
  return Json{{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}, {"per_class", per}};
}

inline Json confusion_json(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  Json rows = Json::array();
  for (std::size_t t = 0; t < cm.classes; ++t) {
    Json row = Json::array();
    for (std::size_t p = 0; p < cm.classes; ++p) row.push_back(cm.at(t, p));
    rows.push_back(row);
  }
  return Json{{"labels", names}, {"matrix", rows}, {"total", cm.total()}};
}

// ---------------------------------------------------------------------------
// Commands.

inline void print_audit_table(std::ostream& out, const AuditReport& a) {
  out << std::left << std::setw(34) << "layer" << std::setw(20) << "kind" << std::setw(20) << "out_shape"
      << std::right << std::setw(12) << "trainable" << std::setw(10) << "frozen" << std::setw(10) << "buffers"
      << '\n';
  for (const auto& row : a.rows) {
    out << std::left << std::setw(34) << row.layer << std::setw(20) << row.kind << std::setw(20)
        << row.out_shape.str() << std::right << std::setw(12) << row.params_trainable << std::setw(10)
        << row.params_frozen << std::setw(10) << row.buffers << '\n';
  }
  out << std::fixed << std::setprecision(2) << "total trainable " << a.params_trainable << " (" << a.mib_trainable()
      << " MiB), frozen " << a.params_frozen << " + buffers " << a.buffers << " (" << a.mib_frozen() << " MiB)\n";
  out.unsetf(std::ios::floatfield);
}

inline Json cmd_audit(const RunConfig& rc, std::ostream& out) {
  const Resolved r = resolve(rc);
  Graph<float> g = build<float>(r);
  for (const auto& p : rc.freeze) set_trainable(g.params, p, false);
  const AuditReport a = audit(g);
  if (!rc.report.empty()) print_audit_table(out, a);
  return audit_json(a);
}

struct GradcheckCase {
  std::string label;
  GradCheckResult result;
  double seconds = 0.0;
  bool pass = false;
};

enum class BoxBatch { boxes, background };

/// One model at gradient-check scale: double precision, perturbed affine
/// parameters, Gaussian input, alternating labels (or detection targets).
inline GradcheckCase gradcheck_model(ModelKind kind, const RunConfig& rc, BoxBatch boxes = BoxBatch::boxes) {
  RunConfig local = rc;
  local.model = std::string(to_string(kind));
  local.synthetic.clear();
  if (!local.width) local.width = 1.0 / 16.0;
  if (!local.input) local.input = 16;
  Resolved r = resolve(local);
  if (kind == ModelKind::transfer_head && !r.backbone) r.model.input = InputSpec{r.model.feature_dim, 4, 4};
  const std::size_t n = rc.batch.value_or(2);
  const std::size_t C = r.model.classes;

  Graph<float> gf = build<float>(r);
  init_params(gf, rc.seed);
  for (const auto& p : rc.freeze) set_trainable(gf.params, p, false);
  Graph<double> g = gf.cast<double>();
  perturb_affine(g, rc.seed);
  g.corrupt_gradient_of = rc.corrupt;

  Rng rng(rc.seed, 0x6C0);
  Tensor<double> x(g.input.batch(n));
  for (auto& v : x.values()) v = rng.normal();
  std::vector<DetectionTarget> targets;
  for (std::size_t i = 0; i < n; ++i) {
    if (r.objective == Objective::detection) {
      if (boxes == BoxBatch::background) {
        targets.push_back({0, std::nullopt});
      } else {
        const double x1 = rng.uniform(0.0, 0.5), y1 = rng.uniform(0.0, 0.5);
        targets.push_back({static_cast<int>(1 + i % (C - 1)),
                           BBox{x1, y1, x1 + rng.uniform(0.2, 0.5), y1 + rng.uniform(0.2, 0.5)}});
      }
    } else {
      targets.push_back({static_cast<int>(i % C), std::nullopt});
    }
  }
  const LossFn loss = [&](const Tensor<double>& z) { return objective_loss<double>(r.objective, z, targets, C); };

  GradcheckCase out;
  out.label = std::string(to_string(kind));
  if (r.objective == Objective::detection) out.label += boxes == BoxBatch::boxes ? "[boxes]" : "[background]";
  const auto t0 = std::chrono::steady_clock::now();
  out.result = gradcheck(g, loss, x, rc.eps);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.pass = out.result.max_rel_error < rc.threshold;
  return out;
}

inline Json gradcheck_case_json(const GradcheckCase& c) {
  return Json{{"model", c.label},
              {"max_rel_error", c.result.max_rel_error},
              {"worst_param", c.result.worst_param},
              {"worst_index", c.result.worst_index},
              {"analytic", c.result.worst_analytic},
              {"numeric", c.result.worst_numeric},
              {"checked", c.result.checked},
              {"seconds", c.seconds},
              {"pass", c.pass}};
}

/// The six architectures, or one model when --model is given. Returns the
/// report; `pass` is false when any model exceeds the threshold.
inline Json cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  std::vector<ModelKind> kinds;
  if (!rc.model || *rc.model == "all") {
    kinds = {ModelKind::custom_cnn,        ModelKind::variant_a, ModelKind::variant_b, ModelKind::evolved_baseline,
             ModelKind::enhanced_baseline, ModelKind::mini_yolo};
  } else {
    kinds = {require_model(*rc.model)};
  }
  Json cases = Json::array();
  bool all_pass = true;
  for (ModelKind k : kinds) {
    std::vector<BoxBatch> batches{BoxBatch::boxes};
    if (k == ModelKind::mini_yolo) batches.push_back(BoxBatch::background);
    for (BoxBatch b : batches) {
      const GradcheckCase c = gradcheck_model(k, rc, b);
      all_pass = all_pass && c.pass;
      out << std::left << std::setw(28) << c.label << " max_rel_error " << std::scientific << std::setprecision(3)
          << c.result.max_rel_error << std::defaultfloat << "  (" << c.result.checked << " scalars, "
          << std::fixed << std::setprecision(1) << c.seconds << std::defaultfloat << " s)"
          << (c.pass ? "" : "  FAIL at " + c.result.worst_param + "[" + std::to_string(c.result.worst_index) + "]")
          << '\n';
      cases.push_back(gradcheck_case_json(c));
    }
  }
  return Json{{"eps", rc.eps}, {"threshold", rc.threshold}, {"models", cases}, {"pass", all_pass}};
}

inline OptimState make_optimizer(const RunConfig& rc) {
  if (rc.optimizer == "adam") return OptimState::adam(rc.lr.value_or(1e-3));
  if (rc.optimizer == "sgd") return OptimState::sgd(rc.lr.value_or(1e-2));
  throw ConfigError("unknown optimizer '" + rc.optimizer + "' (expected adam or sgd)");
}

inline Json cmd_train(const RunConfig& rc, std::ostream& out) {
  const Resolved r = resolve(rc);
  if (rc.lr && *rc.lr < 0.0) throw ConfigError("learning rate must be non-negative");
  OptimState optim = make_optimizer(rc);
  const LabeledData train = load_data(rc, r, Split::train);
  Graph<float> g = prepare_graph(rc, r);

  TrainOptions opt;
  opt.batch = rc.batch.value_or(16);
  opt.seed = rc.seed;
  opt.objective = r.objective;
  Json epochs = Json::array();
  for (std::size_t e = 1; e <= rc.epochs; ++e) {
    const EpochStats st = train_epoch(g, train.data, optim, opt, e);
    out << "epoch " << e << '/' << rc.epochs << "  loss " << std::fixed << std::setprecision(4) << st.mean_loss
        << "  " << std::setprecision(2) << st.wall_seconds << " s  " << std::setprecision(1) << st.samples_per_sec
        << " samples/s\n"
        << std::defaultfloat;
    epochs.push_back(Json{{"epoch", st.epoch},
                          {"mean_loss", st.mean_loss},
                          {"wall_seconds", st.wall_seconds},
                          {"samples_per_sec", st.samples_per_sec}});
  }
  if (!rc.checkpoint_out.empty()) save_checkpoint(rc.checkpoint_out, g.params);
  return Json{{"model", std::string(to_string(r.model.kind))},
              {"optimizer", rc.optimizer},
              {"lr", optim.learning_rate},
              {"batch", opt.batch},
              {"seed", rc.seed},
              {"samples", train.data.size()},
              {"params_trainable", g.params.trainable_count()},
              {"epochs", epochs}};
}

inline Json cmd_eval(const RunConfig& rc, std::ostream& out) {
  if (rc.checkpoint_in.empty()) throw ConfigError("eval needs --checkpoint-in");
  const Resolved r = resolve(rc);
  const LabeledData data = load_data(rc, r, Split::eval);
  Graph<float> g = prepare_graph(rc, r);
  const EvalOutput pred = predict(g, data.data, r.objective);

  Json report{{"model", std::string(to_string(r.model.kind))}, {"samples", data.data.size()}, {"mean_loss", pred.mean_loss}};
  const std::vector<int> truth = data.data.labels();
  if (r.objective == Objective::detection) {
    std::vector<DetectionPrediction> dp;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) dp.push_back({pred.labels[i], pred.boxes[i]});
    const DetectionReport d =
        detection_report<DetectionTarget>(dp, data.data.targets, r.model.classes);
    report["classification"] = classification_json(d.classification, data.class_names);
    report["confusion_matrix"] = confusion_json(d.confusion, data.class_names);
    Json det{{"boxes_evaluated", d.boxes_evaluated}, {"iou_at_least_half", d.iou_at_least_half}};
    if (d.mean_iou) det["mean_iou"] = *d.mean_iou;
    report["detection"] = det;
    out << "accuracy " << d.classification.accuracy;
    if (d.mean_iou) out << "  mean IoU " << *d.mean_iou << " over " << d.boxes_evaluated << " boxes";
    out << '\n';
  } else {
    const ConfusionMatrix cm = confusion_matrix(truth, pred.labels, r.model.classes);
    const ClassificationReport cr = classification_report(cm);
    report["classification"] = classification_json(cr, data.class_names);
    report["confusion_matrix"] = confusion_json(cm, data.class_names);
    out << "accuracy " << cr.accuracy << "  precision " << cr.precision << "  recall " << cr.recall << "  f1 "
        << cr.f1 << '\n';
  }
  return report;
}

/// Writes PNM images plus `manifest.txt` into the output directory and
/// returns the manifest path.
inline std::string cmd_gendata(const RunConfig& rc, std::ostream& out) {
  if (rc.out_dir.empty()) throw ConfigError("gendata needs --out <dir>");
  if (rc.split != "train" && rc.split != "eval") throw ConfigError("--split must be train or eval");
  const Split split = rc.split == "train" ? Split::train : Split::eval;
  const bool detection_default = rc.model && *rc.model == "mini_yolo";
  const SyntheticSpec s = parse_synthetic(rc.synthetic, detection_default);
  const std::size_t classes = s.classes.value_or(rc.classes.value_or(2));
  const std::size_t res = s.resolution.value_or(rc.input.value_or(32));
  const LabeledData d = synthetic_data(s, classes, res, rc.seed, split);

  std::error_code ec;
  std::filesystem::create_directories(rc.out_dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + rc.out_dir + "': " + ec.message());
  Manifest m;
  m.classes = d.class_names;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    std::ostringstream name;
    name << rc.split << '_' << std::setw(5) << std::setfill('0') << i << ".ppm";
    const auto img = d.data.image(i);
    write_image_pnm((std::filesystem::path(rc.out_dir) / name.str()).string(),
                    Tensor<float>(d.data.image_shape(), std::vector<float>(img.begin(), img.end())));
    m.records.push_back({name.str(), d.data.targets[i].label, d.data.targets[i].box});
  }
  const std::string path = (std::filesystem::path(rc.out_dir) / "manifest.txt").string();
  write_manifest(path, m);
  out << path << '\n';
  return path;
}

}  // namespace cnnzoo::app
