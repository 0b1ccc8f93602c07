#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sensoryeval/dataset.hpp"
#include "sensoryeval/detector.hpp"
#include "sensoryeval/image_io.hpp"
#include "sensoryeval/interchange.hpp"
#include "sensoryeval/losses.hpp"
#include "sensoryeval/model.hpp"
#include "sensoryeval/pipeline.hpp"
#include "sensoryeval/preprocess.hpp"
#include "sensoryeval/report.hpp"
#include "sensoryeval/service.hpp"

namespace fs = std::filesystem;
using namespace sensoryeval;

namespace {

report::Format format_of(const std::string& s) {
  auto f = report::parse_format(s);
  if (!f) throw ValidationError("format must be text or csv");
  return *f;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& tok : preprocess::split(s, ',')) {
    std::size_t used = 0;
    out.push_back(std::stod(tok, &used));
    if (used != tok.size()) throw ValidationError("not a number: " + tok);
  }
  return out;
}

/// Rewrites record paths so they stay valid relative to a new directory.
std::vector<dataset::AnnotationRecord> rebase(std::vector<dataset::AnnotationRecord> recs, const fs::path& from,
                                              const fs::path& to) {
  const fs::path abs_from = fs::absolute(from);
  const fs::path abs_to = fs::absolute(to);
  if (fs::weakly_canonical(abs_from) == fs::weakly_canonical(abs_to)) return recs;
  for (auto& r : recs) {
    const fs::path p(r.image_path);
    if (p.is_absolute()) continue;
    r.image_path = fs::relative(abs_from / p, abs_to).generic_string();
  }
  return recs;
}

struct DetectorArgs {
  std::string backend = "stub";
  std::string detections;
  std::string weights;
  std::string cfg;
  std::string names;
  double confidence = 0.25;
  double nms = 0.45;
  std::string nms_variant = "standard";
  int input_size = 416;

  void add_to(CLI::App* app) {
    app->add_option("--backend", backend, "stub or pretrained")->check(CLI::IsMember({"stub", "pretrained"}));
    app->add_option("--detections", detections, "stub sidecar (detections interchange file)");
    app->add_option("--weights", weights, "darknet weights");
    app->add_option("--cfg", cfg, "darknet network cfg");
    app->add_option("--names", names, "comma-separated category names");
    app->add_option("--conf", confidence, "confidence threshold");
    app->add_option("--nms", nms, "NMS IoU threshold");
    app->add_option("--nms-variant", nms_variant)->check(CLI::IsMember({"standard", "diou"}));
    app->add_option("--detector-input", input_size, "network input side (pretrained)");
  }

  detector::DetectorConfig config() const {
    detector::DetectorConfig c;
    c.backend = *detector::parse_backend(backend);
    c.sidecar_path = detections;
    c.weights_path = weights;
    c.cfg_path = cfg;
    if (!names.empty()) c.category_names = preprocess::split(names, ',');
    c.confidence_threshold = confidence;
    c.nms_iou_threshold = nms;
    c.nms_variant = *detector::parse_nms_variant(nms_variant);
    c.input_size = input_size;
    return c;
  }
};

service::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service != nullptr) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fruit detection, acceptability regression and sensory-evaluation toolkit"};
  app.require_subcommand(1);

  // annotate-export
  auto* exp = app.add_subcommand("annotate-export", "Validate the annotation store and export it as CSV");
  std::string exp_data = service::config_from_env().data_dir.string();
  std::string exp_out;
  std::string exp_annotator;
  exp->add_option("--data-dir", exp_data, "annotation store root");
  exp->add_option("--out", exp_out, "output CSV (stdout if omitted)");
  exp->add_option("--annotator", exp_annotator, "keep only this annotator's records");

  // split
  auto* spl = app.add_subcommand("split", "Shuffle and split annotations into train/val files");
  std::string spl_in;
  std::string spl_out;
  double spl_ratio = 0.8;
  std::uint64_t spl_seed = 0;
  spl->add_option("annotations", spl_in, "annotations CSV")->required()->check(CLI::ExistingFile);
  spl->add_option("--out-dir", spl_out, "directory for train.csv and val.csv");
  spl->add_option("--ratio", spl_ratio, "training fraction");
  spl->add_option("--seed", spl_seed);

  // synth
  auto* syn = app.add_subcommand("synth", "Render oracle-labeled synthetic fruit images");
  std::string syn_out;
  dataset::SynthSpec syn_spec;
  syn_spec.count = 100;
  syn->add_option("--out", syn_out, "output directory")->required();
  syn->add_option("--count", syn_spec.count)->check(CLI::PositiveNumber);
  syn->add_option("--seed", syn_spec.seed);
  syn->add_option("--size", syn_spec.image_size, "image side in pixels")->check(CLI::Range(32, 4096));

  // init-backbone
  auto* ini = app.add_subcommand("init-backbone", "Write seeded backbone weights to a file");
  std::string ini_backbone = "vgg16";
  std::string ini_out;
  int ini_div = 1;
  std::uint64_t ini_seed = 0;
  ini->add_option("--backbone", ini_backbone)->check(CLI::IsMember({"vgg16", "resnet18", "resnet50"}));
  ini->add_option("--width-divisor", ini_div)->check(CLI::PositiveNumber);
  ini->add_option("--seed", ini_seed);
  ini->add_option("--out", ini_out)->required();

  // train
  auto* trn = app.add_subcommand("train", "Train the regressor (head phase or fine-tune phase)");
  std::string trn_phase;
  std::string trn_train;
  std::string trn_val;
  std::string trn_backbone = "vgg16";
  std::string trn_weights;
  std::string trn_ckpt;
  std::string trn_out;
  std::string trn_history;
  std::string trn_head = model::format_head(model::default_head());
  int trn_input = 224;
  int trn_div = 1;
  std::uint64_t trn_seed = 0;
  std::optional<int> trn_epochs;
  double trn_lr = 1e-4;
  int trn_batch = 32;
  int trn_patience = 10;
  std::optional<double> trn_target;
  trn->add_option("--phase", trn_phase)->required()->check(CLI::IsMember({"head", "finetune"}));
  trn->add_option("--train", trn_train, "training annotations CSV")->required()->check(CLI::ExistingFile);
  trn->add_option("--val", trn_val, "validation annotations CSV")->required()->check(CLI::ExistingFile);
  trn->add_option("--backbone", trn_backbone)->check(CLI::IsMember({"vgg16", "resnet18", "resnet50"}));
  trn->add_option("--backbone-weights", trn_weights, "weights file (head phase)");
  trn->add_option("--checkpoint", trn_ckpt, "checkpoint to fine-tune (finetune phase)");
  trn->add_option("--head", trn_head, "head layout");
  trn->add_option("--input-size", trn_input);
  trn->add_option("--width-divisor", trn_div)->check(CLI::PositiveNumber);
  trn->add_option("--seed", trn_seed);
  trn->add_option("--epochs", trn_epochs, "max epochs (phase default if omitted)");
  trn->add_option("--lr", trn_lr);
  trn->add_option("--batch", trn_batch)->check(CLI::PositiveNumber);
  trn->add_option("--patience", trn_patience)->check(CLI::PositiveNumber);
  trn->add_option("--target-mae", trn_target);
  trn->add_option("--out", trn_out, "checkpoint to write")->required();
  trn->add_option("--history", trn_history, "history JSON (default <out>.history.json)");

  // evaluate
  auto* evl = app.add_subcommand("evaluate", "Evaluate a checkpoint on annotated crops");
  std::string evl_ckpt;
  std::string evl_ann;
  std::string evl_format = "text";
  evl->add_option("--checkpoint", evl_ckpt)->required()->check(CLI::ExistingFile);
  evl->add_option("annotations", evl_ann)->required()->check(CLI::ExistingFile);
  evl->add_option("--format", evl_format);

  // detect-eval
  auto* dev = app.add_subcommand("detect-eval", "Score a detector against ground-truth boxes");
  DetectorArgs dev_det;
  std::string dev_gt;
  double dev_iou = 0.5;
  std::string dev_format = "text";
  dev_det.add_to(dev);
  dev->add_option("--ground-truth", dev_gt, "ground truth interchange file")->required()->check(CLI::ExistingFile);
  dev->add_option("--iou", dev_iou, "matching IoU threshold");
  dev->add_option("--format", dev_format);

  // predict
  auto* prd = app.add_subcommand("predict", "Detect fruit in an image and predict acceptability");
  DetectorArgs prd_det;
  std::string prd_image;
  std::string prd_ckpt;
  std::string prd_target = std::string(pipeline::kDefaultTarget);
  std::string prd_format = "text";
  prd_det.add_to(prd);
  prd->add_option("image", prd_image)->required()->check(CLI::ExistingFile);
  prd->add_option("--checkpoint", prd_ckpt)->required()->check(CLI::ExistingFile);
  prd->add_option("--target", prd_target, "category that receives an index");
  prd->add_option("--format", prd_format, "text, csv or json");

  // report
  auto* rep = app.add_subcommand("report", "Render metric tables");
  rep->require_subcommand(1);
  std::string rep_format = "text";
  rep->add_option("--format", rep_format);
  auto* rep_res = rep->add_subcommand("residuals", "Residual table with MAE/MSE/RMSE");
  std::string rep_y;
  std::string rep_yhat;
  rep_res->add_option("--y", rep_y, "comma-separated targets")->required();
  rep_res->add_option("--y-hat", rep_yhat, "comma-separated predictions")->required();
  auto* rep_det = rep->add_subcommand("detector", "Detector metrics from counts");
  int rep_tp = 0;
  int rep_fp = 0;
  int rep_fn = 0;
  double rep_avg_iou = 0.0;
  double rep_map = 0.0;
  double rep_iou = 0.5;
  rep_det->add_option("--tp", rep_tp)->required();
  rep_det->add_option("--fp", rep_fp)->required();
  rep_det->add_option("--fn", rep_fn)->required();
  rep_det->add_option("--avg-iou", rep_avg_iou, "fraction in [0, 1]");
  rep_det->add_option("--map", rep_map, "fraction in [0, 1]");
  rep_det->add_option("--iou", rep_iou, "threshold shown in the mAP header");
  auto* rep_trn = rep->add_subcommand("training", "Training summary from history files");
  std::vector<std::string> rep_hist;
  rep_trn->add_option("histories", rep_hist, "NAME=history.json entries")->required();

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Apply a chain of image operations");
  std::string pre_in;
  std::string pre_out;
  std::string pre_ops;
  pre->add_option("input", pre_in)->required()->check(CLI::ExistingFile);
  pre->add_option("output", pre_out)->required();
  pre->add_option("--ops", pre_ops, "e.g. gamma:2.2,equalize,rotate:30:bicubic,mean3")->required();

  // serve
  auto* srv = app.add_subcommand("serve", "Run the HTTP API");
  service::ServiceConfig srv_cfg = service::config_from_env();
  std::string srv_data = srv_cfg.data_dir.string();
  std::string srv_weights = srv_cfg.weights_dir.string();
  std::string srv_host = "127.0.0.1";
  int srv_port = 8080;
  srv->add_option("--port", srv_port)->check(CLI::Range(0, 65535));
  srv->add_option("--host", srv_host);
  srv->add_option("--data-dir", srv_data, "annotation store root ($SENSORYEVAL_DATA_DIR)");
  srv->add_option("--weights-dir", srv_weights, "model directory ($SENSORYEVAL_WEIGHTS_DIR)");
  srv->add_option("--target", srv_cfg.target_category);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*exp) {
      service::AnnotationStore store(exp_data);
      auto recs = store.records();
      if (!exp_annotator.empty()) {
        std::erase_if(recs, [&](const auto& r) { return r.annotator != exp_annotator; });
      }
      if (exp_out.empty()) {
        dataset::write_annotations(std::cout, recs);
      } else {
        dataset::save_annotations(exp_out, rebase(recs, exp_data, fs::path(exp_out).parent_path()));
        fmt::print(stderr, "wrote {} records to {}\n", recs.size(), exp_out);
      }
    } else if (*spl) {
      std::vector<std::string> warnings;
      auto recs = dataset::load_annotations(spl_in, &warnings);
      for (const auto& w : warnings) fmt::print(stderr, "warning: {}\n", w);
      const fs::path src_dir = fs::path(spl_in).parent_path();
      const fs::path out_dir = spl_out.empty() ? src_dir : fs::path(spl_out);
      const auto s = dataset::split(rebase(std::move(recs), src_dir, out_dir), spl_ratio, spl_seed);
      dataset::save_annotations(out_dir / "train.csv", s.train);
      dataset::save_annotations(out_dir / "val.csv", s.val);
      fmt::print("train {} / val {} -> {}\n", s.train.size(), s.val.size(), out_dir.string());
    } else if (*syn) {
      const fs::path out(syn_out);
      std::vector<dataset::AnnotationRecord> recs;
      std::vector<interchange::DetectionRecord> gts;
      for (auto& s : dataset::synth_generate(syn_spec)) {
        const std::string name = s.record.image_path;
        io::write_image(out / "images" / name, s.image);
        io::write_image(out / "crops" / name, boxgeom::crop(s.image, s.box));
        s.record.image_path = "crops/" + name;
        recs.push_back(s.record);
        gts.push_back({"images/" + name,
                       {boxgeom::to_normalized(s.box, s.image.width(), s.image.height()),
                        std::string(pipeline::kDefaultTarget), 1.0}});
      }
      dataset::save_annotations(out / "annotations.csv", recs);
      interchange::write_file(out / "ground_truth.jsonl", gts);
      fmt::print("wrote {} synthetic images to {}\n", recs.size(), out.string());
    } else if (*ini) {
      model::save_backbone_weights(ini_out, *nn::parse_backbone(ini_backbone), ini_div, ini_seed);
      fmt::print("wrote {} weights to {}\n", ini_backbone, ini_out);
    } else if (*trn) {
      const auto train = dataset::load_annotations(trn_train);
      const auto val = dataset::load_annotations(trn_val);
      const fs::path base = fs::path(trn_train).parent_path();
      if (fs::weakly_canonical(fs::absolute(base)) !=
          fs::weakly_canonical(fs::absolute(fs::path(trn_val).parent_path()))) {
        throw ValidationError("train and val files must live in the same directory");
      }
      const auto source = model::directory_source(base);
      dataset::DatasetSplit split{train, val, trn_seed, 0.0};
      const bool finetune = trn_phase == "finetune";
      std::optional<model::Regressor> m;
      if (finetune) {
        if (trn_ckpt.empty()) throw ValidationError("--checkpoint is required for the finetune phase");
        m.emplace(model::Regressor::load(trn_ckpt));
        m->set_trainable(model::Scope::kAll);
      } else {
        model::RegressorSpec spec;
        spec.backbone = *nn::parse_backbone(trn_backbone);
        spec.head = model::parse_head(trn_head);
        spec.input_size = trn_input;
        spec.width_divisor = trn_div;
        spec.seed = trn_seed;
        spec.backbone_weights = trn_weights;
        m.emplace(model::Regressor::build(spec));
      }
      const auto phase = finetune ? model::Phase::kFineTune : model::Phase::kFeatureExtractor;
      auto cfg = model::TrainConfig::defaults(phase, m->spec().backbone);
      if (trn_epochs) cfg.max_epochs = *trn_epochs;
      cfg.learning_rate = trn_lr;
      cfg.batch_size = trn_batch;
      cfg.patience = trn_patience;
      cfg.target_mae = trn_target;
      cfg.seed = trn_seed;
      const auto history = model::train_phase(*m, split, cfg, source);
      m->save(trn_out);
      const std::string hist_path = trn_history.empty() ? trn_out + ".history.json" : trn_history;
      std::ofstream(hist_path) << model::to_json(history).dump(2) << '\n';
      std::cout << report::render(history, report::Format::kText) << '\n';
      const std::string network = fmt::format("{} ({})", nn::backbone_name(m->spec().backbone), trn_phase);
      std::cout << report::render(std::vector{report::training_row(network, history)}, report::Format::kText);
      fmt::print("stop: {}, best epoch {}\n", model::stop_reason_name(history.stop_reason), history.best_epoch);
    } else if (*evl) {
      const auto m = model::Regressor::load(evl_ckpt);
      const auto recs = dataset::load_annotations(evl_ann);
      const auto r = model::evaluate(m, recs, model::directory_source(fs::path(evl_ann).parent_path()));
      std::cout << report::render(r, format_of(evl_format));
    } else if (*dev) {
      const detector::Detector det(dev_det.config());
      const fs::path base = fs::path(dev_gt).parent_path();
      std::map<std::string, std::vector<detmetrics::GroundTruth>> by_image;
      for (const auto& rec : interchange::read_file(dev_gt)) {
        by_image[rec.image].push_back({rec.detection.box, rec.detection.category});
      }
      std::vector<detector::LabeledImage> set;
      for (auto& [key, gts] : by_image) {
        const fs::path p = base / key;
        Image8 img;
        if (fs::exists(p)) {
          img = io::read_image(p);
        } else if (det.config().backend == detector::Backend::kStub) {
          img = Image8(1, 1, 3);
        } else {
          throw IoError("image not found: " + p.string());
        }
        set.push_back({key, std::move(img), std::move(gts)});
      }
      std::cout << report::render(detector::evaluate_detector(det, set, dev_iou), format_of(dev_format));
    } else if (*prd) {
      const detector::Detector det(prd_det.config());
      const auto m = model::Regressor::load(prd_ckpt);
      const auto r = pipeline::run_pipeline(io::read_image(prd_image), prd_image, det, m, prd_target);
      if (prd_format == "json") {
        std::cout << pipeline::to_json(r).dump(2) << '\n';
      } else {
        std::cout << report::render(r, format_of(prd_format));
      }
    } else if (*rep) {
      const auto f = format_of(rep_format);
      if (*rep_res) {
        const auto y = parse_list(rep_y);
        const auto yh = parse_list(rep_yhat);
        std::cout << report::render(losses::regression_errors(y, yh), f);
      } else if (*rep_det) {
        std::cout << report::render(
            detector::DetectorReport::from_counts(rep_tp, rep_fp, rep_fn, rep_avg_iou, rep_map, rep_iou), f);
      } else {
        std::vector<report::TrainingRow> rows;
        for (const auto& entry : rep_hist) {
          const auto eq = entry.find('=');
          if (eq == std::string::npos) throw ValidationError("expected NAME=history.json, got " + entry);
          std::ifstream in(entry.substr(eq + 1));
          if (!in) throw IoError("cannot open " + entry.substr(eq + 1));
          rows.push_back(report::training_row(entry.substr(0, eq),
                                              model::history_from_json(nlohmann::json::parse(in))));
        }
        std::cout << report::render(rows, f);
      }
    } else if (*pre) {
      io::write_image(pre_out, preprocess::run(io::read_image(pre_in), pre_ops));
    } else if (*srv) {
      srv_cfg.data_dir = srv_data;
      srv_cfg.weights_dir = srv_weights;
      auto models = service::load_models(srv_cfg.weights_dir);
      for (const auto& w : models.warnings) fmt::print(stderr, "warning: {}\n", w);
      service::Service svc(srv_cfg, std::move(models));
      g_service = &svc;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      fmt::print(stderr, "listening on http://{}:{}\n", srv_host, srv_port);
      if (!svc.listen(srv_host, srv_port)) throw IoError(fmt::format("cannot listen on {}:{}", srv_host, srv_port));
    }
  } catch (const ValidationError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
