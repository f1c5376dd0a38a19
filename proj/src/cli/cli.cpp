#include "hypercut/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "hypercut/cli/png.hpp"
#include "hypercut/deblur/deblur.hpp"
#include "hypercut/diffcore/checkpoint.hpp"
#include "hypercut/diffcore/kernels.hpp"
#include "hypercut/metrics/metrics.hpp"
#include "hypercut/order/hypercut.hpp"
#include "hypercut/pipeline/pipeline.hpp"
#include "hypercut/scenes/dataset.hpp"

namespace hypercut::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json RunConfig::to_json() const {
  return json{{"subcommand", subcommand},
              {"data", data},
              {"seed", seed},
              {"epochs", epochs},
              {"batch", batch},
              {"lr", lr},
              {"alpha", alpha},
              {"dim", dim},
              {"frames", frames},
              {"size", size},
              {"channels", channels},
              {"count", count},
              {"regime", regime},
              {"static", static_scenes},
              {"border_only", border_only},
              {"encoder", encoder},
              {"model", model},
              {"stream", stream},
              {"blurry", blurry},
              {"variant", variant},
              {"alphas", alphas},
              {"dims", dims}};
}

namespace {

constexpr const char* kEncoderFile = "encoder.ckpt";
constexpr const char* kHyperplaneFile = "hyperplane.bin";
constexpr const char* kModelFile = "model.ckpt";
constexpr int kDumpSamples = 6;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

/// Prints to stdout and appends to the run's log file.
class Log {
 public:
  explicit Log(const fs::path& path) : os_(path, std::ios::trunc) {
    if (!os_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  void line(const std::string& s) {
    std::cout << s << std::endl;
    os_ << s << '\n';
    os_.flush();
  }

 private:
  std::ofstream os_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw UsageError(std::string("invalid ") + what + " entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string(what) + " list is empty");
  return out;
}

// ---- data ------------------------------------------------------------------

scenes::DatasetConfig dataset_config(const RunConfig& cfg) {
  scenes::DatasetConfig dc;
  dc.count = cfg.count;
  dc.seed = diff::derive_seed(cfg.seed, kDataStream);
  dc.scenes.height = cfg.size;
  dc.scenes.width = cfg.size;
  dc.scenes.channels = cfg.channels;
  dc.scenes.frames = cfg.frames;
  dc.scenes.directional = !cfg.static_scenes;
  return dc;
}

/// Reads `--data` when given, otherwise generates the dataset the same way
/// `gen-data` would for this seed.
scenes::Dataset load_data(const RunConfig& cfg) {
  if (!cfg.data.empty()) return scenes::read_dataset(cfg.data);
  return scenes::generate_dataset(dataset_config(cfg));
}

order::SequenceList test_sequences(const scenes::Dataset& ds) {
  order::SequenceList test = order::sequences(ds, scenes::Split::kTest);
  return test.empty() ? order::sequences(ds) : test;
}

std::vector<const scenes::Sample*> test_samples(const scenes::Dataset& ds) {
  auto test = ds.subset(scenes::Split::kTest);
  if (!test.empty()) return test;
  std::vector<const scenes::Sample*> all;
  for (const auto& s : ds.samples) all.push_back(&s);
  return all;
}

// ---- models ----------------------------------------------------------------

int dim0(const diff::ParameterSet& p, const char* name, int axis) {
  const diff::Parameter* q = p.find(name);
  if (!q) throw std::runtime_error(std::string("checkpoint has no parameter '") + name + "'");
  return q->value.dim(axis);
}

struct LoadedEncoder {
  order::OrderEncoder encoder;
  order::Hyperplane h;
};

LoadedEncoder load_encoder(const fs::path& dir, const scenes::Dataset& ds) {
  LoadedEncoder out;
  out.encoder.params = diff::load_checkpoint(dir / kEncoderFile);
  out.h = order::load_hyperplane(dir / kHyperplaneFile);
  order::EncoderArch& a = out.encoder.arch;
  const diff::ParameterSet& p = out.encoder.params;
  a.channels = dim0(p, "enc.conv1.w", 1) / 2;
  a.widths = {dim0(p, "enc.conv1.w", 0), dim0(p, "enc.conv2.w", 0), dim0(p, "enc.conv3.w", 0)};
  a.dim = dim0(p, "enc.fc.w", 1);
  a.height = ds.manifest.height;
  a.width = ds.manifest.width;
  if (a.channels != ds.manifest.channels) {
    throw std::runtime_error("encoder expects " + std::to_string(a.channels) + " channels, dataset has " +
                             std::to_string(ds.manifest.channels));
  }
  return out;
}

deblur::FramePredictor load_predictor(const fs::path& path, const scenes::Dataset& ds) {
  const fs::path file = fs::is_directory(path) ? path / kModelFile : path;
  deblur::FramePredictor m;
  m.params = diff::load_checkpoint(file);
  deblur::PredictorArch& a = m.arch;
  a.channels = dim0(m.params, "dec.down1.w", 1);
  a.widths = {dim0(m.params, "dec.down1.w", 0), dim0(m.params, "dec.down2.w", 0)};
  a.frames = dim0(m.params, "dec.head.w", 0) / a.channels;
  a.height = ds.manifest.height;
  a.width = ds.manifest.width;
  if (a.channels != ds.manifest.channels) throw std::runtime_error("model and dataset differ in channel count");
  if (a.frames != 2 && a.frames != ds.manifest.frames) {
    throw std::runtime_error("model predicts " + std::to_string(a.frames) + " frames, dataset has " +
                             std::to_string(ds.manifest.frames));
  }
  return m;
}

order::OrderTrainConfig order_config(const RunConfig& cfg) {
  order::OrderTrainConfig oc;
  if (cfg.epochs >= 0) oc.epochs = cfg.epochs;
  if (cfg.batch > 0) oc.batch = cfg.batch;
  if (cfg.lr >= 0) oc.lr = cfg.lr;
  oc.seed = diff::derive_seed(cfg.seed, kEncoderStream);
  oc.arch.dim = cfg.dim;
  return oc;
}

json order_json(const order::OrderReport& r) {
  return json{{"sequences", r.sequences},         {"pairs", r.pairs}, {"hit", r.hit}, {"con2", r.con2},
              {"con3", r.con3}, {"label_unchanged_under_reversal", r.label_unchanged}};
}

/// Trains an encoder and writes it to `dir`; the training log goes to `log`.
order::OrderTrainResult train_encoder(const RunConfig& cfg, const scenes::Dataset& ds, const fs::path& dir,
                                      Log& log) {
  order::OrderTrainConfig oc = order_config(cfg);
  oc.on_epoch = [&](int epoch, double loss, double hit) {
    log.line("epoch=" + std::to_string(epoch) + fmt(" loss=%.6f", loss) + fmt(" train_hit=%.4f", hit));
  };
  order::SequenceList train = order::sequences(ds, scenes::Split::kTrain);
  if (train.empty()) train = order::sequences(ds);
  order::OrderTrainResult res = order::train_order_encoder(train, oc);
  for (const std::string& w : res.warnings) {
    std::cerr << "warning: " << w << '\n';
    log.line("warning: " + w);
  }
  fs::create_directories(dir);
  diff::save_checkpoint(dir / kEncoderFile, res.encoder.params);
  order::save_hyperplane(dir / kHyperplaneFile, res.hyperplane);
  return res;
}

LoadedEncoder encoder_for(const RunConfig& cfg, const scenes::Dataset& ds, const fs::path& out) {
  if (!cfg.encoder.empty()) return load_encoder(cfg.encoder, ds);
  Log log(out / "encoder_log.txt");
  order::OrderTrainResult res = train_encoder(cfg, ds, out / "encoder", log);
  return {std::move(res.encoder), std::move(res.hyperplane)};
}

deblur::DeblurTrainConfig deblur_config(const RunConfig& cfg) {
  deblur::DeblurTrainConfig dc;
  if (cfg.epochs >= 0) dc.epochs = cfg.epochs;
  if (cfg.batch > 0) dc.batch = cfg.batch;
  if (cfg.lr >= 0) dc.lr = cfg.lr;
  dc.seed = diff::derive_seed(cfg.seed, kDeblurStream);
  dc.regime = deblur::parse_regime(cfg.regime);
  dc.alpha = cfg.alpha;
  dc.border_only = cfg.border_only;
  return dc;
}

metrics::PairedVariant parse_variant(const std::string& v) {
  if (v == "per-frame-max") return metrics::PairedVariant::kPerFrameMax;
  if (v == "sequence-average") return metrics::PairedVariant::kSequenceAverage;
  throw UsageError("unknown --variant '" + v + "' (per-frame-max or sequence-average)");
}

/// One row per sample: blurry, predicted frames, ground-truth frames.
void dump_predictions(const fs::path& path, const std::vector<const scenes::Sample*>& samples,
                      const std::vector<scenes::FrameSequence>& preds, bool border_only) {
  std::vector<scenes::Image> rows;
  const std::size_t n = std::min<std::size_t>(kDumpSamples, samples.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<scenes::Image> row{samples[i]->blurry.image};
    row.insert(row.end(), preds[i].frames.begin(), preds[i].frames.end());
    const scenes::FrameSequence gt = deblur::target_sequence(samples[i]->sequence, border_only);
    row.insert(row.end(), gt.frames.begin(), gt.frames.end());
    rows.push_back(tile_row(row, 2));
  }
  if (!rows.empty()) write_png(path, tile_column(rows, 2));
}

/// Fraction of samples whose first predicted frame is closer (PSNR) to the
/// average of the two border frames than to x_0.
double average_collapse(const std::vector<const scenes::Sample*>& samples,
                        const std::vector<scenes::FrameSequence>& preds) {
  std::size_t closer = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& seq = samples[i]->sequence;
    scenes::Image avg(seq.frames.front().shape());
    for (std::size_t q = 0; q < avg.size(); ++q) avg[q] = 0.5f * (seq.frames.front()[q] + seq.frames.back()[q]);
    const scenes::Image& f0 = preds[i].frames.front();
    closer += metrics::psnr(f0, avg) > metrics::psnr(f0, seq.frames.front());
  }
  return samples.empty() ? 0.0 : static_cast<double>(closer) / static_cast<double>(samples.size());
}

// ---- subcommands -----------------------------------------------------------

void run_gen_data(const RunConfig& cfg) {
  const scenes::Dataset ds = scenes::generate_dataset(dataset_config(cfg));
  scenes::write_dataset(ds, cfg.out);
  std::cout << "wrote " << ds.samples.size() << " samples to " << cfg.out << '\n';
}

void run_train_hypercut(const RunConfig& cfg) {
  const scenes::Dataset ds = load_data(cfg);
  Log log(fs::path(cfg.out) / "train_log.txt");
  const order::OrderTrainResult res = train_encoder(cfg, ds, cfg.out, log);
  order::PairEmbedder embedder(res.encoder, res.hyperplane);
  const order::OrderReport rep = order::evaluate_order(embedder, test_sequences(ds));
  const double final_loss = res.log.empty() ? res.initial_loss : res.log.back().loss;
  std::string text = rep.to_text();
  text += "degenerate=" + std::to_string(res.degenerate ? 1 : 0) + '\n';
  text += fmt("initial_loss=%.6f\n", res.initial_loss) + fmt("final_loss=%.6f\n", final_loss);
  json j = order_json(rep);
  j["degenerate"] = res.degenerate;
  j["initial_loss"] = res.initial_loss;
  j["final_loss"] = final_loss;
  j["warnings"] = res.warnings;
  write_text(fs::path(cfg.out) / "report.txt", text);
  write_text(fs::path(cfg.out) / "report.json", j.dump(2) + "\n");
  std::cout << text;
}

void run_eval_hypercut(const RunConfig& cfg) {
  if (cfg.encoder.empty()) throw UsageError("eval-hypercut needs --encoder");
  const scenes::Dataset ds = load_data(cfg);
  LoadedEncoder enc = load_encoder(cfg.encoder, ds);
  order::PairEmbedder embedder(enc.encoder, enc.h);
  const order::OrderReport rep = order::evaluate_order(embedder, test_sequences(ds));
  write_text(fs::path(cfg.out) / "report.txt", rep.to_text());
  write_text(fs::path(cfg.out) / "report.json", order_json(rep).dump(2) + "\n");
  std::cout << rep.to_text();
}

void write_scatter(const fs::path& path, const std::vector<order::EmbeddingPoint>& pts) {
  constexpr int kSide = 256;
  constexpr int kMargin = 8;
  scenes::Image img({kSide, kSide, 3});
  std::fill(img.values().begin(), img.values().end(), 1.0f);
  double lo_x = pts.front().x, hi_x = lo_x, lo_y = pts.front().y, hi_y = lo_y;
  for (const auto& p : pts) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  }
  auto to_px = [&](double v, double lo, double hi) {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    return kMargin + static_cast<int>(std::lround(t * (kSide - 2 * kMargin - 1)));
  };
  for (const auto& p : pts) {
    const int cx = to_px(p.x, lo_x, hi_x);
    const int cy = kSide - 1 - to_px(p.y, lo_y, hi_y);
    // Red: positive side of h, blue: negative. Reversed pairs are drawn darker.
    const float shade = p.reversed ? 0.45f : 0.9f;
    const float r = p.side > 0 ? shade : 0.1f;
    const float b = p.side > 0 ? 0.1f : shade;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const auto q = (static_cast<std::size_t>(cy + dy) * kSide + static_cast<std::size_t>(cx + dx)) * 3;
        img[q] = r;
        img[q + 1] = 0.1f;
        img[q + 2] = b;
      }
    }
  }
  write_png(path, img);
}

void run_dump_embeddings(const RunConfig& cfg) {
  if (cfg.encoder.empty()) throw UsageError("dump-embeddings needs --encoder");
  const scenes::Dataset ds = load_data(cfg);
  LoadedEncoder enc = load_encoder(cfg.encoder, ds);
  order::PairEmbedder embedder(enc.encoder, enc.h);
  const auto pts = order::project_embeddings_2d(embedder, test_sequences(ds));
  std::ostringstream csv;
  csv << "x,y,side,reversed\n";
  csv.precision(9);
  for (const auto& p : pts) csv << p.x << ',' << p.y << ',' << p.side << ',' << (p.reversed ? 1 : 0) << '\n';
  write_text(fs::path(cfg.out) / "embeddings.csv", csv.str());
  write_scatter(fs::path(cfg.out) / "embeddings.png", pts);
  const double sep = order::linear_separability(pts);
  write_text(fs::path(cfg.out) / "report.txt", fmt("points=%.0f\n", static_cast<double>(pts.size())) +
                                                   fmt("linear_separability=%.6f\n", sep));
  write_text(fs::path(cfg.out) / "report.json",
             json{{"points", pts.size()}, {"linear_separability", sep}}.dump(2) + "\n");
  std::cout << "points=" << pts.size() << fmt(" linear_separability=%.6f\n", sep);
}

void run_train_deblur(const RunConfig& cfg) {
  const deblur::DeblurTrainConfig dc = deblur_config(cfg);
  if (deblur::uses_hypercut(dc.regime) && cfg.encoder.empty()) {
    throw UsageError("regime " + cfg.regime + " needs --encoder");
  }
  const scenes::Dataset ds = load_data(cfg);
  std::optional<LoadedEncoder> enc;
  if (!cfg.encoder.empty()) enc = load_encoder(cfg.encoder, ds);
  Log log(fs::path(cfg.out) / "train_log.txt");
  deblur::DeblurTrainConfig run = dc;
  run.on_log = [&](const std::string& s) { log.line(s); };
  const auto train = ds.subset(scenes::Split::kTrain);
  const auto test = test_samples(ds);
  const deblur::DeblurTrainResult res = deblur::train_deblur(train, test, run, enc ? &enc->encoder : nullptr,
                                                             enc ? &enc->h : nullptr);
  diff::save_checkpoint(fs::path(cfg.out) / kModelFile, res.predictor.params);
  std::unique_ptr<order::PairEmbedder> embedder;
  if (enc) embedder = std::make_unique<order::PairEmbedder>(enc->encoder, enc->h);
  const deblur::DeblurEvaluation ev = deblur::evaluate_deblur(res.predictor, test, cfg.border_only, embedder.get());
  write_text(fs::path(cfg.out) / "report.txt", ev.report.to_text());
  write_text(fs::path(cfg.out) / "report.json", ev.report.to_json());
  dump_predictions(fs::path(cfg.out) / "predictions.png", test, ev.predictions, cfg.border_only);
  std::cout << ev.report.to_text();
}

void run_eval_deblur(const RunConfig& cfg) {
  if (cfg.model.empty()) throw UsageError("eval-deblur needs --model");
  const metrics::PairedVariant variant = parse_variant(cfg.variant);
  const scenes::Dataset ds = load_data(cfg);
  const deblur::FramePredictor model = load_predictor(cfg.model, ds);
  const bool border_only = model.arch.frames == 2 && ds.manifest.frames != 2;
  std::optional<LoadedEncoder> enc;
  std::unique_ptr<order::PairEmbedder> embedder;
  if (!cfg.encoder.empty()) {
    enc = load_encoder(cfg.encoder, ds);
    embedder = std::make_unique<order::PairEmbedder>(enc->encoder, enc->h);
  }
  const auto test = test_samples(ds);
  const deblur::DeblurEvaluation ev = deblur::evaluate_deblur(model, test, border_only, embedder.get(), variant);
  write_text(fs::path(cfg.out) / "report.txt", ev.report.to_text());
  write_text(fs::path(cfg.out) / "report.json", ev.report.to_json());
  dump_predictions(fs::path(cfg.out) / "predictions.png", test, ev.predictions, border_only);
  std::cout << ev.report.to_text();
}

void run_align(const RunConfig& cfg) {
  std::vector<scenes::Image> stream;
  scenes::Image blurry;
  std::optional<pipeline::AlignmentFixture> fixture;
  if (!cfg.stream.empty() || !cfg.blurry.empty()) {
    if (cfg.stream.empty() || cfg.blurry.empty()) throw UsageError("align needs both --stream and --blurry");
    stream = scenes::read_b2v(cfg.stream).sequence.frames;
    blurry = scenes::read_b2v(cfg.blurry).blurry.image;
  } else {
    fixture = pipeline::make_alignment_fixture(diff::derive_seed(cfg.seed, kDataStream), 50, cfg.size);
    stream = fixture->stream;
    blurry = fixture->blurry;
    scenes::write_b2v(fs::path(cfg.out) / "fixture.b2v", fixture->blurry, fixture->stream);
  }
  const pipeline::AlignmentResult r = pipeline::temporal_align(blurry, stream);
  write_text(fs::path(cfg.out) / "alignment.json", r.to_json());
  scenes::write_b2v(fs::path(cfg.out) / "aligned.b2v", pipeline::to_rgb(blurry), r.frames);
  std::cout << "p=" << r.offset << fmt(" score=%.4f\n", r.score);
  if (fixture) {
    double err = 0.0;
    for (std::size_t i = 0; i < r.correction.m.size(); ++i) {
      err = std::max(err, std::abs(r.correction.m[i] - fixture->truth.m[i]));
    }
    json j{{"p", fixture->offset}, {"M", fixture->truth.m}, {"recovered_p", r.offset}, {"max_abs_M_error", err}};
    write_text(fs::path(cfg.out) / "fixture.json", j.dump(2) + "\n");
    std::cout << "true_p=" << fixture->offset << fmt(" max_abs_M_error=%.3g\n", err);
  }
}

void run_toy_demo(RunConfig cfg) {
  cfg.border_only = true;
  const scenes::Dataset ds = load_data(cfg);
  LoadedEncoder enc = encoder_for(cfg, ds, cfg.out);
  order::PairEmbedder embedder(enc.encoder, enc.h);
  const auto train = ds.subset(scenes::Split::kTrain);
  const auto test = test_samples(ds);
  json report = json::object();
  std::string text;
  for (const char* name : {"rec", "oi", "oi+hypercut"}) {
    RunConfig rc = cfg;
    rc.regime = name;
    deblur::DeblurTrainConfig dc = deblur_config(rc);
    std::string tag = name;
    std::replace(tag.begin(), tag.end(), '+', '_');
    Log log(fs::path(cfg.out) / ("train_log_" + tag + ".txt"));
    dc.on_log = [&](const std::string& s) { log.line(tag + " " + s); };
    const deblur::DeblurTrainResult res = deblur::train_deblur(train, test, dc, &enc.encoder, &enc.h);
    const deblur::DeblurEvaluation ev = deblur::evaluate_deblur(res.predictor, test, true, &embedder);
    const double collapse = average_collapse(test, ev.predictions);
    report[name] = {{"border_ppsnr", ev.report.border_ppsnr},
                    {"order_agreement", ev.report.order_agreement},
                    {"average_collapse", collapse}};
    text += tag + fmt(" border_ppsnr=%.4f", ev.report.border_ppsnr) +
            fmt(" order_agreement=%.4f", ev.report.order_agreement) + fmt(" average_collapse=%.4f\n", collapse);
    dump_predictions(fs::path(cfg.out) / ("toy_" + tag + ".png"), test, ev.predictions, true);
  }
  write_text(fs::path(cfg.out) / "report.txt", text);
  write_text(fs::path(cfg.out) / "report.json", report.dump(2) + "\n");
  std::cout << text;
}

void run_ablate_alpha(RunConfig cfg) {
  const std::vector<double> alphas = parse_list(cfg.alphas, "alpha");
  const scenes::Dataset ds = load_data(cfg);
  LoadedEncoder enc = encoder_for(cfg, ds, cfg.out);
  order::PairEmbedder embedder(enc.encoder, enc.h);
  const auto train = ds.subset(scenes::Split::kTrain);
  const auto test = test_samples(ds);
  cfg.regime = "oi+hypercut";
  json rows = json::array();
  std::string table = "alpha\tmean_ppsnr\torder_agreement\n";
  for (double a : alphas) {
    RunConfig rc = cfg;
    rc.alpha = a;
    deblur::DeblurTrainConfig dc = deblur_config(rc);
    dc.on_log = [&](const std::string& s) { std::cout << fmt("alpha=%g ", a) << s << std::endl; };
    const deblur::DeblurTrainResult res = deblur::train_deblur(train, test, dc, &enc.encoder, &enc.h);
    const deblur::DeblurEvaluation ev = deblur::evaluate_deblur(res.predictor, test, cfg.border_only, &embedder);
    rows.push_back({{"alpha", a}, {"mean_ppsnr", ev.report.mean_ppsnr}, {"order_agreement", ev.report.order_agreement}});
    table += fmt("%g", a) + fmt("\t%.4f", ev.report.mean_ppsnr) + fmt("\t%.4f\n", ev.report.order_agreement);
  }
  write_text(fs::path(cfg.out) / "ablate_alpha.txt", table);
  write_text(fs::path(cfg.out) / "ablate_alpha.json", rows.dump(2) + "\n");
  std::cout << table;
}

void run_ablate_n(const RunConfig& cfg) {
  const std::vector<double> dims = parse_list(cfg.dims, "dimension");
  const scenes::Dataset ds = load_data(cfg);
  json rows = json::array();
  std::string table = "n\thit\tcon2\tcon3\n";
  for (double d : dims) {
    if (d < 1 || d != std::floor(d)) throw UsageError(fmt("invalid dimension %g", d));
    RunConfig rc = cfg;
    rc.dim = static_cast<int>(d);
    const fs::path dir = fs::path(cfg.out) / ("n" + std::to_string(rc.dim));
    fs::create_directories(dir);
    Log log(dir / "train_log.txt");
    const order::OrderTrainResult res = train_encoder(rc, ds, dir, log);
    order::PairEmbedder embedder(res.encoder, res.hyperplane);
    const order::OrderReport rep = order::evaluate_order(embedder, test_sequences(ds));
    rows.push_back({{"n", rc.dim}, {"hit", rep.hit}, {"con2", rep.con2}, {"con3", rep.con3}});
    table += std::to_string(rc.dim) + fmt("\t%.4f", rep.hit) + fmt("\t%.4f", rep.con2) + fmt("\t%.4f\n", rep.con3);
  }
  write_text(fs::path(cfg.out) / "ablate_n.txt", table);
  write_text(fs::path(cfg.out) / "ablate_n.json", rows.dump(2) + "\n");
  std::cout << table;
}

void apply_thread_env() {
  const char* env = std::getenv("HYPERCUT_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError(std::string("HYPERCUT_THREADS must be a positive integer, got '") + env + "'");
  kernels::set_threads(static_cast<int>(n));
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"HyperCUT: order-disambiguated blur-to-video training and evaluation", "hypercut"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  RunConfig cfg;
  app.add_option("--seed", cfg.seed, "root seed (split per component)");
  app.add_option("--epochs", cfg.epochs, "training epochs (default depends on the subcommand)");
  app.add_option("--batch", cfg.batch, "mini-batch size");
  app.add_option("--lr", cfg.lr, "Adam learning rate");
  app.add_option("--alpha", cfg.alpha, "HyperCUT regularization weight")->capture_default_str();
  app.add_option("--dim", cfg.dim, "embedding dimension n")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--frames", cfg.frames, "frames per sequence (N+1)")->capture_default_str()->check(CLI::Range(2, 64));
  app.add_option("--size", cfg.size, "frame height and width")->capture_default_str()->check(CLI::Range(8, 4096));
  app.add_option("--regime", cfg.regime, "rec, oi, oi+hypercut or rec+hypercut")
      ->capture_default_str()
      ->check(CLI::IsMember({"rec", "oi", "oi+hypercut", "rec+hypercut"}));
  app.add_option("--data", cfg.data, "dataset directory (generated from --seed when omitted)");
  app.add_option("--out", cfg.out, "output directory")->capture_default_str();
  app.add_option("--encoder", cfg.encoder, "directory holding encoder.ckpt and hyperplane.bin");
  app.add_option("--count", cfg.count, "samples to generate")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--channels", cfg.channels, "1 (grayscale) or 3 (RGB)")
      ->capture_default_str()
      ->check(CLI::IsMember({1, 3}));
  app.add_flag("--static", cfg.static_scenes, "generate scenes without motion");

  app.add_subcommand("gen-data", "generate a synthetic blur/sequence dataset");
  app.add_subcommand("train-hypercut", "train the order encoder and hyperplane");
  app.add_subcommand("eval-hypercut", "report hit and con@X for a trained encoder");
  app.add_subcommand("dump-embeddings", "write 2-D projections of pair embeddings (CSV and PNG)");
  auto* train_deblur = app.add_subcommand("train-deblur", "train a blurry-to-frames predictor");
  train_deblur->add_flag("--border-only", cfg.border_only, "predict only frames 0 and N");
  auto* eval_deblur = app.add_subcommand("eval-deblur", "evaluate a trained predictor");
  eval_deblur->add_option("--model", cfg.model, "model checkpoint or its directory")->required();
  eval_deblur->add_option("--variant", cfg.variant, "per-frame-max or sequence-average")->capture_default_str();
  auto* align = app.add_subcommand("align", "temporal alignment and color correction against a sharp stream");
  align->add_option("--stream", cfg.stream, "B2V file whose frames form the sharp stream");
  align->add_option("--blurry", cfg.blurry, "B2V file whose blurry image is aligned");
  app.add_subcommand("toy-demo", "rec / oi / oi+hypercut on the two-frame toy task");
  auto* ablate_alpha = app.add_subcommand("ablate-alpha", "mean pPSNR for a list of alpha values");
  ablate_alpha->add_option("--alphas", cfg.alphas, "comma-separated alpha values")->capture_default_str();
  ablate_alpha->add_flag("--border-only", cfg.border_only, "predict only frames 0 and N");
  auto* ablate_n = app.add_subcommand("ablate-n", "hit and con@X for several embedding sizes");
  ablate_n->add_option("--dims", cfg.dims, "comma-separated embedding sizes")->capture_default_str();

  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  for (std::string& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, std::cout, std::cerr);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  cfg.subcommand = app.get_subcommands().front()->get_name();

  try {
    apply_thread_env();
    fs::create_directories(cfg.out);
    RunConfig resolved = cfg;
    if (cfg.subcommand == "train-hypercut" || cfg.subcommand == "ablate-n") {
      const order::OrderTrainConfig oc = order_config(cfg);
      resolved.epochs = oc.epochs;
      resolved.batch = oc.batch;
      resolved.lr = oc.lr;
    } else if (cfg.subcommand == "train-deblur" || cfg.subcommand == "toy-demo" || cfg.subcommand == "ablate-alpha") {
      const deblur::DeblurTrainConfig dc = deblur_config(cfg);
      resolved.epochs = dc.epochs;
      resolved.batch = dc.batch;
      resolved.lr = dc.lr;
    }
    write_text(fs::path(cfg.out) / "config.json", resolved.to_json().dump(2) + "\n");

    const std::string& s = cfg.subcommand;
    if (s == "gen-data") run_gen_data(cfg);
    else if (s == "train-hypercut") run_train_hypercut(cfg);
    else if (s == "eval-hypercut") run_eval_hypercut(cfg);
    else if (s == "dump-embeddings") run_dump_embeddings(cfg);
    else if (s == "train-deblur") run_train_deblur(cfg);
    else if (s == "eval-deblur") run_eval_deblur(cfg);
    else if (s == "align") run_align(cfg);
    else if (s == "toy-demo") run_toy_demo(cfg);
    else if (s == "ablate-alpha") run_ablate_alpha(cfg);
    else if (s == "ablate-n") run_ablate_n(cfg);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return dispatch(args);
}

}  // namespace hypercut::cli
