#include "fbd/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "fbd/annotation.hpp"
#include "fbd/case_io.hpp"
#include "fbd/checkpoint.hpp"
#include "fbd/dti.hpp"
#include "fbd/errors.hpp"
#include "fbd/inference.hpp"
#include "fbd/metrics.hpp"
#include "fbd/nifti.hpp"
#include "fbd/phantom.hpp"
#include "fbd/run_config.hpp"
#include "fbd/tck.hpp"
#include "fbd/training.hpp"

namespace fbd {

namespace fs = std::filesystem;

namespace {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

class Log {
 public:
  explicit Log(std::ostream& err) : err_(err) {
    const char* env = std::getenv("FBD_LOG_LEVEL");
    const std::string v = env ? env : "";
    if (v == "error") level_ = Level::Error;
    else if (v == "warn") level_ = Level::Warn;
    else if (v == "debug") level_ = Level::Debug;
  }
  void operator()(Level l, const std::string& msg) const {
    static const char* tags[] = {"error", "warn", "info", "debug"};
    if (static_cast<int>(l) <= static_cast<int>(level_)) err_ << "[" << tags[static_cast<int>(l)] << "] " << msg << "\n";
  }
  void info(const std::string& msg) const { (*this)(Level::Info, msg); }

 private:
  std::ostream& err_;
  Level level_ = Level::Info;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(what + " is not valid JSON: " + e.what());
  }
}

std::vector<std::int64_t> spatial_dims(const VolumeMeta& m) { return {m.dims[0], m.dims[1], m.dims[2]}; }

template <typename T>
void override(const std::optional<T>& value, T& target) {
  if (value) target = *value;
}

CascadeModel<float> build_or_load(const RunConfig& cfg) {
  if (!cfg.paths.checkpoint.empty()) return load_checkpoint<float>(cfg.paths.checkpoint);
  return CascadeModel<float>(cfg.model, cfg.seed);
}

// ---- subcommands ----

struct FitArgs {
  std::string signals, gradients, out, fa, md;
  std::optional<double> b0_threshold;
  bool second_pass = false, ols = false;
};

void run_fit(const RunConfig& cfg, const FitArgs& a, const Log& log) {
  const auto table = read_gradient_table(a.gradients);
  const auto signals = read_nifti(a.signals);
  WllsOptions opt;
  opt.second_pass = cfg.fit.second_pass;
  opt.weighted = cfg.fit.weighted;
  opt.b0_threshold = cfg.fit.b0_threshold;
  opt.threads = cfg.resolved_threads();
  const auto dti = fit_wlls(signals, table, opt);
  std::int64_t counts[4] = {};
  for (auto s : dti.status) ++counts[static_cast<int>(s)];
  log.info("fitted " + std::to_string(counts[0]) + " voxels; masked " + std::to_string(counts[1]) +
           ", non-positive " + std::to_string(counts[2]) + ", singular " + std::to_string(counts[3]));
  write_nifti(a.out, dti.to_volume());
  if (!a.fa.empty() || !a.md.empty()) {
    const auto maps = tensor_scalars(dti);
    const auto dims = spatial_dims(dti.meta);
    auto to_volume = [&](const std::vector<double>& v) {
      return Volume::from_floats(dims, std::vector<float>(v.begin(), v.end()), dti.meta.voxel_size_mm);
    };
    if (!a.fa.empty()) write_nifti(a.fa, to_volume(maps.fa));
    if (!a.md.empty()) write_nifti(a.md, to_volume(maps.md));
  }
}

struct StapleArgs {
  std::vector<std::string> inputs;
  std::string schema = "tissue", out, report;
};

void run_staple(const RunConfig& cfg, const StapleArgs& a, const Log& log) {
  if (a.inputs.size() < 2) throw UsageError("staple needs at least two --inputs");
  std::vector<Volume> candidates;
  for (const auto& p : a.inputs) candidates.push_back(read_nifti(p));
  StapleOptions opt;
  opt.max_iter = cfg.staple.max_iter;
  opt.tol = cfg.staple.tol;
  opt.init_diagonal = cfg.staple.init_diagonal;
  opt.threads = cfg.resolved_threads();
  const auto r = staple_fuse(candidates, schema_by_name(a.schema), opt);
  log.info("STAPLE " + std::string(r.converged ? "converged" : "stopped") + " after " +
           std::to_string(r.iterations) + " iterations");
  const auto& meta = candidates.front().meta();
  write_nifti(a.out, Volume::from_labels(spatial_dims(meta), r.hard, meta.voxel_size_mm));
  if (!a.report.empty()) {
    nlohmann::json j{{"raters", a.inputs},
                     {"num_labels", r.num_labels},
                     {"iterations", r.iterations},
                     {"converged", r.converged},
                     {"log_likelihood", r.log_likelihood},
                     {"prior", r.prior},
                     {"absent_labels", r.absent_labels}};
    nlohmann::json conf = nlohmann::json::array();
    const auto L = static_cast<std::size_t>(r.num_labels);
    for (const auto& theta : r.confusion) {
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t s = 0; s < L; ++s) rows.push_back(std::vector<double>(theta.begin() + s * L, theta.begin() + (s + 1) * L));
      conf.push_back(rows);
    }
    j["confusion"] = conf;
    write_text(a.report, j.dump(2) + "\n");
  }
}

struct DensityArgs {
  std::string tck, like, out, density;
  std::vector<std::int64_t> dims;
  std::vector<double> voxel_size{1.2, 1.2, 1.2};
};

void run_density(const RunConfig& cfg, const DensityArgs& a, const Log& log) {
  VolumeMeta meta;
  if (!a.like.empty()) {
    meta = read_nifti(a.like).meta();
    meta.dims.resize(3);
  } else if (a.dims.size() == 3) {
    if (a.voxel_size.size() != 3) throw UsageError("--voxel-size needs three values");
    meta.dims = a.dims;
    meta.voxel_size_mm = {a.voxel_size[0], a.voxel_size[1], a.voxel_size[2]};
  } else {
    throw UsageError("density-mask needs --like or --dims");
  }
  meta.datatype = DataType::UInt8;
  meta.validate();
  const auto set = read_tck(a.tck);
  const auto r = density_mask(set, meta, cfg.density.percentile, cfg.resolved_threads());
  if (r.skipped_points > 0) log(Level::Warn, std::to_string(r.skipped_points) + " streamline points fall outside the grid");
  log.info("density threshold " + std::to_string(r.threshold));
  write_nifti(a.out, Volume::from_masks(meta.dims, r.mask, meta.voxel_size_mm));
  if (!a.density.empty()) {
    write_nifti(a.density, Volume::from_floats(meta.dims, std::vector<float>(r.density.begin(), r.density.end()),
                                               meta.voxel_size_mm));
  }
}

struct MergeTractArgs {
  std::vector<std::string> masks, missing;
  std::string out;
};

void run_merge_tracts(const MergeTractArgs& a, const Log& log) {
  std::vector<NamedMask> inputs;
  std::optional<VolumeMeta> grid;
  for (const auto& spec : a.masks) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--mask expects NAME=PATH, got '" + spec + "'");
    const Volume v = read_nifti(spec.substr(eq + 1));
    if (v.meta().dims.size() != 3) throw DataError("tract mask '" + spec.substr(eq + 1) + "' is not 3-D");
    if (!grid) grid = v.meta();
    else if (!grid->same_grid(v.meta())) throw DataError("tract masks are on different grids");
    NamedMask m;
    m.name = spec.substr(0, eq);
    for (auto l : v.to_labels()) m.mask.push_back(l != 0);
    inputs.push_back(std::move(m));
  }
  if (!grid) throw UsageError("merge-tracts needs at least one --mask");
  for (const auto& name : a.missing) {
    NamedMask m;
    m.name = name;
    m.missing = true;
    inputs.push_back(std::move(m));
  }
  const auto merged = merge_bilateral(inputs, grid->spatial_size());
  int present = 0;
  for (auto p : merged.present) present += p;
  log.info("merged " + std::to_string(present) + " of " + std::to_string(merged.names.size()) + " tracts");
  write_tract_masks(a.out, merged, *grid);
}

struct MergeTissueArgs {
  std::string atlas, kind, mapping, out;
};

void run_merge_tissues(const MergeTissueArgs& a) {
  TissueMapping mapping;
  if (!a.mapping.empty() && !a.kind.empty()) throw UsageError("give either --atlas-kind or --mapping, not both");
  if (!a.mapping.empty()) mapping = parse_tissue_mapping(read_text(a.mapping));
  else if (a.kind == "young") mapping = tissue_mapping(young_atlas_labels());
  else if (a.kind == "older") mapping = tissue_mapping(older_atlas_labels());
  else throw UsageError("merge-tissues needs --atlas-kind young|older or --mapping");
  const Volume atlas = read_nifti(a.atlas);
  if (atlas.meta().dims.size() != 3) throw DataError("atlas label map must be 3-D");
  const auto merged = merge_tissue_labels(atlas.to_labels(), mapping);
  write_nifti(a.out, Volume::from_labels(atlas.meta().dims, merged, atlas.meta().voxel_size_mm));
}

struct PhantomArgs {
  std::string spec, out_dir;
  std::optional<std::int64_t> dims;
  bool signals = false;
};

void run_phantom(const RunConfig& cfg, const PhantomArgs& a, const Log& log) {
  const Phantom ph = generate_phantom(cfg.phantom, cfg.seed);
  write_case(a.out_dir, CaseData{ph.dti, ph.y_sg, ph.tracts, ph.y_pc});
  const fs::path dir(a.out_dir);
  write_text((dir / "spec.json").string(), nlohmann::json(cfg.phantom).dump(2) + "\n");
  if (ph.signals) {
    write_nifti((dir / "signals.nii").string(), *ph.signals);
    write_text((dir / "gradients.txt").string(), format_gradient_table(ph.table));
  }
  const auto& d = cfg.phantom.dims;
  log.info("phantom " + std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]) + " seed " +
           std::to_string(cfg.seed) + " written to " + a.out_dir);
}

TrainingCase load_training_case(const std::string& dir, const RunConfig& cfg) {
  const auto data = read_case(dir);
  auto c = make_training_case(data.dti, data.y_sg, data.tracts, data.y_pc, cfg.input_scale);
  return c;
}

void run_train(const RunConfig& cfg, const Log& log) {
  if (cfg.paths.train_cases.empty()) throw UsageError("train needs at least one --case directory");
  CascadeModel<float> model = build_or_load(cfg);
  const auto& mc = model.config();
  auto load = [&](const std::vector<std::string>& dirs) {
    std::vector<TrainingCase> cases;
    for (const auto& d : dirs) {
      auto c = load_training_case(d, cfg);
      if (mc.has_task(Task::Tract) && static_cast<int>(c.m_tr.size()) != mc.l_tr) {
        throw DataError("case '" + d + "' has " + std::to_string(c.m_tr.size()) + " tracts, the model expects " +
                        std::to_string(mc.l_tr));
      }
      cases.push_back(std::move(c));
    }
    return cases;
  };
  const auto train = load(cfg.paths.train_cases);
  const auto val = load(cfg.paths.val_cases);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  fs::create_directories(cfg.paths.run_dir);
  write_text((fs::path(cfg.paths.run_dir) / "run_config.json").string(), nlohmann::json(cfg).dump(2) + "\n");
  log.info("training " + std::to_string(model.parameter_count()) + " parameters on " + std::to_string(train.size()) +
           " case(s) for " + std::to_string(tc.steps) + " steps");
  const auto r = train_model(model, train, val, tc, cfg.paths.run_dir, [&](const std::string& line) { log.info(line); });
  log.info("finished after " + std::to_string(r.steps_run) + " steps" + (r.early_stopped ? " (early stop)" : ""));
}

struct InferArgs {
  std::string dti, case_dir, out_dir;
  bool save_probs = false;
};

void run_infer(const RunConfig& cfg, const InferArgs& a, const Log& log) {
  if (cfg.paths.checkpoint.empty()) throw UsageError("infer needs --checkpoint");
  if (a.dti.empty() == a.case_dir.empty()) throw UsageError("infer needs exactly one of --dti or --case");
  const auto model = load_checkpoint<float>(cfg.paths.checkpoint);
  const auto& mc = model.config();
  const auto dti = DtiVolume::from_volume(read_nifti(a.dti.empty() ? (fs::path(a.case_dir) / "dti.nii").string() : a.dti));
  const auto& m = dti.meta;
  const std::int64_t window = cfg.infer.window == 0 ? mc.cube_size : cfg.infer.window;
  if (window != mc.cube_size) {
    throw UsageError("window " + std::to_string(window) + " differs from the model cube size " +
                     std::to_string(mc.cube_size));
  }
  if (mc.input_channels != 6) throw DataError("model expects " + std::to_string(mc.input_channels) + " input channels");
  std::vector<float> x(dti.components.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(dti.components[i] * cfg.input_scale);

  const auto plan = plan_windows({m.dims[2], m.dims[1], m.dims[0]}, window, cfg.infer.overlap);
  log.info("windows: " + std::to_string(plan.corners.size()) + " (window " + std::to_string(window) + ", stride " +
           std::to_string(plan.stride) + ")");
  InferenceOptions opt;
  opt.gaussian = cfg.infer.gaussian;
  opt.gaussian_sigma = cfg.infer.gaussian_sigma;
  opt.threads = cfg.resolved_threads();
  const auto r = sliding_window_infer(x, mc.input_channels, plan, model_predictor(model), opt);

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  const auto dims = spatial_dims(m);
  const auto n = m.spatial_size();
  for (std::size_t t = 0; t < 3; ++t) {
    if (r.probs[t].empty()) continue;
    const auto task = static_cast<Task>(t);
    if (task == Task::Tract) {
      const auto masks = threshold_masks(r.probs[t], cfg.infer.tract_threshold);
      TractMaskSet set;
      for (std::int64_t c = 0; c < r.channels[t]; ++c) {
        set.names.push_back(mc.l_tr == static_cast<int>(tract_schema().size())
                                ? tract_schema().labels[static_cast<std::size_t>(c)].abbreviation
                                : "tract_" + std::to_string(c + 1));
        set.masks.emplace_back(masks.begin() + c * n, masks.begin() + (c + 1) * n);
        set.present.push_back(1);
        set.partial.push_back(0);
      }
      VolumeMeta grid = m;
      grid.dims.resize(3);
      write_tract_masks((dir / "tracts.nii").string(), set, grid);
    } else {
      const auto labels = argmax_labels(r.probs[t], r.channels[t]);
      write_nifti((dir / (task == Task::Tissue ? "tissue.nii" : "parcels.nii")).string(),
                  Volume::from_labels(dims, labels, m.voxel_size_mm));
    }
    if (a.save_probs) {
      auto pd = dims;
      pd.push_back(r.channels[t]);
      write_nifti((dir / (std::string("prob_") + task_name(task) + ".nii")).string(),
                  Volume::from_floats(pd, r.probs[t], m.voxel_size_mm));
    }
  }
  log.info("outputs written to " + a.out_dir);
}

struct EvalArgs {
  std::string pred, ref, schema = "tissue", case_id, csv, json;
};

void run_evaluate(const EvalArgs& a, std::ostream& out) {
  MetricReport report;
  report.case_id = a.case_id.empty() ? fs::path(a.ref).parent_path().filename().string() : a.case_id;
  if (a.schema == "tract") {
    VolumeMeta grid_p, grid_r;
    const auto pred = read_tract_masks(a.pred, &grid_p);
    const auto ref = read_tract_masks(a.ref, &grid_r);
    if (!grid_p.same_grid(grid_r)) throw ShapeError("prediction and reference grids differ");
    report.tasks.push_back(evaluate_masks(pred.masks, ref.masks, ref.names, grid_r));
  } else {
    report.tasks.push_back(evaluate_labels(read_nifti(a.pred), read_nifti(a.ref), schema_by_name(a.schema)));
  }
  if (!a.csv.empty()) write_text(a.csv, report_csv(report));
  if (!a.json.empty()) write_text(a.json, report_json(report).dump(2) + "\n");
  out << report_table(report);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Log log(err);
  CLI::App app{"Fetal brain DTI segmentation toolkit", "fbd"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  std::string config_path;
  bool print_config = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  app.add_option("--config", config_path, "Run configuration JSON (defaults from --print-config)");
  app.add_flag("--print-config", print_config, "Print the resolved run configuration and exit");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--threads", threads, "Worker threads (0 = available cores)");

  // fit-dti
  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit-dti", "Fit diffusion tensors to dMRI signals");
  c_fit->add_option("--signals", fit.signals, "4-D signal volume")->required();
  c_fit->add_option("--gradients", fit.gradients, "Gradient table (x y z b per line)")->required();
  c_fit->add_option("--out", fit.out, "Output tensor volume")->required();
  c_fit->add_option("--fa", fit.fa, "Optional FA map output");
  c_fit->add_option("--md", fit.md, "Optional MD map output");
  c_fit->add_option("--b0-threshold", fit.b0_threshold, "Skip voxels whose mean b=0 signal is at or below this");
  c_fit->add_flag("--second-pass", fit.second_pass, "Re-weight with the fitted signals");
  c_fit->add_flag("--ols", fit.ols, "Ordinary instead of weighted least squares");

  // staple
  StapleArgs staple;
  std::optional<int> staple_iter;
  std::optional<double> staple_tol;
  auto* c_staple = app.add_subcommand("staple", "Fuse candidate label maps with STAPLE");
  c_staple->add_option("--inputs", staple.inputs, "Candidate label maps")->required();
  c_staple->add_option("--schema", staple.schema, "Label schema (tissue, parcellation)");
  c_staple->add_option("--out", staple.out, "Fused label map")->required();
  c_staple->add_option("--report", staple.report, "JSON report with per-rater confusion matrices");
  c_staple->add_option("--max-iter", staple_iter, "EM iteration limit");
  c_staple->add_option("--tol", staple_tol, "Convergence tolerance");

  // density-mask
  DensityArgs dens;
  std::optional<double> percentile;
  auto* c_dens = app.add_subcommand("density-mask", "Threshold streamline density into a tract mask");
  c_dens->add_option("--tck", dens.tck, "Streamlines (.tck)")->required();
  c_dens->add_option("--like", dens.like, "Take the grid from this NIfTI");
  c_dens->add_option("--dims", dens.dims, "Grid extents nx ny nz")->expected(3);
  c_dens->add_option("--voxel-size", dens.voxel_size, "Voxel size in mm (x y z)")->expected(3);
  c_dens->add_option("--percentile", percentile, "Density percentile used as the threshold");
  c_dens->add_option("--out", dens.out, "Output mask")->required();
  c_dens->add_option("--density", dens.density, "Optional density map output");

  // merge-tracts
  MergeTractArgs mt;
  auto* c_mt = app.add_subcommand("merge-tracts", "Merge left/right tract masks into the tract label set");
  c_mt->add_option("--mask", mt.masks, "NAME=PATH, repeatable")->required();
  c_mt->add_option("--missing", mt.missing, "Tract marked absent by the annotator, repeatable");
  c_mt->add_option("--out", mt.out, "Output mask volume (a .json sidecar is written next to it)")->required();

  // merge-tissues
  MergeTissueArgs mtis;
  auto* c_mtis = app.add_subcommand("merge-tissues", "Relabel an atlas segmentation into tissue classes");
  c_mtis->add_option("--atlas", mtis.atlas, "Atlas label map")->required();
  c_mtis->add_option("--atlas-kind", mtis.kind, "Built-in mapping: young or older");
  c_mtis->add_option("--mapping", mtis.mapping, "JSON mapping {atlas id: tissue}");
  c_mtis->add_option("--out", mtis.out, "Output tissue map")->required();

  // phantom
  PhantomArgs ph;
  auto* c_ph = app.add_subcommand("phantom", "Generate a synthetic annotated DTI case");
  c_ph->add_option("--spec", ph.spec, "Phantom spec JSON");
  c_ph->add_option("--dims", ph.dims, "Cube size for the default layout");
  c_ph->add_flag("--signals", ph.signals, "Also simulate dMRI signals and a gradient table");
  c_ph->add_option("--out-dir", ph.out_dir, "Output case directory")->required();

  // train
  std::vector<std::string> train_cases, val_cases;
  std::optional<std::string> run_dir, init_ckpt, loss_name;
  std::optional<int> steps;
  std::optional<double> lr, momentum, clip_norm, early_stop;
  auto* c_train = app.add_subcommand("train", "Train the cascade model");
  c_train->add_option("--case", train_cases, "Training case directory, repeatable");
  c_train->add_option("--val", val_cases, "Validation case directory, repeatable");
  c_train->add_option("--run-dir", run_dir, "Output directory for checkpoints and logs");
  c_train->add_option("--init", init_ckpt, "Start from this checkpoint");
  c_train->add_option("--steps", steps, "Number of SGD steps");
  c_train->add_option("--lr", lr, "Initial learning rate");
  c_train->add_option("--momentum", momentum, "SGD momentum");
  c_train->add_option("--loss", loss_name, "Loss variant: paper or bounded");
  c_train->add_option("--clip-norm", clip_norm, "Gradient norm limit (0 = off)");
  c_train->add_option("--early-stop", early_stop, "Stop when every task's training DSC exceeds this");

  // infer
  InferArgs inf;
  std::optional<std::string> ckpt;
  std::optional<std::int64_t> window;
  std::optional<double> overlap;
  bool gaussian = false;
  auto* c_inf = app.add_subcommand("infer", "Sliding-window inference on a DTI volume");
  c_inf->add_option("--checkpoint", ckpt, "Model checkpoint");
  c_inf->add_option("--dti", inf.dti, "Tensor volume (6 components)");
  c_inf->add_option("--case", inf.case_dir, "Case directory (uses its dti.nii)");
  c_inf->add_option("--out-dir", inf.out_dir, "Output directory")->required();
  c_inf->add_option("--window", window, "Window size (must equal the model cube size)");
  c_inf->add_option("--overlap", overlap, "Window overlap fraction in [0, 1)");
  c_inf->add_flag("--gaussian", gaussian, "Gaussian instead of uniform window weighting");
  c_inf->add_flag("--save-probs", inf.save_probs, "Also write probability maps");

  // evaluate
  EvalArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Compare a prediction with a reference");
  c_ev->add_option("--pred", ev.pred, "Predicted label map or tract masks")->required();
  c_ev->add_option("--ref", ev.ref, "Reference label map or tract masks")->required();
  c_ev->add_option("--schema", ev.schema, "tissue, parcellation or tract");
  c_ev->add_option("--case", ev.case_id, "Case id for the report");
  c_ev->add_option("--csv", ev.csv, "Per-label CSV output");
  c_ev->add_option("--json", ev.json, "JSON report output");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto sub = app.get_subcommands();
    err << (sub.empty() ? app.help() : sub.front()->help());
    return kExitUsage;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    override(seed, cfg.seed);
    override(threads, cfg.threads);
    if (c_fit->parsed()) {
      override(fit.b0_threshold, cfg.fit.b0_threshold);
      if (fit.second_pass) cfg.fit.second_pass = true;
      if (fit.ols) cfg.fit.weighted = false;
    }
    if (c_staple->parsed()) {
      override(staple_iter, cfg.staple.max_iter);
      override(staple_tol, cfg.staple.tol);
    }
    if (c_dens->parsed()) override(percentile, cfg.density.percentile);
    if (c_ph->parsed()) {
      if (!ph.spec.empty() && ph.dims) throw UsageError("give either --spec or --dims, not both");
      if (!ph.spec.empty()) cfg.phantom = parse_json(read_text(ph.spec), "phantom spec").get<PhantomSpec>();
      if (ph.dims) cfg.phantom = PhantomSpec::scaled({*ph.dims, *ph.dims, *ph.dims});
      if (ph.signals) cfg.phantom.simulate_signals = true;
    }
    if (c_train->parsed()) {
      if (!train_cases.empty()) cfg.paths.train_cases = train_cases;
      if (!val_cases.empty()) cfg.paths.val_cases = val_cases;
      override(run_dir, cfg.paths.run_dir);
      override(init_ckpt, cfg.paths.checkpoint);
      override(steps, cfg.train.steps);
      override(lr, cfg.train.lr);
      override(momentum, cfg.train.momentum);
      override(clip_norm, cfg.train.clip_norm);
      override(early_stop, cfg.train.early_stop_dice);
      if (loss_name) cfg.train.loss = loss_variant_from_name(*loss_name);
      // Re-run the training config checks on the overridden values.
      cfg.train = nlohmann::json(cfg.train).get<TrainConfig>();
    }
    if (c_inf->parsed()) {
      override(ckpt, cfg.paths.checkpoint);
      override(window, cfg.infer.window);
      override(overlap, cfg.infer.overlap);
      if (gaussian) cfg.infer.gaussian = true;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate();

    if (print_config) {
      out << nlohmann::json(cfg).dump(2) << "\n";
      return kExitOk;
    }
    if (app.get_subcommands().empty()) {
      err << "error: a subcommand is required\n" << app.help();
      return kExitUsage;
    }
    if (c_fit->parsed()) run_fit(cfg, fit, log);
    else if (c_staple->parsed()) run_staple(cfg, staple, log);
    else if (c_dens->parsed()) run_density(cfg, dens, log);
    else if (c_mt->parsed()) run_merge_tracts(mt, log);
    else if (c_mtis->parsed()) run_merge_tissues(mtis);
    else if (c_ph->parsed()) run_phantom(cfg, ph, log);
    else if (c_train->parsed()) run_train(cfg, log);
    else if (c_inf->parsed()) run_infer(cfg, inf, log);
    else if (c_ev->parsed()) run_evaluate(ev, out);
    return kExitOk;
  } catch (const UsageError& e) {
    log(Level::Error, e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log(Level::Error, e.what());
    return kExitData;
  }
}

}  // namespace fbd
