#include "glcal/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <glcal/glcal.hpp>

#include "glcal/config_file.hpp"
#include "glcal/grad_check.hpp"

namespace glcal::cli {

namespace fs = std::filesystem;

namespace {

struct SynthArgs {
  int classes = 0;
  int dim = 0;
  std::size_t n = 0;
  double sigma = 1.0;
  std::optional<double> margin;
  std::vector<double> class_variances;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string spec_out;
};

struct SplitArgs {
  std::string in;
  double holdout = 0.2;
  std::uint64_t seed = 0;
  std::string out_keep;
  std::string out_holdout;
};

struct MiscalibrateArgs {
  std::string in;
  std::string out;
  std::optional<double> temperature;
  std::optional<double> power;
};

struct TrainArgs {
  int layers = 2;
  int hidden_per_class = 3;
  std::vector<int> hidden;
  int folds = 5;
  std::vector<double> lrs;
  std::vector<double> wds;
  std::optional<double> lr;
  double wd = 0.0;
  bool no_cv = false;
  int epochs = 1000;
  int patience = 25;
  int batch_size = TrainConfig::kAutoBatch;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;
  int jobs = 1;
  double init_noise = 0.0;
  bool no_bias_decay = false;
};

struct CalibrateArgs {
  std::string method;
  std::string calib;
  std::string out;
  std::string log_dir;
  double lambda_offdiag = 1e-2;
  std::vector<double> cv_lambdas;
  TrainArgs train;
};

struct CvArgs {
  std::string calib;
  std::string out;
  TrainArgs train;
};

struct EvalArgs {
  std::string test;
  std::string calibrator;
  bool uncalibrated = false;
  int bins = 15;
  int top_r = 5;
  bool brier_unnormalized = false;
  std::string out_json;
  std::string out_csv;
  std::string reliability_csv;
  std::string cumulative_csv;
};

struct GradCheckArgs {
  std::uint64_t seed = 0;
  int trials = 100;
  double eps = 1e-5;
  double tolerance = 1e-4;
};

void require_parent_dir(const std::string& path) {
  if (path.empty()) return;
  const fs::path parent = fs::absolute(fs::path(path)).parent_path();
  if (!fs::is_directory(parent)) {
    throw ValidationError("output directory " + parent.string() + " does not exist");
  }
}

void add_train_options(CLI::App* sub, TrainArgs& a, bool fixed_hyperparams) {
  sub->add_option("--layers", a.layers, "Dense g-layers, including the output layer")
      ->check(CLI::PositiveNumber);
  sub->add_option("--hidden-per-class", a.hidden_per_class,
                  "Hidden width H = k * C + 2 for k given here");
  sub->add_option("--hidden", a.hidden, "Explicit hidden widths (overrides --layers)");
  sub->add_option("--folds", a.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  sub->add_option("--lrs", a.lrs, "Learning-rate grid (default 1e-2 1e-3 1e-4)");
  sub->add_option("--wds", a.wds, "Weight-decay grid (default 0 1e-4 1e-3 1e-2)");
  if (fixed_hyperparams) {
    sub->add_option("--lr", a.lr, "Learning rate for linear methods or with --no-cv");
    sub->add_option("--wd", a.wd, "Weight decay for linear methods or with --no-cv");
    sub->add_flag("--no-cv", a.no_cv, "Skip cross-validation and use --lr/--wd");
  }
  sub->add_option("--epochs", a.epochs, "Maximum epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--patience", a.patience, "Early-stopping patience")->check(CLI::PositiveNumber);
  sub->add_option("--batch-size", a.batch_size, "-1 auto, 0 full batch, else mini-batch size");
  sub->add_option("--optimizer", a.optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}));
  sub->add_option("--seed", a.seed, "Random seed");
  sub->add_option("--jobs", a.jobs, "Parallel CV cells (1 is bit-reproducible)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--init-noise", a.init_noise, "Noise on spare hidden units at init")
      ->check(CLI::NonNegativeNumber);
  sub->add_flag("--no-bias-decay", a.no_bias_decay, "Exempt biases from weight decay");
}

TrainConfig make_train_config(const TrainArgs& a, double default_lr) {
  TrainConfig cfg;
  cfg.learning_rate = a.lr.value_or(default_lr);
  cfg.weight_decay = a.wd;
  cfg.batch_size = a.batch_size;
  cfg.max_epochs = a.epochs;
  cfg.patience = a.epochs > 0 ? std::min(a.patience, a.epochs) : a.patience;
  cfg.seed = a.seed;
  cfg.optimizer = a.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  cfg.decay_biases = !a.no_bias_decay;
  cfg.validate();
  return cfg;
}

HyperGrid make_grid(const TrainArgs& a) {
  HyperGrid grid = HyperGrid::defaults();
  if (!a.lrs.empty()) grid.learning_rates = a.lrs;
  if (!a.wds.empty()) grid.weight_decays = a.wds;
  grid.validate();
  return grid;
}

std::vector<int> make_hidden_dims(const TrainArgs& a, int n_classes) {
  if (!a.hidden.empty()) return a.hidden;
  if (a.hidden_per_class < 1) throw ValidationError("--hidden-per-class must be positive");
  const int width = a.hidden_per_class * n_classes + 2;
  return std::vector<int>(static_cast<std::size_t>(a.layers - 1), width);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

int cmd_synth(const SynthArgs& a) {
  require_parent_dir(a.out);
  const std::string spec_out = a.spec_out.empty() ? a.out + ".spec.json" : a.spec_out;
  require_parent_dir(spec_out);
  if (!(a.sigma > 0.0)) throw ValidationError("--sigma must be positive");
  if (!(a.temperature > 0.0)) throw ValidationError("--temperature must be positive");
  const int dim = a.dim == 0 ? a.classes : a.dim;
  if (dim != a.classes) {
    throw ValidationError("--dim must equal --classes: logit datasets require m == n_classes");
  }
  SyntheticSpec spec =
      SyntheticSpec::axis_aligned(a.classes, a.sigma, a.margin.value_or(a.sigma * a.sigma), a.seed);
  spec.class_variances = a.class_variances;
  spec.validate();

  const auto sample = synth_sample(spec, a.n);
  const LogitDataset data =
      a.temperature == 1.0 ? sample.data : miscalibrate(sample.data, TemperatureDistortion{a.temperature});
  save_logits(data, a.out);

  auto sidecar = nlohmann::ordered_json::parse(to_json(spec));
  sidecar["n_samples"] = a.n;
  sidecar["stream"] = 0;
  sidecar["logit_temperature"] = a.temperature;
  write_text(spec_out, sidecar.dump(2));
  std::cout << "wrote " << data.size() << " samples to " << a.out << " (spec: " << spec_out << ")\n";
  return kSuccess;
}

int cmd_split(const SplitArgs& a) {
  require_parent_dir(a.out_keep);
  require_parent_dir(a.out_holdout);
  const auto data = load_logits(a.in);
  const auto [keep, holdout] = split(data, a.holdout, a.seed);
  save_logits(keep, a.out_keep);
  save_logits(holdout, a.out_holdout);
  std::cout << "split " << data.size() << " -> " << keep.size() << " + " << holdout.size() << '\n';
  return kSuccess;
}

int cmd_miscalibrate(const MiscalibrateArgs& a) {
  require_parent_dir(a.out);
  if (a.temperature.has_value() == a.power.has_value()) {
    throw ValidationError("give exactly one of --temperature or --power");
  }
  const auto data = load_logits(a.in);
  const MiscalibrationSpec spec = a.temperature ? MiscalibrationSpec{TemperatureDistortion{*a.temperature}}
                                                : MiscalibrationSpec{PowerDistortion{*a.power}};
  save_logits(miscalibrate(data, spec), a.out);
  return kSuccess;
}

int cmd_calibrate(const CalibrateArgs& a) {
  require_parent_dir(a.out);
  const fs::path log_dir = a.log_dir.empty() ? fs::absolute(fs::path(a.out)).parent_path() : fs::path(a.log_dir);
  if (!fs::is_directory(log_dir)) throw ValidationError("log directory " + log_dir.string() + " does not exist");

  const auto method = calibrator_kind_from_string(a.method);
  const auto calib = load_logits(a.calib);
  CalibrationFit result{Calibrator::identity(), std::nullopt, std::nullopt, std::nullopt};

  switch (method) {
    case CalibratorKind::identity:
      break;
    case CalibratorKind::temperature:
      result.calibrator = fit_temperature(calib);
      std::cout << "temperature " << result.calibrator.temperature() << '\n';
      break;
    case CalibratorKind::vector:
      result = fit_vector(calib, make_train_config(a.train, 1e-2));
      break;
    case CalibratorKind::matrix: {
      const TrainConfig cfg = make_train_config(a.train, 1e-2);
      double lambda = a.lambda_offdiag;
      if (!a.cv_lambdas.empty()) {
        const auto cv = cross_validate_offdiag(calib, a.cv_lambdas, a.train.folds, cfg);
        lambda = cv.best_penalty;
        std::cout << "cross-validated off-diagonal penalty " << lambda << '\n';
      }
      result = fit_matrix(calib, lambda, cfg);
      break;
    }
    case CalibratorKind::glayers: {
      GLayerFitOptions opts;
      opts.hidden_dims = make_hidden_dims(a.train, calib.n_classes());
      // Surface the width constraint before any training starts.
      (void)transparent_init(calib.dim(), opts.hidden_dims, a.train.seed);
      opts.grid = make_grid(a.train);
      opts.folds = a.train.folds;
      opts.base = make_train_config(a.train, opts.grid.learning_rates.front());
      opts.cv.jobs = a.train.jobs;
      if (a.train.no_cv) {
        if (!a.train.lr) throw ValidationError("--no-cv needs --lr");
        opts.fixed = HyperParams{*a.train.lr, a.train.wd};
      }
      result = fit_glayers(calib, opts);
      if (a.train.init_noise > 0.0) {
        // Re-run the final fit from a noisy transparent start.
        TrainConfig cfg = opts.base;
        cfg.learning_rate = result.chosen->learning_rate;
        cfg.weight_decay = result.chosen->weight_decay;
        const auto init = transparent_init(calib.dim(), opts.hidden_dims, cfg.seed,
                                           {.spare_unit_noise = a.train.init_noise});
        auto refit = fit(init, calib, calib, cfg);
        result.calibrator = Calibrator::glayers(std::move(refit.network));
        result.log = std::move(refit.log);
      }
      if (result.cv) {
        write_cv_table_csv(*result.cv, opts.grid, log_dir / "cv_table.csv");
        std::cout << "cross-validated learning rate " << result.chosen->learning_rate
                  << ", weight decay " << result.chosen->weight_decay << '\n';
      }
      break;
    }
  }

  save_calibrator(result.calibrator, a.out);
  if (result.log) {
    write_trainlog_csv(*result.log, log_dir / "trainlog.csv");
    write_text(log_dir / "trainlog.json", trainlog_summary_json(*result.log, *result.chosen));
  }
  const Prediction before(softmax_rows(calib.logits_double()), calib.labels());
  const Prediction after(result.calibrator.transform(calib.logits_double()), calib.labels());
  std::cout << "calibration-set NLL " << nll_metric(before) << " -> " << nll_metric(after) << '\n';
  return kSuccess;
}

int cmd_cv(const CvArgs& a) {
  require_parent_dir(a.out);
  const auto calib = load_logits(a.calib);
  const auto hidden = make_hidden_dims(a.train, calib.n_classes());
  (void)transparent_init(calib.dim(), hidden, a.train.seed);
  const HyperGrid grid = make_grid(a.train);
  const TrainConfig base = make_train_config(a.train, grid.learning_rates.front());
  const auto cv = cross_validate(calib, grid, a.train.folds, hidden, base, {.jobs = a.train.jobs});
  write_cv_table_csv(cv, grid, a.out);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto hp = grid.at(g);
    std::cout << "lr=" << hp.learning_rate << " wd=" << hp.weight_decay << " mean_val_nll=" << cv.mean_scores[g]
              << (g == cv.best_index ? "  <- best" : "") << '\n';
  }
  return kSuccess;
}

int cmd_eval(const EvalArgs& a) {
  for (const auto* p : {&a.out_json, &a.out_csv, &a.reliability_csv, &a.cumulative_csv}) require_parent_dir(*p);
  const auto test = load_logits(a.test);
  const Calibrator calibrator = a.uncalibrated ? Calibrator::identity() : load_calibrator(a.calibrator);
  const Prediction pred(calibrator.transform(test.logits_double()), test.labels());
  ReportOptions options;
  options.bins = a.bins;
  options.top_r = a.top_r;
  options.brier = a.brier_unnormalized ? BrierNormalization::unnormalized : BrierNormalization::per_class;
  const MetricsReport report = evaluate(pred, options);
  const std::string json = to_json(report);
  if (a.out_json.empty()) {
    std::cout << json << '\n';
  } else {
    write_text(a.out_json, json);
  }
  if (!a.out_csv.empty()) {
    std::ofstream out(a.out_csv, std::ios::trunc);
    if (!out) throw IoError("cannot open " + a.out_csv + " for writing");
    out << to_csv(report);
  }
  if (!a.reliability_csv.empty()) write_reliability_csv(reliability_data(pred, a.bins), a.reliability_csv);
  if (!a.cumulative_csv.empty()) write_cumulative_csv(cumulative_curves(pred), a.cumulative_csv);
  return kSuccess;
}

int cmd_grad_check(const GradCheckArgs& a) {
  if (a.trials < 1) throw ValidationError("--trials must be at least 1");
  const auto summary = run_grad_check(a.seed, a.trials, a.eps);
  const bool pass = summary.max_relative_error <= a.tolerance;
  std::cout << (pass ? "PASS" : "FAIL") << " trials=" << summary.trials
            << " max_relative_error=" << summary.max_relative_error
            << " max_absolute_error=" << summary.max_absolute_error << " tolerance=" << a.tolerance << '\n';
  return pass ? kSuccess : kInternalError;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"glcal: post-hoc calibration with transparent g-layers", "glcal"};
  app.require_subcommand(1);
  std::string config_unused;
  app.add_option("--config", config_unused, "JSON file of flat flag values (flags override it)");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Sample a synthetic dataset with a known posterior");
  s->add_option("--classes", synth.classes, "Number of classes")->required()->check(CLI::Range(2, 1 << 20));
  s->add_option("--dim", synth.dim, "Logit dimension (must equal --classes)");
  s->add_option("--n", synth.n, "Number of samples")->required()->check(CLI::PositiveNumber);
  s->add_option("--sigma", synth.sigma, "Class-conditional standard deviation");
  s->add_option("--margin", synth.margin, "Class means are margin * e_y (default sigma^2: calibrated logits)");
  s->add_option("--class-variances", synth.class_variances, "Per-class variances (quadratic posterior)");
  s->add_option("--temperature", synth.temperature, "Multiply the sampled logits by this factor");
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--out", synth.out, "Output dataset (.csv or GLZ1 binary)")->required();
  s->add_option("--spec-out", synth.spec_out, "Spec sidecar JSON (default <out>.spec.json)");

  SplitArgs split_args;
  auto* sp = app.add_subcommand("split", "Split a dataset into two disjoint parts");
  sp->add_option("--in", split_args.in)->required()->check(CLI::ExistingFile);
  sp->add_option("--holdout", split_args.holdout, "Fraction sent to the holdout part")->required();
  sp->add_option("--seed", split_args.seed);
  sp->add_option("--out-keep", split_args.out_keep)->required();
  sp->add_option("--out-holdout", split_args.out_holdout)->required();

  MiscalibrateArgs mis;
  auto* mc = app.add_subcommand("miscalibrate", "Apply a known distortion to a dataset's logits");
  mc->add_option("--in", mis.in)->required()->check(CLI::ExistingFile);
  mc->add_option("--out", mis.out)->required();
  mc->add_option("--temperature", mis.temperature, "Scale logits by T");
  mc->add_option("--power", mis.power, "Map z to sign(z)|z|^p");

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Fit a calibrator on a calibration set");
  c->add_option("--method", cal.method, "identity, temperature, vector, matrix or glayers")
      ->required()
      ->check(CLI::IsMember({"identity", "temperature", "vector", "matrix", "glayers"}));
  c->add_option("--calib", cal.calib, "Calibration dataset")->required()->check(CLI::ExistingFile);
  c->add_option("--out", cal.out, "Calibrator JSON")->required();
  c->add_option("--log-dir", cal.log_dir, "Where trainlog.csv, trainlog.json and cv_table.csv go");
  c->add_option("--lambda-offdiag", cal.lambda_offdiag, "Off-diagonal penalty for matrix scaling")
      ->check(CLI::NonNegativeNumber);
  c->add_option("--cv-lambdas", cal.cv_lambdas, "Cross-validate the off-diagonal penalty over these");
  add_train_options(c, cal.train, true);

  CvArgs cv;
  auto* v = app.add_subcommand("cv", "Cross-validate g-layer learning rate and weight decay");
  v->add_option("--calib", cv.calib)->required()->check(CLI::ExistingFile);
  v->add_option("--out", cv.out, "cv_table.csv path")->required();
  add_train_options(v, cv.train, false);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compute calibration metrics and plot data");
  e->add_option("--test", ev.test, "Test dataset")->required()->check(CLI::ExistingFile);
  auto* cal_opt = e->add_option("--calibrator", ev.calibrator, "Calibrator JSON")->check(CLI::ExistingFile);
  auto* unc_opt = e->add_flag("--uncalibrated", ev.uncalibrated, "Evaluate softmax of the raw logits");
  cal_opt->excludes(unc_opt);
  e->add_option("--bins", ev.bins, "ECE bins")->check(CLI::PositiveNumber);
  e->add_option("--top-r", ev.top_r, "Largest r for top-r KS")->check(CLI::PositiveNumber);
  e->add_flag("--brier-unnormalized", ev.brier_unnormalized, "Do not divide the Brier sum by n");
  e->add_option("--out-json", ev.out_json, "MetricsReport JSON (stdout if omitted)");
  e->add_option("--out-csv", ev.out_csv, "MetricsReport as metric,value CSV");
  e->add_option("--reliability-csv", ev.reliability_csv, "Reliability-diagram table");
  e->add_option("--cumulative-csv", ev.cumulative_csv, "Cumulative score/correct curves");

  GradCheckArgs gc;
  auto* g = app.add_subcommand("grad-check", "Compare backprop with central differences");
  g->add_option("--seed", gc.seed);
  g->add_option("--trials", gc.trials);
  g->add_option("--eps", gc.eps, "Finite-difference step in [1e-6, 1e-3]");
  g->add_option("--tolerance", gc.tolerance, "Maximum allowed relative error");

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_config_file(app, std::move(args));
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsageError;
  } catch (const ConfigFileError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsageError;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (sp->parsed()) return cmd_split(split_args);
    if (mc->parsed()) return cmd_miscalibrate(mis);
    if (c->parsed()) return cmd_calibrate(cal);
    if (v->parsed()) return cmd_cv(cv);
    if (e->parsed()) {
      if (!ev.uncalibrated && ev.calibrator.empty()) {
        throw ValidationError("eval needs --calibrator FILE or --uncalibrated");
      }
      return cmd_eval(ev);
    }
    if (g->parsed()) return cmd_grad_check(gc);
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsageError;
  } catch (const FormatError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsageError;
  } catch (const TrainingDiverged& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kInternalError;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << '\n';
    return kInternalError;
  }
  return kUsageError;
}

}  // namespace glcal::cli
