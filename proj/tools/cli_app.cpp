#include "cli_app.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "cvae/cost.hpp"
#include "cvae/data.hpp"
#include "cvae/dists.hpp"
#include "cvae/eval.hpp"
#include "cvae/textio.hpp"
#include "cvae/train.hpp"

namespace cvae::cli {

namespace fs = std::filesystem;

namespace {

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) {
    throw MissingInput(what + " not found: " + path.string());
  }
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  return path.parent_path() / (path.stem().string() + suffix);
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) {
      out.push_back(parse_double(item));
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) {
    throw std::runtime_error("cannot write " + path.string());
  }
  f << text;
  if (!f) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

// ---------------------------------------------------------------------------
// generate-data

struct GenerateArgs {
  bool grid25 = false;
  std::string idx;
  std::uint64_t seed = 0;
  double sigma = 0.05;
  std::size_t per_component = 300;
  std::size_t max_count = 2560;
  std::string binarize = "threshold";
  std::string out;
};

void add_generate(CLI::App& app, GenerateArgs& a) {
  auto* cmd = app.add_subcommand("generate-data", "Write the grid dataset or a binarized IDX image set");
  auto* grid = cmd->add_flag("--grid25", a.grid25, "25-component Gaussian grid");
  auto* idx = cmd->add_option("--idx", a.idx, "IDX image file (magic 0x803)");
  grid->excludes(idx);
  cmd->add_option("--seed", a.seed);
  cmd->add_option("--sigma", a.sigma, "grid component standard deviation");
  cmd->add_option("--per-component", a.per_component);
  cmd->add_option("--max-count", a.max_count, "images read from the IDX file");
  cmd->add_option("--binarize", a.binarize)->check(CLI::IsMember({"threshold", "mean-scale"}));
  cmd->add_option("--out", a.out, "dataset CSV")->required();
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const fs::path path(a.out);
  if (a.grid25) {
    GridSpec spec;
    spec.seed = a.seed;
    spec.sigma = a.sigma;
    spec.samples_per_component = a.per_component;
    const GridDataset g = make_grid25(spec);
    save_csv(path, g.data);
    save_matrix_csv(sibling(path, "_means.csv"), g.means);
    Tensor2 labels(g.component.size(), 1);
    for (std::size_t r = 0; r < g.component.size(); ++r) {
      labels(r, 0) = static_cast<double>(g.component[r]);
    }
    save_matrix_csv(sibling(path, "_labels.csv"), labels);
    out << "wrote " << g.data.size() << " points and " << g.means.rows() << " means\n";
    return 0;
  }
  if (a.idx.empty()) {
    throw std::invalid_argument("generate-data needs --grid25 or --idx");
  }
  require_file(a.idx, "IDX file");
  const IdxImageSet images = read_idx_images(a.idx, a.max_count);
  const auto mode = a.binarize == "threshold" ? BinarizeMode::Threshold : BinarizeMode::MeanScale;
  const EmpiricalMeasure data = binarize(images, mode);
  save_csv(path, data);
  out << "wrote " << data.size() << " images of dimension " << data.dim() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train / sweep

struct ModelArgs {
  std::string data;
  std::string strategy = "dual";
  std::size_t dz = 2;
  std::string hidden = "128,128,128";
  std::string likelihood = "gaussian";
  std::string prior = "auto";
  std::size_t categories = 10;
  TrainConfig config;
};

void add_model_options(CLI::App* cmd, ModelArgs& a) {
  TrainConfig& c = a.config;
  cmd->add_option("--data", a.data, "training CSV")->required();
  cmd->add_option("--strategy", a.strategy)
      ->check(CLI::IsMember({"primal", "dual", "sinkhorn", "baseline-vae"}));
  cmd->add_option("--epsilon", c.epsilon);
  cmd->add_option("--lr-u", c.lr_u);
  cmd->add_option("--lr-theta", c.lr_theta);
  cmd->add_option("--inner-iters", c.inner_iters);
  cmd->add_option("--batch-m", c.batch_m, "data batch (primal, baseline-vae); 0 = all");
  cmd->add_option("--batch-n", c.batch_n, "latent batch");
  cmd->add_option("--epochs", c.epochs);
  cmd->add_option("--iters-per-epoch", c.iters_per_epoch);
  cmd->add_option("--seed", c.seed);
  cmd->add_option("--posterior-samples", c.posterior_samples);
  cmd->add_option("--grad-clip", c.grad_clip);
  cmd->add_option("--dz", a.dz, "latent dimension");
  cmd->add_option("--hidden", a.hidden, "comma-separated hidden widths");
  cmd->add_option("--likelihood", a.likelihood)->check(CLI::IsMember({"gaussian", "bernoulli"}));
  cmd->add_option("--prior", a.prior)->check(CLI::IsMember({"auto", "gaussian", "categorical"}));
  cmd->add_option("--categories", a.categories, "atoms of a categorical prior");
}

std::vector<std::size_t> hidden_widths(const std::string& text) {
  std::vector<std::size_t> widths;
  for (double w : parse_list(text)) {
    if (!(w >= 1.0) || w != static_cast<double>(static_cast<std::size_t>(w))) {
      throw std::invalid_argument("--hidden expects positive integers");
    }
    widths.push_back(static_cast<std::size_t>(w));
  }
  return widths;
}

struct Setup {
  EmpiricalMeasure data;
  Prior prior;
  Decoder decoder;
  std::uint64_t train_seed = 0;
};

Setup make_setup(ModelArgs& a) {
  a.config.strategy = parse_strategy(a.strategy);
  a.config.validate();
  require_file(a.data, "data file");
  Setup s;
  s.data = load_csv(a.data);
  const auto hidden = hidden_widths(a.hidden);
  Rng root(a.config.seed);
  const std::uint64_t decoder_seed = root.split();
  const std::uint64_t atom_seed = root.split();
  s.train_seed = root.split();
  s.decoder = a.likelihood == "gaussian"
                  ? make_gaussian_decoder(a.dz, s.data.dim(), hidden, decoder_seed)
                  : make_bernoulli_decoder(a.dz, s.data.dim(), hidden, decoder_seed);
  const bool categorical = a.prior == "categorical" ||
                           (a.prior == "auto" && a.config.strategy == Strategy::SinkhornDiscrete);
  if (categorical) {
    std::vector<double> probs(a.categories, 1.0 / static_cast<double>(a.categories));
    s.prior = CategoricalPrior::with_random_atoms(std::move(probs), a.dz, atom_seed);
  } else {
    s.prior = GaussianPrior::standard(a.dz);
  }
  return s;
}

std::string config_echo(const ModelArgs& a, const fs::path& checkpoint) {
  std::ostringstream os;
  write_config(os, a.config);
  os << "data " << a.data << '\n'
     << "dz " << a.dz << '\n'
     << "hidden " << a.hidden << '\n'
     << "likelihood " << a.likelihood << '\n'
     << "prior " << a.prior << '\n'
     << "categories " << a.categories << '\n'
     << "checkpoint " << checkpoint.string() << '\n';
  return os.str();
}

struct TrainOutcome {
  TrainedModel model;
  bool aborted = false;
};

// Writes checkpoint, diagnostics and config echo into `dir`.
TrainOutcome train_into(ModelArgs& a, const fs::path& dir, std::ostream& out, std::ostream& err,
                        const std::string& checkpoint_override = {}) {
  Setup s = make_setup(a);
  fs::create_directories(dir);
  const fs::path checkpoint =
      checkpoint_override.empty() ? dir / "checkpoint.txt" : fs::path(checkpoint_override);
  write_text(dir / "config.txt", config_echo(a, checkpoint));
  Rng rng(s.train_seed);
  TrainOutcome result;
  try {
    result.model = train(a.config, s.data, s.prior, std::move(s.decoder), rng,
                         [&](const TrainedModel& m, std::size_t epoch) {
                           const auto& h = m.history.back();
                           out << "epoch " << epoch << " objective " << format_double(h.objective)
                               << '\n';
                         });
  } catch (const TrainingAborted& e) {
    write_diagnostics_csv(dir / "diagnostics.csv", e.history());
    err << "training aborted: " << e.what() << '\n';
    result.aborted = true;
    return result;
  }
  save_checkpoint(checkpoint, result.model);
  write_diagnostics_csv(dir / "diagnostics.csv", result.model.history);
  return result;
}

int cmd_train(ModelArgs& a, const std::string& out_dir, const std::string& checkpoint,
              std::ostream& out, std::ostream& err) {
  const TrainOutcome r = train_into(a, out_dir, out, err, checkpoint);
  return r.aborted ? kExitTrainingAborted : 0;
}

// ---------------------------------------------------------------------------
// evaluation options shared by evaluate and sweep

struct EvalArgs {
  std::string means;
  double sigma = 0.05;
  std::size_t n_samples = 2000;
  std::size_t n_mmd = 2000;
  std::uint64_t seed = 0;
  std::string sample_mode = "observation";
};

void add_eval_options(CLI::App* cmd, EvalArgs& e, bool with_seed) {
  cmd->add_option("--means", e.means, "ground-truth component means CSV");
  cmd->add_option("--sigma", e.sigma, "component standard deviation for the density ratio");
  cmd->add_option("--n-samples", e.n_samples, "generated samples for mixture metrics");
  cmd->add_option("--n-mmd", e.n_mmd, "aggregate-posterior and prior draws");
  cmd->add_option("--sample-mode", e.sample_mode)->check(CLI::IsMember({"observation", "mean"}));
  if (with_seed) {
    cmd->add_option("--seed", e.seed);
  }
}

RunMetrics evaluate_with(const TrainedModel& model, const EmpiricalMeasure& data,
                         const EvalArgs& e) {
  EvaluationOptions opts;
  opts.n_samples = e.n_samples;
  opts.n_mmd = e.n_mmd;
  opts.sigma = e.sigma;
  opts.noisy_samples = e.sample_mode == "observation";
  opts.seed = e.seed;
  std::optional<Tensor2> means;
  if (!e.means.empty()) {
    require_file(e.means, "means file");
    means = load_matrix_csv(e.means);
  }
  return evaluate_model(model, data, means ? &*means : nullptr, opts);
}

void print_report(std::ostream& out, const RunMetrics& m) {
  auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string("none");
  };
  out << "high_density_ratio " << opt(m.high_density_ratio) << '\n'
      << "std_within_modes " << opt(m.std_within_modes) << '\n'
      << "mmd " << format_double(m.mmd) << '\n'
      << "mmd_bandwidth " << format_double(m.mmd_bandwidth) << '\n'
      << "ess_min " << format_double(m.ess_min) << '\n'
      << "seed " << m.seed << '\n';
}

struct EvaluateArgs {
  std::string samples;
  std::string checkpoint;
  std::string data;
  std::string out;
  EvalArgs eval;
};

// Mixture metrics of an existing sample file; no model, so no MMD.
int evaluate_samples(const EvaluateArgs& a, std::ostream& out) {
  require_file(a.samples, "samples file");
  if (a.eval.means.empty()) {
    throw std::invalid_argument("evaluate --samples needs --means");
  }
  require_file(a.eval.means, "means file");
  const MixtureMetrics mm =
      high_density_ratio(load_matrix_csv(a.samples), load_matrix_csv(a.eval.means), a.eval.sigma);
  RunMetrics m;
  m.high_density_ratio = mm.high_density_ratio;
  m.std_within_modes = mm.std_within_modes;
  m.mmd = m.mmd_bandwidth = m.ess_min = std::numeric_limits<double>::quiet_NaN();
  m.seed = a.eval.seed;
  write_text(a.out, metrics_json(m));
  print_report(out, m);
  return 0;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (!a.samples.empty()) {
    return evaluate_samples(a, out);
  }
  if (a.checkpoint.empty() || a.data.empty()) {
    throw std::invalid_argument("evaluate needs --checkpoint and --data, or --samples");
  }
  require_file(a.checkpoint, "checkpoint");
  require_file(a.data, "data file");
  const TrainedModel model = load_checkpoint(a.checkpoint);
  const EmpiricalMeasure data = load_csv(a.data);
  const RunMetrics m = evaluate_with(model, data, a.eval);
  write_text(a.out, metrics_json(m));
  print_report(out, m);
  return 0;
}

struct SweepArgs {
  ModelArgs model;
  std::string epsilons = "0.1,0.5,1.0";
  std::string out;
  EvalArgs eval;
};

int cmd_sweep(SweepArgs& a, std::ostream& out, std::ostream& err) {
  const std::vector<double> eps = parse_list(a.epsilons);
  if (eps.empty()) {
    throw std::invalid_argument("--epsilons is empty");
  }
  fs::create_directories(a.out);
  std::ostringstream table;
  table << "epsilon,high_density_ratio,std_within_modes,mmd,mmd_bandwidth,ess_min,final_objective,"
           "status\n";
  bool any_aborted = false;
  for (double e : eps) {
    ModelArgs run = a.model;
    run.config.epsilon = e;
    const fs::path dir = fs::path(a.out) / ("eps_" + format_double(e));
    out << "== epsilon " << format_double(e) << '\n';
    const TrainOutcome r = train_into(run, dir, out, err);
    if (r.aborted) {
      any_aborted = true;
      table << format_double(e) << ",,,,,,,aborted\n";
      continue;
    }
    EvalArgs ev = a.eval;
    ev.seed = a.model.config.seed;
    const RunMetrics m = evaluate_with(r.model, load_csv(run.data), ev);
    write_text(dir / "metrics.json", metrics_json(m));
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    table << format_double(e) << ',' << opt(m.high_density_ratio) << ','
          << opt(m.std_within_modes) << ',' << format_double(m.mmd) << ','
          << format_double(m.mmd_bandwidth) << ',' << format_double(m.ess_min) << ','
          << format_double(r.model.history.back().objective) << ",ok\n";
  }
  write_text(fs::path(a.out) / "sweep.csv", table.str());
  out << table.str();
  return any_aborted ? kExitTrainingAborted : 0;
}

// ---------------------------------------------------------------------------
// sample / encode / interpolate

struct SampleArgs {
  std::string checkpoint;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  bool noisy = false;
  std::string out;
};

int cmd_sample(const SampleArgs& a, std::ostream& out) {
  require_file(a.checkpoint, "checkpoint");
  const TrainedModel model = load_checkpoint(a.checkpoint);
  Rng rng(a.seed);
  const Tensor2 z = decoder_inputs(model.prior, prior_sample(model.prior, a.n, rng));
  const Tensor2 x = a.noisy ? sample_observation(model.decoder, z, rng)
                            : decode_mean(model.decoder, z);
  save_matrix_csv(a.out, x);
  out << "wrote " << x.rows() << " samples\n";
  return 0;
}

struct EncodeArgs {
  std::string checkpoint;
  std::string data;
  std::uint64_t seed = 0;
  std::size_t pool = 1024;
  std::string out;
};

int cmd_encode(const EncodeArgs& a, std::ostream& out) {
  require_file(a.checkpoint, "checkpoint");
  require_file(a.data, "data file");
  const TrainedModel model = load_checkpoint(a.checkpoint);
  const EmpiricalMeasure data = load_csv(a.data);
  Rng rng(a.seed);
  AggregateOptions opts;
  opts.pool_size = a.pool;
  const LatentCodes codes = latent_representation(model, data, rng, opts);
  save_matrix_csv(a.out, codes.Z);
  out << "wrote " << codes.Z.rows() << " latent codes\n";
  return 0;
}

struct InterpolateArgs {
  std::string checkpoint;
  std::string from;
  std::string to;
  std::size_t steps = 11;
  std::string out;
};

int cmd_interpolate(const InterpolateArgs& a, std::ostream& out) {
  require_file(a.checkpoint, "checkpoint");
  const TrainedModel model = load_checkpoint(a.checkpoint);
  const auto z0 = parse_list(a.from);
  const auto z1 = parse_list(a.to);
  const std::size_t dz = model.decoder.latent_dim();
  if (z0.size() != dz || z1.size() != dz || a.steps < 2) {
    throw std::invalid_argument("interpolate: endpoints need " + std::to_string(dz) +
                                " coordinates and steps >= 2");
  }
  Tensor2 z(a.steps, dz);
  for (std::size_t s = 0; s < a.steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(a.steps - 1);
    for (std::size_t d = 0; d < dz; ++d) {
      z(s, d) = (1.0 - t) * z0[d] + t * z1[d];
    }
  }
  const Tensor2 x = decode_mean(model.decoder, z);
  Tensor2 rows(a.steps, dz + x.cols());
  for (std::size_t s = 0; s < a.steps; ++s) {
    std::copy(z.row(s).begin(), z.row(s).end(), rows.row(s).begin());
    std::copy(x.row(s).begin(), x.row(s).end(), rows.row(s).begin() + static_cast<long>(dz));
  }
  save_matrix_csv(a.out, rows);
  out << "wrote " << a.steps << " interpolation rows (z then decoded mean)\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Entropic-OT variational autoencoder workbench"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  GenerateArgs gen;
  add_generate(app, gen);

  ModelArgs train_args;
  std::string train_out;
  std::string train_checkpoint;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, diagnostics, config");
  add_model_options(train_cmd, train_args);
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--checkpoint", train_checkpoint, "checkpoint path (default OUT/checkpoint.txt)");

  SampleArgs sample_args;
  auto* sample_cmd = app.add_subcommand("sample", "Decode prior draws");
  sample_cmd->add_option("--checkpoint", sample_args.checkpoint)->required();
  sample_cmd->add_option("--n", sample_args.n, "number of samples");
  sample_cmd->add_option("--seed", sample_args.seed);
  sample_cmd->add_flag("--noisy", sample_args.noisy, "draw x ~ p(x|z) instead of decoder means");
  sample_cmd->add_option("--out", sample_args.out)->required();

  EncodeArgs encode_args;
  auto* encode_cmd = app.add_subcommand("encode", "Posterior-mean latent codes of a dataset");
  encode_cmd->add_option("--checkpoint", encode_args.checkpoint)->required();
  encode_cmd->add_option("--data", encode_args.data)->required();
  encode_cmd->add_option("--seed", encode_args.seed);
  encode_cmd->add_option("--pool", encode_args.pool, "prior draws for the importance estimate");
  encode_cmd->add_option("--out", encode_args.out)->required();

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Mixture metrics and aggregate-posterior MMD");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint);
  eval_cmd->add_option("--data", eval_args.data);
  eval_cmd->add_option("--samples", eval_args.samples, "score this sample CSV instead of a model")
      ->excludes("--checkpoint");
  eval_cmd->add_option("--out", eval_args.out, "metrics JSON")->required();
  add_eval_options(eval_cmd, eval_args.eval, true);

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate over a list of epsilons");
  add_model_options(sweep_cmd, sweep_args.model);
  sweep_cmd->add_option("--epsilons", sweep_args.epsilons, "comma-separated epsilons");
  sweep_cmd->add_option("--out", sweep_args.out, "output directory")->required();
  add_eval_options(sweep_cmd, sweep_args.eval, false);

  InterpolateArgs interp_args;
  auto* interp_cmd = app.add_subcommand("interpolate", "Decode a straight latent path");
  interp_cmd->add_option("--checkpoint", interp_args.checkpoint)->required();
  interp_cmd->add_option("--from", interp_args.from, "start latent, comma-separated")->required();
  interp_cmd->add_option("--to", interp_args.to, "end latent, comma-separated")->required();
  interp_cmd->add_option("--steps", interp_args.steps);
  interp_cmd->add_option("--out", interp_args.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (app.got_subcommand("generate-data")) return cmd_generate(gen, out);
    if (app.got_subcommand("train")) return cmd_train(train_args, train_out, train_checkpoint, out, err);
    if (app.got_subcommand("sample")) return cmd_sample(sample_args, out);
    if (app.got_subcommand("encode")) return cmd_encode(encode_args, out);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(eval_args, out);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_args, out, err);
    if (app.got_subcommand("interpolate")) return cmd_interpolate(interp_args, out);
  } catch (const MissingInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingInput;
  } catch (const IdxReadError& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == IdxError::FileNotFound ? kExitMissingInput : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace cvae::cli
