// Command line front end: dataset generation, joint training, evaluation,
// noise sweeps and a finite-difference gradient check.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rkdl/rkdl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct DataOpts {
  std::string example = "fhn";
  double noise = 0.05;
  bool absolute_noise = false;
  std::uint64_t seed = 0;
  std::size_t samples = 0;     // 0 = preset
  double t1 = 0.0;             // 0 = preset
  std::size_t grid_n = 0;      // 0 = preset
  std::size_t steps = 0;       // 0 = preset
  std::size_t stride = 1;
  std::size_t space_stride = 1;
  std::size_t max_snapshots = 0;
  double keep_fraction = 1.0;
  std::string data_csv;        // reuse an existing dataset instead of generating
};

struct TrainOpts {
  std::size_t epochs = 0;  // 0 = preset
  bool epochs_set = false;
  double lr_implicit = 0.0, lr_dynamics = 0.0, weight_decay = -1.0;
  double lambda_rk = -1.0, lambda_grad = -1.0;
  std::size_t log_every = 500;
  std::string batch = "sample";
  std::string out = "run";
};

struct EvalGates {
  double max_rmse_ratio = -1.0;
  double min_cosine = -2.0;
  double max_field_rel_l2 = -1.0;
  double max_denoise_rel_l2 = -1.0;
  double max_dynamics_rel_l2 = -1.0;
};

void add_data_options(CLI::App* cmd, DataOpts& d) {
  cmd->add_option("--example", d.example, "benchmark preset: fhn, cubic, burgers, ks")
      ->check(CLI::IsMember(rkdl::preset_names()));
  cmd->add_option("--noise", d.noise, "noise level (fraction of each channel's std)");
  cmd->add_flag("--absolute-noise", d.absolute_noise, "treat --noise as an absolute stddev");
  cmd->add_option("--seed", d.seed, "RNG seed for data noise and network init");
  cmd->add_option("--samples", d.samples, "override measurement count (trajectory presets)");
  cmd->add_option("--t1", d.t1, "override final time (trajectory presets)");
  cmd->add_option("--grid", d.grid_n, "override grid size (field presets, power of two)");
  cmd->add_option("--steps", d.steps, "override time step count (field presets)");
  cmd->add_option("--stride", d.stride, "keep every stride-th measurement in time");
  cmd->add_option("--space-stride", d.space_stride, "keep every stride-th grid point (field presets)");
  cmd->add_option("--max-snapshots", d.max_snapshots, "cap snapshot count after striding (field presets)");
  cmd->add_option("--keep-fraction", d.keep_fraction, "random fraction of measurements to keep (trajectory presets)");
  cmd->add_option("--data", d.data_csv, "train on this dataset CSV instead of generating");
}

rkdl::ExamplePreset resolved_preset(const DataOpts& d) {
  rkdl::ExamplePreset p = rkdl::preset(d.example);
  if (p.kind == rkdl::ExampleKind::ode) {
    if (d.samples) p.samples = d.samples;
    if (d.t1 > 0.0) p.t1 = d.t1;
  } else {
    if (d.grid_n) {
      rkdl::detail::require(rkdl::fft::is_power_of_two(d.grid_n), "rkdl",
                            "--grid must be a power of two");
      p.grid.n = d.grid_n;
    }
    if (d.steps) p.steps = d.steps;
  }
  return p;
}

rkdl::NoiseSpec noise_spec(const DataOpts& d) {
  return {d.noise, d.absolute_noise ? rkdl::NoiseScale::absolute : rkdl::NoiseScale::channel_std};
}

rkdl::OdeDataset make_ode_data(const rkdl::ExamplePreset& p, const DataOpts& d) {
  rkdl::OdeDataset ds = d.data_csv.empty()
                            ? rkdl::preset_ode_dataset(p, noise_spec(d), d.seed)
                            : rkdl::read_ode_csv(d.data_csv);
  if (d.stride > 1) ds = rkdl::subsample_stride(ds, d.stride);
  if (d.keep_fraction < 1.0) ds = rkdl::subsample_keep(ds, d.keep_fraction, d.seed + 3);
  return ds;
}

rkdl::PdeDataset make_pde_data(const rkdl::ExamplePreset& p, const DataOpts& d) {
  rkdl::PdeDataset ds = d.data_csv.empty()
                            ? rkdl::preset_pde_dataset(p, noise_spec(d), d.seed)
                            : rkdl::read_pde_csv(d.data_csv);
  if (d.stride > 1 || d.space_stride > 1 || d.max_snapshots)
    ds = rkdl::subsample_pde(ds, d.stride, d.space_stride, d.max_snapshots);
  return ds;
}

json data_json(const DataOpts& d) {
  return json{{"example", d.example},
              {"noise", d.noise},
              {"absolute_noise", d.absolute_noise},
              {"seed", d.seed},
              {"samples", d.samples},
              {"t1", d.t1},
              {"grid", d.grid_n},
              {"steps", d.steps},
              {"stride", d.stride},
              {"space_stride", d.space_stride},
              {"max_snapshots", d.max_snapshots},
              {"keep_fraction", d.keep_fraction},
              {"data", d.data_csv}};
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  rkdl::detail::require(bool(out), "rkdl", "cannot open " + path.string());
  out << j.dump(2) << "\n";
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  rkdl::detail::require(bool(in), "rkdl", "cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

unsigned thread_cap() {
  unsigned cap = std::thread::hardware_concurrency();
  if (cap == 0) cap = 1;
  if (const char* env = std::getenv("RKDL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) cap = std::min<unsigned>(cap, unsigned(v));
  }
  return cap;
}

void write_history_csv(const fs::path& path, const std::vector<rkdl::HistoryRow>& rows) {
  std::ofstream out(path);
  rkdl::detail::require(bool(out), "rkdl", "cannot open " + path.string());
  out << "epoch,mse,rk,grad,total\n";
  for (const auto& r : rows)
    out << r.epoch << "," << rkdl::detail::fmt_double(r.mse) << ","
        << rkdl::detail::fmt_double(r.rk) << "," << rkdl::detail::fmt_double(r.grad) << ","
        << rkdl::detail::fmt_double(r.total) << "\n";
}

rkdl::TrainConfig resolved_train_config(const rkdl::ExamplePreset& p, const TrainOpts& t) {
  rkdl::TrainConfig cfg = p.train;
  if (t.epochs_set) cfg.epochs = t.epochs;
  if (t.lr_implicit > 0.0) cfg.lr_implicit = t.lr_implicit;
  if (t.lr_dynamics > 0.0) cfg.lr_dynamics = t.lr_dynamics;
  if (t.weight_decay >= 0.0) cfg.weight_decay = t.weight_decay;
  if (t.lambda_rk >= 0.0) cfg.weights.rk = t.lambda_rk;
  if (t.lambda_grad >= 0.0) cfg.weights.grad = t.lambda_grad;
  cfg.log_every = t.log_every;
  cfg.batch = t.batch == "full" ? rkdl::BatchMode::full : rkdl::BatchMode::sample;
  return cfg;
}

json train_json(const rkdl::TrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},          {"lr_implicit", cfg.lr_implicit},
              {"lr_dynamics", cfg.lr_dynamics}, {"weight_decay", cfg.weight_decay},
              {"lambda_rk", cfg.weights.rk},    {"lambda_grad", cfg.weights.grad},
              {"log_every", cfg.log_every},
              {"batch", cfg.batch == rkdl::BatchMode::full ? "full" : "sample"},
              {"shuffle_seed", cfg.shuffle_seed}};
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int cmd_generate(const DataOpts& d, const std::string& out_dir) {
  const auto p = resolved_preset(d);
  fs::create_directories(out_dir);
  json cfg{{"command", "generate"}, {"version", rkdl::kVersion}, {"data", data_json(d)}};
  if (p.kind == rkdl::ExampleKind::ode) {
    const auto ds = make_ode_data(p, d);
    rkdl::write_ode_csv((fs::path(out_dir) / "dataset.csv").string(), ds);
    cfg["dataset_hash"] = hash_hex(rkdl::dataset_hash(ds));
    cfg["rows"] = ds.size();
    std::printf("wrote %zu measurements to %s/dataset.csv (hash %s)\n", ds.size(), out_dir.c_str(),
                cfg["dataset_hash"].get<std::string>().c_str());
  } else {
    const auto ds = make_pde_data(p, d);
    rkdl::write_pde_csv((fs::path(out_dir) / "dataset.csv").string(), ds);
    cfg["dataset_hash"] = hash_hex(rkdl::dataset_hash(ds));
    cfg["rows"] = ds.snapshots() * ds.grid.n;
    std::printf("wrote %zu snapshots x %zu grid points to %s/dataset.csv (hash %s)\n",
                ds.snapshots(), ds.grid.n, out_dir.c_str(),
                cfg["dataset_hash"].get<std::string>().c_str());
  }
  write_json_file(fs::path(out_dir) / "config.json", cfg);
  return 0;
}

// Shared by train and sweep. Logs through `log` so sweep can buffer per level.
int run_train(const DataOpts& d, const TrainOpts& t,
              const std::function<void(const std::string&)>& log) {
  const auto p = resolved_preset(d);
  rkdl::TrainConfig cfg = resolved_train_config(p, t);
  cfg.shuffle_seed = d.seed + 4;
  const fs::path out(t.out);
  fs::create_directories(out / "checkpoints");

  json meta{{"command", "train"},
            {"version", rkdl::kVersion},
            {"data", data_json(d)},
            {"train", train_json(cfg)}};

  rkdl::Rng imp_rng(d.seed + 1);
  rkdl::Rng dyn_rng(d.seed + 2);
  rkdl::ImplicitSineNet implicit(p.implicit, imp_rng);

  auto on_log = [&](const rkdl::HistoryRow& r) {
    std::ostringstream os;
    os << "epoch " << r.epoch << " total " << r.total << " mse " << r.mse << " rk " << r.rk
       << " grad " << r.grad;
    log(os.str());
  };

  rkdl::TrainResult res;
  if (p.kind == rkdl::ExampleKind::ode) {
    const auto ds = make_ode_data(p, d);
    rkdl::write_ode_csv((out / "dataset.csv").string(), ds);
    meta["dataset_hash"] = hash_hex(rkdl::dataset_hash(ds));
    write_json_file(out / "config.json", meta);
    rkdl::ResidualMlp dyn(p.mlp, dyn_rng);
    auto logger = [&](const rkdl::HistoryRow& r) {
      on_log(r);
      rkdl::write_checkpoint((out / "checkpoints" / ("implicit_" + std::to_string(r.epoch) + ".ckpt")).string(),
                             rkdl::make_checkpoint(implicit));
      rkdl::write_checkpoint((out / "checkpoints" / ("dynamics_" + std::to_string(r.epoch) + ".ckpt")).string(),
                             rkdl::make_checkpoint(dyn));
    };
    res = rkdl::train_ode(implicit, dyn, ds, cfg, logger);
    rkdl::write_checkpoint((out / "dynamics.ckpt").string(), rkdl::make_checkpoint(dyn));
  } else {
    const auto ds = make_pde_data(p, d);
    rkdl::write_pde_csv((out / "dataset.csv").string(), ds);
    meta["dataset_hash"] = hash_hex(rkdl::dataset_hash(ds));
    write_json_file(out / "config.json", meta);
    rkdl::ResidualConv1d dyn(p.conv, dyn_rng);
    auto logger = [&](const rkdl::HistoryRow& r) {
      on_log(r);
      rkdl::write_checkpoint((out / "checkpoints" / ("implicit_" + std::to_string(r.epoch) + ".ckpt")).string(),
                             rkdl::make_checkpoint(implicit));
      rkdl::write_checkpoint((out / "checkpoints" / ("dynamics_" + std::to_string(r.epoch) + ".ckpt")).string(),
                             rkdl::make_checkpoint(dyn));
    };
    res = rkdl::train_pde(implicit, dyn, ds, cfg, logger);
    rkdl::write_checkpoint((out / "dynamics.ckpt").string(), rkdl::make_checkpoint(dyn));
  }
  rkdl::write_checkpoint((out / "implicit.ckpt").string(), rkdl::make_checkpoint(implicit));
  write_history_csv(out / "history.csv", res.history);

  json result{{"aborted", res.aborted},
              {"epochs_recorded", res.history.size()},
              {"final", {{"epoch", res.last_finite.epoch},
                         {"total", res.last_finite.total},
                         {"mse", res.last_finite.mse},
                         {"rk", res.last_finite.rk},
                         {"grad", res.last_finite.grad}}}};
  if (res.aborted) result["abort_epoch"] = res.abort_epoch;
  write_json_file(out / "result.json", result);

  if (res.aborted) {
    std::ostringstream os;
    os << "training aborted: loss became non-finite at epoch " << res.abort_epoch
       << "; last finite breakdown: total " << res.last_finite.total << " mse "
       << res.last_finite.mse << " rk " << res.last_finite.rk << " grad " << res.last_finite.grad;
    log(os.str());
    return 2;
  }
  std::ostringstream os;
  os << "done: " << res.history.size() << " epochs, final total " << res.last_finite.total
     << " (mse " << res.last_finite.mse << " rk " << res.last_finite.rk << " grad "
     << res.last_finite.grad << ")";
  log(os.str());
  return 0;
}

rkdl::Tensor column_grid(const rkdl::VectorFieldEval& ev, const rkdl::Tensor& field,
                         std::size_t c) {
  rkdl::Tensor g({ev.ny, ev.nx});
  for (std::size_t iy = 0; iy < ev.ny; ++iy)
    for (std::size_t ix = 0; ix < ev.nx; ++ix) g.at(iy, ix) = field.at(iy * ev.nx + ix, c);
  return g;
}

int cmd_evaluate(const std::string& run_dir, const std::string& out_dir, std::size_t field_res,
                 const EvalGates& gates) {
  const auto t_start = std::chrono::steady_clock::now();
  const fs::path run(run_dir);
  const fs::path out = out_dir.empty() ? run : fs::path(out_dir);
  fs::create_directories(out);
  const json cfg = read_json_file(run / "config.json");
  const std::string example = cfg.at("data").at("example").get<std::string>();
  const auto p = rkdl::preset(example);
  std::vector<std::pair<std::string, std::string>> report;
  auto note = [&](const std::string& key, double v) {
    report.emplace_back(key, rkdl::detail::fmt_double(v));
  };

  const auto implicit = rkdl::load_implicit_sine(rkdl::read_checkpoint((run / "implicit.ckpt").string()));

  json metrics{{"example", example}, {"version", rkdl::kVersion}};
  bool pass = true;
  auto gate = [&](const char* name, double value, double limit, bool upper) {
    const bool ok = upper ? value <= limit : value >= limit;
    std::printf("%-24s %.6g (%s %.6g) %s\n", name, value, upper ? "limit" : "floor", limit,
                ok ? "ok" : "FAIL");
    if (!ok) pass = false;
  };

  if (p.kind == rkdl::ExampleKind::ode) {
    const auto ds = rkdl::read_ode_csv((run / "dataset.csv").string());
    const auto tf = ds.time_transform();
    auto dyn = rkdl::load_residual_mlp(rkdl::read_checkpoint((run / "dynamics.ckpt").string()));

    const auto dm = rkdl::denoise_metrics(implicit, ds, tf);
    json per_channel = json::array();
    double worst_ratio = 0.0;
    for (std::size_t c = 0; c < dm.rmse.size(); ++c) {
      const double ratio = dm.noise_sigma[c] > 0.0 ? dm.rmse[c] / dm.noise_sigma[c] : 0.0;
      worst_ratio = std::max(worst_ratio, ratio);
      per_channel.push_back(json{{"channel", c},
                                 {"rmse", dm.rmse[c]},
                                 {"noise_sigma", dm.noise_sigma[c]},
                                 {"ratio", ratio}});
      std::printf("channel %zu denoise rmse %.6g, noise sigma %.6g, ratio %.4f\n", c, dm.rmse[c],
                  dm.noise_sigma[c], ratio);
      note("denoise_rmse_" + std::to_string(c), dm.rmse[c]);
      note("noise_sigma_" + std::to_string(c), dm.noise_sigma[c]);
    }
    metrics["denoise"] = per_channel;

    rkdl::VectorFieldEval ev;
    if (example == "fhn")
      ev = rkdl::evaluate_vector_field(dyn, rkdl::FhnRhs{}, ds.clean, field_res, field_res);
    else
      ev = rkdl::evaluate_vector_field(dyn, rkdl::CubicRhs{}, ds.clean, field_res, field_res);
    metrics["field"] = json{{"rel_l2", ev.rel_l2},
                            {"mean_cosine", ev.mean_cos},
                            {"mask_points", ev.mask_count},
                            {"grid", field_res}};
    std::printf("vector field rel L2 %.6g, mean cosine %.4f over %zu masked points\n", ev.rel_l2,
                ev.mean_cos, ev.mask_count);
    note("field_rel_l2", ev.rel_l2);
    note("field_mean_cosine", ev.mean_cos);
    note("mask_points", double(ev.mask_count));
    rkdl::write_field_grid_csv((out / "field_grid.csv").string(), ev);

    for (std::size_t c = 0; c < 2; ++c) {
      rkdl::write_heatmap_ppm((out / ("field_learned_" + std::to_string(c) + ".ppm")).string(),
                              column_grid(ev, ev.learned, c));
      rkdl::write_heatmap_ppm((out / ("field_reference_" + std::to_string(c) + ".ppm")).string(),
                              column_grid(ev, ev.reference, c));
    }
    rkdl::Tensor err({ev.ny, ev.nx});
    for (std::size_t iy = 0; iy < ev.ny; ++iy)
      for (std::size_t ix = 0; ix < ev.nx; ++ix) {
        const std::size_t r = iy * ev.nx + ix;
        err.at(iy, ix) = std::hypot(ev.learned.at(r, 0) - ev.reference.at(r, 0),
                                    ev.learned.at(r, 1) - ev.reference.at(r, 1));
      }
    rkdl::write_heatmap_ppm((out / "field_error.ppm").string(), err);

    if (gates.max_rmse_ratio >= 0.0) gate("denoise rmse ratio", worst_ratio, gates.max_rmse_ratio, true);
    if (gates.min_cosine >= -1.0) gate("field mean cosine", ev.mean_cos, gates.min_cosine, false);
    if (gates.max_field_rel_l2 >= 0.0) gate("field rel L2", ev.rel_l2, gates.max_field_rel_l2, true);
  } else {
    const auto ds = rkdl::read_pde_csv((run / "dataset.csv").string());
    const auto tf = ds.space_time_transform();
    auto dyn = rkdl::load_residual_conv1d(rkdl::read_checkpoint((run / "dynamics.ckpt").string()));

    const auto pm = rkdl::evaluate_pde(implicit, dyn, ds, tf);
    metrics["pde"] = json{{"denoise_rel_l2", pm.denoise_rel_l2},
                          {"dynamics_rel_l2", pm.dynamics_rel_l2},
                          {"noise_sigma", ds.noise_sigma}};
    std::printf("field reconstruction rel L2 %.6g, dynamics rel L2 %.6g\n", pm.denoise_rel_l2,
                pm.dynamics_rel_l2);
    note("denoise_rel_l2", pm.denoise_rel_l2);
    note("dynamics_rel_l2", pm.dynamics_rel_l2);

    const auto tfds = rkdl::denoised_snapshots(implicit, ds, tf);
    rkdl::write_heatmap_ppm((out / "field_clean.ppm").string(), ds.clean);
    rkdl::write_heatmap_ppm((out / "field_noisy.ppm").string(), ds.noisy);
    rkdl::write_heatmap_ppm((out / "field_denoised.ppm").string(), tfds);

    if (gates.max_denoise_rel_l2 >= 0.0)
      gate("denoise rel L2", pm.denoise_rel_l2, gates.max_denoise_rel_l2, true);
    if (gates.max_dynamics_rel_l2 >= 0.0)
      gate("dynamics rel L2", pm.dynamics_rel_l2, gates.max_dynamics_rel_l2, true);
  }

  metrics["pass"] = pass;
  write_json_file(out / "metrics.json", metrics);

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  std::ofstream rep(out / "report.txt");
  rep << "example " << example << "\n";
  for (const auto& [k, v] : report) rep << k << " " << v << "\n";
  rep << "runtime_seconds " << rkdl::detail::fmt_double(secs) << "\n";
  rep << "pass " << (pass ? 1 : 0) << "\n";
  rep << "config " << cfg.dump() << "\n";
  return pass ? 0 : 1;
}

int cmd_sweep(const DataOpts& base, const TrainOpts& tbase, std::vector<double> levels,
              std::size_t jobs, std::size_t field_res) {
  std::vector<double> uniq;
  for (double l : levels) {
    if (std::find(uniq.begin(), uniq.end(), l) != uniq.end()) {
      std::fprintf(stderr, "warning: duplicate noise level %g skipped\n", l);
      continue;
    }
    uniq.push_back(l);
  }
  rkdl::detail::require(!uniq.empty(), "sweep", "no noise levels given");

  const fs::path out(tbase.out);
  fs::create_directories(out);
  jobs = std::max<std::size_t>(1, std::min<std::size_t>({jobs, uniq.size(), thread_cap()}));

  struct Row {
    double level;
    std::string dir;
    int status = -1;
    std::string error;
    std::string log;
  };
  std::vector<Row> rows(uniq.size());

  auto worker = [&](std::size_t i) {
    Row& row = rows[i];
    row.level = uniq[i];
    std::ostringstream name;
    name << "level_" << uniq[i];
    row.dir = (out / name.str()).string();
    DataOpts d = base;
    d.noise = uniq[i];
    TrainOpts t = tbase;
    t.out = row.dir;
    std::ostringstream buf;
    try {
      const int rc = run_train(d, t, [&](const std::string& line) { buf << "  " << line << "\n"; });
      row.status = rc;
      if (rc == 0) {
        // metrics only; gating is left to a separate evaluate call
        buf << "  evaluate:\n";
        row.status = cmd_evaluate(row.dir, "", field_res, EvalGates{});
      }
    } catch (const std::exception& e) {
      row.status = 3;
      row.error = e.what();
      buf << "  error: " << e.what() << "\n";
    }
    row.log = buf.str();
  };

  std::size_t next = 0;
  std::mutex mu;
  auto pump = [&]() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= rows.size()) return;
        i = next++;
      }
      worker(i);
    }
  };
  if (jobs == 1) {
    pump();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(pump);
    for (auto& th : pool) th.join();
  }

  std::ofstream summary(out / "summary.csv");
  summary << "level,status,dir\n";
  bool all_ok = true;
  for (const auto& row : rows) {
    std::printf("level %g -> %s (status %d)\n%s", row.level, row.dir.c_str(), row.status,
                row.log.c_str());
    summary << rkdl::detail::fmt_double(row.level) << "," << row.status << "," << row.dir << "\n";
    if (row.status != 0) all_ok = false;
  }
  if (!all_ok) std::fprintf(stderr, "sweep finished with failures; see summary.csv\n");
  return all_ok ? 0 : 1;
}

int cmd_gradcheck(std::size_t width, std::size_t depth, std::size_t samples, double noise,
                  std::uint64_t seed, double step, double threshold) {
  rkdl::Rng rng(seed);
  rkdl::ImplicitSineNet imp({1, 2, width, depth, 30.0}, rng);
  rkdl::ResidualMlp dyn({2, 2, width, depth}, rng);
  auto ds = rkdl::make_ode_dataset(rkdl::FhnRhs{}, rkdl::Tensor::vector({2.0, 0.0}), 0.0, 4.0,
                                   samples, {noise, rkdl::NoiseScale::channel_std}, seed + 1);
  const auto tf = ds.time_transform();
  const rkdl::LossWeights w{1.0, 1.0};

  rkdl::Tape t;
  auto pi = imp.bind(t);
  auto pd = dyn.bind(t);
  auto terms = rkdl::build_ode_loss(t, imp, pi, dyn, pd, ds, tf, w);
  auto grads = t.backward(terms.total);
  std::vector<std::vector<rkdl::Tensor>> analytic(2);
  for (rkdl::Var v : pi) analytic[0].push_back(grads.take(v));
  for (rkdl::Var v : pd) analytic[1].push_back(grads.take(v));

  auto loss_value = [&]() {
    rkdl::Tape tt;
    auto qi = imp.bind(tt);
    auto qd = dyn.bind(tt);
    return rkdl::read_loss(rkdl::build_ode_loss(tt, imp, qi, dyn, qd, ds, tf, w)).total;
  };
  const auto rep = rkdl::check_gradients({&imp.store(), &dyn.store()}, analytic, loss_value, step);
  std::printf("checked %zu parameters\n", rep.checked);
  std::printf("max rel error %.6e (abs %.6e) at %s[%zu]\n", rep.max_rel_err, rep.max_abs_err,
              rep.worst_param.c_str(), rep.worst_index);
  const bool ok = rep.max_rel_err < threshold;
  std::printf("threshold %.1e: %s\n", threshold, ok ? "ok" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint denoising and dynamics learning with a Runge-Kutta constraint"};
  app.require_subcommand(1);
  app.set_config("--config");

  DataOpts d;
  TrainOpts t;
  EvalGates gates;
  std::string out_dir = "run";
  std::string run_dir;
  std::string eval_out;
  std::size_t field_res = 40;
  std::vector<double> levels;
  std::size_t jobs = 1;
  std::size_t gc_width = 8, gc_depth = 2, gc_samples = 16;
  double gc_step = 1e-6, gc_threshold = 1e-4;
  std::uint64_t gc_seed = 3;

  auto* gen = app.add_subcommand("generate", "generate a dataset CSV");
  add_data_options(gen, d);
  gen->add_option("--out", out_dir, "output directory");

  auto* train = app.add_subcommand("train", "train the joint model on a dataset");
  add_data_options(train, d);
  auto* epochs_opt = train->add_option("--epochs", t.epochs, "training epochs");
  train->add_option("--lr-implicit", t.lr_implicit, "learning rate of the implicit network");
  train->add_option("--lr-dynamics", t.lr_dynamics, "learning rate of the dynamics network");
  train->add_option("--lambda-rk", t.lambda_rk, "weight of the integration-step term");
  train->add_option("--lambda-grad", t.lambda_grad, "weight of the time-derivative term");
  train->add_option("--weight-decay", t.weight_decay, "coupled L2 strength");
  train->add_option("--log-every", t.log_every, "epochs between progress lines and checkpoints");
  train->add_option("--batch", t.batch, "optimizer step granularity: sample or full")
      ->check(CLI::IsMember({"sample", "full"}));
  train->add_option("--out", t.out, "run directory");

  auto* ev = app.add_subcommand("evaluate", "compute metrics for a finished run");
  ev->add_option("--run", run_dir, "run directory from train")->required();
  ev->add_option("--out", eval_out, "where to write metrics and images (default: run dir)");
  ev->add_option("--field-res", field_res, "vector field grid resolution");
  ev->add_option("--max-rmse-ratio", gates.max_rmse_ratio, "fail if rmse/sigma exceeds this");
  ev->add_option("--min-cosine", gates.min_cosine, "fail if mean field cosine is below this");
  ev->add_option("--max-field-rel-l2", gates.max_field_rel_l2, "fail if field rel L2 exceeds this");
  ev->add_option("--max-denoise-rel-l2", gates.max_denoise_rel_l2, "fail if reconstruction rel L2 exceeds this");
  ev->add_option("--max-dynamics-rel-l2", gates.max_dynamics_rel_l2, "fail if dynamics rel L2 exceeds this");

  auto* sweep = app.add_subcommand("sweep", "train and evaluate across noise levels");
  add_data_options(sweep, d);
  auto* sweep_epochs = sweep->add_option("--epochs", t.epochs, "training epochs");
  sweep->add_option("--lr-implicit", t.lr_implicit, "learning rate of the implicit network");
  sweep->add_option("--lr-dynamics", t.lr_dynamics, "learning rate of the dynamics network");
  sweep->add_option("--lambda-rk", t.lambda_rk, "weight of the integration-step term");
  sweep->add_option("--lambda-grad", t.lambda_grad, "weight of the time-derivative term");
  sweep->add_option("--weight-decay", t.weight_decay, "coupled L2 strength");
  sweep->add_option("--log-every", t.log_every, "epochs between progress lines and checkpoints");
  sweep->add_option("--batch", t.batch, "optimizer step granularity: sample or full")
      ->check(CLI::IsMember({"sample", "full"}));
  sweep->add_option("--out", t.out, "sweep directory");
  sweep->add_option("--levels", levels, "noise levels to sweep")->required()->delimiter(',');
  sweep->add_option("--jobs", jobs, "parallel level runs (capped by RKDL_THREADS)");
  sweep->add_option("--field-res", field_res, "vector field grid resolution");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the loss gradient");
  gc->add_option("--width", gc_width, "network width");
  gc->add_option("--depth", gc_depth, "network depth");
  gc->add_option("--samples", gc_samples, "measurement count");
  gc->add_option("--noise", d.noise, "noise level");
  gc->add_option("--seed", gc_seed, "RNG seed");
  gc->add_option("--step", gc_step, "finite difference step");
  gc->add_option("--threshold", gc_threshold, "max relative error allowed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(d, out_dir);
    if (train->parsed()) {
      t.epochs_set = epochs_opt->count() > 0;
      return run_train(d, t, [](const std::string& line) { std::printf("%s\n", line.c_str()); });
    }
    if (ev->parsed()) return cmd_evaluate(run_dir, eval_out, field_res, gates);
    if (sweep->parsed()) {
      t.epochs_set = sweep_epochs->count() > 0;
      return cmd_sweep(d, t, levels, jobs, field_res);
    }
    if (gc->parsed())
      return cmd_gradcheck(gc_width, gc_depth, gc_samples, d.noise, gc_seed, gc_step, gc_threshold);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
