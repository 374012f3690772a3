#include "commands.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "disperse/encoder.hpp"
#include "disperse/eval.hpp"
#include "disperse/io.hpp"
#include "disperse/report.hpp"
#include "disperse/rng.hpp"
#include "disperse/synth.hpp"
#include "disperse/unlearn.hpp"

namespace disperse::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kLeakageThreshold = 0.8;

struct Context {
  config::ExperimentConfig cfg;
  std::string out_dir;
  json echo;              // full canonical config echo
  std::uint64_t full_hash = 0;
  std::uint64_t data_hash = 0;
  std::uint64_t model_hash = 0;  // over data + encoder + train
};

Context load_context(const CommonArgs& args) {
  if (args.config_path.empty())
    throw std::invalid_argument("--config is required");
  Context ctx;
  ctx.cfg = config::load_config_file(args.config_path);
  if (args.seed) ctx.cfg.eval.seeds = {*args.seed};
  if (args.out) ctx.cfg.output_dir = *args.out;
  ctx.out_dir = ctx.cfg.output_dir;
  ctx.echo = config::config_to_json(ctx.cfg);
  ctx.full_hash = config::config_hash(ctx.echo);
  ctx.data_hash = config::config_hash(ctx.echo.at("data"));
  ctx.model_hash = config::config_hash(json{{"data", ctx.echo.at("data")},
                                            {"encoder", ctx.echo.at("encoder")},
                                            {"train", ctx.echo.at("train")}});
  return ctx;
}

std::string dataset_path(const Context& c) { return c.out_dir + "/dataset.bin"; }
std::string split_path(const Context& c, std::uint64_t seed) {
  return c.out_dir + "/split_s" + std::to_string(seed) + ".bin";
}
std::string model_path(const Context& c) { return c.out_dir + "/model.bin"; }
std::string method_dir(const Context& c, const std::string& method,
                       std::uint64_t seed) {
  return c.out_dir + "/" + method + "/seed" + std::to_string(seed);
}

json base_meta(const Context& c) {
  return json{{"tool_version", config::kToolVersion},
              {"config_hash", config::hash_hex(c.full_hash)},
              {"config", c.echo}};
}

void write_json(const std::string& path, const json& j) {
  io::ensure_parent_dir(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  io::ensure_parent_dir(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

data::SyntheticDataset make_dataset(const Context& c) {
  const auto& d = c.cfg.data;
  return data::generate(d.num_identities, d.per_identity, d.input_dim, d.seed,
                        d.noise_std, d.prototype_dim, d.duplicate_fraction);
}

data::SyntheticDataset load_or_fail_dataset(const Context& c) {
  if (!fs::exists(dataset_path(c)))
    throw std::invalid_argument("dataset not found; run 'generate' first: " +
                                dataset_path(c));
  return data::load_dataset(dataset_path(c));
}

data::SplitPlan load_or_fail_split(const Context& c, std::uint64_t seed) {
  if (!fs::exists(split_path(c, seed)))
    throw std::invalid_argument("split not found; run 'generate' first: " +
                                split_path(c, seed));
  return data::load_split(split_path(c, seed));
}

model::EncoderModel load_or_fail_model(const Context& c) {
  if (!fs::exists(model_path(c)))
    throw std::invalid_argument("model not found; run 'train' first: " +
                                model_path(c));
  const auto stored = model::snapshot_config_hash(model_path(c));
  if (stored != c.model_hash)
    throw std::invalid_argument(
        "model snapshot was produced by a different data/encoder/train "
        "config (hash " +
        config::hash_hex(stored) + " vs " + config::hash_hex(c.model_hash) +
        "); retrain or fix the config");
  return model::load_model(model_path(c));
}

unlearn::UnlearnConfig cell_config(const Context& c, const std::string& method,
                                   std::uint64_t seed) {
  auto u = c.cfg.unlearn;
  if (!method.empty()) {
    const auto m = unlearn::parse_method(method);
    if (!m) {
      std::string valid = "dispersion, hard-dispersion, random-labeling, "
                          "gradient-ascent, boundary-shrink, lipschitz, "
                          "contrastive";
      throw std::invalid_argument("unknown method '" + method +
                                  "' (valid: " + valid + ")");
    }
    u.method = *m;
  }
  u.seed = seed;
  return u;
}

eval::BenchmarkSettings bench_settings(const Context& c) {
  eval::BenchmarkSettings s;
  s.mode = c.cfg.eval.mode;
  s.base_distractors = c.cfg.eval.base_distractors;
  s.extra_distractors = c.cfg.eval.extra_distractors;
  return s;
}

eval::EmbeddingSet embedding_set(const model::EncoderModel& m,
                                 const std::vector<data::LabeledSample>& samples,
                                 const std::vector<std::size_t>& idx) {
  eval::EmbeddingSet set;
  set.embeddings = model::embed(m, data::stack_inputs(samples, idx)).detached();
  set.identities = data::labels_of(samples, idx);
  set.sample_ids.assign(idx.begin(), idx.end());
  return set;
}

void dump_embeddings(const std::string& dir, const model::EncoderModel& m,
                     const std::vector<data::LabeledSample>& samples,
                     const data::SplitPlan& split, const std::string& suffix) {
  const auto forget = split.sample_indices(data::Assignment::kForgetTest);
  const auto retain = split.sample_indices(data::Assignment::kRetainTest);
  eval::write_embedding_dump(dir + "/embdump_forget_" + suffix + ".csv",
                             embedding_set(m, samples, forget));
  eval::write_embedding_dump(dir + "/embdump_retain_" + suffix + ".csv",
                             embedding_set(m, samples, retain));
}

json leakage_to_json(const data::LeakageReport& rep) {
  return json{{"max_cosine", rep.max_cosine},
              {"histogram", rep.histogram},
              {"flagged_pairs", rep.flagged.size()},
              {"threshold", kLeakageThreshold}};
}

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int cmd_generate(const CommonArgs& args) {
  return run_guarded([&] {
    const Context ctx = load_context(args);
    const auto ds = make_dataset(ctx);
    data::save_dataset(ds, dataset_path(ctx), ctx.data_hash);
    std::cout << "wrote " << dataset_path(ctx) << " (" << ds.samples.size()
              << " samples, " << ds.num_identities << " identities)\n";
    for (const auto seed : ctx.cfg.eval.seeds) {
      const auto split =
          data::make_split(ds, ctx.cfg.data.n_forget, ctx.cfg.data.train_frac,
                           seed, ctx.cfg.data.distractor_multiplier);
      data::save_split(split, split_path(ctx, seed), ctx.data_hash);
      std::cout << "wrote " << split_path(ctx, seed) << " ("
                << split.forget_identities.size() << " forget identities, "
                << split.distractors.size() << " distractors)\n";
    }
  });
}

int cmd_train(const CommonArgs& args) {
  return run_guarded([&] {
    const Context ctx = load_context(args);
    if (fs::exists(model_path(ctx))) {
      const auto stored = model::snapshot_config_hash(model_path(ctx));
      if (stored == ctx.model_hash && !args.force) {
        std::cout << "model snapshot already matches this config, reusing "
                  << model_path(ctx) << "\n";
        return;
      }
      if (stored != ctx.model_hash)
        throw std::invalid_argument(
            "refusing to overwrite " + model_path(ctx) +
            ": existing snapshot was trained under a different config (hash " +
            config::hash_hex(stored) + "); use --force or a fresh --out");
    }

    const auto ds = load_or_fail_dataset(ctx);
    const auto split = load_or_fail_split(ctx, ctx.cfg.eval.seeds.front());

    auto train_idx = split.sample_indices(data::Assignment::kForgetTrain);
    {
      const auto r = split.sample_indices(data::Assignment::kRetainTrain);
      train_idx.insert(train_idx.end(), r.begin(), r.end());
      std::sort(train_idx.begin(), train_idx.end());
    }
    const auto start = model::make_encoder(
        ds.input_dim, ctx.cfg.encoder.embed_dim, ds.num_identities,
        ctx.cfg.encoder.hidden, ctx.cfg.encoder.scale_s,
        ctx.cfg.encoder.margin_m, ctx.cfg.train.seed);
    const auto res =
        model::train(start, data::stack_inputs(ds.samples, train_idx),
                     data::labels_of(ds.samples, train_idx), ctx.cfg.train);
    model::save_model(res.model, model_path(ctx), ctx.model_hash);

    std::ostringstream csv;
    csv << "epoch,mean_loss\n";
    char buf[32];
    for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
      std::snprintf(buf, sizeof buf, "%.17g", res.epoch_loss[e]);
      csv << e << "," << buf << "\n";
    }
    write_text(ctx.out_dir + "/loss_curve.csv", csv.str());

    // identity-leakage audit between forget and distractor centroids,
    // per forget-set draw, using the freshly trained encoder
    json leaks = json::object();
    for (const auto seed : ctx.cfg.eval.seeds) {
      const auto sp = load_or_fail_split(ctx, seed);
      const auto forget_train =
          sp.sample_indices(data::Assignment::kForgetTrain);
      const auto fset = embedding_set(res.model, ds.samples, forget_train);
      const auto fcent = model::class_centroids(
          fset.embeddings, fset.identities, sp.forget_identities);

      std::vector<std::size_t> didx(sp.distractors.size());
      for (std::size_t i = 0; i < didx.size(); ++i) didx[i] = i;
      const auto dset = embedding_set(res.model, sp.distractors, didx);
      std::vector<std::size_t> dids(dset.identities);
      std::sort(dids.begin(), dids.end());
      dids.erase(std::unique(dids.begin(), dids.end()), dids.end());
      const auto dcent =
          model::class_centroids(dset.embeddings, dset.identities, dids);
      const auto rep = data::leakage_check(fcent, sp.forget_identities, dcent,
                                           dids, kLeakageThreshold);
      leaks["seed" + std::to_string(seed)] = leakage_to_json(rep);
      if (!rep.flagged.empty())
        std::cout << "warning: seed " << seed << " has " << rep.flagged.size()
                  << " centroid pairs above the leakage threshold\n";
    }
    json out = base_meta(ctx);
    out["leakage"] = leaks;
    write_json(ctx.out_dir + "/leakage.json", out);

    std::cout << "wrote " << model_path(ctx) << " (final epoch loss "
              << res.epoch_loss.back() << ")\n";
  });
}

int cmd_unlearn(const CommonArgs& args, const std::string& method) {
  return run_guarded([&] {
    const Context ctx = load_context(args);
    for (const auto& [k, v] : ctx.cfg.unlearn_raw.items())
      if (v.is_array())
        throw std::invalid_argument("unlearn." + k +
                                    " is a list; use the sweep command");
    const auto ds = load_or_fail_dataset(ctx);
    const auto original = load_or_fail_model(ctx);

    for (const auto seed : ctx.cfg.eval.seeds) {
      const auto split = load_or_fail_split(ctx, seed);
      const auto ucfg = cell_config(ctx, method, seed);
      const auto res = unlearn::run_unlearn(original, ds.samples, split, ucfg);
      const auto dir = method_dir(ctx, unlearn::method_name(ucfg.method), seed);

      const auto cell_hash = config::config_hash(
          json{{"model", config::hash_hex(ctx.model_hash)},
               {"unlearn", config::unlearn_to_json(ucfg)},
               {"seed", seed}});
      model::save_model(res.model, dir + "/unlearned.bin", cell_hash);
      json meta = base_meta(ctx);
      meta["seed"] = seed;
      meta["cell_hash"] = config::hash_hex(cell_hash);
      write_json(dir + "/run.json", report::run_record(res, meta));

      if (!res.abort_reason.empty())
        throw std::runtime_error("unlearning aborted (seed " +
                                 std::to_string(seed) +
                                 "): " + res.abort_reason);
      std::cout << "wrote " << dir << "/unlearned.bin ("
                << res.loss_trace.size() << " iterations, final loss "
                << (res.loss_trace.empty() ? 0.0 : res.loss_trace.back())
                << ")\n";
    }
  });
}

int cmd_evaluate(const CommonArgs& args, const std::string& method) {
  return run_guarded([&] {
    const Context ctx = load_context(args);
    const auto ds = load_or_fail_dataset(ctx);
    const auto original = load_or_fail_model(ctx);
    const auto settings = bench_settings(ctx);
    const bool self_eval = method.empty() || method == "original";
    const std::string mname =
        self_eval ? "original"
                  : unlearn::method_name(cell_config(ctx, method, 0).method);

    std::vector<eval::ReportPair> pairs;
    for (const auto seed : ctx.cfg.eval.seeds) {
      const auto split = load_or_fail_split(ctx, seed);
      const auto dir = method_dir(ctx, mname, seed);
      model::EncoderModel after = original;
      if (!self_eval) {
        const auto path = dir + "/unlearned.bin";
        if (!fs::exists(path))
          throw std::invalid_argument("unlearned snapshot not found; run "
                                      "'unlearn' first: " + path);
        after = model::load_model(path);
      }
      const auto pair =
          eval::full_report(original, after, ds.samples, split, settings);
      pairs.push_back(pair);

      json meta = base_meta(ctx);
      meta["seed"] = seed;
      meta["method"] = mname;
      write_json(dir + "/metrics.json", report::pair_to_json(pair, meta));
      write_text(dir + "/report.md",
                 report::pair_to_markdown(
                     pair, mname + " (forget-set seed " +
                               std::to_string(seed) + ")"));
      dump_embeddings(dir, original, ds.samples, split, "before");
      dump_embeddings(dir, after, ds.samples, split, "after");
      std::cout << "seed " << seed << ": forget mAP "
                << pair.before.map_forget << " -> " << pair.after.map_forget
                << ", forget CS " << pair.before.cs_forget << " -> "
                << pair.after.cs_forget << "\n";
    }

    json meta = base_meta(ctx);
    meta["method"] = mname;
    meta["seeds"] = ctx.cfg.eval.seeds;
    const auto agg_dir = ctx.out_dir + "/" + mname;
    write_json(agg_dir + "/aggregate.json",
               report::aggregate_to_json(pairs, meta));
    write_text(agg_dir + "/aggregate.md",
               report::aggregate_to_markdown(pairs, mname));
    std::cout << "wrote " << agg_dir << "/aggregate.{json,md}\n";
  });
}

int cmd_sweep(const CommonArgs& args) {
  return run_guarded([&] {
    const Context ctx = load_context(args);
    const auto ds = load_or_fail_dataset(ctx);
    const auto original = load_or_fail_model(ctx);
    const auto seed = ctx.cfg.eval.seeds.front();
    const auto split = load_or_fail_split(ctx, seed);
    const auto settings = bench_settings(ctx);

    auto cells = config::expand_sweep_grid(
        ctx.cfg.unlearn_raw.is_null() ? json::object() : ctx.cfg.unlearn_raw,
        ctx.cfg.unlearn, ctx.cfg.max_sweep_runs);
    for (auto& cell : cells) cell.seed = seed;
    std::cout << "sweep: " << cells.size() << " cells, " << args.jobs
              << " jobs\n";

    const auto before = eval::model_report(original, ds.samples, split,
                                           settings);
    std::vector<report::SweepRow> rows(cells.size() + 1);
    rows[0] = {"original", ctx.model_hash, false, "", before.map_forget,
               before.r1_forget, before.r1_retain, before.cs_forget,
               before.cs_retain, before.acc_forget, before.acc_retain};

    std::atomic<std::size_t> next{0};
    std::mutex io_mutex;
    auto worker = [&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cells.size()) return;
        const auto& ucfg = cells[i];
        report::SweepRow row;
        {
          std::ostringstream label;
          label << unlearn::method_name(ucfg.method) << " lr=" << ucfg.lr
                << " lambda=" << ucfg.lambda_retain << " iters="
                << ucfg.iterations;
          if (ucfg.salun_fraction > 0.0)
            label << " salun=" << ucfg.salun_fraction << "("
                  << unlearn::saliency_name(ucfg.salun_loss) << ")";
          if (ucfg.head_freeze) label << " headfreeze";
          row.cell_label = label.str();
        }
        row.cell_hash =
            config::config_hash(config::unlearn_to_json(ucfg));
        try {
          const auto res =
              unlearn::run_unlearn(original, ds.samples, split, ucfg);
          if (!res.abort_reason.empty()) {
            row.failed = true;
            row.failure_reason = res.abort_reason;
          } else {
            const auto rep =
                eval::model_report(res.model, ds.samples, split, settings);
            row.map_f = rep.map_forget;
            row.r1_f = rep.r1_forget;
            row.r1_retain = rep.r1_retain;
            row.cs_f = rep.cs_forget;
            row.cs_r = rep.cs_retain;
            row.acc_f = rep.acc_forget;
            row.acc_r = rep.acc_retain;
          }
        } catch (const std::exception& e) {
          row.failed = true;
          row.failure_reason = e.what();
        }
        rows[i + 1] = row;
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cout << "cell " << (i + 1) << "/" << cells.size() << ": "
                  << row.cell_label
                  << (row.failed ? " FAILED: " + row.failure_reason : "")
                  << "\n";
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n_jobs = std::max<std::size_t>(args.jobs, 1);
    for (std::size_t t = 0; t < std::min(n_jobs, cells.size()); ++t)
      pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    json meta = base_meta(ctx);
    meta["seed"] = seed;
    const auto dir = ctx.out_dir + "/sweep";
    write_json(dir + "/sweep.json", report::sweep_to_json(rows, meta));
    write_text(dir + "/sweep.md", report::sweep_to_markdown(rows));
    std::cout << "wrote " << dir << "/sweep.{json,md}\n";
  });
}

int cmd_report(const CommonArgs& args, const std::string& method) {
  return run_guarded([&] {
    const Context ctx = load_context(args);
    const std::string mname = method.empty() ? "original" : method;
    std::vector<eval::ReportPair> pairs;
    for (const auto seed : ctx.cfg.eval.seeds) {
      const auto path = method_dir(ctx, mname, seed) + "/metrics.json";
      if (!fs::exists(path))
        throw std::invalid_argument("metrics not found; run 'evaluate' "
                                    "first: " + path);
      std::ifstream in(path);
      json j;
      in >> j;
      pairs.push_back({report::metrics_from_json(j.at("before")),
                       report::metrics_from_json(j.at("after"))});
    }
    json meta = base_meta(ctx);
    meta["method"] = mname;
    meta["seeds"] = ctx.cfg.eval.seeds;
    const auto dir = ctx.out_dir + "/" + mname;
    write_json(dir + "/aggregate.json",
               report::aggregate_to_json(pairs, meta));
    write_text(dir + "/aggregate.md",
               report::aggregate_to_markdown(pairs, mname));
    std::cout << report::aggregate_to_markdown(pairs, mname);
  });
}

}  // namespace disperse::cli
