#include "d2l/harness/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace d2l {

using nlohmann::json;

ResultRow RunRecord::result_row() const {
  ResultRow row;
  row.method = label;
  row.seed = seed;
  row.faa = faa;
  row.fwt = fwt;
  if (leaks) {
    row.leaks = leaks->leaks;
    row.leak_fraction = leaks->fraction;
  }
  return row;
}

double random_baseline(const NetworkShape& shape, const SampleSet& test, const HeadTable& table,
                       std::span<const std::size_t> heads, std::size_t inits, std::uint64_t seed) {
  double s = 0.0;
  for (std::size_t k = 0; k < inits; ++k) {
    Rng rng(splitmix64(seed + k));
    const Network fresh(shape, rng);
    s += accuracy(fresh, test, table, heads);
  }
  return s / static_cast<double>(inits);
}

namespace {

Tensor pool_without(const SampleSet& train, std::size_t cls) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.labels[i] != cls) rows.push_back(i);
  return train.images.gather_rows(rows);
}

double mean_head_prob(const Network& net, const Tensor& images, std::size_t head) {
  const Tensor p = softmax_rows(net.infer(images).logits);
  double s = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) s += p.at(r, head);
  return s / static_cast<double>(p.rows());
}

// Real assignment against exhaustive enumeration over the same likelihoods.
void check_assignment(const RealAssignment& ra, std::span<const std::size_t> classes, std::size_t task) {
  if (ra.candidate_heads.empty()) return;
  std::vector<std::pair<std::size_t, std::size_t>> expected;
  for (auto [i, k] : brute_force_assignment(ra.likelihood)) expected.emplace_back(classes[i], ra.candidate_heads[k]);
  std::sort(expected.begin(), expected.end());
  std::vector<std::pair<std::size_t, std::size_t>> got;
  for (auto [c, h] : ra.class_to_head)
    if (std::find(ra.candidate_heads.begin(), ra.candidate_heads.end(), h) != ra.candidate_heads.end())
      got.emplace_back(c, h);
  std::sort(got.begin(), got.end());
  if (got != expected) throw CheckFailure("task " + std::to_string(task) + ": real assignment differs from brute force");
}

PromptResult collected_prompt(const Network& net, const FrozenGenerator& g, std::size_t head, const std::string& label,
                              const Tensor& pool, std::size_t pool_classes, const DreamConfig& base, Rng& rng,
                              TrajectoryCollector& sink) {
  DreamConfig dc = base;
  dc.stop.kind = StopRuleKind::never;
  dc.keep_probe_samples = true;
  PromptResult pr = optimize_prompt(net, g, head, label, pool, nullptr, dc, rng);
  const auto& recs = pr.trajectory.records;
  std::size_t k = recs.size() - 1;
  bool found = false;
  for (std::size_t i = 0; i < recs.size() && !found; ++i) {
    if (recs[i].target_prob >= sink.label.band_lo && recs[i].target_prob <= sink.label.band_hi) {
      k = i;
      found = true;
    }
  }
  sink.trajectories.push_back(pr.trajectory);
  sink.trajectories.back().pool_classes = pool_classes;
  PromptResult out;
  out.prompt = pr.prompt;
  out.prompt.soft() = recs[k].p_soft;
  out.stop_samples = pr.probe_samples[k];
  out.stop_target_prob = recs[k].target_prob;
  out.iterations = k + 1;
  out.stopped = found;
  out.trajectory = std::move(pr.trajectory);
  out.trajectory.records.resize(k + 1);
  out.trajectory.stop_iteration = k;
  return out;
}

}  // namespace

RunRecord run_pipeline(const RunConfig& cfg_in, const TaskStream& stream, const Assets& assets, std::uint64_t seed,
                       const Network* joint, TrajectoryCollector* collect) {
  cfg_in.validate();
  RunConfig cfg = cfg_in;
  cfg.seeds = {seed};
  const auto t_start = std::chrono::steady_clock::now();

  const bool dreaming = needs_generator(cfg);
  const bool loop_dreams = dreaming && (cfg.method.strategy == DreamStrategy::d2l_replace ||
                                        cfg.method.strategy == DreamStrategy::incremental);
  const OracleNet* oracle = assets.oracle ? &*assets.oracle : nullptr;
  if (needs_oracle(cfg) && !oracle) throw MissingCheckpoint("run needs an oracle checkpoint");
  if (dreaming && assets.generator.dims().image_dim != stream.input_dim())
    throw MissingCheckpoint("run needs a generator checkpoint matching the benchmark");
  const FrozenGenerator& g = assets.generator;

  RunRecord r;
  r.label = cfg.label();
  r.seed = seed;
  r.config_hash = config_hash(cfg);
  const std::size_t T = stream.tasks.size();
  r.tasks = T;
  r.accuracy = AccuracyMatrix(T);
  r.random_baseline.assign(T + 1, 0.0);
  for (const auto& task : stream.tasks) r.test_counts.push_back(task.test.size());
  if (dreaming) r.generator_hash_before = g.hash();
  if (oracle) r.oracle_hash_before = oracle->hash();

  Rng master(seed);
  Rng init = master.split(1), data = master.split(2), dream = master.split(3), prompt = master.split(4);
  NetworkShape shape;
  shape.input_dim = stream.input_dim();
  shape.head_width = stream.num_classes();
  Network net(shape, init);
  HeadTable table(stream.num_classes());
  ReplayBuffer buffer(cfg.method.buffer_capacity);
  DreamInventory inventory;

  auto evaluate_column = [&](std::size_t j) {
    const auto heads = table.real_heads();
    for (std::size_t i = 1; i <= j; ++i) r.accuracy.at(i, j) = accuracy(net, stream.tasks[i - 1].test, table, heads);
  };
  auto baseline = [&](std::size_t t) {
    const auto heads = table.real_heads();
    NetworkShape s = shape;
    s.head_width = table.width();
    r.random_baseline[t] =
        random_baseline(s, stream.tasks[t - 1].test, table, heads, cfg.random_inits, splitmix64(seed) ^ (t << 32));
    r.accuracy.at(t, 0) = r.random_baseline[t];
  };

  auto dream_phase = [&](std::size_t t) {
    const Task& task = stream.tasks[t - 1];
    if (task.classes.size() < 2) return;  // no conditioning pool
    std::vector<NewDream> fresh;
    std::vector<Tensor> images;
    std::vector<PromptResult> results;
    for (std::size_t c : task.classes) {
      PromptResult pr = collect ? collected_prompt(net, g, table.require_real(c), stream.classes[c].name(),
                                                   pool_without(task.train, c), task.classes.size() - 1, cfg.dream,
                                                   prompt, *collect)
                                : optimize_prompt(net, g, table.require_real(c), stream.classes[c].name(),
                                                  pool_without(task.train, c), oracle, cfg.dream, prompt);
      NewDream nd;
      nd.images = generate_dream_class(g, pr.prompt, buffer, cfg.dream.samples_per_class, dream);
      nd.entry.prompt = pr.prompt;
      nd.entry.source_class = c;
      nd.entry.created_task = t;
      nd.entry.stop_iteration = pr.iterations - 1;
      nd.entry.stop_target_prob = pr.stop_target_prob;
      nd.entry.stop_features = pr.trajectory.records.back().z;
      images.push_back(nd.images);
      fresh.push_back(std::move(nd));
      results.push_back(std::move(pr));
    }
    std::vector<DreamEntry> entries;
    for (const auto& nd : fresh) entries.push_back(nd.entry);
    std::vector<double> sample_probs;
    for (std::size_t i = 0; i < fresh.size(); ++i)
      sample_probs.push_back(mean_head_prob(net, images[i], table.require_real(entries[i].source_class)));

    std::map<std::size_t, std::size_t> resident;  // head -> dream id before the update
    for (std::size_t h : table.dream_heads()) resident[h] = table.slot(h).id;

    const auto up = update_inventory(cfg.method.strategy, std::move(fresh), t, inventory, table, net, dream);
    inventory.check_against(table);
    table.check_invariants();
    if (cfg.inline_checks) {
      for (std::size_t i = 0; i < up.mappings.size(); ++i) {
        const auto& m = up.mappings[i];
        if (brute_force_dream_head(net, images[i], m.candidates) != m.head)
          throw CheckFailure("task " + std::to_string(t) + ": dream-head mapping differs from brute force");
        ++r.mapping_checks;
      }
    }
    for (std::size_t i = 0; i < up.placed.size(); ++i) {
      const auto [id, head] = up.placed[i];
      DreamEntry& e = inventory.at(id);
      e.creation_likelihood = mean_head_prob(net, images[i], head);
      DreamEvent ev;
      ev.task = t;
      ev.dream_id = id;
      ev.source_class = entries[i].source_class;
      ev.head = head;
      if (auto it = resident.find(head); it != resident.end()) ev.evicted = it->second;
      ev.iterations = results[i].iterations;
      ev.stop_iteration = entries[i].stop_iteration;
      ev.stopped = results[i].stopped;
      ev.stop_target_prob = results[i].stop_target_prob;
      ev.sample_target_prob = sample_probs[i];
      r.dreams.push_back(ev);
      r.dream_samples[id] = results[i].stop_samples;
      DreamEntry copy = e;
      r.created.push_back(std::move(copy));
    }
  };

  // Task 1: bootstrap, then dream and fine-tune on the mixture.
  {
    const Task& task = stream.tasks[0];
    for (std::size_t c : task.classes) {
      const std::size_t h = table.free_heads().front();
      table.assign_real(h, c);
      r.mappings.push_back({1, c, h, std::nullopt});
    }
    baseline(1);
    TrainContext ctx{net, buffer, table, task.classes, nullptr, data, dream, 1, &r.log};
    bootstrap_task1(ctx, task.train, cfg.method);
    if (dreaming) {
      dream_phase(1);
      r.task1_dreaming = true;
      const DreamPool pool = regenerate_pool(inventory, table, g, buffer, cfg.dream.samples_per_class, dream);
      if (!pool.empty()) {
        ctx.dreams = &pool;
        train_task(ctx, task.train, cfg.method, Phase::dream_finetune);
      }
    }
    evaluate_column(1);
  }

  for (std::size_t t = 2; t <= T; ++t) {
    const Task& task = stream.tasks[t - 1];
    std::map<std::size_t, std::size_t> resident;
    for (std::size_t h : table.dream_heads()) resident[h] = table.slot(h).id;

    const RealAssignment ra = assign_real_classes(net, task.train, task.classes, table, cfg.assignment);
    if (cfg.inline_checks && !ra.candidate_heads.empty()) {
      check_assignment(ra, task.classes, t);
      ++r.assignment_checks;
    }
    for (auto [c, h] : ra.class_to_head) {
      MappingEvent ev{t, c, h, std::nullopt};
      if (auto it = resident.find(h); it != resident.end()) {
        ev.removed_dream = it->second;
        r.replacements.push_back({t, c, h, it->second});
      }
      r.mappings.push_back(ev);
    }
    for (std::size_t id : ra.removed_dreams) inventory.remove(id);
    inventory.check_against(table);

    {
      const auto heads = table.real_heads();
      r.accuracy.at(t, t - 1) = accuracy(net, task.test, table, heads);
    }
    baseline(t);

    DreamPool pool;
    if (dreaming && inventory.size() > 0)
      pool = regenerate_pool(inventory, table, g, buffer, cfg.dream.samples_per_class, dream);
    TrainContext ctx{net, buffer, table, task.classes, pool.empty() ? nullptr : &pool, data, dream, t, &r.log};
    train_task(ctx, task.train, cfg.method, Phase::continual);
    evaluate_column(t);

    if (t < T && loop_dreams) {
      dream_phase(t);
      ++r.loop_dreaming_phases;
    }
  }

  r.faa = faa(r.accuracy, r.test_counts);
  r.fwt = fwt(r.accuracy, r.random_baseline);
  if (joint) r.leaks = count_leaks(r.replacements, r.dream_samples, *joint);
  if (dreaming) r.generator_hash_after = g.hash();
  if (oracle) r.oracle_hash_after = oracle->hash();
  r.final_network_hash = net.hash();
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return r;
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

json record_json(const RunRecord& r) {
  json j;
  j["label"] = r.label;
  j["seed"] = r.seed;
  j["config_hash"] = hex(r.config_hash);
  j["tasks"] = r.tasks;
  j["faa"] = r.faa;
  j["fwt"] = r.fwt;
  j["random_baseline"] = r.random_baseline;
  j["test_counts"] = r.test_counts;
  if (r.leaks) j["leaks"] = {{"count", r.leaks->leaks}, {"replacements", r.leaks->replacements}, {"fraction", r.leaks->fraction}};
  j["task1_dreaming"] = r.task1_dreaming;
  j["loop_dreaming_phases"] = r.loop_dreaming_phases;
  j["assignment_checks"] = r.assignment_checks;
  j["mapping_checks"] = r.mapping_checks;
  j["hashes"] = {{"generator_before", hex(r.generator_hash_before)},
                 {"generator_after", hex(r.generator_hash_after)},
                 {"oracle_before", hex(r.oracle_hash_before)},
                 {"oracle_after", hex(r.oracle_hash_after)},
                 {"final_network", hex(r.final_network_hash)}};
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

}  // namespace

void write_run_dir(const std::filesystem::path& dir, const RunConfig& cfg, const RunRecord& r) {
  std::filesystem::create_directories(dir);
  RunConfig snap = cfg;
  snap.seeds = {r.seed};
  std::ofstream(dir / "config.json") << config_to_json(snap).dump(2) << '\n';
  std::ofstream(dir / "record.json") << record_json(r).dump(2) << '\n';
  {
    std::ofstream f(dir / "accuracy_matrix.csv");
    r.accuracy.write_csv(f);
  }
  {
    std::ofstream f(dir / "results.csv");
    ResultRow row = r.result_row();
    row.buffer = cfg.method.buffer_capacity;
    write_results_csv(f, std::span<const ResultRow>(&row, 1));
  }
  {
    std::ofstream f(dir / "epochs.csv");
    write_epoch_csv(f, r.label + "/seed_" + std::to_string(r.seed), r.log);
  }
  {
    std::ofstream f(dir / "mappings.csv");
    f << "task,class,head,removed_dream\n";
    for (const auto& m : r.mappings)
      f << m.task << ',' << m.real_class << ',' << m.head << ',' << (m.removed_dream ? std::to_string(*m.removed_dream) : "")
        << '\n';
  }
  {
    std::ofstream f(dir / "dreams.csv");
    f << "task,dream_id,source_class,head,evicted,iterations,stop_iteration,stopped,stop_target_prob,sample_target_prob\n";
    f << std::setprecision(10);
    for (const auto& d : r.dreams)
      f << d.task << ',' << d.dream_id << ',' << d.source_class << ',' << d.head << ','
        << (d.evicted ? std::to_string(*d.evicted) : "") << ',' << d.iterations << ',' << d.stop_iteration << ','
        << d.stopped << ',' << d.stop_target_prob << ',' << d.sample_target_prob << '\n';
  }
  if (cfg.dump_dreams) {
    for (const auto& e : r.created) {
      auto it = r.dream_samples.find(e.id);
      if (it != r.dream_samples.end()) dump_dream(dir / "dreams", e, it->second, cfg.benchmark.grid);
    }
  }
}

std::vector<RunRecord> run_seeds(const RunConfig& cfg, const TaskStream& stream, const Assets& assets,
                                 const Network* joint, std::size_t jobs, bool write) {
  std::vector<RunRecord> out(cfg.seeds.size());
  std::vector<std::exception_ptr> errors(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < cfg.seeds.size();) {
      try {
        out[i] = run_pipeline(cfg, stream, assets, cfg.seeds[i], joint);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, cfg.seeds.size()));
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  if (write) {
    const auto group = cfg.output_dir / (cfg.label() + "_b" + std::to_string(cfg.method.buffer_capacity));
    for (const auto& r : out) write_run_dir(group / ("seed_" + std::to_string(r.seed)), cfg, r);
  }
  return out;
}

std::vector<DreamTrajectory> collect_trajectories(const TaskStream& stream, const FrozenGenerator& g,
                                                  const RunConfig& cfg, std::uint64_t seed) {
  RunConfig c = cfg;
  c.method.use_dreams = true;
  c.method.strategy = DreamStrategy::d2l_replace;
  c.dream.stop.kind = StopRuleKind::never;
  c.inline_checks = false;
  TrajectoryCollector sink;
  sink.label = cfg.assets.label;
  run_pipeline(c, stream, Assets{g, std::nullopt}, seed, nullptr, &sink);
  return std::move(sink.trajectories);
}

std::vector<DreamTrajectory> collect_bank(const std::vector<TaskStream>& bank, const FrozenGenerator& g,
                                          const RunConfig& cfg) {
  std::vector<DreamTrajectory> out;
  const std::size_t n = cfg.assets.oracle_seeds_per_stream;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    for (std::size_t s = 0; s < n; ++s) {
      auto t = collect_trajectories(bank[i], g, cfg, cfg.assets.oracle_run_seed + i * n + s);
      for (auto& x : t) out.push_back(std::move(x));
    }
  }
  return out;
}

}  // namespace d2l
