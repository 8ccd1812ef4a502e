#include "d2l/dreaming/dreaming.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "d2l/nncore/optimizer.hpp"

namespace d2l {

void DreamConfig::validate() const {
  if (max_iterations == 0) throw PreconditionError("dream max_iterations must be positive");
  if (!(learning_rate > 0.0)) throw PreconditionError("dream learning_rate must be positive");
  if (probe_size == 0) throw PreconditionError("dream probe_size must be positive");
  if (samples_per_class == 0) throw PreconditionError("dream samples_per_class must be positive");
}

Var prompt_loss(Tape& t, const Network& net, const FrozenGenerator& g, Var cond, Var p_soft, Var p_text, Var eps,
                std::size_t target_head) {
  const Var img = g.generate(t, cond, p_soft, p_text, eps);
  const Var logits = net.body().forward(t, img);
  const std::vector<std::size_t> y(t.value(img).rows(), target_head);
  return masked_cross_entropy(t, logits, y);
}

namespace {

Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

struct ProbeStats {
  double target_prob = 0.0;
  double loss = 0.0;
  std::size_t prediction = 0;
};

ProbeStats probe_stats(const Network& net, const Tensor& generated, std::size_t target) {
  const Tensor probs = softmax_rows(net.infer(generated).logits);
  const std::size_t n = probs.rows(), m = probs.cols();
  std::vector<double> mean(m, 0.0);
  ProbeStats s;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) mean[k] += probs.at(i, k) / static_cast<double>(n);
    s.loss -= std::log(std::max(probs.at(i, target), 1e-300)) / static_cast<double>(n);
  }
  s.target_prob = mean[target];
  s.prediction = static_cast<std::size_t>(std::max_element(mean.begin(), mean.end()) - mean.begin());
  return s;
}

}  // namespace

PromptResult optimize_prompt(const Network& net, const FrozenGenerator& g, std::size_t target_head,
                             const std::string& label, const Tensor& pool, const OracleNet* oracle,
                             const DreamConfig& cfg, Rng& rng) {
  cfg.validate();
  if (pool.rows() == 0) throw PreconditionError("optimize_prompt: conditioning pool is empty");
  if (target_head >= net.head_width()) throw PreconditionError("optimize_prompt: target head out of range");
  const bool oracle_rule = cfg.stop.kind == StopRuleKind::n_of_k || cfg.stop.kind == StopRuleKind::consecutive;
  if (oracle_rule && oracle == nullptr) throw PreconditionError("optimize_prompt: stop rule needs an oracle");

  const GeneratorDims& d = g.dims();
  Prompt prompt(label, d.soft_dim, d.text_dim);
  Parameter p_soft(prompt.soft());
  Optimizer adam(OptimizerKind::adam, cfg.learning_rate);

  // fixed probe batch
  std::vector<std::size_t> probe_rows(cfg.probe_size);
  for (auto& r : probe_rows) r = rng.below(pool.rows());
  const Tensor probe_cond = pool.gather_rows(probe_rows);
  const Tensor probe_eps = normal_matrix(cfg.probe_size, d.noise_dim, rng);

  PromptResult res;
  res.trajectory.target_head = target_head;
  std::vector<double> oracle_preds;
  std::vector<std::size_t> class_preds;
  Parameter* params[] = {&p_soft};

  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    const Tensor generated = g.generate(probe_cond, p_soft.value, prompt.text(), probe_eps);
    const ProbeStats ps = probe_stats(net, generated, target_head);
    IterationRecord rec;
    rec.iteration = it;
    rec.p_soft = p_soft.value;
    rec.z = compute_features(generated, probe_cond, net, g);
    rec.loss = ps.loss;
    rec.target_prob = ps.target_prob;
    rec.prediction = ps.prediction;
    if (!std::isfinite(rec.loss)) throw NumericError("optimize_prompt: non-finite loss");
    res.trajectory.records.push_back(rec);
    if (cfg.keep_probe_samples) res.probe_samples.push_back(generated);

    bool stop = false;
    if (oracle_rule) {
      if (res.trajectory.records.size() >= kWindowLength) {
        oracle_preds.push_back(oracle->predict(window_at(res.trajectory, it)));
        stop = should_stop(oracle_preds, cfg.stop);
      }
    } else if (cfg.stop.kind == StopRuleKind::fixed_optimization) {
      class_preds.push_back(ps.prediction);
      stop = fixed_stop(class_preds, target_head, cfg.stop.fixed_length);
    }
    if (stop) {
      res.stopped = true;
      res.trajectory.stop_iteration = it;
      break;
    }
    if (it + 1 == cfg.max_iterations) break;

    // one batch-1 step
    const std::size_t row = rng.below(pool.rows());
    const Tensor eps = normal_matrix(1, d.noise_dim, rng);
    const Tensor cond = pool.gather_rows(std::span<const std::size_t>(&row, 1));
    p_soft.zero_grad();
    Tape t;
    const Var loss = prompt_loss(t, net, g, t.constant_ref(cond), t.parameter(p_soft), t.constant_ref(prompt.text()),
                                 t.constant_ref(eps), target_head);
    t.backward(loss);
    adam.step(params);
    p_soft.value.require_finite("prompt");
  }

  const IterationRecord& last = res.trajectory.records.back();
  prompt.soft() = last.p_soft;
  res.prompt = prompt;
  res.iterations = res.trajectory.records.size();
  res.stop_target_prob = last.target_prob;
  res.stop_samples = g.generate(probe_cond, prompt, probe_eps);
  return res;
}

Tensor generate_dream_class(const FrozenGenerator& g, const Prompt& prompt, const ReplayBuffer& buffer, std::size_t n,
                            Rng& rng) {
  if (buffer.size() == 0) throw PreconditionError("generate_dream_class: buffer is empty");
  const ConditionImages cond = buffer.sample_conditions(n, rng);
  const Tensor eps = normal_matrix(n, g.dims().noise_dim, rng);
  return g.generate(cond.images, prompt, eps);
}

DreamMapping map_dream_class(const Network& net, const Tensor& images, const HeadTable& table,
                             std::span<const std::size_t> excluded) {
  if (images.rows() == 0) throw PreconditionError("map_dream_class: empty dream dataset");
  DreamMapping m;
  for (std::size_t h : table.available_heads())
    if (std::find(excluded.begin(), excluded.end(), h) == excluded.end()) m.candidates.push_back(h);
  if (m.candidates.empty()) throw PreconditionError("map_dream_class: no available head");

  const Tensor logits = net.infer(images).logits;
  const std::size_t n = logits.rows();
  m.scores.assign(m.candidates.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0;
    for (double v : row) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t k = 0; k < m.candidates.size(); ++k)
      m.scores[k] += (lse - row[m.candidates[k]]) / static_cast<double>(n);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < m.scores.size(); ++k)
    if (m.scores[k] < m.scores[best]) best = k;  // strict: ties keep the lower head
  m.head = m.candidates[best];
  return m;
}

std::size_t brute_force_dream_head(const Network& net, const Tensor& images, std::span<const std::size_t> candidates) {
  if (candidates.empty()) throw PreconditionError("brute_force_dream_head: no candidates");
  const Tensor probs = softmax_rows(net.infer(images).logits);
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t h : candidates) {
    double nll = 0;
    for (std::size_t i = 0; i < probs.rows(); ++i) nll -= std::log(std::max(probs.at(i, h), 1e-300));
    all.emplace_back(nll / static_cast<double>(probs.rows()), h);
  }
  std::sort(all.begin(), all.end());
  return all.front().second;
}

std::size_t DreamInventory::add(DreamEntry e) {
  e.id = next_id_++;
  const std::size_t id = e.id;
  entries_.emplace(id, std::move(e));
  return id;
}

void DreamInventory::remove(std::size_t id) {
  if (entries_.erase(id) == 0) throw PreconditionError("inventory: unknown dream " + std::to_string(id));
}

std::vector<std::size_t> DreamInventory::ids() const {
  std::vector<std::size_t> out;
  for (const auto& [id, e] : entries_) out.push_back(id);
  return out;
}

void DreamInventory::check_against(const HeadTable& table) const {
  table.check_invariants();
  for (const auto& [id, e] : entries_)
    if (!table.head_of_dream(id)) throw PreconditionError("inventory: dream " + std::to_string(id) + " has no head");
  for (std::size_t h : table.dream_heads())
    if (!contains(table.slot(h).id)) throw PreconditionError("inventory: head " + std::to_string(h) + " holds a stale dream");
}

InventoryUpdate update_inventory(DreamStrategy strategy, std::vector<NewDream> dreams, std::size_t task,
                                 DreamInventory& inventory, HeadTable& table, Network& net, Rng& rng) {
  InventoryUpdate up;
  if (strategy == DreamStrategy::none || dreams.empty()) return up;
  if (strategy == DreamStrategy::at_beginning && task > 1) return up;

  if (strategy == DreamStrategy::incremental) {
    const std::size_t base = table.width();
    net.append_heads(dreams.size(), rng);
    table.add_heads(dreams.size());
    up.appended_heads = dreams.size();
    for (std::size_t i = 0; i < dreams.size(); ++i) {
      const std::size_t id = inventory.add(std::move(dreams[i].entry));
      table.assign_dream(base + i, id);
      up.placed.emplace_back(id, base + i);
    }
    return up;
  }

  std::vector<std::size_t> claimed;
  for (NewDream& nd : dreams) {
    DreamMapping m = map_dream_class(net, nd.images, table, claimed);
    const std::size_t id = inventory.add(std::move(nd.entry));
    if (const auto evicted = table.assign_dream(m.head, id)) {
      inventory.remove(*evicted);
      up.evicted.push_back(*evicted);
    }
    claimed.push_back(m.head);
    up.placed.emplace_back(id, m.head);
    up.mappings.push_back(std::move(m));
  }
  return up;
}

DreamPool regenerate_pool(const DreamInventory& inventory, const HeadTable& table, const FrozenGenerator& g,
                          const ReplayBuffer& buffer, std::size_t samples_per_class, Rng& rng) {
  SampleSet all;
  for (std::size_t id : inventory.ids()) {
    const auto head = table.head_of_dream(id);
    if (!head) throw PreconditionError("regenerate_pool: dream without a head");
    SampleSet s;
    s.images = generate_dream_class(g, inventory.at(id).prompt, buffer, samples_per_class, rng);
    s.labels.assign(samples_per_class, *head);
    all.append(s);
  }
  return DreamPool::from(std::move(all));
}

void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t grid) {
  if (pixels.size() != grid * grid) throw ShapeError("write_pgm: pixel count does not match grid");
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "P2\n" << grid << ' ' << grid << "\n255\n";
  for (std::size_t r = 0; r < grid; ++r) {
    for (std::size_t c = 0; c < grid; ++c) {
      const double v = std::clamp(pixels[r * grid + c], 0.0, 1.0);
      out << (c ? " " : "") << static_cast<int>(std::lround(v * 255.0));
    }
    out << '\n';
  }
}

void dump_dream(const std::filesystem::path& dir, const DreamEntry& e, const Tensor& images, std::size_t grid) {
  const auto sub = dir / ("dream_" + std::to_string(e.id));
  std::filesystem::create_directories(sub);
  for (std::size_t i = 0; i < images.rows(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu.pgm", i);
    write_pgm(sub / name, images.row(i), grid);
  }
  std::ofstream csv(sub / "prompt.csv");
  csv.precision(17);
  csv << "index,value\n";
  for (std::size_t k = 0; k < e.prompt.soft().size(); ++k) csv << k << ',' << e.prompt.soft()[k] << '\n';

  nlohmann::json j;
  j["dream_id"] = e.id;
  j["prompt_label"] = e.prompt.label();
  j["source_class"] = e.source_class;
  j["created_task"] = e.created_task;
  j["stop_iteration"] = e.stop_iteration;
  j["stop_target_prob"] = e.stop_target_prob;
  j["stop_features"] = {{"ssim", e.stop_features.ssim},
                        {"dot", e.stop_features.dot},
                        {"quality", e.stop_features.quality},
                        {"diversity", e.stop_features.diversity}};
  j["samples"] = images.rows();
  std::ofstream(sub / "manifest.json") << j.dump(2) << '\n';
}

}  // namespace d2l
