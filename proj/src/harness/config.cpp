#include "d2l/harness/config.hpp"

#include <fstream>
#include <set>

namespace d2l {

using nlohmann::json;

namespace {

// Reads fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Section() = default;

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }
  void get_path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  bool has(const char* key) const { return j_.contains(key); }
  const json& sub(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string where(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + path_ + "." + it.key());
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto wrap(const std::string& what, F f) {
  try {
    return f();
  } catch (const PreconditionError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

const char* cadence_name(InsertCadence c) { return c == InsertCadence::every_epoch ? "every-epoch" : "first-epoch"; }
const char* assignment_name(AssignmentRule r) { return r == AssignmentRule::greedy ? "greedy" : "optimal"; }

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (benchmark.num_classes < 2) fail("benchmark.classes must be at least 2");
  if (benchmark.post_tasks < 1) fail("benchmark.post_tasks must be at least 1");
  if (benchmark.num_classes / 2 < benchmark.post_tasks) fail("benchmark: fewer post-first classes than tasks");
  if (benchmark.samples_per_class < 5) fail("benchmark.samples_per_class must be at least 5");
  if (benchmark.grid != 12) fail("benchmark.grid must be 12 (network input is 144)");
  if (!(benchmark.train_fraction > 0.0 && benchmark.train_fraction < 1.0)) fail("benchmark.train_fraction must be in (0,1)");
  wrap("method", [&] {
    method.validate();
    return 0;
  });
  if (method.buffer_capacity == 0 && method.method != Method::finetune) fail("method.buffer must be positive for rehearsal");
  wrap("dream", [&] {
    dream.validate();
    return 0;
  });
  if (method.use_dreams && method.strategy != DreamStrategy::none && method.buffer_capacity == 0)
    fail("dreams need a non-empty buffer for conditions");
  if (!(assets.label.band_lo >= 0 && assets.label.band_lo < assets.label.band_hi && assets.label.band_hi <= 1))
    fail("oracle.band_lo < oracle.band_hi within [0,1] required");
  if (!(assets.validation_fraction > 0 && assets.validation_fraction < 1)) fail("oracle.validation_fraction must be in (0,1)");
  if (assets.oracle_streams_per_bank == 0 || assets.oracle_seeds_per_stream == 0)
    fail("assets.oracle_streams_per_bank and assets.oracle_seeds_per_stream must be positive");
  if (random_inits == 0) fail("random_inits must be positive");
  if (seeds.empty()) fail("seeds must not be empty");
  if (output_dir.empty()) fail("output_dir must not be empty");
}

std::string RunConfig::label() const {
  std::string s = method_name(method.method);
  if (method.use_dreams && method.strategy != DreamStrategy::none)
    s += method.strategy == DreamStrategy::d2l_replace ? "+d2l" : std::string("+") + strategy_name(method.strategy);
  return s;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section top(j, "config");

  if (top.has("benchmark")) {
    Section s(top.sub("benchmark"), "benchmark");
    s.get("classes", c.benchmark.num_classes);
    s.get("post_tasks", c.benchmark.post_tasks);
    s.get("samples_per_class", c.benchmark.samples_per_class);
    s.get("grid", c.benchmark.grid);
    s.get("seed", c.benchmark.seed);
    s.get("noise_sigma", c.benchmark.noise_sigma);
    s.get("train_fraction", c.benchmark.train_fraction);
    s.finish();
  }
  if (top.has("method")) {
    Section s(top.sub("method"), "method");
    std::string name = method_name(c.method.method), strategy = strategy_name(c.method.strategy);
    std::string cadence = cadence_name(c.method.cadence), assignment = assignment_name(c.assignment);
    s.get("name", name);
    s.get("epochs", c.method.epochs);
    s.get("batch_size", c.method.batch_size);
    s.get("learning_rate", c.method.learning_rate);
    s.get("buffer", c.method.buffer_capacity);
    s.get("use_dreams", c.method.use_dreams);
    s.get("strategy", strategy);
    s.get("dream_ratio", c.method.dream_ratio);
    s.get("cadence", cadence);
    s.get("assignment", assignment);
    s.finish();
    c.method.method = wrap("method.name", [&] { return parse_method(name); });
    c.method.strategy = wrap("method.strategy", [&] { return parse_strategy(strategy); });
    if (cadence == "every-epoch") c.method.cadence = InsertCadence::every_epoch;
    else if (cadence == "first-epoch") c.method.cadence = InsertCadence::first_epoch;
    else throw ConfigError("method.cadence: expected every-epoch or first-epoch");
    if (assignment == "greedy") c.assignment = AssignmentRule::greedy;
    else if (assignment == "optimal") c.assignment = AssignmentRule::optimal;
    else throw ConfigError("method.assignment: expected greedy or optimal");
  }
  if (top.has("dream")) {
    Section s(top.sub("dream"), "dream");
    std::string rule = stop_rule_name(c.dream.stop.kind);
    s.get("max_iterations", c.dream.max_iterations);
    s.get("learning_rate", c.dream.learning_rate);
    s.get("probe_size", c.dream.probe_size);
    s.get("samples_per_class", c.dream.samples_per_class);
    s.get("stop_rule", rule);
    s.get("n", c.dream.stop.n);
    s.get("k", c.dream.stop.k);
    s.get("threshold", c.dream.stop.threshold);
    s.get("fixed_length", c.dream.stop.fixed_length);
    s.finish();
    c.dream.stop.kind = wrap("dream.stop_rule", [&] { return parse_stop_rule(rule); });
  }
  if (top.has("assets")) {
    Section s(top.sub("assets"), "assets");
    s.get_path("generator", c.assets.generator);
    s.get_path("oracle", c.assets.oracle);
    s.get("generator_bank_classes", c.assets.generator_bank_classes);
    s.get("generator_bank_samples", c.assets.generator_bank_samples);
    s.get("generator_bank_seed", c.assets.generator_bank_seed);
    s.get("generator_seed", c.assets.pretrain.seed);
    s.get("generator_steps", c.assets.pretrain.steps);
    s.get("oracle_bank_samples", c.assets.oracle_bank_samples);
    s.get("oracle_bank_seed", c.assets.oracle_bank_seed);
    s.get("oracle_streams_per_bank", c.assets.oracle_streams_per_bank);
    s.get("oracle_run_seed", c.assets.oracle_run_seed);
    s.get("oracle_seeds_per_stream", c.assets.oracle_seeds_per_stream);
    s.finish();
  }
  if (top.has("oracle")) {
    Section s(top.sub("oracle"), "oracle");
    s.get("band_lo", c.assets.label.band_lo);
    s.get("band_hi", c.assets.label.band_hi);
    s.get("diversity_percentile", c.assets.label.diversity_percentile);
    s.get("quality_floor", c.assets.label.quality_floor);
    s.get("validation_fraction", c.assets.validation_fraction);
    s.get("learning_rate", c.assets.oracle_train.learning_rate);
    s.get("max_epochs", c.assets.oracle_train.max_epochs);
    s.get("patience", c.assets.oracle_train.patience);
    s.get("hidden", c.assets.oracle_train.hidden);
    s.get("seed", c.assets.oracle_train.seed);
    s.finish();
  }
  top.get("random_inits", c.random_inits);
  top.get("inline_checks", c.inline_checks);
  top.get("dump_dreams", c.dump_dreams);
  top.get("seeds", c.seeds);
  top.get_path("output_dir", c.output_dir);
  top.finish();
  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["benchmark"] = {{"classes", c.benchmark.num_classes},
                    {"post_tasks", c.benchmark.post_tasks},
                    {"samples_per_class", c.benchmark.samples_per_class},
                    {"grid", c.benchmark.grid},
                    {"seed", c.benchmark.seed},
                    {"noise_sigma", c.benchmark.noise_sigma},
                    {"train_fraction", c.benchmark.train_fraction}};
  j["method"] = {{"name", method_name(c.method.method)},
                 {"epochs", c.method.epochs},
                 {"batch_size", c.method.batch_size},
                 {"learning_rate", c.method.learning_rate},
                 {"buffer", c.method.buffer_capacity},
                 {"use_dreams", c.method.use_dreams},
                 {"strategy", strategy_name(c.method.strategy)},
                 {"dream_ratio", c.method.dream_ratio},
                 {"cadence", cadence_name(c.method.cadence)},
                 {"assignment", assignment_name(c.assignment)}};
  j["dream"] = {{"max_iterations", c.dream.max_iterations},
                {"learning_rate", c.dream.learning_rate},
                {"probe_size", c.dream.probe_size},
                {"samples_per_class", c.dream.samples_per_class},
                {"stop_rule", stop_rule_name(c.dream.stop.kind)},
                {"n", c.dream.stop.n},
                {"k", c.dream.stop.k},
                {"threshold", c.dream.stop.threshold},
                {"fixed_length", c.dream.stop.fixed_length}};
  j["assets"] = {{"generator", c.assets.generator.string()},
                 {"oracle", c.assets.oracle.string()},
                 {"generator_bank_classes", c.assets.generator_bank_classes},
                 {"generator_bank_samples", c.assets.generator_bank_samples},
                 {"generator_bank_seed", c.assets.generator_bank_seed},
                 {"generator_seed", c.assets.pretrain.seed},
                 {"generator_steps", c.assets.pretrain.steps},
                 {"oracle_bank_samples", c.assets.oracle_bank_samples},
                 {"oracle_bank_seed", c.assets.oracle_bank_seed},
                 {"oracle_streams_per_bank", c.assets.oracle_streams_per_bank},
                 {"oracle_run_seed", c.assets.oracle_run_seed},
                 {"oracle_seeds_per_stream", c.assets.oracle_seeds_per_stream}};
  j["oracle"] = {{"band_lo", c.assets.label.band_lo},
                 {"band_hi", c.assets.label.band_hi},
                 {"diversity_percentile", c.assets.label.diversity_percentile},
                 {"quality_floor", c.assets.label.quality_floor},
                 {"validation_fraction", c.assets.validation_fraction},
                 {"learning_rate", c.assets.oracle_train.learning_rate},
                 {"max_epochs", c.assets.oracle_train.max_epochs},
                 {"patience", c.assets.oracle_train.patience},
                 {"hidden", c.assets.oracle_train.hidden},
                 {"seed", c.assets.oracle_train.seed}};
  j["random_inits"] = c.random_inits;
  j["inline_checks"] = c.inline_checks;
  j["dump_dreams"] = c.dump_dreams;
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir.string();
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t config_hash(const RunConfig& c) {
  const std::string s = config_to_json(c).dump();
  return fnv1a(s.data(), s.size());
}

}  // namespace d2l
