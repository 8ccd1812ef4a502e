#include "d2l/generator/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "d2l/nncore/checkpoint.hpp"
#include "d2l/nncore/optimizer.hpp"
#include "json.hpp"

namespace d2l {

Tensor text_embed(const std::string& label, std::size_t dim) {
  if (label.empty()) throw PreconditionError("text_embed: empty label");
  if (dim == 0) throw PreconditionError("text_embed: zero dimension");
  const std::string text = "An image of class " + label;
  Rng rng(fnv1a(text.data(), text.size()));
  Tensor v = Tensor::matrix(1, dim);
  double norm2 = 0.0;
  for (double& x : v.values()) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v.values()) x *= inv;
  return v;
}

FrozenGenerator::FrozenGenerator(const GeneratorDims& dims, Rng& rng)
    : dims_(dims),
      enc_({dims.image_dim, dims.enc_hidden, dims.embed_dim}, {Activation::relu, Activation::identity}, rng),
      dec_({dims.decoder_input(), dims.dec_hidden, dims.image_dim}, {Activation::relu, Activation::sigmoid}, rng) {}

Var FrozenGenerator::generate(Tape& t, Var cond, Var p_soft, Var p_text, Var eps) const {
  const std::size_t n = t.value(cond).rows();
  if (t.value(cond).cols() != dims_.image_dim) throw ShapeError("generate: condition width mismatch");
  if (t.value(p_soft).size() != dims_.soft_dim || t.value(p_text).size() != dims_.text_dim) {
    throw ShapeError("generate: prompt width mismatch");
  }
  if (t.value(eps).rows() != n || t.value(eps).cols() != dims_.noise_dim) throw ShapeError("generate: noise shape mismatch");
  const Var parts[] = {enc_.forward(t, cond), broadcast_rows(t, p_soft, n), broadcast_rows(t, p_text, n), eps};
  return dec_.forward(t, concat_cols(t, parts));
}

Tensor FrozenGenerator::generate(const Tensor& cond, const Tensor& p_soft, const Tensor& p_text,
                                 const Tensor& eps) const {
  Tape t;
  return t.value(generate(t, t.constant_ref(cond), t.constant_ref(p_soft), t.constant_ref(p_text), t.constant_ref(eps)));
}

std::vector<double> FrozenGenerator::reconstruction_error(const Tensor& images) const {
  const std::size_t n = images.rows();
  const Tensor zero_soft = Tensor::matrix(1, dims_.soft_dim);
  const Tensor zero_text = Tensor::matrix(1, dims_.text_dim);
  const Tensor recon = generate(images, zero_soft, zero_text, Tensor::matrix(n, dims_.noise_dim));
  std::vector<double> err(n, 0.0);
  const std::size_t d = images.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = recon.at(i, j) - images.at(i, j);
      err[i] += diff * diff;
    }
    err[i] /= static_cast<double>(d);
  }
  return err;
}

std::vector<double> FrozenGenerator::quality(const Tensor& images) const {
  std::vector<double> q = reconstruction_error(images);
  for (double& v : q) v = std::exp(-lambda_ * v);
  return q;
}

std::uint64_t FrozenGenerator::hash() const {
  std::uint64_t h = enc_.hash();
  const std::uint64_t hd = dec_.hash();
  h = fnv1a(&hd, sizeof hd, h);
  return fnv1a(&lambda_, sizeof lambda_, h);
}

std::vector<Tensor> FrozenGenerator::export_tensors() const {
  std::vector<Tensor> out;
  out.push_back(Tensor::row_vector({static_cast<double>(dims_.image_dim), static_cast<double>(dims_.embed_dim),
                                    static_cast<double>(dims_.soft_dim), static_cast<double>(dims_.text_dim),
                                    static_cast<double>(dims_.noise_dim), static_cast<double>(dims_.enc_hidden),
                                    static_cast<double>(dims_.dec_hidden), lambda_}));
  for (const Tensor& t : enc_.export_tensors()) out.push_back(t);
  for (const Tensor& t : dec_.export_tensors()) out.push_back(t);
  return out;
}

FrozenGenerator FrozenGenerator::from_tensors(const std::vector<Tensor>& tensors) {
  if (tensors.size() != 9 || tensors[0].size() != 8) throw CheckpointError("generator checkpoint has an unexpected layout");
  const Tensor& m = tensors[0];
  GeneratorDims d;
  d.image_dim = static_cast<std::size_t>(m[0]);
  d.embed_dim = static_cast<std::size_t>(m[1]);
  d.soft_dim = static_cast<std::size_t>(m[2]);
  d.text_dim = static_cast<std::size_t>(m[3]);
  d.noise_dim = static_cast<std::size_t>(m[4]);
  d.enc_hidden = static_cast<std::size_t>(m[5]);
  d.dec_hidden = static_cast<std::size_t>(m[6]);
  Rng scratch(0);
  FrozenGenerator g(d, scratch);
  g.lambda_ = m[7];
  try {
    g.enc_.import_tensors({tensors.begin() + 1, tensors.begin() + 5});
    g.dec_.import_tensors({tensors.begin() + 5, tensors.end()});
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("generator checkpoint: ") + e.what());
  }
  return g;
}

std::uint64_t hash_samples(const SampleSet& s) {
  std::uint64_t h = fnv1a(s.images.values().data(), s.images.size() * sizeof(double));
  for (std::size_t y : s.labels) h = fnv1a(&y, sizeof y, h);
  return h;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

FrozenGenerator pretrain_generator(const TaskStream& bank, const PretrainConfig& cfg, PretrainReport* report) {
  const GeneratorDims& d = cfg.dims;
  if (bank.input_dim() != d.image_dim) throw ShapeError("pretrain_generator: bank image size != generator input");
  const SampleSet train = bank.all_train();
  const SampleSet holdout = bank.all_test();
  if (train.empty() || holdout.empty()) throw PreconditionError("pretrain_generator: empty pretraining bank");

  Rng rng(cfg.seed);
  FrozenGenerator g(d, rng);
  Optimizer opt(OptimizerKind::adam, cfg.learning_rate);

  std::vector<Tensor> text_rows;
  for (const ClassSpec& c : bank.classes) text_rows.push_back(text_embed(c.name(), d.text_dim));

  // The p-slot is trained on codes projected from the embedding of another
  // sample of the target class, so it becomes a continuous "looks like this"
  // space that also covers classes the bank never showed. The projection is
  // discarded afterwards.
  Tensor proj0 = Tensor::matrix(d.embed_dim, d.soft_dim);
  for (double& v : proj0.values()) v = rng.normal() / std::sqrt(static_cast<double>(d.embed_dim));
  Parameter proj(proj0);
  std::vector<std::vector<std::size_t>> by_class(bank.classes.size());
  for (std::size_t i = 0; i < train.size(); ++i) by_class[train.labels[i]].push_back(i);

  std::vector<Parameter*> params = g.encoder().parameters();
  for (Parameter* p : g.decoder().parameters()) params.push_back(p);
  params.push_back(&proj);

  PretrainReport rep;
  rep.bank_hash = hash_samples(train);
  double tail_sum = 0.0;
  std::size_t tail_n = 0;
  std::vector<std::size_t> rows(cfg.batch_size), cond_rows(cfg.batch_size), ref_rows(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& r : rows) r = rng.below(train.size());
    Tensor mask = Tensor::matrix(cfg.batch_size, d.soft_dim);
    Tensor jitter = Tensor::matrix(cfg.batch_size, d.soft_dim);
    Tensor text = Tensor::matrix(cfg.batch_size, d.text_dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      cond_rows[i] = rows[i];
      ref_rows[i] = rows[i];
      if (rng.uniform() < cfg.null_prompt_rate) continue;  // null prompt: plain reconstruction
      const std::size_t c = train.labels[rows[i]];
      ref_rows[i] = by_class[c][rng.below(by_class[c].size())];
      std::fill(mask.row(i).begin(), mask.row(i).end(), 1.0);
      for (double& v : jitter.row(i)) v = cfg.prompt_sigma * rng.normal();
      const Tensor& e = text_rows[c];
      std::copy(e.values().begin(), e.values().end(), text.row(i).begin());
      if (rng.uniform() < cfg.swap_condition_rate) cond_rows[i] = rng.below(train.size());
    }
    const Tensor cond = train.images.gather_rows(cond_rows);
    // swapped rows target a blend of the condition and the prompted class sample
    Tensor x = train.images.gather_rows(rows);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (cond_rows[i] == rows[i]) continue;
      for (std::size_t j = 0; j < d.image_dim; ++j)
        x.at(i, j) = (1.0 - cfg.swap_blend) * cond.at(i, j) + cfg.swap_blend * x.at(i, j);
    }
    Tensor eps = Tensor::matrix(cfg.batch_size, d.noise_dim);
    for (double& v : eps.values()) v = rng.normal();

    for (Parameter* p : params) p->zero_grad();
    Tape t;
    const Var xv = t.constant_ref(x);
    const Tensor ref = train.images.gather_rows(ref_rows);
    const Var code = matmul(t, g.encoder().forward(t, t.constant_ref(ref), Binding::trainable), t.parameter(proj));
    const Var soft = add(t, mul(t, code, t.constant_ref(mask)), t.constant_ref(jitter));
    const Var parts[] = {g.encoder().forward(t, t.constant_ref(cond), Binding::trainable), soft,
                         t.constant_ref(text), t.constant_ref(eps)};
    const Var out = g.decoder().forward(t, concat_cols(t, parts), Binding::trainable);
    const Var loss = mse(t, out, xv);
    const double lv = t.value(loss)[0];
    if (step == 0) rep.first_loss = lv;
    if (step + 100 >= cfg.steps) {
      tail_sum += lv;
      ++tail_n;
    }
    t.backward(loss);
    opt.step(params);
  }
  rep.final_loss = tail_n ? tail_sum / static_cast<double>(tail_n) : rep.first_loss;

  // Held-out reconstruction under the null prompt, against a mean-image predictor.
  rep.holdout_mse = mean_of(g.reconstruction_error(holdout.images));
  std::vector<double> mean_img(d.image_dim, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t j = 0; j < d.image_dim; ++j) mean_img[j] += train.images.at(i, j) / static_cast<double>(train.size());
  double base = 0.0;
  for (std::size_t i = 0; i < holdout.size(); ++i)
    for (std::size_t j = 0; j < d.image_dim; ++j) base += std::pow(holdout.images.at(i, j) - mean_img[j], 2);
  rep.mean_image_mse = base / static_cast<double>(holdout.size() * d.image_dim);

  if (!(rep.holdout_mse < cfg.loss_ceiling)) {
    throw NumericError("generator pretraining failed: held-out MSE " + std::to_string(rep.holdout_mse) +
                       " is not below the ceiling " + std::to_string(cfg.loss_ceiling));
  }

  // lambda so that the median quality on the pretraining distribution is cfg.median_quality.
  std::vector<double> err = g.reconstruction_error(train.images);
  std::nth_element(err.begin(), err.begin() + static_cast<std::ptrdiff_t>(err.size() / 2), err.end());
  const double median_err = err[err.size() / 2];
  if (median_err <= 0.0) throw NumericError("generator pretraining: zero median reconstruction error");
  g.set_quality_lambda(-std::log(cfg.median_quality) / median_err);

  rep.quality_lambda = g.quality_lambda();
  rep.param_hash = g.hash();
  if (report) *report = rep;
  return g;
}

void save_generator(const FrozenGenerator& g, const PretrainConfig& cfg, const PretrainReport& rep,
                    const std::filesystem::path& path) {
  save_tensors(path, g.export_tensors());
  nlohmann::json m;
  m["seed"] = cfg.seed;
  m["steps"] = cfg.steps;
  m["batch_size"] = cfg.batch_size;
  m["learning_rate"] = cfg.learning_rate;
  m["prompt_sigma"] = cfg.prompt_sigma;
  m["null_prompt_rate"] = cfg.null_prompt_rate;
  m["swap_condition_rate"] = cfg.swap_condition_rate;
  m["pretrain_bank_hash"] = rep.bank_hash;
  m["param_hash"] = g.hash();
  m["first_loss"] = rep.first_loss;
  m["final_loss"] = rep.final_loss;
  m["holdout_mse"] = rep.holdout_mse;
  m["mean_image_mse"] = rep.mean_image_mse;
  m["quality_lambda"] = rep.quality_lambda;
  std::ofstream out(path.string() + ".json");
  if (!out) throw CheckpointError("cannot write generator manifest");
  out << m.dump(2) << '\n';
}

FrozenGenerator load_generator(const std::filesystem::path& path) {
  return FrozenGenerator::from_tensors(load_tensors(path));
}

}  // namespace d2l
