#include "d2l/costmodel/costmodel.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace d2l {

namespace {

struct Field {
  const char* name;
  double CostInputs::*ptr;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"n_img", &CostInputs::n_img},
      {"epochs", &CostInputs::epochs},
      {"rho", &CostInputs::rho},
      {"kappa_train", &CostInputs::kappa_train},
      {"kappa_prompt", &CostInputs::kappa_prompt},
      {"alpha", &CostInputs::alpha},
      {"k_dream", &CostInputs::k_dream},
      {"dream_images_per_class", &CostInputs::dream_images_per_class},
      {"n_prompt", &CostInputs::n_prompt},
      {"s_opt", &CostInputs::s_opt},
      {"ddgr_images_per_class", &CostInputs::ddgr_images_per_class},
      {"ddgr_classes", &CostInputs::ddgr_classes},
      {"steps_eff", &CostInputs::steps_eff},
      {"ft_iterations", &CostInputs::ft_iterations},
      {"ft_batch", &CostInputs::ft_batch},
      {"aug_images", &CostInputs::aug_images},
      {"c_fwd_b", &CostInputs::c_fwd_b},
      {"c_fwd_g", &CostInputs::c_fwd_g},
      {"c_fwd_g_aug", &CostInputs::c_fwd_g_aug},
      {"c_step_g", &CostInputs::c_step_g},
  };
  return f;
}

}  // namespace

void CostInputs::validate() const {
  for (const auto& f : fields()) {
    const double v = this->*f.ptr;
    if (!std::isfinite(v) || v < 0) throw PreconditionError(std::string("cost input ") + f.name + " must be finite and non-negative");
  }
}

CostInputs reference_preset() {
  CostInputs in;
  in.c_fwd_b = 1.82407e9;
  in.c_fwd_g = 6.12342e10;
  in.c_fwd_g_aug = 6.10316e10;
  in.c_step_g = 4.59976e10;
  return in;
}

std::vector<std::pair<std::string, std::string>> reference_derivations() {
  return {
      {"c_fwd_b", "273.61e12 / (2500 * 10 * (1+1) * 3)"},
      {"c_fwd_g", "1377.77e12 / (500 * 45)"},
      {"c_fwd_g_aug", "1373.21e12 / 22500"},
      {"c_step_g", "1149.94e12 / (20 * 5 * 250)"},
      {"convention", "1 MAC = 1 FLOP; TFLOPs = FLOPs / 1e12"},
  };
}

std::vector<std::string> cost_field_names() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.name);
  return out;
}

void apply_override(CostInputs& in, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw PreconditionError("override must be key=value: " + kv);
  const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
  for (const auto& f : fields()) {
    if (key != f.name) continue;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(val, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used == 0 || used != val.size()) throw PreconditionError("override " + key + ": not a number: " + val);
    in.*f.ptr = v;
    return;
  }
  throw PreconditionError("unknown cost input: " + key);
}

double c_cl(const CostInputs& in) { return in.n_img * in.epochs * (1 + in.rho) * in.kappa_train * in.c_fwd_b; }

double c_cl_aug(const CostInputs& in) {
  return in.n_img * (1 + in.alpha) * in.epochs * (1 + in.rho) * in.kappa_train * in.c_fwd_b;
}

double c_cl_dream(const CostInputs& in) { return in.n_dream() * in.epochs * (1 + in.rho) * in.kappa_train * in.c_fwd_b; }

double c_synth(const CostInputs& in, SynthMode mode) {
  switch (mode) {
    case SynthMode::d2l: return in.n_gen_d2l() * in.c_fwd_g;
    case SynthMode::ddgr: return in.n_gen_ddgr() * in.steps_eff * in.c_step_g;
    case SynthMode::augmentation: return in.aug_images * in.c_fwd_g_aug;
  }
  throw PreconditionError("bad synth mode");
}

// The replay generator's forward is one denoising evaluation.
double c_gen_train(const CostInputs& in) { return in.n_ft() * in.kappa_train * in.c_step_g; }

double c_opt(const CostInputs& in) { return in.n_prompt * in.s_opt * in.kappa_prompt * in.c_fwd_g; }

std::string cost_method_name(CostMethod m) {
  switch (m) {
    case CostMethod::er_ace: return "er-ace";
    case CostMethod::mixup: return "er-ace+mixup";
    case CostMethod::augmentation: return "er-ace+diffusion";
    case CostMethod::ddgr: return "ddgr";
    case CostMethod::d2l: return "d2l";
  }
  return "?";
}

std::vector<CostMethod> all_cost_methods() {
  return {CostMethod::er_ace, CostMethod::mixup, CostMethod::augmentation, CostMethod::ddgr, CostMethod::d2l};
}

double CostReport::term(const std::string& name) const {
  for (const auto& t : terms)
    if (t.name == name) return t.flops;
  throw PreconditionError("cost report has no term " + name);
}

CostReport method_total(CostMethod m, const CostInputs& in) {
  in.validate();
  CostReport r;
  r.method = m;
  switch (m) {
    case CostMethod::er_ace: r.terms = {{"C_CL", c_cl(in)}}; break;
    case CostMethod::mixup: r.terms = {{"C_CL", c_cl(in)}, {"epsilon", 0.0}}; break;
    case CostMethod::augmentation:
      r.terms = {{"C_CL", c_cl_aug(in)}, {"C_synth", c_synth(in, SynthMode::augmentation)}};
      break;
    case CostMethod::ddgr:
      r.terms = {{"C_CL", c_cl(in)}, {"C_gen_train", c_gen_train(in)}, {"C_synth", c_synth(in, SynthMode::ddgr)}};
      break;
    case CostMethod::d2l:
      r.terms = {{"C_CL", c_cl(in)}, {"C'_CL", c_cl_dream(in)}, {"C_opt", c_opt(in)}, {"C_synth", c_synth(in, SynthMode::d2l)}};
      break;
  }
  for (const auto& t : r.terms) r.total += t.flops;
  const double ref = c_cl(in);
  r.relative = ref > 0 ? r.total / ref : std::numeric_limits<double>::quiet_NaN();
  return r;
}

void write_cost_csv(std::ostream& out, const std::vector<CostReport>& reports) {
  out << "method,term,tflops\n";
  out << std::setprecision(10);
  for (const auto& r : reports) {
    const auto name = cost_method_name(r.method);
    for (const auto& t : r.terms) out << name << ',' << t.name << ',' << tflops(t.flops) << '\n';
    out << name << ",total," << tflops(r.total) << '\n';
    out << name << ",relative," << r.relative << '\n';
  }
}

void write_cost_text(std::ostream& out, const std::vector<CostReport>& reports) {
  auto two = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
  };
  out << std::left << std::setw(20) << "method" << std::setw(72) << "breakdown (TFLOPs)" << std::setw(14) << "total"
      << "relative\n";
  for (const auto& r : reports) {
    std::string b;
    for (const auto& t : r.terms) b += (b.empty() ? "" : ", ") + t.name + "=" + two(tflops(t.flops));
    out << std::left << std::setw(20) << cost_method_name(r.method) << std::setw(72) << b << std::setw(14)
        << two(tflops(r.total)) << two(r.relative) << "x\n";
  }
}

}  // namespace d2l
