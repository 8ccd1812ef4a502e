#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "d2l/nncore/tensor.hpp"

namespace d2l {

/// Per-task compute accounting inputs. Counts are doubles so overrides and
/// scaling stay uniform. Per-forward costs are FLOPs with 1 MAC = 1 FLOP.
struct CostInputs {
  double n_img = 2500;  // real images per task
  double epochs = 10;
  double rho = 1;  // replay samples per real sample
  double kappa_train = 3;
  double kappa_prompt = 2;
  double alpha = 1;  // augmentation factor

  double k_dream = 45;                  // dreamed classes (worst case)
  double dream_images_per_class = 500;  // N_dream = N_gen = this * k_dream
  double n_prompt = 45;
  double s_opt = 100;

  double ddgr_images_per_class = 20;
  double ddgr_classes = 5;
  double steps_eff = 250;
  double ft_iterations = 15000;
  double ft_batch = 64;

  double aug_images = 22500;

  double c_fwd_b = 0;      // backbone forward per sample
  double c_fwd_g = 0;      // full dreaming pipeline per generated image
  double c_fwd_g_aug = 0;  // augmentation pipeline per generated image
  double c_step_g = 0;     // one denoising evaluation of the replay generator

  double n_dream() const { return dream_images_per_class * k_dream; }
  double n_gen_d2l() const { return dream_images_per_class * k_dream; }
  double n_gen_ddgr() const { return ddgr_images_per_class * ddgr_classes; }
  double n_ft() const { return ft_iterations * ft_batch; }

  /// Throws PreconditionError on negative or non-finite fields.
  void validate() const;
};

/// The back-solved constants reproducing the reference per-task compute table.
CostInputs reference_preset();
/// How each preset constant was obtained, keyed by field name.
std::vector<std::pair<std::string, std::string>> reference_derivations();

/// Applies "key=value" to the named field; throws PreconditionError on an
/// unknown key or unparsable value.
void apply_override(CostInputs& in, const std::string& key_eq_value);
std::vector<std::string> cost_field_names();

double c_cl(const CostInputs& in);
double c_cl_aug(const CostInputs& in);
double c_cl_dream(const CostInputs& in);

enum class SynthMode { d2l, ddgr, augmentation };
double c_synth(const CostInputs& in, SynthMode mode);
double c_gen_train(const CostInputs& in);
double c_opt(const CostInputs& in);

enum class CostMethod { er_ace, mixup, augmentation, ddgr, d2l };
std::string cost_method_name(CostMethod m);
std::vector<CostMethod> all_cost_methods();

struct CostTerm {
  std::string name;  // C_CL, C'_CL, C_synth, C_gen_train, C_opt, epsilon
  double flops = 0.0;
};

struct CostReport {
  CostMethod method = CostMethod::er_ace;
  std::vector<CostTerm> terms;
  double total = 0.0;     // FLOPs, sum of terms
  double relative = 0.0;  // total / ER-ACE total
  double term(const std::string& name) const;  // throws if absent
};

CostReport method_total(CostMethod m, const CostInputs& in);

inline double tflops(double flops) { return flops / 1e12; }

/// method,term,tflops rows followed by total and relative rows per method.
void write_cost_csv(std::ostream& out, const std::vector<CostReport>& reports);
/// Aligned table with 2-decimal TFLOPs.
void write_cost_text(std::ostream& out, const std::vector<CostReport>& reports);

}  // namespace d2l
