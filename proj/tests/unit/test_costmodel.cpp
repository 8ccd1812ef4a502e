#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "d2l/costmodel/costmodel.hpp"

using namespace d2l;

namespace {

void expect_tflops(double flops, double table, double tol = 5e-4) {
  EXPECT_LE(std::abs(tflops(flops) - table) / table, tol) << tflops(flops) << " vs " << table;
}

}  // namespace

TEST(Cost, PresetReproducesTable) {
  const auto in = reference_preset();
  const auto er = method_total(CostMethod::er_ace, in);
  expect_tflops(er.total, 273.61);
  EXPECT_EQ(er.relative, 1.0);

  const auto mix = method_total(CostMethod::mixup, in);
  expect_tflops(mix.total, 273.61);
  EXPECT_EQ(mix.term("epsilon"), 0.0);
  EXPECT_EQ(mix.relative, 1.0);

  const auto aug = method_total(CostMethod::augmentation, in);
  expect_tflops(aug.term("C_CL"), 547.21);
  expect_tflops(aug.term("C_synth"), 1373.21);
  expect_tflops(aug.total, 1920.42);
  EXPECT_NEAR(aug.relative, 7.02, 7.02 * 5e-4);

  const auto ddgr = method_total(CostMethod::ddgr, in);
  expect_tflops(ddgr.term("C_CL"), 273.61);
  expect_tflops(ddgr.term("C_gen_train"), 132473.48);
  expect_tflops(ddgr.term("C_synth"), 1149.94);
  expect_tflops(ddgr.total, 133897.03);
  EXPECT_NEAR(ddgr.relative, 489.4, 489.4 * 5e-4);

  const auto d2l = method_total(CostMethod::d2l, in);
  expect_tflops(d2l.term("C_CL"), 273.61);
  expect_tflops(d2l.term("C'_CL"), 2462.45);
  expect_tflops(d2l.term("C_opt"), 551.11);
  expect_tflops(d2l.term("C_synth"), 1377.77);
  expect_tflops(d2l.total, 4664.93);
  EXPECT_NEAR(d2l.relative, 17.05, 17.05 * 5e-4);
}

TEST(Cost, TotalsAreSumsOfTerms) {
  const auto in = reference_preset();
  for (auto m : all_cost_methods()) {
    const auto r = method_total(m, in);
    double s = 0;
    for (const auto& t : r.terms) s += t.flops;
    EXPECT_EQ(r.total, s);
    EXPECT_EQ(r.relative, r.total / c_cl(in));
  }
}

TEST(Cost, TrivialCases) {
  CostInputs in = reference_preset();
  in.rho = 0;
  in.epochs = 1;
  in.n_img = 1;
  EXPECT_DOUBLE_EQ(c_cl(in), 3 * in.c_fwd_b);
  in.n_img = 0;
  EXPECT_EQ(c_cl(in), 0.0);

  in = reference_preset();
  in.alpha = 0;
  EXPECT_EQ(c_cl_aug(in), c_cl(in));
  in.alpha = 3;
  EXPECT_DOUBLE_EQ(c_cl_aug(in), 4 * c_cl(in));

  in = reference_preset();
  const double base = c_cl_dream(in);
  in.k_dream = 90;
  EXPECT_DOUBLE_EQ(c_cl_dream(in), 2 * base);
  in.k_dream = 0;
  EXPECT_EQ(c_cl_dream(in), 0.0);
  EXPECT_EQ(c_synth(in, SynthMode::d2l), 0.0);

  in = reference_preset();
  in.ft_iterations = 0;
  EXPECT_EQ(c_gen_train(in), 0.0);
  in.s_opt = 0;
  EXPECT_EQ(c_opt(in), 0.0);
  in.ddgr_classes = 0;
  EXPECT_EQ(c_synth(in, SynthMode::ddgr), 0.0);
}

TEST(Cost, KappaFactors) {
  const auto in = reference_preset();
  EXPECT_EQ(in.kappa_train, 3.0);
  EXPECT_EQ(in.kappa_prompt, 2.0);
  EXPECT_DOUBLE_EQ(c_gen_train(in), in.n_ft() * 3 * in.c_step_g);
  EXPECT_DOUBLE_EQ(c_opt(in), in.n_prompt * in.s_opt * 2 * in.c_fwd_g);
}

TEST(Cost, HomogeneityInPerForwardCosts) {
  const auto in = reference_preset();
  for (double s : {2.0, 0.25, 1024.0, 3.7}) {
    CostInputs k = in;
    k.c_fwd_b *= s;
    k.c_fwd_g *= s;
    k.c_fwd_g_aug *= s;
    k.c_step_g *= s;
    const bool pow2 = std::exp2(std::round(std::log2(s))) == s;
    for (auto m : all_cost_methods()) {
      const auto a = method_total(m, in), b = method_total(m, k);
      if (pow2) {
        EXPECT_EQ(b.total, s * a.total);
        EXPECT_EQ(b.relative, a.relative);
      } else {
        EXPECT_NEAR(b.total / (s * a.total), 1.0, 1e-14);
        EXPECT_NEAR(b.relative, a.relative, 1e-12 * a.relative);
      }
    }
  }
}

TEST(Cost, OverridesAndValidation) {
  auto in = reference_preset();
  apply_override(in, "alpha=0");
  EXPECT_EQ(in.alpha, 0.0);
  apply_override(in, "c_fwd_b=2e9");
  EXPECT_EQ(in.c_fwd_b, 2e9);
  EXPECT_THROW(apply_override(in, "nope=1"), PreconditionError);
  EXPECT_THROW(apply_override(in, "alpha"), PreconditionError);
  EXPECT_THROW(apply_override(in, "alpha=1x"), PreconditionError);
  in.rho = -1;
  EXPECT_THROW(method_total(CostMethod::d2l, in), PreconditionError);
  EXPECT_EQ(cost_field_names().size(), 20u);
}

TEST(Cost, Output) {
  std::vector<CostReport> r;
  for (auto m : all_cost_methods()) r.push_back(method_total(m, reference_preset()));
  std::ostringstream csv, text;
  write_cost_csv(csv, r);
  write_cost_text(text, r);
  EXPECT_EQ(csv.str().rfind("method,term,tflops\n", 0), 0u);
  // Back-solved constants land within tolerance, not always on the printed cent.
  EXPECT_NE(text.str().find("C_opt=551.11"), std::string::npos);
  EXPECT_NE(text.str().find("17.05x"), std::string::npos);
  EXPECT_NE(text.str().find("489.37x"), std::string::npos);
  EXPECT_NE(csv.str().find("d2l,total,"), std::string::npos);
}
