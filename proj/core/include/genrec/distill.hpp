#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genrec/rq.hpp"
#include "genrec/tensor.hpp"

namespace genrec {

struct DistillConfig {
  double teacher_momentum = 0.996;
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double center_momentum = 0.9;
  int hidden = 64;     // backbone hidden width
  int embed_dim = 16;  // backbone output, the quantized space
  int proj_dim = 32;   // projection output (prototype count)
  double alpha1 = 0.0;   // iBOT hook, out of scope, kept at 0
  double alpha2 = 0.1;   // KoLeo
  double alpha3 = 0.01;  // commitment
  int rq_levels = 2;
  int rq_entries = 4;
  int rq_collision_vocab = 256;
  int lloyd_iterations = 25;
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  double aug_sigma = 0.1;  // additive jitter scale for the two views
  uint64_t seed = 0;
};

// Student and teacher share the architecture: a 3-layer backbone g on vector
// surrogates plus a linear projection f. Only the student is quantized.
struct DistillState {
  DistillConfig cfg;
  int input_dim = 0;
  std::vector<std::pair<std::string, Tensor>> student;
  std::vector<std::pair<std::string, Tensor>> teacher;  // never optimized
  std::vector<double> center;  // proj_dim, EMA of teacher outputs
  RqCodec codec;

  Tensor student_param(const std::string& name) const;
  Tensor teacher_param(const std::string& name) const;
};

DistillState init_distill(int input_dim, const DistillConfig& cfg);

// Backbone forward (n, input_dim) -> (n, embed_dim); projection -> proj_dim.
Tensor backbone_forward(std::span<const std::pair<std::string, Tensor>> params,
                        const Tensor& x);
Tensor projection_forward(
    std::span<const std::pair<std::string, Tensor>> params, const Tensor& z);

// teacher <- m * teacher + (1 - m) * student, parameter by parameter.
void teacher_update(DistillState& state, double momentum);

// Cross-entropy of the student's log-softmax (temperature tau_s) against the
// centered, sharpened teacher distribution treated as constant; updates the
// center by EMA of the batch teacher outputs.
Tensor dino_ce(const Tensor& student_logits, const Tensor& teacher_logits,
               std::vector<double>& center, double student_temp,
               double teacher_temp, double center_momentum);

struct QuantForward {
  Tensor quantized;    // straight-through gradient to the student embedding
  Tensor commitment;   // scalar, mean over rows of the per-level sum
  std::vector<std::vector<int>> codes;  // per row
};

// z^s = g^s(x), residual-quantized with straight-through gradients; when
// update_codebooks is set the codec's EMA statistics absorb the assignments.
QuantForward quantized_student_forward(DistillState& state, const Tensor& x,
                                       bool update_codebooks = true);

// -(1/n) sum_i ln(min_{j != i} ||z_i - z_j|| + eps) on l2-normalized rows.
Tensor koleo(const Tensor& batch, double eps = 1e-8);

struct DistillResult {
  DistillState state;
  std::vector<double> epoch_loss;  // mean total loss per epoch
};

DistillResult train_rq_dino(const std::vector<std::vector<double>>& vectors,
                            const DistillConfig& cfg);

// Frozen-state encoding: student embedding then codec codes.
std::vector<int> distill_encode(const DistillState& state,
                                std::span<const double> x);

}  // namespace genrec
