#include "genrec/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "genrec/errors.hpp"
#include "genrec/optim.hpp"

namespace genrec {

namespace {

Tensor find_param(std::span<const std::pair<std::string, Tensor>> params,
                  const std::string& name) {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw ConfigError("unknown parameter " + name);
}

}  // namespace

Tensor DistillState::student_param(const std::string& name) const {
  return find_param(student, name);
}

Tensor DistillState::teacher_param(const std::string& name) const {
  return find_param(teacher, name);
}

DistillState init_distill(int input_dim, const DistillConfig& cfg) {
  if (cfg.teacher_momentum <= 0.0 || cfg.teacher_momentum >= 1.0 ||
      cfg.center_momentum <= 0.0 || cfg.center_momentum >= 1.0)
    throw ConfigError("momenta must lie in (0,1)");
  if (cfg.student_temp <= 0.0 || cfg.teacher_temp <= 0.0)
    throw ConfigError("temperatures must be positive");
  if (cfg.alpha3 < 0.0) throw ConfigError("commitment weight must be >= 0");

  DistillState st;
  st.cfg = cfg;
  st.input_dim = input_dim;
  st.center.assign(cfg.proj_dim, 0.0);
  Rng rng = make_rng(cfg.seed, "distill-init");
  auto weight = [&](const std::string& name, int r, int c) {
    st.student.emplace_back(name, Tensor::randn({r, c}, 0.1, rng, true));
  };
  auto zeros = [&](const std::string& name, int n) {
    st.student.emplace_back(
        name, Tensor::parameter({1, n}, std::vector<double>(n, 0.0)));
  };
  weight("g.w1", input_dim, cfg.hidden);
  zeros("g.b1", cfg.hidden);
  weight("g.w2", cfg.hidden, cfg.hidden);
  zeros("g.b2", cfg.hidden);
  weight("g.w3", cfg.hidden, cfg.embed_dim);
  zeros("g.b3", cfg.embed_dim);
  weight("f.w", cfg.embed_dim, cfg.proj_dim);
  zeros("f.b", cfg.proj_dim);

  // Teacher starts as a copy of the student and stays off the tape.
  for (const auto& [name, t] : st.student) {
    st.teacher.emplace_back(
        name, Tensor::from_data(t.shape(), std::vector<double>(
                                               t.data().begin(),
                                               t.data().end())));
  }
  return st;
}

Tensor backbone_forward(std::span<const std::pair<std::string, Tensor>> params,
                        const Tensor& x) {
  Tensor h = gelu(add_rowvec(matmul(x, find_param(params, "g.w1")),
                             find_param(params, "g.b1")));
  h = gelu(add_rowvec(matmul(h, find_param(params, "g.w2")),
                      find_param(params, "g.b2")));
  return add_rowvec(matmul(h, find_param(params, "g.w3")),
                    find_param(params, "g.b3"));
}

Tensor projection_forward(
    std::span<const std::pair<std::string, Tensor>> params, const Tensor& z) {
  return add_rowvec(matmul(z, find_param(params, "f.w")),
                    find_param(params, "f.b"));
}

void teacher_update(DistillState& state, double momentum) {
  if (state.teacher.size() != state.student.size())
    throw DimensionMismatch("teacher/student parameter lists differ");
  for (size_t i = 0; i < state.teacher.size(); ++i) {
    auto dst = state.teacher[i].second.mutable_data();
    auto src = state.student[i].second.data();
    if (dst.size() != src.size())
      throw DimensionMismatch("teacher/student shapes differ");
    for (size_t j = 0; j < dst.size(); ++j)
      dst[j] = momentum * dst[j] + (1.0 - momentum) * src[j];
  }
}

Tensor dino_ce(const Tensor& student_logits, const Tensor& teacher_logits,
               std::vector<double>& center, double student_temp,
               double teacher_temp, double center_momentum) {
  const int n = student_logits.rows(), k = student_logits.cols();
  if (teacher_logits.rows() != n || teacher_logits.cols() != k)
    throw ShapeMismatch("student/teacher logit shapes differ");
  if (static_cast<int>(center.size()) != k)
    throw DimensionMismatch("center dimension");

  // Teacher target: softmax((t - center) / tau_t), plain numbers.
  std::vector<double> target(static_cast<size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    const double* row = teacher_logits.data().data() + static_cast<size_t>(i) * k;
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j)
      m = std::max(m, (row[j] - center[j]) / teacher_temp);
    double z = 0.0;
    for (int j = 0; j < k; ++j)
      z += std::exp((row[j] - center[j]) / teacher_temp - m);
    for (int j = 0; j < k; ++j)
      target[static_cast<size_t>(i) * k + j] =
          std::exp((row[j] - center[j]) / teacher_temp - m) / z;
  }

  Tensor total = Tensor::scalar(0.0);
  Tensor scaled = scale(student_logits, 1.0 / student_temp);
  for (int i = 0; i < n; ++i) {
    Tensor lp = log_softmax(slice_rows(scaled, i, i + 1));
    std::span<const double> trow(target.data() + static_cast<size_t>(i) * k,
                                 static_cast<size_t>(k));
    Tensor weighted = mul(lp, Tensor::from_data({1, k}, std::vector<double>(
                                                            trow.begin(),
                                                            trow.end())));
    total = add(total, sum(weighted));
  }
  Tensor loss = scale(total, -1.0 / n);

  for (int j = 0; j < k; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i)
      mean += teacher_logits.data()[static_cast<size_t>(i) * k + j];
    mean /= n;
    center[j] = center_momentum * center[j] + (1.0 - center_momentum) * mean;
  }
  return loss;
}

QuantForward quantized_student_forward(DistillState& state, const Tensor& x,
                                       bool update_codebooks) {
  Tensor z = backbone_forward(state.student, x);
  const int n = z.rows(), d = z.cols();
  if (d != state.codec.dim())
    throw DimensionMismatch("student embedding dim vs codec dim");

  QuantForward out;
  out.codes.reserve(n);
  std::vector<double> delta(static_cast<size_t>(n) * d);
  std::vector<EmaAssignment> assignments;
  Tensor commit = Tensor::scalar(0.0);
  for (int i = 0; i < n; ++i) {
    std::span<const double> row(z.data().data() + static_cast<size_t>(i) * d,
                                static_cast<size_t>(d));
    EncodeResult enc = state.codec.encode(row);
    std::vector<double> hat = state.codec.decode(enc.codes);
    for (int j = 0; j < d; ++j)
      delta[static_cast<size_t>(i) * d + j] = hat[j] - row[j];

    Tensor r = slice_rows(z, i, i + 1);
    for (int l = 0; l < state.codec.num_levels(); ++l) {
      std::span<const double> entry =
          state.codec.level(l).center(enc.codes[l]);
      commit = add(commit, commitment_loss(r, entry));
      if (l + 1 < state.codec.num_levels()) r = add_buffer(r, entry, -1.0);
      assignments.push_back(
          {l, enc.codes[l],
           std::vector<double>(enc.residuals[l].begin(),
                               enc.residuals[l].end())});
    }
    out.codes.push_back(enc.codes);
  }
  out.quantized = add_buffer(z, delta);
  out.commitment = scale(commit, 1.0 / n);
  if (update_codebooks) state.codec.ema_update(assignments);
  return out;
}

Tensor koleo(const Tensor& batch, double eps) {
  const int n = batch.rows();
  if (n < 2) throw BatchTooSmall("koleo needs at least two rows");
  Tensor z = l2_normalize_rows(batch);
  const int d = z.cols();

  Tensor total = Tensor::scalar(0.0);
  for (int i = 0; i < n; ++i) {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    const double* zi = z.data().data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double* zj = z.data().data() + static_cast<size_t>(j) * d;
      double d2 = 0.0;
      for (int c = 0; c < d; ++c) {
        double diff = zi[c] - zj[c];
        d2 += diff * diff;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = j;
      }
    }
    Tensor diff = sub(slice_rows(z, i, i + 1), slice_rows(z, best, best + 1));
    Tensor dist = sqrt_elem(sum(mul(diff, diff)));
    total = add(total, log_elem(add_const(dist, eps)));
  }
  return scale(total, -1.0 / n);
}

DistillResult train_rq_dino(const std::vector<std::vector<double>>& vectors,
                            const DistillConfig& cfg) {
  if (vectors.empty()) throw EmptyInput("no vectors to distill");
  const int input_dim = static_cast<int>(vectors[0].size());
  DistillState state = init_distill(input_dim, cfg);

  // Seed the codebooks from the untrained student's embeddings.
  {
    NoGradGuard ng;
    std::vector<double> flat;
    flat.reserve(vectors.size() * static_cast<size_t>(input_dim));
    for (const auto& v : vectors) flat.insert(flat.end(), v.begin(), v.end());
    Tensor all = Tensor::from_data(
        {static_cast<int>(vectors.size()), input_dim}, std::move(flat));
    Tensor z = backbone_forward(state.student, all);
    std::vector<std::vector<double>> embeds(vectors.size());
    for (size_t i = 0; i < vectors.size(); ++i) {
      const double* row =
          z.data().data() + i * static_cast<size_t>(cfg.embed_dim);
      embeds[i].assign(row, row + cfg.embed_dim);
    }
    state.codec = RqCodec::fit(embeds, cfg.rq_levels, cfg.rq_entries,
                               cfg.lloyd_iterations,
                               derive_seed(cfg.seed, "codec"),
                               cfg.rq_collision_vocab);
  }

  std::vector<Tensor> params;
  for (auto& [_, t] : state.student) params.push_back(t);
  AdamWConfig oc;
  oc.lr = cfg.lr;
  AdamW opt(params, oc);

  DistillResult result;
  const int n = static_cast<int>(vectors.size());
  std::vector<size_t> order(vectors.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, "distill-epoch-" + std::to_string(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[uniform_int(rng, static_cast<int64_t>(i))]);

    double epoch_loss = 0.0;
    int steps = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      int end = std::min(n, start + cfg.batch_size);
      int bsz = end - start;
      if (bsz < 2) continue;  // koleo needs a pair
      std::vector<double> va, vb;
      va.reserve(static_cast<size_t>(bsz) * input_dim);
      vb.reserve(static_cast<size_t>(bsz) * input_dim);
      for (int i = start; i < end; ++i) {
        const auto& base = vectors[order[i]];
        for (int j = 0; j < input_dim; ++j)
          va.push_back(base[j] + cfg.aug_sigma * normal(rng));
        for (int j = 0; j < input_dim; ++j)
          vb.push_back(base[j] + cfg.aug_sigma * normal(rng));
      }
      Tensor xa = Tensor::from_data({bsz, input_dim}, std::move(va));
      Tensor xb = Tensor::from_data({bsz, input_dim}, std::move(vb));

      Tensor ta, tb;
      {
        NoGradGuard ng;
        ta = projection_forward(state.teacher,
                                backbone_forward(state.teacher, xa));
        tb = projection_forward(state.teacher,
                                backbone_forward(state.teacher, xb));
      }

      for (Tensor& p : params) p.zero_grad();
      QuantForward qa = quantized_student_forward(state, xa);
      QuantForward qb = quantized_student_forward(state, xb);
      Tensor sa = projection_forward(state.student, qa.quantized);
      Tensor sb = projection_forward(state.student, qb.quantized);

      Tensor dino =
          scale(add(dino_ce(sa, tb, state.center, cfg.student_temp,
                            cfg.teacher_temp, cfg.center_momentum),
                    dino_ce(sb, ta, state.center, cfg.student_temp,
                            cfg.teacher_temp, cfg.center_momentum)),
                0.5);
      Tensor spread = scale(add(koleo(qa.quantized), koleo(qb.quantized)), 0.5);
      Tensor commit = scale(add(qa.commitment, qb.commitment), 0.5);
      Tensor ibot = Tensor::scalar(0.0);  // hook kept so the sum matches
      Tensor total = add(add(dino, scale(ibot, cfg.alpha1)),
                         add(scale(spread, cfg.alpha2),
                             scale(commit, cfg.alpha3)));
      backward(total);
      opt.step();
      clear_tape();
      teacher_update(state, cfg.teacher_momentum);
      epoch_loss += total.item();
      ++steps;
    }
    result.epoch_loss.push_back(epoch_loss / std::max(steps, 1));
  }
  result.state = std::move(state);
  return result;
}

std::vector<int> distill_encode(const DistillState& state,
                                std::span<const double> x) {
  NoGradGuard ng;
  Tensor row = Tensor::from_data(
      {1, state.input_dim},
      std::vector<double>(x.begin(), x.end()));
  Tensor z = backbone_forward(state.student, row);
  return state.codec.encode(z.data()).codes;
}

}  // namespace genrec
