#include <doctest.h>

#include <cmath>

#include "xdistill/engine.hpp"
#include "xdistill/gradcheck.hpp"

using namespace xdistill;

TEST_CASE("cross entropy") {
  const Tensor uniform = Tensor::zeros({2, 4});
  CHECK(cross_entropy(uniform, {1, 3}).value() == doctest::Approx(std::log(4.0)));

  Tensor confident = Tensor::zeros({1, 4});
  confident.data()[2] = 1000.0;
  CHECK(cross_entropy(confident, {2}).value() == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(uniform, {1, 4}), Error);
  CHECK_THROWS_AS(cross_entropy(uniform, {1}), Error);
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
  Rng rng(3);
  const Tensor logits = Tensor::randn({3, 5}, rng, 1.0, true);
  const std::vector<int64_t> targets = {4, 0, 2};

  tape().reset();
  logits.zero_grad();
  backward(cross_entropy(logits, targets));
  Tensor probs;
  {
    NoGradGuard guard;
    probs = softmax_rows(logits, 1.0);
  }
  for (int64_t r = 0; r < 3; ++r) {
    for (int64_t c = 0; c < 5; ++c) {
      const double expected =
          (probs.data()[r * 5 + c] - (targets[r] == c ? 1.0 : 0.0)) / 3.0;
      CHECK(logits.grad()[r * 5 + c] == doctest::Approx(expected).epsilon(1e-10));
    }
  }

  const FdReport report = finite_difference_check(
      [&] { return cross_entropy(logits, targets); }, {{"logits", logits}}, 1e-5, 1e-6);
  CHECK(report.pass);
}

TEST_CASE("kd loss") {
  Rng rng(5);
  const Tensor logits = Tensor::randn({4, 6}, rng, 2.0);
  CHECK(kd_loss(logits, logits, 2.0).value() == doctest::Approx(0.0).epsilon(1e-14));

  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = Tensor::randn({3, 5}, rng, 2.0);
    const Tensor b = Tensor::randn({3, 5}, rng, 2.0);
    CHECK(kd_loss(a, b, 1.0 + trial * 0.3).value() >= -1e-12);
  }

  // two-class case against direct summation
  const Tensor t = Tensor::from_values({1, 2}, {2.0, 0.0});
  const Tensor s = Tensor::from_values({1, 2}, {0.0, 0.0});
  const double p1 = std::exp(1.0) / (std::exp(1.0) + 1.0);  // softmax([1, 0])
  const double expected =
      p1 * std::log(p1 / 0.5) + (1.0 - p1) * std::log((1.0 - p1) / 0.5);
  CHECK(kd_loss(t, s, 2.0).value() == doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(kd_loss(t, Tensor::zeros({2, 2}), 1.0), Error);
  CHECK_THROWS_AS(kd_loss(t, s, 0.0), Error);
}

TEST_CASE("kd loss is invariant to per-position logit shifts") {
  Rng rng(7);
  const Tensor t = Tensor::randn({4, 5}, rng, 1.5);
  const Tensor s = Tensor::randn({4, 5}, rng, 1.5);
  const double base = kd_loss(t, s, 1.7).value();

  Tensor t_shift = Tensor::from_values(t.shape(), t.data());
  Tensor s_shift = Tensor::from_values(s.shape(), s.data());
  for (int64_t r = 0; r < 4; ++r) {
    const double ct = 3.0 * rng.normal();
    const double cs = 3.0 * rng.normal();
    for (int64_t c = 0; c < 5; ++c) {
      t_shift.data()[r * 5 + c] += ct;
      s_shift.data()[r * 5 + c] += cs;
    }
  }
  CHECK(kd_loss(t_shift, s_shift, 1.7).value() == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("kd loss leaves the teacher side without gradients") {
  Rng rng(9);
  const Tensor t = Tensor::randn({2, 4}, rng, 1.0, true);
  const Tensor s = Tensor::randn({2, 4}, rng, 1.0, true);
  tape().reset();
  t.zero_grad();
  s.zero_grad();
  backward(kd_loss(t, s, 2.0));
  CHECK_FALSE(t.has_grad());
  CHECK(s.has_grad());
}

TEST_CASE("frobenius loss") {
  Rng rng(11);
  const Tensor h = Tensor::randn({6, 4}, rng, 1.0);
  CHECK(frobenius_loss(h, h, 3).value() == doctest::Approx(0.0));

  // B=1, S=2, D=2 with every difference epsilon: ||.||_F = 2 epsilon
  const double eps = 0.25;
  const Tensor a = Tensor::zeros({2, 2});
  const Tensor b = Tensor::full({2, 2}, eps);
  CHECK(frobenius_loss(a, b, 1).value() == doctest::Approx(2.0 * eps).epsilon(1e-12));

  // permuting the batch leaves the mean unchanged
  const int64_t batch = 3, seq = 2, d = 4;
  const Tensor ht = Tensor::randn({batch * seq, d}, rng, 1.0);
  const Tensor hs = Tensor::randn({batch * seq, d}, rng, 1.0);
  const double base = frobenius_loss(ht, hs, batch).value();
  std::vector<int64_t> perm;
  for (int64_t b2 : {2, 0, 1}) {
    for (int64_t t = 0; t < seq; ++t) perm.push_back(b2 * seq + t);
  }
  const double permuted =
      frobenius_loss(gather_rows(ht, perm), gather_rows(hs, perm), batch).value();
  CHECK(permuted == doctest::Approx(base).epsilon(1e-12));

  CHECK_THROWS_AS(frobenius_loss(h, Tensor::zeros({2, 2}), 1), Error);
}

TEST_CASE("combined loss") {
  const Tensor ce = Tensor::scalar(1.7);
  const Tensor kd = Tensor::scalar(0.9);
  const Tensor frob = Tensor::scalar(4.0);

  CHECK(combined_loss(ce, kd, Tensor(), {0.0, 1.0, 0.0}, 100).value() ==
        doctest::Approx(1.7));

  const double expected = 0.6 * 1.7 + 0.3 * 0.9 + 0.1 * 4.0 / std::sqrt(100.0);
  CHECK(combined_loss(ce, kd, frob, {0.3, 1.0, 0.1}, 100).value() ==
        doctest::Approx(expected).epsilon(1e-12));

  // beta = 0 reduces exactly to the two-term time-varying loss
  const double two_term = (1.0 - 0.4) * 1.7 + 0.4 * 2.0 * 2.0 * 0.9;
  CHECK(combined_loss(ce, kd, Tensor(), {0.4, 2.0, 0.0}, 100).value() ==
        doctest::Approx(two_term).epsilon(1e-12));

  // literal loop form drops the T^2 factor
  const double literal = (1.0 - 0.4) * 1.7 + 0.4 * 0.9;
  CHECK(combined_loss(ce, kd, Tensor(), {0.4, 2.0, 0.0}, 100, false).value() ==
        doctest::Approx(literal).epsilon(1e-12));

  // identical logits and aligned states leave only the CE term
  CHECK(combined_loss(ce, Tensor::scalar(0.0), Tensor::scalar(0.0), {0.3, 2.0, 0.1}, 64)
            .value() == doctest::Approx(0.6 * 1.7).epsilon(1e-12));

  CHECK_THROWS_AS(combined_loss(ce, kd, frob, {0.8, 1.0, 0.3}, 100), Error);
  CHECK_THROWS_AS(combined_loss(ce, kd, frob, {0.3, 0.0, 0.1}, 100), Error);
}

TEST_CASE("schedule value") {
  CHECK(schedule_value(0.8, 0.5, 0) == doctest::Approx(0.8));

  // direct evaluation of the formula at k = 1e6
  const double expected = 0.5 + 0.3 / (1.0 + std::log(1000001.0));
  CHECK(schedule_value(0.8, 0.5, 1000000) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(schedule_value(0.8, 0.5, 1000000) - 0.5203) < 1e-3);

  double prev = schedule_value(0.8, 0.5, 0);
  for (int64_t k = 1; k < 2000; k += 7) {
    const double v = schedule_value(0.8, 0.5, k);
    CHECK(v <= prev);
    CHECK(v >= 0.5);
    CHECK(v <= 0.8);
    prev = v;
  }

  CHECK_THROWS_AS(schedule_value(0.4, 0.5, 1), Error);
  CHECK_THROWS_AS(schedule_value(0.8, 0.5, -1), Error);
}

TEST_CASE("epoch decay") {
  AnnealState s = AnnealState::make(0.8, 0.5, 2.0, 1.0, 0.05, 0.05);
  s.step = 17;
  epoch_decay(s);
  CHECK(s.alpha == doctest::Approx(0.75));
  CHECK(s.temp == doctest::Approx(1.95));
  CHECK(s.step == 0);
  CHECK(s.epoch == 2);

  AnnealState near = AnnealState::make(0.8, 0.5, 2.0, 1.0, 0.05, 0.05);
  near.alpha = 0.52;
  epoch_decay(near);
  CHECK(near.alpha == doctest::Approx(0.5));

  AnnealState ten = AnnealState::make(0.8, 0.5, 2.0, 1.0, 0.05, 0.05);
  for (int i = 0; i < 10; ++i) epoch_decay(ten);
  CHECK(ten.alpha == doctest::Approx(0.5));
}

TEST_CASE("student architecture heuristic") {
  const StudentConfig a = derive_student_config(4, 6, 64, 60);
  CHECK(a.n_blocks == 2);
  CHECK(a.n_heads == 8);
  CHECK(a.d_model == 64);
  CHECK(a.vocab == 60);

  const StudentConfig b = derive_student_config(28, 12, 96, 50);
  CHECK(b.n_blocks == 14);
  CHECK(b.n_heads == 12);

  const StudentConfig c = derive_student_config(3, 1, 64, 10);
  CHECK(c.n_blocks == 1);
  CHECK(c.n_heads == 4);

  CHECK_THROWS_AS(derive_student_config(4, 3, 62, 10), Error);  // 62 % 4 != 0
  CHECK_THROWS_AS(derive_student_config(1, 4, 64, 10), Error);
}

TEST_CASE("student initialization reuses and freezes teacher weights") {
  const TeacherModel teacher = TeacherModel::init(11, 16, 4, 2, 8, 101);
  const StudentConfig sc = derive_student_config(4, 2, 16, 11);
  const StudentModel student = init_student_from_teacher(teacher, sc, 202);

  CHECK(student.embedding.data() == teacher.embedding.data());
  CHECK(student.head.data() == teacher.head.data());
  CHECK_FALSE(student.embedding.requires_grad());
  CHECK_FALSE(student.head.requires_grad());

  const double stack_params = static_cast<double>(student.stack.param_count());
  const double frozen =
      static_cast<double>(teacher.embedding.numel() + teacher.head.numel());
  CHECK(student.trainable_fraction ==
        doctest::Approx(stack_params / (stack_params + frozen)));

  StudentConfig bad = sc;
  bad.d_model = 32;
  CHECK_THROWS_AS(init_student_from_teacher(teacher, bad, 1), Error);
}

TEST_CASE("no gradient reaches frozen parts") {
  TeacherModel teacher = TeacherModel::init(9, 16, 2, 2, 6, 301);
  teacher.set_requires_grad(false);
  const StudentConfig sc = derive_student_config(2, 2, 16, 9);
  StudentModel student = init_student_from_teacher(teacher, sc, 302);

  const std::vector<int64_t> tokens = {1, 2, 3, 4, 5, 6};
  const std::vector<int64_t> targets = {2, 3, 4, 5, 6, 7};
  tape().reset();
  Tensor teacher_logits;
  {
    NoGradGuard guard;
    teacher_logits = teacher_forward(teacher, tokens, 1, 6).logits;
  }
  const StudentOutput out = student_forward(student, tokens, 1, 6);
  const Tensor loss = combined_loss(cross_entropy(out.logits, targets),
                                    kd_loss(teacher_logits, out.logits, 2.0), Tensor(),
                                    {0.5, 2.0, 0.0}, out.hidden.numel());
  backward(loss);

  CHECK_FALSE(student.embedding.has_grad());
  CHECK_FALSE(student.head.has_grad());
  for (const auto& [name, t] : teacher.named_params()) CHECK_FALSE(t.has_grad());
  bool any_stack_grad = false;
  for (const auto& [name, t] : student.stack.named_params()) {
    any_stack_grad = any_stack_grad || t.has_grad();
  }
  CHECK(any_stack_grad);
}

TEST_CASE("schedule driver per-epoch vs global step") {
  RunConfig config;
  config.k_mode = "per_epoch";
  ScheduleDriver per_epoch(config);
  CHECK(per_epoch.weights().alpha_k == doctest::Approx(0.8));
  CHECK(per_epoch.weights().temp_k == doctest::Approx(2.0));
  per_epoch.after_step();
  per_epoch.after_step();
  per_epoch.after_epoch();
  // step counter reset: back at the (decayed) anchor
  CHECK(per_epoch.weights().alpha_k == doctest::Approx(0.75));

  config.k_mode = "global";
  ScheduleDriver global(config);
  global.after_step();
  global.after_step();
  global.after_epoch();
  const double expected = 0.5 + (0.75 - 0.5) / (1.0 + std::log(3.0));
  CHECK(global.weights().alpha_k == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("annealed beta schedule stays inside its band") {
  RunConfig config;
  config.beta_mode = "annealed";
  ScheduleDriver driver(config);
  for (int epoch = 0; epoch < 5; ++epoch) {
    for (int step = 0; step < 20; ++step) {
      const DistillWeights w = driver.weights();
      CHECK(w.beta_k >= 0.1 - 1e-12);
      CHECK(w.beta_k <= 0.2 + 1e-12);
      CHECK(w.alpha_k >= 0.2 - 1e-12);
      CHECK(w.alpha_k <= 0.3 + 1e-12);
      CHECK(w.alpha_k + w.beta_k <= 1.0);
      driver.after_step();
    }
    driver.after_epoch();
  }
}

TEST_CASE("tiny distillation run is deterministic and leaves frozen parts intact") {
  RunConfig config;
  config.context_size = 8;
  config.batch_size = 2;
  config.grad_accum = 2;
  config.epochs = 2;
  config.corpus_chars = 600;
  config.teacher_layers = 2;
  config.teacher_heads = 2;
  config.d_model = 16;
  config.teacher_epochs = 0;
  config.validate();

  const CorpusBundle corpus = prepare_corpus(config);
  TeacherModel teacher = TeacherModel::init(corpus.vocab.size(), config.d_model,
                                            config.teacher_layers, config.teacher_heads,
                                            config.context_size, 7);
  teacher.set_requires_grad(false);
  StudentModel student = init_student_from_teacher(
      teacher, student_config_from(config, corpus.vocab.size()), 8);
  const std::vector<double> frozen_embedding = student.embedding.data();
  const std::vector<double> frozen_head = student.head.data();

  const DistillResult run = run_delta_distillation(teacher, student, corpus.train_tokens,
                                                   config);
  REQUIRE(!run.metrics.empty());

  // first step uses the untouched anchors
  CHECK(run.metrics[0].alpha_k == doctest::Approx(0.8));
  CHECK(run.metrics[0].temp_k == doctest::Approx(2.0));
  CHECK(run.metrics[0].epoch == 1);
  CHECK(run.metrics[0].step == 0);

  // loss bookkeeping reconstructs from components and weights
  for (const MetricsRecord& r : run.metrics) {
    const double reconstructed =
        (1.0 - r.alpha_k - r.beta_k) * r.loss_ce +
        r.alpha_k * r.temp_k * r.temp_k * r.loss_kd +
        r.beta_k * r.loss_frob / std::sqrt(static_cast<double>(
                                     config.batch_size * config.context_size * 16));
    CHECK(std::abs(reconstructed - r.loss_total) < 1e-9);
  }

  CHECK(student.embedding.data() == frozen_embedding);
  CHECK(student.head.data() == frozen_head);

  // same seeds, fresh student: bitwise-identical metrics
  StudentModel student2 = init_student_from_teacher(
      teacher, student_config_from(config, corpus.vocab.size()), 8);
  const DistillResult run2 = run_delta_distillation(teacher, student2, corpus.train_tokens,
                                                    config);
  REQUIRE(run.metrics.size() == run2.metrics.size());
  for (size_t i = 0; i < run.metrics.size(); ++i) {
    CHECK(run.metrics[i].loss_total == run2.metrics[i].loss_total);
    CHECK(run.metrics[i].grad_norm == run2.metrics[i].grad_norm);
  }
  const auto p1 = student.stack.named_params();
  const auto p2 = student2.stack.named_params();
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].second.data() == p2[i].second.data());
}

TEST_CASE("pure cross-entropy training when the anneal is degenerate") {
  RunConfig config;
  config.context_size = 8;
  config.batch_size = 2;
  config.grad_accum = 1;
  config.epochs = 1;
  config.corpus_chars = 400;
  config.teacher_layers = 2;
  config.teacher_heads = 2;
  config.d_model = 16;
  config.alpha_initial = 0.0;
  config.alpha_final = 0.0;
  config.validate();

  const CorpusBundle corpus = prepare_corpus(config);
  TeacherModel teacher = TeacherModel::init(corpus.vocab.size(), config.d_model, 2, 2,
                                            config.context_size, 7);
  teacher.set_requires_grad(false);
  StudentModel student = init_student_from_teacher(
      teacher, student_config_from(config, corpus.vocab.size()), 8);
  const DistillResult run =
      run_delta_distillation(teacher, student, corpus.train_tokens, config);
  for (const MetricsRecord& r : run.metrics) {
    CHECK(r.alpha_k == 0.0);
    CHECK(r.beta_k == 0.0);
    CHECK(r.loss_total == doctest::Approx(r.loss_ce).epsilon(1e-12));
  }
}
