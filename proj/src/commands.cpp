#include "xdistill/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "xdistill/benchmark.hpp"
#include "xdistill/checkpoint.hpp"
#include "xdistill/engine.hpp"

namespace xdistill {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string prepare_out_dir(const std::string& out_dir, const RunConfig& config) {
  check(!out_dir.empty(), "output directory must not be empty");
  fs::create_directories(out_dir);
  const std::string echo_path = (fs::path(out_dir) / "config_echo.txt").string();
  const std::string tmp = echo_path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    check(f.good(), "cannot write config echo to '" + tmp + "'");
    f << config_echo(config);
  }
  check(std::rename(tmp.c_str(), echo_path.c_str()) == 0,
        "cannot finalize config echo at '" + echo_path + "'");
  return echo_path;
}

void write_json_lines(const std::string& path, const std::vector<std::string>& lines) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    check(f.good(), "cannot open '" + tmp + "' for writing");
    for (const auto& line : lines) f << line << "\n";
  }
  check(std::rename(tmp.c_str(), path.c_str()) == 0, "cannot finalize '" + path + "'");
}

void check_vocab_matches(const Vocab& from_checkpoint, const Vocab& from_corpus,
                         const std::string& what) {
  check(from_checkpoint.size() == from_corpus.size() &&
            from_checkpoint.symbols() == from_corpus.symbols(),
        what + ": checkpoint vocabulary does not match the configured corpus");
}

}  // namespace

void cmd_pretrain_teacher(const RunConfig& config, const std::string& out_dir) {
  config.validate();
  prepare_out_dir(out_dir, config);
  const CorpusBundle corpus = prepare_corpus(config);

  TeacherModel teacher = TeacherModel::init(
      corpus.vocab.size(), config.d_model, config.teacher_layers, config.teacher_heads,
      config.effective_teacher_max_seq(), static_cast<uint64_t>(config.seed));

  TeacherPretrainOptions options;
  options.epochs = config.teacher_epochs;
  options.batch_size = config.batch_size;
  options.context = config.context_size;
  options.lr = config.teacher_lr;
  options.warmup_ratio = config.warmup_ratio;
  options.seed = static_cast<uint64_t>(config.seed);
  const TeacherPretrainResult result = teacher_pretrain(teacher, corpus.train_tokens, options);

  save_checkpoint((fs::path(out_dir) / "teacher.ckpt").string(),
                  teacher_state(teacher, corpus.vocab));
  std::vector<std::string> lines;
  lines.reserve(result.loss_trace.size());
  for (size_t i = 0; i < result.loss_trace.size(); ++i) {
    json j;
    j["step"] = i;
    j["loss_ce"] = result.loss_trace[i];
    lines.push_back(j.dump());
  }
  write_json_lines((fs::path(out_dir) / "teacher_pretrain_metrics.jsonl").string(), lines);
}

void cmd_distill(const RunConfig& config, const std::string& teacher_path,
                 const std::string& out_dir) {
  config.validate();
  prepare_out_dir(out_dir, config);
  Vocab teacher_vocab;
  TeacherModel teacher = teacher_from_state(load_checkpoint(teacher_path), teacher_vocab);
  teacher.set_requires_grad(false);

  const CorpusBundle corpus = prepare_corpus(config);
  check_vocab_matches(teacher_vocab, corpus.vocab, "distill");
  check(teacher.d_model == config.d_model,
        "distill: checkpoint d_model " + std::to_string(teacher.d_model) +
            " differs from configured d_model " + std::to_string(config.d_model));

  StudentModel student =
      init_student_from_teacher(teacher, student_config_from(config, teacher.vocab),
                                static_cast<uint64_t>(config.seed));

  std::vector<std::string> lines;
  try {
    run_delta_distillation(teacher, student, corpus.train_tokens, config,
                           [&lines](const MetricsRecord& r) {
                             lines.push_back(r.to_json_line());
                           });
  } catch (const NumericError&) {
    save_checkpoint((fs::path(out_dir) / "student.abort.ckpt").string(),
                    student_state(student, corpus.vocab));
    write_json_lines((fs::path(out_dir) / "metrics.abort.jsonl").string(), lines);
    throw;
  }
  save_checkpoint((fs::path(out_dir) / "student.ckpt").string(),
                  student_state(student, corpus.vocab));
  write_json_lines((fs::path(out_dir) / "metrics.jsonl").string(), lines);
}

void cmd_schedule(const RunConfig& config, std::ostream& out, const std::string& out_dir) {
  config.validate();
  const CorpusBundle corpus = prepare_corpus(config);
  BatchStream stream(corpus.train_tokens, config.context_size, config.batch_size,
                     static_cast<uint64_t>(config.seed));
  const int64_t steps_per_epoch = stream.batches_per_epoch() / config.grad_accum;
  check(steps_per_epoch >= 1, "schedule: configured corpus yields no optimizer steps");

  ScheduleDriver driver(config);
  std::vector<std::string> lines;
  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (int64_t step = 0; step < steps_per_epoch; ++step) {
      const DistillWeights w = driver.weights();
      json j;
      j["epoch"] = epoch;
      j["step"] = step;
      j["alpha_k"] = w.alpha_k;
      j["temp_k"] = w.temp_k;
      lines.push_back(j.dump());
      out << lines.back() << "\n";
      driver.after_step();
    }
    driver.after_epoch();
  }
  if (!out_dir.empty()) {
    prepare_out_dir(out_dir, config);
    write_json_lines((fs::path(out_dir) / "schedule.jsonl").string(), lines);
  }
}

namespace {

// f must rebuild the graph from current parameter values on every call.
FdParamReport run_component_check(const std::string& name,
                                  const std::function<Tensor()>& f,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double tol) {
  const FdReport report = finite_difference_check(f, params, 1e-5, tol);
  return {name, report.max_rel_err, report.pass};
}

}  // namespace

GradcheckOutcome cmd_gradcheck(const RunConfig& config, std::ostream& out, double tol) {
  const auto seed = static_cast<uint64_t>(config.seed);
  GradcheckOutcome outcome;

  {
    Rng rng(seed);
    const VanillaLstmParams p = VanillaLstmParams::init(6, 5, rng);
    const Tensor x0 = Tensor::randn({2, 6}, rng, 1.0);
    const Tensor x1 = Tensor::randn({2, 6}, rng, 1.0);
    auto f = [&] {
      LstmState s = LstmState::zeros(2, 5);
      s = vanilla_lstm_step(p, x0, s);
      s = vanilla_lstm_step(p, x1, s);
      return sum(s.h);
    };
    outcome.components.push_back(
        run_component_check("vanilla_lstm", f, p.named_params(""), tol));
  }
  {
    Rng rng(seed + 1);
    const SlstmParams p = SlstmParams::init(6, 2, GateKind::Sigmoid, rng);
    std::vector<Tensor> xs;
    for (int t = 0; t < 3; ++t) xs.push_back(Tensor::randn({2, 6}, rng, 1.0));
    auto f = [&] {
      SlstmState s = SlstmState::initial(2, 6);
      for (const Tensor& x : xs) s = slstm_step(p, x, s);
      return sum(s.h);
    };
    outcome.components.push_back(run_component_check("slstm", f, p.named_params(""), tol));
  }
  {
    Rng rng(seed + 2);
    const MlstmParams p = MlstmParams::init(6, 2, GateKind::Sigmoid, rng);
    std::vector<Tensor> xs;
    for (int t = 0; t < 3; ++t) xs.push_back(Tensor::randn({2, 6}, rng, 1.0));
    auto f = [&] {
      MlstmState s = MlstmState::initial(2, p.head_dim, p.n_heads);
      Tensor h;
      for (const Tensor& x : xs) std::tie(s, h) = mlstm_step(p, x, s);
      return sum(h);
    };
    outcome.components.push_back(run_component_check("mlstm", f, p.named_params(""), tol));
  }
  {
    Rng rng(seed + 3);
    const TeacherLayerParams p = TeacherLayerParams::init(8, rng);
    const Tensor x = Tensor::randn({2 * 3, 8}, rng, 1.0, true);
    auto f = [&] { return sum(causal_attention(p, x, 2, 3, 3)); };
    std::vector<std::pair<std::string, Tensor>> params = {
        {"w_q", p.w_q}, {"w_k", p.w_k}, {"w_v", p.w_v}, {"w_o", p.w_o},
        {"b_q", p.b_q}, {"b_k", p.b_k}, {"b_v", p.b_v}, {"b_o", p.b_o},
        {"x", x}};
    outcome.components.push_back(run_component_check("attention", f, params, tol));
  }
  {
    const int64_t batch = 2, seq = 3, d = 8, vocab = 7;
    TeacherModel teacher = TeacherModel::init(vocab, d, 2, 2, seq, seed + 4);
    teacher.set_requires_grad(false);
    Rng rng(seed + 5);
    std::vector<int64_t> tokens, targets;
    for (int64_t i = 0; i < batch * seq; ++i) {
      tokens.push_back(rng.below(vocab));
      targets.push_back(rng.below(vocab));
    }
    StudentConfig sc;
    sc.n_blocks = 2;  // one sLSTM and one mLSTM block
    sc.n_heads = 4;
    sc.d_model = d;
    sc.vocab = vocab;
    StudentModel student = init_student_from_teacher(teacher, sc, seed + 6);
    Tensor teacher_logits, teacher_mean;
    {
      NoGradGuard guard;
      const TeacherOutput tf = teacher_forward(teacher, tokens, batch, seq);
      teacher_logits = tf.logits;
      teacher_mean = layerwise_mean_hidden(tf.layer_states);
    }
    const DistillWeights weights{0.3, 2.0, 0.1};
    auto f = [&] {
      const StudentOutput sf = student_forward(student, tokens, batch, seq);
      const Tensor ce = cross_entropy(sf.logits, targets);
      const Tensor kd = kd_loss(teacher_logits, sf.logits, weights.temp_k);
      const Tensor frob = frobenius_loss(teacher_mean, sf.hidden, batch);
      return combined_loss(ce, kd, frob, weights, sf.hidden.numel(), true);
    };
    std::vector<std::pair<std::string, Tensor>> params;
    for (auto& [name, t] : student.stack.named_params()) params.emplace_back(name, t);
    outcome.components.push_back(run_component_check("combined_loss", f, params, tol));
  }

  for (const FdParamReport& c : outcome.components) {
    out << (c.pass ? "pass" : "FAIL") << "  " << c.name << "  max_rel_err=" << c.max_rel_err
        << "\n";
    outcome.pass = outcome.pass && c.pass;
  }
  check_numeric(outcome.pass, "gradcheck: at least one component exceeded tolerance");
  return outcome;
}

void cmd_benchmark(const RunConfig& config, const std::vector<int64_t>& seq_lens,
                   std::ostream& out, const std::string& out_dir) {
  const BenchResult result = run_scaling_benchmark(config, seq_lens);
  std::vector<std::string> lines;
  for (const BenchRow& row : result.rows) {
    json j;
    j["seq"] = row.seq;
    j["attention_ms"] = row.attention_ms;
    j["stack_ms"] = row.stack_ms;
    lines.push_back(j.dump());
    out << lines.back() << "\n";
  }
  json slopes;
  slopes["attention_slope"] = result.attention_slope;
  slopes["stack_slope"] = result.stack_slope;
  lines.push_back(slopes.dump());
  out << lines.back() << "\n";
  if (!out_dir.empty()) {
    prepare_out_dir(out_dir, config);
    write_json_lines((fs::path(out_dir) / "benchmark.jsonl").string(), lines);
  }
}

void cmd_eval(const RunConfig& config, const std::string& teacher_path,
              const std::string& student_path, std::ostream& out,
              const std::string& out_dir) {
  config.validate();
  Vocab teacher_vocab, student_vocab;
  const TeacherModel teacher = teacher_from_state(load_checkpoint(teacher_path), teacher_vocab);
  const StudentModel student = student_from_state(load_checkpoint(student_path), student_vocab);
  const CorpusBundle corpus = prepare_corpus(config);
  check_vocab_matches(teacher_vocab, corpus.vocab, "eval(teacher)");
  check_vocab_matches(student_vocab, corpus.vocab, "eval(student)");

  const EvalReport report = evaluate_models(teacher, student, corpus.eval_tokens, config);
  out << report.to_json_line() << "\n";
  if (!out_dir.empty()) {
    prepare_out_dir(out_dir, config);
    write_json_lines((fs::path(out_dir) / "eval.jsonl").string(), {report.to_json_line()});
  }
}

}  // namespace xdistill
