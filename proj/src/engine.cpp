#include "xdistill/engine.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "xdistill/optimizer.hpp"

namespace xdistill {

GateKind gate_kind_from(const std::string& name) {
  if (name == "sigmoid") return GateKind::Sigmoid;
  if (name == "exp") return GateKind::Exp;
  throw Error("unknown forget gate kind '" + name + "'");
}

CaptureMode capture_mode_from(const std::string& name) {
  if (name == "block") return CaptureMode::BlockOutput;
  if (name == "attention") return CaptureMode::AttentionOutput;
  throw Error("unknown capture mode '" + name + "'");
}

CorpusBundle prepare_corpus(const RunConfig& config) {
  CorpusBundle bundle;
  if (config.corpus_path.empty()) {
    bundle.text = synthetic_corpus(config.corpus_chars,
                                   static_cast<uint64_t>(config.corpus_seed));
  } else {
    std::ifstream in(config.corpus_path, std::ios::binary);
    check(in.good(), "config: key 'corpus_path' does not name a readable file: '" +
                         config.corpus_path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    bundle.text = buffer.str();
    check(!bundle.text.empty(), "config: key 'corpus_path' names an empty file");
  }
  bundle.vocab = build_vocab(bundle.text);
  const auto all = bundle.vocab.encode(bundle.text);
  const auto eval_len =
      static_cast<int64_t>(config.eval_fraction * static_cast<double>(all.size()));
  const int64_t split = static_cast<int64_t>(all.size()) - eval_len;
  check(split >= config.context_size + 1,
        "corpus too small for one training window after the eval split");
  bundle.train_tokens.assign(all.begin(), all.begin() + split);
  bundle.eval_tokens.assign(all.begin() + split, all.end());
  return bundle;
}

StudentConfig student_config_from(const RunConfig& config, int64_t vocab) {
  StudentConfig sc = derive_student_config(config.teacher_layers, config.teacher_heads,
                                           config.d_model, vocab);
  if (config.student_blocks > 0) sc.n_blocks = config.student_blocks;
  if (config.student_heads > 0) {
    sc.n_heads = config.student_heads;
    check(config.d_model % sc.n_heads == 0,
          "config: key 'student_heads' must divide d_model");
  }
  sc.forget_gate = gate_kind_from(config.forget_gate_kind);
  return sc;
}

// ---- checkpoint glue ----

namespace {

constexpr double kTeacherKind = 1.0;
constexpr double kStudentKind = 2.0;

Tensor vocab_tensor(const Vocab& vocab) {
  const auto& symbols = vocab.symbols();
  std::vector<double> codes;
  for (size_t i = 1; i < symbols.size(); ++i) {  // pad is implicit
    codes.push_back(static_cast<double>(static_cast<unsigned char>(symbols[i])));
  }
  const Shape shape = {static_cast<int64_t>(codes.size())};
  return Tensor::from_values(shape, std::move(codes));
}

Vocab vocab_from_tensor(const Tensor& t) {
  std::vector<char> chars;
  for (double v : t.data()) chars.push_back(static_cast<char>(static_cast<int>(v)));
  return Vocab(std::move(chars));
}

using State = std::vector<std::pair<std::string, Tensor>>;

const Tensor& find_tensor(const State& state, const std::string& name) {
  for (const auto& [n, t] : state) {
    if (n == name) return t;
  }
  throw Error("checkpoint: missing tensor '" + name + "'");
}

void load_params_into(const State& state,
                      const std::vector<std::pair<std::string, Tensor>>& dest) {
  for (const auto& [name, t] : dest) {
    const Tensor& src = find_tensor(state, name);
    check(src.shape() == t.shape(), "checkpoint: tensor '" + name + "' has shape " +
                                        shape_str(src.shape()) + ", expected " +
                                        shape_str(t.shape()));
    t.impl()->data = src.data();
  }
}

}  // namespace

State teacher_state(const TeacherModel& m, const Vocab& vocab) {
  State state;
  state.emplace_back("__meta__",
                     Tensor::from_values({6}, {kTeacherKind, static_cast<double>(m.d_model),
                                               static_cast<double>(m.n_heads),
                                               static_cast<double>(m.n_layers),
                                               static_cast<double>(m.vocab),
                                               static_cast<double>(m.max_seq)}));
  state.emplace_back("__vocab__", vocab_tensor(vocab));
  const auto params = m.named_params();
  state.insert(state.end(), params.begin(), params.end());
  return state;
}

TeacherModel teacher_from_state(const State& state, Vocab& vocab_out) {
  const Tensor& meta = find_tensor(state, "__meta__");
  check(meta.numel() == 6 && meta.data()[0] == kTeacherKind,
        "checkpoint: not a teacher checkpoint");
  vocab_out = vocab_from_tensor(find_tensor(state, "__vocab__"));
  TeacherModel m = TeacherModel::init(
      static_cast<int64_t>(meta.data()[4]), static_cast<int64_t>(meta.data()[1]),
      static_cast<int64_t>(meta.data()[3]), static_cast<int64_t>(meta.data()[2]),
      static_cast<int64_t>(meta.data()[5]), 0);
  check(vocab_out.size() == m.vocab, "checkpoint: vocab size disagrees with teacher meta");
  load_params_into(state, m.named_params());
  return m;
}

State student_state(const StudentModel& m, const Vocab& vocab) {
  State state;
  const double gate = m.stack.forget_gate == GateKind::Exp ? 1.0 : 0.0;
  state.emplace_back(
      "__meta__",
      Tensor::from_values({6}, {kStudentKind, static_cast<double>(m.d_model),
                                static_cast<double>(m.stack.n_heads),
                                static_cast<double>(m.stack.blocks.size()),
                                static_cast<double>(m.vocab), gate}));
  state.emplace_back("__vocab__", vocab_tensor(vocab));
  const auto params = m.named_params();
  state.insert(state.end(), params.begin(), params.end());
  return state;
}

StudentModel student_from_state(const State& state, Vocab& vocab_out) {
  const Tensor& meta = find_tensor(state, "__meta__");
  check(meta.numel() == 6 && meta.data()[0] == kStudentKind,
        "checkpoint: not a student checkpoint");
  vocab_out = vocab_from_tensor(find_tensor(state, "__vocab__"));
  StudentModel m;
  m.d_model = static_cast<int64_t>(meta.data()[1]);
  m.vocab = static_cast<int64_t>(meta.data()[4]);
  check(vocab_out.size() == m.vocab, "checkpoint: vocab size disagrees with student meta");
  m.embedding = Tensor::zeros({m.vocab, m.d_model});
  m.head = Tensor::zeros({m.d_model, m.vocab});
  m.stack = build_stack(m.d_model, static_cast<int64_t>(meta.data()[3]),
                        static_cast<int64_t>(meta.data()[2]),
                        meta.data()[5] == 1.0 ? GateKind::Exp : GateKind::Sigmoid, 0);
  State dest = {{"embedding", m.embedding}, {"head", m.head}};
  for (auto& [name, t] : m.stack.named_params()) dest.emplace_back("stack." + name, t);
  load_params_into(state, dest);
  m.stack.set_requires_grad(true);
  return m;
}

// ---- training loop ----

ScheduleDriver::ScheduleDriver(const RunConfig& config) : config_(&config) {
  if (config.beta_mode == "annealed") {
    anneal_ = AnnealState::make(config.alpha_anneal_initial, config.alpha_anneal_final,
                                config.temp_initial, config.temp_final,
                                config.effective_delta_alpha(),
                                config.effective_delta_temp());
    beta_anchor_ = config.beta_initial;
  } else {
    anneal_ = AnnealState::make(config.alpha_initial, config.alpha_final,
                                config.temp_initial, config.temp_final,
                                config.effective_delta_alpha(),
                                config.effective_delta_temp());
  }
}

int64_t ScheduleDriver::k() const {
  return config_->k_mode == "global" ? global_step_ : anneal_.step;
}

DistillWeights ScheduleDriver::weights() const {
  DistillWeights w;
  w.temp_k = schedule_value(anneal_.temp, anneal_.temp_final, k());
  if (config_->beta_mode == "fixed") {
    w.alpha_k = config_->alpha_fixed;
    w.beta_k = config_->beta_fixed;
  } else if (config_->beta_mode == "annealed") {
    w.alpha_k = schedule_value(anneal_.alpha, anneal_.alpha_final, k());
    w.beta_k = schedule_value(beta_anchor_, config_->beta_final, k());
  } else {
    w.alpha_k = schedule_value(anneal_.alpha, anneal_.alpha_final, k());
    w.beta_k = 0.0;
  }
  return w;
}

void ScheduleDriver::after_step() {
  ++anneal_.step;
  ++global_step_;
}

void ScheduleDriver::after_epoch() {
  epoch_decay(anneal_);
  if (config_->beta_mode == "annealed") {
    beta_anchor_ =
        std::max(beta_anchor_ - config_->effective_delta_alpha(), config_->beta_final);
  }
}

namespace {

double step_lr(const RunConfig& config, int64_t step, int64_t total_steps) {
  if (config.lr_schedule == "constant") return config.lr;
  return cosine_warmup_lr(config.lr, step, total_steps, config.warmup_ratio);
}

// The teacher is frozen, so its per-window outputs are memoized across
// epochs; batches regroup shuffled windows, so entries are keyed by the
// window's token content.
class TeacherWindowCache {
 public:
  TeacherWindowCache(const TeacherModel& teacher, int64_t seq, CaptureMode capture,
                     bool with_mean_hidden)
      : teacher_(&teacher), seq_(seq), capture_(capture),
        with_mean_hidden_(with_mean_hidden) {}

  // logits [B·S × V] and, when requested, the layer-mean hidden [B·S × D].
  std::pair<Tensor, Tensor> batch_outputs(const std::vector<int64_t>& inputs,
                                          int64_t batch) {
    NoGradGuard guard;
    std::vector<std::vector<int64_t>> keys(static_cast<size_t>(batch));
    bool all_cached = true;
    for (int64_t b = 0; b < batch; ++b) {
      keys[static_cast<size_t>(b)].assign(inputs.begin() + b * seq_,
                                          inputs.begin() + (b + 1) * seq_);
      all_cached = all_cached && cache_.count(keys[static_cast<size_t>(b)]) > 0;
    }
    if (!all_cached) {
      const TeacherOutput out = teacher_forward(*teacher_, inputs, batch, seq_, capture_);
      const Tensor mean =
          with_mean_hidden_ ? layerwise_mean_hidden(out.layer_states) : Tensor();
      for (int64_t b = 0; b < batch; ++b) {
        Entry entry;
        entry.logits = slice_rows(out.logits, b * seq_, (b + 1) * seq_);
        if (with_mean_hidden_) {
          entry.mean_hidden = slice_rows(mean, b * seq_, (b + 1) * seq_);
        }
        cache_[keys[static_cast<size_t>(b)]] = std::move(entry);
      }
    }
    std::vector<Tensor> logit_parts, mean_parts;
    for (int64_t b = 0; b < batch; ++b) {
      const Entry& entry = cache_.at(keys[static_cast<size_t>(b)]);
      logit_parts.push_back(entry.logits);
      if (with_mean_hidden_) mean_parts.push_back(entry.mean_hidden);
    }
    return {concat_rows(logit_parts),
            with_mean_hidden_ ? concat_rows(mean_parts) : Tensor()};
  }

 private:
  struct Entry {
    Tensor logits;
    Tensor mean_hidden;
  };
  const TeacherModel* teacher_;
  int64_t seq_;
  CaptureMode capture_;
  bool with_mean_hidden_;
  std::map<std::vector<int64_t>, Entry> cache_;
};

}  // namespace

DistillResult run_delta_distillation(
    const TeacherModel& teacher, StudentModel& student,
    const std::vector<int64_t>& train_tokens, const RunConfig& config,
    const std::function<void(const MetricsRecord&)>& on_record) {
  check(teacher.vocab == student.vocab,
        "distill: teacher vocab " + std::to_string(teacher.vocab) +
            " differs from student vocab " + std::to_string(student.vocab));
  check(teacher.d_model == student.d_model, "distill: teacher/student width mismatch");

  const int64_t seq = config.context_size;
  const int64_t batch = config.batch_size;
  BatchStream stream(train_tokens, seq, batch, static_cast<uint64_t>(config.seed));
  const int64_t micro_per_epoch = stream.batches_per_epoch();
  const int64_t steps_per_epoch = micro_per_epoch / config.grad_accum;
  check(steps_per_epoch >= 1,
        "distill: corpus yields no full optimizer step (windows=" +
            std::to_string(stream.windows()) + ", batch_size·grad_accum=" +
            std::to_string(batch * config.grad_accum) + ")");
  const int64_t total_steps = steps_per_epoch * config.epochs;
  const CaptureMode capture = capture_mode_from(config.capture_mode);

  std::vector<Tensor> trainable;
  for (auto& [name, t] : student.stack.named_params()) trainable.push_back(t);
  Adam adam(trainable, AdamOptions{config.lr});

  ScheduleDriver schedule(config);
  DistillResult result;
  result.steps_per_epoch = steps_per_epoch;
  result.metrics.reserve(static_cast<size_t>(total_steps));
  const int64_t hidden_numel = batch * seq * student.d_model;
  TeacherWindowCache teacher_cache(teacher, seq, capture,
                                   /*with_mean_hidden=*/config.beta_mode != "off");

  std::vector<std::vector<double>> snapshot(trainable.size());

  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::vector<Batch> batches = stream.epoch(epoch - 1);
    for (int64_t opt_step = 0; opt_step < steps_per_epoch; ++opt_step) {
      const auto t0 = std::chrono::steady_clock::now();
      const DistillWeights weights = schedule.weights();
      const bool use_frob = weights.beta_k > 0.0;

      adam.zero_grad();
      double ce_sum = 0.0, kd_sum = 0.0, frob_sum = 0.0, total_sum = 0.0;
      for (int64_t micro = 0; micro < config.grad_accum; ++micro) {
        const Batch& b = batches[static_cast<size_t>(opt_step * config.grad_accum + micro)];
        tape().reset();
        const auto [teacher_logits, teacher_mean_hidden] =
            teacher_cache.batch_outputs(b.inputs, batch);
        const StudentOutput sf = student_forward(student, b.inputs, batch, seq);
        const Tensor ce = cross_entropy(sf.logits, b.targets);
        const Tensor kd = kd_loss(teacher_logits, sf.logits, weights.temp_k);
        Tensor frob;
        if (use_frob) frob = frobenius_loss(teacher_mean_hidden, sf.hidden, batch);
        const Tensor total =
            combined_loss(ce, kd, frob, weights, hidden_numel, config.t_squared);
        const double total_value = total.value();
        check_numeric(std::isfinite(total_value),
                      "distill: non-finite loss at epoch " + std::to_string(epoch) +
                          " step " + std::to_string(opt_step));
        ce_sum += ce.value();
        kd_sum += kd.value();
        frob_sum += use_frob ? frob.value() : 0.0;
        total_sum += total_value;
        backward(total);
      }
      adam.scale_grads(1.0 / static_cast<double>(config.grad_accum));
      const double grad_norm = adam.grad_norm();
      if (config.grad_clip > 0.0) adam.clip_grad_norm(config.grad_clip);
      const double lr = step_lr(config, schedule.global_step(), total_steps);

      for (size_t i = 0; i < trainable.size(); ++i) snapshot[i] = trainable[i].data();
      adam.step(lr);
      for (const Tensor& p : trainable) {
        if (!p.all_finite()) {
          for (size_t i = 0; i < trainable.size(); ++i) trainable[i].data() = snapshot[i];
          throw NumericError("distill: parameters became non-finite at epoch " +
                             std::to_string(epoch) + " step " + std::to_string(opt_step) +
                             "; reverted to the previous step");
        }
      }

      const double inv_accum = 1.0 / static_cast<double>(config.grad_accum);
      MetricsRecord record;
      record.epoch = epoch;
      record.step = opt_step;
      record.alpha_k = weights.alpha_k;
      record.temp_k = weights.temp_k;
      record.beta_k = weights.beta_k;
      record.loss_ce = ce_sum * inv_accum;
      record.loss_kd = kd_sum * inv_accum;
      record.loss_frob = frob_sum * inv_accum;
      record.loss_total = total_sum * inv_accum;
      record.grad_norm = grad_norm;
      record.lr = lr;
      record.wall_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
      if (on_record) on_record(record);
      result.metrics.push_back(record);

      schedule.after_step();
    }
    schedule.after_epoch();
  }
  tape().reset();
  return result;
}

// ---- evaluation ----

std::string EvalReport::to_json_line() const {
  nlohmann::json j;
  j["student_ce"] = student_ce;
  j["student_ppl"] = student_ppl;
  j["teacher_ce"] = teacher_ce;
  j["teacher_ppl"] = teacher_ppl;
  j["kl_t1"] = kl_t1;
  j["frobenius"] = frobenius;
  j["windows"] = windows;
  return j.dump();
}

EvalReport evaluate_models(const TeacherModel& teacher, const StudentModel& student,
                           const std::vector<int64_t>& eval_tokens,
                           const RunConfig& config) {
  check(teacher.vocab == student.vocab, "eval: teacher/student vocab mismatch");
  NoGradGuard guard;
  const int64_t seq = config.context_size;
  BatchStream stream(eval_tokens, seq, 1, 0);
  const std::vector<Batch> batches = stream.epoch(0);
  check(!batches.empty(), "eval: held-out split has no full context window");

  EvalReport report;
  report.windows = static_cast<int64_t>(batches.size());
  for (const Batch& b : batches) {
    const TeacherOutput tf = teacher_forward(teacher, b.inputs, 1, seq,
                                             capture_mode_from(config.capture_mode));
    const StudentOutput sf = student_forward(student, b.inputs, 1, seq);
    report.teacher_ce += cross_entropy(tf.logits, b.targets).value();
    report.student_ce += cross_entropy(sf.logits, b.targets).value();
    report.kl_t1 += kd_loss(tf.logits, sf.logits, 1.0).value();
    report.frobenius +=
        frobenius_loss(layerwise_mean_hidden(tf.layer_states), sf.hidden, 1).value();
  }
  const double inv = 1.0 / static_cast<double>(batches.size());
  report.teacher_ce *= inv;
  report.student_ce *= inv;
  report.kl_t1 *= inv;
  report.frobenius *= inv;
  report.teacher_ppl = std::exp(report.teacher_ce);
  report.student_ppl = std::exp(report.student_ce);
  return report;
}

}  // namespace xdistill
