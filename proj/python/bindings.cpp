#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "xdistill/benchmark.hpp"
#include "xdistill/checkpoint.hpp"
#include "xdistill/commands.hpp"
#include "xdistill/engine.hpp"

namespace py = pybind11;
using namespace xdistill;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(a.shape(i));
  std::vector<double> values(a.data(), a.data() + a.size());
  return Tensor::from_values(shape, std::move(values));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

// [B, S] token array -> flat vector plus dims
std::pair<std::vector<int64_t>, std::pair<int64_t, int64_t>> tokens_from_array(
    const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw Error("tokens must be a [batch, seq] integer array");
  std::vector<int64_t> tokens(a.data(), a.data() + a.size());
  return {std::move(tokens), {a.shape(0), a.shape(1)}};
}

RunConfig config_from_kv(const py::dict& kv) {
  RunConfig config;
  for (const auto& item : kv) {
    apply_override(config, py::str(item.first).cast<std::string>() + "=" +
                               py::str(item.second).cast<std::string>());
  }
  config.validate();
  return config;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "xLSTM distillation workbench core";

  // translators run newest-first, so the derived exception goes last
  py::register_exception<Error>(m, "InvalidArgument");
  py::register_exception<NumericError>(m, "NumericError");

  // schedule
  m.def("schedule_value", &schedule_value, py::arg("anchor"), py::arg("final"),
        py::arg("k"));
  py::class_<AnnealState>(m, "AnnealState")
      .def(py::init(&AnnealState::make), py::arg("alpha_initial"), py::arg("alpha_final"),
           py::arg("temp_initial"), py::arg("temp_final"), py::arg("delta_alpha"),
           py::arg("delta_temp"))
      .def_readonly("alpha", &AnnealState::alpha)
      .def_readonly("temp", &AnnealState::temp)
      .def_readonly("epoch", &AnnealState::epoch)
      .def("epoch_decay", [](AnnealState& s) { epoch_decay(s); });

  m.def("derive_student_config",
        [](int64_t teacher_layers, int64_t teacher_heads, int64_t d_model, int64_t vocab) {
          const StudentConfig sc =
              derive_student_config(teacher_layers, teacher_heads, d_model, vocab);
          py::dict d;
          d["n_blocks"] = sc.n_blocks;
          d["n_heads"] = sc.n_heads;
          d["d_model"] = sc.d_model;
          d["vocab"] = sc.vocab;
          return d;
        },
        py::arg("teacher_layers"), py::arg("teacher_heads"), py::arg("d_model"),
        py::arg("vocab"));

  // losses on plain arrays
  m.def("softmax", [](const py::array_t<double>& x, double temperature) {
    NoGradGuard guard;
    return array_from_tensor(softmax_rows(tensor_from_array(x), temperature));
  }, py::arg("x"), py::arg("temperature") = 1.0);

  m.def("cross_entropy", [](const py::array_t<double>& logits,
                            const std::vector<int64_t>& targets) {
    NoGradGuard guard;
    return cross_entropy(tensor_from_array(logits), targets).value();
  });

  m.def("kd_loss", [](const py::array_t<double>& teacher_logits,
                      const py::array_t<double>& student_logits, double temperature) {
    NoGradGuard guard;
    return kd_loss(tensor_from_array(teacher_logits), tensor_from_array(student_logits),
                   temperature).value();
  }, py::arg("teacher_logits"), py::arg("student_logits"), py::arg("temperature"));

  m.def("frobenius_loss", [](const py::array_t<double>& teacher_mean,
                             const py::array_t<double>& student_hidden, int64_t batch) {
    NoGradGuard guard;
    return frobenius_loss(tensor_from_array(teacher_mean),
                          tensor_from_array(student_hidden), batch).value();
  }, py::arg("teacher_mean"), py::arg("student_hidden"), py::arg("batch") = 1);

  m.def("combined_loss", [](double ce, double kd, double frob, double alpha_k,
                            double temp_k, double beta_k, int64_t h_s_numel,
                            bool t_squared) {
    NoGradGuard guard;
    return combined_loss(Tensor::scalar(ce), Tensor::scalar(kd), Tensor::scalar(frob),
                         {alpha_k, temp_k, beta_k}, h_s_numel, t_squared).value();
  }, py::arg("ce"), py::arg("kd"), py::arg("frob"), py::arg("alpha_k"),
     py::arg("temp_k"), py::arg("beta_k") = 0.0, py::arg("h_s_numel") = 1,
     py::arg("t_squared") = true);

  // data
  py::class_<Vocab>(m, "Vocab")
      .def("__len__", &Vocab::size)
      .def("encode", &Vocab::encode)
      .def("decode", &Vocab::decode);
  m.def("build_vocab", &build_vocab);
  m.def("synthetic_corpus", &synthetic_corpus, py::arg("n_chars"), py::arg("seed"));

  // models
  py::class_<XlstmStack>(m, "XlstmStack")
      .def(py::init([](int64_t d_model, int64_t n_blocks, int64_t n_heads,
                       const std::string& forget_gate, uint64_t seed) {
             return build_stack(d_model, n_blocks, n_heads, gate_kind_from(forget_gate),
                                seed);
           }),
           py::arg("d_model"), py::arg("n_blocks"), py::arg("n_heads"),
           py::arg("forget_gate") = "sigmoid", py::arg("seed") = 0)
      .def_property_readonly("n_blocks",
                             [](const XlstmStack& s) { return s.blocks.size(); })
      .def("param_count", &XlstmStack::param_count)
      .def("block_kinds", [](const XlstmStack& s) {
        std::vector<std::string> kinds;
        for (const auto& b : s.blocks) {
          kinds.push_back(b.kind == BlockKind::Slstm ? "slstm" : "mlstm");
        }
        return kinds;
      })
      .def("forward", [](const XlstmStack& s, const py::array_t<double>& x) {
        if (x.ndim() != 3) throw Error("stack input must be [batch, seq, d_model]");
        NoGradGuard guard;
        const int64_t batch = x.shape(0), seq = x.shape(1), d = x.shape(2);
        const Tensor flat = reshape(tensor_from_array(x), {batch * seq, d});
        Tensor out = stack_forward(s, flat, batch, seq);
        return array_from_tensor(reshape(out, {batch, seq, d}));
      });

  py::class_<TeacherModel>(m, "Teacher")
      .def(py::init(&TeacherModel::init), py::arg("vocab"), py::arg("d_model"),
           py::arg("n_layers"), py::arg("n_heads"), py::arg("max_seq"), py::arg("seed"))
      .def_readonly("vocab", &TeacherModel::vocab)
      .def_readonly("d_model", &TeacherModel::d_model)
      .def("forward", [](const TeacherModel& t, const py::array_t<int64_t>& tokens) {
        NoGradGuard guard;
        auto [flat, dims] = tokens_from_array(tokens);
        const TeacherOutput out = teacher_forward(t, flat, dims.first, dims.second);
        return py::make_tuple(
            array_from_tensor(reshape(out.logits, {dims.first, dims.second, t.vocab})),
            array_from_tensor(reshape(layerwise_mean_hidden(out.layer_states),
                                      {dims.first, dims.second, t.d_model})));
      });

  py::class_<StudentModel>(m, "Student")
      .def_readonly("vocab", &StudentModel::vocab)
      .def_readonly("d_model", &StudentModel::d_model)
      .def_readonly("trainable_fraction", &StudentModel::trainable_fraction)
      .def("forward", [](const StudentModel& s, const py::array_t<int64_t>& tokens) {
        NoGradGuard guard;
        auto [flat, dims] = tokens_from_array(tokens);
        const StudentOutput out = student_forward(s, flat, dims.first, dims.second);
        return py::make_tuple(
            array_from_tensor(reshape(out.hidden, {dims.first, dims.second, s.d_model})),
            array_from_tensor(reshape(out.logits, {dims.first, dims.second, s.vocab})));
      });

  m.def("student_from_teacher",
        [](const TeacherModel& teacher, int64_t n_blocks, int64_t n_heads, uint64_t seed) {
          StudentConfig sc = derive_student_config(
              std::max<int64_t>(teacher.n_layers, 2), teacher.n_heads, teacher.d_model,
              teacher.vocab);
          if (n_blocks > 0) sc.n_blocks = n_blocks;
          if (n_heads > 0) sc.n_heads = n_heads;
          return init_student_from_teacher(teacher, sc, seed);
        },
        py::arg("teacher"), py::arg("n_blocks") = 0, py::arg("n_heads") = 0,
        py::arg("seed") = 0);

  m.def("load_teacher", [](const std::string& path) {
    Vocab vocab;
    TeacherModel t = teacher_from_state(load_checkpoint(path), vocab);
    return py::make_tuple(std::move(t), std::move(vocab));
  });
  m.def("load_student", [](const std::string& path) {
    Vocab vocab;
    StudentModel s = student_from_state(load_checkpoint(path), vocab);
    return py::make_tuple(std::move(s), std::move(vocab));
  });

  // end-to-end hooks driven by a config dict
  m.def("pretrain_teacher", [](const py::dict& kv, const std::string& out_dir) {
    cmd_pretrain_teacher(config_from_kv(kv), out_dir);
  }, py::arg("config"), py::arg("out_dir"));
  m.def("distill", [](const py::dict& kv, const std::string& teacher_path,
                      const std::string& out_dir) {
    cmd_distill(config_from_kv(kv), teacher_path, out_dir);
  }, py::arg("config"), py::arg("teacher_path"), py::arg("out_dir"));

  m.def("scaling_benchmark", [](const py::dict& kv, const std::vector<int64_t>& seq_lens) {
    const BenchResult r = run_scaling_benchmark(config_from_kv(kv), seq_lens);
    py::dict d;
    d["attention_slope"] = r.attention_slope;
    d["stack_slope"] = r.stack_slope;
    py::list rows;
    for (const BenchRow& row : r.rows) {
      py::dict rd;
      rd["seq"] = row.seq;
      rd["attention_ms"] = row.attention_ms;
      rd["stack_ms"] = row.stack_ms;
      rows.append(rd);
    }
    d["rows"] = rows;
    return d;
  }, py::arg("config"), py::arg("seq_lens"));
}
