#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xdistill/commands.hpp"
#include "xdistill/common.hpp"
#include "xdistill/config.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  int64_t seed = -1;
  std::string out_dir = "out";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "path to a key = value config file");
  cmd->add_option("--override", args.overrides, "KEY=VALUE config override (repeatable)");
  cmd->add_option("--seed", args.seed, "seed override");
  cmd->add_option("--out", args.out_dir, "output directory");
}

xdistill::RunConfig resolve_config(const CommonArgs& args) {
  xdistill::RunConfig config;
  if (!args.config_path.empty()) config = xdistill::load_config_file(args.config_path);
  for (const std::string& o : args.overrides) xdistill::apply_override(config, o);
  if (args.seed >= 0) config.seed = args.seed;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annealed cross-architecture distillation workbench"};
  app.require_subcommand(1);

  CommonArgs pretrain_args, distill_args, schedule_args, gradcheck_args, bench_args,
      eval_args;
  std::string teacher_path = "out/teacher.ckpt";
  std::string student_path = "out/student.ckpt";
  std::vector<int64_t> seq_lens = {128, 256, 512, 1024};

  CLI::App* pretrain =
      app.add_subcommand("pretrain-teacher", "train the transformer teacher from scratch");
  add_common(pretrain, pretrain_args);

  CLI::App* distill =
      app.add_subcommand("distill", "distill the teacher into an xLSTM student");
  add_common(distill, distill_args);
  distill->add_option("--teacher", teacher_path, "teacher checkpoint path");

  CLI::App* schedule =
      app.add_subcommand("schedule", "print the annealing schedule without training");
  add_common(schedule, schedule_args);

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check of every gradient path");
  add_common(gradcheck, gradcheck_args);

  CLI::App* benchmark =
      app.add_subcommand("benchmark", "sequence-length scaling of attention vs the stack");
  add_common(benchmark, bench_args);
  benchmark->add_option("--seq-lens", seq_lens, "sequence lengths to time");

  CLI::App* eval = app.add_subcommand("eval", "held-out evaluation of a distilled student");
  add_common(eval, eval_args);
  eval->add_option("--teacher", teacher_path, "teacher checkpoint path");
  eval->add_option("--student", student_path, "student checkpoint path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) {
      xdistill::cmd_pretrain_teacher(resolve_config(pretrain_args), pretrain_args.out_dir);
    } else if (distill->parsed()) {
      xdistill::cmd_distill(resolve_config(distill_args), teacher_path,
                            distill_args.out_dir);
    } else if (schedule->parsed()) {
      xdistill::cmd_schedule(resolve_config(schedule_args), std::cout,
                             schedule_args.out_dir);
    } else if (gradcheck->parsed()) {
      xdistill::cmd_gradcheck(resolve_config(gradcheck_args), std::cout);
    } else if (benchmark->parsed()) {
      xdistill::cmd_benchmark(resolve_config(bench_args), seq_lens, std::cout,
                              bench_args.out_dir);
    } else if (eval->parsed()) {
      xdistill::cmd_eval(resolve_config(eval_args), teacher_path, student_path, std::cout,
                         eval_args.out_dir);
    }
  } catch (const xdistill::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const xdistill::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
