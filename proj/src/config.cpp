#include "xdistill/config.hpp"

#include <fstream>
#include <sstream>

namespace xdistill {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(value, &pos);
    check(pos == value.size(), "");
    return v;
  } catch (...) {
    throw Error("config: key '" + key + "' expects an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    check(pos == value.size(), "");
    return v;
  } catch (...) {
    throw Error("config: key '" + key + "' expects a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw Error("config: key '" + key + "' expects true/false, got '" + value + "'");
}

void assign(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "lr_schedule") c.lr_schedule = value;
  else if (key == "batch_size") c.batch_size = parse_int(key, value);
  else if (key == "grad_accum") c.grad_accum = parse_int(key, value);
  else if (key == "warmup_ratio") c.warmup_ratio = parse_double(key, value);
  else if (key == "grad_clip") c.grad_clip = parse_double(key, value);
  else if (key == "alpha_initial") c.alpha_initial = parse_double(key, value);
  else if (key == "alpha_final") c.alpha_final = parse_double(key, value);
  else if (key == "temp_initial") c.temp_initial = parse_double(key, value);
  else if (key == "temp_final") c.temp_final = parse_double(key, value);
  else if (key == "delta") c.delta = parse_double(key, value);
  else if (key == "delta_alpha") c.delta_alpha = parse_double(key, value);
  else if (key == "delta_temp") c.delta_temp = parse_double(key, value);
  else if (key == "context_size") c.context_size = parse_int(key, value);
  else if (key == "epochs") c.epochs = parse_int(key, value);
  else if (key == "seed") c.seed = parse_int(key, value);
  else if (key == "corpus_path") c.corpus_path = value;
  else if (key == "corpus_chars") c.corpus_chars = parse_int(key, value);
  else if (key == "corpus_seed") c.corpus_seed = parse_int(key, value);
  else if (key == "eval_fraction") c.eval_fraction = parse_double(key, value);
  else if (key == "teacher_layers") c.teacher_layers = parse_int(key, value);
  else if (key == "teacher_heads") c.teacher_heads = parse_int(key, value);
  else if (key == "d_model") c.d_model = parse_int(key, value);
  else if (key == "teacher_max_seq") c.teacher_max_seq = parse_int(key, value);
  else if (key == "teacher_lr") c.teacher_lr = parse_double(key, value);
  else if (key == "teacher_epochs") c.teacher_epochs = parse_int(key, value);
  else if (key == "student_blocks") c.student_blocks = parse_int(key, value);
  else if (key == "student_heads") c.student_heads = parse_int(key, value);
  else if (key == "forget_gate_kind") c.forget_gate_kind = value;
  else if (key == "beta_mode") c.beta_mode = value;
  else if (key == "beta_fixed") c.beta_fixed = parse_double(key, value);
  else if (key == "alpha_fixed") c.alpha_fixed = parse_double(key, value);
  else if (key == "beta_initial") c.beta_initial = parse_double(key, value);
  else if (key == "beta_final") c.beta_final = parse_double(key, value);
  else if (key == "alpha_anneal_initial") c.alpha_anneal_initial = parse_double(key, value);
  else if (key == "alpha_anneal_final") c.alpha_anneal_final = parse_double(key, value);
  else if (key == "t_squared") c.t_squared = parse_bool(key, value);
  else if (key == "k_mode") c.k_mode = value;
  else if (key == "capture_mode") c.capture_mode = value;
  else throw Error("config: unknown key '" + key + "'");
}

void check_choice(const std::string& key, const std::string& value,
                  const std::vector<std::string>& choices) {
  for (const auto& c : choices) {
    if (value == c) return;
  }
  std::string allowed;
  for (const auto& c : choices) allowed += (allowed.empty() ? "" : " | ") + c;
  throw Error("config: key '" + key + "' must be one of [" + allowed + "], got '" +
              value + "'");
}

}  // namespace

void RunConfig::validate() const {
  check(lr > 0.0, "config: key 'lr' must be positive");
  check_choice("lr_schedule", lr_schedule, {"cosine", "constant"});
  check(batch_size >= 1, "config: key 'batch_size' must be at least 1");
  check(grad_accum >= 1, "config: key 'grad_accum' must be at least 1");
  check(warmup_ratio >= 0.0 && warmup_ratio < 1.0,
        "config: key 'warmup_ratio' must be in [0, 1)");
  check(grad_clip >= 0.0, "config: key 'grad_clip' must be non-negative");
  check(alpha_initial >= 0.0 && alpha_initial <= 1.0,
        "config: key 'alpha_initial' must be in [0, 1]");
  check(alpha_final >= 0.0 && alpha_final <= alpha_initial,
        "config: key 'alpha_final' must be in [0, alpha_initial]");
  check(temp_final > 0.0 && temp_initial >= temp_final,
        "config: keys 'temp_initial' >= 'temp_final' > 0 required");
  check(delta >= 0.0, "config: key 'delta' must be non-negative");
  check(context_size >= 2, "config: key 'context_size' must be at least 2");
  check(epochs >= 0, "config: key 'epochs' must be non-negative");
  check(corpus_chars >= context_size + 1,
        "config: key 'corpus_chars' must cover at least one context window");
  check(eval_fraction >= 0.0 && eval_fraction < 1.0,
        "config: key 'eval_fraction' must be in [0, 1)");
  check(teacher_layers >= 1, "config: key 'teacher_layers' must be at least 1");
  check(teacher_heads >= 1, "config: key 'teacher_heads' must be at least 1");
  check(d_model >= teacher_heads, "config: key 'd_model' must be >= teacher_heads");
  check(teacher_lr > 0.0, "config: key 'teacher_lr' must be positive");
  check(teacher_epochs >= 0, "config: key 'teacher_epochs' must be non-negative");
  check(student_blocks >= 0, "config: key 'student_blocks' must be non-negative");
  check(student_heads >= 0, "config: key 'student_heads' must be non-negative");
  check_choice("forget_gate_kind", forget_gate_kind, {"sigmoid", "exp"});
  check_choice("beta_mode", beta_mode, {"off", "fixed", "annealed"});
  check(beta_fixed >= 0.0 && alpha_fixed >= 0.0 && beta_fixed + alpha_fixed <= 1.0,
        "config: keys 'alpha_fixed' + 'beta_fixed' must stay within [0, 1]");
  check(beta_initial >= beta_final && beta_final >= 0.0,
        "config: keys 'beta_initial' >= 'beta_final' >= 0 required");
  check(alpha_anneal_initial >= alpha_anneal_final && alpha_anneal_final >= 0.0,
        "config: keys 'alpha_anneal_initial' >= 'alpha_anneal_final' >= 0 required");
  check(alpha_anneal_initial + beta_initial <= 1.0,
        "config: annealed alpha and beta anchors must sum to at most 1");
  check_choice("k_mode", k_mode, {"per_epoch", "global"});
  check_choice("capture_mode", capture_mode, {"block", "attention"});
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    check(eq != std::string::npos, "config: line " + std::to_string(line_no) +
                                       " is not 'key = value': " + line);
    assign(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "config: cannot open file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

void apply_override(RunConfig& config, const std::string& spec) {
  const auto eq = spec.find('=');
  check(eq != std::string::npos, "override '" + spec + "' is not KEY=VALUE");
  assign(config, trim(spec.substr(0, eq)), trim(spec.substr(eq + 1)));
}

std::string config_echo(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "# run configuration echo\n";
  os << "lr = " << c.lr << "\n";
  os << "lr_schedule = " << c.lr_schedule << "\n";
  os << "batch_size = " << c.batch_size << "\n";
  os << "grad_accum = " << c.grad_accum << "\n";
  os << "warmup_ratio = " << c.warmup_ratio << "\n";
  os << "grad_clip = " << c.grad_clip << "\n";
  os << "alpha_initial = " << c.alpha_initial << "\n";
  os << "alpha_final = " << c.alpha_final << "\n";
  os << "temp_initial = " << c.temp_initial << "\n";
  os << "temp_final = " << c.temp_final << "\n";
  os << "delta = " << c.delta << "\n";
  os << "delta_alpha = " << c.delta_alpha << "\n";
  os << "delta_temp = " << c.delta_temp << "\n";
  os << "context_size = " << c.context_size << "\n";
  os << "epochs = " << c.epochs << "\n";
  os << "seed = " << c.seed << "\n";
  os << "corpus_path = " << c.corpus_path << "\n";
  os << "corpus_chars = " << c.corpus_chars << "\n";
  os << "corpus_seed = " << c.corpus_seed << "\n";
  os << "eval_fraction = " << c.eval_fraction << "\n";
  os << "teacher_layers = " << c.teacher_layers << "\n";
  os << "teacher_heads = " << c.teacher_heads << "\n";
  os << "d_model = " << c.d_model << "\n";
  os << "teacher_max_seq = " << c.teacher_max_seq << "\n";
  os << "teacher_lr = " << c.teacher_lr << "\n";
  os << "teacher_epochs = " << c.teacher_epochs << "\n";
  os << "student_blocks = " << c.student_blocks << "\n";
  os << "student_heads = " << c.student_heads << "\n";
  os << "forget_gate_kind = " << c.forget_gate_kind << "\n";
  os << "beta_mode = " << c.beta_mode << "\n";
  os << "beta_fixed = " << c.beta_fixed << "\n";
  os << "alpha_fixed = " << c.alpha_fixed << "\n";
  os << "beta_initial = " << c.beta_initial << "\n";
  os << "beta_final = " << c.beta_final << "\n";
  os << "alpha_anneal_initial = " << c.alpha_anneal_initial << "\n";
  os << "alpha_anneal_final = " << c.alpha_anneal_final << "\n";
  os << "t_squared = " << (c.t_squared ? "true" : "false") << "\n";
  os << "k_mode = " << c.k_mode << "\n";
  os << "capture_mode = " << c.capture_mode << "\n";
  return os.str();
}

}  // namespace xdistill
