#include <doctest.h>

#include "xdistill/config.hpp"
#include "xdistill/metrics.hpp"

using namespace xdistill;

TEST_CASE("defaults reproduce the reference hyperparameters") {
  const RunConfig c;
  CHECK(c.lr == 2e-4);
  CHECK(c.lr_schedule == "cosine");
  CHECK(c.batch_size == 8);
  CHECK(c.grad_accum == 4);
  CHECK(c.warmup_ratio == 0.1);
  CHECK(c.alpha_initial == 0.8);
  CHECK(c.alpha_final == 0.5);
  CHECK(c.temp_initial == 2.0);
  CHECK(c.temp_final == 1.0);
  CHECK(c.delta == 0.05);
  CHECK(c.effective_delta_alpha() == 0.05);
  CHECK(c.effective_delta_temp() == 0.05);
  CHECK(c.context_size == 64);  // desk-scale default; 512 remains configurable
  CHECK(c.epochs == 10);
  c.validate();
}

TEST_CASE("config parsing, overrides and errors") {
  RunConfig c = parse_config_text(
      "# comment\n"
      "lr = 0.001\n"
      "context_size = 512   # table value\n"
      "beta_mode = fixed\n"
      "t_squared = false\n");
  CHECK(c.lr == 0.001);
  CHECK(c.context_size == 512);
  CHECK(c.beta_mode == "fixed");
  CHECK_FALSE(c.t_squared);

  apply_override(c, "epochs=3");
  CHECK(c.epochs == 3);
  CHECK_THROWS_WITH_AS(apply_override(c, "no_such_key=1"),
                       "config: unknown key 'no_such_key'", Error);
  CHECK_THROWS_AS(apply_override(c, "epochs=abc"), Error);
  CHECK_THROWS_AS(apply_override(c, "epochs"), Error);
  CHECK_THROWS_AS(parse_config_text("lr 0.1\n"), Error);
}

TEST_CASE("validation names the offending field") {
  RunConfig c;
  c.alpha_final = 0.9;
  CHECK_THROWS_WITH_AS(c.validate(),
                       "config: key 'alpha_final' must be in [0, alpha_initial]", Error);

  RunConfig bad_mode;
  bad_mode.beta_mode = "sometimes";
  CHECK_THROWS_AS(bad_mode.validate(), Error);
}

TEST_CASE("echo round-trips the exact configuration") {
  RunConfig c;
  c.lr = 3.25e-4;
  c.beta_mode = "annealed";
  c.epochs = 7;
  c.corpus_path = "data/corpus.txt";
  c.t_squared = false;
  c.delta_alpha = 0.025;
  const RunConfig back = parse_config_text(config_echo(c));
  CHECK(config_echo(back) == config_echo(c));
  CHECK(back.lr == c.lr);
  CHECK(back.delta_alpha == c.delta_alpha);
  CHECK(back.corpus_path == c.corpus_path);
}

TEST_CASE("metrics records round-trip through json lines") {
  MetricsRecord r;
  r.epoch = 3;
  r.step = 14;
  r.alpha_k = 0.7123456789;
  r.temp_k = 1.5;
  r.beta_k = 0.0;
  r.loss_ce = 2.25;
  r.loss_kd = 0.125;
  r.loss_frob = 0.0;
  r.loss_total = 1.0843;
  r.grad_norm = 3.5;
  r.lr = 1.9e-4;
  r.wall_ms = 12.75;
  const MetricsRecord back = MetricsRecord::from_json_line(r.to_json_line());
  CHECK(back.epoch == r.epoch);
  CHECK(back.step == r.step);
  CHECK(back.alpha_k == r.alpha_k);
  CHECK(back.loss_total == r.loss_total);
  CHECK(back.wall_ms == r.wall_ms);
  CHECK_THROWS_AS(MetricsRecord::from_json_line("not json"), Error);
}
