"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import xdistill


def test_schedule_value():
    assert xdistill.schedule_value(0.8, 0.5, 0) == pytest.approx(0.8)
    far = xdistill.schedule_value(0.8, 0.5, 10**6)
    assert far == pytest.approx(0.5 + 0.3 / (1 + math.log(10**6 + 1)))
    with pytest.raises(xdistill.InvalidArgument):
        xdistill.schedule_value(0.4, 0.5, 1)


def test_anneal_state_decay():
    s = xdistill.AnnealState(0.8, 0.5, 2.0, 1.0, 0.05, 0.05)
    for _ in range(10):
        s.epoch_decay()
    assert s.alpha == pytest.approx(0.5)
    assert s.temp == pytest.approx(1.5)


def test_student_config_heuristic():
    cfg = xdistill.derive_student_config(4, 6, 64, 60)
    assert cfg == {"n_blocks": 2, "n_heads": 8, "d_model": 64, "vocab": 60}


def test_softmax_rows():
    p = xdistill.softmax(np.array([[0.0, 0.0], [1000.0, 0.0]]), temperature=1.0)
    assert p[0] == pytest.approx([0.5, 0.5])
    assert np.isfinite(p).all()
    assert p.sum(axis=-1) == pytest.approx([1.0, 1.0])


def test_losses():
    logits = np.zeros((2, 4))
    assert xdistill.cross_entropy(logits, [1, 3]) == pytest.approx(math.log(4))
    assert xdistill.kd_loss(logits, logits, 2.0) == pytest.approx(0.0)
    h = np.random.default_rng(0).normal(size=(4, 8))
    assert xdistill.frobenius_loss(h, h, batch=2) == pytest.approx(0.0)
    total = xdistill.combined_loss(
        ce=2.0, kd=1.0, frob=4.0, alpha_k=0.3, temp_k=1.0, beta_k=0.1, h_s_numel=100
    )
    assert total == pytest.approx(0.6 * 2.0 + 0.3 * 1.0 + 0.1 * 0.4)


def test_vocab_roundtrip():
    text = xdistill.synthetic_corpus(2000, seed=7)
    vocab = xdistill.build_vocab(text)
    assert len(vocab) == 60
    assert vocab.decode(vocab.encode(text[:50])) == text[:50]


def test_stack_forward_shapes_and_kinds():
    stack = xdistill.XlstmStack(d_model=16, n_blocks=3, n_heads=4, seed=1)
    assert stack.block_kinds() == ["slstm", "mlstm", "slstm"]
    x = np.random.default_rng(1).normal(size=(2, 5, 16))
    out = stack.forward(x)
    assert out.shape == (2, 5, 16)
    assert np.isfinite(out).all()


def test_teacher_student_forward():
    teacher = xdistill.Teacher(vocab=11, d_model=16, n_layers=4, n_heads=2, max_seq=6, seed=3)
    tokens = np.array([[1, 2, 3, 4, 5, 6], [6, 5, 4, 3, 2, 1]], dtype=np.int64)
    logits, mean_hidden = teacher.forward(tokens)
    assert logits.shape == (2, 6, 11)
    assert mean_hidden.shape == (2, 6, 16)

    student = xdistill.student_from_teacher(teacher, seed=4)
    hidden, slogits = student.forward(tokens)
    assert hidden.shape == (2, 6, 16)
    assert slogits.shape == (2, 6, 11)
    assert 0.0 < student.trainable_fraction < 1.0


def test_end_to_end_roundtrip(tmp_path):
    config = {
        "corpus_chars": 2500,
        "context_size": 16,
        "batch_size": 2,
        "grad_accum": 2,
        "epochs": 1,
        "teacher_epochs": 1,
        "teacher_layers": 2,
        "teacher_heads": 2,
        "d_model": 16,
    }
    teacher_dir = tmp_path / "teacher"
    xdistill.pretrain_teacher(config, str(teacher_dir))
    assert (teacher_dir / "teacher.ckpt").exists()

    run_dir = tmp_path / "run"
    xdistill.distill(config, str(teacher_dir / "teacher.ckpt"), str(run_dir))
    assert (run_dir / "student.ckpt").exists()
    assert (run_dir / "metrics.jsonl").exists()

    student, vocab = xdistill.load_student(str(run_dir / "student.ckpt"))
    assert len(vocab) == student.vocab
