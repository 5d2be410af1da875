"""xLSTM distillation workbench: annealed cross-architecture knowledge
distillation from a causal transformer teacher into an xLSTM student."""

from ._core import (
    AnnealState,
    InvalidArgument,
    NumericError,
    Student,
    Teacher,
    Vocab,
    XlstmStack,
    build_vocab,
    combined_loss,
    cross_entropy,
    derive_student_config,
    distill,
    frobenius_loss,
    kd_loss,
    load_student,
    load_teacher,
    pretrain_teacher,
    scaling_benchmark,
    schedule_value,
    softmax,
    student_from_teacher,
    synthetic_corpus,
)

__all__ = [
    "AnnealState",
    "InvalidArgument",
    "NumericError",
    "Student",
    "Teacher",
    "Vocab",
    "XlstmStack",
    "build_vocab",
    "combined_loss",
    "cross_entropy",
    "derive_student_config",
    "distill",
    "frobenius_loss",
    "kd_loss",
    "load_student",
    "load_teacher",
    "pretrain_teacher",
    "scaling_benchmark",
    "schedule_value",
    "softmax",
    "student_from_teacher",
    "synthetic_corpus",
]
