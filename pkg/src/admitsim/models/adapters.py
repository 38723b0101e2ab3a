"""Uniform prediction interface over the four model families.

Downstream policy code only needs ``predict_students``: give it students,
get completion probabilities back in the same order.  These wrappers pin
the featurization (or encoding) that a fitted model expects, and
``build_risk_table`` turns students plus probabilities into the scored
table the ranking, matching, and audit stages consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..cohort import ApplicationEvent, EnrollmentEvent, Student
from ..risk import RiskTable
from ..seqenc import PAD, BinningRule, TokenSequenceBatch, Vocabulary, encode_student
from . import sequence as seq
from .features import FeatureSchema, featurize

__all__ = ["TabularPredictor", "SequencePredictor", "build_risk_table"]


@dataclass
class TabularPredictor:
    model: object
    schema: FeatureSchema

    def predict_students(self, students: Sequence[Student]) -> np.ndarray:
        x, _, _ = featurize(list(students), self.schema)
        return self.model.predict_proba(x)


@dataclass
class SequencePredictor:
    model: object
    vocab: Vocabulary
    rules: Mapping[str, BinningRule]
    length: int
    batch_size: int = 512

    def encode(self, students: Sequence[Student]) -> TokenSequenceBatch:
        students = list(students)
        grids = np.stack([encode_student(s, self.vocab, self.rules, self.length) for s in students])
        pad_mask = grids[:, 0, :] == PAD
        lengths = np.where(pad_mask.any(axis=1), pad_mask.argmax(axis=1), self.length).astype(np.int32)
        return TokenSequenceBatch(
            tokens=grids.astype(np.int32),
            lengths=lengths,
            student_ids=np.array([s.id for s in students], dtype=np.int64),
            labels=np.array([int(s.completed) for s in students], dtype=np.int8),
            variant=self.vocab.variant,
            vocab_hash=self.vocab.vocab_hash(),
        )

    def predict_students(self, students: Sequence[Student]) -> np.ndarray:
        return seq.predict_proba(self.model, self.encode(students), self.batch_size)


def _enrolled_decile(student: Student) -> float:
    for e in student.events:
        if isinstance(e, ApplicationEvent) and e.program_id == student.enrolled_program:
            return float(e.human_rank_decile) if e.human_rank_decile is not None else float("nan")
    return float("nan")


def build_risk_table(students: Sequence[Student], probs: np.ndarray) -> RiskTable:
    students = list(students)
    probs = np.asarray(probs, dtype=np.float64)
    if len(students) != len(probs):
        raise ValueError("one probability per student required")
    isced = []
    for s in students:
        enr = next((e for e in s.events if isinstance(e, EnrollmentEvent)), None)
        isced.append(enr.isced_field if enr is not None else "")
    return RiskTable(
        student_id=np.array([s.id for s in students], dtype=np.int64),
        program_id=np.array([s.enrolled_program for s in students]),
        quota=np.array([s.admission_quota for s in students]),
        p_hat=probs,
        outcome=np.array([int(s.completed) for s in students], dtype=np.int64),
        attributes={
            "female": np.array([int(s.sociodemo.female) for s in students], dtype=np.int64),
            "danish_origin": np.array([int(s.sociodemo.danish_origin) for s in students], dtype=np.int64),
            "ses_high": np.array([int(s.sociodemo.ses_high) for s in students], dtype=np.int64),
        },
        gpa=np.array([s.gpa for s in students], dtype=np.float64),
        human_decile=np.array([_enrolled_decile(s) for s in students], dtype=np.float64),
        isced_field=np.array(isced),
        first_year_gpa=np.array([s.first_year_gpa for s in students], dtype=np.float64),
    )
