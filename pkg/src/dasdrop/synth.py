"""Synthetic activity logs with a planted, known dropout hazard.

Each interaction ends its session with probability

    sigmoid(base + et_coef * prev_et + sp_coef * sp + correct_coef * prev_r
            + interaction_coef * prev_et * sp)

clamped to [0.01, 0.99], where ``sp`` is the 1-based position in the session,
``prev_et`` the previous interaction's elapsed seconds and ``prev_r`` its
correctness (both 0 for a user's first interaction). Every input is visible to
the model at prediction time. Intra-session gaps stay under 30 minutes and
inter-session gaps exceed 2 hours, so a 1-hour sessionizer recovers the
generated sessions exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from .ingest import REQUIRED_COLUMNS, InteractionRecord
from .metrics import auc

P_MIN, P_MAX = 0.01, 0.99
EPOCH_2019_MS = 1546300800000
HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS


@dataclass(frozen=True)
class HazardSpec:
    base: float = -10.0
    et_coef: float = 0.1
    sp_coef: float = 0.4
    correct_coef: float = -0.5
    interaction_coef: float = 0.0
    seed: int = 0

    def prob(self, sp: int, prev_et_secs: float, prev_correct: int) -> float:
        z = (
            self.base
            + self.et_coef * prev_et_secs
            + self.sp_coef * sp
            + self.correct_coef * prev_correct
            + self.interaction_coef * prev_et_secs * sp
        )
        p = 1.0 / (1.0 + math.exp(-z))
        return min(max(p, P_MIN), P_MAX)


@dataclass
class GroundTruth:
    user_id: str
    timestamp: int
    session: int
    hazard: float
    dropout: int


@dataclass
class SynthData:
    records: dict[str, list[InteractionRecord]]
    truth: dict[str, list[GroundTruth]]

    def write(self, log_path: str | Path, truth_path: str | Path | None = None) -> None:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            write_log(self.records, fh)
        if truth_path is not None:
            with open(truth_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("user_id", "timestamp", "session", "hazard", "dropout"))
                for uid in self.records:
                    for g in self.truth[uid]:
                        w.writerow((g.user_id, g.timestamp, g.session, repr(g.hazard), g.dropout))


def write_log(records: dict[str, list[InteractionRecord]], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(REQUIRED_COLUMNS)
    for recs in records.values():
        for r in recs:
            w.writerow((r.user_id, r.timestamp, r.question_id, r.user_answer, r.correctness, r.elapsed_time, r.part))


def generate(
    users: int,
    questions: int,
    hazard: HazardSpec = HazardSpec(),
    seed: int | None = None,
    max_sessions: int = 6,
    max_session_len: int = 400,
) -> SynthData:
    if users <= 0 or questions <= 0:
        raise ValueError("users and questions must be positive")
    rng = np.random.default_rng(hazard.seed if seed is None else seed)
    records: dict[str, list[InteractionRecord]] = {}
    truth: dict[str, list[GroundTruth]] = {}
    width = len(str(users))
    for u in range(users):
        uid = f"u{u:0{width}d}"
        ts = EPOCH_2019_MS + int(rng.integers(0, 300)) * DAY_MS + int(rng.integers(0, DAY_MS))
        prev_et, prev_r = 0.0, 0
        recs, gts = [], []
        for s in range(1, int(rng.integers(1, max_sessions + 1)) + 1):
            sp = 0
            while True:
                sp += 1
                q = int(rng.integers(1, questions + 1))
                correct = int(rng.random() < 0.65)
                key = "abcd"[q % 4]
                answer = key if correct else "abcd".replace(key, "")[int(rng.integers(0, 3))]
                elapsed = int(rng.integers(3, 121)) * 1000 + int(rng.integers(0, 1000))
                p = hazard.prob(sp, prev_et, prev_r)
                drop = int(rng.random() < p or sp >= max_session_len)
                recs.append(InteractionRecord(uid, ts, str(q), answer, correct, elapsed, 1 + q % 7))
                gts.append(GroundTruth(uid, ts, s, p, drop))
                prev_et, prev_r = elapsed // 1000, correct
                if drop:
                    ts += elapsed + 2 * HOUR_MS + int(rng.exponential(DAY_MS))
                    break
                ts += elapsed + int(rng.integers(1, 60)) * 1000
        records[uid] = recs
        truth[uid] = gts
    return SynthData(records, truth)


def bayes_auc(truth: dict[str, list[GroundTruth]], users=None) -> float:
    """AUC obtained by scoring each interaction with its true hazard."""
    keep = truth if users is None else {u: truth[u] for u in users if u in truth}
    h = [g.hazard for gs in keep.values() for g in gs]
    d = [g.dropout for gs in keep.values() for g in gs]
    return auc(h, d)
