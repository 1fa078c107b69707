"""Per-interaction feature encoding and fixed-length window assembly.

Every feature is an integer index into its own embedding table. Each table
reserves its last row as the padding index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, SchemaError
from .sessionize import SessionizedSequence

E_FEATURES = ("id", "c", "st", "p", "sp")
L_FEATURES = ("r", "et", "st", "iot", "d", "p", "sp")
# "st" is two tables: hour of day and day of week
COLUMNS = ("id", "c", "hour", "dow", "p", "sp", "r", "et", "iot", "d")
FEATURE_COLUMNS = {"st": ("hour", "dow")}

N_PARTS = 7
ET_CAP_SECS = 300
SP_MAX = 1024
OOV = 0

# seconds; expert limits are not published, these are editable defaults
DEFAULT_TIME_LIMITS = {1: 30.0, 2: 30.0, 3: 45.0, 4: 45.0, 5: 60.0, 6: 60.0, 7: 90.0}


def columns_for(features: Iterable[str]) -> tuple[str, ...]:
    cols: list[str] = []
    for f in features:
        cols.extend(FEATURE_COLUMNS.get(f, (f,)))
    return tuple(cols)


@dataclass
class Vocab:
    questions: dict[str, int] = field(default_factory=dict)
    et_cap: int = ET_CAP_SECS
    sp_max: int = SP_MAX

    def question_index(self, qid: str) -> int:
        return self.questions.get(qid, OOV)

    def cardinalities(self, seq_size: int) -> dict[str, int]:
        """Number of real (non-pad) indices per column; the pad index equals this value."""
        return {
            "id": len(self.questions) + 1,
            "c": N_PARTS,
            "hour": 24,
            "dow": 7,
            "p": seq_size,
            "sp": self.sp_max,
            "r": 2,
            "et": self.et_cap + 2,
            "iot": 2,
            "d": 2,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"et_cap\t{self.et_cap}\n")
            fh.write(f"sp_max\t{self.sp_max}\n")
            for qid, idx in sorted(self.questions.items(), key=lambda kv: kv[1]):
                fh.write(f"question\t{qid}\t{idx}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if parts == [""]:
                    continue
                if parts[0] == "question" and len(parts) == 3:
                    vocab.questions[parts[1]] = int(parts[2])
                elif parts[0] in ("et_cap", "sp_max") and len(parts) == 2:
                    setattr(vocab, parts[0], int(parts[1]))
                else:
                    raise SchemaError(f"{path}:{n}: bad vocab line {line!r}")
        return vocab


def build_vocab(train_sequences: Iterable[SessionizedSequence], et_cap: int = ET_CAP_SECS, sp_max: int = SP_MAX) -> Vocab:
    """Index question ids in first-seen order starting at 1; 0 is reserved for unseen ids."""
    questions: dict[str, int] = {}
    for seq in train_sequences:
        for item in seq:
            qid = item.record.question_id
            if qid not in questions:
                questions[qid] = len(questions) + 1
    return Vocab(questions, et_cap, sp_max)


def save_limits(limits: Mapping[int, float], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for part in sorted(limits):
            fh.write(f"part\t{part}\t{limits[part]!r}\n")


def load_limits(path: str | Path) -> dict[int, float]:
    out: dict[int, float] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if parts == [""]:
                continue
            if len(parts) != 3 or parts[0] != "part":
                raise SchemaError(f"{path}:{n}: bad limits line {line!r}")
            out[int(parts[1])] = float(parts[2])
    return out


# ---------------------------------------------------------------- frames


@dataclass(frozen=True)
class FeatureFrame:
    """Question-side and response-side features of one interaction in a window."""

    id: int
    c: int
    hour: int
    dow: int
    p: int
    sp: int
    r: int
    et: int
    iot: int
    d: int

    @property
    def e(self) -> tuple[int, int, tuple[int, int], int, int]:
        return (self.id, self.c, (self.hour, self.dow), self.p, self.sp)

    @property
    def l(self) -> tuple[int, int, tuple[int, int], int, int, int, int]:  # noqa: E743
        return (self.r, self.et, (self.hour, self.dow), self.iot, self.d, self.p, self.sp)


@dataclass
class UserFrames:
    """Encoded features for every interaction of one user, column-wise.

    ``sp`` is stored 1-based (clipped to ``sp_max``); ``p`` is assigned per window.
    """

    user_id: str
    timestamps: np.ndarray
    cols: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.timestamps)

    def frame(self, i: int, p: int = 1) -> FeatureFrame:
        return FeatureFrame(p=p, **{k: int(v[i]) for k, v in self.cols.items()})


def elapsed_bucket(elapsed_ms: int, et_cap: int = ET_CAP_SECS) -> int:
    secs = elapsed_ms // 1000
    return int(secs) if secs <= et_cap else et_cap + 1


def extract_features(
    sequence: SessionizedSequence,
    vocab: Vocab,
    limits: Mapping[int, float] = DEFAULT_TIME_LIMITS,
) -> UserFrames:
    n = len(sequence)
    cols = {k: np.empty(n, dtype=np.int64) for k in ("id", "c", "hour", "dow", "sp", "r", "et", "iot", "d")}
    ts = np.empty(n, dtype=np.int64)
    for i, item in enumerate(sequence):
        rec = item.record
        if rec.part not in limits:
            raise ConfigError(f"no time limit configured for part {rec.part}")
        when = datetime.fromtimestamp(rec.timestamp / 1000, tz=timezone.utc)
        ts[i] = rec.timestamp
        cols["id"][i] = vocab.question_index(rec.question_id)
        cols["c"][i] = rec.part - 1
        cols["hour"][i] = when.hour
        cols["dow"][i] = when.weekday()
        cols["sp"][i] = min(item.session_position, vocab.sp_max)
        cols["r"][i] = rec.correctness
        cols["et"][i] = elapsed_bucket(rec.elapsed_time, vocab.et_cap)
        cols["iot"][i] = int(rec.elapsed_time <= limits[rec.part] * 1000)
        cols["d"][i] = item.dropout
    user = sequence[0].record.user_id if sequence else ""
    return UserFrames(user, ts, cols)


# ---------------------------------------------------------------- windows


@dataclass(frozen=True)
class TrainingWindow:
    frames: tuple[FeatureFrame | None, ...]  # None marks a pad position
    pad: tuple[bool, ...]
    target_label: int


@dataclass
class WindowSet:
    """A batch of left-padded windows stored as ``[n_windows, seq_size]`` index arrays.

    Column values at pad positions hold each table's pad index. ``p`` and
    ``sp`` are stored 0-based here (table rows), unlike :class:`UserFrames`.
    """

    cols: dict[str, np.ndarray]
    pad: np.ndarray
    target: np.ndarray
    user: np.ndarray
    index: np.ndarray  # position of the target interaction in its user's sequence

    def __len__(self) -> int:
        return len(self.target)

    @property
    def seq_size(self) -> int:
        return self.pad.shape[1]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(
            {k: v[idx] for k, v in self.cols.items()}, self.pad[idx], self.target[idx], self.user[idx], self.index[idx]
        )

    def window(self, k: int) -> TrainingWindow:
        frames = []
        for j in range(self.seq_size):
            if self.pad[k, j]:
                frames.append(None)
                continue
            vals = {c: int(v[k, j]) for c, v in self.cols.items()}
            vals["p"] += 1
            vals["sp"] += 1
            frames.append(FeatureFrame(**vals))
        return TrainingWindow(tuple(frames), tuple(bool(x) for x in self.pad[k]), int(self.target[k]))

    @classmethod
    def concat(cls, sets: Sequence["WindowSet"], seq_size: int) -> "WindowSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls(
                {c: np.zeros((0, seq_size), np.int64) for c in COLUMNS},
                np.zeros((0, seq_size), bool),
                np.zeros(0, np.int64),
                np.zeros(0, object),
                np.zeros(0, np.int64),
            )
        return cls(
            {c: np.concatenate([s.cols[c] for s in sets]) for c in COLUMNS},
            np.concatenate([s.pad for s in sets]),
            np.concatenate([s.target for s in sets]),
            np.concatenate([s.user for s in sets]),
            np.concatenate([s.index for s in sets]),
        )


def make_windows(frames: UserFrames, seq_size: int, vocab: Vocab) -> WindowSet:
    """One window ending at every interaction of the user (stride 1)."""
    if seq_size < 2:
        raise ConfigError(f"seq_size must be >= 2, got {seq_size}")
    T = len(frames)
    card = vocab.cardinalities(seq_size)
    src = np.arange(T)[:, None] - (seq_size - 1) + np.arange(seq_size)[None, :]
    pad = src < 0
    safe = np.where(pad, 0, src)
    cols = {}
    for c in COLUMNS:
        if c == "p":
            vals = np.broadcast_to(np.arange(seq_size), (T, seq_size))
        elif c == "sp":
            vals = frames.cols["sp"][safe] - 1
        else:
            vals = frames.cols[c][safe]
        cols[c] = np.where(pad, card[c], vals).astype(np.int64)
    return WindowSet(
        cols,
        pad,
        frames.cols["d"].copy(),
        np.full(T, frames.user_id, dtype=object),
        np.arange(T, dtype=np.int64),
    )


def build_windows(
    sequences: Mapping[str, SessionizedSequence],
    users: Iterable[str],
    vocab: Vocab,
    seq_size: int,
    limits: Mapping[int, float] = DEFAULT_TIME_LIMITS,
) -> WindowSet:
    sets = [
        make_windows(extract_features(sequences[u], vocab, limits), seq_size, vocab)
        for u in sorted(users)
        if u in sequences and sequences[u]
    ]
    return WindowSet.concat(sets, seq_size)
