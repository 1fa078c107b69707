"""Study-session segmentation by inactivity threshold and dropout labelling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError
from .ingest import InteractionRecord

DEFAULT_THRESHOLD_SECS = 3600


@dataclass(frozen=True)
class SessionizedInteraction:
    record: InteractionRecord
    session_id: int  # 1-based, per user
    session_position: int  # 1-based within the session
    dropout: int  # 1 at the last interaction of a session


SessionizedSequence = list[SessionizedInteraction]


def sessionize(records: Sequence[InteractionRecord], threshold_secs: float = DEFAULT_THRESHOLD_SECS) -> SessionizedSequence:
    """Split one user's time-ordered records into sessions.

    A gap between consecutive question starts of at least ``threshold_secs``
    closes the current session; its last interaction gets ``dropout=1``.
    """
    threshold_ms = threshold_secs * 1000
    n = len(records)
    for a, b in zip(records, records[1:]):
        if b.timestamp < a.timestamp:
            raise ContractError(f"records for user {a.user_id} not sorted by timestamp")
    out: SessionizedSequence = []
    sid, pos = 1, 0
    for i, rec in enumerate(records):
        pos += 1
        last = i == n - 1 or records[i + 1].timestamp - rec.timestamp >= threshold_ms
        out.append(SessionizedInteraction(rec, sid, pos, int(last)))
        if last:
            sid, pos = sid + 1, 0
    return out


def sessionize_all(
    records: Mapping[str, Sequence[InteractionRecord]], threshold_secs: float = DEFAULT_THRESHOLD_SECS
) -> dict[str, SessionizedSequence]:
    return {uid: sessionize(recs, threshold_secs) for uid, recs in records.items()}


def sessions(seq: SessionizedSequence) -> list[SessionizedSequence]:
    groups: list[SessionizedSequence] = []
    for item in seq:
        if item.session_position == 1:
            groups.append([])
        groups[-1].append(item)
    return groups


@dataclass(frozen=True)
class SessionStats:
    users: int
    interactions: int
    sessions: int
    sessions_per_user: float
    questions_per_session: float
    dropout_fraction: float
    mean_session_minutes: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def session_stats(sequences: Mapping[str, SessionizedSequence] | Iterable[SessionizedSequence]) -> SessionStats:
    """Aggregate statistics over sessionized users.

    Session duration runs from the first question start to the last question
    start plus that question's elapsed time.
    """
    seqs = list(sequences.values()) if isinstance(sequences, Mapping) else list(sequences)
    seqs = [s for s in seqs if s]
    if not seqs:
        return SessionStats(0, 0, 0, 0.0, 0.0, 0.0, 0.0)
    n_inter = sum(len(s) for s in seqs)
    n_drop = sum(x.dropout for s in seqs for x in s)
    durations = [
        (g[-1].record.timestamp + g[-1].record.elapsed_time - g[0].record.timestamp) / 60000.0
        for s in seqs
        for g in sessions(s)
    ]
    n_sess = len(durations)
    return SessionStats(
        users=len(seqs),
        interactions=n_inter,
        sessions=n_sess,
        sessions_per_user=n_sess / len(seqs),
        questions_per_session=n_inter / n_sess,
        dropout_fraction=n_drop / n_inter,
        mean_session_minutes=math.fsum(durations) / n_sess,
    )


def gap_histogram(records: Mapping[str, Sequence[InteractionRecord]], bins_per_octave: int = 1) -> list[tuple[float, int, float]]:
    """Histogram of consecutive-interaction gaps on a log2 scale of seconds.

    Returns rows ``(log2_seconds_lower_edge, count, ratio)``.
    """
    gaps = []
    for recs in records.values():
        ts = np.fromiter((r.timestamp for r in recs), dtype=np.int64, count=len(recs))
        if len(ts) > 1:
            gaps.append(np.diff(ts) / 1000.0)
    if not gaps:
        return []
    g = np.concatenate(gaps)
    g = g[g > 0]
    if g.size == 0:
        return []
    keys = np.floor(np.log2(g) * bins_per_octave).astype(int)
    uniq, counts = np.unique(keys, return_counts=True)
    total = counts.sum()
    return [(k / bins_per_octave, int(c), float(c / total)) for k, c in zip(uniq, counts)]
