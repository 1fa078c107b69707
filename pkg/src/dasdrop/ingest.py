"""Activity-log parsing and per-user train/validation/test partitioning."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable

from .errors import SchemaError

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("user_id", "timestamp", "question_id", "user_answer", "correctness", "elapsed_time", "part")
ANSWERS = frozenset("abcd")
SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    timestamp: int  # epoch milliseconds, UTC
    question_id: str
    user_answer: str
    correctness: int
    elapsed_time: int  # milliseconds
    part: int


@dataclass
class Rejection:
    line: int
    reason: str


@dataclass
class ParseResult:
    records: dict[str, list[InteractionRecord]]
    rejections: list[Rejection] = field(default_factory=list)
    extra_columns: dict[tuple[str, int], dict[str, str]] = field(default_factory=dict)

    @property
    def n_records(self) -> int:
        return sum(len(v) for v in self.records.values())

    def all_records(self) -> list[InteractionRecord]:
        return [r for uid in self.records for r in self.records[uid]]


def parse_timestamp(text: str) -> int:
    text = text.strip()
    if text.lstrip("-").isdigit():
        return int(text)
    for fmt in ("%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S.%f"):
        try:
            dt = datetime.strptime(text, fmt)
        except ValueError:
            continue
        return int(round(dt.replace(tzinfo=timezone.utc).timestamp() * 1000))
    raise ValueError(f"unparseable timestamp {text!r}")


def format_timestamp(ms: int) -> str:
    return datetime.fromtimestamp(ms / 1000, tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S")


def _sniff_delimiter(header: str) -> str:
    return "\t" if header.count("\t") > header.count(",") else ","


def parse_log(
    stream: IO[str] | IO[bytes] | str | Path,
    *,
    elapsed_unit: str = "ms",
    default_user: str | None = None,
    keep_extra: bool = False,
) -> ParseResult:
    """Parse a delimiter-separated activity log.

    Rows that fail validation are skipped and reported with their 1-based line
    number. Output is grouped by user and sorted by timestamp, ties kept in file
    order. ``elapsed_unit="s"`` scales the elapsed column to milliseconds.
    ``default_user`` fills a missing ``user_id`` column (single-user logs).
    """
    if isinstance(stream, (str, Path)):
        with open(stream, "r", newline="", encoding="utf-8") as fh:
            return parse_log(fh, elapsed_unit=elapsed_unit, default_user=default_user, keep_extra=keep_extra)
    text = stream.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if elapsed_unit not in ("ms", "s"):
        raise SchemaError(f"elapsed_unit must be 'ms' or 's', got {elapsed_unit!r}")
    scale = 1000 if elapsed_unit == "s" else 1

    lines = text.splitlines()
    if not lines:
        raise SchemaError("log has no header row")
    delim = _sniff_delimiter(lines[0])
    reader = csv.reader(io.StringIO(text), delimiter=delim, skipinitialspace=True)
    header = [h.strip().lower() for h in next(reader)]
    required = [c for c in REQUIRED_COLUMNS if not (c == "user_id" and default_user is not None)]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    col = {name: header.index(name) for name in header}

    by_user: dict[str, list[tuple[int, int, InteractionRecord]]] = {}
    rejections: list[Rejection] = []
    extras: dict[tuple[str, int], dict[str, str]] = {}
    order = 0
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            rejections.append(Rejection(line, f"expected {len(header)} fields, got {len(row)}"))
            continue
        get = lambda name: row[col[name]].strip()  # noqa: E731
        try:
            uid = get("user_id") if "user_id" in col else default_user
            rec = InteractionRecord(
                user_id=uid,
                timestamp=parse_timestamp(get("timestamp")),
                question_id=get("question_id"),
                user_answer=get("user_answer").lower(),
                correctness=int(get("correctness")),
                elapsed_time=int(float(get("elapsed_time")) * scale),
                part=int(get("part")),
            )
        except ValueError as exc:
            rejections.append(Rejection(line, str(exc)))
            continue
        reason = _validate(rec)
        if reason:
            rejections.append(Rejection(line, reason))
            continue
        by_user.setdefault(rec.user_id, []).append((rec.timestamp, order, rec))
        if keep_extra:
            extras[(rec.user_id, order)] = {h: row[i] for h, i in col.items() if h not in REQUIRED_COLUMNS}
        order += 1

    records = {uid: [r for _, _, r in sorted(rows, key=lambda t: (t[0], t[1]))] for uid, rows in by_user.items()}
    if rejections:
        log.info("parse_log: %d rows rejected", len(rejections))
    return ParseResult(records, rejections, extras)


def _validate(rec: InteractionRecord) -> str | None:
    if not rec.user_id:
        return "empty user_id"
    if not rec.question_id:
        return "empty question_id"
    if rec.user_answer not in ANSWERS:
        return f"user_answer {rec.user_answer!r} not in a-d"
    if rec.correctness not in (0, 1):
        return f"correctness {rec.correctness} not binary"
    if rec.elapsed_time < 0:
        return f"negative elapsed_time {rec.elapsed_time}"
    if not 1 <= rec.part <= 7:
        return f"part {rec.part} outside [1, 7]"
    return None


def serialize_log(records: Iterable[InteractionRecord], out: IO[str], delimiter: str = ",") -> None:
    w = csv.writer(out, delimiter=delimiter, lineterminator="\n")
    w.writerow(REQUIRED_COLUMNS)
    for r in records:
        w.writerow([r.user_id, r.timestamp, r.question_id, r.user_answer, r.correctness, r.elapsed_time, r.part])


# ---------------------------------------------------------------- splitting


@dataclass(frozen=True)
class UserPartition:
    train: frozenset[str]
    validation: frozenset[str]
    test: frozenset[str]

    def split_of(self, user_id: str) -> str:
        for name in SPLITS:
            if user_id in getattr(self, name):
                return name
        raise KeyError(user_id)

    def write_manifest(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for name in SPLITS:
                for uid in sorted(getattr(self, name)):
                    fh.write(f"{uid}\t{name}\n")

    @classmethod
    def read_manifest(cls, path: str | Path) -> "UserPartition":
        buckets: dict[str, set[str]] = {s: set() for s in SPLITS}
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                uid, _, split = line.rstrip("\n").partition("\t")
                if split not in buckets:
                    raise SchemaError(f"{path}:{n}: unknown split {split!r}")
                buckets[split].add(uid)
        return cls(*(frozenset(buckets[s]) for s in SPLITS))


def _bucket_sizes(n: int, ratio: tuple[float, ...]) -> list[int]:
    # largest-remainder apportionment; ties go to the earlier bucket
    total = float(sum(ratio))
    quotas = [n * r / total for r in ratio]
    sizes = [int(q) for q in quotas]
    by_remainder = sorted(range(len(ratio)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in by_remainder[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_users(users: Iterable[str], ratio: tuple[float, float, float] = (7, 1, 2), seed: int = 0) -> UserPartition:
    """Assign whole users to train/validation/test.

    Users are ordered by a seeded hash of their id and cut into consecutive
    runs sized by largest-remainder apportionment of ``ratio``.
    """
    if len(ratio) != 3 or any(r <= 0 for r in ratio):
        raise ValueError(f"ratio must be three positive numbers, got {ratio}")
    users = sorted(set(users))
    key = lambda u: hashlib.blake2b(f"{seed}:{u}".encode(), digest_size=8).digest()  # noqa: E731
    ordered = sorted(users, key=key)
    sizes = _bucket_sizes(len(ordered), ratio)
    a, b = sizes[0], sizes[0] + sizes[1]
    return UserPartition(frozenset(ordered[:a]), frozenset(ordered[a:b]), frozenset(ordered[b:]))
