"""End-to-end pipeline: sessionize, split, encode, train, evaluate, ablate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CompatibilityError, DataError
from .features import DEFAULT_TIME_LIMITS, E_FEATURES, L_FEATURES, Vocab, WindowSet, build_vocab, build_windows, load_limits, save_limits
from .ingest import InteractionRecord, UserPartition, split_users
from .metrics import ScoredSet, auc, macro_auc
from .model import ModelConfig, Params, load_checkpoint, predict_last
from .sessionize import DEFAULT_THRESHOLD_SECS, SessionizedSequence, sessionize_all
from .train import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

VOCAB_FILE = "vocab.txt"
LIMITS_FILE = "limits.txt"
CHECKPOINT_FILE = "best.npz"


@dataclass
class Dataset:
    sequences: dict[str, SessionizedSequence]
    partition: UserPartition
    vocab: Vocab
    limits: dict[int, float]

    def windows(self, split: str, seq_size: int) -> WindowSet:
        return build_windows(self.sequences, getattr(self.partition, split), self.vocab, seq_size, self.limits)

    def model_config(self, base: ModelConfig) -> ModelConfig:
        return replace(base, cardinalities=self.vocab.cardinalities(base.seq_size))


def prepare(
    records: Mapping[str, Sequence[InteractionRecord]],
    *,
    threshold_secs: float = DEFAULT_THRESHOLD_SECS,
    ratio=(7, 1, 2),
    seed: int = 0,
    limits: Mapping[int, float] = DEFAULT_TIME_LIMITS,
) -> Dataset:
    sequences = sessionize_all(records, threshold_secs)
    partition = split_users(sequences.keys(), ratio, seed)
    vocab = build_vocab(sequences[u] for u in sorted(partition.train))
    return Dataset(sequences, partition, vocab, dict(limits))


def audit_leakage(train_windows: WindowSet, partition: UserPartition) -> None:
    """Raise if any training window targets or contains a non-training user."""
    users = set(np.unique(train_windows.user).tolist())
    leaked = users - partition.train
    if leaked:
        sample = ", ".join(sorted(leaked)[:5])
        raise DataError(f"leakage: {len(leaked)} non-training user(s) in training windows: {sample}")


@dataclass
class EvalReport:
    auc: float
    n: int
    n_pos: int
    scored: ScoredSet
    macro_auc: float | None = None

    def summary(self) -> dict[str, float]:
        out = {"auc": self.auc, "n": self.n, "n_pos": self.n_pos}
        if self.macro_auc is not None:
            out["macro_auc"] = self.macro_auc
        return out


def evaluate(params: Params, config: ModelConfig, windows: WindowSet, batch_size: int = 512, per_user: bool = False) -> EvalReport:
    """Score every window's target interaction once and pool the AUC."""
    scores = predict_last(params, config, windows, batch_size)
    scored = ScoredSet(scores, windows.target, windows.user, windows.index)
    macro = macro_auc(scored) if per_user else None
    return EvalReport(auc(scored), len(scored.labels), int(scored.labels.sum()), scored, macro)


def save_encoding(out_dir: str | Path, vocab: Vocab, limits: Mapping[int, float]) -> None:
    out_dir = Path(out_dir)
    vocab.save(out_dir / VOCAB_FILE)
    save_limits(limits, out_dir / LIMITS_FILE)


def load_run(run_dir: str | Path) -> tuple[ModelConfig, Params, Vocab, dict[int, float]]:
    """Load a checkpoint with the vocab and limits it was trained with."""
    run_dir = Path(run_dir)
    ckpt = run_dir / CHECKPOINT_FILE if run_dir.is_dir() else run_dir
    base = ckpt.parent
    for name in (VOCAB_FILE, LIMITS_FILE):
        if not (base / name).exists():
            raise CompatibilityError(f"{name} missing next to checkpoint {ckpt}")
    config, params, _ = load_checkpoint(ckpt)
    vocab = Vocab.load(base / VOCAB_FILE)
    limits = load_limits(base / LIMITS_FILE)
    expected = vocab.cardinalities(config.seq_size)
    if expected != config.cardinalities:
        raise CompatibilityError("vocab file does not match the checkpoint's embedding tables")
    return config, params, vocab, limits


def evaluate_checkpoint(
    run_dir: str | Path,
    sequences: Mapping[str, SessionizedSequence],
    users=None,
    seq_size: int | None = None,
    batch_size: int = 512,
    per_user: bool = False,
) -> EvalReport:
    config, params, vocab, limits = load_run(run_dir)
    if seq_size is not None and seq_size != config.seq_size:
        raise CompatibilityError(f"checkpoint was trained with seq_size {config.seq_size}, asked for {seq_size}")
    users = sequences.keys() if users is None else users
    windows = build_windows(sequences, users, vocab, config.seq_size, limits)
    return evaluate(params, config, windows, batch_size, per_user)


@dataclass
class RunOutcome:
    name: str
    result: TrainResult
    test: EvalReport


def run_experiment(
    data: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    name: str = "run",
) -> RunOutcome:
    """Train on the train split, select on validation, report on test."""
    cfg = data.model_config(model_config)
    train_ws = data.windows("train", cfg.seq_size)
    audit_leakage(train_ws, data.partition)
    val_ws = data.windows("validation", cfg.seq_size)
    test_ws = data.windows("test", cfg.seq_size)
    ckpt = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_encoding(out_dir, data.vocab, data.limits)
        ckpt = out_dir / CHECKPOINT_FILE
    result = train(train_ws, val_ws, cfg, train_config, ckpt, {"name": name})
    report = evaluate(result.params, cfg, test_ws, train_config.eval_batch_size)
    if out_dir is not None:
        (out_dir / "metrics.tsv").write_text(result.metric_log())
    return RunOutcome(name, result, report)


# ---------------------------------------------------------------- ablation


@dataclass(frozen=True)
class AblationEntry:
    name: str
    enc_features: tuple[str, ...] = E_FEATURES
    dec_features: tuple[str, ...] = L_FEATURES
    seq_size: int | None = None


FEATURE_ABLATION = (
    AblationEntry("Base", ("id", "c", "p"), ("r", "p")),
    AblationEntry("add st", ("id", "c", "p", "st"), ("r", "p", "st")),
    AblationEntry("add iot", ("id", "c", "p", "st"), ("r", "p", "st", "iot")),
    AblationEntry("add et", ("id", "c", "p", "st"), ("r", "p", "st", "iot", "et")),
    AblationEntry("add sp, d", ("id", "c", "p", "st", "sp"), ("r", "p", "st", "iot", "et", "sp", "d")),
)

SEQ_SIZE_ABLATION = tuple(AblationEntry(str(n), seq_size=n) for n in (2, 5, 8, 10, 25))


@dataclass
class AblationRow:
    name: str
    enc_features: tuple[str, ...]
    dec_features: tuple[str, ...]
    seq_size: int
    test_auc: float
    best_epoch: int
    val_auc_per_epoch: list[float]


def run_ablation(
    entries: Sequence[AblationEntry],
    data: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
) -> list[AblationRow]:
    """Train and test one model per entry on shared splits and seed."""
    rows = []
    for entry in entries:
        cfg = replace(
            model_config,
            enc_features=entry.enc_features,
            dec_features=entry.dec_features,
            seq_size=entry.seq_size or model_config.seq_size,
        )
        sub = None if out_dir is None else Path(out_dir) / _slug(entry.name)
        outcome = run_experiment(data, cfg, train_config, sub, entry.name)
        rows.append(
            AblationRow(
                entry.name,
                entry.enc_features,
                entry.dec_features,
                cfg.seq_size,
                outcome.test.auc,
                outcome.result.best_epoch,
                [h.val_auc for h in outcome.result.history],
            )
        )
        log.info("ablation %s: test AUC %.4f", entry.name, outcome.test.auc)
    if out_dir is not None:
        write_ablation(rows, out_dir)
    return rows


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_") or "run"


def write_ablation(rows: Sequence[AblationRow], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ablation.tsv", "w", encoding="utf-8") as fh:
        fh.write("name\tencoder_inputs\tdecoder_inputs\tseq_size\ttest_auc\n")
        for r in rows:
            fh.write(f"{r.name}\t{','.join(r.enc_features)}\t{','.join(r.dec_features)}\t{r.seq_size}\t{r.test_auc:.4f}\n")
    with open(out_dir / "curves.tsv", "w", encoding="utf-8") as fh:
        fh.write("name\tepoch\tval_auc\n")
        for r in rows:
            for e, a in enumerate(r.val_auc_per_epoch, 1):
                fh.write(f"{r.name}\t{e}\t{a:.6f}\n")
