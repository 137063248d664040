"""Random hyper-parameter search driven by an external trainer command.

The trainer is invoked as ``<command> --config trial.json --out result.json``.
``trial.json`` holds the TrialConfig fields plus ``inference_set`` and
``stage``; ``result.json`` must provide ``training_acc``, ``validation_acc``
and ``predictions_csv`` (a predictions file for the inference set, relative to
the result file unless absolute). Test OA and M-F1 are computed here from
those predictions.

Every finished trial is appended to ``<workdir>/<stage>.jsonl``; rerunning a
round skips the trials already recorded there.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

from cropsight.metrics import confusion, macro_f1, overall_accuracy
from cropsight.records import read_predictions
from cropsight.rng import stream

log = logging.getLogger(__name__)

OPTIMIZERS = ("GD", "Momentum", "Adam", "RMSProp")


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrialConfig:
    model_id: int
    learning_rate: float
    batch_size: int
    momentum: float
    optimizer: str
    augmented: bool = False
    epochs: int = 3000

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0 or self.batch_size & (self.batch_size - 1):
            raise ValueError("batch_size must be a power of two")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.optimizer == "GD" and self.momentum != 0:
            raise ValueError("plain gradient descent takes no momentum")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")


@dataclass(frozen=True)
class SearchSpace:
    lr_min: float = 1e-4
    lr_max: float = 1e-1
    batch_sizes: tuple[int, ...] = (32, 64, 128, 256, 512, 1024)
    momenta: tuple[float, ...] = (0.0, 0.9, 0.99)
    optimizers: tuple[str, ...] = OPTIMIZERS
    epochs: int = 3000

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")
        if not self.batch_sizes or any(b <= 0 or b & (b - 1) for b in self.batch_sizes):
            raise ValueError("batch sizes must be powers of two")
        if not self.momenta or any(not 0 <= m < 1 for m in self.momenta):
            raise ValueError("momenta must lie in [0, 1)")
        if not self.optimizers or any(o not in OPTIMIZERS for o in self.optimizers):
            raise ValueError(f"optimizers must be drawn from {OPTIMIZERS}")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")

    @classmethod
    def from_dict(cls, d) -> "SearchSpace":
        d = dict(d)
        for key in ("batch_sizes", "momenta", "optimizers"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def sample_configs(n: int = 157, seed: int = 0, space: SearchSpace | None = None) -> list[TrialConfig]:
    """Independent draws: log-uniform learning rate, uniform choices elsewhere."""
    space = space or SearchSpace()
    rng = stream(seed, "search-space")
    lo, hi = math.log(space.lr_min), math.log(space.lr_max)
    out = []
    for model_id in range(1, n + 1):
        lr = space.lr_min if lo == hi else math.exp(rng.uniform(lo, hi))
        batch = int(space.batch_sizes[rng.integers(len(space.batch_sizes))])
        optimizer = space.optimizers[rng.integers(len(space.optimizers))]
        momentum = float(space.momenta[rng.integers(len(space.momenta))])
        if optimizer == "GD":
            momentum = 0.0
        out.append(TrialConfig(model_id, lr, batch, momentum, optimizer, False, space.epochs))
    return out


@dataclass(frozen=True)
class TrialResult:
    config: TrialConfig
    status: str
    training_acc: float | None = None
    validation_acc: float | None = None
    test_acc: float | None = None
    m_f1: float | None = None
    n_images: int | None = None
    diagnostic: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "TrialResult":
        d = dict(d)
        d["config"] = TrialConfig(**d["config"])
        return cls(**d)


def _accuracy(result, key):
    v = result.get(key)
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not 0.0 <= v <= 1.0:
        raise SearchError(f"result field {key!r} must be a fraction in [0, 1], got {v!r}")
    return float(v)


def _command(trainer_command) -> list[str]:
    if isinstance(trainer_command, str):
        return shlex.split(trainer_command)
    return list(trainer_command)


def run_trial(config: TrialConfig, trainer_command, inference_set_ref: str, trial_dir: Path,
              stage: str, timeout: float | None = None) -> TrialResult:
    trial_dir.mkdir(parents=True, exist_ok=True)
    cfg_path = trial_dir / "trial.json"
    out_path = trial_dir / "result.json"
    payload = asdict(config) | {"inference_set": str(inference_set_ref), "stage": stage}
    cfg_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    if out_path.exists():
        out_path.unlink()
    cmd = _command(trainer_command) + ["--config", str(cfg_path), "--out", str(out_path)]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as exc:
        return TrialResult(config, "failed", diagnostic=f"trainer did not run: {exc}")
    if proc.returncode != 0:
        tail = (proc.stderr or "").strip().splitlines()[-1:] or [""]
        return TrialResult(config, "failed", diagnostic=f"trainer exited with {proc.returncode}: {tail[0]}")
    try:
        result = json.loads(out_path.read_text(encoding="utf-8"))
        if not isinstance(result, dict) or "predictions_csv" not in result:
            raise SearchError("result.json lacks predictions_csv")
        training = _accuracy(result, "training_acc")
        validation = _accuracy(result, "validation_acc")
        pred_path = Path(result["predictions_csv"])
        if not pred_path.is_absolute():
            pred_path = out_path.parent / pred_path
        records = read_predictions(pred_path)
        if not records:
            raise SearchError("predictions file is empty")
        cm = confusion(records)
    except (OSError, ValueError, SearchError) as exc:
        return TrialResult(config, "failed", diagnostic=f"protocol violation: {exc}")
    return TrialResult(config, "ok", training, validation,
                       overall_accuracy(cm), macro_f1(cm), len(records))


def _trial_key(config: TrialConfig) -> str:
    return f"{config.model_id}:{int(config.augmented)}"


def load_ledger(path: Path) -> dict[str, TrialResult]:
    done = {}
    if not path.exists():
        return done
    for line in path.read_text(encoding="utf-8").splitlines():
        try:
            r = TrialResult.from_dict(json.loads(line))
        except (ValueError, TypeError, KeyError):
            # a torn final line from an interrupted run
            continue
        done[_trial_key(r.config)] = r
    return done


def run_round(configs: Sequence[TrialConfig], trainer_command, inference_set_ref, workdir,
              stage: str = "round1", parallelism: int = 1, timeout: float | None = None) -> list[TrialResult]:
    """Run every config once; returns results ordered by model_id."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    ledger = workdir / f"{stage}.jsonl"
    done = load_ledger(ledger)
    if ledger.exists() and not ledger.read_bytes().endswith(b"\n") and ledger.stat().st_size:
        # close a torn line so the next record starts fresh
        with ledger.open("a", encoding="utf-8") as fh:
            fh.write("\n")
    pending = [c for c in configs if _trial_key(c) not in done]
    lock = threading.Lock()

    def work(config):
        trial_dir = workdir / stage / f"model_{config.model_id:03d}"
        result = run_trial(config, trainer_command, inference_set_ref, trial_dir, stage, timeout)
        if not result.ok:
            log.warning("trial %s failed: %s", config.model_id, result.diagnostic)
        with lock:
            with ledger.open("a", encoding="utf-8") as fh:
                fh.write(result.to_json() + "\n")
            done[_trial_key(config)] = result
        return result

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(work, pending))
    else:
        for c in pending:
            work(c)
    return sorted((done[_trial_key(c)] for c in configs), key=lambda r: r.config.model_id)


def rank(results: Sequence[TrialResult]) -> list[TrialResult]:
    """Successful trials by test OA, best first; ties go to the lower model id."""
    return sorted((r for r in results if r.ok), key=lambda r: (-r.test_acc, r.config.model_id))


@dataclass
class ProtocolOutcome:
    round1: list[TrialResult]
    round2: list[TrialResult]
    best: TrialResult
    best_imbalanced: TrialResult | None = None
    flags: list[str] = field(default_factory=list)

    def table(self, columns: int | None = None) -> list[list[str]]:
        return table3(rank(self.round2), self.best_imbalanced, columns)


def two_round_protocol(trainer_command, inference_set_ref, workdir, n: int = 157, top_k: int = 5,
                       seed: int = 0, space: SearchSpace | None = None,
                       configs: Sequence[TrialConfig] | None = None, parallelism: int = 1,
                       imbalanced_set_ref=None, timeout: float | None = None) -> ProtocolOutcome:
    """Unaugmented round, augmented rerun of the ``top_k`` by OA, then the best model.

    With ``imbalanced_set_ref`` the best configuration is handed to the trainer
    once more (stage ``best``) to score the imbalanced set.
    """
    if configs is None:
        configs = sample_configs(n, seed, space)
    configs = [replace(c, augmented=False) for c in configs]
    flags = []
    round1 = run_round(configs, trainer_command, inference_set_ref, workdir, "round1", parallelism, timeout)
    ranked = rank(round1)
    if len(ranked) < top_k:
        flags.append(f"only {len(ranked)} successful round-1 trials for top_k={top_k}")
    top = [replace(r.config, augmented=True) for r in ranked[:top_k]]
    if not top:
        raise SearchError("no round-1 trial succeeded")
    round2 = run_round(top, trainer_command, inference_set_ref, workdir, "round2", parallelism, timeout)
    ranked2 = rank(round2)
    if not ranked2:
        raise SearchError("no round-2 trial succeeded")
    best = ranked2[0]
    best_imb = None
    if imbalanced_set_ref is not None:
        best_imb = run_round([best.config], trainer_command, imbalanced_set_ref, workdir, "best",
                             1, timeout)[0]
        if not best_imb.ok:
            flags.append(f"best-model run failed: {best_imb.diagnostic}")
    return ProtocolOutcome(round1, round2, best, best_imb, flags)


TABLE3_ROWS = ("Model", "Level", "LR", "BS", "Momentum", "Optimizer", "# of Images",
               "Validation Accuracy", "Training Accuracy", "Test Accuracy", "M-F1")


def _fmt(v, digits=4):
    return "" if v is None else f"{v:.{digits}f}"


def _column(r: TrialResult, level: str) -> list[str]:
    c = r.config
    return [str(c.model_id), level, _fmt(c.learning_rate), str(c.batch_size), f"{c.momentum:g}",
            c.optimizer, "" if r.n_images is None else str(r.n_images), _fmt(r.validation_acc),
            _fmt(r.training_acc), _fmt(r.test_acc), _fmt(r.m_f1)]


def table3(ranked_round2: Sequence[TrialResult], best_imbalanced: TrialResult | None = None,
           columns: int | None = None) -> list[list[str]]:
    """Rows of the ranking table: the leading ``columns`` augmented models, then the best model."""
    shown = ranked_round2 if columns is None else ranked_round2[:columns]
    cols = [(str(i + 1), _column(r, "Augm")) for i, r in enumerate(shown)]
    if best_imbalanced is not None and best_imbalanced.ok:
        cols.append(("Best", _column(best_imbalanced, "Best Model")))
    rows = [["Ranking"] + [h for h, _ in cols]]
    for i, name in enumerate(TABLE3_ROWS):
        rows.append([name] + [col[i] for _, col in cols])
    return rows


def write_table3(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def best_record(outcome: ProtocolOutcome) -> dict:
    d = {"best": asdict(outcome.best), "flags": list(outcome.flags)}
    if outcome.best_imbalanced is not None:
        d["best_imbalanced"] = asdict(outcome.best_imbalanced)
    return d
