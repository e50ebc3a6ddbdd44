"""Ablation-grid orchestration, per-run records, and summary statistics.

A grid cell is one (game, message kind, loss mode, interagent-gradients)
combination; every cell is trained for `n_runs` seeds. Each run writes a
line-delimited record file (header, one record per iteration, end marker),
and a manifest tracks completion so interrupted grids resume without
recomputing finished runs.

The headline statistic mirrors the reporting convention of the study this
reproduces: per run, the best mini-batch mean return over all iterations;
across runs, mean with a 95% confidence half-width. Sequence Guess
summaries use the shifted return scale, Negotiation the raw scale.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .negotiation import NegotiationConfig
from .seqguess import MESSAGE_CONTINUOUS, MESSAGE_DISCRETE, SeqGuessConfig
from .training import (
    GAME_NEGOTIATION,
    GAME_SEQGUESS,
    IterationStats,
    TrainerConfig,
    TrainingDiverged,
    make_trainer,
    negotiation_trainer_defaults,
    seqguess_trainer_defaults,
)

RECORD_SCHEMA = 1

LOSS_MODES = ("rc", "ps", "rc_ps")


class RecordError(ValueError):
    pass


@dataclass(frozen=True)
class CellSpec:
    """One grid cell: which game, channel, loss terms, and gradient mode."""

    game: str
    losses: str = "rc_ps"              # rc | ps | rc_ps
    interagent_gradients: bool = False
    message_kind: str = MESSAGE_CONTINUOUS   # seqguess only

    def __post_init__(self):
        if self.game not in (GAME_NEGOTIATION, GAME_SEQGUESS):
            raise ValueError(f"unknown game: {self.game!r}")
        if self.losses not in LOSS_MODES:
            raise ValueError(f"losses must be one of {LOSS_MODES}")
        if self.message_kind not in (MESSAGE_CONTINUOUS, MESSAGE_DISCRETE):
            raise ValueError(f"unknown message_kind: {self.message_kind!r}")
        if self.interagent_gradients and self.message_kind == MESSAGE_DISCRETE:
            raise ValueError("the discrete-message variant is evaluated without interagent gradients")

    @property
    def name(self) -> str:
        ig = "ig" if self.interagent_gradients else "noig"
        if self.game == GAME_NEGOTIATION:
            return f"negotiation_{ig}_{self.losses}"
        kind = "cm" if self.message_kind == MESSAGE_CONTINUOUS else "dm"
        return f"seqguess_{kind}_{ig}_{self.losses}"

    def rc_ps_flags(self) -> tuple[bool, bool]:
        return self.losses in ("rc", "rc_ps"), self.losses in ("ps", "rc_ps")


@dataclass
class ExperimentConfig:
    """A cell plus how many seeded runs of it to execute, and where."""

    cell: CellSpec
    trainer: TrainerConfig
    game_cfg: NegotiationConfig | SeqGuessConfig
    n_runs: int = 30
    seed_base: int = 0
    out_dir: str = "runs"

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")

    def run_seed(self, run_index: int) -> int:
        return self.seed_base + run_index


def default_experiment(
    cell: CellSpec, n_runs: int = 30, seed_base: int = 0, out_dir: str = "runs", **trainer_overrides
) -> ExperimentConfig:
    """Table-default trainer and game configs for a cell."""
    rc, ps = cell.rc_ps_flags()
    common = dict(rc_enabled=rc, ps_enabled=ps, interagent_gradients=cell.interagent_gradients)
    common.update(trainer_overrides)
    if cell.game == GAME_NEGOTIATION:
        trainer = negotiation_trainer_defaults(**common)
        game_cfg = NegotiationConfig()
    else:
        trainer = seqguess_trainer_defaults(cell.message_kind, **common)
        game_cfg = SeqGuessConfig(message_kind=cell.message_kind)
    return ExperimentConfig(cell=cell, trainer=trainer, game_cfg=game_cfg,
                            n_runs=n_runs, seed_base=seed_base, out_dir=out_dir)


@dataclass
class RunRecord:
    """Per-iteration statistics of one seeded run, plus failure flags."""

    cell: str
    run_id: int
    seed: int
    config: dict
    iterations: list[IterationStats] = field(default_factory=list)
    wall_clock: float = 0.0
    failed: bool = False
    failure_message: str | None = None

    def curve(self, shifted: bool | None = None) -> np.ndarray:
        """Mean batch return per iteration, shifted when the game reports so."""
        use_shifted = self._uses_shifted() if shifted is None else shifted
        if use_shifted:
            return np.array([s.shifted_return for s in self.iterations])
        return np.array([s.mean_return for s in self.iterations])

    def best_minibatch(self) -> float:
        values = self.curve()
        if values.size == 0:
            raise RecordError(f"run {self.run_id} of {self.cell} has no iterations")
        return float(values.max())

    def _uses_shifted(self) -> bool:
        return bool(self.iterations) and self.iterations[0].shifted_return is not None


def execute_run(cfg: ExperimentConfig, run_index: int, progress=None) -> RunRecord:
    """Train one seed of one cell, catching divergence into the record."""
    seed = cfg.run_seed(run_index)
    trainer = make_trainer(cfg.cell.game, cfg.trainer, cfg.game_cfg, seed)
    record = RunRecord(
        cell=cfg.cell.name,
        run_id=run_index,
        seed=seed,
        config=_config_dict(cfg),
    )
    start = time.monotonic()
    try:
        trainer.run(callback=lambda s: _collect(record, s, progress))
    except TrainingDiverged as exc:
        record.failed = True
        record.failure_message = str(exc)
    record.wall_clock = time.monotonic() - start
    return record


def _collect(record: RunRecord, stats: IterationStats, progress) -> None:
    record.iterations.append(stats)
    if progress is not None:
        progress(record, stats)


def _config_dict(cfg: ExperimentConfig) -> dict:
    return {
        "cell": asdict(cfg.cell),
        "trainer": asdict(cfg.trainer),
        "game": asdict(cfg.game_cfg),
        "n_runs": cfg.n_runs,
        "seed_base": cfg.seed_base,
    }


# ---------------------------------------------------------------------------
# persistence

def record_path(out_dir, cell_name: str, run_index: int, seed: int) -> Path:
    return Path(out_dir) / cell_name / f"run{run_index:03d}_seed{seed}.jsonl"


def persist(record: RunRecord, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        header = {
            "kind": "header",
            "schema": RECORD_SCHEMA,
            "cell": record.cell,
            "run_id": record.run_id,
            "seed": record.seed,
            "config": record.config,
        }
        fh.write(json.dumps(header) + "\n")
        for stats in record.iterations:
            row = {k: v for k, v in dataclasses.asdict(stats).items() if v is not None}
            row["kind"] = "iter"
            fh.write(json.dumps(row) + "\n")
        fh.write(
            json.dumps(
                {
                    "kind": "end",
                    "wall_clock": record.wall_clock,
                    "failed": record.failed,
                    "failure_message": record.failure_message,
                }
            )
            + "\n"
        )


_ITER_FIELDS = {f.name for f in dataclasses.fields(IterationStats)}


def load(path) -> RunRecord:
    path = Path(path)
    record: RunRecord | None = None
    ended = False
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                warnings.warn(f"{path}:{line_no}: ignoring truncated record line")
                continue
            kind = row.pop("kind", None)
            if kind == "header":
                if row.get("schema") != RECORD_SCHEMA:
                    raise RecordError(
                        f"{path}: unsupported record schema {row.get('schema')!r}"
                    )
                record = RunRecord(
                    cell=row["cell"], run_id=row["run_id"], seed=row["seed"], config=row["config"]
                )
            elif kind == "iter":
                if record is None:
                    raise RecordError(f"{path}: iteration before header")
                values = {k: row.get(k) for k in _ITER_FIELDS}
                record.iterations.append(IterationStats(**values))
            elif kind == "end":
                if record is None:
                    raise RecordError(f"{path}: end before header")
                record.wall_clock = row.get("wall_clock", 0.0)
                record.failed = bool(row.get("failed", False))
                record.failure_message = row.get("failure_message")
                ended = True
    if record is None:
        raise RecordError(f"{path}: no header record")
    if not ended:
        warnings.warn(f"{path}: record file has no end marker (incomplete run?)")
    return record


def load_directory(records_dir) -> list[RunRecord]:
    records_dir = Path(records_dir)
    paths = sorted(records_dir.glob("**/*.jsonl"))
    records = [load(p) for p in paths]
    if not records:
        raise RecordError(f"no records found under {records_dir}")
    return records


# ---------------------------------------------------------------------------
# grid execution with resume

def _manifest_path(out_dir) -> Path:
    return Path(out_dir) / "manifest.json"


def _load_manifest(out_dir) -> dict:
    path = _manifest_path(out_dir)
    if path.exists():
        return json.loads(path.read_text())
    return {"schema": RECORD_SCHEMA, "runs": {}}


def _save_manifest(out_dir, manifest: dict) -> None:
    path = _manifest_path(out_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2))
    tmp.replace(path)


def run_grid(configs: list[ExperimentConfig], progress=None) -> list[RunRecord]:
    """Execute every (cell, seed) pair, skipping runs the manifest marks done."""
    records: list[RunRecord] = []
    for cfg in configs:
        manifest = _load_manifest(cfg.out_dir)
        for run_index in range(cfg.n_runs):
            seed = cfg.run_seed(run_index)
            path = record_path(cfg.out_dir, cfg.cell.name, run_index, seed)
            key = f"{cfg.cell.name}/run{run_index:03d}"
            if manifest["runs"].get(key) == "done" and path.exists():
                records.append(load(path))
                continue
            record = execute_run(cfg, run_index, progress=progress)
            persist(record, path)
            manifest = _load_manifest(cfg.out_dir)
            manifest["runs"][key] = "done"
            _save_manifest(cfg.out_dir, manifest)
            records.append(record)
    records.sort(key=lambda r: (r.cell, r.run_id))
    return records


def _run_and_persist(cfg: ExperimentConfig, run_index: int) -> str:
    """Worker-process entry: train one run and write its record file."""
    import torch

    torch.set_num_threads(1)
    record = execute_run(cfg, run_index)
    path = record_path(cfg.out_dir, cfg.cell.name, run_index, record.seed)
    persist(record, path)
    return str(path)


def run_grid_parallel(
    configs: list[ExperimentConfig], n_jobs: int = 1, progress=None
) -> list[RunRecord]:
    """`run_grid` fanned out over a pool of worker processes.

    Each run writes its own record file; only the parent touches the
    manifest, after a worker reports completion. Results come back in a
    fixed (cell, run) order regardless of completion order.
    """
    if n_jobs <= 1:
        return run_grid(configs, progress=progress)
    from concurrent.futures import ProcessPoolExecutor, as_completed

    records: list[RunRecord] = []
    pending: list[tuple[ExperimentConfig, int]] = []
    for cfg in configs:
        manifest = _load_manifest(cfg.out_dir)
        for run_index in range(cfg.n_runs):
            seed = cfg.run_seed(run_index)
            path = record_path(cfg.out_dir, cfg.cell.name, run_index, seed)
            key = f"{cfg.cell.name}/run{run_index:03d}"
            if manifest["runs"].get(key) == "done" and path.exists():
                records.append(load(path))
            else:
                pending.append((cfg, run_index))
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = {pool.submit(_run_and_persist, cfg, idx): (cfg, idx) for cfg, idx in pending}
        for future in as_completed(futures):
            cfg, run_index = futures[future]
            path = future.result()
            manifest = _load_manifest(cfg.out_dir)
            manifest["runs"][f"{cfg.cell.name}/run{run_index:03d}"] = "done"
            _save_manifest(cfg.out_dir, manifest)
            records.append(load(path))
    records.sort(key=lambda r: (r.cell, r.run_id))
    return records


# ---------------------------------------------------------------------------
# statistics

@dataclass
class SummaryStats:
    """Cross-run statistics for one cell."""

    cell: str
    n_runs: int
    scale: str                        # "raw" | "shifted"
    best_mean: float
    best_std: float | None            # sample std of per-run bests (ddof=1)
    best_ci_halfwidth: float | None   # 1.96 * std / sqrt(R); None for R == 1
    curve_iterations: np.ndarray
    curve_mean: np.ndarray
    curve_ci_halfwidth: np.ndarray


def confidence_halfwidth(values: np.ndarray, use_t: bool = False) -> float | None:
    """95% half-width: 1.96 (normal) or the t quantile when `use_t`."""
    n = len(values)
    if n < 2:
        return None
    std = float(np.std(values, ddof=1))
    if use_t:
        from scipy import stats as sstats

        factor = float(sstats.t.ppf(0.975, n - 1))
    else:
        factor = 1.96
    return factor * std / math.sqrt(n)


def summarize(
    records: list[RunRecord], max_curve_points: int = 2000, use_t: bool = False
) -> dict[str, SummaryStats]:
    """Per-cell best-minibatch and learning-curve statistics."""
    by_cell: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_cell.setdefault(rec.cell, []).append(rec)
    out: dict[str, SummaryStats] = {}
    for cell, recs in sorted(by_cell.items()):
        bests = np.array([r.best_minibatch() for r in recs])
        scale = "shifted" if recs[0]._uses_shifted() else "raw"
        common = min(len(r.iterations) for r in recs)
        if common == 0:
            raise RecordError(f"cell {cell} contains a run without iterations")
        grid = np.arange(common)
        if common > max_curve_points:
            grid = np.linspace(0, common - 1, max_curve_points).round().astype(int)
            grid = np.unique(grid)
        curves = np.stack([r.curve()[:common][grid] for r in recs])
        mean = curves.mean(axis=0)
        if len(recs) >= 2:
            std = curves.std(axis=0, ddof=1)
            factor = 1.96
            if use_t:
                from scipy import stats as sstats

                factor = float(sstats.t.ppf(0.975, len(recs) - 1))
            ci = factor * std / math.sqrt(len(recs))
        else:
            ci = np.full_like(mean, np.nan)
        out[cell] = SummaryStats(
            cell=cell,
            n_runs=len(recs),
            scale=scale,
            best_mean=float(bests.mean()),
            best_std=float(np.std(bests, ddof=1)) if len(recs) >= 2 else None,
            best_ci_halfwidth=confidence_halfwidth(bests, use_t=use_t),
            curve_iterations=grid + 1,
            curve_mean=mean,
            curve_ci_halfwidth=ci,
        )
    return out


# ---------------------------------------------------------------------------
# table export

_ROW_ORDER = [
    ("ig", "negotiation", "Negotiation"),
    ("ig", "seqguess_cm", "CM Sequence Guess"),
    ("noig", "negotiation", "Negotiation"),
    ("noig", "seqguess_cm", "CM Sequence Guess"),
    ("noig", "seqguess_dm", "DM Sequence Guess"),
]


def _cell_key(cell_name: str) -> tuple[str, str, str]:
    """(ig block, row key, loss column) from a cell name."""
    parts = cell_name.split("_")
    if parts[0] == "negotiation":
        ig, losses = parts[1], "_".join(parts[2:])
        return ig, "negotiation", losses
    kind, ig, losses = parts[1], parts[2], "_".join(parts[3:])
    return ig, f"seqguess_{kind}", losses


def summary_table(stats: dict[str, SummaryStats]) -> tuple[str, str]:
    """(aligned text table, CSV) of best-minibatch returns, Table-1 layout."""
    grid: dict[tuple[str, str], dict[str, str]] = {}
    for cell, s in stats.items():
        ig, row_key, losses = _cell_key(cell)
        value = f"{s.best_mean:.3f}"
        if s.best_ci_halfwidth is not None:
            value += f" +- {s.best_ci_halfwidth:.3f}"
        grid.setdefault((ig, row_key), {})[losses] = f"{value} [{s.scale}]"
    columns = ["RC", "PS", "RC and PS"]
    keys = ["rc", "ps", "rc_ps"]
    lines = []
    csv_lines = ["block,game,rc,ps,rc_ps"]
    for ig, row_key, label in _ROW_ORDER:
        if (ig, row_key) not in grid:
            continue
        row = grid[(ig, row_key)]
        block = "IG" if ig == "ig" else "No IG"
        lines.append((block, label, [row.get(k, "-") for k in keys]))
        csv_lines.append(
            ",".join([block, label] + [row.get(k, "").replace(" +- ", "+-") or "-" for k in keys])
        )
    width = max((len(v) for _, _, vals in lines for v in vals), default=10)
    header = f"{'':6s} {'game':18s} " + " ".join(f"{c:>{width}s}" for c in columns)
    text = [header]
    for block, label, vals in lines:
        text.append(f"{block:6s} {label:18s} " + " ".join(f"{v:>{width}s}" for v in vals))
    return "\n".join(text), "\n".join(csv_lines)
