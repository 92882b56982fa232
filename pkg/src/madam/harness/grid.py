"""Learning-rate grid searches and bit-width comparisons.

A grid runs one trial per (optimizer, eta) cell with a fixed eta (no
decay) and reports the normalized score best-over-grid / this-cell, so
each optimizer's best cell scores 1.0 and insensitivity to eta shows up
as a wide plateau of near-1 scores. Bit-width comparisons rerun one
config at several ladder widths while holding the dynamic range fixed by
raising the base precision, the preferred trade when shrinking B.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig, LnsConfig
from .training import TrialRecord, train

# breaks exact metric ties without visibly moving scores
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class GridCell:
    optimizer: str
    eta: float
    final_metric: float
    normalized_score: float
    diverged: bool

    def to_row(self) -> list:
        metric = "" if math.isinf(self.final_metric) else repr(self.final_metric)
        return [self.optimizer, repr(self.eta), metric,
                repr(self.normalized_score), int(self.diverged)]


def default_eta_grid() -> list[float]:
    """Logarithmic 1-2-5 grid from 1e-4 to 1."""
    grid = []
    for decade in (1e-4, 1e-3, 1e-2, 1e-1):
        grid.extend([decade, 2 * decade, 5 * decade])
    grid.append(1.0)
    return grid


def _cell_config(cfg: ExperimentConfig, optimizer: str, eta: float) -> ExperimentConfig:
    opt = replace(cfg.optimizer, variant=optimizer, eta=eta, eta_star=None)
    schedule = replace(cfg.schedule, decay="none")
    return cfg.replace(optimizer=opt, schedule=schedule, lns=None, out_dir=None)


def normalize_scores(cells: list[tuple[str, float, float, bool]]) -> list[GridCell]:
    """Attach normalized scores; diverged cells score 0.

    The best cell per optimizer scores exactly 1.0; exact metric ties
    break toward the smaller eta, with tied runners scoring just under 1.
    """
    by_opt: dict[str, list[tuple[float, float, bool]]] = {}
    for opt, eta, metric, diverged in cells:
        by_opt.setdefault(opt, []).append((eta, metric, diverged))
    out = []
    for opt, rows in by_opt.items():
        alive = [(metric, eta) for eta, metric, diverged in rows
                 if not diverged and math.isfinite(metric)]
        best_metric, best_eta = min(alive) if alive else (math.inf, math.nan)
        for eta, metric, diverged in rows:
            if diverged or not math.isfinite(metric):
                score = 0.0
            elif metric == best_metric and eta == best_eta:
                score = 1.0
            else:
                score = (best_metric + _TIE_EPS) / (metric + _TIE_EPS)
                score = min(score, 1.0 - _TIE_EPS)
            out.append(GridCell(opt, eta, metric, score, diverged))
    out.sort(key=lambda c: (c.optimizer, c.eta))
    return out


def grid_search(cfg: ExperimentConfig, etas: list[float] | None = None,
                optimizers: tuple[str, ...] = ("madam", "sgd"),
                ) -> tuple[list[GridCell], dict[tuple[str, float], TrialRecord]]:
    """One fixed-eta trial per (optimizer, eta) cell on the config's task.

    Cells share the task data and trial seed but nothing else, so they
    can be reproduced independently. Returns the normalized cells plus
    the underlying records keyed by (optimizer, eta).
    """
    etas = default_eta_grid() if etas is None else sorted(etas)
    if not etas:
        raise ValueError("eta grid must be nonempty")
    records: dict[tuple[str, float], TrialRecord] = {}
    raw = []
    for opt in optimizers:
        for eta in etas:
            record = train(_cell_config(cfg, opt, eta))
            records[(opt, eta)] = record
            raw.append((opt, eta, record.final_metric, record.diverged))
    return normalize_scores(raw), records


def best_cell(cells: list[GridCell], optimizer: str) -> GridCell | None:
    for cell in cells:
        if cell.optimizer == optimizer and cell.normalized_score == 1.0:
            return cell
    return None


def write_grid_csv(cells: list[GridCell], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["optimizer", "eta", "final_metric", "normalized_score", "diverged"])
        for cell in cells:
            writer.writerow(cell.to_row())


@dataclass(frozen=True)
class BitwidthRow:
    """Outcome of one bit width across repeat seeds (bits=None is float)."""

    bits: int | None
    eta0: float | None
    eta: float
    dynamic_range: float | None
    metrics: tuple[float, ...]
    mean: float
    spread: float  # max - min over repeats

    def to_dict(self) -> dict:
        return {
            "bits": self.bits,
            "eta0": self.eta0,
            "eta": self.eta,
            "dynamic_range": self.dynamic_range,
            "metrics": list(self.metrics),
            "mean": self.mean,
            "spread": self.spread,
        }


def compare_bitwidths(cfg: ExperimentConfig, bits_list: tuple[int, ...] = (12, 10, 8),
                      repeats: int = 3, include_float: bool = True) -> list[BitwidthRow]:
    """Train the same task at several bit widths with a fixed dynamic range.

    The anchor range comes from the config's lns settings (default 12-bit
    eta0=0.001); each width B gets eta0(B) = log_range / (2**B - 1), and
    eta snaps to the nearest rung multiple so the ladder constraint
    holds. Repeats vary only the trial seed; the row reports mean and
    max-min spread.
    """
    anchor = cfg.lns if cfg.lns is not None else LnsConfig()
    log_range = (2 ** anchor.bits - 1) * anchor.eta0
    seeds = [cfg.seed + i for i in range(repeats)]
    rows = []
    if include_float:
        metrics = []
        for seed in seeds:
            rec = train(cfg.replace(lns=None, seed=seed, out_dir=None))
            metrics.append(rec.final_metric)
        rows.append(_bitwidth_row(None, None, cfg.optimizer.eta, None, metrics))
    for bits in bits_list:
        eta0 = log_range / (2 ** bits - 1)
        rungs = max(1, round(cfg.optimizer.eta / eta0))
        eta = rungs * eta0
        opt = replace(cfg.optimizer, eta=eta, eta_star=None)
        lns = LnsConfig(bits=bits, eta0=eta0,
                        eta_floor=None if anchor.eta_floor is None else anchor.eta_floor)
        metrics = []
        for seed in seeds:
            rec = train(cfg.replace(optimizer=opt, lns=lns, seed=seed, out_dir=None))
            metrics.append(rec.final_metric)
        rows.append(_bitwidth_row(bits, eta0, eta, float(np.exp(log_range)), metrics))
    return rows


def _bitwidth_row(bits, eta0, eta, dynamic_range, metrics: list[float]) -> BitwidthRow:
    finite = [m for m in metrics if math.isfinite(m)]
    mean = float(np.mean(finite)) if finite else math.inf
    spread = float(np.max(finite) - np.min(finite)) if finite else math.inf
    return BitwidthRow(bits=bits, eta0=eta0, eta=eta, dynamic_range=dynamic_range,
                       metrics=tuple(metrics), mean=mean, spread=spread)


def bitwidth_summary(rows: list[BitwidthRow]) -> dict:
    """JSON-friendly table plus the soft monotonicity check (finer bits
    should not score worse than coarser ones beyond a small tolerance)."""
    by_bits = {row.bits: row for row in rows}
    trend_ok = None
    if 12 in by_bits and 8 in by_bits:
        trend_ok = bool(by_bits[12].mean <= by_bits[8].mean + 0.05)
    return {
        "rows": [
            {**row.to_dict(),
             "metrics": [None if math.isinf(m) else m for m in row.metrics],
             "mean": None if math.isinf(row.mean) else row.mean,
             "spread": None if math.isinf(row.spread) else row.spread}
            for row in rows
        ],
        "trend_12_bit_not_worse_than_8_bit": trend_ok,
    }
