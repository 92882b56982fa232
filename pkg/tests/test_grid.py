"""Grid normalization, cell independence, and the bit-width sweep."""

import csv
import math

import numpy as np
import pytest

from madam.harness.config import (ExperimentConfig, LnsConfig, ModelConfig,
                                  OptimizerConfig, ScheduleConfig, TaskConfig)
from madam.harness.grid import (best_cell, bitwidth_summary, compare_bitwidths,
                                default_eta_grid, grid_search, normalize_scores,
                                write_grid_csv)
from madam.harness.training import train


def tiny_config(**kw):
    defaults = dict(
        task=TaskConfig(kind="two_moons", n_train=64, n_test=32, noise=0.1, seed=3),
        model=ModelConfig(hidden=[8]),
        schedule=ScheduleConfig(epochs=4, batch_size=32),
        seed=1,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestNormalization:
    def test_single_cell_scores_one(self):
        cells = normalize_scores([("madam", 0.01, 0.25, False)])
        assert cells[0].normalized_score == 1.0

    def test_diverged_scores_zero(self):
        cells = normalize_scores([("sgd", 0.1, 0.2, False),
                                  ("sgd", 1.0, math.inf, True)])
        by_eta = {c.eta: c for c in cells}
        assert by_eta[1.0].normalized_score == 0.0
        assert by_eta[1.0].diverged
        assert by_eta[0.1].normalized_score == 1.0

    def test_exactly_one_best_with_tie_toward_smaller_eta(self):
        cells = normalize_scores([("madam", 0.01, 0.125, False),
                                  ("madam", 0.02, 0.125, False),
                                  ("madam", 0.05, 0.5, False)])
        ones = [c for c in cells if c.normalized_score == 1.0]
        assert len(ones) == 1 and ones[0].eta == 0.01
        by_eta = {c.eta: c for c in cells}
        assert 0.999 < by_eta[0.02].normalized_score < 1.0

    def test_scores_in_unit_interval(self):
        rng = np.random.default_rng(0)
        raw = [("x", float(e), float(m), False)
               for e, m in zip(rng.uniform(0, 1, 20), rng.uniform(0.01, 2, 20))]
        cells = normalize_scores(raw)
        assert all(0.0 <= c.normalized_score <= 1.0 for c in cells)
        assert sum(c.normalized_score == 1.0 for c in cells) == 1

    def test_zero_metric_cells_handled(self):
        cells = normalize_scores([("m", 0.01, 0.0, False), ("m", 0.02, 0.5, False)])
        by_eta = {c.eta: c for c in cells}
        assert by_eta[0.01].normalized_score == 1.0
        assert by_eta[0.02].normalized_score < 0.01


class TestDefaultGrid:
    def test_span_and_members(self):
        grid = default_eta_grid()
        assert grid[0] == 1e-4 and grid[-1] == 1.0
        for eta in (0.005, 0.01, 0.02):
            assert eta in grid
        assert grid == sorted(grid)


class TestGridSearch:
    def test_cells_match_independent_trials(self):
        # a grid cell must reproduce exactly as a standalone fixed-eta trial
        cfg = tiny_config()
        cells, records = grid_search(cfg, etas=[0.005, 0.05], optimizers=("madam",))
        for eta in (0.005, 0.05):
            solo = train(cfg.replace(
                optimizer=OptimizerConfig(variant="madam", eta=eta),
                schedule=ScheduleConfig(epochs=4, batch_size=32, decay="none")))
            assert records[("madam", eta)].final_metric == solo.final_metric

    def test_grid_strips_decay_and_lns(self):
        cfg = tiny_config(optimizer=OptimizerConfig(variant="madam", eta=0.01),
                          lns=LnsConfig(bits=12, eta0=0.001))
        cells, records = grid_search(cfg, etas=[0.01], optimizers=("madam",))
        rec = records[("madam", 0.01)]
        solo = train(cfg.replace(
            lns=None,
            schedule=ScheduleConfig(epochs=4, batch_size=32, decay="none")))
        assert rec.final_metric == solo.final_metric

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            grid_search(tiny_config(), etas=[])

    def test_csv_output(self, tmp_path):
        cells, _ = grid_search(tiny_config(), etas=[0.01, 0.1],
                               optimizers=("madam", "sgd"))
        path = tmp_path / "grid.csv"
        write_grid_csv(cells, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["optimizer", "eta", "final_metric",
                           "normalized_score", "diverged"]
        assert len(rows) == 1 + 4

    def test_best_cell_lookup(self):
        cells, _ = grid_search(tiny_config(), etas=[0.005, 0.02],
                               optimizers=("madam",))
        best = best_cell(cells, "madam")
        assert best is not None
        assert best.normalized_score == 1.0
        assert best_cell(cells, "sgd") is None


class TestCompareBitwidths:
    def test_fixed_dynamic_range_and_eta_snapping(self):
        cfg = tiny_config(optimizer=OptimizerConfig(variant="madam", eta=0.01),
                          lns=LnsConfig(bits=12, eta0=0.001),
                          schedule=ScheduleConfig(epochs=2, batch_size=32))
        rows = compare_bitwidths(cfg, bits_list=(12, 10, 8), repeats=2)
        by_bits = {r.bits: r for r in rows}
        assert set(by_bits) == {None, 12, 10, 8}
        log_range = 4.095
        for bits in (12, 10, 8):
            row = by_bits[bits]
            np.testing.assert_allclose((2 ** bits - 1) * row.eta0, log_range,
                                       rtol=1e-12)
            np.testing.assert_allclose(row.dynamic_range, np.exp(log_range))
            ratio = row.eta / row.eta0
            assert abs(ratio - round(ratio)) < 1e-9
        np.testing.assert_allclose(by_bits[10].eta0, 4.095 / 1023, rtol=1e-12)
        assert abs(by_bits[10].eta0 - 0.004003) < 1e-6

    def test_repeats_recorded_with_mean_and_spread(self):
        cfg = tiny_config(optimizer=OptimizerConfig(variant="madam", eta=0.01),
                          lns=LnsConfig(bits=12, eta0=0.001),
                          schedule=ScheduleConfig(epochs=2, batch_size=32))
        rows = compare_bitwidths(cfg, bits_list=(12,), repeats=3,
                                 include_float=False)
        (row,) = rows
        assert len(row.metrics) == 3
        np.testing.assert_allclose(row.mean, np.mean(row.metrics))
        np.testing.assert_allclose(row.spread,
                                   np.max(row.metrics) - np.min(row.metrics))

    def test_summary_structure(self):
        cfg = tiny_config(optimizer=OptimizerConfig(variant="madam", eta=0.01),
                          lns=LnsConfig(bits=12, eta0=0.001),
                          schedule=ScheduleConfig(epochs=1, batch_size=32))
        rows = compare_bitwidths(cfg, bits_list=(12, 8), repeats=1)
        summary = bitwidth_summary(rows)
        assert "rows" in summary
        assert "trend_12_bit_not_worse_than_8_bit" in summary
        assert summary["trend_12_bit_not_worse_than_8_bit"] in (True, False)
