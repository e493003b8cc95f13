"""Grid hyperparameter search: maximize mean(PSNR) * mean(SSIM) / mean(iters).

Cells whose success rate falls below the configured floor are excluded
from the objective ranking; if nothing survives, the sweep reports that no
viable configuration exists rather than returning a degenerate winner.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field, replace

from .attacks import AttackConfig, run_attack
from .errors import InputError
from .metrics import psnr, ssim

SUCCESS_FLOOR = 0.9


@dataclass(frozen=True)
class SweepSpec:
    method: str
    grid: dict  # parameter name -> candidate list, e.g. {"alpha": [0.05, 0.1]}
    base: AttackConfig = field(default_factory=AttackConfig)
    success_floor: float = SUCCESS_FLOOR

    def cells(self):
        """Cartesian product of the candidate lists, in stable order."""
        if not self.grid or any(not v for v in self.grid.values()):
            raise InputError("every grid parameter needs a nonempty candidate list")
        names = sorted(self.grid)
        for combo in itertools.product(*(self.grid[n] for n in names)):
            yield dict(zip(names, combo))


@dataclass(frozen=True)
class CellResult:
    params: dict
    success_rate: float
    mean_psnr: float
    mean_ssim: float
    mean_iterations: float
    objective: float
    viable: bool
    per_image: list  # dicts: image_id, success, iterations, psnr, ssim


@dataclass(frozen=True)
class SweepResult:
    method: str
    cells: list
    best_index: int

    @property
    def best(self) -> CellResult:
        return self.cells[self.best_index]


def evaluate_cell(model, images, labels, method, config, image_ids=None):
    """Run one attack configuration over the validation images."""
    ids = image_ids if image_ids is not None else list(range(len(images)))
    records = []
    for image_id, image, label in zip(ids, images, labels):
        result = run_attack(method, model, image, label, config)
        rec = {"image_id": image_id, "success": result.success,
               "iterations": result.first_fool_iteration}
        if result.success:
            rec["psnr"] = psnr(image, result.adversarial_image)
            rec["ssim"] = ssim(image, result.adversarial_image)
        records.append(rec)
    return records


def summarize_cell(params, records, success_floor) -> CellResult:
    wins = [r for r in records if r["success"]]
    rate = len(wins) / len(records)
    if wins:
        mean_psnr = sum(r["psnr"] for r in wins) / len(wins)
        mean_ssim = sum(r["ssim"] for r in wins) / len(wins)
        mean_iters = sum(r["iterations"] for r in wins) / len(wins)
        objective = mean_psnr * mean_ssim / mean_iters
    else:
        mean_psnr = mean_ssim = mean_iters = objective = 0.0
    return CellResult(params=params, success_rate=rate, mean_psnr=mean_psnr,
                      mean_ssim=mean_ssim, mean_iterations=mean_iters,
                      objective=objective, viable=rate >= success_floor,
                      per_image=records)


def run_sweep(model, images, labels, spec: SweepSpec, image_ids=None) -> SweepResult:
    """Evaluate every grid cell and pick the viable one with the best objective.

    Validation images must be correctly classified by the model (the
    attacks reject others). Deterministic: cells run in grid order and the
    attacks themselves are deterministic.
    """
    if not images:
        raise InputError("validation set is empty")
    cells = []
    for params in spec.cells():
        config = replace(spec.base, **params)
        records = evaluate_cell(model, images, labels, spec.method, config, image_ids)
        cells.append(summarize_cell(params, records, spec.success_floor))
    viable = [i for i, c in enumerate(cells) if c.viable]
    if not viable:
        raise InputError(
            f"no viable configuration: no cell reached success rate {spec.success_floor}"
        )
    best = max(viable, key=lambda i: cells[i].objective)
    return SweepResult(method=spec.method, cells=cells, best_index=best)


def save_sweep_csv(result: SweepResult, path):
    """One row per cell; parameter columns come before the aggregates."""
    param_names = sorted({name for cell in result.cells for name in cell.params})
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["schema=1"])
        writer.writerow(["method", *param_names, "success_rate", "mean_psnr",
                         "mean_ssim", "mean_iterations", "objective", "viable", "best"])
        for i, cell in enumerate(result.cells):
            writer.writerow([
                result.method,
                *[repr(cell.params.get(n, "")) for n in param_names],
                repr(cell.success_rate), repr(cell.mean_psnr), repr(cell.mean_ssim),
                repr(cell.mean_iterations), repr(cell.objective),
                int(cell.viable), int(i == result.best_index),
            ])


def save_sweep_json(result: SweepResult, path):
    payload = {
        "method": result.method,
        "best_index": result.best_index,
        "cells": [
            {
                "params": cell.params,
                "success_rate": cell.success_rate,
                "mean_psnr": cell.mean_psnr,
                "mean_ssim": cell.mean_ssim,
                "mean_iterations": cell.mean_iterations,
                "objective": cell.objective,
                "viable": cell.viable,
                "per_image": cell.per_image,
            }
            for cell in result.cells
        ],
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
