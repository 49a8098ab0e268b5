"""Attack campaigns: sample selection, grid expansion, aggregation and reports."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..attack import AttackConfig, AttackOutcome, run_attack
from ..errors import ConfigurationError
from ..numerics import Rng
from ..snn import NetworkModel, forward, predict
from ..store import save_outcome
from .config import AttackGrid, fmt_eps
from .datasets import Split

log = logging.getLogger(__name__)

CLEAN = 21

CELL_COLUMNS = [
    "mode", "gamma", "epsilon", "override_threshold", "cw_c", "attacks", "successes", "success_rate",
    "mean_perturbation_success", "max_perturbation_success", "mean_perturbation_all", "mean_iterations",
    "mean_flip_iterations", "vanished_first_iteration", "excluded_misclassified",
]


@dataclass
class Selection:
    indices: list
    excluded: int
    clean_accuracy: float


def select_samples(model: NetworkModel, split: Split, per_class: int, seed: int) -> Selection:
    """Draw up to ``per_class`` correctly classified samples of each class, in seeded random order.

    Misclassified candidates met along the way are skipped and counted, so
    they never enter a success-rate denominator.
    """
    order = Rng(seed, CLEAN).permutation(len(split))
    want = {int(c): per_class for c in np.unique(split.y)}
    chosen, excluded, seen = [], 0, 0
    for i in order:
        i = int(i)
        c = int(split.y[i])
        if want.get(c, 0) <= 0:
            continue
        seen += 1
        x = split.spikes(i, model.T, Rng(seed, CLEAN).derive(i))
        if predict(forward(model, x)[0]) == c:
            chosen.append(i)
            want[c] -= 1
        else:
            excluded += 1
        if not any(want.values()):
            break
    acc = (seen - excluded) / seen if seen else 0.0
    return Selection(sorted(chosen), excluded, acc)


def cell_key(cell) -> str:
    mode, gamma, eps, ov, c = cell
    return f"{mode}_g{gamma!r}_e{fmt_eps(eps)}_t{'none' if ov is None else repr(ov)}_c{c!r}"


def _attack_config(cell, grid: AttackGrid, model: NetworkModel, input_kind: str, target) -> AttackConfig:
    mode, gamma, eps, ov, c = cell
    return AttackConfig(
        mode=mode, target=target, max_iter=grid.max_iter, p=grid.p,
        epsilon=math.inf if eps is None else eps, eta=grid.eta, gamma=gamma, cw_c=c,
        threshold_override=None if ov is None else (model.penultimate_index, ov),
        input_kind=input_kind, seed=grid.seed, loss_kind=grid.loss,
    )


_WORKER = {}


def _init_worker(model, split):
    _WORKER["model"] = model
    _WORKER["split"] = split


def _run_job(job):
    model, split = _WORKER["model"], _WORKER["split"]
    cfg, i = job
    rng = Rng(cfg.seed).derive(i, (cfg.target + 1) if cfg.target is not None else 0)
    return run_attack(model, split.x[i], int(split.y[i]), cfg, rng=rng)


def run_campaign(model: NetworkModel, split: Split, grid: AttackGrid, out_dir=None, model_path=None) -> dict:
    """Attack every (cell, sample, target) combination and aggregate per cell."""
    cells = grid.cells()
    if not cells:
        raise ConfigurationError("attack grid is empty")
    selections = {}
    jobs = []
    for cell in cells:
        mode = cell[0]
        per_class = grid.samples_per_class if mode == "untargeted" else grid.targeted_per_class
        if (mode, per_class) not in selections:
            selections[(mode, per_class)] = select_samples(model, split, per_class, grid.seed)
        sel = selections[(mode, per_class)]
        for i in sel.indices:
            targets = [None] if mode == "untargeted" else [t for t in range(model.num_classes) if t != split.y[i]]
            for tgt in targets:
                jobs.append((cell, i, tgt))

    configs = [(_attack_config(cell, grid, model, split.kind, tgt), i) for cell, i, tgt in jobs]
    log.info("running %d attacks over %d grid cells", len(jobs), len(cells))
    if grid.workers > 1:
        with ProcessPoolExecutor(grid.workers, initializer=_init_worker, initargs=(model, split)) as pool:
            outcomes = list(pool.map(_run_job, configs, chunksize=4))
    else:
        _init_worker(model, split)
        outcomes = [_run_job(job) for job in configs]

    by_cell = {}
    for (cell, i, tgt), out in zip(jobs, outcomes):
        by_cell.setdefault(cell, []).append((i, tgt, out))
        if out_dir is not None and grid.save_outcomes:
            odir = Path(out_dir) / "outcomes"
            odir.mkdir(parents=True, exist_ok=True)
            name = f"{cell_key(cell)}_s{i}_t{'u' if tgt is None else tgt}"
            save_outcome(out, odir / name, original=split.x[i], extra={
                "model": str(Path(model_path).resolve()) if model_path else None, "sample": i, "cell": cell_key(cell)})

    rows, trajectories = [], {}
    for cell in sorted(cells, key=_cell_order):
        mode = cell[0]
        per_class = grid.samples_per_class if mode == "untargeted" else grid.targeted_per_class
        entries = by_cell.get(cell, [])
        row = summarize_cell(cell, [o for _, _, o in entries])
        row["excluded_misclassified"] = selections[(mode, per_class)].excluded
        rows.append(row)
        trajectories[cell_key(cell)] = penultimate_trajectory([o for _, _, o in entries])

    acc_loss = []
    for row in rows:
        if row["mode"] == "untargeted":
            sel = selections[("untargeted", grid.samples_per_class)]
            acc_loss.append({"epsilon": row["epsilon"], "gamma": row["gamma"],
                             "override_threshold": row["override_threshold"], "cw_c": row["cw_c"],
                             "accuracy_loss": sel.clean_accuracy * row["success_rate"]})
    report = {"cells": rows, "penultimate_trajectories": trajectories, "accuracy_loss": acc_loss,
              "clean_accuracy": {f"{m}/{n}": s.clean_accuracy for (m, n), s in sorted(selections.items())}}
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _cell_order(cell):
    mode, gamma, eps, ov, c = cell
    return (mode, gamma, eps is None, eps or 0.0, ov is not None, ov or 0.0, c)


def summarize_cell(cell, outcomes: list) -> dict:
    mode, gamma, eps, ov, c = cell
    n = len(outcomes)
    succ = [o for o in outcomes if o.success]
    ps = [o.perturbation for o in succ]
    return {
        "mode": mode, "gamma": gamma, "epsilon": fmt_eps(eps), "override_threshold": "none" if ov is None else ov,
        "cw_c": c, "attacks": n, "successes": len(succ), "success_rate": len(succ) / n if n else 0.0,
        "mean_perturbation_success": float(np.mean(ps)) if ps else 0.0,
        "max_perturbation_success": float(np.max(ps)) if ps else 0.0,
        "mean_perturbation_all": float(np.mean([o.perturbation for o in outcomes])) if n else 0.0,
        "mean_iterations": float(np.mean([o.iterations_used for o in outcomes])) if n else 0.0,
        "mean_flip_iterations": float(np.mean([o.flip_iterations for o in outcomes])) if n else 0.0,
        "vanished_first_iteration": sum(1 for o in outcomes if o.first_vanished),
    }


def penultimate_trajectory(outcomes: list[AttackOutcome]) -> list:
    """Mean penultimate-layer spike count at each iteration, over attacks still running."""
    longest = max((len(o.trace) for o in outcomes), default=0)
    traj = []
    for k in range(longest):
        vals = [o.trace[k].penultimate_spikes for o in outcomes if len(o.trace) > k]
        traj.append(float(np.mean(vals)))
    return traj


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def rows_to_csv(rows: list, columns: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def write_report(report: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(rows_to_csv(report["cells"], CELL_COLUMNS))
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    if report["accuracy_loss"]:
        cols = ["epsilon", "gamma", "override_threshold", "cw_c", "accuracy_loss"]
        (out / "accuracy_loss.csv").write_text(rows_to_csv(report["accuracy_loss"], cols))


def sweep_tables(report: dict) -> dict:
    """Project the cell table onto the swept knobs (gamma and penultimate threshold)."""
    cols = ["mode", "success_rate", "mean_perturbation_success", "mean_perturbation_all", "mean_flip_iterations"]
    gamma_rows = [{"gamma": r["gamma"], **{c: r[c] for c in cols}, "override_threshold": r["override_threshold"]}
                  for r in report["cells"]]
    return {
        "sweep_gamma.csv": rows_to_csv(gamma_rows, ["gamma", "override_threshold"] + cols),
        "sweep_threshold.csv": rows_to_csv(gamma_rows, ["override_threshold", "gamma"] + cols),
    }
