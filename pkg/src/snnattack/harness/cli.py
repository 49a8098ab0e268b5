"""Command-line entry point: ``snnattack {train,attack,sweep,report}``.

Examples:
    snnattack train --config cfg.json --out model.snnm
    snnattack attack --model model.snnm --config cfg.json --out runs/ut --gamma 0.05
    snnattack sweep --model model.snnm --config cfg.json --out runs/sweep --gamma 0.01 0.05 0.2
    snnattack report runs/ut/outcomes
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from ..attack import SUCCESS, perturbation_metric, verify_outcome
from ..errors import ConfigurationError, FormatError, SnnAttackError
from ..store import load_model, load_original, load_outcome, save_model
from .campaign import rows_to_csv, run_campaign, sweep_tables
from .config import ExperimentConfig
from .datasets import load_split
from .training import train_model

log = logging.getLogger("snnattack")

EXIT_CONFIG = 2
EXIT_IO = 3

REPORT_COLUMNS = ["cell", "outcomes", "successes", "success_rate", "mean_perturbation_success", "flagged"]


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    ds, t, a = cfg.dataset, cfg.train, cfg.attack
    for flag, obj, attr in [
        ("dataset", ds, "kind"), ("data_path", ds, "path"), ("train_limit", ds, "train_limit"),
        ("test_limit", ds, "test_limit"), ("network", cfg, "network"),
        ("loss", t, "loss"), ("epochs", t, "epochs"), ("lr", t, "lr"), ("batch_size", t, "batch_size"),
        ("T", t, "T"), ("decay", t, "decay"), ("a", t, "surrogate_width"), ("u_th", t, "u_th"),
        ("mode", a, "modes"), ("gamma", a, "gammas"), ("epsilon", a, "epsilons"),
        ("override_threshold", a, "overrides"), ("cw_c", a, "cw_cs"), ("iter", a, "max_iter"), ("p", a, "p"),
        ("eta", a, "eta"), ("samples_per_class", a, "samples_per_class"),
        ("targeted_per_class", a, "targeted_per_class"), ("attack_loss", a, "loss"), ("workers", a, "workers"),
    ]:
        v = getattr(args, flag, None)
        if v is not None:
            setattr(obj, attr, v)
    if getattr(args, "seed", None) is not None:
        t.seed = args.seed
        a.seed = args.seed
    if getattr(args, "save_outcomes", False):
        a.save_outcomes = True
    return cfg.validate()


def _eps(v: str):
    return None if v.lower() in ("inf", "none") else float(v)


def _override(v: str):
    return None if v.lower() == "none" else float(v)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train = load_split(cfg.dataset, "train", cfg.train.T)
    test = load_split(cfg.dataset, "test", cfg.train.T)
    model, history = train_model(cfg, train, test)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    log_path = out.with_name(out.name + ".log.json")
    log_path.write_text(json.dumps({"config": cfg.to_dict(), "history": history,
                                    "test_accuracy": model.meta["test_accuracy"]}, indent=2))
    print(f"saved {out} (test accuracy {model.meta['test_accuracy']:.4f})")
    return 0


def _campaign(args, sweep: bool) -> int:
    cfg = _load_config(args)
    model = load_model(args.model)
    test = load_split(cfg.dataset, "test", model.T)
    report = run_campaign(model, test, cfg.attack, out_dir=args.out, model_path=args.model)
    out = Path(args.out)
    if sweep:
        for name, text in sweep_tables(report).items():
            (out / name).write_text(text)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    for row in report["cells"]:
        print(f"{row['mode']:<10} gamma={row['gamma']:<5} eps={row['epsilon']:<6} "
              f"u_th'={row['override_threshold']!s:<5} c={row['cw_c']:<4} success={row['success_rate']:.3f} "
              f"pert={row['mean_perturbation_success']:.5f} flips={row['mean_flip_iterations']:.2f}")
    return 0


def cmd_attack(args) -> int:
    return _campaign(args, sweep=False)


def cmd_sweep(args) -> int:
    return _campaign(args, sweep=True)


def build_report(outcome_dir) -> dict:
    """Aggregate saved outcomes, recomputing perturbations and re-verifying successes."""
    root = Path(outcome_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"outcome directory {root} not found")
    models = {}
    groups = {}
    flagged = []
    for meta in sorted(root.glob("*.json")):
        try:
            outcome, doc = load_outcome(meta)
        except (FormatError, KeyError) as exc:
            raise FormatError(f"{meta}: unreadable outcome ({exc})") from exc
        g = groups.setdefault(doc.get("cell") or "all", {"outcomes": 0, "successes": 0, "perts": [], "flagged": 0})
        g["outcomes"] += 1
        if outcome.status != SUCCESS:
            continue
        g["successes"] += 1
        g["perts"].append(outcome.perturbation)
        problems = []
        orig = load_original(meta, doc)
        if orig is not None:
            recomputed = perturbation_metric(outcome.adversarial_example, orig, outcome.config.p)
            if not math.isclose(recomputed, outcome.perturbation, rel_tol=1e-12, abs_tol=1e-15):
                problems.append(f"perturbation {recomputed!r} != stored {outcome.perturbation!r}")
        model_path = doc.get("model")
        if model_path:
            if model_path not in models:
                models[model_path] = load_model(model_path)
            if not verify_outcome(models[model_path], outcome):
                problems.append("success does not re-verify")
        else:
            problems.append("no model recorded; cannot re-verify")
        if problems:
            g["flagged"] += 1
            flagged.append({"file": meta.name, "problems": problems})
    rows = []
    for cell in sorted(groups):
        g = groups[cell]
        rows.append({"cell": cell, "outcomes": g["outcomes"], "successes": g["successes"],
                     "success_rate": g["successes"] / g["outcomes"] if g["outcomes"] else 0.0,
                     "mean_perturbation_success": float(np.mean(g["perts"])) if g["perts"] else 0.0,
                     "flagged": g["flagged"]})
    return {"rows": rows, "flagged": flagged}


def cmd_report(args) -> int:
    report = build_report(args.outcome_dir)
    csv_text = rows_to_csv(report["rows"], REPORT_COLUMNS)
    out = Path(args.out) if args.out else Path(args.outcome_dir) / "summary.csv"
    out.write_text(csv_text)
    if not report["rows"]:
        print("no outcomes found")
    for r in report["rows"]:
        print(f"{r['cell']}: {r['successes']}/{r['outcomes']} successful ({100 * r['success_rate']:.1f}%), "
              f"mean perturbation {r['mean_perturbation_success']:.5f}, flagged {r['flagged']}")
    for f in report["flagged"]:
        print(f"FLAG {f['file']}: {'; '.join(f['problems'])}")
    return 0


def _add_common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--dataset", choices=["mnist", "nmnist", "synthetic"])
    p.add_argument("--data-path")
    p.add_argument("--network", help="layer string, e.g. Input-16C3-AP2-32C3-AP2-128FC-10FC")
    p.add_argument("--train-limit", type=int)
    p.add_argument("--test-limit", type=int)
    p.add_argument("--seed", type=int)


def _add_attack(p):
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", nargs="+", choices=["untargeted", "targeted"])
    p.add_argument("--gamma", nargs="+", type=float)
    p.add_argument("--epsilon", nargs="+", type=_eps, help="per-point bound; 'inf' for none")
    p.add_argument("--override-threshold", nargs="+", type=_override,
                   help="penultimate-layer firing threshold during generation; 'none' keeps the trained one")
    p.add_argument("--cw-c", nargs="+", type=float)
    p.add_argument("--iter", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--targeted-per-class", type=int)
    p.add_argument("--attack-loss", choices=["mse", "ce"])
    p.add_argument("--workers", type=int)
    p.add_argument("--save-outcomes", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snnattack", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an SNN and save it")
    _add_common(p)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--loss", choices=["mse", "ce"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--decay", type=float)
    p.add_argument("--a", type=float, help="surrogate gradient width")
    p.add_argument("--u-th", type=float)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in [("attack", cmd_attack, "run an attack campaign"),
                                 ("sweep", cmd_sweep, "campaign plus gamma/threshold sweep tables")]:
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_attack(p)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="summarize and re-verify saved outcomes")
    p.add_argument("outcome_dir")
    p.add_argument("--out", help="CSV path (default: <outcome_dir>/summary.csv)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SnnAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
