"""Command-line entry point: single runs, baselines, ablations, and sweeps.

Two subcommands:

  confew run   --synthetic --tasks 8 --ways 10 --shots 5 --memory 1 --seed 7 --out runs/x
  confew sweep --synthetic --memory-grid 1,2,3 --seeds 0,1,2,3,4,5 --out runs/sweep

A flat key=value config file can seed any flag (`--config`); flags given on
the command line win over the file.  Ablations zero the matching loss weight
instead of skipping code, so ablated runs stay step-for-step comparable with
full runs.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import TaskSequence, generate_synthetic_sequence, load_jsonl
from .errors import ConfigError, ParseError, TrainingError, ValidationError
from .losses import LossWeights
from .trainer import RunConfig, run_experiment

ABLATIONS = ("no-dst", "no-aug", "no-fd", "no-rd", "no-dtr", "no-pd")


def _add_shared_arguments(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH",
                   help="flat key=value file; command-line flags override it")
    data = p.add_argument_group("data")
    data.add_argument("--synthetic", action="store_true",
                      help="generate a synthetic task sequence")
    data.add_argument("--dataset", metavar="PATH",
                      help="load a task sequence from a JSONL file")
    data.add_argument("--tasks", type=int, default=8)
    data.add_argument("--ways", type=int, default=10)
    data.add_argument("--shots", type=int, default=5)
    data.add_argument("--first-task-samples", type=int, default=100)
    data.add_argument("--test-per-relation", type=int, default=20)
    data.add_argument("--cluster-spread", type=float, default=0.3)
    data.add_argument("--vocab-size", type=int, default=None)
    data.add_argument("--data-seed", type=int, default=None,
                      help="generator seed (defaults to --seed)")
    train = p.add_argument_group("training")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--baseline", choices=("finetune", "joint"),
                       help="run a baseline instead of the distillation method")
    train.add_argument("--ablate", action="append", choices=ABLATIONS,
                       default=None, metavar="NAME",
                       help=f"disable a component ({', '.join(ABLATIONS)}); repeatable")
    train.add_argument("--memory", type=int, default=1, help="exemplars per relation")
    train.add_argument("--pseudo", type=int, default=10,
                       help="pseudo samples per relation")
    train.add_argument("--tau", type=float, default=0.95)
    train.add_argument("--temp", type=float, default=0.08)
    train.add_argument("--alpha", type=float, default=0.5)
    train.add_argument("--beta", type=float, default=1.0)
    train.add_argument("--gamma", type=float, default=0.5)
    train.add_argument("--lambda1", type=float, default=1.0)
    train.add_argument("--lambda2", type=float, default=1.0)
    train.add_argument("--epochs-adapt", type=int, default=20)
    train.add_argument("--epochs-sckd", type=int, default=10,
                       help="epochs per distillation phase")
    train.add_argument("--batch-size", type=int, default=16)
    train.add_argument("--grad-accum", type=int, default=4)
    train.add_argument("--eval-batch", type=int, default=64)
    train.add_argument("--lr-encoder", type=float, default=1e-5)
    train.add_argument("--lr-projection", type=float, default=1e-5)
    train.add_argument("--lr-classifier", type=float, default=1e-3)
    train.add_argument("--augment-cap", type=int, default=2)
    model = p.add_argument_group("model")
    model.add_argument("--model-dim", type=int, default=64)
    model.add_argument("--hidden-dim", type=int, default=64)
    model.add_argument("--n-heads", type=int, default=4)
    model.add_argument("--ff-dim", type=int, default=256)
    model.add_argument("--dropout", type=float, default=0.5)
    out = p.add_argument_group("output")
    out.add_argument("--out", metavar="DIR", help="artifact directory")
    out.add_argument("--dump-reps", action="store_true",
                     help="dump final hidden representations to reps.csv")


def _build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="confew",
        description="Continual few-shot relation classification experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="execute a single experiment")
    _add_shared_arguments(run_p)
    sweep_p = sub.add_parser("sweep", help="grid of runs over memory sizes and seeds")
    _add_shared_arguments(sweep_p)
    sweep_p.add_argument("--memory-grid", default=None, metavar="L1,L2,...",
                         help="memory sizes to sweep (default: just --memory)")
    sweep_p.add_argument("--seeds", default=None, metavar="S1,S2,...",
                         help="seeds to sweep (default: just --seed)")
    return parser, {"run": run_p, "sweep": sweep_p}


def _parse_config_file(path: str) -> dict[str, str]:
    text = Path(path).read_text()
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip().replace("-", "_")] = value.strip()
    return pairs


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert_config_value(action: argparse.Action, key: str, value: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        low = value.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"config key {key!r}: expected a boolean, got {value!r}")
    if key == "ablate":
        items = [v.strip() for v in value.split(",") if v.strip()]
        bad = [v for v in items if v not in ABLATIONS]
        if bad:
            raise ConfigError(f"config key 'ablate': unknown components {bad}")
        return items
    if action.choices is not None and value not in action.choices:
        raise ConfigError(
            f"config key {key!r}: {value!r} not one of {sorted(action.choices)}")
    if action.type is not None:
        try:
            return action.type(value)
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {value!r}")
    return value


def _apply_config_file(argv: list[str],
                       subparsers: dict[str, argparse.ArgumentParser]) -> None:
    """First pass: find --config, convert its pairs, install as defaults so
    explicit command-line flags still override them."""
    peek = argparse.ArgumentParser(add_help=False)
    peek.add_argument("--config")
    known, _ = peek.parse_known_args(argv)
    if not known.config:
        return
    pairs = _parse_config_file(known.config)
    all_dests = {a.dest for sp in subparsers.values() for a in sp._actions}
    unknown = sorted(k for k in pairs if k not in all_dests)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    for sp in subparsers.values():
        actions = {a.dest: a for a in sp._actions}
        sp.set_defaults(**{k: _convert_config_value(actions[k], k, v)
                           for k, v in pairs.items() if k in actions})


def _load_sequence(args) -> tuple[TaskSequence, dict]:
    if args.synthetic and args.dataset:
        raise ConfigError("--synthetic and --dataset are mutually exclusive")
    if args.dataset:
        seq = load_jsonl(args.dataset)
        return seq, {"dataset": str(args.dataset)}
    data_seed = args.seed if args.data_seed is None else args.data_seed
    gen = {
        "seed": data_seed,
        "n_tasks": args.tasks,
        "n_ways": args.ways,
        "k_shots": args.shots,
        "first_task_samples": args.first_task_samples,
        "test_per_relation": args.test_per_relation,
        "vocab_size": args.vocab_size,
        "cluster_spread": args.cluster_spread,
    }
    return generate_synthetic_sequence(**gen), {"synthetic": gen}


def _run_config(args, seed: int | None = None, memory: int | None = None) -> RunConfig:
    weights = LossWeights(alpha=args.alpha, beta=args.beta, gamma=args.gamma,
                          lambda1=args.lambda1, lambda2=args.lambda2,
                          temperature=args.temp)
    augment_enabled = True
    for name in args.ablate or []:
        if name == "no-dst":
            weights = replace(weights, lambda2=0.0)
        elif name == "no-aug":
            augment_enabled = False
        elif name == "no-fd":
            weights = replace(weights, alpha=0.0)
        elif name == "no-rd":
            weights = replace(weights, rd_scale=0.0)
        elif name == "no-dtr":
            weights = replace(weights, dtr_scale=0.0)
        elif name == "no-pd":
            weights = replace(weights, gamma=0.0)
    return RunConfig(
        mode=args.baseline or "distill",
        seed=args.seed if seed is None else seed,
        epochs_adapt=args.epochs_adapt,
        epochs_sckd=args.epochs_sckd,
        batch_size=args.batch_size,
        grad_accum=args.grad_accum,
        eval_batch=args.eval_batch,
        lr_encoder=args.lr_encoder,
        lr_projection=args.lr_projection,
        lr_classifier=args.lr_classifier,
        memory_size=args.memory if memory is None else memory,
        pseudo_count=args.pseudo,
        tau=args.tau,
        augment_enabled=augment_enabled,
        augment_cap=args.augment_cap,
        weights=weights,
        model_dim=args.model_dim,
        hidden_dim=args.hidden_dim,
        n_heads=args.n_heads,
        ff_dim=args.ff_dim,
        dropout=args.dropout,
    )


def _cmd_run(args) -> int:
    sequence, provenance = _load_sequence(args)
    config = _run_config(args)
    _, summary = run_experiment(config, sequence, out_dir=args.out,
                                dump_reps=args.dump_reps,
                                manifest_extra={"data": provenance})
    print(f"final average accuracy: {summary['final_accuracy']:.4f}")
    if summary["bwt"] is None:
        print("bwt: n/a (single task)")
    else:
        print(f"bwt: {summary['bwt']:.4f}")
    if args.out:
        print(f"artifacts written to {args.out}")
    return 0


def _int_list(text: str, flag: str) -> list[int]:
    items = [v.strip() for v in text.split(",") if v.strip()]
    try:
        return [int(v) for v in items]
    except ValueError:
        raise ConfigError(f"{flag}: expected comma-separated integers, got {text!r}")


def _cmd_sweep(args) -> int:
    memory_grid = ([args.memory] if args.memory_grid is None
                   else _int_list(args.memory_grid, "--memory-grid"))
    seeds = ([args.seed] if args.seeds is None
             else _int_list(args.seeds, "--seeds"))
    if not memory_grid or not seeds:
        raise ConfigError("sweep grid is empty")
    sequence, provenance = _load_sequence(args)
    out = Path(args.out) if args.out else None
    rows = []
    for memory in memory_grid:
        finals, bwts = [], []
        for seed in seeds:
            config = _run_config(args, seed=seed, memory=memory)
            cell_dir = out / f"L{memory}_seed{seed}" if out else None
            _, summary = run_experiment(config, sequence, out_dir=cell_dir,
                                        dump_reps=args.dump_reps,
                                        manifest_extra={"data": provenance})
            finals.append(summary["final_accuracy"])
            if summary["bwt"] is not None:
                bwts.append(summary["bwt"])
        row = {
            "memory": memory,
            "runs": len(seeds),
            "final_mean": float(np.mean(finals)),
            "final_std": float(np.std(finals)),
            "bwt_mean": float(np.mean(bwts)) if bwts else "",
            "bwt_std": float(np.std(bwts)) if bwts else "",
        }
        rows.append(row)
        print(f"L={memory}: final {row['final_mean']:.4f} "
              f"± {row['final_std']:.4f} over {len(seeds)} seeds")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "sweep.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"aggregate written to {out / 'sweep.csv'}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subparsers = _build_parser()
    try:
        _apply_config_file(argv, subparsers)
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_sweep(args)
    except (ConfigError, ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
