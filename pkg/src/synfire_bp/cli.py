"""Command-line driver.

Subcommands: ``train``, ``eval``, ``lockstep``, ``trace``, ``export-net``.
Settings come from defaults, then an optional ``--config`` file of
``key = value`` lines, then explicit flags.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, fields
from pathlib import Path

from synfire_bp import circuit, dataio
from synfire_bp.harness import (
    Checkpoint,
    RunConfig,
    evaluate,
    initial_checkpoint,
    lockstep,
    read_config_file,
    train,
    trace_rows,
    write_trace,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _dims(text: str):
    parts = text.replace("x", ",").split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"dims must look like 100,300,10, got {text!r}")
    return tuple(int(p) for p in parts)


def _add_run_flags(p: argparse.ArgumentParser):
    # defaults are None so that only flags actually given override the config file
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--dims", type=_dims, help="n_in,n_hid,n_out (default 100,300,10)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init", choices=("gaussian-fan", "glorot-uniform"))
    p.add_argument("--mode", choices=("snn", "oracle", "lockstep"))
    p.add_argument("--learning", type=_bool, help="on/off")
    p.add_argument("--data-dir", help="directory with the MNIST IDX files")
    p.add_argument("--output-dir")
    p.add_argument("--trace-verbosity", type=int, help="0: data layers only, 1: include gating chain")
    p.add_argument("--train-limit", type=int, help="use only the first N training samples")
    p.add_argument("--test-limit", type=int, help="use only the first N test samples")
    p.add_argument("--inference-only", type=_bool)
    p.add_argument("--checkpoint", help="start from (or evaluate) this checkpoint")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synfire-bp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and write checkpoint.bin + metrics.json")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="test accuracy and confusion counts of a checkpoint")
    _add_run_flags(p)

    p = sub.add_parser("lockstep", help="compare circuit and oracle sample by sample")
    _add_run_flags(p)
    p.add_argument("--samples", type=int, default=1000)

    p = sub.add_parser("trace", help="export spike rows frame,step,layer_name,neuron_index")
    _add_run_flags(p)
    p.add_argument("--sample-ids", default="0", help="comma-separated training sample indices")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--out", help="CSV path (default: <output-dir>/trace.csv)")

    p = sub.add_parser("export-net", help="describe the built circuit; optionally dump weights as text")
    _add_run_flags(p)
    p.add_argument("--out", help="file for the description (default: stdout)")
    p.add_argument("--weights", help="also write the text export of the weights here")
    return parser


def config_from_args(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


def _datasets(cfg: RunConfig, need_train: bool = True):
    d = dataio.find_mnist(cfg.data_dir)
    train_ds = dataio.load_mnist(d, "train", cfg.geometry).subset(cfg.train_limit) if need_train else None
    test_ds = dataio.load_mnist(d, "test", cfg.geometry).subset(cfg.test_limit)
    return train_ds, test_ds


def cmd_train(cfg: RunConfig) -> int:
    train_ds, test_ds = _datasets(cfg)
    metrics, ck = train(cfg, train_ds, test_ds, log=print)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ck.save(out / "checkpoint.bin")
    (out / "metrics.json").write_text(metrics.to_json())
    if metrics.divergence:
        d = metrics.divergence
        print(f"lockstep divergence: sample {d['sample']} step {d['step']} layer {d['layer']} "
              f"index {d['index']} {d['detail']}")
        return EXIT_DIVERGED
    print(f"wrote {out / 'checkpoint.bin'} and {out / 'metrics.json'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    _, test_ds = _datasets(cfg, need_train=False)
    ck = initial_checkpoint(cfg)
    res = evaluate(ck, test_ds, "snn" if cfg.mode == "snn" else "oracle")
    print(f"accuracy {res.accuracy:.4f} over {len(test_ds)} samples, E {res.mse:.4f}")
    print("spikes/neuron/inference " + " ".join(f"{k}={v:.4f}" for k, v in res.spikes_per_neuron.items()))
    print("confusion (rows: label, cols: prediction 0..9, none)")
    for label, row in enumerate(res.confusion):
        print(f"{label:2d} " + " ".join(f"{int(c):5d}" for c in row))
    return EXIT_OK


def cmd_lockstep(cfg: RunConfig, n_samples: int) -> int:
    train_ds, _ = _datasets(cfg, need_train=True)
    report = lockstep(initial_checkpoint(cfg), train_ds.images, train_ds.labels, n_samples)
    print(report)
    return EXIT_OK if report.clean else EXIT_DIVERGED


def cmd_trace(cfg: RunConfig, sample_ids, split: str, out) -> int:
    d = dataio.find_mnist(cfg.data_dir)
    ds = dataio.load_mnist(d, split, cfg.geometry)
    for s in sample_ids:
        if not 0 <= s < len(ds):
            raise IndexError(f"sample id {s} outside [0, {len(ds)})")
    rows, _ = trace_rows(initial_checkpoint(cfg), ds.images, ds.labels, sample_ids,
                         learning_on=cfg.learning, include_chain=cfg.trace_verbosity >= 1,
                         inference_only=cfg.inference_only)
    path = Path(out) if out else Path(cfg.output_dir) / "trace.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_trace(path, rows)
    print(f"wrote {len(rows)} spike rows to {path}")
    return EXIT_OK


def cmd_export_net(cfg: RunConfig, out, weights) -> int:
    ck = initial_checkpoint(cfg)
    net = circuit.build(*cfg.dims, ck.w1, ck.w2, inference_only=cfg.inference_only)
    text = circuit.describe(net)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    if weights:
        Path(weights).write_text(ck.to_text())
    return EXIT_OK


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "lockstep":
            return cmd_lockstep(cfg, args.samples)
        if args.command == "trace":
            ids = [int(s) for s in args.sample_ids.split(",") if s.strip()]
            return cmd_trace(cfg, ids, args.split, args.out)
        return cmd_export_net(cfg, args.out, args.weights)
    except (OSError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


if __name__ == "__main__":
    sys.exit(main())
