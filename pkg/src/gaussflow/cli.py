"""Command-line interface: ``gaussflow <command> --key value ...``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure (including a failed gradient check), 4 checkpoint error.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import checkpoint, data as datamod, eval_kl, gradcheck, rbig
from ._backend import NAME as BACKEND
from .config import FlowConfig, TrainConfig, get_preset
from .errors import CheckpointError, ContractError, DomainError, NumericError, ParseError
from .flow import GaussianizationFlow
from .training import evaluate, mean_nll, train

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CHECKPOINT = 1, 2, 3, 4
DEFAULT_SPLIT = (0.8, 0.1, 0.1)


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _fractions(text):
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("split needs three comma-separated fractions")
    return parts


# ---------------------------------------------------------------- config resolution

_FLOW_FLAGS = {"layers": "n_layers", "anchors": "n_anchors", "reflections": "n_reflections",
               "rotation": "rotation", "patch_side": "patch_side", "image_side": "image_side"}
_TRAIN_FLAGS = {"lr": "learning_rate", "epochs": "epochs", "batch_size": "batch_size",
                "val_fraction": "val_fraction", "log_every": "log_every", "workers": "workers",
                "adam_beta1": "adam_beta1", "adam_beta2": "adam_beta2", "adam_eps": "adam_eps"}
_DATA_FLAGS = ("toy", "n", "data", "split", "normalize", "stretch", "dequantize")


def _add_data_args(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--toy", choices=datamod.TOY_NAMES)
    g.add_argument("--n", type=int, help="rows to generate for --toy")
    g.add_argument("--data", help="CSV file of rows")
    g.add_argument("--split", type=_fractions, help="train,val,test fractions")
    g.add_argument("--normalize", type=_bool, help="standardize on the train split")
    g.add_argument("--stretch", choices=("cubic", "affine"))
    g.add_argument("--dequantize", type=int, metavar="LEVELS",
                   help="treat CSV values as integer pixels with this many levels")


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--preset")
    g.add_argument("--layers", type=int)
    g.add_argument("--anchors", type=int)
    g.add_argument("--reflections", type=int)
    g.add_argument("--rotation", choices=("householder", "patch"))
    g.add_argument("--patch-side", type=int)
    g.add_argument("--image-side", type=int)
    t = p.add_argument_group("training")
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--val-fraction", type=float)
    t.add_argument("--log-every", type=int)
    t.add_argument("--adam-beta1", type=float)
    t.add_argument("--adam-beta2", type=float)
    t.add_argument("--adam-eps", type=float)


def _read_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    allowed = {"seed", "preset", "data", "flow", "train", "out", "workers"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return doc


def _check_keys(section, given, cls):
    unknown = set(given) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {section} keys {sorted(unknown)}")


def resolve_seed(args, file_cfg):
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in file_cfg:
        return int(file_cfg["seed"])
    env = os.environ.get("GF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"GF_SEED must be an integer, got {env!r}") from None
    return 0


def resolve_data_spec(args, file_cfg):
    spec = {"toy": None, "n": 10_000, "data": None, "split": list(DEFAULT_SPLIT),
            "normalize": None, "stretch": None, "dequantize": None}
    file_data = file_cfg.get("data") or {}
    unknown = set(file_data) - set(spec)
    if unknown:
        raise ConfigError(f"unknown data keys {sorted(unknown)}")
    spec.update(file_data)
    for key in _DATA_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            spec[key] = list(val) if key == "split" else val
    if spec["toy"] and spec["data"]:
        raise ConfigError("give either a toy dataset or a CSV path, not both")
    if not spec["toy"] and not spec["data"]:
        raise ConfigError("no dataset: pass --toy NAME or --data PATH")
    if spec["normalize"] is None:
        spec["normalize"] = bool(spec["data"]) and not spec["dequantize"]
    return spec


def resolve_run_config(args):
    """Preset values, overridden by the config file, overridden by flags."""
    file_cfg = _read_config_file(getattr(args, "config", None))
    preset_name = args.preset or file_cfg.get("preset") or "toy2d"
    try:
        preset = get_preset(preset_name)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    flow = asdict(preset.flow)
    tr = asdict(preset.train)
    _check_keys("flow", file_cfg.get("flow") or {}, FlowConfig)
    _check_keys("train", file_cfg.get("train") or {}, TrainConfig)
    flow.update(file_cfg.get("flow") or {})
    tr.update(file_cfg.get("train") or {})
    for flag, key in _FLOW_FLAGS.items():
        if getattr(args, flag, None) is not None:
            flow[key] = getattr(args, flag)
    for flag, key in _TRAIN_FLAGS.items():
        if getattr(args, flag, None) is not None:
            tr[key] = getattr(args, flag)
    seed = resolve_seed(args, file_cfg)
    tr["seed"] = seed
    return {
        "preset": preset_name,
        "full_scale": preset.full_scale,
        "seed": seed,
        "data": resolve_data_spec(args, file_cfg),
        "flow": flow,
        "train": tr,
        "out": args.out or file_cfg.get("out") or "runs",
    }


# ---------------------------------------------------------------- datasets

def build_dataset(spec, seed):
    """Materialize a dataset spec; the result depends only on (spec, seed)."""
    rng = np.random.default_rng([seed, 0])
    try:
        if spec["toy"]:
            ds = datamod.gen_toy(spec["toy"], int(spec["n"]), rng)
        else:
            path = spec["data"]
            if not Path(path).is_file():
                raise DataError(f"dataset file not found: {path}")
            ds = datamod.load_csv(path)
            if spec["dequantize"]:
                ds = datamod.dequantize_uniform(ds.data, int(spec["dequantize"]), rng)
        ds = datamod.split(ds, spec["split"], rng)
        if spec["normalize"]:
            ds = datamod.normalize(ds)
        if spec["stretch"]:
            ds = datamod.stretch(ds, spec["stretch"])
    except (ParseError, DomainError) as exc:
        raise DataError(str(exc)) from exc
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    return ds


def _dataset_for_eval(args):
    """Dataset from flags, or from the resolved config of ``--run``."""
    if getattr(args, "run", None):
        cfg_path = Path(args.run) / "config.json"
        if not cfg_path.is_file():
            raise ConfigError(f"{cfg_path} not found")
        cfg = json.loads(cfg_path.read_text())
        return build_dataset(cfg["data"], cfg["seed"])
    file_cfg = _read_config_file(getattr(args, "config", None))
    return build_dataset(resolve_data_spec(args, file_cfg), resolve_seed(args, file_cfg))


def _checkpoint_path(args):
    if getattr(args, "checkpoint", None):
        return args.checkpoint
    if getattr(args, "run", None):
        return str(Path(args.run) / "checkpoint.json")
    raise ConfigError("pass --checkpoint PATH or --run DIR")


def _run_dir(out, tag, seed):
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(out) / f"{stamp}-{tag}-seed{seed}"
    path, i = base, 1
    while path.exists():
        path = Path(f"{base}-{i}")
        i += 1
    path.mkdir(parents=True)
    return path


def _write_json(path, obj):
    Path(path).write_text(checkpoint.dumps(obj) + "\n")


# ---------------------------------------------------------------- commands

def cmd_train(args):
    cfg = resolve_run_config(args)
    if args.workers is not None:
        cfg["train"]["workers"] = args.workers
    try:
        flow_cfg = FlowConfig(**cfg["flow"])
        train_cfg = TrainConfig(**cfg["train"])
    except (ContractError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    ds = build_dataset(cfg["data"], cfg["seed"])
    run = _run_dir(cfg["out"], cfg["preset"], cfg["seed"])
    # the resolved config goes to disk before any work starts
    _write_json(run / "config.json", cfg)
    datamod.save_manifest(ds, run / "manifest.json")
    meta = {"preset": cfg["preset"], "seed": cfg["seed"], "init_seed": [cfg["seed"], 2],
            "full_scale": cfg["full_scale"]}
    try:
        flow = GaussianizationFlow.init_data_dependent(
            ds.train, flow_cfg, np.random.default_rng([cfg["seed"], 2]), meta)
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    flow, history = train(flow, ds, train_cfg, run / "metrics.log", run / "timing.log")
    checkpoint.save(flow, run / "checkpoint.json")
    print(f"run directory: {run}")
    if history:
        best = min(h["val_nll"] for h in history)
        print(f"best validation NLL: {best:.6f} nats")
    if "test" in ds.splits and len(ds.splits["test"]):
        print(f"test NLL: {evaluate(flow, ds):.6f} nats")
    return 0


def cmd_eval(args):
    model = checkpoint.load(_checkpoint_path(args))
    ds = _dataset_for_eval(args)
    split_name = args.eval_split
    x = ds.get(split_name) if ds.splits else ds.data
    nats = mean_nll(model, x)
    print(f"nats: {nats:.10g}")
    if ds.dequantization:
        print(f"bpd: {evaluate(model, ds, units='bpd', split=split_name):.10g}")
    if ds.transform is not None:
        corr = datamod.log_abs_jacobian_correction(ds, split_name if ds.splits else None)
        print(f"original-space nats: {nats - corr.mean():.10g}")
    return 0


def cmd_sample(args):
    model = checkpoint.load(_checkpoint_path(args))
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    seed = resolve_seed(args, {})
    x = model.sample(args.n, np.random.default_rng(seed))
    datamod.write_csv(args.output, x, header=[f"x{d}" for d in range(x.shape[1])])
    print(f"wrote {args.n} samples to {args.output}")
    return 0


def cmd_rbig(args):
    file_cfg = _read_config_file(args.config)
    seed = resolve_seed(args, file_cfg)
    spec = resolve_data_spec(args, file_cfg)
    ds = build_dataset(spec, seed)
    trace = []
    dim = ds.dim

    def monitor(it, before, marg, after):
        row = {"iteration": it,
               "jm_before": sum(eval_kl.marginal_kl(before[:, d]) for d in range(dim)),
               "jm_after_marginal": sum(eval_kl.marginal_kl(marg[:, d]) for d in range(dim)),
               "jm_after_rotation": sum(eval_kl.marginal_kl(after[:, d]) for d in range(dim))}
        if dim == 2 and after.shape[0] >= eval_kl.MIN_JOINT:
            row["j_after_rotation"] = eval_kl.total_kl_2d(after)[0]
        trace.append(row)

    try:
        model = rbig.fit(ds.train, args.iters, args.rotation, args.kde_points,
                         np.random.default_rng([seed, 3]), monitor=monitor)
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    model.metadata.update({"seed": seed, "trace": trace})
    run = _run_dir(args.out, "rbig", seed)
    _write_json(run / "config.json", {"seed": seed, "data": spec, "iters": args.iters,
                                      "rotation": args.rotation, "kde_points": args.kde_points})
    datamod.save_manifest(ds, run / "manifest.json")
    checkpoint.save(model, run / "checkpoint.json")
    print(f"run directory: {run}")
    if "test" in ds.splits and len(ds.splits["test"]):
        print(f"test NLL: {mean_nll(model, ds.test):.6f} nats")
    return 0


def cmd_gradcheck(args):
    rng = np.random.default_rng(resolve_seed(args, {}))
    if args.checkpoint:
        flow = checkpoint.load(args.checkpoint)
        if not isinstance(flow, GaussianizationFlow):
            raise ConfigError("gradcheck needs a flow checkpoint")
        x = rng.standard_normal((args.batch, flow.dim))
        results = [gradcheck.check_flow(flow, x, args.coords, rng)]
    else:
        data = rng.standard_normal((max(50, args.anchors), args.dim)) @ \
            rng.standard_normal((args.dim, args.dim))
        flow = GaussianizationFlow.init_data_dependent(
            data, FlowConfig(args.layers, args.anchors), rng)
        results = [gradcheck.check_flow(flow, data[:args.batch], args.coords, rng)]
    worst = max(r.max_rel_error for r in results)
    n = sum(r.n_checked for r in results)
    print(f"checked {n} coordinates, max relative error {worst:.3e} (tolerance {args.tol:g})")
    return 0 if worst <= args.tol else EXIT_NUMERIC


def _density_grid(model, path, size, extent):
    axis = np.linspace(-extent, extent, size)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    logp = model.log_likelihood(pts)
    datamod.write_csv(path, np.column_stack([pts, logp]), header=["x0", "x1", "log_density"])


def cmd_report(args):
    model = checkpoint.load(_checkpoint_path(args))
    ds = _dataset_for_eval(args)
    x = ds.get(args.eval_split) if ds.splits else ds.data
    z, _ = model.transform(x)
    report = eval_kl.gaussianity_report(z)
    text = report.to_json() + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.density_grid:
        if model.dim != 2:
            raise ConfigError("density grids are only written for 2-D models")
        _density_grid(model, args.density_grid, args.grid_size, args.grid_extent)
    return 0


def cmd_toygen(args):
    seed = resolve_seed(args, {})
    try:
        ds = datamod.gen_toy(args.name, args.n, np.random.default_rng(seed))
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    if args.stretch:
        ds = datamod.stretch(ds, args.stretch)
    datamod.write_csv(args.output, ds.data, header=[f"x{d}" for d in range(ds.dim)])
    print(f"wrote {args.n} rows of {args.name} to {args.output}")
    return 0


def build_parser():
    p = _Parser(prog="gaussflow", description="Gaussianization flows and RBIG.")
    p.add_argument("--version", action="version", version=f"%(prog)s (kernels: {BACKEND})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="initialize from data and train a flow")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--workers", type=int)
    _add_data_args(t)
    _add_model_args(t)
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "mean NLL of a checkpoint on a dataset"),
                                 ("report", cmd_report, "Gaussianity diagnostics as JSON")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint")
        e.add_argument("--run", help="run directory; supplies checkpoint and dataset")
        e.add_argument("--config")
        e.add_argument("--seed", type=int)
        e.add_argument("--eval-split", default="test")
        _add_data_args(e)
        if name == "report":
            e.add_argument("--output")
            e.add_argument("--density-grid", help="CSV path for a 2-D log-density grid")
            e.add_argument("--grid-size", type=int, default=101)
            e.add_argument("--grid-extent", type=float, default=4.0)
        e.set_defaults(func=func)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--run")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_sample)

    r = sub.add_parser("rbig", help="fit the RBIG baseline")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default="runs")
    r.add_argument("--iters", type=int, default=5)
    r.add_argument("--rotation", choices=("pca", "random"), default="pca")
    r.add_argument("--kde-points", type=int)
    _add_data_args(r)
    r.set_defaults(func=cmd_rbig)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--checkpoint")
    g.add_argument("--seed", type=int)
    g.add_argument("--dim", type=int, default=3)
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--anchors", type=int, default=5)
    g.add_argument("--batch", type=int, default=7)
    g.add_argument("--coords", type=int, default=300)
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)

    y = sub.add_parser("toygen", help="write a toy dataset to CSV")
    y.add_argument("--name", required=True, choices=datamod.TOY_NAMES)
    y.add_argument("--n", type=int, default=10_000)
    y.add_argument("--seed", type=int)
    y.add_argument("--stretch", choices=("cubic", "affine"))
    y.add_argument("--output", required=True)
    y.set_defaults(func=cmd_toygen)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ParseError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
