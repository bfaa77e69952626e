"""Command-line entry point: train, eval, gradcheck, denoise, products.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
divergence or failed gradient check.  Every run writes ``manifest.json``
into its output directory; passing that manifest back as ``--config``
repeats the run exactly.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .bilinear import BUILTIN_KINDS, builtin_product, get_product, load_product_json, parse_builtin_name, registered_products
from .io import FormatError, load_checkpoint, read_tensor, save_checkpoint, write_history, write_timing
from .network import forward, get_activation, init_network, mse_loss, predict
from .tasks import DenoiseConfig, run_denoise_experiment
from .train import TrainConfig, TrainingDiverged, backward, grad_check, train

log = logging.getLogger("abipnn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
GRADCHECK_THRESHOLD = 1e-4
MANIFEST_VERSION = 1
SYNTHETIC_TASKS = ("one_sample", "teacher")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class ModelConfig:
    topology: list[int] = field(default_factory=lambda: [3, 6, 2])
    product: str = "circular"
    dim: int | None = 3
    product_file: str | None = None  # JSON structure tensor registered before lookup
    hidden_activation: str = "sigmoid"
    output_activation: str = "sigmoid"
    init_seed: int = 0


@dataclass
class DataConfig:
    task: str | None = "one_sample"  # synthetic task, or None to read ABTN files
    n_samples: int = 1
    seed: int = 0
    inputs: str | None = None  # ABTN (S, R, N)
    targets: str | None = None  # ABTN (S, G, N)
    val_inputs: str | None = None
    val_targets: str | None = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        extra = set(d) - {"model", "data", "train"}
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        return cls(
            _build(ModelConfig, d.get("model", {})),
            _build(DataConfig, d.get("data", {})),
            _build(TrainConfig, d.get("train", {})),
        )


def _build(kind, values: dict):
    names = {f.name for f in fields(kind)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
    try:
        return kind(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{kind.__name__}: {e}") from e


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        *path, leaf = key.split(".")
        node = cfg
        for part in path:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {part} is not a section")
        node[leaf] = _parse_value(value)
    return cfg


def load_config(path: str | None, overrides: list[str]) -> dict:
    """Read a config or manifest JSON and apply overrides; manifests yield their resolved config."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"config not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        if "manifest_version" in raw:
            raw = raw["config"]
    return apply_overrides(raw, overrides)


def _versions() -> dict:
    return {"abipnn": __version__, "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(out: Path, command: str, config: dict, seed: int, threads: int, results: dict) -> None:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": config,
        "seed": seed,
        "threads": threads,
        "versions": _versions(),
        "results": results,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

def _resolve_product(m: ModelConfig):
    if m.product_file:
        try:
            return load_product_json(m.product_file)
        except FileNotFoundError as e:
            raise DataError(m.product_file) from e
    try:
        return get_product(m.product, m.dim)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"product {m.product!r}: {e}") from e


def _read(path: str) -> np.ndarray:
    try:
        return read_tensor(path)
    except FileNotFoundError as e:
        raise DataError(path) from e
    except FormatError as e:
        raise DataError(f"{path}: {e}") from e


def load_dataset(cfg: RunConfig, dim: int):
    """Return ``(inputs, targets, validation_or_None)`` for a run config."""
    d, topo = cfg.data, cfg.model.topology
    if d.task is not None:
        if d.task not in SYNTHETIC_TASKS:
            raise ConfigError(f"unknown task {d.task!r}; expected one of {SYNTHETIC_TASKS}")
        rng = np.random.default_rng(d.seed)
        x = rng.uniform(-1.0, 1.0, size=(d.n_samples, topo[0], dim))
        if d.task == "one_sample":
            if d.n_samples != 1:
                raise ConfigError("one_sample task needs n_samples=1")
            y = rng.uniform(0.1, 0.9, size=(1, topo[-1], dim))
        else:
            teacher = init_network(topo, builtin_product("circular", dim) if dim > 1 else builtin_product("scalar"), seed=d.seed + 1)
            y = predict(teacher, x)
        return x, y, None
    if not (d.inputs and d.targets):
        raise ConfigError("data needs either a task or inputs and targets paths")
    x, y = _read(d.inputs), _read(d.targets)
    val = None
    if d.val_inputs or d.val_targets:
        if not (d.val_inputs and d.val_targets):
            raise ConfigError("val_inputs and val_targets must be given together")
        val = (_read(d.val_inputs), _read(d.val_targets))
    for name, arr, width in [("inputs", x, topo[0]), ("targets", y, topo[-1])] + (
        [("val_inputs", val[0], topo[0]), ("val_targets", val[1], topo[-1])] if val else []
    ):
        if arr.ndim != 3 or arr.shape[1:] != (width, dim):
            raise DataError(f"{getattr(d, name)}: shape {arr.shape} does not match (S, {width}, {dim})")
    if len(x) != len(y):
        raise DataError(f"{d.targets}: {len(y)} targets for {len(x)} inputs")
    return x, y, val


def _output_dir(args) -> Path:
    out = Path(args.output_dir or os.environ.get("ABIP_OUTPUT_DIR") or "abipnn-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    raw = load_config(args.config, args.set)
    cfg = RunConfig.from_dict(raw)
    prod = _resolve_product(cfg.model)
    try:
        net = init_network(
            cfg.model.topology, prod, cfg.model.hidden_activation, cfg.model.output_activation, seed=cfg.model.init_seed
        )
    except (KeyError, ValueError) as e:
        raise ConfigError(f"model: {e}") from e
    x, y, val = load_dataset(cfg, prod.dim)
    out = _output_dir(args)
    resolved = {"model": asdict(cfg.model), "data": asdict(cfg.data), "train": asdict(cfg.train)}
    try:
        res = train(net, x, y, cfg.train, validation=val)
    except TrainingDiverged as e:
        write_history(out / "history.csv", e.history)
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    save_checkpoint(out / "checkpoint.abip", res.net)
    write_history(out / "history.csv", res.history)
    write_timing(out / "timing.csv", res.history)
    results = {
        "epochs_run": res.epochs_run,
        "best_epoch": res.best_epoch,
        "final_train_mse": mse_loss(predict(res.net, x), y),
        "best_val_mse": res.history[res.best_epoch - 1][2],
        "n_params": res.net.n_params,
        "product": prod.name,
    }
    write_manifest(out, "train", resolved, cfg.train.seed, args.threads, results)
    print(json.dumps(results))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = RunConfig.from_dict(load_config(args.config, args.set))
    out = _output_dir(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.abip"
    _resolve_product(cfg.model)  # registers a custom product if the config names one
    try:
        net = load_checkpoint(
            ckpt, get_activation(cfg.model.hidden_activation), get_activation(cfg.model.output_activation)
        )
    except FileNotFoundError as e:
        raise DataError(str(ckpt)) from e
    except (FormatError, KeyError) as e:
        raise DataError(f"{ckpt}: {e}") from e
    if net.topology != list(cfg.model.topology):
        raise DataError(f"{ckpt}: topology {net.topology} differs from config {cfg.model.topology}")
    x, y, val = load_dataset(cfg, net.dim)
    results = {"checkpoint": str(ckpt), "mse": mse_loss(predict(net, x), y)}
    if val is not None:
        results["val_mse"] = mse_loss(predict(net, val[0]), val[1])
    (out / "eval.json").write_text(json.dumps(results, indent=2) + "\n")
    print(json.dumps(results))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        topology = [int(t) for t in args.topology.split(",")]
        prod = get_product(args.product, args.dim)
        net = init_network(topology, prod, seed=args.seed)
    except (KeyError, ValueError) as e:
        raise ConfigError(str(e)) from e
    rng = np.random.default_rng(args.seed)
    for layer in net.layers:
        layer.biases[:] = rng.normal(0.0, 0.5, size=layer.biases.shape)
    x = rng.uniform(-1.0, 1.0, size=(topology[0], prod.dim))
    t = rng.uniform(0.0, 1.0, size=(topology[-1], prod.dim))
    grads = None
    if args.corrupt_gradient:
        # negative control: perturb one analytic weight gradient
        grads = backward(net, forward(net, x), t)
        grads.d_weights[0].flat[0] += 1.0
    try:
        report = grad_check(net, x, t, grads=grads)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    payload = {"product": prod.name, "topology": topology, "seed": args.seed, **report.as_dict()}
    payload["passed"] = report.max_rel_err < GRADCHECK_THRESHOLD
    print(json.dumps(payload))
    return EXIT_OK if payload["passed"] else EXIT_DIVERGED


def cmd_denoise(args) -> int:
    raw = load_config(args.config, args.set)
    if args.baselines is not None:
        raw["baselines"] = [b for b in args.baselines.split(",") if b]
    try:
        cfg = DenoiseConfig.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    unknown = set(cfg.baselines) - {"dnn_concat", "dnn_parallel"}
    if unknown:
        raise ConfigError(f"unknown baselines: {sorted(unknown)}")
    if cfg.input_path and not Path(cfg.input_path).exists():
        raise DataError(cfg.input_path)
    out = _output_dir(args)
    try:
        report = run_denoise_experiment(cfg, out)
    except FormatError as e:
        raise DataError(f"{cfg.input_path}: {e}") from e
    except (KeyError, ValueError) as e:
        raise ConfigError(str(e)) from e
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    summary = {"psnr_noisy": report["psnr_noisy"], "degenerate": report["degenerate"]}
    summary.update({f"psnr_{k}": v.get("psnr") for k, v in report["methods"].items()})
    write_manifest(out, "denoise", cfg.to_dict(), cfg.train.seed, args.threads, summary)
    print(json.dumps(summary))
    if any(m["diverged"] for m in report["methods"].values()):
        return EXIT_DIVERGED
    return EXIT_OK


def product_rows(dim: int) -> list[dict]:
    seen = set()
    rows = []
    for kind, fixed in BUILTIN_KINDS.items():
        prod = builtin_product(kind, None if fixed else dim)
        seen.add(prod.name)
        rows.append(_describe(prod))
    rows += [_describe(p) for p in registered_products() if p.name not in seen and parse_builtin_name(p.name) is None]
    return rows


def _describe(prod) -> dict:
    ident = prod.identity_element()
    return {
        "name": prod.name,
        "N": prod.dim,
        "commutativity": prod.commutativity(),
        "identity": None if ident is None else f"e{ident + 1}",
    }


def cmd_products(args) -> int:
    if args.product_file:
        try:
            load_product_json(args.product_file)
        except FileNotFoundError as e:
            raise DataError(args.product_file) from e
    rows = product_rows(args.dim)
    if args.json:
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    print(f"{'name':<26}{'N':>4}  {'commutativity':<17}identity")
    for r in rows:
        print(f"{r['name']:<26}{r['N']:>4}  {r['commutativity']:<17}{r['identity'] or 'none'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abipnn", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads (1 keeps runs bit-reproducible)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_args(p, config_required=True):
        p.add_argument("--config", required=config_required, help="config or manifest JSON")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--output-dir", help="defaults to $ABIP_OUTPUT_DIR")

    p = sub.add_parser("train", help="train a network on ABTN data or a synthetic task")
    add_run_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    add_run_args(p)
    p.add_argument("--checkpoint", help="defaults to <output-dir>/checkpoint.abip")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--product", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--topology", required=True, help="comma-separated widths, e.g. 4,8,4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("denoise", help="multispectral patch denoising experiment")
    add_run_args(p)
    p.add_argument("--baselines", help="comma-separated subset of dnn_concat,dnn_parallel (empty for none)")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("products", help="list bilinear products")
    p.add_argument("--dim", type=int, default=4, help="N for the convolution families")
    p.add_argument("--product-file", help="also register and list a custom product JSON")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_products)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
