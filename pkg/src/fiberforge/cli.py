"""``fiberforge`` command line.

Every subcommand resolves its parameters as: command-line flag, then the
``--config`` file (plain ``key=value`` lines, ``#`` comments), then
``FIBERFORGE_SEED`` for the seed, then the built-in default. The resolved
set is written next to the outputs as a manifest in the same ``key=value``
format, so ``fiberforge <command> --config <manifest>`` replays the run.

Exit codes: 0 ok, 2 usage, 3 input data, 4 numeric failure.
"""

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from . import pipelines as pl
from .evaluation import OracleMeansModel, evaluate
from .neuralnet import ModelFormatError, NonFiniteLossError
from .reports import emit_reports, loss_csv, loss_svg
from .synthdata import CsvFormatError, FiberFeatures, ManufacturingParams, generate_dataset, read_csv, split_dataset, write_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_SEED = 42
SEED_ENV = "FIBERFORGE_SEED"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _positive(kind):
    def check(v):
        if not v > 0:
            raise ValueError("must be positive")
        return v
    return lambda s: check(kind(s))


def _seed(s):
    v = int(s)
    if not 0 <= v < 2 ** 64:
        raise ValueError("must be an unsigned 64-bit integer")
    return v


def _fraction(s):
    v = float(s)
    if not 0 < v < 1:
        raise ValueError("must be in (0, 1)")
    return v


def _task(s):
    if s not in pl.DIRECTIONS:
        raise ValueError(f"must be one of {', '.join(pl.DIRECTIONS)}")
    return s


def _sizes(s):
    out = set()
    for part in str(s).split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-", 1))
            out.update(range(lo, hi + 1))
        elif part:
            out.add(int(part))
    if not out or min(out) < 1:
        raise ValueError("needs batch sizes >= 1, e.g. 1-20 or 5,10,20")
    return ",".join(str(v) for v in sorted(out))


def _flag(s):
    if s in (True, False):
        return s
    if str(s).lower() in ("1", "true", "yes"):
        return True
    if str(s).lower() in ("0", "false", "no", ""):
        return False
    raise ValueError("must be true or false")


_INT = _positive(int)
_FLOAT = _positive(float)
_REQUIRED = object()

# command -> {parameter: (parser, default)}; a default of None means optional
PARAMS = {
    "synth": {"per_cell": (_INT, 200), "seed": (_seed, DEFAULT_SEED), "out": (str, _REQUIRED)},
    "train": {
        "task": (_task, "predict"), "data": (str, _REQUIRED), "split_n": (_INT, 479), "batch": (_INT, 20),
        "epochs": (_INT, 32), "lr": (_FLOAT, 0.001), "val_fraction": (_fraction, pl.VAL_FRACTION),
        "seed": (_seed, DEFAULT_SEED), "model_out": (str, _REQUIRED),
    },
    "sweep": {
        "task": (_task, "predict"), "data": (str, _REQUIRED), "split_n": (_INT, 479), "sizes": (_sizes, "1-20"),
        "epochs": (_INT, 32), "lr": (_FLOAT, 0.001), "val_fraction": (_fraction, pl.VAL_FRACTION),
        "seed": (_seed, DEFAULT_SEED), "workers": (_INT, 1), "out_dir": (str, _REQUIRED),
    },
    "infer": {
        "model": (str, _REQUIRED), "sheath": (float, None), "core": (float, None), "bath": (float, None),
        "length": (float, None), "width": (float, None), "porosity": (float, None), "modulus": (float, None),
    },
    "eval": {
        "model": (str, None), "holdout": (str, _REQUIRED), "out": (str, _REQUIRED),
        "oracle_means": (_flag, False), "task": (_task, None),
    },
}

HELP = {
    "synth": "generate a synthetic dataset CSV",
    "train": "train one predict or design model",
    "sweep": "train and evaluate one model per mini-batch size",
    "infer": "run a trained model on one input",
    "eval": "percentage errors of a model on a holdout CSV",
}


def read_config(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def resolve(command: str, flags: dict) -> dict:
    params = PARAMS[command]
    file_cfg = read_config(flags["config"]) if flags.get("config") else {}
    if "command" in file_cfg:
        if file_cfg.pop("command") != command:
            raise UsageError(f"config {flags['config']} was written for a different command")
    unknown = sorted(set(file_cfg) - set(params))
    if unknown:
        raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    resolved = {}
    for name, (parse, default) in params.items():
        if flags.get(name) is not None:
            raw, origin = flags[name], f"--{name.replace('_', '-')}"
        elif name in file_cfg:
            raw, origin = file_cfg[name], f"config key {name}"
        elif name == "seed" and os.environ.get(SEED_ENV):
            raw, origin = os.environ[SEED_ENV], SEED_ENV
        elif default is _REQUIRED:
            raise UsageError(f"--{name.replace('_', '-')} is required")
        elif default is None:
            resolved[name] = None
            continue
        else:
            raw, origin = default, "default"
        try:
            resolved[name] = parse(raw)
        except ValueError as exc:
            raise UsageError(f"{origin}: invalid value {raw!r} ({exc})") from None
    return resolved


def manifest_text(command: str, cfg: dict) -> str:
    lines = [f"# fiberforge {__version__}", f"command={command}"]
    for k, v in cfg.items():
        if v is not None:
            lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _load_data(path):
    try:
        return read_csv(path)
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _load_model(path):
    try:
        return pl.TaskModel.load(path)
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _split(cfg):
    ds = _load_data(cfg["data"])
    if not cfg["split_n"] < len(ds):
        raise DataError(f"--split-n {cfg['split_n']} must be smaller than the {len(ds)} records in {cfg['data']}")
    return split_dataset(ds, cfg["split_n"], cfg["seed"])


def _net_config(cfg, batch):
    return pl.default_config(cfg["task"], batch_size=batch, epochs=cfg["epochs"], learning_rate=cfg["lr"], seed=cfg["seed"])


def cmd_synth(cfg):
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(cfg["per_cell"], cfg["seed"])
    write_csv(ds, out)
    _sibling(out, ".manifest.cfg").write_text(manifest_text("synth", cfg), encoding="utf-8")
    print(f"wrote {len(ds)} records to {out}")


def cmd_train(cfg):
    model_set, holdout = _split(cfg)
    out = Path(cfg["model_out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    m = pl.train_task(cfg["task"], model_set, _net_config(cfg, cfg["batch"]), cfg["val_fraction"])
    m.save(out)
    _sibling(out, ".loss.csv").write_text(loss_csv({cfg["batch"]: m.curve}), encoding="utf-8")
    _sibling(out, ".loss.svg").write_text(loss_svg(m.curve, f"{cfg['task']}, batch size {cfg['batch']}"), encoding="utf-8")
    write_csv(holdout, _sibling(out, ".holdout.csv"))
    _sibling(out, ".manifest.cfg").write_text(manifest_text("train", cfg), encoding="utf-8")
    print(f"{cfg['task']} model: final training loss {m.curve.training_loss[-1]:.6g}, "
          f"validation loss {m.curve.validation_loss[-1]:.6g} -> {out}")


def cmd_sweep(cfg):
    model_set, holdout = _split(cfg)
    out = Path(cfg["out_dir"])
    (out / "models").mkdir(parents=True, exist_ok=True)
    sizes = [int(s) for s in cfg["sizes"].split(",")]
    report = pl.sweep_batch_sizes(cfg["task"], model_set, holdout, _net_config(cfg, 20), sizes,
                                  workers=cfg["workers"], val_fraction=cfg["val_fraction"])
    for e in report:
        e.model.save(out / "models" / f"bs{e.batch_size:02d}.json")
    write_csv(holdout, out / "holdout.csv")
    emit_reports(report, out)
    (out / "manifest.cfg").write_text(manifest_text("sweep", cfg), encoding="utf-8")
    for e in report:
        qs = e.report.quantities()
        summary = ", ".join(f"{q} {e.report.overall_mape(q):.2f}%" for q in qs)
        print(f"batch {e.batch_size:2d}: {summary}")


def cmd_infer(cfg):
    m = _load_model(cfg["model"])
    predict_keys, design_keys = ("sheath", "core", "bath"), ("length", "width", "porosity", "modulus")
    expected = predict_keys if m.direction == pl.PREDICT else design_keys
    given = {k for k in predict_keys + design_keys if cfg[k] is not None}
    if given != set(expected):
        raise UsageError(
            f"a {m.direction} model takes exactly " + " ".join(f"--{k}" for k in expected)
            + (f" (got {' '.join('--' + k for k in sorted(given))})" if given else "")
        )
    try:
        if m.direction == pl.PREDICT:
            f = pl.predict_features(m, ManufacturingParams(cfg["sheath"], cfg["core"], cfg["bath"]))
            print(f"length_um={f.length!r}\nwidth_um={f.width!r}\nporosity_pct={f.porosity!r}\nyoungs_mpa={f.youngs_modulus!r}")
        else:
            r = pl.design_params(m, FiberFeatures(cfg["length"], cfg["width"], cfg["porosity"], cfg["modulus"]))
            print(f"sheath_ul_min={r.raw[0]!r}\ncore_ul_min={r.raw[1]!r}\nbath_pct={r.params.bath_conc:g}\nbath_raw={r.raw[2]!r}")
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_eval(cfg):
    holdout = _load_data(cfg["holdout"])
    if not len(holdout):
        raise DataError(f"holdout {cfg['holdout']} has no records")
    batch_size = None
    if cfg["oracle_means"]:
        task = cfg["task"]
        if task is None and cfg["model"]:
            task = _load_model(cfg["model"]).direction
        if task is None:
            raise UsageError("--oracle-means needs --task or --model to pick a direction")
        m = OracleMeansModel(task, holdout)
    else:
        if not cfg["model"]:
            raise UsageError("--model is required unless --oracle-means is given")
        m = _load_model(cfg["model"])
        batch_size = m.config.batch_size
    try:
        report = evaluate(m, holdout, batch_size=batch_size)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = Path(cfg["out"])
    emit_reports(report, out)
    (out / "manifest.cfg").write_text(manifest_text("eval", cfg), encoding="utf-8")
    for q in report.quantities():
        print(f"{q}: overall mean absolute error {report.overall_mape(q):.3f}%")
    if report.confusion is not None:
        print(f"bath accuracy: {report.bath_accuracy():.4f}")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "sweep": cmd_sweep, "infer": cmd_infer, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fiberforge", description="Microfiber predictive/design network workflow.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, params in PARAMS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="key=value file; flags take precedence")
        for key, (parse, default) in params.items():
            flag = "--" + key.replace("_", "-")
            if parse is _flag:
                p.add_argument(flag, action="store_const", const=True, default=None)
                continue
            shown = "required" if default is _REQUIRED else f"default {default}"
            p.add_argument(flag, default=None, help=f"({shown})")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse usage errors, --help, --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    flags = vars(args)
    try:
        cfg = resolve(args.command, flags)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"fiberforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CsvFormatError, ModelFormatError) as exc:
        print(f"fiberforge {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"fiberforge {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
