"""Command-line experiment runner.

    rissc train <config.json>
    rissc eval <ckpt> --snr 0,5,10 --data <path> [--dump-dir d]
    rissc sweep <config.json> --axis snr_train|cr
    rissc latency --freq 25e9,400e9 --gaps 10

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import re
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from . import data as data_mod
from .diffraction import fly_latency, wavelength_of
from .metrics import EvalReport, compression_ratio, fmt
from .modem import ModemSpec
from .pipeline import evaluate
from .ris_layers import ModelConfig, build_model
from .train import TrainConfig, TrainingDiverged, fit, load_checkpoint, parse_snr_policy

log = logging.getLogger("rissc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(r'"%s"\s*:' % re.escape(key))
    for i, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return i
    return None


def _fail(text: str, path: str, msg: str):
    key = path.split(".")[-1]
    line = _line_of(text, key)
    where = f"line {line}: " if line else ""
    raise ConfigError(f"{where}{path}: {msg}")


def _fail_in(text: str, section: str, keys, exc: Exception):
    """Point at the first key of ``section`` that the error message names."""
    msg = str(exc)
    for key in sorted(keys, key=len, reverse=True):
        if key in msg:
            _fail(text, f"{section}.{key}", msg)
    _fail(text, section, msg)


def _ratio(value) -> float:
    return float(Fraction(value)) if isinstance(value, str) else float(value)


@dataclass
class RunConfig:
    model: ModelConfig
    tx_grid: tuple[int, int] | None
    model_seed: int
    modem: ModemSpec
    train: TrainConfig
    dataset: str
    train_path: Path
    test_path: Path
    image_size: tuple[int, int] | None
    grayscale: bool
    n_train: int | None
    snr_test: list[float]
    n_images: int | None
    eval_seed: int
    output_dir: Path
    sweep: dict
    raw: dict
    source: Path


def _section(cfg: dict, name: str, text: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        _fail(text, name, "must be an object")
    return sec


def parse_run_config(text: str, base_dir: Path, source: Path | None = None,
                     check_paths: bool = True) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("line 1: top level must be a JSON object")

    m = _section(raw, "model", text)
    cons = m.get("constraints", {})
    try:
        model = ModelConfig(
            layers_per_coder=int(m.get("layers_per_coder", 4)),
            frequency_hz=float(m.get("frequency_hz", 25e9)),
            pitch_over_lambda=float(m.get("pitch_over_lambda", 0.5)),
            gap_over_lambda=float(m.get("gap_over_lambda", 0.5)),
            activation=bool(m.get("activation", True)),
            normalize_kernel=bool(m.get("normalize_kernel", False)),
            init_phase=str(m.get("init_phase", "random")),
            g_min_db=float(cons.get("g_min_db", -22.0)),
            g_max_db=float(cons.get("g_max_db", 13.0)),
            phase_bits=cons.get("phase_bits"),
        )
    except (TypeError, ValueError) as exc:
        _fail_in(text, "model", list(m) + list(cons), exc)
    tx_grid = tuple(m["tx_grid"]) if "tx_grid" in m else None

    md = _section(raw, "modem", text)
    span = md.get("phase_span", [0.0, 3.141592653589793])
    try:
        modem = ModemSpec(str(md.get("mode", "AM")).upper(), float(md.get("a_min", 0.1)),
                          float(md.get("a_max", 1.0)), float(span[0]), float(span[1]))
    except (TypeError, ValueError) as exc:
        _fail_in(text, "modem", list(md), exc)

    t = _section(raw, "train", text)
    try:
        epochs = int(t.get("epochs", 400))
        train = TrainConfig(
            epochs=epochs,
            batch_size=int(t.get("batch_size", 128)),
            lr0=float(t.get("lr0", 0.05)),
            lr_drop_epochs=tuple(int(e) for e in t.get(
                "lr_drop_epochs", [int(epochs * 0.6), int(epochs * 0.8), int(epochs * 0.9)]
                if epochs else [])),
            lr_factor=float(t.get("lr_factor", 0.1)),
            snr_policy=parse_snr_policy(t.get("snr_policy", 19)),
            seed=int(t.get("seed", 0)),
            cr_target=_ratio(t.get("cr_target", "1/6")),
            checkpoint_every=int(t.get("checkpoint_every", 25)),
        )
    except (TypeError, ValueError) as exc:
        _fail_in(text, "train", list(t), exc)

    d = _section(raw, "data", text)
    kind = d.get("kind", "cifar10")
    if kind not in ("cifar10", "images"):
        _fail(text, "data.kind", f"unknown dataset kind {kind!r}")
    if "train_path" not in d:
        _fail(text, "data", "train_path is required")
    train_path = (base_dir / d["train_path"]).resolve()
    test_path = (base_dir / d.get("test_path", d["train_path"])).resolve()
    if check_paths:
        for key, p in (("train_path", train_path), ("test_path", test_path)):
            if not p.exists():
                _fail(text, f"data.{key}", f"path {p} does not exist")
    size = d.get("image_size")

    e = _section(raw, "eval", text)
    snr_test = [float(s) for s in e.get("snr_test", [0, 5, 10, 15, 19, 25])]
    out = base_dir / raw.get("output_dir", "runs/default")
    return RunConfig(
        model=model, tx_grid=tx_grid, model_seed=int(m.get("seed", train.seed)), modem=modem,
        train=train, dataset=kind, train_path=train_path, test_path=test_path,
        image_size=tuple(size) if size else None, grayscale=bool(d.get("grayscale", False)),
        n_train=d.get("n_train"), snr_test=snr_test, n_images=e.get("n_images"),
        eval_seed=int(e.get("seed", 0)), output_dir=out.resolve(),
        sweep=_section(raw, "sweep", text), raw=raw, source=source or base_dir,
    )


def load_run_config(path, check_paths: bool = True) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_run_config(text, p.parent, p, check_paths)


def _load_items(rc: RunConfig, split: str, path: Path, limit: int | None):
    try:
        items = data_mod.load_dataset(path, rc.image_size, rc.grayscale, split=split)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    return items[:limit] if limit else items


def _model_for(rc: RunConfig, items):
    shape = items[0].shape
    return build_model(shape, rc.model, cr=rc.train.cr_target, tx_grid=rc.tx_grid,
                       seed=rc.model_seed, modem=rc.modem)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_train(config_path, out_dir: Path | None = None) -> Path:
    rc = load_run_config(config_path)
    return _train(rc, out_dir or rc.output_dir)


def _train(rc: RunConfig, out_dir: Path) -> Path:
    items = _load_items(rc, "train", rc.train_path, rc.n_train)
    model = _model_for(rc, items)
    log.info("training %d images, %d transmit atoms (CR %.4f)", len(items), model.tx_atoms,
             compression_ratio(model))
    fit(model, items, rc.train, out_dir=out_dir)
    return out_dir / "model.rissc"


def cmd_eval(checkpoint, snr_list, data_path, dump_dir=None, n_images=None, seed=0,
             split="test") -> EvalReport:
    model, _ = load_checkpoint(checkpoint)
    h, w, c = model.source_shape
    try:
        items = data_mod.load_dataset(data_path, (h, w), c == 1, split=split)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    if items[0].shape != tuple(model.source_shape):
        raise ValueError(
            f"checkpoint expects {h}x{w}x{c} images, dataset yields {'x'.join(map(str, items[0].shape))}"
        )
    report, recon = evaluate(model, items, snr_list, seed=seed, n_images=n_images, keep_images=True)
    if dump_dir is not None:
        dump = Path(dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        for snr, imgs in recon.items():
            for i, im in enumerate(imgs):
                data_mod.write_ppm(dump / f"snr{fmt(snr)}_{i:04d}.ppm", im)
    return report


def _axis_label(axis: str, value) -> str:
    if axis == "snr_train":
        return parse_snr_policy(value).describe()
    return fmt(_ratio(value))


def cmd_sweep(config_path, axis: str) -> Path:
    rc = load_run_config(config_path)
    if axis not in ("snr_train", "cr"):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    values = rc.sweep.get(axis)
    if not values:
        raise ConfigError(f"sweep.{axis} lists no values")
    test_items = _load_items(rc, "test", rc.test_path, None)
    buf = io.StringIO()
    first = True
    for i, value in enumerate(values):
        raw = copy.deepcopy(rc.raw)
        if axis == "snr_train":
            raw.setdefault("train", {})["snr_policy"] = value
        else:
            raw.setdefault("train", {})["cr_target"] = value
            raw.get("model", {}).pop("tx_grid", None)
        sub = parse_run_config(json.dumps(raw), Path(rc.source).parent)
        ckpt = _train(sub, rc.output_dir / f"sweep_{axis}_{i:02d}")
        model, _ = load_checkpoint(ckpt)
        report = evaluate(model, test_items, sub.snr_test, seed=sub.eval_seed, n_images=sub.n_images)
        text = report.to_csv(["axis", "axis_value"], [axis, _axis_label(axis, value)])
        buf.write(text if first else text.split("\n", 1)[1])
        first = False
    out = rc.output_dir / f"sweep_{axis}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(buf.getvalue(), encoding="utf-8")
    return out


def latency_table(freqs, gaps, gap_over_lambda: float = 0.5) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frequency_hz", "gaps", "gap_distance_m", "latency_s"])
    for f in freqs:
        if not f > 0:
            raise ConfigError(f"frequency must be positive, got {f}")
        d = gap_over_lambda * wavelength_of(f)
        for g in gaps:
            if g < 0:
                raise ConfigError(f"gap count must be nonnegative, got {g}")
            w.writerow([fmt(float(f)), fmt(int(g)), fmt(d), fmt(fly_latency(int(g), d))])
    return buf.getvalue()


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def _floats(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _ints(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rissc", description="RIS semantic-communication simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("config")
    t.add_argument("--out", help="output directory (overrides output_dir)")

    e = sub.add_parser("eval", help="evaluate a checkpoint over SNR_test values")
    e.add_argument("checkpoint")
    e.add_argument("--snr", type=_floats, required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--dump-dir")
    e.add_argument("--n-images", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--out", help="write CSV here instead of stdout")

    s = sub.add_parser("sweep", help="train and evaluate one model per axis value")
    s.add_argument("config")
    s.add_argument("--axis", choices=("snr_train", "cr"), required=True)

    lat = sub.add_parser("latency", help="fly-through latency table")
    lat.add_argument("--freq", type=_floats, required=True)
    lat.add_argument("--gaps", type=_ints, required=True)
    lat.add_argument("--gap-over-lambda", type=float, default=0.5)
    lat.add_argument("--out")
    return p


def _limit_threads():
    value = os.environ.get("RISSC_THREADS")
    if not value:
        return None
    n = int(value)
    if n < 1:
        raise ConfigError("RISSC_THREADS must be a positive integer")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _limit_threads()
        if args.command == "train":
            ckpt = cmd_train(args.config, Path(args.out) if args.out else None)
            print(ckpt)
        elif args.command == "eval":
            report = cmd_eval(args.checkpoint, args.snr, args.data, args.dump_dir,
                              args.n_images, args.seed, args.split)
            _emit(report.to_csv(), args.out)
        elif args.command == "sweep":
            print(cmd_sweep(args.config, args.axis))
        elif args.command == "latency":
            _emit(latency_table(args.freq, args.gaps, args.gap_over_lambda), args.out)
    except ConfigError as exc:
        print(f"rissc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"rissc: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as exc:
        print(f"rissc: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
