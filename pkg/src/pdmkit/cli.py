"""Command-line front end: generate, detect, classify, inspect.

Exit codes: 0 success, 1 usage or config error, 2 data error,
3 numeric or training failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, envelope
from . import simulator as sim
from .anomaly import AnomalyRule, ArimaForecaster, LstmForecaster, detect
from .arima import ArimaConfig, autocorrelation, select_lag
from .classifier import (AUGMENTED_ROW, DefectClassifier, confusion, default_interpolation_count, fine_tune_config,
                         preset, rpm_generalization_grid, train_dnn_r, transfer)
from .config import ConfigError, load_config
from .errors import ArtifactFormatError, DegenerateError, PdmError, RejectedInputError, TrainingError
from .features import (DEFAULT_WINDOWS, augment, binarize, decimate, load_windows, save_windows, select_axes,
                       split_by_recording, windows_from_recordings)
from .lstm import WindowSpec
from .numcore import MSE, TrainConfig

log = logging.getLogger("pdmkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RESOLVED_CONFIG = "resolved_config.ini"
MANIFEST = "manifest.ini"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- output helpers


class Outputs:
    """Collects every file a command writes so the manifest can list them."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.files: dict[str, dict] = {}

    def write_text(self, rel: str, text: str, **details) -> Path:
        return self.write_bytes(rel, text.encode("utf-8"), **details)

    def write_bytes(self, rel: str, data: bytes, **details) -> Path:
        path = self.root / rel
        envelope.atomic_write_bytes(path, data)
        self.files[rel] = dict(details)
        return path

    def add(self, rel: str, **details):
        self.files[rel] = dict(details)

    def manifest(self, command: str, cfg) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser["run"] = {"command": command, "seed": str(cfg.seed), "version": __version__,
                         "config_sha256": _sha(cfg.resolved_text().encode()), "files": str(len(self.files))}
        for rel in sorted(self.files):
            data = (self.root / rel).read_bytes()
            entry = {"sha256": _sha(data), "bytes": str(len(data))}
            entry.update({k: str(v) for k, v in self.files[rel].items()})
            parser[f"file {rel}"] = entry
        out = io.StringIO()
        parser.write(out)
        return out.getvalue().rstrip("\n") + "\n"

    def finish(self, command: str, cfg) -> Path:
        self.write_text(RESOLVED_CONFIG, cfg.resolved_text())
        text = self.manifest(command, cfg)
        path = self.root / MANIFEST
        envelope.atomic_write_text(path, text)
        return path


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _num(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------- generate


def farm_csv(series: sim.SensorSeries) -> str:
    out = io.StringIO()
    out.write("timestamp,value,is_anomaly\n")
    ts = np.datetime_as_string(series.timestamps, unit="m")
    for t, v, a in zip(ts, series.values, series.is_anomaly):
        out.write(f"{t},{_num(v)},{int(a)}\n")
    return out.getvalue()


def motor_csv(rec: sim.Recording) -> str:
    out = io.StringIO()
    out.write("t,x,y,z\n")
    for t, x, y, z in zip(rec.t, rec.x, rec.y, rec.z):
        out.write(f"{_num(t)},{_num(x)},{_num(y)},{_num(z)}\n")
    return out.getvalue()


def cmd_generate(cfg, out: Outputs) -> int:
    seed = cfg.seed
    if cfg["farm"]:
        anomalies = sim.AnomalySpec(count=cfg["anomaly_count"], magnitude=cfg["anomaly_magnitude"],
                                    kinds=cfg["anomaly_kinds"], region=tuple(cfg["anomaly_region"]))
        specs = sim.default_farm_specs(seed, cfg["farm_days"], anomalies, cfg["sensor_types"], cfg["devices"],
                                       cfg["farm_params"])
        split = 0.66
        for spec in specs:
            s = sim.gen_farm(spec)
            n_train = int(np.floor(split * len(s)))
            out.write_text(f"farm/{s.name}.csv", farm_csv(s), samples=len(s), train=n_train,
                           test=len(s) - n_train, anomalies=int(s.is_anomaly.sum()), sensor_type=s.sensor_type,
                           device=s.device, seed=seed)
        log.info("wrote %d farm series", len(specs))
    if cfg["motor"]:
        for kind, prefix in ((sim.PIEZO, "piezo"), (sim.MEMS, "mems")):
            spec = sim.MotorSpec(rpm_list=cfg["rpms"], sensor_kind=kind,
                                 recordings_per_condition=cfg[f"{prefix}_recordings"],
                                 recording_seconds=cfg[f"{prefix}_seconds"], health=tuple(cfg["health"]),
                                 noise_sigma=cfg[f"{prefix}_noise"], seed=seed)
            recs = sim.gen_motor(spec)
            if cfg["raw_motor"]:
                for r in recs:
                    n = len(r.x)
                    out.write_text(f"motor/{prefix}/rpm{r.rpm}_{r.label_name}_{r.index:03d}.csv", motor_csv(r),
                                   samples=n, train=n // 2, test=n - n // 2, rpm=r.rpm, label=r.label_name,
                                   sensor_kind=kind, seed=seed)
            ws = windows_from_recordings(recs, DEFAULT_WINDOWS[kind])
            path = out.root / f"windows/{prefix}.csv"
            save_windows(ws, path)
            out.add(f"windows/{prefix}.csv", windows=len(ws), window_len=ws.window_len,
                    axes="".join(ws.axes), sensor_kind=kind, seed=seed)
            log.info("wrote %d %s recordings, %d windows", len(recs), kind, len(ws))
    return EXIT_OK


# ---------------------------------------------------------------- detect


def read_farm_csv(path: Path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise RejectedInputError(f"{path}: {exc.strerror}") from exc
    if header is None or header[:2] != ["timestamp", "value"]:
        raise RejectedInputError(f"{path}: expected header timestamp,value[,is_anomaly]")
    try:
        values = np.array([float(r[1]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise RejectedInputError(f"{path}: malformed row: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise RejectedInputError(f"{path}: non-finite value")
    return np.array([r[0] for r in rows]), values


def sensor_type_of(path: Path) -> str:
    stem = path.stem
    tail = stem.split("_", 1)[-1]
    return tail if tail in sim.SENSOR_TYPES else stem


def _series_files(inputs) -> list[Path]:
    files = []
    for raw in inputs:
        p = Path(raw)
        if p.is_dir():
            sub = p / "farm" if (p / "farm").is_dir() else p
            files.extend(sorted(sub.glob("*.csv")))
        elif p.exists():
            files.append(p)
        else:
            raise RejectedInputError(f"input not found: {p}")
    if not files:
        raise RejectedInputError(f"no series files under {', '.join(map(str, inputs))}")
    return files


def make_forecaster(cfg):
    if cfg["forecaster"] == "arima":
        return ArimaForecaster(ArimaConfig(p=cfg["p"], d=cfg["d"]), rolling=cfg["rolling"])
    tc = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"],
                     seed=cfg.seed, loss=MSE)
    return LstmForecaster(WindowSpec(cfg["window_len"], 1), tc, cfg["hidden_dim"])


def aggregate_table(results) -> tuple[str, list]:
    """One row per sensor type: average test RMSE and total flagged samples."""
    by_type: dict[str, list] = {}
    for stype, report in results:
        by_type.setdefault(stype, []).append(report)
    rows = []
    out = io.StringIO()
    out.write("sensor_type,average_test_rmse,anomalies,series\n")
    for stype in sorted(by_type, key=lambda t: (sim.SENSOR_TYPES.index(t) if t in sim.SENSOR_TYPES else 99, t)):
        reps = by_type[stype]
        avg = float(np.mean([r.rmse for r in reps]))
        n_anom = sum(r.n_flagged for r in reps)
        out.write(f"{stype},{_num(avg)},{n_anom},{len(reps)}\n")
        rows.append((stype, avg, n_anom, len(reps)))
    return out.getvalue(), rows


def read_aggregate(path) -> dict:
    """sensor_type -> average test RMSE, from an aggregate table written by detect."""
    with open(path, newline="") as fh:
        return {r["sensor_type"]: float(r["average_test_rmse"]) for r in csv.DictReader(fh)}


def cmd_detect(cfg, out: Outputs, inputs) -> int:
    from . import plotting

    files = _series_files(inputs)
    rule = AnomalyRule(cfg["threshold"], cfg["denominator_floor"], cfg["two_sided"])
    results, failures = [], []
    for path in files:
        name = path.stem
        stype = sensor_type_of(path)
        try:
            timestamps, values = read_farm_csv(path)
            fc = make_forecaster(cfg)
            if cfg["auto_lag"] and isinstance(fc, ArimaForecaster):
                n_train = int(np.floor(cfg["split_fraction"] * len(values)))
                p = select_lag(values[:n_train])
                fc = ArimaForecaster(ArimaConfig(p=p, d=cfg["d"]), rolling=cfg["rolling"])
            report = detect(values, fc, cfg["split_fraction"], rule, timestamps, name)
        except PdmError as exc:
            failures.append((name, type(exc).__name__, str(exc)))
            log.warning("%s: %s", name, exc)
            continue
        report.meta.update(fc.describe())
        out.write_text(f"reports/{name}.csv", report.to_table(), model_type=report.model_type, n_test=report.n_test,
                       anomalies=report.n_flagged)
        out.write_text(f"plot_data/{name}.csv", report.plot_data(), rows=report.n_test)
        if cfg["figures"]:
            plotting.forecast_figure(report, out.root / f"figures/{name}.png")
            out.add(f"figures/{name}.png", kind="forecast")
        results.append((stype, report))
    if failures:
        buf = io.StringIO()
        buf.write("series,error,message\n")
        for name, kind, msg in failures:
            buf.write(f"{name},{kind},\"{msg.replace(chr(34), chr(39))}\"\n")
        out.write_text("failures.csv", buf.getvalue(), failures=len(failures))
    if not results:
        log.error("every series failed")
        numeric = all(kind in ("DegenerateFitError", "DegenerateVarianceError", "TrainingError")
                      for _, kind, _ in failures)
        return EXIT_NUMERIC if numeric else EXIT_DATA
    table, rows = aggregate_table(results)
    model_type = results[0][1].model_type
    out.write_text("aggregate.csv", table, model_type=model_type, sensor_types=len(rows), series=len(results))
    if cfg["figures"]:
        plotting.rmse_figure(rows, out.root / "figures/aggregate_rmse.png", model_type)
        out.add("figures/aggregate_rmse.png", kind="rmse")
        if cfg["forecaster"] == "arima":
            # lag structure of the first series' training part, as used for lag selection
            _, values = read_farm_csv(files[0])
            n_train = int(np.floor(cfg["split_fraction"] * len(values)))
            acf = autocorrelation(values[:n_train], 50)
            plotting.acf_figure(acf, out.root / "figures/acf.png", 0.9, select_lag(values[:n_train]), files[0].stem)
            out.add("figures/acf.png", kind="acf")
    print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------- classify


def _prepare_windows(cfg, path):
    ws = load_windows(path)
    if cfg["rpms"]:
        keep = np.isin(ws.rpm, cfg["rpms"])
        missing = sorted(set(cfg["rpms"]) - set(np.unique(ws.rpm).tolist()))
        if missing:
            raise RejectedInputError(f"{path}: no windows at rpm {missing}")
        ws = ws.subset(np.nonzero(keep)[0])
    if tuple(cfg["axes"]) != ws.axes:
        ws = select_axes(ws, cfg["axes"])
    if cfg["window_len"] is not None and cfg["window_len"] != ws.window_len:
        ws = decimate(ws, cfg["window_len"])
    if cfg["binary"]:
        ws = binarize(ws)
    return ws


def _eval_table(pairs) -> str:
    return "".join(f"{k},{v}\n" for k, v in [("key", "value")] + list(pairs))


def cmd_classify(cfg, out: Outputs, windows_path) -> int:
    from . import plotting

    arch, hyper = preset(cfg["preset"], seed=cfg.seed)
    ws = _prepare_windows(cfg, windows_path)
    if cfg["grid"]:
        if cfg["transfer_from"]:
            raise ConfigError("grid and transfer_from cannot be combined")
        grid = rpm_generalization_grid(ws, arch, hyper, include_augmented=cfg["augmented_row"],
                                       train_fraction=cfg["train_fraction"],
                                       interpolation_count=cfg["interpolation_count"], seed=cfg.seed)
        out.write_text("grid.csv", grid.to_table(), rows=len(grid.row_labels), columns=len(grid.test_rpms))
        single = grid.row_averages[grid.single_rows()]
        pairs = [("preset", cfg["preset"]), ("classes", "|".join(ws.classes)), ("rows", len(grid.row_labels)),
                 ("single_row_average", _num(single.mean())), ("best_single_row_average", _num(single.max())),
                 ("worst_single_row_average", _num(single.min()))]
        if AUGMENTED_ROW in grid.row_labels:
            pairs.append(("augmented_row_average", _num(grid.row_averages[grid.row_labels.index(AUGMENTED_ROW)])))
        out.write_text("evaluation.csv", _eval_table(pairs))
        if cfg["figures"]:
            plotting.grid_figure(grid, out.root / "figures/grid.png")
            out.add("figures/grid.png", kind="grid")
        print(grid.to_table(), end="")
        return EXIT_OK

    train_ws, test_ws = split_by_recording(ws, cfg["train_fraction"], cfg.seed)
    if cfg["augment"]:
        count = cfg["interpolation_count"]
        train_ws = augment(train_ws, count if count is not None else default_interpolation_count(train_ws),
                           seed=cfg.seed)
    if cfg["transfer_from"]:
        try:
            source = DefectClassifier.load(cfg["transfer_from"])
        except OSError as exc:
            raise RejectedInputError(f"{cfg['transfer_from']}: {exc.strerror}") from exc
        except ArtifactFormatError as exc:
            raise ArtifactFormatError(f"{cfg['transfer_from']}: {exc}") from exc
        ft = None
        if cfg["fine_tune_epochs"] > 0:
            ft = fine_tune_config(source.config or hyper).replace(epochs=cfg["fine_tune_epochs"], seed=cfg.seed)
        clf = transfer(source, train_ws, ft, freeze_hidden=cfg["freeze_hidden"])
    else:
        clf = train_dnn_r(train_ws, hyper, arch)
    cm = confusion(clf, test_ws)
    out.write_bytes("classifier.pdm", clf.to_bytes(), provenance=clf.provenance)
    out.write_text("confusion.csv", cm.to_table(), accuracy=_num(cm.accuracy))
    out.write_text("confusion_counts.csv", cm.counts_table(), total=cm.total)
    pairs = [("provenance", clf.provenance), ("preset", cfg["preset"]), ("classes", "|".join(clf.classes)),
             ("n_train", len(train_ws)), ("n_test", len(test_ws)), ("accuracy", _num(cm.accuracy)),
             ("weights_sha256", clf.weights_digest())]
    out.write_text("evaluation.csv", _eval_table(pairs))
    if cfg["figures"]:
        plotting.confusion_figure(cm, out.root / "figures/confusion.png")
        out.add("figures/confusion.png", kind="confusion")
        if clf.history:
            plotting.loss_figure(clf.history, out.root / "figures/loss.png")
            out.add("figures/loss.png", kind="loss")
    print(cm.to_table(), end="")
    print(f"accuracy,{100 * cm.accuracy:.2f}")
    return EXIT_OK


# ---------------------------------------------------------------- inspect


def cmd_inspect(path) -> int:
    try:
        header = envelope.peek(path)
    except OSError as exc:
        raise RejectedInputError(f"{path}: {exc.strerror}") from exc
    except (ValueError, UnicodeDecodeError) as exc:
        raise ArtifactFormatError(f"{path}: not a pdmkit artifact") from exc
    print(json.dumps(header, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pdmkit", description="Predictive-maintenance toolkit: synthetic data, anomaly detection "
                                            "and defect classification.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="sectioned key-value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, required=True, help="output directory")

    g = sub.add_parser("generate", help="write the synthetic farm and motor corpus")
    common(g)
    g.add_argument("--farm-days", type=float)
    g.add_argument("--no-motor", dest="motor", action="store_const", const=False)
    g.add_argument("--no-farm", dest="farm", action="store_const", const=False)

    d = sub.add_parser("detect", help="forecast each series and flag anomalies")
    common(d)
    d.add_argument("inputs", nargs="+", help="series csv files or directories")
    d.add_argument("--forecaster", choices=("arima", "lstm"))
    d.add_argument("--threshold", type=float)
    d.add_argument("--epochs", type=int)
    d.add_argument("--no-figures", dest="figures", action="store_const", const=False)

    c = sub.add_parser("classify", help="train and evaluate a defect classifier")
    common(c)
    c.add_argument("--windows", type=Path, required=True, help="window csv written by generate")
    c.add_argument("--preset", choices=("baseline", "neurons-80", "neurons-100", "layers-3", "epochs-100",
                                        "batch-100"))
    c.add_argument("--axes", type=lambda s: tuple(s.upper().replace(",", "")), help="e.g. XZ")
    c.add_argument("--rpms", type=lambda s: tuple(int(v) for v in s.split(",")))
    c.add_argument("--window-len", type=int, help="decimate windows to this many samples per axis")
    c.add_argument("--binary", action="store_const", const=True)
    c.add_argument("--augment", action="store_const", const=True)
    c.add_argument("--grid", action="store_const", const=True)
    c.add_argument("--no-augmented-row", dest="augmented_row", action="store_const", const=False)
    c.add_argument("--transfer-from", type=str)
    c.add_argument("--fine-tune-epochs", type=int)
    c.add_argument("--freeze-hidden", action="store_const", const=True)
    c.add_argument("--no-figures", dest="figures", action="store_const", const=False)

    i = sub.add_parser("inspect", help="print an artifact's metadata")
    i.add_argument("path", type=Path)
    return ap


_OVERRIDES = {
    "generate": ("seed", "farm_days", "motor", "farm"),
    "detect": ("seed", "forecaster", "threshold", "epochs", "figures"),
    "classify": ("seed", "preset", "axes", "rpms", "window_len", "binary", "augment", "grid", "augmented_row",
                 "transfer_from", "fine_tune_epochs", "freeze_hidden", "figures"),
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"pdmkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "inspect":
            return cmd_inspect(args.path)
        cfg = load_config(args.command, args.config, {k: getattr(args, k) for k in _OVERRIDES[args.command]})
        out = Outputs(args.out)
        try:
            args.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise RejectedInputError(f"cannot create output directory {args.out}: {exc.strerror}") from exc
        if args.command == "generate":
            code = cmd_generate(cfg, out)
        elif args.command == "detect":
            code = cmd_detect(cfg, out, args.inputs)
        else:
            code = cmd_classify(cfg, out, args.windows)
        if code == EXIT_OK or out.files:
            manifest = out.finish(args.command, cfg)
            log.info("manifest %s", manifest)
        return code
    except ConfigError as exc:
        print(f"pdmkit: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateError, TrainingError, FloatingPointError) as exc:
        print(f"pdmkit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RejectedInputError, ArtifactFormatError) as exc:
        print(f"pdmkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"pdmkit: io error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
