"""Command-line entry point: ``cala synth | pseudo-train | run | ablate-gamma | eval``.

Configuration comes from an optional ``--config`` file of dotted keys, then
``--set key=value`` pairs, then the dedicated flags (highest priority). Each
command validates its whole configuration and computes everything before it
writes anything. Outputs are written atomically and carry the config hash.

Exit codes: 0 success, 2 validation error, 3 numerical divergence, 4 I/O error.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import _binio
from ._validation import DivergenceError, FormatError, ValidationError
from .adapter import ClassAwareLogitAdapter, load_adapter, save_adapter
from .backbone import make_feature_map
from .config import ExperimentConfig, parse_value
from .data import SessionSchedule, SyntheticSpec, load_dataset, make_synthetic, save_dataset, split_sessions
from .la_agnostic import AgnosticLogitAdjuster
from .metrics import confusion_to_csv, reports_to_csv, session_report, summarize, summary_json
from .protonet import prototypes_to_bytes
from .runner import RunConfig, run_fscil

log = logging.getLogger("cala")

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4
PREDICTION_COLUMNS = ("session", "n_classes", "base_classes", "label", "prediction")

# flag -> config key, grouped by which commands accept them
DATA_FLAGS = {"--data": "data.path", "--format": "data.format"}
SYNTH_FLAGS = {
    "--dim": "synth.dim", "--base-classes": "synth.base_classes", "--novel-classes": "synth.novel_classes",
    "--per-class-train": "synth.per_class_train", "--per-class-test": "synth.per_class_test",
    "--cluster-std": "synth.cluster_std", "--novel-offset": "synth.novel_offset",
}
SCHEDULE_FLAGS = {
    "--base": "schedule.base_classes", "--sessions": "schedule.sessions", "--ways": "schedule.ways",
    "--shots": "schedule.shots", "--pseudo-sessions": "schedule.pseudo_sessions",
}
MODEL_FLAGS = {
    "--backbone": "backbone.variant", "--backbone-out-dim": "backbone.out_dim",
    "--backbone-seed": "backbone.seed", "--logit-mode": "model.logit_mode", "--logit-scale": "model.logit_scale",
}
ADAPTER_FLAGS = {
    "--hidden": "adapter.hidden", "--gamma": "adapter.gamma", "--mu": "adapter.mu", "--lr": "adapter.lr",
    "--momentum": "adapter.momentum", "--epochs": "adapter.epochs", "--batch-size": "adapter.batch_size",
    "--episodes-per-epoch": "adapter.episodes_per_epoch", "--reg-scale": "adapter.reg_scale",
}
RUN_FLAGS = {
    "--corrector": "corrector.kind", "--adapter": "adapter.path", "--alpha": "agnostic.alpha",
    "--agnostic-mode": "agnostic.mode", "--baseline": "run.baseline",
}
SEED_FLAGS = {"--seed-data": "seed.data", "--seed-pseudo": "seed.pseudo", "--seed-train": "seed.train"}


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------

def _seeds(cfg):
    return {"data": cfg["seed.data"], "pseudo": cfg["seed.pseudo"], "train": cfg["seed.train"]}


def _echo(cfg):
    return f"config_sha256={cfg.digest()}"


def _sidecar(cfg, **extra):
    payload = {"config": cfg.as_dict(), "config_sha256": cfg.digest(), "seeds": _seeds(cfg)}
    payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _dataset(cfg):
    """Load ``data.path`` or, when unset, sample the synthetic spec with the data seed."""
    if cfg["data.path"] is not None:
        return load_dataset(cfg["data.path"], cfg["data.format"])
    return make_synthetic(_synthetic_spec(cfg))


def _synthetic_spec(cfg):
    return SyntheticSpec(
        dim=cfg["synth.dim"], base_classes=cfg["synth.base_classes"], novel_classes=cfg["synth.novel_classes"],
        per_class_train=cfg["synth.per_class_train"], per_class_test=cfg["synth.per_class_test"],
        cluster_std=cfg["synth.cluster_std"], novel_offset=cfg["synth.novel_offset"], seed=cfg["seed.data"],
    )


def _schedule(cfg):
    return SessionSchedule(cfg["schedule.base_classes"], cfg["schedule.sessions"], cfg["schedule.ways"],
                           cfg["schedule.shots"], cfg["schedule.pseudo_sessions"])


def _feature_map(cfg, dim):
    return make_feature_map(cfg["backbone.variant"], dim, cfg["backbone.out_dim"], cfg["backbone.hidden"],
                            cfg["backbone.seed"])


def _prepare(cfg):
    ds = _dataset(cfg)
    schedule = _schedule(cfg)
    schedule.validate_against(ds)
    stream = split_sessions(ds, schedule, cfg["seed.data"])
    return ds, schedule, stream, _feature_map(cfg, ds.dim)


def _adapter_params(cfg, schedule, fmap):
    return dict(
        ways=schedule.ways, shots=schedule.shots, pseudo_sessions=schedule.pseudo_sessions,
        hidden=cfg["adapter.hidden"], gamma=cfg["adapter.gamma"], mu=cfg["adapter.mu"], lr=cfg["adapter.lr"],
        momentum=cfg["adapter.momentum"], epochs=cfg["adapter.epochs"], batch_size=cfg["adapter.batch_size"],
        test_per_class=cfg["adapter.test_per_class"], query_per_class=cfg["adapter.query_per_class"],
        episodes_per_epoch=cfg["adapter.episodes_per_epoch"], logit_mode=cfg["model.logit_mode"],
        logit_scale=cfg["model.logit_scale"], reg_scale=cfg["adapter.reg_scale"], feature_map=fmap,
        random_state=cfg["seed.train"], pseudo_random_state=cfg["seed.pseudo"],
    )


def _load_cala(cfg, schedule, fmap, gamma=None):
    mlp = load_adapter(cfg["adapter.path"])
    if mlp.n_base != schedule.base_classes:
        raise ValidationError(
            f"adapter input width {mlp.n_base} does not match {schedule.base_classes} base classes"
        )
    params = _adapter_params(cfg, schedule, fmap)
    if gamma is not None:
        params["gamma"] = gamma
    return ClassAwareLogitAdapter.from_mlp(mlp, **params)


def _corrector(cfg, schedule, stream, fmap):
    kind = cfg["corrector.kind"]
    if kind == "none":
        return None
    if kind == "cala":
        return _load_cala(cfg, schedule, fmap)
    p = _adapter_params(cfg, schedule, fmap)
    agn = AgnosticLogitAdjuster(
        ways=p["ways"], shots=p["shots"], pseudo_sessions=p["pseudo_sessions"], mode=cfg["agnostic.mode"],
        alpha=cfg["agnostic.alpha"], lr=p["lr"], epochs=p["epochs"], batch_size=p["batch_size"],
        test_per_class=p["test_per_class"], query_per_class=p["query_per_class"],
        episodes_per_epoch=p["episodes_per_epoch"], logit_mode=p["logit_mode"], logit_scale=p["logit_scale"],
        feature_map=fmap, random_state=p["random_state"], pseudo_random_state=p["pseudo_random_state"],
    )
    return agn.fit(stream.base.X_train, stream.base.y_train)


def _load_baseline(path):
    try:
        baseline = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"baseline {path} is not valid JSON ({exc})") from None
    if not isinstance(baseline, dict) or "last" not in baseline or "session_classes" not in baseline:
        raise ValidationError(f"baseline {path} is not a run summary")
    return baseline


def _summary(cfg, reports, baseline, **extra):
    summary = summarize(reports, pooled_novel=cfg["eval.pooled_novel"])
    session_classes = [int(r.confusion.shape[0]) for r in reports]
    if baseline is not None:
        if baseline["session_classes"] != session_classes:
            raise ValidationError("baseline summary comes from a different schedule")
        summary["delta_last"] = summary["last"] - float(baseline["last"])
    summary["session_classes"] = session_classes
    summary.update(extra)
    return summary_json(summary, cfg.as_dict(), _seeds(cfg), cfg.digest())


def _report_files(cfg, reports, summary_text):
    out = Path(cfg["output.dir"])
    files = {out / "report.csv": reports_to_csv(reports, _echo(cfg)), out / "summary.json": summary_text}
    for r in reports:
        files[out / f"confusion_s{r.session}.csv"] = confusion_to_csv(r.confusion, False, _echo(cfg))
        files[out / f"confusion_s{r.session}_normalized.csv"] = confusion_to_csv(r.confusion, True, _echo(cfg))
    return files


def _write_all(files):
    for path, payload in files.items():
        if isinstance(payload, str):
            _binio.atomic_write_text(path, payload)
        else:
            _binio.atomic_write_bytes(path, payload)
        print(f"wrote {path}")


def predictions_to_csv(result, base_classes, header_comment=None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREDICTION_COLUMNS)
    for report, preds, labels in zip(result.reports, result.predictions, result.labels):
        n = report.confusion.shape[0]
        for label, pred in zip(labels, preds):
            w.writerow([report.session, n, base_classes, int(label), int(pred)])
    return buf.getvalue()


def reports_from_predictions(text):
    """Rebuild per-session reports from a predictions CSV."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = csv.reader(lines)
    if tuple(next(rows, ())) != PREDICTION_COLUMNS:
        raise FormatError(f"predictions CSV header must be {','.join(PREDICTION_COLUMNS)}")
    by_session = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            session, n, base, label, pred = (int(v) for v in row)
        except ValueError:
            raise FormatError(f"predictions row {lineno}: expected {len(PREDICTION_COLUMNS)} integers") from None
        entry = by_session.setdefault(session, {"n": n, "base": base, "labels": [], "preds": []})
        if (entry["n"], entry["base"]) != (n, base):
            raise FormatError(f"predictions row {lineno}: class counts change within session {session}")
        entry["labels"].append(label)
        entry["preds"].append(pred)
    if sorted(by_session) != list(range(len(by_session))):
        raise FormatError("predictions must cover sessions 0..T without gaps")
    return [session_report(t, np.array(e["preds"]), np.array(e["labels"]), e["n"], e["base"])
            for t, e in sorted(by_session.items())]


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth(cfg):
    if cfg["output.path"] is None:
        raise ValidationError("synth needs an output path (--out)")
    spec = _synthetic_spec(cfg)
    ds = make_synthetic(spec)
    path = Path(cfg["output.path"])
    save_dataset(ds, path, cfg["data.format"])
    print(f"wrote {path}")
    _write_all({Path(f"{path}.json"): _sidecar(cfg, classes=ds.class_count, instances=len(ds), dim=ds.dim)})


def cmd_pseudo_train(cfg):
    if cfg["output.path"] is None:
        raise ValidationError("pseudo-train needs an output path for the adapter (--out)")
    _, schedule, stream, fmap = _prepare(cfg)
    path = Path(cfg["output.path"])
    est = ClassAwareLogitAdapter(**_adapter_params(cfg, schedule, fmap))
    try:
        est.fit(stream.base.X_train, stream.base.y_train)
    except DivergenceError as exc:
        trace = Path(f"{path}.abort.txt")
        _binio.atomic_write_text(trace, f"{_echo(cfg)}\n{exc}\n")
        raise DivergenceError(f"{exc}; trace written to {trace}") from None
    report = est.report_
    sidecar = {
        "B": est.mlp_.n_base, "H": est.mlp_.hidden, "gamma": cfg["adapter.gamma"], "mu": cfg["adapter.mu"],
        "lr": cfg["adapter.lr"], "epochs": cfg["adapter.epochs"], "momentum": cfg["adapter.momentum"],
        "batch_size": cfg["adapter.batch_size"], "seed": report.seed, "pseudo_seed": report.pseudo_seed,
        "selected_epoch": report.selected_epoch, "pseudo_test_hm": report.pseudo_test_hm,
        "untrained": report.untrained, "history": report.history,
        "beta_drift_negative": report.beta_drift_negative, "feature_map_digest": fmap.parameter_digest(),
        "weights_sha256": est.mlp_.digest(),
    }
    save_adapter(est.mlp_, path)
    print(f"wrote {path}")
    _write_all({Path(f"{path}.json"): _sidecar(cfg, **sidecar)})


def cmd_run(cfg):
    if cfg["output.dir"] is None:
        raise ValidationError("run needs an output directory (--out)")
    baseline = _load_baseline(cfg["run.baseline"]) if cfg["run.baseline"] else None
    _, schedule, stream, fmap = _prepare(cfg)
    corrector = _corrector(cfg, schedule, stream, fmap)
    result = run_fscil(stream, fmap, RunConfig(cfg["model.logit_mode"], corrector, cfg["model.logit_scale"],
                                               cfg["corrector.kind"]))
    extra = {"corrector": cfg["corrector.kind"], "offsets": result.reports[-1].offsets.tolist()}
    if isinstance(corrector, AgnosticLogitAdjuster):
        extra["alpha"] = corrector.alpha_
    files = _report_files(cfg, result.reports, _summary(cfg, result.reports, baseline, **extra))
    out = Path(cfg["output.dir"])
    files[out / "predictions.csv"] = predictions_to_csv(result, schedule.base_classes, _echo(cfg))
    files[out / "prototypes.bin"] = prototypes_to_bytes(result.classifier.bank_)
    files[out / "prototypes.bin.json"] = _sidecar(cfg, base_count=schedule.base_classes,
                                                  n_classes=result.classifier.bank_.n_classes)
    _write_all(files)


def ablate_gamma_rows(cfg):
    """``(gamma, last accuracy, average accuracy)`` for each value in ``ablate.gammas``."""
    _, schedule, stream, fmap = _prepare(cfg)
    rows = []
    for gamma in cfg["ablate.gammas"]:
        corrector = _load_cala(cfg, schedule, fmap, gamma)
        result = run_fscil(stream, fmap, RunConfig(cfg["model.logit_mode"], corrector, cfg["model.logit_scale"]))
        s = summarize(result.reports)
        rows.append((gamma, s["last"], s["avg"]))
    return rows


def cmd_ablate_gamma(cfg):
    if cfg["output.path"] is None:
        raise ValidationError("ablate-gamma needs an output CSV path (--out)")
    rows = ablate_gamma_rows(cfg)
    buf = io.StringIO()
    buf.write(f"# {_echo(cfg)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("gamma", "acc_last", "avg"))
    for gamma, last, avg in rows:
        w.writerow((f"{gamma:g}", f"{last:.6f}", f"{avg:.6f}"))
    _write_all({Path(cfg["output.path"]): buf.getvalue()})


def cmd_eval(cfg):
    if cfg["output.dir"] is None:
        raise ValidationError("eval needs an output directory (--out)")
    baseline = _load_baseline(cfg["run.baseline"]) if cfg["run.baseline"] else None
    text = Path(cfg["eval.predictions"]).read_text(encoding="utf-8")
    reports = reports_from_predictions(text)
    _write_all(_report_files(cfg, reports, _summary(cfg, reports, baseline)))


COMMANDS = {
    "synth": (cmd_synth, [DATA_FLAGS, SYNTH_FLAGS], ()),
    "pseudo-train": (cmd_pseudo_train, [DATA_FLAGS, SYNTH_FLAGS, SCHEDULE_FLAGS, MODEL_FLAGS, ADAPTER_FLAGS], ()),
    "run": (cmd_run, [DATA_FLAGS, SYNTH_FLAGS, SCHEDULE_FLAGS, MODEL_FLAGS, ADAPTER_FLAGS, RUN_FLAGS], ()),
    "ablate-gamma": (cmd_ablate_gamma, [DATA_FLAGS, SYNTH_FLAGS, SCHEDULE_FLAGS, MODEL_FLAGS, ADAPTER_FLAGS,
                                        {"--adapter": "adapter.path", "--gammas": "ablate.gammas"}],
                     ("adapter.path",)),
    "eval": (cmd_eval, [{"--predictions": "eval.predictions", "--baseline": "run.baseline"}],
             ("eval.predictions",)),
}
OUTPUT_KEY = {"synth": "output.path", "pseudo-train": "output.path", "run": "output.dir",
              "ablate-gamma": "output.path", "eval": "output.dir"}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="cala", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, groups, _) in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="file of 'key = value' lines with dotted keys")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", help=f"output ({OUTPUT_KEY[name]})")
        p.add_argument("--seed", help="set the data, pseudo and train seeds at once")
        for flag, key in SEED_FLAGS.items():
            p.add_argument(flag, dest=key, help=key)
        for group in groups:
            for flag, key in group.items():
                p.add_argument(flag, dest=key, help=key)
        if name in ("run", "eval"):
            p.add_argument("--pooled-novel", action="store_true", help="pool novel instances across sessions")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        overrides[key] = parse_value(key, raw)
    if args.seed is not None:
        for key in SEED_FLAGS.values():
            overrides[key] = parse_value(key, args.seed)
    for key, raw in vars(args).items():
        if "." in key and raw is not None:
            overrides[key] = parse_value(key, raw)
    if args.out is not None:
        overrides[OUTPUT_KEY[args.command]] = args.out
    if getattr(args, "pooled_novel", False):
        overrides["eval.pooled_novel"] = True
    cfg = ExperimentConfig.load(args.config, overrides)
    required = list(COMMANDS[args.command][2])
    for key in ("data.path", "run.baseline"):
        if cfg[key] is not None:
            required.append(key)
    if args.command == "run" and cfg["corrector.kind"] == "cala":
        required.append("adapter.path")
    return cfg.validate(required)


def _thread_limit():
    raw = os.environ.get("CALA_THREADS")
    if raw is None or raw == "":
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"CALA_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"CALA_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        with _thread_limit():
            COMMANDS[args.command][0](cfg)
        print(_echo(cfg))
    except DivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
