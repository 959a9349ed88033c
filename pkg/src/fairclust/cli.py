"""Command-line entry point: synth, pretrain, train, eval, sweep.

Every command is deterministic given its config and seeds. Values resolve
as flag > config file > default; config files are UTF-8 ``key = value``
lines with ``#`` comments, keyed by the flag names with underscores.
Artifacts land under --out with a manifest.json index. Exit codes:
0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import autoencoder, data, metrics, model
from .nn import load_params, save_params

SCHEMA_VERSION = 1


class CliError(Exception):
    """Usage error; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise CliError(f"expected a comma-separated integer list, got {text!r}")


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise CliError(f"expected a comma-separated number list, got {text!r}")


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise CliError(f"expected a boolean, got {text!r}")


# Option tables: dest -> (converter, default, help). The converter also
# parses config-file values, so flags and files share one type system.
DATA_OPTS = {
    "data": (str, None, "input CSV path"),
    "feature_cols": (lambda s: str(s).split(","), None, "numeric feature columns"),
    "categorical_cols": (lambda s: str(s).split(","), None, "categorical feature columns"),
    "protected_col": (str, None, "protected attribute column"),
    "label_col": (str, None, "ground-truth label column"),
    "normalize": (str, "minmax", "minmax, zscore, or none"),
}

AE_OPTS = {
    "hidden": (_int_list, [500, 500, 2000], "hidden encoder widths"),
    "latent": (int, None, "bottleneck width d"),
    "layerwise_epochs": (int, 150, "epochs per layer pair"),
    "global_epochs": (int, 100, "end-to-end fine-tuning epochs"),
    "lr_pretrain": (float, 0.1, "pretraining learning rate"),
    "dropout": (float, 0.2, "input corruption rate for pretraining"),
    "ae_batch": (int, 256, "pretraining minibatch size"),
    "ae_seed": (int, 0, "pretraining seed"),
}

TRAIN_OPTS = {
    "pretrain": (str, "inline", "AE checkpoint path, or 'inline' to pretrain here"),
    "k": (int, None, "number of clusters"),
    "gamma": (float, 0.0, "fairness weight"),
    "beta": (float, 1000.0, "smoothing root for the fairness target"),
    "epsilon": (float, 1e-9, "numerical floor inside the smoothing root"),
    "dof": (float, 1.0, "Student's-t degrees of freedom"),
    "lr": (float, 0.01, "training learning rate"),
    "batch": (int, 256, "training minibatch size"),
    "max_epochs": (int, 100, "epoch cap"),
    "convergence_tol": (float, 0.001, "stop when fewer assignments change"),
    "recon_weight": (float, 0.0, "reconstruction term weight"),
    "clip_norm": (float, 5.0, "global gradient norm cap (0 disables)"),
    "refresh": (str, "incore", "target refresh mode: incore or streaming"),
    "refresh_interval": (int, 1, "epochs between target refreshes (0 freezes)"),
    "seeds": (_int_list, [0], "training seeds"),
}

SYNTH_OPTS = {
    "n": (int, 1000, "number of points"),
    "dims": (int, 10, "feature dimension"),
    "blobs": (int, 4, "number of Gaussian blobs"),
    "t": (int, 4, "number of protected states"),
    "corr": (float, 0.9, "blob-to-state correlation in [0, 1]"),
    "spread": (float, 0.1, "blob standard deviation, relative to the unit center gap"),
    "seed": (int, 0, "generator seed"),
}

COMMAND_OPTS = {
    "synth": {**SYNTH_OPTS},
    "pretrain": {**DATA_OPTS, **AE_OPTS},
    "train": {**DATA_OPTS, **AE_OPTS, **TRAIN_OPTS},
    "eval": {
        "model": (str, None, "model checkpoint path"),
        **DATA_OPTS,
        "dump_latent": (_bool, False, "also export latent embeddings as CSV"),
    },
    "sweep": {**DATA_OPTS, **AE_OPTS, **TRAIN_OPTS,
              "gamma_list": (_float_list, None, "gamma sweep values"),
              "k_list": (_int_list, None, "K sweep values")},
}

REQUIRED = {
    "synth": ("out",),
    "pretrain": ("data", "latent", "out"),
    "train": ("data", "k", "out"),
    "eval": ("model", "data"),
    "sweep": ("data", "out"),
}


def build_parser():
    parser = _Parser(prog="fairclust", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in COMMAND_OPTS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--out", default=None, help="output directory")
        for dest, (_, _, help_text) in opts.items():
            p.add_argument("--" + dest.replace("_", "-"), dest=dest, default=None,
                           help=help_text)
    return parser


def parse_config_file(path):
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def resolve(args, command):
    """Merge flag > file > default into a plain options dict."""
    opts = COMMAND_OPTS[command]
    from_file = parse_config_file(args.config) if args.config else {}
    unknown = set(from_file) - set(opts) - {"out"}
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for dest, (convert, default, _) in opts.items():
        raw = getattr(args, dest)
        if raw is None and dest in from_file:
            raw = from_file[dest]
        resolved[dest] = convert(raw) if raw is not None else default
    resolved["out"] = args.out if args.out is not None else from_file.get("out")
    missing = [k for k in REQUIRED[command] if resolved.get(k) is None]
    if missing:
        raise CliError(f"missing required options: {missing}")
    return resolved


def _thread_count():
    raw = os.environ.get("FAIRCLUST_THREADS", "1")
    try:
        count = int(raw)
    except ValueError:
        raise CliError(f"FAIRCLUST_THREADS must be an integer, got {raw!r}")
    if count < 1:
        raise CliError("FAIRCLUST_THREADS must be at least 1")
    return count


def _validated(factory, **kwargs):
    """Build a config object, reporting invalid values as usage errors."""
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise CliError(str(exc))


def _json_dump(payload, path):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_manifest(out, command, artifacts):
    _json_dump({"schema_version": SCHEMA_VERSION, "command": command,
                "artifacts": sorted(str(a) for a in artifacts)}, Path(out) / "manifest.json")


def _load_dataset(opts):
    path = Path(opts["data"])
    if opts["feature_cols"] or opts["categorical_cols"]:
        schema = {}
        for col in opts["feature_cols"] or []:
            schema[col] = "feature"
        for col in opts["categorical_cols"] or []:
            schema[col] = "categorical"
        if not opts["protected_col"]:
            raise CliError("--protected-col is required when the schema is given by flags")
        schema[opts["protected_col"]] = "protected"
        if opts["label_col"]:
            schema[opts["label_col"]] = "label"
        ds = data.load_csv(path, schema)
    else:
        ds = data.load_with_manifest(path)
    mode = opts["normalize"]
    if mode not in ("minmax", "zscore", "none"):
        raise CliError(f"unknown normalization mode {mode!r}")
    if mode != "none":
        ds = data.normalize(ds, mode)
    return ds


def cmd_synth(opts):
    spec = _validated(data.SynthSpec, n_points=opts["n"], dims=opts["dims"],
                      n_blobs=opts["blobs"], T=opts["t"], correlation=opts["corr"],
                      blob_spread=opts["spread"], seed=opts["seed"])
    ds = data.synth_blobs(spec)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "data.csv"
    manifest_path = data.save_csv(ds, csv_path)
    _write_manifest(out, "synth", [csv_path.name, manifest_path.name])
    print(f"wrote {csv_path} ({ds.n} rows, {ds.d} features, T={ds.T})")
    return 0


def _pretrain_ae(ds, opts, out):
    dims = tuple([ds.d] + list(opts["hidden"]) + [opts["latent"]])
    cfg = _validated(autoencoder.AeConfig, dims=dims,
                     layerwise_epochs=opts["layerwise_epochs"],
                     global_epochs=opts["global_epochs"],
                     lr_pretrain=opts["lr_pretrain"], dropout=opts["dropout"],
                     batch=opts["ae_batch"], seed=opts["ae_seed"])
    params, log = autoencoder.pretrain(ds.features, cfg)
    ckpt = out / "ae.json"
    save_params(params, ckpt)
    log_path = out / "pretrain_log.jsonl"
    with log_path.open("w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return params, [ckpt.name, log_path.name]


def cmd_pretrain(opts):
    ds = _load_dataset(opts)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    _, artifacts = _pretrain_ae(ds, opts, out)
    _write_manifest(out, "pretrain", artifacts)
    print(f"wrote {out / 'ae.json'}")
    return 0


def _train_config(opts, seed):
    return _validated(model.TrainConfig, K=opts["k"], gamma=opts["gamma"],
                      beta=opts["beta"], epsilon=opts["epsilon"], dof=opts["dof"],
                      lr=opts["lr"], batch=opts["batch"],
                      max_epochs=opts["max_epochs"],
                      convergence_tol=opts["convergence_tol"],
                      recon_weight=opts["recon_weight"],
                      clip_norm=opts["clip_norm"], refresh=opts["refresh"],
                      refresh_interval=opts["refresh_interval"], seed=seed)


def _run_one_seed(ds, ae_params, opts, seed, out):
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    trained = model.train(ds, ae_params, _train_config(opts, seed))
    model.save_model(trained, seed_dir / "model.json")
    with (seed_dir / "history.jsonl").open("w", encoding="utf-8") as fh:
        for entry in trained.history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    rep = metrics.report(trained, ds)
    (seed_dir / "report.json").write_text(rep.to_json())
    return rep


AGG_FIELDS = ("acc", "nmi", "fwd_mean", "fwd_max", "balance_min")


def _aggregate(reports_by_seed, failures):
    agg = {"schema_version": SCHEMA_VERSION, "seeds": sorted(reports_by_seed),
           "failures": sorted(failures), "metrics": {}}
    for name in AGG_FIELDS:
        values = [getattr(reports_by_seed[s], name) for s in sorted(reports_by_seed)]
        if any(v is None for v in values) or not values:
            agg["metrics"][name] = None
            continue
        agg["metrics"][name] = {
            "mean": float(np.mean(values)),
            "median": float(np.median(values)),
            "std": float(np.std(values)),
            "values": [float(v) for v in values],
        }
    return agg


def _run_seeds(ds, ae_params, opts, seeds, out):
    out.mkdir(parents=True, exist_ok=True)
    reports, failures = {}, {}
    threads = _thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {seed: pool.submit(_run_one_seed, ds, ae_params, opts, seed, out)
                       for seed in seeds}
        outcomes = [(seed, futures[seed].result) for seed in seeds]
    else:
        outcomes = [(seed, lambda s=seed: _run_one_seed(ds, ae_params, opts, s, out))
                    for seed in seeds]
    for seed, result in outcomes:
        try:
            reports[seed] = result()
        except Exception as exc:  # per-seed failure; the summary marks it
            failures[seed] = str(exc)
    agg = _aggregate(reports, failures)
    _json_dump(agg, out / "aggregate.json")
    return agg


def _resolve_ae(ds, opts, out):
    if opts["pretrain"] == "inline":
        if opts["latent"] is None:
            raise CliError("--latent is required for inline pretraining")
        params, artifacts = _pretrain_ae(ds, opts, out)
        return params, artifacts
    params = load_params(opts["pretrain"])
    if params.layers("enc")[0].n_in != ds.d:
        raise ValueError(
            f"checkpoint expects {params.layers('enc')[0].n_in} features, "
            f"dataset has {ds.d}"
        )
    return params, []


def cmd_train(opts):
    _train_config(opts, opts["seeds"][0])  # surface bad values before any work
    ds = _load_dataset(opts)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    ae_params, artifacts = _resolve_ae(ds, opts, out)
    agg = _run_seeds(ds, ae_params, opts, opts["seeds"], out)
    artifacts += ["aggregate.json"] + [f"seed_{s}" for s in opts["seeds"]]
    _write_manifest(out, "train", artifacts)
    print(json.dumps(agg["metrics"], sort_keys=True, indent=2))
    if agg["failures"]:
        print(f"{len(agg['failures'])} seed(s) failed", file=sys.stderr)
        return 2
    return 0


def cmd_eval(opts):
    trained = model.load_model(opts["model"])
    ds = _load_dataset(opts)
    if trained.fairoids.shape[0] != ds.T:
        raise ValueError(
            f"protected-state mismatch: model T={trained.fairoids.shape[0]}, "
            f"dataset T={ds.T}"
        )
    expected = trained.params.layers("enc")[0].n_in
    if expected != ds.d:
        raise ValueError(f"feature mismatch: model D={expected}, dataset D={ds.d}")
    rep = metrics.report(trained, ds)
    sys.stdout.write(rep.to_json())
    if opts["out"]:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(rep.to_json())
        artifacts = ["report.json"]
        hist_path = metrics.histograms_to_csv(rep, out / "histograms.csv")
        artifacts.append(hist_path.name)
        if opts["dump_latent"]:
            Z = model.encode_latent(trained, ds.features)
            latent_path = out / "latent.csv"
            with latent_path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow([f"z{j}" for j in range(Z.shape[1])]
                                + ["assignment", "protected"])
                assignments = model.predict(trained, ds.features)
                for i in range(len(Z)):
                    writer.writerow([repr(float(v)) for v in Z[i]]
                                    + [int(assignments[i]), int(ds.protected[i])])
            artifacts.append(latent_path.name)
        _write_manifest(out, "eval", artifacts)
    return 0


def cmd_sweep(opts):
    if (opts["gamma_list"] is None) == (opts["k_list"] is None):
        raise CliError("pass exactly one of --gamma-list or --k-list")
    axis = "gamma" if opts["gamma_list"] is not None else "k"
    values = opts["gamma_list"] if axis == "gamma" else opts["k_list"]
    if axis == "k" and opts["k"] is None and opts["latent"] is None:
        raise CliError("--latent is required for a K sweep")
    if axis == "gamma" and opts["k"] is None:
        raise CliError("--k is required for a gamma sweep")

    ds = _load_dataset(opts)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    # One shared pretraining per dataset isolates the swept axis.
    ae_params, artifacts = _resolve_ae(ds, {**opts, "latent": opts["latent"] or opts["k"]}, out)

    rows = []
    for value in values:
        point = dict(opts)
        point[axis] = value
        point_dir = out / f"{axis}_{value:g}" if axis == "gamma" else out / f"k_{value}"
        try:
            agg = _run_seeds(ds, ae_params, point, opts["seeds"], point_dir)
        except Exception as exc:
            rows.append({"value": value, "error": str(exc)})
            continue
        row = {"value": value}
        for name in AGG_FIELDS:
            stats = agg["metrics"][name]
            row[name] = stats if stats is None else {k: stats[k] for k in ("mean", "median", "std")}
        if agg["failures"]:
            row["error"] = f"{len(agg['failures'])} seed(s) failed"
        rows.append(row)
        artifacts.append(point_dir.name)

    table_path = out / "sweep.csv"
    with table_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [axis]
        for name in AGG_FIELDS:
            header += [f"{name}_median", f"{name}_mean", f"{name}_std"]
        writer.writerow(header + ["error"])
        for row in rows:
            line = [repr(float(row["value"]))]
            for name in AGG_FIELDS:
                stats = row.get(name)
                if stats is None:
                    line += ["", "", ""]
                else:
                    line += [repr(stats["median"]), repr(stats["mean"]), repr(stats["std"])]
            line.append(row.get("error", ""))
            writer.writerow(line)
    _json_dump({"schema_version": SCHEMA_VERSION, "axis": axis, "rows": rows},
               out / "sweep.json")
    _write_manifest(out, "sweep", artifacts + ["sweep.csv", "sweep.json"])
    print(f"wrote {table_path}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        opts = resolve(args, args.command)
    except CliError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](opts)
    except CliError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
