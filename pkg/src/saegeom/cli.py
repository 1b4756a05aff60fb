"""Command-line experiment harness.

Subcommands
-----------
bridge     k-means vs TopK SAE vs k-means + local PCA on 2-D clusters
train      one PAM-SGD or SGD run
sweep      PAM vs SGD over one hyperparameter axis and several seeds
geometry   render the cells of a 2-D TopK encoder or power diagram
gen-data   write a generated dataset to CSV

Settings come from three layers: built-in defaults, an INI-style config
file (``--config``, or a previous run's ``--manifest``), and command-line
flags (``--set section.key=value`` plus the named shortcuts). Later
layers win. Every run directory gets a ``manifest.json`` holding the
fully resolved settings, which is enough to repeat the run exactly.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import csv
import hashlib
import io
import json
import math
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import Fixed, kmeans_fit, local_pca_fit, pa_autoencode
from .data import (
    SplitSpec,
    gen_clusters2d,
    gen_synth_activations,
    load_mnist,
    split_and_subsample,
)
from .errors import ConfigError, ContractError
from .geometry import (
    KthOrderPowerDiagram,
    cells_group,
    cells_of,
    enc_to_diagram,
    label_color,
    lift_to_voronoi,
    pixel_centers,
    render_cells,
    svg_document,
)
from .sae import L0, L1, JumpReLU, NoPenalty, ReLU, SaeParams, TopK
from .trainer import TrainConfig, evaluate, pam_sgd_train, sgd_train

# -- settings schema ---------------------------------------------------------

# section -> key -> (kind, default)
SCHEMA = {
    "run": {
        "seed": ("int", 0),
        "seeds": ("intlist", [0, 1, 2]),
        "workers": ("int", 1),
    },
    "data": {
        "dataset": ("str", "clusters2d"),
        "n": ("int", 100),
        "noise": ("float", 0.05),
        "dim": ("int", 128),
        "dict_size": ("int", 512),
        "true_sparsity": ("int", 8),
        "synth_noise": ("float", 0.0),
        "train_fraction": ("float", 0.9),
        "subsample": ("float", 1.0),
        "split_seed": ("int", -1),
        "mnist_images": ("str", ""),
        "mnist_labels": ("str", ""),
    },
    "model": {
        "d": ("int", 80),
        "activation": ("str", "topk"),
        "k": ("int", 3),
        "tau": ("float", 0.0),
        "penalty": ("str", "none"),
        "lam": ("float", 0.0),
    },
    "train": {
        "method": ("str", "pam"),
        "epochs": ("int", 10),
        "t_max": ("int", 0),
        "eta": ("float", 0.003),
        "init": ("str", "uniform"),
        "unit_norm_dec": ("bool", False),
        "enc_decay": ("float", 0.0),
        "alpha": ("float", 0.0),
        "beta": ("float", 0.0),
    },
    "pam": {
        "batch": ("int", 1024),
        "sgd_steps": ("int", 1),
        "mu_enc": ("schedule", 0.0),
        "nu_enc": ("schedule", 0.0),
        "mu_dec": ("schedule", 0.0),
        "nu_dec": ("schedule", 0.0),
    },
    "sgd": {
        "batch": ("int", 128),
        "tied": ("bool", True),
        "prox": ("bool", False),
    },
    "sweep": {
        "axis": ("str", "training_fraction"),
        "values": ("floatlist", [0.01, 0.05]),
        "methods": ("strlist", ["pam", "sgd"]),
    },
    "bridge": {
        "n": ("int", 100),
        "d": ("int", 80),
        "k": ("int", 3),
        "steps": ("int", 5000),
        "lr": ("float", 0.008),
        "init": ("str", "data"),
        "clusters": ("int", 3),
        "pca_rank": ("int", 1),
        "kmeans_restarts": ("int", 10),
        "resolution": ("int", 160),
    },
    "geometry": {
        "params": ("str", ""),
        "diagram": ("str", ""),
        "k": ("int", 0),
        "bbox": ("floatlist", [-2.0, 2.0, -2.0, 2.0]),
        "resolution": ("int", 200),
        "points": ("str", ""),
        "lift": ("bool", False),
    },
}

CHOICES = {
    ("data", "dataset"): ("clusters2d", "synth_acts", "mnist"),
    ("model", "activation"): ("topk", "relu", "jumprelu"),
    ("model", "penalty"): ("none", "l1", "l0"),
    ("train", "method"): ("pam", "sgd"),
    ("train", "init"): ("uniform", "data"),
    ("bridge", "init"): ("uniform", "data"),
    ("sweep", "axis"): ("training_fraction", "K", "sgd_steps", "weight_decay", "cost_to_move"),
}

_BOOLS = {"true": True, "yes": True, "on": True, "1": True,
          "false": False, "no": False, "off": False, "0": False}


def default_settings():
    return {sec: {k: copy.deepcopy(v[1]) for k, v in keys.items()} for sec, keys in SCHEMA.items()}


def _split_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def coerce(section, key, value, line=None):
    """Convert a raw config value (string or JSON value) to the schema type."""
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]", line=line)
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key in [{section}]", line=line, key=f"{section}.{key}")
    kind = SCHEMA[section][key][0]
    try:
        if isinstance(value, str):
            raw = value.strip()
            if kind == "int":
                out = int(raw)
            elif kind == "float":
                out = float(raw)
            elif kind == "bool":
                if raw.lower() not in _BOOLS:
                    raise ValueError(f"not a boolean: {raw!r}")
                out = _BOOLS[raw.lower()]
            elif kind == "str":
                out = raw
            elif kind == "intlist":
                out = [int(t) for t in _split_list(raw)]
            elif kind == "floatlist":
                out = [float(t) for t in _split_list(raw)]
            elif kind == "strlist":
                out = _split_list(raw)
            elif kind == "schedule":
                vals = [float(t) for t in _split_list(raw)]
                out = vals[0] if len(vals) == 1 else vals
        else:
            if kind == "int":
                out = int(value)
            elif kind == "float":
                out = float(value)
            elif kind == "bool":
                out = bool(value)
            elif kind == "str":
                out = str(value)
            elif kind == "intlist":
                out = [int(v) for v in value]
            elif kind == "floatlist":
                out = [float(v) for v in value]
            elif kind == "strlist":
                out = [str(v) for v in value]
            elif kind == "schedule":
                out = [float(v) for v in value] if isinstance(value, list) else float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {kind} value {value!r}: {exc}", line=line, key=f"{section}.{key}")
    choices = CHOICES.get((section, key))
    if choices and out not in choices:
        raise ConfigError(
            f"{out!r} is not one of {', '.join(choices)}", line=line, key=f"{section}.{key}"
        )
    if kind in ("floatlist", "schedule") and not all(
        math.isfinite(v) for v in np.atleast_1d(out)
    ):
        raise ConfigError("values must be finite", line=line, key=f"{section}.{key}")
    return out


def _key_lines(text):
    """Line number of each ``section.key`` in an INI text."""
    lines = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = no
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", stripped)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), no)
    return lines


def parse_config_text(text):
    """Parse INI text into ``{section: {key: typed value}}``.

    Errors carry the offending line number and ``section.key``.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError("duplicate key", line=exc.lineno, key=f"{exc.section}.{exc.option}")
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", line=exc.lineno)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", line=exc.lineno)
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("cannot parse line", line=lineno)
    lines = _key_lines(text)
    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", line=lines.get((section, None)))
        for key, raw in parser.items(section):
            out.setdefault(section, {})[key] = coerce(
                section, key, raw, line=lines.get((section, key))
            )
    return out


def merge(base, layer):
    out = copy.deepcopy(base)
    for section, keys in layer.items():
        for key, value in keys.items():
            out.setdefault(section, {})[key] = copy.deepcopy(value)
    return out


def parse_assignment(text):
    """``section.key=value`` as given to ``--set``."""
    m = re.fullmatch(r"\s*([A-Za-z_]+)\.([A-Za-z_]+)\s*=(.*)", text)
    if not m:
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    section, key, value = m.group(1), m.group(2).lower(), m.group(3)
    return {section: {key: coerce(section, key, value)}}


def validate(settings, command):
    """Cross-key checks that a single coerce() call cannot see."""
    m, d = settings["model"], settings["model"]["d"]
    if d < 1:
        raise ConfigError("code dimension must be >= 1", key="model.d")
    if m["activation"] == "topk" and not 1 <= m["k"] <= d:
        raise ConfigError(f"TopK k={m['k']} must lie in [1, d={d}]", key="model.k")
    if settings["run"]["workers"] < 1:
        raise ConfigError("workers must be >= 1", key="run.workers")
    if command == "sweep":
        sw = settings["sweep"]
        if not sw["values"]:
            raise ConfigError("sweep needs at least one value", key="sweep.values")
        bad = [x for x in sw["methods"] if x not in ("pam", "sgd")]
        if bad or not sw["methods"]:
            raise ConfigError(f"sweep methods must be pam and/or sgd, got {sw['methods']}",
                              key="sweep.methods")
        for v in sw["values"]:
            if sw["axis"] == "K" and (v != int(v) or not 1 <= v <= d):
                raise ConfigError(f"K={v:g} must be an integer in [1, d={d}]", key="sweep.values")
            if sw["axis"] == "sgd_steps" and (v != int(v) or v < 1):
                raise ConfigError(f"sgd_steps={v:g} must be an integer >= 1", key="sweep.values")
            if sw["axis"] == "training_fraction" and not 0 < v <= 1:
                raise ConfigError(f"training fraction {v:g} must lie in (0, 1]",
                                  key="sweep.values")
            if sw["axis"] in ("weight_decay", "cost_to_move") and v < 0:
                raise ConfigError(f"{sw['axis']} value {v:g} must be >= 0", key="sweep.values")
    if command == "bridge":
        b = settings["bridge"]
        if not 1 <= b["k"] <= b["d"]:
            raise ConfigError("bridge TopK k must lie in [1, d]", key="bridge.k")
        if not settings["run"]["seeds"]:
            raise ConfigError("need at least one seed", key="run.seeds")
        if not 0 <= b["pca_rank"] <= 2:
            raise ConfigError("pca_rank must lie in [0, 2] for 2-D data", key="bridge.pca_rank")
    if command == "geometry":
        g = settings["geometry"]
        if bool(g["params"]) == bool(g["diagram"]):
            raise ConfigError("give exactly one of geometry.params or geometry.diagram")
        if len(g["bbox"]) != 4:
            raise ConfigError("bbox needs xmin,xmax,ymin,ymax", key="geometry.bbox")
    return settings


def resolve(args, command):
    """Defaults < manifest or config file < named flags < --set."""
    settings = default_settings()
    if getattr(args, "manifest", None):
        doc = json.loads(Path(args.manifest).read_text())
        if doc.get("command") != command:
            raise ConfigError(
                f"manifest was written by '{doc.get('command')}', not '{command}'"
            )
        layer = {
            sec: {k: coerce(sec, k, v) for k, v in keys.items()}
            for sec, keys in doc["settings"].items()
        }
        settings = merge(settings, layer)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}")
        settings = merge(settings, parse_config_text(text))
    named = {}
    if args.seed is not None:
        named.setdefault("run", {})["seed"] = args.seed
        named["run"]["seeds"] = [args.seed]
    if args.seeds is not None:
        named.setdefault("run", {})["seeds"] = coerce("run", "seeds", args.seeds)
    if args.workers is not None:
        named.setdefault("run", {})["workers"] = args.workers
    if args.mnist_images is not None:
        named.setdefault("data", {})["mnist_images"] = args.mnist_images
    if args.mnist_labels is not None:
        named.setdefault("data", {})["mnist_labels"] = args.mnist_labels
    settings = merge(settings, named)
    for assignment in args.set or []:
        settings = merge(settings, parse_assignment(assignment))
    return validate(settings, command)


# -- building blocks ---------------------------------------------------------


def build_activation(model):
    if model["activation"] == "topk":
        return TopK(model["k"])
    if model["activation"] == "jumprelu":
        return JumpReLU(model["tau"])
    return ReLU()


def build_penalty(model):
    if model["penalty"] == "l1":
        return L1(model["lam"])
    if model["penalty"] == "l0":
        return L0(model["lam"])
    return NoPenalty()


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_dataset(settings, seed):
    """Generate or load the configured dataset and split it.

    Returns ``(train, test, provenance)``.
    """
    data = settings["data"]
    kind = data["dataset"]
    prov = {"dataset": kind}
    if kind == "clusters2d":
        ds = gen_clusters2d(data["n"], seed=seed, noise=data["noise"])
    elif kind == "synth_acts":
        ds = gen_synth_activations(
            data["n"], data["dim"], data["dict_size"], data["true_sparsity"],
            noise=data["synth_noise"], seed=seed,
        )
    else:
        if not data["mnist_images"]:
            raise ConfigError("MNIST needs --mnist-images", key="data.mnist_images")
        for key in ("mnist_images", "mnist_labels"):
            if data[key] and not Path(data[key]).is_file():
                raise FileNotFoundError(f"{key.replace('_', ' ')} file not found: {data[key]}")
        ds = load_mnist(data["mnist_images"], data["mnist_labels"] or None)
        prov["mnist_images_sha256"] = file_digest(data["mnist_images"])
    split_seed = seed if data["split_seed"] < 0 else data["split_seed"]
    spec = SplitSpec(
        data["train_fraction"],
        data["subsample"],
        seed=split_seed,
        subsample_seed=None if data["split_seed"] < 0 else seed,
    )
    if data["train_fraction"] >= 1.0:
        # no held-out part: evaluate on the training samples themselves
        train, _ = split_and_subsample(ds, spec)
        test = ds
    else:
        train, test = split_and_subsample(ds, spec)
    prov.update(n_train=len(train), n_test=len(test))
    return train, test, prov


def train_config(settings, method, n_train, seed):
    t, model = settings["train"], settings["model"]
    common = dict(
        activation=build_activation(model),
        penalty=build_penalty(model),
        eta=t["eta"],
        alpha=t["alpha"],
        beta=t["beta"],
        enc_decay=t["enc_decay"],
        seed=seed,
        init=t["init"],
        unit_norm_dec=t["unit_norm_dec"],
    )
    pam = settings["pam"]
    costs = {k: pam[k] for k in ("mu_enc", "nu_enc", "mu_dec", "nu_dec")}
    if method == "pam":
        t_max = t["t_max"] or t["epochs"] * math.ceil(n_train / pam["batch"])
        return TrainConfig(t_max=t_max, batch=pam["batch"], sgd_steps=pam["sgd_steps"],
                           **costs, **common)
    sgd = settings["sgd"]
    return TrainConfig(t_max=t["epochs"], batch=sgd["batch"], sgd_prox=sgd["prox"],
                       **costs, **common)


def run_training(settings, method, seed):
    """One training run. Returns ``(params, log, provenance)``."""
    train, test, prov = load_dataset(settings, seed)
    cfg = train_config(settings, method, len(train), seed)
    d = settings["model"]["d"]
    if method == "pam":
        params, log = pam_sgd_train(train, test, cfg, d=d)
    else:
        params, log = sgd_train(train, test, cfg, d=d, tied=settings["sgd"]["tied"])
    prov.update(t_max=cfg.t_max, **log.meta)
    return params, log, prov


def apply_axis(settings, axis, value):
    out = copy.deepcopy(settings)
    if axis == "training_fraction":
        out["data"]["subsample"] = float(value)
    elif axis == "K":
        out["model"]["k"] = int(value)
    elif axis == "sgd_steps":
        out["pam"]["sgd_steps"] = int(value)
    elif axis == "weight_decay":
        out["train"]["alpha"] = out["train"]["beta"] = float(value)
    elif axis == "cost_to_move":
        for key in ("mu_enc", "nu_enc", "mu_dec", "nu_dec"):
            out["pam"][key] = float(value)
    return out


# -- output helpers ----------------------------------------------------------


def write_text(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def write_manifest(out_dir, command, settings, outputs, extra=None):
    doc = {
        "command": command,
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "settings": settings,
        "outputs": sorted(str(Path(p).relative_to(out_dir)) for p in outputs),
    }
    if extra:
        doc.update(extra)
    write_text(out_dir / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def fmt(x):
    return repr(float(x))


def polyline_svg(series, title, width=480, height=300):
    """Simple line chart of one or more named series on a log-free y axis."""
    pad = 40
    allv = [v for ys in series.values() for v in ys if math.isfinite(v)]
    lo, hi = (min(allv), max(allv)) if allv else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    n = max(len(ys) for ys in series.values()) if series else 1
    parts = [f'<text x="{pad}" y="20" font-family="sans-serif" font-size="13">{title}</text>',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
             'fill="none" stroke="#888"/>']
    for idx, (name, ys) in enumerate(series.items()):
        color = label_color((idx,))
        pts = []
        for i, y in enumerate(ys):
            if not math.isfinite(y):
                continue
            px = pad + (width - 2 * pad) * (i / max(n - 1, 1))
            py = height - pad - (height - 2 * pad) * (y - lo) / (hi - lo)
            pts.append(f"{px:.2f},{py:.2f}")
        parts.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad - 90}" y="{pad + 16 * (idx + 1)}" fill="{color}" '
                     f'font-family="sans-serif" font-size="12">{name}</text>')
    parts.append(f'<text x="4" y="{pad + 4}" font-family="sans-serif" font-size="10">{hi:.3g}</text>')
    parts.append(f'<text x="4" y="{height - pad}" font-family="sans-serif" '
                 f'font-size="10">{lo:.3g}</text>')
    return svg_document(["<g>", *parts, "</g>"], width, height)


# -- commands ----------------------------------------------------------------


def cmd_train(settings, out_dir):
    method = settings["train"]["method"]
    seed = settings["run"]["seed"]
    params, log, prov = run_training(settings, method, seed)
    outputs = [
        write_text(out_dir / "runlog.csv", log.to_csv(timing=False)),
        write_text(out_dir / "timing.csv", log.timing_csv()),
        write_text(out_dir / "params.json", params.to_json() + "\n"),
        write_text(out_dir / "loss.svg", polyline_svg(
            {"test_mse": [r.test_mse for r in log.records]}, f"{method} test MSE")),
    ]
    write_manifest(out_dir, "train", settings, outputs, {"provenance": prov})
    last = log.records[-1] if log.records else None
    if last is not None:
        print(f"{method}: {len(log.records)} iterations, test MSE {last.test_mse:.6g}, "
              f"active fraction {last.active_frac:.4f}")
    return 0


SWEEP_COLUMNS = ("axis", "value", "method", "seed", "test_mse", "active_frac", "error")


def _sweep_job(job):
    settings, axis, value, method, seed, run_dir = job
    try:
        params, log, prov = run_training(apply_axis(settings, axis, value), method, seed)
        write_text(run_dir / "runlog.csv", log.to_csv(timing=False))
        write_text(run_dir / "params.json", params.to_json() + "\n")
        last = log.records[-1]
        return {"test_mse": fmt(last.test_mse), "active_frac": fmt(last.active_frac), "error": ""}
    except Exception as exc:  # recorded as an error row, never dropped
        return {"test_mse": "", "active_frac": "", "error": f"{type(exc).__name__}: {exc}"}


def cmd_sweep(settings, out_dir):
    sw = settings["sweep"]
    axis = sw["axis"]
    jobs, keys = [], []
    for value in sw["values"]:
        for method in sw["methods"]:
            for seed in settings["run"]["seeds"]:
                run_dir = out_dir / "runs" / f"{axis}={value:g}" / method / f"seed{seed}"
                jobs.append((settings, axis, value, method, seed, run_dir))
                keys.append((axis, f"{value:g}", method, str(seed)))
    workers = settings["run"]["workers"]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for key, res in zip(keys, results):
        writer.writerow([*key, res["test_mse"], res["active_frac"], res["error"]])
    outputs = [write_text(out_dir / "sweep.csv", buf.getvalue())]
    outputs += sorted(out_dir.glob("runs/**/*.*"))
    write_manifest(out_dir, "sweep", settings, outputs)
    n_err = sum(1 for r in results if r["error"])
    print(f"sweep over {axis}: {len(results)} runs, {n_err} failed")
    return 0 if n_err == 0 else 1


def bridge_seed(settings, seed):
    """The three bridge models on one seeded 2-D cluster dataset."""
    b = settings["bridge"]
    x = gen_clusters2d(b["n"], seed=seed, noise=settings["data"]["noise"]).samples
    km = kmeans_fit(x, b["clusters"], seed=seed, n_init=b["kmeans_restarts"])
    mse_kmeans = km.objective / len(x)
    pca = local_pca_fit(x, km.assignment, Fixed(b["pca_rank"]))
    recon_pca = pa_autoencode(x, km.assignment, pca)
    mse_pca = float(np.sum((recon_pca - x) ** 2)) / len(x)
    cfg = TrainConfig(activation=TopK(b["k"]), t_max=b["steps"], eta=b["lr"], batch=len(x),
                      seed=seed, init=b["init"])
    params, _ = sgd_train(x, x, cfg, d=b["d"])
    mse_sae = evaluate(params, TopK(b["k"]), x)[0]
    return {"x": x, "kmeans": km, "pca": pca, "recon_pca": recon_pca, "params": params,
            "mse_kmeans": mse_kmeans, "mse_sae": mse_sae, "mse_pca": mse_pca}


def bridge_panels(res, settings, size=360):
    b = settings["bridge"]
    x = res["x"]
    pad = 0.3
    bbox = (x[:, 0].min() - pad, x[:, 0].max() + pad, x[:, 1].min() - pad, x[:, 1].max() + pad)
    res_px = b["resolution"]
    xs, ys = pixel_centers(bbox, res_px)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    km = res["kmeans"]
    km_diag = KthOrderPowerDiagram(km.centroids, np.zeros(len(km.centroids)), 1)
    km_labels = cells_of(grid, km_diag).reshape(res_px, res_px, 1)
    sae_diag = enc_to_diagram(res["params"], b["k"])
    sae_labels = cells_of(grid, sae_diag).reshape(res_px, res_px, b["k"])
    groups = [
        cells_group(km_labels, bbox, km.centroids, x, size,
                    f"k-means, MSE {res['mse_kmeans']:.4f}", x0=0),
        cells_group(sae_labels, bbox, None, x, size,
                    f"Top{b['k']} SAE, MSE {res['mse_sae']:.4f}", x0=size + 10),
    ]
    # third panel: k-means cells with each point joined to its local-PCA image
    g = cells_group(km_labels, bbox, None, None, size,
                    f"k-means + {b['pca_rank']}-PCA, MSE {res['mse_pca']:.4f}", x0=2 * (size + 10))
    xmin, xmax, ymin, ymax = bbox
    lines = []
    for p, q in zip(x, res["recon_pca"]):
        u0, v0 = (p[0] - xmin) / (xmax - xmin) * size, (ymax - p[1]) / (ymax - ymin) * size
        u1, v1 = (q[0] - xmin) / (xmax - xmin) * size, (ymax - q[1]) / (ymax - ymin) * size
        lines.append(f'<line x1="{u0:.3f}" y1="{v0:.3f}" x2="{u1:.3f}" y2="{v1:.3f}" '
                     'stroke="black" stroke-width="0.6"/>')
        lines.append(f'<circle cx="{u1:.3f}" cy="{v1:.3f}" r="1.6" fill="black"/>')
    g = g.replace("</g>", "\n".join(lines) + "\n</g>")
    groups.append(g)
    return svg_document(groups, 3 * size + 20, size)


BRIDGE_COLUMNS = ("seed", "mse_kmeans", "mse_sae", "mse_pca")


def cmd_bridge(settings, out_dir):
    rows, outputs = [], []
    for seed in settings["run"]["seeds"]:
        res = bridge_seed(settings, seed)
        rows.append((seed, res["mse_kmeans"], res["mse_sae"], res["mse_pca"]))
        outputs.append(write_text(out_dir / f"bridge_seed{seed}.svg", bridge_panels(res, settings)))
        outputs.append(write_text(out_dir / f"sae_seed{seed}.json", res["params"].to_json() + "\n"))
        ordered = res["mse_kmeans"] > res["mse_sae"] > res["mse_pca"]
        print(f"seed {seed}: kmeans {res['mse_kmeans']:.5f}  sae {res['mse_sae']:.5f}  "
              f"kmeans+pca {res['mse_pca']:.5f}  ordering {'holds' if ordered else 'fails'}")
    lines = [",".join(BRIDGE_COLUMNS)]
    lines += [f"{s},{fmt(a)},{fmt(b)},{fmt(c)}" for s, a, b, c in rows]
    outputs.append(write_text(out_dir / "bridge.csv", "\n".join(lines) + "\n"))
    write_manifest(out_dir, "bridge", settings, outputs)
    return 0


def cmd_geometry(settings, out_dir):
    g = settings["geometry"]
    if g["params"]:
        params = SaeParams.from_json(Path(g["params"]).read_text())
        k = g["k"] or settings["model"]["k"]
        diag = enc_to_diagram(params, k)
    else:
        diag = KthOrderPowerDiagram.from_dict(json.loads(Path(g["diagram"]).read_text()))
    points = None
    if g["points"]:
        if g["points"] == "clusters2d":
            points = gen_clusters2d(settings["data"]["n"], seed=settings["run"]["seed"]).samples
        else:
            points = np.loadtxt(g["points"], delimiter=",", skiprows=1, ndmin=2)[:, :2]
    render = render_cells(diag, tuple(g["bbox"]), g["resolution"], points=points)
    outputs = [
        write_text(out_dir / "cells.svg", render.svg),
        write_text(out_dir / "cells.csv", render.to_csv()),
    ]
    if g["lift"]:
        lifted = lift_to_voronoi(diag)
        lines = ["index," + ",".join(f"c{j}" for j in range(lifted.shape[1] - 1)) + ",zeta"]
        lines += [f"{i}," + ",".join(fmt(v) for v in row) for i, row in enumerate(lifted)]
        outputs.append(write_text(out_dir / "lift.csv", "\n".join(lines) + "\n"))
    write_manifest(out_dir, "geometry", settings, outputs)
    print(f"{len(render.distinct_labels())} cells visible at {g['resolution']}px")
    return 0


def cmd_gen_data(settings, out_dir):
    data = settings["data"]
    if data["dataset"] == "mnist":
        raise ConfigError("gen-data makes clusters2d or synth_acts", key="data.dataset")
    seed = settings["run"]["seed"]
    if data["dataset"] == "clusters2d":
        ds = gen_clusters2d(data["n"], seed=seed, noise=data["noise"])
    else:
        ds = gen_synth_activations(data["n"], data["dim"], data["dict_size"],
                                   data["true_sparsity"], noise=data["synth_noise"], seed=seed)
    outputs = [write_text(out_dir / "data.csv", ds.to_csv())]
    write_manifest(out_dir, "gen-data", settings, outputs)
    print(f"wrote {len(ds)} samples of dim {ds.dim}")
    return 0


COMMANDS = {
    "bridge": cmd_bridge,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "geometry": cmd_geometry,
    "gen-data": cmd_gen_data,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style settings file")
    common.add_argument("--manifest", help="re-run from a previous run's manifest.json")
    common.add_argument("--seed", type=int, help="run seed (also the only seed for multi-seed commands)")
    common.add_argument("--seeds", help="comma-separated seeds for bridge and sweep")
    common.add_argument("--out-dir", default="out", help="output directory (default: out)")
    common.add_argument("--workers", type=int, help="parallel runs for sweep")
    common.add_argument("--mnist-images", help="MNIST IDX image file (.gz allowed)")
    common.add_argument("--mnist-labels", help="MNIST IDX label file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one setting; repeatable")
    parser = argparse.ArgumentParser(
        prog="saegeom", description="Sparse autoencoder geometry and training experiments."
    )
    parser.add_argument("--version", action="version", version=f"saegeom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "bridge": "k-means vs TopK SAE vs k-means + local PCA on 2-D clusters",
        "train": "one PAM-SGD or SGD training run",
        "sweep": "PAM vs SGD over a hyperparameter axis",
        "geometry": "render the cells of a 2-D encoder or power diagram",
        "gen-data": "write a generated dataset as CSV",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        settings = resolve(args, args.command)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](settings, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ContractError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
