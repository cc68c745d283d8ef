"""Config-driven sweeps writing seeded, hash-stamped CSV files.

A run is described by a nested mapping (YAML on disk). Resolution order:
built-in link defaults, then the scale profile (``desk`` or ``full``), then
the user file, then command-line overrides. The SHA-256 of the resolved
mapping (minus output-only keys) goes into every CSV header; appending to a
file stamped with another hash is refused.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import autoencoder as ae
from . import baa, bounds
from .channel import ComponentSpec, ConfigError, LinkConfig, channel_ensemble

log = logging.getLogger(__name__)

LINK_PROFILE = "baseline-link"
TARGET_RATE = 5.094

DEFAULTS = {
    "name": LINK_PROFILE,
    "link": {
        "n_modes": 2,
        "v_pi": 1.0,
        "p_tot_dbm": 3.0,
        "tied_splices": False,
        "components": {
            "mux": {"mean_xt_db": [-18.0, -15.0], "loss_db": [0.7, 1.4], "xt_range_db": 6.0},
            "spl": {"mean_xt_db": [-25.0, -25.0], "loss_db": [0.04, 0.04], "xt_range_db": 6.0},
            "demux": {"mean_xt_db": [-11.0, -11.0], "loss_db": [1.5, 3.0], "xt_range_db": 6.0},
        },
    },
    "methods": ["all"],
    "seeds": [0],
    "sweeps": {
        "snr_db": [float(s) for s in range(0, 31)],
        "m_list": [8, 16],
        "xt2_demux_db": [float(x) for x in range(-20, -4)],
        "fixed_snr_db": [float(s) for s in range(10, 31, 5)],
    },
    "bounds": {"n_channels": 200, "grid_step_db": 0.05},
    "baa": {
        "tol": 1e-6,
        "max_iter": 5000,
        "n_iter_channels": 32,
        "n_eval_channels": 200,
        "bins_per_sigma": 4,
        "power_search": False,
        "grid_step_db": 0.25,
        "p1_window_dbm": [-1.5, 2.0],
    },
    "ae": {
        "m": 8,
        "snr_db": 20.0,
        "n_train_symbols": 1_000_000,
        "n_test_symbols": 100_000,
        "n_fit_symbols": 100_000,
        "batch_size": 200,
        "learn_power": True,
        "warm_start_steps": 2000,
        "pairs": [["Prec1", "GaussianAux"], ["Prec2", "Det1"], ["Prec3", "Det1"]],
        "fixed_pairs": [["Prec2", "Det1"], ["Prec3", "Det2"]],
        "target_rate": TARGET_RATE,
    },
}

SCALE_PROFILES = {
    "desk": {
        "sweeps": {
            "snr_db": [float(s) for s in range(0, 31, 5)],
            "m_list": [8, 16],
            "xt2_demux_db": [-20.0, -17.5, -15.0, -12.5, -10.0, -7.5, -5.0],
        },
        "ae": {"n_train_symbols": 200_000},
    },
    "full": {
        "sweeps": {"m_list": [32]},
        "baa": {"power_search": True},
        "ae": {"n_train_symbols": 1_000_000},
    },
}

_OUTPUT_ONLY = ("out_dir", "threads", "timings")

COLUMNS = ["method", "kind", "m", "snr_db", "xt2_db", "alloc_mw", "bits", "seed", "runtime_s", "status"]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    data: dict
    profile: str = "desk"
    out_dir: str = "results"
    threads: int = 1
    timings: bool = False

    def __post_init__(self):
        d = self.data
        for key in ("snr_db", "m_list", "xt2_demux_db"):
            if not d["sweeps"].get(key):
                raise ConfigError(f"sweeps.{key} must be a nonempty list")
        if not d.get("seeds"):
            raise ConfigError("seeds must be given explicitly")
        if not d.get("methods"):
            raise ConfigError("no method selected")
        unknown = set(d["methods"]) - {"bounds", "baa", "ae", "all"}
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        self.link()  # validates the component block

    @classmethod
    def load(cls, path=None, profile="desk", overrides=None, **kw):
        if profile not in SCALE_PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(SCALE_PROFILES)}")
        data = _merge(DEFAULTS, SCALE_PROFILES[profile])
        if path is not None:
            try:
                with open(path) as f:
                    user = yaml.safe_load(f) or {}
            except (OSError, yaml.YAMLError) as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            if not isinstance(user, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
            data = _merge(data, user)
        if overrides:
            data = _merge(data, overrides)
        return cls(data, profile=profile, **kw)

    def wants(self, method: str) -> bool:
        return "all" in self.data["methods"] or method in self.data["methods"]

    @property
    def seeds(self) -> list:
        return [int(s) for s in self.data["seeds"]]

    def link(self, **changes) -> LinkConfig:
        lk = self.data["link"]
        comps = {}
        try:
            for name in ("mux", "spl", "demux"):
                c = lk["components"][name]
                comps[name] = ComponentSpec(tuple(c["mean_xt_db"]), tuple(c["loss_db"]),
                                            float(c.get("xt_range_db", 6.0)))
            base = LinkConfig(n_modes=int(lk["n_modes"]), v_pi=float(lk["v_pi"]),
                              p_tot_dbm=float(lk["p_tot_dbm"]), tied_splices=bool(lk["tied_splices"]),
                              **comps)
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed link block: {e}") from e
        return base.replace(**changes) if changes else base

    def config_hash(self) -> str:
        blob = json.dumps({"profile": self.profile, **self.data}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dump(self) -> str:
        return yaml.safe_dump({"profile": self.profile, **self.data}, sort_keys=True)


@dataclass
class ResultRow:
    method: str
    kind: str
    m: int
    snr_db: float
    xt2_db: float
    alloc_mw: tuple = ()
    bits: float = float("nan")
    seed: int = 0
    runtime_s: float | None = None
    status: str = "ok"

    def key(self):
        return (self.method, self.kind, self.m, _fmt(self.snr_db), _fmt(self.xt2_db), self.seed)

    def cells(self, timings: bool) -> list:
        return [
            self.method,
            self.kind,
            str(self.m),
            _fmt(self.snr_db),
            _fmt(self.xt2_db),
            ";".join(f"{p:.6f}" for p in self.alloc_mw),
            _fmt(self.bits, 6),
            str(self.seed),
            f"{self.runtime_s:.3f}" if timings and self.runtime_s is not None else "-",
            self.status,
        ]


def _fmt(v, digits=3):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{float(v):.{digits}f}"


class CsvSink:
    """Append-only CSV with a ``# config_hash`` header line."""

    def __init__(self, path, config_hash: str, timings: bool = False, meta: dict | None = None):
        self.path = path
        self.timings = timings
        self.keys = set()
        if os.path.exists(path):
            with open(path) as f:
                first = f.readline().strip()
                if first != f"# config_hash: {config_hash}":
                    raise ConfigError(f"{path} was written under a different config ({first!r})")
                for row in csv.reader(line for line in f if not line.startswith("#")):
                    if row and row[0] != "method":
                        self.keys.add((row[0], row[1], int(row[2]), row[3], row[4], int(row[7])))
        else:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "w", newline="") as f:
                f.write(f"# config_hash: {config_hash}\n")
                for k, v in sorted((meta or {}).items()):
                    f.write(f"# {k}: {v}\n")
                csv.writer(f, lineterminator="\n").writerow(COLUMNS)

    def write(self, rows) -> int:
        fresh = [r for r in rows if r.key() not in self.keys]
        if fresh:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            for r in fresh:
                w.writerow(r.cells(self.timings))
                self.keys.add(r.key())
            with open(self.path, "a", newline="") as f:
                f.write(buf.getvalue())
        return len(fresh)


def read_rows(path) -> list[dict]:
    with open(path) as f:
        lines = [line for line in f if not line.startswith("#")]
    rows = list(csv.DictReader(lines))
    if lines and (not rows and lines[0].strip().split(",") != COLUMNS):
        raise ValueError(f"{path}: unexpected header")
    for r in rows:
        if set(r) != set(COLUMNS):
            raise ValueError(f"{path}: schema mismatch, columns {sorted(r)}")
    return rows


# ------------------------------------------------------------------ jobs


def _guard(job):
    """Run one sweep point; failures become a marked row instead of aborting."""
    template, fn = job
    t0 = time.perf_counter()
    try:
        rows = fn()
    except (ArithmeticError, np.linalg.LinAlgError, ae.TrainingDivergedError, ae.FitError,
            ConfigError, ValueError, FloatingPointError) as e:
        log.warning("%s failed: %s", template, e)
        rows = [ResultRow(**{**template, "status": f"failed:{type(e).__name__}"})]
    dt = time.perf_counter() - t0
    for r in rows:
        r.runtime_s = dt
    return rows


def _execute(cfg: ExperimentConfig, jobs, sink: CsvSink) -> list:
    out = []
    if cfg.threads == 1:
        for job in jobs:
            rows = _guard(job)
            sink.write(rows)
            out += rows
    else:
        # map keeps submission order, so the file does not depend on scheduling
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for rows in pool.map(_guard, jobs):
                sink.write(rows)
                out += rows
    return out


def _sink(cfg, name, command):
    return CsvSink(os.path.join(cfg.out_dir, name), cfg.config_hash(), cfg.timings,
                   {"command": command, "profile": cfg.profile})


def _bounds_job(cfg, snr, seed):
    def run():
        link = cfg.link(snr_db=snr)
        b = cfg.data["bounds"]
        h = channel_ensemble(link, int(b["n_channels"]), seed)
        rep = bounds.optimize_allocation_grid(h, link.sigma_w, float(b["grid_step_db"]), p_tot=link.p_tot)
        alloc = tuple(rep.best_alloc)
        return [ResultRow("ub", kind, 0, snr, float("nan"), alloc, val, seed)
                for kind, val in (("ub1", rep.ub1_bits), ("ub2", rep.ub2_bits), ("min_ub", rep.min_ub_bits))]
    return dict(method="ub", kind="min_ub", m=0, snr_db=snr, xt2_db=float("nan"), seed=seed), run


def _baa_kwargs(cfg, seed):
    b = cfg.data["baa"]
    return dict(tol=float(b["tol"]), max_iter=int(b["max_iter"]), seed=seed,
                n_iter_channels=int(b["n_iter_channels"]), n_eval_channels=int(b["n_eval_channels"]),
                bins_per_sigma=int(b["bins_per_sigma"]))


def _baa_rows(cfg, link, m, seed, xt2=float("nan"), method="baa"):
    b = cfg.data["baa"]
    kw = _baa_kwargs(cfg, seed)
    if b["power_search"]:
        win = b.get("p1_window_dbm")
        res = baa.baa_power_search(link, m, grid_step_db=float(b["grid_step_db"]),
                                   p1_window_dbm=tuple(win) if win else None, **kw)
    else:
        res = baa.baa_capacity(link, m, **kw)
    alloc = tuple(res.alloc)
    status = "ok" if res.converged else "max_iter"
    return [ResultRow(method, "baa", m, link.snr_db, xt2, alloc, res.mi_bits, seed, status=status),
            ResultRow(method, "uniform", m, link.snr_db, xt2, alloc, res.uniform_mi_bits, seed, status=status)]


def _baa_job(cfg, snr, m, seed, link=None, method="baa"):
    def run():
        return _baa_rows(cfg, (link or cfg.link()).replace(snr_db=snr), m, seed, method=method)
    return dict(method=method, kind="baa", m=m, snr_db=snr, xt2_db=float("nan"), seed=seed), run


def _train_cfg(cfg, pk, dk, seed) -> ae.TrainConfig:
    a = cfg.data["ae"]
    return ae.TrainConfig(precoder_kind=pk, detector_kind=dk, batch_size=int(a["batch_size"]),
                          n_train_symbols=int(a["n_train_symbols"]), n_test_symbols=int(a["n_test_symbols"]),
                          n_fit_symbols=int(a["n_fit_symbols"]), learn_power=bool(a["learn_power"]),
                          warm_start_steps=int(a["warm_start_steps"]), seed=seed)


def _ae_job(cfg, link, pk, dk, seed, xt2=float("nan")):
    tag = f"{pk}+{dk}"

    def run():
        models, rep, _ = ae.train(link, _train_cfg(cfg, pk, dk, seed))
        alloc = tuple(models.powers)
        rows = [ResultRow(tag, "rate", link.mod_order, link.snr_db, xt2, alloc, rep.reported_rate, seed)]
        rows += [ResultRow(tag, f"mode{i + 1}", link.mod_order, link.snr_db, xt2, alloc, float(r), seed)
                 for i, r in enumerate(rep.per_mode_rate)]
        return rows
    return dict(method=tag, kind="rate", m=link.mod_order, snr_db=link.snr_db, xt2_db=xt2, seed=seed), run


# ------------------------------------------------------------ sweeps


def run_capacity_sweep(cfg: ExperimentConfig, name="capacity.csv") -> list:
    if not (cfg.wants("bounds") or cfg.wants("baa")):
        raise ConfigError("capacity sweep needs method bounds and/or baa")
    sink = _sink(cfg, name, "capacity")
    jobs = []
    for seed in cfg.seeds:
        for snr in cfg.data["sweeps"]["snr_db"]:
            if cfg.wants("bounds"):
                jobs.append(_bounds_job(cfg, float(snr), seed))
            if cfg.wants("baa"):
                jobs += [_baa_job(cfg, float(snr), int(m), seed) for m in cfg.data["sweeps"]["m_list"]]
    return _execute(cfg, jobs, sink)


def run_ae_train(cfg: ExperimentConfig, name="ae.csv") -> list:
    a = cfg.data["ae"]
    link = cfg.link(mod_order=int(a["m"]), snr_db=float(a["snr_db"]))
    sink = _sink(cfg, name, "ae-train")
    jobs = [_ae_job(cfg, link, pk, dk, seed) for pk, dk in a["pairs"] for seed in cfg.seeds]
    return _execute(cfg, jobs, sink)


def crossing_point(xt_db, rates, target=TARGET_RATE) -> float:
    """First XT (ascending) where the rate falls through ``target``; NaN if it never does."""
    xt = np.asarray(xt_db, dtype=float)
    r = np.asarray(rates, dtype=float)
    order = np.argsort(xt)
    xt, r = xt[order], r[order]
    for j in range(len(xt) - 1):
        if r[j] >= target > r[j + 1]:
            return float(xt[j] + (r[j] - target) * (xt[j + 1] - xt[j]) / (r[j] - r[j + 1]))
    return float("nan")


def run_xt_sweep(cfg: ExperimentConfig, name="xt_sweep.csv") -> list:
    a = cfg.data["ae"]
    target = float(a["target_rate"])
    sink = _sink(cfg, name, "xt-sweep")
    jobs = []
    xts = [float(x) for x in cfg.data["sweeps"]["xt2_demux_db"]]
    for pk, dk in a["pairs"]:
        for xt in xts:
            base = cfg.link(mod_order=int(a["m"]), snr_db=float(a["snr_db"]))
            demux = base.demux.with_xt(1, xt)
            link = base.replace(demux=demux)
            jobs += [_ae_job(cfg, link, pk, dk, seed, xt) for seed in cfg.seeds]
    rows = _execute(cfg, jobs, sink)
    summary = []
    for pk, dk in a["pairs"]:
        tag = f"{pk}+{dk}"
        mean = [np.mean([r.bits for r in rows if r.method == tag and r.kind == "rate" and r.xt2_db == xt])
                for xt in xts]
        c = crossing_point(xts, mean, target)
        summary.append(ResultRow(tag, "crossing", int(a["m"]), float(a["snr_db"]), c, (), target, -1,
                                 status="ok" if np.isfinite(c) else "no-crossing"))
    sink.write(summary)
    return rows + summary


def run_fixed_channel(cfg: ExperimentConfig, name="fixed_channel.csv") -> list:
    a = cfg.data["ae"]
    m = int(a["m"])
    link = cfg.link(mod_order=m).without_drift()
    sink = _sink(cfg, name, "fixed-channel")
    jobs = []
    for seed in cfg.seeds:
        for snr in cfg.data["sweeps"]["fixed_snr_db"]:
            snr = float(snr)
            jobs.append(_baa_job(cfg, snr, m, seed, link=link))
            jobs += [_ae_job(cfg, link.replace(snr_db=snr), pk, dk, seed) for pk, dk in a["fixed_pairs"]]
    return _execute(cfg, jobs, sink)
