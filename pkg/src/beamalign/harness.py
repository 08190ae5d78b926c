"""Experiment grid runner, report emission and the command-line interface."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import baselines as bl
from .channel import Scenario, gen_dataset, load_dataset, save_dataset
from .codebook import build_binary, build_two_tier, dft_codebook, oversampled_codebook
from .config import PRESETS, SystemConfig
from .hban import HbanModel, TrainConfig, evaluate, evaluate_pcs
from .labels import (
    assign_clusters,
    beam_directions,
    elbow_select_g,
    kmeans,
    optimal_beams,
    read_label_sidecar,
    write_label_sidecar,
)

log = logging.getLogger("beamalign")

REPORT_VERSION = "beamalign-report v1"
MISO_METHODS = ("hban", "hban-pcs", "one-tier", "amcf", "exhaustive", "two-tier", "binary")
MIMO_METHODS = ("hban", "hban-pcs", "one-tier", "separate", "exhaustive", "two-tier-joint",
                "two-tier-hybrid", "binary")
CLASSICAL = ("exhaustive", "two-tier", "binary", "two-tier-joint", "two-tier-hybrid")
CELL_COLUMNS = ("method", "budget", "n1", "n2", "noise_psd", "seed", "accuracy",
                "spectral_efficiency", "sweep_count", "status")
AGG_COLUMNS = ("x", "series", "budget", "noise_psd", "n_seeds", "mean_accuracy", "std_accuracy",
               "mean_spectral_efficiency", "std_spectral_efficiency", "sweep_count")

# Probing schedules (N1, N2).
MISO_SCHEDULE = [(3, 3), (4, 4), (4, 6), (6, 6), (6, 8), (6, 10), (6, 12), (6, 14)]
MIMO_SCHEDULE = [(4, 16)]
DESK_SCHEDULE = [(2, 2), (3, 3), (4, 4), (4, 6)]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    preset: str = "desk-miso"
    system: dict = field(default_factory=dict)  # overrides of preset fields
    dataset: str | None = None
    scenario: dict = field(default_factory=dict)
    n_samples: int = 20000
    data_seed: int = 0
    methods: list = field(default_factory=lambda: ["hban", "hban-pcs", "one-tier"])
    budgets: list = field(default_factory=lambda: [list(b) for b in DESK_SCHEDULE])
    noise_psds: list = field(default_factory=lambda: [-161.0])
    noise_budget: list = field(default_factory=lambda: [6, 8])
    seeds: list = field(default_factory=lambda: [0])
    trials: int = 1
    output_dir: str = "out"
    train: dict = field(default_factory=lambda: {"epochs": 150, "lr": 3e-3, "patience": 10})
    g: int | None = None
    g_candidates: list = field(default_factory=lambda: list(range(2, 9)))
    oversample: int = 4
    n_wide: int | None = None
    n_wide_r: int | None = None
    wide_iters: int = 100
    separate_split: dict = field(default_factory=dict)  # budget -> [n1t, n2t, n1r, n2r]
    save_checkpoints: bool = True

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if not self.methods:
            raise ConfigError("method list is empty")
        known = MIMO_METHODS if self.system_config().mimo else MISO_METHODS
        bad = [m for m in self.methods if m not in known]
        if bad:
            raise ConfigError(f"unknown methods for this link: {bad}")
        for b in list(self.budgets) + [self.noise_budget]:
            if len(b) != 2 or b[0] < 1 or b[1] < 1 or b[0] > b[1]:
                raise ConfigError(f"budget {b} must be (N1, N2) with 1 <= N1 <= N2")
        if not self.seeds:
            raise ConfigError("no seeds")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.dataset is not None and not Path(self.dataset).is_file():
            raise ConfigError(f"dataset {self.dataset} not found")
        TrainConfig(**self.train)

    def system_config(self, noise_psd="default") -> SystemConfig:
        cfg = PRESETS[self.preset].replace(**self.system)
        if noise_psd != "default":
            cfg = cfg.replace(noise_psd_dbm_hz=noise_psd)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class PreparedData:
    cfg: SystemConfig
    splits: dict  # split -> dict(H, i, j, feat, groups, ids)
    clusters: object
    clusters_t: object = None
    clusters_r: object = None


def load_or_generate(exp: ExperimentConfig):
    if exp.dataset is not None:
        return load_dataset(exp.dataset)
    return gen_dataset(exp.system_config(), exp.data_seed, Scenario.from_dict(exp.scenario), exp.n_samples)


def _select_g(feat, exp: ExperimentConfig, rng):
    if exp.g is not None:
        return exp.g
    return elbow_select_g(feat, exp.g_candidates, rng)


def prepare(ds, exp: ExperimentConfig) -> PreparedData:
    """Noise-free labels, sine features and cluster groups for every split."""
    cfg = ds.config
    tx = dft_codebook(cfg.m_t, cfg.n_t, cfg.spacing_over_lambda)
    ov_t = oversampled_codebook(cfg.m_t, cfg.n_t, exp.oversample, cfg.spacing_over_lambda)
    rx = ov_r = None
    if cfg.mimo:
        rx = dft_codebook(cfg.m_r, cfg.n_r, cfg.spacing_over_lambda)
        ov_r = oversampled_codebook(cfg.m_r, cfg.n_r, exp.oversample, cfg.spacing_over_lambda)
    splits = {}
    for s in ("train", "val", "test"):
        idx = ds.indices(s)
        H = np.stack([ds.samples[k].h for k in idx])
        if cfg.mimo:
            i, j = optimal_beams(H, tx, rx)
        else:
            i, j = optimal_beams(H, tx), None
        splits[s] = dict(H=H, i=np.asarray(i), j=None if j is None else np.asarray(j),
                         feat=beam_directions(H, ov_t, ov_r),
                         ids=np.array([ds.samples[k].sample_id for k in idx]))
    rng = np.random.default_rng([exp.data_seed, 0xC1])
    feat = splits["train"]["feat"]
    clusters = kmeans(feat, _select_g(feat, exp, rng), rng)
    for s in splits:
        splits[s]["groups"] = assign_clusters(clusters, splits[s]["feat"])
    data = PreparedData(cfg, splits, clusters)
    if cfg.mimo:
        data.clusters_t = kmeans(feat[:, :1], _select_g(feat[:, :1], exp, rng), rng)
        data.clusters_r = kmeans(feat[:, 1:], _select_g(feat[:, 1:], exp, rng), rng)
    return data


def separate_split(budget: int, exp: ExperimentConfig):
    """(N1, N2) per side for separate alignment at a total budget.

    The BS gets ceil(7b/12) measurements and the UE the rest; each side
    spends about 40 % of its share on the coarse tier.  Budget 12 gives
    2/5 + 2/3.  Explicit entries in ``exp.separate_split`` win.
    """
    if str(budget) in exp.separate_split or budget in exp.separate_split:
        s = exp.separate_split.get(budget, exp.separate_split.get(str(budget)))
        return (s[0], s[1]), (s[2], s[3])
    b_t = -(-7 * budget // 12)
    out = []
    for b in (b_t, budget - b_t):
        n1 = max(1, int(b // 2.5))
        if b - n1 < n1:
            raise ConfigError(f"budget {budget} too small for separate alignment")
        out.append((n1, b - n1))
    return tuple(out)


# ---------------------------------------------------------------------------
# experiment grid


@dataclass
class Report:
    config: dict
    config_hash: str
    cells: list = field(default_factory=list)

    @property
    def failed(self) -> list:
        return [c for c in self.cells if c["status"] != "ok"]

    def select(self, **where) -> list:
        return [c for c in self.cells if all(c[k] == v for k, v in where.items())]

    def aggregate(self, x: str) -> list:
        """Mean/stddev over seeds per (method, budget, noise); ``x`` is
        "budget" or "noise_psd"."""
        groups = {}
        for c in self.cells:
            if c["status"] != "ok":
                continue
            groups.setdefault((c["method"], c["budget"], c["noise_psd"]), []).append(c)
        rows = []
        for (method, budget, psd), cs in groups.items():
            acc = np.array([c["accuracy"] for c in cs])
            se = np.array([c["spectral_efficiency"] for c in cs])
            rows.append({
                "x": budget if x == "budget" else psd,
                "series": method,
                "budget": budget,
                "noise_psd": psd,
                "n_seeds": len(cs),
                "mean_accuracy": float(acc.mean()),
                "std_accuracy": float(acc.std()),
                "mean_spectral_efficiency": float(se.mean()),
                "std_spectral_efficiency": float(se.std()),
                "sweep_count": cs[0]["sweep_count"],
            })
        rows.sort(key=lambda r: (r["series"], _psd_key(r["noise_psd"]), r["budget"]))
        return rows


def _psd_key(psd):
    return -math.inf if psd is None else psd


def _train_config(exp: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(**{**exp.train, "seed": seed})


class _Runner:
    """Trains and evaluates every method of one (noise, seed) slice, caching
    models shared between methods and budget-free classical results."""

    def __init__(self, exp: ExperimentConfig, data: PreparedData, cfg: SystemConfig, seed: int,
                 ckpt_dir: Path | None):
        self.exp, self.data, self.cfg, self.seed = exp, data, cfg, seed
        self.ckpt_dir = ckpt_dir
        self.tc = _train_config(exp, seed)
        self._models = {}
        self._classical = {}
        self._books = None

    def _split(self, s):
        return self.data.splits[s]

    def _ckpt(self, model, name):
        if self.ckpt_dir is not None:
            psd = "none" if self.cfg.noise_psd_dbm_hz is None else f"{self.cfg.noise_psd_dbm_hz:g}"
            model.save(self.ckpt_dir / f"{name}_psd{psd}_seed{self.seed}.bfnn")

    def hban(self, n1, n2):
        key = ("hban", n1, n2)
        if key not in self._models:
            tr, va = self._split("train"), self._split("val")
            m = HbanModel(self.cfg, n1, n2, self.data.clusters.g, seed=self.seed)
            bl.train_hban(m, tr["H"], tr["groups"], tr["i"], tr["j"], va["H"], va["groups"], va["i"],
                          va["j"], self.tc)
            self._ckpt(m, f"hban_{n1}_{n2}")
            self._models[key] = m
        return self._models[key]

    def one_tier(self, n):
        tr, va = self._split("train"), self._split("val")
        m, _ = bl.one_tier_pc(self.cfg, n, tr["H"], tr["i"], tr["j"], va["H"], va["i"], va["j"],
                              self.tc, seed=self.seed)
        self._ckpt(m, f"onetier_{n}")
        return m

    def amcf(self, n1, n2):
        tr, va = self._split("train"), self._split("val")
        m = bl.amcf_model(self.cfg, n1, n2, self.data.clusters, seed=self.seed, iters=self.exp.wide_iters)
        bl.train_hban(m, tr["H"], tr["groups"], tr["i"], tr["j"], va["H"], va["groups"], va["i"],
                      va["j"], self.tc)
        self._ckpt(m, f"amcf_{n1}_{n2}")
        return m

    def books(self):
        if self._books is None:
            c, e = self.cfg, self.exp
            d, it = c.spacing_over_lambda, e.wide_iters
            nw_t = e.n_wide or (max(2, c.n_t // 8) if c.mimo else max(2, round(math.sqrt(c.n_t))))
            b = {"tx": dft_codebook(c.m_t, c.n_t, d), "tx_two": build_two_tier(c.m_t, c.n_t, nw_t, d, it),
                 "tx_bin": build_binary(c.m_t, c.n_t, d, it)}
            if c.mimo:
                nw_r = e.n_wide_r or max(1, c.n_r // 8)
                b.update(rx=dft_codebook(c.m_r, c.n_r, d), rx_two=build_two_tier(c.m_r, c.n_r, nw_r, d, it),
                         rx_bin=build_binary(c.m_r, c.n_r, d, it))
            self._books = b
        return self._books

    def classical(self, method):
        if method in self._classical:
            return self._classical[method]
        te, b, cfg = self._split("test"), self.books(), self.cfg
        args = {
            "exhaustive": (bl.exhaustive_search, (b["tx"], cfg), {"rx": b.get("rx")}),
            "two-tier": (bl.two_tier_search, (b["tx_two"], cfg), {}),
            "binary": (bl.binary_search, (b["tx_bin"], cfg), {"rx_book": b.get("rx_bin")}),
            "two-tier-joint": (bl.two_tier_joint, (b["tx_two"], b.get("rx_two"), cfg), {}),
            "two-tier-hybrid": (bl.two_tier_hybrid, (b["tx_two"], b.get("rx_two"), cfg), {}),
        }[method]
        search, pos, kw = args
        i_hat, j_hat, res = bl.run_search(search, te["H"], te["ids"], self.seed, *pos, **kw)
        out = bl.score(cfg, te["H"], i_hat, j_hat, te["i"], te["j"], res[0].sweep_count)
        self._classical[method] = out
        return out

    def run(self, method, n1, n2):
        te = self._split("test")
        ev = dict(trials=self.exp.trials, seed=self.seed)
        if method in CLASSICAL:
            return self.classical(method)
        if method == "hban":
            return evaluate(self.hban(n1, n2), te["H"], te["i"], te["j"], **ev)
        if method == "hban-pcs":
            return evaluate_pcs(self.hban(n1, n2), te["H"], te["i"], te["groups"], te["j"], **ev)
        if method == "one-tier":
            return evaluate(self.one_tier(n1 + n2), te["H"], te["i"], te["j"], **ev)
        if method == "amcf":
            return evaluate(self.amcf(n1, n2), te["H"], te["i"], te["j"], **ev)
        if method == "separate":
            bt, br = separate_split(n1 + n2, self.exp)
            tr = self.data.splits
            sp = bl.train_separate(self.cfg, bt, br, self.data.clusters_t, self.data.clusters_r, tr,
                                   self.tc, self.seed)
            return bl.evaluate_separate(sp, te["H"], te["i"], te["j"], **ev)
        raise ConfigError(f"unknown method {method!r}")


def run_experiment(exp: ExperimentConfig, budgets=None, noise_psds=None) -> Report:
    """Train and evaluate every (method, budget, noise, seed) cell.

    A failing cell is recorded with its error and the grid continues.
    """
    exp.validate()
    budgets = [tuple(b) for b in (exp.budgets if budgets is None else budgets)]
    noise_psds = list(exp.noise_psds if noise_psds is None else noise_psds)
    out = Path(exp.output_dir)
    ckpt_dir = None
    if exp.save_checkpoints:
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    data = prepare(load_or_generate(exp), exp)
    report = Report(exp.to_dict(), exp.hash())
    for psd in noise_psds:
        cfg = data.cfg.replace(noise_psd_dbm_hz=psd)
        for seed in exp.seeds:
            runner = _Runner(exp, data, cfg, seed, ckpt_dir)
            for n1, n2 in budgets:
                for method in exp.methods:
                    cell = {"method": method, "budget": n1 + n2, "n1": n1, "n2": n2,
                            "noise_psd": psd, "seed": seed}
                    try:
                        r = runner.run(method, n1, n2)
                        cell.update(accuracy=r.accuracy, spectral_efficiency=r.spectral_efficiency,
                                    sweep_count=r.sweep_count, status="ok")
                    except Exception as exc:  # recorded, grid continues
                        log.error("cell %s failed: %s", cell, exc)
                        cell.update(accuracy=math.nan, spectral_efficiency=math.nan, sweep_count=0,
                                    status=f"error: {type(exc).__name__}: {exc}")
                    log.info("%s", cell)
                    report.cells.append(cell)
    return report


def budget_sweep(exp: ExperimentConfig) -> Report:
    return run_experiment(exp, noise_psds=exp.noise_psds[:1])


def noise_sweep(exp: ExperimentConfig) -> Report:
    return run_experiment(exp, budgets=[exp.noise_budget])


# ---------------------------------------------------------------------------
# report files


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_table(path: Path, columns, rows) -> None:
    with path.open("w", newline="") as fh:
        fh.write(f"# {REPORT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _parse(col: str, text: str):
    if col in ("method", "series", "status"):
        return text
    if text == "":
        return None
    if col in ("budget", "n1", "n2", "seed", "sweep_count", "n_seeds"):
        return int(text)
    if col == "x":
        return float(text) if "." in text or "e" in text or "inf" in text else int(text)
    return float(text)


def read_table(path) -> list:
    with Path(path).open(newline="") as fh:
        head = fh.readline().strip()
        if head != f"# {REPORT_VERSION}":
            raise ValueError(f"{path}: unsupported report header {head!r}")
        reader = csv.DictReader(fh)
        return [{k: _parse(k, v) for k, v in row.items()} for row in reader]


def emit_report(report: Report, out_dir) -> list:
    """cells.csv, budget.csv, noise.csv and summary.json under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = sorted(report.cells, key=lambda c: (c["method"], _psd_key(c["noise_psd"]), c["budget"],
                                                 c["n1"], c["seed"]))
    paths = [out / "cells.csv", out / "budget.csv", out / "noise.csv", out / "summary.json"]
    _write_table(paths[0], CELL_COLUMNS, cells)
    _write_table(paths[1], AGG_COLUMNS, report.aggregate("budget"))
    _write_table(paths[2], AGG_COLUMNS, report.aggregate("noise_psd"))
    summary = {
        "version": REPORT_VERSION,
        "config_hash": report.config_hash,
        "config": report.config,
        "n_cells": len(report.cells),
        "n_failed": len(report.failed),
    }
    paths[3].write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    return paths


def load_report(out_dir) -> Report:
    out = Path(out_dir)
    summary = json.loads((out / "summary.json").read_text())
    return Report(summary["config"], summary["config_hash"], read_table(out / "cells.csv"))


# ---------------------------------------------------------------------------
# command line


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        d = yaml.safe_load(fh) or {}
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return d


def _experiment_from_args(args) -> ExperimentConfig:
    # defaults < flags < config file
    d = {}
    for key in ("preset", "dataset", "n_samples", "data_seed", "methods", "seeds", "trials",
                "output_dir", "noise_psds"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if getattr(args, "budgets", None):
        d["budgets"] = [list(map(int, b.split("/"))) for b in args.budgets]
    d.update(_load_config_file(args.config))
    return ExperimentConfig.from_dict(d)


def _psd_arg(text: str):
    return None if text.lower() in ("none", "off", "0w") else float(text)


def _split_data(path, labels_path, split):
    ds = load_dataset(path)
    ids, groups, i_star, j_star = read_label_sidecar(labels_path)
    pos = {sid: n for n, sid in enumerate(ids)}
    idx = ds.indices(split)
    rows = np.array([pos[ds.samples[k].sample_id] for k in idx])
    H = np.stack([ds.samples[k].h for k in idx])
    j = None if j_star is None else j_star[rows]
    return ds, H, groups[rows], i_star[rows], j, int(groups.max()) + 1


def cmd_gen_data(args) -> int:
    cfg = PRESETS[args.preset]
    if args.noise_psd is not None:
        cfg = cfg.replace(noise_psd_dbm_hz=_psd_arg(args.noise_psd))
    scenario = Scenario.from_dict(_load_config_file(args.scenario))
    save_dataset(gen_dataset(cfg, args.seed, scenario, args.n_samples), args.out)
    return 0


def cmd_labels(args) -> int:
    ds = load_dataset(args.data)
    exp = ExperimentConfig(g=args.g, data_seed=args.seed)
    data = prepare(ds, exp)
    ids = np.concatenate([data.splits[s]["ids"] for s in data.splits])
    cat = {k: np.concatenate([data.splits[s][k] for s in data.splits]) for k in ("groups", "i")}
    j = None if not ds.config.mimo else np.concatenate([data.splits[s]["j"] for s in data.splits])
    write_label_sidecar(args.out, ids, cat["groups"], cat["i"], j)
    print(json.dumps({"g": data.clusters.g, "centers": data.clusters.centers.tolist()}))
    return 0


def cmd_train(args) -> int:
    ds, Htr, gtr, itr, jtr, g = _split_data(args.data, args.labels, "train")
    _, Hva, gva, iva, jva, _ = _split_data(args.data, args.labels, "val")
    tc = TrainConfig(seed=args.seed, epochs=args.epochs, lr=args.lr, patience=args.patience)
    if args.method == "one-tier":
        model, tlog = bl.one_tier_pc(ds.config, args.n1 + args.n2, Htr, itr, jtr, Hva, iva, jva, tc, args.seed)
    else:
        model = HbanModel(ds.config, args.n1, args.n2, g, seed=args.seed)
        tlog = bl.train_hban(model, Htr, gtr, itr, jtr, Hva, gva, iva, jva, tc)
    model.save(args.out)
    if args.log:
        Path(args.log).write_text(tlog.to_csv())
    return 0


def cmd_eval(args) -> int:
    _, H, groups, i_star, j_star, _ = _split_data(args.data, args.labels, args.split)
    model = HbanModel.load(args.model)
    if args.pcs:
        r = evaluate_pcs(model, H, i_star, groups, j_star, trials=args.trials, seed=args.seed)
    else:
        r = evaluate(model, H, i_star, j_star, trials=args.trials, seed=args.seed)
    print(json.dumps(asdict(r), sort_keys=True))
    return 0


def _cmd_sweep(fn):
    def run(args) -> int:
        exp = _experiment_from_args(args)
        report = fn(exp)
        emit_report(report, exp.output_dir)
        return 1 if report.failed else 0
    return run


def cmd_report(args) -> int:
    report = load_report(args.dir)
    emit_report(report, args.out or args.dir)
    return 1 if report.failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beamalign", description="Learned hierarchical beam alignment.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a channel dataset")
    g.add_argument("--preset", default="desk-miso", choices=sorted(PRESETS))
    g.add_argument("--n-samples", type=int, default=20000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-psd")
    g.add_argument("--scenario", help="structured-text scenario overrides")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    la = sub.add_parser("labels", help="beam and cluster labels for a dataset")
    la.add_argument("--data", required=True)
    la.add_argument("--g", type=int)
    la.add_argument("--seed", type=int, default=0)
    la.add_argument("--out", required=True)
    la.set_defaults(fn=cmd_labels)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--data", required=True)
    t.add_argument("--labels", required=True)
    t.add_argument("--method", default="hban", choices=["hban", "one-tier"])
    t.add_argument("--n1", type=int, required=True)
    t.add_argument("--n2", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=150)
    t.add_argument("--lr", type=float, default=3e-3)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.add_argument("--pcs", action="store_true", help="force the true cluster (perfect coarse search)")
    e.add_argument("--trials", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=cmd_eval)

    for name, fn in (("budget-sweep", budget_sweep), ("noise-sweep", noise_sweep)):
        s = sub.add_parser(name, help=f"run a {name.replace('-', ' ')} and emit reports")
        s.add_argument("--config", help="structured-text experiment config (overrides flags)")
        s.add_argument("--preset", choices=sorted(PRESETS))
        s.add_argument("--dataset")
        s.add_argument("--n-samples", dest="n_samples", type=int)
        s.add_argument("--data-seed", dest="data_seed", type=int)
        s.add_argument("--methods", nargs="+")
        s.add_argument("--budgets", nargs="+", help="N1/N2 pairs, e.g. 4/6")
        s.add_argument("--noise-psds", dest="noise_psds", nargs="+", type=_psd_arg)
        s.add_argument("--seeds", nargs="+", type=int)
        s.add_argument("--trials", type=int)
        s.add_argument("--out", dest="output_dir")
        s.set_defaults(fn=_cmd_sweep(fn))

    r = sub.add_parser("report", help="re-emit tables from a finished run")
    r.add_argument("--dir", required=True)
    r.add_argument("--out")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
