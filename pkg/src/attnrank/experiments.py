"""Random corpora of databases and layer shapes, seeded training sweeps, and
the tables behind the scatter plots and the d_vo / d_qk grid.

Every random quantity is derived from the master seed by a counter-based
split (``np.random.SeedSequence(master, spawn_key=...)``), so the result of
a pair never depends on which worker ran it or whether the sweep was resumed.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .attention import LayerConfig, build_bundle, init_weights, layer_rank_bounds
from .db import Database, RandomDBConfig, parse_triples, random_database, serialize, stats
from .metrics import argmax_accuracy, tau_accuracy
from .tensor import db_rank_upper_bound
from .training import DEFAULT_TAUS, TrainConfig, TrainingDiverged, train

log = logging.getLogger(__name__)

# seed-stream tags
_DB, _LAYER, _PAIR, _INIT, _GRID = range(5)


def _seed(master: int, *key: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(master: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=tuple(key)))


@dataclass(frozen=True)
class LayerShape:
    n_heads: int
    d_model: int
    d_vo: int
    d_qk: int

    def config(self, n_vocab: int) -> LayerConfig:
        return LayerConfig(max(n_vocab, self.d_model), self.n_heads, self.d_model, self.d_qk, self.d_vo)

    @property
    def n_params(self) -> int:
        return 2 * self.n_heads * self.d_model * (self.d_vo + self.d_qk)

    @property
    def lower_estimate(self) -> int:
        return self.d_model + self.n_heads * self.d_vo


def all_layer_shapes(d_model_max: int = 6, n_heads_max: int = 4) -> list[LayerShape]:
    return [
        LayerShape(h, d, vo, qk)
        for h in range(1, n_heads_max + 1)
        for d in range(1, d_model_max + 1)
        for vo in range(1, d + 1)
        for qk in range(1, d + 1)
    ]


# Sweeps use a smaller Adam step than TrainConfig(). At 1e-2 most layers end up
# confident at tau = 0.99 even on databases well above their rank estimate.
SWEEP_TRAIN = TrainConfig(learning_rate=1e-3)


@dataclass(frozen=True)
class SweepConfig:
    n_databases: int = 50
    n_layers: int = 40
    n_pairs: int = 300
    # database sizes: each drawn uniformly from the inclusive range
    n_k: tuple[int, int] = (4, 30)
    n_q: tuple[int, int] = (2, 12)
    n_v: tuple[int, int] = (2, 12)
    max_triples: int = 200
    shared_tokens: bool = False
    d_model_max: int = 6
    n_heads_max: int = 4
    train: TrainConfig = SWEEP_TRAIN
    taus: tuple[float, ...] = DEFAULT_TAUS
    master_seed: int = 0

    @classmethod
    def large_scale(cls, **kw) -> "SweepConfig":
        return cls(n_databases=548, n_layers=364, n_pairs=3947, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_k"], d["n_q"], d["n_v"] = list(self.n_k), list(self.n_q), list(self.n_v)
        d["taus"] = list(self.taus)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        if "train" in d:
            d["train"] = replace(SWEEP_TRAIN, **d["train"])
        for k in ("n_k", "n_q", "n_v", "taus"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def load_sweep_config(path) -> SweepConfig:
    """Read a TOML file; keys match :class:`SweepConfig`, with a ``[train]`` table."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as f:
        return SweepConfig.from_dict(tomllib.load(f))


def sample_db_config(cfg: SweepConfig, rng: np.random.Generator) -> RandomDBConfig:
    n_k = int(rng.integers(cfg.n_k[0], cfg.n_k[1] + 1))
    n_q = int(rng.integers(cfg.n_q[0], cfg.n_q[1] + 1))
    n_v = int(rng.integers(cfg.n_v[0], cfg.n_v[1] + 1))
    n_triples = int(rng.integers(1, min(cfg.max_triples, n_k * n_q) + 1))
    return RandomDBConfig(n_k, n_q, n_v, n_triples, cfg.shared_tokens)


@dataclass
class Corpus:
    config: SweepConfig
    databases: list[Database]
    db_configs: list[RandomDBConfig]
    layers: list[LayerShape]
    pairs: list[tuple[int, int]]  # (db index, layer index)

    def manifest(self) -> dict:
        m = {
            "config": self.config.to_dict(),
            "databases": [
                {"id": i, "file": f"db_{i:04d}.txt", **asdict(c),
                 "sha256": hashlib.sha256(serialize(db).encode()).hexdigest()}
                for i, (db, c) in enumerate(zip(self.databases, self.db_configs))
            ],
            "layers": [{"id": i, **asdict(s)} for i, s in enumerate(self.layers)],
            "pairs": [list(p) for p in self.pairs],
        }
        m["counts"] = {"databases": len(self.databases), "layers": len(self.layers),
                       "pairs": len(self.pairs)}
        return m

    def manifest_hash(self) -> str:
        body = json.dumps(self.manifest(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(body.encode()).hexdigest()

    def save(self, directory) -> Path:
        d = Path(directory)
        (d / "databases").mkdir(parents=True, exist_ok=True)
        for i, db in enumerate(self.databases):
            (d / "databases" / f"db_{i:04d}.txt").write_text(serialize(db))
        m = self.manifest()
        m["hash"] = self.manifest_hash()
        (d / "manifest.json").write_text(json.dumps(m, indent=1, sort_keys=True) + "\n")
        return d / "manifest.json"


def load_corpus(directory) -> Corpus:
    d = Path(directory)
    m = json.loads((d / "manifest.json").read_text())
    cfg = SweepConfig.from_dict(m["config"])
    dbs, dbcfgs = [], []
    for entry in m["databases"]:
        dbs.append(parse_triples((d / "databases" / entry["file"]).read_text()))
        dbcfgs.append(RandomDBConfig(entry["n_k"], entry["n_q"], entry["n_v"],
                                     entry["n_triples"], entry["shared_tokens"]))
    layers = [LayerShape(e["n_heads"], e["d_model"], e["d_vo"], e["d_qk"]) for e in m["layers"]]
    corpus = Corpus(cfg, dbs, dbcfgs, layers, [tuple(p) for p in m["pairs"]])
    if m.get("hash") and corpus.manifest_hash() != m["hash"]:
        raise ValueError(f"corpus in {d} does not match its manifest hash")
    return corpus


def generate_corpus(cfg: SweepConfig, out_dir=None) -> Corpus:
    """Random databases, distinct layer shapes and uniformly sampled pairs.

    Writes the corpus to ``out_dir`` when given.
    """
    dbs, dbcfgs = [], []
    for i in range(cfg.n_databases):
        dcfg = sample_db_config(cfg, _rng(cfg.master_seed, _DB, i, 0))
        dbcfgs.append(dcfg)
        dbs.append(random_database(dcfg, _seed(cfg.master_seed, _DB, i, 1)))

    shapes = all_layer_shapes(cfg.d_model_max, cfg.n_heads_max)
    if cfg.n_layers > len(shapes):
        raise ValueError(f"only {len(shapes)} distinct layer shapes exist, asked for {cfg.n_layers}")
    pick = _rng(cfg.master_seed, _LAYER).choice(len(shapes), size=cfg.n_layers, replace=False)
    layers = [shapes[i] for i in sorted(pick)]

    prng = _rng(cfg.master_seed, _PAIR)
    total = cfg.n_databases * cfg.n_layers
    if cfg.n_pairs > total:
        raise ValueError(f"only {total} distinct pairs exist, asked for {cfg.n_pairs}")
    flat = prng.choice(total, size=cfg.n_pairs, replace=False)
    pairs = [(int(p // cfg.n_layers), int(p % cfg.n_layers)) for p in flat]

    corpus = Corpus(cfg, dbs, dbcfgs, layers, pairs)
    if out_dir is not None:
        corpus.save(out_dir)
    return corpus


# ---------------------------------------------------------------------------
# Sweeps


def tau_column(t: float) -> str:
    return f"acc_{int(round(t * 100)):03d}"


def result_header(taus=DEFAULT_TAUS) -> list[str]:
    return (["pair_id", "db_id", "n_triples", "db_rank_ub", "n_heads", "d_model", "d_vo", "d_qk",
             "n_params", "layer_lb", "layer_ub", "loss", "acc_argmax"]
            + [tau_column(t) for t in taus] + ["epochs", "seed", "status"])


def object_loss(L_rows: np.ndarray, vi: np.ndarray) -> float:
    z = L_rows - L_rows.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(vi)), vi].mean())


def run_pair(db: Database, shape: LayerShape, train_cfg: TrainConfig, taus, seed: int) -> dict:
    """Train one layer on one database and score it. Returns a result row."""
    cfg = shape.config(len(db.vocab))
    bounds = layer_rank_bounds(cfg, db)
    row = {
        "n_triples": len(db), "db_rank_ub": db_rank_upper_bound(db),
        "n_heads": shape.n_heads, "d_model": shape.d_model, "d_vo": shape.d_vo, "d_qk": shape.d_qk,
        "n_params": cfg.n_params, "layer_lb": bounds.lower_estimate, "layer_ub": bounds.upper_bound,
        "seed": seed,
    }
    try:
        rep = train(init_weights(cfg, seed), db, replace(train_cfg, record_every=0), taus)
    except TrainingDiverged as exc:
        log.warning("pair diverged: %s", exc)
        row.update(loss=float("nan"), acc_argmax=float("nan"), epochs=train_cfg.max_epochs,
                   status="diverged", **{tau_column(t): float("nan") for t in taus})
        return row
    L = build_bundle(rep.weights, db).L
    ki, qi, vi = db.index_arrays()
    row.update(
        loss=object_loss(L[ki, qi], vi),
        acc_argmax=argmax_accuracy(L, db),
        epochs=rep.epochs_run,
        status="ok",
        **{tau_column(t): tau_accuracy(L, db, t) for t in taus},
    )
    return row


def _pair_job(args):
    pair_id, db_text, shape, train_cfg, taus, seed = args
    return pair_id, run_pair(parse_triples(db_text), shape, train_cfg, taus, seed)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _journal_load(path: Path) -> dict[int, dict]:
    done = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                done[rec["pair_id"]] = rec
    return done


def pair_seed(master_seed: int, pair_id: int) -> int:
    return _seed(master_seed, _INIT, pair_id) % (2**63)


def run_sweep(corpus: Corpus, out_csv, workers: int = 1, journal=None,
              pair_ids=None, epochs: int | None = None) -> list[dict]:
    """Train every pair of ``corpus`` and write one CSV row per pair.

    Rows are ordered by pair index whatever the number of workers. Completed
    pairs are appended to ``journal`` (JSON lines; default ``<out_csv>.journal``)
    and skipped on a rerun, so an interrupted sweep can be resumed.
    """
    cfg = corpus.config
    train_cfg = cfg.train if epochs is None else replace(cfg.train, max_epochs=epochs)
    taus = tuple(cfg.taus)
    out_csv = Path(out_csv)
    journal = Path(journal) if journal is not None else out_csv.with_name(out_csv.name + ".journal")
    done = _journal_load(journal)
    ids = range(len(corpus.pairs)) if pair_ids is None else pair_ids
    jobs = []
    for pid in ids:
        if pid in done:
            continue
        di, li = corpus.pairs[pid]
        jobs.append((pid, serialize(corpus.databases[di]), corpus.layers[li], train_cfg, taus,
                     pair_seed(cfg.master_seed, pid)))

    def record(pid, row):
        di, _ = corpus.pairs[pid]
        row = {"pair_id": pid, "db_id": di, **row}
        done[pid] = row
        with open(journal, "a") as f:
            f.write(json.dumps(row) + "\n")

    if jobs:
        log.info("running %d pairs (%d already done) on %d worker(s)", len(jobs), len(done), workers)
        if workers <= 1:
            for job in jobs:
                record(*_pair_job(job))
        else:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                for pid, row in ex.map(_pair_job, jobs):
                    record(pid, row)

    rows = [done[pid] for pid in sorted(ids)]
    write_results_csv(rows, out_csv, taus)
    return rows


def write_results_csv(rows: list[dict], path, taus=DEFAULT_TAUS) -> None:
    header = result_header(taus)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(r[h]) for h in header])
    Path(path).write_text(buf.getvalue())


def read_results_csv(path) -> list[dict]:
    ints = {"pair_id", "db_id", "n_triples", "db_rank_ub", "n_heads", "d_model", "d_vo", "d_qk",
            "n_params", "layer_lb", "layer_ub", "epochs", "seed"}
    out = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            out.append({k: (int(v) if k in ints else v if k == "status" else float(v))
                        for k, v in r.items()})
    return out


# ---------------------------------------------------------------------------
# Scatter tables


@dataclass
class ScatterTables:
    db_rows: list[tuple[int, int, int]]      # (db_id, n_triples, db_rank_ub)
    layer_rows: list[tuple]                  # (layer_id, n_heads, d_model, d_vo, d_qk, n_params, layer_lb)
    slope: float                             # least-squares n_triples ~ slope * db_rank_ub
    slope_with_intercept: tuple[float, float]

    def write(self, db_path, layer_path) -> None:
        with open(db_path, "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(["db_id", "n_triples", "db_rank_ub"])
            wr.writerows(self.db_rows)
        with open(layer_path, "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(["layer_id", "n_heads", "d_model", "d_vo", "d_qk", "n_params", "layer_lb"])
            wr.writerows(self.layer_rows)


def scatter_tables(databases, layers) -> ScatterTables:
    db_rows = [(i, len(db), db_rank_upper_bound(db)) for i, db in enumerate(databases)]
    layer_rows = [(i, s.n_heads, s.d_model, s.d_vo, s.d_qk, s.n_params, s.lower_estimate)
                  for i, s in enumerate(layers)]
    x = np.array([r[2] for r in db_rows], dtype=float)
    y = np.array([r[1] for r in db_rows], dtype=float)
    slope = float(x @ y / (x @ x))
    if len(x) >= 2 and np.ptp(x) > 0:
        b, a = np.polyfit(x, y, 1)
        fit = (float(b), float(a))
    else:
        fit = (slope, 0.0)
    return ScatterTables(db_rows, layer_rows, slope, fit)


# ---------------------------------------------------------------------------
# d_vo x d_qk grid


@dataclass(frozen=True)
class GridConfig:
    d_model: int = 4
    n_heads: int = 2
    d_vo: tuple[int, ...] = (1, 2, 3, 4)
    d_qk: tuple[int, ...] = (1, 2, 3, 4)
    cells: tuple[tuple[int, int], ...] | None = None  # explicit (d_vo, d_qk) cells; overrides ranges
    n_seeds: int = 10
    n_databases: int = 4
    # rank bounds near 18, about twice the lower estimate of the anti-diagonal layers
    db: RandomDBConfig = RandomDBConfig(10, 5, 6, 30)
    tau: float = 0.95
    train: TrainConfig = field(default_factory=TrainConfig)
    master_seed: int = 0

    def cell_list(self) -> list[tuple[int, int]]:
        if self.cells is not None:
            return [tuple(c) for c in self.cells]
        return [(vo, qk) for vo in self.d_vo for qk in self.d_qk]


def _grid_job(args):
    vo, qk, db_text, gcfg, seed = args
    db = parse_triples(db_text)
    shape = LayerShape(gcfg.n_heads, gcfg.d_model, vo, qk)
    row = run_pair(db, shape, gcfg.train, (gcfg.tau,), seed)
    return vo, qk, row[tau_column(gcfg.tau)]


def grid_databases(gcfg: GridConfig) -> list[Database]:
    return [random_database(gcfg.db, _seed(gcfg.master_seed, _GRID, 0, i)) for i in range(gcfg.n_databases)]


def vo_qk_grid(gcfg: GridConfig, workers: int = 1) -> dict[tuple[int, int], float]:
    """Mean tau-accuracy per (d_vo, d_qk) cell.

    Each cell trains ``n_seeds`` initializations on each of the shared
    databases. Seeds depend on (database, seed index) only, so different
    cells start from the same random stream.
    """
    dbs = grid_databases(gcfg)
    jobs = []
    for vo, qk in gcfg.cell_list():
        for di, db in enumerate(dbs):
            for s in range(gcfg.n_seeds):
                jobs.append((vo, qk, serialize(db), gcfg, _seed(gcfg.master_seed, _GRID, 1, di, s) % (2**63)))
    if workers <= 1:
        results = [_grid_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_grid_job, jobs))
    acc: dict[tuple[int, int], list[float]] = {}
    for vo, qk, a in results:
        acc.setdefault((vo, qk), []).append(a)
    return {c: float(np.mean(v)) for c, v in acc.items()}


def write_grid_csv(grid: dict[tuple[int, int], float], path) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["d_vo", "d_qk", "mean_acc"])
        for (vo, qk), a in sorted(grid.items()):
            wr.writerow([vo, qk, repr(a)])


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
