"""Command line entry point: ``attnrank <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .attention import LayerConfig, init_weights, layer_rank_bounds, memorization_condition, save_weights
from .db import RandomDBConfig, parse_triples, random_database, serialize, stats
from .heatmap import bin_heatmap, render_heatmap
from .rank_fx import rank_distortion_report
from .tensor import db_rank_upper_bound
from .training import DEFAULT_TAUS, TrainConfig, evaluate, train


def _taus(args) -> tuple[float, ...]:
    return tuple(args.tau) if args.tau else DEFAULT_TAUS


def _out(args):
    return open(args.out, "w") if args.out else sys.stdout


def cmd_gen_db(args):
    db = random_database(RandomDBConfig(args.n_k, args.n_q, args.n_v, args.n_triples, args.shared), args.seed)
    with _out(args) as f:
        f.write(serialize(db))


def _sweep_config(args) -> ex.SweepConfig:
    cfg = ex.load_sweep_config(args.config) if args.config else ex.SweepConfig()
    if getattr(args, "large_scale", False):
        cfg = replace(cfg, n_databases=548, n_layers=364, n_pairs=3947)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, max_epochs=args.epochs))
    if args.tau:
        cfg = replace(cfg, taus=tuple(args.tau))
    return cfg


def cmd_gen_corpus(args):
    corpus = ex.generate_corpus(_sweep_config(args), args.out)
    c = corpus.manifest()["counts"]
    print(f"{c['databases']} databases, {c['layers']} layers, {c['pairs']} pairs -> {args.out} "
          f"(hash {corpus.manifest_hash()[:12]})")


def cmd_train(args):
    db = parse_triples(Path(args.db).read_text())
    cfg = LayerConfig(max(len(db.vocab), args.d_model), args.heads, args.d_model, args.d_qk, args.d_vo)
    tc = TrainConfig(max_epochs=args.epochs, learning_rate=args.lr, optimizer=args.optimizer,
                     seed=args.seed, record_every=args.record_every)
    rep = train(init_weights(cfg, args.seed), db, tc, _taus(args))
    if args.out:
        save_weights(rep.weights, args.out)
    if args.history:
        rep.write_history_csv(args.history)
    acc = evaluate(rep.weights, db, _taus(args))
    print(f"epochs {rep.epochs_run}  loss {rep.final_loss:.4f}  argmax {acc.pop('argmax'):.3f}  "
          + "  ".join(f"tau={t:g} {a:.3f}" for t, a in acc.items()))


def cmd_sweep(args):
    corpus = ex.load_corpus(args.corpus)
    rows = ex.run_sweep(corpus, args.out, workers=args.workers, epochs=args.epochs)
    ok = sum(r["status"] == "ok" for r in rows)
    print(f"{len(rows)} rows ({ok} ok) -> {args.out}")


def cmd_heatmap(args):
    grid = bin_heatmap(ex.read_results_csv(args.results), args.column)
    render_heatmap(grid, args.out)
    print(f"{int(grid.count.sum())} records in {int((grid.count > 0).sum())} cells -> {args.out}")


def cmd_scatter(args):
    corpus = ex.load_corpus(args.corpus)
    st = ex.scatter_tables(corpus.databases, corpus.layers)
    prefix = args.out or "scatter"
    st.write(f"{prefix}_db.csv", f"{prefix}_layer.csv")
    b, a = st.slope_with_intercept
    print(f"n_triples ~ {st.slope:.3f} * db_rank_ub (through origin); "
          f"least squares with intercept: {b:.3f} * x + {a:.3f}")


def cmd_vo_qk_grid(args):
    g = ex.GridConfig(d_model=args.d_model, n_heads=args.heads, d_vo=tuple(range(1, args.d_model + 1)),
                      d_qk=tuple(range(1, args.d_model + 1)), n_seeds=args.seeds,
                      n_databases=args.databases, tau=args.tau[0] if args.tau else 0.95,
                      train=TrainConfig(max_epochs=args.epochs),
                      master_seed=args.seed or 0)
    grid = ex.vo_qk_grid(g, workers=args.workers)
    if args.out:
        ex.write_grid_csv(grid, args.out)
    for (vo, qk), a in sorted(grid.items()):
        print(f"d_vo={vo} d_qk={qk}  {a:.3f}")


def cmd_rank_demo(args):
    rep = rank_distortion_report(args.n, args.r, _taus(args), args.seed or 0, basis=args.basis)
    with _out(args) as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["matrix", "rank"])
        wr.writerows(rep.rows())
        f.write(f"# n={rep.n} r={rep.r} seed={rep.seed} scale c={rep.scale:.6g}\n")


def cmd_bounds(args):
    db = parse_triples(Path(args.db).read_text())
    s = stats(db)
    print(f"triples {s.n_triples}  |K| {s.n_k}  |Q| {s.n_q}  |V| {s.n_v}")
    print(f"sum|V_k| {s.sum_Vk}  sum|V_q| {s.sum_Vq}  db rank upper bound {db_rank_upper_bound(db)}")
    if args.d_model:
        cfg = LayerConfig(max(len(db.vocab), args.d_model), args.heads, args.d_model,
                          args.d_qk or args.d_model, args.d_vo)
        b = layer_rank_bounds(cfg, db)
        print(f"layer rank lower estimate {b.lower_estimate}  upper bound {b.upper_bound}  "
              f"params {cfg.n_params}  condition holds: {memorization_condition(cfg, db)}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attnrank", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, epochs=True, workers=False):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--tau", type=float, action="append", help="repeatable")
        if epochs:
            sp.add_argument("--epochs", type=int, default=None)
        if workers:
            sp.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("gen-db", help="write a random database")
    common(s, epochs=False)
    s.add_argument("--n-k", type=int, default=5)
    s.add_argument("--n-q", type=int, default=3)
    s.add_argument("--n-v", type=int, default=4)
    s.add_argument("--n-triples", type=int, default=8)
    s.add_argument("--shared", action="store_true", help="let K, Q, V share tokens")
    s.set_defaults(func=cmd_gen_db, seed=0)

    s = sub.add_parser("gen-corpus", help="generate a sweep corpus directory")
    common(s)
    s.add_argument("--config", help="TOML sweep config")
    s.add_argument("--large-scale", action="store_true")
    s.set_defaults(func=cmd_gen_corpus, out="corpus")

    s = sub.add_parser("train", help="train one layer on a database file")
    common(s)
    s.add_argument("db")
    s.add_argument("--heads", type=int, default=2)
    s.add_argument("--d-model", type=int, default=6)
    s.add_argument("--d-vo", type=int, default=6)
    s.add_argument("--d-qk", type=int, default=6)
    s.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    s.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    s.add_argument("--record-every", type=int, default=100)
    s.add_argument("--history", help="write training history CSV here")
    s.set_defaults(func=cmd_train, seed=0, epochs=TrainConfig.max_epochs)

    s = sub.add_parser("sweep", help="train every pair of a corpus (resumable)")
    common(s, workers=True)
    s.add_argument("corpus")
    s.set_defaults(func=cmd_sweep, out="results.csv")

    s = sub.add_parser("heatmap", help="bin sweep results and render an SVG heatmap")
    common(s, epochs=False)
    s.add_argument("results")
    s.add_argument("--column", default="acc_argmax")
    s.set_defaults(func=cmd_heatmap, out="heatmap.svg")

    s = sub.add_parser("scatter", help="database and layer size tables")
    common(s, epochs=False)
    s.add_argument("corpus")
    s.set_defaults(func=cmd_scatter)

    s = sub.add_parser("vo-qk-grid", help="mean tau-accuracy over a d_vo x d_qk grid")
    common(s, workers=True)
    s.add_argument("--d-model", type=int, default=4)
    s.add_argument("--heads", type=int, default=2)
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--databases", type=int, default=4)
    s.set_defaults(func=cmd_vo_qk_grid, epochs=TrainConfig.max_epochs)

    s = sub.add_parser("rank-demo", help="rank distortion by argmax and softmax")
    common(s, epochs=False)
    s.add_argument("--n", type=int, default=6)
    s.add_argument("--r", type=int, default=3)
    s.add_argument("--basis", action="store_true", help="use the standard basis (needs n == r)")
    s.set_defaults(func=cmd_rank_demo)

    s = sub.add_parser("bounds", help="print database and layer rank bounds")
    s.add_argument("db")
    s.add_argument("--heads", type=int, default=1)
    s.add_argument("--d-model", type=int, default=None)
    s.add_argument("--d-vo", type=int, default=1)
    s.add_argument("--d-qk", type=int, default=None)
    s.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
