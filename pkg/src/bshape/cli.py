"""Command-line pipeline: simulate, fit, diagnose, features, test-shape, cluster, assoc, report.

Every command writes into the output directory given by ``--out``.  Later
commands read what earlier ones wrote, so the usual order is::

    bshape simulate --out run
    bshape fit --data run/data.csv --out run
    bshape report --out run --annotations run/annotations.csv

Settings may also come from a ``key=value`` file passed with ``--config``
(keys are the long flag names, with dashes or underscores); flags win.

Exit codes: 0 success, 1 usage error, 2 data error (including missing
upstream artifacts), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import svg
from .analysis import (
    AnalysisError,
    GeneAnnotation,
    colocalization_probs,
    grid_points,
    group_ton_tmax,
    kmeans_profiles,
    motif_onset_tests,
    neighbor_rank_tests,
    rank_correlation_matrix,
    topk_odds_ratio,
    within_group_similarity,
)
from .bernstein import FEATURE_NAMES, BernsteinCurve, curve_eval, extract_features
from .inference import (
    IncreasingBeforeMax,
    UnimodalOn,
    feature_posteriors,
    posterior_mode,
    posterior_predictive_check,
    prior_shape_probability,
    shape_test,
)
from .io import (
    DataError,
    SimulationConfig,
    parse_annotations,
    parse_dataset,
    read_chains,
    simulate_dataset,
    write_annotations,
    write_chains,
    write_dataset,
    write_table,
)
from .model import DegenerateGeneWarning, HierarchicalModel, ModelError
from .sampler import ESTIMANDS, ChainConfig, ChainError, diagnose, run_chains

RHAT_THRESHOLD = 1.1
TOP_M = 5  # top genes by L1 norm in the structural-gene odds ratio
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "data": None,
    "annotations": None,
    "out": "bshape_out",
    "seed": 0,
    "chains": 5,
    "iters": 20000,
    "burnin": 2000,
    "thin": 10,
    "order": 15,
    "k_profiles": 5,
    "k_groups": 6,
    "tau": "1.0",
    "grid": 256,
    "prior_draws": 10000,
    "genes": 10,
    "times": 16,
    "replicates": 4,
    "xi": 0,
    "sigma": 0.05,
    "rise_fall": 0,
}
_INT_KEYS = {"seed", "chains", "iters", "burnin", "thin", "order", "k_profiles", "k_groups", "grid", "prior_draws",
             "genes", "times", "replicates", "xi", "rise_fall"}
_FLOAT_KEYS = {"sigma"}


class UsageError(Exception):
    pass


class MissingArtifact(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config(path) -> dict:
    """Parse a ``key=value`` file; ``#`` starts a comment."""
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file {path} not found")
    out = {}
    for n, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = int(value) if key in _INT_KEYS else float(value) if key in _FLOAT_KEYS else value
        except ValueError:
            raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value settings file (flags override it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="master random seed")

    data = _Parser(add_help=False)
    data.add_argument("--data", help="dataset CSV (gene_id,time,replicate,intensity)")

    chain = _Parser(add_help=False)
    chain.add_argument("--chains", type=int, help="number of chains")
    chain.add_argument("--iters", type=int, help="iterations per chain")
    chain.add_argument("--burnin", type=int, help="burn-in iterations")
    chain.add_argument("--thin", type=int, help="keep every thin-th iteration after burn-in")
    chain.add_argument("--order", type=int, help="Bernstein order")

    shape = _Parser(add_help=False)
    shape.add_argument("--tau", help="comma-separated horizons for the unimodality tests")
    shape.add_argument("--prior-draws", type=int, help="Monte Carlo draws for prior probabilities")

    clus = _Parser(add_help=False)
    clus.add_argument("--k-profiles", type=int, help="clusters of profile shapes")
    clus.add_argument("--k-groups", type=int, help="groups of (Ton, Tmax)")
    clus.add_argument("--grid", type=int, help="grid size for profile rank correlations")

    ann = _Parser(add_help=False)
    ann.add_argument("--annotations", help="annotation CSV")

    parser = _Parser(prog="bshape", description="Shape-restricted Bayesian fits of expression time courses.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset and annotations")
    sim.add_argument("--genes", type=int, help="number of genes drawn from the model")
    sim.add_argument("--times", type=int, help="number of design points")
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--xi", type=int, help="variance exponent")
    sim.add_argument("--sigma", type=float, help="noise sd at the peak, relative to the peak")
    sim.add_argument("--rise-fall", type=int, help="extra genes that return to zero")

    sub.add_parser("fit", parents=[common, data, chain], help="run the sampler and write chain files")
    sub.add_parser("diagnose", parents=[common, data], help="Gelman-Rubin statistics and predictive checks")
    sub.add_parser("features", parents=[common, data], help="posterior feature summaries")
    sub.add_parser("test-shape", parents=[common, data, shape], help="shape probabilities and Bayes factors")
    sub.add_parser("cluster", parents=[common, data, clus], help="cluster (Ton, Tmax) and profile shapes")
    sub.add_parser("assoc", parents=[common, data, clus, ann], help="motif, colocalization and odds-ratio tables")
    sub.add_parser("report", parents=[common, data, shape, clus, ann], help="every table and figure")
    return parser


def resolve(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(read_config(args.config))
    for key, value in vars(args).items():
        if value is not None:
            settings[key] = value
    return argparse.Namespace(**settings)


# ---------------------------------------------------------------------------
# shared loading


class Context:
    """Lazily loaded fit artifacts of one output directory."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.fit_path = self.out / "fit.json"
        if not self.fit_path.exists():
            raise MissingArtifact(f"{self.fit_path} not found; run `bshape fit --out {self.out}` first")
        self.meta = json.loads(self.fit_path.read_text())
        data = args.data or self.meta["data"]
        self.dataset = parse_dataset(data)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateGeneWarning)
            self.model = HierarchicalModel.from_dataset(self.dataset, order=self.meta["order"])
        paths = [self.out / p for p in self.meta["chain_files"]]
        missing = [p for p in paths if not p.exists()]
        if missing:
            raise MissingArtifact(f"{missing[0]} not found; run `bshape fit --out {self.out}` first")
        self.store = read_chains(paths)
        if self.store.gene_ids != self.model.dataset.gene_ids:
            raise DataError("chain files do not match the dataset; rerun `bshape fit`")
        self._mode = None

    @property
    def mode(self):
        if self._mode is None:
            self._mode = posterior_mode(self.store, self.model)
        return self._mode

    def mode_curve(self, g) -> BernsteinCurve:
        return BernsteinCurve(self.mode.onset[g], self.mode.coeffs[g])

    def mode_profiles(self, size):
        t = grid_points(size)
        return [curve_eval(self.mode_curve(g), t) for g in range(self.store.n_genes)]

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.args.seed), stream]))


def _taus(text) -> list:
    try:
        taus = [float(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--tau expects comma-separated numbers, got {text!r}") from None
    if not taus or any(not 0.0 <= t <= 1.0 for t in taus):
        raise UsageError("--tau values must lie in [0, 1]")
    return taus


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SimulationConfig(n_genes=args.genes, n_times=args.times, replicates=args.replicates, xi=args.xi,
                           sigma=args.sigma, rise_fall=args.rise_fall)
    rng = np.random.default_rng(np.random.SeedSequence([int(args.seed), 0]))
    ds, truth = simulate_dataset(cfg, rng)
    write_dataset(ds, out / "data.csv")
    write_table(out / "truth.csv", ("gene_id", "onset", "tmax", "background", "sigma2", "misfit"),
                [(gid, truth.onset[g], truth.tmax[g], truth.background[g], truth.sigma2[g], bool(truth.misfit[g]))
                 for g, gid in enumerate(ds.gene_ids)])
    G = ds.n_genes
    pos = rng.permutation(G)
    flags = rng.random((G, 4)) < 0.5
    anns = [GeneAnnotation(gid, int(pos[g]), bool(flags[g, 0]), bool(flags[g, 1]), bool(flags[g, 2]),
                           bool(flags[g, 3]), "") for g, gid in enumerate(ds.gene_ids)]
    write_annotations(anns, out / "annotations.csv")
    print(f"wrote {out / 'data.csv'} ({G} genes), truth.csv and annotations.csv")


def cmd_fit(args) -> None:
    if not args.data:
        raise UsageError("fit needs --data")
    out = Path(args.out)
    ds = parse_dataset(args.data)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateGeneWarning)
        model = HierarchicalModel.from_dataset(ds, order=args.order)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    try:
        cfg = ChainConfig(iterations=args.iters, burn_in=args.burnin, thin=args.thin, seed=args.seed,
                          n_chains=args.chains, order=args.order)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    store = run_chains(cfg, model, workers=min(cfg.n_chains, os.cpu_count() or 1))
    paths = write_chains(store, out / "chains")
    meta = {
        "data": str(Path(args.data).resolve()),
        "order": args.order,
        "seed": args.seed,
        "chains": cfg.n_chains,
        "iterations": cfg.iterations,
        "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "chain_files": [str(p.relative_to(out)) for p in paths],
        "genes": list(model.dataset.gene_ids),
        "excluded": [g for g in ds.gene_ids if g not in model.dataset.gene_ids],
        "alphas": list(model.alphas),
        "phi_bounds": model.phi_bounds.tolist(),
        "acceptance": store.acceptance_rates(),
    }
    (out / "fit.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    rates = ", ".join(f"{k} {v:.3f}" for k, v in meta["acceptance"].items())
    print(f"{store.n_draws} draws from {cfg.n_chains} chains; acceptance: {rates}")


def cmd_diagnose(args, ctx=None) -> None:
    ctx = ctx or Context(args)
    if ctx.store.n_chains < 2 or ctx.store.draws_per_chain < 10:
        raise UsageError("diagnostics need at least 2 chains with 10 retained draws each")
    rhat = diagnose(ctx.store)
    rows = []
    n_fail = 0
    for gid, vals in rhat.items():
        ok = all(v < RHAT_THRESHOLD for v in vals.values())
        n_fail += not ok
        rows.append([gid] + [vals[e] for e in ESTIMANDS] + [ok])
    write_table(ctx.out / "diagnose.csv", ["gene_id"] + list(ESTIMANDS) + ["pass"], rows)
    ppp = posterior_predictive_check(ctx.store, ctx.model, rng=ctx.rng(2), n_draws=min(ctx.store.n_draws, 1000))
    write_table(ctx.out / "ppp.csv", ("gene_id", "ppp"), list(zip(ctx.store.gene_ids, ppp)))
    print(f"R-hat < {RHAT_THRESHOLD} for all six estimands in {len(rows) - n_fail} of {len(rows)} genes")


def cmd_features(args, ctx=None) -> None:
    ctx = ctx or Context(args)
    rows = []
    for g, gid in enumerate(ctx.store.gene_ids):
        fp = feature_posteriors(ctx.store, g)
        mode = extract_features(ctx.mode_curve(g)).as_dict()
        for name in FEATURE_NAMES:
            f = fp[name]
            rows.append((gid, name, mode[name], f.sample_mean, f.sample_stdv, f.support[0], f.support[1]))
    write_table(ctx.out / "features.csv",
                ("gene_id", "feature", "mode", "mean", "stdv", "support_min", "support_max"), rows)
    print(f"wrote features for {ctx.store.n_genes} genes")


def cmd_test_shape(args, ctx=None) -> None:
    ctx = ctx or Context(args)
    if args.prior_draws < 1000:
        raise UsageError("--prior-draws must be at least 1000")
    hyps = [(f"unimodal_on_{t:g}", UnimodalOn(t)) for t in _taus(args.tau)]
    hyps.append(("increasing_before_max", IncreasingBeforeMax()))
    rows = []
    for j, (name, pred) in enumerate(hyps):
        pr, se = prior_shape_probability(ctx.model.specs, ctx.model.phi_bounds, pred, args.prior_draws,
                                         ctx.rng(100 + j), ctx.model.order)
        for g, gid in enumerate(ctx.store.gene_ids):
            p = float(pr[g])
            if not 0.0 < p < 1.0:
                po = float(np.mean(pred.batch(ctx.store.curves(g))))
                rows.append((gid, name, po, p, se[g], math.nan, math.nan))
                continue
            res = shape_test(ctx.store, g, pred, p, float(se[g]))
            rows.append((gid, name, res.posterior_prob, res.prior_prob, res.prior_se, res.ratio, res.bayes_factor))
    write_table(ctx.out / "shape_tests.csv", ("gene_id", "hypothesis", "po", "pr", "pr_se", "ratio", "bayes_factor"),
                rows)
    print(f"wrote {len(hyps)} shape hypotheses for {ctx.store.n_genes} genes")


def _cluster_inputs(ctx, args):
    if args.grid < 64:
        raise UsageError("--grid must be at least 64")
    profiles = ctx.mode_profiles(args.grid)
    feats = [extract_features(ctx.mode_curve(g)) for g in range(ctx.store.n_genes)]
    return profiles, feats


def cmd_cluster(args, ctx=None) -> None:
    ctx = ctx or Context(args)
    profiles, feats = _cluster_inputs(ctx, args)
    ids = ctx.store.gene_ids
    tt = np.array([[f.ton, f.tmax] for f in feats])
    groups = group_ton_tmax(tt, k=args.k_groups, seed=args.seed)
    clusters = kmeans_profiles(profiles, k=args.k_profiles, seed=args.seed)
    write_table(ctx.out / "groups.csv", ("gene_id", "ton", "tmax", "group"),
                [(gid, tt[g, 0], tt[g, 1], int(groups[g])) for g, gid in enumerate(ids)])
    write_table(ctx.out / "profile_clusters.csv", ("gene_id", "cluster"),
                [(gid, int(clusters[g])) for g, gid in enumerate(ids)])
    rows = []
    for kind, labels in (("group", groups), ("cluster", clusters)):
        for r in within_group_similarity(labels, profiles):
            rows.append((kind, r.group, r.size, r.mean, r.stdv))
    write_table(ctx.out / "similarity.csv", ("partition", "label", "size", "mean", "stdv"), rows)
    (ctx.out / "ton_tmax.svg").write_text(svg.scatter(tt[:, 0], tt[:, 1], groups, "Ton vs Tmax", "Ton", "Tmax"))
    t = grid_points(args.grid)
    (ctx.out / "profile_clusters.svg").write_text(
        svg.curves(t, [p / max(p.max(), 1e-300) for p in profiles], clusters, "Profiles by cluster", "t", "scaled"))
    print(f"{args.k_groups} (Ton, Tmax) groups and {args.k_profiles} profile clusters")


def _assoc(ctx, args, annotations) -> None:
    ids = ctx.store.gene_ids
    by_id = {a.gene_id: a for a in annotations}
    missing = [g for g in ids if g not in by_id]
    if missing:
        raise DataError(f"annotations lack gene {missing[0]}")
    anns = [by_id[g] for g in ids]
    # genome positions re-ranked over the fitted genes
    pos = np.argsort(np.argsort([a.genome_pos for a in anns], kind="stable"), kind="stable")
    profiles, feats = _cluster_inputs(ctx, args)
    onsets = {gid: feats[g].ton for g, gid in enumerate(ids)}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        motif = motif_onset_tests(anns, onsets)
    for w in caught:
        print(f"notice: {w.message}", file=sys.stderr)
    write_table(ctx.out / "motif_tests.csv", ("motif", "n_with", "n_without", "z", "p"),
                [(r.motif, r.n_with, r.n_without, r.z, r.p) for r in motif])
    G = len(ids)
    clusters = kmeans_profiles(profiles, k=args.k_profiles, seed=args.seed)
    rows = []
    for N in range(2, min(5, G) + 1):
        pr, pn = colocalization_probs(clusters, pos, N)
        rows.append((N, pr, pn))
    write_table(ctx.out / "colocalization.csv", ("N", "p_random", "p_neighbor"), rows)
    rho = rank_correlation_matrix(profiles)
    zmax = (G - 1) // 2
    rows = []
    for z1 in range(2, zmax + 1, 2):
        z2 = z1 + 10
        if z2 > zmax:
            break
        res = neighbor_rank_tests(rho, pos, z1, z2)
        rows.append((z1, z2, res.n_a, res.n_b, res.z, res.p))
    write_table(ctx.out / "neighbor_tests.csv", ("z1", "z2", "n_near", "n_far", "z", "p"), rows)
    named = [g for g, a in enumerate(anns) if a.name]
    pool = named if len(named) >= 2 else list(range(G))
    l1 = np.array([feats[g].l1_norm for g in pool])
    lab = np.array([anns[g].structural for g in pool])
    rows = []
    m = TOP_M
    if m < len(pool) and lab.any() and not lab.all():
        res = topk_odds_ratio(l1, lab, m, [ids[g] for g in pool])
        (a, b), (c, d) = res.table
        rows.append((m, a, b, c, d, res.odds_ratio, res.degenerate))
    write_table(ctx.out / "topk_odds.csv", ("m", "top_labeled", "top_unlabeled", "rest_labeled", "rest_unlabeled",
                                            "odds_ratio", "degenerate"), rows)
    print(f"wrote association tables for {G} genes")


def cmd_assoc(args, ctx=None) -> None:
    if not args.annotations:
        raise UsageError("assoc needs --annotations")
    ctx = ctx or Context(args)
    _assoc(ctx, args, parse_annotations(args.annotations))


def _gene_plots(ctx, args) -> None:
    pdir = ctx.out / "profiles"
    pdir.mkdir(exist_ok=True)
    t = grid_points(args.grid)
    ds = ctx.model.dataset
    x_obs = np.repeat(ds.design_points, ds.replicate_counts)
    for g, gid in enumerate(ctx.store.gene_ids):
        batch = ctx.store.curves(g)
        picks = np.linspace(0, len(batch) - 1, min(len(batch), 200)).round().astype(int)
        mu = ctx.store.background[:, :, g].reshape(-1)
        vals = np.array([curve_eval(batch[j], t) + mu[j] for j in picks])
        fitted = curve_eval(ctx.mode_curve(g), t) + ctx.mode.background[g]
        lo, hi = np.quantile(vals, [0.05, 0.95], axis=0)
        (pdir / f"{gid}.svg").write_text(
            svg.profile_with_data(t, fitted, lo, hi, x_obs, np.concatenate(ds.gene_values(g)), gid))


def cmd_report(args) -> None:
    ctx = Context(args)
    cmd_diagnose(args, ctx)
    cmd_features(args, ctx)
    cmd_test_shape(args, ctx)
    cmd_cluster(args, ctx)
    if args.annotations:
        _assoc(ctx, args, parse_annotations(args.annotations))
    else:
        print("notice: no --annotations given; association tables skipped")
    _gene_plots(ctx, args)
    print(f"report written to {ctx.out}")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "features": cmd_features,
    "test-shape": cmd_test_shape,
    "cluster": cmd_cluster,
    "assoc": cmd_assoc,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = resolve(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, ModelError, AnalysisError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ChainError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
