"""Dataset, annotation and chain files, plus synthetic data generation.

Dataset CSV
    ``gene_id,time,replicate,intensity``; one row per observation.  Times
    are rescaled to [0, 1] by dividing by the largest time with exact
    rational arithmetic, so hour grids such as 0, 1/3, 2/3, ... map exactly.

Annotation CSV
    ``gene_id,genome_pos,early,taag,catg,structural,name`` with 0/1 flags.

Chain file
    Line 1 is the magic string ``BSHAPE-CHAIN-v1``.  Line 2 is ``# meta``
    followed by a JSON object (schedule, gene ids, the chain's final state
    and RNG state for resuming).  The rest is a CSV with one row per
    retained draw: ``draw,phi1..phi4``, then ``c:<gene>``, ``mu:<gene>`` and
    ``b<i>:<gene>`` columns.  Floats are written with ``repr`` and read back
    exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import GeneAnnotation
from .bernstein import BernsteinCurve, curve_eval, extract_features
from .model import ModelState, TimeCourseDataset
from .sampler import ChainConfig, SampleStore

DATASET_HEADER = ("gene_id", "time", "replicate", "intensity")
ANNOTATION_HEADER = ("gene_id", "genome_pos", "early", "taag", "catg", "structural", "name")
CHAIN_MAGIC = "BSHAPE-CHAIN-v1"


class DataError(ValueError):
    """Malformed or inconsistent input file."""


def _rows(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    return path, rows


def _check_header(path, line, row, expected):
    got = tuple(c.strip() for c in row)
    if got != expected:
        raise DataError(f"{path}:{line}: expected header {','.join(expected)}, got {','.join(got)}")


def parse_dataset(path) -> TimeCourseDataset:
    path, rows = _rows(path)
    _check_header(path, *rows[0], DATASET_HEADER)
    obs = {}
    genes = []
    for line, row in rows[1:]:
        if len(row) != 4:
            raise DataError(f"{path}:{line}: expected 4 fields, got {len(row)}")
        gene, t_raw, rep_raw, y_raw = (c.strip() for c in row)
        if not gene:
            raise DataError(f"{path}:{line}: empty gene id")
        try:
            t = Fraction(t_raw)
        except (ValueError, ZeroDivisionError):
            raise DataError(f"{path}:{line}: time {t_raw!r} is not a number") from None
        try:
            rep = int(rep_raw)
        except ValueError:
            raise DataError(f"{path}:{line}: replicate {rep_raw!r} is not an integer") from None
        try:
            y = float(y_raw)
        except ValueError:
            raise DataError(f"{path}:{line}: intensity {y_raw!r} is not a number") from None
        if not math.isfinite(y):
            raise DataError(f"{path}:{line}: intensity must be finite")
        if t < 0:
            raise DataError(f"{path}:{line}: negative time")
        if gene not in obs:
            obs[gene] = {}
            genes.append(gene)
        cell = obs[gene].setdefault(t, {})
        if rep in cell:
            raise DataError(f"{path}:{line}: duplicate replicate {rep} for gene {gene} at time {t_raw}")
        cell[rep] = (y, line)
    if not genes:
        raise DataError(f"{path}: no observations")
    times = sorted({t for g in genes for t in obs[g]})
    if len(times) < 2:
        raise DataError(f"{path}: need at least two distinct times")
    if times[0] != 0:
        raise DataError(f"{path}: the first time point must be 0")
    reps = {}
    for t in times:
        ref = None
        for g in genes:
            cell = obs[g].get(t)
            if cell is None:
                raise DataError(f"{path}: gene {g} has no observations at time {t}")
            if ref is None:
                ref = sorted(cell)
            elif sorted(cell) != ref:
                line = min(v[1] for v in cell.values())
                raise DataError(f"{path}:{line}: gene {g} has replicates {sorted(cell)} at time {t}, expected {ref}")
        reps[t] = ref
    tmax = times[-1]
    x = np.array([float(t / tmax) for t in times])
    values = tuple(np.array([[obs[g][t][r][0] for r in reps[t]] for g in genes]) for t in times)
    m = np.array([len(reps[t]) for t in times], dtype=np.int64)
    try:
        return TimeCourseDataset(x, m, values, tuple(genes))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_dataset(dataset: TimeCourseDataset, path, times: Sequence | None = None) -> None:
    """Write a dataset; ``times`` (raw, e.g. hours) default to the design points."""
    times = dataset.design_points if times is None else times
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for g, gene in enumerate(dataset.gene_ids):
            for k, t in enumerate(times):
                for j, y in enumerate(dataset.values[k][g]):
                    w.writerow((gene, _fmt_exact(t), j + 1, repr(float(y))))


def _fmt_exact(v):
    if isinstance(v, (int, np.integer, Fraction)):
        return str(v)
    return repr(float(v))


def _flag(path, line, raw, name):
    raw = raw.strip()
    if raw not in ("0", "1"):
        raise DataError(f"{path}:{line}: {name} must be 0 or 1, got {raw!r}")
    return raw == "1"


def parse_annotations(path) -> list:
    path, rows = _rows(path)
    _check_header(path, *rows[0], ANNOTATION_HEADER)
    out = []
    for line, row in rows[1:]:
        if len(row) != 7:
            raise DataError(f"{path}:{line}: expected 7 fields, got {len(row)}")
        gene, pos_raw, e, t, c, s, name = (v.strip() for v in row)
        try:
            pos = int(pos_raw)
        except ValueError:
            raise DataError(f"{path}:{line}: genome_pos {pos_raw!r} is not an integer") from None
        out.append(GeneAnnotation(gene, pos, _flag(path, line, e, "early"), _flag(path, line, t, "taag"),
                                  _flag(path, line, c, "catg"), _flag(path, line, s, "structural"), name))
    ids = [a.gene_id for a in out]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate gene ids")
    return out


def write_annotations(annotations: Sequence[GeneAnnotation], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for a in annotations:
            w.writerow((a.gene_id, a.genome_pos, int(a.early), int(a.taag), int(a.catg), int(a.structural), a.name))


# ---------------------------------------------------------------------------
# tables


def fmt(v) -> str:
    """Table cell formatting: 10 significant digits, ``NA`` for nan."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "NA"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{float(v):.10g}"
    return str(v)


def write_table(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_table(path) -> tuple:
    """``(header, rows)`` of a table written by :func:`write_table`; cells stay strings."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty table")
    return rows[0], rows[1:]


def parse_cell(s: str) -> float:
    return math.nan if s == "NA" else float(s)


# ---------------------------------------------------------------------------
# chain files


def _chain_columns(gene_ids, order):
    cols = ["draw", "phi1", "phi2", "phi3", "phi4"]
    cols += [f"c:{g}" for g in gene_ids]
    cols += [f"mu:{g}" for g in gene_ids]
    cols += [f"b{i}:{g}" for g in gene_ids for i in range(2, order + 1)]
    return cols


def write_chain_file(path, store: SampleStore, chain: int) -> None:
    cfg = store.config
    final = store.final_states[chain] if store.final_states else None
    meta = {
        "chain": chain,
        "n_chains": store.n_chains,
        "seed": cfg.seed,
        "iterations": cfg.iterations,
        "iterations_done": store.iterations_done,
        "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "order": store.order,
        "gene_ids": list(store.gene_ids),
        "counts": store.counts[chain].tolist(),
        "rng_state": None if store.rng_states is None else [int(v) for v in store.rng_states[chain]],
        "final_state": None if final is None else {
            "phi": [repr(float(v)) for v in final.phi],
            "onset": [repr(float(v)) for v in final.onset],
            "coeffs": [[repr(float(v)) for v in row] for row in final.coeffs],
            "background": [repr(float(v)) for v in final.background],
        },
    }
    with Path(path).open("w", newline="") as fh:
        fh.write(CHAIN_MAGIC + "\n")
        fh.write("# meta " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_chain_columns(store.gene_ids, store.order))
        for d in range(store.draws_per_chain):
            row = [d]
            row += [repr(float(v)) for v in store.phi[chain, d]]
            row += [repr(float(v)) for v in store.onset[chain, d]]
            row += [repr(float(v)) for v in store.background[chain, d]]
            row += [repr(float(v)) for v in store.coeffs[chain, d].ravel()]
            w.writerow(row)


def read_chain_file(path) -> tuple:
    """``(meta, phi, onset, coeffs, background)`` of one chain file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: chain file not found")
    with path.open(newline="") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != CHAIN_MAGIC:
            raise DataError(f"{path}:1: not a chain file (expected {CHAIN_MAGIC})")
        meta_line = fh.readline()
        if not meta_line.startswith("# meta "):
            raise DataError(f"{path}:2: missing meta line")
        meta = json.loads(meta_line[len("# meta "):])
        rows = list(csv.reader(fh))
    genes, order = meta["gene_ids"], meta["order"]
    cols = _chain_columns(genes, order)
    if not rows or rows[0] != cols:
        raise DataError(f"{path}:3: unexpected column layout")
    G, n1 = len(genes), order - 1
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float).reshape(-1, 4 + 2 * G + G * n1)
    phi = data[:, :4]
    onset = data[:, 4 : 4 + G]
    mu = data[:, 4 + G : 4 + 2 * G]
    coeffs = data[:, 4 + 2 * G :].reshape(-1, G, n1)
    return meta, phi, onset, coeffs, mu


def write_chains(store: SampleStore, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in range(store.n_chains):
        p = out_dir / f"chain_{c}.csv"
        write_chain_file(p, store, c)
        paths.append(p)
    return paths


def read_chains(paths: Sequence) -> SampleStore:
    """Reassemble a :class:`SampleStore` from per-chain files (in the given order)."""
    if not paths:
        raise DataError("no chain files")
    parts = [read_chain_file(p) for p in paths]
    meta = parts[0][0]
    for m, *_ in parts[1:]:
        for key in ("gene_ids", "order", "seed", "iterations", "burn_in", "thin"):
            if m[key] != meta[key]:
                raise DataError(f"chain files disagree on {key}")
    cfg = ChainConfig(meta["iterations"], meta["burn_in"], meta["thin"], meta["seed"], len(parts), meta["order"])
    finals, rng_states = [], []
    for m, *_ in parts:
        fs = m.get("final_state")
        if fs is not None:
            finals.append(ModelState(
                [float(v) for v in fs["phi"]], [float(v) for v in fs["onset"]],
                [[float(v) for v in row] for row in fs["coeffs"]], [float(v) for v in fs["background"]],
            ))
        if m.get("rng_state") is not None:
            rng_states.append(np.array(m["rng_state"], dtype=np.uint64))
    return SampleStore(
        phi=np.stack([p[1] for p in parts]),
        onset=np.stack([p[2] for p in parts]),
        coeffs=np.stack([p[3] for p in parts]),
        background=np.stack([p[4] for p in parts]),
        counts=np.array([m["counts"] for m, *_ in parts], dtype=np.int64),
        gene_ids=tuple(meta["gene_ids"]),
        config=cfg,
        iterations_done=meta["iterations_done"],
        final_states=finals if len(finals) == len(parts) else [],
        rng_states=np.stack(rng_states) if len(rng_states) == len(parts) else None,
    )


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SimulationConfig:
    """Generator settings.

    ``sigma`` is the noise standard deviation at the curve maximum as a
    fraction of that maximum; the variance elsewhere follows
    ``sigma_g^2 (F + mu)^xi``.  ``family`` is ``"bump"`` (Gaussian-shaped
    coefficient profiles) or ``"prior"`` (iid uniform coefficients).
    ``rise_fall`` extra genes rise and then return to exactly zero, which
    no curve of the model can do.
    """

    n_genes: int = 10
    n_times: int = 16
    replicates: int = 4
    xi: int = 0
    sigma: float = 0.05
    order: int = 15
    family: str = "bump"
    onset_range: tuple = (0.05, 0.3)
    center_range: tuple = (0.25, 0.6)
    width_range: tuple = (0.12, 0.25)
    height_range: tuple = (5.0, 15.0)
    background_frac: float = 0.1
    rise_fall: int = 0
    times: tuple | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.xi not in (0, 1, 2):
            raise ValueError("xi must be 0, 1 or 2")
        if self.family not in ("bump", "prior"):
            raise ValueError("family must be 'bump' or 'prior'")
        if self.n_genes < 0 or self.rise_fall < 0 or self.n_genes + self.rise_fall < 1:
            raise ValueError("need at least one gene")
        if self.replicates < 1 or self.n_times < 2:
            raise ValueError("need at least one replicate and two time points")


@dataclass
class SimulationTruth:
    curves: list                  # BernsteinCurve, or None for rise-and-fall genes
    values: np.ndarray            # F_g(X_k), shape (G, K + 1)
    background: np.ndarray
    sigma2: np.ndarray
    xi: int
    onset: np.ndarray
    tmax: np.ndarray
    misfit: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def _bump_coeffs(rng, cfg):
    n = cfg.order
    center = rng.uniform(*cfg.center_range)
    width = rng.uniform(*cfg.width_range)
    height = rng.uniform(*cfg.height_range)
    i = np.arange(2, n + 1) / n
    return height * np.exp(-0.5 * ((i - center) / width) ** 2)


def _rise_fall(t, c, e, h):
    t = np.asarray(t, dtype=float)
    inside = (t > c) & (t < e)
    return np.where(inside, h * np.sin(np.pi * (t - c) / (e - c)) ** 2, 0.0)


def simulate_dataset(config: SimulationConfig, rng: np.random.Generator):
    """Draw true curves, then replicated noisy intensities.

    Returns ``(dataset, truth)``.
    """
    cfg = config
    x = np.linspace(0.0, 1.0, cfg.n_times) if cfg.times is None else np.asarray(cfg.times, dtype=float)
    G = cfg.n_genes + cfg.rise_fall
    curves, vals, mus, s2s, onsets, tmaxs, misfit = [], [], [], [], [], [], []
    for g in range(G):
        if g < cfg.n_genes:
            c = rng.uniform(*cfg.onset_range)
            if cfg.family == "bump":
                b = _bump_coeffs(rng, cfg)
            else:
                b = rng.uniform(0.0, 1.0, cfg.order - 1) * rng.uniform(*cfg.height_range)
            curve = BernsteinCurve(c, b)
            f = curve_eval(curve, x)
            feats = extract_features(curve)
            peak, tmax = feats.max_val, feats.tmax
            misfit.append(False)
        else:
            c = rng.uniform(*cfg.onset_range)
            e = min(c + rng.uniform(0.25, 0.4), 0.85)
            peak = rng.uniform(*cfg.height_range)
            curve = None
            f = _rise_fall(x, c, e, peak)
            tmax = (c + e) / 2.0
            misfit.append(True)
        mu = cfg.background_frac * peak
        sigma2 = (cfg.sigma * peak) ** 2 / (peak + mu) ** cfg.xi
        curves.append(curve)
        vals.append(f)
        mus.append(mu)
        s2s.append(sigma2)
        onsets.append(c)
        tmaxs.append(tmax)
    F = np.array(vals)
    mu = np.array(mus)
    s2 = np.array(s2s)
    sd = np.sqrt(s2[:, None] * np.maximum(F + mu[:, None], 1e-8) ** cfg.xi)
    blocks = tuple(
        F[:, k : k + 1] + mu[:, None] + sd[:, k : k + 1] * rng.standard_normal((G, cfg.replicates))
        for k in range(x.size)
    )
    ids = tuple(f"gene{g + 1:03d}" for g in range(G))
    ds = TimeCourseDataset(x, np.full(x.size, cfg.replicates, dtype=np.int64), blocks, ids)
    truth = SimulationTruth(curves, F, mu, s2, cfg.xi, np.array(onsets), np.array(tmaxs), np.array(misfit))
    return ds, truth
