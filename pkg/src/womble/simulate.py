"""Simulation study: Matern-correlated risk surfaces with piecewise-constant
means, tunable-quality dissimilarity metrics, and the detection scorecard.

Each replicate draws a fresh log-risk surface phi ~ MVN(m, field_sd^2 C),
where m is 0 in the background group and k1 elsewhere, and C is a Matern
correlation matrix whose range is calibrated so the median inter-area
correlation hits a target (0.5 by default). Counts are Poisson(E exp(phi)).
The single dissimilarity metric is drawn per border as |N(1, 0.5^2)| off the
true boundaries and |N(1 + k2, 0.5^2)| on them, then standardized to unit
standard deviation over borders like any other metric.

The field's marginal standard deviation defaults to 0.2; detection quality
depends strongly on it (larger values bury the k1 step under smooth field
variation), and it is exposed as configuration.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .boundary import classify_boundaries
from .errors import NumericError, ValidationError
from .graph import AreaGraph, DissimilarityData
from .mcmc import ChainConfig, ObservedData, run_chains
from .rng import REPLICATE

RANGE_CAP_FACTOR = 1e9


def lattice_graph(nrows: int, ncols: int, with_polygons: bool = False) -> AreaGraph:
    """Rectangular rook-adjacency lattice with unit spacing.

    Centroids are (row, col); optional polygons are the unit squares around
    them, so the GeoJSON overlay path can be exercised on generated data.
    """
    if nrows < 1 or ncols < 1:
        raise ValidationError("lattice dimensions must be positive")
    borders = []
    for r in range(nrows):
        for c in range(ncols):
            k = r * ncols + c
            if c + 1 < ncols:
                borders.append((k, k + 1))
            if r + 1 < nrows:
                borders.append((k, (r + 1) * ncols + c))
    centroids = np.array([(r, c) for r in range(nrows) for c in range(ncols)],
                         dtype=float)
    polygons = None
    if with_polygons:
        polygons = []
        for r, c in centroids:
            ring = [[r - 0.5, c - 0.5], [r - 0.5, c + 0.5],
                    [r + 0.5, c + 0.5], [r + 0.5, c - 0.5], [r - 0.5, c - 0.5]]
            polygons.append([ring])
    ids = [f"a{r}_{c}" for r in range(nrows) for c in range(ncols)]
    return AreaGraph(nrows * ncols, np.array(borders, dtype=np.int64),
                     area_ids=ids, centroids=centroids, polygons=polygons)


# 16x16 template: one background group plus five rectangular blocks placed
# interior and mutually separated; exactly 48 of 480 borders (10%) are true
# boundaries at that size. Rows/cols are inclusive.
_BLOCK_TEMPLATE = (
    ((2, 3), (2, 3)),
    ((2, 3), (11, 12)),
    ((7, 8), (6, 8)),
    ((12, 13), (2, 4)),
    ((11, 13), (11, 13)),
)


def five_block_partition(nrows: int = 16, ncols: int = 16) -> np.ndarray:
    """Group labels (0 = background, 1..5 = blocks) for a lattice.

    The 16x16 template is scaled proportionally for other sizes; the result
    must keep every block interior, non-empty, and non-overlapping.
    """
    labels = np.zeros(nrows * ncols, dtype=np.int64)
    for g, ((r0, r1), (c0, c1)) in enumerate(_BLOCK_TEMPLATE, start=1):
        sr0 = int(round(r0 * nrows / 16))
        sr1 = int(round(r1 * nrows / 16))
        sc0 = int(round(c0 * ncols / 16))
        sc1 = int(round(c1 * ncols / 16))
        if sr0 < 1 or sc0 < 1 or sr1 > nrows - 2 or sc1 > ncols - 2 or sr1 < sr0 or sc1 < sc0:
            raise ValidationError(
                f"lattice {nrows}x{ncols} too small for the five-block partition")
        for r in range(sr0, sr1 + 1):
            for c in range(sc0, sc1 + 1):
                if labels[r * ncols + c] != 0:
                    raise ValidationError(
                        f"scaled blocks overlap on a {nrows}x{ncols} lattice")
                labels[r * ncols + c] = g
    return labels


def true_boundary_mask(graph: AreaGraph, labels: np.ndarray) -> np.ndarray:
    """True iff a border's endpoints carry different group labels."""
    labels = np.asarray(labels)
    if labels.shape != (graph.n,):
        raise ValidationError("one label per area required")
    return labels[graph.borders[:, 0]] != labels[graph.borders[:, 1]]


def matern_correlation(d, range_: float, kappa: float = 2.5):
    """Matern correlation at distance d with smoothness kappa.

    kappa = 2.5 uses the closed half-integer form (1 + a + a^2/3) exp(-a)
    with a = sqrt(5) d / range; other smoothness values go through the
    modified Bessel function.
    """
    if range_ <= 0:
        raise ValidationError("range must be positive")
    if kappa <= 0:
        raise ValidationError("kappa must be positive")
    d = np.asarray(d, dtype=float)
    if (d < 0).any():
        raise ValidationError("distances must be non-negative")
    if kappa == 2.5:
        a = math.sqrt(5.0) * d / range_
        out = (1.0 + a + a * a / 3.0) * np.exp(-a)
    else:
        a = math.sqrt(2.0 * kappa) * d / range_
        with np.errstate(invalid="ignore"):
            out = np.where(
                a > 0.0,
                (2.0 ** (1.0 - kappa) / gamma_fn(kappa)) * a ** kappa * kv(kappa, a),
                1.0)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _calibrate_from_distances(dists: np.ndarray, target_median: float,
                              kappa: float) -> float:
    if not 0.0 < target_median < 1.0:
        raise ValidationError("target median correlation must be in (0, 1)")
    dists = dists[dists > 0]
    if dists.size == 0:
        raise ValidationError("all centroids coincide; cannot calibrate a range")
    median = lambda r: float(np.median(matern_correlation(dists, r, kappa)))
    lo = hi = float(np.median(dists))
    cap = float(dists.max()) * RANGE_CAP_FACTOR
    while median(hi) < target_median:
        hi *= 2.0
        if hi > cap:
            raise NumericError(
                f"range exceeded cap {cap:.3g} before reaching median "
                f"correlation {target_median}")
    while median(lo) > target_median:
        lo /= 2.0
        if lo < 1e-30:
            raise NumericError("range collapsed before reaching the target median")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = median(mid)
        if abs(val - target_median) <= 1e-6:
            return mid
        if val < target_median:
            lo = mid
        else:
            hi = mid
    raise NumericError("range calibration did not converge")


def calibrate_range(centroids: np.ndarray, target_median: float = 0.5,
                    kappa: float = 2.5) -> float:
    """Bisection for the Matern range whose median all-pairs correlation
    equals the target within 1e-6. Correlation is monotone increasing in the
    range, so convergence is guaranteed below the cap."""
    centroids = np.asarray(centroids, dtype=float)
    if centroids.shape[0] < 2:
        raise ValidationError("at least two centroids required")
    return _calibrate_from_distances(pdist(centroids), target_median, kappa)


@dataclass(frozen=True)
class SimConfig:
    """One cell of the simulation study."""

    graph: AreaGraph
    true_partition: np.ndarray
    k1: float
    k2: float
    kappa: float = 2.5
    target_median_correlation: float = 0.5
    field_sd: float = 0.2
    E: Union[float, np.ndarray] = 100.0
    replicates: int = 20
    seed: int = 0
    median_pairs: str = "all"       # "all" or "adjacent"
    workers: int = 1
    _plan: Optional[dict] = field(default=None, init=False, repr=False,
                                  compare=False)

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValidationError("kappa must be positive")
        if not 0.0 < self.target_median_correlation < 1.0:
            raise ValidationError("target median correlation must be in (0, 1)")
        if self.k1 < 0 or self.k2 < 0:
            raise ValidationError("k1 and k2 must be non-negative")
        if self.field_sd <= 0:
            raise ValidationError("field_sd must be positive")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.median_pairs not in ("all", "adjacent"):
            raise ValidationError("median_pairs must be 'all' or 'adjacent'")
        labels = np.asarray(self.true_partition, dtype=np.int64)
        if labels.shape != (self.graph.n,):
            raise ValidationError("true_partition must label every area")
        object.__setattr__(self, "true_partition", labels)


def _prepare(config: SimConfig) -> dict:
    plan = config._plan
    if plan is not None:
        return plan
    graph = config.graph
    if graph.centroids is None:
        raise ValidationError("graph needs centroids for surface generation")
    if config.median_pairs == "all":
        rng_val = calibrate_range(graph.centroids,
                                  config.target_median_correlation, config.kappa)
    else:
        k, j = graph.borders[:, 0], graph.borders[:, 1]
        d = np.linalg.norm(graph.centroids[k] - graph.centroids[j], axis=1)
        rng_val = _calibrate_from_distances(
            d, config.target_median_correlation, config.kappa)
    dmat = squareform(pdist(graph.centroids))
    corr = matern_correlation(dmat, rng_val, config.kappa)
    try:
        chol = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        try:
            chol = np.linalg.cholesky(corr + 1e-10 * np.eye(graph.n))
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"correlation matrix not factorizable: {exc}") from exc
    E = np.broadcast_to(np.asarray(config.E, dtype=float), (graph.n,)).copy()
    if (E <= 0).any() or not np.isfinite(E).all():
        raise ValidationError("expected counts must be positive and finite")
    plan = {
        "range": rng_val,
        "chol": chol,
        "E": E,
        "mean": np.where(config.true_partition == 0, 0.0, config.k1),
        "true_boundary": true_boundary_mask(graph, config.true_partition),
    }
    object.__setattr__(config, "_plan", plan)
    return plan


def gen_surface(config: SimConfig, rng: np.random.Generator):
    """Draw one log-risk surface; returns (phi_true, R_true)."""
    plan = _prepare(config)
    phi = plan["mean"] + config.field_sd * (plan["chol"] @ rng.standard_normal(config.graph.n))
    return phi, np.exp(phi)


def gen_dissimilarity(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Raw border metric draws: |N(1, 0.5^2)| off-boundary, |N(1+k2, 0.5^2)|
    on-boundary. Standardization to unit SD happens when the values are turned
    into DissimilarityData."""
    plan = _prepare(config)
    means = np.where(plan["true_boundary"], 1.0 + config.k2, 1.0)
    return np.abs(rng.normal(means, 0.5))


def gen_counts(R_true: np.ndarray, E: np.ndarray,
               rng: np.random.Generator) -> np.ndarray:
    """Independent Poisson counts with mean E_k R_k."""
    E = np.asarray(E, dtype=float)
    if (E <= 0).any():
        raise ValidationError("expected counts must be positive")
    return rng.poisson(E * np.asarray(R_true, dtype=float))


@dataclass(frozen=True)
class SimScore:
    """Replicate-averaged scorecard for one (k1, k2) cell.

    ba / nba are percentage agreement on true boundaries / non-boundaries;
    bias_pct and rmse_pct are the relative error of the posterior-median risk
    surface, in percent of truth. *_se fields are Monte-Carlo standard errors
    over replicates.
    """

    k1: float
    k2: float
    replicates: int
    ba: float
    nba: float
    bias_pct: float
    rmse_pct: float
    ba_se: float
    nba_se: float
    bias_se: float
    rmse_se: float
    per_replicate: dict


def _replicate_result(config: SimConfig, chain_config: ChainConfig,
                      rep: int) -> dict:
    plan = _prepare(config)
    data_rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(REPLICATE, rep, 0)))
    chain_seed = int(np.random.SeedSequence(
        config.seed, spawn_key=(REPLICATE, rep, 1)).generate_state(1)[0])
    phi_true, r_true = gen_surface(config, data_rng)
    raw = gen_dissimilarity(config, data_rng)
    y = gen_counts(r_true, plan["E"], data_rng)
    dis = DissimilarityData.from_border_values(config.graph, raw,
                                               metric_names=("sim_metric",))
    data = ObservedData(y=y, E=plan["E"])
    cfg = replace(chain_config, seed=chain_seed,
                  workers=1 if config.workers > 1 else chain_config.workers)
    samples = run_chains(data, config.graph, dis, cfg)
    bset = classify_boundaries(samples)
    tb = plan["true_boundary"]
    if not tb.any() or tb.all():
        raise ValidationError("partition must yield both boundaries and non-boundaries")
    ba = 100.0 * float(np.mean(bset.is_boundary[tb]))
    nba = 100.0 * float(np.mean(~bset.is_boundary[~tb]))
    r_hat = np.median(samples.risk_draws(), axis=0)
    rel = (r_hat - r_true) / r_true
    return {
        "replicate": rep,
        "ba": ba,
        "nba": nba,
        "bias_pct": 100.0 * float(np.mean(rel)),
        "rmse_pct": 100.0 * float(np.sqrt(np.mean(rel ** 2))),
        "boundary_count": bset.boundary_count,
    }


def run_study(config: SimConfig, chain_config: ChainConfig) -> SimScore:
    """Generate, fit, and score `config.replicates` independent replicates.

    Replicates derive their streams from (seed, replicate index) and may run
    in a process pool; results are identical either way.
    """
    _prepare(config)
    reps = range(config.replicates)
    if config.workers > 1 and config.replicates > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_replicate_result, config, chain_config, r)
                       for r in reps]
            results = [f.result() for f in futures]
    else:
        results = [_replicate_result(config, chain_config, r) for r in reps]

    def col(name):
        return np.array([r[name] for r in results], dtype=float)

    def se(x):
        return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0

    ba, nba = col("ba"), col("nba")
    bias, rmse = col("bias_pct"), col("rmse_pct")
    return SimScore(
        k1=config.k1, k2=config.k2, replicates=config.replicates,
        ba=float(ba.mean()), nba=float(nba.mean()),
        bias_pct=float(bias.mean()), rmse_pct=float(rmse.mean()),
        ba_se=se(ba), nba_se=se(nba), bias_se=se(bias), rmse_se=se(rmse),
        per_replicate={k: col(k) if k != "replicate" else
                       np.array([r[k] for r in results])
                       for k in results[0]})
