"""Areal contiguity structure and covariate-dissimilarity border metrics.

The contiguity graph fixes which pairs of areas *can* be neighbours; the
dissimilarity metrics and the non-negative coefficient vector alpha decide,
deterministically, which of those borders are kept as neighbour relations
(w = 1) and which are severed into boundaries (w = 0):

    w_b(alpha) = 1  iff  exp(-sum_i z_bi * alpha_i) >= 0.5

Ties at exactly 0.5 keep the border (no boundary). Borders with zero
dissimilarity can never become boundaries, whatever alpha is.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import ConstantMetricError, ValidationError

LN2 = np.log(2.0)


class AreaGraph:
    """Immutable areal contiguity graph.

    Parameters
    ----------
    borders : (B, 2) int array of unordered area-index pairs, each listed once.
    area_ids : optional sequence of unique string identifiers (defaults to
        stringified indices).
    centroids : optional (n, 2) planar coordinates, used by the simulation
        machinery to build correlation surfaces.
    polygons : optional per-area ring geometry (list of polygons, each a list
        of rings, each ring a list of [x, y]) used only for map export.
    """

    def __init__(self, n: int, borders: np.ndarray,
                 area_ids: Optional[Sequence[str]] = None,
                 centroids: Optional[np.ndarray] = None,
                 polygons: Optional[list] = None):
        if n <= 0:
            raise ValidationError("graph must contain at least one area")
        borders = np.asarray(borders, dtype=np.int64).reshape(-1, 2)
        if borders.size and (borders.min() < 0 or borders.max() >= n):
            raise ValidationError("border index out of range")
        if np.any(borders[:, 0] == borders[:, 1]):
            raise ValidationError("self-loop in border list")
        lo = np.minimum(borders[:, 0], borders[:, 1])
        hi = np.maximum(borders[:, 0], borders[:, 1])
        order = np.lexsort((hi, lo))
        borders = np.column_stack([lo, hi])[order]
        if borders.shape[0] and np.any(np.all(np.diff(borders, axis=0) == 0, axis=1)):
            raise ValidationError("duplicate border pair")
        if area_ids is None:
            area_ids = [str(i) for i in range(n)]
        area_ids = [str(a) for a in area_ids]
        if len(area_ids) != n or len(set(area_ids)) != n:
            raise ValidationError("area_ids must be unique and match the area count")
        self.n = n
        self.borders = borders
        self.borders.setflags(write=False)
        self.area_ids = tuple(area_ids)
        self.centroids = None if centroids is None else np.asarray(centroids, dtype=float)
        self.polygons = polygons
        self._cache: dict = {}

    @property
    def n_borders(self) -> int:
        return self.borders.shape[0]

    @cached_property
    def n_components(self) -> int:
        """Connected-component count. Disconnection is legal, just reported."""
        parent = list(range(self.n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for k, j in self.borders:
            rk, rj = find(int(k)), find(int(j))
            if rk != rj:
                parent[rk] = rj
        return len({find(i) for i in range(self.n)})

    @cached_property
    def incidence(self):
        """Per-area arrays of (neighbour index, border index)."""
        nbrs = [[] for _ in range(self.n)]
        bids = [[] for _ in range(self.n)]
        for b, (k, j) in enumerate(self.borders):
            nbrs[k].append(j)
            bids[k].append(b)
            nbrs[j].append(k)
            bids[j].append(b)
        return ([np.array(a, dtype=np.int64) for a in nbrs],
                [np.array(a, dtype=np.int64) for a in bids])

    @cached_property
    def coloring(self) -> list:
        """Greedy proper coloring: area lists whose members share no border.

        Within one color class every full conditional depends only on areas
        outside the class, so per-area Metropolis updates of a whole class may
        be applied simultaneously.
        """
        nbrs, _ = self.incidence
        colors = np.full(self.n, -1, dtype=np.int64)
        for k in range(self.n):
            used = set(colors[nbrs[k]].tolist())
            c = 0
            while c in used:
                c += 1
            colors[k] = c
        return [np.where(colors == c)[0] for c in range(int(colors.max()) + 1)]

    def index_of(self, area_id: str) -> int:
        try:
            return self._id_index[area_id]
        except KeyError:
            raise ValidationError(f"unknown area_id {area_id!r}") from None

    @cached_property
    def _id_index(self) -> dict:
        return {a: i for i, a in enumerate(self.area_ids)}

    def __repr__(self):
        return (f"AreaGraph(n={self.n}, borders={self.n_borders}, "
                f"components={self.n_components})")


def build_graph(adjacency_input, area_ids=None, centroids=None,
                polygons=None) -> AreaGraph:
    """Build an AreaGraph from a border-pair list or a 0/1 adjacency matrix.

    Matrix input must be square, symmetric, with a zero diagonal. Pair input
    is a sequence of (k, j) index pairs; the stored list is normalized to
    unordered pairs, each listed once.
    """
    arr = np.asarray(adjacency_input)
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1] and arr.shape[1] != 2:
        return _graph_from_matrix(arr, area_ids, centroids, polygons)
    if arr.ndim == 2 and arr.shape == (2, 2):
        # ambiguous shape: a 2x2 0/1 matrix is read as a matrix
        if np.isin(arr, (0, 1)).all():
            return _graph_from_matrix(arr, area_ids, centroids, polygons)
    if arr.ndim == 2 and arr.shape[1] == 2:
        pairs = arr.astype(np.int64, copy=False)
        if pairs.shape[0] == 0:
            raise ValidationError("empty border list; pass a matrix for border-free graphs")
        n = int(pairs.max()) + 1 if area_ids is None else len(area_ids)
        return AreaGraph(n, pairs, area_ids, centroids, polygons)
    if arr.size == 0:
        raise ValidationError("empty adjacency input")
    raise ValidationError("adjacency input must be an (B, 2) pair list or a square 0/1 matrix")


def _graph_from_matrix(mat, area_ids, centroids, polygons) -> AreaGraph:
    mat = np.asarray(mat)
    if mat.shape[0] == 0:
        raise ValidationError("empty adjacency matrix")
    if not np.isin(mat, (0, 1)).all():
        raise ValidationError("adjacency matrix entries must be 0 or 1")
    if np.any(np.diag(mat) != 0):
        raise ValidationError("adjacency matrix must have a zero diagonal")
    if np.any(mat != mat.T):
        raise ValidationError("adjacency matrix must be symmetric")
    k, j = np.nonzero(np.triu(mat, 1))
    return AreaGraph(mat.shape[0], np.column_stack([k, j]), area_ids,
                     centroids, polygons)


@dataclass(frozen=True)
class DissimilarityData:
    """Standardized border dissimilarity metrics.

    ``border_metrics[b, i]`` is the non-negative standardized dissimilarity of
    metric ``i`` across border ``b``; ``scales[i]`` is the sample standard
    deviation (over borders) of the raw absolute differences that produced it,
    so every metric has unit standard deviation over borders.
    ``raw`` holds the per-area covariate values when the metric came from
    area-level covariates, and is None when border-level values were supplied
    directly (the simulation-study path).
    """

    q: int
    metric_names: tuple
    border_metrics: np.ndarray
    scales: np.ndarray
    raw: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        bm = np.asarray(self.border_metrics, dtype=float)
        if bm.ndim != 2 or bm.shape[1] != self.q:
            raise ValidationError("border_metrics must be a (B, q) array")
        if not np.isfinite(bm).all() or (bm < 0).any():
            raise ValidationError("border metrics must be finite and non-negative")
        object.__setattr__(self, "border_metrics", bm)
        bm.setflags(write=False)

    @staticmethod
    def from_covariates(graph: AreaGraph, covariates: np.ndarray,
                        metric_names=None) -> "DissimilarityData":
        return compute_border_metrics(graph, covariates, metric_names)

    @staticmethod
    def from_border_values(graph: AreaGraph, values: np.ndarray,
                           metric_names=None) -> "DissimilarityData":
        """Standardize border-level raw metric values directly.

        Used when the dissimilarity is observed per border rather than derived
        from per-area covariates; the same unit-SD standardization applies.
        """
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[0] == 1 and graph.n_borders != 1:
            values = values.T
        if values.shape[0] != graph.n_borders:
            raise ValidationError("one row of metric values per border required")
        if (values < 0).any() or not np.isfinite(values).all():
            raise ValidationError("border metric values must be finite and non-negative")
        q = values.shape[1]
        names = _metric_names(metric_names, q)
        if graph.n_borders < 2:
            raise ValidationError(
                "standard deviation over borders is undefined with fewer than 2 borders")
        scales = values.std(axis=0, ddof=1)
        for i, s in enumerate(scales):
            if s == 0.0:
                raise ConstantMetricError(names[i])
        return DissimilarityData(q=q, metric_names=names,
                                 border_metrics=values / scales, scales=scales)


def _metric_names(metric_names, q) -> tuple:
    if metric_names is None:
        return tuple(f"metric_{i}" for i in range(q))
    names = tuple(str(m) for m in metric_names)
    if len(names) != q:
        raise ValidationError("metric_names length must equal q")
    return names


def compute_border_metrics(graph: AreaGraph, covariates: np.ndarray,
                           metric_names=None) -> DissimilarityData:
    """Standardized absolute covariate differences across each border.

    For border b = (k, j) and metric i the raw value is |z_ki - z_ji|; it is
    divided by the sample standard deviation of those raw values over all
    borders. A metric whose raw differences are constant over borders cannot
    be standardized and is rejected with ConstantMetricError.
    """
    cov = np.asarray(covariates, dtype=float)
    if cov.ndim == 1:
        cov = cov[:, None]
    if cov.shape[0] != graph.n:
        raise ValidationError("covariates must have one row per area")
    if not np.isfinite(cov).all():
        raise ValidationError("covariates contain missing or non-finite values")
    q = cov.shape[1]
    if q < 1:
        raise ValidationError("at least one covariate required")
    names = _metric_names(metric_names, q)
    if graph.n_borders < 2:
        raise ValidationError(
            "standard deviation over borders is undefined with fewer than 2 borders")
    k, j = graph.borders[:, 0], graph.borders[:, 1]
    raw_diff = np.abs(cov[k] - cov[j])
    scales = raw_diff.std(axis=0, ddof=1)
    for i, s in enumerate(scales):
        if s == 0.0:
            raise ConstantMetricError(names[i])
    return DissimilarityData(q=q, metric_names=names,
                             border_metrics=raw_diff / scales,
                             scales=scales, raw=cov)


@dataclass(frozen=True)
class AdjacencyState:
    """Binary neighbour-relation assignment over the borders of a graph."""

    graph: AreaGraph
    w: np.ndarray              # (B,) uint8, 1 = neighbours, 0 = boundary
    row_sums: np.ndarray       # (n,) number of retained borders incident to each area
    boundary_count: int

    def __post_init__(self):
        self.w.setflags(write=False)
        self.row_sums.setflags(write=False)

    @property
    def boundary_fraction(self) -> float:
        b = self.graph.n_borders
        return self.boundary_count / b if b else 0.0


def evaluate_w(graph: AreaGraph, dis: DissimilarityData,
               alpha: np.ndarray) -> AdjacencyState:
    """Deterministic border assignment for coefficient vector alpha >= 0.

    A border is kept (w = 1) iff exp(-z_b . alpha) >= 0.5, i.e. iff
    z_b . alpha <= ln 2; ties keep the border. Non-borders carry no w at all.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if alpha.shape != (dis.q,):
        raise ValidationError(f"alpha must have {dis.q} components")
    if (alpha < 0).any():
        raise ValidationError("alpha components must be non-negative")
    s = dis.border_metrics @ alpha
    # few-ulp slack so the tie (and alpha = ln2 / z_max exactly) lands on the
    # keep side regardless of rounding in z * (ln2 / z)
    w = (s <= LN2 * (1.0 + 1e-15)).astype(np.uint8)
    return _adjacency_from_w(graph, w)


def _adjacency_from_w(graph: AreaGraph, w: np.ndarray) -> AdjacencyState:
    w = np.asarray(w, dtype=np.uint8).copy()
    if w.shape != (graph.n_borders,):
        raise ValidationError("w must have one entry per border")
    wf = w.astype(np.float64)
    rs = (np.bincount(graph.borders[:, 0], weights=wf, minlength=graph.n)
          + np.bincount(graph.borders[:, 1], weights=wf, minlength=graph.n))
    return AdjacencyState(graph=graph, w=w, row_sums=rs.astype(np.int64),
                          boundary_count=int(np.sum(w == 0)))


def adjacency_from_w(graph: AreaGraph, w) -> AdjacencyState:
    """AdjacencyState for an explicit 0/1 border assignment (fixed-W fits)."""
    return _adjacency_from_w(graph, np.asarray(w))


def alpha_min(dis: DissimilarityData, i: int) -> float:
    """No-effect threshold for metric i: ln(2) / max_b z_bi.

    Below this value the metric cannot, on its own, sever any border.
    """
    zmax = float(dis.border_metrics[:, i].max())
    if zmax <= 0.0:
        raise ValidationError(f"metric {dis.metric_names[i]!r} is zero on every border")
    return LN2 / zmax


def alpha_natural_limit(dis: DissimilarityData, i: int) -> float:
    """ln(2) / (min positive z_bi): beyond it the metric alone severs every
    border with positive dissimilarity."""
    z = dis.border_metrics[:, i]
    pos = z[z > 0]
    if pos.size == 0:
        raise ValidationError(f"metric {dis.metric_names[i]!r} is zero on every border")
    return LN2 / float(pos.min())


def alpha_prior_upper(dis: DissimilarityData, i: int,
                      max_boundary_fraction: float = 0.5) -> float:
    """Prior upper limit M_i for metric i's coefficient.

    Chosen so that at alpha_i = M_i (other components zero) at most
    ``max_boundary_fraction`` of borders are classified as boundaries:
    M_i = ln(2) / z^(p), with z^(p) the lower-nearest-rank empirical quantile
    of the metric at probability 1 - fraction. With fraction = 1 this is the
    natural limit ln(2) / z^min over positive values.
    """
    if not 0.0 < max_boundary_fraction <= 1.0:
        raise ValidationError("max_boundary_fraction must be in (0, 1]")
    z = dis.border_metrics[:, i]
    b = z.shape[0]
    rank = int(np.ceil((1.0 - max_boundary_fraction) * b))
    if rank == 0:
        return alpha_natural_limit(dis, i)
    zp = float(np.sort(z)[rank - 1])
    if zp <= 0.0:
        raise ValidationError(
            f"quantile of metric {dis.metric_names[i]!r} at the requested "
            "boundary fraction is zero; increase max_boundary_fraction")
    return LN2 / zp
