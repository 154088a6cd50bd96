"""File formats: areas/adjacency CSV input, GeoJSON geometry, result writers.

Numeric output uses repr() of Python floats: full double precision, '.'
decimal separator, locale-independent, and byte-stable across reruns.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .boundary import BoundarySet, boundary_segments
from .errors import ValidationError
from .graph import AreaGraph
from .mcmc import DicResult, PosteriorSamples, effective_sample_size


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def read_table(path):
    """Generic CSV re-parser: (header, list of row dicts with string values)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [dict(zip(header, row)) for row in reader]
    return header, rows


def read_areas_csv(path, metric_columns=None):
    """Read the areas file: header `area_id,y,E,<metric columns...>`.

    Returns (area_ids, y, E, metrics) with metrics an ordered dict of
    column name -> float array. `metric_columns` selects and orders a subset;
    a missing selected column is a validation error.
    """
    header, rows = read_table(path)
    if len(header) < 3 or header[:3] != ["area_id", "y", "E"]:
        raise ValidationError(f"{path}: header must start with area_id,y,E")
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    available = header[3:]
    if metric_columns is None:
        selected = list(available)
    else:
        selected = list(metric_columns)
        for c in selected:
            if c not in available:
                raise ValidationError(f"{path}: metric column {c!r} not present")
    ids, y, E = [], [], []
    metrics = {c: [] for c in selected}
    for i, row in enumerate(rows):
        if any(row.get(c, "") == "" for c in ["area_id", "y", "E"] + selected):
            raise ValidationError(f"{path}: missing value in row {i + 2}")
        ids.append(row["area_id"])
        try:
            yv = float(row["y"])
            ev = float(row["E"])
            for c in selected:
                metrics[c].append(float(row[c]))
        except ValueError as exc:
            raise ValidationError(f"{path}: non-numeric value in row {i + 2}: {exc}") from None
        if yv < 0 or yv != int(yv):
            raise ValidationError(f"{path}: y must be non-negative integer (row {i + 2})")
        if ev <= 0:
            raise ValidationError(f"{path}: E must be positive (row {i + 2})")
        y.append(int(yv))
        E.append(ev)
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate area_id")
    return (ids, np.array(y, dtype=float), np.array(E, dtype=float),
            {c: np.array(v, dtype=float) for c, v in metrics.items()})


def read_adjacency(path, area_ids):
    """Read a border-pair list or square 0/1 matrix; auto-detected by shape.

    A file with exactly n rows of n fields, all 0/1, is a matrix (rows in
    areas-file order); anything else is a pair list of area ids with an
    optional `area_id_1,area_id_2` header. Returns input for build_graph.
    """
    n = len(area_ids)
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise ValidationError(f"{path}: empty adjacency file")
    stripped = [[c.strip() for c in row] for row in rows]
    if (len(stripped) == n and all(len(r) == n for r in stripped)
            and all(c in ("0", "1") for r in stripped for c in r)):
        return np.array([[int(c) for c in r] for r in stripped], dtype=np.int64)
    body = stripped
    if body and [c.lower() for c in body[0]] == ["area_id_1", "area_id_2"]:
        body = body[1:]
    index = {a: i for i, a in enumerate(area_ids)}
    pairs = []
    for i, row in enumerate(body):
        if len(row) != 2:
            raise ValidationError(f"{path}: pair row {i + 1} must have two fields")
        try:
            pairs.append((index[row[0]], index[row[1]]))
        except KeyError as exc:
            raise ValidationError(f"{path}: unknown area_id {exc.args[0]!r}") from None
    if not pairs:
        raise ValidationError(f"{path}: no border pairs")
    return np.array(pairs, dtype=np.int64)


def read_geojson_polygons(path, area_ids):
    """Polygon rings per area from a FeatureCollection keyed by `area_id`.

    Areas without a feature get None and are skipped by the overlay writer.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ValidationError(f"{path}: expected a GeoJSON FeatureCollection")
    by_id = {}
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        aid = props.get("area_id")
        if aid is None:
            raise ValidationError(f"{path}: feature without properties.area_id")
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            rings = list(coords)
        elif gtype == "MultiPolygon":
            rings = [ring for poly in coords for ring in poly]
        else:
            raise ValidationError(f"{path}: unsupported geometry type {gtype!r}")
        by_id[str(aid)] = rings
    return [by_id.get(a) for a in area_ids]


# ---------------------------------------------------------------------------
# result writers

def write_posterior_summary(samples: PosteriorSamples, path):
    """`param,chain,median,mean,ci2.5,ci97.5,ess`, per chain plus pooled."""
    names = ["mu", "tau2"]
    series = [samples.mu, samples.tau2]
    if samples.dis is not None and samples.alpha.shape[2]:
        for i, mname in enumerate(samples.dis.metric_names):
            names.append(f"alpha_{mname}")
            series.append(samples.alpha[:, :, i])
    names.append("deviance")
    series.append(samples.deviance)
    rows = []
    for name, arr in zip(names, series):
        for c in range(arr.shape[0]):
            x = arr[c]
            rows.append([name, str(c), np.median(x), x.mean(),
                         np.percentile(x, 2.5), np.percentile(x, 97.5),
                         effective_sample_size(x[None, :])])
        pooled = arr.reshape(-1)
        rows.append([name, "all", np.median(pooled), pooled.mean(),
                     np.percentile(pooled, 2.5), np.percentile(pooled, 97.5),
                     effective_sample_size(arr)])
    _write_rows(path, ["param", "chain", "median", "mean", "ci2.5", "ci97.5", "ess"],
                rows)


def write_risk_csv(samples: PosteriorSamples, path):
    r = samples.risk_draws()
    med = np.median(r, axis=0)
    lo = np.percentile(r, 2.5, axis=0)
    hi = np.percentile(r, 97.5, axis=0)
    rows = [[aid, med[k], lo[k], hi[k]]
            for k, aid in enumerate(samples.graph.area_ids)]
    _write_rows(path, ["area_id", "R_median", "R_ci2.5", "R_ci97.5"], rows)


def write_boundary_csv(bset: BoundarySet, blv_values, path):
    graph = bset.graph
    rows = []
    for b, (k, j) in enumerate(graph.borders):
        rows.append([graph.area_ids[k], graph.area_ids[j],
                     int(bset.w_median[b]), bset.w_mean[b],
                     bool(bset.is_boundary[b]), blv_values[b]])
    _write_rows(path, ["area_id_1", "area_id_2", "w_median", "w_mean",
                       "is_boundary", "blv"], rows)


def write_effects_csv(rows, path):
    """rows: (metric, estimate, lo, hi, alpha_min, verdict)."""
    _write_rows(path, ["metric", "estimate", "ci2.5", "ci97.5", "alpha_min",
                       "verdict"],
                [[m, e, lo, hi, am, v] for m, e, lo, hi, am, v in rows])


def write_dic_csv(res: DicResult, path):
    _write_rows(path, ["dic", "p_d", "mean_deviance"],
                [[res.dic, res.p_d, res.mean_deviance]])


def write_residuals_csv(area_ids, y, E, r_median, residuals, path):
    rows = [[aid, int(y[k]), E[k], r_median[k], residuals[k]]
            for k, aid in enumerate(area_ids)]
    _write_rows(path, ["area_id", "y", "E", "R_median", "residual"], rows)


def read_residuals_csv(path):
    header, rows = read_table(path)
    expected = ["area_id", "y", "E", "R_median", "residual"]
    if header != expected:
        raise ValidationError(f"{path}: expected header {','.join(expected)}")
    ids = [r["area_id"] for r in rows]
    to_arr = lambda c: np.array([float(r[c]) for r in rows])
    return ids, to_arr("y"), to_arr("E"), to_arr("R_median"), to_arr("residual")


def write_moran_csv(result, path):
    _write_rows(path, ["I", "p_value", "n_permutations", "residual_type"],
                [[result.I, result.p_value, int(result.n_permutations),
                  result.residual_type]])


def write_blv_csv(res, path, rule_a_flags=None, rule_b_flags=None):
    graph = res.graph
    header = ["area_id_1", "area_id_2", "blv"]
    if rule_a_flags is not None:
        header.append("rule_a")
    if rule_b_flags is not None:
        header.append("rule_b")
    rows = []
    for b, (k, j) in enumerate(graph.borders):
        row = [graph.area_ids[k], graph.area_ids[j], res.values[b]]
        if rule_a_flags is not None:
            row.append(bool(rule_a_flags[b]))
        if rule_b_flags is not None:
            row.append(bool(rule_b_flags[b]))
        rows.append(row)
    _write_rows(path, header, rows)


def write_scorecard_csv(scores, path):
    header = ["k1", "k2", "replicates", "ba", "nba", "bias_pct", "rmse_pct",
              "ba_se", "nba_se", "bias_se", "rmse_se"]
    rows = [[s.k1, s.k2, int(s.replicates), s.ba, s.nba, s.bias_pct, s.rmse_pct,
             s.ba_se, s.nba_se, s.bias_se, s.rmse_se] for s in scores]
    _write_rows(path, header, rows)


def write_replicates_csv(score, path):
    per = score.per_replicate
    header = ["replicate", "ba", "nba", "bias_pct", "rmse_pct", "boundary_count"]
    rows = [[int(per["replicate"][i]), per["ba"][i], per["nba"][i],
             per["bias_pct"][i], per["rmse_pct"][i],
             int(per["boundary_count"][i])] for i in range(len(per["ba"]))]
    _write_rows(path, header, rows)


def write_boundary_geojson(graph: AreaGraph, bset: BoundarySet, path):
    """LineString overlay of the boundary borders' shared polygon edges."""
    idx = np.where(bset.is_boundary)[0]
    features = []
    for b, lines in boundary_segments(graph, idx):
        k, j = graph.borders[b]
        for line in lines:
            features.append({
                "type": "Feature",
                "properties": {
                    "area_id_1": graph.area_ids[k],
                    "area_id_2": graph.area_ids[j],
                    "w_mean": float(bset.w_mean[b]),
                },
                "geometry": {"type": "LineString", "coordinates": line},
            })
    doc = {"type": "FeatureCollection", "features": features}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def ensure_outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out
