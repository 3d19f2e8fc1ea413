"""Fidelity metrics between a real and a synthetic dataset.

Per-column distances (Wasserstein for numerics, Jensen-Shannon for
categoricals), the Frobenius norm of the difference between pairwise
association matrices, a k-way marginal score on a 0..1000 scale, and
rule-based per-entity consistency checks for nested data.

Tables here are plain dicts mapping column name to a list of values. Nested
records are flattened first (see data.flatten_records): record-level columns
keep one row per record, and when the schema has a list field every item
contributes a row that repeats its parent's scalar values.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .codecs.primitives import DEFAULT_BINS, QuantileTable
from .data import flatten_records
from .schema import Enum, Number, leaf_columns

log = logging.getLogger("nestgen.metrics")


class MetricsError(ValueError):
    pass


def _column(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise MetricsError(f"column {name!r} is empty")
    return arr


def wasserstein_1d(real, synth, normalized: bool = False,
                   name: str = "column") -> float:
    """1-D earth mover's distance. Equal-size columns reduce to the mean
    absolute difference of the sorted samples; unequal sizes integrate the
    CDF gap. Normalized mode rescales both columns by the real column's
    min/max first (a constant real column falls back to the raw distance)."""
    r = _column(real, name)
    s = _column(synth, name)
    if normalized:
        lo, hi = r.min(), r.max()
        span = hi - lo
        if span > 0:
            r = (r - lo) / span
            s = (s - lo) / span
    r = np.sort(r)
    s = np.sort(s)
    if r.size == s.size:
        return float(np.mean(np.abs(r - s)))
    grid = np.sort(np.concatenate([r, s]))
    widths = np.diff(grid)
    cdf_r = np.searchsorted(r, grid[:-1], side="right") / r.size
    cdf_s = np.searchsorted(s, grid[:-1], side="right") / s.size
    return float(np.sum(np.abs(cdf_r - cdf_s) * widths))


def _freqs(values, support):
    index = {v: i for i, v in enumerate(support)}
    counts = np.zeros(len(support))
    for v in values:
        counts[index[_cat_key(v)]] += 1
    return counts / counts.sum()


def _cat_key(v):
    return v if isinstance(v, str) else str(v)


def jensen_shannon(real, synth, name: str = "column") -> tuple[float, float]:
    """(distance, divergence) between the empirical category frequencies,
    natural log, over the union of observed symbols. The distance is the
    square root of the divergence."""
    if len(real) == 0 or len(synth) == 0:
        raise MetricsError(f"column {name!r} is empty")
    support = sorted({_cat_key(v) for v in real} | {_cat_key(v) for v in synth})
    p = _freqs(real, support)
    q = _freqs(synth, support)
    m = 0.5 * (p + q)
    div = 0.5 * _kl(p, m) + 0.5 * _kl(q, m)
    div = max(0.0, float(div))
    return math.sqrt(div), div


def _kl(p, m):
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / m[nz])))


def _entropy(counts):
    p = counts / counts.sum()
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def theils_u(x, y) -> float | None:
    """Uncertainty coefficient U(x|y): the fraction of x's entropy explained
    by knowing y. Asymmetric. None when x is constant (undefined)."""
    xs = [_cat_key(v) for v in x]
    ys = [_cat_key(v) for v in y]
    xi = {v: i for i, v in enumerate(sorted(set(xs)))}
    yi = {v: i for i, v in enumerate(sorted(set(ys)))}
    joint = np.zeros((len(xi), len(yi)))
    for a, b in zip(xs, ys):
        joint[xi[a], yi[b]] += 1
    hx = _entropy(joint.sum(axis=1))
    if hx <= 0:
        return None
    n = joint.sum()
    py = joint.sum(axis=0) / n
    hxy = 0.0
    for j in range(joint.shape[1]):
        col = joint[:, j]
        if col.sum() > 0:
            hxy += py[j] * _entropy(col)
    return (hx - hxy) / hx


def correlation_ratio(categories, values) -> float | None:
    """eta: sqrt of the between-group share of variance. None when the
    numeric column is constant (undefined)."""
    cats = [_cat_key(v) for v in categories]
    vals = np.asarray(values, dtype=np.float64)
    total = float(np.sum((vals - vals.mean()) ** 2))
    if total <= 0:
        return None
    groups = {}
    for c, v in zip(cats, vals):
        groups.setdefault(c, []).append(v)
    between = sum(len(g) * (np.mean(g) - vals.mean()) ** 2
                  for g in groups.values())
    return math.sqrt(max(0.0, float(between) / total))


def _pearson(x, y) -> float | None:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.std() == 0 or b.std() == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def association_matrix(table: dict, kinds: dict) -> np.ndarray:
    """Pairwise association matrix over the table's columns (order: sorted
    names). Numeric/numeric Pearson, categorical/categorical Theil's U in
    both orientations, mixed pairs the correlation ratio. Undefined entries
    (a constant column) are NaN; correlation_diff zeroes them out."""
    names = sorted(table)
    n = len(names)
    mat = np.eye(n)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            a, b = names[i], names[j]
            ka, kb = kinds[a], kinds[b]
            if ka == "numeric" and kb == "numeric":
                if j < i:
                    mat[i, j] = mat[j, i]
                    continue
                v = _pearson(table[a], table[b])
            elif ka == "categorical" and kb == "categorical":
                v = theils_u(table[a], table[b])
            elif ka == "categorical":
                v = correlation_ratio(table[a], table[b])
            else:
                v = correlation_ratio(table[b], table[a])
            mat[i, j] = np.nan if v is None else v
    return mat


def correlation_diff(real_table: dict, synth_table: dict, kinds: dict) -> float:
    """Frobenius norm of the difference between the two association
    matrices. A pair undefined in either dataset (constant column)
    contributes 0, with a warning naming the columns."""
    names = sorted(real_table)
    if sorted(synth_table) != names:
        raise MetricsError("real and synthetic tables have different columns")
    a = association_matrix(real_table, kinds)
    b = association_matrix(synth_table, kinds)
    diff = a - b
    bad = ~(np.isfinite(a) & np.isfinite(b))
    if bad.any():
        for i, j in zip(*np.where(bad)):
            log.warning("association between %r and %r undefined (constant "
                        "column); pair contributes 0", names[i], names[j])
        diff[bad] = 0.0
    return float(np.linalg.norm(diff))


def _codes_for_column(real_vals, synth_vals, kind, n_bins):
    if kind == "numeric":
        table = QuantileTable.fit(np.asarray(real_vals, dtype=np.float64), n_bins)
        r = table.bin_values(np.asarray(real_vals, dtype=np.float64))
        s = table.bin_values(np.asarray(synth_vals, dtype=np.float64))
        return r, s, table.n_bins
    support = sorted({_cat_key(v) for v in real_vals}
                     | {_cat_key(v) for v in synth_vals})
    index = {v: i for i, v in enumerate(support)}
    r = np.array([index[_cat_key(v)] for v in real_vals], dtype=np.int64)
    s = np.array([index[_cat_key(v)] for v in synth_vals], dtype=np.int64)
    return r, s, len(support)


def marginal_score(real_table: dict, synth_table: dict, kinds: dict,
                   k: int = 4, n_subsets: int = 50, seed: int = 0,
                   bins: dict | None = None) -> dict:
    """Mean total-variation distance over random k-column joint marginals,
    remapped to a 0..1000 score (1000 = identical marginals). Numeric
    columns are quantile-binned first, using the real column as reference."""
    names = sorted(real_table)
    if sorted(synth_table) != names:
        raise MetricsError("real and synthetic tables have different columns")
    if len(names) < k:
        raise MetricsError(f"need at least {k} columns for {k}-way marginals, "
                           f"have {len(names)}")
    coded = {}
    for name in names:
        n_bins = (bins or {}).get(name, DEFAULT_BINS)
        coded[name] = _codes_for_column(real_table[name], synth_table[name],
                                        kinds[name], n_bins)
    rng = np.random.default_rng(seed)
    tvds = []
    for _ in range(n_subsets):
        subset = [names[i] for i in rng.choice(len(names), size=k, replace=False)]
        dims = tuple(coded[c][2] for c in subset)
        r_flat = np.ravel_multi_index(tuple(coded[c][0] for c in subset), dims)
        s_flat = np.ravel_multi_index(tuple(coded[c][1] for c in subset), dims)
        cells = int(np.prod(dims))
        pr = np.bincount(r_flat, minlength=cells) / r_flat.size
        ps = np.bincount(s_flat, minlength=cells) / s_flat.size
        tvds.append(0.5 * float(np.abs(pr - ps).sum()))
    mean_tvd = float(np.mean(tvds))
    return {"score": 1000.0 * (1.0 - mean_tvd), "mean_tvd": mean_tvd,
            "k": k, "n_subsets": n_subsets, "seed": seed}


_RULE_KINDS = ("constant", "at-most-one-per-key", "monotone", "derived-constant")


def _rule_label(rule):
    kind = rule["kind"]
    arg = rule.get("field") or rule.get("key")
    if kind == "derived-constant":
        arg = f"{rule['key']}->{rule['field']}"
    return f"{kind}({arg})"


def _normalize_rules(rules):
    if isinstance(rules, dict):
        default_list = rules.get("list")
        rules = rules.get("rules", [])
    else:
        default_list = None
    out = []
    for r in rules:
        kind = str(r.get("rule", r.get("type", ""))).replace("_", "-")
        if kind not in _RULE_KINDS:
            raise MetricsError(f"unknown consistency rule {kind!r}; expected "
                               f"one of {', '.join(_RULE_KINDS)}")
        rule = {"kind": kind, "list": r.get("list", default_list)}
        if kind in ("constant", "monotone"):
            if "field" not in r:
                raise MetricsError(f"rule {kind} needs a field")
            rule["field"] = r["field"]
        elif kind == "at-most-one-per-key":
            if "key" not in r:
                raise MetricsError(f"rule {kind} needs a key")
            rule["key"] = r["key"]
        else:
            if "key" not in r or "field" not in r:
                raise MetricsError("rule derived-constant needs key and field")
            rule["key"] = r["key"]
            rule["field"] = r["field"]
        out.append(rule)
    return out


def _ordered(values):
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError):
        return [str(v) for v in values]


def _entity_ok(items, rule):
    def col(field):
        out = []
        for it in items:
            if field not in it:
                raise MetricsError(f"consistency rule references missing "
                                   f"field {field!r}")
            out.append(it[field])
        return out

    kind = rule["kind"]
    if kind == "constant":
        vals = col(rule["field"])
        return len({_cat_key(v) for v in vals}) <= 1
    if kind == "at-most-one-per-key":
        keys = [_cat_key(v) for v in col(rule["key"])]
        return len(set(keys)) == len(keys)
    if kind == "monotone":
        vals = _ordered(col(rule["field"]))
        return all(a <= b for a, b in zip(vals, vals[1:]))
    # derived-constant: within the entity, equal keys must carry equal values
    seen = {}
    for key, val in zip(col(rule["key"]), col(rule["field"])):
        k = _cat_key(key)
        v = _cat_key(val)
        if seen.setdefault(k, v) != v:
            return False
    return True


def consistency_check(records, rules, list_field: str | None = None) -> dict:
    """Per-entity rule checks over nested records. Returns the fraction of
    entities without a violation, per rule label, plus "overall": the
    fraction of entities violating no rule at all. Entities with zero or one
    list item cannot violate anything."""
    rules = _normalize_rules(rules)
    if not rules:
        raise MetricsError("no consistency rules given")
    if not records:
        raise MetricsError("no records to check")
    fractions = {}
    clean = np.ones(len(records), dtype=bool)
    for rule in rules:
        lf = rule["list"] or list_field
        if lf is None:
            lists = [k for k, v in records[0].items() if isinstance(v, list)]
            if len(lists) != 1:
                raise MetricsError("cannot infer the list field; set it in "
                                   "the rules file")
            lf = lists[0]
        ok = np.empty(len(records), dtype=bool)
        for i, rec in enumerate(records):
            if lf not in rec or not isinstance(rec[lf], list):
                raise MetricsError(f"record {i}: missing list field {lf!r}")
            ok[i] = _entity_ok(rec[lf], rule)
        clean &= ok
        fractions[_rule_label(rule)] = float(ok.mean())
    fractions["overall"] = float(clean.mean())
    return fractions


@dataclass
class MetricsReport:
    columns: dict
    correlation: dict
    marginal: dict
    consistency: dict | None
    splits: dict
    rows: dict

    def to_json(self) -> dict:
        return {"rows": self.rows, "columns": self.columns,
                "correlation": self.correlation, "marginal": self.marginal,
                "consistency": self.consistency, "splits": self.splits}

    def to_text(self) -> str:
        lines = []
        lines.append(f"rows: real={self.rows['real']} "
                     f"synthetic={self.rows['synth']}")
        lines.append("")
        lines.append(f"{'column':<32} {'metric':<12} {'raw':>10} {'extra':>10}")
        for name in sorted(self.columns):
            m = self.columns[name]
            if m["kind"] == "numeric":
                lines.append(f"{name:<32} {'wasserstein':<12} "
                             f"{m['wasserstein']:>10.5f} "
                             f"{m['wasserstein_normalized']:>10.5f}")
            else:
                lines.append(f"{name:<32} {'jensen':<12} "
                             f"{m['jensen_distance']:>10.5f} "
                             f"{m['jensen_divergence']:>10.5f}")
        lines.append("")
        for level, value in self.correlation.items():
            lines.append(f"correlation difference ({level}): {value:.5f}")
        lines.append(f"marginal score (k={self.marginal['k']}, "
                     f"{self.marginal['n_subsets']} subsets): "
                     f"{self.marginal['score']:.1f} / 1000 "
                     f"(mean TVD {self.marginal['mean_tvd']:.4f})")
        if self.consistency is not None:
            lines.append("")
            lines.append("consistency (fraction of clean entities, synthetic):")
            for label, frac in self.consistency["synth"].items():
                lines.append(f"  {label:<40} {frac:.3f}")
        return "\n".join(lines) + "\n"


def _kinds_and_bins(schema):
    kinds, bins = {}, {}
    for name, node in leaf_columns(schema):
        if isinstance(node, Number):
            kinds[name] = "numeric"
            bins[name] = node.bins or DEFAULT_BINS
        elif isinstance(node, Enum):
            kinds[name] = "categorical"
    return kinds, bins


def evaluate(real_records, synth_records, schema, k: int = 4,
             n_subsets: int = 50, seed: int = 0, rules=None) -> MetricsReport:
    """Full fidelity report between two record sets under one schema."""
    kinds, bins = _kinds_and_bins(schema)
    real = flatten_records(real_records, schema)
    synth = flatten_records(synth_records, schema)

    columns = {}
    for origin in ("record", "item"):
        r_tab, s_tab = real[origin], synth[origin]
        if r_tab is None:
            continue
        for name in sorted(r_tab):
            if origin == "item" and name in real["record"]:
                continue
            if name not in s_tab:
                raise MetricsError(f"column {name!r} missing from the "
                                   "synthetic dataset")
            if kinds.get(name) == "numeric":
                columns[name] = {
                    "kind": "numeric",
                    "wasserstein": wasserstein_1d(r_tab[name], s_tab[name],
                                                  name=name),
                    "wasserstein_normalized": wasserstein_1d(
                        r_tab[name], s_tab[name], normalized=True, name=name),
                }
            else:
                dist, div = jensen_shannon(r_tab[name], s_tab[name], name=name)
                columns[name] = {"kind": "categorical",
                                 "jensen_distance": dist,
                                 "jensen_divergence": div}

    correlation = {}
    if len(real["record"]) >= 2:
        correlation["record"] = correlation_diff(real["record"],
                                                 synth["record"], kinds)
    if real["item"] is not None and len(real["item"]) >= 2 \
            and real["item_count"] and synth["item_count"]:
        correlation["item"] = correlation_diff(real["item"], synth["item"],
                                               kinds)

    wide_real = real["item"] if real["item"] is not None else real["record"]
    wide_synth = synth["item"] if synth["item"] is not None else synth["record"]
    marginal = marginal_score(wide_real, wide_synth, kinds, k=k,
                              n_subsets=n_subsets, seed=seed, bins=bins)

    consistency = None
    if rules:
        consistency = {"real": consistency_check(real_records, rules),
                       "synth": consistency_check(synth_records, rules)}

    n_real = len(real_records)
    split_rng = np.random.default_rng(seed)
    order = split_rng.permutation(n_real)
    cut = int(round(0.8 * n_real))
    splits = {"seed": seed, "train_fraction": 0.8,
              "train": [int(i) for i in order[:cut]],
              "test": [int(i) for i in order[cut:]],
              "note": "row indices into the real dataset for external "
                      "model-utility harnesses"}

    rows = {"real": n_real, "synth": len(synth_records),
            "real_items": real["item_count"], "synth_items": synth["item_count"]}
    return MetricsReport(columns=columns, correlation=correlation,
                         marginal=marginal, consistency=consistency,
                         splits=splits, rows=rows)
