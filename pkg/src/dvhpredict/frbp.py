"""Fuzzy rule-based DVH prediction.

Pipeline per feature: subtractive-clustering centers -> hierarchy of strong
fuzzy partitions built by merging adjacent sets -> parsimony-penalized
partition selection -> linguistic labels.  Prediction uses one fuzzy decision
tree per dose bin over the shared input partitions; rule bases extracted from
the training data round-trip through a plain-text format so they can be
reviewed and edited by hand.

Fuzzy sets are triangular with semi-trapezoidal shoulders at the domain
edges, which makes every partition strong: memberships sum to exactly 1 at
any point of the domain.  The whole pipeline is deterministic - there is no
randomness anywhere.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyCohort, EmptyTrainingSet

# display names for the six features, in canonical feature order
FRBP_FEATURE_NAMES = (
    "ptv60",
    "ptv44",
    "rectum",
    "bladder",
    "rectum_overlap",
    "bladder_overlap",
)

LEFT_SHOULDER = "left_shoulder"
TRIANGLE = "triangle"
RIGHT_SHOULDER = "right_shoulder"

# linguistic ladders by partition size
_LABEL_LADDER = {
    2: ("small", "high"),
    3: ("small", "medium", "high"),
    4: ("very small", "small", "medium", "high"),
    5: ("very small", "small", "medium", "high", "very high"),
    6: ("very very small", "very small", "small", "medium", "high", "very high"),
    7: ("very very small", "very small", "small", "medium", "high", "very high", "very very high"),
}

MAX_SETS = 7


@dataclass(frozen=True)
class FuzzySet:
    """Piecewise-linear membership function with breakpoints a <= b <= c.

    Triangles rise from a to the core b and fall to c; shoulders hold
    membership 1 from the domain edge to their plateau end.
    """

    label: str
    shape: str
    a: float
    b: float
    c: float

    def membership(self, x):
        x = np.asarray(x, dtype=float)
        if self.shape == LEFT_SHOULDER:
            out = np.where(
                x <= self.b,
                1.0,
                np.where(x >= self.c, 0.0, (self.c - x) / (self.c - self.b)),
            )
        elif self.shape == RIGHT_SHOULDER:
            out = np.where(
                x >= self.b,
                1.0,
                np.where(x <= self.a, 0.0, (x - self.a) / (self.b - self.a)),
            )
        else:
            rising = (x - self.a) / (self.b - self.a)
            falling = (self.c - x) / (self.c - self.b)
            out = np.maximum(np.minimum(rising, falling), 0.0)
        return out if out.ndim else float(out)

    @property
    def core(self) -> float:
        return self.b

    def to_dict(self) -> dict:
        return {"label": self.label, "shape": self.shape, "a": self.a, "b": self.b, "c": self.c}

    @classmethod
    def from_dict(cls, d: dict) -> "FuzzySet":
        return cls(d["label"], d["shape"], float(d["a"]), float(d["b"]), float(d["c"]))


@dataclass(frozen=True)
class FuzzyPartition:
    """A strong fuzzy partition of one feature's domain (memberships sum to 1
    everywhere); within_std scores its membership-weighted homogeneity on the
    sample it was built from."""

    feature_index: int
    sets: tuple
    within_std: float

    def memberships(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.column_stack([s.membership(x) for s in self.sets])

    @property
    def n_sets(self) -> int:
        return len(self.sets)

    @property
    def labels(self) -> tuple:
        return tuple(s.label for s in self.sets)

    def to_dict(self) -> dict:
        return {
            "feature_index": self.feature_index,
            "within_std": self.within_std,
            "sets": [s.to_dict() for s in self.sets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FuzzyPartition":
        return cls(
            int(d["feature_index"]),
            tuple(FuzzySet.from_dict(s) for s in d["sets"]),
            float(d["within_std"]),
        )


def subtractive_centers(values: Sequence[float], r_a: float = 0.5) -> np.ndarray:
    """Cluster centers by the iterative potential ("mountain") method on the
    min-max-normalized sample.

    Potential of point i is sum_j exp(-(4/r_a^2)(x_i-x_j)^2); the highest
    potential point becomes a center, its influence is subtracted with squash
    radius 1.5*r_a, and selection repeats until the best remaining potential
    drops below 0.15x the first one.  Centers return sorted, in original units.
    """
    if r_a <= 0:
        raise ValueError("r_a must be positive")
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least 2 values")
    span = float(v.max() - v.min())
    if span == 0.0:
        return np.array([float(v[0])])
    z = (v - v.min()) / span
    alpha = 4.0 / (r_a * r_a)
    beta = 4.0 / ((1.5 * r_a) ** 2)
    diff2 = (z[:, None] - z[None, :]) ** 2
    potential = np.exp(-alpha * diff2).sum(axis=1)
    centers = []
    p_first = None
    for _ in range(v.size):
        i = int(np.argmax(potential))
        p_i = float(potential[i])
        if p_first is None:
            p_first = p_i
        elif p_i < 0.15 * p_first:
            break
        centers.append(float(v[i]))
        potential = potential - p_i * np.exp(-beta * (z - z[i]) ** 2)
    return np.unique(np.asarray(centers))


def _strong_partition(centers: Sequence[float], feature_index: int, within_std: float) -> FuzzyPartition:
    """Strong partition with cores at the given (sorted, distinct) centers:
    shoulders at the edges, triangles between."""
    c = list(centers)
    k = len(c)
    if k < 2:
        raise ValueError("need at least 2 centers")
    sets = []
    for i in range(k):
        if i == 0:
            sets.append(FuzzySet("", LEFT_SHOULDER, c[0], c[0], c[1]))
        elif i == k - 1:
            sets.append(FuzzySet("", RIGHT_SHOULDER, c[k - 2], c[k - 1], c[k - 1]))
        else:
            sets.append(FuzzySet("", TRIANGLE, c[i - 1], c[i], c[i + 1]))
    return FuzzyPartition(feature_index, tuple(sets), within_std)


def _within_variance(values: np.ndarray, partition: FuzzyPartition) -> float:
    """Membership-weighted pooled within-set variance of the sample."""
    M = partition.memberships(values)
    total = M.sum()
    if total <= 0:
        return 0.0
    sse = 0.0
    for s in range(partition.n_sets):
        w = M[:, s]
        mass = w.sum()
        if mass <= 0:
            continue
        mean = float(w @ values) / mass
        sse += float(w @ (values - mean) ** 2)
    return sse / total


def _with_std(values: np.ndarray, partition: FuzzyPartition) -> FuzzyPartition:
    return FuzzyPartition(
        partition.feature_index,
        partition.sets,
        float(np.sqrt(_within_variance(values, partition))),
    )


def hfp_partitions(values: Sequence[float], centers: Sequence[float], feature_index: int = 0) -> list:
    """Hierarchy of candidate partitions, sizes |centers| down to 2.

    Starts with one set per center; at each step the adjacent pair whose merge
    least increases the membership-weighted within-set variance is replaced by
    a single set (core at the mass-weighted mean of the two).  Every recorded
    candidate is rebuilt as a strong partition.
    """
    v = np.asarray(values, dtype=float)
    current = sorted(float(c) for c in centers)
    if len(current) < 2:
        raise ValueError("need at least 2 centers")
    candidates = []
    while True:
        part = _with_std(v, _strong_partition(current, feature_index, 0.0))
        if part.n_sets <= MAX_SETS:
            candidates.append(part)
        if len(current) == 2:
            break
        M = part.memberships(v)
        masses = M.sum(axis=0)
        best = None  # (variance, pair index, merged centers)
        for i in range(len(current) - 1):
            m1, m2 = masses[i], masses[i + 1]
            if m1 + m2 > 0:
                merged = (m1 * current[i] + m2 * current[i + 1]) / (m1 + m2)
            else:
                merged = 0.5 * (current[i] + current[i + 1])
            trial = current[:i] + [merged] + current[i + 2 :]
            var = _within_variance(v, _strong_partition(trial, feature_index, 0.0))
            if best is None or var < best[0]:
                best = (var, i, trial)
        current = best[2]
    return candidates


def select_partition(candidates: Sequence[FuzzyPartition], kappa: float | None = None,
                     domain_span: float | None = None) -> FuzzyPartition:
    """Pick the candidate minimizing within_std + kappa * n_sets; kappa
    defaults to 1% of the domain span.  Ties go to the smaller partition."""
    if not candidates:
        raise ValueError("no candidate partitions")
    if kappa is None:
        if domain_span is None:
            domain_span = max(c.sets[-1].core - c.sets[0].core for c in candidates)
        kappa = 0.01 * domain_span if domain_span > 0 else 0.01
    best = None
    for part in sorted(candidates, key=lambda p: p.n_sets):
        score = part.within_std + kappa * part.n_sets
        if best is None or score < best[0]:
            best = (score, part)
    return best[1]


def assign_labels(partition: FuzzyPartition) -> FuzzyPartition:
    """Attach linguistic labels from the fixed ladder by ordinal position."""
    ladder = _LABEL_LADDER[partition.n_sets]
    sets = tuple(
        FuzzySet(label, s.shape, s.a, s.b, s.c) for label, s in zip(ladder, partition.sets)
    )
    return FuzzyPartition(partition.feature_index, sets, partition.within_std)


def fit_partition(values: Sequence[float], feature_index: int, r_a: float = 0.5,
                  kappa: float | None = None) -> FuzzyPartition:
    """Whole per-feature pipeline: centers -> hierarchy -> selection -> labels.

    A feature with a single surviving center (e.g. constant in the cohort)
    falls back to a symmetric two-set partition around it; such a feature has
    identical memberships for every sample and therefore never wins a split.
    """
    v = np.asarray(values, dtype=float)
    centers = subtractive_centers(v, r_a=r_a)
    if len(centers) < 2:
        c = float(centers[0])
        delta = max(abs(c) * 0.05, 1e-6)
        centers = np.array([c - delta, c + delta])
    cands = hfp_partitions(v, centers, feature_index)
    chosen = select_partition(cands, kappa=kappa, domain_span=float(np.ptp(v)))
    return assign_labels(chosen)


def fit_partitions(X: np.ndarray, r_a: float = 0.5, kappa: float | None = None) -> tuple:
    X = np.asarray(X, dtype=float)
    return tuple(fit_partition(X[:, f], f, r_a=r_a, kappa=kappa) for f in range(X.shape[1]))


def partitions_to_jsonable(partitions: Sequence[FuzzyPartition]) -> list:
    return [p.to_dict() for p in partitions]


def partitions_from_jsonable(obj: Sequence[dict]) -> tuple:
    return tuple(FuzzyPartition.from_dict(d) for d in obj)


# --- rule base ---------------------------------------------------------------

@dataclass(frozen=True)
class FuzzyRule:
    antecedent: tuple  # one linguistic label per feature
    consequent: float  # crisp percent volume
    degree: float
    support: int


@dataclass(frozen=True)
class RuleBase:
    feature_names: tuple
    rules: tuple


def generate_rules(X: np.ndarray, y: np.ndarray, partitions: Sequence[FuzzyPartition],
                   feature_names: tuple = FRBP_FEATURE_NAMES) -> RuleBase:
    """One candidate rule per training sample (max-membership set per feature,
    degree = product of those memberships); conflicting rules sharing an
    antecedent are resolved into one rule with the degree-weighted mean
    consequent.  Rules with support-weighted degree below 1e-6 are pruned.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise EmptyCohort("cannot extract rules from an empty cohort")
    M = [partitions[f].memberships(X[:, f]) for f in range(len(partitions))]
    acc: dict[tuple, dict] = {}
    order: list[tuple] = []
    for i in range(len(y)):
        labels = []
        degree = 1.0
        for f, part in enumerate(partitions):
            mu = M[f][i]
            s = int(np.argmax(mu))
            labels.append(part.sets[s].label)
            degree *= float(mu[s])
        key = tuple(labels)
        if key not in acc:
            acc[key] = {"wsum": 0.0, "wy": 0.0, "support": 0, "degree": 0.0}
            order.append(key)
        a = acc[key]
        a["wsum"] += degree
        a["wy"] += degree * float(y[i])
        a["support"] += 1
        a["degree"] = max(a["degree"], degree)
    rules = []
    for key in order:
        a = acc[key]
        if a["wsum"] <= 0.0:
            continue
        rule = FuzzyRule(
            antecedent=key,
            consequent=a["wy"] / a["wsum"],
            degree=a["degree"],
            support=a["support"],
        )
        if rule.support * rule.degree >= 1e-6:
            rules.append(rule)
    return RuleBase(tuple(feature_names), tuple(rules))


_RULE_RE = re.compile(
    r"^IF\s+(?P<body>.+?)\s+THEN\s+volume_pct\s*=\s*(?P<value>[0-9.eE+-]+)\s*"
    r"\(degree=(?P<degree>[0-9.eE+-]+),\s*support=(?P<support>\d+)\)\s*$"
)
_CLAUSE_RE = re.compile(r"^(?P<name>\w+)\s+IS\s+(?P<label>[\w ]+?)$")


def format_rules(rule_base: RuleBase) -> str:
    """One rule per line:
    IF <feat> IS <label> AND ... THEN volume_pct = <v> (degree=<d>, support=<n>)
    Lines starting with # are comments.  Floats use repr so the text
    round-trips exactly."""
    lines = ["# fuzzy rule base: one rule per line, '#' starts a comment"]
    for r in rule_base.rules:
        clauses = " AND ".join(
            f"{name} IS {label}" for name, label in zip(rule_base.feature_names, r.antecedent)
        )
        lines.append(
            f"IF {clauses} THEN volume_pct = {r.consequent!r} "
            f"(degree={r.degree!r}, support={r.support})"
        )
    return "\n".join(lines) + "\n"


def parse_rules(text: str, feature_names: tuple = FRBP_FEATURE_NAMES) -> RuleBase:
    rules = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = _RULE_RE.match(line)
        if not m:
            raise ValueError(f"unparseable rule at line {lineno}: {line!r}")
        labels = {}
        for clause in m.group("body").split(" AND "):
            mc = _CLAUSE_RE.match(clause.strip())
            if not mc:
                raise ValueError(f"unparseable clause at line {lineno}: {clause!r}")
            labels[mc.group("name")] = mc.group("label").strip()
        missing = [n for n in feature_names if n not in labels]
        if missing:
            raise ValueError(f"rule at line {lineno} missing feature(s) {missing}")
        rules.append(
            FuzzyRule(
                antecedent=tuple(labels[n] for n in feature_names),
                consequent=float(m.group("value")),
                degree=float(m.group("degree")),
                support=int(m.group("support")),
            )
        )
    return RuleBase(tuple(feature_names), tuple(rules))


# --- fuzzy decision tree -------------------------------------------------------

@dataclass(frozen=True)
class FuzzyDecisionTree:
    """Attribute-test tree: internal nodes split on one feature's fuzzy sets
    (one child per set), leaves carry a crisp value.  Each feature is used at
    most once per root-to-leaf path."""

    root: dict
    attribute_order: tuple

    def to_dict(self) -> dict:
        return {"root": self.root, "attribute_order": list(self.attribute_order)}

    @classmethod
    def from_dict(cls, d: dict) -> "FuzzyDecisionTree":
        return cls(d["root"], tuple(int(i) for i in d["attribute_order"]))


def _weighted_mean_var(y: np.ndarray, w: np.ndarray):
    mass = float(w.sum())
    if mass <= 0:
        return 0.0, 0.0, 0.0
    mean = float(w @ y) / mass
    var = float(w @ (y - mean) ** 2) / mass
    return mass, mean, var


def _memberships_from_rulebase(rule_base: RuleBase, partitions) -> tuple:
    """Crisp per-set memberships for rules: 1 where the rule's label matches."""
    M = []
    for f, part in enumerate(partitions):
        labels = [r.antecedent[f] for r in rule_base.rules]
        cols = np.zeros((len(labels), part.n_sets))
        label_to_idx = {s.label: j for j, s in enumerate(part.sets)}
        for i, lab in enumerate(labels):
            if lab not in label_to_idx:
                raise ValueError(f"rule label {lab!r} unknown for feature index {f}")
            cols[i, label_to_idx[lab]] = 1.0
        M.append(cols)
    y = np.array([r.consequent for r in rule_base.rules], dtype=float)
    w0 = np.array([float(r.support) for r in rule_base.rules])
    return M, y, w0


def build_fdt(training, partitions: Sequence[FuzzyPartition], max_depth: int = 6,
              min_weight: float = 1e-3) -> FuzzyDecisionTree:
    """Grow a fuzzy decision tree by recursive variance-reduction splits.

    `training` is either an (X, y) pair of arrays or a RuleBase (rules act as
    weighted pseudo-samples with crisp label memberships).  At each node the
    unused attribute with the largest gain (membership-weighted variance of
    the node minus the mass-weighted sum over its children) is split on;
    growth stops at max_depth, when the weight mass falls under min_weight,
    or when no attribute yields positive gain.  Leaf values are
    weight-normalized target means.
    """
    if isinstance(training, RuleBase):
        if not training.rules:
            raise EmptyTrainingSet("rule base is empty")
        M, y, w0 = _memberships_from_rulebase(training, partitions)
    else:
        X, y = training
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(y) == 0:
            raise EmptyTrainingSet("cannot grow a tree on an empty set")
        M = [partitions[f].memberships(X[:, f]) for f in range(len(partitions))]
        w0 = np.ones(len(y))
    n_features = len(partitions)

    def gains(w: np.ndarray, unused) -> dict:
        mass, _, var = _weighted_mean_var(y, w)
        out = {}
        for f in unused:
            child_term = 0.0
            for s in range(partitions[f].n_sets):
                ws = w * M[f][:, s]
                m_s, _, v_s = _weighted_mean_var(y, ws)
                child_term += (m_s / mass) * v_s
            out[f] = var - child_term
        return out

    def grow(w: np.ndarray, unused: tuple, depth: int, fallback: float) -> dict:
        mass, mean, var = _weighted_mean_var(y, w)
        if mass <= 0:
            return {"value": fallback}
        if depth >= max_depth or mass < min_weight or not unused or var <= 1e-12:
            return {"value": mean}
        g = gains(w, unused)
        best_f = max(unused, key=lambda f: (g[f], -f))
        if g[best_f] <= 1e-12:
            return {"value": mean}
        remaining = tuple(f for f in unused if f != best_f)
        children = [
            grow(w * M[best_f][:, s], remaining, depth + 1, mean)
            for s in range(partitions[best_f].n_sets)
        ]
        return {"feature": best_f, "children": children}

    all_feats = tuple(range(n_features))
    root_gains = gains(w0, all_feats)
    order = tuple(sorted(all_feats, key=lambda f: (-root_gains[f], f)))
    root = grow(w0, all_feats, 0, float(np.average(y, weights=w0)) if w0.sum() > 0 else 0.0)
    return FuzzyDecisionTree(root=root, attribute_order=order)


def fdt_predict(tree: FuzzyDecisionTree, partitions: Sequence[FuzzyPartition], x: np.ndarray) -> float:
    """Propagate membership weight down every branch; the prediction is the
    weight-normalized mean of reached leaf values (a convex combination, so it
    stays within the training-target hull)."""
    x = np.asarray(x, dtype=float)
    total_w = 0.0
    total_wv = 0.0
    stack = [(tree.root, 1.0)]
    while stack:
        node, w = stack.pop()
        if w <= 0.0:
            continue
        if "value" in node:
            total_w += w
            total_wv += w * node["value"]
            continue
        f = node["feature"]
        for s, child in enumerate(node["children"]):
            mu = float(partitions[f].sets[s].membership(x[f]))
            if mu > 0.0:
                stack.append((child, w * mu))
    return total_wv / total_w if total_w > 0 else 0.0


class FdtPredictor:
    """Per-dose-bin predictor wrapping one FDT plus the shared partitions."""

    __slots__ = ("tree", "partitions")

    def __init__(self, tree: FuzzyDecisionTree, partitions):
        self.tree = tree
        self.partitions = partitions

    def predict(self, x: np.ndarray) -> float:
        return fdt_predict(self.tree, self.partitions, x)

    def tree_to_jsonable(self) -> dict:
        return self.tree.to_dict()

    @classmethod
    def from_tree_jsonable(cls, d: dict, partitions) -> "FdtPredictor":
        return cls(FuzzyDecisionTree.from_dict(d), partitions)


def fit_frbp_bins(X: np.ndarray, Y: np.ndarray, params: dict, n_jobs: int = 1) -> list:
    """Fit shared partitions once, then one FDT per dose bin."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    partitions = fit_partitions(X, r_a=params["r_a"], kappa=params["kappa"])
    max_depth = params["max_depth"]
    min_weight = params["min_weight"]

    def fit_bin(b):
        tree = build_fdt((X, Y[:, b]), partitions, max_depth=max_depth, min_weight=min_weight)
        return FdtPredictor(tree, partitions)

    from .regressors import _map_bins

    return _map_bins(fit_bin, Y.shape[1], n_jobs)


def frbp_train(organ, cohort, params: dict | None = None, seed: int = 0, n_jobs: int = 1):
    """Whole-curve wrapper conforming to the shared training contract."""
    from .regressors import AlgorithmId, train_dvh_model

    return train_dvh_model(AlgorithmId.FRBP, organ, cohort, params, seed=seed, n_jobs=n_jobs)


def frbp_predict(model, features):
    from .regressors import predict_dvh

    return predict_dvh(model, features)
