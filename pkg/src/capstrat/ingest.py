"""Semi-synthetic populations from observed student records.

Observed test scores and grades are read as best responses to a reference
policy ``(beta_bar, s_bar)``; inverting the first-order condition recovers raw
covariates, and k-means over (raw covariates, costs, outcomes) compresses the
rows into a handful of representative types.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .agent import AgentType, CostSpec, NoiseModel, norm_pdf
from .errors import InvalidInputError
from .population import TypeDistribution

SES_COL = "F2SES1"
TEST_COLS = ("F22XRSTD", "F22XMSTD", "F22XSSTD", "F22XHSTD")
GRADE_COLS = ("F2RHENG2", "F2RHMAG2", "F2RHSCG2", "F2RHSOG2", "F2RHFOG2")
ATTEND_COL = "F3ATTEND"
COVARIATE_COLS = TEST_COLS + GRADE_COLS
SCHEMA = (SES_COL,) + COVARIATE_COLS + (ATTEND_COL,)

IMPUTED = {
    "F2SES1": -0.088,
    "F22XRSTD": 63.81,
    "F22XMSTD": 63.96,
    "F22XSSTD": 64.01,
    "F22XHSTD": 64.30,
    "F2RHENG2": 7.07,
    "F2RHMAG2": 7.61,
    "F2RHSCG2": 7.43,
    "F2RHSOG2": 7.01,
    "F2RHFOG2": 6.58,
    "F3ATTEND": 19.21,
}

MISSING_TOKENS = {"", "na", "nan", "."}
OUTCOMES = ("attend", "test_mean", "ses_inverse")


@dataclass
class StudentRow:
    x_star: np.ndarray
    ses: float
    outcomes: dict = field(default_factory=dict)


@dataclass
class IngestConfig:
    s_bar: float = 19.5
    sigma: float = 1.20
    g_test: float = 0.1
    c_grades: float = 1.0
    test_idx: tuple = (0, 1, 2, 3)
    grade_idx: tuple = (4, 5, 6, 7, 8)
    beta_bar: np.ndarray | None = None  # None -> all 1/sqrt(d)
    k_clusters: int = 8
    kmeans_iters: int = 300
    kmeans_restarts: int = 10
    outcome: str = "attend"
    seed: int = 0

    def __post_init__(self):
        if self.k_clusters < 1:
            raise InvalidInputError("k_clusters must be at least 1")
        if self.g_test <= 0 or self.c_grades <= 0 or self.sigma <= 0:
            raise InvalidInputError("g_test, c_grades and sigma must be positive")
        idx = sorted(self.test_idx) + sorted(self.grade_idx)
        if sorted(idx) != list(range(len(idx))):
            raise InvalidInputError("test and grade index sets must partition 0..d-1")
        if self.outcome not in OUTCOMES:
            raise InvalidInputError(f"outcome must be one of {OUTCOMES}")

    @property
    def dim(self) -> int:
        return len(self.test_idx) + len(self.grade_idx)

    def beta(self) -> np.ndarray:
        if self.beta_bar is None:
            return np.full(self.dim, 1.0 / math.sqrt(self.dim))
        b = np.asarray(self.beta_bar, dtype=float)
        if b.shape != (self.dim,) or abs(np.linalg.norm(b) - 1.0) > 1e-12:
            raise InvalidInputError("beta_bar must be a unit vector of length d")
        return b


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------


def load_student_csv(path, schema=SCHEMA, imputation=None) -> list[StudentRow]:
    """Read rows, impute blanks, and negate grades so that larger is better."""
    imputation = IMPUTED if imputation is None else imputation
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"{path}: no such file")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidInputError(f"{path}: missing header") from None
        unknown = [h for h in header if h not in schema]
        if unknown:
            raise InvalidInputError(f"{path}: unknown column(s) {unknown}")
        absent = [c for c in schema if c not in header]
        if absent:
            raise InvalidInputError(f"{path}: missing column(s) {absent}")
        pos = {c: header.index(c) for c in schema}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not v.strip() for v in rec):
                continue
            if len(rec) != len(header):
                raise InvalidInputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            vals = {}
            for c in schema:
                raw = rec[pos[c]].strip()
                if raw.lower() in MISSING_TOKENS:
                    if c not in imputation:
                        raise InvalidInputError(f"{path}:{lineno}: missing {c} and no imputed value")
                    v = float(imputation[c])
                else:
                    try:
                        v = float(raw)
                    except ValueError:
                        raise InvalidInputError(f"{path}:{lineno}: bad value {raw!r} for {c}") from None
                if not math.isfinite(v):
                    raise InvalidInputError(f"{path}:{lineno}: non-finite value for {c}")
                vals[c] = v
            x = np.array([vals[c] for c in TEST_COLS] + [-vals[c] for c in GRADE_COLS])
            rows.append(StudentRow(x, vals[SES_COL], {"attend": vals[ATTEND_COL]}))
    return rows


# ---------------------------------------------------------------------------
# Inversion
# ---------------------------------------------------------------------------


def ses_percentiles(ses) -> np.ndarray:
    """Rank-normalized SES in (0, 1]; ties share their average rank."""
    ses = np.asarray(ses, dtype=float)
    return rankdata(ses) / ses.size


def cost_vector(percentile: float, cfg: IngestConfig) -> np.ndarray:
    if not percentile > 0:
        raise InvalidInputError("SES percentile must be positive")
    g = np.empty(cfg.dim)
    g[list(cfg.test_idx)] = cfg.g_test
    g[list(cfg.grade_idx)] = cfg.c_grades / percentile
    return g


def invert_raw_covariates(x_star, g, cfg: IngestConfig) -> np.ndarray:
    """Raw covariates that make ``x_star`` the best response to ``(beta_bar, s_bar)``."""
    x_star = np.asarray(x_star, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.any(g <= 0):
        raise InvalidInputError("cost weights must be positive")
    beta = cfg.beta()
    phi = norm_pdf(cfg.s_bar - x_star @ beta, cfg.sigma)
    return x_star - phi * beta / (2.0 * g)


@dataclass
class Unobservables:
    Z: np.ndarray
    G: np.ndarray
    outcomes: dict


def build_unobservables(rows: list[StudentRow], cfg: IngestConfig) -> Unobservables:
    if not rows:
        raise InvalidInputError("no rows to ingest")
    pct = ses_percentiles([r.ses for r in rows])
    G = np.array([cost_vector(p, cfg) for p in pct])
    X = np.array([r.x_star for r in rows])
    if X.shape[1] != cfg.dim:
        raise InvalidInputError(f"rows have {X.shape[1]} covariates, config expects {cfg.dim}")
    Z = np.array([invert_raw_covariates(x, g, cfg) for x, g in zip(X, G)])
    outcomes = {
        "attend": np.array([r.outcomes["attend"] for r in rows]),
        "test_mean": Z[:, list(cfg.test_idx)].mean(axis=1),
        "ses_inverse": 1.0 / pct,
    }
    return Unobservables(Z, G, outcomes)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    history: list


def _standardize(F):
    mu = F.mean(axis=0)
    sd = F.std(axis=0)
    sd[sd == 0] = 1.0
    return (F - mu) / sd


def _plus_plus(F, k, rng):
    centers = [F[rng.integers(F.shape[0])]]
    d2 = ((F - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        i = rng.choice(F.shape[0], p=d2 / total) if total > 0 else rng.integers(F.shape[0])
        centers.append(F[i])
        d2 = np.minimum(d2, ((F - F[i]) ** 2).sum(axis=1))
    return np.array(centers)


def _assign(F, centers):
    d2 = ((F[:, None, :] - centers[None]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(F.shape[0]), labels]


def lloyd(F, k: int, rng: np.random.Generator, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from a k-means++ start.

    An emptied cluster is re-seeded at the point farthest from its centre.
    """
    F = np.asarray(F, dtype=float)
    centers = _plus_plus(F, k, rng)
    labels, dist2 = _assign(F, centers)
    history = [float(dist2.sum())]
    for _ in range(max_iter):
        new = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = F[members].mean(axis=0)
            else:
                far = int(dist2.argmax())
                new[j] = F[far]
                dist2[far] = 0.0
        labels_new, dist2 = _assign(F, new)
        history.append(float(dist2.sum()))
        converged = np.array_equal(labels_new, labels) and np.allclose(new, centers, rtol=0, atol=0)
        centers, labels = new, labels_new
        if converged:
            break
    return KMeansResult(centers, labels, history[-1], history)


def kmeans(F, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300) -> KMeansResult:
    F = np.asarray(F, dtype=float)
    if k > F.shape[0]:
        raise InvalidInputError(f"cannot form {k} clusters from {F.shape[0]} rows")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        res = lloyd(F, k, rng, max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def cluster_features(u: Unobservables, cfg: IngestConfig) -> np.ndarray:
    """(Z, grade costs, attendance, test-score mean), one row per student."""
    return np.column_stack(
        [u.Z, u.G[:, list(cfg.grade_idx)], u.outcomes["attend"], u.outcomes["test_mean"]]
    )


def kmeans_types(rows: list[StudentRow], u: Unobservables, cfg: IngestConfig) -> TypeDistribution:
    """Cluster rows into ``K`` types; each type carries its cluster means."""
    n = len(rows)
    if cfg.k_clusters > n:
        raise InvalidInputError(f"K = {cfg.k_clusters} exceeds number of rows {n}")
    F = _standardize(cluster_features(u, cfg))
    res = kmeans(F, cfg.k_clusters, cfg.seed, cfg.kmeans_restarts, cfg.kmeans_iters)
    y = u.outcomes[cfg.outcome]
    types, counts = [], []
    for j in range(cfg.k_clusters):
        members = res.labels == j
        if not members.any():
            continue
        types.append(
            AgentType(
                z=u.Z[members].mean(axis=0),
                cost=CostSpec(u.G[members].mean(axis=0)),
                y0=0.0,
                y1=float(y[members].mean()),
                tags=(f"cluster{j}",),
            )
        )
        counts.append(int(members.sum()))
    probs = np.array(counts, dtype=float) / n
    probs[-1] = 1.0 - probs[:-1].sum()
    return TypeDistribution(types, probs, NoiseModel(cfg.sigma))


def ingest_csv(path, cfg: IngestConfig | None = None) -> TypeDistribution:
    cfg = IngestConfig() if cfg is None else cfg
    rows = load_student_csv(path)
    return kmeans_types(rows, build_unobservables(rows, cfg), cfg)


# ---------------------------------------------------------------------------
# Synthetic fixture
# ---------------------------------------------------------------------------


def synthetic_students(n: int, seed: int = 0, missing_rate: float = 0.02) -> list[dict]:
    """Rows with the student schema and plausible ranges; a few blanks for imputation."""
    rng = np.random.default_rng(seed)
    ses = np.clip(rng.normal(-0.09, 0.8, n), -3.243, 2.743)
    ability = 0.5 * ses + rng.normal(0, 1, n)
    out = []
    for i in range(n):
        rec = {SES_COL: ses[i]}
        for c in TEST_COLS:
            rec[c] = float(np.clip(52 + 6 * ability[i] + rng.normal(0, 4), 29.0, 68.0))
        for c in GRADE_COLS:
            rec[c] = float(np.clip(np.round(7 - 2 * ability[i] + rng.normal(0, 1.5)), 1, 13))
        rec[ATTEND_COL] = float(np.clip(np.round(15 + 5 * ability[i] + rng.normal(0, 5)), 1, 27))
        for c in SCHEMA:
            if rng.random() < missing_rate:
                rec[c] = None
        out.append(rec)
    return out


def write_student_csv(path, records: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(SCHEMA)
        for rec in records:
            wr.writerow(["" if rec[c] is None else format(rec[c], ".6g") for c in SCHEMA])
