"""Spatial statistics and the enhanced uncertainty multiplier.

The multiplier sigma(s, t) = f_spatial * phi_temporal * psi_geological
scales block economics: f_spatial = 1 - I_moran + sigma_local from the
scenario grade field, phi_temporal(t) = exp(-kappa * t), and psi from a
weighted blend of the geological features. The product is clamped to
(1e-6, 2] so economics stay bounded; clamping is flagged for audit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .blockmodel import GeoFeatures, Instance
from .errors import DegenerateField, InvalidArgs, InvalidBins

SIGMA_FLOOR = 1e-6
SIGMA_CEIL = 2.0


@dataclass
class SpatialWeights:
    """Sparse symmetric nonnegative weights over blocks (directed pair arrays)."""

    n: int
    i_idx: np.ndarray
    j_idx: np.ndarray
    w: np.ndarray
    scheme: str = "rook"

    def __post_init__(self):
        if np.any(self.i_idx == self.j_idx):
            raise InvalidArgs("self-weights w_ii must be absent")
        if np.any(self.w < 0) or not np.all(np.isfinite(self.w)):
            raise InvalidArgs("weights must be finite and nonnegative")

    @property
    def total(self) -> float:
        return float(self.w.sum())

    def undirected_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One row per unordered pair (i < j)."""
        keep = self.i_idx < self.j_idx
        return self.i_idx[keep], self.j_idx[keep], self.w[keep]


def rook_weights(coords: np.ndarray) -> SpatialWeights:
    """Rook adjacency on the regular grid implied by the coordinates."""
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    spacing = np.ones(3)
    for axis in range(3):
        vals = np.unique(coords[:, axis])
        if vals.size > 1:
            spacing[axis] = np.min(np.diff(vals))
    index = {}
    for b in range(n):
        key = tuple(int(round(coords[b, a] / spacing[a])) for a in range(3))
        index[key] = b
    ii, jj = [], []
    for b in range(n):
        key = tuple(int(round(coords[b, a] / spacing[a])) for a in range(3))
        for axis in range(3):
            for step in (-1, 1):
                nb = list(key)
                nb[axis] += step
                other = index.get(tuple(nb))
                if other is not None:
                    ii.append(b)
                    jj.append(other)
    return SpatialWeights(
        n=n,
        i_idx=np.array(ii, dtype=int),
        j_idx=np.array(jj, dtype=int),
        w=np.ones(len(ii)),
        scheme="rook",
    )


def inverse_distance_weights(coords: np.ndarray, radius: float) -> SpatialWeights:
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    mask = (dist > 0) & (dist <= radius)
    ii, jj = np.nonzero(mask)
    return SpatialWeights(
        n=n, i_idx=ii, j_idx=jj, w=1.0 / dist[ii, jj], scheme=f"inverse_distance({radius})"
    )


def morans_i(values: np.ndarray, weights: SpatialWeights) -> float:
    """Global Moran's I:  N * sum_ij w_ij (x_i - xbar)(x_j - xbar)
    over  sum_ij w_ij * sum_i (x_i - xbar)^2.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        raise InvalidArgs("need at least 2 blocks")
    w_total = weights.total
    if w_total <= 0:
        raise InvalidArgs("weights must have positive total")
    dev = values - values.mean()
    denom_var = float(dev @ dev)
    if denom_var <= 0:
        raise DegenerateField("zero-variance field: Moran's I undefined")
    num = float(np.sum(weights.w * dev[weights.i_idx] * dev[weights.j_idx]))
    return n * num / (w_total * denom_var)


def empirical_variogram(
    coords: np.ndarray, values: np.ndarray, lag_bins
) -> list[dict]:
    """Semivariance per lag bin: gamma(h) = 0.5 * mean (v_i - v_j)^2.

    lag_bins are ascending upper edges; bin k covers (edge[k-1], edge[k]]
    with an implicit 0 lower edge. Bins with no pairs come back flagged
    empty (gamma None).
    """
    lag_bins = list(lag_bins)
    if len(lag_bins) < 1 or any(b <= 0 for b in lag_bins) or sorted(lag_bins) != lag_bins:
        raise InvalidBins("lag bins must be positive and ascending")
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        raise InvalidArgs("need at least 2 blocks")
    iu, ju = np.triu_indices(n, k=1)
    dist = np.sqrt(((coords[iu] - coords[ju]) ** 2).sum(axis=1))
    sq = (values[iu] - values[ju]) ** 2
    edges = np.array([0.0] + lag_bins)
    out = []
    for k in range(len(lag_bins)):
        mask = (dist > edges[k]) & (dist <= edges[k + 1])
        count = int(mask.sum())
        gamma = float(0.5 * sq[mask].mean()) if count else None
        out.append({"lag_upper": float(edges[k + 1]), "count": count, "gamma": gamma})
    return out


@dataclass
class UncertaintyParams:
    kappa: float = 0.1
    psi_weights: tuple[float, float, float] = (0.4, 0.35, 0.25)
    psi_min: float = 0.5


@dataclass
class UncertaintyFactors:
    """sigma[s][t] plus the audited components behind each entry."""

    sigma: np.ndarray
    f_spatial: np.ndarray  # per scenario
    moran: np.ndarray  # per scenario (nan when degenerate)
    sigma_local: np.ndarray  # per scenario
    psi: float
    phi: np.ndarray  # per period
    degenerate: np.ndarray = field(default=None)
    clamped: np.ndarray = field(default=None)

    @property
    def n_scenarios(self) -> int:
        return self.sigma.shape[0]

    @property
    def n_periods(self) -> int:
        return self.sigma.shape[1]


def psi_geological(features: list[GeoFeatures], params: UncertaintyParams, diameter: float) -> float:
    """Feature blend normalized into [psi_min, 1]."""
    w1, w2, w3 = params.psi_weights
    alt = np.array([f.alteration_intensity for f in features])
    struct = np.array([f.structural_density for f in features])
    dist = np.array([f.distance_to_intrusion for f in features])
    dist_norm = np.clip(dist / diameter, 0.0, 1.0) if diameter > 0 else np.zeros_like(dist)
    raw = float(np.mean(w1 * alt + w2 * struct + w3 * dist_norm))
    raw = min(max(raw, 0.0), 1.0)
    return params.psi_min + (1.0 - params.psi_min) * raw


def geological_consistency(features: GeoFeatures, params: UncertaintyParams, diameter: float) -> float:
    """Block-level geological quality score in [0.5, 1.5] used by the
    evaluation kernel and the column-pool quality metric."""
    w1, w2, w3 = params.psi_weights
    dist_norm = min(features.distance_to_intrusion / diameter, 1.0) if diameter > 0 else 0.0
    raw = w1 * features.alteration_intensity + w2 * features.structural_density + w3 * (1.0 - dist_norm)
    return float(np.clip(0.5 + raw, 0.5, 1.5))


def _instance_diameter(coords: np.ndarray) -> float:
    spans = coords.max(axis=0) - coords.min(axis=0)
    return float(np.sqrt((spans**2).sum()))


def fit_psi_weights(
    instance: Instance,
    grades_corpus: np.ndarray,
    params: UncertaintyParams | None = None,
    ridge_alpha: float = 1e-3,
) -> UncertaintyParams:
    """Fit the feature weights of the geological factor to local grade
    variance by ridge-regularized least squares.

    The target for each block is its grade variance across the corpus,
    normalized to [0, 1]; weights are clipped nonnegative and rescaled
    to sum to 1 so the factor keeps its normalized form.
    """
    params = params or UncertaintyParams()
    grades_corpus = np.asarray(grades_corpus, dtype=float)
    if grades_corpus.ndim != 2 or grades_corpus.shape[0] < 2:
        raise InvalidArgs("need a corpus of at least 2 grade fields")
    coords = instance.coords_array()
    diameter = _instance_diameter(coords)
    alt = np.array([b.features.alteration_intensity for b in instance.blocks])
    struct = np.array([b.features.structural_density for b in instance.blocks])
    dist = np.array([b.features.distance_to_intrusion for b in instance.blocks])
    dist_norm = np.clip(dist / diameter, 0.0, 1.0) if diameter > 0 else np.zeros_like(dist)

    target = grades_corpus.var(axis=0)
    spread = target.max() - target.min()
    target = (target - target.min()) / spread if spread > 0 else np.zeros_like(target)

    X = np.column_stack([alt, struct, dist_norm])
    w = np.linalg.solve(X.T @ X + ridge_alpha * np.eye(3), X.T @ target)
    w = np.maximum(w, 0.0)
    total = w.sum()
    w = w / total if total > 0 else np.array(params.psi_weights)
    return UncertaintyParams(
        kappa=params.kappa,
        psi_weights=(float(w[0]), float(w[1]), float(w[2])),
        psi_min=params.psi_min,
    )


def sigma_enhanced_row(
    grades: np.ndarray,
    coords: np.ndarray,
    features: list[GeoFeatures],
    t: int,
    params: UncertaintyParams | None = None,
    weights: SpatialWeights | None = None,
) -> dict:
    """Factors for a single (scenario grades, period) pair."""
    params = params or UncertaintyParams()
    weights = weights or rook_weights(coords)
    grades = np.asarray(grades, dtype=float)
    degenerate = False
    try:
        moran = morans_i(grades, weights)
    except DegenerateField:
        moran = float("nan")
        degenerate = True
    mean = grades.mean()
    sigma_local = float(grades.std() / mean) if mean > 0 else 0.0
    f_spatial = (1.0 + sigma_local) if degenerate else (1.0 - moran + sigma_local)
    psi = psi_geological(features, params, _instance_diameter(np.asarray(coords, dtype=float)))
    phi = float(np.exp(-params.kappa * t))
    raw = f_spatial * phi * psi
    sigma = float(np.clip(raw, SIGMA_FLOOR, SIGMA_CEIL))
    return {
        "sigma": sigma,
        "f_spatial": f_spatial,
        "moran": moran,
        "sigma_local": sigma_local,
        "psi": psi,
        "phi": phi,
        "degenerate": degenerate,
        "clamped": raw != sigma,
    }


def uncertainty_factors(
    instance: Instance,
    grades: np.ndarray,
    params: UncertaintyParams | None = None,
    weights: SpatialWeights | None = None,
) -> UncertaintyFactors:
    """Full sigma[s][t] matrix for a scenario grade matrix [s][b]."""
    params = params or UncertaintyParams()
    coords = instance.coords_array()
    weights = weights or rook_weights(coords)
    grades = np.asarray(grades, dtype=float)
    n_s = grades.shape[0]
    n_t = instance.n_periods
    features = [b.features for b in instance.blocks]
    diameter = _instance_diameter(coords)
    psi = psi_geological(features, params, diameter)
    phi = np.exp(-params.kappa * np.arange(n_t))

    moran = np.full(n_s, np.nan)
    sigma_local = np.zeros(n_s)
    f_spatial = np.zeros(n_s)
    degenerate = np.zeros(n_s, dtype=bool)
    for s in range(n_s):
        try:
            moran[s] = morans_i(grades[s], weights)
        except DegenerateField:
            degenerate[s] = True
        mean = grades[s].mean()
        sigma_local[s] = grades[s].std() / mean if mean > 0 else 0.0
        if degenerate[s]:
            f_spatial[s] = 1.0 + sigma_local[s]
        else:
            f_spatial[s] = 1.0 - moran[s] + sigma_local[s]

    raw = f_spatial[:, None] * phi[None, :] * psi
    sigma = np.clip(raw, SIGMA_FLOOR, SIGMA_CEIL)
    return UncertaintyFactors(
        sigma=sigma,
        f_spatial=f_spatial,
        moran=moran,
        sigma_local=sigma_local,
        psi=psi,
        phi=phi,
        degenerate=degenerate,
        clamped=raw != sigma,
    )


def enpv(
    mass: float,
    grade: float,
    t: int,
    sigma_st: float,
    price: float,
    recovery: float,
    processing_cost: float,
    discount_rate: float,
) -> float:
    """Risk-adjusted discounted block value:
    sigma * (grade*mass*price*recovery - mass*cost) / (1 + r)^t.
    """
    disc = (1.0 + discount_rate) ** (-t)
    revenue = grade * mass * price * recovery * disc
    cost = mass * processing_cost * disc
    return sigma_st * (revenue - cost)


def write_audit_csv(factors: UncertaintyFactors, path) -> None:
    """Dump (scenario, period, I_moran, sigma_local, psi, phi, sigma) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "period", "moran_i", "sigma_local", "psi", "phi", "sigma_enhanced"])
        for s in range(factors.n_scenarios):
            for t in range(factors.n_periods):
                writer.writerow(
                    [
                        s,
                        t,
                        "" if np.isnan(factors.moran[s]) else repr(float(factors.moran[s])),
                        repr(float(factors.sigma_local[s])),
                        repr(float(factors.psi)),
                        repr(float(factors.phi[t])),
                        repr(float(factors.sigma[s, t])),
                    ]
                )
