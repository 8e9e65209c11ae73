"""Closed-form 2-Wasserstein (Bures) distance between Gaussians and the
persistent template machinery: assignment, probability aggregation,
exponential smoothing and mixture moments.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, NumericalError
from .hmm import EmConfig, GaussianComponent, fit_hmm
from .validation import as_float_array, check_simplex, check_symmetric

_EVAL_CLAMP_TOL = 1e-10


def sqrtm_psd(S, name: str = "matrix") -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition with eigenvalue clamping.

    Eigenvalues in [-1e-10 * scale, 0) are clamped to 0; anything more negative
    is rejected as non-PSD.
    """
    S = check_symmetric(S, tol=1e-8, name=name)
    vals, vecs = np.linalg.eigh(S)
    scale = max(1.0, float(np.abs(vals).max())) if vals.size else 1.0
    if vals.min(initial=0.0) < -_EVAL_CLAMP_TOL * scale:
        raise NumericalError(f"{name} has eigenvalues below the PSD tolerance")
    vals = np.clip(vals, 0.0, None)
    R = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (R + R.T)


def w2_distance(a: GaussianComponent, b: GaussianComponent) -> float:
    """2-Wasserstein distance between two Gaussians.

    W2^2 = ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_b^{1/2} S_a S_b^{1/2})^{1/2}),
    with the trace expression clamped at 0 before the final square root.
    """
    if a.dim != b.dim:
        raise DataError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma):
        return 0.0  # identity of indiscernibles, exact; the sqrt would amplify trace noise
    dmu2 = float(((a.mu - b.mu) ** 2).sum())
    rb = sqrtm_psd(b.sigma, name="sigma_b")
    cross = sqrtm_psd(rb @ a.sigma @ rb, name="cross term")
    tr = float(np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(cross))
    return float(np.sqrt(dmu2 + max(tr, 0.0)))


@dataclass(frozen=True)
class TemplateSet:
    """G persistent Gaussian templates with stable integer labels.

    Labels are assigned once at initialization and never re-sorted afterwards:
    label g always refers to the same smoothing lineage.
    """

    templates: tuple[GaussianComponent, ...]
    eta: float

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise DataError("template set must contain at least one template")
        if not (0.0 <= self.eta <= 1.0):
            raise DataError("eta must lie in [0, 1]")
        dims = {t.dim for t in self.templates}
        if len(dims) != 1:
            raise DataError("templates must share one dimension")

    @property
    def n_templates(self) -> int:
        return len(self.templates)

    @property
    def labels(self) -> np.ndarray:
        return np.arange(self.n_templates)

    @property
    def dim(self) -> int:
        return self.templates[0].dim


@dataclass(frozen=True)
class AssignmentResult:
    """Component-to-template mapping with aggregated template probabilities."""

    mapping: np.ndarray  # (K,) template label per component
    probs: np.ndarray  # (G,) aggregated p_{t,g}
    distances: np.ndarray  # (K, G) pairwise W2


def assign_components(
    components: list[GaussianComponent],
    probs,
    tset: TemplateSet,
) -> AssignmentResult:
    """Map each component to its nearest template (ties toward the smallest label)
    and aggregate its probability mass onto that template."""
    probs = check_simplex(probs, tol=1e-8, name="component probabilities")
    if len(components) != probs.shape[0] or len(components) < 1:
        raise DataError("components and probabilities disagree in length")
    G = tset.n_templates
    dist = np.empty((len(components), G))
    for i, comp in enumerate(components):
        for g, tpl in enumerate(tset.templates):
            dist[i, g] = w2_distance(tpl, comp)
    mapping = np.argmin(dist, axis=1)  # argmin takes the first minimum: smallest label
    agg = np.zeros(G)
    np.add.at(agg, mapping, probs)
    return AssignmentResult(mapping=mapping, probs=agg, distances=dist)


def update_templates(
    tset: TemplateSet,
    assignment: AssignmentResult,
    components: list[GaussianComponent],
    probs,
) -> TemplateSet:
    """Exponential smoothing toward posterior-weighted within-template averages.

    Templates that received zero assigned mass are left unchanged. Smoothed
    covariances are re-symmetrized.
    """
    probs = as_float_array(probs, "component probabilities", ndim=1)
    eta = tset.eta
    new = list(tset.templates)
    for g in range(tset.n_templates):
        sel = np.flatnonzero(assignment.mapping == g)
        if sel.size == 0:
            continue
        mass = probs[sel].sum()
        if mass <= 0.0:
            continue
        w = probs[sel] / mass
        mu_bar = sum(wi * components[i].mu for wi, i in zip(w, sel))
        sig_bar = sum(wi * components[i].sigma for wi, i in zip(w, sel))
        tpl = tset.templates[g]
        mu = (1.0 - eta) * tpl.mu + eta * mu_bar
        sig = (1.0 - eta) * tpl.sigma + eta * sig_bar
        new[g] = GaussianComponent(mu, 0.5 * (sig + sig.T))
    return replace(tset, templates=tuple(new))


def mixture_moments(tset: TemplateSet, probs) -> tuple[np.ndarray, np.ndarray]:
    """Template-probability-weighted mean and covariance.

    Note: the covariance is the weighted sum of template covariances only —
    no between-template mean-dispersion term is added.
    """
    p = check_simplex(probs, tol=1e-8, name="template probabilities")
    if p.shape[0] != tset.n_templates:
        raise DataError("probability vector length must equal the template count")
    d = tset.dim
    mu = np.zeros(d)
    sig = np.zeros((d, d))
    for pg, tpl in zip(p, tset.templates):
        mu += pg * tpl.mu
        sig += pg * tpl.sigma
    return mu, 0.5 * (sig + sig.T)


def init_templates(
    X_calib,
    n_templates: int,
    eta: float,
    seed: int = 0,
    em: EmConfig | None = None,
) -> TemplateSet:
    """Initialize templates from a G-state HMM fit on the calibration window.

    Labels 0..G-1 are ordered by descending stationary-distribution mass of the
    fitted chain and are permanent from then on.
    """
    X_calib = as_float_array(X_calib, "X_calib", ndim=2)
    if X_calib.shape[0] < n_templates + 2:
        raise DataError("calibration window too short for the template count")
    model = fit_hmm(X_calib, n_templates, seed=seed, em=em)
    mass = model.stationary_distribution()
    order = np.lexsort((np.arange(n_templates), -mass))
    comps = model.components()
    return TemplateSet(templates=tuple(comps[k] for k in order), eta=eta)


class TemplateTracker:
    """Single-writer wrapper carrying the template state through a backtest.

    step() assigns the day's components, aggregates probabilities, smooths the
    templates and returns the assignment; template labels never move.
    """

    def __init__(self, tset: TemplateSet):
        self.tset = tset

    def step(self, components: list[GaussianComponent], probs) -> AssignmentResult:
        assignment = assign_components(components, probs, self.tset)
        self.tset = update_templates(self.tset, assignment, components, probs)
        return assignment

    def snapshot_rows(self, date, assignment: AssignmentResult) -> list[dict]:
        """Per-template export rows: date, g, p_tg, mu_g (csv), trace of sigma_g."""
        rows = []
        for g, tpl in enumerate(self.tset.templates):
            rows.append(
                {
                    "date": date,
                    "g": g,
                    "p_tg": float(assignment.probs[g]),
                    "mu_g": ";".join(f"{v:.10g}" for v in tpl.mu),
                    "trace_sigma_g": float(np.trace(tpl.sigma)),
                }
            )
        return rows
