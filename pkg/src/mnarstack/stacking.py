"""Stacked imputations and not-at-random importance weights.

Rows of subjects whose target is missing are reweighted by the odds of
missingness evaluated at each imputed value, normalized within subject.
Rows of subjects with the target observed always carry weight ``1/M``.
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data import DataMatrix, format_value
from .errors import DataError, WeightError
from .glm import fit_binomial, get_link

CLAMP = 1e-10
MAX_CLAMPED_FRACTION = 1e-3


@dataclass(frozen=True, eq=False)
class ImputedStack:
    """``M`` completed datasets stacked, with one weight per (imputation, subject).

    Attributes
    ----------
    values : ndarray of shape (M, n, p)
        ``values[m, i]`` is subject ``i`` in imputation ``m + 1``.
    weights : ndarray of shape (M, n)
        Row weights; each column sums to one.
    source : DataMatrix
        The incomplete data the imputations were generated from.
    """

    values: np.ndarray
    weights: np.ndarray
    source: DataMatrix = field(repr=False)

    def __post_init__(self):
        for name in ("values", "weights"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def m_imputations(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return self.source.observed

    def with_weights(self, weights) -> "ImputedStack":
        return replace(self, weights=weights)


def stack(imputations) -> ImputedStack:
    """Stack ``M >= 2`` completed datasets with uniform weights ``1/M``."""
    M = len(imputations)
    if M < 2:
        raise DataError(f"stacking needs at least 2 imputations, got {M}")
    source = imputations[0].source
    shape = imputations[0].values.shape
    for imp in imputations[1:]:
        if imp.values.shape != shape:
            raise DataError(f"imputation {imp.imputation_index} has shape {imp.values.shape}, expected {shape}")
        if imp.source is not source and not np.array_equal(imp.source.observed, source.observed):
            raise DataError(f"imputation {imp.imputation_index} has a different source mask")
    values = np.stack([imp.values for imp in imputations])
    obs = source.observed
    if not np.all(values[:, obs] == values[0, obs]):
        raise DataError("observed cells differ across imputations")
    return ImputedStack(values, np.full((M, shape[0]), 1.0 / M), source)


def normalized_exp(log_w, axis=0):
    """``exp(log_w)`` normalized to sum to one along ``axis`` (max-subtracted)."""
    log_w = np.asarray(log_w, dtype=float)
    e = np.exp(log_w - np.max(log_w, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class MnarWeightSpec:
    """Assumed missingness model for the target column.

    ``P(target observed | Z, W)`` follows ``g^{-1}(phi0 + phi1 * Z_target + W' phi2)``.
    ``phi1`` is the fixed sensitivity parameter; ``phi0`` and ``phi2``
    (also called ``phi_W``) are nuisance coefficients estimated from the
    stack unless supplied. ``w_cols`` defaults to all complete columns.
    ``mnar_targets`` lists ``(column, phi)`` pairs for several MNAR columns.
    """

    target_col: int
    phi1: float = 0.0
    link: str = "logistic"
    phi0: Optional[float] = None
    phi2: Optional[np.ndarray] = None
    w_cols: Optional[Sequence[int]] = None
    mnar_targets: Optional[Sequence[tuple]] = None

    def __post_init__(self):
        if not np.isfinite(self.phi1):
            raise ValueError("phi1 must be finite")


def _apply_subject_weights(stack: ImputedStack, log_w, rows) -> ImputedStack:
    """Replace weights of subjects ``rows`` by normalized ``exp(log_w[:, rows])``."""
    M = stack.m_imputations
    weights = np.full((M, stack.n), 1.0 / M)
    if rows.any():
        weights[:, rows] = normalized_exp(log_w[:, rows], axis=0)
    return stack.with_weights(weights)


def weights_logistic(stack: ImputedStack, spec: MnarWeightSpec) -> ImputedStack:
    """Weights ``omega_im ∝ exp(-phi1 Z_i1m)`` for a logistic missingness model."""
    j = spec.target_col
    return _apply_subject_weights(stack, -spec.phi1 * stack.values[:, :, j], ~stack.observed[:, j])


def _w_matrix(data: DataMatrix, spec: MnarWeightSpec, w_design):
    if w_design is not None:
        W = np.asarray(w_design, dtype=float)
        return W[:, None] if W.ndim == 1 else W
    cols = spec.w_cols
    if cols is None:
        cols = [k for k in range(data.p) if k != spec.target_col and data.observed[:, k].all()]
    for k in cols:
        if not data.observed[:, k].all():
            raise DataError(f"W column {data.names[k]!r} has missing cells")
    return np.asarray(data.values[:, list(cols)], dtype=float).reshape(data.n, len(cols))


def fit_missingness_offset_model(stack: ImputedStack, spec: MnarWeightSpec, data: DataMatrix = None, w_design=None):
    """Estimate ``(phi0, phi2)`` with ``phi1 * Z_i1m`` as a fixed offset.

    The model for the observation indicator is fitted to the unweighted
    stack, every row contributing weight ``1/M``.
    """
    data = stack.source if data is None else data
    W = _w_matrix(data, spec, w_design)
    M, n = stack.m_imputations, stack.n
    j = spec.target_col
    r = data.observed[:, j].astype(float)
    X = np.tile(np.column_stack([np.ones(n), W]), (M, 1))
    t = np.full(M * n, 1.0 / M)
    offset = spec.phi1 * stack.values[:, :, j].ravel()
    fit = fit_binomial(X, t * np.tile(r, M), t, offset=offset, link=spec.link)
    return float(fit.theta[0]), fit.theta[1:]


def weights_general_link(
    stack: ImputedStack, spec: MnarWeightSpec, data: DataMatrix = None, w_design=None, estimate=True
) -> ImputedStack:
    """Weights ``omega_im ∝ [1 - g^{-1}(eta_im)] / g^{-1}(eta_im)`` for link ``g``.

    ``eta_im = phi0 + phi1 Z_i1m + W_i' phi2``. With ``estimate=True`` the
    nuisance coefficients are fitted by :func:`fit_missingness_offset_model`;
    otherwise ``spec.phi0`` and ``spec.phi2`` are used as given. ``w_design``
    overrides the W columns with an arbitrary ``n x r`` matrix (for example,
    one including interactions).

    Raises
    ------
    WeightError
        More than 0.1% of weighted rows have an observation probability
        within ``1e-10`` of 0 or 1.
    """
    data = stack.source if data is None else data
    link = get_link(spec.link)
    W = _w_matrix(data, spec, w_design)
    if estimate:
        phi0, phi2 = fit_missingness_offset_model(stack, spec, data, W)
    else:
        if spec.phi0 is None or spec.phi2 is None:
            raise ValueError("phi0 and phi2 are required when estimate=False")
        phi0, phi2 = spec.phi0, np.atleast_1d(np.asarray(spec.phi2, dtype=float))
    j = spec.target_col
    rows = ~data.observed[:, j]
    eta = phi0 + spec.phi1 * stack.values[:, :, j] + (W @ phi2)[None, :]
    prob = link.inverse(eta[:, rows])
    bad = (prob < CLAMP) | (prob > 1 - CLAMP)
    if bad.any():
        if bad.mean() > MAX_CLAMPED_FRACTION:
            m_bad, i_bad = np.argwhere(bad)[0]
            subject = int(np.flatnonzero(rows)[i_bad])
            raise WeightError(
                f"observation probability is numerically 0 or 1 for {int(bad.sum())} rows "
                f"(first: subject {subject + 1}, imputation {m_bad + 1}); weights are unbounded"
            )
        lo, hi = link.eta_for(CLAMP), link.eta_for(1 - CLAMP)
        eta[:, rows] = np.clip(eta[:, rows], min(lo, hi), max(lo, hi))
    return _apply_subject_weights(stack, link.log_odds_failure(eta), rows)


def weights_carpenter(imputations, phi1: float, target_col: int) -> np.ndarray:
    """Dataset-level weights ``alpha_m ∝ exp(-phi1 * sum_{i missing} Z_i1m)``.

    ``imputations`` is a list of completed datasets or an :class:`ImputedStack`.
    """
    if isinstance(imputations, ImputedStack):
        values, mask = imputations.values, imputations.observed
    else:
        values = np.stack([imp.values for imp in imputations])
        mask = imputations[0].source_mask
    miss = ~mask[:, target_col]
    sums = values[:, miss, target_col].sum(axis=1)
    return normalized_exp(-phi1 * sums)


def weights_multivar(stack: ImputedStack, mnar_targets) -> ImputedStack:
    """Weights ``omega_im ∝ exp(-sum_j phi_j Z_ijm 1[Z_ij missing])`` over several columns."""
    cols = [int(c) for c, _ in mnar_targets]
    if len(set(cols)) != len(cols):
        raise ValueError(f"duplicate columns in mnar_targets: {cols}")
    log_w = np.zeros((stack.m_imputations, stack.n))
    rows = np.zeros(stack.n, dtype=bool)
    for col, phi in mnar_targets:
        miss = ~stack.observed[:, col]
        if not miss.any():
            raise DataError(f"column {stack.source.names[col]!r} has no missing cells")
        log_w -= float(phi) * np.where(miss, stack.values[:, :, col], 0.0)
        rows |= miss
    return _apply_subject_weights(stack, log_w, rows)


def sir_select(candidates, phi1: float, rng) -> int:
    """Pick one of ``M`` candidate draws with probability ∝ ``exp(-phi1 z^m)``.

    Returns the 0-based index of the selected candidate.
    """
    z = np.atleast_1d(np.asarray(candidates, dtype=float))
    if z.size == 1:
        return 0
    prob = normalized_exp(-phi1 * z)
    return int(rng.choice(z.size, p=prob))


def write_stack(stack: ImputedStack, path, na_token="NA"):
    """Write the stack as ``subject, imputation, weight, <variables>`` rows."""
    src = stack.source
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["subject", "imputation", "weight"] + src.names) + "\n")
        for m in range(stack.m_imputations):
            for i in range(stack.n):
                cells = [format_value(v, src.kind(j)) for j, v in enumerate(stack.values[m, i])]
                fh.write(",".join([str(i + 1), str(m + 1), repr(float(stack.weights[m, i]))] + cells) + "\n")
