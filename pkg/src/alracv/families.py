"""Per-observation GLM losses and their scalar derivatives.

Every family exposes ``f(z, y)`` together with the first three derivatives
in the linear predictor ``z``.  All functions are vectorized over numpy
arrays and evaluated in float64.

Conventions
-----------
- logistic: ``y in {-1, +1}``, ``f = log(1 + exp(-y z))``
- poisson:  ``y in {0, 1, 2, ...}``, ``f = exp(z) - y z`` (``log y!`` dropped)
- gaussian: ``y`` real, ``f = (z - y)**2 / 2``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .exceptions import DomainError

FAMILY_KINDS = ("logistic", "poisson", "gaussian")
METRIC_KINDS = ("squared", "logistic", "absolute")

# argmax of |s(1-s)(1-2s)| with s = sigmoid(z): z = log(2 + sqrt(3))
_LOGISTIC_D3_ARGMAX = float(np.log(2.0 + np.sqrt(3.0)))
LOGISTIC_D3_SUP = 1.0 / (6.0 * np.sqrt(3.0))


@dataclass(frozen=True)
class GlmFamily:
    """Loss family selected by name.

    Parameters
    ----------
    kind : {"logistic", "poisson", "gaussian"}
    sharp : bool
        If True, :meth:`d3_envelope` returns the tight supremum of
        ``|D3|`` over the interval instead of the coarse closed form.
    """

    kind: str
    sharp: bool = False

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family {self.kind!r}; expected one of {FAMILY_KINDS}")

    @property
    def response_domain(self) -> str:
        return {
            "logistic": "y in {-1, +1}",
            "poisson": "y in {0, 1, 2, ...}",
            "gaussian": "y real",
        }[self.kind]

    def check_response(self, y):
        """Raise :class:`DomainError` naming the first invalid response."""
        y = np.asarray(y, dtype=float)
        bad = ~np.isfinite(y)
        if self.kind == "logistic":
            bad |= (y != 1.0) & (y != -1.0)
        elif self.kind == "poisson":
            bad |= (y < 0) | (y != np.floor(y))
        if np.any(bad):
            idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
            val = np.atleast_1d(y)[idx]
            raise DomainError(
                f"{self.kind} response {float(val)!r} at index {idx} is outside {self.response_domain}",
                index=idx,
            )

    # ------------------------------------------------------------------
    # loss and derivatives
    # ------------------------------------------------------------------
    def loss(self, z, y):
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "logistic":
            return -log_expit(y * z)
        if self.kind == "poisson":
            return np.exp(z) - y * z
        return 0.5 * (z - y) ** 2

    def d1(self, z, y):
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "logistic":
            return -y * expit(-y * z)
        if self.kind == "poisson":
            return np.exp(z) - y
        return z - y

    def d2(self, z, y=None):
        z = np.asarray(z, dtype=float)
        if self.kind == "logistic":
            s = expit(z)
            return s * (1.0 - s)
        if self.kind == "poisson":
            return np.exp(z)
        return np.ones_like(z)

    def d3(self, z, y=None):
        z = np.asarray(z, dtype=float)
        if self.kind == "logistic":
            s = expit(z)
            return s * (1.0 - s) * (1.0 - 2.0 * s)
        if self.kind == "poisson":
            return np.exp(z)
        return np.zeros_like(z)

    def d1_scale(self, z, y):
        """Magnitude of the terms whose difference forms ``D1`` (rounding scale)."""
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "logistic":
            return np.ones_like(z)
        if self.kind == "poisson":
            return np.exp(z) + np.abs(y)
        return np.abs(z) + np.abs(y)

    def eval_derivatives(self, z, y):
        """Return ``(f, d1, d2, d3)`` at ``(z, y)``."""
        self.check_response(y)
        return self.loss(z, y), self.d1(z, y), self.d2(z, y), self.d3(z, y)

    def d3_envelope(self, z_lo, z_hi):
        """Upper bound on ``max |D3(z)|`` for ``z`` in ``[z_lo, z_hi]``."""
        if z_lo > z_hi:
            raise ValueError("z_lo must not exceed z_hi")
        if self.kind == "gaussian":
            return 0.0
        if self.kind == "poisson":
            return float(np.exp(z_hi))
        if not self.sharp:
            return 0.25
        # |D3| is even in z and unimodal on each half-line
        if z_lo <= _LOGISTIC_D3_ARGMAX <= z_hi or z_lo <= -_LOGISTIC_D3_ARGMAX <= z_hi:
            return float(LOGISTIC_D3_SUP)
        return float(max(abs(self.d3(z_lo)), abs(self.d3(z_hi))))


def get_family(family) -> GlmFamily:
    if isinstance(family, GlmFamily):
        return family
    return GlmFamily(str(family))


# ----------------------------------------------------------------------
# out-of-sample discrepancy metrics
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ErrMetric:
    """Discrepancy ``Err(z, y)`` between a prediction and a response.

    ``squared`` is ``(exp(z) - y)**2`` (squared error of the Poisson mean),
    ``logistic`` is ``log(1 + exp(-y z))`` and ``absolute`` is
    ``|exp(z) - y|``.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric {self.kind!r}; expected one of {METRIC_KINDS}")

    def __call__(self, z, y):
        return eval_err(self, z, y)

    def critical_point(self, y):
        """Interior minimizer in ``z`` (or None if the metric is monotone)."""
        if self.kind in ("squared", "absolute") and y > 0:
            return float(np.log(y))
        return None


def get_metric(metric) -> ErrMetric:
    if isinstance(metric, ErrMetric):
        return metric
    aliases = {"squared_of_mean": "squared", "logistic_loss": "logistic"}
    return ErrMetric(aliases.get(str(metric), str(metric)))


def eval_err(metric, z, y):
    metric = get_metric(metric)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if metric.kind == "squared":
        return (np.exp(z) - y) ** 2
    if metric.kind == "logistic":
        return -log_expit(y * z)
    return np.abs(np.exp(z) - y)
