"""Scalar chi-square / beta distribution functions and analytic tail bounds.

These are the numerical kernels behind every error-rate and power bound in
the package.  All bound factors are assembled in log space and exponentiated
last: terms like ``theta**(k/2) * exp(-theta/2)`` overflow or underflow long
before the thresholds that realistic problem sizes require.

Every function is a pure function of its arguments and safe to call
concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import special


__all__ = [
    "TailBoundInput",
    "beta_cdf",
    "chi2_cdf",
    "chi2_quantile",
    "chi2_sf",
    "chi2_tail_bound",
    "log_quadrant_constant",
    "nc_chi2_lower_tail_bound",
]


def chi2_cdf(x: float, k: int) -> float:
    """CDF of the chi-square distribution with ``k`` degrees of freedom.

    Computed as the regularized lower incomplete gamma function P(k/2, x/2).
    """
    if k < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {k}")
    if x < 0:
        raise ValueError(f"chi-square CDF argument must be >= 0, got {x}")
    return float(special.gammainc(k / 2.0, x / 2.0))


def chi2_sf(x: float, k: int) -> float:
    """Upper tail 1 - CDF of chi-square(``k``), accurate for large ``x``."""
    if k < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {k}")
    if x < 0:
        return 1.0
    return float(special.gammaincc(k / 2.0, x / 2.0))


def chi2_quantile(p: float, k: int) -> float:
    """Inverse of :func:`chi2_cdf` in ``x``, by bisection.

    Plumbing for threshold calibration only; not a general quantile API.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"probability must be in [0, 1), got {p}")
    if p == 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while chi2_cdf(hi, k) < p:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError("quantile bracketing failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, k) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def chi2_tail_bound(z: float, k: int) -> float:
    """Analytic bound on the chi-square upper tail: ``1 - F_k(z k) <= (z e^{1-z})^{k/2}``.

    Valid for ``z > 1``; evaluated in log space.
    """
    if z <= 1.0:
        raise ValueError(f"tail bound requires z > 1, got {z}")
    if k < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {k}")
    return math.exp(0.5 * k * (math.log(z) + 1.0 - z))


def beta_cdf(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function: CDF of Beta(a, b) at ``x``."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"beta shape parameters must be positive, got ({a}, {b})")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"beta CDF argument must be in [0, 1], got {x}")
    return float(special.betainc(a, b, x))


def beta_sf(x: float, a: float, b: float) -> float:
    """Upper tail 1 - CDF of Beta(a, b), accurate when the tail is tiny."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"beta shape parameters must be positive, got ({a}, {b})")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"beta SF argument must be in [0, 1], got {x}")
    return float(special.betaincc(a, b, x))


@dataclass(frozen=True)
class TailBoundInput:
    """Arguments of the noncentral chi-square lower-tail bound.

    ``theta`` is the threshold (score units), ``rho >= 0`` the noncentrality
    and ``nu >= 1`` the degrees of freedom.  The bound is only valid for
    ``theta <= rho + nu``.
    """

    theta: float
    rho: float
    nu: int

    def __post_init__(self):
        if self.nu < 1:
            raise ValueError(f"nu must be >= 1, got {self.nu}")
        if self.rho < 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")


def nc_chi2_lower_tail_bound(inp: TailBoundInput) -> float:
    """Bound on P(Z <= theta) for Z ~ noncentral chi-square(rho, nu).

    Returns ``exp(-(nu + rho - theta)^2 / (4 (nu + 2 rho)))``, valid on
    ``theta <= rho + nu`` (raises otherwise, where the bound does not hold).
    """
    slack = inp.nu + inp.rho - inp.theta
    if slack < 0:
        raise ValueError(
            f"lower-tail bound requires theta <= rho + nu "
            f"(theta={inp.theta}, rho+nu={inp.rho + inp.nu})"
        )
    return math.exp(-(slack * slack) / (4.0 * (inp.nu + 2.0 * inp.rho)))


def log_quadrant_constant(nu_g: int) -> float:
    """Log of the constant multiplying ``exp(-theta_g/2) theta_g^{nu_g/2}``
    in the double-null quadrant bound.

    For ``nu_g = 1`` the factor ``(nu_g - 1)^{(nu_g - 1)/2}`` is taken as 1
    (0^0 = 1), which keeps the constant continuous down to one-variable cells.
    """
    if nu_g < 1:
        raise ValueError(f"cell size must be >= 1, got {nu_g}")
    power_term = 0.0 if nu_g == 1 else 0.5 * (nu_g - 1) * math.log(nu_g - 1.0)
    return (
        0.5 * (nu_g - 1)
        - 0.5 * math.log(2.0)
        - power_term
        + float(special.gammaln(nu_g / 2.0 + 0.5))
        - float(special.gammaln(nu_g / 2.0 + 1.0))
    )
