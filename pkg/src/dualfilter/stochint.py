"""Forward (left-endpoint) stochastic integrals on a grid.

Processes that are not adapted, such as the dual state ``Y`` which depends
on the whole observation record, are handled in split form

    phi_t = xi_t^T F + alpha_t,

where ``F`` is a single random vector fixed over the path and ``xi``,
``alpha`` are adapted. Integrals against ``psi_t = zeta_t^T G + beta_t``
are then assembled from adapted Ito sums,

    sum phi_k^T dpsi_k = F^T (sum xi_k dzeta_k^T) G + F^T sum xi_k dbeta_k
                         + G^T sum dzeta_k alpha_k + sum alpha_k^T dbeta_k,

so the non-adapted factors never enter a Riemann sum directly.

Shapes: ``F`` is ``(..., p)``, ``xi`` is ``(..., n+1, p, q)`` and ``alpha``
is ``(..., n+1, q)``; the process value at each grid time is a q-vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SplitProcess",
    "forward_integral",
    "cumulative_forward_integral",
    "covariation",
    "ito_sum",
]


@dataclass(frozen=True, eq=False)
class SplitProcess:
    """``phi_t = xi_t^T F + alpha_t``; ``F``/``xi`` absent for adapted processes."""

    alpha: np.ndarray
    F: np.ndarray | None = None
    xi: np.ndarray | None = None

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim == 1:
            alpha = alpha[:, None]
        object.__setattr__(self, "alpha", alpha)
        if (self.F is None) != (self.xi is None):
            raise ValueError("F and xi must be given together")
        if self.F is not None:
            F = np.asarray(self.F, dtype=float)
            xi = np.asarray(self.xi, dtype=float)
            if xi.shape[-3] != alpha.shape[-2] or xi.shape[-1] != alpha.shape[-1]:
                raise ValueError(f"xi shape {xi.shape} does not match alpha shape {alpha.shape}")
            if xi.shape[-2] != F.shape[-1]:
                raise ValueError(f"xi shape {xi.shape} does not match F shape {F.shape}")
            object.__setattr__(self, "F", F)
            object.__setattr__(self, "xi", xi)

    @classmethod
    def adapted(cls, values) -> "SplitProcess":
        return cls(alpha=values)

    @property
    def n_points(self) -> int:
        return self.alpha.shape[-2]

    def values(self) -> np.ndarray:
        out = self.alpha
        if self.F is not None:
            out = out + np.einsum("...p,...kpq->...kq", self.F, self.xi)
        return out


def _check_grids(phi: SplitProcess, psi: SplitProcess):
    if phi.n_points != psi.n_points:
        raise ValueError(f"grid mismatch: {phi.n_points} vs {psi.n_points} points")
    if phi.alpha.shape[-1] != psi.alpha.shape[-1]:
        raise ValueError("integrand and integrator have different widths")


def _cell_terms(phi: SplitProcess, psi: SplitProcess, incr_phi: bool):
    """Per-cell adapted sums: (xi dzeta^T, xi dbeta, dzeta alpha, alpha dbeta).

    ``incr_phi`` swaps the left-endpoint values of ``phi`` for its increments,
    which turns the forward integral into the covariation.
    """
    if incr_phi:
        a = np.diff(phi.alpha, axis=-2)
        x = None if phi.xi is None else np.diff(phi.xi, axis=-3)
    else:
        a = phi.alpha[..., :-1, :]
        x = None if phi.xi is None else phi.xi[..., :-1, :, :]

    d_beta = np.diff(psi.alpha, axis=-2)
    terms = {"aa": (a * d_beta).sum(axis=-1)}
    if x is not None:
        terms["xb"] = (x @ d_beta[..., None])[..., 0]
    if psi.F is not None:
        d_zeta = np.diff(psi.xi, axis=-3)
        terms["za"] = (d_zeta @ a[..., None])[..., 0]
        if x is not None:
            terms["xz"] = x @ np.swapaxes(d_zeta, -1, -2)
    return terms


def _contract(sums: dict, phi: SplitProcess, psi: SplitProcess, time_axis: bool):
    t = "t" if time_axis else ""
    out = sums["aa"]
    if "xb" in sums:
        out = out + np.einsum(f"...p,...{t}p->...{t}", phi.F, sums["xb"])
    if "za" in sums:
        out = out + np.einsum(f"...r,...{t}r->...{t}", psi.F, sums["za"])
    if "xz" in sums:
        out = out + np.einsum(f"...p,...{t}pr,...r->...{t}", phi.F, sums["xz"], psi.F)
    return out


_TIME_AXIS = {"aa": -1, "xb": -2, "za": -2, "xz": -3}


def forward_integral(phi: SplitProcess, psi: SplitProcess) -> np.ndarray:
    """``int_0^T phi^T dpsi`` as left-endpoint sums, one value per batch entry."""
    _check_grids(phi, psi)
    sums = {k: v.sum(axis=_TIME_AXIS[k]) for k, v in _cell_terms(phi, psi, incr_phi=False).items()}
    return _contract(sums, phi, psi, time_axis=False)


def cumulative_forward_integral(phi: SplitProcess, psi: SplitProcess) -> np.ndarray:
    """Running forward integral on the grid, ``(..., n+1)`` starting at 0."""
    _check_grids(phi, psi)
    sums = {}
    for k, v in _cell_terms(phi, psi, incr_phi=False).items():
        axis = _TIME_AXIS[k]
        c = np.cumsum(v, axis=axis)
        pad = [(0, 0)] * c.ndim
        pad[axis] = (1, 0)
        sums[k] = np.pad(c, pad)
    return _contract(sums, phi, psi, time_axis=True)


def covariation(phi: SplitProcess, psi: SplitProcess) -> np.ndarray:
    """``<phi, psi>_T`` as the sum of products of increments."""
    _check_grids(phi, psi)
    sums = {k: v.sum(axis=_TIME_AXIS[k]) for k, v in _cell_terms(phi, psi, incr_phi=True).items()}
    return _contract(sums, phi, psi, time_axis=False)


def ito_sum(integrand, integrator) -> np.ndarray:
    """Plain left-endpoint sum for adapted paths of shape ``(..., n+1, q)``."""
    integrand = np.asarray(integrand, dtype=float)
    integrator = np.asarray(integrator, dtype=float)
    return np.einsum("...kq,...kq->...", integrand[..., :-1, :], np.diff(integrator, axis=-2))
