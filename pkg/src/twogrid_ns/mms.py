"""Manufactured solutions, their forcings and discrete error norms.

Both examples come from a separable stream function
``psi = tau(t) Phi(x) Phi(y)``, so that

    u = (tau Phi(x) Phi'(y), -tau Phi'(x) Phi(y))

is divergence free, and vanishes on the boundary when ``Phi`` and ``Phi'``
vanish at 0 and 1. The forcing is
``f = u_t - nu lap u + u . grad u + grad p``, written out from the
derivatives of ``Phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .space import FeFunction, element_values

NORM_DEGREE = 7


@dataclass(frozen=True)
class ManufacturedCase:
    id: str
    amplitude: Callable  # tau(t)
    amplitude_dt: Callable  # tau'(t)
    profile: Callable  # s -> (Phi, Phi', Phi'', Phi''')
    pressure: Callable  # (x, y, t) -> zero-mean pressure
    pressure_grad: Callable  # (x, y, t) -> (dp/dx, dp/dy)
    unforced: bool = field(default=False)


def _poly_profile(s):
    s = np.asarray(s, dtype=float)
    return (
        s**2 * (s - 1.0) ** 2,
        4.0 * s**3 - 6.0 * s**2 + 2.0 * s,
        12.0 * s**2 - 12.0 * s + 2.0,
        24.0 * s - 12.0,
    )


def _trig_profile(s):
    s = np.asarray(s, dtype=float)
    pi = math.pi
    return (
        np.sin(3.0 * pi * s) ** 2,
        3.0 * pi * np.sin(6.0 * pi * s),
        18.0 * pi**2 * np.cos(6.0 * pi * s),
        -108.0 * pi**3 * np.sin(6.0 * pi * s),
    )


EXAMPLE1 = ManufacturedCase(
    id="example1",
    amplitude=math.exp,
    amplitude_dt=math.exp,
    profile=_poly_profile,
    # p = y e^t shifted by its mean e^t / 2
    pressure=lambda x, y, t: (np.asarray(y) - 0.5) * math.exp(t) + 0.0 * np.asarray(x),
    pressure_grad=lambda x, y, t: (0.0 * np.asarray(x), 0.0 * np.asarray(y) + math.exp(t)),
)

EXAMPLE2 = ManufacturedCase(
    id="example2",
    amplitude=lambda t: t * math.exp(-t * t) / (3.0 * math.pi),
    amplitude_dt=lambda t: (1.0 - 2.0 * t * t) * math.exp(-t * t) / (3.0 * math.pi),
    profile=_trig_profile,
    pressure=lambda x, y, t: t * math.exp(-t) * np.sin(2 * math.pi * np.asarray(x)) * np.sin(2 * math.pi * np.asarray(y)),
    pressure_grad=lambda x, y, t: (
        2 * math.pi * t * math.exp(-t) * np.cos(2 * math.pi * np.asarray(x)) * np.sin(2 * math.pi * np.asarray(y)),
        2 * math.pi * t * math.exp(-t) * np.sin(2 * math.pi * np.asarray(x)) * np.cos(2 * math.pi * np.asarray(y)),
    ),
)

CASES = {"example1": EXAMPLE1, "example2": EXAMPLE2}


def get_case(example) -> ManufacturedCase:
    key = f"example{example}" if str(example) in ("1", "2") else str(example)
    try:
        return CASES[key]
    except KeyError:
        raise ValueError(f"unknown example {example!r}") from None


def exact_fields(case: ManufacturedCase, t: float, x, y):
    """Velocity (2, ...), velocity gradient (2, 2, ...) indexed
    ``[component, derivative]``, and zero-mean pressure."""
    tau = case.amplitude(t)
    px, dpx, ddpx, _ = case.profile(x)
    py, dpy, ddpy, _ = case.profile(y)
    u = np.array([tau * px * dpy, -tau * dpx * py])
    grad = np.array([
        [tau * dpx * dpy, tau * px * ddpy],
        [-tau * ddpx * py, -tau * dpx * dpy],
    ])
    return u, grad, case.pressure(x, y, t)


def velocity(case: ManufacturedCase, t: float):
    return lambda x, y: exact_fields(case, t, x, y)[0]


def forcing(case: ManufacturedCase, t: float, x, y, nu: float = 1.0):
    """Right-hand side ``u_t - nu lap u + u . grad u + grad p``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if case.unforced:
        return np.zeros((2,) + np.broadcast(x, y).shape)
    tau = case.amplitude(t)
    dtau = case.amplitude_dt(t)
    px, dpx, ddpx, dddpx = case.profile(x)
    py, dpy, ddpy, dddpy = case.profile(y)
    u1 = tau * px * dpy
    u2 = -tau * dpx * py
    u1x, u1y = tau * dpx * dpy, tau * px * ddpy
    u2x, u2y = -tau * ddpx * py, -tau * dpx * dpy
    lap1 = tau * (ddpx * dpy + px * dddpy)
    lap2 = -tau * (dddpx * py + dpx * ddpy)
    gx, gy = case.pressure_grad(x, y, t)
    f1 = dtau * px * dpy - nu * lap1 + u1 * u1x + u2 * u1y + gx
    f2 = -dtau * dpx * py - nu * lap2 + u1 * u2x + u2 * u2y + gy
    return np.array([f1, f2])


def forcing_field(case: ManufacturedCase, t: float, nu: float = 1.0):
    return lambda x, y: forcing(case, t, x, y, nu)


def error_norms(u: FeFunction, p: FeFunction | None, case: ManufacturedCase, t: float):
    """``(||u - U||, ||grad(u - U)||, ||p - P||)`` at time ``t``.

    Both pressures are compared as zero-mean representatives.
    """
    dofs = u.dofs
    ev = element_values(dofs, NORM_DEGREE)
    x, y = ev.points[..., 0], ev.points[..., 1]
    ue, ge, pe = exact_fields(case, t, x, y)
    coef = u.nodal()[dofs.cell_nodes]
    uh = np.einsum("qi,cik->kcq", ev.phi, coef)
    gh = np.einsum("cqid,cik->kdcq", ev.grad, coef)
    W = ev.weights
    l2 = math.sqrt(np.sum(W * ((ue - uh) ** 2).sum(axis=0)))
    h1 = math.sqrt(np.sum(W * ((ge - gh) ** 2).sum(axis=(0, 1))))
    if p is None:
        return l2, h1, float("nan")
    areas = W.sum(axis=1)
    ph = p.coefficients - np.dot(areas, p.coefficients) / areas.sum()
    pe = pe - np.sum(W * pe) / areas.sum()
    l2p = math.sqrt(np.sum(W * (pe - ph[:, None]) ** 2))
    return l2, h1, l2p


def rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


@dataclass
class ErrorReport:
    """One row per level of a convergence study."""

    rows: list = field(default_factory=list)

    def add(self, n_H, n_h, k, n_unknowns, errors, wall_seconds):
        self.rows.append(dict(
            level=len(self.rows), n_H=n_H, n_h=n_h, H=1.0 / n_H, h=1.0 / n_h, k=k, N=n_unknowns,
            err_l2_vel=errors[0], err_h1_vel=errors[1], err_l2_p=errors[2], wall_seconds=wall_seconds,
        ))
        self._update_rates()

    def _update_rates(self):
        for i, row in enumerate(self.rows):
            for col in ("l2_vel", "h1_vel", "l2_p"):
                if i == 0:
                    row[f"rate_{col}"] = None
                else:
                    prev = self.rows[i - 1]
                    row[f"rate_{col}"] = rate(prev[f"err_{col}"], row[f"err_{col}"], prev["h"], row["h"])

    def last_rates(self):
        row = self.rows[-1]
        return row["rate_l2_vel"], row["rate_h1_vel"], row["rate_l2_p"]


