"""Ground-truth velocity fields, flow maps and consistency-identity checks.

Derivatives of the oracle average velocity are taken by central finite
differences rather than through the autodiff engine, so this module stays
independent of the code it is used to verify.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GaussianTask:
    """Independent isotropic Gaussians at the two endpoints."""

    mu0: np.ndarray
    mu1: np.ndarray
    sigma0: float
    sigma1: float

    def __post_init__(self):
        object.__setattr__(self, "mu0", np.asarray(self.mu0, dtype=np.float64))
        object.__setattr__(self, "mu1", np.asarray(self.mu1, dtype=np.float64))
        if self.sigma0 <= 0 or self.sigma1 <= 0:
            raise ValueError("sigmas must be positive")


def gaussian_velocity(task: GaussianTask, x: np.ndarray, t: float) -> np.ndarray:
    """Marginal velocity of the standard-schedule path between two Gaussians.

    With I_t = (1-t) x0 + t x1 (x0, x1 independent) the conditional
    expectation of x1 - x0 given I_t = x is linear in x:
        E[x1|I_t=x] = mu1 + t s1^2 / v_t (x - m_t)
        E[x0|I_t=x] = mu0 + (1-t) s0^2 / v_t (x - m_t)
    with m_t = (1-t) mu0 + t mu1 and v_t = (1-t)^2 s0^2 + t^2 s1^2, giving
        v(x, t) = (mu1 - mu0) + (t s1^2 - (1-t) s0^2) / v_t (x - m_t).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t outside [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    m_t = (1.0 - t) * task.mu0 + t * task.mu1
    var_t = (1.0 - t) ** 2 * task.sigma0 ** 2 + t ** 2 * task.sigma1 ** 2
    coef = (t * task.sigma1 ** 2 - (1.0 - t) * task.sigma0 ** 2) / var_t
    return (task.mu1 - task.mu0) + coef * (x - m_t)


def integrate_flow(v, x: np.ndarray, t_from: float, t_to: float,
                   n_steps: int = 512) -> np.ndarray:
    """Classical RK4 solution of dX/dr = v(X, r) from t_from to t_to."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.array(x, dtype=np.float64, copy=True)
    # grid times from linspace so accumulated rounding cannot push an
    # evaluation outside [t_from, t_to]
    ts = np.linspace(t_from, t_to, n_steps + 1)
    for i in range(n_steps):
        r, r_next = ts[i], ts[i + 1]
        h = r_next - r
        mid = 0.5 * (r + r_next)
        k1 = v(x, r)
        k2 = v(x + 0.5 * h * k1, mid)
        k3 = v(x + 0.5 * h * k2, mid)
        k4 = v(x + h * k3, r_next)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state while integrating at r={r}")
    return x


def average_velocity_oracle(v, x: np.ndarray, s: float, t: float,
                            n_steps: int = 512) -> np.ndarray:
    """u_{s,t}(x) = (x - X_{s,t}(x)) / (t - s), X the backward solution map."""
    if s >= t:
        raise ValueError("need s < t; use the instantaneous field on the diagonal")
    endpoint = integrate_flow(v, x, t, s, n_steps)
    return (np.asarray(x, dtype=np.float64) - endpoint) / (t - s)


@dataclass
class IdentityReport:
    setting: str
    residuals: list = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max(self.residuals) if self.residuals else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["setting", "probe", "residual"])
            for i, r in enumerate(self.residuals):
                w.writerow([self.setting, i, f"{r:.6e}"])


def check_identity(setting: str, task: GaussianTask, probes,
                   n_steps: int = 512, fd_h: float = 1e-4) -> IdentityReport:
    """Residual of a self-consistency characterization on the true flow map.

    ``setting`` is one of 'lsd', 'esd', 'ssd', 'semigroup'.  Each probe is a
    tuple (x, s, t) with s < t.  Derivatives of the oracle average velocity
    are taken by central differences with step ``fd_h``.
    """
    v = lambda x, t: gaussian_velocity(task, x, t)

    def u(x, s, t):
        if s == t:
            return v(x, t)
        return average_velocity_oracle(v, x, s, t, n_steps)

    report = IdentityReport(setting=setting)
    for x, s, t in probes:
        x = np.asarray(x, dtype=np.float64)
        if s >= t:
            raise ValueError("probes need s < t")
        u_st = u(x, s, t)
        if setting == "lsd":
            # u_{s,t}(x) = u_{s,s}(X_{s,t}(x)) + (t-s) d_s u_{s,t}(x)
            endpoint = integrate_flow(v, x, t, s, n_steps)
            du_ds = (u(x, s + fd_h, t) - u(x, s - fd_h, t)) / (2.0 * fd_h)
            rhs = v(endpoint, s) + (t - s) * du_ds
        elif setting == "esd":
            # u_{s,t}(x) = v_t(x) - (t-s)(grad u . v_t + d_t u)
            vt = v(x, t)
            eps = fd_h
            jvp_x = (u(x + eps * vt, s, t) - u(x - eps * vt, s, t)) / (2.0 * eps)
            du_dt = (u(x, s, t + fd_h) - u(x, s, t - fd_h)) / (2.0 * fd_h)
            rhs = vt - (t - s) * (jvp_x + du_dt)
        elif setting == "ssd":
            # two-half-step composition with midpoint r = (s+t)/2
            r = 0.5 * (s + t)
            u_rt = u(x, r, t)
            x_mid = x - (t - s) / 2.0 * u_rt
            rhs = 0.5 * u_rt + 0.5 * u(x_mid, s, r)
        elif setting == "semigroup":
            # X_{s,t} = X_{s,r} o X_{r,t} with r the midpoint
            r = 0.5 * (s + t)
            direct = integrate_flow(v, x, t, s, n_steps)
            via_mid = integrate_flow(v, integrate_flow(v, x, t, r, n_steps), r, s, n_steps)
            report.residuals.append(float(np.linalg.norm(direct - via_mid)))
            continue
        else:
            raise ValueError(f"unknown setting {setting!r}")
        report.residuals.append(float(np.linalg.norm(u_st - rhs)))
    return report
