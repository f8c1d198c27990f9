"""Risk-certificate evaluation for the trained hypernetwork.

All distributions are isotropic Gaussians, so the divergence and expectation
pieces have closed forms; each closed form is cross-checked against a small
Monte Carlo estimate and the worst absolute gap is reported. The certificate
itself is empirical risk under hypernetwork perturbations plus two
complexity terms; it is typically loose at desk scale but must always sit
above the true risk.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import nn, rngs, subspace
from .errors import ConfigError, NumericError, ShapeError
from .hypernet import hyper_forward
from .objective import LearnableState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundConfig:
    n: int
    n_L: int
    m: int
    alpha_h: float = 0.01
    alpha_theta: float = 0.01
    alpha_r: float = 0.01
    delta: float = 0.05
    mc_samples: int = 32
    seed: int = 0
    strict_delta_split: bool = False

    def validate(self) -> None:
        checks = [
            (1 <= self.n_L <= self.n, f"need 1 <= n_L <= n, got n_L={self.n_L} n={self.n}"),
            (self.m >= 1, "m must be at least 1"),
            (self.alpha_h > 0, "alpha_h must be positive"),
            (self.alpha_theta > 0, "alpha_theta must be positive"),
            (self.alpha_r > 0, "alpha_r must be positive"),
            (0 < self.delta < 1, f"delta must be in (0, 1), got {self.delta}"),
            (self.mc_samples >= 1, "mc_samples must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


@dataclass(frozen=True)
class BoundReport:
    emp_risk: float
    term_transductive: float
    term_mtl: float
    rhs: float
    c1: float | None  # undefined when every task is labeled
    c2: float
    mc_discrepancy: float

    def as_dict(self) -> dict:
        return {
            "emp_risk": self.emp_risk,
            "term_transductive": self.term_transductive,
            "term_mtl": self.term_mtl,
            "rhs": self.rhs,
            "c1": self.c1,
            "c2": self.c2,
            "mc_discrepancy": self.mc_discrepancy,
        }


def _vec(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def kl_iso_gauss(mu1, mu2, alpha: float) -> float:
    """Divergence between equal-variance isotropic Gaussians."""
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    a, b = _vec(mu1), _vec(mu2)
    if a.shape != b.shape:
        raise ShapeError(f"mean shapes differ: {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).sum() / (2 * alpha))


def expected_sq_dist(mu, psi_r, alpha_r: float) -> float:
    """E|mu - z|^2 for z ~ N(psi_r, alpha_r I): squared offset plus k*alpha_r."""
    if alpha_r <= 0:
        raise ConfigError(f"alpha_r must be positive, got {alpha_r}")
    a, b = _vec(mu), _vec(psi_r)
    if a.shape != b.shape:
        raise ShapeError(f"vector shapes differ: {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).sum() + a.size * alpha_r)


def t_factor(n_L: int, n: int) -> float:
    """Sample-splitting factor 3*log(n_L)*sqrt(n_L*(1 - n_L/n)).

    Undefined below n_L=2 (the log would vanish or flip sign); kept as stated
    rather than patched.
    """
    if n_L < 2:
        raise ConfigError(f"t_factor needs n_L >= 2, got {n_L}")
    if n_L > n:
        raise ConfigError(f"t_factor needs n_L <= n, got n_L={n_L} n={n}")
    return 3.0 * math.log(n_L) * math.sqrt(n_L * (1.0 - n_L / n))


def _mtl_term(sum_sq_dist, psi_r_sq, alpha_theta, alpha_r, m, n, delta):
    c2 = math.log(8 * m * n / delta) + 1.0
    inner = (sum_sq_dist / (2 * alpha_theta) + psi_r_sq / (2 * alpha_r) + c2) / (2 * m * n)
    return math.sqrt(inner), c2


def _zero_one_risk(layers, x, y) -> float:
    logits = nn.mlp_forward(layers, x).data
    return float(np.mean(np.argmax(logits, axis=1) != y))


def _coords_for(hyper, x) -> np.ndarray:
    return hyper_forward(hyper, x).data


def _generated_layers(hyper, basis, x):
    theta = subspace.expand(basis, _coords_for(hyper, x))
    return [(w.data, b.data) for w, b in subspace.unflatten(theta, basis.layer_shapes)]


def _identity_checks(hyper, tasks, psi_r, cfg) -> float:
    """MC spot checks of the two closed forms; returns the worst gap."""
    rng = rngs.stream(cfg.seed, rngs.BOUND, 2)
    probe = _coords_for(hyper, tasks[0].X)
    k = probe.size
    draws = 2000
    z = psi_r + math.sqrt(cfg.alpha_r) * rng.standard_normal((draws, k))
    mc_sq = float(np.mean(((probe[None, :] - z) ** 2).sum(axis=1)))
    gap_sq = abs(mc_sq - expected_sq_dist(probe, psi_r, cfg.alpha_r))
    x = probe + math.sqrt(cfg.alpha_r) * rng.standard_normal((draws, k))
    log_ratio = (((x - psi_r) ** 2).sum(axis=1) - ((x - probe) ** 2).sum(axis=1)) / (
        2 * cfg.alpha_r
    )
    gap_kl = abs(float(np.mean(log_ratio)) - kl_iso_gauss(probe, psi_r, cfg.alpha_r))
    return max(gap_sq, gap_kl)


def bound_rhs(state: LearnableState, federation, basis, cfg: BoundConfig) -> BoundReport:
    """Evaluate the three-part certificate on a federation of n tasks.

    Empirical risk is the Monte Carlo mean, over perturbed hypernetworks, of
    each labeled client's zero-one error under its own generated model. Tasks
    are processed in ascending id order so the report does not depend on how
    the caller happened to arrange the clients.
    """
    cfg.validate()
    tasks = sorted(
        list(federation.clients) + list(getattr(federation, "eval_clients", [])),
        key=lambda c: c.id,
    )
    labeled = [c for c in tasks if c.labeled]
    if len(tasks) != cfg.n or len(labeled) != cfg.n_L:
        raise ConfigError(
            f"federation has {len(tasks)} tasks ({len(labeled)} labeled); "
            f"config says n={cfg.n} n_L={cfg.n_L}"
        )
    if not labeled:
        raise ConfigError("certificate needs at least one labeled client")
    m_used = min(c.m for c in tasks)
    if m_used != cfg.m:
        log.warning("unequal or mismatched client sizes; using m = min_i m_i = %d", m_used)

    delta = cfg.delta / 2 if cfg.strict_delta_split else cfg.delta
    psi_h = state.hyper.flatten()
    psi_r = np.asarray(state.reg, dtype=np.float64)
    psi_h_sq = float((psi_h**2).sum())
    psi_r_sq = float((psi_r**2).sum())

    n, n_L = cfg.n, cfg.n_L
    if n_L == n:
        c1 = None
        term_transductive = 0.0
    else:
        c1 = math.log(t_factor(n_L, n) / delta)
        term_transductive = math.sqrt(
            (1.0 - n_L / n) * (psi_h_sq / (2 * cfg.alpha_h) + c1) / (2 * n_L)
        )

    risks, mtls = [], []
    c2 = None
    for draw in range(cfg.mc_samples):
        eps = rngs.stream(cfg.seed, rngs.BOUND, 1, draw).standard_normal(psi_h.size)
        hyper = state.hyper.with_flat(psi_h + math.sqrt(cfg.alpha_h) * eps)
        risks.append(
            float(
                np.mean(
                    [_zero_one_risk(_generated_layers(hyper, basis, c.X), c.X, c.Y) for c in labeled]
                )
            )
        )
        sum_sq = sum(
            expected_sq_dist(_coords_for(hyper, c.X), psi_r, cfg.alpha_r) for c in tasks
        )
        mtl, c2 = _mtl_term(sum_sq, psi_r_sq, cfg.alpha_theta, cfg.alpha_r, m_used, n, delta)
        mtls.append(mtl)

    emp_risk = float(np.mean(risks))
    term_mtl = float(np.mean(mtls))
    rhs = emp_risk + term_transductive + term_mtl
    if not math.isfinite(rhs):
        raise NumericError("certificate evaluated to a non-finite value")
    return BoundReport(
        emp_risk=emp_risk,
        term_transductive=term_transductive,
        term_mtl=term_mtl,
        rhs=rhs,
        c1=c1,
        c2=c2,
        mc_discrepancy=_identity_checks(state.hyper, tasks, psi_r, cfg),
    )
