"""Linear-rate certificates for the stochastic proximal dynamics.

Everything here is a deterministic computation on curvature bounds, the
network spectrum, and the run parameters: the sampling factor ``tau``, the
strong-convexity shift ``m_beta`` of the consensus-augmented objective, the
proximal-matrix condition with its margin, the contraction margin ``kappa``,
the rate/noise pair ``(delta_s, Gamma)``, and the steady-state error bound
``Gamma * N * tau * sigma^2 / delta_s`` for the Lyapunov Q-norm.

All per-agent bound matrices are scalars times the identity, so every
network-level matrix reduces exactly to an n x n computation on ``P``;
only user-supplied non-scalar proximal blocks fall back to a dense
Kronecker assembly (desk scale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import CertificationError, InvariantViolation, ParameterError
from .loss import SmoothnessBounds
from .topology import MatrixP, spectral_summary

__all__ = [
    "ProximalBlocks",
    "DConditionResult",
    "RateCertificate",
    "QNormError",
    "tau",
    "m_beta",
    "check_D_condition",
    "kappa",
    "certify",
    "z_error",
]


def tau(C: int, G: int) -> float:
    """Finite-population sampling factor ``(C - G) / (C * G)``."""
    if not (1 <= G <= C):
        raise ParameterError(f"need 1 <= G <= C, got G={G}, C={C}")
    return (C - G) / (C * G)


def m_beta(m_fbar: float, n_agents: int, M: float, beta: float, lambda_w: float):
    """Strong-convexity constant of the consensus-augmented objective.

    Maximizes ``zeta(g) = min(m_fbar/N - 2*M*g, beta*lambda_w/(2*(1+1/g^2)))``
    over ``g > 0``.  The maximum sits at the unique positive root of

        ``4*M*N*g^3 + (beta*N*lambda_w - 2*m_fbar)*g^2 + 4*M*N*g - 2*m_fbar = 0``,

    which is always bracketed by ``(0, m_fbar/(2*M*N))``.  Returns
    ``(m_beta, gamma_star)``.
    """
    if min(m_fbar, n_agents, M, beta, lambda_w) <= 0:
        raise ParameterError("all inputs to m_beta must be positive")

    a3 = 4.0 * M * n_agents
    a2 = beta * n_agents * lambda_w - 2.0 * m_fbar
    a1 = 4.0 * M * n_agents
    a0 = -2.0 * m_fbar

    def cubic(g):
        return ((a3 * g + a2) * g + a1) * g + a0

    hi = m_fbar / (2.0 * M * n_agents)
    if not (cubic(0.0) < 0.0 < cubic(hi)):
        raise CertificationError(
            f"cubic root not bracketed on (0, {hi}): "
            f"f(0)={cubic(0.0)}, f(hi)={cubic(hi)}"
        )
    gamma = brentq(cubic, 0.0, hi, xtol=1e-300, rtol=8.9e-16, maxiter=200)
    scale = max(abs(a3), abs(a2), abs(a1), abs(a0))
    if abs(cubic(gamma)) > 1e-12 * scale:
        raise CertificationError(
            f"cubic residual {cubic(gamma)} exceeds 1e-12 * {scale}"
        )
    val = min(
        m_fbar / n_agents - 2.0 * M * gamma,
        beta * lambda_w / (2.0 * (1.0 + 1.0 / gamma**2)),
    )
    if not (val > 0.0 and 0.0 < gamma < hi):
        raise CertificationError(f"degenerate maximizer gamma={gamma}, zeta={val}")
    return float(val), float(gamma)


@dataclass
class ProximalBlocks:
    """Per-agent proximal matrices D_i.

    Either every block is a scalar multiple of the identity (``alphas``
    holds the scalars) or explicit symmetric blocks are given as an
    ``(N, d, d)`` array.
    """

    alphas: np.ndarray | None = None
    blocks: np.ndarray | None = None

    def __post_init__(self):
        if (self.alphas is None) == (self.blocks is None):
            raise ParameterError("give exactly one of alphas / blocks")
        if self.blocks is not None:
            b = np.asarray(self.blocks, dtype=float)
            if b.ndim != 3 or b.shape[1] != b.shape[2]:
                raise ParameterError(f"blocks must be (N, d, d), got {b.shape}")
            if np.max(np.abs(b - np.transpose(b, (0, 2, 1)))) > 1e-12 * max(
                1.0, np.max(np.abs(b))
            ):
                raise ParameterError("blocks must be symmetric")
            self.blocks = b
        else:
            self.alphas = np.asarray(self.alphas, dtype=float)

    @classmethod
    def alpha_identity(cls, alpha: float, n_agents: int) -> "ProximalBlocks":
        return cls(alphas=np.full(n_agents, float(alpha)))

    @property
    def is_scalar(self) -> bool:
        return self.alphas is not None

    @property
    def n_agents(self) -> int:
        return len(self.alphas) if self.is_scalar else self.blocks.shape[0]

    def agent_matrix(self, i: int, dim: int) -> np.ndarray:
        if self.is_scalar:
            return self.alphas[i] * np.eye(dim)
        return self.blocks[i]

    def add_to(self, H: np.ndarray, i: int) -> np.ndarray:
        """Return ``H + D_i`` without mutating ``H``."""
        if self.is_scalar:
            out = H.copy()
            out[np.diag_indices_from(out)] += self.alphas[i]
            return out
        return H + self.blocks[i]


def _p_matrix(P) -> np.ndarray:
    return P.matrix if isinstance(P, MatrixP) else np.asarray(P, dtype=float)


def _lambda_min_shifted(d: ProximalBlocks, t: np.ndarray, beta: float, P) -> float:
    """Smallest eigenvalue of ``D + diag(t_i I) - beta * P (x) I``."""
    Pm = _p_matrix(P)
    if d.is_scalar:
        A = -beta * Pm + np.diag(d.alphas + t)
        return float(np.linalg.eigvalsh(A)[0])
    n, dim, _ = d.blocks.shape
    A = np.kron(-beta * Pm, np.eye(dim))
    for i in range(n):
        sl = slice(i * dim, (i + 1) * dim)
        A[sl, sl] += d.blocks[i] + t[i] * np.eye(dim)
    return float(np.linalg.eigvalsh(A)[0])


def _norm_LM_plus_D_sq(d: ProximalBlocks, bounds: SmoothnessBounds) -> float:
    if d.is_scalar:
        return float(np.max(bounds.M + d.alphas) ** 2)
    vals = [
        np.linalg.eigvalsh(d.blocks[i] + bounds.M[i] * np.eye(d.blocks.shape[1]))[-1]
        for i in range(d.n_agents)
    ]
    return float(max(vals) ** 2)


def _lambda_max_R_plus(d: ProximalBlocks, bounds: SmoothnessBounds, extra: np.ndarray) -> float:
    """Largest eigenvalue of ``R + diag(extra_i I)`` with ``R = (Lm+LM)/2 + D``."""
    half = 0.5 * (bounds.m + bounds.M)
    if d.is_scalar:
        return float(np.max(half + d.alphas + extra))
    vals = [
        np.linalg.eigvalsh(d.blocks[i])[-1] + half[i] + extra[i]
        for i in range(d.n_agents)
    ]
    return float(max(vals))


@dataclass(frozen=True)
class DConditionResult:
    passed: bool
    margin: float


def check_D_condition(
    d: ProximalBlocks,
    bounds: SmoothnessBounds,
    eta_s: float,
    m_beta_value: float,
    beta: float,
    P,
) -> DConditionResult:
    """Verify the proximal-matrix condition and report its eigenvalue margin.

    Requires ``D`` to dominate
    ``LM/(2(1-eta)) + (LM-Lm)^2/(8 eta m_beta) + (LM-3Lm)/2 + beta(I/2 + W)``;
    the margin is the smallest eigenvalue of the difference (positive iff the
    condition holds strictly).
    """
    if not 0.0 < eta_s < 1.0:
        raise ParameterError(f"eta_s must lie in (0,1), got {eta_s}")
    if m_beta_value <= 0 or beta <= 0:
        raise ParameterError("m_beta and beta must be positive")
    m, M = bounds.m, bounds.M
    t = -(
        M / (2.0 * (1.0 - eta_s))
        + (M - m) ** 2 / (8.0 * eta_s * m_beta_value)
        + (M - 3.0 * m) / 2.0
        + beta / 2.0
    )
    margin = _lambda_min_shifted(d, t, beta, P)
    return DConditionResult(passed=margin > 0.0, margin=margin)


def kappa(
    c0: float,
    eta_s: float,
    d: ProximalBlocks,
    bounds: SmoothnessBounds,
    beta: float,
    P,
    m_beta_value: float | None = None,
) -> float:
    """Contraction margin: smallest eigenvalue of the rate matrix.

    Evaluates ``lambda_min(R - LM/(2(1-eta)) - (LM-Lm)^2/(4 c0) + Lm - LM
    - beta (I/2 + W))`` with ``R = (Lm+LM)/2 + D``.  At
    ``c0 = 2 eta_s m_beta`` this coincides with the proximal-condition
    margin, so a strictly feasible ``D`` always admits ``kappa > 0``.
    """
    if c0 <= 0:
        raise ParameterError(f"c0 must be positive, got {c0}")
    if m_beta_value is not None and not c0 < 2.0 * eta_s * m_beta_value:
        raise ParameterError(
            f"c0={c0} outside (0, 2*eta_s*m_beta={2.0 * eta_s * m_beta_value})"
        )
    m, M = bounds.m, bounds.M
    t = (
        0.5 * (m + M)
        - M / (2.0 * (1.0 - eta_s))
        - (M - m) ** 2 / (4.0 * c0)
        + m
        - M
        - beta / 2.0
    )
    return _lambda_min_shifted(d, t, beta, P)


@dataclass
class RateCertificate:
    """All quantities needed to state the linear-rate and error-bound claim."""

    n_agents: int
    beta: float
    lambda_w: float
    lambda_max: float
    m_fbar: float
    M: float
    m_beta: float
    gamma_star: float
    tau: float
    sigma_sq: float
    eta_s: float
    c0: float
    c1: float
    c2_star: float
    kappa: float
    delta_s: float
    Gamma: float
    steady_bound: float
    r_diag: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.c0 < 2.0 * self.eta_s * self.m_beta:
            raise InvariantViolation(f"c0={self.c0} out of range")
        if not self.kappa > 0:
            raise InvariantViolation(f"kappa={self.kappa} not positive")
        if not 0.0 < self.delta_s < 1.0:
            raise InvariantViolation(f"delta_s={self.delta_s} outside (0,1)")

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
            else:
                out[k] = v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RateCertificate":
        data = dict(data)
        if data.get("r_diag") is not None:
            data["r_diag"] = np.asarray(data["r_diag"], dtype=float)
        return cls(**data)


def _delta_terms(d, bounds, beta, lambda_w, eta_s, m_b, c1, c0, P, norm_sq):
    """min over the three rate terms, with the c2 trade-off solved exactly.

    Term one is c2-free.  The second term decreases and the third increases
    in c2, both spanning (0, max), so their pointwise min peaks at the unique
    crossing; brentq in log(c2) finds it.
    """
    k = kappa(c0, eta_s, d, bounds, beta, P, m_beta_value=m_b)
    if k <= 0.0:
        return None
    term1 = beta * lambda_w * k / (2.0 * (1.0 + c1) * norm_sq)
    num3 = 2.0 * eta_s * m_b - c0
    if num3 <= 0.0:
        return None
    cc1 = 1.0 + 1.0 / c1

    def t2(c2):
        return (1.0 - eta_s) / (cc1 * (1.0 + c2))

    def t3(c2):
        extra = cc1 * (1.0 + 1.0 / c2) * bounds.M**2 / (beta * lambda_w)
        return num3 / _lambda_max_R_plus(d, bounds, extra)

    def gap(u):
        c2 = math.exp(u)
        return t2(c2) - t3(c2)

    lo, hi = -40.0, 40.0
    glo, ghi = gap(lo), gap(hi)
    if not (glo > 0.0 > ghi):  # pathological scales; widen
        while glo <= 0.0 and lo > -700:
            lo -= 100.0
            glo = gap(lo)
        while ghi >= 0.0 and hi < 700:
            hi += 100.0
            ghi = gap(hi)
        if not (glo > 0.0 > ghi):
            return None
    u = brentq(gap, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=200)
    c2 = math.exp(u)
    val = min(t2(c2), t3(c2))
    return min(term1, val), c2, k


def certify(
    bounds: SmoothnessBounds,
    P,
    beta: float,
    d: ProximalBlocks,
    eta_s: float,
    sigma_sq: float,
    tau_value: float,
    c1: float = 1.0,
    m_fbar: float | None = None,
) -> RateCertificate:
    """Compute the full rate certificate for a parameter choice.

    The contraction factor is the sup over the free constants: the c2
    trade-off is solved exactly for each c0 and c0 is optimized over
    ``(0, 2 eta_s m_beta)``, where ``min(term1(c0), crossing(c0))`` is
    unimodal (term1 increases, the crossing value decreases).  Fails with
    diagnostics when the proximal condition fails or no positive rate
    exists.
    """
    if c1 <= 0:
        raise ParameterError(f"c1 must be positive, got {c1}")
    if sigma_sq < 0 or tau_value < 0:
        raise ParameterError("sigma_sq and tau must be nonnegative")
    n_agents = bounds.n_agents
    if m_fbar is None:
        # Sum of the per-agent strong-convexity constants lower-bounds the
        # restricted constant of the aggregate objective.
        m_fbar = float(bounds.m.sum())
    if m_fbar <= 0:
        raise CertificationError(
            "aggregate objective has no strong convexity (m_fbar <= 0); "
            "certificates need a strictly convex regularizer"
        )
    spec = spectral_summary(P) if isinstance(P, MatrixP) else None
    if spec is None:
        eigs = np.linalg.eigvalsh(_p_matrix(P))
        lambda_w, lambda_max = float(eigs[1]), float(eigs[-1])
    else:
        lambda_w, lambda_max = spec.lambda_w, spec.lambda_max

    m_b, gamma_star = m_beta(m_fbar, n_agents, bounds.max_M, beta, lambda_w)
    chk = check_D_condition(d, bounds, eta_s, m_b, beta, P)
    if not chk.passed:
        raise CertificationError(
            f"proximal condition fails with margin {chk.margin}; increase mu/alpha"
        )

    norm_sq = _norm_LM_plus_D_sq(d, bounds)
    hi = 2.0 * eta_s * m_b

    # kappa is nondecreasing in c0 and positive at the upper end (it equals
    # the proximal-condition margin there), so the feasible c0 region is an
    # interval (c_crit, hi); bracket its left edge before optimizing.
    c_hi = hi * (1.0 - 1e-12)
    c_lo = hi * 1e-12

    def kap_at(c0):
        return kappa(c0, eta_s, d, bounds, beta, P, m_beta_value=m_b)

    if kap_at(c_lo) <= 0.0:
        c_lo = brentq(kap_at, c_lo, c_hi, xtol=1e-300, rtol=8.9e-16, maxiter=200)

    def neg_delta(c0):
        res = _delta_terms(d, bounds, beta, lambda_w, eta_s, m_b, c1, c0, P, norm_sq)
        # Feasible values lie in (-1, 0); 1.0 is always worse and keeps the
        # bounded Brent iteration free of non-finite arithmetic.
        return 1.0 if res is None else -res[0]

    opt = minimize_scalar(
        neg_delta,
        bounds=(c_lo, c_hi),
        method="bounded",
        options={"xatol": hi * 1e-13, "maxiter": 300},
    )
    best = _delta_terms(
        d, bounds, beta, lambda_w, eta_s, m_b, c1, float(opt.x), P, norm_sq
    )
    if best is None or best[0] <= 0.0:
        raise CertificationError(
            f"no positive contraction factor found (best delta at c0={opt.x}: {best})"
        )
    delta_s, c2_star, kap = best
    c0_star = float(opt.x)
    if delta_s >= 1.0:  # theory guarantees < 1; guard anyway
        raise CertificationError(f"delta_s={delta_s} not in (0,1)")

    Gamma = 2.0 * (1.0 + c1) * delta_s / lambda_w + 2.0
    steady = Gamma * n_agents * tau_value * sigma_sq / delta_s
    r_diag = 0.5 * (bounds.m + bounds.M) + d.alphas if d.is_scalar else None
    return RateCertificate(
        n_agents=n_agents,
        beta=beta,
        lambda_w=lambda_w,
        lambda_max=lambda_max,
        m_fbar=m_fbar,
        M=bounds.max_M,
        m_beta=m_b,
        gamma_star=gamma_star,
        tau=tau_value,
        sigma_sq=sigma_sq,
        eta_s=eta_s,
        c0=c0_star,
        c1=c1,
        c2_star=c2_star,
        kappa=kap,
        delta_s=delta_s,
        Gamma=Gamma,
        steady_bound=steady,
        r_diag=r_diag,
    )


class QNormError:
    """Lyapunov distance ``||z - z*||_Q^2`` of a primal/dual network state.

    ``Q = diag(beta R, I)`` acts on ``z = (x, v)`` with ``v`` the preimage of
    the dual surrogate under the square root of the lift of ``P``.  The dual
    part is evaluated through the eigendecomposition of ``P`` with the zero
    eigenvalue annihilated, which is exact because conserved dual iterates
    stay in the range of the lift.  ``q_star`` is the stacked
    ``-grad f_i(x_star)`` blocks.
    """

    def __init__(self, P, r, beta: float, x_star: np.ndarray, q_star: np.ndarray):
        Pm = _p_matrix(P)
        w, U = np.linalg.eigh(Pm)
        nz = w > 1e-12 * max(w[-1], 1.0)
        if np.count_nonzero(~nz) != 1:
            raise InvariantViolation(
                f"expected exactly one zero eigenvalue, got {np.count_nonzero(~nz)}"
            )
        self._inv_w = 1.0 / w[nz]
        self._U = U[:, nz]
        self._beta = beta
        self._r = np.asarray(r, dtype=float)
        self._x_star = np.asarray(x_star, dtype=float)
        self._q_star = np.asarray(q_star, dtype=float)
        self._n = Pm.shape[0]

    def __call__(self, x: np.ndarray, q: np.ndarray) -> float:
        dq = q - self._q_star
        mean_comp = dq.mean(axis=0)
        scale = max(
            float(np.linalg.norm(q)), float(np.linalg.norm(self._q_star)), 1.0
        )
        if math.sqrt(self._n) * float(np.linalg.norm(mean_comp)) > 1e-8 * scale:
            raise InvariantViolation(
                "dual iterate left the range of the network matrix "
                f"(consensus component {np.linalg.norm(mean_comp)})"
            )
        coords = self._U.T @ dq
        v_part = float(self._inv_w @ np.einsum("ij,ij->i", coords, coords))
        dx = x - self._x_star
        r = self._r
        if np.ndim(r) == 1:
            x_part = float(r @ np.einsum("ij,ij->i", dx, dx))
        else:
            x_part = float(
                sum(dx[i] @ (r[i] @ dx[i]) for i in range(dx.shape[0]))
            )
        return self._beta * x_part + v_part


def z_error(x, q, x_star, q_star, beta, r, P) -> float:
    """One-shot evaluation of :class:`QNormError`."""
    return QNormError(P, r, beta, x_star, q_star)(x, q)
