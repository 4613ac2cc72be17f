from fractions import Fraction

import numpy as np
import pytest

from soprolab.certificate import (
    ProximalBlocks,
    QNormError,
    RateCertificate,
    certify,
    check_D_condition,
    kappa,
    m_beta,
    tau,
    z_error,
)
from soprolab.errors import (
    CertificationError,
    InvariantViolation,
    ParameterError,
)
from soprolab.loss import SmoothnessBounds
from soprolab.topology import Graph, build_random_connected_graph, laplacian_weights


def ring_P(n=5, w=1.0):
    g = Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])
    return laplacian_weights(g, w)


def homogeneous_bounds(n, m, M):
    return SmoothnessBounds(m=np.full(n, m), M=np.full(n, M))


# ---------------------------------------------------------------- tau


def test_tau_full_batch_is_zero():
    assert tau(50, 50) == 0.0
    assert tau(1, 1) == 0.0


def test_tau_paper_values_exact():
    assert Fraction(239 - 80, 239 * 80) == Fraction(159, 19120)
    assert tau(239, 80) == 159 / 19120
    assert Fraction(600 - 80, 600 * 80) == Fraction(13, 1200)
    assert tau(600, 80) == 13 / 1200


def test_tau_range_errors():
    with pytest.raises(ParameterError):
        tau(10, 0)
    with pytest.raises(ParameterError):
        tau(10, 11)


# ---------------------------------------------------------------- m_beta


def zeta(gamma, m_fbar, n, M, beta, lam_w):
    return min(m_fbar / n - 2 * M * gamma, beta * lam_w / (2 * (1 + 1 / gamma**2)))


def test_m_beta_root_satisfies_cubic():
    m_fbar, n, M, beta, lam_w = 0.5, 5, 0.3, 1.2, 0.8
    val, g = m_beta(m_fbar, n, M, beta, lam_w)
    coeffs = [4 * M * n, beta * n * lam_w - 2 * m_fbar, 4 * M * n, -2 * m_fbar]
    resid = ((coeffs[0] * g + coeffs[1]) * g + coeffs[2]) * g + coeffs[3]
    assert abs(resid) <= 1e-10 * max(abs(c) for c in coeffs)
    assert 0 < g < m_fbar / (2 * M * n)
    assert val > 0


def test_m_beta_is_the_maximum_of_zeta():
    # Grid-search oracle over 10^4 points.
    m_fbar, n, M, beta, lam_w = 0.5, 5, 0.3, 1.2, 0.8
    val, _ = m_beta(m_fbar, n, M, beta, lam_w)
    hi = m_fbar / (2 * M * n)
    grid = np.linspace(hi * 1e-6, hi * (1 - 1e-9), 10_000)
    best = max(zeta(g, m_fbar, n, M, beta, lam_w) for g in grid)
    assert val >= best - 1e-8


def test_m_beta_varied_parameters():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m_fbar = float(rng.uniform(0.01, 2.0))
        n = int(rng.integers(2, 30))
        M = float(rng.uniform(0.05, 5.0))
        beta = float(rng.uniform(0.05, 10.0))
        lam_w = float(rng.uniform(0.05, 5.0))
        val, g = m_beta(m_fbar, n, M, beta, lam_w)
        hi = m_fbar / (2 * M * n)
        assert 0 < g < hi
        assert val > 0
        grid = np.linspace(hi * 1e-6, hi * (1 - 1e-9), 2000)
        best = max(zeta(x, m_fbar, n, M, beta, lam_w) for x in grid)
        assert val >= best - 1e-8


def test_m_beta_rejects_bad_inputs():
    with pytest.raises(ParameterError):
        m_beta(0.0, 5, 0.3, 1.0, 0.5)
    with pytest.raises(ParameterError):
        m_beta(0.5, 5, 0.3, -1.0, 0.5)


# ---------------------------------------------------------- condition check


def recipe_blocks(P, bounds, beta, mu):
    lam_max = np.linalg.eigvalsh(P.matrix)[-1]
    alpha = (0.5 + lam_max) * beta + mu
    return ProximalBlocks.alpha_identity(alpha, bounds.n_agents)


def test_condition_margin_matches_scalar_reduction():
    # Homogeneous agents: margin must equal mu minus the scalar lower bound.
    P = ring_P(5)
    m, M = 0.1, 0.3
    bounds = homogeneous_bounds(5, m, M)
    beta, eta = 1.0, 0.5
    mb, _ = m_beta(0.5, 5, M, beta, np.linalg.eigvalsh(P.matrix)[1])
    mu_min = (M - 3 * m) / 2 + M / (2 * (1 - eta)) + (M - m) ** 2 / (8 * eta * mb)
    for mu in (mu_min + 0.05, mu_min + 1.0):
        d = recipe_blocks(P, bounds, beta, mu)
        res = check_D_condition(d, bounds, eta, mb, beta, P)
        assert res.passed
        assert abs(res.margin - (mu - mu_min)) <= 1e-10 * max(1.0, abs(mu))


def test_condition_fails_for_mu_zero():
    P = ring_P(4)
    bounds = homogeneous_bounds(4, 0.05, 0.5)
    mb, _ = m_beta(0.2, 4, 0.5, 1.0, np.linalg.eigvalsh(P.matrix)[1])
    d = recipe_blocks(P, bounds, 1.0, 0.0)
    res = check_D_condition(d, bounds, 0.5, mb, 1.0, P)
    assert not res.passed
    assert res.margin <= 0.0


def test_condition_scalar_case_with_tiny_beta():
    # m = M and beta -> 0: the requirement reduces to
    # D > (M/(2(1-eta)) - M) I, checked against plain arithmetic.
    P = ring_P(3)
    M = 0.4
    bounds = homogeneous_bounds(3, M, M)
    eta, beta = 0.25, 1e-9
    alpha = 1.0
    d = ProximalBlocks.alpha_identity(alpha, 3)
    res = check_D_condition(d, bounds, eta, 0.123, beta, P)
    expected = alpha - (M / (2 * (1 - eta)) - M)
    assert abs(res.margin - expected) <= 1e-6


def test_condition_margin_monotone_in_mu():
    P = ring_P(6)
    rng = np.random.default_rng(1)
    bounds = SmoothnessBounds(m=np.full(6, 0.05), M=0.2 + 0.1 * rng.random(6))
    mb, _ = m_beta(0.3, 6, bounds.max_M, 2.0, np.linalg.eigvalsh(P.matrix)[1])
    margins = []
    for mu in (0.5, 1.0, 2.0, 4.0):
        d = recipe_blocks(P, bounds, 2.0, mu)
        margins.append(check_D_condition(d, bounds, 0.5, mb, 2.0, P).margin)
    assert all(b >= a - 1e-12 for a, b in zip(margins, margins[1:]))


def test_condition_explicit_blocks_match_scalar_path():
    P = ring_P(4)
    bounds = homogeneous_bounds(4, 0.1, 0.3)
    mb = 0.05
    alpha = 3.0
    d_scalar = ProximalBlocks.alpha_identity(alpha, 4)
    dim = 3
    d_blocks = ProximalBlocks(blocks=np.stack([alpha * np.eye(dim)] * 4))
    r1 = check_D_condition(d_scalar, bounds, 0.5, mb, 1.0, P)
    r2 = check_D_condition(d_blocks, bounds, 0.5, mb, 1.0, P)
    assert abs(r1.margin - r2.margin) <= 1e-10


# ---------------------------------------------------------------- kappa


def test_kappa_recipe_closed_form():
    # Homogeneous recipe: kappa = mu - (M-3m)/2 - M/(2(1-eta)) - (M-m)^2/(4 c0).
    P = ring_P(5)
    m, M = 0.1, 0.3
    bounds = homogeneous_bounds(5, m, M)
    beta, eta, mu, c0 = 1.5, 0.4, 3.0, 0.01
    d = recipe_blocks(P, bounds, beta, mu)
    got = kappa(c0, eta, d, bounds, beta, P)
    expected = mu - (M - 3 * m) / 2 - M / (2 * (1 - eta)) - (M - m) ** 2 / (4 * c0)
    assert abs(got - expected) <= 1e-10


def test_kappa_equals_condition_margin_at_upper_c0():
    P = ring_P(5)
    bounds = homogeneous_bounds(5, 0.1, 0.35)
    beta, eta = 1.0, 0.5
    mb, _ = m_beta(0.5, 5, 0.35, beta, np.linalg.eigvalsh(P.matrix)[1])
    d = recipe_blocks(P, bounds, beta, 2.0)
    res = check_D_condition(d, bounds, eta, mb, beta, P)
    k = kappa(2.0 * eta * mb, eta, d, bounds, beta, P)
    assert abs(k - res.margin) <= 1e-12


def test_kappa_diverges_as_c0_vanishes():
    P = ring_P(4)
    bounds = homogeneous_bounds(4, 0.05, 0.3)
    d = recipe_blocks(P, bounds, 1.0, 1.0)
    assert kappa(1e-12, 0.5, d, bounds, 1.0, P) < -1e6


def test_kappa_independent_of_c0_when_m_equals_M():
    P = ring_P(4)
    bounds = homogeneous_bounds(4, 0.3, 0.3)
    d = recipe_blocks(P, bounds, 1.0, 1.0)
    k1 = kappa(1e-9, 0.5, d, bounds, 1.0, P)
    k2 = kappa(0.123, 0.5, d, bounds, 1.0, P)
    assert abs(k1 - k2) <= 1e-12


def test_kappa_range_validation():
    P = ring_P(4)
    bounds = homogeneous_bounds(4, 0.1, 0.3)
    d = recipe_blocks(P, bounds, 1.0, 1.0)
    with pytest.raises(ParameterError):
        kappa(0.0, 0.5, d, bounds, 1.0, P)
    with pytest.raises(ParameterError):
        kappa(1.0, 0.5, d, bounds, 1.0, P, m_beta_value=0.1)


# ---------------------------------------------------------------- certify


def certified_setup(seed=0, n=5, beta=1.0, eta=0.5, mu_extra=0.3):
    rng = np.random.default_rng(seed)
    g = build_random_connected_graph(n, 2.5, seed=seed)
    P = laplacian_weights(g, 1.0)
    m = np.full(n, 0.1)
    M = 0.2 + 0.2 * rng.random(n)
    bounds = SmoothnessBounds(m=m, M=M)
    lam_w = np.linalg.eigvalsh(P.matrix)[1]
    mb, _ = m_beta(float(m.sum()), n, float(M.max()), beta, lam_w)
    mu_min = (
        (M.max() - 3 * m.min()) / 2
        + M.max() / (2 * (1 - eta))
        + (M.max() - m.min()) ** 2 / (8 * eta * mb)
    )
    d = recipe_blocks(P, bounds, beta, mu_min + mu_extra)
    return P, bounds, d, beta, eta


def grid_delta_oracle(P, bounds, d, beta, eta, c1, n_grid=200):
    lam_w = np.linalg.eigvalsh(P.matrix)[1]
    mb, _ = m_beta(float(bounds.m.sum()), bounds.n_agents, bounds.max_M, beta, lam_w)
    hi = 2 * eta * mb
    norm_sq = float(np.max(bounds.M + d.alphas) ** 2)
    r = 0.5 * (bounds.m + bounds.M) + d.alphas
    best = 0.0
    c0s = np.linspace(hi * 1e-6, hi * (1 - 1e-6), n_grid)
    c2s = np.logspace(-6, 6, n_grid)
    for c0 in c0s:
        k = kappa(float(c0), eta, d, bounds, beta, P)
        if k <= 0:
            continue
        t1 = beta * lam_w * k / (2 * (1 + c1) * norm_sq)
        t2 = (1 - eta) / ((1 + 1 / c1) * (1 + c2s))
        lam_max = np.max(
            r[None, :] + (1 + 1 / c1) * (1 + 1 / c2s)[:, None] * bounds.M[None, :] ** 2 / (beta * lam_w)
        , axis=1)
        t3 = (hi - c0) / lam_max
        val = np.minimum(t1, np.minimum(t2, t3)).max()
        best = max(best, float(val))
    return best


def test_certify_beats_dense_grid():
    P, bounds, d, beta, eta = certified_setup(seed=3)
    cert = certify(bounds, P, beta, d, eta, sigma_sq=0.2, tau_value=0.05, c1=1.0)
    oracle = grid_delta_oracle(P, bounds, d, beta, eta, c1=1.0)
    assert cert.delta_s >= oracle - 1e-6
    assert 0 < cert.delta_s < 1
    assert cert.kappa > 0


def test_certify_zero_tau_gives_zero_bound():
    P, bounds, d, beta, eta = certified_setup(seed=4)
    cert = certify(bounds, P, beta, d, eta, sigma_sq=0.5, tau_value=0.0)
    assert cert.steady_bound == 0.0


def test_certify_scales_linearly_in_sigma_and_tau():
    P, bounds, d, beta, eta = certified_setup(seed=5)
    c1 = certify(bounds, P, beta, d, eta, sigma_sq=0.2, tau_value=0.05)
    c2 = certify(bounds, P, beta, d, eta, sigma_sq=0.4, tau_value=0.05)
    c3 = certify(bounds, P, beta, d, eta, sigma_sq=0.2, tau_value=0.10)
    assert abs(c2.steady_bound - 2 * c1.steady_bound) <= 1e-9 * c2.steady_bound
    assert abs(c3.steady_bound - 2 * c1.steady_bound) <= 1e-9 * c3.steady_bound
    assert c1.delta_s == c2.delta_s == c3.delta_s


def test_certify_fails_closed_on_bad_D():
    P = ring_P(4)
    bounds = homogeneous_bounds(4, 0.05, 0.4)
    tiny = ProximalBlocks.alpha_identity(0.01, 4)
    with pytest.raises(CertificationError):
        certify(bounds, P, 1.0, tiny, 0.5, sigma_sq=0.1, tau_value=0.05)


def test_certificate_consistency_fields():
    P, bounds, d, beta, eta = certified_setup(seed=6)
    cert = certify(bounds, P, beta, d, eta, sigma_sq=0.3, tau_value=0.02, c1=2.0)
    assert cert.Gamma == 2 * (1 + cert.c1) * cert.delta_s / cert.lambda_w + 2
    expected = cert.Gamma * cert.n_agents * cert.tau * cert.sigma_sq / cert.delta_s
    assert cert.steady_bound == expected
    assert 0 < cert.c0 < 2 * cert.eta_s * cert.m_beta
    rt = RateCertificate.from_dict(cert.to_dict())
    assert rt.delta_s == cert.delta_s
    assert np.array_equal(rt.r_diag, cert.r_diag)


def test_certificate_rejects_inconsistent_values():
    P, bounds, d, beta, eta = certified_setup(seed=7)
    cert = certify(bounds, P, beta, d, eta, sigma_sq=0.3, tau_value=0.02)
    data = cert.to_dict()
    data["delta_s"] = 1.5
    with pytest.raises(InvariantViolation):
        RateCertificate.from_dict(data)
    data = cert.to_dict()
    data["kappa"] = -1.0
    with pytest.raises(InvariantViolation):
        RateCertificate.from_dict(data)


# ---------------------------------------------------------------- z_error


def q_star_for(x_star_dim, n, rng):
    # Any stacked blocks with zero sum mimic a feasible dual optimum.
    q = rng.standard_normal((n, x_star_dim))
    return q - q.mean(axis=0)


def test_z_error_zero_at_optimum():
    rng = np.random.default_rng(2)
    P = ring_P(5)
    r = rng.uniform(1.0, 2.0, 5)
    x_star = rng.standard_normal(3)
    q_star = q_star_for(3, 5, rng)
    err = z_error(np.tile(x_star, (5, 1)), q_star, x_star, q_star, 1.3, r, P)
    assert err == 0.0


def test_z_error_pure_primal_offset():
    rng = np.random.default_rng(3)
    P = ring_P(4)
    r = rng.uniform(0.5, 1.5, 4)
    x_star = rng.standard_normal(3)
    q_star = q_star_for(3, 4, rng)
    u = rng.standard_normal((4, 3))
    beta = 0.7
    err = z_error(x_star + u, q_star, x_star, q_star, beta, r, P)
    expected = beta * sum(r[i] * (u[i] @ u[i]) for i in range(4))
    assert abs(err - expected) <= 1e-12 * max(1.0, expected)


def test_z_error_matches_dense_pseudoinverse_oracle():
    rng = np.random.default_rng(4)
    n, dim = 5, 3
    g = build_random_connected_graph(n, 2.5, seed=8)
    P = laplacian_weights(g, 1.0)
    r = rng.uniform(0.5, 2.0, n)
    beta = 1.1
    x_star = rng.standard_normal(dim)
    q_star = q_star_for(dim, n, rng)
    x = x_star + 0.1 * rng.standard_normal((n, dim))
    dq = rng.standard_normal((n, dim))
    dq -= dq.mean(axis=0)  # stay in range(W)
    q = q_star + dq
    got = z_error(x, q, x_star, q_star, beta, r, P)

    W = np.kron(P.matrix, np.eye(dim))
    R = np.kron(np.diag(r), np.eye(dim))
    dx = (x - x_star).ravel()
    dqf = dq.ravel()
    expected = beta * dx @ R @ dx + dqf @ np.linalg.pinv(W) @ dqf
    assert abs(got - expected) <= 1e-10 * max(1.0, expected)


def test_z_error_detects_range_violation():
    rng = np.random.default_rng(5)
    P = ring_P(4)
    r = np.ones(4)
    x_star = np.zeros(2)
    q_star = q_star_for(2, 4, rng)
    q_bad = q_star + 1.0  # constant shift sits along the all-ones direction
    with pytest.raises(InvariantViolation):
        z_error(np.zeros((4, 2)), q_bad, x_star, q_star, 1.0, r, P)


def test_z_error_supports_block_r():
    rng = np.random.default_rng(6)
    P = ring_P(4)
    dim = 2
    r_scalars = rng.uniform(0.5, 1.5, 4)
    r_blocks = np.stack([s * np.eye(dim) for s in r_scalars])
    x_star = rng.standard_normal(dim)
    q_star = q_star_for(dim, 4, rng)
    x = x_star + rng.standard_normal((4, dim))
    dq = rng.standard_normal((4, dim))
    dq -= dq.mean(axis=0)
    a = z_error(x, q_star + dq, x_star, q_star, 0.9, r_scalars, P)
    b = z_error(x, q_star + dq, x_star, q_star, 0.9, r_blocks, P)
    assert abs(a - b) <= 1e-12 * max(1.0, a)
