"""Exact-enumeration checks of the information-bottleneck identities."""

import numpy as np
import pytest

from diffwm.iboracle import (CdjPgm, JepaPgm, ZeroSupportError, check_cdj_dpi,
                             check_cdj_ib_bound, check_dpi_bound,
                             enumerate_cdj_terms, enumerate_jepa_terms,
                             random_cdj_pgm, random_jepa_pgm, run_cdj_campaign,
                             run_jepa_campaign)


def test_identity_holds_on_random_models():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        sizes = rng.integers(2, 5, size=4)
        pgm = random_jepa_pgm(rng, *sizes)
        terms = enumerate_jepa_terms(pgm)
        worst = max(worst, abs(terms.identity_residual))
    assert worst <= 1e-10


def test_dpi_never_violated_on_random_chains():
    rng = np.random.default_rng(1)
    for _ in range(200):
        pgm = random_jepa_pgm(rng, *rng.integers(2, 5, size=4))
        assert check_dpi_bound(pgm).holds


def test_independent_views_have_zero_mi():
    rng = np.random.default_rng(2)
    nz1, nz2, nx1, nx2 = 3, 3, 3, 3
    pgm = random_jepa_pgm(rng, nx1, nz1, nz2, nx2)
    # make z2 independent of z1: constant predictor rows
    row = pgm.p_z2_given_z1[0]
    pgm = JepaPgm(pgm.p_z1, np.tile(row, (nz1, 1)), pgm.p_x1_given_z1,
                  pgm.p_x2_given_z2, pgm.q_z1_given_x1, pgm.q_z2_given_x2)
    terms = enumerate_jepa_terms(pgm)
    assert terms.i_x1x2 == pytest.approx(0.0, abs=1e-12)
    assert abs(terms.identity_residual) <= 1e-10


def test_deterministic_bijective_chain_attains_dpi_equality():
    eye = np.eye(3)
    pgm = JepaPgm(
        p_z1=np.full(3, 1 / 3),
        p_z2_given_z1=eye[[1, 2, 0]],      # permutation predictor
        p_x1_given_z1=eye,                 # bijective decoders
        p_x2_given_z2=eye,
        q_z1_given_x1=eye,
        q_z2_given_x2=eye,
    )
    w = check_dpi_bound(pgm)
    assert w.holds and w.slack == pytest.approx(0.0, abs=1e-12)
    terms = enumerate_jepa_terms(pgm)
    assert abs(terms.identity_residual) <= 1e-10
    assert terms.l_pred == pytest.approx(0.0, abs=1e-12)


def test_lossy_decoder_gives_strict_dpi_inequality():
    rng = np.random.default_rng(3)
    for _ in range(20):
        pgm = random_jepa_pgm(rng, 3, 3, 3, 3)  # dense tables are lossy
        w = check_dpi_bound(pgm)
        assert w.holds and w.slack > 1e-6


def test_alphabet_bound_enforced():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        random_jepa_pgm(rng, 9, 3, 3, 3)


def test_zero_support_raises():
    eye = np.eye(2)
    pgm = JepaPgm(
        p_z1=np.array([0.5, 0.5]),
        p_z2_given_z1=eye,
        p_x1_given_z1=eye,
        p_x2_given_z2=eye,
        q_z1_given_x1=eye[::-1],  # mass exactly where the decoder has none
        q_z2_given_x2=eye,
    )
    with pytest.raises(ZeroSupportError):
        enumerate_jepa_terms(pgm)


# ---------------------------------------------------------------------------
# conditional diffusion


def test_cdj_path_split_and_decomposition_on_random_models():
    rng = np.random.default_rng(5)
    for _ in range(100):
        sizes = rng.integers(2, 4, size=4)
        t_len = int(rng.integers(1, 4))
        pgm = random_cdj_pgm(rng, *sizes, chain_len=t_len)
        terms = enumerate_cdj_terms(pgm)
        assert abs(terms.path_residual) <= 1e-10
        assert abs(terms.decomp_residual) <= 1e-10
        assert abs(terms.identity_residual) <= 1e-10
        assert check_cdj_ib_bound(pgm).holds
        assert check_cdj_dpi(pgm).holds


def test_cdj_single_step_chain_edge():
    """T = 1: the denoising-KL sum is empty, so L_den reduces to the endpoint
    term and the split still balances."""
    rng = np.random.default_rng(6)
    pgm = random_cdj_pgm(rng, 2, 2, 2, 2, chain_len=1)
    terms = enumerate_cdj_terms(pgm)
    assert terms.l_den == pytest.approx(terms.l0, abs=1e-14)
    assert abs(terms.path_residual) <= 1e-12
    assert terms.l_path == pytest.approx(terms.c2 + terms.r2t + terms.l_den,
                                         abs=1e-12)


def test_cdj_deterministic_encoder_zeroes_c2():
    rng = np.random.default_rng(7)
    pgm = random_cdj_pgm(rng, 2, 2, 2, 2, chain_len=2)
    one_hot = np.eye(2)
    det = CdjPgm(pgm.p_z1, pgm.p_x1_given_z1, pgm.p_x2_given_z2, pgm.p_z2T,
                 pgm.p_rev, pgm.q_z1_given_x1, one_hot, pgm.q_fwd)
    terms = enumerate_cdj_terms(det)
    assert terms.c2 == pytest.approx(0.0, abs=1e-14)  # point masses: zero entropy
    assert abs(terms.path_residual) <= 1e-10


def test_cdj_bound_slack_equals_dpi_slack():
    """Algebraically the denoising-only bound's slack is exactly the DPI gap;
    the enumeration must agree."""
    rng = np.random.default_rng(8)
    pgm = random_cdj_pgm(rng, 3, 3, 3, 3, chain_len=2)
    bound = check_cdj_ib_bound(pgm)
    dpi = check_cdj_dpi(pgm)
    assert bound.slack == pytest.approx(dpi.slack, abs=1e-10)


def test_cdj_equality_with_sufficient_statistics():
    """Bijective decoders and consistent one-hot posteriors make the DPI (and
    hence the denoising-only bound) tight."""
    eye = np.eye(2)
    rng = np.random.default_rng(9)
    base = random_cdj_pgm(rng, 2, 2, 2, 2, chain_len=2)
    pgm = CdjPgm(base.p_z1, eye, eye, base.p_z2T, base.p_rev,
                 eye, eye, base.q_fwd)
    bound = check_cdj_ib_bound(pgm)
    assert bound.holds
    assert bound.slack == pytest.approx(0.0, abs=1e-10)


def test_cdj_campaign_summary():
    report = run_cdj_campaign(30, np.random.default_rng(10))
    assert report.passed
    assert report.worst_identity_residual <= 1e-10
    assert report.worst_dpi_slack >= -1e-12


def test_jepa_campaign_summary():
    report = run_jepa_campaign(50, np.random.default_rng(11))
    assert report.passed


def test_cdj_chain_bound_enforced():
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError):
        random_cdj_pgm(rng, 2, 2, 2, 2, chain_len=5)


def test_row_normalization_validated():
    bad = np.array([[0.5, 0.4], [0.5, 0.5]])
    eye = np.eye(2)
    with pytest.raises(ValueError):
        JepaPgm(np.array([0.5, 0.5]), bad, eye, eye, eye, eye).validate()
