"""Exact enumeration of the variational information-bottleneck identities.

Two finite probabilistic graphical models are supported:

* a one-step joint-embedding model X1 <- Z1 -> Z2 -> X2 with a direct latent
  predictor p(z2 | z1) and factored variational posteriors q(z1 | x1),
  q(z2 | x2), and
* a conditional-diffusion variant where the predictor is a reverse noising
  chain z2^T -> ... -> z2^0, each step conditioned on the clean context
  latent z1^0, with a fixed forward noising process q(z2^t | z2^{t-1}).

All mutual informations, KLs, and loss terms are computed by literal
summation over the joint alphabet, so the decompositions they satisfy are
checked to machine precision:

* prediction-loss identity
  I(X1;X2) = Ihat(X1;Z1) + Ihat(X2;Z2) - L - R1 + G  (an equality),
* the data-processing bound I(X1;X2) <= I(Z1;Z2),
* for the diffusion case, equality of the direct path KL with its
  stepwise (entropy + terminal + endpoint + denoising-KL) expansion, the
  split L_path = C2 + R_{2,T} + L_den, and the denoising-only bound.

The data distribution over (x1, x2) is the model's own marginal, which is
exactly the regime in which the identities are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_ALPHABET = 8
MAX_CHAIN = 4


class ZeroSupportError(Exception):
    """A required conditional is undefined (conditioning event has mass 0)."""


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log(p[mask])
    return out


def _plogpq(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Elementwise p * log(p / q) with the 0 log 0 = 0 convention; raises if
    p places mass where q has none."""
    p, q = np.broadcast_arrays(np.asarray(p, dtype=np.float64),
                               np.asarray(q, dtype=np.float64))
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise ZeroSupportError("distribution has mass outside the reference support")
    out = np.zeros(p.shape)
    out[mask] = p[mask] * (np.log(p[mask]) - np.log(q[mask]))
    return out


def _check_rows(table: np.ndarray, name: str, tol: float = 1e-12):
    if np.any(table < 0):
        raise ValueError(f"{name} has negative entries")
    sums = table.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValueError(f"{name} rows must sum to 1 (max dev {np.abs(sums - 1).max():.2e})")


def _mutual_information(joint: np.ndarray) -> float:
    """I from a 2D joint table."""
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    return float(_plogpq(joint, pa * pb).sum())


def _dirichlet_rows(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """Strictly positive stochastic rows (flat Dirichlet)."""
    g = rng.gamma(1.0, 1.0, size=shape) + 1e-12
    return g / g.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# one-step model


@dataclass(frozen=True)
class JepaPgm:
    """Finite tables for the one-step model; see module docstring.

    Conditionals are row-stochastic over their LAST axis:
    ``p_z2_given_z1[z1, z2]``, ``p_x1_given_z1[z1, x1]``,
    ``p_x2_given_z2[z2, x2]``, ``q_z1_given_x1[x1, z1]``,
    ``q_z2_given_x2[x2, z2]``.
    """

    p_z1: np.ndarray
    p_z2_given_z1: np.ndarray
    p_x1_given_z1: np.ndarray
    p_x2_given_z2: np.ndarray
    q_z1_given_x1: np.ndarray
    q_z2_given_x2: np.ndarray

    def validate(self, strict_positive: bool = False):
        nz1, nz2 = self.p_z2_given_z1.shape
        nx1 = self.p_x1_given_z1.shape[1]
        nx2 = self.p_x2_given_z2.shape[1]
        for n, label in ((nz1, "Z1"), (nz2, "Z2"), (nx1, "X1"), (nx2, "X2")):
            if n > MAX_ALPHABET:
                raise ValueError(f"alphabet {label} exceeds {MAX_ALPHABET}")
        _check_rows(self.p_z1[None], "p(z1)")
        _check_rows(self.p_z2_given_z1, "p(z2|z1)")
        _check_rows(self.p_x1_given_z1, "p(x1|z1)")
        _check_rows(self.p_x2_given_z2, "p(x2|z2)")
        _check_rows(self.q_z1_given_x1, "q(z1|x1)")
        _check_rows(self.q_z2_given_x2, "q(z2|x2)")
        if self.q_z1_given_x1.shape != (nx1, nz1) or self.q_z2_given_x2.shape != (nx2, nz2):
            raise ValueError("variational table shapes inconsistent with model tables")
        if strict_positive:
            for t in (self.p_z1, self.p_z2_given_z1, self.p_x1_given_z1,
                      self.p_x2_given_z2, self.q_z1_given_x1, self.q_z2_given_x2):
                if np.any(t <= 0):
                    raise ValueError("strict positivity violated")
        return self

    def joint(self) -> np.ndarray:
        """Generative joint over (z1, z2, x1, x2)."""
        return np.einsum("a,ab,ai,bj->abij", self.p_z1, self.p_z2_given_z1,
                         self.p_x1_given_z1, self.p_x2_given_z2)


def random_jepa_pgm(rng: np.random.Generator, nx1=3, nz1=3, nz2=3, nx2=3) -> JepaPgm:
    return JepaPgm(
        p_z1=_dirichlet_rows(rng, (nz1,)),
        p_z2_given_z1=_dirichlet_rows(rng, (nz1, nz2)),
        p_x1_given_z1=_dirichlet_rows(rng, (nz1, nx1)),
        p_x2_given_z2=_dirichlet_rows(rng, (nz2, nx2)),
        q_z1_given_x1=_dirichlet_rows(rng, (nx1, nz1)),
        q_z2_given_x2=_dirichlet_rows(rng, (nx2, nz2)),
    ).validate(strict_positive=True)


@dataclass(frozen=True)
class IbTerms:
    l_pred: float        # prediction loss E[KL(q(z2|x2) || p(z2|z1))]
    i_x1x2: float
    ihat_x1z1: float
    ihat_x2z2: float
    r1: float            # bottleneck regularizer E[KL(q(z1|x1) || p(z1))]
    gap: float           # posterior approximation gap
    i_z1z2: float
    identity_residual: float  # I(X1;X2) - (Ihat1 + Ihat2 - L - R1 + G)


def enumerate_jepa_terms(pgm: JepaPgm) -> IbTerms:
    pgm.validate()
    joint = pgm.joint()                      # (z1, z2, x1, x2)
    p_x1x2 = joint.sum(axis=(0, 1))          # (x1, x2)
    p_x1 = p_x1x2.sum(axis=1)
    p_x2 = p_x1x2.sum(axis=0)
    q1, q2 = pgm.q_z1_given_x1, pgm.q_z2_given_x2

    i_x1x2 = _mutual_information(p_x1x2)

    # Ihat(Xi; Zi) = E_{p(xi) q(zi|xi)} [log p(xi|zi) - log p(xi)]
    with np.errstate(divide="ignore"):
        log_px1z1 = np.where(pgm.p_x1_given_z1.T > 0,
                             np.log(np.maximum(pgm.p_x1_given_z1.T, 1e-300)), -np.inf)
        log_px2z2 = np.where(pgm.p_x2_given_z2.T > 0,
                             np.log(np.maximum(pgm.p_x2_given_z2.T, 1e-300)), -np.inf)
    w1 = p_x1[:, None] * q1                  # (x1, z1)
    w2 = p_x2[:, None] * q2
    if np.any(w1[~np.isfinite(log_px1z1)] > 0) or np.any(w2[~np.isfinite(log_px2z2)] > 0):
        raise ZeroSupportError("decoder has zero mass on a reachable (x, z) pair")
    ihat_x1z1 = float((w1 * np.where(w1 > 0, log_px1z1, 0.0)).sum()
                      - _xlogx(p_x1).sum())
    ihat_x2z2 = float((w2 * np.where(w2 > 0, log_px2z2, 0.0)).sum()
                      - _xlogx(p_x2).sum())

    # prediction loss: E_{p(x1,x2) q(z1|x1)} KL(q(z2|x2) || p(z2|z1));
    # (x2, z1) pairs with zero probability are never conditioned on
    weight_x2z1 = np.einsum("ij,ia->ja", p_x1x2, q1)        # (x2, z1)
    l_pred = 0.0
    for x2 in range(p_x1x2.shape[1]):
        for z1 in range(pgm.p_z1.shape[0]):
            if weight_x2z1[x2, z1] > 0:
                l_pred += weight_x2z1[x2, z1] * _plogpq(
                    q2[x2], pgm.p_z2_given_z1[z1]).sum()
    l_pred = float(l_pred)

    r1 = float((p_x1[:, None] * _plogpq(q1, pgm.p_z1[None, :])).sum())

    # posterior gap: E KL(q(z1|x1) q(z2|x2) || p(z1,z2|x1,x2))
    gap = 0.0
    for x1 in range(p_x1x2.shape[0]):
        for x2 in range(p_x1x2.shape[1]):
            w = p_x1x2[x1, x2]
            if w <= 0:
                continue
            post = joint[:, :, x1, x2] / w
            q12 = np.outer(q1[x1], q2[x2])
            gap += w * _plogpq(q12, post).sum()
    gap = float(gap)

    p_z1z2 = pgm.p_z1[:, None] * pgm.p_z2_given_z1
    i_z1z2 = _mutual_information(p_z1z2)

    residual = i_x1x2 - (ihat_x1z1 + ihat_x2z2 - l_pred - r1 + gap)
    return IbTerms(l_pred=l_pred, i_x1x2=i_x1x2, ihat_x1z1=ihat_x1z1,
                   ihat_x2z2=ihat_x2z2, r1=r1, gap=gap, i_z1z2=i_z1z2,
                   identity_residual=float(residual))


@dataclass(frozen=True)
class DpiWitness:
    i_x1x2: float
    i_z1z2: float
    holds: bool
    slack: float


def check_dpi_bound(pgm: JepaPgm, tol: float = 1e-12) -> DpiWitness:
    """I(X1;X2) <= I(Z1;Z2) under the generative chain X1 - Z1 - Z2 - X2."""
    terms = enumerate_jepa_terms(pgm)
    slack = terms.i_z1z2 - terms.i_x1x2
    return DpiWitness(i_x1x2=terms.i_x1x2, i_z1z2=terms.i_z1z2,
                      holds=bool(slack >= -tol), slack=float(slack))


# ---------------------------------------------------------------------------
# conditional diffusion model


@dataclass(frozen=True)
class CdjPgm:
    """Finite tables for the conditional-diffusion model.

    ``p_rev[t-1, j, z1, i]`` = p(z2^{t-1} = i | z2^t = j, z1), t = 1..T;
    ``q_fwd[t-1, i, j]``     = q(z2^t = j | z2^{t-1} = i).
    """

    p_z1: np.ndarray            # (nz1,)
    p_x1_given_z1: np.ndarray   # (nz1, nx1)
    p_x2_given_z2: np.ndarray   # (nz2, nx2), decoder on the clean z2^0
    p_z2T: np.ndarray           # (nz2,), terminal prior
    p_rev: np.ndarray           # (T, nz2, nz1, nz2)
    q_z1_given_x1: np.ndarray   # (nx1, nz1)
    q_z20_given_x2: np.ndarray  # (nx2, nz2)
    q_fwd: np.ndarray           # (T, nz2, nz2)

    @property
    def chain_len(self) -> int:
        return self.p_rev.shape[0]

    def validate(self, strict_positive: bool = False):
        t, nz2, nz1, nz2b = self.p_rev.shape
        nx1 = self.p_x1_given_z1.shape[1]
        nx2 = self.p_x2_given_z2.shape[1]
        if nz2 != nz2b:
            raise ValueError("p_rev z2 alphabets inconsistent")
        if t > MAX_CHAIN:
            raise ValueError(f"chain length exceeds {MAX_CHAIN}")
        for n, label in ((nz1, "Z1"), (nz2, "Z2"), (nx1, "X1"), (nx2, "X2")):
            if n > MAX_ALPHABET:
                raise ValueError(f"alphabet {label} exceeds {MAX_ALPHABET}")
        _check_rows(self.p_z1[None], "p(z1)")
        _check_rows(self.p_x1_given_z1, "p(x1|z1)")
        _check_rows(self.p_x2_given_z2, "p(x2|z2^0)")
        _check_rows(self.p_z2T[None], "p(z2^T)")
        _check_rows(self.p_rev, "p(z2^{t-1}|z2^t,z1)")
        _check_rows(self.q_z1_given_x1, "q(z1|x1)")
        _check_rows(self.q_z20_given_x2, "q(z2^0|x2)")
        _check_rows(self.q_fwd, "q(z2^t|z2^{t-1})")
        if strict_positive:
            for tab in (self.p_z1, self.p_x1_given_z1, self.p_x2_given_z2,
                        self.p_z2T, self.p_rev, self.q_z1_given_x1,
                        self.q_z20_given_x2, self.q_fwd):
                if np.any(tab <= 0):
                    raise ValueError("strict positivity violated")
        return self

    # -- path machinery ----------------------------------------------------
    def paths(self) -> np.ndarray:
        """All (z2^0, ..., z2^T) index tuples, shape (P, T+1)."""
        nz2 = self.p_z2T.shape[0]
        grids = np.meshgrid(*([np.arange(nz2)] * (self.chain_len + 1)), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def q_path_given_z20(self, paths: np.ndarray) -> np.ndarray:
        """q(z2^{1:T} | z2^0) evaluated along each path, shape (P,)."""
        prob = np.ones(len(paths))
        for t in range(1, self.chain_len + 1):
            prob *= self.q_fwd[t - 1, paths[:, t - 1], paths[:, t]]
        return prob

    def p_path_given_z1(self, paths: np.ndarray) -> np.ndarray:
        """p(z2^{0:T} | z1) for each path and z1, shape (P, nz1)."""
        prob = np.tile(self.p_z2T[paths[:, -1]][:, None], (1, self.p_z1.shape[0]))
        for t in range(self.chain_len, 0, -1):
            prob *= self.p_rev[t - 1, paths[:, t], :, paths[:, t - 1]]
        return prob

    def forward_marginals(self) -> list[np.ndarray]:
        """M[t][i, j] = q(z2^t = j | z2^0 = i) for t = 0..T."""
        nz2 = self.p_z2T.shape[0]
        out = [np.eye(nz2)]
        for t in range(1, self.chain_len + 1):
            out.append(out[-1] @ self.q_fwd[t - 1])
        return out


def random_cdj_pgm(rng: np.random.Generator, nx1=3, nz1=3, nz2=3, nx2=3,
                   chain_len=2) -> CdjPgm:
    return CdjPgm(
        p_z1=_dirichlet_rows(rng, (nz1,)),
        p_x1_given_z1=_dirichlet_rows(rng, (nz1, nx1)),
        p_x2_given_z2=_dirichlet_rows(rng, (nz2, nx2)),
        p_z2T=_dirichlet_rows(rng, (nz2,)),
        p_rev=_dirichlet_rows(rng, (chain_len, nz2, nz1, nz2)),
        q_z1_given_x1=_dirichlet_rows(rng, (nx1, nz1)),
        q_z20_given_x2=_dirichlet_rows(rng, (nx2, nz2)),
        q_fwd=_dirichlet_rows(rng, (chain_len, nz2, nz2)),
    ).validate(strict_positive=True)


@dataclass(frozen=True)
class CdjTerms:
    l_path: float        # direct path KL
    l_path_split: float  # entropy + terminal + endpoint + denoising KLs
    l_den: float         # endpoint + denoising KLs only
    l0: float            # endpoint reconstruction term
    r1: float
    r2t: float           # terminal prior-matching term
    c2: float            # negative target-encoder entropy (psi-independent)
    gap: float
    i_x1x2: float
    ihat_x1z1: float
    ihat_x2z2: float
    i_z10z20: float
    path_residual: float     # l_path - l_path_split
    decomp_residual: float   # l_path - (c2 + r2t + l_den)
    identity_residual: float  # I(X1;X2) - (Ihat1 + Ihat2 - L_path - R1 + G)


def enumerate_cdj_terms(pgm: CdjPgm) -> CdjTerms:
    pgm.validate()
    paths = pgm.paths()
    q_path = pgm.q_path_given_z20(paths)        # (P,)
    p_path = pgm.p_path_given_z1(paths)         # (P, nz1)
    q20 = pgm.q_z20_given_x2                    # (x2, z2^0)
    q1 = pgm.q_z1_given_x1                      # (x1, z1)
    nz1 = pgm.p_z1.shape[0]
    nx1 = pgm.p_x1_given_z1.shape[1]
    nx2 = pgm.p_x2_given_z2.shape[1]
    z0 = paths[:, 0]

    # model joint over (z1, path, x1, x2) -> data distribution p(x1, x2)
    # p = p(z1) p(x1|z1) p(path|z1) p(x2|z2^0(path))
    p_x1x2 = np.einsum("a,ai,pa,pj->ij", pgm.p_z1, pgm.p_x1_given_z1,
                       p_path, pgm.p_x2_given_z2[z0])
    total = p_x1x2.sum()
    if not np.isclose(total, 1.0, atol=1e-9):
        raise ValueError(f"model joint does not normalize ({total})")
    p_x1 = p_x1x2.sum(axis=1)
    p_x2 = p_x1x2.sum(axis=0)
    i_x1x2 = _mutual_information(p_x1x2)

    # variational path distribution per x2: q(z2^{0:T} | x2)
    q_path_x2 = q20[:, z0] * q_path[None, :]    # (x2, P)

    # direct path KL per (x2, z1), then expectation under p(x1,x2) q(z1|x1)
    kl_path = np.zeros((nx2, nz1))
    for x2 in range(nx2):
        for a in range(nz1):
            kl_path[x2, a] = _plogpq(q_path_x2[x2], p_path[:, a]).sum()
    l_path = float(np.einsum("ij,ia,ja->", p_x1x2, q1, kl_path))

    # stepwise expansion
    marg = pgm.forward_marginals()              # M[t]: (z0, zt)
    t_len = pgm.chain_len

    c2_inst = _xlogx(q20).sum(axis=1)                        # (x2,)  = -H(q2^0)
    r2t_inst = np.einsum("iz,zk->i", q20,
                         _plogpq(marg[t_len], pgm.p_z2T[None, :]))  # (x2,)

    # endpoint: E_{q1 q20 q(z2^1|z2^0)} [-log p(z2^0 | z2^1, z1)]
    with np.errstate(divide="ignore"):
        log_rev0 = np.where(pgm.p_rev[0] > 0, np.log(np.maximum(pgm.p_rev[0], 1e-300)),
                            -np.inf)  # (z2^1, z1, z2^0)
    w0 = np.einsum("iz,zj->izj", q20, pgm.q_fwd[0])          # (x2, z2^0, z2^1)
    l0_x2_z1 = np.zeros((nx2, nz1))
    for x2 in range(nx2):
        for a in range(nz1):
            w = w0[x2]                                        # (z0, z2^1)
            lg = log_rev0[:, a, :].T                          # (z0, z2^1) of log p(z0|z1step,a)
            if np.any(w[~np.isfinite(lg)] > 0):
                raise ZeroSupportError("endpoint term undefined on support")
            l0_x2_z1[x2, a] = -(w * np.where(w > 0, lg, 0.0)).sum()
    l0 = float(np.einsum("ij,ia,ja->", p_x1x2, q1, l0_x2_z1))

    # denoising KLs for t = 2..T
    kl_den_x2_z1 = np.zeros((nx2, nz1))
    for t in range(2, t_len + 1):
        m_prev = marg[t - 1]                                  # (z0, z^{t-1})
        m_cur = marg[t]                                       # (z0, z^t)
        # posterior q(z^{t-1} | z^t, z^0): (z0, z^t, z^{t-1})
        num = m_prev[:, None, :] * pgm.q_fwd[t - 1].T[None, :, :]
        denom = m_cur[:, :, None]
        post = np.zeros_like(num)
        np.divide(num, denom, out=post, where=denom > 0)
        for x2 in range(nx2):
            for a in range(nz1):
                rev = pgm.p_rev[t - 1, :, a, :]               # (z^t, z^{t-1})
                inner = _plogpq(post, rev[None, :, :]).sum(axis=2)  # (z0, z^t)
                weight = q20[x2][:, None] * m_cur             # (z0, z^t)
                kl_den_x2_z1[x2, a] += (weight * inner).sum()
    kl_den = float(np.einsum("ij,ia,ja->", p_x1x2, q1, kl_den_x2_z1))

    l_den = l0 + kl_den
    c2 = float((p_x2 * c2_inst).sum())
    r2t = float((p_x2 * r2t_inst).sum())
    l_path_split = c2 + r2t + l_den

    # bottleneck regularizer and variational MI estimates
    r1 = float((p_x1[:, None] * _plogpq(q1, pgm.p_z1[None, :])).sum())
    with np.errstate(divide="ignore"):
        log_px1z1 = np.where(pgm.p_x1_given_z1.T > 0,
                             np.log(np.maximum(pgm.p_x1_given_z1.T, 1e-300)), -np.inf)
        log_px2z2 = np.where(pgm.p_x2_given_z2.T > 0,
                             np.log(np.maximum(pgm.p_x2_given_z2.T, 1e-300)), -np.inf)
    w1 = p_x1[:, None] * q1
    w2 = p_x2[:, None] * q20
    if np.any(w1[~np.isfinite(log_px1z1)] > 0) or np.any(w2[~np.isfinite(log_px2z2)] > 0):
        raise ZeroSupportError("decoder has zero mass on a reachable (x, z) pair")
    ihat_x1z1 = float((w1 * np.where(w1 > 0, log_px1z1, 0.0)).sum() - _xlogx(p_x1).sum())
    ihat_x2z2 = float((w2 * np.where(w2 > 0, log_px2z2, 0.0)).sum() - _xlogx(p_x2).sum())

    # posterior gap over (z1, path)
    # p(z1, path | x1, x2) proportional to p(z1) p(x1|z1) p(path|z1) p(x2|z0)
    gap = 0.0
    joint_zp = np.einsum("a,ai,pa,pj->aipj", pgm.p_z1, pgm.p_x1_given_z1,
                         p_path, pgm.p_x2_given_z2[z0])       # (z1, x1, P, x2)
    for x1 in range(nx1):
        for x2 in range(nx2):
            w = p_x1x2[x1, x2]
            if w <= 0:
                continue
            post = joint_zp[:, x1, :, x2] / w                 # (z1, P)
            q_joint = q1[x1][:, None] * q_path_x2[x2][None, :]
            gap += w * _plogpq(q_joint, post).sum()
    gap = float(gap)

    # clean-latent mutual information I(Z1^0; Z2^0) under the model
    p_z20_given_z1 = np.zeros((nz1, pgm.p_z2T.shape[0]))
    np.add.at(p_z20_given_z1.T, z0, p_path)
    p_z1z20 = pgm.p_z1[:, None] * p_z20_given_z1
    i_z10z20 = _mutual_information(p_z1z20)

    identity_residual = i_x1x2 - (ihat_x1z1 + ihat_x2z2 - l_path - r1 + gap)
    return CdjTerms(
        l_path=l_path, l_path_split=float(l_path_split), l_den=float(l_den),
        l0=l0, r1=r1, r2t=r2t, c2=c2, gap=gap, i_x1x2=i_x1x2,
        ihat_x1z1=ihat_x1z1, ihat_x2z2=ihat_x2z2, i_z10z20=i_z10z20,
        path_residual=float(l_path - l_path_split),
        decomp_residual=float(l_path - (c2 + r2t + l_den)),
        identity_residual=float(identity_residual),
    )


@dataclass(frozen=True)
class CdjBoundWitness:
    lhs: float   # -L_den
    rhs: float   # I(Z1^0;Z2^0) - Ihat1 - Ihat2 + R1 + R2T - G + C2
    holds: bool
    slack: float


def check_cdj_ib_bound(pgm: CdjPgm, tol: float = 1e-12) -> CdjBoundWitness:
    t = enumerate_cdj_terms(pgm)
    lhs = -t.l_den
    rhs = t.i_z10z20 - t.ihat_x1z1 - t.ihat_x2z2 + t.r1 + t.r2t - t.gap + t.c2
    return CdjBoundWitness(lhs=lhs, rhs=rhs, holds=bool(rhs - lhs >= -tol),
                           slack=float(rhs - lhs))


def check_cdj_dpi(pgm: CdjPgm, tol: float = 1e-12) -> DpiWitness:
    """I(X1;X2) <= I(Z1^0;Z2^0) after marginalizing the diffusion chain."""
    t = enumerate_cdj_terms(pgm)
    slack = t.i_z10z20 - t.i_x1x2
    return DpiWitness(i_x1x2=t.i_x1x2, i_z1z2=t.i_z10z20,
                      holds=bool(slack >= -tol), slack=float(slack))


# ---------------------------------------------------------------------------
# verification campaigns (the CLI's verify-ib subcommand drives these)


@dataclass
class CampaignReport:
    model: str
    trials: int
    failures: int
    worst_identity_residual: float
    worst_path_residual: float
    worst_decomp_residual: float
    worst_dpi_slack: float
    worst_bound_slack: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def run_jepa_campaign(trials: int, rng: np.random.Generator, alphabet_max: int = 4,
                      tol: float = 1e-10) -> CampaignReport:
    worst_res, worst_dpi = 0.0, np.inf
    failures = 0
    for _ in range(trials):
        sizes = rng.integers(2, alphabet_max + 1, size=4)
        pgm = random_jepa_pgm(rng, *sizes)
        terms = enumerate_jepa_terms(pgm)
        dpi = check_dpi_bound(pgm)
        worst_res = max(worst_res, abs(terms.identity_residual))
        worst_dpi = min(worst_dpi, dpi.slack)
        if abs(terms.identity_residual) > tol or not dpi.holds:
            failures += 1
    return CampaignReport(model="jepa", trials=trials, failures=failures,
                          worst_identity_residual=worst_res,
                          worst_path_residual=0.0, worst_decomp_residual=0.0,
                          worst_dpi_slack=float(worst_dpi), worst_bound_slack=np.inf)


def run_cdj_campaign(trials: int, rng: np.random.Generator, alphabet_max: int = 3,
                     chain_max: int = 3, tol: float = 1e-10) -> CampaignReport:
    worst_id, worst_path, worst_decomp = 0.0, 0.0, 0.0
    worst_dpi, worst_bound = np.inf, np.inf
    failures = 0
    for _ in range(trials):
        sizes = rng.integers(2, alphabet_max + 1, size=4)
        t_len = int(rng.integers(1, chain_max + 1))
        pgm = random_cdj_pgm(rng, *sizes, chain_len=t_len)
        terms = enumerate_cdj_terms(pgm)
        bound = check_cdj_ib_bound(pgm)
        dpi = check_cdj_dpi(pgm)
        worst_id = max(worst_id, abs(terms.identity_residual))
        worst_path = max(worst_path, abs(terms.path_residual))
        worst_decomp = max(worst_decomp, abs(terms.decomp_residual))
        worst_dpi = min(worst_dpi, dpi.slack)
        worst_bound = min(worst_bound, bound.slack)
        if (abs(terms.identity_residual) > tol or abs(terms.path_residual) > tol
                or abs(terms.decomp_residual) > tol or not bound.holds or not dpi.holds):
            failures += 1
    return CampaignReport(model="cdj", trials=trials, failures=failures,
                          worst_identity_residual=worst_id,
                          worst_path_residual=worst_path,
                          worst_decomp_residual=worst_decomp,
                          worst_dpi_slack=float(worst_dpi),
                          worst_bound_slack=float(worst_bound))
