"""Stacked least-squares channel estimation and its error anatomy.

For the periods in use, the per-period code matrices (with symbol signs
absorbed) are stacked into one tall real matrix S of shape (N*B, K*L); the
estimate solves the normal equations R a = y with R = S^T S and y = S^T r.
Feeding decision feedback instead of true symbols gives the matrix S_hat;
the estimation error then splits exactly as

    a - a_hat = -R_hat^{-1} S_hat^T (dS a) - R_hat^{-1} S_hat^T n,

a feedback-induced part plus a noise-induced part (dS = S - S_hat).  For
long blocks and small feedback error rates, R_hat^{-1} is close to I/M,
which gives the cheaper approximate decomposition used by the closed-form
covariance expressions.

`empirical_estimation_stats` measures these parts by Monte Carlo.  All
statistics are conditional on the channel/code realization (only symbols,
feedback errors and noise are random), so the sampler fixes (gains, codes)
per outer realization and averages the per-realization statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .config import SystemConfig, derive_stream
from .exceptions import ParameterError, RankError
from .solvers import SolveResult, solve_normal_equations
from . import system_model as sm


@dataclass
class StackedMatrix:
    """Stacked real code matrix (N*B, K*L) plus provenance."""

    matrix: np.ndarray
    blocks: np.ndarray            # symbol periods that were stacked
    source: str                   # "truth" | "feedback" | "training"

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)


def build_stacked_matrix(codes: sm.SpreadingEnsemble,
                         symbols: np.ndarray,
                         blocks=None,
                         source: str = "truth") -> StackedMatrix:
    """Stack per-period code matrices with symbol signs applied.

    ``symbols`` is the (K, M) array of +-1 values actually believed by the
    estimator: true symbols, decision feedback, or a mix.  Column ``i`` of
    the result belongs to user ``i // L``, path ``i % L``; with all M
    periods stacked every column has norm sqrt(M).
    """
    m, k, l, n = codes.codes.shape
    symbols = np.asarray(symbols)
    if symbols.shape != (k, m):
        raise ParameterError(f"symbols shape {symbols.shape}, expected {(k, m)}")
    if blocks is None:
        blocks = np.arange(m)
    else:
        blocks = np.asarray(blocks, dtype=int)
        if blocks.size == 0:
            raise ParameterError("block subset must be nonempty")
    signed = codes.codes[blocks] * symbols.T[blocks, :, None, None]
    mat = signed.reshape(len(blocks), k * l, n).transpose(0, 2, 1)
    return StackedMatrix(matrix=np.ascontiguousarray(mat.reshape(len(blocks) * n, k * l)),
                         blocks=blocks, source=source)


def stack_received(received: sm.ReceivedFrame, blocks=None) -> np.ndarray:
    """Received chips of the selected periods as one long complex vector."""
    if blocks is None:
        return received.chips.reshape(-1)
    return received.chips[np.asarray(blocks, dtype=int)].reshape(-1)


@dataclass
class ChannelEstimate:
    """Least-squares gain estimate with its normal-equations ingredients."""

    gains_flat: np.ndarray        # (K*L,) complex
    gram: np.ndarray              # R = S^T S, real (K*L, K*L)
    projection: np.ndarray        # y = S^T r, complex (K*L,)
    solver_used: str
    residual: float               # ||S^T (r - S a_hat)|| / ||y||
    solve_info: SolveResult | None = None

    def gains_matrix(self, n_paths: int) -> np.ndarray:
        return self.gains_flat.reshape(-1, n_paths)


def ml_estimate(stacked: StackedMatrix,
                received_vec: np.ndarray,
                method: str = "direct",
                tol: float = 1e-10,
                max_iter: int = 1000) -> ChannelEstimate:
    """Least-squares channel estimate from a stacked matrix and received vector."""
    s = stacked.matrix
    if received_vec.shape[0] != s.shape[0]:
        raise ParameterError(
            f"received vector length {received_vec.shape[0]} != stacked rows {s.shape[0]}")
    if s.shape[0] < s.shape[1]:
        raise RankError(
            f"underdetermined system: {s.shape[0]} equations for {s.shape[1]} unknowns")
    gram = s.T @ s
    proj = s.T @ received_vec
    result = solve_normal_equations(gram, proj, method=method, tol=tol, max_iter=max_iter)
    a_hat = result.solution
    resid = np.linalg.norm(s.T @ (received_vec - s @ a_hat))
    resid /= max(np.linalg.norm(proj), np.finfo(float).tiny)
    return ChannelEstimate(gains_flat=a_hat, gram=gram, projection=proj,
                           solver_used=method, residual=float(resid),
                           solve_info=result)


@dataclass
class ErrorDecomposition:
    """Split of a - a_hat into feedback- and noise-induced parts."""

    total: np.ndarray
    feedback_part: np.ndarray
    noise_part: np.ndarray
    mode: str                     # "exact" | "approx_im"


def decompose_error(gains_flat: np.ndarray,
                    stacked_truth: StackedMatrix,
                    stacked_feedback: StackedMatrix,
                    noise_vec: np.ndarray,
                    mode: str = "exact") -> ErrorDecomposition:
    """Simulation-side split of the estimation error.

    ``exact`` applies the feedback Gram inverse; ``approx_im`` replaces it
    with I/M, which is the regime in which the closed-form covariances hold.
    In exact mode the parts sum to a - a_hat identically.
    """
    if mode not in ("exact", "approx_im"):
        raise ParameterError(f"unknown decomposition mode {mode!r}")
    s_hat = stacked_feedback.matrix
    delta_chips = (stacked_truth.matrix - s_hat) @ gains_flat
    proj_fb = s_hat.T @ delta_chips
    proj_noise = s_hat.T @ noise_vec
    if mode == "exact":
        gram_hat = s_hat.T @ s_hat
        sol = solve_normal_equations(gram_hat, np.column_stack([proj_fb, proj_noise]))
        fb = -sol.solution[:, 0]
        nz = -sol.solution[:, 1]
    else:
        m = stacked_feedback.n_blocks
        fb = -proj_fb / m
        nz = -proj_noise / m
    return ErrorDecomposition(total=fb + nz, feedback_part=fb, noise_part=nz, mode=mode)


def leave_one_out_estimates(codes: sm.SpreadingEnsemble,
                            symbols: np.ndarray,
                            received: sm.ReceivedFrame,
                            method: str = "direct") -> np.ndarray:
    """Per-period estimates, each excluding that period's own observation.

    Row ``t`` is the estimate a detector at period ``t`` must use under the
    no-information-reuse rule: feeding the all-periods estimate into the
    cancellation of period ``t`` correlates the estimation error with that
    period's feedback error and visibly shrinks the residuals below what
    the independence-based expressions describe.
    """
    m = codes.codes.shape[0]
    out = np.empty((m, codes.codes.shape[1] * codes.codes.shape[2]), dtype=complex)
    all_blocks = np.arange(m)
    for t in range(m):
        blocks = np.delete(all_blocks, t)
        stacked = build_stacked_matrix(codes, symbols, blocks=blocks)
        out[t] = ml_estimate(stacked, stack_received(received, blocks),
                             method=method).gains_flat
    return out


def leave_one_out_estimates_fast(stacked: StackedMatrix,
                                 chips: np.ndarray) -> np.ndarray:
    """All M leave-one-out estimates from one factorization.

    Downdates the all-periods normal equations by each period's rows via
    the matrix inversion lemma; identical (to rounding) to refitting with
    the period removed, but one Cholesky factorization serves all periods.
    ``chips`` is the (M, N) received array matching the stacked matrix.
    """
    m, n = chips.shape
    s = stacked.matrix
    if s.shape[0] != m * n:
        raise ParameterError("stacked matrix does not cover all periods")
    gram = s.T @ s
    try:
        factor = sla.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise RankError(f"Gram matrix is not positive definite: {exc}") from exc
    proj_all = s.T @ chips.reshape(-1)
    base = sla.cho_solve(factor, proj_all, check_finite=False)
    w_all = sla.cho_solve(factor, s.T, check_finite=False)   # (KL, M*N)
    eye = np.eye(n)
    out = np.empty((m, s.shape[1]), dtype=complex)
    for t in range(m):
        rows = s[t * n:(t + 1) * n]                       # period-t block
        w = w_all[:, t * n:(t + 1) * n]
        z = base - w @ chips[t]
        correction = np.linalg.solve(eye - rows @ w, rows @ z)
        out[t] = z + w @ correction
    return out


def debias_with_truth(estimate: np.ndarray, gains_flat: np.ndarray,
                      error_rate: float) -> np.ndarray:
    """Remove the feedback-induced bias using the true gains.

    The estimate is low by a factor tied to the feedback error rate; adding
    ``2*Pe*a`` back requires knowing ``a`` itself, which is why no receiver
    can apply this correction.  Kept for truth-assisted experiments only.
    """
    return estimate + 2.0 * error_rate * gains_flat


@dataclass
class EstimationStats:
    """Monte Carlo statistics of the estimation-error decomposition.

    Variances are (1/KL) * trace of the per-realization sample covariances
    (bias removed), averaged over realizations.  ``sigma_f``/``sigma_n`` and
    ``gains_flat`` belong to the first realization so entrywise comparisons
    against the covariance formulas see a single fixed channel.
    """

    mean_bias_ratio: complex      # avg over components of E{da_f,i} / a_i
    delta_f: float
    delta_n: float
    delta_a: float
    sigma_f: np.ndarray
    sigma_n: np.ndarray
    gains_flat: np.ndarray
    cross_norm: float             # normalized |cross-cov(da_f, da_n)| trace
    realizations: int
    trials_per_realization: int

    @property
    def trial_count(self) -> int:
        return self.realizations * self.trials_per_realization


def _complex_cov(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and sample covariance E{(x-mu)(x-mu)^H} of row samples."""
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered.conj() / (samples.shape[0] - 1)
    return mean, cov


def empirical_estimation_stats(config: SystemConfig,
                               error_rate: float,
                               trials: int,
                               mode: str = "exact",
                               realizations: int = 10,
                               experiment_id: str = "estimation-stats") -> EstimationStats:
    """Measure bias and covariance of the two error parts by Monte Carlo.

    ``trials`` is the total number of frames; they are spread over
    ``realizations`` fixed (channel, codes) draws.  Needs at least two
    frames per realization for the sample covariances.
    """
    if trials < 2 * realizations:
        raise ParameterError("need at least two trials per realization")
    inner = trials // realizations
    kl = config.n_gains

    bias_ratios = []
    d_f = []
    d_n = []
    d_a = []
    cross = []
    sigma_f0 = sigma_n0 = gains0 = None

    for r in range(realizations):
        rng_r = derive_stream(config.seed, f"{experiment_id}/realization", r)
        channel = sm.generate_channel(config, rng_r)
        codes = sm.generate_codes(config, rng_r)
        a = channel.vector

        fb_parts = np.empty((inner, kl), dtype=complex)
        nz_parts = np.empty((inner, kl), dtype=complex)
        for j in range(inner):
            rng = derive_stream(config.seed, f"{experiment_id}/trial/{r}", j)
            symbols = sm.generate_symbols(config, rng)
            feedback = sm.corrupt_feedback(symbols, error_rate, rng)
            received = sm.synthesize_received(channel, codes, symbols, config, rng)
            s_true = build_stacked_matrix(codes, symbols.symbols)
            s_fb = build_stacked_matrix(codes, feedback.decisions, source="feedback")
            dec = decompose_error(a, s_true, s_fb, received.noise.reshape(-1), mode=mode)
            fb_parts[j] = dec.feedback_part
            nz_parts[j] = dec.noise_part

        mean_f, cov_f = _complex_cov(fb_parts)
        mean_n, cov_n = _complex_cov(nz_parts)
        centered_f = fb_parts - mean_f
        centered_n = nz_parts - mean_n
        cov_fn = centered_f.T @ centered_n.conj() / (inner - 1)

        bias_ratios.append(np.mean(mean_f / a))
        tf = cov_f.trace().real / kl
        tn = cov_n.trace().real / kl
        d_f.append(tf)
        d_n.append(tn)
        total = fb_parts + nz_parts
        _, cov_a = _complex_cov(total)
        d_a.append(cov_a.trace().real / kl)
        cross.append(abs(cov_fn.trace().real / kl) / max(np.sqrt(tf * tn), 1e-300))
        if r == 0:
            sigma_f0, sigma_n0, gains0 = cov_f, cov_n, a.copy()

    return EstimationStats(
        mean_bias_ratio=complex(np.mean(bias_ratios)),
        delta_f=float(np.mean(d_f)),
        delta_n=float(np.mean(d_n)),
        delta_a=float(np.mean(d_a)),
        sigma_f=sigma_f0,
        sigma_n=sigma_n0,
        gains_flat=gains0,
        cross_norm=float(np.mean(cross)),
        realizations=realizations,
        trials_per_realization=inner,
    )
