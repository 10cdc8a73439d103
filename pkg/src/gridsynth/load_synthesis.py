"""Gaussian load ensembles in Fourier space and their disaggregation onto buses.

A country's historical annual load curves are transformed with the real FFT.
The per-bin sample mean and the (sparsified) Hermitian covariance of those
spectra define a Gaussian ensemble; new curves are drawn by perturbing the mean
spectrum with correlated complex noise and transforming back.

The covariance is stored block by block in factored form (``sigma = L L^H``
per connected block of its sparsity pattern). With a handful of years each
block has low rank, so the factors are small even when a block is wide.

Transform convention (``numpy.fft.rfft``): ``n_steps // 2 + 1`` bins. The DC
bin and, for even lengths, the Nyquist bin are real; they are never coupled to
the complex bins. Complex bins are driven by circular noise whose real and
imaginary parts each have variance 1/2.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

from . import rng as rng_mod
from .errors import InputError
from .grid_model import Network
from .tables import Table

logger = logging.getLogger(__name__)

DEFAULT_RHO = 0.8
DEFAULT_SPARSIFY = 1e-3
DIAGONAL_LOADING = 1e-10
REALNESS_TOL = 1e-9
FACTOR_TOL = 1e-8
EIG_FLOOR = 1e-12  # relative; eigenvalues below are treated as zero


class DegenerateEnsemble(InputError):
    pass


@dataclass(frozen=True)
class CovStats:
    var_mu: float
    var_sigma: float

    @property
    def implied_correlation(self) -> float:
        total = self.var_mu + self.var_sigma
        return self.var_mu / total if total > 0 else float("nan")


class IndefiniteCovariance(InputError):
    pass


@dataclass(frozen=True)
class BlockCovariance:
    """Hermitian PSD matrix, block diagonal up to a permutation, kept in factored form.

    Isolated bins carry a standard deviation ``diag_sd``; every other block
    ``idx`` satisfies ``sigma[idx][:, idx] == L @ L.conj().T`` with a tall
    ``L`` (block size x block rank). The stacked ``L`` blocks are the sampling
    factor: ``sigma = S S^H`` with ``S`` acting on one noise entry per retained
    rank direction.
    """

    n: int
    diag_idx: np.ndarray  # int
    diag_sd: np.ndarray  # float >= 0
    blocks: tuple[tuple[np.ndarray, np.ndarray], ...] = ()

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.diag_sd)) + sum(l.shape[1] for _, l in self.blocks)

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        d[self.diag_idx] = self.diag_sd**2
        for idx, l in self.blocks:
            d[idx] = np.sum(np.abs(l) ** 2, axis=1)
        return d

    def scaled(self, k: float) -> "BlockCovariance":
        """``k * sigma``."""
        r = np.sqrt(k)
        return BlockCovariance(self.n, self.diag_idx, self.diag_sd * r, tuple((i, l * r) for i, l in self.blocks))

    def to_sparse(self) -> sp.csr_matrix:
        rows, cols, vals = [self.diag_idx], [self.diag_idx], [self.diag_sd.astype(complex) ** 2]
        for idx, l in self.blocks:
            r, c = np.meshgrid(idx, idx, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append((l @ l.conj().T).ravel())
        out = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n, self.n)
        )
        out.eliminate_zeros()
        return out

    def submatrix(self, bins) -> np.ndarray:
        """Dense ``sigma[bins][:, bins]`` without materializing the full matrix."""
        bins = np.asarray(bins, dtype=int)
        pos = {int(b): k for k, b in enumerate(bins)}
        out = np.zeros((len(bins), len(bins)), dtype=complex)
        for i, sd in zip(self.diag_idx, self.diag_sd):
            if int(i) in pos:
                out[pos[int(i)], pos[int(i)]] = sd**2
        for idx, l in self.blocks:
            here = [(pos[int(b)], j) for j, b in enumerate(idx) if int(b) in pos]
            if here:
                k, j = map(np.array, zip(*here))
                out[np.ix_(k, k)] = l[j] @ l[j].conj().T
        return out

    def is_real_block(self, idx: np.ndarray, real_mask: np.ndarray) -> bool:
        return bool(real_mask[idx].all())

    def apply(self, noise_fn, size: int | None, real_mask: np.ndarray) -> np.ndarray:
        """``S @ eta`` for fresh noise; ``noise_fn(shape, real)`` draws unit-variance entries."""
        tail = () if size is None else (size,)
        out = np.zeros((self.n,) + tail, dtype=complex)
        if len(self.diag_idx):
            real = real_mask[self.diag_idx]
            eta = noise_fn((len(self.diag_idx),) + tail, False)
            if real.any():
                eta[real] = noise_fn((int(real.sum()),) + tail, True)
            sd = self.diag_sd if size is None else self.diag_sd[:, None]
            out[self.diag_idx] = sd * eta
        for idx, l in self.blocks:
            eta = noise_fn((l.shape[1],) + tail, self.is_real_block(idx, real_mask))
            out[idx] = l @ eta
        return out


@dataclass(frozen=True)
class FourierEnsemble:
    region: str
    n_steps: int
    mu: np.ndarray  # complex, n_steps // 2 + 1
    sigma: BlockCovariance
    rho_target: float | None = None
    meta: Mapping[str, float] = field(default_factory=dict)

    @property
    def n_bins(self) -> int:
        return len(self.mu)

    def stats(self) -> CovStats:
        return cov_stats(self)


def _block_factor(block: np.ndarray, clip: bool) -> np.ndarray:
    """Tall ``L`` with ``L L^H`` equal to the PSD part of ``block``.

    Negative eigenvalues are clipped to zero when ``clip`` is set, otherwise
    anything beyond round-off raises :class:`IndefiniteCovariance`.
    """
    if not np.iscomplexobj(block) or not np.any(block.imag):
        block = np.real(block)
    scale = np.abs(block).max() if block.size else 0.0
    if scale == 0:
        return np.zeros((len(block), 0), dtype=block.dtype)
    floor = EIG_FLOOR * scale
    if len(block) <= 64:
        lam, vec = np.linalg.eigh(block)
        lowest = lam[0]
    else:
        # only the positive part is needed; the rest is clipped (or checked)
        lowest = None if clip else la.eigh(block, eigvals_only=True, subset_by_index=(0, 0))[0]
        lam, vec = la.eigh(block, driver="evr", subset_by_value=(floor, np.inf))
    if lowest is not None and not clip and lowest < -FACTOR_TOL * scale:
        raise IndefiniteCovariance(f"covariance block has eigenvalue {lowest:.3g}")
    keep = lam > floor
    return vec[:, keep] * np.sqrt(lam[keep])


def _pattern_blocks(s: sp.csr_matrix) -> list[np.ndarray]:
    pattern = sp.csr_matrix((np.ones(s.nnz), s.indices, s.indptr), shape=s.shape)
    n_comp, labels = connected_components(pattern, directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n_comp + 1))
    return [order[bounds[i] : bounds[i + 1]] for i in range(n_comp)]


def _factor_blocks(s: sp.csr_matrix, clip: bool, max_block: int | None = None, loading: float = 0.0) -> BlockCovariance:
    n = s.shape[0]
    diag = s.diagonal().real
    singles, blocks = [], []
    for idx in _pattern_blocks(s):
        if len(idx) == 1:
            v = diag[idx[0]]
            if v < 0 and not clip:
                raise IndefiniteCovariance(f"negative variance {v:.3g} on bin {idx[0]}")
            singles.append(idx[0])
            continue
        block = s[idx][:, idx].toarray()
        block = 0.5 * (block + block.conj().T)
        if max_block is not None and len(idx) > max_block:
            lam_min = eigsh(sp.csr_matrix(block), k=1, which="SA", return_eigenvectors=False)[0]
            shift = max(-lam_min, loading)
            logger.warning("covariance block of size %d repaired by diagonal loading %.3g", len(idx), shift)
            blocks.append((idx, np.linalg.cholesky(block + shift * np.eye(len(idx)))))
            continue
        l = _block_factor(block, clip)
        if l.shape[1]:
            blocks.append((idx, l))
    singles = np.asarray(singles, dtype=int)
    return BlockCovariance(n, singles, np.sqrt(np.clip(diag[singles], 0.0, None)), tuple(blocks))


def n_bins(n_steps: int) -> int:
    return n_steps // 2 + 1


def real_bins(n_steps: int) -> np.ndarray:
    """Indices of the bins that are real for a real signal (DC, and Nyquist for even length)."""
    return np.array([0, n_steps // 2]) if n_steps % 2 == 0 else np.array([0])


def parseval_weights(n_steps: int) -> np.ndarray:
    """Multiplicity of each rfft bin in the full spectrum."""
    w = np.full(n_bins(n_steps), 2.0)
    w[real_bins(n_steps)] = 1.0
    return w


def _as_matrix(series) -> np.ndarray:
    rows = [getattr(s, "values", s) for s in series]
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2:
        raise InputError("series set must be a sequence of equal-length 1-D series")
    return arr


def time_covariance(series) -> np.ndarray:
    """Covariance of N series between every pair of time steps.

    ``M[t1, t2] = mean_i L_i(t1) L_i(t2) - mean_i L_i(t1) * mean_j L_j(t2)``
    """
    x = _as_matrix(series)
    n = x.shape[0]
    if n < 2:
        raise InputError("time covariance needs at least two series")
    m = x.mean(axis=0)
    return x.T @ x / n - np.outer(m, m)


# ---------------------------------------------------------------------------
# fitting


def _decouple_real_bins(sigma: sp.spmatrix, n_steps: int) -> sp.csr_matrix:
    coo = sp.coo_matrix(sigma)
    is_real = np.zeros(sigma.shape[0], dtype=bool)
    is_real[real_bins(n_steps)] = True
    keep = is_real[coo.row] == is_real[coo.col]
    out = sp.csr_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=sigma.shape, dtype=complex
    )
    # real bins of real signals have real covariance
    on_real = np.repeat(is_real, np.diff(out.indptr))
    out.data[on_real] = out.data[on_real].real
    return out


def _thresholded_covariance(dev: np.ndarray, threshold: float | None, chunk: int = 256) -> sp.csr_matrix:
    """(1/N) dev^T conj(dev) restricted to entries >= threshold * max diag (diagonal always kept)."""
    n, f = dev.shape
    diag = np.sum(np.abs(dev) ** 2, axis=0) / n
    dmax = diag.max() if f else 0.0
    if dmax == 0:
        return sp.csr_matrix((f, f), dtype=complex)
    cut = 0.0 if threshold is None else threshold * dmax
    conj = dev.conj()
    rows, cols, vals = [], [], []
    for start in range(0, f, chunk):
        stop = min(f, start + chunk)
        block = dev[:, start:stop].T @ conj / n
        mask = np.abs(block) >= cut
        mask &= block != 0
        r, c = np.nonzero(mask)
        rows.append(r + start)
        cols.append(c)
        vals.append(block[r, c])
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    # diagonal is never dropped and is real
    on_diag = rows == cols
    vals[on_diag] = vals[on_diag].real
    return sp.csr_matrix((vals, (rows, cols)), shape=(f, f), dtype=complex)


def fit_ensemble(
    series,
    region: str = "",
    threshold: float | None = DEFAULT_SPARSIFY,
) -> FourierEnsemble:
    """Fit mean spectrum and spectral covariance from annual series (one per year).

    The covariance uses the ``1/N`` normalization. With ``threshold=None`` the
    exact sample covariance is kept; it has rank below the number of years and
    is stored directly as its factor. Otherwise small off-diagonal entries are
    dropped and the result repaired, see :func:`sparsify_covariance`.
    """
    x = _as_matrix(series)
    n_years = x.shape[0]
    if n_years < 2:
        raise InputError(f"{region}: need at least two years to fit an ensemble, got {n_years}")
    n_steps = x.shape[1]
    spectra = np.fft.rfft(x, axis=1)
    # shifted mean: exact when all years coincide
    mu = spectra[0] + (spectra - spectra[0]).mean(axis=0)
    rb = real_bins(n_steps)
    mu[rb] = mu[rb].real
    dev = spectra - mu
    if threshold is None:
        cplx = np.setdiff1d(np.arange(n_bins(n_steps)), rb)
        blocks = (
            (rb, dev[:, rb].real.T / np.sqrt(n_years)),
            (cplx, dev[:, cplx].T / np.sqrt(n_years)),
        )
        sigma = BlockCovariance(n_bins(n_steps), np.zeros(0, dtype=int), np.zeros(0), blocks)
    else:
        raw = _decouple_real_bins(_thresholded_covariance(dev, threshold), n_steps)
        sigma = sparsify_covariance(raw, threshold)
    return FourierEnsemble(region, n_steps, mu, sigma, meta={"n_years": float(n_years)})


def sparsify_covariance(sigma, threshold: float = DEFAULT_SPARSIFY, max_block: int = 6000) -> BlockCovariance:
    """Zero small off-diagonal entries, then restore positive semidefiniteness.

    Entries with ``|sigma_ij| < threshold * max(diag)`` (i != j) are removed.
    Each connected block of the remaining sparsity pattern is projected onto
    the PSD cone by clipping negative eigenvalues. Blocks larger than
    ``max_block`` fall back to a diagonal shift of at least
    ``1e-10 * max(diag)``.
    """
    s = sp.csr_matrix(sigma, dtype=complex)
    n = s.shape[0]
    if n == 0:
        return BlockCovariance(0, np.zeros(0, dtype=int), np.zeros(0))
    diag = s.diagonal().real
    dmax = max(diag.max(), 0.0)
    coo = s.tocoo()
    keep = (coo.row == coo.col) | (np.abs(coo.data) >= threshold * dmax)
    keep &= coo.data != 0
    s = sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=s.shape)
    return _factor_blocks(s, clip=True, max_block=max_block, loading=DIAGONAL_LOADING * dmax)


def factorize(sigma) -> BlockCovariance:
    """Factor a sparse Hermitian PSD matrix block by block (``S S^H == sigma``).

    Raises :class:`IndefiniteCovariance` when a block has an eigenvalue below
    round-off, which means the matrix was not repaired first.
    """
    if isinstance(sigma, BlockCovariance):
        return sigma
    s = sp.csr_matrix(sigma, dtype=complex)
    s.eliminate_zeros()
    return _factor_blocks(s, clip=False)


def cov_stats(ens: FourierEnsemble) -> CovStats:
    """Time-domain variance of the mean curve and mean variance of the fluctuations.

    ``var_sigma = (1/T) sum_t sigma_tt - (1/T^2) sum_tt' sigma_tt'`` is evaluated
    through Parseval: it equals ``(1/T^2) sum_{k>0} w_k sigma_kk`` with ``w_k``
    the bin multiplicity, so only the diagonal of the spectral covariance enters.
    """
    t = ens.n_steps
    mu_t = np.fft.irfft(ens.mu, n=t)
    var_mu = float(np.mean(mu_t**2) - np.mean(mu_t) ** 2)
    w = parseval_weights(t)
    d = ens.sigma.diagonal()
    var_sigma = float(np.sum(w[1:] * d[1:]) / t**2)
    return CovStats(max(var_mu, 0.0), max(var_sigma, 0.0))


def tune_correlation(ens: FourierEnsemble, rho_target: float = DEFAULT_RHO) -> FourierEnsemble:
    """Rescale the covariance so that ``var_mu / (var_mu + var_sigma) == rho_target``."""
    if not 0.0 < rho_target < 1.0:
        raise ValueError(f"rho_target must lie in (0, 1), got {rho_target}")
    stats = cov_stats(ens)
    if not stats.var_mu > 0:
        raise DegenerateEnsemble(f"{ens.region}: mean curve is constant, correlation cannot be tuned")
    if stats.var_sigma == 0:
        logger.warning("%s: ensemble has zero variance, covariance left unscaled", ens.region)
        return replace(ens, rho_target=rho_target, meta={**ens.meta, "sigma_scale": 1.0, "degenerate": 1.0})
    k = stats.var_mu * (1.0 - rho_target) / (rho_target * stats.var_sigma)
    return replace(
        ens,
        sigma=ens.sigma.scaled(k),
        rho_target=rho_target,
        meta={**ens.meta, "sigma_scale": float(k)},
    )


# ---------------------------------------------------------------------------
# sampling


def _noise_fn(rng: np.random.Generator):
    def draw(shape, real: bool) -> np.ndarray:
        if real:
            return rng.standard_normal(shape).astype(complex)
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)

    return draw


def to_time_domain(spectrum: np.ndarray, n_steps: int) -> np.ndarray:
    """Inverse real FFT along axis 0, refusing spectra whose real bins carry an imaginary part."""
    x = np.fft.irfft(spectrum, n=n_steps, axis=0)
    residue = np.sqrt(np.sum(np.abs(spectrum[real_bins(n_steps)].imag) ** 2, axis=0) / n_steps)
    norm = np.sqrt(np.sum(x**2, axis=0))
    if np.any(residue > REALNESS_TOL * np.maximum(norm, 1e-300)):
        raise InputError("sampled spectrum is not Hermitian; inverse transform is not real")
    return x


def sample_spectra(ens: FourierEnsemble, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """``mu + S eta``: real noise on blocks of real bins, circular complex noise elsewhere."""
    real_mask = np.zeros(ens.n_bins, dtype=bool)
    real_mask[real_bins(ens.n_steps)] = True
    mu = ens.mu if size is None else ens.mu[:, None]
    return mu + ens.sigma.apply(_noise_fn(rng), size, real_mask)


def sample_series(ens: FourierEnsemble, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw one series (shape ``(n_steps,)``) or ``size`` series (shape ``(size, n_steps)``)."""
    x = to_time_domain(sample_spectra(ens, rng, size), ens.n_steps)
    return x if size is None else x.T


def pearson(a, b) -> float:
    a = np.asarray(getattr(a, "values", a), dtype=float)
    b = np.asarray(getattr(b, "values", b), dtype=float)
    if a.shape != b.shape:
        raise ValueError("series must have equal length")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(da @ da), np.sqrt(db @ db)
    if na == 0 or nb == 0:
        raise ValueError("Pearson correlation undefined for a zero-variance series")
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def pairwise_pearson(x: np.ndarray) -> np.ndarray:
    """Correlation coefficients of all distinct pairs of rows of ``x``."""
    c = np.corrcoef(x)
    iu = np.triu_indices(c.shape[0], k=1)
    return c[iu]


# ---------------------------------------------------------------------------
# disaggregation


def prepare_ensemble(
    series,
    region: str,
    rho_target: float = DEFAULT_RHO,
    threshold: float = DEFAULT_SPARSIFY,
) -> FourierEnsemble:
    """Fit, sparsify and tune in one go."""
    ens = fit_ensemble(series, region, threshold)
    try:
        return tune_correlation(ens, rho_target)
    except DegenerateEnsemble:
        logger.warning("%s: flat mean curve, correlation not tuned", region)
        return ens


def disaggregate(
    ensembles: Mapping[str, FourierEnsemble],
    net: Network,
    country_totals: Mapping[str, float],
    seed: int,
    key: Sequence = (),
    floor_zero: bool = False,
) -> Table:
    """Give every load bus its own draw from its country ensemble.

    Bus ``b`` of country ``c`` receives ``lam_c * w_b * s_b(t)`` where ``s_b`` is
    an independent draw keyed by ``(seed, c, b, *key)`` and ``lam_c`` makes the
    annual mean of the country total equal ``country_totals[c]``.
    """
    load_buses = net.load_buses
    n_steps = None
    draws: dict[str, np.ndarray] = {}
    by_country: dict[str, list] = {}
    for b in load_buses:
        if b.load_weight == 0:
            continue
        if b.country is None:
            raise InputError(f"load bus {b.id!r} has no country")
        ens = ensembles.get(b.country)
        if ens is None:
            raise InputError(f"country {b.country!r} has weighted buses but no ensemble")
        if n_steps is None:
            n_steps = ens.n_steps
        elif ens.n_steps != n_steps:
            raise InputError("ensembles have different lengths")
        s = sample_series(ens, rng_mod.stream(seed, "load", b.country, b.id, *key))
        if floor_zero:
            s = np.maximum(s, 0.0)
        draws[b.id] = s
        by_country.setdefault(b.country, []).append(b)
    if n_steps is None:
        raise InputError("no weighted load buses")

    scale: dict[str, float] = {}
    for c, buses in by_country.items():
        if c not in country_totals:
            raise InputError(f"no target total for country {c!r}")
        raw_total = sum(b.load_weight * draws[b.id] for b in buses)
        mean = float(np.mean(raw_total))
        if not mean > 0:
            raise InputError(f"{c}: sampled national load has non-positive mean")
        scale[c] = country_totals[c] / mean

    values = np.zeros((n_steps, len(load_buses)))
    for j, b in enumerate(load_buses):
        if b.id in draws:
            values[:, j] = scale[b.country] * b.load_weight * draws[b.id]
    return Table(tuple(b.id for b in load_buses), values)


# ---------------------------------------------------------------------------
# persistence


def _cplx(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "re": a.real.ravel().tolist(), "im": np.imag(a).ravel().tolist()}


def _from_cplx(d) -> np.ndarray:
    a = np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)
    return a.reshape(d["shape"])


def ensemble_to_json(ens: FourierEnsemble) -> str:
    cov = ens.sigma
    doc = {
        "region": ens.region,
        "n_steps": ens.n_steps,
        "rho_target": ens.rho_target,
        "meta": dict(ens.meta),
        "mu": _cplx(ens.mu),
        "sigma": {
            "diag_idx": cov.diag_idx.tolist(),
            "diag_sd": cov.diag_sd.tolist(),
            "blocks": [{"idx": idx.tolist(), "factor": _cplx(l)} for idx, l in cov.blocks],
        },
    }
    return json.dumps(doc)


def ensemble_from_json(text: str) -> FourierEnsemble:
    try:
        d = json.loads(text)
        n_steps = int(d["n_steps"])
        sig = d["sigma"]
        blocks = []
        for b in sig["blocks"]:
            l = _from_cplx(b["factor"])
            if not np.any(l.imag):
                l = l.real
            blocks.append((np.asarray(b["idx"], dtype=int), l))
        cov = BlockCovariance(
            n_bins(n_steps),
            np.asarray(sig["diag_idx"], dtype=int),
            np.asarray(sig["diag_sd"], dtype=float),
            tuple(blocks),
        )
        return FourierEnsemble(
            region=d["region"],
            n_steps=n_steps,
            mu=_from_cplx(d["mu"]),
            sigma=cov,
            rho_target=d.get("rho_target"),
            meta=d.get("meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed ensemble file: {exc}") from exc
