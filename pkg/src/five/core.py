"""Single-source blind extraction by iterative whitened max-SINR beamforming.

The input spectrogram is whitened once so the per-bin sample covariance is
the identity. Each iteration then reweights the covariance with a strictly
decreasing function of the current per-frame source magnitude, takes the
smallest eigenpair per bin, and uses the normalized eigenvector as the new
demixing filter. This is a majorization-minimization scheme: the monitored
negative log-likelihood never increases, and fixed points solve a quadratic
stationarity system exactly (see head_residual). The scale ambiguity is
resolved at the end by least-squares projection onto a reference channel.
"""

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .stft import SpectralTensor, analyze, synthesize

__all__ = [
    "ContrastModel",
    "FiveConfig",
    "DemixingState",
    "IterationRecord",
    "ExtractionReport",
    "DegenerateCovarianceError",
    "RankDeficientCovarianceError",
    "prewhiten",
    "weighted_covariance",
    "update_activity",
    "five_iteration",
    "evaluate_nll",
    "head_residual",
    "head_solutions",
    "project_back",
    "apply_demixing",
    "extract_spectral",
    "extract",
]

DEFAULT_REGULARIZATION = 1e-10
DEFAULT_ACTIVITY_FLOOR = 1e-12


class RankDeficientCovarianceError(ValueError):
    """Per-bin input covariance stayed non-positive-definite after loading."""


class DegenerateCovarianceError(RuntimeError):
    """Weighted covariance collapsed (smallest eigenvalue at the noise floor)."""


@dataclass(frozen=True)
class ContrastModel:
    """Source-model pair: gain G(r) and the induced frame weight phi(r) = G'(r)/(2r).

    kind "laplace" is the time-invariant Laplace model, G(r) = r and
    phi(r) = 1/(2r); kind "gauss" is the time-varying Gaussian model,
    G(r) = 2 F log r and phi(r) = F / r^2, which needs the bin count F.
    Both weights are strictly decreasing on r > 0.
    """

    kind: str
    num_bins: int | None = None

    def __post_init__(self):
        if self.kind not in ("laplace", "gauss"):
            raise ValueError(f"unknown contrast kind {self.kind!r}")
        if self.kind == "gauss" and (self.num_bins is None or self.num_bins < 1):
            raise ValueError("gauss contrast requires num_bins >= 1")

    def weight(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "laplace":
            return 0.5 / r
        return self.num_bins / (r * r)

    def gain(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "laplace":
            return r.copy()
        return 2.0 * self.num_bins * np.log(r)


@dataclass(frozen=True)
class FiveConfig:
    contrast: ContrastModel
    max_iterations: int = 3
    regularization: float = DEFAULT_REGULARIZATION
    activity_floor: float = DEFAULT_ACTIVITY_FLOOR
    nll_monitoring: bool = True
    ref_channel: int = 0
    early_stop_tol: float | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")
        if self.activity_floor <= 0:
            raise ValueError("activity_floor must be > 0")
        if self.ref_channel < 0:
            raise ValueError("ref_channel must be >= 0")


@dataclass
class DemixingState:
    """Per-frequency extraction state in whitened coordinates.

    whiteners holds the per-bin upper-triangular whitening factors Q, w the
    demixing vectors, activity the per-frame source magnitude of the current
    estimate. basis is the orthonormal complement of w from the
    eigendecomposition that produced it (None before the first update); it
    is the background demixing block used by the likelihood monitor.
    """

    whiteners: np.ndarray  # (F, M, M)
    w: np.ndarray  # (F, M)
    activity: np.ndarray  # (N,)
    basis: np.ndarray | None = None  # (F, M, M-1)
    iteration: int = 0


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    nll: float | None
    head_residual: float | None
    wall_time_ms: float


@dataclass
class ExtractionReport:
    """Per-iteration diagnostics of one extraction run."""

    records: list[IterationRecord] = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False

    @property
    def nll_values(self):
        return [r.nll for r in self.records if r.nll is not None]

    def to_csv(self, destination, header=None):
        """Write one row per iteration; header, if given, is echoed as comments."""
        if isinstance(destination, (str, bytes)) or hasattr(destination, "__fspath__"):
            with open(destination, "w", newline="") as fh:
                self.to_csv(fh, header=header)
            return
        if header:
            for key in sorted(header):
                destination.write(f"# {key}={header[key]}\n")
        writer = csv.writer(destination)
        writer.writerow(["iteration", "nll", "head_residual", "wall_time_ms"])
        for rec in self.records:
            writer.writerow(
                [
                    rec.iteration,
                    "" if rec.nll is None else repr(rec.nll),
                    "" if rec.head_residual is None else repr(rec.head_residual),
                    f"{rec.wall_time_ms:.3f}",
                ]
            )

    def to_csv_string(self, header=None):
        buf = io.StringIO()
        self.to_csv(buf, header=header)
        return buf.getvalue()


def _data_of(spec):
    return spec.data if isinstance(spec, SpectralTensor) else np.asarray(spec)


def _covariance_stack(data, weights=None):
    # (1/N) sum_n weight_n x_fn x_fn^H per bin, hermitized against rounding
    n = data.shape[1]
    lhs = data if weights is None else data * weights[:, None]
    cov = np.swapaxes(lhs, 1, 2) @ np.conj(data) / n
    return 0.5 * (cov + np.conj(np.swapaxes(cov, 1, 2)))


def prewhiten(spec, regularization=DEFAULT_REGULARIZATION):
    """Whiten the spectrogram so every bin has identity sample covariance.

    Factors the per-bin sample covariance as Q^H Q and applies Q^{-H} to the
    data. If the factorization fails, the covariance is diagonally loaded
    once with regularization * trace/M before giving up.

    Returns the whitened tensor and the stack of upper-triangular factors Q.
    """
    data = _data_of(spec)
    n_bins, n_frames, n_chan = data.shape
    if n_frames < n_chan:
        raise ValueError(
            f"need at least as many frames as channels for a full-rank "
            f"covariance ({n_frames} frames, {n_chan} channels)"
        )
    cov = _covariance_stack(data)
    try:
        whiteners = linalg.cholesky(cov)
    except linalg.NotPositiveDefiniteError:
        trace = np.real(np.trace(cov, axis1=1, axis2=2))
        cov = cov + (regularization * trace / n_chan)[:, None, None] * np.eye(n_chan)
        try:
            whiteners = linalg.cholesky(cov)
        except linalg.NotPositiveDefiniteError as exc:
            raise RankDeficientCovarianceError(
                f"covariance is rank deficient even after diagonal loading "
                f"(pivot {exc.pivot_index})"
            ) from exc
    whitened_data = linalg.apply_inverse_hermitian_transpose(whiteners[:, None], data)
    if isinstance(spec, SpectralTensor):
        whitened = SpectralTensor(
            data=whitened_data,
            sample_rate=spec.sample_rate,
            config=spec.config,
            num_samples=spec.num_samples,
        )
    else:
        whitened = whitened_data
    return whitened, whiteners


def update_activity(extracted):
    """Per-frame magnitude of the extracted signal across all bins."""
    return np.sqrt(np.sum(np.abs(np.asarray(extracted)) ** 2, axis=0))


def weighted_covariance(whitened, activity, contrast, f, activity_floor=DEFAULT_ACTIVITY_FLOOR):
    """Frame-weighted sample covariance of bin f.

    Activities are floored before the weight is applied because both
    contrast weights diverge at zero.
    """
    data = _data_of(whitened)
    weights = contrast.weight(np.maximum(np.asarray(activity, dtype=np.float64), activity_floor))
    return _covariance_stack(data[f : f + 1], weights)[0]


def _weighted_covariance_stack(data, activity, contrast, activity_floor):
    weights = contrast.weight(np.maximum(activity, activity_floor))
    return _covariance_stack(data, weights)


def apply_demixing(w, spec):
    """Extracted signal w^H x per bin and frame; w is (F, M), result (F, N)."""
    data = _data_of(spec)
    return (data @ np.conj(w)[:, :, None])[:, :, 0]


def five_iteration(
    state,
    whitened,
    contrast,
    regularization=DEFAULT_REGULARIZATION,
    activity_floor=DEFAULT_ACTIVITY_FLOOR,
):
    """One demixing update.

    Per bin: build the weighted covariance from the current activity, take
    its smallest eigenpair (lambda, r) and set w = r / sqrt(lambda), which
    makes w^H V w = 1 exactly. The extracted signal and the activity are
    then recomputed from the new filters. Bins whose smallest eigenvalue
    falls at or below regularization * trace/M are diagonally loaded and
    retried once before aborting.
    """
    data = _data_of(whitened)
    n_chan = data.shape[2]
    cov = _weighted_covariance_stack(data, state.activity, contrast, activity_floor)
    values, vectors = linalg.eig_hermitian(cov)

    def _thresholds(vals):
        return regularization * np.sum(vals, axis=-1) / n_chan

    smallest = values[:, -1]
    bad = smallest <= _thresholds(values)
    if np.any(bad):
        loading = _thresholds(values)[bad]
        cov = cov.copy()
        cov[bad] += loading[:, None, None] * np.eye(n_chan)
        values_bad, vectors_bad = linalg.eig_hermitian(cov[bad])
        values[bad], vectors[bad] = values_bad, vectors_bad
        smallest = values[:, -1]
        still_bad = smallest <= _thresholds(values)
        if np.any(still_bad):
            raise DegenerateCovarianceError(
                f"weighted covariance degenerate at bin {int(np.flatnonzero(still_bad)[0])}"
            )

    w = vectors[:, :, -1] / np.sqrt(smallest)[:, None]
    extracted = apply_demixing(w, data)
    return DemixingState(
        whiteners=state.whiteners,
        w=w,
        activity=update_activity(extracted),
        basis=vectors[:, :, :-1],
        iteration=state.iteration + 1,
    )


def _background_basis(state, data, contrast, activity_floor):
    if state.basis is not None:
        return state.basis
    cov = _weighted_covariance_stack(data, state.activity, contrast, activity_floor)
    _, vectors = linalg.eig_hermitian(cov)
    return vectors[:, :, :-1]


def evaluate_nll(state, whitened, contrast, activity_floor=DEFAULT_ACTIVITY_FLOOR):
    """Monitored negative log-likelihood of the observed signal.

    Evaluated in whitened coordinates with an identity background covariance
    and the background demixing block J taken from the state (orthonormal
    complement of w from the update that produced it):

        L = -2N sum_f log|det [w_f, J_f]^H| + sum_n G(r_n)
            + sum_{f,n} ||J_f^H x_fn||^2 + 2N sum_f log det Q_f

    The last term is the constant whitening log-determinant, included so
    values are comparable on the original data scale. The sequence of values
    across iterations is non-increasing.
    """
    data = _data_of(whitened)
    n_frames = data.shape[1]
    basis = _background_basis(state, data, contrast, activity_floor)
    demix_cols = np.concatenate([state.w[:, :, None], basis], axis=2)
    _, logdets = np.linalg.slogdet(demix_cols)
    floored = np.maximum(state.activity, activity_floor)
    background = data @ np.conj(basis)
    whiten_logdet = np.sum(
        np.log(np.real(np.diagonal(state.whiteners, axis1=1, axis2=2)))
    )
    return float(
        -2.0 * n_frames * np.sum(logdets)
        + np.sum(contrast.gain(floored))
        + np.sum(np.abs(background) ** 2)
        + 2.0 * n_frames * whiten_logdet
    )


def head_residual(state, whitened, contrast, activity_floor=DEFAULT_ACTIVITY_FLOOR):
    """Stationarity certificate: max over bins of || [w,J]^H [Vw, CJ] - I ||_F.

    V is the weighted covariance under the current activity, C the plain
    sample covariance of the whitened data (identity up to rounding). At a
    fixed point of five_iteration the residual vanishes.
    """
    data = _data_of(whitened)
    basis = _background_basis(state, data, contrast, activity_floor)
    v_cov = _weighted_covariance_stack(data, state.activity, contrast, activity_floor)
    c_cov = _covariance_stack(data)
    w = state.w
    lhs = np.concatenate([w[:, :, None], basis], axis=2)
    rhs = np.concatenate([v_cov @ w[:, :, None], c_cov @ basis], axis=2)
    gram = np.conj(np.swapaxes(lhs, 1, 2)) @ rhs - np.eye(data.shape[2])
    return float(np.sqrt(np.sum(np.abs(gram) ** 2, axis=(1, 2))).max())


def head_solutions(weighted_cov):
    """All M candidate stationary demixing pairs for one bin.

    For a whitened bin (identity sample covariance) every eigenpair
    (lambda_k, r_k) of the weighted covariance yields an exact solution
    w = r_k / sqrt(lambda_k), J = remaining eigenvectors. Returned in
    descending eigenvalue order; the update picks the last (smallest)
    candidate, which globally minimizes the majorizer.
    """
    values, vectors = linalg.eig_hermitian(weighted_cov)
    if np.any(values <= 0):
        raise ValueError("weighted covariance must be positive definite")
    out = []
    for k in range(values.shape[-1]):
        w = vectors[:, k] / np.sqrt(values[k])
        basis = np.delete(vectors, k, axis=1)
        out.append((float(values[k]), w, basis))
    return out


def project_back(extracted, original_spec, ref_channel=0, activity_floor=DEFAULT_ACTIVITY_FLOOR):
    """Least-squares rescaling of the extracted signal onto a reference channel.

    Per bin the complex scale a = sum_n x_ref conj(s) / sum_n |s|^2 minimizes
    ||x_ref - a s||^2; bins with negligible extracted energy pass through.
    """
    extracted = np.asarray(extracted)
    reference = _data_of(original_spec)[:, :, ref_channel]
    power = np.sum(np.abs(extracted) ** 2, axis=1)
    corr = np.sum(reference * np.conj(extracted), axis=1)
    safe = power >= activity_floor
    scale = np.where(safe, corr / np.where(safe, power, 1.0), 1.0)
    return scale[:, None] * extracted


def extract_spectral(spec, config, callback=None):
    """Run the full extraction on a spectrogram tensor.

    Pipeline: prewhiten, initialize the estimate as the whitened reference
    channel, iterate demixing updates (optionally stopping early once the
    filters move less than early_stop_tol), then project the result back
    onto the original reference channel.

    callback(iteration, state, extracted) is invoked after every iteration
    with the raw (un-projected) extracted signal.

    Returns the projected (F, N) extracted signal and an ExtractionReport
    with one record per iteration (record 0 covers whitening and the
    initial estimate; its wall time excludes the monitoring diagnostics).
    """
    t0 = time.perf_counter()
    whitened, whiteners = prewhiten(spec, regularization=config.regularization)
    data = whitened.data
    n_bins, _, n_chan = data.shape
    if config.ref_channel >= n_chan:
        raise ValueError(f"ref_channel {config.ref_channel} out of range for {n_chan} channels")

    w0 = np.zeros((n_bins, n_chan), dtype=np.complex128)
    w0[:, config.ref_channel] = 1.0
    state = DemixingState(
        whiteners=whiteners,
        w=w0,
        activity=update_activity(data[:, :, config.ref_channel]),
    )
    setup_ms = (time.perf_counter() - t0) * 1e3

    contrast = config.contrast
    report = ExtractionReport()

    def _record(wall_ms):
        nll = res = None
        if config.nll_monitoring:
            nll = evaluate_nll(state, whitened, contrast, config.activity_floor)
            res = head_residual(state, whitened, contrast, config.activity_floor)
        report.records.append(IterationRecord(state.iteration, nll, res, wall_ms))

    _record(setup_ms)
    for _ in range(config.max_iterations):
        t_iter = time.perf_counter()
        previous_w = state.w
        state = five_iteration(
            state,
            whitened,
            contrast,
            regularization=config.regularization,
            activity_floor=config.activity_floor,
        )
        wall_ms = (time.perf_counter() - t_iter) * 1e3
        _record(wall_ms)
        if callback is not None:
            callback(state.iteration, state, apply_demixing(state.w, data))
        if config.early_stop_tol is not None:
            step = np.max(np.linalg.norm(state.w - previous_w, axis=1))
            if step < config.early_stop_tol:
                report.converged = True
                break

    report.iterations_run = state.iteration
    extracted = apply_demixing(state.w, data)
    projected = project_back(extracted, spec, config.ref_channel, config.activity_floor)
    return projected, report


def extract(wave, stft_config, five_config):
    """End-to-end extraction from a multichannel wave to a mono wave.

    Returns the extracted single-channel MultichannelWave (same length as
    the input) and the ExtractionReport.
    """
    spec = analyze(wave, stft_config)
    extracted, report = extract_spectral(spec, five_config)
    out_spec = SpectralTensor(
        data=extracted[:, :, None],
        sample_rate=spec.sample_rate,
        config=spec.config,
        num_samples=spec.num_samples,
    )
    return synthesize(out_spec), report
