"""
Ambient-vibration spectra: sample PSD matrices and their modal model.

Accelerations are in g and all spectra are one-sided, in g^2/Hz. The
sample PSD at f_k is the segment average of F F^* with the scaled DFT
F = sqrt(2 dt / n_seg) * sum_j x_j exp(-i 2 pi j k / n_seg).
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import fft, signal

from .errors import ConfigurationError, SingularResponseError
from .shear_building import ModalData

logger = logging.getLogger(__name__)

SEGMENT_DURATION = 10.0


@dataclass(frozen=True, eq=False)
class SpectralDataset:
    """Averaged sample PSD matrices on a frequency grid."""

    freqs: np.ndarray
    psd_matrices: np.ndarray
    n_segments: int
    channels: Tuple[int, ...]
    fs: float
    seed: Optional[int] = None
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        n_f, n_c = self.freqs.size, len(self.channels)
        if self.psd_matrices.shape != (n_f, n_c, n_c):
            raise ConfigurationError(
                f"PSD array shape {self.psd_matrices.shape} does not match "
                f"{n_f} frequencies x {n_c} channels"
            )

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_freqs(self) -> int:
        return int(self.freqs.size)

    def restrict(self, channels: Sequence[int], band: Tuple[float, float]) -> "SpectralDataset":
        """Sub-dataset for a subset of channels and a frequency band [lo, hi)."""
        missing = set(channels) - set(self.channels)
        if missing:
            raise ConfigurationError(f"dataset has no channel(s) {sorted(missing)}")
        idx = [self.channels.index(c) for c in channels]
        keep = band_mask(self.freqs, band)
        psd = self.psd_matrices[keep][:, idx][:, :, idx]
        return SpectralDataset(self.freqs[keep], psd, self.n_segments, tuple(channels),
                               self.fs, self.seed, dict(self.meta))

    def __repr__(self) -> str:
        return (f"SpectralDataset(channels={list(self.channels)}, N_f={self.n_freqs}, "
                f"M={self.n_segments})")


def band_mask(freqs: np.ndarray, band: Tuple[float, float]) -> np.ndarray:
    lo, hi = band
    tol = 1e-9 * max(1.0, hi)
    return (freqs >= lo - tol) & (freqs < hi - tol)


def frf(freqs: np.ndarray, natural: np.ndarray, damping: np.ndarray) -> np.ndarray:
    """h_ik = 1 / ((1 - b^2) - i 2 zeta_i b), b = f_i / f_k; shape (N_f, N_m)."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if np.any(freqs <= 0):
        raise ConfigurationError("spectral frequencies must be positive")
    beta = natural[None, :] / freqs[:, None]
    denom = (1.0 - beta ** 2) - 2j * damping[None, :] * beta
    if np.any(denom == 0):
        raise SingularResponseError("undamped mode evaluated at its natural frequency")
    return 1.0 / denom


def psd_mean(freqs, modal: ModalData, modal_psd: Sequence[float],
             noise_psd: Sequence[float]) -> np.ndarray:
    """E_k = Phi diag(S |h_k|^2) Phi^T + diag(S_e), shape (N_f, N_c, N_c).

    ``modal`` must be restricted to the measured channels and carry damping.
    The matrices are real symmetric since S and h_k are diagonal.
    """
    if modal.damping is None:
        raise ConfigurationError("modal data needs damping ratios")
    h = frf(freqs, modal.frequencies, modal.damping)
    gain = np.asarray(modal_psd, dtype=float)[None, :] * np.abs(h) ** 2
    phi = modal.mode_shapes
    E = np.einsum("cm,km,dm->kcd", phi, gain, phi)
    idx = np.arange(phi.shape[0])
    E[:, idx, idx] += np.asarray(noise_psd, dtype=float)[None, :]
    return E


def wishart_log_likelihood(E: np.ndarray, E_hat: np.ndarray) -> Optional[float]:
    """-sum_k (ln det E_k + tr(E_k^-1 E_hat_k)); None if some E_k is not PD."""
    try:
        chol = np.linalg.cholesky(E)
    except np.linalg.LinAlgError:
        return None
    log_det = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)))
    solved = np.linalg.solve(E, np.real(E_hat))
    trace = np.trace(solved, axis1=1, axis2=2).sum()
    value = -(log_det + trace)
    return float(value) if np.isfinite(value) else None


def simulate_sample_psd(
    modal: ModalData,
    modal_psd: Sequence[float],
    noise_psd: Sequence[float],
    channels: Sequence[int],
    band: Tuple[float, float],
    fs: float,
    n_segments: int,
    rng: np.random.Generator,
    oversample: int = 4,
    segment_duration: float = SEGMENT_DURATION,
    seed: Optional[int] = None,
) -> SpectralDataset:
    """Synthesize ambient accelerations and reduce them to sample PSD matrices.

    Each modal acceleration responds to white modal excitation of PSD S_i
    through s^2 / (s^2 + 2 zeta w s + w^2), discretized exactly (zero-order
    hold) at ``oversample * fs`` and decimated to ``fs``. ``modal`` holds
    the full-structure modes with damping; rows are stories.
    """
    if modal.damping is None:
        raise ConfigurationError("modal data needs damping ratios")
    modal_psd = np.asarray(modal_psd, dtype=float)
    noise_psd = np.asarray(noise_psd, dtype=float)
    active = modal_psd > 0
    f_max = float(np.max(modal.frequencies[active])) if np.any(active) else 0.0
    if fs <= 2.0 * max(f_max, band[1]):
        raise ConfigurationError(
            f"sampling rate {fs} Hz violates Nyquist for content up to {max(f_max, band[1]):.3f} Hz"
        )
    if n_segments < 1:
        raise ConfigurationError("at least one segment is required")

    n_seg = int(round(segment_duration * fs))
    n_total = n_seg * n_segments
    dt = 1.0 / fs
    f_int = fs * oversample
    rows = [c - 1 for c in channels]
    n_c = len(rows)

    response = np.zeros((n_c, n_total))
    if np.any(active):
        zeta_min = float(np.min(modal.damping[active]))
        f_min = float(np.min(modal.frequencies[active]))
        settle = min(10.0 / (2.0 * math.pi * f_min * max(zeta_min, 1e-3)), 600.0)
        n_settle = int(math.ceil(settle * fs))
        n_int = (n_total + n_settle) * oversample
        modal_acc = np.zeros((modal.n_modes, n_int))
        for i in np.flatnonzero(active):
            w = 2.0 * math.pi * modal.frequencies[i]
            num, den, _ = signal.cont2discrete(
                ([1.0, 0.0, 0.0], [1.0, 2.0 * modal.damping[i] * w, w ** 2]),
                1.0 / f_int, method="zoh")
            force = rng.normal(0.0, math.sqrt(modal_psd[i] * f_int / 2.0), n_int)
            modal_acc[i] = signal.lfilter(np.ravel(num), den, force)
        physical = modal.mode_shapes[rows] @ modal_acc
        if oversample > 1:
            physical = signal.decimate(physical, oversample, ftype="fir", zero_phase=True, axis=-1)
        response = physical[:, n_settle:n_settle + n_total]

    noise_std = np.sqrt(noise_psd * fs / 2.0)
    response = response + noise_std[:, None] * rng.standard_normal((n_c, n_total))

    segments = response.reshape(n_c, n_segments, n_seg)
    F = math.sqrt(2.0 * dt / n_seg) * fft.fft(segments, axis=-1)
    freqs = np.arange(n_seg) * fs / n_seg
    keep = band_mask(freqs, band)
    Fk = F[:, :, keep]
    psd = np.einsum("irk,jrk->kij", Fk, Fk.conj()) / n_segments
    psd = 0.5 * (psd + np.conj(np.swapaxes(psd, 1, 2)))

    logger.info(f"synthesized {n_segments} x {segment_duration:g} s segments at {fs:g} Hz, "
                f"{int(keep.sum())} frequency points in [{band[0]}, {band[1]}) Hz")
    return SpectralDataset(freqs=freqs[keep], psd_matrices=psd, n_segments=n_segments,
                           channels=tuple(channels), fs=float(fs), seed=seed)


def save_dataset(dataset: SpectralDataset, path) -> Path:
    """Write ``<path>.csv`` (freq, re_i_j, im_i_j) and a ``<path>.json`` header."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    n_c = dataset.n_channels
    columns = {"freq": dataset.freqs}
    for i in range(n_c):
        for j in range(n_c):
            columns[f"re_{i + 1}_{j + 1}"] = dataset.psd_matrices[:, i, j].real
            columns[f"im_{i + 1}_{j + 1}"] = dataset.psd_matrices[:, i, j].imag
    pd.DataFrame(columns).to_csv(csv_path, index=False, float_format="%.17g")
    header = {
        "channels": list(dataset.channels),
        "n_segments": dataset.n_segments,
        "fs": dataset.fs,
        "seed": dataset.seed,
        "units": "g^2/Hz",
        **dataset.meta,
    }
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(header, f, indent=2)
    return csv_path


def load_dataset(path) -> SpectralDataset:
    path = Path(path)
    header_path = path.with_suffix(".json")
    if not header_path.exists():
        raise ConfigurationError(f"dataset header not found: {header_path}")
    with open(header_path) as f:
        header = json.load(f)
    frame = pd.read_csv(path.with_suffix(".csv"))
    channels = tuple(int(c) for c in header["channels"])
    n_c = len(channels)
    psd = np.empty((len(frame), n_c, n_c), dtype=complex)
    for i in range(n_c):
        for j in range(n_c):
            psd[:, i, j] = frame[f"re_{i + 1}_{j + 1}"].to_numpy() \
                + 1j * frame[f"im_{i + 1}_{j + 1}"].to_numpy()
    meta = {k: v for k, v in header.items()
            if k not in ("channels", "n_segments", "fs", "seed", "units")}
    return SpectralDataset(freqs=frame["freq"].to_numpy(dtype=float), psd_matrices=psd,
                           n_segments=int(header["n_segments"]), channels=channels,
                           fs=float(header["fs"]), seed=header.get("seed"), meta=meta)
