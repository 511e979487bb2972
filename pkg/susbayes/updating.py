"""
Bayesian FE model updating of the shear building from ambient spectra.

The parameter vector of a case is laid out as
[alpha_1..alpha_10, zeta_1..zeta_Nm, S_1..S_Nm, Se_1..Se_Nc].
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .diagnostics import UncertaintyReport, uncertainty_report
from .errors import ConfigurationError, ModalAnalysisError, DomainError
from .model import BayesProblem, PriorSpec
from .resampling import WeightedPool, build_pool, posterior_summary
from .shear_building import TRUE_ALPHA, ShearBuildingModel
from .spectral import SpectralDataset, band_mask, psd_mean, simulate_sample_psd, wishart_log_likelihood
from .sus import RunConfig, SusRun, run

logger = logging.getLogger(__name__)

TRUE_ZETA = 0.01
TRUE_MODAL_PSD = 1e-10
TRUE_NOISE_PSD = 1e-10
MICRO_G2 = 1e-12

ALPHA_BOUNDS = (0.5, 1.0)
ZETA_BOUNDS = (0.0, 0.1)
PSD_BOUNDS = (0.0, 1e-8)

DEFAULT_FS = 50.0
DEFAULT_SEGMENTS = 200
FREQ_RESOLUTION = 0.1


@dataclass(frozen=True)
class UpdatingCase:
    """Sensor layout, modes and frequency band of one updating case."""

    case_id: int
    measured_stories: Tuple[int, ...]
    n_modes: int
    freq_band: Tuple[float, float]
    n_freq_points: int
    n_stories: int = 10

    @property
    def n_channels(self) -> int:
        return len(self.measured_stories)

    @property
    def dimension(self) -> int:
        return self.n_stories + 2 * self.n_modes + self.n_channels

    def parameter_names(self):
        return ([f"alpha_{j + 1}" for j in range(self.n_stories)]
                + [f"zeta_{i + 1}" for i in range(self.n_modes)]
                + [f"S_{i + 1}" for i in range(self.n_modes)]
                + [f"Se_{c}" for c in self.measured_stories])

    def prior(self) -> PriorSpec:
        return PriorSpec(tuple([ALPHA_BOUNDS] * self.n_stories
                               + [ZETA_BOUNDS] * self.n_modes
                               + [PSD_BOUNDS] * self.n_modes
                               + [PSD_BOUNDS] * self.n_channels))

    def split(self, theta: np.ndarray):
        """(alpha, zeta, S, Se) views of a case parameter vector."""
        n, m = self.n_stories, self.n_modes
        return theta[:n], theta[n:n + m], theta[n + m:n + 2 * m], theta[n + 2 * m:]

    def theta_true(self) -> np.ndarray:
        return np.concatenate([np.asarray(TRUE_ALPHA),
                               np.full(self.n_modes, TRUE_ZETA),
                               np.full(self.n_modes, TRUE_MODAL_PSD),
                               np.full(self.n_channels, TRUE_NOISE_PSD)])


_FIVE = ((0.5, 8.5), 80)
_TEN = ((0.5, 14.5), 140)

CASES: Dict[int, UpdatingCase] = {
    1: UpdatingCase(1, (9, 10), 5, *_FIVE),
    2: UpdatingCase(2, (9, 10), 10, *_TEN),
    3: UpdatingCase(3, (4, 7, 10), 5, *_FIVE),
    4: UpdatingCase(4, (4, 7, 10), 10, *_TEN),
    5: UpdatingCase(5, tuple(range(1, 11)), 5, *_FIVE),
    6: UpdatingCase(6, tuple(range(1, 11)), 10, *_TEN),
}


def get_case(case_id: int) -> UpdatingCase:
    if case_id not in CASES:
        raise ConfigurationError(f"case must be one of {sorted(CASES)}, got {case_id}")
    return CASES[case_id]


@dataclass(frozen=True)
class TrueStructure:
    """Parameters of the structure that generates synthetic data (all modes)."""

    alpha: Tuple[float, ...] = TRUE_ALPHA
    zeta: float = TRUE_ZETA
    modal_psd: float = TRUE_MODAL_PSD
    noise_psd: float = TRUE_NOISE_PSD


def check_band(dataset: SpectralDataset, case: UpdatingCase):
    """Raise unless the dataset covers exactly the case channels and band grid."""
    if tuple(dataset.channels) != tuple(case.measured_stories):
        raise ConfigurationError(
            f"dataset channels {list(dataset.channels)} do not match case {case.case_id} "
            f"stories {list(case.measured_stories)}"
        )
    inside = band_mask(dataset.freqs, case.freq_band)
    if not np.all(inside) or dataset.n_freqs != case.n_freq_points:
        raise ConfigurationError(
            f"dataset has {dataset.n_freqs} points in [{dataset.freqs.min():.3g}, "
            f"{dataset.freqs.max():.3g}] Hz; case {case.case_id} needs {case.n_freq_points} "
            f"points in [{case.freq_band[0]}, {case.freq_band[1]}) Hz"
        )


def synthesize_dataset(theta_true: Optional[TrueStructure], case: UpdatingCase,
                       fs: float = DEFAULT_FS, n_segments: int = DEFAULT_SEGMENTS,
                       rng: Optional[np.random.Generator] = None, oversample: int = 4,
                       seed: Optional[int] = None,
                       model: Optional[ShearBuildingModel] = None) -> SpectralDataset:
    """Synthetic sample PSD data of the case's channels and band.

    Every mode of the true structure contributes to the response, also in
    cases that model only the lower modes.
    """
    truth = theta_true or TrueStructure()
    model = model or ShearBuildingModel()
    if rng is None:
        rng = np.random.default_rng(seed)
    modes = model.modes(truth.alpha).with_damping(np.full(model.n_stories, truth.zeta))
    dataset = simulate_sample_psd(
        modal=modes,
        modal_psd=np.full(model.n_stories, truth.modal_psd),
        noise_psd=np.full(case.n_channels, truth.noise_psd),
        channels=case.measured_stories,
        band=case.freq_band,
        fs=fs,
        n_segments=n_segments,
        rng=rng,
        oversample=oversample,
        seed=seed,
    )
    return SpectralDataset(dataset.freqs, dataset.psd_matrices, dataset.n_segments,
                           dataset.channels, dataset.fs, seed,
                           {"case": case.case_id, "theta_true": case.theta_true().tolist()})


class SpectralLikelihood:
    """ln likelihood of case parameters given sample PSD data, up to a constant."""

    def __init__(self, dataset: SpectralDataset, case: UpdatingCase,
                 model: Optional[ShearBuildingModel] = None):
        check_band(dataset, case)
        self.dataset = dataset
        self.case = case
        self.model = model or ShearBuildingModel(n_stories=case.n_stories)
        self.non_pd_count = 0

    def mean_psd(self, theta: np.ndarray) -> np.ndarray:
        alpha, zeta, modal_psd, noise_psd = self.case.split(np.asarray(theta, dtype=float))
        modes = (self.model.modes(alpha)
                 .restrict(self.case.measured_stories, self.case.n_modes)
                 .with_damping(zeta))
        return psd_mean(self.dataset.freqs, modes, modal_psd, noise_psd)

    def __call__(self, theta: np.ndarray) -> float:
        try:
            E = self.mean_psd(theta)
        except (ModalAnalysisError, DomainError):
            return -math.inf
        value = wishart_log_likelihood(E, self.dataset.psd_matrices)
        if value is None:
            self.non_pd_count += 1
            return -math.inf
        return value

    def batch(self, theta_rows: np.ndarray) -> np.ndarray:
        return np.array([self(row) for row in np.atleast_2d(theta_rows)])


def log_likelihood_spectral(theta: np.ndarray, dataset: SpectralDataset,
                            case: UpdatingCase) -> float:
    return SpectralLikelihood(dataset, case)(theta)


def make_problem(case: UpdatingCase, dataset: SpectralDataset) -> BayesProblem:
    likelihood = SpectralLikelihood(dataset, case)
    return BayesProblem(
        dimension=case.dimension,
        prior=case.prior(),
        log_likelihood=likelihood,
        name=f"fe-case{case.case_id}",
        log_likelihood_batch=likelihood.batch,
    )


@dataclass(frozen=True, eq=False)
class CaseReport:
    """Posterior summary of one updating case."""

    case: UpdatingCase
    run: SusRun
    pool: WeightedPool
    summary: pd.DataFrame
    modal_table: pd.DataFrame
    histograms: pd.DataFrame
    uncertainty: Optional[UncertaintyReport] = None
    non_pd_count: int = 0
    warnings: Tuple[str, ...] = field(default=())

    def __repr__(self) -> str:
        return (f"CaseReport(case={self.case.case_id}, log_evidence={self.run.log_evidence:.6g}, "
                f"levels={self.run.n_levels})")


def _weighted_stats(x: np.ndarray, w: np.ndarray, interval: float = 0.9):
    mean = float(np.sum(w * x))
    std = float(np.sqrt(max(np.sum(w * (x - mean) ** 2), 0.0)))
    order = np.argsort(x)
    cdf = np.cumsum(w[order])
    cdf /= cdf[-1]
    lo = x[order][min(int(np.searchsorted(cdf, 0.5 * (1 - interval))), x.size - 1)]
    hi = x[order][min(int(np.searchsorted(cdf, 0.5 * (1 + interval))), x.size - 1)]
    return mean, std, float(lo), float(hi)


def modal_table(pool: WeightedPool, case: UpdatingCase,
                model: Optional[ShearBuildingModel] = None,
                truth: Optional[TrueStructure] = None) -> pd.DataFrame:
    """Posterior frequency, damping and modal PSD per mode, next to true values."""
    model = model or ShearBuildingModel(n_stories=case.n_stories)
    truth = truth or TrueStructure()
    w = pool.weights
    keep = w > 1e-12 * w.max()
    w = w[keep] / w[keep].sum()
    theta = pool.theta[keep]
    m = case.n_modes
    freqs = np.array([model.modes(case.split(row)[0]).frequencies[:m] for row in theta])
    true_freqs = model.modes(truth.alpha).frequencies[:m]
    zeta = theta[:, case.n_stories:case.n_stories + m]
    psd = theta[:, case.n_stories + m:case.n_stories + 2 * m] / MICRO_G2

    rows = []
    for i in range(m):
        f_mean, f_std, f_lo, f_hi = _weighted_stats(freqs[:, i], w)
        z_mean, z_std, z_lo, z_hi = _weighted_stats(zeta[:, i], w)
        s_mean, s_std, s_lo, s_hi = _weighted_stats(psd[:, i], w)
        rows.append({
            "mode": i + 1,
            "f_true_hz": float(true_freqs[i]),
            "f_mean_hz": f_mean,
            "f_cov_pct": 100.0 * f_std / f_mean,
            "f_lower_hz": f_lo,
            "f_upper_hz": f_hi,
            "zeta_true_pct": 100.0 * truth.zeta,
            "zeta_mean_pct": 100.0 * z_mean,
            "zeta_cov_pct": 100.0 * z_std / z_mean if z_mean > 0 else math.nan,
            "zeta_lower_pct": 100.0 * z_lo,
            "zeta_upper_pct": 100.0 * z_hi,
            "S_true_ug2_hz": truth.modal_psd / MICRO_G2,
            "S_mean_ug2_hz": s_mean,
            "S_cov_pct": 100.0 * s_std / s_mean if s_mean > 0 else math.nan,
            "S_lower_ug2_hz": s_lo,
            "S_upper_ug2_hz": s_hi,
        })
    return pd.DataFrame(rows)


def alpha_histograms(pool: WeightedPool, case: UpdatingCase, bins: int = 25) -> pd.DataFrame:
    """Weighted posterior density of each alpha on the prior range."""
    w = pool.weights
    frames = []
    for j in range(case.n_stories):
        density, edges = np.histogram(pool.theta[:, j], bins=bins, range=ALPHA_BOUNDS,
                                      weights=w, density=True)
        frames.append(pd.DataFrame({
            "parameter": f"alpha_{j + 1}",
            "bin_left": edges[:-1],
            "bin_right": edges[1:],
            "density": density,
            "true_value": TRUE_ALPHA[j],
        }))
    return pd.concat(frames, ignore_index=True)


def run_case(case_id: int, config: RunConfig, data: Optional[SpectralDataset] = None,
             fs: float = DEFAULT_FS, n_segments: int = DEFAULT_SEGMENTS,
             oversample: int = 4, data_seed: Optional[int] = None) -> CaseReport:
    """Synthesize (if needed) and update one case; summarize the posterior."""
    case = get_case(case_id)
    if data is None:
        seed = config.rng_seed if data_seed is None else data_seed
        data = synthesize_dataset(None, case, fs=fs, n_segments=n_segments,
                                  oversample=oversample, seed=seed)
    elif tuple(data.channels) != case.measured_stories or data.n_freqs != case.n_freq_points:
        data = data.restrict(case.measured_stories, case.freq_band)
    check_band(data, case)

    problem = make_problem(case, data)
    logger.info(f"updating case {case.case_id}: d={case.dimension}, N_f={data.n_freqs}, "
                f"channels={list(case.measured_stories)}")
    sus_run = run(problem, config)
    pool = build_pool(sus_run)
    names = case.parameter_names()
    summary = posterior_summary(pool, names)
    summary["true_value"] = case.theta_true()

    warnings = list(sus_run.warnings)
    try:
        uncertainty = uncertainty_report(sus_run)
    except ValueError as e:
        logger.warning(f"uncertainty report unavailable: {e}")
        warnings.append(str(e))
        uncertainty = None

    likelihood: SpectralLikelihood = problem.log_likelihood
    if likelihood.non_pd_count:
        logger.warning(f"{likelihood.non_pd_count} parameter vector(s) gave non-PD spectra")
    return CaseReport(
        case=case,
        run=sus_run,
        pool=pool,
        summary=summary,
        modal_table=modal_table(pool, case),
        histograms=alpha_histograms(pool, case),
        uncertainty=uncertainty,
        non_pd_count=likelihood.non_pd_count,
        warnings=tuple(warnings),
    )
