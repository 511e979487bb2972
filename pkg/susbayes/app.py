"""
Main application module for SusBayes.

Coordinates problem construction, SuS / BUS runs, repeated-run studies,
FE model updating and posterior resampling, and writes their results.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import writer
from .benchmarks import (
    REFERENCE_BUS_ESS,
    REFERENCE_BUS_STUDY,
    REFERENCE_SUS_ESS,
    REFERENCE_SUS_STUDY,
    benchmark_spec,
    make_problem,
)
from .config import RunFile, Settings, settings as default_settings
from .diagnostics import BusMetrics, UncertaintyReport, bus_metrics, uncertainty_report
from .errors import ConfigurationError, SusBayesError
from .model import BayesProblem, prior_from_bounds
from .resampling import (
    RESAMPLING_METHODS,
    ancestor_diversity,
    build_pool,
    last_level_pool,
    mcmc_rejuvenate,
    pool_from_frame,
    posterior_summary,
    resample_equal,
)
from .spectral import SpectralDataset, load_dataset, save_dataset
from .streams import RandomStreams
from .sus import BusRun, SusRun, run, run_bus
from .updating import CaseReport, get_case, run_case, synthesize_dataset
from .updating import make_problem as make_case_problem

logger = logging.getLogger(__name__)

FE_EVIDENCE_NOTE = "ln z of FE cases omits the constant of the spectral likelihood"


@dataclass(frozen=True, eq=False)
class RunOutcome:
    """A finished run and where its results went."""

    run: Union[SusRun, BusRun]
    uncertainty: Optional[Union[UncertaintyReport, BusMetrics]]
    directory: Path
    files: List[str]
    content_hash: str


@dataclass(frozen=True, eq=False)
class StudyOutcome:
    rows: pd.DataFrame
    summary: pd.DataFrame
    directory: Path
    failures: int
    content_hash: str


def apply_prior_bounds(problem: BayesProblem, bounds: Dict[int, tuple]) -> BayesProblem:
    """Override marginals of ``problem`` with 1-based ``theta<j>`` bounds."""
    if not bounds:
        return problem
    bad = [j for j in bounds if not 1 <= j <= problem.dimension]
    if bad:
        raise ConfigurationError(
            f"prior override for theta{bad[0]} but the problem has {problem.dimension} parameters"
        )
    marginals = list(problem.prior.marginals)
    for j, b in bounds.items():
        marginals[j - 1] = tuple(b)
    return problem.with_prior(prior_from_bounds(marginals))


def load_case_data(run_file: RunFile) -> Optional[SpectralDataset]:
    if run_file.data.data_path is None:
        return None
    return load_dataset(run_file.data.data_path)


def build_problem(run_file: RunFile, data: Optional[SpectralDataset] = None) -> BayesProblem:
    """BayesProblem described by a run file: a benchmark or an FE case."""
    if run_file.case is not None:
        case = get_case(run_file.case)
        if data is None:
            data = load_case_data(run_file)
        if data is None:
            data = synthesize_dataset(None, case, fs=run_file.data.fs,
                                      n_segments=run_file.data.n_segments,
                                      oversample=run_file.data.oversample,
                                      seed=_data_seed(run_file))
        elif tuple(data.channels) != case.measured_stories or data.n_freqs != case.n_freq_points:
            data = data.restrict(case.measured_stories, case.freq_band)
        problem = make_case_problem(case, data)
    elif run_file.benchmark is not None:
        problem = make_problem(run_file.benchmark, run_file.dim)
    else:
        raise ConfigurationError("a run needs either 'benchmark' or 'case'", path=run_file.path)
    return apply_prior_bounds(problem, run_file.prior_bounds)


def _data_seed(run_file: RunFile) -> int:
    return run_file.config.rng_seed if run_file.data.seed is None else run_file.data.seed


def execute(problem: BayesProblem, run_file: RunFile):
    """Run SuS or BUS and compute its uncertainty summary."""
    if run_file.method == "bus":
        bus = run_bus(problem, run_file.log_c_inv, run_file.config)
        return bus, bus_metrics(bus)
    sus = run(problem, run_file.config)
    try:
        report = uncertainty_report(sus)
    except SusBayesError as e:
        logger.warning(f"uncertainty report unavailable: {e}")
        report = None
    return sus, report


def study_task(run_file: RunFile, index: int) -> Dict:
    """One study run with seed = base seed + index; failures become a row."""
    seed = run_file.config.rng_seed + index
    row = {"run": index, "seed": seed, "error": None}
    try:
        cfg = replace(run_file.config, rng_seed=seed)
        one = replace(run_file, config=cfg)
        result, unc = execute(build_problem(one), one)
        row.update({
            "log_evidence": result.log_evidence,
            "n_levels": result.n_levels,
            "n_likelihood_calls": result.n_likelihood_calls,
            "terminated_by": result.terminated_by.value,
        })
        if isinstance(unc, UncertaintyReport):
            row.update({"predicted_cov": unc.cov_z_hat, "n_ess": unc.n_ess,
                        "n_ess_ratio": unc.n_ess_ratio})
        elif isinstance(unc, BusMetrics):
            row.update({"predicted_cov": unc.cov_z, "n_ess": unc.n_ess,
                        "n_ess_ratio": unc.n_ess / result.n_likelihood_calls})
    except Exception as e:
        logger.warning(f"study run {index} (seed {seed}) failed: {e}")
        row["error"] = f"{type(e).__name__}: {e}"
    return row


def _empirical_cov_of_z(log_z: np.ndarray) -> float:
    """c.o.v. of z over runs, computed relative to the largest ln z."""
    w = np.exp(log_z - log_z.max())
    return float(np.std(w, ddof=1) / np.mean(w))


def summarize_study(rows: pd.DataFrame, target: Dict, method: str = "sus") -> pd.DataFrame:
    """Aggregate over the successful runs of a study, next to published reference runs."""
    ok = rows[rows["error"].isna()] if "error" in rows else rows
    n_ok = len(ok)
    log_z = ok["log_evidence"].to_numpy(dtype=float) if n_ok else np.empty(0)
    spread = n_ok >= 2

    def column(name):
        if name in ok and n_ok:
            return ok[name].to_numpy(dtype=float)
        return np.full(n_ok, math.nan)

    ratio = column("n_ess_ratio")
    mean_ln = float(np.mean(log_z)) if n_ok else math.nan
    std_ln = float(np.std(log_z, ddof=1)) if spread else math.nan
    key = (target.get("benchmark"), target.get("dim"))
    bus = method == "bus"
    study_ref = (REFERENCE_BUS_STUDY if bus else REFERENCE_SUS_STUDY).get(key, (math.nan,) * 3)
    ess_ref = (REFERENCE_BUS_ESS if bus else REFERENCE_SUS_ESS).get(key, (math.nan,) * 2)
    summary = {
        **target,
        "runs": len(rows),
        "failures": len(rows) - n_ok,
        "mean_log_z": mean_ln,
        "std_log_z": std_ln,
        "cov_log_z_pct": 100.0 * std_ln / abs(mean_ln) if spread and mean_ln else math.nan,
        "cov_z_pct": 100.0 * _empirical_cov_of_z(log_z) if spread else math.nan,
        "mean_predicted_cov_pct": 100.0 * float(np.nanmean(column("predicted_cov")))
        if n_ok else math.nan,
        "median_predicted_cov_pct": 100.0 * float(np.nanmedian(column("predicted_cov")))
        if n_ok else math.nan,
        "mean_n_cal": float(np.mean(column("n_likelihood_calls"))) if n_ok else math.nan,
        "mean_n_ess_ratio_pct": 100.0 * float(np.nanmean(ratio)) if n_ok else math.nan,
        "cov_n_ess_ratio_pct": 100.0 * float(np.nanstd(ratio, ddof=1) / np.nanmean(ratio))
        if spread else math.nan,
        "reference_log_z": target.get("reference_log_z", math.nan),
        "ref_mean_log_z": study_ref[0],
        "ref_cov_pct": study_ref[1],
        "ref_n_cal_1e3": study_ref[2],
        "ref_n_ess_ratio_pct": ess_ref[0],
        "ref_n_ess_ratio_cov_pct": ess_ref[1],
    }
    return pd.DataFrame([summary])


class SusBayes:
    """Main application class for evidence runs and posterior sampling."""

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or default_settings
        problems = self.settings.problems()
        if problems:
            raise ConfigurationError("; ".join(problems), path=str(self.settings.settings_file))

    def output_dir(self, run_file: RunFile, override=None, name: Optional[str] = None) -> Path:
        base = Path(override or run_file.output_dir or self.settings.output_dir)
        return base / name if name else base

    # --- single runs --------------------------------------------------------

    def run(self, run_file: RunFile, output_dir=None) -> RunOutcome:
        """One SuS (or BUS) run with manifest, samples and posterior tables."""
        started = writer.utc_now()
        problem = build_problem(run_file)
        directory = self.output_dir(run_file, output_dir)
        print(f"\n▶ Running {run_file.method.upper()} on '{problem.name}' "
              f"(d={problem.dimension}, seed={run_file.config.rng_seed})...")
        result, unc = execute(problem, run_file)
        written = []
        if isinstance(result, SusRun):
            body = writer.sus_run_record(result)
            body["uncertainty"] = None if unc is None else unc.to_dict()
            if run_file.write_samples:
                written.append(writer.write_table(writer.samples_frame(result),
                                                  directory / "samples.csv"))
            written.append(writer.write_table(writer.fpf_frame(result),
                                              directory / "fpf_curve.csv"))
            posterior, body["posterior"] = self._posterior_from_run(result, problem, run_file)
        else:
            body = writer.bus_run_record(result, unc)
            posterior, body["posterior"] = self._posterior_from_bus(result)
        written.append(writer.write_table(posterior, directory / "posterior.csv"))
        if problem.name.startswith("fe-case"):
            body["notes"] = [FE_EVIDENCE_NOTE]
        body["files"] = writer.file_list(written, directory)
        manifest_path = writer.write_manifest(directory, body, started)
        manifest = writer.read_manifest(manifest_path)
        self._print_result(result, unc)
        return RunOutcome(run=result, uncertainty=unc, directory=directory,
                          files=body["files"] + [writer.MANIFEST_NAME],
                          content_hash=manifest["content_hash"])

    def _posterior_from_run(self, result: SusRun, problem: BayesProblem, run_file: RunFile):
        if run_file.resampling not in RESAMPLING_METHODS:
            raise ConfigurationError(
                f"resampling must be one of {', '.join(RESAMPLING_METHODS)}", path=run_file.path
            )
        pool = build_pool(result)
        rng = RandomStreams(run_file.config.rng_seed).resampling()
        idx = resample_equal(pool, run_file.posterior_count, rng, run_file.resampling)
        record = {
            "count": run_file.posterior_count,
            "method": run_file.resampling,
            "ancestor_diversity": ancestor_diversity(idx),
            "last_level_diversity": ancestor_diversity(
                resample_equal(last_level_pool(pool), run_file.posterior_count,
                               RandomStreams(run_file.config.rng_seed).resampling(),
                               run_file.resampling)),
            "summary": posterior_summary(pool).to_dict(orient="records"),
        }
        theta, log_lik = pool.theta[idx], pool.log_lik[idx]
        if run_file.rejuvenate_steps > 0:
            moved = mcmc_rejuvenate(pool, idx, problem, run_file.rejuvenate_steps,
                                    run_file.config.rng_seed, sigma=result.final_sigma)
            theta, log_lik = moved.theta, moved.log_lik
            record["rejuvenation"] = {"steps": run_file.rejuvenate_steps,
                                      "acceptance_rate": moved.acceptance_rate}
        frame = _theta_frame(theta, log_lik)
        frame.insert(0, "source_level", pool.level[idx])
        return frame, record

    def _posterior_from_bus(self, result: BusRun):
        _, theta, log_lik = result.posterior_pool()
        record = {"count": int(log_lik.shape[0]), "method": "bus_final_level"}
        return _theta_frame(theta, log_lik), record

    def _print_result(self, result, unc):
        print(f"✓ ln z = {result.log_evidence:.6g} after {result.n_levels} level(s), "
              f"{result.n_likelihood_calls} likelihood calls")
        if isinstance(unc, UncertaintyReport):
            print(f"  c.o.v. = {100.0 * unc.cov_z_hat:.3g}%, N_ess = {unc.n_ess:.1f}")
        elif isinstance(unc, BusMetrics):
            print(f"  c.o.v. = {100.0 * unc.cov_z:.3g}%, N_ess = {unc.n_ess:.1f}")
        for warning in result.warnings:
            print(f"  ⚠ {warning}")

    # --- studies --------------------------------------------------------------

    def study(self, run_file: RunFile, output_dir=None, workers: Optional[int] = None,
              progress: bool = True) -> StudyOutcome:
        """R independent runs (seeds seed..seed+R-1) aggregated into one summary row."""
        started = writer.utc_now()
        target = self._study_target(run_file)
        runs = run_file.runs
        workers = workers or run_file.workers or self.settings.workers
        directory = self.output_dir(run_file, output_dir)
        print(f"\n▶ Study of {runs} run(s) with {workers} worker(s)...")

        rows: List[Dict] = []
        bar = tqdm(total=runs, desc="study", unit="run", disable=not progress)
        if workers <= 1:
            for index in range(runs):
                rows.append(study_task(run_file, index))
                bar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(study_task, run_file, index) for index in range(runs)]
                for future in as_completed(futures):
                    rows.append(future.result())
                    bar.update(1)
        bar.close()
        rows.sort(key=lambda r: r["run"])

        frame = pd.DataFrame(rows)
        summary = summarize_study(frame, target, run_file.method)
        failures = int(frame["error"].notna().sum())
        if failures:
            logger.warning(f"{failures} of {runs} study run(s) failed")

        written = [writer.write_table(frame, directory / "study.csv"),
                   writer.write_table(summary, directory / "summary.csv")]
        body = {
            "command": "study",
            "target": target,
            "method": run_file.method,
            "config": run_file.config,
            "runs": runs,
            "failures": failures,
            "summary": summary.to_dict(orient="records")[0],
            "files": writer.file_list(written, directory),
        }
        manifest = writer.read_manifest(writer.write_manifest(directory, body, started))
        print(f"✓ Study finished: {runs - failures}/{runs} run(s) succeeded")
        return StudyOutcome(rows=frame, summary=summary, directory=directory,
                            failures=failures, content_hash=manifest["content_hash"])

    def _study_target(self, run_file: RunFile) -> Dict:
        if run_file.case is not None:
            return {"case": get_case(run_file.case).case_id}
        if run_file.benchmark is None:
            raise ConfigurationError("a study needs either 'benchmark' or 'case'",
                                     path=run_file.path)
        spec = benchmark_spec(run_file.benchmark, run_file.dim)
        target = {"benchmark": spec.name, "dim": spec.dimension}
        if spec.analytic_log_evidence is not None and not run_file.prior_bounds:
            target["reference_log_z"] = spec.analytic_log_evidence
        return target

    # --- FE model updating -----------------------------------------------------

    def femu(self, run_file: RunFile, synthesize: bool = True, output_dir=None) -> CaseReport:
        """Update one shear-building case and write its modal and posterior reports."""
        started = writer.utc_now()
        if run_file.case is None:
            raise ConfigurationError("femu needs a case id", path=run_file.path)
        case = get_case(run_file.case)
        directory = self.output_dir(run_file, output_dir)
        written = []
        data = None if synthesize else load_case_data(run_file)
        if data is None:
            if not synthesize:
                raise ConfigurationError("no data_path given; use --synthesize or set "
                                         "[data] data_path", path=run_file.path)
            print(f"\n▶ Synthesizing ambient-vibration data for case {case.case_id}...")
            data = synthesize_dataset(None, case, fs=run_file.data.fs,
                                      n_segments=run_file.data.n_segments,
                                      oversample=run_file.data.oversample,
                                      seed=_data_seed(run_file))
            written.append(save_dataset(data, directory / "data"))
            written.append(directory / "data.json")

        print(f"▶ Updating case {case.case_id} (d={case.dimension})...")
        report = run_case(case.case_id, run_file.config, data=data)

        if run_file.write_samples:
            written.append(writer.write_table(writer.samples_frame(report.run),
                                              directory / "samples.csv"))
        rng = RandomStreams(run_file.config.rng_seed).resampling()
        idx = resample_equal(report.pool, run_file.posterior_count, rng, run_file.resampling)
        posterior = _theta_frame(report.pool.theta[idx], report.pool.log_lik[idx],
                                 case.parameter_names())
        written.append(writer.write_table(posterior, directory / "posterior.csv"))
        written.append(writer.write_table(writer.fpf_frame(report.run), directory / "fpf_curve.csv"))
        written.append(writer.write_table(report.modal_table, directory / "modal_table.csv"))
        written.append(writer.write_table(report.histograms, directory / "histograms.csv"))

        body = writer.sus_run_record(report.run)
        body.update({
            "command": "femu",
            "case": {"id": case.case_id, "measured_stories": list(case.measured_stories),
                     "n_modes": case.n_modes, "dimension": case.dimension,
                     "freq_band": list(case.freq_band), "n_freq_points": case.n_freq_points},
            "data": {"fs": data.fs, "n_segments": data.n_segments, "seed": data.seed,
                     "synthesized": synthesize},
            "uncertainty": None if report.uncertainty is None else report.uncertainty.to_dict(),
            "posterior": {"summary": report.summary.to_dict(orient="records")},
            "modal_table": report.modal_table.to_dict(orient="records"),
            "non_pd_count": report.non_pd_count,
            "notes": [FE_EVIDENCE_NOTE],
            "files": writer.file_list(written, directory),
        })
        writer.write_manifest(directory, body, started)
        print(f"✓ Case {case.case_id}: ln z = {report.run.log_evidence:.6g}, "
              f"{report.run.n_likelihood_calls} likelihood calls")
        return report

    # --- resampling an existing run -------------------------------------------

    def resample(self, samples_path, p_c: float, count: int, method: str = "multinomial",
                 seed: int = 0, output_dir=None) -> Path:
        """Rebuild posterior weights from a samples table and draw ``count`` samples."""
        started = writer.utc_now()
        samples_path = Path(samples_path)
        if not samples_path.is_file():
            raise ConfigurationError(f"samples file not found: {samples_path}")
        if not 0.0 < p_c < 1.0:
            raise ConfigurationError(f"pc must lie in (0, 1), got {p_c}")
        if method not in RESAMPLING_METHODS:
            raise ConfigurationError(f"resampling must be one of {', '.join(RESAMPLING_METHODS)}")
        frame = pd.read_csv(samples_path)
        level_log_p = _recorded_level_log_p(samples_path.parent)
        try:
            pool = pool_from_frame(frame, p_c, level_log_p=level_log_p)
        except SusBayesError:
            raise
        except ValueError as e:
            raise ConfigurationError(f"{samples_path}: {e}") from e

        directory = Path(output_dir) if output_dir else samples_path.parent
        idx = resample_equal(pool, count, RandomStreams(seed).resampling(), method)
        posterior = _theta_frame(pool.theta[idx], pool.log_lik[idx])
        posterior.insert(0, "source_level", pool.level[idx])
        path = writer.write_table(posterior, directory / "posterior.csv")
        body = {
            "command": "resample",
            "source": samples_path.name,
            "p_c": p_c,
            "count": count,
            "method": method,
            "seed": seed,
            "entries": len(pool),
            "ancestor_diversity": ancestor_diversity(idx),
            "posterior": {"summary": posterior_summary(pool).to_dict(orient="records")},
            "files": writer.file_list([path], directory),
        }
        writer.write_manifest(directory, body, started)
        print(f"✓ Drew {count} posterior samples from {len(pool)} weighted entries")
        return path


def _recorded_level_log_p(directory: Path) -> Optional[List[float]]:
    """Level ln P values of the SuS manifest next to a samples table, if any."""
    path = directory / writer.MANIFEST_NAME
    if not path.is_file():
        return None
    try:
        manifest = writer.read_manifest(path)
    except ValueError:
        logger.warning(f"{path}: unreadable manifest, using p_c for level weights")
        return None
    if manifest.get("method") != "sus" or not manifest.get("levels"):
        return None
    levels = sorted(manifest["levels"], key=lambda lv: lv["index"])
    logger.info(f"using level probabilities recorded in {path}")
    return [lv["log_p"] for lv in levels]


def _theta_frame(theta: np.ndarray, log_lik: np.ndarray,
                 names: Optional[List[str]] = None) -> pd.DataFrame:
    names = names or [f"theta_{j + 1}" for j in range(theta.shape[1])]
    frame = pd.DataFrame(theta, columns=names)
    frame["log_lik"] = log_lik
    return frame
