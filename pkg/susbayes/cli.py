"""
Command-line interface for SusBayes.

Runs evidence estimation on benchmarks or FE updating cases, repeated-run
studies and posterior resampling. Exit codes: 0 success, 1 runtime
failure, 2 invalid configuration.
"""

import logging
import sys
from typing import Callable, Optional

import click
from colorama import init, Fore, Style

from . import __version__
from .app import SusBayes
from .config import LOG_LEVELS, METHODS, RunFile, load_run_file, settings
from .errors import ConfigurationError, DomainError
from .resampling import RESAMPLING_METHODS

# Initialize colorama for Windows support
init(autoreset=True)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
EXIT_OK, EXIT_FAILURE, EXIT_INVALID = 0, 1, 2


def _banner(title: str):
    print(f"\n{Fore.CYAN}╔══════════════════════════════════════════════╗{Style.RESET_ALL}")
    print(f"{Fore.CYAN}║  {title:<44}║{Style.RESET_ALL}")
    print(f"{Fore.CYAN}╚══════════════════════════════════════════════╝{Style.RESET_ALL}")


def _guarded(action: Callable[[], None]):
    """Run a command body and map its outcome to the exit code."""
    try:
        action()
    except (ConfigurationError, DomainError) as e:
        print(f"\n{Fore.RED}✗ Configuration Error:{Style.RESET_ALL} {e}")
        sys.exit(EXIT_INVALID)
    except Exception as e:
        print(f"\n{Fore.RED}✗ Error:{Style.RESET_ALL} {e}")
        logging.exception("Unexpected error")
        sys.exit(EXIT_FAILURE)
    print(f"\n{Fore.GREEN}✓ Success!{Style.RESET_ALL}")
    sys.exit(EXIT_OK)


def _load(config_path: Optional[str]) -> RunFile:
    return load_run_file(config_path) if config_path else RunFile()


def run_options(fn):
    """Options shared by ``run`` and ``study``; they override the run file."""
    options = [
        click.option('--config', '-c', 'config_path', type=click.Path(dir_okay=False),
                     help='Run file (key = value)'),
        click.option('--benchmark', '-b', help='eggbox, shells or norm_loggamma'),
        click.option('--dim', '-d', type=int, help='Benchmark dimension'),
        click.option('--case', type=int, help='FE updating case (1-6) instead of a benchmark'),
        click.option('--method', type=click.Choice(METHODS), help='sus (default) or bus'),
        click.option('--pc', type=float, help='Level probability p_c'),
        click.option('--n', 'n', type=int, help='Samples per level N'),
        click.option('--seed', type=int, help='Base random seed'),
        click.option('--max-levels', type=int, help='Level cap'),
        click.option('--eps1', type=float, help='Threshold-ratio tolerance'),
        click.option('--eps2', type=float, help='Subarea-ratio tolerance'),
        click.option('--log-c-inv', type=float, help='BUS ln c^-1 (default: likelihood bound)'),
        click.option('--output-dir', '-o', type=click.Path(file_okay=False),
                     help='Output directory'),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _overrides(benchmark, dim, case, method, pc, n, seed, max_levels, eps1, eps2,
               log_c_inv, **extra) -> dict:
    return dict(benchmark=benchmark, dim=dim, case=case, method=method, p_c=pc, n=n,
                rng_seed=seed, max_levels=max_levels, eps1=eps1, eps2=eps2,
                log_c_inv=log_c_inv, **extra)


@click.group()
@click.version_option(version=__version__)
@click.option('--log-level', type=click.Choice(LOG_LEVELS, case_sensitive=False),
              help='Logging level (default: SUSBAYES_LOG_LEVEL or WARNING)')
def cli(log_level: Optional[str]):
    """
    SusBayes - Bayesian evidence by subset simulation.

    Estimates the evidence of benchmark and FE updating problems, its
    single-run uncertainty, and equally weighted posterior samples.
    """
    level = (log_level or settings.log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format=LOG_FORMAT)


@cli.command()
@run_options
@click.option('--posterior-count', type=int, help='Equally weighted posterior samples')
@click.option('--rejuvenate-steps', type=int, help='Posterior MCMC steps per resampled seed')
@click.option('--resampling', type=click.Choice(RESAMPLING_METHODS), help='Resampling scheme')
@click.option('--no-samples', is_flag=True, help='Do not write samples.csv')
def run(config_path, output_dir, posterior_count, rejuvenate_steps, resampling, no_samples,
        **options):
    """
    Estimate the evidence of one problem.

    Example:
        susbayes run --benchmark shells --dim 2 --seed 7
    """
    _banner(f"SusBayes v{__version__} - run")

    def action():
        run_file = _load(config_path).with_overrides(**_overrides(
            posterior_count=posterior_count, rejuvenate_steps=rejuvenate_steps,
            resampling=resampling, write_samples=False if no_samples else None, **options))
        outcome = SusBayes().run(run_file, output_dir=output_dir)
        print(f"  Results: {outcome.directory}")

    _guarded(action)


@cli.command()
@run_options
@click.option('--runs', '-r', type=int, help='Number of independent runs R')
@click.option('--workers', '-w', type=int, help='Parallel worker processes')
@click.option('--no-progress', is_flag=True, help='Hide the progress bar')
def study(config_path, output_dir, runs, workers, no_progress, **options):
    """
    Repeat a run R times with seeds seed..seed+R-1 and aggregate.

    Example:
        susbayes study --benchmark shells --dim 2 --runs 200 --workers 4
    """
    _banner(f"SusBayes v{__version__} - study")

    def action():
        run_file = _load(config_path).with_overrides(**_overrides(runs=runs, **options))
        outcome = SusBayes().study(run_file, output_dir=output_dir, workers=workers,
                                   progress=not no_progress)
        row = outcome.summary.iloc[0]
        print(f"  mean ln z = {row['mean_log_z']:.6g}, "
              f"mean N_cal = {row['mean_n_cal']:.0f}")
        print(f"  Results: {outcome.directory}")
        if outcome.failures:
            print(f"{Fore.YELLOW}⚠ {outcome.failures} run(s) failed; see study.csv{Style.RESET_ALL}")

    _guarded(action)


@cli.command()
@click.option('--config', '-c', 'config_path', type=click.Path(dir_okay=False),
              help='Run file (key = value)')
@click.option('--case', type=int, help='Updating case (1-6)')
@click.option('--synthesize/--data', 'synthesize', default=True,
              help='Synthesize data (default) or read [data] data_path')
@click.option('--data-path', type=click.Path(dir_okay=False), help='Spectral dataset (.csv)')
@click.option('--seed', type=int, help='Run seed (also the data seed unless --data-seed)')
@click.option('--data-seed', type=int, help='Seed of the synthetic data')
@click.option('--segments', type=int, help='Number of 10 s segments')
@click.option('--fs', type=float, help='Sampling rate [Hz]')
@click.option('--pc', type=float, help='Level probability p_c')
@click.option('--n', 'n', type=int, help='Samples per level N')
@click.option('--no-samples', is_flag=True, help='Do not write samples.csv')
@click.option('--output-dir', '-o', type=click.Path(file_okay=False), help='Output directory')
def femu(config_path, case, synthesize, data_path, seed, data_seed, segments, fs, pc, n,
         no_samples, output_dir):
    """
    Update the shear-building model of one case from ambient spectra.

    Example:
        susbayes femu --case 4 --synthesize --seed 1
    """
    _banner(f"SusBayes v{__version__} - FE updating")

    def action():
        run_file = _load(config_path).with_overrides(
            data=dict(seed=data_seed, n_segments=segments, fs=fs, data_path=data_path),
            case=case, rng_seed=seed, p_c=pc, n=n,
            write_samples=False if no_samples else None)
        use_synthetic = synthesize and run_file.data.data_path is None
        report = SusBayes().femu(run_file, synthesize=use_synthetic, output_dir=output_dir)
        print(f"\n{Fore.YELLOW}Modal parameters:{Style.RESET_ALL}")
        for _, row in report.modal_table.iterrows():
            print(f"  mode {int(row['mode']):2d}: f = {row['f_mean_hz']:.3f} Hz "
                  f"(true {row['f_true_hz']:.3f}, c.o.v. {row['f_cov_pct']:.3g}%), "
                  f"zeta = {row['zeta_mean_pct']:.3g}%")

    _guarded(action)


@cli.command()
@click.argument('samples', type=click.Path(dir_okay=False))
@click.option('--pc', type=float, required=True, help='Level probability of the run')
@click.option('--count', type=int, default=1000, show_default=True,
              help='Equally weighted samples to draw')
@click.option('--method', type=click.Choice(RESAMPLING_METHODS), default='multinomial',
              show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--output-dir', '-o', type=click.Path(file_okay=False), help='Output directory')
def resample(samples, pc, count, method, seed, output_dir):
    """
    Re-weight a run's samples.csv and draw posterior samples.

    SAMPLES: samples.csv written by a run (level, chain, step, log_lik, theta_*)
    """
    _banner(f"SusBayes v{__version__} - resample")

    def action():
        path = SusBayes().resample(samples, p_c=pc, count=count, method=method, seed=seed,
                                   output_dir=output_dir)
        print(f"  Posterior samples: {path}")

    _guarded(action)


@cli.command()
def check():
    """Check configuration and dependencies."""
    _banner("SusBayes Configuration")

    print(f"\n{Fore.YELLOW}Settings:{Style.RESET_ALL}")
    found = settings.settings_file.exists()
    state = f"{Fore.GREEN}Found" if found else f"{Fore.YELLOW}Not found (using defaults)"
    print(f"  Settings file {settings.settings_file}: {state}{Style.RESET_ALL}")
    print(f"  Output: {settings.output_dir}")
    print(f"  Log level: {settings.log_level}")
    print(f"  Workers: {settings.workers}")

    print(f"\n{Fore.YELLOW}Numeric stack:{Style.RESET_ALL}")
    missing = False
    for name in ("numpy", "scipy", "pandas", "tqdm"):
        try:
            module = __import__(name)
            print(f"  ✓ {name}: {Fore.GREEN}{getattr(module, '__version__', 'installed')}"
                  f"{Style.RESET_ALL}")
        except ImportError:
            missing = True
            print(f"  ✗ {name}: {Fore.RED}Not installed{Style.RESET_ALL}")

    print(f"\n{Fore.CYAN}{'─' * 46}{Style.RESET_ALL}")
    if settings.validate() and not missing:
        print(f"{Fore.GREEN}✓ Configuration is complete{Style.RESET_ALL}\n")
        sys.exit(EXIT_OK)
    print(f"{Fore.YELLOW}⚠ Configuration incomplete - please review above{Style.RESET_ALL}\n")
    sys.exit(EXIT_INVALID)


def main():
    """Main entry point for the CLI."""
    cli()


if __name__ == '__main__':
    main()
