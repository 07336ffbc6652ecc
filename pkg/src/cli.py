from typing import Any, Dict, Optional
from pathlib import Path
import logging
import sys

import click
from rich.console import Console
from rich.logging import RichHandler

# Add the parent directory to the path
sys.path.append(str(Path(__file__).parent.parent))

from src.CoopNet import CoopNet
from src.errors import CoopNetError

console = Console()

FAMILY_CHOICES = ['ordinal', 'negbin', 'ordered_logistic', 'negative_binomial']

EXISTING_FILE = click.Path(exists=True, dir_okay=False, path_type=Path)
EXISTING_DIR = click.Path(exists=True, file_okay=False, path_type=Path)


def sampler_options(command):
    """--seed/--chains/--warmup/--draws/--jobs/--config shared by sampling commands"""
    options = [
        click.option('--seed', type=int, envvar='COOPNET_SEED', help='Master seed (env COOPNET_SEED)'),
        click.option('--chains', type=click.IntRange(min=1), help='Number of chains'),
        click.option('--warmup', type=click.IntRange(min=1), help='Warmup iterations per chain'),
        click.option('--draws', type=click.IntRange(min=1), help='Post-warmup draws per chain'),
        click.option('--jobs', 'n_jobs', type=click.IntRange(min=1), help='Chains (or replicates) run in parallel'),
    ]
    for option in reversed(options):
        command = option(command)
    return config_option(command)


def config_option(command):
    return click.option('--config', 'config_path', type=EXISTING_FILE,
                        help='JSON configuration file')(command)


def _app(config_path: Optional[Path] = None, **overrides) -> CoopNet:
    try:
        return CoopNet({'config_path': config_path, **overrides})
    except CoopNetError as e:
        console.print(f"[bold red]Configuration error:[/] {str(e)}")
        raise click.Abort()


def _finish(result: Dict[str, Any], message: str) -> Dict[str, Any]:
    if result['status'] != 'success':
        console.print(f"[bold red]Error:[/] {result['error']}")
        raise click.Abort()
    console.print(f"[bold green]{message}[/]")
    return result


@click.group()
@click.option('--verbose', '-v', is_flag=True, help='Debug logging')
@click.option('--progress/--no-progress', default=False, help='Show sampler progress bars')
@click.pass_context
def cli(ctx, verbose: bool, progress: bool):
    """coopnet - multiplex overlap and multilevel cooperation models"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console)]
    )
    ctx.obj = {'progress': progress}


@cli.command()
@click.option('--individuals', required=True, type=EXISTING_FILE, help='individuals.csv')
@click.option('--edges', required=True, type=EXISTING_FILE, help='edges.csv')
@click.option('--villages', type=EXISTING_FILE, help='Optional villages.csv with village sizes')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False, path_type=Path))
@config_option
def ingest(individuals: Path, edges: Path, villages: Optional[Path], out_dir: Path, config_path):
    """Validate survey files and assemble the analysis dataset"""
    result = _finish(_app(config_path).ingest(individuals, edges, out_dir, villages),
                     f"Dataset written to {out_dir / 'dataset.json'}")
    console.print(f"{result['n_rows']} rows, {result['n_villages']} villages, "
                  f"{result['n_overlap_undefined']} people without network ties")


@cli.command()
@click.option('--edges', required=True, type=EXISTING_FILE, help='edges.csv')
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False, path_type=Path))
def overlap(edges: Path, out_path: Path):
    """Individual multiplex overlap for every ego"""
    result = _finish(_app().overlap(edges, out_path), f"Overlap written to {out_path}")
    console.print(f"{result['n_egos']} egos scored")


@cli.command()
@click.option('--dataset', required=True, type=EXISTING_FILE, help='dataset.json from ingest or simulate')
@click.option('--family', required=True, type=click.Choice(FAMILY_CHOICES, case_sensitive=False))
@click.option('--outcome', type=click.Choice(['dg_category', 'ug_category', 'mayu_yearly']),
              help='Outcome column (default: dg_category for ordinal, mayu_yearly for negbin)')
@click.option('--effects', help='Comma-separated fixed effects (default overlap_i,overlap_V)')
@click.option('--null', 'null_model', is_flag=True, help='Intercept-only model')
@click.option('--exclude-person', multiple=True, help='Drop a person before fitting (repeatable)')
@click.option('--exclude-village', multiple=True, help='Drop a village before fitting (repeatable)')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False, path_type=Path))
@sampler_options
@click.pass_context
def fit(ctx, dataset: Path, family: str, outcome: Optional[str], effects: Optional[str], null_model: bool,
        exclude_person, exclude_village, out_dir: Path, seed, chains, warmup, draws, n_jobs, config_path):
    """Fit a multilevel model and write draws.csv and fit.json"""
    app = _app(config_path, seed=seed, chains=chains, warmup=warmup, draws=draws, n_jobs=n_jobs,
               progress=ctx.obj['progress'])
    fixed_effects = None
    if effects is not None:
        fixed_effects = tuple(name.strip() for name in effects.split(',') if name.strip())
    result = _finish(app.fit(dataset, family, out_dir, outcome=outcome, fixed_effects=fixed_effects,
                             null=null_model, exclude_persons=exclude_person,
                             exclude_villages=exclude_village),
                     f"Fit {'' if not null_model else '(null) '}written to {out_dir}")
    if result['n_divergent']:
        console.print(f"[yellow]{result['n_divergent']} divergent transitions[/]")
    if result['failed']:
        console.print("[bold red]Fit flagged failed: more than 25% divergent iterations[/]")
        raise click.Abort()


@cli.command()
@click.option('--fit', 'fit_dir', required=True, type=EXISTING_DIR, help='Directory written by fit')
@click.option('--dataset', required=True, type=EXISTING_FILE)
@click.option('--null-fit', 'null_fit_dir', type=EXISTING_DIR, help='Intercept-only fit to compare against')
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False, path_type=Path))
@config_option
def icc(fit_dir: Path, dataset: Path, null_fit_dir: Optional[Path], out_path: Path, config_path):
    """Intra-class correlation of the village random intercept"""
    result = _finish(_app(config_path).icc(fit_dir, dataset, out_path, null_fit_dir),
                     f"ICC written to {out_path}")
    console.print(f"ICC (posterior median): {result['icc']:.4f}")


@cli.command()
@click.option('--fit', 'fit_dir', required=True, type=EXISTING_DIR)
@click.option('--dataset', required=True, type=EXISTING_FILE)
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False, path_type=Path))
@config_option
def loo(fit_dir: Path, dataset: Path, out_path: Path, config_path):
    """Pareto-k outlier diagnostics from PSIS leave-one-out"""
    result = _finish(_app(config_path).loo(fit_dir, dataset, out_path), f"Pareto-k written to {out_path}")
    if result['flagged_ids']:
        console.print(f"[yellow]Influential observations:[/] {', '.join(result['flagged_ids'])}")


@cli.command()
@click.option('--fit', 'fit_dir', required=True, type=EXISTING_DIR)
@click.option('--dataset', required=True, type=EXISTING_FILE)
@click.option('--covariate', required=True, type=click.Choice(['overlap_i', 'overlap_V', 'size_V']))
@click.option('--grid-points', type=click.IntRange(min=2), help='Grid size over the observed range')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False, path_type=Path))
@config_option
def marginal(fit_dir: Path, dataset: Path, covariate: str, grid_points: Optional[int], out_dir: Path, config_path):
    """Population-level marginal effect curve of one covariate"""
    app = _app(config_path, grid_points=grid_points)
    _finish(app.marginal(fit_dir, dataset, covariate, out_dir),
            f"Marginal effect written to {out_dir / f'marginal_{covariate}.csv'}")


def _synthetic_options(command):
    options = [
        click.option('--preset', required=True, type=click.Choice(['dg', 'ug', 'mayu'])),
        click.option('--villages', 'preset_villages', type=click.Choice(['8', '9']), default='8',
                     help='Which published village set the truths come from'),
        click.option('--n-villages', type=click.IntRange(min=1), help='Override the number of villages'),
        click.option('--n-per-village', type=click.IntRange(min=1), help='People per village'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


@cli.command()
@_synthetic_options
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option('--seed', type=int, envvar='COOPNET_SEED')
@config_option
def simulate(preset: str, preset_villages: str, n_villages, n_per_village, out_dir: Path, seed, config_path):
    """Generate a synthetic dataset from published-scale truths"""
    app = _app(config_path, seed=seed)
    _finish(app.simulate(preset, out_dir, int(preset_villages), n_per_village, n_villages),
            f"Synthetic dataset written to {out_dir}")


@cli.command()
@_synthetic_options
@click.option('--replicates', type=click.IntRange(min=10), default=20, show_default=True)
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False, path_type=Path))
@sampler_options
@click.pass_context
def recover(ctx, preset: str, preset_villages: str, n_villages, n_per_village, replicates: int, out_dir: Path,
            seed, chains, warmup, draws, n_jobs, config_path):
    """Parameter-recovery experiment: simulate, refit and score coverage"""
    app = _app(config_path, seed=seed, chains=chains, warmup=warmup, draws=draws, n_jobs=n_jobs,
               progress=ctx.obj['progress'])
    result = _finish(app.recover(preset, replicates, out_dir, int(preset_villages), n_per_village, n_villages),
                     f"Recovery report written to {out_dir / 'recovery.json'}")
    for name, row in result['parameters'].items():
        console.print(f"{name}: coverage {row['coverage']:.2f}, bias {row['mean_bias']:+.3f}, "
                      f"sign agreement {row['sign_agreement']}/{row['n_used']}")


@cli.command()
@click.option('--fit', 'fit_dirs', required=True, multiple=True, type=EXISTING_DIR,
              help='Fit directory (repeat per model, in column order)')
@click.option('--icc', 'icc_paths', multiple=True, type=EXISTING_FILE,
              help='icc.json per fit, in the same order')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False, path_type=Path))
@config_option
def report(fit_dirs, icc_paths, out_dir: Path, config_path):
    """Render fitted models into an effects-by-outcome table"""
    if icc_paths and len(icc_paths) != len(fit_dirs):
        raise click.BadParameter('give one --icc per --fit, or none', param_hint='--icc')
    result = _finish(_app(config_path).report(list(fit_dirs), out_dir, list(icc_paths) or None),
                     f"Report written to {out_dir}")
    console.print(result['text'], markup=False, highlight=False)


if __name__ == '__main__':
    cli()
