from typing import Any, Dict, List, Optional, Sequence, Tuple
from datetime import datetime
from pathlib import Path
import hashlib
import json
import logging

from . import __version__
from .config import load_config
from .errors import ModelError
from .models.glmm import Family, ModelSpec, PriorSet
from .models.sampler import PosteriorDraws, SamplerConfig, run_chains
from .utils.diagnostics import fit_summary
from .utils.network import overlap_frame, read_edges_csv
from .utils.postfit import default_grid, icc_from_draws, loo_report, marginal_effect
from .utils.report_generator import ReportGenerator
from .utils.survey_processor import (CoopDataset, assemble_dataset, offer_histogram,
                                     parse_individuals, read_village_sizes)
from .utils.synthetic import TrueParams, generate_dataset, recovery_experiment

DEFAULT_OUTCOMES = {
    Family.ORDERED_LOGISTIC: 'dg_category',
    Family.NEGATIVE_BINOMIAL: 'mayu_yearly',
}


def _write_json(payload: Dict[str, Any], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def _read_json(path: Path) -> Dict[str, Any]:
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


class CoopNet:
    """Main orchestrator: ingestion, fitting, post-fit analyses, simulation and reporting"""

    def __init__(self, config: Optional[Dict] = None):
        self.logger = logging.getLogger(__name__)
        self.config = self._merge_config(config or {})
        self.report_generator = ReportGenerator(level=self.config['level'])

    def _merge_config(self, user_config: Dict) -> Dict:
        """Merge user config over defaults and environment"""
        config_path = user_config.get('config_path')
        overrides = {k: v for k, v in user_config.items() if k != 'config_path'}
        return load_config(config_path, overrides)

    @property
    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig.from_config(self.config)

    @property
    def priors(self) -> PriorSet:
        return PriorSet.from_config(self.config)

    def _success(self, **payload) -> Dict[str, Any]:
        return {'status': 'success', **payload, 'timestamp': datetime.now().isoformat()}

    def _error(self, action: str, e: Exception) -> Dict[str, Any]:
        self.logger.error(f"Error {action}: {str(e)}")
        return {'status': 'error', 'error': str(e), 'error_type': type(e).__name__,
                'timestamp': datetime.now().isoformat()}

    def write_manifest(self, out_dir: Path, command: str, inputs: Sequence[Path],
                       seed: Optional[int] = None, arguments: Optional[Dict[str, Any]] = None) -> Path:
        """Record one entry per command in ``out_dir/manifest.json``, replacing earlier runs of it"""
        out_dir = Path(out_dir)
        path = out_dir / 'manifest.json'
        manifest = _read_json(path) if path.exists() else {'runs': {}}
        manifest['tool_version'] = __version__
        manifest['runs'][command] = {
            'command': command,
            'inputs': {str(p): file_sha256(p) for p in inputs},
            'arguments': arguments or {},
            'config': self.config,
            'seed': seed,
            'tool_version': __version__,
            'timestamp': datetime.now().isoformat(),
        }
        return _write_json(manifest, path)

    # --- ingestion ----------------------------------------------------------

    def ingest(self, individuals_path: Path, edges_path: Path, out_dir: Path,
               villages_path: Optional[Path] = None) -> Dict[str, Any]:
        try:
            self.logger.info(f"Ingesting {individuals_path} with networks from {edges_path}")
            individuals = parse_individuals(individuals_path)
            networks = read_edges_csv(edges_path)
            sizes = read_village_sizes(villages_path) if villages_path else None
            dataset = assemble_dataset(individuals, networks, sizes,
                                       annualization_factor=self.config['annualization_factor'])

            out_dir = Path(out_dir)
            dataset_path = dataset.to_json(out_dir / 'dataset.json')
            histogram_path = out_dir / 'offer_histogram.csv'
            offer_histogram(dataset).to_csv(histogram_path, index=False)
            inputs = [Path(individuals_path), Path(edges_path)] + ([Path(villages_path)] if villages_path else [])
            self.write_manifest(out_dir, 'ingest', inputs)

            return self._success(dataset_path=str(dataset_path), histogram_path=str(histogram_path),
                                 n_rows=len(dataset), n_villages=dataset.metadata['n_villages'],
                                 n_overlap_undefined=dataset.metadata['n_overlap_undefined'])
        except Exception as e:
            return self._error('ingesting survey data', e)

    def overlap(self, edges_path: Path, out_path: Path) -> Dict[str, Any]:
        try:
            networks = read_edges_csv(edges_path)
            frame = overlap_frame(networks)
            out_path = Path(out_path)
            out_path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(out_path, index=False)
            self.write_manifest(out_path.parent, 'overlap', [Path(edges_path)])
            return self._success(overlap_path=str(out_path), n_egos=len(frame))
        except Exception as e:
            return self._error('computing overlap', e)

    # --- fitting ------------------------------------------------------------

    def build_spec(self, family: str, outcome: Optional[str] = None,
                   fixed_effects: Optional[Sequence[str]] = None, null: bool = False) -> ModelSpec:
        family = Family.parse(family)
        if null:
            fixed_effects = ()
        elif fixed_effects is None:
            fixed_effects = ('overlap_i', 'overlap_V')
        return ModelSpec(family=family, outcome=outcome or DEFAULT_OUTCOMES[family],
                         fixed_effects=tuple(fixed_effects), priors=self.priors)

    def fit_model(self, spec: ModelSpec, dataset: CoopDataset) -> Tuple[PosteriorDraws, Dict[str, Any]]:
        self.logger.info(f"Fitting {spec.family.value} model {spec.name} on "
                         f"{len(dataset.complete_cases(spec.outcome))} rows")
        draws = run_chains(spec, dataset, self.sampler_config)
        summary = fit_summary(draws, level=self.config['level'], extra={
            'n_rows': len(dataset.complete_cases(spec.outcome)),
            'covariate_scale': 'raw (not standardized)',
            'excluded_person_ids': dataset.metadata.get('excluded_person_ids', []),
            'excluded_village_ids': dataset.metadata.get('excluded_village_ids', []),
        })
        return draws, summary

    def fit(self, dataset_path: Path, family: str, out_dir: Path, outcome: Optional[str] = None,
            fixed_effects: Optional[Sequence[str]] = None, null: bool = False,
            exclude_persons: Sequence[str] = (), exclude_villages: Sequence[str] = ()) -> Dict[str, Any]:
        try:
            dataset = CoopDataset.from_json(dataset_path)
            if exclude_persons or exclude_villages:
                dataset = dataset.without(exclude_persons, exclude_villages)
            spec = self.build_spec(family, outcome, fixed_effects, null)
            draws, summary = self.fit_model(spec, dataset)

            out_dir = Path(out_dir)
            draws.to_csv(out_dir / 'draws.csv')
            draws.spec.to_json(out_dir / 'model.json')
            _write_json(summary, out_dir / 'fit.json')
            self.write_manifest(out_dir, 'fit', [Path(dataset_path)], seed=self.config['seed'],
                                arguments={'family': spec.family.value, 'outcome': spec.outcome,
                                           'fixed_effects': list(spec.fixed_effects),
                                           'exclude_persons': sorted(exclude_persons),
                                           'exclude_villages': sorted(exclude_villages)})

            if draws.failed:
                self.logger.warning(f"Fit {spec.name} flagged failed")
            return self._success(fit_dir=str(out_dir), model=draws.spec.name,
                                 n_divergent=draws.n_divergent, failed=draws.failed)
        except Exception as e:
            return self._error('fitting model', e)

    def load_fit(self, fit_dir: Path, dataset_path: Path) -> Tuple[PosteriorDraws, CoopDataset, Dict[str, Any]]:
        """Draws, the dataset the fit used (exclusions re-applied) and fit.json"""
        fit_dir = Path(fit_dir)
        summary = _read_json(fit_dir / 'fit.json')
        if not summary.get('spec'):
            raise ModelError(f"{fit_dir / 'fit.json'} carries no model spec")
        spec = ModelSpec.from_dict(summary['spec'])
        dataset = CoopDataset.from_json(dataset_path)
        excluded_persons = summary.get('excluded_person_ids', [])
        excluded_villages = summary.get('excluded_village_ids', [])
        if excluded_persons or excluded_villages:
            dataset = dataset.without(excluded_persons, excluded_villages)
        draws = PosteriorDraws.from_csv(fit_dir / 'draws.csv', spec=spec,
                                        chain_seeds=summary.get('chain_seeds', []))
        return draws, dataset, summary

    # --- post-fit -----------------------------------------------------------

    def icc(self, fit_dir: Path, dataset_path: Path, out_path: Path,
            null_fit_dir: Optional[Path] = None) -> Dict[str, Any]:
        try:
            draws, dataset, _ = self.load_fit(fit_dir, dataset_path)
            report = icc_from_draws(draws, draws.spec, dataset, self.config['level'])
            payload = {'model': report.to_dict()}
            inputs = [Path(dataset_path), Path(fit_dir) / 'draws.csv']
            if null_fit_dir is not None:
                null_draws, null_dataset, _ = self.load_fit(null_fit_dir, dataset_path)
                null_report = icc_from_draws(null_draws, null_draws.spec, null_dataset, self.config['level'])
                payload['null_model'] = null_report.to_dict()
                payload['attenuated'] = bool(report.icc < null_report.icc)
                inputs.append(Path(null_fit_dir) / 'draws.csv')
            payload['icc'] = report.icc
            payload.update({k: v for k, v in report.to_dict().items() if k.startswith('ci')})

            out_path = _write_json(payload, out_path)
            self.write_manifest(out_path.parent, 'icc', inputs)
            return self._success(icc_path=str(out_path), icc=report.icc)
        except Exception as e:
            return self._error('computing ICC', e)

    def loo(self, fit_dir: Path, dataset_path: Path, out_path: Path) -> Dict[str, Any]:
        try:
            draws, dataset, _ = self.load_fit(fit_dir, dataset_path)
            report = loo_report(draws, dataset, draws.spec, self.config['pareto_k_threshold'])
            out_path = _write_json(report.to_dict(), out_path)
            self.write_manifest(out_path.parent, 'loo', [Path(dataset_path), Path(fit_dir) / 'draws.csv'])
            return self._success(loo_path=str(out_path), flagged_ids=report.flagged_ids)
        except Exception as e:
            return self._error('computing Pareto-k diagnostics', e)

    def marginal(self, fit_dir: Path, dataset_path: Path, covariate: str, out_dir: Path,
                 grid: Optional[Sequence[float]] = None) -> Dict[str, Any]:
        try:
            draws, dataset, _ = self.load_fit(fit_dir, dataset_path)
            if grid is None:
                grid = default_grid(dataset, draws.spec, covariate, self.config['grid_points'])
            frame = marginal_effect(draws, draws.spec, covariate, grid, dataset=dataset,
                                    level=self.config['level'])
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            out_path = out_dir / f"marginal_{covariate}.csv"
            frame.to_csv(out_path, index=False)
            self.write_manifest(out_dir, f"marginal_{covariate}",
                                [Path(dataset_path), Path(fit_dir) / 'draws.csv'])
            return self._success(marginal_path=str(out_path), n_points=len(frame))
        except Exception as e:
            return self._error('computing marginal effect', e)

    # --- synthetic data -----------------------------------------------------

    def truth(self, preset: str, villages: int = 8, n_per_village: Optional[int] = None,
              n_villages: Optional[int] = None) -> TrueParams:
        overrides = {}
        if n_per_village is not None:
            overrides['n_per_village'] = n_per_village
        if n_villages is not None:
            overrides['n_villages'] = n_villages
        return TrueParams.preset(preset, villages=villages, **overrides).with_config(self.config)

    def simulate(self, preset: str, out_dir: Path, villages: int = 8,
                 n_per_village: Optional[int] = None, n_villages: Optional[int] = None) -> Dict[str, Any]:
        try:
            truth = self.truth(preset, villages, n_per_village, n_villages)
            dataset = generate_dataset(truth, self.config['seed'])
            out_dir = Path(out_dir)
            truth_path = truth.to_json(out_dir / 'truth.json')
            dataset_path = dataset.to_json(out_dir / 'dataset.json')
            self.write_manifest(out_dir, 'simulate', [], seed=self.config['seed'],
                                arguments={'preset': preset, 'villages': villages})
            return self._success(truth_path=str(truth_path), dataset_path=str(dataset_path),
                                 n_rows=len(dataset))
        except Exception as e:
            return self._error('simulating dataset', e)

    def recover(self, preset: str, n_replicates: int, out_dir: Path, villages: int = 8,
                n_per_village: Optional[int] = None, n_villages: Optional[int] = None) -> Dict[str, Any]:
        try:
            truth = self.truth(preset, villages, n_per_village, n_villages)
            report = recovery_experiment(truth, n_replicates, self.config, seed=self.config['seed'],
                                         level=self.config['level'])
            out_dir = Path(out_dir)
            truth.to_json(out_dir / 'truth.json')
            recovery_path = report.to_json(out_dir / 'recovery.json')
            self.write_manifest(out_dir, 'recover', [], seed=self.config['seed'],
                                arguments={'preset': preset, 'n_replicates': n_replicates})
            return self._success(recovery_path=str(recovery_path), n_failed=report.n_failed,
                                 parameters=report.parameter_table())
        except Exception as e:
            return self._error('running recovery experiment', e)

    # --- reporting ----------------------------------------------------------

    def report(self, fit_dirs: Sequence[Path], out_dir: Path,
               icc_paths: Optional[Sequence[Optional[Path]]] = None) -> Dict[str, Any]:
        try:
            fits = [_read_json(Path(d) / 'fit.json') for d in fit_dirs]
            iccs = None
            if icc_paths:
                iccs = [_read_json(p)['model'] if p else None for p in icc_paths]
            report = self.report_generator.generate_report(fits, iccs)
            paths = self.report_generator.save_report(report, out_dir)
            inputs = [Path(d) / 'fit.json' for d in fit_dirs] + [Path(p) for p in (icc_paths or []) if p]
            self.write_manifest(Path(out_dir), 'report', inputs)
            return self._success(report_paths=paths, text=self.report_generator.render_text(report))
        except Exception as e:
            return self._error('generating report', e)
