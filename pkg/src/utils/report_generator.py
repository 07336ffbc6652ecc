from typing import Any, Dict, List, Optional, Sequence
from dataclasses import dataclass
from pathlib import Path
import json
import logging

import pandas as pd

from .diagnostics import interval_columns

EFFECT_LABELS = {
    'b_overlap_i': 'Individual overlap (B1)',
    'b_overlap_V': 'Village overlap (B2)',
    'b_size_V': 'Village size (B3)',
    'sigma_village': 'Village SD',
}

OUTCOME_TITLES = {
    'dg_category': 'Dictator Game',
    'ug_category': 'Ultimatum Game',
    'mayu_yearly': 'Mayu',
}


@dataclass
class ReportColumn:
    title: str
    fit: Dict[str, Any]
    icc: Optional[Dict[str, Any]] = None


class ReportGenerator:
    """Renders fitted models into an effects-by-outcome table (text and JSON)"""

    def __init__(self, level: float = 0.89):
        self.logger = logging.getLogger(__name__)
        self.level = level
        self.lower_name, self.upper_name = interval_columns(level)

    def build_columns(self, fits: Sequence[Dict[str, Any]],
                      iccs: Optional[Sequence[Optional[Dict[str, Any]]]] = None) -> List[ReportColumn]:
        iccs = list(iccs) if iccs is not None else [None] * len(fits)
        if len(iccs) != len(fits):
            raise ValueError(f"Got {len(fits)} fits but {len(iccs)} ICC results")
        columns = []
        titles = set()
        for fit, icc in zip(fits, iccs):
            spec = fit.get('spec') or {}
            title = spec.get('label') or OUTCOME_TITLES.get(spec.get('outcome'), spec.get('outcome', 'model'))
            if title in titles:
                title = f"{title} ({len(columns) + 1})"
            titles.add(title)
            columns.append(ReportColumn(title=title, fit=fit, icc=icc))
        return columns

    def _parameter_order(self, columns: Sequence[ReportColumn]) -> List[str]:
        """Effects first, then the village SD, then every remaining parameter in fit order"""
        seen: List[str] = []
        for column in columns:
            for name in column.fit.get('parameter_order') or list(column.fit['parameters']):
                if name not in seen:
                    seen.append(name)
        headline = [name for name in EFFECT_LABELS if name in seen]
        return headline + [name for name in seen if name not in headline]

    def generate_report(self, fits: Sequence[Dict[str, Any]],
                        iccs: Optional[Sequence[Optional[Dict[str, Any]]]] = None) -> Dict[str, Any]:
        try:
            columns = self.build_columns(fits, iccs)
            self.logger.info(f"Generating report for {len(columns)} models")

            rows = []
            for name in self._parameter_order(columns):
                row = {'parameter': name, 'label': EFFECT_LABELS.get(name, name),
                       'headline': name in EFFECT_LABELS, 'models': {}}
                for column in columns:
                    summary = column.fit['parameters'].get(name)
                    if summary is None:
                        continue
                    row['models'][column.title] = {
                        'estimate': summary['mean'],
                        self.lower_name: summary[self.lower_name],
                        self.upper_name: summary[self.upper_name],
                        'rhat': summary.get('rhat'),
                        'ess': summary.get('ess'),
                    }
                rows.append(row)

            models = []
            for column in columns:
                spec = column.fit.get('spec') or {}
                models.append({
                    'title': column.title,
                    'family': spec.get('family'),
                    'outcome': spec.get('outcome'),
                    'fixed_effects': spec.get('fixed_effects'),
                    'n_divergent': column.fit.get('n_divergent'),
                    'failed': column.fit.get('failed', False),
                    'n_rows': column.fit.get('n_rows'),
                    'icc': None if column.icc is None else {
                        'icc': column.icc['icc'],
                        self.lower_name: column.icc.get(self.lower_name),
                        self.upper_name: column.icc.get(self.upper_name),
                    },
                })

            return {'level': self.level, 'models': models, 'rows': rows}

        except Exception as e:
            self.logger.error(f"Error generating report: {str(e)}")
            raise

    def to_frame(self, report: Dict[str, Any], headline_only: bool = False) -> pd.DataFrame:
        percent = int(round(self.level * 100))
        titles = [model['title'] for model in report['models']]
        records = []
        index = []
        for row in report['rows']:
            if headline_only and not row['headline']:
                continue
            record = []
            for title in titles:
                cell = row['models'].get(title, {})
                record += [cell.get('estimate'), cell.get(self.lower_name), cell.get(self.upper_name)]
            records.append(record)
            index.append(row['label'])

        if any(model['icc'] is not None for model in report['models']):
            record = []
            for model in report['models']:
                icc = model['icc'] or {}
                record += [icc.get('icc'), icc.get(self.lower_name), icc.get(self.upper_name)]
            records.append(record)
            index.append('ICC')

        columns = pd.MultiIndex.from_tuples(
            [(title, stat) for title in titles
             for stat in ('Estimate', f"L {percent}% CI", f"U {percent}% CI")])
        return pd.DataFrame(records, index=index, columns=columns, dtype=float)

    def render_text(self, report: Dict[str, Any]) -> str:
        headline = self.to_frame(report, headline_only=True)
        full = self.to_frame(report)
        lines = [f"Effect of overlap on cooperation ({len(report['models'])} models, "
                 f"{int(round(self.level * 100))}% credible intervals)", '',
                 headline.to_string(float_format=lambda x: f"{x:.2f}", na_rep='-'), '']
        if len(full) > len(headline):
            lines += ['All parameters', '',
                      full.to_string(float_format=lambda x: f"{x:.3f}", na_rep='-'), '']
        lines.append('Covariates enter on their raw scale (proportions; village size in hundreds).')
        for model in report['models']:
            if model['n_divergent']:
                lines.append(f"{model['title']}: {model['n_divergent']} divergent transitions"
                             + (' (fit flagged failed)' if model['failed'] else ''))
        return '\n'.join(lines).rstrip() + '\n'

    def save_report(self, report: Dict[str, Any], output_dir: Path) -> Dict[str, str]:
        """Write report.txt and report.json"""
        try:
            output_dir = Path(output_dir)
            output_dir.mkdir(parents=True, exist_ok=True)

            json_path = output_dir / 'report.json'
            with open(json_path, 'w', encoding='utf-8') as f:
                json.dump(report, f, indent=2, sort_keys=True)
                f.write('\n')

            text_path = output_dir / 'report.txt'
            with open(text_path, 'w', encoding='utf-8') as f:
                f.write(self.render_text(report))

            self.logger.info(f"Report saved to {text_path}")
            return {'text_path': str(text_path), 'json_path': str(json_path)}

        except Exception as e:
            self.logger.error(f"Error saving report: {str(e)}")
            raise
