from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
import json
import logging

import numpy as np
import pandas as pd

from ..errors import SurveyDataError
from .csv_io import read_strict_csv
from .network import (MultiplexEgoNetwork, build_network, count_layers,
                      individual_overlap, village_overlap)

logger = logging.getLogger(__name__)

INDIVIDUAL_COLUMNS = ['person_id', 'village_id', 'dg_offer_gyd', 'ug_offer_gyd',
                      'mayu_per_month', 'mayu_per_year']
VILLAGE_COLUMNS = ['village_id', 'size']

OFFER_STEP = 100
OFFER_MAX = 1000
TOP_CATEGORY = 5
VILLAGE_SIZE_SCALE = 100.0
DEFAULT_ANNUALIZATION_FACTOR = 12

OUTCOMES = ('dg_category', 'ug_category', 'mayu_yearly')


@dataclass(frozen=True)
class IndividualRecord:
    person_id: str
    village_id: str
    dg_offer_gyd: Optional[int] = None
    ug_offer_gyd: Optional[int] = None
    mayu_per_month: Optional[int] = None
    mayu_per_year: Optional[int] = None


@dataclass(frozen=True)
class CoopRow:
    person_id: str
    village_id: str
    overlap_i: float
    overlap_V: float
    village_size: Optional[float] = None
    dg_category: Optional[int] = None
    ug_category: Optional[int] = None
    mayu_yearly: Optional[int] = None
    overlap_undefined: bool = False

    @property
    def size_V(self) -> Optional[float]:
        """Village size in hundreds of residents, the scale the size covariate enters on"""
        if self.village_size is None:
            return None
        return self.village_size / VILLAGE_SIZE_SCALE

    def covariate(self, name: str) -> Optional[float]:
        if name == 'overlap_i':
            return self.overlap_i
        if name == 'overlap_V':
            return self.overlap_V
        if name == 'size_V':
            return self.size_V
        raise KeyError(f"Unknown covariate {name}")


@dataclass(frozen=True)
class CoopDataset:
    rows: Tuple[CoopRow, ...] = ()
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def village_ids(self) -> List[str]:
        return sorted({row.village_id for row in self.rows})

    @property
    def has_village_size(self) -> bool:
        return bool(self.rows) and all(row.village_size is not None for row in self.rows)

    def complete_cases(self, outcome: str) -> 'CoopDataset':
        """Rows with the given outcome present; other outcomes may be missing"""
        if outcome not in OUTCOMES:
            raise SurveyDataError(f"Unknown outcome {outcome}; expected one of {OUTCOMES}")
        kept = tuple(row for row in self.rows if getattr(row, outcome) is not None)
        return replace(self, rows=kept)

    def without(self, person_ids: Iterable[str] = (), village_ids: Iterable[str] = ()) -> 'CoopDataset':
        """Drop people or whole villages; village overlap of the remaining rows is kept as measured"""
        people, villages = set(person_ids), set(village_ids)
        kept = tuple(row for row in self.rows
                     if row.person_id not in people and row.village_id not in villages)
        metadata = dict(self.metadata)
        metadata['excluded_person_ids'] = sorted(set(metadata.get('excluded_person_ids', [])) | people)
        metadata['excluded_village_ids'] = sorted(set(metadata.get('excluded_village_ids', [])) | villages)
        return CoopDataset(rows=kept, metadata=metadata)

    def outcome_array(self, outcome: str) -> np.ndarray:
        return np.array([getattr(row, outcome) for row in self.rows], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        columns = [f.name for f in CoopRow.__dataclass_fields__.values()]
        return pd.DataFrame([asdict(row) for row in self.rows], columns=columns)

    def to_json(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {'metadata': self.metadata, 'rows': [asdict(row) for row in self.rows]}
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    @classmethod
    def from_json(cls, path: Path) -> 'CoopDataset':
        with open(path, encoding='utf-8') as f:
            payload = json.load(f)
        try:
            rows = tuple(CoopRow(**row) for row in payload['rows'])
        except (KeyError, TypeError) as e:
            raise SurveyDataError(f"{path}: not a coopnet dataset ({str(e)})")
        return cls(rows=rows, metadata=payload.get('metadata', {}))


def _parse_count(raw: str, column: str, line: int) -> Optional[int]:
    raw = raw.strip()
    if raw == '':
        return None
    try:
        value = int(raw)
    except ValueError:
        raise SurveyDataError(f"{column} must be an integer, got {raw!r}", line=line)
    if value < 0:
        raise SurveyDataError(f"{column} must be non-negative, got {value}", line=line)
    return value


def _parse_offer(raw: str, column: str, line: int) -> Optional[int]:
    value = _parse_count(raw, column, line)
    if value is None:
        return None
    if value % OFFER_STEP != 0:
        raise SurveyDataError(f"{column}: offer not multiple of {OFFER_STEP} ({value})", line=line)
    if value > OFFER_MAX:
        raise SurveyDataError(f"{column}: offer above {OFFER_MAX} GYD ({value})", line=line)
    return value


def parse_individuals(path: Path) -> List[IndividualRecord]:
    """Read individuals.csv; blank cells become missing values, never zeros"""
    path = Path(path)
    frame = read_strict_csv(path, INDIVIDUAL_COLUMNS, SurveyDataError)

    records = []
    seen = set()
    for line, row in enumerate(frame.itertuples(index=False), start=2):
        person_id, village_id = row.person_id.strip(), row.village_id.strip()
        if not person_id or not village_id:
            raise SurveyDataError("person_id and village_id are required", line=line)
        if person_id in seen:
            raise SurveyDataError(f"duplicate person_id {person_id}", line=line)
        seen.add(person_id)
        records.append(IndividualRecord(
            person_id=person_id,
            village_id=village_id,
            dg_offer_gyd=_parse_offer(row.dg_offer_gyd, 'dg_offer_gyd', line),
            ug_offer_gyd=_parse_offer(row.ug_offer_gyd, 'ug_offer_gyd', line),
            mayu_per_month=_parse_count(row.mayu_per_month, 'mayu_per_month', line),
            mayu_per_year=_parse_count(row.mayu_per_year, 'mayu_per_year', line),
        ))

    logger.info(f"Parsed {len(records)} individual records from {path}")
    return records


def read_village_sizes(path: Path) -> Dict[str, float]:
    path = Path(path)
    frame = read_strict_csv(path, VILLAGE_COLUMNS, SurveyDataError)
    sizes = {}
    for line, row in enumerate(frame.itertuples(index=False), start=2):
        size = _parse_count(row.size, 'size', line)
        if size is None or size == 0:
            raise SurveyDataError(f"village {row.village_id} needs a positive size", line=line)
        sizes[row.village_id.strip()] = float(size)
    return sizes


def recode_offer(offer_gyd: int) -> int:
    """Map a GYD offer onto categories 0..5; offers above 500 share the top category"""
    if isinstance(offer_gyd, bool) or int(offer_gyd) != offer_gyd:
        raise SurveyDataError(f"Offer must be an integer number of GYD, got {offer_gyd!r}")
    offer_gyd = int(offer_gyd)
    if offer_gyd < 0 or offer_gyd > OFFER_MAX or offer_gyd % OFFER_STEP != 0:
        raise SurveyDataError(f"Offer {offer_gyd} is not on the 0..{OFFER_MAX} GYD grid "
                              f"in steps of {OFFER_STEP}")
    return min(offer_gyd // OFFER_STEP, TOP_CATEGORY)


def annualize_mayu(monthly: Optional[int], yearly: Optional[int],
                   factor: int = DEFAULT_ANNUALIZATION_FACTOR) -> Optional[int]:
    """Yearly mayu count; a positive monthly report wins over the yearly recall.

    A zero monthly report without a yearly recall leaves the count missing.
    """
    if monthly is None and yearly is None:
        raise SurveyDataError("no mayu report")
    if monthly is not None and monthly > 0:
        return monthly * factor
    return yearly


def assemble_dataset(individuals: Sequence[IndividualRecord],
                     networks: Mapping[str, MultiplexEgoNetwork],
                     village_sizes: Optional[Mapping[str, float]] = None,
                     annualization_factor: int = DEFAULT_ANNUALIZATION_FACTOR) -> CoopDataset:
    """Join individual records with network overlap into the analysis dataset.

    Individuals absent from ``networks`` are treated as having an empty network.
    Row order follows ``individuals``.
    """
    scores = []
    for record in individuals:
        net = networks.get(record.person_id)
        if net is None:
            net = build_network(record.person_id, [])
        scores.append((record.person_id, individual_overlap(net)))

    assignment = {record.person_id: record.village_id for record in individuals}
    village_means = village_overlap(scores, assignment)

    if village_sizes is not None:
        unknown = sorted({r.village_id for r in individuals} - set(village_sizes))
        if unknown:
            raise SurveyDataError(f"No village size for villages: {', '.join(unknown)}")

    rows = []
    for record, (_, score) in zip(individuals, scores):
        try:
            mayu = annualize_mayu(record.mayu_per_month, record.mayu_per_year, annualization_factor)
        except SurveyDataError:
            mayu = None
        rows.append(CoopRow(
            person_id=record.person_id,
            village_id=record.village_id,
            overlap_i=score.value,
            overlap_V=village_means[record.village_id],
            village_size=None if village_sizes is None else float(village_sizes[record.village_id]),
            dg_category=None if record.dg_offer_gyd is None else recode_offer(record.dg_offer_gyd),
            ug_category=None if record.ug_offer_gyd is None else recode_offer(record.ug_offer_gyd),
            mayu_yearly=mayu,
            overlap_undefined=score.undefined,
        ))

    observed = [net for pid, net in networks.items() if pid in assignment]
    metadata = {
        'n_rows': len(rows),
        'n_villages': len(village_means),
        'layer_count': count_layers(observed),
        'annualization_factor': annualization_factor,
        'n_overlap_undefined': sum(1 for row in rows if row.overlap_undefined),
        'village_overlap_basis': 'mean over sampled individuals only',
        'village_size_scale': VILLAGE_SIZE_SCALE if village_sizes is not None else None,
        'excluded_person_ids': [],
        'excluded_village_ids': [],
    }
    logger.info(f"Assembled dataset: {len(rows)} rows across {len(village_means)} villages")
    return CoopDataset(rows=tuple(rows), metadata=metadata)


def offer_histogram(dataset: CoopDataset) -> pd.DataFrame:
    """Number of people offering each (collapsed) amount in the DG and UG"""
    categories = range(TOP_CATEGORY + 1)
    dg = [row.dg_category for row in dataset.rows if row.dg_category is not None]
    ug = [row.ug_category for row in dataset.rows if row.ug_category is not None]
    return pd.DataFrame({
        'offer_gyd': [c * OFFER_STEP for c in categories],
        'dg_count': [dg.count(c) for c in categories],
        'ug_count': [ug.count(c) for c in categories],
    })
