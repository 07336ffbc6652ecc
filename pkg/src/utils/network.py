from typing import Dict, FrozenSet, Iterable, List, Mapping, Tuple
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
import logging

import networkx as nx
import pandas as pd

from ..errors import NetworkError
from .csv_io import read_strict_csv

logger = logging.getLogger(__name__)

EDGE_COLUMNS = ['ego_id', 'alter_id', 'domain', 'direction']


class Direction(str, Enum):
    GIVE = 'give'
    GET = 'get'
    JOINT = 'joint'


@dataclass(frozen=True)
class Tie:
    ego_id: str
    alter_id: str
    domain: str
    direction: Direction

    def __post_init__(self):
        if not str(self.domain).strip():
            raise NetworkError(f"Empty domain label in tie {self.ego_id}->{self.alter_id}")
        if self.ego_id == self.alter_id:
            raise NetworkError(f"Self-tie rejected: {self.ego_id}->{self.alter_id} ({self.domain})")
        try:
            object.__setattr__(self, 'direction', Direction(self.direction))
        except ValueError:
            raise NetworkError(
                f"Unknown direction {self.direction!r} in tie {self.ego_id}->{self.alter_id}; "
                f"expected one of {[d.value for d in Direction]}"
            )

    @property
    def layer(self) -> Tuple[str, str]:
        """(domain, direction) pair; each pair is one layer of the multiplex network"""
        return (self.domain, self.direction.value)

    def __str__(self) -> str:
        return f"({self.ego_id}, {self.alter_id}, {self.domain!r}, {self.direction.value})"


@dataclass(frozen=True)
class MultiplexEgoNetwork:
    ego_id: str
    ties: FrozenSet[Tie] = frozenset()
    domains: FrozenSet[str] = frozenset()

    def __post_init__(self):
        for tie in self.ties:
            if tie.ego_id != self.ego_id:
                raise NetworkError(f"ego mismatch: tie {tie} does not belong to ego {self.ego_id}")
        derived = frozenset(tie.domain for tie in self.ties)
        if self.domains and self.domains != derived:
            raise NetworkError(f"Domain set of ego {self.ego_id} does not match its ties")
        object.__setattr__(self, 'domains', derived)

    @property
    def layers(self) -> FrozenSet[Tuple[str, str]]:
        return frozenset(tie.layer for tie in self.ties)

    @property
    def alters(self) -> FrozenSet[str]:
        return frozenset(tie.alter_id for tie in self.ties)

    def to_graph(self) -> nx.MultiDiGraph:
        """Ego-centred multigraph with one parallel edge per (domain, direction) layer"""
        graph = nx.MultiDiGraph(ego=self.ego_id)
        graph.add_node(self.ego_id)
        for tie in sorted(self.ties, key=lambda t: (t.alter_id, t.domain, t.direction.value)):
            graph.add_edge(tie.ego_id, tie.alter_id, key=tie.layer,
                           domain=tie.domain, direction=tie.direction.value)
        return graph


@dataclass(frozen=True)
class OverlapScore:
    ratio: Fraction
    n_interactions: int
    n_multidomain_interactions: int
    undefined: bool = field(default=False)

    @property
    def value(self) -> float:
        return float(self.ratio)


def build_network(ego_id: str, ties: Iterable[Tie]) -> MultiplexEgoNetwork:
    """Deduplicate ties on (alter, domain, direction) and derive the domain set"""
    unique = set()
    for tie in ties:
        if tie.ego_id != ego_id:
            raise NetworkError(f"ego mismatch: tie {tie} does not belong to ego {ego_id}")
        unique.add(tie)
    return MultiplexEgoNetwork(ego_id=ego_id, ties=frozenset(unique))


def individual_overlap(net: MultiplexEgoNetwork) -> OverlapScore:
    """Share of interactions with alters who appear in more than one layer.

    Each (alter, domain, direction) tie counts as one interaction. An ego without ties
    scores 0 and is flagged ``undefined``.
    """
    graph = net.to_graph()
    n_interactions = graph.number_of_edges()
    if n_interactions == 0:
        return OverlapScore(ratio=Fraction(0), n_interactions=0,
                            n_multidomain_interactions=0, undefined=True)

    n_multi = 0
    for alter in graph.successors(net.ego_id):
        multiplicity = graph.number_of_edges(net.ego_id, alter)
        if multiplicity > 1:
            n_multi += multiplicity

    return OverlapScore(ratio=Fraction(n_multi, n_interactions),
                        n_interactions=n_interactions,
                        n_multidomain_interactions=n_multi)


def village_overlap(scores: Iterable[Tuple[str, OverlapScore]],
                    village_assignment: Mapping[str, str]) -> Dict[str, float]:
    """Unweighted mean of individual overlap per village.

    Villages with no scored individual are absent from the result.
    """
    grouped: Dict[str, List[Fraction]] = {}
    for person, score in scores:
        if person not in village_assignment:
            raise NetworkError(f"No village assignment for person {person}")
        grouped.setdefault(village_assignment[person], []).append(score.ratio)

    return {village: float(sum(values, Fraction(0)) / len(values))
            for village, values in sorted(grouped.items())}


def read_edges_csv(path: Path) -> Dict[str, MultiplexEgoNetwork]:
    """Parse an edges.csv file into one network per ego (in first-seen order)"""
    path = Path(path)
    frame = read_strict_csv(path, EDGE_COLUMNS, NetworkError)

    ties_by_ego: Dict[str, List[Tie]] = {}
    for index, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            tie = Tie(ego_id=row.ego_id.strip(), alter_id=row.alter_id.strip(),
                      domain=row.domain.strip(), direction=row.direction.strip())
        except NetworkError as e:
            raise NetworkError(f"{path}: line {index}: {str(e)}")
        ties_by_ego.setdefault(tie.ego_id, []).append(tie)

    networks = {ego: build_network(ego, ties) for ego, ties in ties_by_ego.items()}
    logger.info(f"Read {len(frame)} ties for {len(networks)} egos from {path}")
    return networks


def overlap_frame(networks: Mapping[str, MultiplexEgoNetwork]) -> pd.DataFrame:
    rows = []
    for ego_id, net in networks.items():
        score = individual_overlap(net)
        rows.append({
            'ego_id': ego_id,
            'overlap': score.value,
            'n_interactions': score.n_interactions,
            'n_multidomain_interactions': score.n_multidomain_interactions,
            'undefined': score.undefined,
        })
    return pd.DataFrame(rows, columns=['ego_id', 'overlap', 'n_interactions',
                                       'n_multidomain_interactions', 'undefined'])


def count_layers(networks: Iterable[MultiplexEgoNetwork]) -> int:
    """Number of distinct (domain, direction) layers observed across networks"""
    layers = set()
    for net in networks:
        layers |= net.layers
    return len(layers)
