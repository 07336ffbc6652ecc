import itertools
import random
import tempfile
import unittest
from fractions import Fraction
from pathlib import Path

from src.errors import NetworkError
from src.utils.network import (Direction, OverlapScore, Tie, build_network, individual_overlap,
                               overlap_frame, read_edges_csv, village_overlap)


def tie(ego, alter, domain, direction='get'):
    return Tie(ego_id=ego, alter_id=alter, domain=domain, direction=direction)


def brute_force_overlap(ties):
    """Naive recount: interactions whose alter shows up under >1 (domain, direction) pair"""
    unique = {(t.alter_id, t.domain, t.direction) for t in ties}
    if not unique:
        return Fraction(0)
    multi = 0
    for alter, domain, direction in unique:
        layers = {(d, r) for a, d, r in unique if a == alter}
        if len(layers) > 1:
            multi += 1
    return Fraction(multi, len(unique))


def random_ties(rng, ego='E', n=20):
    alters = [f"a{i}" for i in range(6)]
    domains = ['fish', 'salt', 'farm', 'hunt']
    return [tie(ego, rng.choice(alters), rng.choice(domains), rng.choice(list(Direction)))
            for _ in range(n)]


class TestTie(unittest.TestCase):
    def test_self_tie_rejected(self):
        """Test a tie from an ego to itself is rejected"""
        with self.assertRaises(NetworkError):
            tie('A', 'A', 'fish')

    def test_empty_domain_rejected(self):
        with self.assertRaises(NetworkError):
            tie('A', 'B', '  ')

    def test_unknown_direction_rejected(self):
        with self.assertRaises(NetworkError):
            tie('A', 'B', 'fish', 'sideways')

    def test_direction_coerced(self):
        self.assertIs(tie('A', 'B', 'fish', 'give').direction, Direction.GIVE)


class TestBuildNetwork(unittest.TestCase):
    def test_empty_network(self):
        """Test an ego without ties has no ties and no domains"""
        net = build_network('A', [])
        self.assertEqual(len(net.ties), 0)
        self.assertEqual(len(net.domains), 0)

    def test_duplicates_collapse(self):
        net = build_network('A', [tie('A', 'B', 'salt'), tie('A', 'B', 'salt')])
        self.assertEqual(len(net.ties), 1)
        self.assertEqual(net.domains, frozenset({'salt'}))

    def test_ego_mismatch_names_tie(self):
        with self.assertRaises(NetworkError) as ctx:
            build_network('A', [tie('B', 'C', 'fish')])
        self.assertIn('ego mismatch', str(ctx.exception))
        self.assertIn('B', str(ctx.exception))

    def test_graph_has_one_edge_per_layer(self):
        net = build_network('A', [tie('A', 'B', 'fish', 'give'), tie('A', 'B', 'fish', 'get')])
        graph = net.to_graph()
        self.assertEqual(graph.number_of_edges('A', 'B'), 2)


class TestIndividualOverlap(unittest.TestCase):
    def test_worked_example_19_of_56(self):
        """Test 19 multidomain interactions out of 56 give 19/56"""
        ties = [tie('E', 'x0', d) for d in ('fish', 'salt', 'farm')]
        for i in range(1, 9):
            ties += [tie('E', f"x{i}", 'fish'), tie('E', f"x{i}", 'salt')]
        ties += [tie('E', f"y{i}", 'fish') for i in range(37)]
        score = individual_overlap(build_network('E', ties))
        self.assertEqual(score.n_interactions, 56)
        self.assertEqual(score.n_multidomain_interactions, 19)
        self.assertEqual(score.ratio, Fraction(19, 56))
        self.assertEqual(round(score.value, 3), 0.339)

    def test_three_alter_example(self):
        ties = [tie('E', 'A', 'fish', 'give'), tie('E', 'A', 'fish', 'get'), tie('E', 'A', 'hunt', 'joint'),
                tie('E', 'B', 'fish', 'give'), tie('E', 'C', 'salt', 'get')]
        self.assertAlmostEqual(individual_overlap(build_network('E', ties)).value, 0.6)

    def test_no_multiplexity(self):
        ties = [tie('E', 'A', 'fish'), tie('E', 'B', 'salt'), tie('E', 'C', 'farm')]
        self.assertEqual(individual_overlap(build_network('E', ties)).value, 0.0)

    def test_isolate_flagged_undefined(self):
        score = individual_overlap(build_network('E', []))
        self.assertEqual(score.value, 0.0)
        self.assertTrue(score.undefined)

    def test_matches_brute_force(self):
        """Test overlap equals naive enumeration on random small networks"""
        rng = random.Random(7)
        for _ in range(200):
            ties = random_ties(rng, n=rng.randint(0, 20))
            self.assertEqual(individual_overlap(build_network('E', ties)).ratio, brute_force_overlap(ties))

    def test_invariant_under_relabeling(self):
        rng = random.Random(11)
        ties = random_ties(rng)
        alters = {f"a{i}": f"z{5 - i}" for i in range(6)}
        domains = {'fish': 'd1', 'salt': 'd2', 'farm': 'd3', 'hunt': 'd4'}
        relabeled = [tie('E', alters[t.alter_id], domains[t.domain], t.direction) for t in ties]
        self.assertEqual(individual_overlap(build_network('E', ties)).ratio,
                         individual_overlap(build_network('E', relabeled)).ratio)

    def test_monotonicity(self):
        """Test ties to known alters never lower overlap and ties to new alters never raise it"""
        rng = random.Random(3)
        for _ in range(100):
            ties = random_ties(rng, n=rng.randint(1, 15))
            before = individual_overlap(build_network('E', ties)).ratio
            known = rng.choice(sorted({t.alter_id for t in ties}))
            used = {(t.domain, t.direction) for t in ties if t.alter_id == known}
            fresh_layers = [(d, r) for d, r in itertools.product(['fish', 'salt', 'farm', 'hunt', 'wood'], Direction)
                            if (d, r) not in used]
            domain, direction = rng.choice(fresh_layers)
            after_known = individual_overlap(build_network('E', ties + [tie('E', known, domain, direction)])).ratio
            after_new = individual_overlap(build_network('E', ties + [tie('E', 'brand-new', 'fish')])).ratio
            self.assertGreaterEqual(after_known, before)
            self.assertLessEqual(after_new, before)


class TestVillageOverlap(unittest.TestCase):
    def score(self, value):
        ratio = Fraction(value).limit_denominator(1000)
        return OverlapScore(ratio=ratio, n_interactions=1000, n_multidomain_interactions=int(ratio * 1000))

    def test_two_point_mean(self):
        result = village_overlap([('p1', self.score('0.2')), ('p2', self.score('0.4'))], {'p1': 'A', 'p2': 'A'})
        self.assertAlmostEqual(result['A'], 0.3)

    def test_singleton(self):
        result = village_overlap([('p1', self.score('0.339'))], {'p1': 'A'})
        self.assertAlmostEqual(result['A'], 0.339)

    def test_several_villages(self):
        scores = [('p1', self.score('0.1')), ('p2', self.score('0.3')), ('p3', self.score('0.5'))]
        result = village_overlap(scores, {'p1': 'A', 'p2': 'A', 'p3': 'B', 'p4': 'C'})
        self.assertAlmostEqual(result['A'], 0.2)
        self.assertAlmostEqual(result['B'], 0.5)
        self.assertNotIn('C', result)

    def test_unassigned_person(self):
        with self.assertRaises(NetworkError):
            village_overlap([('p1', self.score('0.1'))], {})


class TestEdgesCsv(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        path = self.dir / 'edges.csv'
        path.write_text(text, encoding='utf-8')
        return path

    def test_reads_networks(self):
        path = self.write("ego_id,alter_id,domain,direction\n"
                          "E,A,fish,give\nE,A,fish,get\nE,A,hunt,joint\nE,B,fish,give\nE,C,salt,get\n"
                          "F,A,fish,give\n")
        networks = read_edges_csv(path)
        self.assertEqual(set(networks), {'E', 'F'})
        frame = overlap_frame(networks)
        self.assertAlmostEqual(frame.set_index('ego_id').at['E', 'overlap'], 0.6)

    def test_bad_header(self):
        with self.assertRaises(NetworkError):
            read_edges_csv(self.write("ego,alter,domain,direction\nE,A,fish,give\n"))

    def test_extra_comma_rejected(self):
        with self.assertRaises(NetworkError):
            read_edges_csv(self.write("ego_id,alter_id,domain,direction\nE,A,fish,salt,give\n"))

    def test_bad_direction_reports_line(self):
        with self.assertRaises(NetworkError) as ctx:
            read_edges_csv(self.write("ego_id,alter_id,domain,direction\nE,A,fish,give\nE,B,fish,up\n"))
        self.assertIn('line 3', str(ctx.exception))


if __name__ == '__main__':
    unittest.main()
