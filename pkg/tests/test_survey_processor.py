import tempfile
import unittest
from pathlib import Path

from src.errors import SurveyDataError
from src.utils.network import Tie, build_network
from src.utils.survey_processor import (CoopDataset, IndividualRecord, annualize_mayu, assemble_dataset,
                                        offer_histogram, parse_individuals, read_village_sizes,
                                        recode_offer)

HEADER = "person_id,village_id,dg_offer_gyd,ug_offer_gyd,mayu_per_month,mayu_per_year\n"


def network(ego, *layers):
    ties = [Tie(ego_id=ego, alter_id=alter, domain=domain, direction=direction)
            for alter, domain, direction in layers]
    return build_network(ego, ties)


class TestParseIndividuals(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text, name='individuals.csv'):
        path = self.dir / name
        path.write_text(text, encoding='utf-8')
        return path

    def test_blank_cells_are_missing(self):
        """Test blank cells come back as None rather than zero"""
        records = parse_individuals(self.write(HEADER + "p1,v1,200,300,2,\n"))
        self.assertEqual(records, [IndividualRecord('p1', 'v1', 200, 300, 2, None)])

    def test_header_only(self):
        self.assertEqual(parse_individuals(self.write(HEADER)), [])

    def test_offer_off_grid(self):
        with self.assertRaises(SurveyDataError) as ctx:
            parse_individuals(self.write(HEADER + "p1,v1,100,100,,\np2,v1,250,100,,\n"))
        self.assertIn('line 3', str(ctx.exception))
        self.assertIn('offer not multiple of 100', str(ctx.exception))

    def test_negative_count(self):
        with self.assertRaises(SurveyDataError):
            parse_individuals(self.write(HEADER + "p1,v1,100,100,-1,\n"))

    def test_duplicate_person(self):
        with self.assertRaises(SurveyDataError):
            parse_individuals(self.write(HEADER + "p1,v1,100,100,,\np1,v2,100,100,,\n"))

    def test_wrong_header(self):
        with self.assertRaises(SurveyDataError):
            parse_individuals(self.write("person,village,dg,ug,month,year\n"))

    def test_village_sizes(self):
        sizes = read_village_sizes(self.write("village_id,size\nv1,250\nv2,400\n", 'villages.csv'))
        self.assertEqual(sizes, {'v1': 250.0, 'v2': 400.0})

    def test_village_size_zero(self):
        with self.assertRaises(SurveyDataError):
            read_village_sizes(self.write("village_id,size\nv1,0\n", 'villages.csv'))


class TestRecode(unittest.TestCase):
    def test_categories(self):
        self.assertEqual(recode_offer(0), 0)
        self.assertEqual(recode_offer(300), 3)
        self.assertEqual(recode_offer(500), 5)

    def test_top_category_collapse(self):
        for offer in (600, 800, 1000):
            self.assertEqual(recode_offer(offer), 5)

    def test_whole_grid(self):
        offers = range(0, 1001, 100)
        categories = [recode_offer(offer) for offer in offers]
        self.assertEqual(categories, sorted(categories))
        for offer, category in zip(offers, categories):
            with self.subTest(offer=offer):
                self.assertIn(category, range(6))
                if offer >= 500:
                    self.assertEqual(category, 5)
                else:
                    self.assertEqual(category, offer // 100)

    def test_off_grid(self):
        for offer in (-100, 250, 1100):
            with self.assertRaises(SurveyDataError):
                recode_offer(offer)


class TestAnnualize(unittest.TestCase):
    def test_monthly_wins(self):
        self.assertEqual(annualize_mayu(2, 7), 24)

    def test_yearly_fallback(self):
        self.assertEqual(annualize_mayu(0, 5), 5)
        self.assertEqual(annualize_mayu(None, 3), 3)

    def test_zero_monthly_without_yearly(self):
        """Test a zero monthly report with no yearly recall leaves the count missing"""
        self.assertIsNone(annualize_mayu(0, None))

    def test_zero_monthly_without_yearly_drops_from_fits(self):
        records = [IndividualRecord('p1', 'A', 100, 100, 0, None), IndividualRecord('p2', 'A', 100, 100, 0, 3)]
        dataset = assemble_dataset(records, {})
        self.assertIsNone(dataset.rows[0].mayu_yearly)
        self.assertEqual([row.person_id for row in dataset.complete_cases('mayu_yearly')], ['p2'])

    def test_no_report(self):
        with self.assertRaises(SurveyDataError):
            annualize_mayu(None, None)

    def test_custom_factor(self):
        self.assertEqual(annualize_mayu(3, None, factor=10), 30)


class TestAssembleDataset(unittest.TestCase):
    def setUp(self):
        self.individuals = [
            IndividualRecord('p1', 'A', 100, 200, 1, None),
            IndividualRecord('p2', 'A', 600, None, None, None),
            IndividualRecord('p3', 'B', None, 500, 0, 4),
        ]
        self.networks = {
            'p1': network('p1', ('x', 'fish', 'give'), ('x', 'salt', 'give'), ('y', 'fish', 'get'),
                          ('z', 'farm', 'get'), ('w', 'hunt', 'get')),
            'p2': network('p2', ('x', 'fish', 'give'), ('x', 'fish', 'get'), ('y', 'salt', 'get'),
                          ('z', 'farm', 'get'), ('w', 'hunt', 'get'), ('v', 'fish', 'get'),
                          ('u', 'fish', 'get'), ('t', 'salt', 'get'), ('s', 'salt', 'get'),
                          ('r', 'farm', 'get')),
        }

    def test_mean_join(self):
        """Test village overlap is the mean of its members' individual overlap"""
        dataset = assemble_dataset(self.individuals, self.networks)
        rows = {row.person_id: row for row in dataset}
        self.assertAlmostEqual(rows['p1'].overlap_i, 0.4)
        self.assertAlmostEqual(rows['p2'].overlap_i, 0.2)
        self.assertAlmostEqual(rows['p1'].overlap_V, 0.3)
        self.assertAlmostEqual(rows['p2'].overlap_V, 0.3)

    def test_outcomes_recoded(self):
        rows = {row.person_id: row for row in assemble_dataset(self.individuals, self.networks)}
        self.assertEqual(rows['p1'].dg_category, 1)
        self.assertEqual(rows['p2'].dg_category, 5)
        self.assertIsNone(rows['p2'].ug_category)
        self.assertEqual(rows['p1'].mayu_yearly, 12)
        self.assertIsNone(rows['p2'].mayu_yearly)
        self.assertEqual(rows['p3'].mayu_yearly, 4)

    def test_missing_network_flagged(self):
        rows = {row.person_id: row for row in assemble_dataset(self.individuals, self.networks)}
        self.assertTrue(rows['p3'].overlap_undefined)
        self.assertEqual(rows['p3'].overlap_i, 0.0)
        self.assertEqual(rows['p3'].overlap_V, 0.0)
        self.assertFalse(rows['p1'].overlap_undefined)

    def test_all_empty_networks(self):
        dataset = assemble_dataset(self.individuals, {})
        self.assertTrue(all(row.overlap_undefined for row in dataset))
        self.assertEqual(dataset.metadata['n_overlap_undefined'], 3)

    def test_village_sizes(self):
        dataset = assemble_dataset(self.individuals, self.networks, {'A': 250, 'B': 400})
        self.assertTrue(dataset.has_village_size)
        self.assertAlmostEqual(dataset.rows[0].size_V, 2.5)

    def test_unknown_village_size(self):
        with self.assertRaises(SurveyDataError):
            assemble_dataset(self.individuals, self.networks, {'A': 250})

    def test_complete_cases(self):
        dataset = assemble_dataset(self.individuals, self.networks)
        self.assertEqual([row.person_id for row in dataset.complete_cases('ug_category')], ['p1', 'p3'])
        with self.assertRaises(SurveyDataError):
            dataset.complete_cases('income')

    def test_without_keeps_village_overlap(self):
        dataset = assemble_dataset(self.individuals, self.networks)
        reduced = dataset.without(person_ids=['p2'])
        self.assertEqual(len(reduced), 2)
        self.assertAlmostEqual(reduced.rows[0].overlap_V, 0.3)
        self.assertEqual(reduced.metadata['excluded_person_ids'], ['p2'])
        self.assertEqual(len(dataset.without(village_ids=['A'])), 1)

    def test_json_round_trip(self):
        dataset = assemble_dataset(self.individuals, self.networks, {'A': 250, 'B': 400})
        with tempfile.TemporaryDirectory() as tmp:
            path = dataset.to_json(Path(tmp) / 'dataset.json')
            self.assertEqual(CoopDataset.from_json(path), dataset)

    def test_offer_histogram(self):
        histogram = offer_histogram(assemble_dataset(self.individuals, self.networks))
        self.assertEqual(list(histogram['offer_gyd']), [0, 100, 200, 300, 400, 500])
        self.assertEqual(histogram['dg_count'].sum(), 2)
        self.assertEqual(histogram.set_index('offer_gyd').at[500, 'ug_count'], 1)


if __name__ == '__main__':
    unittest.main()
