import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from modalrec.data import CONVERSATIONS_ONLY, INTERSECTION, WEB_SESSIONS_ONLY, Item, ItemCatalog
from modalrec.encoders import FeatureSpace, TagMap, Vocabulary
from modalrec.exceptions import ConfigurationError, ModelBundleError, TrainingError, UsageError
from modalrec.neural import LayerSpec, Network
from modalrec.recommenders import (RECOMMENDERS, Hyperparameters, Imputers,
                                   LateFusionRecommender, ModelBundle,
                                   NeutralStatistics, PopularRecommender,
                                   Predictions, build_recommender,
                                   impute_generative, impute_neutral,
                                   load_recommender, post_filter)

from testapp import builders
from testapp.builders import conversation, day, session, user


def letters_catalog(*ids):
    return ItemCatalog(tuple(Item(i, i.upper()) for i in ids))


class FixedScores(object):
    """Stands in for a trained sub-model: fixed scores for the users it knows."""

    def __init__(self, scores):
        self.scores = scores

    def predict(self, records):
        rows = [self.scores.get(r.user_id) for r in records]
        scored = np.array([row is not None for row in rows])
        width = len(next(iter(self.scores.values())))
        return Predictions(np.array([row if row is not None else [0.0] * width for row in rows]), scored)


class TestPopular(SimpleTestCase):
    def setUp(self):
        self.catalog = letters_catalog('a', 'b', 'c')
        counts = {'a': 5, 'b': 3, 'c': 2}
        self.records = [user('{}{}'.format(item, n), [session(day(n), ['x'])], {item})
                        for item, count in counts.items() for n in range(count)]
        self.model = PopularRecommender(self.catalog, None).fit(self.records)

    def test_smoothed_shares(self):
        np.testing.assert_allclose(self.model.scores, [5.5 / 11, 3.5 / 11, 2.5 / 11])

    def test_same_ranking_for_everyone(self):
        predictions = self.model.predict(self.records[:4])
        self.assertTrue(predictions.scored.all())
        for row in predictions.scores:
            self.assertEqual(list(np.argsort(-row)), [0, 1, 2])

    def test_users_without_events_are_unscored(self):
        silent = user('silent', [], {'a'}, bought=day(3))
        predictions = self.model.predict([silent, self.records[0]])
        self.assertEqual(list(predictions.scored), [False, True])
        self.assertIsNone(predictions.vector(0))
        self.assertFalse(predictions.scores[0].any())

    def test_needs_training_users(self):
        with self.assertRaises(TrainingError):
            PopularRecommender(self.catalog, None).fit([])


class TestLateFusion(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.conv_only = user('c', [builders.random_conversation(rng, day(0))], {'a'})
        self.sess_only = user('s', [builders.random_session(rng, day(0))], {'a'})
        self.both = user('b', [builders.random_conversation(rng, day(0)),
                               builders.random_session(rng, day(1))], {'a'})
        conv = FixedScores({'c': [0.9, 0.1], 'b': [0.2, 0.8]})
        sess = FixedScores({'s': [0.3, 0.7], 'b': [0.6, 0.4]})
        self.model = LateFusionRecommender(letters_catalog('a', 'b'), None, conversation=conv, session=sess)

    def test_mean_where_both_apply(self):
        predictions = self.model.predict([self.both])
        np.testing.assert_allclose(predictions.scores[0], [0.4, 0.6])

    def test_single_modality_passes_through(self):
        predictions = self.model.predict([self.conv_only, self.sess_only])
        np.testing.assert_allclose(predictions.scores, [[0.9, 0.1], [0.3, 0.7]])
        self.assertTrue(predictions.scored.all())

    def test_fit_keeps_given_sub_models(self):
        conv = self.model.conversation
        self.model.fit([], [])
        self.assertIs(self.model.conversation, conv)


class TestPostFilter(SimpleTestCase):
    def test_ineligible_items_rank_last(self):
        catalog = builders.catalog()
        rng = np.random.default_rng(11)
        owned_choices = [frozenset(), frozenset({'car'}), frozenset({'home'}), frozenset({'car', 'home'})]
        for _ in range(1000):
            scores = rng.random(len(catalog))
            owned = owned_choices[int(rng.integers(len(owned_choices)))]
            eligible = catalog.eligible(owned)
            filtered = post_filter(scores, owned, catalog).scores
            np.testing.assert_array_equal(filtered[eligible], scores[eligible])
            if (~eligible).any():
                self.assertLess(filtered[~eligible].max(), filtered[eligible].min())
                sunk = filtered[~eligible]
                self.assertTrue(np.all(np.diff(sunk) < 0))

    def test_fixed_offsets(self):
        catalog = builders.catalog()
        vector = post_filter([0.4, 0.9, 0.2, 0.7], frozenset(), catalog)
        self.assertTrue(vector.filtered)
        np.testing.assert_allclose(vector.scores, [0.4, 0.2 - 1e-6, 0.2, 0.2 - 2e-6])

    def test_unknown_ownership_changes_nothing(self):
        scores = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_array_equal(post_filter(scores, None, builders.catalog()).scores, scores)


class TestImputation(SimpleTestCase):
    def setUp(self):
        vocab = Vocabulary(('a', 'b', 'c', 'd'))
        self.features = FeatureSpace(vocab, vocab, TagMap(), 2)
        self.train = [
            user('u1', [conversation(day(0), [[1, 1], [3, 3]]), session(day(1), ['a', 'b'])], {'car'}),
            user('u2', [session(day(0), ['a'], ['b']), session(day(1), ['c'])], {'car'}),
            user('u3', [conversation(day(0), [[4, 0]]), session(day(1), ['c'])], {'car'}),
            user('u4', [session(day(0), ['d'])], {'car'}),
        ]

    def test_neutral_statistics(self):
        stats = NeutralStatistics.fit(self.train, self.features)
        np.testing.assert_allclose(stats.conversation, [3.0, 1.0])
        # (1,1,0,0) and (0,0,1,0) both occur twice; the lower encoding wins
        np.testing.assert_array_equal(stats.session, [0, 0, 1, 0])

    def test_neutral_fills_the_missing_half(self):
        stats = NeutralStatistics.fit(self.train, self.features)
        conv_only = user('x', [conversation(day(0), [[5, 5]])], {'car'})
        sess_only = user('y', [session(day(0), ['d'])], {'car'})
        inputs = impute_neutral([conv_only, sess_only], stats, self.features)
        np.testing.assert_allclose(inputs[0], [5, 5, 0, 0, 1, 0])
        np.testing.assert_allclose(inputs[1], [3, 1, 0, 0, 0, 1])

    def test_neutral_needs_both_modalities(self):
        with self.assertRaises(TrainingError):
            NeutralStatistics.fit(self.train[3:], self.features)

    def test_generative(self):
        imputers = Imputers(Network([LayerSpec('dense', 4, 2)], seed=1),
                            Network([LayerSpec('dense', 2, 4)], seed=2))
        conv_only = user('x', [conversation(day(0), [[5, 5]])], {'car'})
        sess_only = user('y', [session(day(0), ['d'], ['a'])], {'car'})
        inputs = impute_generative([conv_only, sess_only], imputers, self.features)
        np.testing.assert_allclose(inputs[0, :2], [5, 5])
        self.assertTrue(set(np.unique(inputs[0, 2:])) <= {0.0, 1.0})
        np.testing.assert_allclose(inputs[1, 2:], [1, 0, 0, 1])
        np.testing.assert_allclose(inputs[1, :2], imputers.to_conversation.logits(np.array([[1.0, 0, 0, 1]]))[0])


class TestTrainedRecommenders(SimpleTestCase):
    """Every model kind trained once on the micro dataset."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        dataset, (train, valid, test), features = builders.micro_splits()
        cls.catalog, cls.features, cls.test = dataset.catalog, features, test
        config = builders.fast_config()
        cls.models = {}
        teachers = {}
        for kind in ('conversation', 'web_session'):
            cls.models[kind] = build_recommender(kind, cls.catalog, features, train_config=config).fit(train, valid)
            teachers[kind.split('_')[-1]] = cls.models[kind]
        for kind in RECOMMENDERS:
            if kind in cls.models:
                continue
            kwargs = teachers if kind in ('late_fusion', 'knowledge_distillation') else {}
            model = build_recommender(kind, cls.catalog, features, train_config=config, **kwargs)
            cls.models[kind] = model.fit(train, valid)
        cls.tmp = tempfile.TemporaryDirectory()

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_scores_are_probabilities(self):
        for kind, model in self.models.items():
            predictions = model.predict(self.test)
            self.assertEqual(predictions.scores.shape, (len(self.test), len(self.catalog)), kind)
            scored = predictions.scores[predictions.scored]
            self.assertTrue(np.all((scored > 0) & (scored < 1)), kind)

    def test_routing(self):
        subsets = np.array([r.subset for r in self.test])
        expected = {
            'conversation': np.isin(subsets, [CONVERSATIONS_ONLY, INTERSECTION]),
            'web_session': np.isin(subsets, [WEB_SESSIONS_ONLY, INTERSECTION]),
        }
        for kind, model in self.models.items():
            scored = model.predict(self.test).scored
            np.testing.assert_array_equal(scored, expected.get(kind, np.ones(len(self.test), dtype=bool)),
                                          err_msg=kind)

    def test_knowledge_distillation_keeps_fusion_outside_the_intersection(self):
        kd, fusion = self.models['knowledge_distillation'], self.models['late_fusion']
        single = [r for r in self.test if r.subset != INTERSECTION]
        np.testing.assert_allclose(kd.predict(single).scores, fusion.predict(single).scores)
        self.assertEqual((kd.alpha, kd.beta), (0.32, 0.87))

    def test_history_is_recorded(self):
        for kind, model in self.models.items():
            if model.trainable:
                self.assertTrue(model.history, kind)
                for entry in model.history.values():
                    self.assertGreaterEqual(entry['best_epoch'], 1)
                    self.assertLessEqual(entry['epochs'], 4)

    def test_relative_representation_anchors(self):
        model = self.models['relative_representation']
        self.assertEqual(len(model.anchors), 12)
        self.assertEqual(model.network.input_width, 12)

    def test_bundle_round_trip(self):
        for kind, model in self.models.items():
            path = os.path.join(self.tmp.name, '{}.npz'.format(kind))
            model.to_bundle().save(path)
            loaded = load_recommender(path, self.catalog, self.features)
            self.assertIsInstance(loaded, RECOMMENDERS[kind])
            before, after = model.predict(self.test), loaded.predict(self.test)
            np.testing.assert_array_equal(after.scored, before.scored, err_msg=kind)
            np.testing.assert_allclose(after.scores, before.scores, rtol=1e-6, err_msg=kind)

    def test_bundle_keeps_anchor_ids(self):
        model = self.models['relative_representation']
        path = os.path.join(self.tmp.name, 'anchors.npz')
        model.to_bundle().save(path)
        self.assertEqual(ModelBundle.load(path).manifest['anchors'], list(model.anchors.user_ids))

    def test_bundle_rejects_other_features(self):
        path = os.path.join(self.tmp.name, 'keyword.npz')
        self.models['keyword'].to_bundle().save(path)
        other = builders.mixed_features(builders.mixed_users(6))
        with self.assertRaises(ModelBundleError) as cm:
            load_recommender(path, self.catalog, other)
        self.assertIn('digest mismatch', cm.exception.args[0])

    def test_bundle_of_another_kind(self):
        bundle = self.models['popular'].to_bundle()
        with self.assertRaises(ModelBundleError):
            RECOMMENDERS['keyword'].from_bundle(bundle, self.catalog, self.features)

    def test_training_is_deterministic(self):
        _, (train, valid, _), _ = builders.micro_splits()
        again = build_recommender('conversation', self.catalog, self.features,
                                  train_config=builders.fast_config()).fit(train, valid)
        np.testing.assert_array_equal(again.predict(self.test).scores,
                                      self.models['conversation'].predict(self.test).scores)


class TestBuildRecommender(SimpleTestCase):
    def test_unknown_kind(self):
        with self.assertRaises(ConfigurationError):
            build_recommender('matrix_factorization', builders.catalog(), None)

    def test_sub_models_only_for_fusion(self):
        with self.assertRaises(UsageError):
            build_recommender('keyword', builders.catalog(), None, conversation=object())

    def test_hyperparameters_from_settings(self):
        model = build_recommender('web_session', builders.catalog(), None)
        self.assertEqual(model.hyper, Hyperparameters(32, 16, 0.2))
        self.assertEqual(model.config().batch_size, 32)
        self.assertEqual(model.config().max_epochs, 30)

    def test_untrainable_kinds_have_no_hyperparameters(self):
        self.assertIsNone(build_recommender('popular', builders.catalog(), None).hyper)
        with self.assertRaises(ConfigurationError):
            Hyperparameters.for_kind('popular')

    def test_every_kind_is_registered(self):
        self.assertEqual(len(RECOMMENDERS), 10)
