import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from modalrec.encoders import (AnchorNetworks, AnchorSet, FeatureSpace, TagMap,
                               Vocabulary, build_sequence,
                               encode_conversation_avg, encode_keywords,
                               encode_session, fit_anchor_networks,
                               latent_map, make_encoder, relative_representation,
                               select_anchors)
from modalrec.exceptions import (AnchorError, EncoderError, UsageError)
from modalrec.neural import CONVERSATION, SESSION, LayerSpec, Network
from modalrec.data import Conversation

from testapp import builders
from testapp.builders import conversation, day, session, user


class TestVocabulary(SimpleTestCase):
    def test_fit_is_sorted(self):
        vocab = Vocabulary.fit(['b', 'a', 'c', 'a'])
        self.assertEqual(vocab.tokens, ('a', 'b', 'c'))
        self.assertEqual(vocab.frequencies, (2, 1, 1))

    def test_min_frequency(self):
        vocab = Vocabulary.fit(['a'] * 9 + ['b'], min_frequency=0.2)
        self.assertEqual(vocab.tokens, ('a',))

    def test_encode_ignores_unknown(self):
        vocab = Vocabulary(('a', 'b', 'c'))
        self.assertEqual(list(vocab.encode(['c', 'zzz', 'a', 'a'])), [1.0, 0.0, 1.0])

    def test_unique_tokens(self):
        with self.assertRaises(EncoderError):
            Vocabulary(('a', 'a'))


class TestTagMap(SimpleTestCase):
    def test_translate_drops_unmapped(self):
        tag_map = TagMap((('car insurance', 'section:car'), ('windshield', 'object:glass')))
        self.assertEqual(tag_map.translate(['windshield', 'hello', 'car insurance']),
                         ['object:glass', 'section:car'])

    def test_file(self):
        tag_map = TagMap((('a', 'x'), ('b', 'y')))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'map.tsv')
            tag_map.dump(path)
            self.assertEqual(TagMap.load(path), tag_map)

    def test_malformed_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'map.tsv')
            with open(path, 'w') as fh:
                fh.write('# comment\na\tx\nbroken line\n')
            with self.assertRaises(EncoderError) as cm:
                TagMap.load(path)
        self.assertIn('line 3', cm.exception.args[0])


class TestEventEncodings(SimpleTestCase):
    def test_session_is_or_of_actions(self):
        vocab = Vocabulary(('a', 'b', 'c', 'd'))
        encoded = encode_session(session(day(0), ['a', 'b'], ['b', 'd']), vocab)
        self.assertEqual(list(encoded), [1.0, 1.0, 0.0, 1.0])

    def test_conversation_average(self):
        encoded = encode_conversation_avg(conversation(day(0), [[1, 2], [3, 4], [5, 9]]))
        np.testing.assert_allclose(encoded, [3.0, 5.0])

    def test_empty_conversation(self):
        with self.assertRaises(EncoderError):
            encode_conversation_avg(Conversation(day(0), ()))

    def test_keywords_share_the_action_space(self):
        vocab = Vocabulary(('object:glass', 'section:car', 'section:home'))
        tag_map = TagMap((('windshield', 'object:glass'), ('car', 'section:car')))
        conv = conversation(day(0), [[0, 0]], keywords=['car', 'weather', 'windshield'])
        self.assertEqual(list(encode_keywords(conv, vocab, tag_map)), [1.0, 1.0, 0.0])
        sess = session(day(0), ['section:home'], ['section:car'])
        self.assertEqual(list(encode_keywords(sess, vocab, tag_map)), [0.0, 1.0, 1.0])

    def test_latent_map(self):
        params = {'W_c': np.array([[1.0, 0.0], [0.0, 2.0]]), 'b_c': np.array([0.0, -1.0]),
                  'W_s': np.array([[1.0, 1.0, 1.0]]), 'b_s': np.zeros(1)}
        np.testing.assert_allclose(latent_map(np.array([0.5, 1.0]), 'conversation', params),
                                   np.tanh([0.5, 1.0]))
        np.testing.assert_allclose(latent_map(np.array([1.0, 0.0, 1.0]), 'session', params),
                                   np.tanh([2.0]))
        with self.assertRaises(EncoderError):
            latent_map(np.zeros(2), 'phone call', params)


def anchor_nets(conv_width, sess_width, units=3, seed=0):
    def net(width, s):
        return Network([LayerSpec('dense', width, units, 'tanh'), LayerSpec('dense', units, 2)], seed=s)
    return AnchorNetworks(net(conv_width, seed), net(sess_width, seed + 1))


class TestRelativeRepresentation(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(3)
        self.features = FeatureSpace(Vocabulary(('a', 'b', 'c', 'd')), Vocabulary(('a', 'b', 'c', 'd')),
                                     TagMap(), 4)
        self.nets = anchor_nets(4, 4)
        self.anchors = AnchorSet(('x', 'y', 'z'), rng.standard_normal((3, 3)), rng.standard_normal((3, 3)))
        self.events = [builders.random_conversation(rng, day(0)), builders.random_session(rng, day(1))]

    def test_width_and_range(self):
        for event in self.events:
            sims = relative_representation(event, self.nets, self.anchors, self.features)
            self.assertEqual(sims.shape, (3,))
            self.assertTrue(np.all(np.abs(sims) <= 1.0))

    def test_anchor_scale_invariance(self):
        scaled = AnchorSet(self.anchors.user_ids, 5.0 * self.anchors.conversation,
                           0.1 * self.anchors.session)
        for event in self.events:
            np.testing.assert_allclose(
                relative_representation(event, self.nets, scaled, self.features),
                relative_representation(event, self.nets, self.anchors, self.features), atol=1e-12)

    def test_anchor_similarity_to_itself(self):
        event = self.events[0]
        latent = self.nets.latents([encode_conversation_avg(event)], 'conversation')
        anchors = AnchorSet(('self',), 2.0 * latent, self.anchors.session[:1])
        sims = relative_representation(event, self.nets, anchors, self.features)
        self.assertAlmostEqual(sims[0], 1.0)

    def test_encoder_batches_match_single_events(self):
        encoder = make_encoder('relative', self.features, self.nets, self.anchors)
        rows = encoder.encode_events(self.events)
        for row, event in zip(rows, self.events):
            np.testing.assert_allclose(row, encoder.encode_event(event))


class TestSequences(SimpleTestCase):
    def setUp(self):
        self.records = builders.mixed_users(6)
        self.features = builders.mixed_features(self.records)

    def test_keyword_encoder_keeps_every_event(self):
        encoder = make_encoder('keyword', self.features)
        for record in self.records:
            sequence = build_sequence(record, encoder)
            self.assertEqual(len(sequence), len(record.events))
            self.assertEqual(sequence.width, len(self.features.shared))
            self.assertEqual(sequence.modalities, tuple(e.modality for e in record.events))

    def test_session_only_skips_conversations(self):
        encoder = make_encoder('session-only', self.features)
        for record in self.records:
            sequence = build_sequence(record, encoder)
            if not record.sessions:
                self.assertIsNone(sequence)
            else:
                self.assertEqual(len(sequence), len(record.sessions))

    def test_conversation_only(self):
        encoder = make_encoder('conversation-only', self.features)
        record = self.records[2]
        sequence = build_sequence(record, encoder)
        self.assertEqual(sequence.modalities, ('conversation',) * len(record.conversations))
        self.assertEqual(sequence.width, 4)

    def test_latent_input_halves(self):
        encoder = make_encoder('latent', self.features)
        sequence = build_sequence(self.records[2], encoder)
        for vector, modality in zip(sequence.vectors, sequence.modalities):
            if modality == 'conversation':
                self.assertFalse(vector[4:].any())
            else:
                self.assertFalse(vector[:4].any())

    def test_last_events(self):
        events = [session(day(i), ['a'], ['b'], ['c' if i % 2 else 'd']) for i in range(5)]
        record = user('u', events, {'car'})
        encoder = make_encoder('session-only', self.features)
        sequence = build_sequence(record, encoder, last=2)
        self.assertEqual(len(sequence), 2)
        np.testing.assert_array_equal(sequence.vectors[-1], encode_session(events[-1], self.features.actions))

    def test_batch_padding(self):
        encoder = make_encoder('keyword', self.features)
        batch, scorable = encoder.batch(self.records)
        lengths = [len(r.events) for r in self.records]
        self.assertEqual(batch.x.shape, (6, max(lengths), len(self.features.shared)))
        self.assertEqual(list(batch.mask.sum(axis=1)), lengths)
        self.assertTrue(scorable.all())
        self.assertFalse(batch.x[~batch.mask].any())
        first = self.records[0].events[0]
        code = CONVERSATION if first.modality == 'conversation' else SESSION
        self.assertEqual(batch.modality[0, 0], code)

    def test_batch_marks_unencodable_users(self):
        encoder = make_encoder('session-only', self.features)
        _, scorable = encoder.batch(self.records)
        self.assertEqual(list(scorable), [bool(r.sessions) for r in self.records])

    def test_unknown_mode(self):
        with self.assertRaises(UsageError):
            make_encoder('audio', self.features)

    def test_relative_needs_anchors(self):
        with self.assertRaises(EncoderError):
            make_encoder('relative', self.features)


class TestAnchorSelection(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        dataset, (train, valid, _), features = builders.micro_splits()
        cls.train, cls.catalog, cls.features = train, dataset.catalog, features
        cls.nets = fit_anchor_networks(train, valid, features, dataset.catalog,
                                       builders.fast_config(batch_size=64), units=4)

    def test_count_and_uniqueness(self):
        anchors = select_anchors(self.train, self.nets, self.features, self.catalog, count=10, seed=1)
        self.assertEqual(len(anchors), 10)
        self.assertEqual(len(set(anchors.user_ids)), 10)
        self.assertEqual(anchors.conversation.shape, (10, 4))
        self.assertEqual(anchors.session.shape, (10, 4))

    def test_anchors_come_from_the_intersection(self):
        anchors = select_anchors(self.train, self.nets, self.features, self.catalog, count=10, seed=1)
        subsets = {r.user_id: r.subset for r in self.train}
        self.assertEqual({subsets[u] for u in anchors.user_ids}, {'intersection'})

    def test_deterministic(self):
        first = select_anchors(self.train, self.nets, self.features, self.catalog, count=8, seed=4)
        second = select_anchors(self.train, self.nets, self.features, self.catalog, count=8, seed=4)
        self.assertEqual(first.user_ids, second.user_ids)

    def test_more_than_available(self):
        usable = sum(r.subset == 'intersection' for r in self.train)
        anchors = select_anchors(self.train, self.nets, self.features, self.catalog, count=usable + 50)
        self.assertLessEqual(len(anchors), usable)

    def test_needs_intersection_users(self):
        sessions_only = [r for r in self.train if r.subset == 'web-sessions-only']
        with self.assertRaises(AnchorError):
            select_anchors(sessions_only, self.nets, self.features, self.catalog, count=4)
        with self.assertRaises(AnchorError):
            fit_anchor_networks(sessions_only, sessions_only, self.features, self.catalog,
                                builders.fast_config())
