"""The recommenders, their routing over available modalities, and bundles.

Every recommender scores a batch of users at once and says which of them
it can score. A recommender round-trips through a ``ModelBundle``, which
is what gets written to disk.
"""
import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from modalrec import conf
from modalrec.encoders import (AnchorNetworks, AnchorSet, encode_conversation_avg,
                               encode_session, fit_anchor_networks,
                               make_encoder, select_anchors)
from modalrec.exceptions import (ConfigurationError, ModelBundleError,
                                 TrainingError, UsageError)
from modalrec.neural import (LayerSpec, MultiLabelObjective, Network,
                             SquaredErrorObjective, TrainConfig, TrainingSet,
                             load_checkpoint, save_checkpoint, train)

__all__ = [
    'Hyperparameters', 'Predictions', 'PredictionVector', 'ModelBundle',
    'PopularRecommender', 'ConversationRecommender', 'WebSessionRecommender',
    'LateFusionRecommender', 'KnowledgeDistillationRecommender',
    'GenerativeImputationRecommender', 'NeutralImputationRecommender',
    'SequenceRecommender', 'post_filter', 'impute_neutral',
    'impute_generative', 'build_recommender', 'RECOMMENDERS',
]

logger = logging.getLogger(__name__)

ROUTE_ALL = 'all'
ROUTE_CONVERSATIONS = 'conversations'
ROUTE_SESSIONS = 'sessions'


@dataclass(frozen=True)
class Hyperparameters:
    batch_size: int
    units: int
    dropout: float

    @classmethod
    def for_kind(cls, kind):
        return cls(*conf.hyperparameters(kind))


@dataclass(frozen=True)
class PredictionVector:
    scores: np.ndarray
    filtered: bool = False


@dataclass
class Predictions:
    """Scores for a batch of users; rows with ``scored`` False carry zeros."""
    scores: np.ndarray
    scored: np.ndarray

    def __len__(self):
        return len(self.scored)

    def vector(self, row):
        if not self.scored[row]:
            return None
        return PredictionVector(self.scores[row])


def _routes(routing, record):
    subset = record.subset
    if routing == ROUTE_ALL:
        return subset is not None
    if routing == ROUTE_CONVERSATIONS:
        return subset in ('conversations-only', 'intersection')
    if routing == ROUTE_SESSIONS:
        return subset in ('web-sessions-only', 'intersection')
    return subset == 'intersection'


def conversation_aggregate(record):
    convs = record.conversations
    if not convs:
        return None
    return np.mean([encode_conversation_avg(c) for c in convs], axis=0)


def session_aggregate(record, vocab):
    sessions = record.sessions
    if not sessions:
        return None
    return np.max([encode_session(s, vocab) for s in sessions], axis=0)


def _labels(records, catalog):
    if not records:
        return np.zeros((0, len(catalog)))
    return np.stack([r.purchase.labels(catalog) for r in records])


def _flat_net(input_width, hyper, items, seed, output_activation='identity'):
    return Network([
        LayerSpec('dense', input_width, hyper.units, 'relu', dropout=hyper.dropout),
        LayerSpec('dense', hyper.units, hyper.units, 'relu'),
        LayerSpec('dense', hyper.units, items, output_activation),
    ], seed=seed)


@dataclass
class ModelBundle:
    """Everything needed to rebuild a trained recommender."""
    kind: str
    encoder_mode: str
    routing: str
    networks: dict = field(default_factory=OrderedDict)
    arrays: dict = field(default_factory=OrderedDict)
    metadata: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def save(self, path):
        params = OrderedDict()
        for name, network in self.networks.items():
            for pname, value in network.params.items():
                params['{}/{}'.format(name, pname)] = value
        for name, value in self.arrays.items():
            params['arrays/{}'.format(name)] = np.asarray(value)
        header = {
            'kind': self.kind,
            'encoder_mode': self.encoder_mode,
            'routing': self.routing,
            'networks': {name: {'layers': net.config(), 'dtype': str(net.dtype)}
                         for name, net in self.networks.items()},
            'metadata': self.metadata,
            'manifest': self.manifest,
        }
        save_checkpoint(path, params, header)

    @classmethod
    def load(cls, path, features=None):
        params, header = load_checkpoint(path)
        manifest = header.get('manifest', {})
        if features is not None and manifest.get('features') != features.digest():
            msg = 'Bundle "{}" was trained with different encoders (feature digest mismatch).'
            raise ModelBundleError(msg.format(path))
        networks = OrderedDict()
        for name, spec in header['networks'].items():
            prefix = name + '/'
            net_params = OrderedDict((k[len(prefix):], v) for k, v in params.items() if k.startswith(prefix))
            networks[name] = Network(spec['layers'], params=net_params, dtype=spec['dtype'])
        arrays = OrderedDict((k[len('arrays/'):], v) for k, v in params.items() if k.startswith('arrays/'))
        return cls(header['kind'], header['encoder_mode'], header['routing'], networks, arrays,
                   header.get('metadata', {}), manifest)


class Recommender:
    kind = None
    encoder_mode = None
    routing = ROUTE_ALL

    def __init__(self, catalog, features, hyper=None, seed=0, train_config=None):
        self.catalog = catalog
        self.features = features
        if hyper is None and self.trainable:
            hyper = Hyperparameters.for_kind(self.kind)
        self.hyper = hyper
        self.seed = seed
        self.train_config = train_config
        self.history = {}

    @property
    def trainable(self):
        return self.kind not in ('popular', 'late_fusion')

    @property
    def items(self):
        return len(self.catalog)

    def config(self, **overrides):
        """Training settings: the app defaults, this model's batch size and seed."""
        values = {'seed': self.seed}
        if self.hyper is not None:
            values['batch_size'] = self.hyper.batch_size
        values.update(overrides)
        if self.train_config is None:
            return TrainConfig.from_settings(**values)
        return replace(self.train_config, **values)

    def routes(self, record):
        return _routes(self.routing, record)

    def _split_routed(self, records):
        return [r for r in records if self.routes(r)]

    def fit(self, train_records, valid_records):
        raise NotImplementedError()

    def predict(self, records):
        raise NotImplementedError()

    def _empty(self, records):
        return Predictions(np.zeros((len(records), self.items)), np.zeros(len(records), dtype=bool))

    def _record_history(self, name, result):
        self.history[name] = {
            'best_epoch': result.best_epoch,
            'epochs': len(result.epochs),
            'best_valid_loss': float(result.best_valid_loss),
        }

    # bundles
    def _state(self):
        return OrderedDict(), OrderedDict()

    def _restore(self, networks, arrays, bundle):
        raise NotImplementedError()

    def to_bundle(self):
        networks, arrays = self._state()
        metadata = {'seed': self.seed, 'history': self.history}
        if self.hyper is not None:
            metadata['hyperparameters'] = self.hyper.__dict__
        return ModelBundle(self.kind, self.encoder_mode, self.routing, networks, arrays, metadata,
                           {'features': self.features.digest(), 'tag_map': self.features.tag_map.digest()})

    @classmethod
    def from_bundle(cls, bundle, catalog, features):
        if bundle.kind != cls.kind:
            msg = 'Bundle holds a "{}" model, not "{}".'
            raise ModelBundleError(msg.format(bundle.kind, cls.kind))
        hyper = bundle.metadata.get('hyperparameters')
        recommender = cls(catalog, features, Hyperparameters(**hyper) if hyper else None,
                          seed=bundle.metadata.get('seed', 0))
        recommender.history = bundle.metadata.get('history', {})
        recommender._restore(bundle.networks, bundle.arrays, bundle)
        return recommender


class PopularRecommender(Recommender):
    """The same purchase-count ranking for everyone."""
    kind = 'popular'

    def fit(self, train_records, valid_records=None):
        if not train_records:
            raise TrainingError('Popular needs a non-empty training split.')
        counts = _labels(train_records, self.catalog).sum(axis=0)
        self.scores = (counts + 0.5) / (counts.sum() + 1)
        return self

    def predict(self, records):
        scored = np.array([self.routes(r) for r in records], dtype=bool)
        scores = np.tile(self.scores, (len(records), 1)) * scored[:, None]
        return Predictions(scores, scored)

    def _state(self):
        return OrderedDict(), OrderedDict(scores=self.scores)

    def _restore(self, networks, arrays, bundle):
        self.scores = arrays['scores']


class ConversationRecommender(Recommender):
    """Dense classifier on a user's averaged conversation embeddings."""
    kind = 'conversation'
    encoder_mode = 'conversation-only'
    routing = ROUTE_CONVERSATIONS

    def inputs(self, records):
        return np.array([conversation_aggregate(r) for r in records]).reshape(len(records), -1)

    def fit(self, train_records, valid_records):
        train_records = self._split_routed(train_records)
        valid_records = self._split_routed(valid_records)
        if not train_records or not valid_records:
            raise TrainingError('No users with conversations to train the conversation model on.')
        self.network = _flat_net(self.features.embedding_width, self.hyper, self.items, self.seed)
        result = train(self.network,
                       TrainingSet(self.inputs(train_records), (_labels(train_records, self.catalog),)),
                       TrainingSet(self.inputs(valid_records), (_labels(valid_records, self.catalog),)),
                       self.config())
        self._record_history('network', result)
        return self

    def predict(self, records):
        out = self._empty(records)
        rows = [i for i, r in enumerate(records) if self.routes(r)]
        if rows:
            out.scores[rows] = self.network.predict(self.inputs([records[i] for i in rows]))
            out.scored[rows] = True
        return out

    def _state(self):
        return OrderedDict(network=self.network), OrderedDict()

    def _restore(self, networks, arrays, bundle):
        self.network = networks['network']


def _sequence_net(input_width, hyper, items, seed, latent_split=0):
    layers = []
    width = input_width
    dropout = hyper.dropout
    if latent_split:
        layers.append(LayerSpec('latent', input_width, hyper.units, 'tanh', dropout=dropout, split=latent_split))
        width, dropout = hyper.units, 0.0
    layers += [
        LayerSpec('gru', width, hyper.units, 'tanh', dropout=dropout),
        LayerSpec('dense', hyper.units, hyper.units, 'relu'),
        LayerSpec('dense', hyper.units, items),
    ]
    return Network(layers, seed=seed)


class SequenceRecommender(Recommender):
    """GRU over per-event vectors, then a dense ReLU layer and the output.

    Keyword, Latent Feature and Relative Representation differ only in
    the encoder; Latent Feature also learns the modality-specific input
    map in front of the GRU.
    """

    def encoder(self):
        return make_encoder(self.encoder_mode, self.features,
                            getattr(self, 'anchor_nets', None), getattr(self, 'anchors', None))

    def _prepare(self, train_records, valid_records):
        pass

    def _network(self, encoder):
        split = encoder.split if self.encoder_mode == 'latent' else 0
        return _sequence_net(encoder.width, self.hyper, self.items, self.seed, split)

    def fit(self, train_records, valid_records):
        train_records = self._split_routed(train_records)
        valid_records = self._split_routed(valid_records)
        if not train_records or not valid_records:
            raise TrainingError('No users to train the "{}" model on.'.format(self.kind))
        self._prepare(train_records, valid_records)
        encoder = self.encoder()
        train_batch, _ = encoder.batch(train_records)
        valid_batch, _ = encoder.batch(valid_records)
        self.network = self._network(encoder)
        result = train(self.network,
                       TrainingSet(train_batch, (_labels(train_records, self.catalog),)),
                       TrainingSet(valid_batch, (_labels(valid_records, self.catalog),)),
                       self.config())
        self._record_history('network', result)
        return self

    def predict(self, records):
        out = self._empty(records)
        rows = [i for i, r in enumerate(records) if self.routes(r)]
        if not rows:
            return out
        batch, scorable = self.encoder().batch([records[i] for i in rows])
        keep = np.flatnonzero(scorable)
        if len(keep):
            probs = self.network.predict(batch.take(keep))
            rows = np.asarray(rows)[keep]
            out.scores[rows] = probs
            out.scored[rows] = True
        return out

    def _state(self):
        return OrderedDict(network=self.network), OrderedDict()

    def _restore(self, networks, arrays, bundle):
        self.network = networks['network']


class WebSessionRecommender(SequenceRecommender):
    """Session-based model: GRU over max-pooled web sessions."""
    kind = 'web_session'
    encoder_mode = 'session-only'
    routing = ROUTE_SESSIONS


class KeywordRecommender(SequenceRecommender):
    kind = 'keyword'
    encoder_mode = 'keyword'


class LatentFeatureRecommender(SequenceRecommender):
    kind = 'latent_feature'
    encoder_mode = 'latent'


class RelativeRepresentationRecommender(SequenceRecommender):
    kind = 'relative_representation'
    encoder_mode = 'relative'

    def _prepare(self, train_records, valid_records):
        config = self.config()
        self.anchor_nets = fit_anchor_networks(train_records, valid_records, self.features,
                                               self.catalog, config)
        self.anchors = select_anchors(train_records, self.anchor_nets, self.features,
                                      self.catalog, seed=self.seed)

    def _state(self):
        networks, arrays = super()._state()
        networks['anchor_conversation'] = self.anchor_nets.conversation
        networks['anchor_session'] = self.anchor_nets.session
        arrays['anchor_conversation'] = self.anchors.conversation
        arrays['anchor_session'] = self.anchors.session
        return networks, arrays

    def to_bundle(self):
        bundle = super().to_bundle()
        bundle.manifest['anchors'] = list(self.anchors.user_ids)
        return bundle

    def _restore(self, networks, arrays, bundle):
        super()._restore(networks, arrays, bundle)
        self.anchor_nets = AnchorNetworks(networks['anchor_conversation'], networks['anchor_session'])
        self.anchors = AnchorSet(tuple(bundle.manifest.get('anchors', ())),
                                 arrays['anchor_conversation'], arrays['anchor_session'])


class LateFusionRecommender(Recommender):
    """Average of the conversation and web session models where both apply."""
    kind = 'late_fusion'

    def __init__(self, catalog, features, hyper=None, seed=0, train_config=None,
                 conversation=None, session=None):
        super().__init__(catalog, features, hyper, seed, train_config)
        self.conversation = conversation
        self.session = session

    def _teachers(self, train_records, valid_records):
        if self.conversation is None:
            self.conversation = ConversationRecommender(
                self.catalog, self.features, seed=self.seed, train_config=self.train_config,
            ).fit(train_records, valid_records)
        if self.session is None:
            self.session = WebSessionRecommender(
                self.catalog, self.features, seed=self.seed, train_config=self.train_config,
            ).fit(train_records, valid_records)

    def fit(self, train_records, valid_records):
        self._teachers(train_records, valid_records)
        return self

    def predict(self, records):
        conv = self.conversation.predict(records)
        sess = self.session.predict(records)
        both = conv.scored & sess.scored
        scores = np.where(conv.scored[:, None], conv.scores, sess.scores)
        scores[both] = (conv.scores[both] + sess.scores[both]) / 2
        return Predictions(scores, conv.scored | sess.scored)

    def _state(self):
        networks, arrays = OrderedDict(), OrderedDict()
        networks['conversation'] = self.conversation.network
        networks['session'] = self.session.network
        return networks, arrays

    def _restore(self, networks, arrays, bundle):
        self.conversation = ConversationRecommender(self.catalog, self.features, seed=self.seed)
        self.conversation.network = networks['conversation']
        self.session = WebSessionRecommender(self.catalog, self.features, seed=self.seed)
        self.session.network = networks['session']


class KnowledgeDistillationRecommender(LateFusionRecommender):
    """Joint student on intersection users, taught by the two single-modality models.

    Loss = BCE(labels) + alpha * BCE(conversation teacher) + beta * BCE(session teacher).
    """
    kind = 'knowledge_distillation'

    def __init__(self, *args, alpha=None, beta=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.alpha = conf.get('KD_ALPHA') if alpha is None else alpha
        self.beta = conf.get('KD_BETA') if beta is None else beta

    def inputs(self, records):
        vocab = self.features.actions
        return np.array([np.concatenate([conversation_aggregate(r), session_aggregate(r, vocab)])
                         for r in records]).reshape(len(records), -1)

    def _training_set(self, records):
        return TrainingSet(self.inputs(records), (
            _labels(records, self.catalog),
            self.conversation.predict(records).scores,
            self.session.predict(records).scores,
        ))

    def fit(self, train_records, valid_records):
        self._teachers(train_records, valid_records)
        train_both = [r for r in train_records if r.subset == 'intersection']
        valid_both = [r for r in valid_records if r.subset == 'intersection']
        if not train_both or not valid_both:
            raise TrainingError('Knowledge distillation needs intersection users in train and validation.')
        width = self.features.embedding_width + len(self.features.actions)
        self.student = _flat_net(width, self.hyper, self.items, self.seed)
        objective = MultiLabelObjective((1.0, self.alpha, self.beta))
        result = train(self.student, self._training_set(train_both), self._training_set(valid_both),
                       self.config(), objective)
        self._record_history('student', result)
        return self

    def predict(self, records):
        out = super().predict(records)
        rows = [i for i, r in enumerate(records) if r.subset == 'intersection']
        if rows:
            out.scores[rows] = self.student.predict(self.inputs([records[i] for i in rows]))
        return out

    def _state(self):
        networks, arrays = super()._state()
        networks['student'] = self.student
        arrays['weights'] = np.array([self.alpha, self.beta])
        return networks, arrays

    def _restore(self, networks, arrays, bundle):
        super()._restore(networks, arrays, bundle)
        self.student = networks['student']
        self.alpha, self.beta = (float(v) for v in arrays['weights'])


# -- imputation ---------------------------------------------------------------------

@dataclass(frozen=True)
class NeutralStatistics:
    conversation: np.ndarray
    session: np.ndarray

    @classmethod
    def fit(cls, train_records, features):
        convs = [encode_conversation_avg(c) for r in train_records for c in r.conversations]
        sessions = Counter(tuple(int(v) for v in encode_session(s, features.actions))
                           for r in train_records for s in r.sessions)
        if not convs or not sessions:
            raise TrainingError('Neutral imputation needs both modalities in the training split.')
        # most frequent session; ties go to the lexicographically lowest encoding
        top = min(sessions.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        return cls(np.mean(convs, axis=0), np.array(top, dtype=np.float64))


def _aggregates(records, features):
    conv = [conversation_aggregate(r) for r in records]
    sess = [session_aggregate(r, features.actions) for r in records]
    return conv, sess


def impute_neutral(records, stats, features):
    """Joint inputs with missing modalities filled by training statistics."""
    conv, sess = _aggregates(records, features)
    conv = [stats.conversation if c is None else c for c in conv]
    sess = [stats.session if s is None else s for s in sess]
    return np.hstack([np.array(conv).reshape(len(records), -1), np.array(sess).reshape(len(records), -1)])


@dataclass
class Imputers:
    to_conversation: Network
    to_session: Network


def impute_generative(records, imputers, features):
    """Joint inputs with missing modalities generated from the other one.

    Generated sessions are thresholded at 0.5.
    """
    conv, sess = _aggregates(records, features)
    missing_conv = [i for i, c in enumerate(conv) if c is None]
    missing_sess = [i for i, s in enumerate(sess) if s is None]
    if missing_conv:
        generated = imputers.to_conversation.logits(np.array([sess[i] for i in missing_conv]))
        for i, row in zip(missing_conv, generated):
            conv[i] = row.astype(np.float64)
    if missing_sess:
        generated = imputers.to_session.predict(np.array([conv[i] for i in missing_sess]))
        for i, row in zip(missing_sess, generated):
            sess[i] = (row >= 0.5).astype(np.float64)
    return np.hstack([np.array(conv).reshape(len(records), -1), np.array(sess).reshape(len(records), -1)])


class _JointRecommender(Recommender):
    """Concatenated conversation and session inputs after imputation."""

    def joint_inputs(self, records):
        raise NotImplementedError()

    def _fit_imputation(self, train_records, valid_records):
        raise NotImplementedError()

    def fit(self, train_records, valid_records):
        train_records = self._split_routed(train_records)
        valid_records = self._split_routed(valid_records)
        if not train_records or not valid_records:
            raise TrainingError('No users to train the "{}" model on.'.format(self.kind))
        self._fit_imputation(train_records, valid_records)
        width = self.features.embedding_width + len(self.features.actions)
        self.network = _flat_net(width, self.hyper, self.items, self.seed)
        result = train(self.network,
                       TrainingSet(self.joint_inputs(train_records), (_labels(train_records, self.catalog),)),
                       TrainingSet(self.joint_inputs(valid_records), (_labels(valid_records, self.catalog),)),
                       self.config())
        self._record_history('network', result)
        return self

    def predict(self, records):
        out = self._empty(records)
        rows = [i for i, r in enumerate(records) if self.routes(r)]
        if rows:
            out.scores[rows] = self.network.predict(self.joint_inputs([records[i] for i in rows]))
            out.scored[rows] = True
        return out


class NeutralImputationRecommender(_JointRecommender):
    kind = 'neutral_imputation'

    def _fit_imputation(self, train_records, valid_records):
        self.stats = NeutralStatistics.fit(train_records, self.features)

    def joint_inputs(self, records):
        return impute_neutral(records, self.stats, self.features)

    def _state(self):
        return (OrderedDict(network=self.network),
                OrderedDict(neutral_conversation=self.stats.conversation, neutral_session=self.stats.session))

    def _restore(self, networks, arrays, bundle):
        self.network = networks['network']
        self.stats = NeutralStatistics(arrays['neutral_conversation'], arrays['neutral_session'])


class GenerativeImputationRecommender(_JointRecommender):
    """Feed-forward regressors generate the missing modality from the other one."""
    kind = 'generative_imputation'

    def _fit_imputation(self, train_records, valid_records):
        train_both = [r for r in train_records if r.subset == 'intersection']
        valid_both = [r for r in valid_records if r.subset == 'intersection']
        if not train_both or not valid_both:
            raise TrainingError('Generative imputation needs intersection users in train and validation.')
        if len(train_both) < conf.get('MIN_IMPUTER_USERS'):
            logger.warning('Only %d intersection users to train the imputers on.', len(train_both))
        d, v = self.features.embedding_width, len(self.features.actions)
        conv_t, sess_t = (np.array(a) for a in _aggregates(train_both, self.features))
        conv_v, sess_v = (np.array(a) for a in _aggregates(valid_both, self.features))
        config = self.config()
        to_conv = _flat_net(v, self.hyper, d, self.seed)
        result = train(to_conv, TrainingSet(sess_t, (conv_t,)), TrainingSet(sess_v, (conv_v,)),
                       config, SquaredErrorObjective())
        self._record_history('to_conversation', result)
        to_sess = _flat_net(d, self.hyper, v, self.seed + 1)
        result = train(to_sess, TrainingSet(conv_t, (sess_t,)), TrainingSet(conv_v, (sess_v,)), config)
        self._record_history('to_session', result)
        self.imputers = Imputers(to_conv, to_sess)

    def joint_inputs(self, records):
        return impute_generative(records, self.imputers, self.features)

    def _state(self):
        return (OrderedDict(network=self.network, to_conversation=self.imputers.to_conversation,
                            to_session=self.imputers.to_session), OrderedDict())

    def _restore(self, networks, arrays, bundle):
        self.network = networks['network']
        self.imputers = Imputers(networks['to_conversation'], networks['to_session'])


# -- post filter -------------------------------------------------------------------

def post_filter(scores, owned, catalog, delta=1e-6):
    """Sink coverages whose base product the user does not own.

    The k-th ineligible item (in catalog order) gets ``min(scores) - k * delta``,
    so filtered items rank last, in a fixed order, below every eligible item.
    """
    scores = np.asarray(scores, dtype=np.float64)
    eligible = catalog.eligible(owned)
    if eligible.all():
        return PredictionVector(scores.copy(), filtered=True)
    out = scores.copy()
    floor = scores.min()
    for k, j in enumerate(np.flatnonzero(~eligible), start=1):
        out[j] = floor - k * delta
    return PredictionVector(out, filtered=True)


RECOMMENDERS = OrderedDict((cls.kind, cls) for cls in (
    PopularRecommender,
    ConversationRecommender,
    WebSessionRecommender,
    LateFusionRecommender,
    KnowledgeDistillationRecommender,
    GenerativeImputationRecommender,
    NeutralImputationRecommender,
    KeywordRecommender,
    LatentFeatureRecommender,
    RelativeRepresentationRecommender,
))


def build_recommender(kind, catalog, features, hyper=None, seed=0, train_config=None, **kwargs):
    try:
        cls = RECOMMENDERS[kind]
    except KeyError:
        raise ConfigurationError('Unknown model kind "{}".'.format(kind))
    if kwargs and not issubclass(cls, LateFusionRecommender):
        raise UsageError('Only fusion models take pre-trained sub-models.')
    return cls(catalog, features, hyper, seed, train_config, **kwargs)


def load_recommender(path, catalog, features):
    bundle = ModelBundle.load(path, features)
    try:
        cls = RECOMMENDERS[bundle.kind]
    except KeyError:
        raise ModelBundleError('Bundle "{}" holds unknown model kind "{}".'.format(path, bundle.kind))
    return cls.from_bundle(bundle, catalog, features)
