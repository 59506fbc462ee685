"""Map events into the fixed-width vectors the networks consume."""
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from modalrec import conf
from modalrec.data import Conversation, WebSession
from modalrec.exceptions import (AnchorError, ArtifactIOError, EncoderError,
                                 UsageError)
from modalrec.neural import (CONVERSATION, SESSION, LayerSpec, Network,
                             SequenceBatch, TrainingSet, train)

__all__ = [
    'Vocabulary', 'TagMap', 'FeatureSpace', 'EncodedSequence', 'AnchorSet',
    'AnchorNetworks', 'encode_session', 'encode_conversation_avg',
    'encode_keywords', 'latent_map', 'fit_anchor_networks', 'select_anchors',
    'relative_representation', 'build_sequence', 'make_encoder',
    'ENCODER_MODES',
]

logger = logging.getLogger(__name__)

ENCODER_MODES = ('keyword', 'latent', 'relative', 'session-only', 'conversation-only')
MODALITY_CODES = {'conversation': CONVERSATION, 'session': SESSION}


def _digest(parts):
    digest = hashlib.sha256()
    for part in parts:
        digest.update(str(part).encode())
        digest.update(b'\x00')
    return digest.hexdigest()


@dataclass(frozen=True)
class Vocabulary:
    tokens: Tuple[str, ...] = ()
    frequencies: Tuple[int, ...] = ()
    index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise EncoderError('Vocabulary tokens must be unique.')
        object.__setattr__(self, 'index', {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    @classmethod
    def fit(cls, tokens, min_frequency=0.0):
        """Sorted vocabulary of tokens whose share of occurrences is high enough."""
        counts = Counter(tokens)
        total = sum(counts.values())
        kept = sorted(t for t, c in counts.items() if c >= min_frequency * total)
        return cls(tuple(kept), tuple(counts[t] for t in kept))

    def encode(self, tokens):
        vector = np.zeros(len(self.tokens))
        for token in tokens:
            position = self.index.get(token)
            if position is not None:
                vector[position] = 1.0
        return vector

    def digest(self):
        return _digest(self.tokens)


@dataclass(frozen=True)
class TagMap:
    """Keyword to shared-token map; unmapped keywords are dropped."""
    mapping: Tuple[Tuple[str, str], ...] = ()

    @property
    def lookup(self):
        return dict(self.mapping)

    @classmethod
    def identity(cls, tokens):
        return cls(tuple((t, t) for t in sorted(set(tokens))))

    @classmethod
    def load(cls, path):
        pairs = []
        try:
            with open(path, encoding='utf-8') as fh:
                for line_no, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line or line.startswith('#'):
                        continue
                    parts = line.split('\t')
                    if len(parts) != 2:
                        msg = 'Tag map "{}" line {}: expected "keyword<TAB>token".'
                        raise EncoderError(msg.format(path, line_no))
                    pairs.append((parts[0], parts[1]))
        except OSError as exc:
            raise ArtifactIOError('Cannot read tag map "{}": {}'.format(path, exc))
        return cls(tuple(sorted(pairs)))

    def dump(self, path):
        try:
            with open(path, 'w', encoding='utf-8') as fh:
                for keyword, token in self.mapping:
                    fh.write('{}\t{}\n'.format(keyword, token))
        except OSError as exc:
            raise ArtifactIOError('Cannot write tag map "{}": {}'.format(path, exc))

    def translate(self, keywords):
        lookup = self.lookup
        return [lookup[k] for k in keywords if k in lookup]

    def digest(self):
        return _digest(t for pair in self.mapping for t in pair)


def _action_tags(session):
    return [t for a in session.actions for t in a.tags]


def _keywords(conversation):
    return [k for s in conversation.sentences for k in s.keywords]


@dataclass(frozen=True)
class FeatureSpace:
    """Vocabularies fitted on the training split, shared by every encoder."""
    actions: Vocabulary
    shared: Vocabulary
    tag_map: TagMap
    embedding_width: int

    @classmethod
    def fit(cls, records, tag_map, embedding_width, min_frequency=None):
        if min_frequency is None:
            min_frequency = conf.get('MIN_TOKEN_FREQUENCY')
        tags = [t for r in records for s in r.sessions for t in _action_tags(s)]
        mapped = [t for r in records for c in r.conversations for t in tag_map.translate(_keywords(c))]
        actions = Vocabulary.fit(tags, min_frequency)
        shared = Vocabulary.fit(tags + mapped, min_frequency)
        logger.info('Fitted %d action tags and %d shared tokens.', len(actions), len(shared))
        return cls(actions, shared, tag_map, embedding_width)

    def digest(self):
        return _digest([self.actions.digest(), self.shared.digest(), self.tag_map.digest(),
                        self.embedding_width])


# -- single-event encodings ------------------------------------------------------

def encode_session(session, vocab):
    """Element-wise maximum of the binarized actions of a session."""
    return vocab.encode(_action_tags(session))


def encode_conversation_avg(conversation):
    if not conversation.sentences:
        raise EncoderError('Cannot average an empty conversation.')
    return conversation.embeddings().mean(axis=0)


def encode_keywords(event, vocab, tag_map):
    """Conversation keywords and session actions in one shared token space."""
    if isinstance(event, Conversation):
        return vocab.encode(tag_map.translate(_keywords(event)))
    return encode_session(event, vocab)


def latent_map(vector, modality, params):
    """``tanh(W_c x + b_c)`` for conversations, ``tanh(W_s x + b_s)`` for sessions."""
    if modality == 'conversation':
        W, b = params['W_c'], params.get('b_c')
    elif modality == 'session':
        W, b = params['W_s'], params.get('b_s')
    else:
        raise EncoderError('Event modality "{}" is not conversation or session.'.format(modality))
    a = W @ vector
    if b is not None:
        a = a + b
    return np.tanh(a)


# -- anchors ------------------------------------------------------------------------

@dataclass
class AnchorNetworks:
    conversation: Network
    session: Network

    def latents(self, vectors, modality):
        net = self.conversation if modality == 'conversation' else self.session
        if not len(vectors):
            return np.zeros((0, net.specs[0].output_width))
        return net.forward(np.asarray(vectors, dtype=net.dtype), until=1)[0].astype(np.float64)


@dataclass(frozen=True)
class AnchorSet:
    user_ids: Tuple[str, ...]
    conversation: np.ndarray
    session: np.ndarray

    def __len__(self):
        return len(self.user_ids)

    def latents(self, modality):
        return self.conversation if modality == 'conversation' else self.session


def _event_pairs(records, features, catalog, modality):
    xs, ys = [], []
    for record in records:
        labels = record.purchase.labels(catalog)
        for event in record.events:
            if modality == 'conversation' and isinstance(event, Conversation):
                xs.append(encode_conversation_avg(event))
                ys.append(labels)
            elif modality == 'session' and isinstance(event, WebSession):
                xs.append(encode_session(event, features.actions))
                ys.append(labels)
    return xs, ys


def _anchor_network(input_width, units, items, seed):
    return Network([
        LayerSpec('dense', input_width, units, 'tanh'),
        LayerSpec('dense', units, items),
    ], seed=seed)


def fit_anchor_networks(train_records, valid_records, features, catalog, config, units=None):
    """Train the single-event conversation and session networks.

    Each event is paired with the purchase labels of its user.
    """
    if not any(r.subset == 'intersection' for r in train_records):
        raise AnchorError('No training user has both conversations and web sessions.')
    units = units or conf.get('ANCHOR_UNITS')
    nets = {}
    for modality, width in (('conversation', features.embedding_width), ('session', len(features.actions))):
        xs, ys = _event_pairs(train_records, features, catalog, modality)
        vxs, vys = _event_pairs(valid_records, features, catalog, modality)
        if not xs or not vxs:
            raise AnchorError('No {} events to train the anchor network on.'.format(modality))
        net = _anchor_network(width, units, len(catalog), config.seed)
        train(net, TrainingSet(np.array(xs), (np.array(ys),)),
              TrainingSet(np.array(vxs), (np.array(vys),)), config)
        nets[modality] = net
    return AnchorNetworks(nets['conversation'], nets['session'])


def _recent(record, kind):
    events = [e for e in record.events if isinstance(e, kind)]
    return events[-1] if events else None


def select_anchors(train_records, nets, features, catalog, count=None, seed=0):
    """Pick anchor users from the training intersection, stratified by item.

    Every item gets ``count // J`` anchors in turn, the most purchased items
    one more until ``count`` is reached. Each anchor contributes the latent
    of its most recent conversation and most recent session.
    """
    count = count or conf.get('ANCHOR_COUNT')
    candidates = [r for r in train_records if r.subset == 'intersection']
    if not candidates:
        raise AnchorError('No intersection users in the training split.')
    rng = np.random.default_rng(seed)
    candidates = [candidates[i] for i in rng.permutation(len(candidates))]
    conv_lat = nets.latents([encode_conversation_avg(_recent(r, Conversation)) for r in candidates],
                            'conversation')
    sess_lat = nets.latents([encode_session(_recent(r, WebSession), features.actions) for r in candidates],
                            'session')
    usable = [i for i in range(len(candidates))
              if np.linalg.norm(conv_lat[i]) > 0 and np.linalg.norm(sess_lat[i]) > 0]
    if not usable:
        raise AnchorError('Every candidate anchor has a zero-norm latent vector.')
    frequencies = np.array([sum(item_id in r.purchase.items for r in train_records)
                            for item_id in catalog.ids])
    order = sorted(range(len(catalog)), key=lambda j: (-frequencies[j], j))
    quota = {j: count // len(catalog) for j in order}
    for j in order[:count % len(catalog)]:
        quota[j] += 1
    chosen, taken = [], set()
    pools = {j: [i for i in usable if catalog.ids[j] in candidates[i].purchase.items] for j in order}
    while len(chosen) < min(count, len(usable)):
        progressed = False
        for j in order:
            if quota[j] <= 0 or len(chosen) >= count:
                continue
            pool = pools[j]
            while pool and pool[0] in taken:
                pool.pop(0)
            if pool:
                index = pool.pop(0)
                chosen.append(index)
                taken.add(index)
                quota[j] -= 1
                progressed = True
        if not progressed:
            # quotas of exhausted items go to whoever is left
            for index in usable:
                if len(chosen) >= count:
                    break
                if index not in taken:
                    chosen.append(index)
                    taken.add(index)
            break
    if len(chosen) < count:
        logger.warning('Only %d anchors available, %d requested.', len(chosen), count)
    return AnchorSet(tuple(candidates[i].user_id for i in chosen),
                     conv_lat[chosen], sess_lat[chosen])


def _cosine_rows(latents, anchors):
    norms = np.linalg.norm(latents, axis=1)
    anchor_norms = np.linalg.norm(anchors, axis=1)
    zero = norms == 0
    if np.any(zero):
        logger.warning('%d event(s) have a zero-norm latent; their similarities are 0.', int(zero.sum()))
    sims = latents @ anchors.T / np.outer(np.where(zero, 1, norms), anchor_norms)
    sims[zero] = 0.0
    return np.clip(sims, -1.0, 1.0)


def relative_representation(event, nets, anchors, features):
    """Cosine similarities of an event's latent to every anchor latent."""
    if isinstance(event, Conversation):
        latent = nets.latents([encode_conversation_avg(event)], 'conversation')
        return _cosine_rows(latent, anchors.conversation)[0]
    latent = nets.latents([encode_session(event, features.actions)], 'session')
    return _cosine_rows(latent, anchors.session)[0]


# -- sequences --------------------------------------------------------------------------

@dataclass(frozen=True)
class EncodedSequence:
    vectors: np.ndarray
    modalities: Tuple[str, ...]

    def __len__(self):
        return len(self.modalities)

    @property
    def width(self):
        return self.vectors.shape[1]


class SequenceEncoder:
    """Encodes the events of a user that its mode can represent."""
    mode = None
    accepts = (Conversation, WebSession)

    def __init__(self, features):
        self.features = features

    @property
    def width(self):
        raise NotImplementedError()

    def encode_event(self, event):
        raise NotImplementedError()

    def encode_events(self, events):
        if not events:
            return np.zeros((0, self.width))
        return np.stack([self.encode_event(e) for e in events])

    def events(self, record, last=None):
        events = [e for e in record.events if isinstance(e, self.accepts)]
        if last is not None:
            events = events[-last:]
        return events

    def build_sequence(self, record, last=None):
        events = self.events(record, last)
        if not events:
            return None
        return EncodedSequence(self.encode_events(events), tuple(e.modality for e in events))

    def batch(self, records, last=None):
        """Pad the users into a SequenceBatch; also returns the scorable mask."""
        per_user = [self.events(r, last) for r in records]
        steps = max([len(e) for e in per_user] + [1])
        flat = [e for events in per_user for e in events]
        vectors = self.encode_events(flat)
        x = np.zeros((len(records), steps, self.width))
        mask = np.zeros((len(records), steps), dtype=bool)
        modality = np.zeros((len(records), steps), dtype=np.int8)
        offset = 0
        for row, events in enumerate(per_user):
            for step, event in enumerate(events):
                x[row, step] = vectors[offset]
                mask[row, step] = True
                modality[row, step] = MODALITY_CODES[event.modality]
                offset += 1
        return SequenceBatch(x, mask, modality), mask.any(axis=1)


class KeywordEncoder(SequenceEncoder):
    mode = 'keyword'

    @property
    def width(self):
        return len(self.features.shared)

    def encode_event(self, event):
        return encode_keywords(event, self.features.shared, self.features.tag_map)


class LatentInputEncoder(SequenceEncoder):
    """Conversation averages and session encodings side by side.

    The unused half of each vector is zero; the latent layer picks its
    weights by the modality code.
    """
    mode = 'latent'

    @property
    def split(self):
        return self.features.embedding_width

    @property
    def width(self):
        return self.features.embedding_width + len(self.features.actions)

    def encode_event(self, event):
        vector = np.zeros(self.width)
        if isinstance(event, Conversation):
            vector[:self.split] = encode_conversation_avg(event)
        else:
            vector[self.split:] = encode_session(event, self.features.actions)
        return vector


class SessionEncoder(SequenceEncoder):
    mode = 'session-only'
    accepts = (WebSession,)

    @property
    def width(self):
        return len(self.features.actions)

    def encode_event(self, event):
        return encode_session(event, self.features.actions)


class ConversationEncoder(SequenceEncoder):
    mode = 'conversation-only'
    accepts = (Conversation,)

    @property
    def width(self):
        return self.features.embedding_width

    def encode_event(self, event):
        return encode_conversation_avg(event)


class RelativeEncoder(SequenceEncoder):
    mode = 'relative'

    def __init__(self, features, nets, anchors):
        super().__init__(features)
        self.nets = nets
        self.anchors = anchors

    @property
    def width(self):
        return len(self.anchors)

    def encode_event(self, event):
        return relative_representation(event, self.nets, self.anchors, self.features)

    def encode_events(self, events):
        out = np.zeros((len(events), self.width))
        convs = [i for i, e in enumerate(events) if isinstance(e, Conversation)]
        sess = [i for i, e in enumerate(events) if isinstance(e, WebSession)]
        if convs:
            lat = self.nets.latents([encode_conversation_avg(events[i]) for i in convs], 'conversation')
            out[convs] = _cosine_rows(lat, self.anchors.conversation)
        if sess:
            lat = self.nets.latents([encode_session(events[i], self.features.actions) for i in sess], 'session')
            out[sess] = _cosine_rows(lat, self.anchors.session)
        return out


def make_encoder(mode, features, nets=None, anchors=None):
    if mode == 'keyword':
        return KeywordEncoder(features)
    if mode == 'latent':
        return LatentInputEncoder(features)
    if mode == 'session-only':
        return SessionEncoder(features)
    if mode == 'conversation-only':
        return ConversationEncoder(features)
    if mode == 'relative':
        if nets is None or anchors is None:
            raise EncoderError('The relative encoder needs fitted anchor networks and anchors.')
        return RelativeEncoder(features, nets, anchors)
    raise UsageError('Unknown encoder mode "{}".'.format(mode))


def build_sequence(record, encoder, last=None):
    """The user's encodable events in time order, or None when there are none."""
    return encoder.build_sequence(record, last)
