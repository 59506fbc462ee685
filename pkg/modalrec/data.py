"""Domain types, the dataset file format, preprocessing and splits.

A dataset file is line-delimited JSON. The first line is a header naming
the format, its version, the embedding width and the item catalog; every
following line is one user::

    {"format": "modalrec-dataset", "version": 1, "embedding_width": 32,
     "catalog": [{"id": "car", "name": "Car", "kind": "base"}, ...]}
    {"user": "u1", "owned": ["car"], "purchase": {...}, "events": [...]}
"""
import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Optional, Tuple, Union

import numpy as np

from modalrec import conf
from modalrec.exceptions import (ArtifactIOError, ConfigurationError,
                                 DatasetParseError, SchemaError)

__all__ = [
    'Action', 'WebSession', 'Sentence', 'Conversation', 'Event', 'Purchase',
    'UserRecord', 'Item', 'ItemCatalog', 'Thresholds', 'Dataset',
    'load_dataset', 'dump_dataset', 'preprocess', 'chronological_split',
    'dataset_statistics', 'SUBSETS',
]

logger = logging.getLogger(__name__)

DATASET_FORMAT = 'modalrec-dataset'
DATASET_VERSION = 1

BASE_PRODUCT = 'base'
ADDITIONAL_COVERAGE = 'coverage'

CONVERSATIONS_ONLY = 'conversations-only'
WEB_SESSIONS_ONLY = 'web-sessions-only'
INTERSECTION = 'intersection'
UNION = 'union'
SUBSETS = (UNION, CONVERSATIONS_ONLY, WEB_SESSIONS_ONLY, INTERSECTION)


@dataclass(frozen=True)
class Action:
    tags: Tuple[str, ...]

    def __post_init__(self):
        if not self.tags:
            raise SchemaError('An action needs at least one tag.')


@dataclass(frozen=True)
class WebSession:
    timestamp: datetime
    actions: Tuple[Action, ...]
    modality = 'session'


@dataclass(frozen=True)
class Sentence:
    speaker: str
    embedding: Tuple[float, ...]
    keywords: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Conversation:
    timestamp: datetime
    sentences: Tuple[Sentence, ...]
    modality = 'conversation'

    def embeddings(self):
        return np.array([s.embedding for s in self.sentences], dtype=np.float64)


Event = Union[Conversation, WebSession]


@dataclass(frozen=True)
class Purchase:
    timestamp: datetime
    items: frozenset

    def labels(self, catalog):
        return catalog.label_vector(self.items)


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    events: Tuple[Event, ...]
    purchase: Purchase
    # None when the source does not record base-product ownership
    owned: Optional[frozenset] = None

    @property
    def conversations(self):
        return tuple(e for e in self.events if isinstance(e, Conversation))

    @property
    def sessions(self):
        return tuple(e for e in self.events if isinstance(e, WebSession))

    @property
    def subset(self):
        has_conv = any(isinstance(e, Conversation) for e in self.events)
        has_sess = any(isinstance(e, WebSession) for e in self.events)
        if has_conv and has_sess:
            return INTERSECTION
        if has_conv:
            return CONVERSATIONS_ONLY
        if has_sess:
            return WEB_SESSIONS_ONLY
        return None

    def with_events(self, events):
        return replace(self, events=tuple(events))


@dataclass(frozen=True)
class Item:
    item_id: str
    name: str
    kind: str = BASE_PRODUCT
    base_of: Optional[str] = None


@dataclass(frozen=True)
class ItemCatalog:
    items: Tuple[Item, ...] = ()
    frequencies: Tuple[int, ...] = ()

    def __post_init__(self):
        ids = [item.item_id for item in self.items]
        if len(set(ids)) != len(ids):
            raise SchemaError('Duplicate item ids in the catalog.')
        for item in self.items:
            if item.kind not in (BASE_PRODUCT, ADDITIONAL_COVERAGE):
                raise SchemaError('Item "{}" has unknown kind "{}".'.format(item.item_id, item.kind))
            if item.kind == ADDITIONAL_COVERAGE:
                base = self.get(item.base_of)
                if base is None or base.kind != BASE_PRODUCT:
                    msg = 'Additional coverage "{}" references unknown base product "{}".'
                    raise SchemaError(msg.format(item.item_id, item.base_of))
        if self.frequencies and len(self.frequencies) != len(self.items):
            raise SchemaError('Catalog frequencies do not match its items.')

    def __len__(self):
        return len(self.items)

    @property
    def ids(self):
        return tuple(item.item_id for item in self.items)

    def get(self, item_id):
        for item in self.items:
            if item.item_id == item_id:
                return item
        return None

    def index(self, item_id):
        try:
            return self.ids.index(item_id)
        except ValueError:
            raise SchemaError('Unknown item "{}".'.format(item_id))

    def label_vector(self, item_ids):
        labels = np.zeros(len(self.items))
        for item_id in item_ids:
            labels[self.index(item_id)] = 1.0
        return labels

    def eligible(self, owned):
        """Boolean mask of items the owner of ``owned`` may buy.

        Unknown ownership (``None``) leaves every item eligible.
        """
        if owned is None:
            return np.ones(len(self.items), dtype=bool)
        return np.array([item.kind == BASE_PRODUCT or item.base_of in owned
                         for item in self.items], dtype=bool)

    def with_frequencies(self, records):
        counts = Counter(i for r in records for i in r.purchase.items)
        return replace(self, frequencies=tuple(counts.get(i, 0) for i in self.ids))

    def restrict(self, keep):
        kept = tuple(item for item in self.items if item.item_id in keep)
        freqs = tuple(f for item, f in zip(self.items, self.frequencies) if item.item_id in keep)
        return ItemCatalog(kept, freqs)

    def to_json(self):
        return [{'id': i.item_id, 'name': i.name, 'kind': i.kind, 'base_of': i.base_of}
                for i in self.items]

    @classmethod
    def from_json(cls, entries):
        return cls(tuple(Item(e['id'], e.get('name', e['id']), e.get('kind', BASE_PRODUCT),
                              e.get('base_of')) for e in entries))


@dataclass(frozen=True)
class Dataset:
    records: Tuple[UserRecord, ...]
    catalog: ItemCatalog
    embedding_width: int = 0

    def __len__(self):
        return len(self.records)

    def replace_records(self, records):
        return replace(self, records=tuple(records))

    def fingerprint(self):
        digest = hashlib.sha256()
        for line in _dataset_lines(self):
            digest.update(line.encode())
            digest.update(b'\n')
        return digest.hexdigest()


# -- file format -------------------------------------------------------------

def _ts(value):
    return value.isoformat()


def _event_to_json(event):
    if isinstance(event, Conversation):
        return {
            'type': 'conversation',
            'timestamp': _ts(event.timestamp),
            'sentences': [{'speaker': s.speaker, 'embedding': list(s.embedding),
                           'keywords': list(s.keywords)} for s in event.sentences],
        }
    return {
        'type': 'session',
        'timestamp': _ts(event.timestamp),
        'actions': [list(a.tags) for a in event.actions],
    }


def _record_to_json(record):
    data = {
        'user': record.user_id,
        'purchase': {'timestamp': _ts(record.purchase.timestamp),
                     'items': sorted(record.purchase.items)},
        'events': [_event_to_json(e) for e in record.events],
    }
    if record.owned is not None:
        data['owned'] = sorted(record.owned)
    return data


def _dataset_lines(dataset):
    yield json.dumps({
        'format': DATASET_FORMAT,
        'version': DATASET_VERSION,
        'embedding_width': dataset.embedding_width,
        'catalog': dataset.catalog.to_json(),
    }, sort_keys=True)
    for record in dataset.records:
        yield json.dumps(_record_to_json(record), sort_keys=True)


def dump_dataset(dataset, path):
    try:
        with open(path, 'w', encoding='utf-8') as fh:
            for line in _dataset_lines(dataset):
                fh.write(line)
                fh.write('\n')
    except OSError as exc:
        raise ArtifactIOError('Cannot write dataset "{}": {}'.format(path, exc))


def _parse_event(data, width, line):
    kind = data.get('type')
    timestamp = datetime.fromisoformat(data['timestamp'])
    if kind == 'conversation':
        sentences = []
        for s in data['sentences']:
            embedding = tuple(float(v) for v in s['embedding'])
            if len(embedding) != width:
                msg = 'line {}: embedding width {} differs from the dataset width {}.'
                raise SchemaError(msg.format(line, len(embedding), width))
            sentences.append(Sentence(s.get('speaker', 'user'), embedding, tuple(s.get('keywords', ()))))
        return Conversation(timestamp, tuple(sentences))
    if kind == 'session':
        return WebSession(timestamp, tuple(Action(tuple(tags)) for tags in data['actions']))
    raise DatasetParseError('unknown event type "{}"'.format(kind), line)


def _parse_record(data, width, catalog, line):
    purchase = Purchase(datetime.fromisoformat(data['purchase']['timestamp']),
                        frozenset(data['purchase']['items']))
    if not purchase.items:
        raise DatasetParseError('empty purchase', line)
    for item_id in purchase.items:
        if catalog.get(item_id) is None:
            raise DatasetParseError('purchase of unknown item "{}"'.format(item_id), line)
    events = tuple(_parse_event(e, width, line) for e in data.get('events', ()))
    if not events:
        raise DatasetParseError('user has no events', line)
    for prev, nxt in zip(events, events[1:]):
        if nxt.timestamp < prev.timestamp:
            raise DatasetParseError('events are not in chronological order', line)
    if events[-1].timestamp >= purchase.timestamp:
        raise DatasetParseError('an event does not precede the purchase', line)
    owned = data.get('owned')
    return UserRecord(str(data['user']), events, purchase,
                      frozenset(owned) if owned is not None else None)


def load_dataset(path):
    """Read and validate a dataset file; an empty file is an empty dataset."""
    try:
        with open(path, 'rb') as fh:
            raw_lines = list(fh)
    except OSError as exc:
        raise ArtifactIOError('Cannot read dataset "{}": {}'.format(path, exc))
    records = []
    catalog, width, header_seen = ItemCatalog(), 0, False
    for line_no, raw in enumerate(raw_lines, start=1):
        try:
            line = raw.decode('utf-8')
        except UnicodeDecodeError as exc:
            raise DatasetParseError('invalid UTF-8 ({})'.format(exc), line_no)
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except ValueError as exc:
            raise DatasetParseError('invalid JSON ({})'.format(exc), line_no)
        if not isinstance(data, dict):
            raise DatasetParseError('expected a JSON object', line_no)
        if not header_seen:
            header_seen = True
            if data.get('format') != DATASET_FORMAT:
                raise DatasetParseError('missing dataset header', line_no)
            if data.get('version') != DATASET_VERSION:
                msg = 'unsupported schema version {}'
                raise DatasetParseError(msg.format(data.get('version')), line_no)
            try:
                catalog = ItemCatalog.from_json(data.get('catalog', ()))
                width = int(data.get('embedding_width', 0))
            except (AttributeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetParseError('malformed header ({})'.format(exc), line_no)
            continue
        try:
            records.append(_parse_record(data, width, catalog, line_no))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError('malformed record ({})'.format(exc), line_no)
    dataset = Dataset(tuple(records), catalog.with_frequencies(records), width)
    logger.info('Loaded %d users and %d items from %s.', len(records), len(catalog), path)
    return dataset


# -- preprocessing -------------------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    min_item_frequency: float = 0.01
    min_sentences: int = 4
    min_actions: int = 3
    max_sentences: int = 541
    max_actions: int = 40
    inactivity: timedelta = timedelta(days=14)
    max_events: int = 10
    min_token_frequency: float = 0.001

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'min_item_frequency': conf.get('MIN_ITEM_FREQUENCY'),
            'min_sentences': conf.get('MIN_SENTENCES'),
            'min_actions': conf.get('MIN_ACTIONS'),
            'max_sentences': conf.get('MAX_SENTENCES'),
            'max_actions': conf.get('MAX_ACTIONS'),
            'inactivity': timedelta(days=conf.get('INACTIVITY_DAYS')),
            'max_events': conf.get('MAX_EVENTS'),
            'min_token_frequency': conf.get('MIN_TOKEN_FREQUENCY'),
        }
        values.update(overrides)
        return cls(**values)


@dataclass
class PreprocessReport:
    passes: int = 0
    dropped_users: int = 0
    pruned_items: list = field(default_factory=list)
    pruned_tokens: int = 0


def _collapse_duplicates(actions):
    out = []
    for action in actions:
        if not out or out[-1] != action:
            out.append(action)
    return tuple(out)


def _chain(events, purchase_time, inactivity):
    """Keep the run of events chained to the purchase by gaps <= inactivity."""
    kept = []
    boundary = purchase_time
    for event in reversed(events):
        if boundary - event.timestamp > inactivity:
            break
        kept.append(event)
        boundary = event.timestamp
    return tuple(reversed(kept))


def _rare(counter, threshold):
    total = sum(counter.values())
    return {token for token, count in counter.items() if count < threshold * total}


def _prune_tokens(records, thresholds, report):
    tag_counts = Counter(t for r in records for s in r.sessions for a in s.actions for t in a.tags)
    keyword_counts = Counter(k for r in records for c in r.conversations
                             for s in c.sentences for k in s.keywords)
    rare_tags = _rare(tag_counts, thresholds.min_token_frequency)
    rare_keywords = _rare(keyword_counts, thresholds.min_token_frequency)
    if not rare_tags and not rare_keywords:
        return records
    report.pruned_tokens += len(rare_tags) + len(rare_keywords)

    def prune(event):
        if isinstance(event, WebSession):
            actions = tuple(Action(tags) for tags in
                            (tuple(t for t in a.tags if t not in rare_tags) for a in event.actions) if tags)
            return replace(event, actions=actions)
        return replace(event, sentences=tuple(
            replace(s, keywords=tuple(k for k in s.keywords if k not in rare_keywords))
            for s in event.sentences))

    # sessions shortened here are filtered by the next pass
    return tuple(r.with_events(prune(e) for e in r.events) for r in records)


def _preprocess_pass(records, catalog, thresholds, report):
    counts = Counter(i for r in records for i in r.purchase.items)
    rare_items = _rare(counts, thresholds.min_item_frequency) | {
        i for i in catalog.ids if counts.get(i, 0) == 0}
    # a coverage cannot outlive its base product
    rare_items |= {item.item_id for item in catalog.items if item.base_of in rare_items}
    rare_items &= set(catalog.ids)
    if rare_items:
        report.pruned_items.extend(sorted(rare_items))
        catalog = catalog.restrict(set(catalog.ids) - rare_items)

    out = []
    for record in records:
        items = record.purchase.items - rare_items
        if not items:
            report.dropped_users += 1
            continue
        events = []
        for event in record.events:
            if isinstance(event, WebSession):
                actions = _collapse_duplicates(event.actions)
                if len(actions) < thresholds.min_actions:
                    continue
                events.append(replace(event, actions=actions[:thresholds.max_actions]))
            else:
                if len(event.sentences) < thresholds.min_sentences:
                    continue
                events.append(replace(event, sentences=event.sentences[:thresholds.max_sentences]))
        events = _chain(events, record.purchase.timestamp, thresholds.inactivity)
        events = events[-thresholds.max_events:]
        if not events:
            report.dropped_users += 1
            continue
        out.append(replace(record, events=events, purchase=replace(record.purchase, items=items)))
    return _prune_tokens(tuple(out), thresholds, report), catalog


def preprocess(dataset, thresholds=None, max_passes=20):
    """Apply the filtering pipeline until it reaches a fixed point.

    Each pass prunes rare items, collapses repeated actions, drops short
    conversations and sessions, truncates long ones at the end, chains
    events by the inactivity threshold, keeps the most recent events and
    prunes rare action tags and keywords. Dropping a user changes the
    frequencies, so passes repeat until nothing changes.
    """
    thresholds = thresholds or Thresholds.from_settings()
    report = PreprocessReport()
    records, catalog = tuple(dataset.records), dataset.catalog
    while report.passes < max_passes:
        report.passes += 1
        new_records, new_catalog = _preprocess_pass(records, catalog, thresholds, report)
        done = new_records == records and new_catalog.ids == catalog.ids
        records, catalog = new_records, new_catalog
        if done:
            break
    else:
        logger.warning('Preprocessing did not settle after %d passes.', max_passes)
    logger.info('Preprocessing kept %d users, dropped %d, pruned %d items and %d tokens.',
                len(records), report.dropped_users, len(set(report.pruned_items)), report.pruned_tokens)
    return Dataset(records, catalog.with_frequencies(records), dataset.embedding_width), report


# -- splits ----------------------------------------------------------------------

def chronological_split(records, test_fraction=0.1, valid_fraction=0.1):
    """Latest purchases go to test, then the latest of the rest to validation.

    Ties on the purchase timestamp keep the input order.
    """
    for name, value in (('test', test_fraction), ('validation', valid_fraction)):
        if not 0 < value < 1:
            raise ConfigurationError('The {} fraction must lie in (0, 1), it is {}.'.format(name, value))
    ordered = sorted(records, key=lambda r: r.purchase.timestamp)
    n_test = int(round(len(ordered) * test_fraction))
    rest = len(ordered) - n_test
    n_valid = int(round(rest * valid_fraction))
    n_train = rest - n_valid
    if min(n_test, n_valid, n_train) < 1:
        msg = '{} records are too few for a train/validation/test split.'
        raise ConfigurationError(msg.format(len(ordered)))
    train = tuple(ordered[:n_train])
    valid = tuple(ordered[n_train:rest])
    test = tuple(ordered[rest:])
    logger.info('Split %d records into %d train, %d validation and %d test.',
                len(ordered), len(train), len(valid), len(test))
    return train, valid, test


# -- statistics ---------------------------------------------------------------------

def _mean_std(values):
    if not values:
        return math.nan, math.nan
    return float(np.mean(values)), float(np.std(values))


def dataset_statistics(dataset):
    """Users, items, purchases, events per user and modality shares."""
    records = dataset.records
    n = len(records)
    conv_counts = [len(r.conversations) for r in records if r.conversations]
    sess_counts = [len(r.sessions) for r in records if r.sessions]
    subsets = Counter(r.subset for r in records)
    return {
        'users': n,
        'items': len(dataset.catalog),
        'purchases': sum(len(r.purchase.items) for r in records),
        'conversations': sum(conv_counts),
        'web_sessions': sum(sess_counts),
        'conversations_per_user': _mean_std(conv_counts),
        'web_sessions_per_user': _mean_std(sess_counts),
        'shares': {name: (subsets.get(name, 0) / n if n else math.nan)
                   for name in (CONVERSATIONS_ONLY, WEB_SESSIONS_ONLY, INTERSECTION)},
    }
