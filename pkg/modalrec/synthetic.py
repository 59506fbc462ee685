"""Synthetic datasets matching the shape of the real one.

Every user has a latent intent: a product family and a member of it (the
base product or one of its coverages). Web sessions mostly reveal the
family. Conversations mostly reveal a member code that can only be
decoded together with the family, so users seen through both modalities
carry signal neither modality has alone. Older events are noisier and
sometimes about a different family, which makes event order informative.
"""
import configparser
import logging
from dataclasses import dataclass, fields
from datetime import datetime, timedelta

import numpy as np

from modalrec.data import (ADDITIONAL_COVERAGE, BASE_PRODUCT, Action,
                           Conversation, Dataset, Item, ItemCatalog, Purchase,
                           Sentence, UserRecord, WebSession)
from modalrec.encoders import TagMap
from modalrec.exceptions import ArtifactIOError, ConfigurationError

__all__ = ['GeneratorConfig', 'generate_synthetic', 'synthetic_tag_map']

logger = logging.getLogger(__name__)

SECTIONS_GENERIC = ('home', 'account', 'claims', 'contact', 'documents', 'payments')
INTERACTIONS = ('view', 'click', 'download', 'submit', 'calculate')
DOCUMENTS = 12
TOPICS = 20


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 10000
    n_base_products: int = 8
    coverages_per_base: int = 2
    embedding_width: int = 32
    share_conversations_only: float = 0.13
    share_web_only: float = 0.68
    share_both: float = 0.19
    conversation_mean: float = 1.38
    conversation_std: float = 0.82
    session_mean: float = 2.3
    session_std: float = 1.98
    max_events: int = 10
    owned_probability: float = 0.35
    second_item_probability: float = 0.2
    popularity_exponent: float = 0.6
    base_weight: float = 0.5
    session_family_signal: float = 0.6
    session_member_signal: float = 0.2
    conversation_family_signal: float = 0.35
    conversation_code_signal: float = 0.9
    embedding_noise: float = 2.0
    keyword_signal: float = 0.5
    recency_floor: float = 0.3
    distractor_rate: float = 0.6
    mean_extra_actions: float = 4.0
    mean_extra_sentences: float = 5.0
    min_actions: int = 3
    min_sentences: int = 4
    span_days: int = 730
    start: str = '2021-01-01'

    def __post_init__(self):
        shares = (self.share_conversations_only, self.share_web_only, self.share_both)
        if any(s < 0 for s in shares) or abs(sum(shares) - 1) > 1e-6:
            msg = 'Modality shares must be non-negative and sum to 1, they sum to {}.'
            raise ConfigurationError(msg.format(sum(shares)))
        if self.n_users < 1 or self.n_base_products < 1 or self.coverages_per_base < 0:
            raise ConfigurationError('Generator sizes must be positive.')
        if self.max_events < 1 or self.embedding_width < 1:
            raise ConfigurationError('max_events and embedding_width must be positive.')
        if self.conversation_mean < 1 or self.session_mean < 1:
            raise ConfigurationError('Every user has at least one event of each modality they use.')
        if not 0 < self.base_weight <= 1:
            raise ConfigurationError('base_weight must lie in (0, 1].')

    @property
    def members(self):
        return self.coverages_per_base + 1

    @property
    def n_items(self):
        return self.n_base_products * self.members

    @classmethod
    def from_file(cls, path, section='generator'):
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding='utf-8') as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ArtifactIOError('Cannot read generator config "{}": {}'.format(path, exc))
        return cls.from_mapping(parser[section] if parser.has_section(section) else {})

    @classmethod
    def from_mapping(cls, mapping, **overrides):
        values = {}
        types = {f.name: type(f.default) for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in types:
                raise ConfigurationError('Unknown generator option "{}".'.format(key))
            try:
                values[key] = types[key](raw)
            except ValueError:
                msg = 'Generator option "{}" must be {}, it is "{}".'
                raise ConfigurationError(msg.format(key, types[key].__name__, raw))
        values.update(overrides)
        return cls(**values)


def _count_sampler(mean, std):
    """``1 + X`` with X negative binomial (Poisson when not overdispersed)."""
    mu, var = mean - 1, std * std
    if mu <= 0:
        return lambda rng: 1
    if var <= mu:
        return lambda rng: 1 + int(rng.poisson(mu))
    p = mu / var
    n = mu * mu / (var - mu)
    return lambda rng: 1 + int(rng.negative_binomial(n, p))


def _catalog(config):
    items = []
    for f in range(config.n_base_products):
        base = 'product-{}'.format(f)
        items.append(Item(base, 'Product {}'.format(f), BASE_PRODUCT))
        for k in range(1, config.members):
            items.append(Item('{}-cover-{}'.format(base, k), 'Product {} cover {}'.format(f, k),
                              ADDITIONAL_COVERAGE, base))
    return ItemCatalog(tuple(items))


class _Generator:
    def __init__(self, config, seed):
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.catalog = _catalog(config)
        weights = 1.0 / np.arange(1, config.n_base_products + 1) ** config.popularity_exponent
        self.family_probs = weights / weights.sum()
        if config.members > 1:
            rest = (1 - config.base_weight) * np.linspace(2, 1, config.members - 1)
            self.member_probs = np.concatenate([[config.base_weight], rest / rest.sum() * (1 - config.base_weight)])
        else:
            self.member_probs = np.ones(1)
        d = config.embedding_width
        self.family_means = self.rng.standard_normal((config.n_base_products, d))
        self.code_means = self.rng.standard_normal((config.members, d))
        self.conv_count = _count_sampler(config.conversation_mean, config.conversation_std)
        self.sess_count = _count_sampler(config.session_mean, config.session_std)
        self.start = datetime.fromisoformat(config.start)

    def item(self, family, member):
        return self.catalog.items[family * self.config.members + member].item_id

    def purchase(self):
        config, rng = self.config, self.rng
        family = int(rng.choice(config.n_base_products, p=self.family_probs))
        member = int(rng.choice(config.members, p=self.member_probs))
        owned = {self.item(f, 0) for f in range(config.n_base_products)
                 if rng.random() < config.owned_probability}
        base = self.item(family, 0)
        if member == 0:
            owned.discard(base)
        else:
            owned.add(base)
        items = {self.item(family, member)}
        if rng.random() < config.second_item_probability:
            eligible = [i.item_id for i in self.catalog.items
                        if i.item_id not in items and (
                            (i.kind == BASE_PRODUCT and i.item_id not in owned)
                            or (i.kind == ADDITIONAL_COVERAGE and i.base_of in owned))]
            if eligible:
                items.add(eligible[int(rng.integers(len(eligible)))])
        return family, member, frozenset(items), frozenset(owned)

    def counts(self):
        config, rng = self.config, self.rng
        shares = (config.share_conversations_only, config.share_web_only, config.share_both)
        subset = int(rng.choice(3, p=shares))
        n_conv = min(self.conv_count(rng), config.max_events) if subset in (0, 2) else 0
        n_sess = min(self.sess_count(rng), config.max_events) if subset in (1, 2) else 0
        while n_conv + n_sess > config.max_events:
            if n_sess >= n_conv:
                n_sess -= 1
            else:
                n_conv -= 1
        return n_conv, n_sess

    def session(self, timestamp, family, member, strength):
        config, rng = self.config, self.rng
        n_actions = config.min_actions + int(rng.poisson(config.mean_extra_actions))
        actions = []
        for _ in range(n_actions):
            if rng.random() < config.session_family_signal * strength:
                section = 'section:family-{}'.format(family)
            elif rng.random() < 0.5:
                section = 'section:family-{}'.format(int(rng.integers(config.n_base_products)))
            else:
                section = 'section:' + SECTIONS_GENERIC[int(rng.integers(len(SECTIONS_GENERIC)))]
            if rng.random() < config.session_member_signal * strength:
                obj = 'object:option-{}'.format(member)
            else:
                obj = 'object:doc-{}'.format(int(rng.integers(DOCUMENTS)))
            kind = 'kind:' + INTERACTIONS[int(rng.integers(len(INTERACTIONS)))]
            action = Action((section, obj, kind))
            while actions and actions[-1] == action:
                kind = 'kind:' + INTERACTIONS[int(rng.integers(len(INTERACTIONS)))]
                action = Action((section, obj, kind))
            actions.append(action)
        return WebSession(timestamp, tuple(actions))

    def conversation(self, timestamp, family, member, strength):
        config, rng = self.config, self.rng
        code = (member + family) % config.members
        n_sentences = config.min_sentences + int(rng.poisson(config.mean_extra_sentences))
        centre = (config.conversation_family_signal * self.family_means[family]
                  + config.conversation_code_signal * self.code_means[code]) * strength
        noise = rng.standard_normal((n_sentences, config.embedding_width)) * config.embedding_noise
        speaker_offset = int(rng.integers(2))
        sentences = []
        for index in range(n_sentences):
            keywords = []
            for _ in range(int(rng.integers(3))):
                roll = rng.random()
                if roll < config.keyword_signal * strength:
                    keywords.append('object:option-{}'.format(code))
                elif roll < config.keyword_signal * strength * 1.5:
                    keywords.append('section:family-{}'.format(family))
                else:
                    keywords.append('topic:{}'.format(int(rng.integers(TOPICS))))
            speaker = ('agent', 'user')[(index + speaker_offset) % 2]
            sentences.append(Sentence(speaker, tuple((centre + noise[index]).tolist()), tuple(keywords)))
        return Conversation(timestamp, tuple(sentences))

    def user(self, index):
        config, rng = self.config, self.rng
        family, member, items, owned = self.purchase()
        n_conv, n_sess = self.counts()
        kinds = ['c'] * n_conv + ['s'] * n_sess
        rng.shuffle(kinds)
        purchase_time = self.start + timedelta(days=float(rng.uniform(30, config.span_days)))
        times = []
        moment = purchase_time - timedelta(days=float(rng.uniform(0.05, 10)))
        for _ in kinds:
            times.append(moment)
            moment -= timedelta(days=float(rng.uniform(0.02, 12)))
        times.reverse()
        events = []
        m = len(kinds)
        for position, (kind, timestamp) in enumerate(zip(kinds, times)):
            strength = config.recency_floor + (1 - config.recency_floor) * (position + 1) / m
            event_family, event_member = family, member
            if rng.random() < config.distractor_rate * (1 - strength):
                event_family = int(rng.integers(config.n_base_products))
                event_member = int(rng.integers(config.members))
            make = self.conversation if kind == 'c' else self.session
            events.append(make(timestamp, event_family, event_member, strength))
        return UserRecord('u{:06d}'.format(index), tuple(events), Purchase(purchase_time, items), owned)


def generate_synthetic(config=None, seed=0):
    """Deterministic synthetic dataset for ``(config, seed)``."""
    config = config or GeneratorConfig()
    generator = _Generator(config, seed)
    records = tuple(generator.user(index) for index in range(config.n_users))
    logger.info('Generated %d synthetic users (seed %d).', len(records), seed)
    return Dataset(records, generator.catalog.with_frequencies(records), config.embedding_width)


def synthetic_tag_map(config=None):
    """Keywords that name a product family or option map onto the matching web tag."""
    config = config or GeneratorConfig()
    tokens = ['section:family-{}'.format(f) for f in range(config.n_base_products)]
    tokens += ['object:option-{}'.format(k) for k in range(config.members)]
    return TagMap.identity(tokens)
