"""Ranking metrics, per-subset reports, significance tests and ablations."""
import logging
import os
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
from scipy import stats

from modalrec import conf
from modalrec.data import (CONVERSATIONS_ONLY, INTERSECTION, SUBSETS, UNION,
                           WEB_SESSIONS_ONLY)
from modalrec.exceptions import ArtifactIOError, ConfigurationError, UsageError
from modalrec.neural import SequenceBatch
from modalrec.recommenders import SequenceRecommender, post_filter

__all__ = [
    'hit_rate_at_k', 'ap_at_k', 'ranked_list', 'UserMetrics', 'Cell',
    'Comparison', 'EvalReport', 'score_users', 'evaluate', 'mcnemar',
    'anova_oneway', 'compare', 'ablate_event_count', 'shuffle_events',
    'OrderAblation', 'ablate_event_order', 'export_latents',
    'results_table', 'curves_table', 'order_table', 'write_table',
    'partition_counts',
]

logger = logging.getLogger(__name__)

HIT_RATE = 'HR'
MAP = 'MAP'
METRICS = (HIT_RATE, MAP)
FLOAT_FORMAT = '%.6f'


def ranked_list(scores):
    """Item indices by descending score; ties keep catalog order."""
    return np.argsort(-np.asarray(scores), kind='stable')


def hit_rate_at_k(ranked, relevant, k):
    if k < 1:
        raise UsageError('k must be at least 1, it is {}.'.format(k))
    return int(any(item in relevant for item in ranked[:k]))


def ap_at_k(ranked, relevant, k):
    """Average precision at ``k``, normalised by ``min(len(relevant), k)``."""
    if k < 1:
        raise UsageError('k must be at least 1, it is {}.'.format(k))
    if not relevant:
        raise UsageError('Average precision needs at least one relevant item.')
    hits, total = 0, 0.0
    for position, item in enumerate(ranked[:k], start=1):
        if item in relevant:
            hits += 1
            total += hits / position
    return total / min(len(relevant), k)


@dataclass(frozen=True)
class UserMetrics:
    """Per-user metrics of one trained model; rows it could not score are masked."""
    seed: int
    user_ids: Tuple[str, ...]
    subsets: Tuple[str, ...]
    scored: np.ndarray
    hits: np.ndarray
    ap: np.ndarray
    k_list: Tuple[int, ...]

    def values(self, metric, k):
        try:
            column = self.k_list.index(k)
        except ValueError:
            raise UsageError('k={} was not evaluated; k list is {}.'.format(k, self.k_list))
        return (self.hits if metric == HIT_RATE else self.ap)[:, column]

    def mask(self, subset):
        if subset == UNION:
            return self.scored.copy()
        return self.scored & (np.array(self.subsets) == subset)

    def mean(self, metric, k, subset=UNION):
        mask = self.mask(subset)
        if not mask.any():
            return None
        return float(self.values(metric, k)[mask].mean())


def score_users(recommender, records, catalog, k_list=None, seed=0, subsets=None):
    """Post-filter, rank and score every user the recommender can score.

    ``subsets`` overrides the subset each user is reported under, which the
    event-count ablation needs once histories are truncated.
    """
    k_list = tuple(k_list or conf.get('K_LIST'))
    predictions = recommender.predict(records)
    hits = np.zeros((len(records), len(k_list)))
    ap = np.zeros((len(records), len(k_list)))
    scored = predictions.scored.copy()
    for row, record in enumerate(records):
        if not scored[row]:
            continue
        relevant = {catalog.index(item) for item in record.purchase.items}
        if not relevant:
            scored[row] = False
            continue
        vector = post_filter(predictions.scores[row], record.owned, catalog)
        ranked = ranked_list(vector.scores)
        for column, k in enumerate(k_list):
            hits[row, column] = hit_rate_at_k(ranked, relevant, k)
            ap[row, column] = ap_at_k(ranked, relevant, k)
    if subsets is None:
        subsets = [r.subset for r in records]
    return UserMetrics(seed, tuple(r.user_id for r in records), tuple(subsets), scored, hits, ap, k_list)


@dataclass(frozen=True)
class Cell:
    mean: float
    std: float
    seeds: int


@dataclass(frozen=True)
class Comparison:
    statistic: float
    p_value: float
    significant: bool


@dataclass(frozen=True)
class EvalReport:
    kind: str
    runs: Tuple[UserMetrics, ...]

    @property
    def k_list(self):
        return self.runs[0].k_list

    @property
    def seeds(self):
        return tuple(run.seed for run in self.runs)

    def users(self, subset=UNION):
        return int(self.runs[0].mask(subset).sum())

    def per_seed(self, metric, k, subset=UNION):
        means = (run.mean(metric, k, subset) for run in self.runs)
        return [m for m in means if m is not None]

    def cell(self, metric, k, subset=UNION):
        """Seed mean and std of the subset mean; None when the subset is empty."""
        values = self.per_seed(metric, k, subset)
        if not values:
            return None
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return Cell(float(np.mean(values)), std, len(values))


def evaluate(recommenders, records, catalog, k_list=None, kind=None):
    """Evaluate one model kind trained under several seeds.

    ``recommenders`` maps seed to a trained recommender.
    """
    if not recommenders:
        raise UsageError('Nothing to evaluate.')
    runs = tuple(score_users(rec, records, catalog, k_list, seed)
                 for seed, rec in sorted(recommenders.items()))
    kind = kind or next(iter(recommenders.values())).kind
    report = EvalReport(kind, runs)
    cell = report.cell(MAP, report.k_list[-1])
    if cell is not None:
        logger.info('%s: MAP@%d %.4f over %d seed(s), %d users.', kind, report.k_list[-1],
                    cell.mean, cell.seeds, report.users())
    return report


# -- significance ---------------------------------------------------------------------

def mcnemar(hits_a, hits_b):
    """Continuity-corrected McNemar test on paired binary outcomes."""
    hits_a = np.asarray(hits_a, dtype=bool)
    hits_b = np.asarray(hits_b, dtype=bool)
    if hits_a.shape != hits_b.shape:
        raise UsageError('McNemar needs paired outcomes of equal length.')
    b = int(np.sum(hits_a & ~hits_b))
    c = int(np.sum(~hits_a & hits_b))
    if b + c == 0:
        return 0.0, 1.0
    statistic = (abs(b - c) - 1) ** 2 / (b + c)
    return float(statistic), float(stats.chi2.sf(statistic, 1))


def anova_oneway(groups):
    """One-way ANOVA; F is 0 when no group differs and nothing varies."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise UsageError('ANOVA needs at least two groups of at least two values.')
    n = sum(len(g) for g in groups)
    grand = np.concatenate(groups).mean()
    between = sum(len(g) * (g.mean() - grand) ** 2 for g in groups)
    within = sum(((g - g.mean()) ** 2).sum() for g in groups)
    df_between, df_within = len(groups) - 1, n - len(groups)
    if within == 0:
        if between == 0:
            return 0.0, 1.0
        return float('inf'), 0.0
    statistic = (between / df_between) / (within / df_within)
    return float(statistic), float(stats.f.sf(statistic, df_between, df_within))


def compare(report, reference, metric, k, subset=UNION, level=None):
    """Test ``report`` against ``reference`` on one cell.

    Hit rates use McNemar on per-user hits pooled over the seeds both
    reports share; MAP uses ANOVA over the per-seed means. Returns None
    when there is nothing to pair.
    """
    level = conf.get('SIGNIFICANCE_LEVEL') if level is None else level
    if metric == HIT_RATE:
        theirs = {run.seed: run for run in reference.runs}
        pooled_a, pooled_b = [], []
        for run in report.runs:
            other = theirs.get(run.seed)
            if other is None or other.user_ids != run.user_ids:
                continue
            mask = run.mask(subset) & other.mask(subset)
            pooled_a.append(run.values(metric, k)[mask])
            pooled_b.append(other.values(metric, k)[mask])
        if not pooled_a or not sum(len(p) for p in pooled_a):
            return None
        statistic, p_value = mcnemar(np.concatenate(pooled_a), np.concatenate(pooled_b))
    else:
        groups = [report.per_seed(metric, k, subset), reference.per_seed(metric, k, subset)]
        if any(len(g) < 2 for g in groups):
            return None
        statistic, p_value = anova_oneway(groups)
    return Comparison(statistic, p_value, p_value < level)


# -- ablations ----------------------------------------------------------------------------

def ablate_event_count(recommenders, records, catalog, max_events=None, k=3, retrain=False):
    """Metrics when only the ``n`` most recent events are seen, n = 1..max_events.

    The models are not retrained. Users stay in the subset of their full
    history.
    """
    if retrain:
        raise ConfigurationError('Retraining per event count is not supported; '
                                 'the event-count ablation truncates at inference only.')
    max_events = max_events or conf.get('MAX_EVENTS')
    subsets = [r.subset for r in records]
    rows = []
    for n in range(1, max_events + 1):
        truncated = [r.with_events(r.events[-n:]) for r in records]
        runs = tuple(score_users(rec, truncated, catalog, (k,), seed, subsets)
                     for seed, rec in sorted(recommenders.items()))
        report = EvalReport(next(iter(recommenders.values())).kind, runs)
        for subset in SUBSETS:
            row = {'n': n, 'subset': subset}
            for metric in METRICS:
                cell = report.cell(metric, k, subset)
                row['{}@{}'.format(metric, k)] = None if cell is None else cell.mean
            rows.append(row)
        logger.debug('Event-count ablation: n=%d done.', n)
    return pd.DataFrame(rows, columns=['n', 'subset', 'HR@{}'.format(k), 'MAP@{}'.format(k)])


def shuffle_events(records, seed):
    """Every user's events in a random order, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    return [r.with_events(r.events[i] for i in rng.permutation(len(r.events))) for r in records]


@dataclass(frozen=True)
class OrderAblation:
    original: EvalReport
    shuffled: EvalReport

    def relative_change(self, metric, k, subset=UNION):
        before = self.original.cell(metric, k, subset)
        after = self.shuffled.cell(metric, k, subset)
        if before is None or after is None or before.mean == 0:
            return None
        return (after.mean - before.mean) / before.mean


def ablate_event_order(fit, splits, catalog, seeds, shuffles=5, k=3, original=None):
    """Retrain on shuffled histories and compare with the original order.

    ``fit(train, valid, seed)`` returns a trained recommender. Shuffle
    ``s`` of seed ``seed`` permutes every split with the generator seeded by
    ``(seed, s)``.
    """
    train_records, valid_records, test_records = splits
    if original is None:
        original = evaluate({seed: fit(train_records, valid_records, seed) for seed in seeds},
                            test_records, catalog, (k,))
    runs = []
    for shuffle in range(shuffles):
        for seed in seeds:
            shuffled = [shuffle_events(part, [seed, shuffle, index])
                        for index, part in enumerate(splits)]
            recommender = fit(shuffled[0], shuffled[1], seed)
            runs.append(score_users(recommender, shuffled[2], catalog, (k,), seed))
        logger.info('Order ablation: shuffle %d of %d done.', shuffle + 1, shuffles)
    return OrderAblation(original, EvalReport(original.kind, tuple(runs)))


# -- latent export ----------------------------------------------------------------------

def _event_vectors(recommender, records):
    encoder = recommender.encoder()
    batch, _ = encoder.batch(records)
    x = batch.x
    if recommender.encoder_mode == 'latent':
        network = recommender.network
        x, _ = network.forward(SequenceBatch(batch.x.astype(network.dtype), batch.mask, batch.modality),
                               until=1)
    return batch, np.asarray(x, dtype=np.float64)


def export_latents(recommender, records, directory):
    """Write per-event input representations and per-user outputs as TSV.

    ``events.tsv`` has one row per event, tagged with its modality;
    ``users.tsv`` has one row per user, tagged with the user's subset.
    """
    if not isinstance(recommender, SequenceRecommender):
        raise UsageError('Model "{}" has no per-event representation to export.'.format(recommender.kind))
    records = [r for r in records if recommender.routes(r)]
    batch, vectors = _event_vectors(recommender, records)
    event_rows = []
    for row, record in enumerate(records):
        for step in np.flatnonzero(batch.mask[row]):
            label = 'conversation' if batch.modality[row, step] == 1 else 'session'
            event_rows.append([record.user_id, int(step), label] + vectors[row, step].tolist())
    width = vectors.shape[-1]
    events = pd.DataFrame(event_rows, columns=['user', 'position', 'label'] + ['v{}'.format(i) for i in range(width)])
    outputs = recommender.predict(records)
    users = pd.DataFrame(outputs.scores, columns=list(recommender.catalog.ids))
    users.insert(0, 'label', [r.subset for r in records])
    users.insert(0, 'user', [r.user_id for r in records])
    paths = (os.path.join(directory, 'events.tsv'), os.path.join(directory, 'users.tsv'))
    write_table(events, paths[0], sep='\t', index=False)
    write_table(users, paths[1], sep='\t', index=False)
    logger.info('Exported %d event and %d user representations to %s.', len(events), len(users), directory)
    return paths


# -- report tables --------------------------------------------------------------------------

def _column(subset, metric, k):
    return '{} {}@{}'.format(subset, metric, k)


def results_table(reports, reference=None, k=3, level=None):
    """One row per model kind, one column per subset and metric at ``k``.

    Cells read ``mean (std)`` and get a ``*`` when the model differs
    significantly from the reference model. Empty subsets stay blank.
    """
    reference = reference or conf.get('REFERENCE_MODEL')
    by_kind = {report.kind: report for report in reports}
    ref = by_kind.get(reference)
    columns = [_column(s, m, k) for s in SUBSETS for m in METRICS]
    frame = pd.DataFrame(index=pd.Index([r.kind for r in reports], name='model'), columns=columns, dtype=object)
    for report in reports:
        for subset in SUBSETS:
            for metric in METRICS:
                cell = report.cell(metric, k, subset)
                if cell is None:
                    continue
                text = '{:.4f} ({:.4f})'.format(cell.mean, cell.std)
                if ref is not None and report.kind != reference:
                    result = compare(report, ref, metric, k, subset, level)
                    if result is not None and result.significant:
                        text += '*'
                frame.loc[report.kind, _column(subset, metric, k)] = text
    return frame


def curves_table(reports):
    """Long-format MAP@k and HR@k per model, subset and k."""
    rows = []
    for report in reports:
        for subset in SUBSETS:
            for metric in METRICS:
                for k in report.k_list:
                    cell = report.cell(metric, k, subset)
                    if cell is None:
                        continue
                    rows.append({'model': report.kind, 'subset': subset, 'metric': metric,
                                 'k': k, 'mean': cell.mean, 'std': cell.std,
                                 'users': report.users(subset)})
    return pd.DataFrame(rows, columns=['model', 'subset', 'metric', 'k', 'mean', 'std', 'users'])


def order_table(ablations, k=3):
    """Original, shuffled and relative change per model, subset and metric."""
    rows = []
    for ablation in ablations:
        for subset in SUBSETS:
            for metric in METRICS:
                before = ablation.original.cell(metric, k, subset)
                after = ablation.shuffled.cell(metric, k, subset)
                rows.append({
                    'model': ablation.original.kind,
                    'subset': subset,
                    'metric': '{}@{}'.format(metric, k),
                    'original': None if before is None else before.mean,
                    'shuffled': None if after is None else after.mean,
                    'change': ablation.relative_change(metric, k, subset),
                })
    return pd.DataFrame(rows, columns=['model', 'subset', 'metric', 'original', 'shuffled', 'change'])


def write_table(frame, path, **kwargs):
    kwargs.setdefault('float_format', FLOAT_FORMAT)
    try:
        frame.to_csv(path, **kwargs)
    except OSError as exc:
        raise ArtifactIOError('Cannot write "{}": {}'.format(path, exc))
    logger.debug('Wrote %s.', path)
    return path


def partition_counts(report):
    """Scored users per subset; the three disjoint subsets add up to the union."""
    return {subset: report.users(subset) for subset in (UNION, CONVERSATIONS_ONLY,
                                                        WEB_SESSIONS_ONLY, INTERSECTION)}
