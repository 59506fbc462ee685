"""Small dense/recurrent network toolkit with analytic gradients.

Networks are stacks of ``LayerSpec`` layers. Sequence networks take a
``SequenceBatch`` of shape (users, steps, width) and run at most one GRU
layer; the layers before it are applied per step and the layers after it
see the final hidden state only. Flat networks take a plain 2-d array.
"""
import copy
import io
import json
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from modalrec import conf
from modalrec.exceptions import (ArtifactIOError, ConfigurationError,
                                 ModelBundleError, NumericError,
                                 TrainingError, UsageError)

__all__ = [
    'LayerSpec', 'SequenceBatch', 'TrainConfig', 'TrainingSet', 'Network',
    'MultiLabelObjective', 'SquaredErrorObjective', 'AdamState',
    'dense_forward', 'dense_backward', 'gru_step', 'gru_step_backward',
    'sequence_forward', 'predict_probs', 'bce_multilabel_loss',
    'adam_update', 'train', 'grad_check', 'save_checkpoint', 'load_checkpoint',
]

logger = logging.getLogger(__name__)

ACTIVATIONS = ('sigmoid', 'tanh', 'relu', 'identity')
LAYER_KINDS = ('dense', 'gru', 'latent')
PROBABILITY_CLAMP = 1e-7
CHECKPOINT_FORMAT = 'modalrec-checkpoint'
CHECKPOINT_VERSION = 1

CONVERSATION = 1
SESSION = 2


def _activate(a, activation):
    if activation == 'sigmoid':
        return expit(a)
    if activation == 'tanh':
        return np.tanh(a)
    if activation == 'relu':
        return np.maximum(a, 0)
    return a


def _activation_grad(y, a, activation):
    """Derivative of the activation at pre-activation ``a`` (output ``y``)."""
    if activation == 'sigmoid':
        return y * (1 - y)
    if activation == 'tanh':
        return 1 - y * y
    if activation == 'relu':
        return (a > 0).astype(y.dtype)
    return np.ones_like(y)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    input_width: int
    output_width: int
    activation: str = 'identity'
    dropout: float = 0.0
    bias: bool = True
    # latent layers only: width of the conversation part of the input
    split: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError('Unknown layer kind "{}".'.format(self.kind))
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError('Unknown activation "{}".'.format(self.activation))
        if self.input_width < 1 or self.output_width < 1:
            msg = 'Layer "{}" requires positive widths, got {}x{}.'
            raise ConfigurationError(msg.format(self.kind, self.input_width, self.output_width))
        if not 0 <= self.dropout < 1:
            msg = 'Dropout rate must lie in [0, 1), it is {}.'
            raise ConfigurationError(msg.format(self.dropout))
        if self.kind == 'latent' and not 0 < self.split < self.input_width:
            msg = 'Latent layer split {} must lie strictly inside its input width {}.'
            raise ConfigurationError(msg.format(self.split, self.input_width))


@dataclass(frozen=True)
class SequenceBatch:
    """Padded event sequences.

    ``modality`` holds 0 for padding, 1 for conversations and 2 for web
    sessions. Padded steps leave the recurrent state untouched.
    """
    x: np.ndarray
    mask: np.ndarray
    modality: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    def take(self, index):
        return SequenceBatch(self.x[index], self.mask[index], self.modality[index])

    def astype(self, dtype):
        return SequenceBatch(self.x.astype(dtype), self.mask, self.modality)


def _take(inputs, index):
    if isinstance(inputs, SequenceBatch):
        return inputs.take(index)
    return inputs[index]


def _astype(inputs, dtype):
    if isinstance(inputs, SequenceBatch):
        return inputs.astype(dtype)
    return np.asarray(inputs, dtype=dtype)


# -- layers ------------------------------------------------------------------

def dense_forward(x, W, b, activation='identity'):
    """Return ``activation(W x + b)`` over the last axis of ``x`` and a cache."""
    if x.shape[-1] != W.shape[1] or (b is not None and b.shape[0] != W.shape[0]):
        msg = 'Dense layer expects input width {}, got {}.'
        raise ConfigurationError(msg.format(W.shape[1], x.shape[-1]))
    a = x @ W.T
    if b is not None:
        a = a + b
    y = _activate(a, activation)
    return y, (x, W, a, y, activation, b is not None)


def dense_backward(grad, cache):
    """Gradients of a dense layer: (input, weight, bias)."""
    x, W, a, y, activation, has_bias = cache
    ga = grad * _activation_grad(y, a, activation)
    ga2 = ga.reshape(-1, ga.shape[-1])
    dW = ga2.T @ x.reshape(-1, x.shape[-1])
    db = ga2.sum(axis=0) if has_bias else None
    return ga @ W, dW, db


def _gru_cell(xz, xr, xh, h_prev, params):
    z = expit(xz + h_prev @ params['U_z'].T)
    r = expit(xr + h_prev @ params['U_r'].T)
    rh = r * h_prev
    c = np.tanh(xh + rh @ params['U_h'].T)
    h = (1 - z) * h_prev + z * c
    return h, (h_prev, z, r, rh, c)


def _gru_projections(x, params):
    out = []
    for gate in ('z', 'r', 'h'):
        proj = x @ params['W_' + gate].T
        if 'b_' + gate in params:
            proj = proj + params['b_' + gate]
        out.append(proj)
    return out


def gru_step(x, h_prev, params):
    """One GRU step: update gate z, reset gate r, candidate state.

    ``params`` maps ``W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h``; the
    biases are optional. Works on a single vector or a batch of rows.
    """
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h_prev))):
        raise NumericError('Non-finite input to GRU step.')
    xz, xr, xh = _gru_projections(x, params)
    h, cache = _gru_cell(xz, xr, xh, h_prev, params)
    return h, (x,) + cache


def _gru_cell_backward(dh, cache, params):
    h_prev, z, r, rh, c = cache
    dz = dh * (c - h_prev)
    dc = dh * z
    dh_prev = dh * (1 - z)
    da_h = dc * (1 - c * c)
    drh = da_h @ params['U_h']
    dr = drh * h_prev
    dh_prev = dh_prev + drh * r
    da_r = dr * r * (1 - r)
    da_z = dz * z * (1 - z)
    dh_prev = dh_prev + da_r @ params['U_r'] + da_z @ params['U_z']
    return dh_prev, da_z, da_r, da_h


def gru_step_backward(dh, cache, params):
    """Gradients of ``gru_step`` w.r.t. input, previous state and weights."""
    x = cache[0]
    h_prev, rh = cache[1], cache[4]
    dh_prev, da_z, da_r, da_h = _gru_cell_backward(dh, cache[1:], params)
    x2, h2, rh2 = np.atleast_2d(x), np.atleast_2d(h_prev), np.atleast_2d(rh)
    grads = {}
    for gate, da, hidden in (('z', da_z, h2), ('r', da_r, h2), ('h', da_h, rh2)):
        da2 = np.atleast_2d(da)
        grads['W_' + gate] = da2.T @ x2
        grads['U_' + gate] = da2.T @ hidden
        if 'b_' + gate in params:
            grads['b_' + gate] = da2.sum(axis=0)
    dx = da_z @ params['W_z'] + da_r @ params['W_r'] + da_h @ params['W_h']
    return dx, dh_prev, grads


def _gru_sequence_forward(x, mask, params, hidden_width):
    n, steps, _ = x.shape
    xz, xr, xh = _gru_projections(x, params)
    h = np.zeros((n, hidden_width), dtype=x.dtype)
    caches = []
    for t in range(steps):
        h_new, cache = _gru_cell(xz[:, t], xr[:, t], xh[:, t], h, params)
        m = mask[:, t, None].astype(x.dtype)
        h = m * h_new + (1 - m) * h
        caches.append((cache, m))
    return h, (x, caches)


def _gru_sequence_backward(dh, cache, params):
    x, caches = cache
    n, steps, _ = x.shape
    hidden = dh.shape[-1]
    da = {gate: np.zeros((n, steps, hidden), dtype=dh.dtype) for gate in 'zrh'}
    hiddens = np.zeros((n, steps, hidden), dtype=dh.dtype)
    resets = np.zeros((n, steps, hidden), dtype=dh.dtype)
    for t in reversed(range(steps)):
        step_cache, m = caches[t]
        dh_new = m * dh
        dh_prev, da_z, da_r, da_h = _gru_cell_backward(dh_new, step_cache, params)
        dh = dh_prev + (1 - m) * dh
        da['z'][:, t], da['r'][:, t], da['h'][:, t] = da_z, da_r, da_h
        hiddens[:, t] = step_cache[0]
        resets[:, t] = step_cache[3]
    grads = {}
    dx = np.zeros_like(x)
    for gate in 'zrh':
        grads['W_' + gate] = np.einsum('ntk,ntd->kd', da[gate], x)
        grads['U_' + gate] = np.einsum('ntk,ntj->kj', da[gate], resets if gate == 'h' else hiddens)
        if 'b_' + gate in params:
            grads['b_' + gate] = da[gate].sum(axis=(0, 1))
        dx += da[gate] @ params['W_' + gate]
    return dx, grads


def _latent_forward(x, modality, params, split):
    conv = (modality == CONVERSATION)[..., None].astype(x.dtype)
    sess = (modality == SESSION)[..., None].astype(x.dtype)
    a_c = x[..., :split] @ params['W_c'].T
    a_s = x[..., split:] @ params['W_s'].T
    if 'b_c' in params:
        a_c = a_c + params['b_c']
        a_s = a_s + params['b_s']
    y = np.tanh(conv * a_c + sess * a_s)
    return y, (x, conv, sess, y)


def _latent_backward(grad, cache, params, split):
    x, conv, sess, y = cache
    ga = grad * (1 - y * y)
    ga_c, ga_s = (conv * ga), (sess * ga)
    gc2, gs2 = ga_c.reshape(-1, ga.shape[-1]), ga_s.reshape(-1, ga.shape[-1])
    grads = {
        'W_c': gc2.T @ x[..., :split].reshape(-1, split),
        'W_s': gs2.T @ x[..., split:].reshape(-1, x.shape[-1] - split),
    }
    if 'b_c' in params:
        grads['b_c'] = gc2.sum(axis=0)
        grads['b_s'] = gs2.sum(axis=0)
    dx = np.concatenate([ga_c @ params['W_c'], ga_s @ params['W_s']], axis=-1)
    return dx, grads


# -- initialisation -----------------------------------------------------------

def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _orthogonal(rng, width):
    q, r = np.linalg.qr(rng.standard_normal((width, width)))
    return q * np.sign(np.diag(r))


def _layer_params(spec, rng):
    out, inp = spec.output_width, spec.input_width
    params = OrderedDict()
    if spec.kind == 'dense':
        params['W'] = _glorot(rng, out, inp)
        if spec.bias:
            params['b'] = np.zeros(out)
    elif spec.kind == 'gru':
        for gate in 'zrh':
            params['W_' + gate] = _glorot(rng, out, inp)
            params['U_' + gate] = _orthogonal(rng, out)
            if spec.bias:
                params['b_' + gate] = np.zeros(out)
    else:
        params['W_c'] = _glorot(rng, out, spec.split)
        params['W_s'] = _glorot(rng, out, inp - spec.split)
        if spec.bias:
            params['b_c'] = np.zeros(out)
            params['b_s'] = np.zeros(out)
    return params


# -- networks -----------------------------------------------------------------

class Network:
    """An ordered stack of layers with a flat, named parameter dict.

    Parameter names look like ``layer1.U_z``. The last layer produces the
    pre-sigmoid output ``o``.
    """

    def __init__(self, specs, params=None, seed=0, dtype='float64'):
        specs = tuple(s if isinstance(s, LayerSpec) else LayerSpec(**s) for s in specs)
        if not specs:
            raise ConfigurationError('A network needs at least one layer.')
        for prev, nxt in zip(specs, specs[1:]):
            if prev.output_width != nxt.input_width:
                msg = 'Layer widths do not chain: {} -> {}.'
                raise ConfigurationError(msg.format(prev.output_width, nxt.input_width))
        kinds = [s.kind for s in specs]
        if kinds.count('gru') > 1:
            raise ConfigurationError('At most one GRU layer is supported.')
        if 'latent' in kinds and ('gru' not in kinds or kinds.index('latent') > kinds.index('gru')):
            raise ConfigurationError('Latent layers must come before a GRU layer.')
        self.specs = specs
        self.dtype = np.dtype(dtype)
        if params is None:
            rng = np.random.default_rng(seed)
            params = OrderedDict()
            for index, spec in enumerate(specs):
                for name, value in _layer_params(spec, rng).items():
                    params['layer{}.{}'.format(index, name)] = value
        self.params = OrderedDict((k, np.ascontiguousarray(v, dtype=self.dtype)) for k, v in params.items())

    @property
    def sequential(self):
        return any(s.kind == 'gru' for s in self.specs)

    @property
    def input_width(self):
        return self.specs[0].input_width

    @property
    def output_width(self):
        return self.specs[-1].output_width

    @property
    def size(self):
        return sum(p.size for p in self.params.values())

    def layer_params(self, index):
        prefix = 'layer{}.'.format(index)
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def copy(self):
        return Network(self.specs, params=copy.deepcopy(self.params), dtype=self.dtype)

    def config(self):
        return [asdict(s) for s in self.specs]

    def forward(self, inputs, training=False, rng=None, until=None):
        """Run the stack; returns (output, cache).

        ``until`` stops after the given number of layers, which is how the
        anchor networks expose their latent layer.
        """
        if self.sequential:
            if not isinstance(inputs, SequenceBatch):
                raise UsageError('Sequence networks take a SequenceBatch.')
            if inputs.x.shape[1] == 0:
                raise UsageError('Cannot run a network over an empty sequence.')
            x, mask, modality = inputs.x, inputs.mask, inputs.modality
        else:
            x, mask, modality = np.asarray(inputs), None, None
        if not np.all(np.isfinite(x)):
            raise NumericError('Non-finite network input.')
        if training and rng is None:
            raise UsageError('Training mode needs a random generator for dropout.')
        caches = []
        specs = self.specs if until is None else self.specs[:until]
        for index, spec in enumerate(specs):
            params = self.layer_params(index)
            if spec.kind == 'dense':
                x, cache = dense_forward(x, params['W'], params.get('b'), spec.activation)
            elif spec.kind == 'latent':
                x, cache = _latent_forward(x, modality, params, spec.split)
            else:
                x, cache = _gru_sequence_forward(x, mask, params, spec.output_width)
            scale = None
            if training and spec.dropout:
                keep = rng.random(x.shape) >= spec.dropout
                scale = keep.astype(x.dtype) / (1 - spec.dropout)
                x = x * scale
            caches.append((cache, scale))
        return x, caches

    def backward(self, grad, caches):
        """Back-propagate ``grad`` (dL/do); returns (param grads, input grad)."""
        if caches is None or len(caches) != len(self.specs):
            raise UsageError('backward() needs the cache of a full forward pass.')
        grads = OrderedDict()
        for index in reversed(range(len(self.specs))):
            spec = self.specs[index]
            cache, scale = caches[index]
            params = self.layer_params(index)
            if scale is not None:
                grad = grad * scale
            if spec.kind == 'dense':
                grad, dW, db = dense_backward(grad, cache)
                layer_grads = {'W': dW}
                if db is not None:
                    layer_grads['b'] = db
            elif spec.kind == 'latent':
                grad, layer_grads = _latent_backward(grad, cache, params, spec.split)
            else:
                grad, layer_grads = _gru_sequence_backward(grad, cache, params)
            for name, value in layer_grads.items():
                grads['layer{}.{}'.format(index, name)] = value
        ordered = OrderedDict((name, grads[name]) for name in self.params)
        return ordered, grad

    def logits(self, inputs, batch_size=2048):
        inputs = _astype(inputs, self.dtype)
        out = [self.forward(_take(inputs, slice(start, start + batch_size)))[0]
               for start in range(0, len(inputs), batch_size)]
        if not out:
            return np.zeros((0, self.output_width), dtype=self.dtype)
        return np.concatenate(out)

    def predict(self, inputs, batch_size=2048):
        return predict_probs(self.logits(inputs, batch_size))


def sequence_forward(batch, network):
    """Pre-sigmoid output of a sequence network, starting from a zero state."""
    return network.forward(batch)[0]


def predict_probs(o):
    return expit(o)


def bce_multilabel_loss(probs, labels, eps=PROBABILITY_CLAMP):
    """Item-summed binary cross-entropy; one value per row of ``probs``."""
    p_hat = np.clip(probs, eps, 1 - eps)
    return -np.sum(labels * np.log(p_hat) + (1 - labels) * np.log(1 - p_hat), axis=-1)


class MultiLabelObjective:
    """Weighted sum of item-summed BCE terms, averaged over users.

    ``weights[i]`` scales the term against ``targets[i]``; soft targets
    are allowed, which is how distillation adds teacher outputs.
    """

    def __init__(self, weights=(1.0,), eps=PROBABILITY_CLAMP):
        self.weights = tuple(weights)
        self.eps = eps

    def __call__(self, logits, targets):
        if len(targets) != len(self.weights):
            msg = 'Objective expects {} targets, got {}.'
            raise UsageError(msg.format(len(self.weights), len(targets)))
        n = logits.shape[0]
        probs = expit(logits)
        inside = ((probs > self.eps) & (probs < 1 - self.eps)).astype(logits.dtype)
        loss = 0.0
        grad = np.zeros_like(logits)
        for weight, target in zip(self.weights, targets):
            if not weight:
                continue
            loss += weight * float(np.mean(bce_multilabel_loss(probs, target, self.eps)))
            grad += weight * (probs - target)
        return loss, grad * inside / n


class SquaredErrorObjective:
    """Feature-summed squared error, averaged over users (identity output)."""

    def __call__(self, logits, targets):
        (target,) = targets
        diff = logits - target
        n = logits.shape[0]
        return float(np.sum(diff * diff) / n), 2 * diff / n


# -- optimisation ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0
    learning_rate: float = 0.001
    beta_1: float = 0.9
    beta_2: float = 0.999
    epsilon: float = 1e-7
    dtype: str = 'float32'

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError('batch_size must be at least 1.')
        if self.patience < 1:
            raise ConfigurationError('patience must be at least 1.')
        if self.max_epochs < 1:
            raise ConfigurationError('max_epochs must be at least 1.')

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'max_epochs': conf.get('MAX_EPOCHS'),
            'patience': conf.get('PATIENCE'),
            'learning_rate': conf.get('LEARNING_RATE'),
            'beta_1': conf.get('BETA_1'),
            'beta_2': conf.get('BETA_2'),
            'epsilon': conf.get('EPSILON'),
            'dtype': conf.get('DTYPE'),
        }
        values.update(overrides)
        return cls(**values)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params, grads, state, config):
    """One bias-corrected Adam step, in place."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        if params[name].shape != g.shape:
            msg = 'Gradient for "{}" has shape {}, parameter has {}.'
            raise UsageError(msg.format(name, g.shape, params[name].shape))
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= config.beta_1
        m += (1 - config.beta_1) * g
        v *= config.beta_2
        v += (1 - config.beta_2) * g * g
        m_hat = m / (1 - config.beta_1 ** t)
        v_hat = v / (1 - config.beta_2 ** t)
        params[name] -= (config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)).astype(params[name].dtype)
    return params


@dataclass(frozen=True)
class TrainingSet:
    inputs: object
    targets: tuple

    def __len__(self):
        return len(self.inputs)

    def take(self, index):
        return TrainingSet(_take(self.inputs, index), tuple(t[index] for t in self.targets))

    def astype(self, dtype):
        return TrainingSet(_astype(self.inputs, dtype), tuple(np.asarray(t, dtype=dtype) for t in self.targets))


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    valid_loss: float


@dataclass
class TrainResult:
    network: Network
    epochs: list
    best_epoch: int

    @property
    def best_valid_loss(self):
        return self.epochs[self.best_epoch - 1].valid_loss


def evaluate_loss(network, dataset, objective, batch_size=2048):
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        part = dataset.take(slice(start, start + batch_size))
        logits, _ = network.forward(part.inputs)
        loss, _ = objective(logits, part.targets)
        total += loss * len(part)
    return total / max(len(dataset), 1)


def train(network, train_set, valid_set, config, objective=None):
    """Mini-batch Adam with early stopping on the validation loss.

    The network ends up holding the parameters of the epoch with the
    lowest validation loss.
    """
    if not len(train_set) or not len(valid_set):
        raise TrainingError('Training and validation sets must be non-empty.')
    objective = objective or MultiLabelObjective()
    dtype = np.dtype(config.dtype)
    network.params = OrderedDict((k, v.astype(dtype)) for k, v in network.params.items())
    network.dtype = dtype
    train_set, valid_set = train_set.astype(dtype), valid_set.astype(dtype)
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    epochs = []
    best_params, best_loss, best_epoch, waited = None, np.inf, 0, 0
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for batch, start in enumerate(range(0, n, config.batch_size), start=1):
            part = train_set.take(order[start:start + config.batch_size])
            logits, caches = network.forward(part.inputs, training=True, rng=rng)
            loss, grad = objective(logits, part.targets)
            if not np.isfinite(loss):
                raise TrainingError('Training diverged: non-finite loss', epoch, batch)
            grads, _ = network.backward(grad, caches)
            adam_update(network.params, grads, state, config)
            running += loss * len(part)
        valid_loss = evaluate_loss(network, valid_set, objective)
        if not np.isfinite(valid_loss):
            raise TrainingError('Training diverged: non-finite validation loss', epoch, batch)
        epochs.append(EpochLog(epoch, running / n, valid_loss))
        logger.debug('epoch %d: train loss %.6f, valid loss %.6f', epoch, running / n, valid_loss)
        if valid_loss < best_loss:
            best_params = copy.deepcopy(network.params)
            best_loss, best_epoch, waited = valid_loss, epoch, 0
        else:
            waited += 1
            if waited >= config.patience:
                logger.info('Early stop after epoch %d, best epoch %d (valid loss %.6f).',
                            epoch, best_epoch, best_loss)
                break
    network.params = best_params
    return TrainResult(network, epochs, best_epoch)


# -- verification ---------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    worst_parameter: str
    tolerance: float

    @property
    def passed(self):
        return self.max_relative_error < self.tolerance


def _relative_error(analytic, numeric, floor=1e-6):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)))


def grad_check(network, inputs, targets, objective=None, tolerance=1e-4, step=1e-5,
               gradients=None, check_inputs=False):
    """Compare analytic gradients against central finite differences.

    Runs in double precision on a copy of ``network``. ``gradients`` may
    supply the analytic gradients to check instead of recomputing them.
    """
    objective = objective or MultiLabelObjective()
    net = Network(network.specs, params=copy.deepcopy(network.params), dtype='float64')
    inputs = _astype(inputs, np.float64)
    targets = tuple(np.asarray(t, dtype=np.float64) for t in targets)

    def loss_at():
        return objective(net.forward(inputs)[0], targets)[0]

    logits, caches = net.forward(inputs)
    _, grad = objective(logits, targets)
    analytic, grad_input = net.backward(grad, caches)
    if gradients is not None:
        analytic = gradients
    worst, worst_name = 0.0, ''
    for name, value in net.params.items():
        numeric = np.zeros_like(value)
        flat, nflat = value.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_at()
            flat[i] = orig - step
            minus = loss_at()
            flat[i] = orig
            nflat[i] = (plus - minus) / (2 * step)
        error = _relative_error(np.asarray(analytic[name], dtype=np.float64), numeric)
        if error > worst:
            worst, worst_name = error, name
    if check_inputs:
        x = inputs.x if isinstance(inputs, SequenceBatch) else inputs
        numeric = np.zeros_like(x)
        flat, nflat = x.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_at()
            flat[i] = orig - step
            minus = loss_at()
            flat[i] = orig
            nflat[i] = (plus - minus) / (2 * step)
        error = _relative_error(grad_input, numeric)
        if error > worst:
            worst, worst_name = error, 'input'
    return GradCheckReport(worst, worst_name, tolerance)


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(path_or_file, params, header=None):
    """Write ordered (name, shape, values) triples plus a versioned header."""
    header = dict(header or {})
    header.update({
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'parameters': [[name, list(value.shape)] for name, value in params.items()],
    })
    arrays = {'__header__': np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for index, (name, value) in enumerate(params.items()):
        arrays['p{}'.format(index)] = np.ascontiguousarray(value)
    try:
        np.savez(path_or_file, **arrays)
    except OSError as exc:
        raise ArtifactIOError('Cannot write checkpoint "{}": {}'.format(path_or_file, exc))


def load_checkpoint(path_or_file):
    try:
        with np.load(path_or_file) as archive:
            header = json.loads(archive['__header__'].tobytes().decode())
            if header.get('format') != CHECKPOINT_FORMAT:
                raise ModelBundleError('"{}" is not a checkpoint.'.format(path_or_file))
            if header.get('version') != CHECKPOINT_VERSION:
                msg = 'Unsupported checkpoint version {}.'
                raise ModelBundleError(msg.format(header.get('version')))
            params = OrderedDict()
            for index, (name, shape) in enumerate(header['parameters']):
                value = archive['p{}'.format(index)]
                if list(value.shape) != shape:
                    msg = 'Checkpoint parameter "{}" has shape {}, header says {}.'
                    raise ModelBundleError(msg.format(name, value.shape, shape))
                params[name] = value
    except (OSError, KeyError, ValueError) as exc:
        raise ArtifactIOError('Cannot read checkpoint "{}": {}'.format(path_or_file, exc))
    return params, header


def checkpoint_bytes(params, header=None):
    buffer = io.BytesIO()
    save_checkpoint(buffer, params, header)
    return buffer.getvalue()
