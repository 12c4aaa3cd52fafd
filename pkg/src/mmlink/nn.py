"""Dense actor-critic network in numpy: forward, exact backward, masked softmax, Adam."""
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import logsumexp

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# name -> (activation, derivative expressed through the activation output)
ACTIVATIONS = {
    'tanh': (np.tanh, lambda y: 1.0 - y * y),
    'relu': (_relu, lambda y: (y > 0).astype(float)),
}


@dataclass(frozen=True)
class Architecture:
    n_inputs: int
    n_actions: int
    hidden: tuple = (128, 128, 128)
    activation: str = 'tanh'
    shared_trunk: bool = True

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        if self.n_inputs < 1 or self.n_actions < 1:
            raise ValueError("network needs at least one input and one action")

    def to_dict(self) -> dict:
        d = asdict(self)
        d['hidden'] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> 'Architecture':
        return cls(int(d['n_inputs']), int(d['n_actions']), tuple(int(h) for h in d['hidden']),
                   d['activation'], bool(d['shared_trunk']))


def _branch_shapes(prefix: str, n_inputs: int, hidden) -> list[tuple[str, tuple]]:
    shapes, fan_in = [], n_inputs
    for i, width in enumerate(hidden):
        shapes += [(f'{prefix}.{i}.W', (fan_in, width)), (f'{prefix}.{i}.b', (width,))]
        fan_in = width
    return shapes


def layer_shapes(arch: Architecture) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) of every tensor; this order is the flat/checkpoint order."""
    top = arch.hidden[-1] if arch.hidden else arch.n_inputs
    if arch.shared_trunk:
        shapes = _branch_shapes('trunk', arch.n_inputs, arch.hidden)
    else:
        shapes = (_branch_shapes('actor', arch.n_inputs, arch.hidden)
                  + _branch_shapes('critic', arch.n_inputs, arch.hidden))
    return shapes + [
        ('policy.W', (top, arch.n_actions)), ('policy.b', (arch.n_actions,)),
        ('value.W', (top, 1)), ('value.b', (1,)),
    ]


@dataclass
class MlpParams:
    arch: Architecture
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray):
        self.tensors[name] = value

    def names(self) -> list[str]:
        return [name for name, _ in layer_shapes(self.arch)]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[name].ravel() for name in self.names()])

    @classmethod
    def from_flat(cls, arch: Architecture, values: np.ndarray) -> 'MlpParams':
        shapes = layer_shapes(arch)
        size = sum(int(np.prod(shape)) for _, shape in shapes)
        if len(values) != size:
            raise ValueError(f"expected {size} parameters for {arch}, got {len(values)}")
        tensors, offset = {}, 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            tensors[name] = np.array(values[offset:offset + n], dtype=float).reshape(shape)
            offset += n
        return cls(arch, tensors)

    def copy(self) -> 'MlpParams':
        return MlpParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> 'MlpParams':
        return MlpParams(self.arch, {k: np.zeros_like(v) for k, v in self.tensors.items()})

    def scaled(self, c: float) -> 'MlpParams':
        return MlpParams(self.arch, {k: c * v for k, v in self.tensors.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def init_params(arch: Architecture, rng: np.random.Generator) -> MlpParams:
    """Uniform fan-in initialization, +-sqrt(1/fan_in) for weights and biases."""
    tensors = {}
    shapes = dict(layer_shapes(arch))
    for name, shape in shapes.items():
        fan_in = shapes[name[:-1] + 'W'][0]
        bound = np.sqrt(1.0 / fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return MlpParams(arch, tensors)


def zero_params(arch: Architecture) -> MlpParams:
    return MlpParams(arch, {name: np.zeros(shape) for name, shape in layer_shapes(arch)})


@dataclass
class ForwardCache:
    squeeze: bool
    actor: list        # activations of the actor (or shared) branch, input first
    critic: list       # activations of the critic branch; same list object when shared


def _run_branch(params: MlpParams, prefix: str, x: np.ndarray) -> list[np.ndarray]:
    act = ACTIVATIONS[params.arch.activation][0]
    hs = [x]
    for i in range(len(params.arch.hidden)):
        hs.append(act(hs[-1] @ params[f'{prefix}.{i}.W'] + params[f'{prefix}.{i}.b']))
    return hs


def forward_with_cache(params: MlpParams, x: np.ndarray):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite network input")
    squeeze = x.ndim == 1
    x2 = x[None, :] if squeeze else x
    if x2.shape[1] != params.arch.n_inputs:
        raise ValueError(f"expected {params.arch.n_inputs} inputs, got {x2.shape[1]}")
    if params.arch.shared_trunk:
        actor = critic = _run_branch(params, 'trunk', x2)
    else:
        actor = _run_branch(params, 'actor', x2)
        critic = _run_branch(params, 'critic', x2)
    logits = actor[-1] @ params['policy.W'] + params['policy.b']
    value = (critic[-1] @ params['value.W'] + params['value.b'])[:, 0]
    if squeeze:
        return logits[0], float(value[0]), ForwardCache(True, actor, critic)
    return logits, value, ForwardCache(False, actor, critic)


def forward(params: MlpParams, x: np.ndarray):
    """Policy logits and state value for one feature vector or a batch."""
    logits, value, _ = forward_with_cache(params, x)
    return logits, value


def _backprop_branch(params: MlpParams, prefix: str, hs: list, dh: np.ndarray, grads: MlpParams):
    deriv = ACTIVATIONS[params.arch.activation][1]
    for i in reversed(range(len(params.arch.hidden))):
        dz = dh * deriv(hs[i + 1])
        grads[f'{prefix}.{i}.W'] += hs[i].T @ dz
        grads[f'{prefix}.{i}.b'] += dz.sum(axis=0)
        dh = dz @ params[f'{prefix}.{i}.W'].T


def backward(params: MlpParams, cache: ForwardCache, dlogits, dvalue) -> MlpParams:
    """Gradient of a loss given its derivatives w.r.t. the logits and the value output."""
    dlogits = np.atleast_2d(np.asarray(dlogits, dtype=float))
    dvalue = np.atleast_1d(np.asarray(dvalue, dtype=float)).reshape(-1, 1)
    grads = params.zeros_like()
    feat_a, feat_c = cache.actor[-1], cache.critic[-1]

    grads['policy.W'] += feat_a.T @ dlogits
    grads['policy.b'] += dlogits.sum(axis=0)
    grads['value.W'] += feat_c.T @ dvalue
    grads['value.b'] += dvalue.sum(axis=0)
    d_actor = dlogits @ params['policy.W'].T
    d_critic = dvalue @ params['value.W'].T

    if params.arch.shared_trunk:
        _backprop_branch(params, 'trunk', cache.actor, d_actor + d_critic, grads)
    else:
        _backprop_branch(params, 'actor', cache.actor, d_actor, grads)
        _backprop_branch(params, 'critic', cache.critic, d_critic, grads)
    return grads


def value_and_grad(params: MlpParams, x: np.ndarray, loss_fn):
    """Evaluate loss_fn(logits, value) -> (loss, dlogits, dvalue) and its parameter gradient."""
    logits, value, cache = forward_with_cache(params, x)
    loss, dlogits, dvalue = loss_fn(logits, value)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    return float(loss), backward(params, cache, dlogits, dvalue)


def _check_mask(mask: np.ndarray):
    if not np.all(mask.any(axis=-1)):
        raise RuntimeError("action mask has no feasible entry")


def masked_log_softmax(logits, mask) -> np.ndarray:
    """Log-probabilities over unmasked entries; masked entries are -inf."""
    logits = np.asarray(logits, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    _check_mask(mask)
    masked = np.where(mask, logits, -np.inf)
    return masked - logsumexp(masked, axis=-1, keepdims=True)


def masked_softmax(logits, mask) -> np.ndarray:
    return np.exp(masked_log_softmax(logits, mask))


def masked_entropy(probs: np.ndarray, log_probs: np.ndarray) -> np.ndarray:
    """Entropy over the unmasked support (0 * log 0 = 0)."""
    return -(probs * np.where(probs > 0, log_probs, 0.0)).sum(axis=-1)


@dataclass
class OptimizerState:
    m: MlpParams
    v: MlpParams
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.9
    decay_every: int = 20
    step: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def adam_init(params: MlpParams, lr: float = 1e-3, decay: float = 0.9, decay_every: int = 20) -> OptimizerState:
    return OptimizerState(params.zeros_like(), params.zeros_like(), lr=lr, decay=decay, decay_every=decay_every)


def adam_step(params: MlpParams, grads: MlpParams, opt: OptimizerState) -> tuple[MlpParams, OptimizerState]:
    """Bias-corrected Adam update; the learning rate decays after every `decay_every` steps."""
    if not grads.is_finite():
        raise FloatingPointError("non-finite gradient in optimizer step")
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    updated = params.copy()
    for name, g in grads.tensors.items():
        opt.m[name] = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * g
        opt.v[name] = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * g * g
        m_hat = opt.m[name] / c1
        v_hat = opt.v[name] / c2
        updated[name] = params[name] - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    if opt.decay_every > 0 and opt.step % opt.decay_every == 0:
        opt.lr *= opt.decay
    return updated, opt


def save_params(path, params: MlpParams):
    values = params.flat()
    save_checkpoint(path, 'nn', {'arch': params.arch.to_dict(), 'size': len(values)}, values)


def load_params(path, arch: Architecture = None) -> MlpParams:
    """Load network weights; with `arch` given, a different architecture is an error."""
    meta, values = load_checkpoint(path, 'nn')
    stored = Architecture.from_dict(meta['arch'])
    if arch is not None and stored != arch:
        raise CheckpointError(f"{path}: checkpoint architecture {stored} does not match {arch}")
    return MlpParams.from_flat(stored, values)
