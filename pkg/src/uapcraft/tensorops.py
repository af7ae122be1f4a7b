"""Dense-tensor helpers: seeded RNG, clipping, Adam updates, max-norms.

All tensors are plain ``numpy.ndarray`` objects with dtype float64; image
batches use (N, C, H, W) layout.  Nothing here keeps hidden state beyond
the explicit ``Rng`` / ``AdamState`` values, so every operation is a
deterministic function of its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Rng",
    "AdamState",
    "uniform_init",
    "clip_inplace",
    "adam_step",
    "linf_norm",
]


class Rng:
    """Deterministic random stream backed by the Philox 4x64 counter generator.

    The stream is a fixed function of the integer seed: identical seeds give
    bitwise-identical draws on every platform.  Child streams created with
    :meth:`spawn` derive from the parent's seed sequence, so a consumer that
    splits off a stream (e.g. for held-out sampling) never disturbs the
    parent's draw order.
    """

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def spawn(self) -> "Rng":
        child_seq = self._seq.spawn(1)[0]
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._seq = child_seq
        child._gen = np.random.Generator(np.random.Philox(child_seq))
        return child

    def uniform(self, lo: float, hi: float, shape) -> np.ndarray:
        return self._gen.uniform(lo, hi, size=shape).astype(np.float64, copy=False)

    def normal(self, mean: float, std: float, shape) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape).astype(np.float64, copy=False)

    def integers(self, lo: int, hi: int, shape=None) -> np.ndarray:
        return self._gen.integers(lo, hi, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=replace)


@dataclass
class AdamState:
    """Moment buffers and hyperparameters for one optimized tensor."""

    lr: float
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def fresh(cls, shape, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps_adam: float = 1e-8) -> "AdamState":
        return cls(
            lr=lr,
            first_moment=np.zeros(shape, dtype=np.float64),
            second_moment=np.zeros(shape, dtype=np.float64),
            beta1=beta1,
            beta2=beta2,
            eps_adam=eps_adam,
        )


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ValueError(f"invalid shape {shape}: every extent must be positive")
    return shape


def uniform_init(shape, lo: float, hi: float, rng: Rng) -> np.ndarray:
    """Sample a tensor elementwise-uniform in [lo, hi] from ``rng``'s stream."""
    shape = _check_shape(shape)
    if not lo < hi:
        raise ValueError(f"uniform_init needs lo < hi, got [{lo}, {hi}]")
    return rng.uniform(lo, hi, shape)


def clip_inplace(t: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Clamp every element of ``t`` into [lo, hi], mutating and returning ``t``."""
    if lo > hi:
        raise ValueError(f"clip bounds out of order: [{lo}, {hi}]")
    np.clip(t, lo, hi, out=t)
    return t


def adam_step(var: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; returns the new variable value.

    ``state`` is advanced in place (moments and step count); ``var`` and
    ``grad`` are left untouched.
    """
    if var.shape != grad.shape or var.shape != state.first_moment.shape:
        raise ValueError(
            f"adam_step shape mismatch: var {var.shape}, grad {grad.shape}, "
            f"moments {state.first_moment.shape}"
        )
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grad
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * np.square(grad)
    m_hat = state.first_moment / (1.0 - state.beta1 ** t)
    v_hat = state.second_moment / (1.0 - state.beta2 ** t)
    return var - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)


def linf_norm(t: np.ndarray) -> float:
    """Largest absolute element of a non-empty tensor."""
    if t.size == 0:
        raise ValueError("linf_norm of an empty tensor is undefined")
    return float(np.max(np.abs(t)))
