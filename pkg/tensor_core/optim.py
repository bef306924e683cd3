"""
Adam optimizer that only touches trainable tensors.
"""

from typing import Dict, Iterable, List, Tuple

import numpy as np

from .engine import Tensor


class Adam:
    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m: Dict[int, np.ndarray] = {}
        self._v: Dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        """Bias-corrected Adam update; frozen tensors are left bit-identical."""
        self.t += 1
        correction1 = 1 - self.b1 ** self.t
        correction2 = 1 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            if not p.requires_grad:
                continue
            g = p.grad
            m = self._m.get(i)
            if m is None:
                m = self._m[i] = np.zeros_like(p.values)
                self._v[i] = np.zeros_like(p.values)
            v = self._v[i]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            m_hat = m / correction1
            v_hat = v / correction2
            p.values -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.values.dtype)
