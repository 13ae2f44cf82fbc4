"""
Adam optimizer over named module parameters.
"""

import logging

import numpy as np

from utils.errors import DataError, NumericalError

logger = logging.getLogger(__name__)


def adam_step(params, grads, lr, beta1, beta2, eps, t, m=None, v=None):
    """
    One bias-corrected Adam update on plain arrays

    Parameters:
    params (dict): name -> np.ndarray, updated in place
    grads (dict): name -> gradient array; names absent or None are left untouched
    lr (float): Learning rate
    beta1 (float): First-moment decay
    beta2 (float): Second-moment decay
    eps (float): Denominator stabilizer
    t (int): Step number, starting at 1
    m (dict): First moments, updated in place (fresh zeros when None)
    v (dict): Second moments, updated in place (fresh zeros when None)

    Returns:
    dict: The updated params
    """
    if t < 1:
        raise DataError(f"Adam step number must be >= 1, got {t}")
    m = {} if m is None else m
    v = {} if v is None else v
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != value.shape:
            raise DataError(f"gradient for {name} has shape {g.shape}, parameter has {value.shape}")
        m_prev = m.get(name, np.zeros_like(value))
        v_prev = v.get(name, np.zeros_like(value))
        m[name] = beta1 * m_prev + (1.0 - beta1) * g
        v[name] = beta2 * v_prev + (1.0 - beta2) * g * g
        m_hat = m[name] / correction1
        v_hat = v[name] / correction2
        value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(value.dtype)
    return params


class Adam:
    def __init__(self, parameters, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        """
        Parameters:
        parameters (dict): name -> Parameter, usually module.parameters()
        lr (float): Learning rate
        beta1 (float): First-moment decay
        beta2 (float): Second-moment decay
        eps (float): Denominator stabilizer
        """
        self.parameters = dict(parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    @classmethod
    def from_config(cls, parameters, config):
        return cls(parameters, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)

    def step(self):
        self.t += 1
        trainable = {name: p for name, p in self.parameters.items() if p.trainable}
        grads = {name: p.grad for name, p in trainable.items() if p.grad is not None}
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                logger.error(f"Non-finite gradient for {name} at step {self.t}")
                raise NumericalError(f"non-finite gradient for parameter {name}")
        adam_step(
            {name: p.data for name, p in trainable.items()}, grads,
            self.lr, self.beta1, self.beta2, self.eps, self.t, self.m, self.v,
        )

    def zero_grad(self):
        for param in self.parameters.values():
            param.zero_grad()

    def state_dict(self):
        return {
            "t": self.t,
            "m": {name: value.copy() for name, value in self.m.items()},
            "v": {name: value.copy() for name, value in self.v.items()},
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.m = {name: np.array(value) for name, value in state["m"].items()}
        self.v = {name: np.array(value) for name, value in state["v"].items()}
