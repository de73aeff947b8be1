"""
The recommender contract shared by every model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np
import scipy.sparse as sp

from ..sparse import as_csr


@dataclass(frozen=True)
class ValidationData:
    """
    Hold-out signal for iterative models: score ``histories`` (binary, one
    row per user) and check whether ``targets[u]`` lands in the top ``k``.
    """

    histories: sp.csr_matrix
    targets: np.ndarray
    k: int = 50


class Recommender:
    """
    Base class for all models.

    Subclasses set ``name`` and implement :meth:`fit` and :meth:`score`.
    Hyper-parameters are constructor keyword arguments; ``params`` returns
    them as a dict so a model can be rebuilt from its logged config.
    """

    name: ClassVar[str] = "base"
    #: True for models whose scores are ``history @ item_weights``
    item_item: ClassVar[bool] = False

    def __init__(self, **params: Any):
        unknown = set(params) - set(self.defaults())
        if unknown:
            raise TypeError(f"{self.name}: unknown hyper-parameters {sorted(unknown)}")
        self._params = {**self.defaults(), **params}
        self.n_items: int | None = None

    @classmethod
    def defaults(cls) -> dict[str, Any]:
        return {}

    @property
    def params(self) -> dict[str, Any]:
        return dict(self._params)

    def __getattr__(self, key):
        # hyper-parameters read as attributes
        params = self.__dict__.get("_params")
        if params is not None and key in params:
            return params[key]
        raise AttributeError(key)

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self._params.items())
        return f"{type(self).__name__}({args})"

    def fit(self, x: sp.csr_matrix, validation: ValidationData | None = None) -> "Recommender":
        raise NotImplementedError

    def score(self, histories: sp.csr_matrix) -> np.ndarray:
        """
        Dense ``(n_users, n_items)`` scores for arbitrary binary histories,
        including users never seen by :meth:`fit`.
        """
        raise NotImplementedError

    def _check_histories(self, histories) -> sp.csr_matrix:
        if self.n_items is None:
            raise RuntimeError(f"{self.name} is not fitted")
        h = as_csr(histories)
        if h.shape[1] != self.n_items:
            raise ValueError(f"history has {h.shape[1]} items, model has {self.n_items}")
        return h

    def item_weights(self) -> np.ndarray | sp.spmatrix | None:
        "Item-item weight matrix for models that have one, else ``None``."
        return None

