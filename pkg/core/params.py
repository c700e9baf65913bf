"""
Parameter store: named tensors in fixed declaration order
"""
import logging
from collections import OrderedDict
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import ParameterCountError, UsageError
from core.tensor import Tensor, get_default_dtype
from utils.helpers import make_rng

logger = logging.getLogger(__name__)


class ParamStore:
    """Ordered named parameters with deterministic per-name initialization

    Each parameter draws from its own stream seeded by (seed, name), so
    adding a parameter never changes the initial values of the others.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: 'OrderedDict[str, Tensor]' = OrderedDict()

    def declare(self, name: str, shape: Sequence[int], init: str = 'kaiming',
                fan_in: Optional[int] = None) -> Tensor:
        """Create a parameter; `kaiming` draws U(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
        if name in self._params:
            raise UsageError(f"Parameter '{name}' declared twice")
        shape = tuple(int(s) for s in shape)
        if init == 'zeros':
            data = np.zeros(shape)
        elif init == 'kaiming':
            fan_in = fan_in or shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            data = make_rng(self.seed, 'init', name).uniform(-bound, bound, size=shape)
        else:
            raise UsageError(f"Unknown initialization '{init}'")
        tensor = Tensor(data.astype(get_default_dtype()), requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._params.items())

    def tensors(self) -> List[Tensor]:
        return list(self._params.values())

    @property
    def count(self) -> int:
        """Total number of scalar parameters"""
        return int(sum(tensor.size for tensor in self._params.values()))

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def grads(self) -> List[np.ndarray]:
        """Gradients in declaration order; parameters the loss never touched get zeros"""
        return [tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
                for tensor in self._params.values()]

    def flatten(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0, dtype=np.float32)
        return np.concatenate([tensor.data.reshape(-1) for tensor in self._params.values()]).astype(np.float32)

    def load_flat(self, vector: np.ndarray) -> None:
        """Overwrite all parameters from a flat payload in declaration order"""
        vector = np.asarray(vector)
        if vector.size != self.count:
            raise ParameterCountError(
                f"Payload holds {vector.size} values but the model declares {self.count}")
        offset = 0
        for tensor in self._params.values():
            n = tensor.size
            tensor.data = vector[offset:offset + n].reshape(tensor.shape).astype(tensor.data.dtype)
            offset += n
