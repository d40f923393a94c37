import typing

import numpy as np
from numpy.typing import NDArray
from result import Err, Ok

T = typing.TypeVar("T")

Vector = NDArray[np.float64]  # shape (d,)
Matrix = NDArray[np.float64]  # shape (d, d)
Tensor3 = NDArray[np.float64]  # shape (d, d, d), indexed [j, k, l]
Points = NDArray[np.float64]  # shape (n, d)


class Empty(Err[None]):
    """
    Alias for Err[None], used by Maybe.

    Usage:
    Maybe[float] for quantities that are only defined in some configurations
    (e.g. the local bandwidth choice, which needs a target).
    """

    def __init__(self) -> None:
        """Set up the Err result with None as its value."""
        super().__init__(None)


Maybe = Ok[T] | Empty


def as_vector(value: typing.Any) -> Vector:
    """Coerce a point-like value (list, tuple, array) into a float64 vector."""
    return np.asarray(value, dtype=np.float64).reshape(-1)
