import numpy as np

from dip.ste import DirectionalSequence
from dip.tensor import Tensor


def smooth_sequences(l, e, rng, roughness=0.35):
    """Directional sequences whose content varies smoothly along the index.

    Random Fourier series over the index axis plus mild noise; the induced
    kernels are strongly inhomogeneous, so the random-walk mixes slowly
    (lambda_2 near 1) and multi-step distances stay well-conditioned.
    """
    idx = np.arange(l)[:, None] / l

    def one():
        out = np.zeros((l, e))
        for k in range(1, 4):
            amp = rng.standard_normal((1, e)) / k
            phase = rng.uniform(0.0, 2.0 * np.pi, (1, e))
            out += amp * np.sin(2.0 * np.pi * k * idx + phase)
        out += roughness * rng.standard_normal((l, e))
        return np.concatenate([np.zeros((1, e)), out], axis=0)

    return (
        DirectionalSequence(Tensor(one()), "horizontal"),
        DirectionalSequence(Tensor(one()), "vertical"),
    )
