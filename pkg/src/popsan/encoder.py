"""Gaussian population encoder.

Each observation dimension is represented by ``pop_size`` neurons with
learnable Gaussian receptive fields. Activations are sampled into Bernoulli
spike trains; the backward pass treats sampling as straight-through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_MIN = 1e-3


def compute_receptive_field(s, mu, sigma):
    """Gaussian activations ``A_E`` of every encoder neuron.

    ``s`` has shape ``(..., obs_dim)``; ``mu`` and ``sigma`` have shape
    ``(obs_dim, pop_size)``. Returns an array of shape
    ``(..., obs_dim, pop_size)`` with values in (0, 1].
    """
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1:] != mu.shape[:1]:
        raise ValueError(f"observation has trailing dim {s.shape[-1:]}, expected ({mu.shape[0]},)")
    if not np.all(np.isfinite(s)):
        raise ValueError("observation contains non-finite values")
    diff = s[..., :, None] - mu
    return np.exp(-(diff * diff) / (2.0 * sigma * sigma))


def draw_uniforms(rng, T, n_neurons, batch_shape=()):
    """Uniform noise used to sample spikes; shape ``(*batch_shape, T, n_neurons)``."""
    if T < 1:
        raise ValueError(f"spike train needs T >= 1, got {T}")
    return rng.random((*batch_shape, T, n_neurons))


def encode_spikes(A_E, T, rng=None, uniforms=None):
    """Sample a Bernoulli spike train from receptive-field activations.

    Neurons are flattened dimension-major: all neurons of observation
    dimension 0 come first. Pass ``uniforms`` (from :func:`draw_uniforms`)
    to replay a frozen sampling mask instead of drawing from ``rng``.
    """
    if T < 1:
        raise ValueError(f"spike train needs T >= 1, got {T}")
    A_E = np.asarray(A_E, dtype=np.float64)
    if np.any(A_E < 0.0) or np.any(A_E > 1.0):
        raise ValueError("activations must lie in [0, 1]")
    batch_shape = A_E.shape[:-2]
    flat = A_E.reshape(*batch_shape, 1, -1)
    if uniforms is None:
        if rng is None:
            raise ValueError("either rng or uniforms is required")
        uniforms = draw_uniforms(rng, T, flat.shape[-1], batch_shape)
    elif uniforms.shape != (*batch_shape, T, flat.shape[-1]):
        raise ValueError(f"uniforms shape {uniforms.shape} does not match {(*batch_shape, T, flat.shape[-1])}")
    return (uniforms < flat).astype(np.float64)


def encoder_backward(dL_do, A_E, s, mu, sigma):
    """Gradients of the loss w.r.t. receptive-field centers and widths.

    ``dL_do`` is the gradient w.r.t. the emitted spikes, shape
    ``(..., T, obs_dim * pop_size)``. Spike sampling is straight-through,
    so the per-timestep gradients are summed onto ``A_E`` and pushed through
    the Gaussian. Leading batch dimensions are summed out.
    """
    obs_dim, pop_size = mu.shape
    batch_shape = A_E.shape[:-2]
    if A_E.shape[-2:] != mu.shape:
        raise ValueError(f"A_E shape {A_E.shape} does not match parameters {mu.shape}")
    if dL_do.shape[:-2] != batch_shape or dL_do.shape[-1] != obs_dim * pop_size:
        raise ValueError(f"dL_do shape {dL_do.shape} incompatible with A_E shape {A_E.shape}")
    dA = dL_do.sum(axis=-2).reshape(*batch_shape, obs_dim, pop_size)
    s = np.asarray(s, dtype=np.float64)
    diff = s[..., :, None] - mu
    g = dA * A_E
    d_mu = g * diff / sigma**2
    d_sigma = g * diff**2 / sigma**3
    axes = tuple(range(len(batch_shape)))
    return d_mu.sum(axis=axes), d_sigma.sum(axis=axes)


@dataclass
class PopulationCoder:
    """Learnable receptive fields for ``obs_dim`` populations of ``pop_size`` neurons."""

    mu: np.ndarray
    sigma: np.ndarray
    obs_low: np.ndarray
    obs_high: np.ndarray

    @classmethod
    def tiled(cls, obs_low, obs_high, pop_size):
        """Centers evenly spaced over each dimension's range, uniform widths."""
        obs_low = np.asarray(obs_low, dtype=np.float64)
        obs_high = np.asarray(obs_high, dtype=np.float64)
        if obs_low.shape != obs_high.shape or obs_low.ndim != 1:
            raise ValueError("obs_low and obs_high must be 1-D arrays of equal length")
        if np.any(obs_high <= obs_low):
            raise ValueError("obs_high must exceed obs_low in every dimension")
        if pop_size < 1:
            raise ValueError("pop_size must be >= 1")
        frac = np.linspace(0.0, 1.0, pop_size) if pop_size > 1 else np.array([0.5])
        mu = obs_low[:, None] + (obs_high - obs_low)[:, None] * frac[None, :]
        width = (obs_high - obs_low) / (2.0 * pop_size)
        sigma = np.repeat(width[:, None], pop_size, axis=1)
        return cls(mu=mu, sigma=sigma, obs_low=obs_low, obs_high=obs_high)

    @property
    def obs_dim(self):
        return self.mu.shape[0]

    @property
    def pop_size(self):
        return self.mu.shape[1]

    @property
    def n_neurons(self):
        return self.mu.size

    def receptive_field(self, s):
        return compute_receptive_field(s, self.mu, self.sigma)

    def backward(self, dL_do, A_E, s):
        return encoder_backward(dL_do, A_E, s, self.mu, self.sigma)

    def clamp(self):
        np.maximum(self.sigma, SIGMA_MIN, out=self.sigma)
