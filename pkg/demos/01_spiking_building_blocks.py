"""Walk through one inference by hand: encode, integrate, shrink, decode.

Run with ``python demos/01_spiking_building_blocks.py``.
"""
import numpy as np

from popsan.encoder import PopulationCoder, encode_spikes
from popsan.lif import LIFParams, lif_forward
from popsan.network import PopSAN
from popsan.ppo import default_spec
from popsan.shrink import ShrinkLayer, shrink_forward

np.set_printoptions(precision=3, suppress=True, linewidth=120)
rng = np.random.default_rng(0)

# A single observation value is spread over a population of 5 Gaussian receptive fields.
coder = PopulationCoder.tiled([-1.0], [1.0], 5)
print("centers:", coder.mu[0], " width:", coder.sigma[0, 0])
A = coder.receptive_field(np.array([0.3]))
print("activations for s=0.3:", A[0])

# Activations are firing probabilities; sample 8 timesteps of Bernoulli spikes.
spikes = encode_spikes(A, 8, rng)
print("input spike train (T x neurons):")
print(spikes.astype(int))

# One LIF neuron, weight 0.6: spikes on the first input, then coasts on decaying current.
O, trace = lif_forward(np.array([[1.0], [0.0], [0.0]]), LIFParams(np.array([[0.6]]), np.zeros(1)))
print("\nLIF outputs", O[:, 0], " currents", trace.c[:, 0], " voltages (pre-reset)", trace.v[:, 0])

# Temporal shrinking folds 3 steps of a spike raster into 2 steps of input current.
layer = ShrinkLayer(np.array([[2.0, 0.0, -2.0], [-2.0, 0.0, 2.0]]))
O = (rng.random((3, 6)) < 0.5).astype(float)
I, cache = shrink_forward(O, layer)
print("\nallocation matrix (columns sum to 1):")
print(cache.S)
print("spike mass per neuron before", O.sum(axis=0), "after", I.sum(axis=0))

# The full actor chains all of the above: T = 3 -> 2 -> 1 with 64 hidden neurons per stage.
net = PopSAN(default_spec())
obs = np.array([0.1, -0.2, 0.5, 0.4, -0.4, -0.6])
action, aux, tr = net.forward(obs, "train", rng=rng)
print("\naction", action, " auxiliary actions", [a.round(3) for a in aux])
for name, t in zip(net.lif_names("train"), [t for ts in tr.stage_traces for t in ts] + [tr.out_trace]):
    print(f"  {name:6s} T={t.T}  spike rate {t.spikes.mean():.3f}")
print("parameters:", net.n_params())
