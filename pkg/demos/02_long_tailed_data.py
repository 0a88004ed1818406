"""
Long-tailed synthetic data
==========================

Builds the exponential class profile, samples a Gaussian mixture with that
profile, splits classes into many/medium/few and round-trips the binary
container.
"""

import tempfile
from pathlib import Path

import numpy as np

from dive_lab import data

profile = data.exp_profile(C=20, n_max=200, beta=100)
print("counts:", profile.counts.tolist())
print(f"imbalance {profile.beta:.0f}, {profile.total} training examples")

split = data.split_subsets(profile)
print(f"many {sorted(split.many)}\nmedium {sorted(split.medium)}\nfew {sorted(split.few)}")

train, test = data.synth_pair(seed=0)
print("train", train.features.shape, "test", test.features.shape, "(balanced test set)")

# Distance between the class means is controlled by the separation radius.
means = data.class_means(20, 32, 3.0, 0)
print("mean norms:", np.round(np.linalg.norm(means, axis=1)[:4], 3), "...")

# Label smoothing on a two-class problem moves mass from head to tail.
eps = 0.4
print(f"virtual ratio at eps={eps}: {data.virtual_ratio(1000, 100, eps):.3f} (was 0.1)")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "train.dsb"
    data.save_dataset(train, path)
    back = data.load_dataset(path)
    print(f"container: {path.stat().st_size} bytes, identical = {back.features.tobytes() == train.features.tobytes()}")
