"""
Virtual examples and the temperature rule of thumb
==================================================

Trains a balanced-softmax teacher, then looks at how its summed soft
predictions spread over the classes as the temperature rises. The selector
keeps the first setting where the tail classes receive at least as much
virtual mass as the head.
"""

from dive_lab import data, distill, experiments
from dive_lab import model as mdl
from dive_lab.model import LossSpec

train, _ = data.synth_pair(seed=0)
split = data.split_subsets(train.profile)
teacher, _ = mdl.train(train, LossSpec("bsce", counts=train.profile.counts), experiments.DESK_CONFIG)
z = mdl.forward(teacher, train.features)

print(" tau  power    many  medium     few      kl")
rec = distill.select_tau(z, split, train.profile)
for tau, power, rep in rec.scan_table:
    print(f"{tau:4g}  {int(power):5d}  {rep.mean_many:6.1f}  {rep.mean_medium:6.1f}  {rep.mean_few:6.1f}  {rep.kl_to_uniform:.4f}")

print(f"\nchosen: teacher tau {rec.tau:g}, power {rec.power}, student tau {rec.student_tau:g}")
print("criterion met:", rec.criterion_met)

# The histogram always carries exactly one unit of mass per example.
hist = distill.virtual_distribution(z, rec.student_tau, rec.power)
print(f"histogram mass {hist.per_class.sum():.6f} for n = {train.n}")
