"""
Soft targets, balanced softmax and the distillation losses
==========================================================

Walks through the probability helpers and the loss functions on a single
three-class example, then checks two algebraic facts numerically.
"""

import numpy as np

from dive_lab import mathcore as mc

z_student = np.array([2.0, 0.5, -1.0])
z_teacher = np.array([3.0, 1.0, 0.2])
y = mc.one_hot(0, 3)
counts = np.array([500, 50, 5])

# Temperature flattens a distribution without changing its argmax.
for tau in (1, 3, 10):
    print(f"tau={tau:>2}  softmax_temp = {np.round(mc.softmax_temp(z_teacher, tau), 4)}")

# Balanced softmax shifts each logit by the log class frequency, so a rare
# class needs a larger logit to win. Equal counts give plain softmax back.
print("balanced softmax:", np.round(mc.bsce_softmax(z_student, counts), 4))
print("equal counts    :", np.allclose(mc.bsce_softmax(z_student, [7, 7, 7]), mc.softmax(z_student)))

# Power normalization with p=0.5 is the same as doubling the temperature.
t3 = mc.softmax_temp(z_teacher, 3.0)
print("power(t^3, .5) == t^6:", np.allclose(mc.power_normalize(t3, 0.5), mc.softmax_temp(z_teacher, 6.0)))

# Classic distillation at tau=1 is cross-entropy against a blended label
# minus a constant (the weighted teacher entropy).
cfg = mc.DistillConfig(alpha=0.5, tau=1.0)
kd = mc.kd_loss(y, z_teacher, z_student, cfg).value
t = mc.softmax(z_teacher)
dldl = mc.cross_entropy(mc.blended_target(y, t, 0.5), mc.softmax(z_student)) - 0.5 * mc.entropy(t)
print(f"KD {kd:.12f}  vs  blended CE - alpha*H(t) {dldl:.12f}")

# DiVE: balanced CE on the labels plus a tempered KL to a power-normalized teacher.
dive_cfg = mc.DistillConfig(alpha=0.5, tau=3.0, power_p=0.5)
lv = mc.dive_loss(y, z_teacher, z_student, counts, dive_cfg)
print(f"DiVE loss {lv.value:.4f}, gradient {np.round(lv.grad_logits, 4)}")
print("teacher temperature in effect:", dive_cfg.teacher_tau)
