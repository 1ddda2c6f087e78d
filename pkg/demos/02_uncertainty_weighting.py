"""
Learning task weights from homoscedastic uncertainty
====================================================

Each task t gets a learnable log-variance s_t. Classification terms enter
the joint loss as exp(-s) * L + s / 2, the reconstruction term as
exp(-s) * L / 2 + s / 2. With the task losses frozen, gradient descent on s
alone settles where the noisier (larger) loss gets the smaller weight.
"""

import numpy as np

from mtlseg.losses import UncertaintyParams, joint_loss_uncertainty, optimal_s_for_constant_loss
from mtlseg.tensor import Tensor, backward, sgd_step

frozen = {"seg": 1.0, "bnd": 4.0, "rec": 2.0}
losses = [Tensor(np.full((1, 1, 1, 1), v, dtype=np.float32)) for v in frozen.values()]
u = UncertaintyParams()

# at s = 0 the effective weights are (1, 1, 0.5)
_, breakdown = joint_loss_uncertainty(*losses, u)
print("step 0 weights:", breakdown.effective_weights)

for step in range(1, 401):
    joint, breakdown = joint_loss_uncertainty(*losses, u)
    backward(joint)
    sgd_step(u.parameters(), lr=0.05, momentum=0.0, weight_decay=0.0)
    if step in (10, 50, 100, 400):
        s = u.values()
        print(f"step {step:3d}  s = ({s['seg']:.4f}, {s['bnd']:.4f}, {s['rec']:.4f})  joint = {breakdown.l_joint:.4f}")

# compare with the stationary points ln(2L) and ln(L)
for task, loss in frozen.items():
    target = optimal_s_for_constant_loss(loss, is_regression=task == "rec")
    print(f"{task}: learned {u.values()[task]:.4f}  optimum {target:.4f}  weight {breakdown.effective_weights[('seg', 'bnd', 'rec').index(task)]:.4f}")
