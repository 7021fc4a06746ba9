"""The REINFORCE controller on a bandit where the right answer is known.

Three layers each pick from {INT4, INT6, INT8}; the reward is 1 only when
layer 0 picks INT4, layer 1 INT6, and layer 2 INT8.  During warmup the
policy samples uniformly and only collects reward statistics; afterwards
the entropy-regularized policy gradient sharpens it onto the optimum.
"""

import numpy as np

from fliqs.arch import ArchChoice
from fliqs.controller import (
    advantage_update,
    beta_schedule,
    make_controller,
    model_entropy,
    reinforce_step,
    sample_architecture,
)
from fliqs.formats import int_format

OPTIONS = [ArchChoice(int_format(k)) for k in (4, 6, 8)]
DESIGNATED = (0, 1, 2)
STEPS = 5000

state = make_controller(["a", "b", "c"], [OPTIONS] * 3)
rng = np.random.default_rng(0)
warmup = int(state.warmup_fraction * STEPS)

for t in range(STEPS):
    progress = t / STEPS
    idx = sample_architecture(state, rng, progress)
    reward = 1.0 if tuple(idx) == DESIGNATED else 0.0
    advantage = advantage_update(state, reward)
    if t >= warmup:
        reinforce_step(state, idx, advantage,
                       beta_schedule(progress, beta_end=0.5))
    if t % 1000 == 0 or t == STEPS - 1:
        probs = [p.probs()[d] for p, d in zip(state.policies, DESIGNATED)]
        print(f"step {t:4d}  H={model_entropy(state):6.4f}  "
              f"p(designated) = {', '.join(f'{p:.3f}' for p in probs)}")

final = [int(np.argmax(p.probs())) for p in state.policies]
labels = [OPTIONS[i].label for i in final]
print(f"\nargmax architecture: {labels} "
      f"({'optimal' if tuple(final) == DESIGNATED else 'missed'})")
