"""A complete mixed-precision search, small enough to watch run.

Trains a two-layer MLP on synthetic blobs while the controller assigns
each dense layer a format from {INT4, INT8, BF16}.  The cost target sits
midway between the all-INT4 and all-INT8 models, so the policy has to
mix formats rather than pile everything into one end.
"""

import numpy as np

from fliqs.search import (
    ControllerConfig,
    SearchConfig,
    TrainerConfig,
    run_search,
    run_uniform,
    serve_config,
)

cfg = SearchConfig(
    model="mlp-2x16",
    data={"kind": "blobs", "classes": 4, "dims": 12, "n_per_class": 150,
          "separation": 4.0},
    search_space="FLIQS-S-int",
    total_steps=600,
    cost_target_gbops=2.048e-5,
    controller=ControllerConfig(lr=0.02),
    trainer=TrainerConfig(batch_size=64, lr=0.05),
    seed=0,
)

result = run_search(cfg)

print("trace (every 100th step):")
print("  step  reward  quality  cost/target  entropy  sampled")
for rec in result.trace[::100]:
    sampled = ",".join(rec.sampled[n] for n in result.layer_names)
    print(f"  {rec.step:4d}  {rec.reward:6.3f}  {rec.quality:7.3f}  "
          f"{rec.cost_gbops / cfg.cost_target_gbops:11.3f}  "
          f"{rec.entropy:7.4f}  {sampled}")

print("\nfinal architecture (argmax of the policy):")
for name in result.layer_names:
    arch = result.final_archs[name]
    probs = result.final_probs[name]
    print(f"  {name:4s} {arch.label:5s} (p={probs[arch.label]:.3f})")

print(f"\nserved accuracy {result.served_accuracy:.4f} at "
      f"{result.served_cost_gbops:.6g} GBOPs "
      f"(target {cfg.cost_target_gbops:.6g})")

# Uniform baselines put the searched point in context.
for fmt in ["INT4", "INT8"]:
    r = run_uniform(cfg, fmt)
    print(f"uniform {fmt}: accuracy {r.served_accuracy:.4f} at "
          f"{r.served_cost_gbops:.6g} GBOPs")

# The serving document is all anyone needs to rebuild the model.
doc = serve_config(result)
print(f"\nserve config: model={doc['model']}, "
      f"{len(doc['layers'])} layers, keys={sorted(doc)}")
