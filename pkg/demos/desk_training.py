"""
Training a small CNN with posit tensors
=======================================

The shipped plan trains a 2-conv + BN + 2-dense network on 10x10 digits.
Here we run the float baseline, 16-bit posits and the 8-bit conv/dense with
16-bit batch-norm mix, and also the 8-bit mix without a float master copy.

Pass a number of epochs as the first argument for a quicker run.
"""

import sys
from pathlib import Path

from posittrain.train import TrainPlan, load_plan_data, parse_quant_map, train

root = Path(__file__).resolve().parent.parent
plan = TrainPlan.load(root / "plans" / "desk_digits.json")
if len(sys.argv) > 1:
    epochs = int(sys.argv[1])
    plan = plan.replace(total_epochs=epochs, warmup_epochs=min(plan.warmup_epochs, epochs))
data = load_plan_data(plan)

runs = {
    "fp32": plan.replace(quant=parse_quant_map("fp32")),
    "posit16": plan,
    "posit8_bn16 + master": plan.replace(quant=parse_quant_map("posit8_bn16"), master_weights=True),
    "posit8_bn16": plan.replace(quant=parse_quant_map("posit8_bn16")),
}

for name, p in runs.items():
    metrics = train(p, data)
    accs = " ".join(f"{r.val_acc:.4f}" for r in metrics.epochs)
    print(f"{name:<22} val_acc by epoch: {accs}")

# Without the master copy, small updates fall below the 8-bit grid spacing
# of the weights and truncate to nothing, so the last run lags behind.
