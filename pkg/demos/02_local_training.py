"""One client's local training, and a check of the analytic gradient.

    python3 demos/02_local_training.py
"""

import numpy as np

from flsim.modelcore import ModelSpec, ParamVector, TrainConfig, evaluate, init_params, loss_and_grad, train_local
from flsim.partition import preprocess_chunk, synthetic_blobs

root = synthetic_blobs({"n_samples": 400, "n_features": 4, "n_classes": 3}, seed=1)
train, test = preprocess_chunk(root, range(root.n_samples), 0.8)

for spec in (ModelSpec("logistic-regression", 4, 3, seed=1), ModelSpec("mlp", 4, 3, (16,), seed=1)):
    params = init_params(spec)
    before = evaluate(params, test)
    result = train_local(params, train, TrainConfig(learning_rate=0.1, batch_size=16, local_epochs=3))
    after = evaluate(result.params, test)
    print(f"{spec.kind:20s} {len(params):4d} params  "
          f"accuracy {before.accuracy:.3f} -> {after.accuracy:.3f} after {result.steps} steps")

    # central differences on a handful of coordinates
    _, grad = loss_and_grad(params, train.features[:8], train.labels[:8])
    h = 1e-6
    worst = 0.0
    for i in range(0, len(params), max(1, len(params) // 6)):
        up, down = params.values.copy(), params.values.copy()
        up[i] += h
        down[i] -= h
        f_up = loss_and_grad(ParamVector(up, params.layout), train.features[:8], train.labels[:8])[0]
        f_down = loss_and_grad(ParamVector(down, params.layout), train.features[:8], train.labels[:8])[0]
        worst = max(worst, abs((f_up - f_down) / (2 * h) - grad[i]))
    print(f"{'':20s} largest gradient mismatch on sampled coordinates: {worst:.1e}")
