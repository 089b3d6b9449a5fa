"""Train the tiny network on generated textures, then save and reload it.

A few epochs on a 10-class, 32x32 dataset; pass an epoch count as the first
argument for a longer run (about two seconds per epoch on one core).
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from fetr import (
    NetworkSpec,
    OptimizerState,
    TrainConfig,
    build_network,
    evaluate,
    generate_synthetic,
    load_checkpoint,
    load_images,
    restore_network,
    save_checkpoint,
    snapshot,
    split_train_val,
    train_epoch,
)
from fetr.training import predict_logits

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 8

with tempfile.TemporaryDirectory() as tmp:
    manifest = generate_synthetic(Path(tmp) / "textures", num_classes=10, per_class=50, size=32, seed=1)
    train_m, val_m = split_train_val(manifest, 0.8, seed=0)
    train_set, val_set = load_images(train_m), load_images(val_m)
    print(f"{len(train_set.labels)} training / {len(val_set.labels)} validation images")

    net = build_network(NetworkSpec(num_classes=10), seed=0)
    config = TrainConfig(epochs=epochs, lr=1e-3, seed=0)
    state = OptimizerState("adam")
    for epoch in range(epochs):
        stats = train_epoch(net, train_set, config, state, epoch)
        val = evaluate(net, val_set, config)
        print(f"epoch {epoch + 1:3d}  lr {stats.lr:.2e}  loss {stats.loss:.3f}  train {stats.top1:.2f}  val {val.top1:.2f}")

    print(f"\nmacro F1 on validation: {val.f1:.3f}")
    path = Path(tmp) / "tiny.fetr"
    save_checkpoint(path, snapshot(net, state, epoch=epochs))
    again = restore_network(load_checkpoint(path))
    same = np.array_equal(predict_logits(net, val_set, config), predict_logits(again, val_set, config))
    print(f"checkpoint {path.stat().st_size:,d} bytes; reloaded logits identical: {same}")
