"""Network topologies for the feature, lighting and critic nets."""
from __future__ import annotations

from .nn import layers as L

FEATURE_DIM = 128
OUTPUT_DIM = 18


def feature_net_specs(widths=(16, 32, 64), blocks_per_stage=2, feature_dim=FEATURE_DIM):
    """Reduced residual stack.

    conv(w0)-bn-relu, ``blocks_per_stage`` residual blocks at w0, then for
    every further width a stride-2 conv-bn-relu followed by the blocks, then
    flatten and fc(feature_dim).
    """
    specs = [L.conv3x3(widths[0]), L.batchnorm(), L.relu()]
    specs += [L.residual_block() for _ in range(blocks_per_stage)]
    for w in widths[1:]:
        specs += [L.conv3x3(w, stride=2), L.batchnorm(), L.relu()]
        specs += [L.residual_block() for _ in range(blocks_per_stage)]
    specs += [L.global_flatten(), L.fc(feature_dim)]
    return specs


def lighting_net_specs(hidden=128, dropout_rate=0.5, out_dim=OUTPUT_DIM):
    """FC-ReLU-128, dropout 0.5, FC-18."""
    return [L.fc(hidden), L.relu(), L.dropout(dropout_rate), L.fc(out_dim)]


def critic_specs(hidden=(128, 128)):
    """Stack of FC-ReLU layers followed by FC-tanh with a single output."""
    specs = []
    for h in hidden:
        specs += [L.fc(h), L.relu()]
    specs += [L.fc(1), L.tanh()]
    return specs
