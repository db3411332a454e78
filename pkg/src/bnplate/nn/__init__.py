from .layers import (
    conv2d_backward,
    conv2d_forward,
    dense_forward,
    flatten,
    maxpool_backward,
    maxpool_forward,
    relu_forward,
    sigmoid,
    softmax,
)
from .losses import bce, bce_with_logits, cross_entropy, cross_entropy_batch
from .network import LayerSpec, Network, infer_shapes, sgd_step
from .weights_io import load_weights, save_weights
from .gradcheck import numeric_gradient, relative_error
from .training import TrainConfig, parse_split, split_indices
