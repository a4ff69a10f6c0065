"""Conditional Wasserstein critic over decoder hidden states.

Condition states and candidate states are crossed into an image-like
feature map (vector pair, absolute difference, elementwise product per
cell), scored by a small dense-block CNN with one scalar output per real
class, and regularized toward unit gradient norm at interpolated inputs.
"""

import torch
from torch import nn

POSITIVE_CLASS = 0
NEGATIVE_CLASS = 1
NUM_CLASSES = 2


def build_feature_map(h_x, h):
    """Cross condition states h_x (B x Tx x W) with candidates h (B x T x W).

    Cell (i, j) holds [h_x_i ; h_j ; |h_x_i - h_j| ; h_x_i * h_j], giving a
    B x Tx x T x 4W image.
    """
    if h_x.shape[-1] != h.shape[-1]:
        raise ValueError(f"hidden widths differ: {h_x.shape[-1]} vs {h.shape[-1]}")
    if h_x.shape[0] != h.shape[0]:
        raise ValueError("batch sizes differ")
    a = h_x.unsqueeze(2).expand(-1, -1, h.shape[1], -1)
    b = h.unsqueeze(1).expand(-1, h_x.shape[1], -1, -1)
    return torch.cat([a, b, (a - b).abs(), a * b], dim=-1)


class CriticNet(nn.Module):
    """Dense-block CNN with per-class scalar heads.

    Two dense blocks (3 convolutions each, 3x3 kernels, fixed growth rate)
    separated by transition blocks (1x1 convolution halving channels, then
    2x2 average pooling), LeakyReLU activations throughout, global average
    pooling and a 2-layer MLP head. The head is linear: outputs are
    unconstrained distance potentials.
    """

    def __init__(self, in_channels, num_classes=NUM_CLASSES, growth=12,
                 blocks=2, layers_per_block=3, mlp_hidden=128, slope=0.2):
        super().__init__()
        self.num_classes = num_classes
        self.slope = slope
        self.convs = nn.ModuleList()
        self.transitions = nn.ModuleList()
        channels = in_channels
        for _ in range(blocks):
            block = nn.ModuleList()
            for _ in range(layers_per_block):
                block.append(nn.Conv2d(channels, growth, kernel_size=3, padding=1))
                channels += growth
            self.convs.append(block)
            self.transitions.append(nn.Conv2d(channels, channels // 2, kernel_size=1))
            channels //= 2
        self.pool = nn.AvgPool2d(2, ceil_mode=True)
        self.head = nn.Sequential(
            nn.Linear(channels, mlp_hidden),
            nn.LeakyReLU(slope),
            nn.Linear(mlp_hidden, num_classes),
        )

    def forward(self, image):
        """Score a feature image (B x Tx x T x C) as per-class potentials (B x N)."""
        x = image.permute(0, 3, 1, 2)
        act = nn.functional.leaky_relu
        for block, transition in zip(self.convs, self.transitions):
            for conv in block:
                x = torch.cat([x, act(conv(x), self.slope)], dim=1)
            x = self.pool(act(transition(x), self.slope))
        return self.head(x.mean(dim=(2, 3)))

    def score_states(self, h, h_x):
        """Potentials of candidate states h conditioned on h_x."""
        return self.forward(build_feature_map(h_x, h))


def gradient_penalty(critic, h_real, h_fake, h_x, class_index, generator=None):
    """Mean squared deviation of the critic's gradient norm from 1.

    Interpolates real and fake hidden states with one Uniform(0,1)
    coefficient per example, differentiates the selected class potential
    with respect to the whole interpolated tensor, and averages
    (||grad||_2 - 1)^2 over the batch. Differentiable in the critic's
    parameters.
    """
    if h_real.shape != h_fake.shape:
        raise ValueError(f"real/fake shapes differ: {tuple(h_real.shape)} vs {tuple(h_fake.shape)}")
    u = torch.rand(h_real.shape[0], 1, 1, generator=generator, dtype=h_real.dtype)
    h_hat = (u * h_real + (1.0 - u) * h_fake).detach().requires_grad_(True)
    scores = critic.score_states(h_hat, h_x)[:, class_index]
    grads = torch.autograd.grad(scores.sum(), h_hat, create_graph=True)[0]
    norms = grads.flatten(start_dim=1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()
