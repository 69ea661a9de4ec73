"""Toy convolutional autoencoder wrapped around the binary FSQ bottleneck.

Small enough to train on CPU in minutes: log2(f) strided conv blocks down,
a 1x1 projection to the d binary channels, and a mirrored transposed-conv
decoder. Reconstruction quality is plain per-pixel MSE.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

from .bitcodec import TokenGrid
from .errors import DomainError, TrainingError
from .fsq import FsqConfig, fsq_quantize

HIDDEN = 64


class ToyAutoencoder(nn.Module):
    def __init__(self, cfg: FsqConfig, use_bottleneck: bool = True):
        super().__init__()
        f = cfg.downsample_factor
        n_down = int(math.log2(f))
        if 2**n_down != f:
            raise DomainError(f"downsample factor must be a power of 2, got {f}")
        self.cfg = cfg
        self.use_bottleneck = use_bottleneck

        enc = []
        ch = 3
        for _ in range(n_down):
            enc += [nn.Conv2d(ch, HIDDEN, 3, stride=2, padding=1), nn.GELU()]
            ch = HIDDEN
        # bound the latent: with a pure straight-through bottleneck an
        # unbounded encoder output drifts without changing the forward pass
        enc += [nn.Conv2d(ch, cfg.channels_per_token, 1), nn.Tanh()]
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(cfg.channels_per_token, HIDDEN, 1), nn.GELU()]
        for i in range(n_down):
            out_ch = 3 if i == n_down - 1 else HIDDEN
            dec += [nn.ConvTranspose2d(HIDDEN, out_ch, 4, stride=2, padding=1)]
            if i != n_down - 1:
                dec += [nn.GELU()]
        self.decoder = nn.Sequential(*dec)

    def forward(self, images):
        latent = self.encoder(images)
        if self.use_bottleneck:
            _, latent = fsq_quantize(latent)
        return self.decoder(latent)

    def tokenize(self, images) -> list[TokenGrid]:
        """Quantize a batch of images into one token grid each."""
        with torch.no_grad():
            latent = self.encoder(images)
        bits, _ = fsq_quantize(latent)
        return [TokenGrid(b.permute(1, 2, 0).numpy()) for b in bits]


def train_toy_autoencoder(
    images: np.ndarray,
    cfg: FsqConfig,
    epochs: int = 20,
    batch_size: int = 32,
    lr: float = 2e-3,
    seed: int = 0,
    use_bottleneck: bool = True,
):
    """Train on an (N, 3, H, W) float corpus in [0, 1]; returns the model,
    the per-epoch mean MSE curve, and the final full-corpus MSE."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = ToyAutoencoder(cfg, use_bottleneck=use_bottleneck)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    data = torch.from_numpy(np.asarray(images, dtype=np.float32))
    n = data.shape[0]
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for b in range(0, n, batch_size):
            batch = data[order[b : b + batch_size]]
            recon = model(batch)
            loss = torch.mean((recon - batch) ** 2)
            if not torch.isfinite(loss):
                raise TrainingError(
                    "toy autoencoder diverged",
                    diagnostics={"epoch": epoch, "loss": float(loss)},
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        curve.append(float(np.mean(epoch_losses)))
    with torch.no_grad():
        final_mse = float(torch.mean((model(data) - data) ** 2))
    return model, curve, final_mse


def write_ppm(image: np.ndarray, path) -> None:
    """Dump a (3, H, W) float image in [0, 1] as binary PPM for eyeballing."""
    img = np.clip(np.asarray(image), 0.0, 1.0)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DomainError(f"expected a (3, H, W) image, got {img.shape}")
    h, w = img.shape[1:]
    body = (img.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(body.tobytes())
