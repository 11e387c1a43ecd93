"""Centered 2-D Fourier transforms, learnable band-pass attention, FFC blocks.

The streak artifacts this toolkit removes live in an annulus of the image
spectrum, so all spectral features use a centered layout (DC at index
(H/2, W/2)); the attention map is a Gaussian transfer function over the
normalized distance from that center with one learnable inner radius and
bandwidth per channel.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

BAND_PASS_EPSILON = 1e-12
MIN_BANDWIDTH = 1e-6


def real_fft2_centered(x: torch.Tensor) -> torch.Tensor:
    """Per-channel 2-D DFT of a real map, shifted so DC sits at the center."""
    if x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ValueError("spatial dimensions must be >= 2")
    return torch.fft.fftshift(torch.fft.fft2(x), dim=(-2, -1))


def inverse_real_fft2_centered(z: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`real_fft2_centered`; returns the real part."""
    return torch.fft.ifft2(torch.fft.ifftshift(z, dim=(-2, -1))).real


def distance_map(u: int, v: int, device=None, dtype=torch.float32) -> torch.Tensor:
    """Normalized distance from the spectrum center, in [0, 1].

    Entry (i, j) is sqrt(((i - u/2)^2 + (j - v/2)^2) / m) with m the
    largest squared offset on the grid, so the far corner maps to 1 and
    (for even sizes) the center bin to exactly 0.
    """
    if u < 2 or v < 2:
        raise ValueError("distance map needs u, v >= 2")
    iu = torch.arange(u, device=device, dtype=dtype) - u / 2.0
    jv = torch.arange(v, device=device, dtype=dtype) - v / 2.0
    sq = iu[:, None] ** 2 + jv[None, :] ** 2
    return torch.sqrt(sq / sq.max())


def band_pass_map(d0: torch.Tensor, w: torch.Tensor, dist: torch.Tensor) -> torch.Tensor:
    """Gaussian band-pass transfer maps, one per channel.

    ``exp(-((D^2 - d0^2) / (w * D + eps))^2)`` evaluated per channel; the
    map is 1 exactly where D equals the inner radius and decays with the
    squared-radius gap, at a rate set by the bandwidth.
    """
    d0 = d0.reshape(-1, 1, 1)
    w = w.reshape(-1, 1, 1)
    num = dist[None] ** 2 - d0**2
    den = w * dist[None] + BAND_PASS_EPSILON
    return torch.exp(-((num / den) ** 2))


class BandPassAttention(nn.Module):
    """Per-channel learnable (inner radius, bandwidth) pair.

    Initialized to d0 = 0, w = 1; :meth:`clamp_` must run after every
    optimizer step to keep d0 in [0, 1] and w strictly positive.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.d0 = nn.Parameter(torch.zeros(channels))
        self.w = nn.Parameter(torch.ones(channels))

    @torch.no_grad()
    def clamp_(self) -> None:
        self.d0.clamp_(0.0, 1.0)
        self.w.clamp_(min=MIN_BANDWIDTH)

    def forward(self, dist: torch.Tensor) -> torch.Tensor:
        return band_pass_map(self.d0, self.w, dist)


def _norm(channels: int) -> nn.Module:
    # batch-size independent normalization; batches here are tiny
    return nn.GroupNorm(math.gcd(8, channels), channels)


class FourierUnit(nn.Module):
    """Spectral convolution with optional band-pass attention.

    forward: centered FFT -> (Hadamard with the attention map) -> 1x1
    convolution over stacked real/imaginary channels with normalization
    and ReLU -> inverse FFT (real part).
    """

    def __init__(self, in_channels: int, out_channels: int, use_band_pass: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.band_pass = BandPassAttention(in_channels) if use_band_pass else None
        self.conv = nn.Conv2d(2 * in_channels, 2 * out_channels, kernel_size=1)
        self.norm = _norm(2 * out_channels)
        self.act = nn.ReLU(inplace=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        z = real_fft2_centered(x)
        if self.band_pass is not None:
            dist = distance_map(z.shape[-2], z.shape[-1], device=x.device, dtype=x.dtype)
            z = z * self.band_pass(dist)[None]
        zr = torch.cat([z.real, z.imag], dim=1)
        zr = self.act(self.norm(self.conv(zr)))
        z_out = torch.complex(zr[:, : self.out_channels], zr[:, self.out_channels :])
        out = inverse_real_fft2_centered(z_out)
        return out[0] if squeeze else out


class FFCBlock(nn.Module):
    """Fast-Fourier-convolution block with band-pass spectral branch.

    Channels split evenly into a local (spatial) and a global (spectral)
    half; the four cross paths are summed per destination, then each half
    is normalized and activated.  Output shape equals input shape.
    """

    def __init__(self, channels: int, use_band_pass: bool = True):
        super().__init__()
        if channels % 2 != 0:
            raise ValueError(f"FFCBlock needs an even channel count, got {channels}")
        half = channels // 2
        self.half = half
        self.local_to_local = nn.Conv2d(half, half, kernel_size=3, padding=1)
        self.local_to_global = nn.Conv2d(half, half, kernel_size=3, padding=1)
        self.global_to_local = nn.Conv2d(half, half, kernel_size=1)
        self.global_to_global = FourierUnit(half, half, use_band_pass=use_band_pass)
        self.norm_local = _norm(half)
        self.norm_global = _norm(half)
        self.act = nn.ReLU(inplace=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if x.shape[1] != 2 * self.half:
            raise ValueError(f"expected {2 * self.half} channels, got {x.shape[1]}")
        xl, xg = x[:, : self.half], x[:, self.half :]
        out_l = self.act(self.norm_local(self.local_to_local(xl) + self.global_to_local(xg)))
        out_g = self.act(self.norm_global(self.local_to_global(xl) + self.global_to_global(xg)))
        out = torch.cat([out_l, out_g], dim=1)
        return out[0] if squeeze else out


def band_pass_parameters(module: nn.Module):
    """All band-pass attention submodules below ``module``."""
    return [m for m in module.modules() if isinstance(m, BandPassAttention)]


def clamp_band_pass(module: nn.Module) -> None:
    """Re-impose the d0/w constraints; call after each optimizer step."""
    for bp in band_pass_parameters(module):
        bp.clamp_()
