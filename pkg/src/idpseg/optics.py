"""Phase contrast diffraction kernels and their regularized inverses.

A phase retardation ``theta`` produces the point spread function::

    psf(theta) = sin(theta) * delta + (zeta_p * cos(theta) - sin(theta)) * airy

where ``delta`` is the unit impulse and ``airy`` the obscured Airy pattern
of a phase ring with outer radius ``R`` and width ``W`` (both in cycles
per pixel). The ring's amplitude response is::

    A(r) = R J1(2 pi R r) / r - (R - W) J1(2 pi (R - W) r) / r

The kernel taps are the intensity ``A(r)**2`` normalized to unit sum.
The amplitude itself integrates to zero over the plane, so it cannot be
normalized to unit sum.

Kernels are odd-sized square arrays with the origin at the center tap.
Convolution is done with FFTs on an image padded by ``(K - 1) // 2``
pixels of half-sample symmetric reflection, then cropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import j1

PAD_MODE = "symmetric"


@dataclass(frozen=True)
class OpticsParams:
    m_phases: int = 8
    zeta_p: float = 0.8
    airy_outer_radius: float = 0.25
    airy_ring_width: float = 0.1
    kernel_size: int = 17
    inv_reg: float = 1e-3

    def __post_init__(self):
        if self.m_phases < 1:
            raise ValueError("m_phases must be >= 1")
        if not 0 < self.zeta_p <= 1:
            raise ValueError("zeta_p must lie in (0, 1]")
        if not self.airy_outer_radius > 0:
            raise ValueError("airy_outer_radius must be > 0")
        if not 0 < self.airy_ring_width < self.airy_outer_radius:
            raise ValueError("airy_ring_width must satisfy 0 < W < airy_outer_radius")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if not self.inv_reg > 0:
            raise ValueError("inv_reg must be > 0")


@dataclass(frozen=True)
class KernelBank:
    phases: tuple[float, ...]
    kernels: np.ndarray  # (M, K, K)
    airy: np.ndarray
    zeta_p: float

    def __len__(self) -> int:
        return len(self.phases)

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[-1]


@dataclass(frozen=True)
class FrequencyFilter:
    """Transfer function on a padded grid for images of ``image_shape``."""

    response: np.ndarray
    kernel_size: int
    image_shape: tuple[int, int]


def _check_kernel(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValueError("kernel has non-finite taps")
    return k


def impulse(size: int) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def ring_amplitude(r: np.ndarray, outer: float, width: float) -> np.ndarray:
    """Amplitude response of an annular aperture at radii ``r`` (pixels)."""
    r = np.asarray(r, dtype=np.float64)
    inner = outer - width
    out = np.empty_like(r)
    small = r < 1e-12
    rr = r[~small]
    out[~small] = (outer * j1(2 * np.pi * outer * rr) - inner * j1(2 * np.pi * inner * rr)) / rr
    # J1(x) ~ x/2 as x -> 0
    out[small] = np.pi * (outer**2 - inner**2)
    return out


def obscured_airy(params: OpticsParams | None = None) -> np.ndarray:
    params = params or OpticsParams()
    c = params.kernel_size // 2
    y, x = np.mgrid[-c:c + 1, -c:c + 1]
    taps = ring_amplitude(np.hypot(x, y), params.airy_outer_radius, params.airy_ring_width) ** 2
    total = taps.sum()
    if not total > 0:
        raise ValueError("airy kernel has no energy for these radii")
    taps = taps / total
    # exact dihedral symmetry, independent of rounding in hypot/J1
    taps = (taps + taps.T) / 2
    taps = (taps + taps[::-1] + taps[:, ::-1] + taps[::-1, ::-1]) / 4
    return taps / taps.sum()


def psf(theta: float, airy: np.ndarray, zeta_p: float) -> np.ndarray:
    airy = _check_kernel(airy)
    s = np.sin(theta)
    c = np.cos(theta)
    # snap to exact values at multiples of pi/2 so symmetric phases cancel exactly
    s = float(np.round(s)) if abs(s - np.round(s)) < 1e-15 else s
    c = float(np.round(c)) if abs(c - np.round(c)) < 1e-15 else c
    return s * impulse(airy.shape[0]) + (zeta_p * c - s) * airy


def bank_phases(m_phases: int) -> tuple[float, ...]:
    return tuple(2 * np.pi * m / m_phases for m in range(m_phases))


def psf_bank(params: OpticsParams | None = None) -> KernelBank:
    params = params or OpticsParams()
    airy = obscured_airy(params)
    phases = bank_phases(params.m_phases)
    kernels = [psf(theta, airy, params.zeta_p) for theta in phases]
    M = params.m_phases
    if M % 2 == 0:
        # phases m and m + M/2 differ by pi; enforce the sign flip bit-exactly
        for m in range(M // 2, M):
            kernels[m] = -kernels[m - M // 2]
    return KernelBank(phases, np.stack(kernels), airy, params.zeta_p)


def padded_shape(image_shape: tuple[int, int], kernel_size: int) -> tuple[int, int]:
    pad = 2 * (kernel_size // 2)
    return image_shape[0] + pad, image_shape[1] + pad


def kernel_spectrum(k: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """DFT of ``k`` zero-padded to ``shape`` with its center tap moved to the origin."""
    k = _check_kernel(k)
    size = k.shape[0]
    if shape[0] < size or shape[1] < size:
        raise ValueError(f"grid {shape} smaller than kernel size {size}")
    grid = np.zeros(shape)
    grid[:size, :size] = k
    grid = np.roll(grid, (-(size // 2), -(size // 2)), axis=(0, 1))
    return np.fft.fft2(grid)


def forward_filter(k: np.ndarray, image_shape: tuple[int, int]) -> FrequencyFilter:
    k = _check_kernel(k)
    shape = padded_shape(image_shape, k.shape[0])
    return FrequencyFilter(kernel_spectrum(k, shape), k.shape[0], tuple(image_shape))


def inverse_filter(k: np.ndarray, image_shape: tuple[int, int], eps_inv: float) -> FrequencyFilter:
    """Tikhonov-regularized inverse ``conj(F) / (|F|^2 + eps_inv)`` of kernel ``k``.

    The response lives on the padded grid used by :func:`convolve_freq`
    for images of ``image_shape``.
    """
    if not eps_inv > 0:
        raise ValueError("eps_inv must be > 0")
    fwd = forward_filter(k, image_shape)
    F = fwd.response
    return FrequencyFilter(np.conj(F) / (np.abs(F) ** 2 + eps_inv), fwd.kernel_size, fwd.image_shape)


def inverse_kernel(k: np.ndarray, eps_inv: float, grid: int = 128) -> np.ndarray:
    """Spatial taps of the regularized inverse, cropped to ``k``'s size around the origin."""
    k = _check_kernel(k)
    F = kernel_spectrum(k, (grid, grid))
    taps = np.fft.fftshift(np.fft.ifft2(np.conj(F) / (np.abs(F) ** 2 + eps_inv)).real)
    c = grid // 2
    h = k.shape[0] // 2
    return taps[c - h:c + h + 1, c - h:c + h + 1]


def convolve_freq(img: np.ndarray, filt: FrequencyFilter | np.ndarray) -> np.ndarray:
    """Convolve a frame with a kernel or a precomputed :class:`FrequencyFilter`."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D frame, got shape {img.shape}")
    if not isinstance(filt, FrequencyFilter):
        filt = forward_filter(filt, img.shape)
    elif filt.image_shape != img.shape:
        raise ValueError(f"filter built for {filt.image_shape}, image is {img.shape}")
    pad = filt.kernel_size // 2
    x = np.pad(img, pad, mode=PAD_MODE) if pad else img
    out = np.fft.ifft2(np.fft.fft2(x) * filt.response).real
    return out[pad:pad + img.shape[0], pad:pad + img.shape[1]]


@dataclass(frozen=True)
class IdpBank:
    """Inverse diffraction pattern filters for one image size."""

    phases: tuple[float, ...]
    filters: tuple[FrequencyFilter, ...]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.filters[0].image_shape


def idp_bank(bank: KernelBank, image_shape: tuple[int, int], eps_inv: float) -> IdpBank:
    filters = tuple(inverse_filter(k, image_shape, eps_inv) for k in bank.kernels)
    return IdpBank(bank.phases, filters)
