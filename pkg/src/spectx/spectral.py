"""Spectral decomposition of agent history windows.

A history window is a ``t x d`` matrix of per-step global state features
(oldest row first).  This module provides the discrete Fourier transform
and its inverse, a dyadic bank of low-pass / band-pass frequency windows,
signal decomposition and reconstruction against such a bank, and the
fixed-size low-frequency feature vector consumed by the context-length
controller.

Everything here is a pure function of its inputs; returned arrays are
marked read-only so values can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Inverse transforms of conjugate-symmetric spectra should be real to
# roundoff; anything above this (relative) imaginary residue means the
# spectrum was malformed.
_IMAG_RESIDUE_TOL = 1e-6

_dft_matrix_cache: dict[int, np.ndarray] = {}


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def next_pow2(n: int) -> int:
    """Smallest power of two >= n (n >= 1)."""
    if n < 1:
        raise ValidationError(f"next_pow2 requires n >= 1, got {n}")
    return 1 << (int(n) - 1).bit_length()


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 transform for power-of-two lengths."""
    n = x.size
    levels = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(levels):
        rev = (rev << 1) | ((idx >> b) & 1)
    out = x[rev].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(n // size, size)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * twiddle
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        size *= 2
    return out


def _dft_matrix(t: int) -> np.ndarray:
    mat = _dft_matrix_cache.get(t)
    if mat is None:
        k = np.arange(t)
        mat = np.exp(-2j * np.pi * np.outer(k, k) / t)
        if t <= 1024:
            _dft_matrix_cache[t] = mat
    return mat


def dft(signal) -> np.ndarray:
    """Forward transform: S[k] = sum_u s[u] exp(-i 2 pi k u / t).

    Short lengths use the direct (cached) matrix product; longer
    power-of-two lengths go through a radix-2 butterfly.
    """
    x = np.asarray(signal, dtype=np.complex128).reshape(-1)
    if x.size < 1:
        raise ValidationError("dft requires a signal of length >= 1")
    if not np.all(np.isfinite(x.real)) or not np.all(np.isfinite(x.imag)):
        raise ValidationError("dft input contains non-finite values")
    if is_pow2(x.size) and x.size > 512:
        return _fft_pow2(x)
    return _dft_matrix(x.size) @ x


def dft_columns(matrix: np.ndarray) -> np.ndarray:
    """Column-wise forward transform of a (t, d) real matrix in one pass."""
    mat = np.asarray(matrix, dtype=np.float64)
    t = mat.shape[0]
    if t <= 512 or not is_pow2(t):
        return _dft_matrix(t) @ mat
    return np.stack([_fft_pow2(mat[:, c].astype(np.complex128))
                     for c in range(mat.shape[1])], axis=1)


def idft(coefficients) -> np.ndarray:
    """Inverse transform, returning the real signal.

    The inverse of a conjugate-symmetric spectrum is real up to roundoff;
    that residue is discarded.  A residue above 1e-6 (relative to the
    signal magnitude, floored at 1) means the spectrum was not conjugate
    symmetric and raises ValidationError.
    """
    s = np.asarray(coefficients, dtype=np.complex128).reshape(-1)
    if s.size < 1:
        raise ValidationError("idft requires a spectrum of length >= 1")
    if not np.all(np.isfinite(s.real)) or not np.all(np.isfinite(s.imag)):
        raise ValidationError("idft input contains non-finite values")
    inv = np.conj(dft(np.conj(s))) / s.size
    scale = max(1.0, float(np.abs(inv).max()))
    residue = float(np.abs(inv.imag).max())
    if residue > _IMAG_RESIDUE_TOL * scale:
        raise ValidationError(
            f"spectrum is not conjugate symmetric (imaginary residue {residue:.3e})"
        )
    return inv.real.copy()


@dataclass(frozen=True)
class HistoryWindow:
    """A ``t x d`` matrix of per-step features, oldest row first."""

    steps: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.steps, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"history must be 2-D (t, d), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"history needs t >= 1 and d >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("history contains non-finite values")
        object.__setattr__(self, "steps", _freeze(arr))

    @property
    def t(self) -> int:
        return self.steps.shape[0]

    @property
    def d(self) -> int:
        return self.steps.shape[1]


@dataclass(frozen=True)
class WindowBank:
    """Low-pass plus dyadic band-pass 0/1 windows over frequency indices.

    ``mode="literal"`` keeps the half-open dyadic supports as written,
    which leaves a small set of frequency indices covered by no window
    (``residual_set``).  ``mode="exact"`` assigns every index to exactly
    one window via the folded frequency f = min(k, t - k), so the windows
    sum to one everywhere.
    """

    t: int
    m: int
    mode: str
    lowpass: np.ndarray
    bands: tuple
    residual_set: tuple

    def coverage(self) -> np.ndarray:
        """Pointwise sum of all windows (1 everywhere except residuals)."""
        total = self.lowpass.copy()
        for band in self.bands:
            total = total + band
        return total


def build_window_bank(t: int, m: int, mode: str = "exact") -> WindowBank:
    """Construct the window bank for signal length t = 2^J and cutoff level m.

    The low-pass window covers k <= 2^m and k >= t - 2^m.  Band j covers
    the dyadic shell 2^(j+m) <= k < 2^(j+m+1) together with its mirror
    t - 2^(j+m+1) < k <= t - 2^(j+m), with the low-pass window taking
    precedence at the shared boundary points k = 2^m and k = t - 2^m.

    The top band (j = J-1-m) is special: its written support reaches past
    the Nyquist index and its mirror aliases onto every other window, so
    keeping it verbatim would break pairwise disjointness.  In literal
    mode it is therefore left empty, which is what puts the Nyquist index
    into the residual set; in exact mode the folded-frequency assignment
    hands Nyquist to the top band and the partition is complete.
    """
    if not is_pow2(t) or t < 4:
        raise ValidationError(f"t must be a power of two >= 4, got {t}")
    J = t.bit_length() - 1
    if not (0 < m < J):
        raise ValidationError(f"m must satisfy 0 < m < J={J}, got {m}")
    if 2**m >= t // 2:
        raise ValidationError(f"need 2^m < t/2, got m={m}, t={t}")
    if mode not in ("literal", "exact"):
        raise ValidationError(f"mode must be 'literal' or 'exact', got {mode!r}")

    k = np.arange(t)
    n_bands = J - m  # j = 0 .. J-1-m
    lowpass = ((k <= 2**m) | (k >= t - 2**m)).astype(np.float64)

    bands = []
    if mode == "literal":
        for j in range(n_bands - 1):
            lo, hi = 2 ** (j + m), 2 ** (j + m + 1)
            left = (k >= lo) & (k < hi)
            mirror = (k > t - hi) & (k <= t - lo)
            bands.append(((left | mirror) & (lowpass == 0)).astype(np.float64))
        bands.append(np.zeros(t))  # top band: support fully aliased, dropped
    else:
        f = np.minimum(k, t - k)
        low_mask = f <= 2**m
        # exact integer floor(log2 f) via frexp, avoiding float log fuzz
        _, exp = np.frexp(np.maximum(f, 1))
        j_of_k = np.minimum(exp - 1 - m, n_bands - 1)
        for j in range(n_bands):
            bands.append(((~low_mask) & (j_of_k == j)).astype(np.float64))

    total = lowpass + np.sum(bands, axis=0)
    residual = tuple(int(i) for i in np.flatnonzero(total == 0))
    return WindowBank(
        t=t,
        m=m,
        mode=mode,
        lowpass=_freeze(lowpass),
        bands=tuple(_freeze(b) for b in bands),
        residual_set=residual,
    )


def partition_residual_trend(m: int, lengths, mode: str = "literal"):
    """Residual fraction |E|/t for each length, for checking the 1/t decay."""
    out = []
    for t in lengths:
        bank = build_window_bank(int(t), m, mode)
        out.append((int(t), len(bank.residual_set) / int(t)))
    return out


@dataclass(frozen=True)
class SpectralDecomposition:
    """Per-channel spectrum plus its low-pass and band-pass components."""

    coefficients: np.ndarray  # (t, d) complex
    lowpass_component: np.ndarray  # (t, d)
    band_components: tuple  # of (t, d) arrays

    def reconstruction(self) -> np.ndarray:
        total = self.lowpass_component.copy()
        for comp in self.band_components:
            total = total + comp
        return total


def decompose(history: HistoryWindow, bank: WindowBank) -> SpectralDecomposition:
    """Split each feature channel into windowed frequency components.

    In exact mode the components sum back to the input to roundoff; in
    literal mode the reconstruction error energy equals the spectral
    energy sitting on the bank's residual indices.
    """
    if history.t != bank.t:
        raise ValidationError(
            f"history length {history.t} does not match bank length {bank.t}"
        )
    t, d = history.t, history.d
    coeffs = np.empty((t, d), dtype=np.complex128)
    lowpass = np.empty((t, d))
    band_comps = [np.empty((t, d)) for _ in bank.bands]
    for c in range(d):
        spectrum = dft(history.steps[:, c])
        coeffs[:, c] = spectrum
        lowpass[:, c] = idft(bank.lowpass * spectrum)
        for j, band in enumerate(bank.bands):
            band_comps[j][:, c] = idft(band * spectrum)
    return SpectralDecomposition(
        coefficients=_freeze(coeffs),
        lowpass_component=_freeze(lowpass),
        band_components=tuple(_freeze(b) for b in band_comps),
    )


@dataclass(frozen=True)
class CentralState:
    """Fixed-size low-frequency summary of a history window.

    ``features`` has dimension d * (2*k0 - 1) regardless of how long the
    source history was: per channel, the real parts of the first k0
    spectrum coefficients followed by the imaginary parts of coefficients
    1..k0-1 (Im S[0] is identically zero for real input and omitted).
    """

    features: np.ndarray
    k0: int
    source_t: int


def central_state(history: HistoryWindow, k0: int) -> CentralState:
    """Zero-pad the history to a power of two and keep the first k0 coefficients.

    Padding prepends zero rows on the oldest side, which keeps the most
    recent samples' phase alignment at the end of the window.  The padded
    length is the smallest power of two >= max(t, 2*k0), so k0 never
    exceeds the padded Nyquist index.
    """
    if int(k0) != k0 or k0 < 1:
        raise ValidationError(f"k0 must be a positive integer, got {k0}")
    k0 = int(k0)
    t_pad = next_pow2(max(history.t, 2 * k0))
    if k0 > t_pad // 2:
        raise ValidationError(f"k0={k0} exceeds Nyquist index of padded window {t_pad}")
    padded = np.zeros((t_pad, history.d))
    padded[t_pad - history.t:, :] = history.steps
    spectra = dft_columns(padded)  # (t_pad, d)
    per_channel = np.vstack([spectra[:k0].real, spectra[1:k0].imag])  # (2k0-1, d)
    features = per_channel.T.reshape(-1)
    return CentralState(features=_freeze(features), k0=k0, source_t=history.t)
