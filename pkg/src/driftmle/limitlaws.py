"""Reference limit laws with Kolmogorov-Smirnov distances; exit probability of |B| from [-1, 1]."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import kernels
from .rng import normal_block

ORACLE_FORMAT = "driftmle-zeta-oracle"
ORACLE_VERSION = 1
SQRT_HALF = 1.0 / math.sqrt(2.0)


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class LimitLaw:
    kind: str                       # "normal", "cauchy", "dickey-fuller"
    scale: float = 1.0              # dickey-fuller only: +-1/sqrt(2)
    oracle: np.ndarray | None = None  # sorted raw zeta samples

    def __post_init__(self):
        if self.kind not in ("normal", "cauchy", "dickey-fuller"):
            raise ValueError(f"unknown law {self.kind!r}")
        if self.kind == "dickey-fuller":
            if self.oracle is None:
                raise ValueError("dickey-fuller law needs an oracle sample set")
            if not np.isclose(abs(self.scale), SQRT_HALF) and abs(self.scale) != 1.0:
                raise ValueError("dickey-fuller scale must be +-1/sqrt(2) (or +-1 for raw zeta)")

    def samples(self) -> np.ndarray:
        """Sorted reference samples of the scaled law (dickey-fuller only)."""
        s = self.scale * self.oracle
        return s if self.scale > 0 else s[::-1]

    @property
    def label(self) -> str:
        if self.kind == "dickey-fuller":
            return f"dickey-fuller(scale={self.scale:+.6f})"
        return {"normal": "normal(0,1)", "cauchy": "cauchy-standard"}[self.kind]


def normal_law() -> LimitLaw:
    return LimitLaw("normal")


def cauchy_law() -> LimitLaw:
    return LimitLaw("cauchy")


def dickey_fuller_law(oracle: np.ndarray, sign: float = 1.0, scaled: bool = True) -> LimitLaw:
    """Law of sign(C)/sqrt(2) * zeta (``scaled``) or sign * zeta."""
    s = math.copysign(SQRT_HALF if scaled else 1.0, sign)
    return LimitLaw("dickey-fuller", s, np.sort(np.asarray(oracle, dtype=float)))


def cdf(law: LimitLaw, x):
    x = np.asarray(x, dtype=float)
    if law.kind == "normal":
        out = ndtr(x)
    elif law.kind == "cauchy":
        out = 0.5 + np.arctan(x) / math.pi
    else:
        ref = law.samples()
        n = ref.size
        levels = (np.arange(1, n + 1)) / n
        out = np.interp(x, ref, levels, left=0.0, right=1.0)
    return float(out) if out.ndim == 0 else out


def ks_statistic(samples, law) -> tuple[float, int]:
    """Kolmogorov-Smirnov distance.

    ``law`` is a LimitLaw (dickey-fuller is compared two-sample against its
    oracle) or an array of reference samples (two-sample).
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    if isinstance(law, LimitLaw) and law.kind != "dickey-fuller":
        f = cdf(law, x)
        i = np.arange(1, n + 1)
        d = max(np.max(i / n - f), np.max(f - (i - 1) / n))
        return float(d), n
    ref = law.samples() if isinstance(law, LimitLaw) else np.sort(np.asarray(law, dtype=float).ravel())
    if ref.size == 0:
        raise ValueError("empty reference sample")
    pts = np.concatenate([x, ref])
    fx = np.searchsorted(x, pts, side="right") / n
    fr = np.searchsorted(ref, pts, side="right") / ref.size
    return float(np.max(np.abs(fx - fr))), n


# --------------------------------------------------------------------------
# zeta = int W dW / int W^2 ds


def zeta_components(n: int, steps: int, base_seed: int, stream_offset: int = 0,
                    chunk: int = 256, threads: int = 1):
    """(numerator, denominator) per sample; numerator uses the Ito identity (W_1^2-1)/2."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if steps < 256:
        raise ValueError("steps must be >= 256")
    h = 1.0 / steps

    def work(start):
        stop = min(start + chunk, n)
        z = normal_block(base_seed, range(stream_offset + start, stream_offset + stop), steps)
        return kernels.zeta_stats(z, h)

    starts = range(0, n, chunk)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    num = np.concatenate([p[0] for p in parts])
    den = np.concatenate([p[1] for p in parts])
    return num, den


def sample_zeta(n: int, steps: int, base_seed: int, stream_offset: int = 0, threads: int = 1) -> np.ndarray:
    num, den = zeta_components(n, steps, base_seed, stream_offset, threads=threads)
    return num / den


# --------------------------------------------------------------------------
# oracle files


def _digest(data: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(data, dtype="<f8").tobytes()).hexdigest()


def write_oracle(path, samples: np.ndarray, steps: int, base_seed: int) -> dict:
    data = np.sort(np.asarray(samples, dtype=float))
    header = {
        "format": ORACLE_FORMAT,
        "format_version": ORACLE_VERSION,
        "n": int(data.size),
        "steps": int(steps),
        "base_seed": int(base_seed),
        "sha256": _digest(data),
    }
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".oracle-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
            fh.write(data.astype("<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return header


def read_oracle(path, verify: bool = True) -> tuple[np.ndarray, dict]:
    """Load an oracle file; raises OracleError on a bad header or checksum."""
    try:
        with open(path, "rb") as fh:
            line = fh.readline()
            payload = fh.read()
    except FileNotFoundError:
        raise OracleError(f"oracle file {os.fspath(path)!r} not found; "
                          "generate it with `driftmle zeta-oracle --out <path>`") from None
    try:
        header = json.loads(line.decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise OracleError("oracle header is not valid JSON") from None
    if header.get("format") != ORACLE_FORMAT or header.get("format_version") != ORACLE_VERSION:
        raise OracleError(f"unsupported oracle format {header.get('format')!r} v{header.get('format_version')}")
    if len(payload) != 8 * header["n"]:
        raise OracleError(f"oracle payload has {len(payload)} bytes, expected {8 * header['n']}")
    data = np.frombuffer(payload, dtype="<f8").astype(float)
    if verify and _digest(data) != header["sha256"]:
        raise OracleError("oracle checksum mismatch (file corrupted)")
    return data, header


# --------------------------------------------------------------------------
# P(sup_{s<=t} |B_s| < 1)


def boundary_crossing_prob(t: float, tol: float = 1e-12) -> float:
    """P(kappa >= t) for kappa the exit time of |B| from [-1, 1].

    Alternating series sum_k (-1)^k 4/((2k+1) pi) exp(-(2k+1)^2 pi^2 t / 8),
    summed until a term drops below ``tol``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    total = 0.0
    k = 0
    while True:
        j = 2 * k + 1
        term = 4.0 / (j * math.pi) * math.exp(-j * j * math.pi ** 2 * t / 8.0)
        total += term if k % 2 == 0 else -term
        if term < tol:
            break
        k += 1
    return min(max(total, 0.0), 1.0)
