"""Truth simulation and synthetic observation increments.

The truth follows ``dX = f(X) dt + sqrt(2) dW`` (Euler-Maruyama) and the
observations ``dY = X dt + R dB`` with ``R R^T = epsilon * Omega^{-1}``.
Truth and observation noise come from independent generators spawned from
one seed, so a run is reproducible bit-for-bit.

Binary stream layout (little-endian)::

    magic  4s   b"ENKB" (observations) or b"ENKT" (trajectories)
    version u32
    n      u32
    dt     f64  step between records
    steps  u64  number of records
    epsilon f64
    records: steps * n float64

For trajectory files the record spacing ``dt`` already includes the stride,
so record ``k`` sits at time ``k * dt``.
"""

import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BlowUpError, StreamFormatError
from .model import L96_CAP, L96_FORCING, ObsNoiseSpec, lorenz96_drift

logger = logging.getLogger(__name__)

__all__ = [
    "SimConfig",
    "TruthState",
    "ObservationRecord",
    "StreamHeader",
    "make_rng",
    "spinup_init",
    "step_truth",
    "observe_increment",
    "simulate",
    "write_stream",
    "read_stream",
    "StreamWriter",
]

OBS_MAGIC = b"ENKB"
TRAJ_MAGIC = b"ENKT"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sIIdQd")

# stream indices spawned from the run seed
STREAM_TRUTH = 0
STREAM_OBS = 1
STREAM_ENSEMBLE = 2
STREAM_SPINUP = 3

SPINUP_DT = 1e-3
SPINUP_KICK = 0.01


def make_rng(seed, stream):
    """Independent generator for ``stream`` derived from a 64-bit ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SimConfig:
    n: int = 40
    dt: float = 1e-4
    steps: int = 1000
    seed: int = 0
    spinup_time: float = 10.0
    epsilon: float = 0.01
    omega: np.ndarray = None
    forcing: float = L96_FORCING
    stride: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.spinup_time < 0:
            raise ValueError(f"spinup_time must be >= 0, got {self.spinup_time}")
        if int(self.stride) < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        om = np.ones(self.n) if self.omega is None else np.asarray(self.omega, float)
        object.__setattr__(self, "omega", om)

    @property
    def obs(self):
        return ObsNoiseSpec(self.epsilon, self.omega)


@dataclass
class TruthState:
    t: float
    x: np.ndarray


@dataclass(frozen=True)
class ObservationRecord:
    step_index: int
    delta_y: np.ndarray = field(repr=False)


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def spinup_init(n, forcing=L96_FORCING, spinup_time=10.0, seed=0, dt=SPINUP_DT):
    """Initial truth on the Lorenz-96 attractor.

    Starts from the equilibrium ``forcing * 1`` kicked by ``0.01`` on the
    first component plus a seeded ``0.01``-scale jitter, and integrates the
    noiseless drift with RK4 for ``spinup_time``.
    """
    if n < 4:
        raise ValueError(f"Lorenz-96 needs n >= 4, got n={n}")
    rng = make_rng(seed, STREAM_SPINUP)
    x = np.full(n, float(forcing))
    x[0] += SPINUP_KICK
    x += SPINUP_KICK * rng.standard_normal(n)
    steps = int(round(spinup_time / dt))

    def f(v):
        return lorenz96_drift(v, forcing)

    for k in range(steps):
        x = _rk4(f, x, dt)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(k, "spin-up state")
    return TruthState(t=0.0, x=x)


def step_truth(state, dt, rng, drift=lorenz96_drift, noise=None):
    """One Euler-Maruyama step ``x + dt f(x) + sqrt(2 dt) xi``.

    ``noise`` overrides the standard normal draw (tests use zeros).
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    x = state.x
    xi = rng.standard_normal(x.shape) if noise is None else noise
    x_new = x + dt * drift(x) + np.sqrt(2.0 * dt) * xi
    if not np.all(np.isfinite(x_new)):
        raise BlowUpError(None, "truth state")
    return TruthState(t=state.t + dt, x=x_new)


def observe_increment(state, dt, obs, rng, step_index=0):
    """``dY = X dt + sqrt(epsilon dt) Omega^{-1/2} eta``."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    x = state.x
    eta = rng.standard_normal(x.shape)
    dy = x * dt + obs.noise_std(dt) * eta
    if not np.all(np.isfinite(dy)):
        raise BlowUpError(step_index, "observation")
    return ObservationRecord(step_index=step_index, delta_y=dy)


@dataclass(frozen=True)
class StreamHeader:
    magic: bytes
    version: int
    n: int
    dt: float
    steps: int
    epsilon: float

    def pack(self):
        return _HEADER.pack(
            self.magic, self.version, self.n, self.dt, self.steps, self.epsilon
        )


class StreamWriter:
    """Append records to a binary stream; the header is finalized on close."""

    def __init__(self, path, magic, n, dt, epsilon):
        self.path = os.fspath(path)
        self.magic = magic
        self.n = int(n)
        self.dt = float(dt)
        self.epsilon = float(epsilon)
        self.count = 0
        self._fh = open(self.path, "wb")
        self._fh.write(self._header().pack())

    def _header(self):
        return StreamHeader(
            self.magic, STREAM_VERSION, self.n, self.dt, self.count, self.epsilon
        )

    def write(self, values):
        v = np.ascontiguousarray(values, dtype="<f8")
        if v.shape[-1] != self.n:
            raise StreamFormatError(f"record length {v.shape[-1]} != n={self.n}")
        self._fh.write(v.tobytes())
        self.count += v.size // self.n

    def close(self):
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(self._header().pack())
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_stream(path, records, dt, epsilon, magic=OBS_MAGIC):
    records = np.atleast_2d(np.asarray(records, dtype=float))
    with StreamWriter(path, magic, records.shape[1], dt, epsilon) as w:
        w.write(records)


def read_stream(path, magic=None):
    """Return ``(header, records)`` with ``records`` a read-only memmap of shape (steps, n)."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise StreamFormatError(f"{path}: truncated header")
    header = StreamHeader(*_HEADER.unpack(raw))
    if header.magic not in (OBS_MAGIC, TRAJ_MAGIC):
        raise StreamFormatError(f"{path}: bad magic {header.magic!r}")
    if magic is not None and header.magic != magic:
        raise StreamFormatError(
            f"{path}: expected {magic!r} stream, found {header.magic!r}"
        )
    if header.version != STREAM_VERSION:
        raise StreamFormatError(f"{path}: unsupported version {header.version}")
    expected = _HEADER.size + 8 * header.n * header.steps
    size = os.path.getsize(path)
    if size != expected:
        raise StreamFormatError(f"{path}: size {size} != expected {expected}")
    if header.steps == 0:
        return header, np.empty((0, header.n))
    records = np.memmap(
        path, dtype="<f8", mode="r", offset=_HEADER.size, shape=(header.steps, header.n)
    )
    return header, records


def simulate(config, drift=None, truth_path="truth.bin", obs_path="obs.bin", x0=None):
    """Run the twin-experiment truth and write both streams.

    The truth file holds ``X_0, X_stride, X_2stride, ...``; the observation
    file holds one increment per step.

    Returns
    -------
    TruthState
        The final truth state.
    """
    if drift is None:
        forcing = config.forcing

        def drift(v):
            return lorenz96_drift(v, forcing)

    if x0 is None:
        state = spinup_init(config.n, config.forcing, config.spinup_time, config.seed)
    else:
        state = TruthState(0.0, np.asarray(x0, dtype=float).copy())
    obs = config.obs
    rng_truth = make_rng(config.seed, STREAM_TRUTH)
    rng_obs = make_rng(config.seed, STREAM_OBS)
    stride = int(config.stride)
    dt = float(config.dt)
    sqrt2dt = np.sqrt(2.0 * dt)
    obs_std = obs.noise_std(dt)
    exceeded = 0

    x = state.x
    with StreamWriter(truth_path, TRAJ_MAGIC, config.n, dt * stride, obs.epsilon) as tw, \
            StreamWriter(obs_path, OBS_MAGIC, config.n, dt, obs.epsilon) as ow:
        tw.write(x)
        for k in range(int(config.steps)):
            dy = x * dt + obs_std * rng_obs.standard_normal(config.n)
            ow.write(dy)
            x = x + dt * drift(x) + sqrt2dt * rng_truth.standard_normal(config.n)
            if not np.all(np.isfinite(x)):
                raise BlowUpError(k + 1, "truth state")
            if np.max(np.abs(x)) > L96_CAP:
                exceeded += 1
            if (k + 1) % stride == 0:
                tw.write(x)
    if exceeded:
        logger.warning("truth left the |x| <= %g box on %d steps", L96_CAP, exceeded)
    return TruthState(t=dt * int(config.steps), x=x)
