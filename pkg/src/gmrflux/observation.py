"""Observations, transport Jacobians and the observation operator ``A = J H``.

Time indices in files are 1-based months; internally ``t_obs`` is 0-based.
A flux array ``f`` of shape ``(n_t, n_cells)`` holds cell-integrated fluxes.
Observation ``i`` at month ``t_i`` sees

    sum_{lag < K} Ja[i, lag] . f[t_i - lag] + Jc[i] . sum_{m <= t_i - K} f[m]

so it never depends on months after ``t_i`` and older fluxes are well mixed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyInput, InputError, NoFirstYearData, UnknownClass
from .integration import IntegrationMaps

# model-error standard deviation (ppm) per site class
ERROR_CLASSES = {"C": 3.0, "M": 1.5, "R": 1.0, "S": 1.5}
SIGMA_MEAS = 0.3
LOW_NOISE_STD = 0.1
OBS_COLUMNS = ("site", "lat", "lon", "t_index", "value", "class", "is_validation")
_MAGIC = "gmrflux-jacobian"


@dataclass(eq=False)
class ObservationSet:
    """Concentration observations, one row each."""

    site: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    t_index: np.ndarray
    value: np.ndarray
    cls: np.ndarray
    is_validation: np.ndarray

    def __post_init__(self):
        self.site = np.asarray(self.site, dtype=str)
        self.lat = np.asarray(self.lat, dtype=float)
        self.lon = np.asarray(self.lon, dtype=float)
        self.t_index = np.asarray(self.t_index, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=float)
        self.cls = np.asarray(self.cls, dtype=str)
        self.is_validation = np.asarray(self.is_validation, dtype=bool)
        n = self.site.size
        if any(a.shape != (n,) for a in (self.lat, self.lon, self.t_index,
                                          self.value, self.cls, self.is_validation)):
            raise DimensionMismatch("observation columns have different lengths")
        if n and self.t_index.min() < 1:
            raise InputError("time indices are 1-based")

    @property
    def n_obs(self) -> int:
        return self.site.size

    @property
    def t_obs(self) -> np.ndarray:
        """0-based month index."""
        return self.t_index - 1

    def subset(self, rows) -> "ObservationSet":
        rows = np.asarray(rows)
        return ObservationSet(self.site[rows], self.lat[rows], self.lon[rows],
                              self.t_index[rows], self.value[rows], self.cls[rows],
                              self.is_validation[rows])

    def with_values(self, value) -> "ObservationSet":
        return ObservationSet(self.site, self.lat, self.lon, self.t_index, value,
                              self.cls, self.is_validation)

    @classmethod
    def read_csv(cls, path: str | Path) -> "ObservationSet":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(OBS_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise InputError(f"observation file lacks columns {sorted(missing)}")
            rows = list(reader)
        col = {k: [r[k] for r in rows] for k in OBS_COLUMNS}
        return cls(col["site"], np.array(col["lat"], dtype=float),
                   np.array(col["lon"], dtype=float),
                   np.array(col["t_index"], dtype=np.int64),
                   np.array(col["value"], dtype=float), col["class"],
                   [v.strip().lower() in ("1", "true", "yes") for v in col["is_validation"]])

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(OBS_COLUMNS)
            for i in range(self.n_obs):
                w.writerow([self.site[i], repr(float(self.lat[i])),
                            repr(float(self.lon[i])), int(self.t_index[i]),
                            repr(float(self.value[i])), self.cls[i],
                            int(self.is_validation[i])])


@dataclass(frozen=True, eq=False)
class ErrorModel:
    """Diagonal relative variances ``M`` (ppm^2); covariance is ``sigma_eps2 M``."""

    M: np.ndarray

    def covariance_diag(self, sigma_eps2: float) -> np.ndarray:
        return sigma_eps2 * self.M


def build_error_matrix(obs: ObservationSet, sigma_meas: float = SIGMA_MEAS) -> ErrorModel:
    """``M_ii = sigma_mod(class)^2 + sigma_meas^2``."""
    unknown = sorted(set(obs.cls) - set(ERROR_CLASSES))
    if unknown:
        raise UnknownClass(f"unknown site classes {unknown}")
    sig = np.array([ERROR_CLASSES[c] for c in obs.cls])
    return ErrorModel(sig ** 2 + sigma_meas ** 2)


@dataclass(eq=False)
class TransportOperator:
    """Jacobian in constant/active split form.

    Parameters
    ----------
    Ja : (n_obs, K, n_cells) array
        Sensitivity to fluxes ``lag`` months before the observation month.
    Jc : (n_obs, n_cells) array
        Sensitivity to every month at least ``K`` months back.
    t_obs : (n_obs,) int array
        0-based observation months.
    n_t : int
    """

    Ja: np.ndarray
    Jc: np.ndarray
    t_obs: np.ndarray
    n_t: int
    K: int = field(init=False)

    def __post_init__(self):
        self.Ja = np.array(self.Ja, dtype=float)
        self.Jc = np.array(self.Jc, dtype=float)
        self.t_obs = np.asarray(self.t_obs, dtype=np.int64)
        if self.Ja.ndim != 3 or self.Jc.shape != (self.Ja.shape[0], self.Ja.shape[2]):
            raise DimensionMismatch("Ja must be (n_obs, K, n_cells), Jc (n_obs, n_cells)")
        if self.t_obs.shape != (self.Ja.shape[0],):
            raise DimensionMismatch("one observation month per Jacobian row")
        if self.t_obs.size and (self.t_obs.min() < 0 or self.t_obs.max() >= self.n_t):
            raise InputError("observation month outside the flux record")
        self.K = self.Ja.shape[1]
        # sensitivities to months before the record start are meaningless
        lag = np.arange(self.K)
        self.Ja[lag[None, :] > self.t_obs[:, None]] = 0.0

    @property
    def n_obs(self) -> int:
        return self.Ja.shape[0]

    @property
    def n_cells(self) -> int:
        return self.Ja.shape[2]

    def _active_index(self):
        idx = self.t_obs[:, None] - np.arange(self.K)[None, :]
        return np.clip(idx, 0, None)

    def apply(self, f) -> np.ndarray:
        """``J f`` for ``f`` of shape ``(n_t, n_cells)`` or flattened."""
        f = np.asarray(f, dtype=float).reshape(self.n_t, self.n_cells)
        act = np.einsum("ilc,ilc->i", self.Ja, f[self._active_index()])
        csum = np.cumsum(f, axis=0)
        mt = self.t_obs - self.K
        old = np.where(mt[:, None] >= 0, csum[np.clip(mt, 0, None)], 0.0)
        return act + np.einsum("ic,ic->i", self.Jc, old)

    def rmatvec(self, y) -> np.ndarray:
        """``J^T y`` as an ``(n_t, n_cells)`` array."""
        y = np.asarray(y, dtype=float)
        out = np.zeros((self.n_t, self.n_cells))
        np.add.at(out, self._active_index(), self.Ja * y[:, None, None])
        mt = self.t_obs - self.K
        tail = np.zeros((self.n_t + 1, self.n_cells))
        ok = mt >= 0
        np.add.at(tail, mt[ok], self.Jc[ok] * y[ok, None])
        # month m receives contributions from every row with t_i - K >= m
        out += np.cumsum(tail[::-1], axis=0)[::-1][:-1]
        return out

    def dense(self) -> np.ndarray:
        J = np.zeros((self.n_obs, self.n_t, self.n_cells))
        for i, t in enumerate(self.t_obs):
            if t >= self.K:
                J[i, : t - self.K + 1] = self.Jc[i]
            for lag in range(min(self.K, t + 1)):
                J[i, t - lag] = self.Ja[i, lag]
        return J.reshape(self.n_obs, -1)

    def subset(self, rows) -> "TransportOperator":
        rows = np.asarray(rows)
        return TransportOperator(self.Ja[rows], self.Jc[rows], self.t_obs[rows], self.n_t)

    def zero_cells(self, cells) -> "TransportOperator":
        """Copy with no sensitivity to the given cells (ice sheets)."""
        Ja, Jc = self.Ja.copy(), self.Jc.copy()
        Ja[:, :, cells] = 0.0
        Jc[:, cells] = 0.0
        return TransportOperator(Ja, Jc, self.t_obs, self.n_t)

    def save(self, path: str | Path):
        with open(path, "wb") as fh:
            fh.write(f"{_MAGIC} {self.n_obs} {self.n_cells} {self.n_t} {self.K}\n"
                     .encode("ascii"))
            fh.write(self.t_obs.astype("<i8").tobytes())
            fh.write(self.Ja.astype("<f8").tobytes())
            fh.write(self.Jc.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "TransportOperator":
        raw = Path(path).read_bytes()
        nl = raw.find(b"\n")
        head = raw[:nl].decode("ascii", errors="replace").split()
        if len(head) != 5 or head[0] != _MAGIC:
            raise InputError(f"{path}: not a Jacobian file")
        n_obs, n_s, n_t, K = map(int, head[1:])
        body = raw[nl + 1:]
        sizes = [n_obs * 8, n_obs * K * n_s * 8, n_obs * n_s * 8]
        if len(body) != sum(sizes):
            raise InputError(f"{path}: truncated or oversized Jacobian body")
        t = np.frombuffer(body, "<i8", n_obs, 0)
        Ja = np.frombuffer(body, "<f8", n_obs * K * n_s, sizes[0]).reshape(n_obs, K, n_s)
        Jc = np.frombuffer(body, "<f8", n_obs * n_s, sizes[0] + sizes[1]).reshape(n_obs, n_s)
        return cls(Ja.copy(), Jc.copy(), t.copy(), n_t)


class ObservationMatrix:
    """``A = J H`` kept in constant/active form per field.

    For field ``f`` with integration map ``G``: ``Aa[i, lag] = Ja[i, lag] G``
    and ``Ac[i] = Jc[i] G``; the regression block is stored densely.
    """

    def __init__(self, transport: TransportOperator, maps: IntegrationMaps):
        if transport.n_cells != maps.n_cells or transport.n_t != maps.n_t:
            raise DimensionMismatch("transport and integration grids differ")
        self.n_obs = transport.n_obs
        self.n_t = transport.n_t
        self.K = transport.K
        self.t_obs = transport.t_obs
        flat = transport.Ja.reshape(-1, transport.n_cells)
        self.Aa, self.Ac = [], []
        for g in maps.G:
            gt = g.T.tocsr()
            self.Aa.append(np.asarray(gt @ flat.T).T.reshape(self.n_obs, self.K, -1))
            self.Ac.append(np.asarray(gt @ transport.Jc.T).T)
        self.field_sizes = maps.field_sizes
        if maps.p:
            Fb = maps.Hbeta.reshape(self.n_t, maps.n_cells, maps.p)
            self.Abeta = np.stack([transport.apply(Fb[:, :, j]) for j in range(maps.p)],
                                  axis=1)
        else:
            self.Abeta = np.zeros((self.n_obs, 0))
        lag = np.arange(self.K)
        self.active_t = self.t_obs[:, None] - lag[None, :]
        self.active_ok = self.active_t >= 0

    @property
    def n(self) -> int:
        return sum(self.field_sizes) + self.Abeta.shape[1]

    def subset(self, rows) -> "ObservationMatrix":
        rows = np.asarray(rows)
        new = object.__new__(ObservationMatrix)
        new.__dict__.update(self.__dict__)
        new.t_obs = self.t_obs[rows]
        new.n_obs = new.t_obs.size
        new.Aa = [a[rows] for a in self.Aa]
        new.Ac = [a[rows] for a in self.Ac]
        new.Abeta = self.Abeta[rows]
        new.active_t = self.active_t[rows]
        new.active_ok = self.active_ok[rows]
        return new

    def field_rows(self, k: int, rows=None) -> np.ndarray:
        """Rows of ``A`` for field ``k`` as ``(n_rows, n_t, n_l)`` arrays."""
        rows = np.arange(self.n_obs) if rows is None else np.asarray(rows)
        Aa, Ac = self.Aa[k][rows], self.Ac[k][rows]
        out = np.zeros((rows.size, self.n_t, Aa.shape[2]))
        for j, i in enumerate(rows):
            t = self.t_obs[i]
            if t >= self.K:
                out[j, : t - self.K + 1] = Ac[j]
            n_act = min(self.K, t + 1)
            out[j, t - np.arange(n_act)] = Aa[j, :n_act]
        return out

    def apply(self, z) -> np.ndarray:
        """``A z`` for ``z`` of shape ``(n,)``."""
        z = np.asarray(z, dtype=float)
        if z.shape[0] != self.n:
            raise DimensionMismatch(f"expected {self.n} latent rows, got {z.shape[0]}")
        out = np.zeros(self.n_obs)
        o = 0
        tt = np.clip(self.active_t, 0, None)
        for Aa, Ac, size in zip(self.Aa, self.Ac, self.field_sizes):
            W = z[o:o + size].reshape(self.n_t, -1)
            o += size
            out += np.einsum("ilc,ilc->i", Aa, W[tt] * self.active_ok[:, :, None])
            csum = np.cumsum(W, axis=0)
            mt = self.t_obs - self.K
            old = np.where(mt[:, None] >= 0, csum[np.clip(mt, 0, None)], 0.0)
            out += np.einsum("ic,ic->i", Ac, old)
        return out + self.Abeta @ z[o:]

    def dense(self) -> np.ndarray:
        blocks = [self.field_rows(k).reshape(self.n_obs, -1) for k in range(len(self.Aa))]
        blocks.append(self.Abeta)
        return np.hstack(blocks)


def apply_A(transport: TransportOperator, maps: IntegrationMaps, v) -> np.ndarray:
    """Predicted concentration anomalies ``J H v``."""
    return ObservationMatrix(transport, maps).apply(v)


def estimate_c0(obs: ObservationSet, prior_response, first_index: int = 1) -> float:
    """Mean of ``y - prior_response`` over the first twelve months.

    The year starts at time index ``first_index`` (1-based, default the start
    of the flux record).
    """
    prior_response = np.asarray(prior_response, dtype=float)
    if prior_response.shape != (obs.n_obs,):
        raise DimensionMismatch("one prior response per observation")
    sel = (obs.t_index >= first_index) & (obs.t_index < first_index + 12)
    if not np.any(sel):
        raise NoFirstYearData("no observations in the first year of the record")
    return float(np.mean(obs.value[sel] - prior_response[sel]))


def simulate_observations(flux, transport: TransportOperator, template: ObservationSet,
                          noise_mode: str = "low", c0: float = 0.0, seed=0,
                          sigma_eps: float = 1.0,
                          sigma_meas: float = SIGMA_MEAS) -> ObservationSet:
    """Pseudo-observations ``c0 + J f + eps`` at the rows of ``template``.

    ``low`` noise has standard deviation ``0.1 sigma_eps`` ppm; ``high`` uses the
    class-based variances ``sigma_eps^2 M``.
    """
    if transport.n_obs != template.n_obs:
        raise DimensionMismatch("template and Jacobian disagree on n_obs")
    if template.n_obs == 0:
        raise EmptyInput("no observation rows to simulate")
    if noise_mode == "low":
        M = np.full(template.n_obs, LOW_NOISE_STD ** 2)
    elif noise_mode == "high":
        M = build_error_matrix(template, sigma_meas).M
    elif noise_mode == "none":
        M = np.zeros(template.n_obs)
    else:
        raise InputError(f"unknown noise mode {noise_mode!r}")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(template.n_obs) * np.sqrt(M) * sigma_eps
    return template.with_values(c0 + transport.apply(flux) + eps)
