"""INI run configuration for the command line front-end.

Grammar (``configparser`` syntax, ``;`` or ``#`` comments, relative paths
resolved against the directory of the config file)::

    [run]
    model = S12              ; S0 S1 S12 B0 B1 B12
    seed = 11
    n_t = 48
    output = out

    [mesh]                   ; one of
    file = mesh.txt
    nodes = icosphere 2      ; icosphere LEVEL | fibonacci N | regional LAT LON RADIUS

    [grid]                   ; file, n_lat and n_lon, or nested
    file = grid.txt
    n_lat = 18
    n_lon = 36
    nested = 20 70 -30 50    ; lat0 lat1 lon0 lon1 of the 2.5 degree box
    n_sub = 5                ; quadrature sub-points per cell edge
    mask_file = land.csv     ; optional 0/1 land raster, default illustrative mask

    [observations]           ; file, or a synthetic network
    file = obs.csv
    n_sites = 30
    n_validation = 0
    coverage = 0.75
    gap_prob = 0.1
    region = 45 10 12        ; optional cap for the stations

    [transport]              ; file, or the toy plume Jacobian
    file = jacobian.bin
    K = 12
    enhancement = 6
    width0 = 1
    width_growth = 1
    drift = 4

    [field.single]           ; or [field.land] and [field.ocean]
    tau = 0.447
    kappa2 = 571.21          ; or kappa = 23.9
    a = 0.555
    b = 0.326
    ar_order = AR12          ; optional, must agree with the model

    [truth]                  ; simulate only
    mode = gaussian          ; gaussian | file
    flux_file = truth.csv
    noise = low              ; low | high
    sigma_eps = 1.0
    c0 = 350

    [prior]
    flux_file = prior.csv    ; optional prior mean densities, default zero

    [estimate]
    error_model = classes    ; classes | low
    sigma_eps = 1.0          ; initial value
    skip = no                ; yes evaluates at the initial parameters
    restarts = 2
    maxiter = 0              ; 0 uses the optimizer default
    xatol = 1e-6
    fatol = 1e-8
    probes = 1000

``[field.*]`` values are the truth in ``simulate`` and the starting point in
``estimate``.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InputError
from .inference import MODEL_SPECS
from .spde import SpdeParams
from .temporal import ArParams


@dataclass
class RunConfig:
    """Parsed configuration plus the location it was read from."""

    parser: configparser.ConfigParser
    base: Path
    text: str

    @classmethod
    def read(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise InputError(f"{path}: {exc}") from exc
        cfg = cls(parser, path.resolve().parent, text)
        cfg.validate()
        return cfg

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    # typed access -----------------------------------------------------------

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_option(section, key)

    def get(self, section: str, key: str, default=None, kind=str):
        if not self.has(section, key):
            if default is None:
                raise InputError(f"missing [{section}] {key}")
            return default
        raw = self.parser.get(section, key)
        try:
            if kind is bool:
                return self.parser.getboolean(section, key)
            return kind(raw)
        except ValueError as exc:
            raise InputError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from exc

    def floats(self, section: str, key: str) -> list[float]:
        raw = self.get(section, key)
        try:
            return [float(v) for v in raw.replace(",", " ").split()]
        except ValueError as exc:
            raise InputError(f"[{section}] {key} = {raw!r} is not a list of numbers") from exc

    def path(self, section: str, key: str) -> Path | None:
        if not self.has(section, key):
            return None
        p = Path(self.get(section, key))
        p = p if p.is_absolute() else self.base / p
        if not p.exists():
            raise InputError(f"[{section}] {key}: {p} does not exist")
        return p

    # run-level settings -----------------------------------------------------

    @property
    def model(self) -> str:
        return self.get("run", "model")

    @property
    def seed(self) -> int:
        return self.get("run", "seed", 0, int)

    @property
    def n_t(self) -> int:
        return self.get("run", "n_t", kind=int)

    def output_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        p = Path(self.get("run", "output", "out"))
        return p if p.is_absolute() else self.base / p

    @property
    def field_labels(self) -> list[str]:
        return ["single"] if MODEL_SPECS[self.model][0] == 1 else ["land", "ocean"]

    def validate(self):
        if self.model not in MODEL_SPECS:
            raise InputError(f"unknown model {self.model!r}; use one of {sorted(MODEL_SPECS)}")
        present = sorted(s[len("field."):] for s in self.parser.sections()
                         if s.startswith("field."))
        if present and present != sorted(self.field_labels):
            raise DimensionMismatch(
                f"{self.model} needs fields {self.field_labels}, config gives {present}")

    def field_params(self):
        """``[(SpdeParams, ArParams)]`` in field order from ``[field.*]``."""
        order = MODEL_SPECS[self.model][1]
        out = []
        for lab in self.field_labels:
            sec = f"field.{lab}"
            if not self.parser.has_section(sec):
                raise DimensionMismatch(f"{self.model} needs a [{sec}] section")
            tau = self.get(sec, "tau", kind=float)
            if self.has(sec, "kappa2"):
                spde = SpdeParams(tau, self.get(sec, "kappa2", kind=float))
            else:
                spde = SpdeParams.from_kappa(tau, self.get(sec, "kappa", kind=float))
            if self.has(sec, "ar_order") and self.get(sec, "ar_order") != order:
                raise DimensionMismatch(
                    f"[{sec}] ar_order {self.get(sec, 'ar_order')} but {self.model} uses {order}")
            if order == "AR0":
                ar = ArParams.ar0()
            elif order == "AR1":
                ar = ArParams.ar1(self.get(sec, "a", kind=float))
            else:
                ar = ArParams.ar12(self.get(sec, "a", kind=float), self.get(sec, "b", kind=float))
            out.append((spde, ar))
        return out


def write_meta(path: Path, cfg: RunConfig, command: str, extra: dict | None = None):
    """Run metadata without timestamps so repeated runs compare equal."""
    import scipy

    from . import __version__

    lines = [f"command {command}", f"config_sha256 {cfg.digest}", f"seed {cfg.seed}",
             f"gmrflux {__version__}", f"numpy {np.__version__}", f"scipy {scipy.__version__}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k} {v}")
    path.write_text("\n".join(lines) + "\n")
