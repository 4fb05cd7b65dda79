"""Plain-text ``key = value`` experiment configuration with built-in profiles.

Blank lines and lines starting with ``#`` are ignored. Values stay strings
until read through the typed accessors, so a profile can be overridden key
by key from files or the command line.
"""

from __future__ import annotations

import hashlib
import os

from .channel import MimoSystem, UserConfig
from .errors import ConfigError
from .modem import build_qam

PROFILES = {
    "desk": {
        "n_r": "16",
        "n_users": "4",
        "n_t": "1",
        "m": "2",
        "detector": "kbest:K=32",
        "channels": "2000",
        "kappa_low_db": "0",
        "kappa_high_db": "20",
        "kappa_bins": "10",
        "candidate_factor": "5",
        "n_p": "20",
        "n_samp": "200",
        "split": "0.8,0.1,0.1",
        "user": "0",
        "batch_size": "256",
        "learning_rate": "1e-3",
        "max_epochs": "200",
        "patience": "10",
        "dtype": "float64",
        "loss_mode": "auto",
        "cer_channels": "100",
        "cer_codewords": "500",
        "cer_detectors": "lmmse,kbest:K=32",
        "cer_rho_db": "-10:-4:0.5",
        "cer_n_samp": "200",
        "code": "ldpc648",
        "interleaver_seed": "1",
        "n_seq": "1,10,50,100",
        "n_draws": "20000",
        "snr_grid_db": "-20:30:0.5",
        "snr_n_samp": "20000",
    },
}
PROFILES["paper"] = dict(PROFILES["desk"], channels="10000", n_p="50", n_samp="500",
                         cer_channels="900", cer_codewords="1000", snr_n_samp="100000")


class ExperimentConfig:
    def __init__(self, values=None, sources=None):
        self.values = dict(values or {})
        self.sources = dict(sources or {})

    @classmethod
    def from_profile(cls, name):
        if name not in PROFILES:
            raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        return cls(PROFILES[name], {k: f"profile {name}" for k in PROFILES[name]})

    def update_text(self, text, origin="<text>"):
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ConfigError(f"{origin}:{lineno}: empty key")
            self.values[key] = value
            self.sources[key] = f"{origin}:{lineno}"
        return self

    def update_file(self, path):
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} does not exist")
        with open(path) as fh:
            return self.update_text(fh.read(), origin=path)

    def set(self, key, value):
        self.values[key] = str(value)
        self.sources[key] = "override"

    def _raw(self, key, default=None):
        if key in self.values:
            return self.values[key]
        if default is not None:
            return default
        raise ConfigError(f"missing config key {key!r}")

    def _convert(self, key, fn, default):
        raw = self._raw(key, default)
        try:
            return fn(raw)
        except ValueError:
            raise ConfigError(f"{self.sources.get(key, 'default')}: bad value for {key!r}: {raw!r}") from None

    def get_str(self, key, default=None):
        return str(self._raw(key, default))

    def get_int(self, key, default=None):
        return self._convert(key, int, default)

    def get_float(self, key, default=None):
        return self._convert(key, float, default)

    def get_floats(self, key, default=None):
        return self._convert(key, lambda s: [float(t) for t in str(s).split(",") if t.strip()], default)

    def get_ints(self, key, default=None):
        return self._convert(key, lambda s: [int(t) for t in str(s).split(",") if t.strip()], default)

    def get_range(self, key, default=None):
        """``start:stop:step`` (stop inclusive) or a comma list."""
        def parse(s):
            s = str(s)
            if ":" in s:
                a, b, step = (float(t) for t in s.split(":"))
                if step <= 0:
                    raise ValueError("step must be positive")
                n = int(round((b - a) / step)) + 1
                return [a + i * step for i in range(n)]
            return [float(t) for t in s.split(",") if t.strip()]
        return self._convert(key, parse, default)

    def system(self):
        n_r = self.get_int("n_r")
        n_users = self.get_int("n_users")
        n_t = self.get_ints("n_t")
        m = self.get_ints("m")
        n_t = n_t * n_users if len(n_t) == 1 else n_t
        m = m * n_users if len(m) == 1 else m
        if len(n_t) != n_users or len(m) != n_users:
            raise ConfigError("n_t and m need one value or one per user")
        try:
            users = tuple(UserConfig(t, build_qam(b)) for t, b in zip(n_t, m))
        except Exception as exc:
            raise ConfigError(f"bad user configuration: {exc}") from None
        if sum(n_t) > n_r:
            raise ConfigError(f"total streams {sum(n_t)} exceed n_r = {n_r}")
        return MimoSystem(n_r, users)

    def require_file(self, key):
        path = self.get_str(key)
        if not os.path.exists(path):
            raise ConfigError(f"{self.sources.get(key, key)}: file {path!r} does not exist")
        return path

    def canonical(self):
        return "\n".join(f"{k}={self.values[k]}" for k in sorted(self.values))

    def hash(self):
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:16]
