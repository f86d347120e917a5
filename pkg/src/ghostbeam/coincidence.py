"""Monte Carlo of time-tagged electron/photon detections and coincidence
filtering with a symmetric window and non-paralyzable dead time."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import constants as C

from . import _accel
from .errors import ConfigError

ELECTRON, PHOTON, DARK = 0, 1, 2
KIND_NAMES = ("electron", "photon", "dark")
STREAM_THRESHOLD = 10**7
JITTER_CLIP = 8.0  # jitter is truncated at this many standard deviations


@dataclass(frozen=True)
class RateConfig:
    """Rates and detector timing.

    Units: ``current_ie`` pA, ``window_tau``/``dead_time``/``delay``/``jitter``
    ns, ``dark_rate`` 1/s, ``duration`` s.
    """

    current_ie: float = 10.0
    P_SPP: float = 1e-3
    P_PS: float = 1e-3
    window_tau: float = 10.0
    dead_time: float = 10_000.0
    dark_rate: float = 0.0
    duration: float = 1.0
    rng_seed: int = 0
    delay: float = 0.0
    jitter: float = 1.0
    tag_weights: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if not (0 <= self.P_SPP <= 1):
            raise ValueError("P_SPP must be in [0, 1]")
        if not (0 <= self.P_PS <= 1):
            raise ValueError("P_PS must be in [0, 1]")
        if self.window_tau <= 0:
            raise ValueError("window_tau must be positive")
        if self.dead_time < 0:
            raise ValueError("dead_time must be nonnegative")
        if self.current_ie < 0 or self.dark_rate < 0 or self.jitter < 0:
            raise ValueError("rates and jitter must be nonnegative")
        w = np.asarray(self.tag_weights, dtype=float)
        if w.size == 0 or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("tag_weights must be nonnegative with a positive sum")

    @property
    def n(self) -> float:
        """Electron arrival rate i_e/e in 1/s."""
        return self.current_ie * 1e-12 / C.e

    @property
    def duration_ns(self) -> float:
        return self.duration * 1e9

    def expected_records(self) -> float:
        return self.n * self.duration * self.P_SPP * (1 + self.P_PS) + self.dark_rate * self.duration


def theory(cfg: RateConfig) -> dict:
    """Closed-form mean spacings (ns) and rates (1/s)."""
    n = cfg.n
    out = {"n_per_s": n, "electron_spacing_ns": 1e9 / n if n > 0 else math.inf}
    out["tau_spp_ns"] = 1e9 / (n * cfg.P_SPP) if n * cfg.P_SPP > 0 else math.inf
    rate = n * cfg.P_SPP * cfg.P_PS
    out["tau_ps_ns"] = 1e9 / rate if rate > 0 else math.inf
    out["coincidence_rate_per_s"] = rate
    return out


@dataclass
class EventLog:
    """Sorted detection records.

    ``parent`` links a photon to the serial number of the electron record
    that produced it; electron records hold their own serial number and
    dark counts hold -1. ``tag`` is the bucket channel of a photon (-1 when
    not applicable).
    """

    timestamps: np.ndarray
    kinds: np.ndarray
    tags: np.ndarray
    parent: np.ndarray
    duration_ns: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.kinds = np.asarray(self.kinds, dtype=np.int8)
        self.tags = np.asarray(self.tags, dtype=np.int32)
        self.parent = np.asarray(self.parent, dtype=np.int64)

    def __len__(self) -> int:
        return self.timestamps.size

    def count(self, kind: int) -> int:
        return int(np.count_nonzero(self.kinds == kind))

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamps) >= 0))

    def to_csv(self, path) -> None:
        names = np.array(KIND_NAMES)[self.kinds]
        tags = np.where(self.tags >= 0, self.tags.astype(str), "")
        with open(path, "w", newline="") as fh:
            fh.write("timestamp_ns,kind,tag\n")
            block = 200_000
            for s in range(0, len(self), block):
                rows = [f"{t!r},{k},{g}" for t, k, g in
                        zip(self.timestamps[s:s + block].tolist(), names[s:s + block], tags[s:s + block])]
                if rows:
                    fh.write("\n".join(rows) + "\n")

    @classmethod
    def from_csv(cls, path, duration_ns: float | None = None) -> "EventLog":
        ts, kinds, tags = [], [], []
        lookup = {n: i for i, n in enumerate(KIND_NAMES)}
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "timestamp_ns,kind,tag":
                raise ValueError(f"{path}: unexpected header {header!r}")
            for line in fh:
                t, k, g = line.rstrip("\n").split(",")
                ts.append(float(t))
                kinds.append(lookup[k])
                tags.append(int(g) if g else -1)
        ts = np.array(ts)
        dur = duration_ns if duration_ns is not None else (float(ts.max()) if ts.size else 0.0)
        # parent links are not persisted
        return cls(ts, kinds, tags, np.full(ts.size, -1), dur)


def _sorted_uniform(rng, n: int, lo: float, hi: float) -> np.ndarray:
    """``n`` sorted uniforms on [lo, hi] in O(n) via normalized exponential spacings."""
    if n == 0:
        return np.zeros(0)
    gaps = rng.standard_exponential(n + 1)
    cs = np.cumsum(gaps)
    return lo + (hi - lo) * (cs[:-1] / cs[-1])


def _merge(streams):
    """Merge sorted ``(times, kind, tags, parent)`` streams; earlier streams win ties."""
    times, kinds, tags, parent = streams[0]
    for t2, k2, g2, p2 in streams[1:]:
        # positions of the new stream after all equal earlier entries
        pos = np.searchsorted(times, t2, side="right") + np.arange(t2.size)
        n = times.size + t2.size
        mask = np.zeros(n, dtype=bool)
        mask[pos] = True
        out_t = np.empty(n)
        out_k = np.empty(n, dtype=np.int8)
        out_g = np.empty(n, dtype=np.int32)
        out_p = np.empty(n, dtype=np.int64)
        for out, a, b in ((out_t, times, t2), (out_k, kinds, k2), (out_g, tags, g2),
                          (out_p, parent, p2)):
            out[~mask] = a
            out[mask] = b
        times, kinds, tags, parent = out_t, out_k, out_g, out_p
    return times, kinds, tags, parent


def _jitter(rng, cfg: RateConfig, n: int) -> np.ndarray:
    if cfg.jitter == 0 or n == 0:
        return np.full(n, cfg.delay)
    j = rng.standard_normal(n)
    return cfg.delay + cfg.jitter * np.clip(j, -JITTER_CLIP, JITTER_CLIP)


def _simulate_span(rng, cfg: RateConfig, t0: float, t1: float, serial0: int):
    """Raw (unsorted photons) records for electrons arriving in [t0, t1) ns."""
    span_s = (t1 - t0) * 1e-9
    n_e = int(rng.poisson(cfg.n * span_s)) if cfg.n > 0 else 0
    n_spp = int(rng.binomial(n_e, cfg.P_SPP)) if n_e else 0
    e_t = _sorted_uniform(rng, n_spp, t0, t1)
    serial = serial0 + np.arange(n_spp, dtype=np.int64)
    emit = rng.random(n_spp) < cfg.P_PS if n_spp else np.zeros(0, dtype=bool)
    p_parent = serial[emit]
    p_t = e_t[emit] + _jitter(rng, cfg, p_parent.size)
    w = np.asarray(cfg.tag_weights, dtype=float)
    p_tag = rng.choice(w.size, size=p_parent.size, p=w / w.sum()).astype(np.int32)
    n_d = int(rng.poisson(cfg.dark_rate * span_s)) if cfg.dark_rate > 0 else 0
    d_t = _sorted_uniform(rng, n_d, t0, t1)
    return n_e, (e_t, serial), (p_t, p_tag, p_parent), d_t


def _assemble(e, p, d_t, lo: float = 0.0, hi: float = 0.0):
    e_t, serial = e
    p_t, p_tag, p_parent = p
    order = np.argsort(p_t, kind="stable")
    p_t, p_tag, p_parent = p_t[order], p_tag[order], p_parent[order]
    streams = [
        (e_t, np.full(e_t.size, ELECTRON, np.int8), np.full(e_t.size, -1, np.int32), serial),
        (p_t, np.full(p_t.size, PHOTON, np.int8), p_tag, p_parent),
        (d_t, np.full(d_t.size, DARK, np.int8), np.full(d_t.size, -1, np.int32),
         np.full(d_t.size, -1, np.int64)),
    ]
    return _merge(streams)


def simulate_events(cfg: RateConfig) -> EventLog:
    """Simulate one acquisition of ``cfg.duration`` seconds.

    Electrons arrive as a Poisson process; only those that launched an SPP
    (the energy-filtered ones) are logged. Each logged electron emits a
    bucket photon with probability ``P_PS`` after ``delay`` plus Gaussian
    jitter; photons outside the acquisition are lost. Dark counts form an
    independent Poisson process.
    """
    if cfg.duration <= 0:
        raise ValueError("duration must be positive")
    if cfg.expected_records() > STREAM_THRESHOLD:
        raise ValueError(f"~{cfg.expected_records():.3g} records expected; use simulate_events_stream")
    rng = np.random.default_rng(cfg.rng_seed)
    T = cfg.duration_ns
    n_e, e, p, d_t = _simulate_span(rng, cfg, 0.0, T, 0)
    keep = (p[0] >= 0) & (p[0] <= T)
    p = tuple(a[keep] for a in p)
    t, k, g, par = _assemble(e, p, d_t, 0.0, T)
    return EventLog(t, k, g, par, T, {"n_electrons_total": n_e, "rng_seed": cfg.rng_seed})


def simulate_events_stream(cfg: RateConfig, chunk_s: float = 0.01):
    """Yield the acquisition as consecutive sorted ``EventLog`` chunks.

    Records are held back until no later chunk can produce an earlier
    photon (jitter is truncated, so the look-back is bounded). The stream is
    deterministic for a given seed and chunk size but does not reproduce
    the unchunked log.
    """
    if cfg.duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(cfg.rng_seed)
    T = cfg.duration_ns
    chunk = chunk_s * 1e9
    guard = abs(cfg.delay) + JITTER_CLIP * cfg.jitter
    pending = (np.zeros(0), np.zeros(0, np.int8), np.zeros(0, np.int32), np.zeros(0, np.int64))
    serial = 0
    t0 = 0.0
    while t0 < T:
        t1 = min(T, t0 + chunk)
        n_e, e, p, d_t = _simulate_span(rng, cfg, t0, t1, serial)
        serial += e[0].size
        keep = (p[0] >= 0) & (p[0] <= T)
        p = tuple(a[keep] for a in p)
        pending = _merge([pending, _assemble(e, p, d_t, t0, t1)])
        n = pending[0].size if t1 >= T else int(np.searchsorted(pending[0], t1 - guard, side="left"))
        out = tuple(a[:n] for a in pending)
        pending = tuple(a[n:] for a in pending)
        yield EventLog(*out, T, {"n_electrons_total": n_e, "chunk_ns": [t0, t1]})
        t0 = t1


@dataclass
class CoincidenceSummary:
    true: int
    accidental: int
    dead_time_rejected: int
    n_electron_records: int
    n_photons: int
    n_dark: int
    duration_ns: float
    window_tau: float
    dead_time: float
    pair_times: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    pair_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32), repr=False)
    pair_true: np.ndarray = field(default_factory=lambda: np.zeros(0, bool), repr=False)

    @property
    def coincidences(self) -> int:
        return self.true + self.accidental

    @property
    def tau_ps_empirical_ns(self) -> float:
        return self.duration_ns / self.true if self.true else math.inf

    def report(self, cfg: RateConfig | None = None, n_electrons_total: int | None = None) -> dict:
        out = {k: v for k, v in asdict(self).items() if not k.startswith("pair_")}
        out["coincidences"] = self.coincidences
        out["tau_ps_empirical_ns"] = self.tau_ps_empirical_ns
        if self.n_electron_records:
            out["tau_spp_empirical_ns"] = self.duration_ns / self.n_electron_records
        if n_electrons_total:
            out["electron_spacing_empirical_ns"] = self.duration_ns / n_electrons_total
        if cfg is not None:
            out["theory"] = theory(cfg)
        return out


def _pairs(log: EventLog, window_tau: float, dead_time: float, last: float, cutoff=math.inf):
    is_e = log.kinds == ELECTRON
    is_p = ~is_e
    e_pos = np.flatnonzero(is_e & (log.timestamps <= cutoff))
    p_pos = np.flatnonzero(is_p)
    pe, pp, pt, nd, last, used = _accel.coincidence_sweep(
        log.timestamps[e_pos], log.parent[e_pos], log.timestamps[p_pos],
        log.kinds[p_pos] == DARK, log.parent[p_pos], window_tau, dead_time, last)
    return e_pos, p_pos, pe, pp, pt, nd, last, used


def correlate(log: EventLog, window_tau: float, dead_time: float) -> CoincidenceSummary:
    """Single sweep pairing each SPP electron with the nearest unused photon.

    A pair needs ``|dt| <= window_tau`` and must start at least
    ``dead_time`` after the previous accepted pair. A pair is true when the
    photon came from that electron, accidental otherwise.
    """
    if not log.is_sorted():
        raise ValueError("event log is not sorted by timestamp")
    e_pos, p_pos, pe, pp, pt, nd, _, _ = _pairs(log, window_tau, dead_time, -math.inf)
    photons = p_pos[pp]
    return CoincidenceSummary(
        true=int(pt.sum()), accidental=int(pt.size - pt.sum()), dead_time_rejected=nd,
        n_electron_records=log.count(ELECTRON), n_photons=log.count(PHOTON),
        n_dark=log.count(DARK), duration_ns=log.duration_ns, window_tau=window_tau,
        dead_time=dead_time, pair_times=log.timestamps[e_pos[pe]],
        pair_tags=log.tags[photons], pair_true=pt)


def correlate_stream(chunks, window_tau: float, dead_time: float) -> CoincidenceSummary:
    """``correlate`` over an iterable of sorted, globally ordered chunks."""
    carry = None
    last = -math.inf
    tot = dict(true=0, acc=0, dead=0, ne=0, npho=0, nd=0)
    tags, trues = [], []
    duration = 0.0
    n_total = 0
    chunks = iter(chunks)
    nxt = next(chunks, None)
    while nxt is not None:
        chunk = nxt
        nxt = next(chunks, None)
        duration = chunk.duration_ns
        n_total += chunk.meta.get("n_electrons_total", 0)
        tot["ne"] += chunk.count(ELECTRON)
        tot["npho"] += chunk.count(PHOTON)
        tot["nd"] += chunk.count(DARK)
        log = chunk if carry is None else _concat(carry, chunk)
        if not log.is_sorted():
            raise ValueError("event stream is not sorted by timestamp")
        end = log.timestamps[-1] if len(log) else -math.inf
        cutoff = math.inf if nxt is None else end - window_tau
        e_pos, p_pos, pe, pp, pt, nd, last, used = _pairs(log, window_tau, dead_time, last, cutoff)
        tot["true"] += int(pt.sum())
        tot["acc"] += int(pt.size - pt.sum())
        tot["dead"] += nd
        tags.append(log.tags[p_pos[pp]])
        trues.append(pt)
        if nxt is not None:
            keep = np.zeros(len(log), bool)
            keep[(log.kinds == ELECTRON) & (log.timestamps > cutoff)] = True
            unused = p_pos[~used]
            keep[unused[log.timestamps[unused] >= cutoff - window_tau]] = True
            carry = EventLog(log.timestamps[keep], log.kinds[keep], log.tags[keep],
                             log.parent[keep], log.duration_ns)
    return CoincidenceSummary(
        true=tot["true"], accidental=tot["acc"], dead_time_rejected=tot["dead"],
        n_electron_records=tot["ne"], n_photons=tot["npho"], n_dark=tot["nd"],
        duration_ns=duration, window_tau=window_tau, dead_time=dead_time,
        pair_tags=np.concatenate(tags) if tags else np.zeros(0, np.int32),
        pair_true=np.concatenate(trues) if trues else np.zeros(0, bool))


def _concat(a: EventLog, b: EventLog) -> EventLog:
    return EventLog(np.concatenate([a.timestamps, b.timestamps]),
                    np.concatenate([a.kinds, b.kinds]), np.concatenate([a.tags, b.tags]),
                    np.concatenate([a.parent, b.parent]), b.duration_ns)


@dataclass
class Accumulation:
    axis: np.ndarray
    counts: np.ndarray
    per_tag: dict[int, np.ndarray]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def gated_accumulate(summary: CoincidenceSummary, images: dict, seed: int = 0,
                     true_only: bool = True) -> Accumulation:
    """Histogram one electron-camera hit per coincidence.

    ``images`` maps a photon tag to the gated ``ImageProfile`` (or plain
    intensity array) of that bucket channel; every hit is drawn from the
    normalized intensity of its channel. All images share one axis.
    """
    tags = summary.pair_tags[summary.pair_true] if true_only else summary.pair_tags
    uniq, counts = np.unique(tags, return_counts=True)
    missing = [int(t) for t in uniq if int(t) not in images]
    if missing:
        raise ConfigError(f"no gated image for bucket tag(s) {missing}")
    if not images:
        return Accumulation(np.zeros(0), np.zeros(0, np.int64), {})
    first = next(iter(images.values()))
    axis = np.asarray(getattr(first, "axis", np.arange(len(np.asarray(getattr(first, "intensity", first))))))
    rng = np.random.default_rng(seed)
    total = np.zeros(axis.size, np.int64)
    per_tag = {}
    for tag in sorted(images):
        img = images[tag]
        inten = np.asarray(getattr(img, "intensity", img), dtype=float)
        n = int(counts[uniq == tag].sum()) if tag in uniq else 0
        if n and inten.sum() > 0:
            h = rng.multinomial(n, inten / inten.sum())
        else:
            h = np.zeros(axis.size, np.int64)
        per_tag[int(tag)] = h
        total += h
    return Accumulation(axis, total, per_tag)


def write_report(path, summary: CoincidenceSummary, cfg: RateConfig, n_electrons_total=None,
                 extra: dict | None = None) -> None:
    rep = summary.report(cfg, n_electrons_total)
    rep["config"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}
    if extra:
        rep.update(extra)
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
