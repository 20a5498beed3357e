"""Synthetic labeled 12-lead ECG generation.

Records are built in three stages:

1. ``rr_sequence`` lays out beat events over 10 seconds according to the
   rhythm class: onset times, per-beat P-wave times, and beat kinds
   (normal, pvc, pac, fusion, escape, non-conducted P).
2. ``synthesize_record`` renders each event as Gaussian bumps, one per wave
   (P, Q, R, S, T), into five wave source channels. A fixed 12 x 5 gain
   matrix, constant across the corpus, projects the sources onto the leads.
   Baseline wander, white noise, and optional mains interference are added
   on top.
3. Labels follow from the rhythm kind and overlays, with consistency rules
   applied (bigeminy implies pvc; atrial fibrillation and sinus rhythm are
   mutually exclusive).

Classes with rate or variability contracts (bradycardia slow, the
tachycardia family fast, fibrillation irregular, sinus regular) are checked
against the package's own heart-rate oracle at generation time and redrawn
from the same stream until they comply, so generation stays deterministic
per (seed, record index) while the contracts hold on every record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import (Dataset, EcgRecord, LabelVocabulary, N_LEADS, RECORD_LENGTH,
                   SAMPLE_RATE_HZ, default_vocabulary)
from .errors import ConfigError, GenerationError, MixError, NoBeatsError
from .rng import stream

RECORD_SECONDS = RECORD_LENGTH / SAMPLE_RATE_HZ

WAVE_NAMES = ("p", "q", "r", "s", "t")

# Per-wave lead gains: rows are the 12 leads, columns P, Q, R, S, T.
# Fixed for the whole corpus; magnitudes loosely follow the usual frontal
# and precordial amplitude patterns, including a few negative-polarity leads.
LEAD_GAINS = np.array([
    #  P      Q      R      S      T
    [0.90,  0.80,  0.95,  0.90,  0.90],   # I
    [1.00,  1.00,  1.00,  1.00,  1.00],   # II
    [0.45,  0.60,  0.55,  0.70,  0.60],   # III
    [-0.85, -0.75, -0.90, -0.80, -0.85],  # aVR
    [0.55,  0.40,  0.50,  0.35,  0.45],   # aVL
    [0.75,  0.85,  0.80,  0.90,  0.85],   # aVF
    [0.30,  0.90, -0.40,  1.30,  0.35],   # V1
    [0.40,  0.95,  0.10,  1.25,  0.55],   # V2
    [0.50,  0.90,  0.55,  1.00,  0.75],   # V3
    [0.60,  0.85,  1.10,  0.70,  0.90],   # V4
    [0.65,  0.80,  1.20,  0.45,  0.85],   # V5
    [0.60,  0.75,  1.05,  0.30,  0.75],   # V6
], dtype=np.float64)

BASE_KINDS = (
    "sinus", "sinus_bradycardia", "ventricular_tachycardia", "avnrt",
    "atrial_fibrillation", "atrial_flutter", "ectopic_atrial_rhythm",
    "first_degree_avb", "mobitz_i", "complete_heart_block", "bigeminy",
)
OVERLAY_KINDS = ("pvc_overlay", "pac_overlay", "fusion")

# Organized atrial activity with normal conduction can host ectopic beats;
# fibrillation can host ventricular but not atrial ectopy.
OVERLAY_COMPATIBLE = {
    "pvc_overlay": {"sinus", "sinus_bradycardia", "first_degree_avb",
                    "ectopic_atrial_rhythm", "atrial_fibrillation"},
    "pac_overlay": {"sinus", "sinus_bradycardia", "first_degree_avb",
                    "ectopic_atrial_rhythm"},
    "fusion": {"sinus", "sinus_bradycardia", "first_degree_avb",
               "ectopic_atrial_rhythm"},
}

KIND_LABELS = {
    "sinus": frozenset({"sinus_rhythm"}),
    "sinus_bradycardia": frozenset({"sinus_bradycardia"}),
    "ventricular_tachycardia": frozenset({"ventricular_tachycardia"}),
    "avnrt": frozenset({"avnrt"}),
    "atrial_fibrillation": frozenset({"atrial_fibrillation"}),
    "atrial_flutter": frozenset({"atrial_flutter"}),
    "ectopic_atrial_rhythm": frozenset({"ectopic_atrial_rhythm"}),
    "first_degree_avb": frozenset({"first_degree_avb", "sinus_rhythm"}),
    "mobitz_i": frozenset({"mobitz_i", "sinus_rhythm"}),
    "complete_heart_block": frozenset({"complete_heart_block"}),
    "bigeminy": frozenset({"bigeminy", "pvc", "sinus_rhythm"}),
}
OVERLAY_LABELS = {
    "pvc_overlay": frozenset({"pvc"}),
    "pac_overlay": frozenset({"pac"}),
    "fusion": frozenset({"fusion_complex"}),
}

RATE_RANGES = {
    "sinus": (60.0, 100.0),
    "sinus_bradycardia": (40.0, 55.0),
    "ventricular_tachycardia": (120.0, 200.0),
    "avnrt": (150.0, 220.0),
    "atrial_fibrillation": (75.0, 140.0),        # mean ventricular rate
    "atrial_flutter": (250.0, 330.0),            # atrial; 2:1 conduction
    "ectopic_atrial_rhythm": (60.0, 100.0),
    "first_degree_avb": (60.0, 95.0),
    "mobitz_i": (70.0, 100.0),                   # atrial train
    "complete_heart_block": (60.0, 100.0),       # P train; escape 30-45
    "bigeminy": (60.0, 90.0),
}

TACHYCARDIA_FAMILY = ("ventricular_tachycardia", "avnrt", "atrial_flutter")


@dataclass(frozen=True)
class Wave:
    amplitude: float      # millivolts
    offset: float         # seconds relative to the R reference
    width: float          # Gaussian sigma, seconds


@dataclass
class BeatTemplate:
    """Gaussian-bump description of one beat's P/Q/R/S/T morphology."""

    waves: dict
    qrs_duration: float
    pr_interval: float

    def __post_init__(self):
        for name, wave in self.waves.items():
            if name not in WAVE_NAMES:
                raise ConfigError(f"unknown wave {name!r}")
            if wave.width <= 0:
                raise ConfigError(f"wave {name} width must be positive")
        if not 0.04 <= self.qrs_duration <= 0.3:
            raise ConfigError(f"qrs_duration {self.qrs_duration} outside [0.04, 0.3]")
        if "p" in self.waves and not 0.05 <= self.pr_interval <= 0.6:
            raise ConfigError(f"pr_interval {self.pr_interval} outside [0.05, 0.6]")


@dataclass
class RhythmSpec:
    """Rhythm class plus optional overlays and parameter overrides."""

    kind: str
    overlays: tuple = ()
    rate_bpm: Optional[tuple] = None      # (low, high) override
    rr_jitter: float = 0.03               # fractional, sinus-family rhythms
    overlay_fraction: float = 0.22        # share of beats replaced by ectopy

    def __post_init__(self):
        self.overlays = tuple(self.overlays)
        if self.kind not in BASE_KINDS:
            raise MixError(f"unknown rhythm kind {self.kind!r}")
        for ov in self.overlays:
            if ov not in OVERLAY_KINDS:
                if ov in BASE_KINDS:
                    raise MixError(
                        f"mutually exclusive rhythm classes {self.kind!r} and {ov!r} "
                        f"cannot co-occur on one record")
                raise MixError(f"unknown overlay {ov!r}")
            if self.kind not in OVERLAY_COMPATIBLE[ov]:
                raise MixError(f"overlay {ov!r} is incompatible with base {self.kind!r}")

    def labels(self) -> frozenset:
        labels = set(KIND_LABELS[self.kind])
        for ov in self.overlays:
            labels |= OVERLAY_LABELS[ov]
        return check_label_consistency(frozenset(labels))

    def rate_range(self) -> tuple:
        return self.rate_bpm if self.rate_bpm is not None else RATE_RANGES[self.kind]


def check_label_consistency(labels: frozenset) -> frozenset:
    """Enforce the co-occurrence rules; raises on impossible sets."""
    if "bigeminy" in labels and "pvc" not in labels:
        raise MixError("bigeminy requires pvc")
    exclusive = [("atrial_fibrillation", "sinus_rhythm"),
                 ("atrial_fibrillation", "atrial_flutter"),
                 ("atrial_fibrillation", "sinus_bradycardia"),
                 ("atrial_flutter", "sinus_rhythm")]
    for a, b in exclusive:
        if a in labels and b in labels:
            raise MixError(f"labels {a} and {b} are mutually exclusive")
    return labels


@dataclass(frozen=True)
class BeatEvent:
    """One rendered event: a QRS complex, a P wave, or both."""

    qrs_time: Optional[float]
    p_time: Optional[float]
    kind: str            # normal | pvc | pac | fusion | escape | dropped


@dataclass
class RhythmTrace:
    events: list
    info: dict = field(default_factory=dict)

    def qrs_times(self) -> list:
        return [e.qrs_time for e in self.events if e.qrs_time is not None]


def _sinus_train(rate_bpm: float, jitter: float, duration: float, rng,
                 pr: float) -> list:
    rr = 60.0 / rate_bpm
    t = float(rng.uniform(0.2, 0.8))
    events = []
    while t < duration - 0.15:
        pr_beat = pr * (1.0 + 0.07 * float(rng.uniform(-1.0, 1.0)))
        events.append(BeatEvent(qrs_time=t, p_time=t - pr_beat, kind="normal"))
        t += rr * (1.0 + jitter * float(rng.uniform(-1.0, 1.0)))
    return events


def rr_sequence(spec: RhythmSpec, duration_s: float, rng) -> RhythmTrace:
    """Beat onset times and annotations for one record."""
    if duration_s <= 0:
        raise ConfigError(f"duration must be positive, got {duration_s}")
    lo, hi = spec.rate_range()
    info: dict = {}
    events: list = []

    if spec.kind in ("sinus", "sinus_bradycardia", "first_degree_avb",
                     "ectopic_atrial_rhythm"):
        rate = float(rng.uniform(lo, hi))
        pr = {"first_degree_avb": float(rng.uniform(0.30, 0.44)),
              "ectopic_atrial_rhythm": float(rng.uniform(0.09, 0.12))}.get(
            spec.kind, float(rng.uniform(0.14, 0.19)))
        events = _sinus_train(rate, spec.rr_jitter, duration_s, rng, pr)
        info.update(rate_bpm=rate, pr=pr)

    elif spec.kind == "ventricular_tachycardia":
        rate = float(rng.uniform(lo, hi))
        rr = 60.0 / rate
        t = float(rng.uniform(0.12, 0.28))
        while t < duration_s - 0.1:
            events.append(BeatEvent(qrs_time=t, p_time=None, kind="pvc"))
            t += rr * (1.0 + spec.rr_jitter * float(rng.uniform(-1.0, 1.0)))
        info.update(rate_bpm=rate)

    elif spec.kind == "avnrt":
        rate = float(rng.uniform(lo, hi))
        rr = 60.0 / rate
        t = float(rng.uniform(0.12, 0.28))
        while t < duration_s - 0.1:
            events.append(BeatEvent(qrs_time=t, p_time=None, kind="normal"))
            t += rr * (1.0 + 0.5 * spec.rr_jitter * float(rng.uniform(-1.0, 1.0)))
        info.update(rate_bpm=rate)

    elif spec.kind == "atrial_fibrillation":
        mean_rate = float(rng.uniform(lo, hi))
        mean_rr = 60.0 / mean_rate
        t = float(rng.uniform(0.3, 0.3 + mean_rr))
        while t < duration_s - 0.1:
            events.append(BeatEvent(qrs_time=t, p_time=None, kind="normal"))
            t += mean_rr * float(rng.uniform(0.5, 1.5))
        info.update(rate_bpm=mean_rate)

    elif spec.kind == "atrial_flutter":
        atrial = float(rng.uniform(lo, hi))
        ventricular_rr = 120.0 / atrial          # 2:1 conduction
        t = float(rng.uniform(0.3, 0.3 + ventricular_rr))
        while t < duration_s - 0.1:
            events.append(BeatEvent(qrs_time=t, p_time=None, kind="normal"))
            t += ventricular_rr * (1.0 + 0.01 * float(rng.uniform(-1.0, 1.0)))
        info.update(atrial_rate_bpm=atrial, rate_bpm=atrial / 2.0)

    elif spec.kind == "mobitz_i":
        atrial = float(rng.uniform(lo, hi))
        rr_a = 60.0 / atrial
        pr_base = float(rng.uniform(0.16, 0.20))
        increment = float(rng.uniform(0.03, 0.06))
        t = float(rng.uniform(0.3, 0.3 + rr_a))
        cycle_len = int(rng.integers(3, 7))
        position = 0
        while t < duration_s - 0.1:
            if position == cycle_len - 1:
                events.append(BeatEvent(qrs_time=None, p_time=t, kind="dropped"))
                position = 0
                cycle_len = int(rng.integers(3, 7))
            else:
                pr = pr_base + position * increment
                events.append(BeatEvent(qrs_time=t + pr, p_time=t, kind="normal"))
                position += 1
            t += rr_a * (1.0 + 0.01 * float(rng.uniform(-1.0, 1.0)))
        info.update(rate_bpm=atrial, pr_base=pr_base, pr_increment=increment)

    elif spec.kind == "complete_heart_block":
        atrial = float(rng.uniform(lo, hi))
        escape = float(rng.uniform(30.0, 45.0))
        rr_a, rr_v = 60.0 / atrial, 60.0 / escape
        t = float(rng.uniform(0.2, 0.2 + rr_a))
        while t < duration_s - 0.1:
            events.append(BeatEvent(qrs_time=None, p_time=t, kind="dropped"))
            t += rr_a * (1.0 + 0.01 * float(rng.uniform(-1.0, 1.0)))
        t = float(rng.uniform(0.3, 0.3 + rr_v))
        while t < duration_s - 0.1:
            events.append(BeatEvent(qrs_time=t, p_time=None, kind="escape"))
            t += rr_v * (1.0 + 0.01 * float(rng.uniform(-1.0, 1.0)))
        events.sort(key=lambda e: e.qrs_time if e.qrs_time is not None else e.p_time)
        info.update(rate_bpm=escape, atrial_rate_bpm=atrial)

    elif spec.kind == "bigeminy":
        rate = float(rng.uniform(lo, hi))
        rr = 60.0 / rate
        pr = float(rng.uniform(0.14, 0.19))
        coupling = rr * float(rng.uniform(0.42, 0.52))
        t = float(rng.uniform(0.35, 0.35 + rr))
        while t < duration_s - 0.15:
            events.append(BeatEvent(qrs_time=t, p_time=t - pr, kind="normal"))
            pvc_t = t + coupling
            if pvc_t < duration_s - 0.15:
                events.append(BeatEvent(qrs_time=pvc_t, p_time=None, kind="pvc"))
            t += 2.0 * rr
        info.update(rate_bpm=rate, coupling=coupling)

    else:  # pragma: no cover - guarded by RhythmSpec validation
        raise MixError(f"unknown rhythm kind {spec.kind!r}")

    events = _apply_overlays(spec, events, rng)
    return RhythmTrace(events=events, info=info)


def _apply_overlays(spec: RhythmSpec, events: list, rng) -> list:
    overlay_beat = {"pvc_overlay": "pvc", "pac_overlay": "pac", "fusion": "fusion"}
    for ov in spec.overlays:
        kind = overlay_beat[ov]
        candidates = [i for i, e in enumerate(events)
                      if e.kind == "normal" and e.qrs_time is not None]
        if not candidates:
            raise GenerationError(f"no beats available to host overlay {ov}")
        n_replace = max(1, int(round(spec.overlay_fraction * len(candidates))))
        chosen = rng.choice(len(candidates), size=min(n_replace, len(candidates)),
                            replace=False)
        for j in sorted(int(c) for c in chosen):
            i = candidates[j]
            e = events[i]
            if kind == "pvc":
                # premature: pull the beat earlier, drop its P wave
                events[i] = BeatEvent(qrs_time=e.qrs_time - 0.1, p_time=None,
                                      kind="pvc")
            elif kind == "pac":
                early_p = (e.p_time or e.qrs_time - 0.15) - 0.08
                if rng.random() < 0.25:
                    # non-conducted PAC: a premature P with no QRS, the main
                    # lookalike of a dropped Wenckebach beat
                    events[i] = BeatEvent(qrs_time=None, p_time=early_p,
                                          kind="blocked_pac")
                else:
                    events[i] = BeatEvent(qrs_time=e.qrs_time - 0.08,
                                          p_time=early_p, kind="pac")
            else:
                events[i] = BeatEvent(qrs_time=e.qrs_time, p_time=None, kind="fusion")
    return events


# ---------------------------------------------------------------------------
# waveform rendering

def _draw_normal_template(rng, pr: float = 0.16) -> BeatTemplate:
    r_amp = float(rng.uniform(1.1, 1.8))
    return BeatTemplate(
        waves={
            "p": Wave(float(rng.uniform(0.10, 0.20)), -pr, float(rng.uniform(0.016, 0.026))),
            "q": Wave(float(rng.uniform(-0.16, -0.07)), -0.028, 0.009),
            "r": Wave(r_amp, 0.0, float(rng.uniform(0.010, 0.016))),
            "s": Wave(float(rng.uniform(-0.38, -0.18)), 0.028, 0.011),
            "t": Wave(float(rng.uniform(0.18, 0.45)), float(rng.uniform(0.26, 0.36)),
                      float(rng.uniform(0.04, 0.065))),
        },
        qrs_duration=float(rng.uniform(0.07, 0.10)),
        pr_interval=pr,
    )


def _draw_pvc_template(rng) -> BeatTemplate:
    """Wide, flipped-polarity ventricular beat without a P wave."""
    qrs = float(rng.uniform(0.13, 0.17))
    width_10pct = 2.0 * math.sqrt(2.0 * math.log(10.0))   # sigma -> 10% width
    return BeatTemplate(
        waves={
            "r": Wave(float(rng.uniform(-1.8, -1.3)), 0.0, qrs / width_10pct),
            "s": Wave(float(rng.uniform(0.25, 0.4)), qrs * 0.55, 0.03),
            "t": Wave(float(rng.uniform(0.4, 0.6)), float(rng.uniform(0.30, 0.38)),
                      float(rng.uniform(0.06, 0.08))),
        },
        qrs_duration=qrs,
        pr_interval=0.16,
    )


def wave_components(template: BeatTemplate, length: int,
                    rate: int = SAMPLE_RATE_HZ, center: Optional[float] = None
                    ) -> np.ndarray:
    """[5, length] per-wave waveforms for one beat, R reference mid-window."""
    out = np.zeros((len(WAVE_NAMES), length))
    ref = (length / 2.0) / rate if center is None else center
    for row, name in enumerate(WAVE_NAMES):
        wave = template.waves.get(name)
        if wave is None or wave.amplitude == 0.0:
            continue
        _add_bump(out[row], ref + wave.offset, wave.width, wave.amplitude, rate)
    return out


def beat_waveform(template: BeatTemplate, length: int,
                  rate: int = SAMPLE_RATE_HZ) -> np.ndarray:
    """Single-source waveform of one beat: the sum of its wave bumps."""
    return wave_components(template, length, rate).sum(axis=0)


def _add_bump(channel: np.ndarray, center_s: float, sigma_s: float,
              amplitude: float, rate: int = SAMPLE_RATE_HZ) -> None:
    """Accumulate one Gaussian bump, evaluated on a +-4 sigma support."""
    center = center_s * rate
    half = max(int(4.0 * sigma_s * rate) + 1, 2)
    lo = max(int(center) - half, 0)
    hi = min(int(center) + half + 1, channel.size)
    if hi <= lo:
        return
    idx = np.arange(lo, hi)
    channel[lo:hi] += amplitude * np.exp(
        -0.5 * ((idx - center) / (sigma_s * rate)) ** 2)


@dataclass
class NoiseConfig:
    baseline_wander_mv: float = 0.10
    wander_hz_max: float = 0.45
    white_mv: float = 0.035
    mains_mv: float = 0.0
    mains_hz: float = 60.0


def _render_events(trace: RhythmTrace, spec: RhythmSpec, rng) -> np.ndarray:
    waves = np.zeros((len(WAVE_NAMES), RECORD_LENGTH))
    normal = _draw_normal_template(
        rng, pr=trace.info.get("pr", float(rng.uniform(0.14, 0.19))))
    pvc = _draw_pvc_template(rng)
    if spec.kind == "ectopic_atrial_rhythm":
        # ectopic focus: inverted P with a short PR
        p = normal.waves["p"]
        normal.waves["p"] = Wave(-abs(p.amplitude) * 1.1, p.offset, p.width)

    for event in trace.events:
        beat_gain = float(rng.uniform(0.94, 1.06))   # beat-to-beat variation
        if event.qrs_time is not None:
            if event.kind in ("pvc",):
                comp = wave_components(pvc, RECORD_LENGTH, center=event.qrs_time)
            elif event.kind == "fusion":
                comp = 0.5 * (wave_components(normal, RECORD_LENGTH, center=event.qrs_time)
                              + wave_components(pvc, RECORD_LENGTH, center=event.qrs_time))
            elif event.kind == "escape":
                wide = replace(normal)
                wide.waves = dict(normal.waves)
                r = normal.waves["r"]
                wide.waves["r"] = Wave(r.amplitude, r.offset, r.width * 1.5)
                comp = wave_components(wide, RECORD_LENGTH, center=event.qrs_time)
            else:
                comp = wave_components(normal, RECORD_LENGTH, center=event.qrs_time)
            comp[0] = 0.0   # P waves render from the event's own p_time below
            waves += beat_gain * comp
        if event.p_time is not None:
            p = normal.waves["p"]
            amp = p.amplitude * beat_gain * (1.25 if event.kind in ("pac", "blocked_pac")
                                             else 1.0)
            _add_bump(waves[0], event.p_time, p.width, amp)

    times = np.arange(RECORD_LENGTH) / SAMPLE_RATE_HZ
    if spec.kind == "atrial_flutter":
        atrial_hz = trace.info["atrial_rate_bpm"] / 60.0
        phase = float(rng.uniform(0, 1))
        saw = 2.0 * ((times * atrial_hz + phase) % 1.0) - 1.0
        waves[0] += float(rng.uniform(0.12, 0.2)) * saw
    elif spec.kind == "atrial_fibrillation":
        for _ in range(3):
            f = float(rng.uniform(4.0, 7.5))
            waves[0] += float(rng.uniform(0.02, 0.05)) * np.sin(
                2 * np.pi * f * times + float(rng.uniform(0, 2 * np.pi)))
    return waves


def _rate_constraints_ok(record_voltages: np.ndarray, spec: RhythmSpec) -> bool:
    try:
        peaks = _detect_r_peaks(record_voltages)
    except NoBeatsError:
        return False
    if len(peaks) < 2:
        return False
    times = peaks / SAMPLE_RATE_HZ
    bpm = 60.0 * (len(times) - 1) / (times[-1] - times[0])
    rr = np.diff(times)
    cv = float(rr.std() / rr.mean()) if rr.mean() > 0 else 0.0
    if spec.kind == "sinus_bradycardia" and bpm >= 63.0:
        return False
    if spec.kind in TACHYCARDIA_FAMILY and bpm <= 102.0:
        return False
    if spec.kind == "atrial_fibrillation" and cv < 0.17:
        return False
    if spec.kind == "sinus" and not spec.overlays and cv >= 0.045:
        return False
    return True


def synthesize_record(spec: RhythmSpec, noise: Optional[NoiseConfig] = None,
                      rng=None, source_id: str = "",
                      max_attempts: int = 25) -> EcgRecord:
    """Render one labeled 12-lead record for the given rhythm spec."""
    if rng is None:
        rng = stream(0, "record", source_id or "anonymous")
    noise = noise or NoiseConfig()
    labels = spec.labels()

    for _ in range(max_attempts):
        trace = rr_sequence(spec, RECORD_SECONDS, rng)
        waves = _render_events(trace, spec, rng)
        leads = LEAD_GAINS @ waves

        times = np.arange(RECORD_LENGTH) / SAMPLE_RATE_HZ
        if noise.baseline_wander_mv > 0:
            f = float(rng.uniform(0.1, noise.wander_hz_max))
            phase = float(rng.uniform(0, 2 * np.pi))
            wander = np.sin(2 * np.pi * f * times + phase)
            per_lead = rng.uniform(0.5, 1.0, N_LEADS) * noise.baseline_wander_mv
            leads += per_lead[:, None] * wander[None, :]
        if noise.white_mv > 0:
            leads += rng.normal(0.0, noise.white_mv, leads.shape)
        if noise.mains_mv > 0:
            mains = np.sin(2 * np.pi * noise.mains_hz * times
                           + float(rng.uniform(0, 2 * np.pi)))
            leads += noise.mains_mv * mains[None, :]

        voltages = leads.astype(np.float32)
        if _rate_constraints_ok(voltages, spec):
            return EcgRecord(voltages=voltages, labels=labels, source_id=source_id)
    raise GenerationError(
        f"could not satisfy rate constraints for {spec.kind} in {max_attempts} tries")


# ---------------------------------------------------------------------------
# heart-rate oracle

def _detect_r_peaks(voltages: np.ndarray) -> np.ndarray:
    """R-peak sample indices on the highest-variance lead.

    Candidates are samples whose magnitude reaches 60% of the lead's maximum
    magnitude; candidates within a 200 ms refractory window of the running
    peak merge into it, keeping the largest-magnitude sample.
    """
    lead = voltages[int(np.argmax(voltages.var(axis=1)))]
    mags = np.abs(lead)
    peak_mag = mags.max()
    if peak_mag <= 0:
        raise NoBeatsError("flat record, no beats detectable")
    threshold = 0.6 * peak_mag
    candidates = np.flatnonzero(mags >= threshold)
    if candidates.size == 0:
        raise NoBeatsError("no samples above detection threshold")
    refractory = int(0.2 * SAMPLE_RATE_HZ)
    peaks = []
    current = candidates[0]
    for idx in candidates[1:]:
        if idx - current <= refractory:
            if mags[idx] > mags[current]:
                current = idx
        else:
            peaks.append(current)
            current = idx
    peaks.append(current)
    return np.asarray(peaks)


def estimate_heart_rate(record: EcgRecord) -> float:
    """Beats per minute from R-peak counting; raises NoBeatsError when flat."""
    peaks = _detect_r_peaks(record.voltages)
    if len(peaks) < 2:
        raise NoBeatsError("fewer than two beats detected")
    times = peaks / SAMPLE_RATE_HZ
    return 60.0 * (len(times) - 1) / float(times[-1] - times[0])


def rr_coefficient_of_variation(record: EcgRecord) -> float:
    """CV of detected R-R intervals; the irregularity oracle."""
    peaks = _detect_r_peaks(record.voltages)
    if len(peaks) < 3:
        raise NoBeatsError("too few beats for interval statistics")
    rr = np.diff(peaks / SAMPLE_RATE_HZ)
    return float(rr.std() / rr.mean())


# ---------------------------------------------------------------------------
# corpus generation

def parse_mix_key(key: str) -> RhythmSpec:
    """Parse an archetype key like ``sinus+pvc_overlay`` into a RhythmSpec."""
    parts = [p.strip() for p in key.split("+") if p.strip()]
    if not parts:
        raise MixError("empty class-mix key")
    bases = [p for p in parts if p in BASE_KINDS]
    overlays = [p for p in parts if p in OVERLAY_KINDS]
    unknown = [p for p in parts if p not in BASE_KINDS and p not in OVERLAY_KINDS]
    if unknown:
        raise MixError(f"unknown class-mix entries {unknown}")
    if len(bases) > 1:
        raise MixError(f"mutually exclusive rhythm classes {bases} in one key")
    if not bases:
        raise MixError(f"class-mix key {key!r} names no base rhythm")
    return RhythmSpec(kind=bases[0], overlays=tuple(overlays))


def _apportion(mix: dict, n: int) -> dict:
    """Scale a {key: count-or-frequency} mix to exactly n records."""
    keys = sorted(mix)
    values = np.array([float(mix[k]) for k in keys])
    if np.any(values < 0):
        raise MixError("class-mix values must be non-negative")
    if values.sum() == 0:
        if n > 0:
            raise MixError("class mix sums to zero but n > 0")
        return {k: 0 for k in keys}
    all_ints = all(float(mix[k]).is_integer() for k in keys)
    if all_ints and int(values.sum()) == n:
        return {k: int(mix[k]) for k in keys}
    quotas = values / values.sum() * n
    counts = np.floor(quotas).astype(int)
    remainder = n - counts.sum()
    order = np.argsort(-(quotas - counts), kind="stable")
    for i in range(int(remainder)):
        counts[order[i]] += 1
    return {k: int(c) for k, c in zip(keys, counts)}


def generate_dataset(class_mix: dict, n: int, seed: int,
                     noise: Optional[NoiseConfig] = None,
                     vocabulary: Optional[LabelVocabulary] = None) -> Dataset:
    """Synthesize a labeled corpus honoring the class mix within one record.

    ``class_mix`` maps archetype keys (a base rhythm, optionally ``+overlay``)
    to integer counts or relative frequencies. Each record's stream derives
    from (seed, record index), so the corpus does not depend on generation
    order.
    """
    if n < 0:
        raise ConfigError("n must be >= 0")
    vocab = vocabulary or default_vocabulary()
    specs = {key: parse_mix_key(key) for key in class_mix}
    counts = _apportion(class_mix, n)

    assignment = []
    for key in sorted(counts):
        assignment.extend([key] * counts[key])
    order = stream(seed, "mix-order").permutation(len(assignment))

    records = []
    for i in range(n):
        key = assignment[order[i]]
        rng = stream(seed, "record", i)
        rec = synthesize_record(specs[key], noise=noise, rng=rng,
                                source_id=f"synth-{seed}-{i}")
        for label in rec.labels:
            if label not in vocab:
                raise MixError(f"generated label {label!r} missing from vocabulary")
        records.append(rec)
    ds = Dataset.build(records, vocab, source="synthetic", generator_seed=seed)
    ds.manifest["class_mix"] = {k: int(v) for k, v in counts.items()}
    return ds
