"""Synthetic recordings for benchmarks and tests.

Each task is a fixed-length mono recording: pink or white background noise
plus Hann-enveloped tone or chirp events at a prescribed signal-to-noise
ratio. Annotations are sample-exact. Profiles vary event duration, density,
and SNR to mimic recordings dominated by short calls, very short dense
calls, or long calls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .episodes import Annotation
from .errors import PlacementFailure
from .frontend import Waveform, write_wav


@dataclass(frozen=True)
class SynthProfile:
    name: str
    recording_s: float = 60.0
    sample_rate: int = 16000
    kind: str = "tone"
    dur_lo: float = 0.3
    dur_hi: float = 0.8
    events_per_min: float = 10.0
    snr_db: float = 30.0
    f_lo: float = 1000.0
    f_hi: float = 3000.0
    sweep_lo: float = 0.0
    sweep_hi: float = 0.0
    carrier_jitter: float = 0.03
    carrier_drift: float = 0.0
    bg_morph: float = 0.0
    dur_ramp: bool = False
    gap_s: float = 0.3
    background: str = "pink"

    def __post_init__(self):
        if self.kind not in ("tone", "chirp"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not (0.0 < self.dur_lo <= self.dur_hi):
            raise ValueError("bad duration range")
        if self.gap_s < 0.1:
            raise ValueError("events need at least 100 ms between them")
        if not (0.0 <= self.carrier_jitter < 1.0):
            raise ValueError("carrier_jitter must be in [0, 1)")
        if not (0.0 <= self.carrier_drift < 1.0):
            raise ValueError("carrier_drift must be in [0, 1)")
        if not (0.0 <= self.bg_morph <= 1.0):
            raise ValueError("bg_morph must be in [0, 1]")
        if self.background not in ("pink", "white"):
            raise ValueError(f"unknown background {self.background!r}")


PROFILES: dict[str, SynthProfile] = {
    "easy": SynthProfile("easy", events_per_min=10.0, snr_db=30.0),
    "dense": SynthProfile(
        "dense",
        dur_lo=0.15,
        dur_hi=2.2,
        events_per_min=26.0,
        snr_db=12.0,
        gap_s=0.5,
        dur_ramp=True,
    ),
    "long": SynthProfile(
        "long",
        recording_s=90.0,
        kind="chirp",
        dur_lo=1.2,
        dur_hi=3.5,
        events_per_min=8.0,
        snr_db=-7.0,
        f_lo=800.0,
        f_hi=1600.0,
        sweep_lo=2000.0,
        sweep_hi=4000.0,
        gap_s=0.5,
        background="white",
    ),
    "short": SynthProfile(
        "short", dur_lo=0.1, dur_hi=0.25, events_per_min=14.0, snr_db=20.0, f_lo=2000.0, f_hi=5000.0
    ),
    "veryshort": SynthProfile(
        "veryshort",
        dur_lo=0.04,
        dur_hi=0.17,
        events_per_min=20.0,
        snr_db=20.0,
        f_lo=3000.0,
        f_hi=6000.0,
        gap_s=0.15,
    ),
}


@dataclass
class SynthTask:
    waveform: Waveform
    annotations: list[Annotation]
    seed: object


def pink_noise(rng: np.random.Generator, n: int, n_rows: int = 16) -> np.ndarray:
    """Approximate 1/f noise: sum of rows redrawn at octave-spaced intervals."""
    total = np.zeros(n)
    for r in range(n_rows):
        step = 1 << r
        m = (n + step - 1) // step
        total += np.repeat(rng.standard_normal(m), step)[:n]
    return total / np.sqrt(n_rows)


def _event_samples(kind: str, dur_s: float, f0: float, sweep: float, phase: float, rate: int) -> np.ndarray:
    n = max(1, int(round(dur_s * rate)))
    t = np.arange(n) / rate
    if kind == "tone":
        x = np.sin(2.0 * np.pi * f0 * t + phase)
    else:
        inst = f0 * t + 0.5 * (sweep / dur_s) * t**2  # linear sweep f0 -> f0 + sweep
        x = np.sin(2.0 * np.pi * inst + phase)
    return 0.5 * x * np.hanning(n)


def generate_task(profile: SynthProfile, seed) -> SynthTask:
    """One synthetic recording with sample-exact annotations.

    Events are placed left to right with at least gap_s between them; the
    layout comes from sorted uniform draws over the leftover slack, so any
    profile that fits at all places deterministically without retries.
    """
    rng = np.random.default_rng(seed)
    rate = profile.sample_rate
    n_events = int(round(profile.events_per_min * profile.recording_s / 60.0))
    if n_events < 6:
        raise PlacementFailure(
            f"profile {profile.name}: {n_events} events cannot support a 5-shot episode"
        )
    durations = rng.uniform(profile.dur_lo, profile.dur_hi, n_events)
    if profile.dur_ramp:
        # calls lengthen through the session; the opening shots then come
        # from the short end of the class
        durations = np.sort(durations)
    # one call type per recording: a base carrier with per-event jitter
    jitter = profile.carrier_jitter
    base_f = rng.uniform(profile.f_lo, profile.f_hi)
    carriers = base_f * rng.uniform(1.0 - jitter, 1.0 + jitter, n_events)
    if profile.kind == "chirp":
        base_sweep = rng.uniform(profile.sweep_lo, profile.sweep_hi)
        sweeps = base_sweep * rng.uniform(1.0 - jitter, 1.0 + jitter, n_events)
    else:
        sweeps = np.zeros(n_events)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_events)

    lead, tail = 0.5, 0.2
    slack = profile.recording_s - lead - tail - durations.sum() - (n_events - 1) * profile.gap_s
    if slack < 0.0:
        raise PlacementFailure(
            f"profile {profile.name}: {n_events} events do not fit in {profile.recording_s}s"
        )
    cuts = np.sort(rng.uniform(0.0, slack, n_events))
    onsets_s = lead + cuts + np.concatenate([[0.0], np.cumsum(durations[:-1])]) + profile.gap_s * np.arange(n_events)
    if profile.carrier_drift > 0.0:
        # the call wanders upward through the session, so late events sit
        # outside the band the first shots establish
        carriers = carriers * (1.0 + profile.carrier_drift * onsets_s / profile.recording_s)

    n_total = int(round(profile.recording_s * rate))
    if profile.background == "pink":
        bg = pink_noise(rng, n_total)
    else:
        bg = rng.standard_normal(n_total)
    if profile.bg_morph > 0.0:
        # background color shifts across the session: the opening minutes no
        # longer describe the closing ones
        other = rng.standard_normal(n_total) if profile.background == "pink" else pink_noise(rng, n_total)
        a = profile.bg_morph * np.linspace(0.0, 1.0, n_total)
        bg = ((1.0 - a) * bg + a * other) / np.sqrt((1.0 - a) ** 2 + a**2)
    events = [
        _event_samples(profile.kind, durations[i], carriers[i], sweeps[i], phases[i], rate)
        for i in range(n_events)
    ]
    mean_rms = float(np.mean([np.sqrt(np.mean(e**2)) for e in events]))
    sigma = mean_rms * 10.0 ** (-profile.snr_db / 20.0)
    mix = bg / max(bg.std(), 1e-12) * sigma

    annotations = []
    for i in range(n_events):
        start = int(round(onsets_s[i] * rate))
        stop = min(start + len(events[i]), n_total)
        mix[start:stop] += events[i][: stop - start]
        annotations.append(Annotation(start / rate, stop / rate, "POS"))

    peak = np.abs(mix).max()
    if peak > 0.99:
        mix *= 0.99 / peak
    return SynthTask(Waveform(mix, rate), annotations, seed)


def write_annotations_csv(path, annotations: list[Annotation]) -> None:
    lines = ["onset_s,offset_s,label"]
    lines += [f"{a.onset_s:.6f},{a.offset_s:.6f},{a.label}" for a in annotations]
    Path(path).write_text("\n".join(lines) + "\n")


def generate_corpus(profiles, n_train: int, n_test: int, seed: int, out_dir):
    """Write recordings, annotation files, and a manifest; returns the manifest path.

    For each profile, the first n_train recordings are role=train (fully
    annotated, for embedder pretraining) and the next n_test are role=test
    (used as 5-shot episodes). Seeds derive from (seed, profile index,
    recording index) so any recording regenerates independently.
    """
    if isinstance(profiles, SynthProfile):
        profiles = [profiles]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for pi, profile in enumerate(profiles):
        for idx in range(n_train + n_test):
            name = f"{profile.name}_{idx:03d}"
            task = generate_task(profile, [seed, pi, idx])
            write_wav(out_dir / f"{name}.wav", task.waveform)
            write_annotations_csv(out_dir / f"{name}.csv", task.annotations)
            entries.append(
                {
                    "recording": name,
                    "wav_path": f"{name}.wav",
                    "csv_path": f"{name}.csv",
                    "n_shots": 5,
                    "role": "train" if idx < n_train else "test",
                    "profile": profile.name,
                }
            )
    manifest = {"seed": seed, "recordings": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path
