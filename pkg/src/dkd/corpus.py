"""Deterministic synthetic speech-like corpus.

Every utterance is a harmonic source shaped by three label factors:

* **speaker** sets the fundamental frequency (geometric spacing from a base
  F0), a per-speaker overtone weighting, and a vocal-tract length factor
  that rescales all resonance frequencies;
* **content** sets a spectral envelope (two resonance bumps whose centers
  are drawn per content id) applied to the harmonic amplitudes;
* **intent** sets a deterministic prosody contour (flat / rising / falling
  / hat F0 modulation plus a matching amplitude contour).

Seeded noise is added at -30 dB relative to the signal RMS and the peak is
normalized to 0.89, so samples stay within [-1, 1].

Randomness comes from one documented counter-based generator so corpora are
reproducible bit for bit.  The stream for seed ``s`` is splitmix64:

    state_i = (s + (i + 1) * 0x9E3779B97F4A7C15) mod 2^64
    z = state_i
    z = (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2^64
    z = (z XOR (z >> 27)) * 0x94D049BB133111EB mod 2^64
    out_i = z XOR (z >> 31)

Uniforms in (0, 1] are ``((out >> 11) + 1) * 2^-53``; normals use the
Box-Muller transform on consecutive uniform pairs.  Substreams (one per
utterance, speaker, content) are derived by hashing a tag string and the
substream index into a fresh seed with the same mixer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Set, Tuple

import numpy as np

from .errors import DataError, ParameterError

GENERATOR_VERSION = "1"
SAMPLE_RATE = 16000
NOISE_DB = -30.0
PEAK = 0.89
N_HARMONICS = 12
F0_BASE = 110.0
F0_SPACING = 1.12  # ratio between consecutive speakers' fundamentals
F0_JITTER = 0.03  # per-utterance relative F0 wobble
TRACT_BASE = 0.80  # vocal-tract resonance scale of speaker 0
TRACT_SPACING = 1.065  # ratio between consecutive speakers' tract scales
MIN_SAMPLES = 400  # receptive field of the reference 320x front-end

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def splitmix64(seed: int, n: int, start: int = 0) -> np.ndarray:
    """``n`` raw 64-bit outputs of the documented counter-based stream."""
    idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    z = (np.uint64(seed & _MASK) + idx * np.uint64(_GOLDEN))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _mix_one(x: int) -> int:
    return int(splitmix64(x, 1)[0])


def substream_seed(seed: int, tag: str, index: int) -> int:
    """Independent child seed for (tag, index) under a master seed."""
    h = 0
    for ch in tag.encode("utf-8"):
        h = _mix_one(h * 257 + ch)
    return _mix_one((seed ^ h) + index * 0x632BE59BD9B4E019)


def uniforms(seed: int, n: int, start: int = 0) -> np.ndarray:
    """Uniforms in (0, 1] from the splitmix64 stream."""
    return ((splitmix64(seed, n, start) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53


def normals(seed: int, n: int) -> np.ndarray:
    """Standard normals via Box-Muller on consecutive uniform pairs."""
    m = (n + 1) // 2
    u = uniforms(seed, 2 * m)
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    theta = 2.0 * np.pi * u[1::2]
    out = np.empty(2 * m)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]


@dataclass
class Utterance:
    id: int
    speaker_id: int
    content_id: int
    intent_id: int
    duration_s: float
    offset: int  # float32 sample offset into the audio store
    length: int

    def to_record(self) -> dict:
        return {"id": self.id, "speaker": self.speaker_id, "content": self.content_id,
                "intent": self.intent_id, "duration_s": self.duration_s,
                "offset": self.offset, "length": self.length}

    @classmethod
    def from_record(cls, r: dict) -> "Utterance":
        return cls(id=int(r["id"]), speaker_id=int(r["speaker"]), content_id=int(r["content"]),
                   intent_id=int(r["intent"]), duration_s=float(r["duration_s"]),
                   offset=int(r["offset"]), length=int(r["length"]))


@dataclass
class CorpusManifest:
    seed: int
    version: str
    params: dict
    utterances: List[Utterance] = field(default_factory=list)

    def __len__(self):
        return len(self.utterances)


@dataclass
class Corpus:
    """Manifest plus the resident audio samples."""

    manifest: CorpusManifest
    samples: np.ndarray  # float32, concatenated utterances

    def __len__(self):
        return len(self.manifest)

    @property
    def utterances(self) -> List[Utterance]:
        return self.manifest.utterances

    def wave(self, utt_id: int) -> np.ndarray:
        u = self.manifest.utterances[utt_id]
        if u.id != utt_id:  # ids are positional by construction
            u = next(x for x in self.manifest.utterances if x.id == utt_id)
        return self.samples[u.offset:u.offset + u.length]

    def label(self, utt_id: int, kind: str) -> int:
        u = self.manifest.utterances[utt_id]
        return {"speaker": u.speaker_id, "content": u.content_id, "intent": u.intent_id}[kind]

    def label_arity(self, kind: str) -> int:
        key = {"speaker": "n_speakers", "content": "n_contents", "intent": "n_intents"}[kind]
        return int(self.manifest.params[key])


def _speaker_voice(seed: int, speaker: int) -> Tuple[float, float, np.ndarray]:
    f0 = F0_BASE * F0_SPACING ** speaker
    tract = TRACT_BASE * TRACT_SPACING ** speaker
    u = uniforms(substream_seed(seed, "speaker", speaker), N_HARMONICS)
    weights = (0.5 + u) / np.arange(1, N_HARMONICS + 1) ** 0.8
    return f0, tract, weights


def _content_envelope(seed: int, content: int, tract: float, freqs: np.ndarray) -> np.ndarray:
    # resonance centers scale with the speaker's vocal-tract factor
    u = uniforms(substream_seed(seed, "content", content), 4)
    c1 = (300.0 + 1200.0 * u[0]) * tract
    c2 = (1500.0 + 2500.0 * u[1]) * tract
    w1 = 150.0 + 250.0 * u[2]
    w2 = 300.0 + 500.0 * u[3]
    env = (np.exp(-0.5 * ((freqs - c1) / w1) ** 2)
           + np.exp(-0.5 * ((freqs - c2) / w2) ** 2))
    return 0.15 + env


def _intent_contour(intent: int, tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    shape = intent % 4
    if shape == 0:
        f_mod = np.zeros_like(tau)
    elif shape == 1:
        f_mod = 2.0 * tau - 1.0
    elif shape == 2:
        f_mod = 1.0 - 2.0 * tau
    else:
        f_mod = np.sin(np.pi * tau) - 0.5
    a_mod = 1.0 + 0.25 * f_mod
    return 0.08 * f_mod, a_mod


def synthesize_utterance(seed: int, utt_index: int, speaker: int, content: int,
                         intent: int, duration_s: float) -> np.ndarray:
    """One deterministic float32 waveform; see the module docstring."""
    n = int(round(duration_s * SAMPLE_RATE))
    sub = substream_seed(seed, "utterance", utt_index)
    f0, tract, weights = _speaker_voice(seed, speaker)
    jitter = (uniforms(sub, 1)[0] * 2.0 - 1.0) * F0_JITTER
    f0 = f0 * (1.0 + jitter)

    tau = np.arange(n) / n
    f_mod, a_mod = _intent_contour(intent, tau)
    inst_f0 = f0 * (1.0 + f_mod)
    phase = 2.0 * np.pi * np.cumsum(inst_f0) / SAMPLE_RATE

    harmonic_f = f0 * np.arange(1, N_HARMONICS + 1)
    amps = weights * _content_envelope(seed, content, tract, harmonic_f)
    keep = harmonic_f < 0.45 * SAMPLE_RATE  # stay below Nyquist
    sig = np.zeros(n)
    phases0 = uniforms(sub, N_HARMONICS, start=1) * 2.0 * np.pi
    for k in np.nonzero(keep)[0]:
        sig += amps[k] * np.sin((k + 1) * phase + phases0[k])
    sig *= a_mod
    peak = np.abs(sig).max()
    if peak > 0:
        sig *= PEAK / peak
    rms = np.sqrt(np.mean(sig ** 2))
    noise = normals(substream_seed(seed, "noise", utt_index), n)
    sig = sig + noise * (rms * 10.0 ** (NOISE_DB / 20.0))
    limit = np.abs(sig).max()
    if limit > 1.0:
        sig *= 1.0 / limit
    return sig.astype(np.float32)


def generate_corpus(seed: int, n_speakers: int, n_contents: int, n_intents: int,
                    utterances_per_cell: int, duration_s: float,
                    out_dir: Optional[Path] = None) -> Corpus:
    """Full factorial corpus over (speaker, content, intent) cells.

    With ``out_dir`` set, writes ``manifest.jsonl`` (meta line first, one
    utterance record per following line) and ``audio.f32`` (raw float32
    little-endian samples addressed by manifest offsets).
    """
    for name, v in [("n_speakers", n_speakers), ("n_contents", n_contents),
                    ("n_intents", n_intents), ("utterances_per_cell", utterances_per_cell)]:
        if v < 1:
            raise ParameterError(f"{name} must be >= 1, got {v}")
    if int(round(duration_s * SAMPLE_RATE)) < MIN_SAMPLES:
        raise ParameterError(
            f"duration {duration_s}s is below the {MIN_SAMPLES}-sample receptive field")

    params = {"n_speakers": n_speakers, "n_contents": n_contents, "n_intents": n_intents,
              "utterances_per_cell": utterances_per_cell, "duration_s": duration_s}
    utterances: List[Utterance] = []
    chunks: List[np.ndarray] = []
    offset = 0
    idx = 0
    for s in range(n_speakers):
        for c in range(n_contents):
            for i in range(n_intents):
                for _rep in range(utterances_per_cell):
                    wave = synthesize_utterance(seed, idx, s, c, i, duration_s)
                    utterances.append(Utterance(id=idx, speaker_id=s, content_id=c,
                                                intent_id=i, duration_s=duration_s,
                                                offset=offset, length=len(wave)))
                    chunks.append(wave)
                    offset += len(wave)
                    idx += 1
    manifest = CorpusManifest(seed=seed, version=GENERATOR_VERSION, params=params,
                              utterances=utterances)
    corpus = Corpus(manifest=manifest, samples=np.concatenate(chunks))
    if out_dir is not None:
        write_corpus(corpus, out_dir)
    return corpus


def write_corpus(corpus: Corpus, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as f:
        meta = {"meta": True, "seed": corpus.manifest.seed,
                "version": corpus.manifest.version, **corpus.manifest.params}
        f.write(json.dumps(meta, sort_keys=True) + "\n")
        for u in corpus.manifest.utterances:
            f.write(json.dumps(u.to_record(), sort_keys=True) + "\n")
    corpus.samples.astype("<f4").tofile(out / "audio.f32")
    return out


def load_corpus(in_dir) -> Corpus:
    path = Path(in_dir)
    mf = path / "manifest.jsonl"
    audio = path / "audio.f32"
    if not mf.exists() or not audio.exists():
        missing = [str(p) for p in (mf, audio) if not p.exists()]
        raise DataError(f"corpus directory {path} is missing {missing}")
    lines = mf.read_text(encoding="utf-8").splitlines()
    meta = json.loads(lines[0])
    params = {k: meta[k] for k in ("n_speakers", "n_contents", "n_intents",
                                   "utterances_per_cell", "duration_s")}
    utterances = [Utterance.from_record(json.loads(ln)) for ln in lines[1:] if ln.strip()]
    ids = [u.id for u in utterances]
    if len(set(ids)) != len(ids):
        raise DataError(f"manifest {mf} has duplicate utterance ids")
    manifest = CorpusManifest(seed=int(meta["seed"]), version=str(meta["version"]),
                              params=params, utterances=utterances)
    samples = np.fromfile(audio, dtype="<f4")
    return Corpus(manifest=manifest, samples=samples)


@dataclass
class Batch:
    ids: List[int]
    waves: List[np.ndarray]
    labels: Dict[str, np.ndarray]  # speaker / content / intent per utterance


def _shuffled(ids: List[int], seed: int) -> List[int]:
    # Fisher-Yates driven by the documented stream; j_i = floor(u_i * (i + 1))
    out = list(ids)
    u = uniforms(seed, len(out))
    for i in range(len(out) - 1, 0, -1):
        j = int(u[i] * (i + 1)) % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def batch_iter(corpus: Corpus, batch_size: int, seed: int, repeat: bool = False,
               exclude: Optional[Set[int]] = None,
               bucket_by_length: bool = False) -> Iterator[Batch]:
    """Deterministic shuffled batches; raises StopIteration when exhausted.

    Each epoch reshuffles with a fresh substream of ``seed``; a trailing
    partial batch is dropped.  ``exclude`` removes utterances (e.g. a
    held-out evaluation batch) before batching.  ``bucket_by_length`` keeps
    each batch single-length (buckets are visited shortest first; training
    right-crops any residual mismatch instead of padding).
    """
    ids = [u.id for u in corpus.manifest.utterances if not exclude or u.id not in exclude]
    if batch_size < 1 or batch_size > len(ids):
        raise ParameterError(f"batch_size {batch_size} invalid for corpus of {len(ids)}")
    length_of = {u.id: u.length for u in corpus.manifest.utterances}
    if bucket_by_length:
        buckets: Dict[int, List[int]] = {}
        for i in ids:
            buckets.setdefault(length_of[i], []).append(i)
        groups = [buckets[k] for k in sorted(buckets)]
    else:
        groups = [ids]
    epoch = 0
    while True:
        for gi, group in enumerate(groups):
            order = _shuffled(group, substream_seed(seed, "epoch", epoch * len(groups) + gi))
            for lo in range(0, len(order) - batch_size + 1, batch_size):
                chunk = order[lo:lo + batch_size]
                yield Batch(
                    ids=chunk,
                    waves=[corpus.wave(i) for i in chunk],
                    labels={kind: np.array([corpus.label(i, kind) for i in chunk])
                            for kind in ("speaker", "content", "intent")},
                )
        epoch += 1
        if not repeat:
            return
