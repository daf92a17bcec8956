"""Multi-modal recordings, dataset files, windowing and window labels.

On-disk layout of a dataset directory::

    manifest.yaml              # schema_version, metadata, subject entries
    <subject>/<MOD>_<chan>.txt # one stream per file
    <subject>/annotations.tsv  # FoG intervals

Stream file grammar: the first line is a header

    # modality=<EEG|EMG|ACC> channel=<name> rate_hz=<rational> unit=<unit>

followed by exactly one sample per line (decimal float). ``rate_hz`` accepts
integers or ``p/q`` rationals. Annotation files hold ``start_s<TAB>end_s``
lines; blank lines and lines starting with ``#`` are ignored.

Units are normalized on load: EEG/EMG to microvolts, ACC to g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .errors import DataError

MANIFEST_SCHEMA_VERSION = 1
DEFAULT_WINDOW_S = 3.0
DEFAULT_STRIDE_S = 1.5
DEFAULT_LABEL_THRESHOLD = 0.25


class ModalityKind(str, Enum):
    EEG = "EEG"
    EMG = "EMG"
    ACC = "ACC"


MODALITY_ORDER = (ModalityKind.EEG, ModalityKind.EMG, ModalityKind.ACC)

# source unit -> multiplier into the canonical unit
UNIT_FACTORS = {
    ModalityKind.EEG: {"uV": 1.0, "mV": 1e3, "V": 1e6},
    ModalityKind.EMG: {"uV": 1.0, "mV": 1e3, "V": 1e6},
    ModalityKind.ACC: {"g": 1.0, "mg": 1e-3, "m/s2": 1.0 / 9.80665},
}
CANONICAL_UNIT = {ModalityKind.EEG: "uV", ModalityKind.EMG: "uV", ModalityKind.ACC: "g"}

DEFAULT_CHANNELS = {
    ModalityKind.EEG: ("Fz", "Cz", "C3", "C4"),
    ModalityKind.EMG: ("TA_L", "TA_R"),
    ModalityKind.ACC: ("L_x", "L_y", "L_z", "R_x", "R_y", "R_z"),
}


def parse_modality(tag) -> ModalityKind:
    if isinstance(tag, ModalityKind):
        return tag
    try:
        return ModalityKind(str(tag).upper())
    except ValueError:
        raise DataError(f"unknown modality tag {tag!r}") from None


def parse_rate(text) -> Fraction:
    try:
        rate = Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError):
        raise DataError(f"bad sample rate {text!r}") from None
    if rate <= 0:
        raise DataError(f"sample rate must be positive, got {text!r}")
    return rate


def format_rate(rate: Fraction) -> str:
    return str(rate.numerator) if rate.denominator == 1 else f"{rate.numerator}/{rate.denominator}"


@dataclass(frozen=True)
class Stream:
    modality: ModalityKind
    channel: str
    sample_rate_hz: Fraction
    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise DataError(f"stream {self.channel}: samples must be 1-D")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", Fraction(self.sample_rate_hz))
        object.__setattr__(self, "modality", parse_modality(self.modality))

    @property
    def key(self) -> tuple[ModalityKind, str]:
        return (self.modality, self.channel)

    def __eq__(self, other):
        if not isinstance(other, Stream):
            return NotImplemented
        return (self.key == other.key and self.sample_rate_hz == other.sample_rate_hz
                and np.array_equal(self.samples, other.samples))

    __hash__ = None


def validate_intervals(intervals: Iterable[Sequence[float]], duration_s: float) -> tuple:
    out = []
    prev_end = -math.inf
    for iv in intervals:
        start, end = float(iv[0]), float(iv[1])
        if not end > start:
            raise DataError(f"empty or reversed interval ({start}, {end})")
        if start < 0 or end > duration_s:
            raise DataError(f"interval ({start}, {end}) outside [0, {duration_s})")
        if start < prev_end:
            raise DataError(f"overlapping intervals at ({start}, {end})")
        prev_end = end
        out.append((start, end))
    return tuple(out)


@dataclass(frozen=True)
class Recording:
    """One subject's synchronized streams plus FoG annotations."""

    subject_id: str
    streams: tuple[Stream, ...]
    fog_intervals: tuple[tuple[float, float], ...]
    duration_s: float

    def __post_init__(self):
        object.__setattr__(self, "streams", tuple(self.streams))
        object.__setattr__(self, "duration_s", float(self.duration_s))
        ivs = sorted((tuple(map(float, iv)) for iv in self.fog_intervals))
        object.__setattr__(self, "fog_intervals", validate_intervals(ivs, self.duration_s))
        rates: dict[ModalityKind, Fraction] = {}
        seen = set()
        for s in self.streams:
            if s.key in seen:
                raise DataError(f"{self.subject_id}: duplicate channel {s.channel}")
            seen.add(s.key)
            if rates.setdefault(s.modality, s.sample_rate_hz) != s.sample_rate_hz:
                raise DataError(f"{self.subject_id}: mixed sample rates within {s.modality.value}")
            period = 1.0 / float(s.sample_rate_hz)
            if abs(len(s.samples) * period - self.duration_s) > period + 1e-9:
                raise DataError(
                    f"{self.subject_id}/{s.channel}: {len(s.samples)} samples inconsistent "
                    f"with duration {self.duration_s} s")

    def rate(self, modality: ModalityKind) -> Fraction:
        for s in self.streams:
            if s.modality == modality:
                return s.sample_rate_hz
        raise KeyError(modality)

    def modalities(self) -> list[ModalityKind]:
        present = {s.modality for s in self.streams}
        return [m for m in MODALITY_ORDER if m in present]

    def channel_names(self, modality: ModalityKind) -> tuple[str, ...]:
        return tuple(s.channel for s in self.streams if s.modality == modality)

    def stream(self, modality: ModalityKind, channel: str) -> Stream:
        for s in self.streams:
            if s.key == (modality, channel):
                return s
        raise KeyError((modality, channel))

    def block(self, modality: ModalityKind) -> np.ndarray:
        """All channels of one modality stacked as (channels, samples)."""
        return np.stack([s.samples for s in self.streams if s.modality == modality])


@dataclass(frozen=True)
class Window:
    """A fixed-length multi-modal slice; the unit of inference."""

    subject_id: str
    start_s: float
    length_s: float
    blocks: dict
    channels: dict = field(default_factory=dict)
    label: int | None = None
    label_overlap_fraction: float | None = None

    @property
    def end_s(self) -> float:
        return self.start_s + self.length_s


def n_samples(rate: Fraction, seconds: float) -> int:
    return int(round(float(rate) * seconds))


def window_count(duration_s: float, window_length_s: float, stride_s: float) -> int:
    if duration_s + 1e-9 < window_length_s:
        return 0
    return int(math.floor((duration_s - window_length_s) / stride_s + 1e-9)) + 1


def segment_windows(rec: Recording, window_length_s: float = DEFAULT_WINDOW_S,
                    stride_s: float = DEFAULT_STRIDE_S) -> list[Window]:
    if window_length_s <= 0:
        raise DataError("window length must be positive")
    if stride_s <= 0:
        raise DataError("stride must be positive")
    if window_length_s > rec.duration_s + 1e-9:
        raise DataError(
            f"window of {window_length_s} s longer than recording {rec.subject_id} "
            f"({rec.duration_s} s)")
    mods = rec.modalities()
    full = {m: rec.block(m) for m in mods}
    names = {m: rec.channel_names(m) for m in mods}
    windows = []
    for k in range(window_count(rec.duration_s, window_length_s, stride_s)):
        start = k * stride_s
        blocks = {}
        for m in mods:
            rate = rec.rate(m)
            n = n_samples(rate, window_length_s)
            i0 = min(n_samples(rate, start), full[m].shape[1] - n)
            blocks[m] = full[m][:, i0:i0 + n].copy()
        windows.append(Window(rec.subject_id, start, window_length_s, blocks, names))
    return windows


def overlap_fraction(start_s: float, length_s: float, intervals) -> float:
    end_s = start_s + length_s
    covered = sum(max(0.0, min(end_s, b) - max(start_s, a)) for a, b in intervals)
    return min(1.0, max(0.0, covered / length_s))


def assign_label(w: Window, fog_intervals, overlap_threshold: float = DEFAULT_LABEL_THRESHOLD) -> Window:
    if not 0 < overlap_threshold <= 1:
        raise DataError(f"overlap threshold must lie in (0, 1], got {overlap_threshold}")
    frac = overlap_fraction(w.start_s, w.length_s, fog_intervals)
    return replace(w, label=int(frac >= overlap_threshold), label_overlap_fraction=frac)


def labeled_windows(rec: Recording, window_length_s: float = DEFAULT_WINDOW_S,
                    stride_s: float = DEFAULT_STRIDE_S,
                    overlap_threshold: float = DEFAULT_LABEL_THRESHOLD) -> list[Window]:
    return [assign_label(w, rec.fog_intervals, overlap_threshold)
            for w in segment_windows(rec, window_length_s, stride_s)]


def select_channels(rec: Recording, spec: Sequence[tuple]) -> Recording:
    """Restrict ``rec`` to the requested (modality, channel) pairs, in request order."""
    picked = []
    for mod, name in spec:
        key = (parse_modality(mod), name)
        try:
            picked.append(rec.stream(*key))
        except KeyError:
            raise DataError(f"{rec.subject_id}: unknown channel {name!r} ({key[0].value})") from None
    return Recording(rec.subject_id, tuple(picked), rec.fog_intervals, rec.duration_s)


def default_channel_spec() -> list[tuple[ModalityKind, str]]:
    return [(m, c) for m in MODALITY_ORDER for c in DEFAULT_CHANNELS[m]]


# ---------------------------------------------------------------------------
# dataset files


@dataclass(frozen=True)
class StreamRef:
    path: Path
    modality: ModalityKind
    channel: str
    unit: str


@dataclass(frozen=True)
class SubjectEntry:
    subject_id: str
    streams: tuple[StreamRef, ...]
    annotations: Path
    duration_s: float | None = None


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    subjects: tuple[SubjectEntry, ...]
    metadata: dict

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.yaml"
        if not path.is_file():
            raise DataError(f"manifest not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise DataError(f"{path}: unparseable manifest ({exc})") from None
        if not isinstance(doc, dict) or "subjects" not in doc:
            raise DataError(f"{path}: manifest lacks a 'subjects' list")
        if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise DataError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
        root = path.parent
        subjects, ids = [], set()
        for item in doc["subjects"]:
            try:
                sid = str(item["subject_id"])
                refs = tuple(
                    StreamRef(root / s["file"], parse_modality(s["modality"]), str(s["channel"]),
                              str(s.get("unit", CANONICAL_UNIT[parse_modality(s["modality"])])))
                    for s in item["streams"])
                ann = root / item["annotations"]
            except (KeyError, TypeError) as exc:
                raise DataError(f"{path}: malformed subject entry ({exc})") from None
            if sid in ids:
                raise DataError(f"{path}: duplicate subject_id {sid}")
            ids.add(sid)
            for ref in refs + (StreamRef(ann, ModalityKind.EEG, "", "uV"),):
                if not ref.path.is_file():
                    raise DataError(f"{path}: missing file {ref.path}")
            dur = item.get("duration_s")
            subjects.append(SubjectEntry(sid, refs, ann, None if dur is None else float(dur)))
        return cls(root, tuple(subjects), dict(doc.get("metadata") or {}))


def _parse_header(path: Path, line: str) -> dict:
    if not line.startswith("#"):
        raise DataError(f"{path}:1: missing stream header")
    fields = {}
    for tok in line[1:].split():
        if "=" not in tok:
            raise DataError(f"{path}:1: malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        fields[k] = v
    for k in ("modality", "channel", "rate_hz", "unit"):
        if k not in fields:
            raise DataError(f"{path}:1: header lacks {k}")
    return fields


def read_stream(ref: StreamRef) -> Stream:
    path = ref.path
    if not path.is_file():
        raise DataError(f"missing file {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise DataError(f"{path}: empty stream file")
    hdr = _parse_header(path, lines[0])
    mod = parse_modality(hdr["modality"])
    if mod != ref.modality or hdr["channel"] != ref.channel:
        raise DataError(f"{path}:1: header {mod.value}/{hdr['channel']} does not match manifest "
                        f"{ref.modality.value}/{ref.channel}")
    unit = hdr["unit"]
    factors = UNIT_FACTORS[mod]
    if unit not in factors:
        raise DataError(f"{path}:1: unknown unit {unit!r} for {mod.value}")
    body = lines[1:]
    try:
        values = np.array([float(x) for x in body], dtype=np.float64)
    except ValueError:
        for i, x in enumerate(body, start=2):
            try:
                float(x)
            except ValueError:
                raise DataError(f"{path}:{i}: malformed sample {x!r}") from None
        raise
    if factors[unit] != 1.0:
        values = values * factors[unit]
    return Stream(mod, ref.channel, parse_rate(hdr["rate_hz"]), values)


def read_annotations(path: Path) -> list[tuple[float, float]]:
    if not Path(path).is_file():
        raise DataError(f"missing file {path}")
    out = []
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError
            out.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise DataError(f"{path}:{i}: malformed annotation row {line!r}") from None
    return out


def load_recording(entry: SubjectEntry) -> Recording:
    streams = tuple(read_stream(ref) for ref in entry.streams)
    if not streams:
        raise DataError(f"{entry.subject_id}: no streams")
    duration = entry.duration_s
    if duration is None:
        duration = max(len(s.samples) / float(s.sample_rate_hz) for s in streams)
    intervals = sorted(read_annotations(entry.annotations))
    try:
        validate_intervals(intervals, duration)
    except DataError as exc:
        raise DataError(f"{entry.annotations}: {exc}") from None
    return Recording(entry.subject_id, streams, tuple(intervals), duration)


def load_dataset(manifest_path) -> list[Recording]:
    manifest = DatasetManifest.load(manifest_path)
    return [load_recording(e) for e in manifest.subjects]


def _format_samples(values: np.ndarray) -> str:
    return "\n".join(map(repr, values.tolist()))


def save_dataset(recordings: Sequence[Recording], root, name: str = "dataset") -> Path:
    """Write recordings as a manifest directory; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    subjects = []
    rates, units, channels = {}, {}, {}
    for rec in recordings:
        sdir = root / rec.subject_id
        sdir.mkdir(exist_ok=True)
        refs = []
        for s in rec.streams:
            unit = CANONICAL_UNIT[s.modality]
            fname = f"{s.modality.value}_{s.channel}.txt"
            header = (f"# modality={s.modality.value} channel={s.channel} "
                      f"rate_hz={format_rate(s.sample_rate_hz)} unit={unit}\n")
            (sdir / fname).write_text(header + _format_samples(s.samples) + "\n")
            refs.append({"file": f"{rec.subject_id}/{fname}", "modality": s.modality.value,
                         "channel": s.channel, "unit": unit})
            rates[s.modality.value] = format_rate(s.sample_rate_hz)
            units[s.modality.value] = unit
            channels.setdefault(s.modality.value, [])
            if s.channel not in channels[s.modality.value]:
                channels[s.modality.value].append(s.channel)
        ann = "# start_s\tend_s\n" + "".join(f"{a!r}\t{b!r}\n" for a, b in rec.fog_intervals)
        (sdir / "annotations.tsv").write_text(ann)
        subjects.append({"subject_id": rec.subject_id, "duration_s": rec.duration_s,
                         "annotations": f"{rec.subject_id}/annotations.tsv", "streams": refs})
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "name": name,
        "metadata": {"sample_rates_hz": rates, "units": units, "channels": channels},
        "subjects": subjects,
    }
    path = root / "manifest.yaml"
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path
