"""Labeled datasets: filename-based labeling, balancing, splitting, file I/O.

Rows hold the raw 1500-byte packet images (uint8); the /255 scaling happens
at model-feed time.  The on-disk format is little-endian: magic "DPKT",
u16 version, u16 class count, length-prefixed UTF-8 class names, u32 dim,
u64 row count, rows of (dim bytes + u16 label), trailing CRC64.
"""

from __future__ import annotations

import fnmatch
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import pcapfile, preprocess
from .binio import Reader, Writer, check_trailer
from .errors import (
    EmptyClass,
    FormatVersionMismatch,
    ToolkitError,
    TruncatedRecord,
)

log = logging.getLogger(__name__)

MAGIC = b"DPKT"
FORMAT_VERSION = 1
DIM = preprocess.VECTOR_LEN

SPLIT_FRACTIONS = (0.64, 0.16, 0.20)

TASK_APP = "app"
TASK_CHAR = "char"

# Default filename-glob labeling rules for the ISCX VPN-nonVPN corpus layout.
# Patterns are matched case-insensitively against the pcap basename; the
# first match wins, so e.g. "torrent*" must precede "tor*".  Class order is
# the order of first appearance.  Both schemes are plain editable text.
APP_SCHEME_TEXT = """\
# application identification (non-VPN sessions only; VPN captures stay unmatched)
aim_chat*\tAIM chat
aimchat*\tAIM chat
email*\tEmail
facebook*\tFacebook
ftps*\tFTPS
gmail*\tGmail
hangout*\tHangouts
icq*\tICQ
netflix*\tNetflix
scp*\tSCP
sftp*\tSFTP
skype*\tSkype
spotify*\tSpotify
torrent*\tTorrent
bittorrent*\tTorrent
tor*\tTor
voipbuster*\tVoipbuster
vimeo*\tVimeo
youtube*\tYoutube
"""

CHAR_SCHEME_TEXT = """\
# traffic characterization with the VPN / non-VPN distinction
aim_chat*\tChat
aimchat*\tChat
facebook_chat*\tChat
facebookchat*\tChat
gmailchat*\tChat
gmail_chat*\tChat
hangout_chat*\tChat
hangouts_chat*\tChat
icq_chat*\tChat
icqchat*\tChat
skype_chat*\tChat
email*\tEmail
ftps*\tFile Transfer
sftp*\tFile Transfer
scp*\tFile Transfer
skype_file*\tFile Transfer
netflix*\tStreaming
spotify*\tStreaming
vimeo*\tStreaming
youtube*\tStreaming
torrent*\tTorrent
bittorrent*\tTorrent
facebook_audio*\tVoIP
facebook_video*\tVoIP
hangouts_audio*\tVoIP
hangout_audio*\tVoIP
hangouts_video*\tVoIP
skype_audio*\tVoIP
skype_video*\tVoIP
voipbuster*\tVoIP
vpn_aim_chat*\tVPN: Chat
vpn_*chat*\tVPN: Chat
vpn_ftps*\tVPN: File Transfer
vpn_sftp*\tVPN: File Transfer
vpn_scp*\tVPN: File Transfer
vpn_skype_file*\tVPN: File Transfer
vpn_*file*\tVPN: File Transfer
vpn_email*\tVPN: Email
vpn_netflix*\tVPN: Streaming
vpn_spotify*\tVPN: Streaming
vpn_vimeo*\tVPN: Streaming
vpn_youtube*\tVPN: Streaming
vpn_torrent*\tVPN: Torrent
vpn_bittorrent*\tVPN: Torrent
vpn_*audio*\tVPN: VoIP
vpn_*video*\tVPN: VoIP
vpn_voipbuster*\tVPN: VoIP
"""


@dataclass
class LabelScheme:
    """Ordered filename-glob rules mapping capture files to class indices."""

    task: str
    classes: list[str]
    rules: list[tuple[str, int]]

    def __post_init__(self) -> None:
        if len(set(self.classes)) != len(self.classes):
            raise ToolkitError("label scheme has duplicate class names")
        for pattern, index in self.rules:
            if not 0 <= index < len(self.classes):
                raise ToolkitError(f"rule {pattern!r} targets unknown class {index}")


def parse_scheme(text: str, task: str = "custom") -> LabelScheme:
    """Parse ``glob<TAB>class_name`` lines; '#' comments and blanks allowed."""
    classes: list[str] = []
    rules: list[tuple[str, int]] = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" not in line:
            raise ToolkitError(f"scheme line {number}: expected 'glob<TAB>class'")
        pattern, name = line.split("\t", 1)
        pattern, name = pattern.strip(), name.strip()
        if not pattern or not name:
            raise ToolkitError(f"scheme line {number}: empty glob or class name")
        if name not in classes:
            classes.append(name)
        rules.append((pattern, classes.index(name)))
    return LabelScheme(task=task, classes=classes, rules=rules)


def load_scheme(path: str | Path, task: str = "custom") -> LabelScheme:
    return parse_scheme(Path(path).read_text(encoding="utf-8"), task)


def default_scheme(task: str) -> LabelScheme:
    if task == TASK_APP:
        return parse_scheme(APP_SCHEME_TEXT, TASK_APP)
    if task == TASK_CHAR:
        return parse_scheme(CHAR_SCHEME_TEXT, TASK_CHAR)
    raise ToolkitError(f"unknown task {task!r} (expected '{TASK_APP}' or '{TASK_CHAR}')")


def label_capture(source_path: str | Path, scheme: LabelScheme) -> Optional[int]:
    """First matching glob wins; None means the file is unmatched."""
    name = Path(source_path).name.lower()
    for pattern, index in scheme.rules:
        if fnmatch.fnmatchcase(name, pattern.lower()):
            return index
    return None


@dataclass
class LabeledDataset:
    rows: np.ndarray  # (n, DIM) uint8
    labels: np.ndarray  # (n,) int64
    classes: list[str]
    seed_provenance: int = 0

    def __post_init__(self) -> None:
        self.rows = np.ascontiguousarray(self.rows, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.ndim != 2 or self.rows.shape[1] != DIM:
            raise ToolkitError(f"rows must be (n, {DIM}) uint8, got {self.rows.shape}")
        if self.labels.shape != (self.rows.shape[0],):
            raise ToolkitError("labels length does not match row count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.classes)):
            raise ToolkitError("label outside the class table")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return DIM

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.classes == other.classes
            and self.rows.shape == other.rows.shape
            and bool(np.array_equal(self.rows, other.rows))
            and bool(np.array_equal(self.labels, other.labels))
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.classes)).astype(np.int64)

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            rows=self.rows[indices],
            labels=self.labels[indices],
            classes=list(self.classes),
            seed_provenance=self.seed_provenance,
        )

    def inputs(self) -> np.ndarray:
        """Model-feed view: float32 rows scaled into [0, 1]."""
        return self.rows.astype(np.float32) / 255.0


@dataclass
class FileReport:
    """Per-file accounting produced while building a dataset."""

    path: str
    class_index: int
    kept: int
    stats: preprocess.DiscardStats


def build_dataset(
    captures: Sequence[tuple[str | Path, int]], classes: Sequence[str]
) -> tuple[LabeledDataset, list[FileReport]]:
    """Preprocess each capture and append its vectors in input order."""
    rows: list[bytes] = []
    labels: list[int] = []
    reports: list[FileReport] = []
    for path, class_index in captures:
        if not 0 <= class_index < len(classes):
            raise ToolkitError(f"{path}: class index {class_index} out of range")
        try:
            source = pcapfile.open_capture(path)
            vectors, stats = preprocess.preprocess_capture(source)
        except ToolkitError as exc:
            raise type(exc)(f"{path}: {exc}") from exc
        for vec in vectors:
            rows.append(vec.raw)
            labels.append(class_index)
        reports.append(FileReport(str(path), class_index, len(vectors), stats))
        if not vectors:
            log.warning("%s: no packets kept after preprocessing", path)
    if rows:
        matrix = np.frombuffer(b"".join(rows), dtype=np.uint8).reshape(len(rows), DIM)
    else:
        matrix = np.zeros((0, DIM), dtype=np.uint8)
    ds = LabeledDataset(rows=matrix, labels=np.array(labels, dtype=np.int64), classes=list(classes))
    return ds, reports


def undersample(ds: LabeledDataset, seed: int, balance_ratio: float = 1.0) -> LabeledDataset:
    """Randomly drop rows from majority classes, preserving row order.

    With the default ratio 1.0 every class is cut to the minimum class count;
    a ratio r > 1 allows classes to keep up to floor(r * minimum) rows.
    """
    if balance_ratio < 1.0:
        raise ToolkitError(f"balance_ratio must be >= 1, got {balance_ratio}")
    counts = ds.class_counts()
    empty = [ds.classes[i] for i, c in enumerate(counts) if c == 0]
    if empty:
        raise EmptyClass(f"classes with zero rows: {', '.join(empty)}")
    target = int(counts.min() * balance_ratio)
    if int(counts.max()) <= target:
        out = ds.subset(np.arange(len(ds)))
        out.seed_provenance = seed
        return out
    rng = np.random.default_rng(seed)
    keep: list[np.ndarray] = []
    for class_index in range(len(ds.classes)):
        idx = np.flatnonzero(ds.labels == class_index)
        if len(idx) > target:
            idx = idx[np.sort(rng.choice(len(idx), size=target, replace=False))]
        keep.append(idx)
    order = np.sort(np.concatenate(keep))
    out = ds.subset(order)
    out.seed_provenance = seed
    return out


@dataclass
class SplitDataset:
    train: LabeledDataset
    validation: LabeledDataset
    test: LabeledDataset
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS
    indices: tuple[np.ndarray, np.ndarray, np.ndarray] = field(
        default_factory=lambda: (np.array([], int), np.array([], int), np.array([], int))
    )


def split(
    ds: LabeledDataset, seed: int, fractions: tuple[float, float, float] = SPLIT_FRACTIONS
) -> SplitDataset:
    """Seeded, per-class stratified partition into train/validation/test.

    Per-class counts are apportioned so that every class stays within one row
    of its exact fractional share AND each split's overall size stays within
    one row of fraction x total: the leftover rows of each class go to the
    splits with the largest running deficit plus fractional remainder, which
    keeps all deficits in [-1, 1].
    """
    if len(ds) == 0:
        raise EmptyClass("cannot split an empty dataset")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ToolkitError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    frac = np.asarray(fractions, dtype=np.float64)
    deficits = np.zeros(len(frac))
    parts: list[list[np.ndarray]] = [[], [], []]
    for class_index in range(len(ds.classes)):
        idx = np.flatnonzero(ds.labels == class_index)
        if len(idx) == 0:
            continue
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        targets = frac * n
        counts = np.floor(targets).astype(np.int64)
        leftover = n - int(counts.sum())
        if leftover > 0:
            priority = deficits + (targets - counts)
            winners = np.argsort(-priority, kind="stable")[:leftover]
            counts[winners] += 1
        deficits += targets - counts
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for part, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            part.append(idx[lo:hi])
    picked = tuple(
        np.sort(np.concatenate(p)) if p else np.array([], dtype=np.int64) for p in parts
    )
    if len(picked[1]) == 0 or len(picked[2]) == 0:
        log.warning("degenerate split: validation or test set is empty")
    views = tuple(ds.subset(idx) for idx in picked)
    for view in views:
        view.seed_provenance = seed
    return SplitDataset(
        train=views[0],
        validation=views[1],
        test=views[2],
        fractions=fractions,
        indices=picked,
    )


def save_dataset(ds: LabeledDataset, path: str | Path) -> None:
    writer = Writer()
    writer.raw(MAGIC)
    writer.u16(FORMAT_VERSION)
    writer.u16(len(ds.classes))
    for name in ds.classes:
        writer.str16(name)
    writer.u32(DIM)
    writer.u64(len(ds))
    labels = ds.labels.astype("<u2")
    for row, label in zip(ds.rows, labels):
        writer.raw(row.tobytes())
        writer.raw(label.tobytes())
    Path(path).write_bytes(writer.finish())


def load_dataset(path: str | Path) -> LabeledDataset:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatVersionMismatch(f"{path}: not a dataset file (bad magic)")
    body = check_trailer(data, what=str(path))
    reader = Reader(body, what=str(path))
    reader.raw(4)
    version = reader.u16()
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    classes = [reader.str16() for _ in range(reader.u16())]
    dim = reader.u32()
    if dim != DIM:
        raise FormatVersionMismatch(f"{path}: row dim {dim}, expected {DIM}")
    count = reader.u64()
    row_bytes = dim + 2
    if reader.remaining() != count * row_bytes:
        raise TruncatedRecord(
            f"{path}: {reader.remaining()} row bytes, expected {count * row_bytes}"
        )
    blob = np.frombuffer(reader.raw(count * row_bytes), dtype=np.uint8)
    if count:
        blob = blob.reshape(count, row_bytes)
        rows = blob[:, :dim].copy()
        labels = blob[:, dim:].copy().view("<u2").reshape(count).astype(np.int64)
    else:
        rows = np.zeros((0, DIM), dtype=np.uint8)
        labels = np.zeros((0,), dtype=np.int64)
    return LabeledDataset(rows=rows, labels=labels, classes=classes)
