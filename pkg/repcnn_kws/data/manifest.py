""" Dataset manifest: one CSV row per audio file.

Columns, in order::

    path,span_start_frame,span_end_frame,split

``path`` is relative to the manifest's directory (absolute paths are kept),
the span is in 10 ms feature frames with an exclusive end, ``-1,-1`` marks a
file without a keyword, and ``split`` is one of ``train``, ``val``,
``test-positive`` or ``test-negative``.
"""

import csv
import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

from .._errors import ManifestError, ShapeError
from .wav import Utterance, read_wav

log = logging.getLogger(__name__)

FIELDS = ("path", "span_start_frame", "span_end_frame", "split")
""" Column order """

TRAIN = "train"
VAL = "val"
TEST_POSITIVE = "test-positive"
TEST_NEGATIVE = "test-negative"
SPLITS = (TRAIN, VAL, TEST_POSITIVE, TEST_NEGATIVE)

NO_SPAN = -1


@dataclass(frozen=True)
class ManifestRecord:
    """ One manifest row

    Attributes:
        path (str): Audio path as written in the manifest
        keyword_span (tuple or None): (start_frame, end_frame) or None
        split (str): Split tag
    """
    path: str
    keyword_span: Optional[Tuple[int, int]]
    split: str

    @property
    def id(self) -> str:
        """ Path without extension, unique within a manifest """
        return os.path.splitext(self.path.replace("\\", "/"))[0]


class Manifest:
    """ Ordered list of records plus the directory relative paths resolve against

    Args:
        records (list): Manifest records
        root (str, optional): Base directory, default is the working directory
    """

    def __init__(self, records: List[ManifestRecord], root: str = ".") -> None:
        self.records = list(records)
        self.root = os.fspath(root)
        ids = [record.id for record in self.records]
        if len(set(ids)) != len(ids):
            raise ManifestError("manifest lists the same audio path twice")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ManifestRecord]:
        return iter(self.records)

    def resolve(self, record: ManifestRecord) -> str:
        """ Absolute path of a record's audio file """
        if os.path.isabs(record.path):
            return record.path
        return os.path.normpath(os.path.join(self.root, record.path))

    def split(self, tag: str) -> List[ManifestRecord]:
        """ Records of one split, in manifest order """
        if tag not in SPLITS:
            raise ManifestError(f"unknown split {tag!r}, expected one of {SPLITS}")
        return [record for record in self.records if record.split == tag]

    def counts(self) -> Dict[str, int]:
        return {tag: len(self.split(tag)) for tag in SPLITS}

    def load_utterance(self, record: ManifestRecord) -> Utterance:
        """ Read a record's audio and attach its keyword span

        Raises:
            WavFormatError: Bad audio file
            ManifestError: Span outside the audio
        """
        path = self.resolve(record)
        if not os.path.isfile(path):
            raise ManifestError(f"audio file not found: {path}")
        try:
            return read_wav(path, keyword_span=record.keyword_span, id=record.id)
        except ShapeError as e:
            raise ManifestError(f"{record.path}: {e}") from e

    def check_paths(self) -> None:
        """ Raise :class:`ManifestError` if any audio file is missing """
        missing = [record.path for record in self.records if not os.path.isfile(self.resolve(record))]
        if missing:
            raise ManifestError(f"{len(missing)} audio file(s) not found, first: {missing[0]}")

    def save(self, path: str) -> None:
        """ Write the manifest as CSV (LF line endings) """
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(FIELDS)
            for record in self.records:
                start, end = record.keyword_span or (NO_SPAN, NO_SPAN)
                writer.writerow([record.path.replace("\\", "/"), start, end, record.split])


def _parse_row(row: Dict[str, str], line: int) -> ManifestRecord:
    try:
        start = int(row["span_start_frame"])
        end = int(row["span_end_frame"])
    except (TypeError, ValueError):
        raise ManifestError(f"line {line}: span frames must be integers, got "
                            f"{row.get('span_start_frame')!r}, {row.get('span_end_frame')!r}") from None
    path = (row.get("path") or "").strip()
    split = (row.get("split") or "").strip()
    if not path:
        raise ManifestError(f"line {line}: empty path")
    if split not in SPLITS:
        raise ManifestError(f"line {line}: unknown split {split!r}, expected one of {SPLITS}")
    if (start, end) == (NO_SPAN, NO_SPAN):
        span = None
    elif 0 <= start < end:
        span = (start, end)
    else:
        raise ManifestError(f"line {line}: invalid keyword span ({start}, {end})")
    if split == TEST_POSITIVE and span is None:
        raise ManifestError(f"line {line}: test-positive record {path} has no keyword span")
    if split == TEST_NEGATIVE and span is not None:
        raise ManifestError(f"line {line}: test-negative record {path} has a keyword span")
    return ManifestRecord(path, span, split)


def load_manifest(path: str, check_paths: bool = True) -> Manifest:
    """ Read and validate a manifest CSV

    Args:
        path (str): Manifest file
        check_paths (bool, optional): Require every audio file to exist, default is True

    Returns:
        Manifest: Records with ``root`` set to the manifest's directory

    Raises:
        ManifestError: Missing file, bad header, bad record or missing audio
    """
    if not os.path.isfile(path):
        raise ManifestError(f"manifest not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != FIELDS:
            raise ManifestError(f"{path}: header {reader.fieldnames}, expected {list(FIELDS)}")
        records = [_parse_row(row, i) for i, row in enumerate(reader, start=2)]
    manifest = Manifest(records, root=os.path.dirname(os.path.abspath(path)))
    if check_paths:
        manifest.check_paths()
    log.debug(f"loaded manifest {path}: {manifest.counts()}")
    return manifest
