"""Fixed-length utterance representations from emotion profiles.

Each of the K profile dimensions is summarized by five statistics over its
N segment values: mean, population standard deviation, min, max, and range.
The feature vector concatenates them blockwise (all means, then stds, mins,
maxs, ranges) for a length of exactly 5K.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .refinery import EmotionProfile

STATISTICS = ("mean", "std", "min", "max", "range")


@dataclass(frozen=True)
class UtteranceRepresentation:
    """5K feature vector summarizing one utterance's emotion profile."""

    features: np.ndarray
    utterance_id: str
    generation: int

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        if self.features.ndim != 1:
            raise DataError("representation features must be a flat vector")
        if self.features.shape[0] % len(STATISTICS) != 0 or self.features.shape[0] == 0:
            raise DataError(f"feature length must be a positive multiple of {len(STATISTICS)}")
        if not np.all(np.isfinite(self.features)):
            raise DataError("representation features must be finite")

    @property
    def k(self) -> int:
        return self.features.shape[0] // len(STATISTICS)

    def statistic(self, name: str) -> np.ndarray:
        """The K-vector block for one statistic."""
        i = STATISTICS.index(name)
        return self.features[i * self.k:(i + 1) * self.k]


def ep_statistics(ep: EmotionProfile) -> UtteranceRepresentation:
    """Summarize each profile row over its N columns."""
    v = ep.values
    mins = v.min(axis=1)
    maxs = v.max(axis=1)
    features = np.concatenate([v.mean(axis=1), v.std(axis=1), mins, maxs, maxs - mins])
    return UtteranceRepresentation(features=features, utterance_id=ep.utterance_id,
                                   generation=ep.generation)


def representations_for(eps) -> dict:
    """utterance_id -> UtteranceRepresentation for a map of profiles."""
    return {uid: ep_statistics(ep) for uid, ep in eps.items()}


def write_representation_csv(path, reps) -> None:
    if not reps:
        raise DataError("no representations to write")
    d = next(iter(reps.values())).features.shape[0]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utterance_id"] + [f"f_{i + 1}" for i in range(d)])
        for uid in sorted(reps):
            rep = reps[uid]
            if rep.features.shape[0] != d:
                raise DataError("representations mix different feature lengths")
            writer.writerow([uid] + [f"{v:.17g}" for v in rep.features])


def read_representation_csv(path, generation: int = 1) -> dict:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["utterance_id"]:
        raise DataError(f"{path} is not a representation CSV")
    reps = {}
    for row in rows[1:]:
        reps[row[0]] = UtteranceRepresentation(
            features=np.array([float(v) for v in row[1:]]),
            utterance_id=row[0], generation=generation)
    return reps
