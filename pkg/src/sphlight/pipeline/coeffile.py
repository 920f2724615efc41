"""Versioned JSON container for needlet coefficients."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..needlet import NeedletCoeffs, NeedletFrame
from ..sphgeom import SCHEMES

VERSION = 1


class CoeffFileError(ValueError):
    pass


def expected_counts(B: float, j_max: int, scheme: str) -> list[int]:
    from ..sphgeom import make_band_points

    return [len(make_band_points(j, scheme, B)) for j in range(1, j_max + 1)]


@dataclass
class CoeffFile:
    B: float
    j_max: int
    scheme: str
    coeffs: NeedletCoeffs
    provenance: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def counts(self) -> list[int]:
        return self.coeffs.counts

    @classmethod
    def from_frame(cls, frame: NeedletFrame, coeffs: NeedletCoeffs, **provenance) -> "CoeffFile":
        return cls(frame.B, frame.j_max, frame.scheme, coeffs, dict(provenance))

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "B": self.B,
            "j_max": self.j_max,
            "scheme": self.scheme,
            "counts": self.counts,
            "dc": self.coeffs.dc.tolist(),
            # one list per channel, indexed by cubature point
            "bands": [b.T.tolist() for b in self.coeffs.bands],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoeffFile":
        try:
            version = d["version"]
            if version != VERSION:
                raise CoeffFileError(f"unsupported coefficient file version {version!r}")
            B, j_max, scheme = float(d["B"]), int(d["j_max"]), d["scheme"]
            counts = [int(n) for n in d["counts"]]
            dc = np.asarray(d["dc"], dtype=float)
            bands = [np.asarray(b, dtype=float).T for b in d["bands"]]
            provenance = dict(d.get("provenance", {}))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CoeffFileError):
                raise
            raise CoeffFileError(f"malformed coefficient file: {exc!r}") from None
        if scheme not in SCHEMES:
            raise CoeffFileError(f"unknown cubature scheme {scheme!r}")
        if not B > 1 or j_max < 1:
            raise CoeffFileError(f"invalid frame parameters B={B}, j_max={j_max}")
        if len(bands) != j_max or [len(b) for b in bands] != counts:
            raise CoeffFileError("band arrays disagree with the declared counts")
        if counts != expected_counts(B, j_max, scheme):
            raise CoeffFileError(f"counts {counts} inconsistent with B={B}, j_max={j_max}, scheme={scheme}")
        if any(b.ndim != 2 or b.shape[1] != dc.size for b in bands):
            raise CoeffFileError("channel count differs between dc and bands")
        try:
            coeffs = NeedletCoeffs(dc, bands)
        except ValueError as exc:
            raise CoeffFileError(str(exc)) from None
        return cls(B, j_max, scheme, coeffs, provenance, version)


def write_coeffs(cf: CoeffFile, path):
    with open(path, "w") as fh:
        json.dump(cf.to_dict(), fh, indent=1)
        fh.write("\n")


def read_coeffs(path) -> CoeffFile:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CoeffFileError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise CoeffFileError(f"{path}: top level must be an object")
    return CoeffFile.from_dict(d)
