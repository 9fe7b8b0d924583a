"""Exception hierarchy shared by all pipeline stages."""


class CanopyAlignError(Exception):
    """Base class for all errors raised by this package."""


# --- I/O and configuration ---------------------------------------------------

class MalformedLine(CanopyAlignError):
    """A text line could not be parsed as point coordinates."""

    def __init__(self, line_no: int, line: str):
        self.line_no = line_no
        self.line = line
        super().__init__(f"line {line_no}: cannot parse coordinates: {line!r}")


class EmptyCloud(CanopyAlignError):
    """A point-cloud source contained zero points."""


class UnsupportedPly(CanopyAlignError):
    """PLY file outside the supported binary little-endian x/y/z subset."""


class UnknownKey(CanopyAlignError):
    """Config file contains a key that is not a PlotConfig field."""


class BadValue(CanopyAlignError):
    """Config value cannot be parsed or violates a field invariant."""


# --- ground filtering / alignment --------------------------------------------

class DegenerateExtent(CanopyAlignError):
    """Cloud footprint smaller than one cloth cell."""


class DegenerateGeometry(CanopyAlignError):
    """Plane fitting failed: samples collinear or too few points."""


# --- canopy raster / matching -------------------------------------------------

class EmptyCanopy(CanopyAlignError):
    """No point passes the canopy height cutoff."""


class NoKeypoints(CanopyAlignError):
    """All contour responses fell below the detection threshold."""


class NoPairs(CanopyAlignError):
    """No keypoint pair satisfies the separation constraints."""


class NoCandidates(CanopyAlignError):
    """No congruent two-point correspondence between the images."""


class NoCanopyCells(CanopyAlignError):
    """Overlap grid holds no canopy cell centers."""


class MatchRejected(CanopyAlignError):
    """Best hypothesis overlap below the acceptance threshold."""

    def __init__(self, best_overlap: float, threshold: float):
        self.best_overlap = best_overlap
        self.threshold = threshold
        super().__init__(
            f"image match rejected: best overlap {best_overlap:.3f} "
            f"< accept threshold {threshold:.3f}"
        )


# --- registration / evaluation ------------------------------------------------

class NoCorrespondences(CanopyAlignError):
    """Fewer than the minimum gated point pairs for an ICP update."""


class EmptyCorrespondences(CanopyAlignError):
    """Metric requested over an empty correspondence set."""


# --- synthetic forest ----------------------------------------------------------

class SpecError(CanopyAlignError):
    """Synthetic plot specification is inconsistent or infeasible."""
