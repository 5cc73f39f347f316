"""Exception hierarchy shared by all poseset modules."""


class PosesetError(Exception):
    """Base class for all poseset errors."""


class DegenerateInput(PosesetError):
    """Input geometry is too degenerate to process (near-zero / parallel vectors)."""


class BehindCamera(PosesetError):
    """A 3D point maps behind the camera plane."""

    def __init__(self, msg="point behind camera", index=None):
        super().__init__(msg if index is None else f"{msg} (point index {index})")
        self.index = index


class InvalidDepth(PosesetError):
    """Non-positive depth where a positive one is required."""


class NotCollinear(PosesetError):
    """Four points expected to be collinear are not."""


class DuplicatePoints(PosesetError):
    """Distinct points were required but duplicates were given."""


class CoincidentPoints(PosesetError):
    """Distance denominator vanished (coincident keypoints)."""


class TooFewVertices(PosesetError):
    """Mesh has fewer vertices than requested samples."""


class DegenerateBox(PosesetError):
    """2D box with non-positive width or height."""


class DegenerateConfiguration(PosesetError):
    """PnP correspondences are rank deficient (e.g. all points collinear)."""


class NoConsensus(PosesetError):
    """RANSAC failed to find a consensus set of at least minimal size."""


class DimensionMismatch(PosesetError):
    """MLP layer dimensions do not chain with the given input."""


class ShapeMismatch(PosesetError):
    """Attention operands have incompatible shapes."""


class OddDimension(PosesetError):
    """Positional encodings need an even embedding dimension."""


class EmptyModel(PosesetError):
    """Pose loss requires a non-empty model point set."""


class EmptyList(PosesetError):
    """Metric aggregation over an empty collection."""


class StaleCache(PosesetError):
    """Backward pass received a cache from a mismatched forward pass."""


class Divergence(PosesetError):
    """Training loss became NaN/inf."""

    def __init__(self, msg, curve=None):
        super().__init__(msg)
        self.curve = curve


class SamplingExhausted(PosesetError):
    """Scene rejection sampling exceeded its iteration budget."""


class SchemaMismatch(PosesetError):
    """A JSON document does not match the expected schema."""


class MissingCheckpoint(PosesetError):
    """A command requires a trained checkpoint that was not provided."""


class ZeroProbability(PosesetError):
    """Probability underflow in the classification loss."""
