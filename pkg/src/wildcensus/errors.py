"""Exception types shared across the toolkit."""

from __future__ import annotations


class WildcensusError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(WildcensusError):
    """Invalid input: bad values, malformed records, broken invariants."""


class PlanningError(ValidationError):
    """Survey plan cannot be constructed from the given inputs."""


class IncompleteReviewError(ValidationError):
    """Census requested while some images lack the required reviews."""

    def __init__(self, image_ids: list[str]):
        self.image_ids = list(image_ids)
        preview = ", ".join(self.image_ids[:10])
        suffix = ", ..." if len(self.image_ids) > 10 else ""
        super().__init__(
            f"{len(self.image_ids)} image(s) lack two independent reviews or an "
            f"adjudication: {preview}{suffix}"
        )


class CorruptLogError(ValidationError):
    """Event log has a gap, duplicate, or otherwise unusable sequence."""
