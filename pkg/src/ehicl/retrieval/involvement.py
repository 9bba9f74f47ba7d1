"""Closed enumeration of egocentric hand-involvement classes."""

from __future__ import annotations

from enum import IntEnum

__all__ = ["InvolvementClass"]


class InvolvementClass(IntEnum):
    """Which hands interact in a frame. No other values are accepted."""

    LEFT_ONLY = 0
    RIGHT_ONLY = 1
    BOTH = 2
    NONE = 3

    @property
    def sides(self) -> tuple[str, ...]:
        """Hand sides carrying parameters for this class."""
        return {
            InvolvementClass.LEFT_ONLY: ("left",),
            InvolvementClass.RIGHT_ONLY: ("right",),
            InvolvementClass.BOTH: ("left", "right"),
            InvolvementClass.NONE: (),
        }[self]
