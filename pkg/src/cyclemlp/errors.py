"""Exception types raised by the library."""


class CycleMLPError(Exception):
    """Base class for library errors."""


class ShapeError(CycleMLPError, ValueError):
    """Tensor extents or channel widths do not agree."""


class InputTooSmallError(ShapeError):
    """A strided patch embedding would produce an empty output map."""


class ScaleError(ShapeError):
    """An operator bound to a fixed spatial size received a different one."""


class FormatError(CycleMLPError, ValueError):
    """A CYMT/CYMW file is malformed."""
