"""Exception types raised across the package.

Every error carries a short machine-readable reason in ``args[0]``; callers
that need structured data (e.g. the CLI) only rely on the class.
"""

from __future__ import annotations


class ShapeLabError(Exception):
    """Base class for all package-specific failures."""


# --- grid / sampling ---------------------------------------------------------

class NonSquareCells(ShapeLabError):
    """Requested box/resolution does not produce square cells."""


class BadResolution(ShapeLabError):
    """Grid resolution outside the supported range."""


class OutOfDomain(ShapeLabError):
    """A sample point lies outside the closed box."""


# --- coefficients ------------------------------------------------------------

class UnknownKind(ShapeLabError):
    """Coefficient family name not in the catalog."""


class BadParams(ShapeLabError):
    """Coefficient family parameters invalid."""


class NotSPD(ShapeLabError):
    """Matrix is not symmetric positive definite."""


# --- assembly / algebra ------------------------------------------------------

class NegativePotential(ShapeLabError):
    """Potential must be non-negative nodewise."""


class DimensionMismatch(ShapeLabError):
    """Operand shape incompatible with the operator."""


class NoConvergence(ShapeLabError):
    """Iteration budget exhausted before reaching tolerance."""


class BadK(ShapeLabError):
    """Requested eigenvalue count out of range for the system."""


# --- optimizer ---------------------------------------------------------------

class StaleBasis(ShapeLabError):
    """Stored eigenbasis does not match the current density/operator."""


class ClusterSplit(ShapeLabError):
    """A degenerate eigenvalue cluster straddles the requested index k."""


class NoDescent(ShapeLabError):
    """Backtracking failed to find a decreasing step."""


class EmptyShape(ShapeLabError):
    """Thresholded set is empty."""


# --- free boundary / diagnostics ---------------------------------------------

class EmptyBoundary(ShapeLabError):
    """Level set has no crossings on the grid."""


class OutOfChart(ShapeLabError):
    """Frozen-chart evaluation outside the chart's validity radius."""


class QuadTooCoarse(ShapeLabError):
    """Quadrature resolution below the supported minimum."""


class DegenerateField(ShapeLabError):
    """Field numerically zero where a nonzero blow-up is required."""


class NearZeroU1(ShapeLabError):
    """First eigenfunction vanishes at a probe point."""


class TooFewSamples(ShapeLabError):
    """Not enough admissible samples for a statistical fit."""


# --- io ----------------------------------------------------------------------

class ParseError(ShapeLabError):
    """Input is not valid JSON."""


class SchemaError(ShapeLabError):
    """Config violates the schema; message names the offending key path."""


class IoError(ShapeLabError):
    """Filesystem read/write failure."""


class BadMagic(ShapeLabError):
    """Binary field file does not start with the expected magic."""


class TruncatedFile(ShapeLabError):
    """Binary field file ends before the declared payload."""
