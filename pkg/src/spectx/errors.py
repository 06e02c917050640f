"""Shared exception types.

The CLI maps ValidationError to exit code 1 and DivergenceError to exit
code 2; library code raises these rather than bare ValueError/RuntimeError
so callers can tell bad inputs apart from a run that blew up.
"""


class ValidationError(ValueError):
    """An input violated a documented precondition or schema."""


class DivergenceError(RuntimeError):
    """Training produced non-finite values; the run cannot continue."""
