"""Error type for extraction failures that should abort a run."""


class ExtractError(Exception):
    """Unrecoverable extraction problem: bad job, empty split, unknown encoder."""
