"""Leader/follower generator synchronization under corrupted phase measurements."""

__version__ = "0.1.0"
