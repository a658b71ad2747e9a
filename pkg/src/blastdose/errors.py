class RejectedInput(ValueError):
    """Input violates an operation's preconditions."""


class RejectedTrainingSet(ValueError):
    """Training data cannot support the requested model."""


class UndefinedResult(ValueError):
    """Statistic is undefined for the given data (e.g. zero rank variance)."""


class MissingArtifact(FileNotFoundError):
    """A pipeline stage needs an output that an earlier stage has not written."""

    def __init__(self, path, stage=None):
        self.path = path
        self.stage = stage
        hint = f"; run `blastdose {stage}` first" if stage else ""
        super().__init__(f"missing {path}{hint}")
