"""Exception taxonomy shared across the toolkit.

Argument validation failures raise plain ValueError; everything that can go
wrong with data, protocol state, or pipeline stages gets a named class so
callers can react per failure mode.
"""


class AuditError(Exception):
    """Base class for all toolkit errors."""


class IngestionError(AuditError):
    """A corpus file is missing, unreadable, or structurally wrong."""


class IntegrityError(AuditError):
    """Stored artifact does not match its recorded provenance or checksum."""


class ConsistencyError(AuditError):
    """A collection mixes incompatible records (e.g. different layers)."""


class ProtocolError(AuditError):
    """The membership protocol cannot proceed (empty side, leaked sample)."""


class ConfigurationError(AuditError):
    """Invalid model or experiment configuration."""


class CatalogError(AuditError):
    """Requested layer is not in the model's layer catalog."""

    def __init__(self, layer_index, valid_layers):
        self.layer_index = layer_index
        self.valid_layers = tuple(valid_layers)
        super().__init__(
            f"layer {layer_index} not in catalog; valid layers: {list(self.valid_layers)}"
        )


class DivergenceError(AuditError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")


class EnsembleIncompleteError(AuditError):
    """A record's class has no trained membership model."""


class UndefinedMetricError(AuditError):
    """Metric is undefined for the given inputs (e.g. single-class labels)."""


class StageError(AuditError):
    """A pipeline stage failed; carries the stage name and artifact path."""

    def __init__(self, stage, message, artifact_path=None):
        self.stage = stage
        self.artifact_path = artifact_path
        detail = f"stage '{stage}' failed: {message}"
        if artifact_path is not None:
            detail += f" (artifacts: {artifact_path})"
        super().__init__(detail)
