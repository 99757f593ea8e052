# sgdlab/app/errors.py


class LabError(Exception):
    """Base class for failures that carry a user-facing diagnostic."""

    kind = "lab"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def as_dict(self) -> dict:
        return {"kind": self.kind, "error": self.message}


class ConfigError(LabError):
    kind = "config"


class UnknownIdError(ConfigError):
    kind = "unknown-id"


class CertificateError(LabError):
    kind = "certificate"


class CovarianceError(LabError):
    kind = "covariance"


class NoClosedFormError(LabError):
    kind = "closed-form"


class SingularCharacteristicError(LabError):
    kind = "singular-characteristic"


class SupportError(LabError):
    kind = "support"


class AssertionFailure(LabError):
    """An embedded experiment check did not hold."""

    kind = "assertion"
