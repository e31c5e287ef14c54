"""Hiérarchie d'erreurs du projet et codes de sortie associés."""


class ErgoLocError(Exception):
    exit_code = 1


class ConfigError(ErgoLocError, ValueError):
    """Fichier de configuration invalide (schéma, JSON, preset inconnu)."""

    exit_code = 2

    def __init__(self, message: str, details: list[str] | None = None):
        super().__init__(message)
        self.details = details or []

    def __str__(self) -> str:
        if not self.details:
            return super().__str__()
        return super().__str__() + "\n" + "\n".join(f"  - {d}" for d in self.details)


class NumericalError(ErgoLocError, ArithmeticError):
    exit_code = 3


class KrylovBreakdown(NumericalError):
    """Perte d'orthogonalité de la base de Lanczos : réduire le pas."""


class RealizationError(NumericalError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"réalisation {index} : {cause!r}")
        self.index = index
        self.cause = cause

    def __reduce__(self):
        # remontée depuis un worker joblib : args = (message,) ne suffit pas
        return type(self), (self.index, self.cause)


class BundleError(ErgoLocError, OSError):
    exit_code = 4
