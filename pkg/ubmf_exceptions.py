from typing import Any


class UbmfException(Exception):
    def __init__(
        self,
        message: str = "UBMF exception",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(f"{message} (context={context}, parent={parent})")
        self._message = message
        self._context = context
        self._parent = parent

    def message(self) -> str:
        return self._message

    def context(self) -> Any:
        return self._context


class InvalidParameter(UbmfException):
    def __init__(
        self,
        message: str = "Invalid parameter",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class InvalidInput(UbmfException):
    def __init__(
        self,
        message: str = "Invalid input",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class InvalidPairing(UbmfException):
    def __init__(
        self,
        message: str = "Signals cannot be paired",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class UnsupportedSignal(UbmfException):
    def __init__(
        self,
        message: str = "Operation not supported for this signal",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class ModelNotReady(UbmfException):
    def __init__(
        self,
        message: str = "Model is not trained well enough",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class NumericalFailure(UbmfException):
    def __init__(
        self,
        message: str = "Numerical failure",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class DegenerateInput(UbmfException):
    def __init__(
        self,
        message: str = "Degenerate input",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class InsufficientBatch(UbmfException):
    def __init__(
        self,
        message: str = "Batch is too small",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class MissingClass(UbmfException):
    def __init__(
        self,
        message: str = "Class without samples",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class SingularCovariance(UbmfException):
    def __init__(
        self,
        message: str = "Covariance matrix is singular",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class SingularScale(UbmfException):
    def __init__(
        self,
        message: str = "Scale matrix is not positive definite",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class InvalidDof(UbmfException):
    def __init__(
        self,
        message: str = "Degrees of freedom must be positive",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class InvalidPrior(UbmfException):
    def __init__(
        self,
        message: str = "Prior violates its constraints",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class TrainingFailure(UbmfException):
    def __init__(
        self,
        message: str = "Training diverged",
        context: Any = None,
        parent: Exception | None = None,
        last_good: Any = None,
    ):
        super().__init__(message, context=context, parent=parent)
        self.last_good = last_good


class InvalidClass(UbmfException):
    def __init__(
        self,
        message: str = "Class index out of range",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class UndefinedMetric(UbmfException):
    def __init__(
        self,
        message: str = "Metric is undefined for this input",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class InsufficientData(UbmfException):
    def __init__(
        self,
        message: str = "Not enough samples",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class InvalidManifest(UbmfException):
    def __init__(
        self,
        message: str = "Invalid dataset manifest",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class FormatError(UbmfException):
    def __init__(
        self,
        message: str = "Malformed dataset file",
        offset: int | None = None,
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(f"{message} at byte {offset}", context=context, parent=parent)
        self.offset = offset


class ZeroVariance(UbmfException):
    def __init__(
        self,
        message: str = "Signal has zero variance and cannot be standardized",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(message, context=context, parent=parent)


class StageFailure(UbmfException):
    def __init__(
        self,
        stage: str,
        message: str = "Pipeline stage failed",
        context: Any = None,
        parent: Exception | None = None,
    ):
        super().__init__(f"{message}: {stage}", context=context, parent=parent)
        self.stage = stage
