class SwitchPointError(Exception):
    """Base class for every error raised by switchpoint."""

    def __init__(self, message="switchpoint failed.", details=None):
        super().__init__(message)
        self.details = dict(details or {})


class ValidationError(SwitchPointError, ValueError):
    """Raised when model parameters violate their invariants."""

    def __init__(self, message="Invalid parameters.", problems=None):
        self.problems = list(problems or [])
        if self.problems:
            message = f"{message} " + "; ".join(self.problems)
        super().__init__(message, {"problems": self.problems})


class ParameterRangeError(SwitchPointError, ArithmeticError):
    """Raised when an evaluation point lies outside the representable range."""

    def __init__(self, message="Evaluation out of range.", x=None):
        self.x = x
        if x is not None:
            message = f"{message} (x={x!r})"
        super().__init__(message, {"x": x})


class FactorDomainError(SwitchPointError, ValueError):
    """Raised when a factor value lies outside its curve domain."""

    def __init__(self, factor, value, domain):
        self.factor = factor
        self.value = value
        self.domain = tuple(domain)
        super().__init__(
            f"Factor '{factor}' value {value!r} is outside its domain {self.domain}.",
            {"factor": factor, "value": value, "domain": list(self.domain)},
        )


class SingularityError(SwitchPointError, ZeroDivisionError):
    """Raised when a denominator vanishes."""

    def __init__(self, message="Vanishing denominator.", diagnostics=None):
        super().__init__(message, diagnostics)


class NoSolutionError(SwitchPointError):
    """Raised when the smooth-fit system has no root in the bracket."""

    def __init__(
        self,
        message="No sign change of the smooth-fit system in the bracket. Check the payoff-to-fundamental ratio trends.",
        details=None,
    ):
        super().__init__(message, details)


class MultipleSolutionsError(SwitchPointError):
    """Raised when the smooth-fit system has several roots in the bracket."""

    def __init__(self, roots, details=None):
        self.roots = list(roots)
        details = dict(details or {})
        details["roots"] = [list(root) for root in self.roots]
        super().__init__(
            f"Found {len(self.roots)} control pairs; select one by narrowing the bracket.",
            details,
        )


class DivergenceError(SwitchPointError):
    """Raised when march step control cannot bring the residual back within budget."""

    def __init__(self, message="March diverged after step halving.", details=None):
        super().__init__(message, details)


class InsufficientDataError(SwitchPointError):
    """Raised when a level link has too few episodes."""

    def __init__(self, link, count=0, required=1):
        self.link = tuple(link)
        super().__init__(
            f"Link {self.link[0]:.3f} -> {self.link[1]:.3f} MW has {count} episodes, {required} required.",
            {"link": list(self.link), "count": count, "required": required},
        )


class EstimateQualityError(SwitchPointError):
    """Raised when an empirical chain is too far from monotone to repair."""

    def __init__(self, message="Empirical fundamentals failed the quality check.", details=None):
        super().__init__(message, details)


class CalibrationError(SwitchPointError):
    """Raised when no discount rate reproduces the calibration target."""

    def __init__(self, message="Discount rate calibration failed.", details=None):
        super().__init__(message, details)


class IngestError(SwitchPointError, ValueError):
    """Raised when a demand series file cannot be parsed."""

    def __init__(self, message="Unparseable demand series.", line=None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message, {"line": line})


class ConfigValidationError(SwitchPointError, ValueError):
    """Raised with every violated field of a run configuration."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__(
            "Invalid configuration: " + "; ".join(self.errors),
            {"errors": self.errors},
        )
