"""Exception hierarchy shared by every module.

Each error carries a stable ``exit_code`` used by the command-line tool.
"""


class GarzError(Exception):
    exit_code = 1

    def __reduce__(self):
        # rebuild from constructor arguments so errors cross process boundaries
        return type(self), getattr(self, "_args", self.args)


class ConfigError(GarzError):
    """Scenario file could not be parsed; ``lineno`` points at the culprit."""

    exit_code = 2

    def __init__(self, message, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        self._args = (message, lineno, path)
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}".strip() if where else message)


class AssumptionViolated(GarzError):
    """A structural hypothesis on V, the kernel or the data fails at a witness point."""

    def __init__(self, condition, witness=None, detail=""):
        self.condition = condition
        self.witness = witness
        self._args = (condition, witness, detail)
        msg = f"assumption violated: {condition}"
        if witness is not None:
            msg += f" at {witness}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SupportTooWide(AssumptionViolated):
    def __init__(self, detail=""):
        super().__init__("rho0 support padding", detail=detail)
        self._args = (detail,)


class NegativeU(AssumptionViolated):
    def __init__(self, witness=None, detail=""):
        super().__init__("NegativeU: u0 >= 0", witness=witness, detail=detail)
        self._args = (witness, detail)


class KernelKindMismatch(GarzError):
    pass


class GridTooShort(GarzError):
    pass


class GridMismatch(GarzError):
    pass


class WindowOutOfGrid(GarzError):
    pass


class InsufficientData(GarzError):
    pass


class DegenerateRoots(GarzError):
    pass


class NonconcaveFlux(GarzError):
    pass


class CflViolation(GarzError):
    exit_code = 4


class OrderingLost(GarzError):
    exit_code = 4


class BlowupDetected(GarzError):
    exit_code = 3

    def __init__(self, t, max_rho, ceiling):
        self.t = t
        self.max_rho = max_rho
        self.ceiling = ceiling
        self._args = (t, max_rho, ceiling)
        super().__init__(f"max rho = {max_rho:.6g} exceeds ceiling {ceiling:g} at t = {t:.6g}")


class NoContraction(GarzError):
    exit_code = 5


class HorizonWarning(UserWarning):
    """T_end exceeds the guaranteed existence horizon and no global criterion applies."""
